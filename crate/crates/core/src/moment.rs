//! The moment map `⟨μ(z), X⟩ = u′(r²)·(iz)·(Xz)` of the linear `SO(n+1)`
//! action, its closed forms on the example charts, and the Hamiltonian check.

use rand::Rng;
use serde::Serialize;

use crate::error::{Result, SlagError};
use crate::lie::{CoVector, SkewMatrix, SubgroupSpec};
use crate::linalg::{act, real_dot, Complex64, I};
use crate::quadric::{random_quadric_point, random_tangent, CotangentPoint, QuadricPoint};
use crate::stenzel::PotentialTable;

const CHART_TOL: f64 = 1e-12;

#[derive(Clone, Debug, Serialize)]
pub struct MomentValue {
    pub covector: CoVector,
    pub base: QuadricPoint,
}

pub fn moment_pair(potential: &PotentialTable, z: &QuadricPoint, x: &SkewMatrix) -> Result<f64> {
    let (up, _) = potential.u_derivatives(z.r2())?;
    Ok(up * raw_pair(z, x))
}

fn raw_pair(z: &QuadricPoint, x: &SkewMatrix) -> f64 {
    real_dot(&(z.z() * I), &act(x.matrix(), z.z()))
}

pub fn moment_covector(potential: &PotentialTable, spec: &SubgroupSpec, z: &QuadricPoint) -> Result<MomentValue> {
    let (up, _) = potential.u_derivatives(z.r2())?;
    let components = spec.basis().iter().map(|x| up * raw_pair(z, x)).collect();
    Ok(MomentValue { covector: CoVector::new(components), base: z.clone() })
}

/// Conormal charts in `T*S⁵` on which `⟨μ, η⟩` has a closed form.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EtaChart {
    /// `x` on coordinates 1, 3, 5 and `ξ` on 2, 4, 6.
    L1,
    /// `x` on coordinates 1, 3 and `ξ` on 2, 4, 5, 6.
    L2,
}

fn check_support(p: &CotangentPoint, base: &[usize], fiber: &[usize]) -> Result<()> {
    for i in 0..p.x().len() {
        let k = i + 1;
        if !base.contains(&k) && p.x()[i].abs() > CHART_TOL {
            return Err(SlagError::Chart(format!("x_{k} = {} should vanish", p.x()[i])));
        }
        if !fiber.contains(&k) && p.xi()[i].abs() > CHART_TOL {
            return Err(SlagError::Chart(format!("xi_{k} = {} should vanish", p.xi()[i])));
        }
    }
    Ok(())
}

pub fn mu_eta_closed(potential: &PotentialTable, p: &CotangentPoint, chart: EtaChart) -> Result<f64> {
    if p.x().len() != 6 {
        return Err(SlagError::Chart("eta charts live in T*S^5".into()));
    }
    let (x, xi) = (p.x(), p.xi());
    let pairing = match chart {
        EtaChart::L1 => {
            check_support(p, &[1, 3, 5], &[2, 4, 6])?;
            x[0] * xi[1] + x[2] * xi[3] + x[4] * xi[5]
        }
        EtaChart::L2 => {
            check_support(p, &[1, 3], &[2, 4, 5, 6])?;
            x[0] * xi[1] + x[2] * xi[3]
        }
    };
    if p.norm_xi() == 0.0 {
        return Ok(0.0);
    }
    Ok(-potential.k_factor(p.norm_xi())? * pairing)
}

/// `(μ₁₂, μ₃₄, μ₅₆, μ₅₇, μ₆₇)` on the conormal chart in `T*S⁶` with `x` on
/// coordinates 1, 3, 5 and `ξ` on 2, 4, 6, 7.
pub fn mu_ij_closed(potential: &PotentialTable, p: &CotangentPoint) -> Result<CoVector> {
    if p.x().len() != 7 {
        return Err(SlagError::Chart("this chart lives in T*S^6".into()));
    }
    check_support(p, &[1, 3, 5], &[2, 4, 6, 7])?;
    let (x, xi) = (p.x(), p.xi());
    let k = if p.norm_xi() == 0.0 { 0.0 } else { potential.k_factor(p.norm_xi())? };
    Ok(CoVector::new(vec![
        -k * x[0] * xi[1],
        -k * x[2] * xi[3],
        -k * x[4] * xi[5],
        -k * x[4] * xi[6],
        0.0,
    ]))
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct HamiltonianReport {
    pub max_residual: f64,
    pub trials: usize,
}

/// Compares `−ω(ξ#, v)` with the derivative of `⟨μ, ξ⟩` along a quadric curve
/// through `z` with velocity `v`, for random `z`, `v` and every basis `ξ`.
pub fn hamiltonian_identity_check<R: Rng>(
    potential: &PotentialTable,
    spec: &SubgroupSpec,
    trials: usize,
    step: f64,
    richardson: bool,
    rng: &mut R,
) -> Result<HamiltonianReport> {
    let n = spec.dim() - 1;
    let max_norm = (0.45 * potential.t_max()).min(1.5);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let z = random_quadric_point(n, max_norm, rng);
        let v = random_tangent(&z, rng);
        let eval = potential.kahler_eval(&z)?;
        for xi in spec.basis() {
            let lhs = -eval.omega(&act(xi.matrix(), z.z()), &v);
            let rhs = directional_derivative(
                |w: &QuadricPoint| moment_pair(potential, w, xi),
                &z,
                &v,
                step,
                richardson,
            )?;
            worst = worst.max((lhs - rhs).abs());
        }
    }
    Ok(HamiltonianReport { max_residual: worst, trials })
}

/// Central difference of `f` along `t ↦ retract(z + t·v)`, optionally with one
/// Richardson step.
pub fn directional_derivative<F>(f: F, z: &QuadricPoint, v: &crate::linalg::CVector, step: f64, richardson: bool) -> Result<f64>
where
    F: Fn(&QuadricPoint) -> Result<f64>,
{
    let at = |t: f64| -> Result<f64> {
        let w = z.z() + v * Complex64::new(t, 0.0);
        f(&QuadricPoint::retract(w)?)
    };
    let central = |h: f64| -> Result<f64> { Ok((at(h)? - at(-h)?) / (2.0 * h)) };
    let coarse = central(step)?;
    if !richardson {
        return Ok(coarse);
    }
    let fine = central(0.5 * step)?;
    Ok((4.0 * fine - coarse) / 3.0)
}

/// `max |ω(ξₐ#, ξ_b#)|` over basis pairs: zero iff the orbit through `z` is isotropic.
pub fn orbit_isotropy_defect(potential: &PotentialTable, spec: &SubgroupSpec, z: &QuadricPoint) -> Result<f64> {
    let eval = potential.kahler_eval(z)?;
    let fields: Vec<_> = spec.basis().iter().map(|x| act(x.matrix(), z.z())).collect();
    let mut worst: f64 = 0.0;
    for a in 0..fields.len() {
        for b in a + 1..fields.len() {
            worst = worst.max(eval.omega(&fields[a], &fields[b]).abs());
        }
    }
    Ok(worst)
}
