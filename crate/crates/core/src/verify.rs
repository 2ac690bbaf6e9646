//! Residual checks certifying that a swept submanifold is special Lagrangian.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::DMatrix;
use serde::Serialize;

use crate::construct::{Chart, LevelSetPoint, LevelSetProblem};
use crate::error::{Result, SlagError};
use crate::lie::{exp_element, GroupElement, SkewMatrix, SubgroupSpec};
use crate::linalg::{act, gram, gram_schmidt, null_space, project, wrap, wrap_signed, CVector, Complex64, I};
use crate::quadric::{szoke_map, HolomorphicVolume, QuadricPoint, RealFrame};
use crate::stenzel::{KahlerEval, PotentialTable};

pub const DEFAULT_TOL_OMEGA: f64 = 1e-8;
pub const DEFAULT_TOL_PERP: f64 = 1e-8;
pub const DEFAULT_TOL_ANGLE: f64 = 1e-7;
pub const DEFAULT_TOL_PHASE: f64 = 1e-6;

fn g_norm(eval: &KahlerEval, v: &CVector) -> f64 {
    eval.metric(v, v).sqrt()
}

/// `max |ω(eₐ, e_b)|` over pairs after scaling each vector to unit `g`-length.
pub fn check_isotropic(potential: &PotentialTable, frame: &RealFrame) -> Result<f64> {
    let eval = potential.kahler_eval(frame.base())?;
    Ok(isotropy_defect(&eval, frame.vectors()))
}

fn isotropy_defect(eval: &KahlerEval, vectors: &[CVector]) -> f64 {
    let unit: Vec<CVector> = vectors.iter().map(|v| v / Complex64::new(g_norm(eval, v), 0.0)).collect();
    let mut worst: f64 = 0.0;
    for a in 0..unit.len() {
        for b in a + 1..unit.len() {
            worst = worst.max(eval.omega(&unit[a], &unit[b]).abs());
        }
    }
    worst
}

/// Vectors whose ambient norm is below this fraction of `|z|` count as zero.
const ZERO_FIELD: f64 = 1e-12;

/// `max ‖P_L ξ#‖/‖ξ#‖` over basis `ξ` with `ξ#_z ≠ 0`, all in the metric `g`.
pub fn check_perpendicular_strict(
    potential: &PotentialTable,
    group: &SubgroupSpec,
    z: &QuadricPoint,
    l_frame: &RealFrame,
) -> Result<f64> {
    let eval = potential.kahler_eval(z)?;
    let inner = |a: &CVector, b: &CVector| eval.metric(a, b);
    let mut worst: f64 = 0.0;
    for xi in group.basis() {
        let field = act(xi.matrix(), z.z());
        if field.norm() <= ZERO_FIELD * z.z().norm() {
            continue;
        }
        let (proj, _) = project(l_frame.vectors(), &field, inner)
            .ok_or_else(|| SlagError::Decomposition("singular tangent Gram matrix".into()))?;
        worst = worst.max(g_norm(&eval, &proj) / g_norm(&eval, &field));
    }
    Ok(worst)
}

/// Residual of `I·ξ# ∈ T_pL`, the equivalent form of strict perpendicularity.
pub fn check_i_image_tangent(
    potential: &PotentialTable,
    group: &SubgroupSpec,
    z: &QuadricPoint,
    l_frame: &RealFrame,
) -> Result<f64> {
    let eval = potential.kahler_eval(z)?;
    let inner = |a: &CVector, b: &CVector| eval.metric(a, b);
    let mut worst: f64 = 0.0;
    for xi in group.basis() {
        let field = act(xi.matrix(), z.z());
        if field.norm() <= ZERO_FIELD * z.z().norm() {
            continue;
        }
        let rotated = &field * I;
        let (proj, _) = project(l_frame.vectors(), &rotated, inner)
            .ok_or_else(|| SlagError::Decomposition("singular tangent Gram matrix".into()))?;
        worst = worst.max(g_norm(&eval, &(&rotated - proj)) / g_norm(&eval, &rotated));
    }
    Ok(worst)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct GeneralizedPerp {
    /// `max ‖P_L u‖/‖ξ#‖` where `ξ# = u + w`, `w = P_V ξ#`.
    pub residual: f64,
    /// `max ‖w‖/‖ξ#‖`.
    pub tangential_ratio: f64,
    /// `‖u‖ > 1e−8‖ξ#‖` for every nonzero `ξ#`.
    pub condition_ii: bool,
}

/// Decomposes each `ξ#_p` into a `g`-normal part and a part tangent to `V`.
pub fn check_perpendicular_generalized(
    potential: &PotentialTable,
    generators: &[SkewMatrix],
    point: &LevelSetPoint,
) -> Result<GeneralizedPerp> {
    let z = &point.quadric;
    let eval = potential.kahler_eval(z)?;
    let inner = |a: &CVector, b: &CVector| eval.metric(a, b);
    let mut out = GeneralizedPerp { residual: 0.0, tangential_ratio: 0.0, condition_ii: true };
    for xi in generators {
        let field = act(xi.matrix(), z.z());
        if field.norm() <= ZERO_FIELD * z.z().norm() {
            continue;
        }
        let norm = g_norm(&eval, &field);
        let w = if point.v_tangent.is_empty() {
            CVector::zeros(field.len())
        } else {
            project(point.v_tangent.vectors(), &field, inner)
                .ok_or_else(|| SlagError::Decomposition("singular V Gram matrix".into()))?
                .0
        };
        let u = &field - &w;
        let (pu, _) = project(point.l_frame.vectors(), &u, inner)
            .ok_or_else(|| SlagError::Decomposition("singular tangent Gram matrix".into()))?;
        out.residual = out.residual.max(g_norm(&eval, &pu) / norm);
        out.tangential_ratio = out.tangential_ratio.max(g_norm(&eval, &w) / norm);
        if !(g_norm(&eval, &u) > 1e-8 * norm) {
            out.condition_ii = false;
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct AngleSample {
    pub theta_mod_pi: f64,
    /// `max |G − I|` of the orthonormalized frame.
    pub gram_defect: f64,
}

/// `θ mod π` with `Ω|_L = e^{iθ} vol` on a `g`-orthonormalized frame.
pub fn lagrangian_angle(
    potential: &PotentialTable,
    volume: &HolomorphicVolume,
    frame: &RealFrame,
    isotropy_tol: f64,
) -> Result<AngleSample> {
    let z = frame.base();
    if frame.len() != z.dim() {
        return Err(SlagError::Precondition(format!("angle needs {} vectors, got {}", z.dim(), frame.len())));
    }
    let eval = potential.kahler_eval(z)?;
    let defect = isotropy_defect(&eval, frame.vectors());
    if !(defect < isotropy_tol) {
        return Err(SlagError::NotIsotropic(defect));
    }
    angle_of_vectors(&eval, volume, z, frame.vectors())
}

fn angle_of_vectors(
    eval: &KahlerEval,
    volume: &HolomorphicVolume,
    z: &QuadricPoint,
    vectors: &[CVector],
) -> Result<AngleSample> {
    let inner = |a: &CVector, b: &CVector| eval.metric(a, b);
    let ortho = gram_schmidt(vectors, inner)
        .ok_or_else(|| SlagError::Decomposition("frame is degenerate in the metric".into()))?;
    let g = gram(&ortho, inner);
    let gram_defect = (g - DMatrix::identity(ortho.len(), ortho.len())).amax();
    let omega = volume.evaluate(z, &ortho)?;
    Ok(AngleSample { theta_mod_pi: wrap(omega.arg(), PI), gram_defect })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct AngleStats {
    pub mean_mod_pi: f64,
    /// Root mean square of the wrapped deviations from the mean, in units of θ.
    pub stddev: f64,
    pub count: usize,
}

/// Circular statistics of `θ mod π` via the doubled angle `2θ mod 2π`.
///
/// The spread is computed from wrapped deviations rather than from the mean
/// resultant length, which cannot resolve spreads below ~1e−8.
pub fn check_angle_constancy(samples: &[f64]) -> Result<AngleStats> {
    if samples.len() < 2 {
        return Err(SlagError::Precondition("angle statistics need at least two samples".into()));
    }
    let resultant: Complex64 = samples.iter().map(|t| Complex64::from_polar(1.0, 2.0 * t)).sum();
    let mean2 = resultant.arg();
    let ms = samples.iter().map(|t| wrap_signed(2.0 * t - mean2, 2.0 * PI).powi(2)).sum::<f64>() / samples.len() as f64;
    Ok(AngleStats { mean_mod_pi: wrap(0.5 * mean2, PI), stddev: 0.5 * ms.sqrt(), count: samples.len() })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct PhaseCheck {
    pub predicted_shift: f64,
    pub observed_shift: f64,
    /// Largest distance mod π between a sample's shift and the prediction.
    pub distance: f64,
    pub pass: bool,
}

/// Compares `θ_swept − θ_L` with `−(π/2)·dim(H/K)` modulo `π`.
pub fn check_theorem_phase(theta_l: f64, swept: &[f64], dim_hk: usize, tol: f64) -> Result<PhaseCheck> {
    let predicted = wrap(-FRAC_PI_2 * dim_hk as f64, PI);
    let distance = swept
        .iter()
        .map(|t| wrap_signed(t - theta_l - predicted, PI).abs())
        .fold(0.0, f64::max);
    let observed = if swept.len() >= 2 {
        wrap(check_angle_constancy(swept)?.mean_mod_pi - theta_l, PI)
    } else {
        wrap(swept.first().copied().unwrap_or(theta_l) - theta_l, PI)
    };
    Ok(PhaseCheck { predicted_shift: predicted, observed_shift: observed, distance, pass: distance < tol })
}

/// A local parametrization of a Lagrangian submanifold around a base point,
/// with a tangent basis at each parameter value.
pub trait AngleField {
    fn dim(&self) -> usize;
    fn point(&self, params: &[f64]) -> Result<QuadricPoint>;
    fn plane(&self, params: &[f64]) -> Result<Vec<CVector>>;
}

/// The Lagrangian given by a chart, around `base` coordinates.
pub struct ChartField<'a> {
    pub chart: &'a dyn Chart,
    pub base: Vec<f64>,
}

impl AngleField for ChartField<'_> {
    fn dim(&self) -> usize {
        self.base.len()
    }

    fn point(&self, params: &[f64]) -> Result<QuadricPoint> {
        let q: Vec<f64> = self.base.iter().zip(params).map(|(a, b)| a + b).collect();
        Ok(szoke_map(&self.chart.point(&q)?))
    }

    fn plane(&self, params: &[f64]) -> Result<Vec<CVector>> {
        let q: Vec<f64> = self.base.iter().zip(params).map(|(a, b)| a + b).collect();
        self.chart.tangent_frame(&self.chart.point(&q)?)
    }
}

/// `(α, t) ↦ h·exp(α₁ξ₁)⋯exp(α_mξ_m)·p(t)`, with `p(t)` the Newton projection
/// onto `V_c` of the base point displaced along the kernel coordinate
/// directions.
pub struct SweptField<'a> {
    pub potential: &'a PotentialTable,
    pub problem: &'a LevelSetProblem<'a>,
    pub generators: Vec<SkewMatrix>,
    pub h: GroupElement,
    pub base: Vec<f64>,
    directions: DMatrix<f64>,
}

impl<'a> SweptField<'a> {
    pub fn new(
        potential: &'a PotentialTable,
        problem: &'a LevelSetProblem<'a>,
        generators: Vec<SkewMatrix>,
        h: GroupElement,
        base: Vec<f64>,
    ) -> Result<Self> {
        let z = szoke_map(&problem.chart.point(&base)?);
        let frame = problem.chart.coordinate_frame(&base)?;
        let eval = potential.kahler_eval(&z)?;
        let fields: Vec<CVector> = problem.active.iter().map(|&a| act(problem.group.basis()[a].matrix(), z.z())).collect();
        let j = DMatrix::from_fn(fields.len(), frame.len(), |a, k| eval.omega(&fields[a], &frame[k]));
        let directions = if fields.is_empty() { DMatrix::identity(frame.len(), frame.len()) } else { null_space(&j, 1e-9) };
        Ok(SweptField { potential, problem, generators, h, base, directions })
    }

    fn level_coords(&self, t: &[f64]) -> Result<Vec<f64>> {
        let mut q = self.base.clone();
        for (k, tk) in t.iter().enumerate() {
            for (i, qi) in q.iter_mut().enumerate() {
                *qi += tk * self.directions[(i, k)];
            }
        }
        self.problem.project_to_level(self.potential, q)
    }

    fn group_part(&self, alpha: &[f64]) -> GroupElement {
        self.generators
            .iter()
            .zip(alpha)
            .fold(self.h.clone(), |acc, (g, a)| acc.compose(&exp_element(g, *a)))
    }
}

impl AngleField for SweptField<'_> {
    fn dim(&self) -> usize {
        self.generators.len() + self.directions.ncols()
    }

    fn point(&self, params: &[f64]) -> Result<QuadricPoint> {
        let m = self.generators.len();
        let q = self.level_coords(&params[m..])?;
        let z = szoke_map(&self.problem.chart.point(&q)?);
        Ok(z.rotate(self.group_part(&params[..m]).matrix()))
    }

    fn plane(&self, params: &[f64]) -> Result<Vec<CVector>> {
        let m = self.generators.len();
        let q = self.level_coords(&params[m..])?;
        let pt = self.problem.level_point(self.potential, q)?;
        let h = self.group_part(&params[..m]);
        let mut vectors: Vec<CVector> = self.generators.iter().map(|g| act(g.matrix(), pt.quadric.z())).collect();
        vectors.extend(pt.v_tangent.vectors().iter().cloned());
        Ok(vectors.iter().map(|v| act(h.matrix(), v)).collect())
    }
}

/// `|∇θ|` at the base of `field` by central differences with step `step`,
/// `|∇θ|² = dθᵀ G⁻¹ dθ` with `G` the metric on the parameter directions.
pub fn mean_curvature_proxy(
    potential: &PotentialTable,
    volume: &HolomorphicVolume,
    field: &dyn AngleField,
    step: f64,
) -> Result<f64> {
    let d = field.dim();
    let zero = vec![0.0; d];
    let z0 = field.point(&zero)?;
    let eval0 = potential.kahler_eval(&z0)?;
    let theta = |params: &[f64]| -> Result<f64> {
        let z = field.point(params)?;
        let eval = potential.kahler_eval(&z)?;
        Ok(angle_of_vectors(&eval, volume, &z, &field.plane(params)?)?.theta_mod_pi)
    };
    let mut dtheta = nalgebra::DVector::zeros(d);
    let mut dirs = Vec::with_capacity(d);
    for k in 0..d {
        let mut plus = zero.clone();
        let mut minus = zero.clone();
        plus[k] = step;
        minus[k] = -step;
        dtheta[k] = wrap_signed(theta(&plus)? - theta(&minus)?, PI) / (2.0 * step);
        dirs.push((field.point(&plus)?.z() - field.point(&minus)?.z()) / Complex64::new(2.0 * step, 0.0));
    }
    let g = gram(&dirs, |a, b| eval0.metric(a, b));
    let sol = g
        .clone()
        .cholesky()
        .ok_or_else(|| SlagError::Decomposition("parameter directions are degenerate".into()))?
        .solve(&dtheta);
    Ok(dtheta.dot(&sol).max(0.0).sqrt())
}

#[derive(Clone, Debug)]
pub struct LemmaFrame {
    /// `(ξⱼ)# + wⱼ`, `g`-orthonormal and normal to `L`.
    pub normals: Vec<CVector>,
    /// `wⱼ`, tangent to `V`.
    pub w: Vec<CVector>,
    /// Orthonormal basis of `T_pV`.
    pub v: Vec<CVector>,
    pub orthonormality: f64,
    pub normality: f64,
    pub i_tangency: f64,
}

/// Orthonormal frame of `T_pL` of the form `(I((ξⱼ)# + wⱼ), vᵢ)`.
pub fn frame_from_lemma(
    potential: &PotentialTable,
    point: &LevelSetPoint,
    generators: &[SkewMatrix],
    tol: f64,
) -> Result<LemmaFrame> {
    let perp = check_perpendicular_generalized(potential, generators, point)?;
    if !(perp.residual < tol) {
        return Err(SlagError::Decomposition(format!(
            "fundamental fields do not split into normal and V parts (residual {:e})",
            perp.residual
        )));
    }
    let z = &point.quadric;
    let eval = potential.kahler_eval(z)?;
    let inner = |a: &CVector, b: &CVector| eval.metric(a, b);
    let v = if point.v_tangent.is_empty() {
        Vec::new()
    } else {
        gram_schmidt(point.v_tangent.vectors(), inner)
            .ok_or_else(|| SlagError::Decomposition("degenerate V frame".into()))?
    };
    let mut u = Vec::with_capacity(generators.len());
    let mut zpart = Vec::with_capacity(generators.len());
    for g in generators {
        let field = act(g.matrix(), z.z());
        let w = if v.is_empty() {
            CVector::zeros(field.len())
        } else {
            project(&v, &field, inner).expect("orthonormal frame").0
        };
        u.push(&field - &w);
        zpart.push(w);
    }
    // A = G_u^{-1/2} orthonormalizes (uⱼ)
    let gu = gram(&u, inner);
    let eig = gu.symmetric_eigen();
    if eig.eigenvalues.iter().any(|e| !(*e > 0.0)) {
        return Err(SlagError::Decomposition("normal parts are linearly dependent".into()));
    }
    let inv_sqrt = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues.map(|e| 1.0 / e.sqrt()))
        * eig.eigenvectors.transpose();
    let m = u.len();
    let combine = |vs: &[CVector], j: usize| {
        (0..m).fold(CVector::zeros(z.z().len()), |acc, k| acc + &vs[k] * Complex64::new(inv_sqrt[(k, j)], 0.0))
    };
    let normals: Vec<CVector> = (0..m).map(|j| combine(&u, j)).collect();
    let w: Vec<CVector> = (0..m).map(|j| -combine(&zpart, j)).collect();

    let gn = gram(&normals, inner);
    let orthonormality = (gn - DMatrix::identity(m, m)).amax();
    let l_ortho = gram_schmidt(point.l_frame.vectors(), inner)
        .ok_or_else(|| SlagError::Decomposition("degenerate L frame".into()))?;
    let normality = normals
        .iter()
        .flat_map(|nv| l_ortho.iter().map(move |l| (nv, l)))
        .map(|(nv, l)| inner(nv, l).abs())
        .fold(0.0, f64::max);
    let mut full: Vec<CVector> = normals.iter().map(|nv| nv * I).collect();
    full.extend(v.iter().cloned());
    let mut i_tangency: f64 = (gram(&full, inner) - DMatrix::identity(full.len(), full.len())).amax();
    for f in &full {
        let (p, _) = project(&l_ortho, f, inner).expect("orthonormal frame");
        i_tangency = i_tangency.max(g_norm(&eval, &(f - p)));
    }
    if full.len() != z.dim() {
        i_tangency = f64::INFINITY;
    }
    Ok(LemmaFrame { normals, w, v, orthonormality, normality, i_tangency })
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub residual: f64,
    pub tol: f64,
    pub pass: bool,
}

impl Check {
    /// Passes when `residual < tol`.
    pub fn below(name: &str, residual: f64, tol: f64) -> Self {
        Check { name: name.into(), residual, tol, pass: residual < tol }
    }

    /// Passes when `residual > tol`; used for witnesses.
    pub fn above(name: &str, residual: f64, tol: f64) -> Self {
        Check { name: name.into(), residual, tol, pass: residual > tol }
    }

    pub fn flag(name: &str, ok: bool) -> Self {
        Check { name: name.into(), residual: if ok { 0.0 } else { 1.0 }, tol: 0.5, pass: ok }
    }
}

#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct AngleReport {
    pub mean_mod_pi: f64,
    pub stddev: f64,
    pub predicted_shift: f64,
    pub observed_shift: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerificationReport {
    pub example: String,
    pub config: serde_json::Value,
    pub checks: Vec<Check>,
    pub angle: AngleReport,
    pub counts: BTreeMap<String, usize>,
    pub pass: bool,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub pieces: Vec<VerificationReport>,
}

impl VerificationReport {
    pub fn new(example: &str, config: serde_json::Value) -> Self {
        VerificationReport {
            example: example.into(),
            config,
            checks: Vec::new(),
            angle: AngleReport::default(),
            counts: BTreeMap::new(),
            pass: false,
            pieces: Vec::new(),
        }
    }

    pub fn push(&mut self, check: Check) {
        self.checks.push(check);
    }

    pub fn finish(mut self) -> Self {
        self.pass = !self.checks.is_empty()
            && self.checks.iter().all(|c| c.pass)
            && self.pieces.iter().all(|p| p.pass);
        self
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
