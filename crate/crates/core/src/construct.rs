//! Conormal charts, level sets of the moment map inside them, and the group
//! sweep `H × V → M`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Result, SlagError};
use crate::lie::{exp_element, stabilizer_coefficients, CoVector, GroupElement, SkewMatrix, SubgroupSpec};
use crate::linalg::{act, null_space, numerical_rank, real_matrix, subspace_distance, CVector, Complex64};
use crate::moment::moment_covector;
use crate::quadric::{szoke_differential, szoke_map, unit, CotangentPoint, QuadricPoint, RealFrame};
use crate::special::{cosh_minus_sinhc_over_sq, sinhc};
use crate::stenzel::PotentialTable;

/// A parametrized submanifold of `T*Sⁿ`, pushed to the quadric through `Φ`.
pub trait Chart: Send + Sync {
    fn name(&self) -> &str;
    /// `n` of `T*Sⁿ`.
    fn n(&self) -> usize;
    fn coord_dim(&self) -> usize;
    fn point(&self, coords: &[f64]) -> Result<CotangentPoint>;
    /// `∂(Φ∘chart)/∂qₖ`, analytically.
    fn coordinate_frame(&self, coords: &[f64]) -> Result<Vec<CVector>>;
    fn coords_of(&self, p: &CotangentPoint) -> Result<Vec<f64>>;
    /// Box the Newton seeds are drawn from.
    fn seed_box(&self) -> Vec<(f64, f64)>;

    /// A basis of the tangent space at `p`; charts with polar degeneracies
    /// override this with a frame that stays regular.
    fn tangent_frame(&self, p: &CotangentPoint) -> Result<Vec<CVector>> {
        self.coordinate_frame(&self.coords_of(p)?)
    }

    fn is_lagrangian_dim(&self) -> bool {
        self.coord_dim() == self.n()
    }
}

/// Conormal bundle of the great sphere `S^{k−1} = Sⁿ ∩ span(e_base)`,
/// restricted to the fiber directions listed in `fiber`.
///
/// Coordinates are polar angles for `x` followed by fiber values. With a
/// single base index the point `x = sign·e_base` is fixed.
#[derive(Clone, Debug, Serialize)]
pub struct ConormalSpec {
    pub name: String,
    pub n: usize,
    /// 1-based.
    pub base: Vec<usize>,
    /// 1-based.
    pub fiber: Vec<usize>,
    pub sign: f64,
    pub fiber_box: f64,
}

pub const DEFAULT_FIBER_BOX: f64 = 3.0;

impl ConormalSpec {
    pub fn new(name: &str, n: usize, base: Vec<usize>, fiber: Vec<usize>) -> Result<Self> {
        ConormalSpec::with_sign(name, n, base, fiber, 1.0)
    }

    pub fn with_sign(name: &str, n: usize, base: Vec<usize>, fiber: Vec<usize>, sign: f64) -> Result<Self> {
        if base.is_empty() || base.len() > 3 {
            return Err(SlagError::Chart(format!("{} base indices are not supported", base.len())));
        }
        for &i in base.iter().chain(&fiber) {
            if i == 0 || i > n + 1 {
                return Err(SlagError::Index(format!("chart index {i} outside 1..={}", n + 1)));
            }
            if base.contains(&i) && fiber.contains(&i) {
                return Err(SlagError::Chart(format!("index {i} is both base and fiber")));
            }
        }
        Ok(ConormalSpec { name: name.into(), n, base, fiber, sign, fiber_box: DEFAULT_FIBER_BOX })
    }

    /// `x` on 1, 3, 5 and `ξ` on 2, 4, 6 in `T*S⁵`.
    pub fn l1() -> Self {
        ConormalSpec::new("L1", 5, vec![1, 3, 5], vec![2, 4, 6]).expect("static chart")
    }

    /// `x` on 1, 3 and `ξ` on 2, 4, 5, 6 in `T*S⁵`.
    pub fn l2() -> Self {
        ConormalSpec::new("L2", 5, vec![1, 3], vec![2, 4, 5, 6]).expect("static chart")
    }

    /// `x` on 1, 3, 5 and `ξ` on 2, 4, 6, 7 in `T*S⁶`.
    pub fn l_so223() -> Self {
        ConormalSpec::new("L", 6, vec![1, 3, 5], vec![2, 4, 6, 7]).expect("static chart")
    }

    /// The part of the previous chart with `ξ₆ = ξ₇ = 0`.
    pub fn l_hat() -> Self {
        ConormalSpec::new("Lhat", 6, vec![1, 3, 5], vec![2, 4]).expect("static chart")
    }

    fn angle_count(&self) -> usize {
        self.base.len() - 1
    }

    fn polar(&self, angles: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        match self.base.len() {
            1 => (vec![self.sign], vec![]),
            2 => {
                let (s, c) = angles[0].sin_cos();
                (vec![c, s], vec![vec![-s, c]])
            }
            _ => {
                let (s1, c1) = angles[0].sin_cos();
                let (s2, c2) = angles[1].sin_cos();
                (
                    vec![c1 * c2, c1 * s2, s1],
                    vec![vec![-s1 * c2, -s1 * s2, c1], vec![-c1 * s2, c1 * c2, 0.0]],
                )
            }
        }
    }

    fn embed(&self, indices: &[usize], values: &[f64]) -> DVector<f64> {
        let mut v = DVector::zeros(self.n + 1);
        for (&i, &a) in indices.iter().zip(values) {
            v[i - 1] = a;
        }
        v
    }

    fn check_coords(&self, coords: &[f64]) -> Result<()> {
        if coords.len() != self.coord_dim() {
            return Err(SlagError::Chart(format!(
                "chart {} takes {} coordinates, got {}",
                self.name,
                self.coord_dim(),
                coords.len()
            )));
        }
        Ok(())
    }

    pub fn contains(&self, p: &CotangentPoint, tol: f64) -> bool {
        if p.dim() != self.n {
            return false;
        }
        let fixed_ok = self.base.len() != 1 || (p.x()[self.base[0] - 1] - self.sign).abs() <= tol;
        fixed_ok
            && (1..=self.n + 1).all(|k| {
                (self.base.contains(&k) || p.x()[k - 1].abs() <= tol)
                    && (self.fiber.contains(&k) || p.xi()[k - 1].abs() <= tol)
            })
    }
}

impl Chart for ConormalSpec {
    fn name(&self) -> &str {
        &self.name
    }

    fn n(&self) -> usize {
        self.n
    }

    fn coord_dim(&self) -> usize {
        self.angle_count() + self.fiber.len()
    }

    fn point(&self, coords: &[f64]) -> Result<CotangentPoint> {
        self.check_coords(coords)?;
        let k = self.angle_count();
        let (x, _) = self.polar(&coords[..k]);
        CotangentPoint::new(self.embed(&self.base, &x), self.embed(&self.fiber, &coords[k..]))
    }

    fn coordinate_frame(&self, coords: &[f64]) -> Result<Vec<CVector>> {
        let p = self.point(coords)?;
        let k = self.angle_count();
        let (_, dx) = self.polar(&coords[..k]);
        let zero = DVector::zeros(self.n + 1);
        let mut frame = Vec::with_capacity(self.coord_dim());
        for d in &dx {
            frame.push(szoke_differential(&p, &self.embed(&self.base, d), &zero));
        }
        for &j in &self.fiber {
            frame.push(szoke_differential(&p, &zero, &unit(self.n + 1, j - 1)));
        }
        Ok(frame)
    }

    fn coords_of(&self, p: &CotangentPoint) -> Result<Vec<f64>> {
        if !self.contains(p, 1e-10) {
            return Err(SlagError::Chart(format!("point is not on chart {}", self.name)));
        }
        let xb: Vec<f64> = self.base.iter().map(|&i| p.x()[i - 1]).collect();
        let mut coords = match xb.len() {
            1 => vec![],
            2 => vec![xb[1].atan2(xb[0])],
            _ => vec![xb[2].atan2(xb[0].hypot(xb[1])), xb[1].atan2(xb[0])],
        };
        coords.extend(self.fiber.iter().map(|&j| p.xi()[j - 1]));
        Ok(coords)
    }

    fn seed_box(&self) -> Vec<(f64, f64)> {
        let tau = std::f64::consts::TAU;
        let mut b = vec![(0.0, tau); self.angle_count()];
        b.extend(std::iter::repeat_n((-self.fiber_box, self.fiber_box), self.fiber.len()));
        b
    }

    /// Orthonormal directions tangent to the base sphere, then the fiber
    /// directions; regular at the poles of the polar chart.
    fn tangent_frame(&self, p: &CotangentPoint) -> Result<Vec<CVector>> {
        if !self.contains(p, 1e-10) {
            return Err(SlagError::Chart(format!("point is not on chart {}", self.name)));
        }
        let zero = DVector::zeros(self.n + 1);
        let xb = DMatrix::from_fn(1, self.base.len(), |_, c| p.x()[self.base[c] - 1]);
        let kernel = null_space(&xb, 1e-12);
        let mut frame = Vec::with_capacity(self.coord_dim());
        for c in 0..kernel.ncols() {
            let d: Vec<f64> = kernel.column(c).iter().copied().collect();
            frame.push(szoke_differential(p, &self.embed(&self.base, &d), &zero));
        }
        for &j in &self.fiber {
            frame.push(szoke_differential(p, &zero, &unit(self.n + 1, j - 1)));
        }
        Ok(frame)
    }
}

/// Conormal bundle in `T*S⁵` of the small sphere
/// `N = {a·y + b·e₂ : y ∈ S² ⊂ span(e₁, e₃, e₅)}`, `a² + b² = 1`.
///
/// `N` is not minimal for `0 < b < 1`, so its conormal bundle is Lagrangian
/// without being special. Coordinates: two polar angles for `y`, then the
/// components along `e₄`, `e₆` and the unit normal `ν = a·e₂ − b·y`.
#[derive(Clone, Debug, Serialize)]
pub struct SmallSphereConormal {
    pub a: f64,
    pub b: f64,
}

impl SmallSphereConormal {
    pub fn new(b: f64) -> Result<Self> {
        if !(0.0 < b && b < 1.0) {
            return Err(SlagError::Precondition(format!("offset b = {b} must lie in (0, 1)")));
        }
        Ok(SmallSphereConormal { a: (1.0 - b * b).sqrt(), b })
    }

    fn pieces(&self, coords: &[f64]) -> (DVector<f64>, [DVector<f64>; 2]) {
        let (s1, c1) = coords[0].sin_cos();
        let (s2, c2) = coords[1].sin_cos();
        let y = DVector::from_row_slice(&[c1 * c2, 0.0, c1 * s2, 0.0, s1, 0.0]);
        let d1 = DVector::from_row_slice(&[-s1 * c2, 0.0, -s1 * s2, 0.0, c1, 0.0]);
        let d2 = DVector::from_row_slice(&[-c1 * s2, 0.0, c1 * c2, 0.0, 0.0, 0.0]);
        (y, [d1, d2])
    }
}

impl Chart for SmallSphereConormal {
    fn name(&self) -> &str {
        "small-sphere-conormal"
    }

    fn n(&self) -> usize {
        5
    }

    fn coord_dim(&self) -> usize {
        5
    }

    fn point(&self, coords: &[f64]) -> Result<CotangentPoint> {
        if coords.len() != 5 {
            return Err(SlagError::Chart("small-sphere conormal takes 5 coordinates".into()));
        }
        let (y, _) = self.pieces(coords);
        let e2 = unit(6, 1);
        let x = &y * self.a + &e2 * self.b;
        let nu = &e2 * self.a - &y * self.b;
        let xi = unit(6, 3) * coords[2] + unit(6, 5) * coords[3] + nu * coords[4];
        CotangentPoint::new(x, xi)
    }

    fn coordinate_frame(&self, coords: &[f64]) -> Result<Vec<CVector>> {
        let p = self.point(coords)?;
        let (_, dy) = self.pieces(coords);
        let zero = DVector::zeros(6);
        let mut frame = Vec::with_capacity(5);
        for d in &dy {
            // x moves by a·dy, ν by −b·dy
            frame.push(szoke_differential(&p, &(d * self.a), &(d * (-self.b * coords[4]))));
        }
        let (y, _) = self.pieces(coords);
        let nu = unit(6, 1) * self.a - &y * self.b;
        for dxi in [unit(6, 3), unit(6, 5), nu] {
            frame.push(szoke_differential(&p, &zero, &dxi));
        }
        Ok(frame)
    }

    fn coords_of(&self, p: &CotangentPoint) -> Result<Vec<f64>> {
        let y = (p.x() - unit(6, 1) * self.b) / self.a;
        if (y.norm() - 1.0).abs() > 1e-9 || y[1].abs() > 1e-9 || y[3].abs() > 1e-9 || y[5].abs() > 1e-9 {
            return Err(SlagError::Chart("point is not over the small sphere".into()));
        }
        let nu = unit(6, 1) * self.a - &y * self.b;
        Ok(vec![
            y[4].atan2(y[0].hypot(y[2])),
            y[2].atan2(y[0]),
            p.xi()[3],
            p.xi()[5],
            p.xi().dot(&nu),
        ])
    }

    fn seed_box(&self) -> Vec<(f64, f64)> {
        let tau = std::f64::consts::TAU;
        vec![(0.0, tau), (0.0, tau), (-1.0, 1.0), (-1.0, 1.0), (-1.0, 1.0)]
    }
}

/// Central finite differences of `Φ∘chart`, for cross-checking
/// [`Chart::coordinate_frame`].
pub fn finite_difference_frame(chart: &dyn Chart, coords: &[f64], step: f64) -> Result<Vec<CVector>> {
    let mut out = Vec::with_capacity(coords.len());
    for k in 0..coords.len() {
        let mut plus = coords.to_vec();
        let mut minus = coords.to_vec();
        plus[k] += step;
        minus[k] -= step;
        let zp = szoke_map(&chart.point(&plus)?);
        let zm = szoke_map(&chart.point(&minus)?);
        out.push((zp.z() - zm.z()) / Complex64::new(2.0 * step, 0.0));
    }
    Ok(out)
}

/// One sampled point of `V_c` with the frames the checks need.
#[derive(Clone, Debug)]
pub struct LevelSetPoint {
    pub coords: Vec<f64>,
    pub point: CotangentPoint,
    pub quadric: QuadricPoint,
    /// `T_zΦ(L)`, `n` vectors.
    pub l_frame: RealFrame,
    /// `T_pV_c`.
    pub v_tangent: RealFrame,
    /// Full moment covector at the point.
    pub level: CoVector,
}

/// Moment constraints cutting `V_c` out of a Lagrangian chart.
pub struct LevelSetProblem<'a> {
    pub chart: &'a dyn Chart,
    pub group: &'a SubgroupSpec,
    /// Expected stabilizer algebra at principal points.
    pub k_basis: &'a [SkewMatrix],
    /// Target for every component of the moment covector.
    pub target: CoVector,
    /// Components with nonvanishing gradient that are solved for; the rest
    /// are only checked.
    pub active: Vec<usize>,
    /// Coordinates held at zero in the seeds.
    pub seed_mask: Vec<usize>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct SeedCounts {
    pub attempted: usize,
    pub converged: usize,
    pub nonconverged: usize,
    pub nonprincipal: usize,
    pub irregular: usize,
}

#[derive(Clone, Debug)]
pub enum LevelSetResult {
    Points { points: Vec<LevelSetPoint>, counts: SeedCounts, v_dim: usize, hk_dim: usize, lag_dim_ok: bool },
    Empty { counts: SeedCounts },
}

pub const NEWTON_TOL: f64 = 1e-12;
pub const NEWTON_MAX_ITER: usize = 50;
pub const KERNEL_REL_TOL: f64 = 1e-9;
const SEED_FACTOR: usize = 40;

enum SeedOutcome {
    Accepted(Box<LevelSetPoint>),
    Nonconverged,
    Nonprincipal,
    Irregular,
}

pub fn seed_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

impl LevelSetProblem<'_> {
    fn residual(&self, potential: &PotentialTable, z: &QuadricPoint) -> Result<(DVector<f64>, CoVector)> {
        let mu = moment_covector(potential, self.group, z)?.covector;
        let r = DVector::from_iterator(
            self.active.len(),
            self.active.iter().map(|&a| mu.components[a] - self.target.components[a]),
        );
        Ok((r, mu))
    }

    /// `dμ_a(fₖ) = −ω(ξ_a#, fₖ)`.
    fn jacobian(&self, potential: &PotentialTable, z: &QuadricPoint, frame: &[CVector]) -> Result<DMatrix<f64>> {
        let eval = potential.kahler_eval(z)?;
        let fields: Vec<CVector> = self.active.iter().map(|&a| act(self.group.basis()[a].matrix(), z.z())).collect();
        Ok(DMatrix::from_fn(self.active.len(), frame.len(), |a, k| -eval.omega(&fields[a], &frame[k])))
    }

    fn newton(&self, potential: &PotentialTable, start: Vec<f64>) -> Result<Option<Vec<f64>>> {
        let mut q = start;
        let s_max = 0.5 * potential.t_max();
        for _ in 0..=NEWTON_MAX_ITER {
            let p = self.chart.point(&q)?;
            if p.norm_xi() > s_max {
                return Ok(None);
            }
            let z = szoke_map(&p);
            let (r, _) = self.residual(potential, &z)?;
            if r.amax() < NEWTON_TOL {
                return Ok(Some(q));
            }
            let frame = self.chart.coordinate_frame(&q)?;
            let j = self.jacobian(potential, &z, &frame)?;
            let pinv = match j.pseudo_inverse(1e-12) {
                Ok(m) => m,
                Err(_) => return Ok(None),
            };
            let mut step = -(pinv * r);
            let len = step.norm();
            if len > 0.5 {
                step *= 0.5 / len;
            }
            for (qk, dk) in q.iter_mut().zip(step.iter()) {
                *qk += dk;
            }
        }
        Ok(None)
    }

    /// Newton projection of chart coordinates `q` onto the level set.
    pub fn project_to_level(&self, potential: &PotentialTable, q: Vec<f64>) -> Result<Vec<f64>> {
        self.newton(potential, q)?
            .ok_or_else(|| SlagError::Precondition("Newton projection onto the level set did not converge".into()))
    }

    /// Level-set point with frames at chart coordinates `q`, which must lie on the level set.
    pub fn level_point(&self, potential: &PotentialTable, q: Vec<f64>) -> Result<LevelSetPoint> {
        let p = self.chart.point(&q)?;
        let z = szoke_map(&p);
        let (_, mu) = self.residual(potential, &z)?;
        level_point_from_frame(potential, self, q, p, z, mu)?
            .ok_or_else(|| SlagError::Precondition("moment map is not a submersion at this point".into()))
    }

    fn try_seed(&self, potential: &PotentialTable, seed: u64, index: u64) -> Result<SeedOutcome> {
        let mut rng = seed_rng(seed, index);
        let mut start: Vec<f64> = self.chart.seed_box().iter().map(|&(lo, hi)| rng.gen_range(lo..hi)).collect();
        for &m in &self.seed_mask {
            start[m] = 0.0;
        }
        let q = match self.newton(potential, start) {
            Ok(Some(q)) => q,
            Ok(None) | Err(SlagError::Range(_)) => return Ok(SeedOutcome::Nonconverged),
            Err(e) => return Err(e),
        };
        self.accept(potential, q)
    }

    fn accept(&self, potential: &PotentialTable, q: Vec<f64>) -> Result<SeedOutcome> {
        let p = self.chart.point(&q)?;
        let z = szoke_map(&p);
        if !is_principal(self.group, self.k_basis, &z) {
            return Ok(SeedOutcome::Nonprincipal);
        }
        let (_, mu) = self.residual(potential, &z)?;
        match level_point_from_frame(potential, self, q, p, z, mu)? {
            Some(pt) => Ok(SeedOutcome::Accepted(Box::new(pt))),
            None => Ok(SeedOutcome::Irregular),
        }
    }
}

fn level_point_from_frame(
    potential: &PotentialTable,
    problem: &LevelSetProblem,
    coords: Vec<f64>,
    p: CotangentPoint,
    z: QuadricPoint,
    level: CoVector,
) -> Result<Option<LevelSetPoint>> {
    let frame = problem.chart.tangent_frame(&p)?;
    let j = problem.jacobian(potential, &z, &frame)?;
    let kernel = if problem.active.is_empty() {
        DMatrix::identity(frame.len(), frame.len())
    } else {
        null_space(&j, KERNEL_REL_TOL)
    };
    if kernel.ncols() != frame.len() - problem.active.len() {
        return Ok(None);
    }
    let v: Vec<CVector> = (0..kernel.ncols())
        .map(|c| {
            frame.iter().zip(kernel.column(c).iter()).fold(CVector::zeros(z.z().len()), |acc, (f, w)| {
                acc + f * Complex64::new(*w, 0.0)
            })
        })
        .collect();
    let l_frame = RealFrame::new(z.clone(), frame)?;
    let v_tangent = RealFrame::new(z.clone(), v)?;
    Ok(Some(LevelSetPoint { coords, point: p, quadric: z, l_frame, v_tangent, level }))
}

/// Stabilizer algebra at `z` equals `span(k_basis)`.
pub fn is_principal(group: &SubgroupSpec, k_basis: &[SkewMatrix], z: &QuadricPoint) -> bool {
    let stab = stabilizer_coefficients(group, z);
    if stab.ncols() != k_basis.len() {
        return false;
    }
    let mut expected = DMatrix::zeros(group.algebra_dim(), k_basis.len());
    for (j, k) in k_basis.iter().enumerate() {
        expected.set_column(j, &group.coordinates(k.matrix()));
    }
    subspace_distance(&stab, &expected, 1e-12) < 1e-8
}

/// Samples `count` points of `V_c` from Newton seeds. Seed `i` draws from its
/// own counter stream, so the result does not depend on scheduling.
pub fn solve_level_set(
    potential: &PotentialTable,
    problem: &LevelSetProblem,
    count: usize,
    seed: u64,
) -> Result<LevelSetResult> {
    let max_seeds = SEED_FACTOR * count.max(1);
    let batch = (4 * count).max(16);
    let mut counts = SeedCounts::default();
    let mut points = Vec::with_capacity(count);
    let mut next = 0usize;
    while points.len() < count && next < max_seeds {
        let end = (next + batch).min(max_seeds);
        let outcomes: Vec<Result<SeedOutcome>> =
            (next..end).into_par_iter().map(|i| problem.try_seed(potential, seed, i as u64)).collect();
        for outcome in outcomes {
            if points.len() >= count {
                break;
            }
            counts.attempted += 1;
            match outcome? {
                SeedOutcome::Accepted(p) => {
                    counts.converged += 1;
                    points.push(*p);
                }
                SeedOutcome::Nonconverged => counts.nonconverged += 1,
                SeedOutcome::Nonprincipal => {
                    counts.converged += 1;
                    counts.nonprincipal += 1;
                }
                SeedOutcome::Irregular => {
                    counts.converged += 1;
                    counts.irregular += 1;
                }
            }
        }
        next = end;
    }
    if counts.converged == 0 {
        return Ok(LevelSetResult::Empty { counts });
    }
    if points.len() < count {
        return Err(SlagError::InsufficientSeeds {
            wanted: count,
            got: points.len(),
            diagnostics: format!(
                "{} seeds: {} did not converge, {} non-principal, {} irregular",
                counts.attempted, counts.nonconverged, counts.nonprincipal, counts.irregular
            ),
        });
    }
    let v_dim = problem.chart.coord_dim() - problem.active.len();
    let hk_dim = problem.group.algebra_dim() - problem.k_basis.len();
    let lag_dim_ok = v_dim + hk_dim == problem.chart.n();
    if !lag_dim_ok {
        log::warn!("dim H/K + dim V = {hk_dim} + {v_dim} != n = {}", problem.chart.n());
    }
    Ok(LevelSetResult::Points { points, counts, v_dim, hk_dim, lag_dim_ok })
}

/// Builds level-set points directly from a parametrized piece of `V_c`
/// (no Newton solve); `piece` supplies `T_pV`, `problem.chart` supplies `T_pL`.
pub fn sample_piece(
    potential: &PotentialTable,
    problem: &LevelSetProblem,
    piece: &dyn Chart,
    count: usize,
    seed: u64,
) -> Result<(Vec<LevelSetPoint>, SeedCounts)> {
    let mut counts = SeedCounts::default();
    let mut points = Vec::with_capacity(count);
    let mut index = 0u64;
    while points.len() < count && (index as usize) < SEED_FACTOR * count.max(1) {
        let mut rng = seed_rng(seed, index);
        index += 1;
        counts.attempted += 1;
        let coords: Vec<f64> = piece.seed_box().iter().map(|&(lo, hi)| rng.gen_range(lo..hi)).collect();
        let p = piece.point(&coords)?;
        let z = szoke_map(&p);
        if !is_principal(problem.group, problem.k_basis, &z) {
            counts.nonprincipal += 1;
            continue;
        }
        counts.converged += 1;
        let mu = moment_covector(potential, problem.group, &z)?.covector;
        let l_frame = RealFrame::new(z.clone(), problem.chart.tangent_frame(&p)?)?;
        let v_tangent = RealFrame::new(z.clone(), piece.coordinate_frame(&coords)?)?;
        let l_coords = problem.chart.coords_of(&p)?;
        points.push(LevelSetPoint { coords: l_coords, point: p, quadric: z, l_frame, v_tangent, level: mu });
    }
    if points.len() < count {
        return Err(SlagError::InsufficientSeeds {
            wanted: count,
            got: points.len(),
            diagnostics: format!("{} non-principal piece samples", counts.nonprincipal),
        });
    }
    Ok((points, counts))
}

/// Indices of basis elements completing `k_basis` to a basis of `𝔥`.
pub fn sweep_generators(group: &SubgroupSpec, k_basis: &[SkewMatrix]) -> Vec<usize> {
    let kdim = group.algebra_dim();
    let mut cols: Vec<DVector<f64>> = k_basis.iter().map(|k| group.coordinates(k.matrix())).collect();
    let mut chosen = Vec::new();
    for j in 0..kdim {
        let mut e = DVector::zeros(kdim);
        e[j] = 1.0;
        let mut trial = cols.clone();
        trial.push(e.clone());
        let m = DMatrix::from_columns(&trial);
        if numerical_rank(&m, 1e-10) == trial.len() {
            cols.push(e);
            chosen.push(j);
        }
    }
    chosen
}

#[derive(Clone, Debug)]
pub struct SweepSample {
    pub group_coords: Vec<f64>,
    pub h: GroupElement,
    pub base_index: usize,
    pub ambient: QuadricPoint,
    pub frame: RealFrame,
}

/// `h = exp(α₁ξ_{g₁})⋯exp(α_mξ_{g_m})` over an `h_grid^m` product grid of
/// angles in `[0, 2π)`; frames `h·(ξ_g# ∪ T_pV)`.
pub fn sweep(
    group: &SubgroupSpec,
    k_basis: &[SkewMatrix],
    points: &[LevelSetPoint],
    h_grid: usize,
) -> Result<Vec<SweepSample>> {
    let gens = sweep_generators(group, k_basis);
    let m = gens.len();
    let total = h_grid.pow(m as u32);
    let grid: Vec<Vec<f64>> = (0..total)
        .map(|mut idx| {
            (0..m)
                .map(|_| {
                    let a = idx % h_grid;
                    idx /= h_grid;
                    std::f64::consts::TAU * a as f64 / h_grid as f64
                })
                .collect()
        })
        .collect();
    let jobs: Vec<(usize, usize)> = (0..points.len()).flat_map(|p| (0..total).map(move |g| (p, g))).collect();
    jobs.par_iter()
        .enumerate()
        .map(|(index, &(pi, gi))| {
            let pt = &points[pi];
            let angles = &grid[gi];
            let h = gens
                .iter()
                .zip(angles)
                .fold(GroupElement::identity(group.dim()), |acc, (&g, &a)| acc.compose(&exp_element(&group.basis()[g], a)));
            let z = pt.quadric.z();
            let mut vectors: Vec<CVector> = gens.iter().map(|&g| act(group.basis()[g].matrix(), z)).collect();
            vectors.extend(pt.v_tangent.vectors().iter().cloned());
            let expected = vectors.len();
            let rank = frame_rank(&vectors);
            if rank < expected {
                return Err(SlagError::ImmersionFailure { index, rank, expected });
            }
            let moved: Vec<CVector> = vectors.iter().map(|v| act(h.matrix(), v)).collect();
            let ambient = pt.quadric.rotate(h.matrix());
            let frame = RealFrame::new(ambient.clone(), moved)?;
            Ok(SweepSample { group_coords: angles.clone(), h, base_index: pi, ambient, frame })
        })
        .collect()
}

/// Numerical rank of a frame after normalizing its vectors.
pub fn frame_rank(vectors: &[CVector]) -> usize {
    let normalized: Vec<CVector> = vectors
        .iter()
        .map(|v| {
            let n = v.norm();
            if n > 0.0 {
                v / Complex64::new(n, 0.0)
            } else {
                v.clone()
            }
        })
        .collect();
    numerical_rank(&real_matrix(&normalized), 1e-9)
}

/// `A = (ℱ(s)/s²)·ξξᵀ + (sinh s/s)·Id` for `ξ = (ξ₂, ξ₄, ξ₆)`, `s = |ξ|`, and
/// its smallest singular value.
pub fn matrix_a(xi2: f64, xi4: f64, xi6: f64) -> Result<(DMatrix<f64>, f64)> {
    let xi = DVector::from_row_slice(&[xi2, xi4, xi6]);
    let s = xi.norm();
    if s == 0.0 {
        return Err(SlagError::Domain("matrix A needs a nonzero fiber vector".into()));
    }
    let a = &xi * xi.transpose() * cosh_minus_sinhc_over_sq(s) + DMatrix::identity(3, 3) * sinhc(s);
    let sigma = a.clone().svd(false, false).singular_values.min();
    Ok((a, sigma))
}

pub const PIECE_LABELS: [&str; 5] = ["S2", "S1xR_1", "S1xR_3", "R2_+1", "R2_-1"];

#[derive(Clone, Debug, Serialize)]
pub struct PieceMembership {
    pub pieces: Vec<&'static str>,
    pub in_level_set: bool,
    pub consistent: bool,
}

/// Which of the five pieces of `{x₁ξ₂ = x₃ξ₄ = 0}` inside the `L̂` chart
/// contain `p`.
pub fn hat_v00_pieces(p: &CotangentPoint) -> Result<PieceMembership> {
    const TOL: f64 = 1e-10;
    if !ConormalSpec::l_hat().contains(p, TOL) {
        return Err(SlagError::Chart("point is not in the L-hat chart".into()));
    }
    let (x, xi) = (p.x(), p.xi());
    let e5 = unit(7, 4);
    let mut pieces = Vec::new();
    if xi.norm() <= TOL {
        pieces.push(PIECE_LABELS[0]);
    }
    if x[0].abs() <= TOL && xi[3].abs() <= TOL {
        pieces.push(PIECE_LABELS[1]);
    }
    if x[2].abs() <= TOL && xi[1].abs() <= TOL {
        pieces.push(PIECE_LABELS[2]);
    }
    if (x - &e5).norm() <= TOL {
        pieces.push(PIECE_LABELS[3]);
    }
    if (x + &e5).norm() <= TOL {
        pieces.push(PIECE_LABELS[4]);
    }
    let in_level_set = (x[0] * xi[1]).abs() <= TOL && (x[2] * xi[3]).abs() <= TOL;
    let consistent = in_level_set == !pieces.is_empty();
    Ok(PieceMembership { pieces, in_level_set, consistent })
}

/// Charts of the five pieces, each a 2-dimensional submanifold of `L̂`.
pub fn hat_v00_piece_charts() -> Vec<ConormalSpec> {
    let mk = |name: &str, base: Vec<usize>, fiber: Vec<usize>, sign: f64| {
        ConormalSpec::with_sign(name, 6, base, fiber, sign).expect("static chart")
    };
    vec![
        mk(PIECE_LABELS[0], vec![1, 3, 5], vec![], 1.0),
        mk(PIECE_LABELS[1], vec![3, 5], vec![2], 1.0),
        mk(PIECE_LABELS[2], vec![1, 5], vec![4], 1.0),
        mk(PIECE_LABELS[3], vec![5], vec![2, 4], 1.0),
        mk(PIECE_LABELS[4], vec![5], vec![2, 4], -1.0),
    ]
}

/// `max_{s ≤ s_max} 𝒦(s)·s`, scanned on a grid.
pub fn attainable_bound(potential: &PotentialTable, s_max: f64) -> Result<f64> {
    let s_max = s_max.min(0.5 * potential.t_max());
    let mut best: f64 = 0.0;
    for k in 1..=400 {
        let s = s_max * k as f64 / 400.0;
        best = best.max(potential.k_factor(s)? * s);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::basis_xi;
    use crate::stenzel::build_potential;
    use proptest::prelude::{any, prop_assert, proptest};

    fn pot(n: usize) -> PotentialTable {
        build_potential(n, 1.0, 14.0, 1e-13).unwrap()
    }

    #[test]
    fn chart_points() {
        let l1 = ConormalSpec::l1();
        let p = l1.point(&[0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(p.x(), &unit(6, 0));
        assert_eq!(p.xi(), &unit(6, 1));
        let l2 = ConormalSpec::l2();
        let p = l2.point(&[std::f64::consts::FRAC_PI_2, 0.0, 0.0, 0.0, 1.0]).unwrap();
        assert!((p.x() - unit(6, 2)).norm() < 1e-15);
        assert_eq!(p.xi(), &unit(6, 5));
    }

    #[test]
    fn frame_limits() {
        let l1 = ConormalSpec::l1();
        let f = l1.coordinate_frame(&[0.3, 1.1, 0.0, 0.0, 0.0]).unwrap();
        for (k, j) in [2usize, 4, 6].iter().enumerate() {
            let expect = crate::linalg::complexify(&unit(6, j - 1)) * crate::linalg::I;
            assert!((&f[2 + k] - expect).norm() < 1e-15);
        }
        let s: f64 = 0.7;
        let f = l1.coordinate_frame(&[0.0, 0.0, s, 0.0, 0.0]).unwrap();
        let expect = crate::linalg::complexify(&unit(6, 2)) * Complex64::new(s.cosh(), 0.0);
        assert!((&f[1] - expect).norm() < 1e-14);
    }

    #[test]
    fn frames_match_finite_differences() {
        let charts: Vec<Box<dyn Chart>> = vec![
            Box::new(ConormalSpec::l1()),
            Box::new(ConormalSpec::l2()),
            Box::new(ConormalSpec::l_so223()),
            Box::new(SmallSphereConormal::new(0.4).unwrap()),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for chart in &charts {
            for _ in 0..50 {
                let q: Vec<f64> = chart.seed_box().iter().map(|&(lo, hi)| rng.gen_range(lo..hi)).collect();
                let exact = chart.coordinate_frame(&q).unwrap();
                let fd = finite_difference_frame(chart.as_ref(), &q, 1e-5).unwrap();
                for (a, b) in exact.iter().zip(&fd) {
                    assert!((a - b).norm() < 1e-7 * a.norm().max(1.0), "{}", chart.name());
                }
                let p = chart.point(&q).unwrap();
                let back = chart.coords_of(&p).unwrap();
                let again = chart.point(&back).unwrap();
                assert!((again.x() - p.x()).norm() < 1e-12 && (again.xi() - p.xi()).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn regular_frame_spans_coordinate_frame() {
        let l = ConormalSpec::l_so223();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let q: Vec<f64> = l.seed_box().iter().map(|&(lo, hi)| rng.gen_range(lo..hi)).collect();
            let p = l.point(&q).unwrap();
            let a = real_matrix(&l.coordinate_frame(&q).unwrap());
            let b = real_matrix(&l.tangent_frame(&p).unwrap());
            assert!(subspace_distance(&a, &b, 1e-10) < 1e-10);
        }
        // at the pole the polar frame degenerates but the regular one does not
        let pole = l.point(&[std::f64::consts::FRAC_PI_2, 0.0, 0.3, 0.1, 0.0, 0.0]).unwrap();
        assert_eq!(frame_rank(&l.tangent_frame(&pole).unwrap()), 6);
    }

    fn u1_problem<'a>(chart: &'a dyn Chart, group: &'a SubgroupSpec, c: f64) -> LevelSetProblem<'a> {
        LevelSetProblem { chart, group, k_basis: &[], target: CoVector::new(vec![c]), active: vec![0], seed_mask: vec![] }
    }

    #[test]
    fn u1_l1_level_zero() {
        let p = pot(5);
        let chart = ConormalSpec::l1();
        let group = SubgroupSpec::u1diag6();
        let prob = u1_problem(&chart, &group, 0.0);
        let LevelSetResult::Points { points, v_dim, hk_dim, lag_dim_ok, .. } = solve_level_set(&p, &prob, 10, 7).unwrap() else {
            panic!("empty")
        };
        assert_eq!((v_dim, hk_dim), (4, 1));
        assert!(lag_dim_ok);
        for pt in &points {
            let (x, xi) = (pt.point.x(), pt.point.xi());
            assert!((x[0] * xi[1] + x[2] * xi[3] + x[4] * xi[5]).abs() < 1e-11);
            assert_eq!(pt.v_tangent.len(), 4);
        }
    }

    #[test]
    fn u1_l2_level_zero() {
        let p = pot(5);
        let chart = ConormalSpec::l2();
        let group = SubgroupSpec::u1diag6();
        let prob = u1_problem(&chart, &group, 0.0);
        let LevelSetResult::Points { points, .. } = solve_level_set(&p, &prob, 10, 7).unwrap() else { panic!() };
        let mut free = false;
        for pt in &points {
            let (x, xi) = (pt.point.x(), pt.point.xi());
            assert!((x[0] * xi[1] + x[2] * xi[3]).abs() < 1e-11);
            free |= xi[4].abs() > 1e-3 && xi[5].abs() > 1e-3;
        }
        assert!(free);
    }

    #[test]
    fn level_sets_are_deterministic_and_flat() {
        let p = pot(5);
        let chart = ConormalSpec::l1();
        let group = SubgroupSpec::u1diag6();
        let prob = u1_problem(&chart, &group, 0.3);
        let run = || match solve_level_set(&p, &prob, 6, 11).unwrap() {
            LevelSetResult::Points { points, .. } => points,
            _ => panic!(),
        };
        let a = run();
        let b = run();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.coords, y.coords);
        }
        let eta = &group.basis()[0];
        for pt in &a {
            assert!((pt.level.components[0] - 0.3).abs() < 1e-12);
            for v in pt.v_tangent.vectors() {
                let d = crate::moment::directional_derivative(
                    |w: &QuadricPoint| crate::moment::moment_pair(&p, w, eta),
                    &pt.quadric,
                    v,
                    1e-4,
                    true,
                )
                .unwrap();
                assert!(d.abs() < 1e-7 * v.norm().max(1.0));
            }
        }
    }

    #[test]
    fn unreachable_level_is_empty() {
        let p = pot(5);
        let chart = ConormalSpec::l1();
        let group = SubgroupSpec::u1diag6();
        let bound = attainable_bound(&p, 0.5 * p.t_max()).unwrap();
        let prob = u1_problem(&chart, &group, 2.0 * bound);
        assert!(matches!(solve_level_set(&p, &prob, 4, 1).unwrap(), LevelSetResult::Empty { .. }));
    }

    #[test]
    fn sweep_frames() {
        let p = pot(5);
        let chart = ConormalSpec::l1();
        let group = SubgroupSpec::u1diag6();
        let prob = u1_problem(&chart, &group, 0.3);
        let LevelSetResult::Points { points, .. } = solve_level_set(&p, &prob, 3, 2).unwrap() else { panic!() };
        let samples = sweep(&group, &[], &points, 4).unwrap();
        assert_eq!(samples.len(), 12);
        let first = &samples[0];
        assert_eq!(first.group_coords, vec![0.0]);
        assert_eq!(first.frame.len(), 5);
        assert_eq!(frame_rank(first.frame.vectors()), 5);
        let eta_z = act(group.basis()[0].matrix(), points[0].quadric.z());
        assert!((&first.frame.vectors()[0] - eta_z).norm() < 1e-15);
    }

    #[test]
    fn sweep_reports_immersion_failure() {
        // a V-direction equal to the orbit direction makes the frame rank-deficient
        let p = pot(5);
        let chart = ConormalSpec::l1();
        let group = SubgroupSpec::u1diag6();
        let prob = u1_problem(&chart, &group, 0.3);
        let LevelSetResult::Points { mut points, .. } = solve_level_set(&p, &prob, 1, 2).unwrap() else { panic!() };
        let z = points[0].quadric.clone();
        let eta_z = act(group.basis()[0].matrix(), z.z());
        points[0].v_tangent = RealFrame::new(z, vec![eta_z]).unwrap();
        assert!(matches!(sweep(&group, &[], &points, 2), Err(SlagError::ImmersionFailure { .. })));
    }

    #[test]
    fn so223_sweep_generators() {
        let group = SubgroupSpec::so223();
        let k = vec![basis_xi(6, 7, 7).unwrap()];
        assert_eq!(sweep_generators(&group, &k), vec![0, 1, 2, 3]);
    }

    #[test]
    fn matrix_a_spectrum() {
        for t in [1e-4, 0.1, 1.0, 5.0] {
            let dir = DVector::from_row_slice(&[0.3, -0.5, 0.81]).normalize() * t;
            let (a, sigma) = matrix_a(dir[0], dir[1], dir[2]).unwrap();
            let mut eig: Vec<f64> = a.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
            eig.sort_by(f64::total_cmp);
            let sh = t.sinh() / t;
            let mut expect = [sh, sh, t.cosh()];
            expect.sort_by(f64::total_cmp);
            for (e, x) in eig.iter().zip(expect) {
                assert!((e - x).abs() < 1e-10 * x, "t={t}");
            }
            assert!((a.determinant() - sh * sh * t.cosh()).abs() < 1e-10 * sh * sh * t.cosh());
            assert!(sigma > 0.0);
        }
        let (_, sigma) = matrix_a(1e-7, 0.0, 0.0).unwrap();
        assert!((sigma - 1.0).abs() < 1e-12);
        assert!(matrix_a(0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn piece_examples() {
        let cp = |x: &[f64], xi: &[f64]| CotangentPoint::new(DVector::from_row_slice(x), DVector::from_row_slice(xi)).unwrap();
        let m = hat_v00_pieces(&cp(&[0.6, 0.0, 0.48, 0.0, 0.64, 0.0, 0.0], &[0.0; 7])).unwrap();
        assert_eq!(m.pieces, vec!["S2"]);
        // the pieces overlap: x = e1 with zero fiber also has x3 = xi2 = 0
        let m = hat_v00_pieces(&cp(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], &[0.0; 7])).unwrap();
        assert_eq!(m.pieces, vec!["S2", "S1xR_3"]);
        let m = hat_v00_pieces(&cp(&[0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0], &[0.0, 1.0, 0.0, 2.0, 0.0, 0.0, 0.0])).unwrap();
        assert!(m.pieces.contains(&"R2_+1"));
        assert!(m.in_level_set && m.consistent);
        let m = hat_v00_pieces(&cp(&[0.6, 0.0, 0.0, 0.0, 0.8, 0.0, 0.0], &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0])).unwrap();
        assert!(m.pieces.is_empty() && !m.in_level_set && m.consistent);
        assert!(hat_v00_pieces(&cp(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], &[0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0])).is_err());
    }

    #[test]
    fn piece_charts_lie_in_level_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (chart, label) in hat_v00_piece_charts().iter().zip(PIECE_LABELS) {
            for _ in 0..20 {
                let q: Vec<f64> = chart.seed_box().iter().map(|&(lo, hi)| rng.gen_range(lo..hi)).collect();
                let m = hat_v00_pieces(&chart.point(&q).unwrap()).unwrap();
                assert!(m.pieces.contains(&label) && m.in_level_set);
            }
        }
    }

    proptest! {
        #[test]
        fn union_identity(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // zero out random coordinates so every branch of the case analysis is hit
            let mut xb: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut f: Vec<f64> = (0..2).map(|_| rng.gen_range(-3.0..3.0)).collect();
            for v in xb.iter_mut().take(2).chain(f.iter_mut()) {
                if rng.gen_bool(0.5) { *v = 0.0; }
            }
            if xb.iter().all(|v| *v == 0.0) { xb[2] = 1.0; }
            let norm = xb.iter().map(|v| v * v).sum::<f64>().sqrt();
            let x = DVector::from_row_slice(&[xb[0] / norm, 0.0, xb[1] / norm, 0.0, xb[2] / norm, 0.0, 0.0]);
            let xi = DVector::from_row_slice(&[0.0, f[0], 0.0, f[1], 0.0, 0.0, 0.0]);
            let m = hat_v00_pieces(&CotangentPoint::new(x, xi).unwrap()).unwrap();
            prop_assert!(m.consistent);
        }
    }
}
