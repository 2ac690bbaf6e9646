//! `T*Sⁿ`, the affine quadric `Qⁿ = {Σ zᵢ² = 1} ⊂ ℂⁿ⁺¹`, and the map between them.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Result, SlagError};
use crate::linalg::{bilinear, from_real, null_space, pfaffian, real_matrix, singular_values, CVector, Complex64, I};
use crate::special::sinhc;
use crate::stenzel::PotentialTable;

const POINT_TOL: f64 = 1e-12;
const TANGENT_TOL: f64 = 1e-10;
const INDEPENDENCE_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CotangentPoint {
    x: DVector<f64>,
    xi: DVector<f64>,
}

impl CotangentPoint {
    pub fn new(x: DVector<f64>, xi: DVector<f64>) -> Result<Self> {
        if x.len() != xi.len() || x.len() < 2 {
            return Err(SlagError::Precondition(format!(
                "x and xi must have equal length >= 2, got {} and {}",
                x.len(),
                xi.len()
            )));
        }
        let nx = x.norm();
        if (nx - 1.0).abs() > POINT_TOL {
            return Err(SlagError::Precondition(format!("|x| = {nx} is not 1")));
        }
        let dot = x.dot(&xi);
        if dot.abs() > POINT_TOL * xi.norm().max(1.0) {
            return Err(SlagError::Precondition(format!("x . xi = {dot:e} is not 0")));
        }
        Ok(CotangentPoint { x, xi })
    }

    pub fn x(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn xi(&self) -> &DVector<f64> {
        &self.xi
    }

    pub fn norm_xi(&self) -> f64 {
        self.xi.norm()
    }

    pub fn dim(&self) -> usize {
        self.x.len() - 1
    }

    pub fn rotate(&self, h: &DMatrix<f64>) -> Result<Self> {
        CotangentPoint::new(h * &self.x, h * &self.xi)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuadricPoint {
    z: CVector,
}

impl QuadricPoint {
    pub fn new(z: CVector) -> Result<Self> {
        if z.len() < 2 {
            return Err(SlagError::Precondition("quadric points live in C^(n+1), n >= 1".into()));
        }
        let defect = (bilinear(&z, &z) - Complex64::new(1.0, 0.0)).norm();
        // the absolute bound is unreachable in f64 once |z|² ≫ 1
        let scale = z.iter().map(|c| c.norm_sqr()).sum::<f64>().max(1.0);
        if defect > POINT_TOL * scale {
            return Err(SlagError::Precondition(format!("|sum z_i^2 - 1| = {defect:e}")));
        }
        Ok(QuadricPoint { z })
    }

    pub fn z(&self) -> &CVector {
        &self.z
    }

    /// `r² = Σ zᵢ z̄ᵢ`.
    pub fn r2(&self) -> f64 {
        self.z.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn dim(&self) -> usize {
        self.z.len() - 1
    }

    pub fn rotate(&self, h: &DMatrix<f64>) -> QuadricPoint {
        QuadricPoint { z: crate::linalg::act(h, &self.z) }
    }

    /// Distance to another point in the ambient norm.
    pub fn distance(&self, other: &QuadricPoint) -> f64 {
        (&self.z - &other.z).norm()
    }

    /// Projects a nearby ambient vector back onto the quadric by Newton steps
    /// along `w̄`, the normal direction of `Σ wᵢ² = 1`.
    pub fn retract(w: CVector) -> Result<QuadricPoint> {
        let mut w = w;
        for _ in 0..8 {
            let defect = bilinear(&w, &w) - Complex64::new(1.0, 0.0);
            let scale = w.iter().map(|c| c.norm_sqr()).sum::<f64>();
            if defect.norm() <= 1e-15 * scale.max(1.0) {
                break;
            }
            let wbar = w.map(|c| c.conj());
            let step = defect / Complex64::new(2.0 * scale, 0.0);
            w -= wbar * step;
        }
        QuadricPoint::new(w)
    }
}

#[derive(Clone, Debug)]
pub struct TangentVector {
    pub base: QuadricPoint,
    pub v: CVector,
}

impl TangentVector {
    pub fn new(base: QuadricPoint, v: CVector) -> Result<Self> {
        check_tangent(&base, &v)?;
        Ok(TangentVector { base, v })
    }
}

fn check_tangent(base: &QuadricPoint, v: &CVector) -> Result<()> {
    let defect = bilinear(base.z(), v).norm();
    let scale = (base.z().norm() * v.norm()).max(1.0);
    if defect > TANGENT_TOL * scale {
        return Err(SlagError::Precondition(format!("vector is not tangent: |z . v| = {defect:e}")));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct RealFrame {
    base: QuadricPoint,
    vectors: Vec<CVector>,
}

impl RealFrame {
    pub fn new(base: QuadricPoint, vectors: Vec<CVector>) -> Result<Self> {
        if vectors.len() > 2 * base.dim() {
            return Err(SlagError::Precondition(format!(
                "{} vectors exceed the real dimension 2n = {}",
                vectors.len(),
                2 * base.dim()
            )));
        }
        for v in &vectors {
            if v.len() != base.z().len() {
                return Err(SlagError::Precondition("vector length differs from base".into()));
            }
            check_tangent(&base, v)?;
        }
        let sigma = smallest_normalized_singular_value(&vectors);
        if !vectors.is_empty() && !(sigma > INDEPENDENCE_TOL) {
            return Err(SlagError::Precondition(format!(
                "frame is not linearly independent (sigma_min = {sigma:e})"
            )));
        }
        Ok(RealFrame { base, vectors })
    }

    pub fn base(&self) -> &QuadricPoint {
        &self.base
    }

    pub fn vectors(&self) -> &[CVector] {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn tangent(&self, k: usize) -> TangentVector {
        TangentVector { base: self.base.clone(), v: self.vectors[k].clone() }
    }

    pub fn rotate(&self, h: &DMatrix<f64>) -> RealFrame {
        RealFrame {
            base: self.base.rotate(h),
            vectors: self.vectors.iter().map(|v| crate::linalg::act(h, v)).collect(),
        }
    }
}

/// Smallest singular value of the real coordinate matrix after scaling every
/// column to unit length.
pub fn smallest_normalized_singular_value(vectors: &[CVector]) -> f64 {
    if vectors.is_empty() {
        return 0.0;
    }
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
    singular_values(&real_matrix(&normalized)).last().copied().unwrap_or(0.0)
}

/// `Φ(x, ξ) = cosh|ξ|·x + i·(sinh|ξ|/|ξ|)·ξ`.
pub fn szoke_map(p: &CotangentPoint) -> QuadricPoint {
    let s = p.norm_xi();
    let (ch, shc) = (s.cosh(), sinhc(s));
    let z = CVector::from_fn(p.x.len(), |i, _| Complex64::new(ch * p.x[i], shc * p.xi[i]));
    QuadricPoint { z }
}

pub fn szoke_inverse(z: &QuadricPoint) -> Result<CotangentPoint> {
    let re = z.z.map(|c| c.re);
    let im = z.z.map(|c| c.im);
    let nre = re.norm();
    if nre < 1.0 - POINT_TOL {
        return Err(SlagError::Inconsistent(format!("|Re z| = {nre} < 1")));
    }
    let nim = im.norm();
    let x = &re / nre;
    // |Im z| = sinh|ξ| determines small |ξ| far better than |Re z| = cosh|ξ|
    let xi = if nim > 1e-12 {
        &im * (nim.asinh() / nim)
    } else {
        // |Im z| ≈ |ξ| to relative order |ξ|²
        im.clone()
    };
    let xi = &xi - &x * x.dot(&xi);
    CotangentPoint::new(x.clone() / x.norm(), xi)
}

/// `dΦ_(x,ξ)(ẋ, ξ̇)`.
pub fn szoke_differential(p: &CotangentPoint, dx: &DVector<f64>, dxi: &DVector<f64>) -> CVector {
    let s = p.norm_xi();
    let xi_dot = p.xi.dot(dxi);
    let ch = s.cosh();
    let shc = sinhc(s);
    // d/ds sinhc(s) = s·F(s)/s², so d sinhc(|ξ|) = (ξ·ξ̇)·F(s)/s²
    let f2 = crate::special::cosh_minus_sinhc_over_sq(s);
    let re = dx * ch + &p.x * (shc * xi_dot);
    let im = &p.xi * (f2 * xi_dot) + dxi * shc;
    CVector::from_fn(p.x.len(), |i, _| Complex64::new(re[i], im[i]))
}

/// Orthonormal (ambient real inner product) basis of `T_zQ`.
pub fn tangent_basis(z: &QuadricPoint) -> RealFrame {
    let m = z.z.len();
    let mut a = DMatrix::zeros(2, 2 * m);
    for i in 0..m {
        let (p, q) = (z.z[i].re, z.z[i].im);
        // Re(z·v) = Σ p a − q b, Im(z·v) = Σ q a + p b for v = a + ib
        a[(0, i)] = p;
        a[(0, i + m)] = -q;
        a[(1, i)] = q;
        a[(1, i + m)] = p;
    }
    let kernel = null_space(&a, 1e-12);
    let vectors = (0..kernel.ncols()).map(|j| from_real(&kernel.column(j).into_owned())).collect();
    RealFrame { base: z.clone(), vectors }
}

pub fn apply_complex_structure(v: &TangentVector) -> TangentVector {
    TangentVector { base: v.base.clone(), v: &v.v * I }
}

/// `Ω = κ·det[z | v₁ | … | vₙ]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HolomorphicVolume {
    pub kappa: f64,
}

impl Default for HolomorphicVolume {
    fn default() -> Self {
        HolomorphicVolume { kappa: 1.0 }
    }
}

impl HolomorphicVolume {
    pub fn evaluate(&self, z: &QuadricPoint, vectors: &[CVector]) -> Result<Complex64> {
        let n = z.dim();
        if vectors.len() != n {
            return Err(SlagError::Precondition(format!(
                "holomorphic volume needs {n} vectors, got {}",
                vectors.len()
            )));
        }
        Ok(det_with_base(z.z(), vectors) * self.kappa)
    }

    pub fn evaluate_frame(&self, frame: &RealFrame) -> Result<Complex64> {
        self.evaluate(frame.base(), frame.vectors())
    }
}

pub fn holomorphic_volume(frame: &RealFrame, volume: &HolomorphicVolume) -> Result<Complex64> {
    volume.evaluate_frame(frame)
}

fn det_with_base(z: &CVector, vectors: &[CVector]) -> Complex64 {
    let m = z.len();
    let mut mat = nalgebra::DMatrix::<Complex64>::zeros(m, vectors.len() + 1);
    mat.set_column(0, z);
    for (j, v) in vectors.iter().enumerate() {
        mat.set_column(j + 1, v);
    }
    mat.determinant()
}

/// `Ω∧Ω̄` with `κ = 1` on a real `2n`-frame, as a shuffle sum.
fn omega_wedge_conj(z: &CVector, frame: &[CVector]) -> Complex64 {
    let total = frame.len();
    let half = total / 2;
    let mut sum = Complex64::new(0.0, 0.0);
    for subset in combinations(total, half) {
        let complement: Vec<usize> = (0..total).filter(|k| !subset.contains(k)).collect();
        let displacement: usize = subset.iter().enumerate().map(|(i, &s)| s - i).sum();
        let sign = if displacement % 2 == 0 { 1.0 } else { -1.0 };
        let a: Vec<CVector> = subset.iter().map(|&k| frame[k].clone()).collect();
        let b: Vec<CVector> = complement.iter().map(|&k| frame[k].clone()).collect();
        sum += det_with_base(z, &a) * det_with_base(z, &b).conj() * sign;
    }
    sum
}

fn combinations(total: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(k);
    fn rec(start: usize, total: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..total {
            if total - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, total, k, cur, out);
            cur.pop();
        }
    }
    rec(0, total, k, &mut current, &mut out);
    out
}

/// Ratio `(ωⁿ/n!) / ((−1)^{n(n−1)/2} (i/2)ⁿ Ω∧Ω̄)` at `z`, with `κ = 1`.
pub fn calabi_yau_ratio(potential: &PotentialTable, z: &QuadricPoint) -> Result<f64> {
    let n = z.dim();
    let frame = tangent_basis(z);
    let eval = potential.kahler_eval(z)?;
    let v = frame.vectors();
    let w = DMatrix::from_fn(2 * n, 2 * n, |a, b| eval.omega(&v[a], &v[b]));
    let top = pfaffian(&w);
    let sign = if (n * (n - 1) / 2) % 2 == 0 { 1.0 } else { -1.0 };
    let prefactor = (I * 0.5).powi(n as i32) * sign;
    let bottom = prefactor * omega_wedge_conj(z.z(), v);
    Ok(top / bottom.re)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct VolumeCalibration {
    pub kappa: f64,
    /// Relative standard deviation of the Calabi–Yau ratio.
    pub spread: f64,
    pub samples: usize,
}

impl VolumeCalibration {
    pub fn volume(&self) -> HolomorphicVolume {
        HolomorphicVolume { kappa: self.kappa }
    }
}

pub const CALIBRATION_TOL: f64 = 1e-6;

/// Fixes `κₙ` so that the mean Calabi–Yau ratio is 1.
pub fn calibrate_volume_constant(
    potential: &PotentialTable,
    samples: usize,
    seed: u64,
) -> Result<VolumeCalibration> {
    use rand::SeedableRng;
    if samples < 2 {
        return Err(SlagError::Precondition("calibration needs at least 2 samples".into()));
    }
    let n = potential.n();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let max_norm = (0.5 * potential.t_max()).min(2.0);
    let mut ratios = Vec::with_capacity(samples);
    for _ in 0..samples {
        let p = random_cotangent_point(n, max_norm, &mut rng);
        ratios.push(calabi_yau_ratio(potential, &szoke_map(&p))?);
    }
    let mean = ratios.iter().sum::<f64>() / samples as f64;
    let var = ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (samples - 1) as f64;
    let spread = var.sqrt() / mean.abs();
    if !(spread < CALIBRATION_TOL) || !(mean > 0.0) {
        return Err(SlagError::Calibration { spread, tol: CALIBRATION_TOL });
    }
    Ok(VolumeCalibration { kappa: mean.sqrt(), spread, samples })
}

/// Uniform `x ∈ Sⁿ`, and `ξ ⊥ x` with uniform direction and `|ξ| ∈ [0, max_norm]`.
pub fn random_cotangent_point<R: Rng>(n: usize, max_norm: f64, rng: &mut R) -> CotangentPoint {
    let x = random_unit(n + 1, rng);
    let g = DVector::from_fn(n + 1, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut xi = &g - &x * x.dot(&g);
    let len = xi.norm();
    let target = rng.gen::<f64>() * max_norm;
    if len > 0.0 {
        xi *= target / len;
    }
    CotangentPoint::new(x, xi).expect("constructed on T*S^n")
}

pub fn random_quadric_point<R: Rng>(n: usize, max_norm: f64, rng: &mut R) -> QuadricPoint {
    szoke_map(&random_cotangent_point(n, max_norm, rng))
}

pub fn random_unit<R: Rng>(dim: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let g = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = g.norm();
        if n > 1e-8 {
            return g / n;
        }
    }
}

/// Random real tangent vector at `z` with unit ambient norm.
pub fn random_tangent<R: Rng>(z: &QuadricPoint, rng: &mut R) -> CVector {
    let basis = tangent_basis(z);
    let mut v = CVector::zeros(z.z().len());
    for b in basis.vectors() {
        v += b * Complex64::new(rng.sample::<f64, _>(StandardNormal), 0.0);
    }
    let n = v.norm();
    v / Complex64::new(n, 0.0)
}

/// Fixed point off the zero section used to calibrate sign conventions.
pub fn probe_point(n: usize) -> QuadricPoint {
    let mut x = DVector::zeros(n + 1);
    x[0] = 1.0;
    let mut xi = DVector::zeros(n + 1);
    xi[1] = 0.5;
    szoke_map(&CotangentPoint { x, xi })
}

/// Unit vector `eₖ` (0-based) in `ℝᵐ`.
pub fn unit(m: usize, k: usize) -> DVector<f64> {
    let mut e = DVector::zeros(m);
    e[k] = 1.0;
    e
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::random_rotation;
    use crate::stenzel::build_potential;
    use proptest::prelude::{any, prop_assert, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cot(x: &[f64], xi: &[f64]) -> CotangentPoint {
        CotangentPoint::new(DVector::from_row_slice(x), DVector::from_row_slice(xi)).unwrap()
    }

    #[test]
    fn zero_section_maps_to_real_point() {
        let z = szoke_map(&cot(&[1.0, 0.0, 0.0], &[0.0, 0.0, 0.0]));
        assert_eq!(z.z()[0], Complex64::new(1.0, 0.0));
        assert_eq!(z.z()[1], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn geodesic_image() {
        let t = 0.7;
        let z = szoke_map(&cot(&[1.0, 0.0, 0.0], &[0.0, t, 0.0]));
        assert!((z.z()[0] - Complex64::new(t.cosh(), 0.0)).norm() < 1e-15);
        assert!((z.z()[1] - Complex64::new(0.0, t.sinh())).norm() < 1e-15);
    }

    #[test]
    fn inverse_of_unit_geodesic() {
        let z = QuadricPoint::new(CVector::from_vec(vec![
            Complex64::new(1.0f64.cosh(), 0.0),
            Complex64::new(0.0, 1.0f64.sinh()),
            Complex64::new(0.0, 0.0),
        ]))
        .unwrap();
        let p = szoke_inverse(&z).unwrap();
        assert!((p.x() - DVector::from_row_slice(&[1.0, 0.0, 0.0])).norm() < 1e-15);
        assert!((p.xi() - DVector::from_row_slice(&[0.0, 1.0, 0.0])).norm() < 1e-15);
    }

    #[test]
    fn inverse_rejects_points_off_the_image() {
        let z = QuadricPoint { z: CVector::from_vec(vec![Complex64::new(0.5, 0.0), Complex64::new(0.0, 0.0)]) };
        assert!(matches!(szoke_inverse(&z), Err(SlagError::Inconsistent(_))));
    }

    #[test]
    fn invalid_cotangent_points() {
        assert!(CotangentPoint::new(
            DVector::from_row_slice(&[1.0, 0.1]),
            DVector::from_row_slice(&[0.0, 0.0])
        )
        .is_err());
        assert!(CotangentPoint::new(
            DVector::from_row_slice(&[1.0, 0.0]),
            DVector::from_row_slice(&[0.1, 0.0])
        )
        .is_err());
    }

    #[test]
    fn round_trip_at_special_norms() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &s in &[0.0, 1e-9, 1e-3, 1.0, 10.0] {
            for _ in 0..20 {
                let mut p = random_cotangent_point(5, 1.0, &mut rng);
                let len = p.xi.norm();
                if len > 0.0 {
                    p.xi *= s / len;
                }
                let q = szoke_inverse(&szoke_map(&p)).unwrap();
                assert!((q.x() - p.x()).norm() < 1e-10);
                assert!((q.xi() - p.xi()).norm() < 1e-10 * s.max(1.0), "s={s}");
            }
        }
    }

    #[test]
    fn tangent_basis_spans_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 1..=6 {
            let z = random_quadric_point(n, 2.0, &mut rng);
            let frame = tangent_basis(&z);
            assert_eq!(frame.len(), 2 * n);
            for v in frame.vectors() {
                assert!(bilinear(z.z(), v).norm() < 1e-12);
            }
            assert!(RealFrame::new(z.clone(), frame.vectors().to_vec()).is_ok());
        }
        let e1 = probe_point(1).rotate(&DMatrix::identity(2, 2));
        assert_eq!(tangent_basis(&e1).len(), 2);
    }

    #[test]
    fn tangent_basis_n1_at_e1() {
        let z = szoke_map(&cot(&[1.0, 0.0], &[0.0, 0.0]));
        let frame = tangent_basis(&z);
        for v in frame.vectors() {
            assert!(v[0].norm() < 1e-15);
        }
    }

    #[test]
    fn complex_structure_squares_to_minus_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z = random_quadric_point(4, 1.5, &mut rng);
        let v = TangentVector::new(z.clone(), random_tangent(&z, &mut rng)).unwrap();
        let iv = apply_complex_structure(&v);
        assert!(TangentVector::new(z.clone(), iv.v.clone()).is_ok());
        let iiv = apply_complex_structure(&iv);
        assert!((iiv.v + &v.v).norm() < 1e-15);
    }

    #[test]
    fn volume_anchor_n1() {
        let z = szoke_map(&cot(&[1.0, 0.0], &[0.0, 0.0]));
        let e2 = CVector::from_vec(vec![Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)]);
        let v = HolomorphicVolume::default().evaluate(&z, &[e2]).unwrap();
        assert!((v - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        assert!(HolomorphicVolume::default().evaluate(&z, &[]).is_err());
    }

    #[test]
    fn volume_is_alternating_and_complex_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let z = random_quadric_point(4, 1.0, &mut rng);
        let vs: Vec<CVector> = (0..4).map(|_| random_tangent(&z, &mut rng)).collect();
        let vol = HolomorphicVolume::default();
        let base = vol.evaluate(&z, &vs).unwrap();
        let mut swapped = vs.clone();
        swapped.swap(1, 3);
        assert!((vol.evaluate(&z, &swapped).unwrap() + base).norm() < 1e-12);
        let mut scaled = vs.clone();
        scaled[0] = &scaled[0] * I;
        assert!((vol.evaluate(&z, &scaled).unwrap() - base * I).norm() < 1e-12);
        let lambda = Complex64::new(0.3, -1.2);
        scaled[0] = &vs[0] * lambda + &vs[2] * Complex64::new(2.0, 0.0);
        assert!((vol.evaluate(&z, &scaled).unwrap() - base * lambda).norm() < 1e-12);
    }

    #[test]
    fn volume_is_rotation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let vol = HolomorphicVolume::default();
        for _ in 0..100 {
            let z = random_quadric_point(6, 1.0, &mut rng);
            let frame = RealFrame { base: z.clone(), vectors: (0..6).map(|_| random_tangent(&z, &mut rng)).collect() };
            let h = random_rotation(7, &mut rng);
            let a = vol.evaluate_frame(&frame).unwrap();
            let b = vol.evaluate_frame(&frame.rotate(&h)).unwrap();
            assert!((b / a - Complex64::new(1.0, 0.0)).norm() < 1e-10);
        }
    }

    #[test]
    fn calibration_ratio_is_constant() {
        for n in [2usize, 3] {
            let pot = build_potential(n, 1.0, 8.0, 1e-13).unwrap();
            let cal = calibrate_volume_constant(&pot, 50, 1).unwrap();
            assert!(cal.spread < 1e-6);
            // κ² = 2ⁿ for c = 1, as computed independently by the prototype
            assert!((cal.kappa * cal.kappa - 2f64.powi(n as i32)).abs() < 1e-6);
        }
    }

    #[test]
    fn calibration_is_seed_and_size_stable() {
        let pot = build_potential(2, 1.0, 8.0, 1e-13).unwrap();
        let a = calibrate_volume_constant(&pot, 50, 1).unwrap();
        let b = calibrate_volume_constant(&pot, 50, 2).unwrap();
        let c = calibrate_volume_constant(&pot, 100, 1).unwrap();
        assert!((a.kappa - b.kappa).abs() < 1e-8);
        assert!((a.kappa - c.kappa).abs() < 1e-8);
    }

    #[test]
    fn retraction_lands_on_quadric() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let z = random_quadric_point(5, 2.0, &mut rng);
        let v = random_tangent(&z, &mut rng);
        let w = z.z() + &v * Complex64::new(1e-3, 0.0);
        let r = QuadricPoint::retract(w.clone()).unwrap();
        assert!((bilinear(r.z(), r.z()) - Complex64::new(1.0, 0.0)).norm() < 1e-14);
        assert!((r.z() - w).norm() < 1e-5);
    }

    proptest! {
        #[test]
        fn szoke_map_is_equivariant(seed in any::<u64>(), n in 1usize..7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_cotangent_point(n, 3.0, &mut rng);
            let h = random_rotation(n + 1, &mut rng);
            let lhs = szoke_map(&p.rotate(&h).unwrap());
            let rhs = szoke_map(&p).rotate(&h);
            prop_assert!(lhs.distance(&rhs) < 1e-12 * p.norm_xi().cosh());
        }

        #[test]
        fn szoke_round_trip(seed in any::<u64>(), n in 1usize..7, s in 0.0f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut p = random_cotangent_point(n, 1.0, &mut rng);
            let len = p.xi.norm();
            if len > 0.0 { p.xi *= s / len; }
            let q = szoke_inverse(&szoke_map(&p)).unwrap();
            prop_assert!((q.x() - p.x()).norm() < 1e-10);
            prop_assert!((q.xi() - p.xi()).norm() < 1e-10 * s.max(1.0));
        }

        #[test]
        fn differential_matches_finite_differences(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_cotangent_point(4, 2.0, &mut rng);
            // curve x(t) = cos t·x + sin t·y, ξ(t) = ξ + t·ζ, projected to stay cotangent
            let y = {
                let g = random_unit(5, &mut rng);
                let g = &g - p.x() * p.x().dot(&g);
                g.normalize()
            };
            let zeta = random_unit(5, &mut rng);
            let at = |t: f64| {
                let x = p.x() * t.cos() + &y * t.sin();
                let xi = p.xi() + &zeta * t;
                let xi = &xi - &x * x.dot(&xi);
                szoke_map(&CotangentPoint { x, xi }).z().clone()
            };
            let h = 1e-5;
            let fd = (at(h) - at(-h)) / Complex64::new(2.0 * h, 0.0);
            let dxi = &zeta - p.x() * (p.x().dot(&zeta) + p.xi().dot(&y));
            let dphi = szoke_differential(&p, &y, &dxi);
            prop_assert!((fd - dphi).norm() < 1e-7 * p.norm_xi().cosh());
        }
    }
}
