//! Block-embedded subgroups of `SO(n+1)` acting linearly on `ℂⁿ⁺¹`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SlagError};
use crate::linalg::{act, null_space, numerical_rank, subspace_distance, to_real, Complex64};
use crate::quadric::{random_quadric_point, random_tangent, HolomorphicVolume, QuadricPoint, TangentVector};

const SKEW_TOL: f64 = 1e-14;
const ORTHO_TOL: f64 = 1e-12;
pub const KERNEL_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SkewMatrix(DMatrix<f64>);

impl SkewMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(SlagError::Precondition("skew matrix must be square".into()));
        }
        let defect = (&m + m.transpose()).amax();
        if defect > SKEW_TOL * m.amax().max(1.0) {
            return Err(SlagError::Precondition(format!("matrix is not skew: |M + M^T| = {defect:e}")));
        }
        Ok(SkewMatrix(m))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn bracket(&self, other: &SkewMatrix) -> SkewMatrix {
        SkewMatrix(&self.0 * &other.0 - &other.0 * &self.0)
    }

    pub fn scale(&self, t: f64) -> SkewMatrix {
        SkewMatrix(&self.0 * t)
    }
}

impl std::ops::Add for &SkewMatrix {
    type Output = SkewMatrix;
    fn add(self, rhs: &SkewMatrix) -> SkewMatrix {
        SkewMatrix(&self.0 + &rhs.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupElement(DMatrix<f64>);

impl GroupElement {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(SlagError::Precondition("group element must be square".into()));
        }
        let k = m.nrows();
        let defect = (m.transpose() * &m - DMatrix::identity(k, k)).amax();
        if defect > ORTHO_TOL {
            return Err(SlagError::Precondition(format!("matrix is not orthogonal: {defect:e}")));
        }
        let det = m.determinant();
        if (det - 1.0).abs() > ORTHO_TOL {
            return Err(SlagError::Precondition(format!("det = {det} is not 1")));
        }
        Ok(GroupElement(m))
    }

    pub fn identity(dim: usize) -> Self {
        GroupElement(DMatrix::identity(dim, dim))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn compose(&self, other: &GroupElement) -> GroupElement {
        GroupElement(&self.0 * &other.0)
    }

    pub fn inverse(&self) -> GroupElement {
        GroupElement(self.0.transpose())
    }
}

/// Components of an element of `𝔥*` in the dual of a subgroup's algebra basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoVector {
    pub components: Vec<f64>,
}

impl CoVector {
    pub fn new(components: Vec<f64>) -> Self {
        CoVector { components }
    }

    pub fn zeros(len: usize) -> Self {
        CoVector { components: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.components.iter().fold(0.0, |m, c| m.max(c.abs()))
    }
}

/// `ξᵢⱼ = E_ji − E_ij` with 1-based `i < j`.
pub fn basis_xi(i: usize, j: usize, dim: usize) -> Result<SkewMatrix> {
    if !(1 <= i && i < j && j <= dim) {
        return Err(SlagError::Index(format!("xi_({i},{j}) needs 1 <= i < j <= {dim}")));
    }
    let mut m = DMatrix::zeros(dim, dim);
    m[(j - 1, i - 1)] = 1.0;
    m[(i - 1, j - 1)] = -1.0;
    Ok(SkewMatrix(m))
}

pub fn exp_element(xi: &SkewMatrix, t: f64) -> GroupElement {
    GroupElement((&xi.0 * t).exp())
}

/// `ξ#_z = ξ·z`.
pub fn fundamental_vector(xi: &SkewMatrix, z: &QuadricPoint) -> TangentVector {
    TangentVector { base: z.clone(), v: act(&xi.0, z.z()) }
}

/// Serializable description: a built-in name, or rotation blocks of
/// 1-based coordinate indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubgroupConfig {
    pub name: String,
    #[serde(default)]
    pub blocks: Vec<Vec<usize>>,
    #[serde(default)]
    pub dim: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct SubgroupSpec {
    name: String,
    dim: usize,
    blocks: Vec<Vec<usize>>,
    basis: Vec<SkewMatrix>,
    labels: Vec<String>,
}

impl SubgroupSpec {
    /// One `SO(k)` factor per block, with basis `ξᵢⱼ`, `i < j` in the block,
    /// in lexicographic order.
    pub fn from_blocks(name: &str, dim: usize, blocks: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = vec![false; dim + 1];
        for block in &blocks {
            if block.len() < 2 {
                return Err(SlagError::Config(format!("block {block:?} must have size >= 2")));
            }
            for &i in block {
                if i == 0 || i > dim {
                    return Err(SlagError::Index(format!("block index {i} outside 1..={dim}")));
                }
                if seen[i] {
                    return Err(SlagError::Config(format!("index {i} appears in two blocks")));
                }
                seen[i] = true;
            }
        }
        let mut basis = Vec::new();
        let mut labels = Vec::new();
        for block in &blocks {
            let mut sorted = block.clone();
            sorted.sort_unstable();
            for a in 0..sorted.len() {
                for b in a + 1..sorted.len() {
                    basis.push(basis_xi(sorted[a], sorted[b], dim)?);
                    labels.push(format!("xi{}{}", sorted[a], sorted[b]));
                }
            }
        }
        SubgroupSpec::with_basis(name, dim, blocks, basis, labels)
    }

    pub fn with_basis(
        name: &str,
        dim: usize,
        blocks: Vec<Vec<usize>>,
        basis: Vec<SkewMatrix>,
        labels: Vec<String>,
    ) -> Result<Self> {
        if labels.len() != basis.len() {
            return Err(SlagError::Config("one label per basis element".into()));
        }
        for xi in &basis {
            if xi.dim() != dim {
                return Err(SlagError::Config("basis element has the wrong size".into()));
            }
            // support must stay inside one block
            let support: Vec<usize> = (0..dim)
                .filter(|&r| (0..dim).any(|c| xi.0[(r, c)] != 0.0))
                .map(|r| r + 1)
                .collect();
            let inside = blocks.is_empty()
                || support.iter().all(|i| blocks.iter().any(|b| b.contains(i)));
            if !inside {
                return Err(SlagError::Config(format!("basis element supported on {support:?} leaves the blocks")));
            }
        }
        let flat = DMatrix::from_fn(dim * dim, basis.len(), |r, c| basis[c].0[(r % dim, r / dim)]);
        if numerical_rank(&flat, 1e-12) != basis.len() {
            return Err(SlagError::Config("algebra basis is linearly dependent".into()));
        }
        Ok(SubgroupSpec { name: name.to_string(), dim, blocks, basis, labels })
    }

    /// The diagonal `SO(2)` generated by `ξ₁₂ + ξ₃₄ + ξ₅₆` in `GL(6)`.
    pub fn u1diag6() -> Self {
        let eta = [(1, 2), (3, 4), (5, 6)]
            .iter()
            .map(|&(i, j)| basis_xi(i, j, 6).expect("static indices"))
            .reduce(|a, b| &a + &b)
            .expect("three terms");
        SubgroupSpec::with_basis(
            "u1diag6",
            6,
            vec![vec![1, 2], vec![3, 4], vec![5, 6]],
            vec![eta],
            vec!["eta".into()],
        )
        .expect("static spec")
    }

    /// `SO(2) × SO(2) × SO(3)` in `GL(7)`, basis `ξ₁₂, ξ₃₄, ξ₅₆, ξ₅₇, ξ₆₇`.
    pub fn so223() -> Self {
        SubgroupSpec::from_blocks("so223", 7, vec![vec![1, 2], vec![3, 4], vec![5, 6, 7]])
            .expect("static spec")
    }

    pub fn full(dim: usize) -> Self {
        SubgroupSpec::from_blocks(&format!("so{dim}"), dim, vec![(1..=dim).collect()])
            .expect("valid block")
    }

    pub fn from_config(cfg: &SubgroupConfig) -> Result<Self> {
        match cfg.name.as_str() {
            "u1diag6" if cfg.blocks.is_empty() => Ok(SubgroupSpec::u1diag6()),
            "so223" if cfg.blocks.is_empty() => Ok(SubgroupSpec::so223()),
            _ => {
                if cfg.blocks.is_empty() {
                    return Err(SlagError::Config(format!("unknown subgroup '{}' without blocks", cfg.name)));
                }
                let max = cfg.blocks.iter().flatten().copied().max().unwrap_or(0);
                SubgroupSpec::from_blocks(&cfg.name, cfg.dim.unwrap_or(max), cfg.blocks.clone())
            }
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn basis(&self) -> &[SkewMatrix] {
        &self.basis
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn algebra_dim(&self) -> usize {
        self.basis.len()
    }

    pub fn combine(&self, coefficients: &[f64]) -> SkewMatrix {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (c, xi) in coefficients.iter().zip(&self.basis) {
            m += &xi.0 * *c;
        }
        SkewMatrix(m)
    }

    /// Coordinates of `x ∈ 𝔥` in the algebra basis (least squares in the
    /// Frobenius inner product).
    pub fn coordinates(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let k = self.basis.len();
        let gram = DMatrix::from_fn(k, k, |a, b| self.basis[a].0.dot(&self.basis[b].0));
        let rhs = DVector::from_fn(k, |a, _| self.basis[a].0.dot(x));
        gram.cholesky().expect("independent basis").solve(&rhs)
    }

    /// Random element as a product of at most three basis exponentials with
    /// angles uniform in `(−π, π]`.
    pub fn random_element<R: Rng>(&self, rng: &mut R) -> GroupElement {
        let factors = rng.gen_range(1..=3);
        let mut h = GroupElement::identity(self.dim);
        for _ in 0..factors {
            let k = rng.gen_range(0..self.basis.len());
            let angle = std::f64::consts::PI * (1.0 - 2.0 * rng.gen::<f64>());
            h = h.compose(&exp_element(&self.basis[k], angle));
        }
        h
    }
}

/// Coefficient vectors (columns) spanning `{ξ ∈ 𝔥 : ξ·z = 0}`.
pub fn stabilizer_coefficients(spec: &SubgroupSpec, z: &QuadricPoint) -> DMatrix<f64> {
    let k = spec.algebra_dim();
    let m = 2 * z.z().len();
    let mut map = DMatrix::zeros(m, k);
    for (j, xi) in spec.basis().iter().enumerate() {
        map.set_column(j, &to_real(&act(xi.matrix(), z.z())));
    }
    null_space(&map, KERNEL_TOL)
}

pub fn stabilizer_algebra(spec: &SubgroupSpec, z: &QuadricPoint) -> Vec<SkewMatrix> {
    let coeffs = stabilizer_coefficients(spec, z);
    (0..coeffs.ncols())
        .map(|j| spec.combine(coeffs.column(j).as_slice()))
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct IsotropyReport {
    pub pass: bool,
    pub max_subspace_distance: f64,
    pub max_fix_residual: f64,
    pub failures: Vec<usize>,
}

/// Checks that the stabilizer algebra at every point is `span(k_basis)` and
/// that `exp(t·k)` fixes every point.
pub fn isotropy_constant_check(
    spec: &SubgroupSpec,
    k_basis: &[SkewMatrix],
    points: &[QuadricPoint],
) -> IsotropyReport {
    let kdim = spec.algebra_dim();
    let mut expected = DMatrix::zeros(kdim, k_basis.len());
    for (j, k) in k_basis.iter().enumerate() {
        expected.set_column(j, &spec.coordinates(k.matrix()));
    }
    let mut max_dist: f64 = 0.0;
    let mut max_fix: f64 = 0.0;
    let mut failures = Vec::new();
    for (idx, z) in points.iter().enumerate() {
        let stab = stabilizer_coefficients(spec, z);
        let dist = if stab.ncols() == expected.ncols() {
            subspace_distance(&stab, &expected, 1e-12)
        } else {
            f64::INFINITY
        };
        let mut fix: f64 = 0.0;
        for k in k_basis {
            for t in [0.1, 1.0, 2.0] {
                let moved = z.rotate(exp_element(k, t).matrix());
                fix = fix.max(moved.distance(z) / z.z().norm());
            }
        }
        if !(dist < 1e-8 && fix < 1e-10) {
            failures.push(idx);
        }
        max_dist = max_dist.max(dist);
        max_fix = max_fix.max(fix);
    }
    IsotropyReport { pass: failures.is_empty(), max_subspace_distance: max_dist, max_fix_residual: max_fix, failures }
}

/// `⟨c, Ad_{h⁻¹}ξ⟩ = ⟨c, ξ⟩` for random `h ∈ H` and every basis `ξ`.
pub fn is_central<R: Rng>(spec: &SubgroupSpec, c: &CoVector, trials: usize, rng: &mut R) -> bool {
    centrality_defect(spec, c, trials, rng) < 1e-10
}

pub fn centrality_defect<R: Rng>(spec: &SubgroupSpec, c: &CoVector, trials: usize, rng: &mut R) -> f64 {
    let cvec = DVector::from_column_slice(&c.components);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let h = spec.random_element(rng);
        for (k, xi) in spec.basis().iter().enumerate() {
            let moved = h.matrix().transpose() * xi.matrix() * h.matrix();
            let coords = spec.coordinates(&moved);
            worst = worst.max((cvec.dot(&coords) - c.components[k]).abs());
        }
    }
    worst
}

#[derive(Clone, Debug, Serialize)]
pub struct FhReport {
    pub max_modulus_deviation: f64,
    pub ratio_spread: f64,
}

/// Ratio `Ω(h·frame)/Ω(frame)` over random points and frames.
pub fn f_h_modulus_check<R: Rng>(
    h: &GroupElement,
    volume: &HolomorphicVolume,
    samples: usize,
    max_norm: f64,
    rng: &mut R,
) -> Result<FhReport> {
    let n = h.matrix().nrows() - 1;
    let mut ratios = Vec::with_capacity(samples);
    for _ in 0..samples {
        let z = random_quadric_point(n, max_norm, rng);
        let frame: Vec<_> = (0..n).map(|_| random_tangent(&z, rng)).collect();
        let before = volume.evaluate(&z, &frame)?;
        let moved: Vec<_> = frame.iter().map(|v| act(h.matrix(), v)).collect();
        let after = volume.evaluate(&z.rotate(h.matrix()), &moved)?;
        ratios.push(after / before);
    }
    let max_dev = ratios.iter().fold(0.0f64, |m, r| m.max((r.norm() - 1.0).abs()));
    let mean = ratios.iter().sum::<Complex64>() / ratios.len() as f64;
    let spread = (ratios.iter().map(|r| (r - mean).norm_sqr()).sum::<f64>() / ratios.len() as f64).sqrt();
    Ok(FhReport { max_modulus_deviation: max_dev, ratio_spread: spread })
}

/// Phase derivative of `f_{exp(tξ)}` at `t = 0` for each basis `ξ`.
pub fn a_h_estimate<R: Rng>(spec: &SubgroupSpec, volume: &HolomorphicVolume, rng: &mut R) -> Result<CoVector> {
    const STEP: f64 = 1e-5;
    let n = spec.dim() - 1;
    let z = random_quadric_point(n, 1.0, rng);
    let frame: Vec<_> = (0..n).map(|_| random_tangent(&z, rng)).collect();
    let base = volume.evaluate(&z, &frame)?;
    let phase = |h: &GroupElement| -> Result<f64> {
        let moved: Vec<_> = frame.iter().map(|v| act(h.matrix(), v)).collect();
        Ok((volume.evaluate(&z.rotate(h.matrix()), &moved)? / base).arg())
    };
    let mut out = Vec::with_capacity(spec.algebra_dim());
    for xi in spec.basis() {
        let plus = phase(&exp_element(xi, STEP))?;
        let minus = phase(&exp_element(xi, -STEP))?;
        out.push((plus - minus) / (2.0 * STEP));
    }
    Ok(CoVector::new(out))
}

/// Haar-random rotation via QR of a Gaussian matrix.
pub fn random_rotation<R: Rng>(dim: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            let col = -q.column(j);
            q.set_column(j, &col);
        }
    }
    if q.determinant() < 0.0 {
        let col = -q.column(0);
        q.set_column(0, &col);
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadric::{szoke_map, unit, CotangentPoint};
    use proptest::prelude::{any, prop_assert, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn real_point(v: DVector<f64>) -> QuadricPoint {
        let n = v.len() - 1;
        szoke_map(&CotangentPoint::new(v, DVector::zeros(n + 1)).unwrap())
    }

    #[test]
    fn basis_xi_entries() {
        let x = basis_xi(1, 2, 2).unwrap();
        assert_eq!(x.matrix(), &DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]));
        let y = basis_xi(2, 5, 6).unwrap();
        assert_eq!(y.matrix().transpose(), -y.matrix());
        assert!(matches!(basis_xi(2, 2, 3), Err(SlagError::Index(_))));
        assert!(matches!(basis_xi(1, 4, 3), Err(SlagError::Index(_))));
    }

    #[test]
    fn exponential_closed_forms() {
        let x = basis_xi(1, 2, 3).unwrap();
        let t = 0.83;
        let e1 = exp_element(&x, t).matrix() * unit(3, 0);
        assert!((e1 - DVector::from_row_slice(&[t.cos(), t.sin(), 0.0])).norm() < 1e-15);
        let pi = exp_element(&x, PI);
        let expect = DMatrix::from_diagonal(&DVector::from_row_slice(&[-1.0, -1.0, 1.0]));
        assert!((pi.matrix() - expect).amax() < 1e-15);
        assert_eq!(exp_element(&x, 0.0).matrix(), &DMatrix::identity(3, 3));
    }

    #[test]
    fn rodrigues_agreement() {
        // exp of a general so(3) element against Rodrigues' formula
        let w: [f64; 3] = [0.3, -1.1, 0.7];
        let k = DMatrix::from_row_slice(3, 3, &[0.0, -w[2], w[1], w[2], 0.0, -w[0], -w[1], w[0], 0.0]);
        let theta = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
        let kn = &k / theta;
        let rod = DMatrix::identity(3, 3) + &kn * theta.sin() + &kn * &kn * (1.0 - theta.cos());
        let e = exp_element(&SkewMatrix::new(k).unwrap(), 1.0);
        assert!((e.matrix() - rod).amax() < 1e-14);
        assert!(GroupElement::new(e.matrix().clone()).is_ok());
    }

    #[test]
    fn eta_moves_e1_to_e2() {
        let spec = SubgroupSpec::u1diag6();
        let z = real_point(unit(6, 0));
        let v = fundamental_vector(&spec.basis()[0], &z).v;
        assert!((v - crate::linalg::complexify(&unit(6, 1))).norm() < 1e-15);
    }

    #[test]
    fn fundamental_vector_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = SubgroupSpec::so223();
        let z = random_quadric_point(6, 1.0, &mut rng);
        for xi in spec.basis() {
            let exact = fundamental_vector(xi, &z).v;
            let d = |h: f64| (z.rotate(exp_element(xi, h).matrix()).z() - z.z()) / Complex64::new(h, 0.0);
            let coarse = d(1e-3) - &exact;
            let fine = d(0.5e-3) - &exact;
            // first-order forward difference: error halves with the step
            let ratio = coarse.norm() / fine.norm();
            assert!((ratio - 2.0).abs() < 0.05, "ratio {ratio}");
            let richardson = d(0.5e-3) * Complex64::new(2.0, 0.0) - d(1e-3);
            assert!((richardson - &exact).norm() < 1e-6);
        }
    }

    #[test]
    fn bracket_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = SubgroupSpec::full(5);
        let z = random_quadric_point(4, 1.0, &mut rng);
        for a in spec.basis() {
            for b in spec.basis() {
                let lhs = act(a.bracket(b).matrix(), z.z());
                let rhs = act(a.matrix(), &act(b.matrix(), z.z())) - act(b.matrix(), &act(a.matrix(), z.z()));
                assert!((lhs - rhs).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn stabilizer_of_real_e5_under_so223() {
        let spec = SubgroupSpec::so223();
        let z = real_point(unit(7, 4));
        let stab = stabilizer_algebra(&spec, &z);
        assert!(stab.len() >= 2);
        let coeffs = stabilizer_coefficients(&spec, &z);
        let span_has = |k: usize| {
            let mut e = DVector::zeros(5);
            e[k] = 1.0;
            let proj = &coeffs * (coeffs.transpose() * &e);
            (proj - e).norm() < 1e-10
        };
        assert!(span_has(0) && span_has(1) && span_has(4));
    }

    #[test]
    fn spec_from_config() {
        let cfg: SubgroupConfig =
            serde_json::from_str(r#"{"name": "so223", "blocks": [[1,2],[3,4],[5,6,7]]}"#).unwrap();
        let spec = SubgroupSpec::from_config(&cfg).unwrap();
        assert_eq!(spec.labels(), &["xi12", "xi34", "xi56", "xi57", "xi67"]);
        let bad = SubgroupConfig { name: "x".into(), blocks: vec![vec![1, 2], vec![2, 3]], dim: None };
        assert!(SubgroupSpec::from_config(&bad).is_err());
        let named = SubgroupConfig { name: "u1diag6".into(), blocks: vec![], dim: None };
        assert_eq!(SubgroupSpec::from_config(&named).unwrap().algebra_dim(), 1);
    }

    #[test]
    fn centrality() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u1 = SubgroupSpec::u1diag6();
        assert!(is_central(&u1, &CoVector::new(vec![0.7]), 20, &mut rng));
        let so = SubgroupSpec::so223();
        assert!(is_central(&so, &CoVector::new(vec![0.2, -0.1, 0.0, 0.0, 0.0]), 50, &mut rng));
        assert!(!is_central(&so, &CoVector::new(vec![0.2, -0.1, 0.3, 0.0, 0.0]), 50, &mut rng));
    }

    #[test]
    fn f_h_is_unimodular_and_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vol = HolomorphicVolume::default();
        let id = GroupElement::identity(7);
        let r = f_h_modulus_check(&id, &vol, 10, 2.0, &mut rng).unwrap();
        assert_eq!(r.max_modulus_deviation, 0.0);
        let h = GroupElement::new(random_rotation(7, &mut rng)).unwrap();
        let r = f_h_modulus_check(&h, &vol, 50, 2.0, &mut rng).unwrap();
        assert!(r.max_modulus_deviation < 1e-10);
        assert!(r.ratio_spread < 1e-10);
    }

    #[test]
    fn a_h_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let vol = HolomorphicVolume::default();
        for spec in [SubgroupSpec::u1diag6(), SubgroupSpec::so223()] {
            let a = a_h_estimate(&spec, &vol, &mut rng).unwrap();
            assert!(a.max_abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn one_parameter_subgroup_law(seed in any::<u64>(), s in -4.0f64..4.0, t in -4.0f64..4.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let spec = SubgroupSpec::so223();
            let c: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let xi = spec.combine(&c);
            let lhs = exp_element(&xi, s + t);
            let rhs = exp_element(&xi, s).compose(&exp_element(&xi, t));
            prop_assert!((lhs.matrix() - rhs.matrix()).amax() < 1e-12);
            prop_assert!(GroupElement::new(lhs.matrix().clone()).is_ok());
        }

        #[test]
        fn random_rotations_are_special_orthogonal(seed in any::<u64>(), dim in 2usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            prop_assert!(GroupElement::new(random_rotation(dim, &mut rng)).is_ok());
        }
    }
}
