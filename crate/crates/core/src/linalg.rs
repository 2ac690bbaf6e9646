//! Small dense helpers shared by the geometry modules: the real structure of
//! `ℂᵐ`, null spaces, Pfaffians.

use nalgebra::{Complex, DMatrix, DVector};

pub type Complex64 = Complex<f64>;
pub type CVector = DVector<Complex64>;

pub const I: Complex64 = Complex64::new(0.0, 1.0);

/// Real inner product on `ℂᵐ ≅ ℝ²ᵐ`: `Re Σ aᵢ b̄ᵢ`.
pub fn real_dot(a: &CVector, b: &CVector) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
}

pub fn real_norm(a: &CVector) -> f64 {
    real_dot(a, a).sqrt()
}

/// Complex bilinear (not Hermitian) pairing `Σ aᵢ bᵢ`.
pub fn bilinear(a: &CVector, b: &CVector) -> Complex64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Action of a real matrix on a complex vector.
pub fn act(m: &DMatrix<f64>, z: &CVector) -> CVector {
    let re = m * z.map(|c| c.re);
    let im = m * z.map(|c| c.im);
    CVector::from_fn(z.len(), |i, _| Complex64::new(re[i], im[i]))
}

pub fn complexify(v: &DVector<f64>) -> CVector {
    v.map(|r| Complex64::new(r, 0.0))
}

/// Stacks `(Re v, Im v)`.
pub fn to_real(v: &CVector) -> DVector<f64> {
    let m = v.len();
    DVector::from_fn(2 * m, |i, _| if i < m { v[i].re } else { v[i - m].im })
}

pub fn from_real(r: &DVector<f64>) -> CVector {
    let m = r.len() / 2;
    CVector::from_fn(m, |i, _| Complex64::new(r[i], r[i + m]))
}

/// Columns are the real coordinate vectors of `vectors`.
pub fn real_matrix(vectors: &[CVector]) -> DMatrix<f64> {
    let rows = vectors.first().map_or(0, |v| 2 * v.len());
    let mut m = DMatrix::zeros(rows, vectors.len());
    for (j, v) in vectors.iter().enumerate() {
        m.set_column(j, &to_real(v));
    }
    m
}

/// Singular values plus the right singular vectors, padding with zero rows
/// so that the full right basis is always available.
fn full_svd(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let (rows, cols) = m.shape();
    let padded = if rows < cols {
        let mut p = DMatrix::zeros(cols, cols);
        p.view_mut((0, 0), (rows, cols)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    (svd.singular_values.iter().copied().collect(), v_t)
}

/// Orthonormal basis (as columns) of `ker m`, using the threshold
/// `σ < rel_tol · σ_max`.
pub fn null_space(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let cols = m.ncols();
    if m.nrows() == 0 || m.iter().all(|x| *x == 0.0) {
        return DMatrix::identity(cols, cols);
    }
    let (sv, v_t) = full_svd(m);
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..sv.len()).filter(|&k| sv[k] < rel_tol * smax).collect();
    let mut basis = DMatrix::zeros(cols, keep.len());
    for (j, &k) in keep.iter().enumerate() {
        basis.set_column(j, &v_t.row(k).transpose());
    }
    basis
}

/// Singular values sorted in decreasing order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let sv = singular_values(m);
    let smax = sv.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

/// Orthonormal basis of the column span.
pub fn column_span(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    if m.ncols() == 0 {
        return DMatrix::zeros(m.nrows(), 0);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| smax > 0.0 && svd.singular_values[k] > rel_tol * smax)
        .collect();
    let mut out = DMatrix::zeros(m.nrows(), keep.len());
    for (j, &k) in keep.iter().enumerate() {
        out.set_column(j, &u.column(k));
    }
    out
}

/// Frobenius distance between the orthogonal projectors onto the column
/// spans of `a` and `b`.
pub fn subspace_distance(a: &DMatrix<f64>, b: &DMatrix<f64>, rel_tol: f64) -> f64 {
    let qa = column_span(a, rel_tol);
    let qb = column_span(b, rel_tol);
    let pa = &qa * qa.transpose();
    let pb = &qb * qb.transpose();
    (pa - pb).norm()
}

/// Pfaffian of a real skew-symmetric matrix by skew Gaussian elimination
/// with partial pivoting.
pub fn pfaffian(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "pfaffian needs a square matrix");
    if n % 2 == 1 {
        return 0.0;
    }
    let mut a = a.clone();
    let mut pf = 1.0;
    let mut k = 0;
    while k + 1 < n {
        let mut kp = k + 1;
        for i in k + 2..n {
            if a[(i, k)].abs() > a[(kp, k)].abs() {
                kp = i;
            }
        }
        if kp != k + 1 {
            a.swap_rows(k + 1, kp);
            a.swap_columns(k + 1, kp);
            pf = -pf;
        }
        let pivot = a[(k, k + 1)];
        if pivot == 0.0 {
            return 0.0;
        }
        pf *= pivot;
        if k + 2 < n {
            let tau: Vec<f64> = (k + 2..n).map(|j| a[(k, j)] / pivot).collect();
            let col: Vec<f64> = (k + 2..n).map(|i| a[(i, k + 1)]).collect();
            for (ii, i) in (k + 2..n).enumerate() {
                for (jj, j) in (k + 2..n).enumerate() {
                    a[(i, j)] += tau[ii] * col[jj] - col[ii] * tau[jj];
                }
            }
        }
        k += 2;
    }
    pf
}

/// Modified Gram–Schmidt with respect to an arbitrary inner product.
/// Returns `None` if a vector is (numerically) dependent on its predecessors.
pub fn gram_schmidt<F>(vectors: &[CVector], inner: F) -> Option<Vec<CVector>>
where
    F: Fn(&CVector, &CVector) -> f64,
{
    let mut out: Vec<CVector> = Vec::with_capacity(vectors.len());
    for v in vectors {
        let scale = inner(v, v).sqrt();
        let mut w = v.clone();
        for q in &out {
            let c = inner(q, &w);
            w -= q * Complex64::new(c, 0.0);
        }
        let norm = inner(&w, &w).sqrt();
        if !(norm > 1e-12 * scale.max(f64::MIN_POSITIVE)) {
            return None;
        }
        out.push(w / Complex64::new(norm, 0.0));
    }
    Some(out)
}

/// Gram matrix `G_ab = inner(v_a, v_b)`.
pub fn gram<F>(vectors: &[CVector], inner: F) -> DMatrix<f64>
where
    F: Fn(&CVector, &CVector) -> f64,
{
    let k = vectors.len();
    DMatrix::from_fn(k, k, |a, b| inner(&vectors[a], &vectors[b]))
}

/// Orthogonal projection of `v` onto `span(frame)` with respect to `inner`;
/// returns the projection and its coefficients.
pub fn project<F>(frame: &[CVector], v: &CVector, inner: F) -> Option<(CVector, DVector<f64>)>
where
    F: Fn(&CVector, &CVector) -> f64,
{
    let g = gram(frame, &inner);
    let rhs = DVector::from_iterator(frame.len(), frame.iter().map(|f| inner(f, v)));
    let coeffs = g.lu().solve(&rhs)?;
    let mut p = CVector::zeros(v.len());
    for (f, c) in frame.iter().zip(coeffs.iter()) {
        p += f * Complex64::new(*c, 0.0);
    }
    Some((p, coeffs))
}

/// Wraps an angle into `[0, period)`.
pub fn wrap(angle: f64, period: f64) -> f64 {
    let r = angle.rem_euclid(period);
    if r >= period {
        0.0
    } else {
        r
    }
}

/// Signed distance of `angle` from 0 modulo `period`, in `(-period/2, period/2]`.
pub fn wrap_signed(angle: f64, period: f64) -> f64 {
    let r = wrap(angle, period);
    if r > 0.5 * period {
        r - period
    } else {
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pfaffian_expansion(a: &DMatrix<f64>) -> f64 {
        let n = a.nrows();
        if n == 0 {
            return 1.0;
        }
        let mut total = 0.0;
        for j in 1..n {
            let idx: Vec<usize> = (1..n).filter(|&k| k != j).collect();
            let minor = DMatrix::from_fn(n - 2, n - 2, |r, c| a[(idx[r], idx[c])]);
            let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
            total += sign * a[(0, j)] * pfaffian_expansion(&minor);
        }
        total
    }

    fn skew(n: usize, seed: u64) -> DMatrix<f64> {
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i + 1..n {
                let v = next();
                m[(i, j)] = v;
                m[(j, i)] = -v;
            }
        }
        m
    }

    #[test]
    fn pfaffian_matches_expansion() {
        for n in [2, 4, 6, 8] {
            let a = skew(n, n as u64);
            let p = pfaffian(&a);
            assert!((p - pfaffian_expansion(&a)).abs() < 1e-13, "n={n}");
            assert!((p * p - a.determinant()).abs() < 1e-12);
        }
    }

    #[test]
    fn pfaffian_of_standard_block() {
        let mut a = DMatrix::zeros(4, 4);
        a[(0, 1)] = 2.0;
        a[(1, 0)] = -2.0;
        a[(2, 3)] = 3.0;
        a[(3, 2)] = -3.0;
        assert!((pfaffian(&a) - 6.0).abs() < 1e-15);
    }

    #[test]
    fn null_space_of_wide_matrix() {
        let m = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 0.0]);
        let k = null_space(&m, 1e-12);
        assert_eq!(k.ncols(), 2);
        assert!((&m * &k).norm() < 1e-14);
    }

    #[test]
    fn wrap_is_in_range() {
        assert!((wrap(-0.1, 1.0) - 0.9).abs() < 1e-15);
        assert!((wrap_signed(0.9, 1.0) + 0.1).abs() < 1e-15);
    }
}
