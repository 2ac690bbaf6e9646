//! The Stenzel Kähler potential and the forms it induces on the quadric.
//!
//! With `U(t) = u(cosh t)` the potential solves `d/dt (U′)ⁿ = c·n·sinhⁿ⁻¹ t`.
//! We tabulate
//!
//! * `G(t) = (U′)ⁿ = c·n ∫₀ᵗ sinhⁿ⁻¹ s ds`, and
//! * `D(t) = c·sinhⁿ t − G(t)·cosh t = −∫₀ᵗ sinh(s) G(s) ds`,
//!
//! on a grid, and evaluate between nodes with a 15-point Kronrod correction
//! over the partial cell. Both integrands are non-negative, so `u′ = G^{1/n}/sinh t`
//! and `u″ = u′·D/(G sinh² t)` are obtained without the cancellation that the
//! textbook expression `(U″ sinh t − U′ cosh t)/sinh³ t` suffers near `t = 0`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SlagError};
use crate::linalg::{CVector, Complex64};
use crate::quadric::QuadricPoint;
use crate::quadrature::{integrate, kronrod15};
use crate::special::{cosh_minus_sinhc_over_sq, SERIES_THRESHOLD};

/// Below this geodesic parameter `u′`, `u″` come from their series in `r² − 1`.
pub const U_SERIES_THRESHOLD: f64 = 1e-4;

const DEFAULT_GRID_SPACING: f64 = 0.01;

#[derive(Clone, Debug)]
pub struct PotentialTable {
    n: usize,
    c: f64,
    t_max: f64,
    tol: f64,
    t_grid: Vec<f64>,
    g: Vec<f64>,
    d: Vec<f64>,
    omega_sign: f64,
}

/// Cache document for a potential table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PotentialDocument {
    pub n: usize,
    pub c: f64,
    pub t_max: f64,
    pub tol: f64,
    pub t_grid: Vec<f64>,
    pub u_prime: Vec<f64>,
}

pub fn default_grid_size(t_max: f64) -> usize {
    ((t_max / DEFAULT_GRID_SPACING).ceil() as usize).max(1) + 1
}

pub fn build_potential(n: usize, c: f64, t_max: f64, tol: f64) -> Result<PotentialTable> {
    build_potential_with_grid(n, c, t_max, tol, default_grid_size(t_max))
}

pub fn build_potential_with_grid(
    n: usize,
    c: f64,
    t_max: f64,
    tol: f64,
    grid_size: usize,
) -> Result<PotentialTable> {
    if n == 0 {
        return Err(SlagError::Precondition("dimension n must be at least 1".into()));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(SlagError::Precondition(format!("ODE constant c must be positive, got {c}")));
    }
    if !(t_max > 0.0 && t_max.is_finite()) {
        return Err(SlagError::Precondition(format!("t_max must be positive, got {t_max}")));
    }
    if !(tol > 0.0) {
        return Err(SlagError::Precondition(format!("tolerance must be positive, got {tol}")));
    }
    if grid_size < 2 {
        return Err(SlagError::Precondition("grid needs at least two nodes".into()));
    }
    check_range(n, c, t_max)?;
    let t_grid: Vec<f64> = (0..grid_size)
        .map(|k| t_max * k as f64 / (grid_size - 1) as f64)
        .collect();
    let cn = c * n as f64;
    let power = n as i32 - 1;
    let mut g = Vec::with_capacity(grid_size);
    g.push(0.0);
    for w in t_grid.windows(2) {
        let cell = integrate(|s: f64| s.sinh().powi(power), w[0], w[1], tol / cn)?;
        let prev = *g.last().expect("seeded");
        g.push(prev + cn * cell);
    }
    let d = accumulate_defect(n, c, &t_grid, &g, tol)?;
    let mut table = PotentialTable { n, c, t_max, tol, t_grid, g, d, omega_sign: 1.0 };
    table.omega_sign = table.calibrate_sign()?;
    Ok(table)
}

fn check_range(n: usize, c: f64, t_max: f64) -> Result<()> {
    // D grows like c·e^{n t}; keep a wide margin below f64::MAX.
    let log_scale = n as f64 * t_max + c.ln().max(0.0) + (n as f64).ln();
    if log_scale > 600.0 {
        return Err(SlagError::Range(format!(
            "t_max = {t_max} overflows the potential table for n = {n}"
        )));
    }
    Ok(())
}

fn accumulate_defect(n: usize, c: f64, t_grid: &[f64], g: &[f64], tol: f64) -> Result<Vec<f64>> {
    let cn = c * n as f64;
    let power = n as i32 - 1;
    let mut d = Vec::with_capacity(t_grid.len());
    d.push(0.0);
    for k in 1..t_grid.len() {
        let (lo, hi) = (t_grid[k - 1], t_grid[k]);
        let cross = cosh_difference(hi, lo);
        let cell = integrate(
            |r: f64| r.sinh().powi(power) * cosh_difference(hi, r),
            lo,
            hi,
            tol / cn,
        )?;
        d.push(d[k - 1] - g[k - 1] * cross - cn * cell);
    }
    Ok(d)
}

/// `cosh a − cosh b` without cancellation.
fn cosh_difference(a: f64, b: f64) -> f64 {
    2.0 * (0.5 * (a + b)).sinh() * (0.5 * (a - b)).sinh()
}

/// Coefficients of `u′(1 + s) / c^{1/n}` in powers of `s = r² − 1`.
fn u_series(n: usize) -> [f64; 4] {
    let n = n as f64;
    [
        1.0,
        -1.0 / (n + 2.0),
        (n * n + 3.0 * n + 8.0) / (2.0 * (n + 2.0).powi(2) * (n + 4.0)),
        -(2.0 * n.powi(4) + 11.0 * n.powi(3) + 61.0 * n * n + 106.0 * n + 144.0)
            / (6.0 * (n + 2.0).powi(3) * (n + 4.0) * (n + 6.0)),
    ]
}

/// `u′`, `u″` evaluated at a point of the quadric.
#[derive(Clone, Debug)]
pub struct KahlerEval {
    pub base: QuadricPoint,
    pub u_prime: f64,
    pub u_double_prime: f64,
    sign: f64,
}

impl KahlerEval {
    /// `Σᵢⱼ hᵢⱼ vᵢ w̄ⱼ` with `hᵢⱼ = u″ z̄ᵢ zⱼ + u′ δᵢⱼ`.
    fn hermitian(&self, v: &CVector, w: &CVector) -> Complex64 {
        let z = self.base.z();
        let zbar_v: Complex64 = z.iter().zip(v.iter()).map(|(a, b)| a.conj() * b).sum();
        let z_wbar: Complex64 = z.iter().zip(w.iter()).map(|(a, b)| a * b.conj()).sum();
        let vw: Complex64 = v.iter().zip(w.iter()).map(|(a, b)| a * b.conj()).sum();
        zbar_v * z_wbar * self.u_double_prime + vw * self.u_prime
    }

    pub fn omega(&self, v: &CVector, w: &CVector) -> f64 {
        -2.0 * self.sign * self.hermitian(v, w).im
    }

    /// `g(v, w) = ω(v, Iw)`.
    pub fn metric(&self, v: &CVector, w: &CVector) -> f64 {
        // ω(v, i·w) = −2σ Im(−i H(v,w)) = 2σ Re H(v,w)
        2.0 * self.sign * self.hermitian(v, w).re
    }

    pub fn sign(&self) -> f64 {
        self.sign
    }
}

impl PotentialTable {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn t_grid(&self) -> &[f64] {
        &self.t_grid
    }

    /// Global sign σ of `ω = σ·i∂∂̄u`, fixed so that `g = ω(·, I·)` is positive.
    pub fn omega_sign(&self) -> f64 {
        self.omega_sign
    }

    fn cell(&self, t: f64) -> Result<usize> {
        if !(t >= 0.0) {
            return Err(SlagError::Domain(format!("negative geodesic parameter {t}")));
        }
        if t > self.t_max * (1.0 + 1e-14) {
            return Err(SlagError::Range(format!(
                "t = {t} exceeds the tabulated range t_max = {}",
                self.t_max
            )));
        }
        let k = self.t_grid.partition_point(|&x| x <= t);
        Ok(k.saturating_sub(1).min(self.t_grid.len() - 2))
    }

    /// `(G(t), D(t))`, see the module documentation.
    fn integrals(&self, t: f64) -> Result<(f64, f64)> {
        let k = self.cell(t)?;
        let lo = self.t_grid[k];
        if t == lo {
            return Ok((self.g[k], self.d[k]));
        }
        let cn = self.c * self.n as f64;
        let power = self.n as i32 - 1;
        let (a, _) = kronrod15(&|r: f64| r.sinh().powi(power), lo, t);
        let (b, _) = kronrod15(&|r: f64| r.sinh().powi(power) * cosh_difference(t, r), lo, t);
        let g = self.g[k] + cn * a;
        let d = self.d[k] - self.g[k] * cosh_difference(t, lo) - cn * b;
        Ok((g, d))
    }

    /// `U′(t)`.
    pub fn u_prime_t(&self, t: f64) -> Result<f64> {
        let (g, _) = self.integrals(t)?;
        Ok(g.powf(1.0 / self.n as f64))
    }

    /// `U″(t)`, recovered from the ODE as `c·sinhⁿ⁻¹ t / (U′)ⁿ⁻¹`.
    pub fn u_double_prime_t(&self, t: f64) -> Result<f64> {
        if t == 0.0 {
            return Ok(self.c.powf(1.0 / self.n as f64));
        }
        let up = self.u_prime_t(t)?;
        let nm1 = self.n as i32 - 1;
        Ok(self.c * (t.sinh() / up).powi(nm1))
    }

    /// `(u′(r²), u″(r²))` for `r² ≥ 1`.
    pub fn u_derivatives(&self, r2: f64) -> Result<(f64, f64)> {
        if !(r2 >= 1.0) {
            // rounding can push points on the zero section a hair below 1
            if r2 > 1.0 - 1e-12 {
                return self.u_derivatives(1.0);
            }
            return Err(SlagError::Domain(format!("r^2 = {r2} < 1 is not on the quadric")));
        }
        let t = r2.acosh();
        if t > self.t_max * (1.0 + 1e-14) {
            return Err(SlagError::Range(format!(
                "arccosh(r^2) = {t} exceeds t_max = {}",
                self.t_max
            )));
        }
        if t < U_SERIES_THRESHOLD {
            return Ok(self.u_derivatives_series(r2 - 1.0));
        }
        let (g, d) = self.integrals(t)?;
        let sh = t.sinh();
        let up = g.powf(1.0 / self.n as f64) / sh;
        let upp = up * d / (g * sh * sh);
        Ok((up, upp))
    }

    pub(crate) fn u_derivatives_series(&self, s: f64) -> (f64, f64) {
        let a = u_series(self.n);
        let scale = self.c.powf(1.0 / self.n as f64);
        let up = scale * (a[0] + s * (a[1] + s * (a[2] + s * a[3])));
        let upp = scale * (a[1] + s * (2.0 * a[2] + s * 3.0 * a[3]));
        (up, upp)
    }

    /// The table-route value at small `t`, bypassing the series switch.
    #[cfg(test)]
    pub(crate) fn u_derivatives_table(&self, t: f64) -> Result<(f64, f64)> {
        let (g, d) = self.integrals(t)?;
        let sh = t.sinh();
        let up = g.powf(1.0 / self.n as f64) / sh;
        Ok((up, up * d / (g * sh * sh)))
    }

    pub fn kahler_eval(&self, z: &QuadricPoint) -> Result<KahlerEval> {
        let (u_prime, u_double_prime) = self.u_derivatives(z.r2())?;
        Ok(KahlerEval { base: z.clone(), u_prime, u_double_prime, sign: self.omega_sign })
    }

    pub fn kahler_form(&self, z: &QuadricPoint, v: &CVector, w: &CVector) -> Result<f64> {
        Ok(self.kahler_eval(z)?.omega(v, w))
    }

    pub fn metric(&self, z: &QuadricPoint, v: &CVector, w: &CVector) -> Result<f64> {
        Ok(self.kahler_eval(z)?.metric(v, w))
    }

    /// `𝒦(s) = u′(cosh 2s)·sinh(2s)/s`, i.e. `U′(2s)/s`.
    pub fn k_factor(&self, norm_xi: f64) -> Result<f64> {
        if !(norm_xi >= 0.0) {
            return Err(SlagError::Domain(format!("negative fiber norm {norm_xi}")));
        }
        let n = self.n as f64;
        if norm_xi < SERIES_THRESHOLD {
            let scale = self.c.powf(1.0 / n);
            let s2 = norm_xi * norm_xi;
            return Ok(2.0 * scale * (1.0 + 2.0 * (n - 1.0) / (3.0 * (n + 2.0)) * s2));
        }
        Ok(self.u_prime_t(2.0 * norm_xi)? / norm_xi)
    }

    fn calibrate_sign(&self) -> Result<f64> {
        let probe = crate::quadric::probe_point(self.n);
        let basis = crate::quadric::tangent_basis(&probe);
        let (up, upp) = self.u_derivatives(probe.r2())?;
        let eval = KahlerEval { base: probe, u_prime: up, u_double_prime: upp, sign: 1.0 };
        let v = &basis.vectors()[0];
        Ok(if eval.metric(v, v) > 0.0 { 1.0 } else { -1.0 })
    }

    pub fn to_document(&self) -> PotentialDocument {
        let inv_n = 1.0 / self.n as f64;
        PotentialDocument {
            n: self.n,
            c: self.c,
            t_max: self.t_max,
            tol: self.tol,
            t_grid: self.t_grid.clone(),
            u_prime: self.g.iter().map(|g| g.powf(inv_n)).collect(),
        }
    }

    pub fn from_document(doc: &PotentialDocument) -> Result<PotentialTable> {
        if doc.t_grid.len() != doc.u_prime.len() || doc.t_grid.len() < 2 {
            return Err(SlagError::Config("t_grid and u_prime must have equal length >= 2".into()));
        }
        if doc.n == 0 || !(doc.c > 0.0) || !(doc.tol > 0.0) {
            return Err(SlagError::Config("invalid n, c or tol in potential document".into()));
        }
        if doc.t_grid[0] != 0.0 || doc.t_grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(SlagError::Config("t_grid must start at 0 and increase strictly".into()));
        }
        check_range(doc.n, doc.c, doc.t_max)?;
        let g: Vec<f64> = doc.u_prime.iter().map(|u| u.powi(doc.n as i32)).collect();
        let d = accumulate_defect(doc.n, doc.c, &doc.t_grid, &g, doc.tol)?;
        let mut table = PotentialTable {
            n: doc.n,
            c: doc.c,
            t_max: *doc.t_grid.last().expect("len >= 2"),
            tol: doc.tol,
            t_grid: doc.t_grid.clone(),
            g,
            d,
            omega_sign: 1.0,
        };
        table.omega_sign = table.calibrate_sign()?;
        Ok(table)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<PotentialTable> {
        let doc: PotentialDocument = serde_json::from_str(text)?;
        PotentialTable::from_document(&doc)
    }

    pub fn shared(self) -> Arc<PotentialTable> {
        Arc::new(self)
    }
}

/// `ℱ(s) = cosh s − sinh(s)/s`.
pub fn f_factor(norm_xi: f64) -> f64 {
    norm_xi * norm_xi * cosh_minus_sinhc_over_sq(norm_xi)
}

/// Free-function form of [`PotentialTable::u_derivatives`].
pub fn u_derivatives(table: &PotentialTable, r2: f64) -> Result<(f64, f64)> {
    table.u_derivatives(r2)
}

/// Free-function form of [`PotentialTable::k_factor`].
pub fn k_factor(table: &PotentialTable, norm_xi: f64) -> Result<f64> {
    table.k_factor(norm_xi)
}
