//! Special functions and Bennett-type tail bounds.
//!
//! The central object is `h(x) = (1+x) ln(1+x) - x`, the exponent in
//! Bennett's inequality for Poisson variables. Its inverse on `[0, ∞)`
//! turns a log-probability budget into a deviation size and appears in
//! every rate and threshold of this crate. `gamma_rate` is the piecewise
//! surrogate `√x` / `x / ln(ex)` which matches `h⁻¹` up to constants.

use crate::error::{domain, Error, Result};

/// Stopping rules for the iterative solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToleranceConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_iter: usize,
}

impl ToleranceConfig {
    pub fn new(rel_tol: f64, abs_tol: f64, max_iter: usize) -> Result<Self> {
        if !(rel_tol > 0.0) || !(abs_tol > 0.0) || max_iter == 0 {
            return Err(domain(format!(
                "tolerance requires rel_tol > 0, abs_tol > 0, max_iter >= 1 (got {rel_tol}, {abs_tol}, {max_iter})"
            )));
        }
        Ok(Self {
            rel_tol,
            abs_tol,
            max_iter,
        })
    }
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-12,
            abs_tol: 1e-14,
            max_iter: 200,
        }
    }
}

/// Raw evaluation of h without the domain check. Uses the alternating
/// series near zero where the closed form cancels catastrophically.
pub(crate) fn h_raw(x: f64) -> f64 {
    if x == -1.0 {
        return 1.0;
    }
    if x.abs() < 0.1 {
        // h(x) = sum_{k>=2} (-1)^k x^k / (k (k-1))
        let mut sum = 0.0;
        let mut pow = x * x;
        for k in 2..80 {
            let kf = k as f64;
            let term = pow / (kf * (kf - 1.0));
            sum += if k % 2 == 0 { term } else { -term };
            if term.abs() <= 1e-18 * sum.abs() {
                break;
            }
            pow *= x;
        }
        return sum;
    }
    (1.0 + x) * x.ln_1p() - x
}

/// `h(x) = (1+x) ln(1+x) - x` for `x ≥ -1`, with `h(-1) = 1`.
pub fn h(x: f64) -> Result<f64> {
    if x.is_nan() || x < -1.0 {
        return Err(domain(format!("h requires x >= -1, got {x}")));
    }
    Ok(h_raw(x))
}

/// Inverse of `h` restricted to `[0, ∞)`.
///
/// Newton steps seeded by `gamma_rate(y)` inside a bisection bracket. The
/// returned `x` satisfies `|h(x) - y| ≤ rel_tol · y` or sits at floating
/// point resolution.
pub fn h_inverse(y: f64, tol: &ToleranceConfig) -> Result<f64> {
    if y.is_nan() || y < 0.0 || !y.is_finite() {
        return Err(domain(format!("h_inverse requires finite y >= 0, got {y}")));
    }
    if y == 0.0 {
        return Ok(0.0);
    }
    let mut hi = (2.0 * y.sqrt()).max(4.0 * y / (1.0 + y.max(1.0).ln()) + 2.0);
    while h_raw(hi) < y {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::Numeric(format!("h_inverse bracket overflow at y = {y}")));
        }
    }
    let mut lo = 0.0_f64;
    let mut x = gamma_seed(y).clamp(lo, hi);
    if x <= lo || x >= hi {
        x = 0.5 * (lo + hi);
    }
    for _ in 0..tol.max_iter {
        let f = h_raw(x) - y;
        if f.abs() <= tol.rel_tol * y {
            return Ok(x);
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            return Ok(x);
        }
        let slope = x.ln_1p();
        let newton = x - f / slope;
        x = if slope > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Err(Error::Numeric(format!(
        "h_inverse did not converge within {} iterations at y = {y}",
        tol.max_iter
    )))
}

/// `h_inverse` with the default tolerance.
pub fn h_inv(y: f64) -> Result<f64> {
    h_inverse(y, &ToleranceConfig::default())
}

fn gamma_seed(y: f64) -> f64 {
    if y <= 1.0 {
        y.sqrt()
    } else {
        y / (1.0 + y.ln())
    }
}

/// `Γ(x) = √x` for `x ≤ 1` and `x / ln(ex)` for `x > 1`.
pub fn gamma_rate(x: f64) -> Result<f64> {
    if x.is_nan() || x < 0.0 {
        return Err(domain(format!("gamma_rate requires x >= 0, got {x}")));
    }
    Ok(gamma_seed(x))
}

/// Principal branch of the Lambert W function on `[0, ∞)`.
///
/// Halley iteration from `ln(1+x)`, falling back to bisection on
/// `[0, ln(1+x)]`, which always contains the root.
pub fn lambert_w(x: f64, tol: &ToleranceConfig) -> Result<f64> {
    if x.is_nan() || x < 0.0 || !x.is_finite() {
        return Err(domain(format!("lambert_w requires finite x >= 0, got {x}")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    let target = tol.rel_tol * x.max(1.0);
    let mut lo = 0.0_f64;
    let mut hi = x.ln_1p();
    let mut w = hi;
    for _ in 0..tol.max_iter {
        let ew = w.exp();
        let f = w * ew - x;
        if f.abs() <= target {
            return Ok(w);
        }
        if f < 0.0 {
            lo = w;
        } else {
            hi = w;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            return Ok(w);
        }
        let wp1 = w + 1.0;
        let denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        let next = w - f / denom;
        w = if next > lo && next < hi {
            next
        } else {
            0.5 * (lo + hi)
        };
    }
    Err(Error::Numeric(format!(
        "lambert_w did not converge within {} iterations at x = {x}",
        tol.max_iter
    )))
}

fn check_rho_u(rho: f64, u: f64) -> Result<()> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(domain(format!("rho must be positive and finite, got {rho}")));
    }
    if u.is_nan() || u < 0.0 {
        return Err(domain(format!("u must be >= 0, got {u}")));
    }
    Ok(())
}

/// Bennett bound `exp(-ρ h(u))` on `P{Poisson(ρ) ≥ ρ(1+u)}`.
pub fn bennett_upper_tail_bound(rho: f64, u: f64) -> Result<f64> {
    check_rho_u(rho, u)?;
    Ok((-rho * h_raw(u)).exp().min(1.0))
}

/// Two-sided Bennett bound `min(1, 2 exp(-ρ h(u)))` on `P{|Y - ρ| ≥ ρu}`.
pub fn bennett_two_sided_bound(rho: f64, u: f64) -> Result<f64> {
    check_rho_u(rho, u)?;
    Ok((2.0 * (-rho * h_raw(u)).exp()).min(1.0))
}

/// Bennett bound `min(1, 2 exp(-nπ(1-π) h(u)))` for a Binomial(n, π) deviation.
pub fn binomial_bennett_bound(n: u64, pi: f64, u: f64) -> Result<f64> {
    if n == 0 {
        return Err(domain("binomial_bennett_bound requires n >= 1"));
    }
    if !(0.0..=1.0).contains(&pi) {
        return Err(domain(format!("pi must lie in [0, 1], got {pi}")));
    }
    if u.is_nan() || u < 0.0 {
        return Err(domain(format!("u must be >= 0, got {u}")));
    }
    let v = n as f64 * pi * (1.0 - pi);
    Ok((2.0 * (-v * h_raw(u)).exp()).min(1.0))
}

/// `ln(e j) = 1 + ln j` for a 1-based index.
#[inline]
pub fn log_ej(j: usize) -> f64 {
    1.0 + (j as f64).ln()
}
