//! Local separation rates, the critical index `j*`, perturbation sizes and
//! regime labels.
//!
//! All indices exposed here are 1-based, matching the way the rate
//! formulas weight coordinate `j` by `ln(ej) = 1 + ln j`.

use serde::{Deserialize, Serialize};

use crate::core_math::{gamma_rate, h_inv, log_ej};
use crate::error::{domain, Result};
use crate::model::{RateVector, SampleSize, SimplexVector};

/// Advisory label comparing `ln(e j*)` with the effective rate at `j*`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Subgaussian,
    Subpoissonian,
    Boundary,
}

impl Regime {
    /// Classifies by `ratio = ln(e j*) / rate_{j*}` against 1.
    pub fn from_ratio(ratio: f64) -> Self {
        if ratio < 1.0 {
            Regime::Subgaussian
        } else if ratio > 1.0 {
            Regime::Subpoissonian
        } else {
            Regime::Boundary
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Subgaussian => "subgaussian",
            Regime::Subpoissonian => "subpoissonian",
            Regime::Boundary => "boundary",
        }
    }
}

/// Quantities derived from a null.
///
/// For a multinomial null the terms index `q_0^{-max}`, i.e. original
/// categories `2..p`; a null with a single category has `j_star = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateProfile {
    pub epsilon_star: f64,
    pub j_star: usize,
    pub psi: f64,
    pub m: usize,
    pub regime: Regime,
    #[serde(rename = "terms")]
    pub per_coordinate_terms: Vec<f64>,
}

/// First maximiser (0-based) and the maximum.
pub(crate) fn argmax_first(values: &[f64]) -> (usize, f64) {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, &v) in values.iter().enumerate() {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    (best, best_val)
}

/// Poisson profile: `ε* = 1 + max_j μ_j Γ(ln(ej)/μ_j)` and
/// `j* = argmax_j μ_j h⁻¹(ln(ej)/μ_j)`.
pub fn poisson_rate(mu: &RateVector) -> Result<RateProfile> {
    let rates = mu.as_slice();
    let mut terms = Vec::with_capacity(rates.len());
    let mut gamma_max = 0.0_f64;
    for (i, &m) in rates.iter().enumerate() {
        let y = log_ej(i + 1) / m;
        terms.push(m * h_inv(y)?);
        gamma_max = gamma_max.max(m * gamma_rate(y)?);
    }
    let (idx, psi) = argmax_first(&terms);
    let j_star = idx + 1;
    Ok(RateProfile {
        epsilon_star: 1.0 + gamma_max,
        j_star,
        psi,
        m: 0,
        regime: Regime::from_ratio(log_ej(j_star) / rates[idx]),
        per_coordinate_terms: terms,
    })
}

/// `ψ = μ_{j*} h⁻¹(ln(C j*) / μ_{j*})` for a spike constant `C ≥ e`.
pub fn poisson_psi(mu: &RateVector, j_star: usize, c_const: f64) -> Result<f64> {
    if j_star == 0 || j_star > mu.len() {
        return Err(domain(format!("j* = {j_star} outside 1..={}", mu.len())));
    }
    if !(c_const >= std::f64::consts::E) {
        return Err(domain(format!("spike constant must be >= e, got {c_const}")));
    }
    let m = mu.as_slice()[j_star - 1];
    Ok(m * h_inv((c_const * j_star as f64).ln() / m)?)
}

/// Multinomial profile with `ψ` built from the constant `c_tilde ≥ e`.
///
/// `ε* = 1/n + √(q^max(1-q^max)/n) + max_j q^{-max}(j) Γ(ln(ej)/(n q^{-max}(j)))`;
/// `m = ⌈h⁻¹(ln(ej*)/ν)⌉ ∧ (j*-1)` and `ψ = ν h⁻¹(ln(C̃ j*)/ν) 1{m ≥ 1}`
/// with `ν = n q^{-max}(j*)`.
pub fn multinomial_rate(q0: &SimplexVector, n: SampleSize, c_tilde: f64) -> Result<RateProfile> {
    if !(c_tilde >= std::f64::consts::E) {
        return Err(domain(format!("C-tilde must be >= e, got {c_tilde}")));
    }
    let nn = n.value();
    let head = q0.head();
    let tail = q0.tail();
    let mut terms = Vec::with_capacity(tail.len());
    let mut third = 0.0_f64;
    for (i, &t) in tail.iter().enumerate() {
        if t == 0.0 {
            terms.push(0.0);
            continue;
        }
        let y = log_ej(i + 1) / (nn * t);
        terms.push(nn * t * h_inv(y)?);
        third = third.max(t * gamma_rate(y)?);
    }
    let epsilon_star = 1.0 / nn + (head * (1.0 - head) / nn).sqrt() + third;
    if terms.is_empty() {
        return Ok(RateProfile {
            epsilon_star,
            j_star: 0,
            psi: 0.0,
            m: 0,
            regime: Regime::Subgaussian,
            per_coordinate_terms: terms,
        });
    }
    let (idx, best) = argmax_first(&terms);
    let j_star = idx + 1;
    let nu = nn * tail[idx];
    if best == 0.0 || nu == 0.0 {
        return Ok(RateProfile {
            epsilon_star,
            j_star,
            psi: 0.0,
            m: 0,
            regime: Regime::Subpoissonian,
            per_coordinate_terms: terms,
        });
    }
    let m = multinomial_m(nu, j_star)?;
    let psi = if m >= 1 {
        nu * h_inv((c_tilde * j_star as f64).ln() / nu)?
    } else {
        0.0
    };
    Ok(RateProfile {
        epsilon_star,
        j_star,
        psi,
        m,
        regime: Regime::from_ratio(log_ej(j_star) / nu),
        per_coordinate_terms: terms,
    })
}

/// `m = ⌈h⁻¹(ln(ej*)/ν)⌉ ∧ (j* - 1)`.
pub fn multinomial_m(nu: f64, j_star: usize) -> Result<usize> {
    let raw = h_inv(log_ej(j_star) / nu)?.ceil();
    let cap = j_star.saturating_sub(1);
    Ok(if raw >= cap as f64 { cap } else { raw as usize })
}

/// The two halves `(ε₁, ε₂)` of the multinomial upper bound:
/// `ε₁ = 1/n + √(q^max(1-q^max)/n)` for the head test and
/// `ε₂ = 1/n + max_j v_j h⁻¹(ln(ej)/(n v_j))` with `v_j = q^{-max}(j)(1-q^{-max}(j))`.
pub fn multinomial_upper_split(q0: &SimplexVector, n: SampleSize) -> Result<(f64, f64)> {
    let nn = n.value();
    let head = q0.head();
    let eps1 = 1.0 / nn + (head * (1.0 - head) / nn).sqrt();
    let mut tail_max = 0.0_f64;
    for (i, &t) in q0.tail().iter().enumerate() {
        let v = t * (1.0 - t);
        if v > 0.0 {
            tail_max = tail_max.max(v * h_inv(log_ej(i + 1) / (nn * v))?);
        }
    }
    Ok((eps1, 1.0 / nn + tail_max))
}

/// Probability that the first `k` coordinates are all nonzero under the null,
/// `∏_{j≤k} (1 - e^{-μ_j})`.
pub fn prob_all_observed(mu: &RateVector, k: usize) -> Result<f64> {
    if k == 0 || k > mu.len() {
        return Err(domain(format!("k = {k} outside 1..={}", mu.len())));
    }
    Ok(mu.as_slice()[..k].iter().map(|&m| -(-m).exp_m1()).product())
}

/// `ln(e j α_p ln²(ej))`.
pub fn inflated_log(j: usize, alpha_p: f64) -> f64 {
    let l = log_ej(j);
    l + alpha_p.ln() + 2.0 * l.ln()
}

/// Result of the sharp-constant rate computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharpConstant {
    pub epsilon: f64,
    /// The `α_p`-inflated critical index (1-based).
    pub j_star: usize,
    /// Detection threshold `ε / ξ`.
    pub threshold: f64,
}

/// `ε = ξ max_j μ_j h⁻¹(ln(e j α_p ln²(ej)) / μ_j)`; requires every `μ_j ≥ 1`.
pub fn sharp_constant_epsilon(mu: &RateVector, alpha_p: f64, xi: f64) -> Result<SharpConstant> {
    if !(alpha_p > 1.0) {
        return Err(domain(format!("alpha_p must exceed 1, got {alpha_p}")));
    }
    if !(xi > 0.0) {
        return Err(domain(format!("xi must be positive, got {xi}")));
    }
    let rates = mu.as_slice();
    if rates[rates.len() - 1] < 1.0 {
        return Err(domain("sharp-constant rates require every mu_j >= 1"));
    }
    let mut terms = Vec::with_capacity(rates.len());
    for (i, &m) in rates.iter().enumerate() {
        terms.push(m * h_inv(inflated_log(i + 1, alpha_p) / m)?);
    }
    let (idx, best) = argmax_first(&terms);
    Ok(SharpConstant {
        epsilon: xi * best,
        j_star: idx + 1,
        threshold: best,
    })
}

/// Multinomial sharp-constant quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultinomialSharpConstant {
    /// Separation in probability units.
    pub epsilon: f64,
    /// The `α_p`-inflated critical index into `q_0^{-max}` (1-based).
    pub j_star: usize,
    /// `n' = (1 + n^{-1/3}) n`.
    pub n_prime: f64,
    /// Number of decreased coordinates, `(2 ∨ ⌈h⁻¹(ln(ej*)/(n' q^{-max}(j*)))⌉) ∧ (j* - 1)`.
    pub m: usize,
    /// Threshold in probability units, `ε / ξ`.
    pub threshold: f64,
}

/// `ε = ξ max_j v_j h⁻¹(ln(ej) / (n' v_j))` with `v_j = q^{-max}(j)(1 - q^{-max}(j))`.
pub fn multinomial_sharp_constant_epsilon(
    q0: &SimplexVector,
    n: SampleSize,
    alpha_p: f64,
    xi: f64,
) -> Result<MultinomialSharpConstant> {
    if !(alpha_p > 1.0) {
        return Err(domain(format!("alpha_p must exceed 1, got {alpha_p}")));
    }
    if !(xi > 0.0) {
        return Err(domain(format!("xi must be positive, got {xi}")));
    }
    let nn = n.value();
    let tail = q0.tail();
    if tail.is_empty() {
        return Err(domain("sharp-constant rates need at least two categories"));
    }
    if q0.as_slice()[q0.len() - 1] < 1.0 / nn {
        return Err(domain("sharp-constant rates require q0(p) >= 1/n"));
    }
    let n_prime = (1.0 + nn.powf(-1.0 / 3.0)) * nn;
    let mut inflated = Vec::with_capacity(tail.len());
    let mut best = 0.0_f64;
    for (i, &t) in tail.iter().enumerate() {
        let v = t * (1.0 - t);
        inflated.push(v * h_inv(inflated_log(i + 1, alpha_p) / (n_prime * v))?);
        best = best.max(v * h_inv(log_ej(i + 1) / (n_prime * v))?);
    }
    let (idx, _) = argmax_first(&inflated);
    let j_star = idx + 1;
    let raw = h_inv(log_ej(j_star) / (n_prime * tail[idx]))?.ceil().max(2.0);
    let cap = j_star - 1;
    let m = if raw >= cap as f64 { cap } else { raw as usize };
    Ok(MultinomialSharpConstant {
        epsilon: xi * best,
        j_star,
        n_prime,
        m,
        threshold: best,
    })
}
