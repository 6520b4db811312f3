//! Lower-bound constructions: two-point alternatives, the Poisson spike
//! prior, the multinomial simplex prior, and the flattening reduction.
//!
//! Draws are returned as plain vectors because a perturbation can break the
//! non-increasing order that `RateVector` and `SimplexVector` enforce.

use std::collections::BTreeMap;
use std::f64::consts::E;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::core_math::{h_inv, log_ej};
use crate::divergence::{
    poisson_cdf, spike_collision_term, tv_distance, Certified, ExchangeableMixture, FiniteProductDist,
    ProductMixture, DEFAULT_MASS_TOL,
};
use crate::error::{domain, invalid, Error, Result};
use crate::model::{stream_rng, RateVector, SampleSize, SimplexVector};
use crate::rates::{multinomial_rate, multinomial_sharp_constant_epsilon, poisson_psi, poisson_rate};

/// `μ' = μ + c e_1`.
pub fn poisson_two_point(mu: &RateVector, c: f64) -> Result<RateVector> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(domain(format!("c must be positive, got {c}")));
    }
    let mut r = mu.as_slice().to_vec();
    r[0] += c;
    RateVector::new(r)
}

/// `c_η = (1 - η)²`, which makes `1 - √c_η = η`.
pub fn two_point_constant(eta: f64) -> Result<f64> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(domain(format!("eta must lie in (0, 1), got {eta}")));
    }
    Ok((1.0 - eta) * (1.0 - eta))
}

// ---------------------------------------------------------------------------
// Poisson spike prior

/// `J ~ Unif{1..j*}`, `λ = μ + cψ e_J`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonSpikePrior {
    pub base: RateVector,
    pub j_star: usize,
    pub psi: f64,
    pub c: f64,
    pub c_const: f64,
}

impl PoissonSpikePrior {
    /// Uses the critical index of the null's rate profile.
    pub fn new(base: RateVector, c: f64, c_const: f64) -> Result<Self> {
        let j_star = poisson_rate(&base)?.j_star;
        Self::with_j_star(base, j_star, c, c_const)
    }

    pub fn with_j_star(base: RateVector, j_star: usize, c: f64, c_const: f64) -> Result<Self> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(domain(format!("c must be positive, got {c}")));
        }
        let psi = poisson_psi(&base, j_star, c_const)?;
        Ok(Self {
            base,
            j_star,
            psi,
            c,
            c_const,
        })
    }

    /// Size of the spike, `cψ`.
    pub fn magnitude(&self) -> f64 {
        self.c * self.psi
    }

    /// `μ_{j*}`.
    pub fn mu_jstar(&self) -> f64 {
        self.base.as_slice()[self.j_star - 1]
    }

    /// Spiked coordinate, 1-based.
    pub fn draw_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        rng.random_range(1..=self.j_star)
    }

    pub fn rates_for(&self, j: usize) -> Vec<f64> {
        let mut r = self.base.as_slice().to_vec();
        r[j - 1] += self.magnitude();
        r
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let j = self.draw_index(rng);
        self.rates_for(j)
    }

    /// `c max_j μ_j h⁻¹(ln(ej)/μ_j)`, the separation every draw attains.
    pub fn separation_floor(&self) -> Result<f64> {
        let prof = poisson_rate(&self.base)?;
        Ok(self.c * prof.psi)
    }

    /// Homoskedastic version on the first `j*` coordinates.
    pub fn flattened(&self) -> ExchangeableMixture {
        ExchangeableMixture {
            k: self.j_star,
            mu: self.mu_jstar(),
            up: self.magnitude(),
            down: 0.0,
            m: 0,
        }
    }

    /// Explicit mixture over all `j*` placements on the full coordinate set.
    pub fn to_mixture(&self, mass_tol: f64) -> Result<ProductMixture> {
        let comps: Vec<Vec<f64>> = (1..=self.j_star).map(|j| self.rates_for(j)).collect();
        ProductMixture::uniform_poisson(&comps, mass_tol)
    }
}

/// One draw from the spike prior, reproducible from `seed`.
pub fn draw_poisson_spike(prior: &PoissonSpikePrior, seed: u64) -> Vec<f64> {
    prior.draw(&mut stream_rng(seed, 0))
}

/// Exact conditional second moment of the flattened spike problem.
///
/// With `F = P{Poi(μ) ≤ μ+ψ}`, `G = P{Poi(μ+cψ) ≤ μ+ψ}` and
/// `H = e^{c²ψ²/μ} P{Poi((μ+cψ)²/μ) ≤ μ+ψ}`, the second moment of the
/// likelihood ratio restricted to `E` is
/// `(1 - 1/j*) F^{j*-2} G² + (1/j*) F^{j*-1} H`, and
/// `χ²(P̃_π ‖ P̃_μ) + 1 = P_μ(E) / P_π(E)² × that`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpikeConditional {
    pub p_null_event: f64,
    pub p_mixture_event: f64,
    pub chi_square: f64,
    /// `1 - ½√χ² - P_μ(Eᶜ) - P_π(Eᶜ)`, a lower bound on the Bayes risk.
    pub risk_lower_bound: f64,
}

pub fn spike_conditional(mu: f64, psi: f64, c: f64, j_star: usize) -> Result<SpikeConditional> {
    if j_star == 0 {
        return Err(domain("j* must be >= 1"));
    }
    let cap = mu + psi;
    let f = poisson_cdf(mu, cap);
    let g = poisson_cdf(mu + c * psi, cap);
    let hterm = spike_collision_term(mu, psi, c)?;
    let k = j_star as i32;
    let inv = 1.0 / j_star as f64;
    let second = if j_star == 1 {
        hterm
    } else {
        (1.0 - inv) * f.powi(k - 2) * g * g + inv * f.powi(k - 1) * hterm
    };
    let p_null_event = f.powi(k);
    let p_mixture_event = f.powi(k - 1) * g;
    if !(p_mixture_event > 0.0) {
        return Err(Error::EmptyEvent);
    }
    let chi_square = (p_null_event / (p_mixture_event * p_mixture_event) * second - 1.0).max(0.0);
    let risk_lower_bound = 1.0 - 0.5 * chi_square.sqrt() - (1.0 - p_null_event) - (1.0 - p_mixture_event);
    Ok(SpikeConditional {
        p_null_event,
        p_mixture_event,
        chi_square,
        risk_lower_bound,
    })
}

/// Largest `c` on the grid `{k/1000}` whose certified risk lower bound for the
/// flattened spike problem is at least `eta`.
pub fn certified_spike_c(mu_jstar: f64, psi: f64, j_star: usize, eta: f64) -> Result<Option<f64>> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(domain(format!("eta must lie in (0, 1), got {eta}")));
    }
    let mut best = None;
    for k in 1..=1000 {
        let c = k as f64 / 1000.0;
        if spike_conditional(mu_jstar, psi, c, j_star)?.risk_lower_bound >= eta {
            best = Some(c);
        } else if best.is_some() {
            break;
        }
    }
    Ok(best)
}

// ---------------------------------------------------------------------------
// Multinomial alternatives

/// `q_1 = (1 - 2c/n) q_0 + (2c/n) e_2`.
pub fn multinomial_one_over_n_alternative(q0: &SimplexVector, c_eta: f64, n: SampleSize) -> Result<Vec<f64>> {
    if q0.len() < 2 {
        return Err(domain("the 1/n alternative needs p >= 2"));
    }
    if !(c_eta > 0.0 && c_eta < 0.5) {
        return Err(domain(format!("c_eta must lie in (0, 1/2), got {c_eta}")));
    }
    let t = 2.0 * c_eta / n.value();
    if t >= 1.0 {
        return Err(domain("need 2 c_eta < n"));
    }
    let mut q: Vec<f64> = q0.as_slice().iter().map(|&v| (1.0 - t) * v).collect();
    q[1] += t;
    Ok(q)
}

/// `ε = q_0(1) ∧ √(q_0(1)(1 - q_0(1))/n)`.
pub fn parametric_epsilon(q0: &SimplexVector, n: SampleSize) -> f64 {
    let a = q0.head();
    a.min((a * (1.0 - a) / n.value()).sqrt())
}

/// Moves `cε` from the first cell to the others in proportion to their mass.
pub fn multinomial_parametric_alternative(q0: &SimplexVector, n: SampleSize, c_eta: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&c_eta) {
        return Err(domain(format!("c_eta must lie in [0, 1], got {c_eta}")));
    }
    let eps = parametric_epsilon(q0, n);
    let a = q0.head();
    let shift = c_eta * eps;
    if shift == 0.0 {
        return Ok(q0.as_slice().to_vec());
    }
    let mut q: Vec<f64> = q0.as_slice().iter().map(|&v| v * (1.0 + shift / (1.0 - a))).collect();
    q[0] = a - shift;
    Ok(q)
}

/// `exp(n c² ε² / (q_0(1)(1 - q_0(1)))) - 1`, the Poissonised χ² of the
/// parametric alternative.
pub fn parametric_chi_square(q0: &SimplexVector, n: SampleSize, c_eta: f64) -> f64 {
    let a = q0.head();
    let v = a * (1.0 - a);
    if v == 0.0 {
        return 0.0;
    }
    let eps = parametric_epsilon(q0, n);
    (n.value() * c_eta * c_eta * eps * eps / v).exp_m1()
}

// ---------------------------------------------------------------------------
// Multinomial simplex prior

/// `J ~ Unif{2..j*+1}`, `𝓘` a uniform `m`-subset of the rest; adds `cψ/n`
/// at `J` and removes `cψ/(nm)` from each cell of `𝓘`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultinomialSimplexPrior {
    pub base: SimplexVector,
    pub n: SampleSize,
    pub j_star: usize,
    pub psi: f64,
    pub m: usize,
    pub c: f64,
    pub c_tilde: f64,
}

/// One draw with its random indices (1-based categories).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexDraw {
    pub q: Vec<f64>,
    pub j: usize,
    pub subset: Vec<usize>,
}

/// `0.9 m / h⁻¹(ln(C̃ j*)/ν)`: keeps `cψ/(nm) ≤ ν/n` with a 10% margin.
pub fn certified_simplex_c(nu: f64, j_star: usize, m: usize, c_tilde: f64) -> Result<f64> {
    if m == 0 {
        return Ok(1.0);
    }
    let x = h_inv((c_tilde * j_star as f64).ln() / nu)?;
    Ok((0.9 * m as f64 / x).min(1.0))
}

impl MultinomialSimplexPrior {
    pub fn new(base: SimplexVector, n: SampleSize, c: f64, c_tilde: f64) -> Result<Self> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(domain(format!("c must be positive, got {c}")));
        }
        let prof = multinomial_rate(&base, n, c_tilde)?;
        let prior = Self {
            base,
            n,
            j_star: prof.j_star,
            psi: prof.psi,
            m: prof.m,
            c,
            c_tilde,
        };
        prior.check_feasible()?;
        Ok(prior)
    }

    /// Uses the per-instance certified constant.
    pub fn certified(base: SimplexVector, n: SampleSize, c_tilde: f64) -> Result<Self> {
        let prof = multinomial_rate(&base, n, c_tilde)?;
        let c = if prof.m == 0 {
            1.0
        } else {
            certified_simplex_c(n.value() * base.as_slice()[prof.j_star], prof.j_star, prof.m, c_tilde)?
        };
        Self::new(base, n, c, c_tilde)
    }

    /// `ν = n q_0(j*+1)`.
    pub fn nu(&self) -> f64 {
        if self.j_star == 0 {
            return 0.0;
        }
        self.n.value() * self.base.as_slice()[self.j_star]
    }

    /// `cψ/n`, or 0 when `m = 0`.
    pub fn magnitude(&self) -> f64 {
        if self.m == 0 {
            0.0
        } else {
            self.c * self.psi / self.n.value()
        }
    }

    fn check_feasible(&self) -> Result<()> {
        if self.m == 0 {
            return Ok(());
        }
        let removed = self.magnitude() / self.m as f64;
        let floor = self.base.as_slice()[self.j_star];
        if removed > floor * (1.0 + 1e-12) {
            return Err(invalid(format!(
                "c = {} removes {removed} per cell but q0(j*+1) = {floor}",
                self.c
            )));
        }
        Ok(())
    }

    pub fn draw_with_indices<R: Rng + ?Sized>(&self, rng: &mut R) -> SimplexDraw {
        let mut q = self.base.as_slice().to_vec();
        if self.m == 0 {
            return SimplexDraw {
                q,
                j: 0,
                subset: Vec::new(),
            };
        }
        let j = rng.random_range(2..=self.j_star + 1);
        let mut pool: Vec<usize> = (2..=self.j_star + 1).filter(|&i| i != j).collect();
        // Partial Fisher–Yates: the first m slots become a uniform m-subset.
        for i in 0..self.m {
            let k = rng.random_range(i..pool.len());
            pool.swap(i, k);
        }
        pool.truncate(self.m);
        let add = self.magnitude();
        let remove = add / self.m as f64;
        q[j - 1] += add;
        for &i in &pool {
            q[i - 1] -= remove;
        }
        SimplexDraw { q, j, subset: pool }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.draw_with_indices(rng).q
    }

    /// Homoskedastic version on categories `2..j*+1`.
    pub fn flattened(&self) -> ExchangeableMixture {
        let up = self.c * self.psi;
        ExchangeableMixture {
            k: self.j_star,
            mu: self.nu(),
            up: if self.m == 0 { 0.0 } else { up },
            down: if self.m == 0 { 0.0 } else { up / self.m as f64 },
            m: self.m,
        }
    }
}

pub fn draw_multinomial_simplex_prior(prior: &MultinomialSimplexPrior, seed: u64) -> Vec<f64> {
    prior.draw(&mut stream_rng(seed, 0))
}

/// The simplex prior of the sharp-constant construction at effective sample
/// size `n'`: adds `ε` at `J` and removes `ε/m` from `m ≥ 2` other cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultinomialSharpPrior {
    pub base: SimplexVector,
    pub n: SampleSize,
    pub epsilon: f64,
    pub j_star: usize,
    pub m: usize,
    pub n_prime: f64,
}

impl MultinomialSharpPrior {
    pub fn new(base: SimplexVector, n: SampleSize, alpha_p: f64, xi: f64) -> Result<Self> {
        let sc = multinomial_sharp_constant_epsilon(&base, n, alpha_p, xi)?;
        if sc.m == 0 {
            return Err(invalid("sharp-constant prior needs j* >= 2"));
        }
        let floor = base.as_slice()[sc.j_star];
        if sc.epsilon / sc.m as f64 > floor {
            return Err(invalid(format!(
                "perturbation {} per cell exceeds q0(j*+1) = {floor}",
                sc.epsilon / sc.m as f64
            )));
        }
        Ok(Self {
            base,
            n,
            epsilon: sc.epsilon,
            j_star: sc.j_star,
            m: sc.m,
            n_prime: sc.n_prime,
        })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut q = self.base.as_slice().to_vec();
        let j = rng.random_range(2..=self.j_star + 1);
        let mut pool: Vec<usize> = (2..=self.j_star + 1).filter(|&i| i != j).collect();
        for i in 0..self.m {
            let k = rng.random_range(i..pool.len());
            pool.swap(i, k);
        }
        q[j - 1] += self.epsilon;
        let remove = self.epsilon / self.m as f64;
        for &i in &pool[..self.m] {
            q[i - 1] -= remove;
        }
        q
    }

    /// Flattened problem at sample size `n'`.
    pub fn flattened(&self) -> ExchangeableMixture {
        let up = self.n_prime * self.epsilon;
        ExchangeableMixture {
            k: self.j_star,
            mu: self.n_prime * self.base.as_slice()[self.j_star],
            up,
            down: up / self.m as f64,
            m: self.m,
        }
    }
}

// ---------------------------------------------------------------------------
// Flattening

/// Both sides of the flattening inequality, as enumerable laws.
#[derive(Debug, Clone, PartialEq)]
pub struct FlattenedPair {
    pub null: FiniteProductDist,
    pub mixture: ProductMixture,
    pub flat_null: FiniteProductDist,
    pub flat_mixture: ProductMixture,
    /// Remaining coordinates `k+1..p`; `None` when `k = p`.
    pub rest: Option<(FiniteProductDist, ProductMixture)>,
}

/// Builds the flattened pair for `⊗Poi(ω)` against the finite mixture
/// `Σ w_i ⊗Poi(ξ_i)`, after checking that every shifted mean
/// `ξ_j - ω_j + ω̲` (`j ≤ k`) is non-negative and that the first `k`
/// coordinates of `ξ` are independent of the rest.
pub fn flatten_poisson_pair(
    omega: &[f64],
    prior: &[(f64, Vec<f64>)],
    k: usize,
    underline_omega: f64,
    mass_tol: f64,
) -> Result<FlattenedPair> {
    let p = omega.len();
    if p == 0 || k == 0 || k > p {
        return Err(domain(format!("k = {k} outside 1..={p}")));
    }
    if omega.windows(2).any(|w| w[0] < w[1]) || omega.iter().any(|&w| !(w >= 0.0)) {
        return Err(invalid("omega must be non-negative and non-increasing"));
    }
    if !(underline_omega >= 0.0) || underline_omega > omega[k - 1] {
        return Err(Error::Flattening(format!(
            "underline omega {underline_omega} must lie in [0, omega_k = {}]",
            omega[k - 1]
        )));
    }
    if prior.is_empty() {
        return Err(invalid("prior needs at least one atom"));
    }
    for (w, xi) in prior {
        if xi.len() != p {
            return Err(Error::LengthMismatch { expected: p, got: xi.len() });
        }
        if !(*w >= 0.0) || xi.iter().any(|&v| !(v >= 0.0)) {
            return Err(invalid("prior weights and rates must be non-negative"));
        }
        for j in 0..k {
            let shifted = xi[j] - omega[j] + underline_omega;
            if shifted < -1e-12 {
                return Err(Error::Flattening(format!(
                    "shifted mean at coordinate {} is {shifted} < 0",
                    j + 1
                )));
            }
        }
    }
    check_block_independence(prior, k)?;

    let null = FiniteProductDist::poisson(omega, mass_tol)?;
    let mixture = weighted_mixture(prior.iter().map(|(w, xi)| (*w, xi.clone())), mass_tol)?;
    let flat_null = FiniteProductDist::poisson(&vec![underline_omega; k], mass_tol)?;
    let flat_mixture = weighted_mixture(
        prior.iter().map(|(w, xi)| {
            let r = (0..k).map(|j| (xi[j] - omega[j] + underline_omega).max(0.0)).collect();
            (*w, r)
        }),
        mass_tol,
    )?;
    let rest = if k < p {
        Some((
            FiniteProductDist::poisson(&omega[k..], mass_tol)?,
            weighted_mixture(prior.iter().map(|(w, xi)| (*w, xi[k..].to_vec())), mass_tol)?,
        ))
    } else {
        None
    };
    Ok(FlattenedPair {
        null,
        mixture,
        flat_null,
        flat_mixture,
        rest,
    })
}

fn key(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

/// Atoms with equal rate vectors are merged before building the mixture.
fn weighted_mixture(atoms: impl Iterator<Item = (f64, Vec<f64>)>, mass_tol: f64) -> Result<ProductMixture> {
    let mut merged: BTreeMap<Vec<u64>, (f64, Vec<f64>)> = BTreeMap::new();
    let mut total = 0.0;
    for (w, r) in atoms {
        total += w;
        merged.entry(key(&r)).or_insert((0.0, r)).0 += w;
    }
    let comps = merged
        .into_values()
        .filter(|(w, _)| *w > 0.0)
        .map(|(w, r)| Ok((w / total, FiniteProductDist::poisson(&r, mass_tol)?)))
        .collect::<Result<Vec<_>>>()?;
    ProductMixture::new(comps)
}

fn check_block_independence(prior: &[(f64, Vec<f64>)], k: usize) -> Result<()> {
    let total: f64 = prior.iter().map(|(w, _)| w).sum();
    let mut joint: BTreeMap<(Vec<u64>, Vec<u64>), f64> = BTreeMap::new();
    let mut head: BTreeMap<Vec<u64>, f64> = BTreeMap::new();
    let mut tail: BTreeMap<Vec<u64>, f64> = BTreeMap::new();
    for (w, xi) in prior {
        let (a, b) = (key(&xi[..k]), key(&xi[k..]));
        *joint.entry((a.clone(), b.clone())).or_insert(0.0) += w / total;
        *head.entry(a).or_insert(0.0) += w / total;
        *tail.entry(b).or_insert(0.0) += w / total;
    }
    for (a, pa) in &head {
        for (b, pb) in &tail {
            let pj = joint.get(&(a.clone(), b.clone())).copied().unwrap_or(0.0);
            if (pj - pa * pb).abs() > 1e-12 {
                return Err(Error::Flattening(
                    "the first k coordinates of the prior are not independent of the rest".into(),
                ));
            }
        }
    }
    Ok(())
}

/// Left and right sides of the flattening inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlatteningCheck {
    pub lhs: Certified,
    pub rhs: Certified,
}

impl FlatteningCheck {
    /// `lhs ≤ rhs + slack`, using the enumeration error bars.
    pub fn holds(&self, slack: f64) -> bool {
        self.lhs.lower() <= self.rhs.upper() + slack
    }
}

pub fn verify_flattening(pair: &FlattenedPair) -> Result<FlatteningCheck> {
    let lhs = tv_distance(&pair.null, &pair.mixture)?;
    let mut rhs = tv_distance(&pair.flat_null, &pair.flat_mixture)?;
    if let Some((n, m)) = &pair.rest {
        let r = tv_distance(n, m)?;
        rhs.value += r.value;
        rhs.error += r.error;
    }
    Ok(FlatteningCheck { lhs, rhs })
}

/// Flattening check for a spike prior, with the default truncation.
pub fn verify_spike_flattening(prior: &PoissonSpikePrior) -> Result<FlatteningCheck> {
    let atoms: Vec<(f64, Vec<f64>)> = (1..=prior.j_star).map(|j| (1.0, prior.rates_for(j))).collect();
    let pair = flatten_poisson_pair(
        prior.base.as_slice(),
        &atoms,
        prior.j_star,
        prior.mu_jstar(),
        DEFAULT_MASS_TOL,
    )?;
    verify_flattening(&pair)
}

/// The lower-bound separation `c max_j μ_j h⁻¹(ln(ej)/μ_j)` with `c = 1`.
pub fn spike_support_radius(mu: &RateVector) -> Result<f64> {
    let mut best = 0.0_f64;
    for (i, &m) in mu.as_slice().iter().enumerate() {
        best = best.max(m * h_inv(log_ej(i + 1) / m)?);
    }
    Ok(best)
}

/// Default spike constant.
pub const SPIKE_CONSTANT: f64 = E;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_examples() {
        let mu = RateVector::new(vec![1.0, 1.0]).unwrap();
        assert_eq!(poisson_two_point(&mu, 0.25).unwrap().as_slice(), &[1.25, 1.0]);
        assert_eq!(two_point_constant(0.5).unwrap(), 0.25);
    }

    #[test]
    fn spike_draws() {
        let mu = RateVector::new(vec![3.0, 2.0, 1.0]).unwrap();
        let prior = PoissonSpikePrior::with_j_star(mu.clone(), 1, 0.5, E).unwrap();
        let lam = draw_poisson_spike(&prior, 7);
        assert_eq!(lam[0], 3.0 + prior.magnitude());
        let prior = PoissonSpikePrior::new(mu, 0.5, E).unwrap();
        let mut rng = stream_rng(1, 0);
        for _ in 0..100 {
            let lam = prior.draw(&mut rng);
            let dev = lam.iter().zip(prior.base.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!((dev - prior.magnitude()).abs() <= 1e-12 * prior.magnitude());
        }
        assert_eq!(draw_poisson_spike(&prior, 3), draw_poisson_spike(&prior, 3));
    }

    #[test]
    fn one_over_n_example() {
        let q0 = SimplexVector::uniform(2).unwrap();
        let q1 = multinomial_one_over_n_alternative(&q0, 0.25, SampleSize::new(10.0).unwrap()).unwrap();
        assert!((q1[0] - 0.475).abs() < 1e-15 && (q1[1] - 0.525).abs() < 1e-15);
        assert!((q1.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(multinomial_one_over_n_alternative(&SimplexVector::uniform(1).unwrap(), 0.25, SampleSize::new(10.0).unwrap()).is_err());
    }

    #[test]
    fn parametric_example() {
        let q0 = SimplexVector::uniform(2).unwrap();
        let n = SampleSize::new(100.0).unwrap();
        let q1 = multinomial_parametric_alternative(&q0, n, 1.0).unwrap();
        assert!((q1[0] - 0.45).abs() < 1e-15 && (q1[1] - 0.55).abs() < 1e-15);
        assert_eq!(multinomial_parametric_alternative(&q0, n, 0.0).unwrap(), q0.as_slice());
        assert!(parametric_chi_square(&q0, n, 1.0) <= E - 1.0 + 1e-12);
    }

    #[test]
    fn simplex_prior_draws() {
        let q0 = SimplexVector::uniform(40).unwrap();
        let n = SampleSize::new(10.0).unwrap();
        let prior = MultinomialSimplexPrior::certified(q0, n, E).unwrap();
        assert!(prior.m >= 1);
        let mut rng = stream_rng(5, 1);
        for _ in 0..1000 {
            let d = prior.draw_with_indices(&mut rng);
            assert!((d.q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(d.q.iter().all(|&v| v >= 0.0));
            assert_eq!(d.q[0], prior.base.head());
            assert!(!d.subset.contains(&d.j));
            assert_eq!(d.subset.len(), prior.m);
        }
    }

    #[test]
    fn point_mass_prior_flattens_to_zero() {
        let omega = [2.0, 1.5, 1.0];
        let pair = flatten_poisson_pair(&omega, &[(1.0, omega.to_vec())], 2, 1.0, 1e-12).unwrap();
        let chk = verify_flattening(&pair).unwrap();
        assert!(chk.lhs.value < 1e-12 && chk.rhs.value < 1e-12);
    }

    #[test]
    fn flattening_rejects_negative_shift() {
        let omega = [2.0, 1.0];
        let err = flatten_poisson_pair(&omega, &[(1.0, vec![0.5, 1.0])], 2, 1.0, 1e-12).unwrap_err();
        assert!(matches!(err, Error::Flattening(_)));
    }

    #[test]
    fn spike_flattening_small() {
        let mu = RateVector::new(vec![2.0, 1.0]).unwrap();
        let prior = PoissonSpikePrior::with_j_star(mu, 2, 0.1, E).unwrap();
        let chk = verify_spike_flattening(&prior).unwrap();
        assert!(chk.holds(1e-9), "{chk:?}");
    }

    #[test]
    fn conditional_moment_is_certified_by_exact_tv() {
        let mu = RateVector::constant(1.0, 4).unwrap();
        let prior = PoissonSpikePrior::new(mu, 0.3, E).unwrap();
        let sc = spike_conditional(1.0, prior.psi, 0.3, prior.j_star).unwrap();
        let flat = prior.flattened();
        let tv = tv_distance(&flat.null(1e-13).unwrap(), &flat.to_mixture(1e-13).unwrap()).unwrap();
        assert!(1.0 - tv.upper() >= sc.risk_lower_bound - 1e-9);
    }
}
