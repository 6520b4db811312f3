//! Monte Carlo risk estimation and the sharp-constant sweeps.
//!
//! Trial `t` draws its null sample from stream `2t` and its alternative
//! sample from stream `2t + 1` of a ChaCha8 generator keyed by the seed, so
//! results do not depend on how rayon schedules the work.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::core_math::log_ej;
use crate::divergence::{exchangeable_bayes_risk, spike_tv_lattice, Certified, LATTICE_BINS};
use crate::error::{domain, Result};
use crate::model::{
    sample_multinomial_probs, sample_poisson_product, sample_poissonized_probs, stream_rng, CountVector, RateVector,
    SampleSize, SimplexVector,
};
use crate::priors::{MultinomialSharpPrior, MultinomialSimplexPrior, PoissonSpikePrior};
use crate::rates::{sharp_constant_epsilon, Regime};
use crate::testing::{
    multinomial_combined_test, poisson_max_test, sup_norm_threshold_test, MultinomialTestConfig, PoissonTestConfig,
};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Smallest trial count accepted by the estimators.
pub const MIN_TRIALS: u64 = 100;

/// Type I and Type II error estimates of one test against one alternative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub type1: f64,
    pub type2: f64,
    pub total: f64,
    pub trials: u64,
    pub seed: u64,
    /// Sum of the two Wilson 95% half-widths.
    pub ci_halfwidth: f64,
}

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

pub fn wilson_halfwidth(k: u64, n: u64) -> f64 {
    let (lo, hi) = wilson_interval(k, n, Z95);
    0.5 * (hi - lo)
}

fn count_events<F>(trials: u64, seed: u64, offset: u64, event: F) -> u64
where
    F: Fn(&mut ChaCha8Rng) -> bool + Sync,
{
    (0..trials)
        .into_par_iter()
        .map(|t| event(&mut stream_rng(seed, 2 * t + offset)) as u64)
        .sum()
}

/// Runs `reject_under_null` and `accept_under_alt` once per trial.
pub fn estimate_risk<F0, F1>(trials: u64, seed: u64, reject_under_null: F0, accept_under_alt: F1) -> Result<RiskEstimate>
where
    F0: Fn(&mut ChaCha8Rng) -> bool + Sync,
    F1: Fn(&mut ChaCha8Rng) -> bool + Sync,
{
    if trials < MIN_TRIALS {
        return Err(domain(format!("need at least {MIN_TRIALS} trials, got {trials}")));
    }
    let k1 = count_events(trials, seed, 0, reject_under_null);
    let k2 = count_events(trials, seed, 1, accept_under_alt);
    let nf = trials as f64;
    let (type1, type2) = (k1 as f64 / nf, k2 as f64 / nf);
    Ok(RiskEstimate {
        type1,
        type2,
        total: type1 + type2,
        trials,
        seed,
        ci_halfwidth: wilson_halfwidth(k1, trials) + wilson_halfwidth(k2, trials),
    })
}

/// A fixed Poisson alternative or a draw from the spike prior per trial.
#[derive(Debug, Clone, PartialEq)]
pub enum PoissonAlternative {
    Fixed(Vec<f64>),
    Spike(PoissonSpikePrior),
}

impl PoissonAlternative {
    fn rates(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            PoissonAlternative::Fixed(r) => r.clone(),
            PoissonAlternative::Spike(p) => p.draw(rng),
        }
    }
}

/// Risk of the max test with thresholds from `cfg`.
pub fn estimate_poisson_risk_with(
    mu: &RateVector,
    alt: &PoissonAlternative,
    cfg: &PoissonTestConfig,
    trials: u64,
    seed: u64,
) -> Result<RiskEstimate> {
    if let PoissonAlternative::Fixed(r) = alt {
        if r.len() != mu.len() {
            return Err(crate::error::Error::LengthMismatch {
                expected: mu.len(),
                got: r.len(),
            });
        }
    }
    let reject = |x: &CountVector| poisson_max_test(x, mu, cfg).map(|o| o.decision.is_reject()).unwrap_or(true);
    estimate_risk(
        trials,
        seed,
        |rng| reject(&sample_poisson_product(mu.as_slice(), rng).expect("valid rates")),
        |rng| {
            let lam = alt.rates(rng);
            !reject(&sample_poisson_product(&lam, rng).expect("valid rates"))
        },
    )
}

/// Risk of the max test calibrated at level `eta`.
pub fn estimate_poisson_risk(
    mu: &RateVector,
    alt: &PoissonAlternative,
    eta: f64,
    trials: u64,
    seed: u64,
) -> Result<RiskEstimate> {
    let cfg = PoissonTestConfig::calibrated(mu, eta)?;
    estimate_poisson_risk_with(mu, alt, &cfg, trials, seed)
}

/// How multinomial data are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Exactly `n` draws.
    Exact,
    /// Independent `Poi(n q(j))` counts.
    Poissonized,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MultinomialAlternative {
    Fixed(Vec<f64>),
    Simplex(MultinomialSimplexPrior),
    Sharp(MultinomialSharpPrior),
}

impl MultinomialAlternative {
    fn probs(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            MultinomialAlternative::Fixed(q) => q.clone(),
            MultinomialAlternative::Simplex(p) => p.draw(rng),
            MultinomialAlternative::Sharp(p) => p.draw(rng),
        }
    }
}

fn sample_counts(n: SampleSize, probs: &[f64], sampling: Sampling, rng: &mut ChaCha8Rng) -> CountVector {
    match sampling {
        Sampling::Exact => {
            sample_multinomial_probs(n.as_count().expect("integral n"), probs, rng).expect("valid probabilities")
        }
        Sampling::Poissonized => sample_poissonized_probs(n.value(), probs, rng).expect("valid probabilities"),
    }
}

/// Risk of the combined head/tail test with thresholds from `cfg`.
pub fn estimate_multinomial_risk_with(
    q0: &SimplexVector,
    n: SampleSize,
    alt: &MultinomialAlternative,
    cfg: &MultinomialTestConfig,
    sampling: Sampling,
    trials: u64,
    seed: u64,
) -> Result<RiskEstimate> {
    if sampling == Sampling::Exact {
        n.as_count()?;
    }
    if let MultinomialAlternative::Fixed(q) = alt {
        if q.len() != q0.len() {
            return Err(crate::error::Error::LengthMismatch {
                expected: q0.len(),
                got: q.len(),
            });
        }
        let s: f64 = q.iter().sum();
        if q.iter().any(|&v| v < 0.0) || (s - 1.0).abs() > 1e-9 {
            return Err(domain("alternative must lie in the simplex"));
        }
    }
    let reject = |x: &CountVector| {
        multinomial_combined_test(x, q0, cfg)
            .map(|o| o.decision.is_reject())
            .unwrap_or(true)
    };
    estimate_risk(
        trials,
        seed,
        |rng| reject(&sample_counts(n, q0.as_slice(), sampling, rng)),
        |rng| {
            let q = alt.probs(rng);
            !reject(&sample_counts(n, &q, sampling, rng))
        },
    )
}

/// Risk of the combined test calibrated at level `eta` and sample size `n`.
pub fn estimate_multinomial_risk(
    q0: &SimplexVector,
    n: SampleSize,
    alt: &MultinomialAlternative,
    eta: f64,
    sampling: Sampling,
    trials: u64,
    seed: u64,
) -> Result<RiskEstimate> {
    let cfg = MultinomialTestConfig::calibrated(q0, n, eta)?;
    estimate_multinomial_risk_with(q0, n, alt, &cfg, sampling, trials, seed)
}

/// Smallest grid value whose estimated total risk is at most `target`.
pub fn smallest_passing<F>(grid: &[f64], target: f64, mut eval: F) -> Result<Option<(f64, RiskEstimate)>>
where
    F: FnMut(f64) -> Result<RiskEstimate>,
{
    for &g in grid {
        let r = eval(g)?;
        if r.total <= target {
            return Ok(Some((g, r)));
        }
    }
    Ok(None)
}

// ---------------------------------------------------------------------------
// Sharp-constant sweeps

/// How `α_p` grows with the dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaRule {
    /// `α_p = ln p`.
    LogP,
    Constant(f64),
}

impl AlphaRule {
    pub fn alpha(self, p: usize) -> Result<f64> {
        let a = match self {
            AlphaRule::LogP => (p as f64).ln(),
            AlphaRule::Constant(a) => a,
        };
        if !(a > 1.0) {
            return Err(domain(format!("alpha_p must exceed 1, got {a} for p = {p}")));
        }
        Ok(a)
    }

    /// Parses `log-p` or a positive number.
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "log-p" | "logp" | "ln-p" => Ok(AlphaRule::LogP),
            other => other
                .parse::<f64>()
                .map(AlphaRule::Constant)
                .map_err(|_| crate::error::Error::Parse(format!("alpha rule '{s}' is neither 'log-p' nor a number"))),
        }
    }
}

/// One row of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub xi: f64,
    pub epsilon: f64,
    pub risk: RiskEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub xi_grid: Vec<f64>,
    pub epsilons: Vec<f64>,
    pub risks: Vec<RiskEstimate>,
    pub regime: Regime,
    pub p: usize,
    pub null_descriptor: String,
}

impl SweepResult {
    pub fn points(&self) -> impl Iterator<Item = SweepPoint> + '_ {
        self.xi_grid
            .iter()
            .zip(&self.epsilons)
            .zip(&self.risks)
            .map(|((&xi, &epsilon), &risk)| SweepPoint { xi, epsilon, risk })
    }
}

fn check_grid(xi_grid: &[f64]) -> Result<()> {
    if xi_grid.is_empty() {
        return Err(domain("xi grid must be non-empty"));
    }
    if xi_grid.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(domain("xi values must be positive and finite"));
    }
    if xi_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(domain("xi grid must be strictly increasing"));
    }
    Ok(())
}

/// Poisson sweep: for each `ξ`, the threshold test `‖X - μ‖∞ ≥ ε/ξ` against
/// a spike of size `ε` at a uniform coordinate among the first `j*`.
///
/// Every grid point reuses the same seed, so the curve is built from common
/// random numbers.
pub fn sweep_sharp_constant(
    mu: &RateVector,
    xi_grid: &[f64],
    alpha: AlphaRule,
    trials: u64,
    seed: u64,
) -> Result<SweepResult> {
    check_grid(xi_grid)?;
    let alpha_p = alpha.alpha(mu.len())?;
    let mut epsilons = Vec::with_capacity(xi_grid.len());
    let mut risks = Vec::with_capacity(xi_grid.len());
    let mut j_star = 1;
    for &xi in xi_grid {
        let sc = sharp_constant_epsilon(mu, alpha_p, xi)?;
        j_star = sc.j_star;
        let center = mu.as_slice();
        let jmax = sc.j_star;
        let eps = sc.epsilon;
        let thr = sc.threshold;
        let risk = estimate_risk(
            trials,
            seed,
            |rng| {
                let x = sample_poisson_product(center, rng).expect("valid rates");
                sup_norm_threshold_test(&x, center, thr).expect("matching lengths").decision.is_reject()
            },
            |rng| {
                use rand::Rng;
                let j = rng.random_range(0..jmax);
                let mut lam = center.to_vec();
                lam[j] += eps;
                let x = sample_poisson_product(&lam, rng).expect("valid rates");
                !sup_norm_threshold_test(&x, center, thr).expect("matching lengths").decision.is_reject()
            },
        )?;
        epsilons.push(eps);
        risks.push(risk);
    }
    let mu_j = mu.as_slice()[j_star - 1];
    Ok(SweepResult {
        xi_grid: xi_grid.to_vec(),
        epsilons,
        risks,
        regime: Regime::from_ratio(log_ej(j_star) / mu_j),
        p: mu.len(),
        null_descriptor: describe_rates(mu),
    })
}

/// Multinomial sweep: exact multinomial samples of size `n`, the test
/// `‖X - n q_0‖∞ ≥ n' ε/ξ`, and draws from the sharp-constant simplex prior.
pub fn sweep_multinomial_sharp_constant(
    q0: &SimplexVector,
    n: SampleSize,
    xi_grid: &[f64],
    alpha: AlphaRule,
    trials: u64,
    seed: u64,
) -> Result<SweepResult> {
    check_grid(xi_grid)?;
    let count = n.as_count()?;
    let alpha_p = alpha.alpha(q0.len())?;
    let center: Vec<f64> = q0.as_slice().iter().map(|&q| n.value() * q).collect();
    let mut epsilons = Vec::with_capacity(xi_grid.len());
    let mut risks = Vec::with_capacity(xi_grid.len());
    let mut regime = Regime::Boundary;
    for &xi in xi_grid {
        let prior = MultinomialSharpPrior::new(q0.clone(), n, alpha_p, xi)?;
        let thr = prior.n_prime * prior.epsilon / xi;
        regime = Regime::from_ratio(log_ej(prior.j_star) / (n.value() * q0.as_slice()[prior.j_star]));
        let risk = estimate_risk(
            trials,
            seed,
            |rng| {
                let x = sample_multinomial_probs(count, q0.as_slice(), rng).expect("valid probabilities");
                sup_norm_threshold_test(&x, &center, thr).expect("matching lengths").decision.is_reject()
            },
            |rng| {
                let q = prior.draw(rng);
                let x = sample_multinomial_probs(count, &q, rng).expect("valid probabilities");
                !sup_norm_threshold_test(&x, &center, thr).expect("matching lengths").decision.is_reject()
            },
        )?;
        epsilons.push(prior.epsilon);
        risks.push(risk);
    }
    Ok(SweepResult {
        xi_grid: xi_grid.to_vec(),
        epsilons,
        risks,
        regime,
        p: q0.len(),
        null_descriptor: describe_probs(q0, n),
    })
}

/// Largest `j*` handled by type enumeration; beyond it the spike lower
/// bound switches to the lattice bracket.
pub const ENUMERATION_MAX_K: usize = 32;

/// Exact Bayes risk of the flattened spike problem at separation `ε(ξ)`.
///
/// This is `1 - TV` between `Poi(μ_{j*})^{⊗j*}` and the uniform spike
/// mixture, a lower bound on the minimax risk of the original problem.
/// Small `j*` use type enumeration with pruning level `prune`; larger ones use
/// [`spike_tv_lattice`] with [`LATTICE_BINS`] cells.
pub fn poisson_sharp_lower_bound(mu: &RateVector, alpha: AlphaRule, xi: f64, prune: f64) -> Result<Certified> {
    let sc = sharp_constant_epsilon(mu, alpha.alpha(mu.len())?, xi)?;
    let mix = crate::divergence::ExchangeableMixture {
        k: sc.j_star,
        mu: mu.as_slice()[sc.j_star - 1],
        up: sc.epsilon,
        down: 0.0,
        m: 0,
    };
    if mix.k <= ENUMERATION_MAX_K {
        return exchangeable_bayes_risk(&mix, prune);
    }
    let tv = spike_tv_lattice(&mix, LATTICE_BINS)?;
    Ok(Certified {
        value: 1.0 - tv.value,
        error: tv.error,
    })
}

/// Exact Bayes risk of the flattened sharp-constant simplex problem at `n'`.
pub fn multinomial_sharp_lower_bound(
    q0: &SimplexVector,
    n: SampleSize,
    alpha: AlphaRule,
    xi: f64,
    prune: f64,
) -> Result<Certified> {
    let prior = MultinomialSharpPrior::new(q0.clone(), n, alpha.alpha(q0.len())?, xi)?;
    exchangeable_bayes_risk(&prior.flattened(), prune)
}

fn describe_rates(mu: &RateVector) -> String {
    let r = mu.as_slice();
    if r.iter().all(|&v| v == r[0]) {
        format!("poisson:p={},mu={}", r.len(), r[0])
    } else {
        format!("poisson:p={},mu_max={},mu_min={}", r.len(), r[0], r[r.len() - 1])
    }
}

fn describe_probs(q0: &SimplexVector, n: SampleSize) -> String {
    let q = q0.as_slice();
    if q.iter().all(|&v| v == q[0]) {
        format!("multinomial:p={},uniform,n={}", q.len(), n.value())
    } else {
        format!("multinomial:p={},n={}", q.len(), n.value())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_basics() {
        let (lo, hi) = wilson_interval(30, 100, Z95);
        assert!(lo < 0.3 && hi > 0.3);
        let (lo, hi) = wilson_interval(0, 100, Z95);
        assert!(lo.abs() < 1e-15);
        assert!(hi > 0.0 && hi < 0.05);
    }

    #[test]
    fn identical_alternative_has_total_near_one() {
        let mu = RateVector::constant(2.0, 5).unwrap();
        let alt = PoissonAlternative::Fixed(mu.as_slice().to_vec());
        let r = estimate_poisson_risk(&mu, &alt, 0.3, 4000, 11).unwrap();
        assert!((r.total - 1.0).abs() < r.ci_halfwidth + 0.01, "{r:?}");
    }

    #[test]
    fn deterministic_given_seed() {
        let q0 = SimplexVector::uniform(6).unwrap();
        let n = SampleSize::new(60.0).unwrap();
        let alt = MultinomialAlternative::Fixed(vec![0.3, 0.14, 0.14, 0.14, 0.14, 0.14]);
        let a = estimate_multinomial_risk(&q0, n, &alt, 0.2, Sampling::Exact, 500, 3).unwrap();
        let b = estimate_multinomial_risk(&q0, n, &alt, 0.2, Sampling::Exact, 500, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_few_trials() {
        let mu = RateVector::constant(1.0, 2).unwrap();
        let alt = PoissonAlternative::Fixed(vec![2.0, 1.0]);
        assert!(estimate_poisson_risk(&mu, &alt, 0.2, 10, 0).is_err());
    }

    #[test]
    fn alpha_rule_parsing() {
        assert_eq!(AlphaRule::parse("log-p").unwrap(), AlphaRule::LogP);
        assert_eq!(AlphaRule::parse("4.5").unwrap(), AlphaRule::Constant(4.5));
        assert!(AlphaRule::parse("fast").is_err());
        assert!(AlphaRule::LogP.alpha(2).is_err());
    }

    #[test]
    fn grid_must_increase() {
        let mu = RateVector::constant(1.0, 10).unwrap();
        assert!(sweep_sharp_constant(&mu, &[1.0, 0.5], AlphaRule::LogP, 100, 0).is_err());
    }
}
