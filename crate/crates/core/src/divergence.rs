//! Exact divergences between discrete product laws and finite mixtures of
//! them, computed by enumeration over truncated supports.
//!
//! Every enumerated quantity comes with an error bar that accounts for the
//! probability mass discarded by truncation, so comparisons can be made
//! against `value + error`.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::core_math::h;
use crate::error::{domain, invalid, Error, Result};

/// Default cap on the number of support points visited by one enumeration.
pub const ATOM_BUDGET: f64 = 1e7;

/// Default total truncation mass for Poisson product tables.
pub const DEFAULT_MASS_TOL: f64 = 1e-12;

/// A value together with a bound on its enumeration error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certified {
    pub value: f64,
    pub error: f64,
}

impl Certified {
    pub fn upper(&self) -> f64 {
        self.value + self.error
    }

    pub fn lower(&self) -> f64 {
        self.value - self.error
    }
}

// ---------------------------------------------------------------------------
// Scalar Poisson quantities

/// `ln P{Poi(λ) = k}`.
pub fn poisson_ln_pmf(lambda: f64, k: u64) -> f64 {
    if lambda == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    let kf = k as f64;
    -lambda + kf * lambda.ln() - ln_gamma(kf + 1.0)
}

/// Pmf values on `{0..=kmax}`, anchored at the mode and extended by the
/// ratio recurrence in both directions.
fn poisson_pmf_range(lambda: f64, kmax: usize) -> Vec<f64> {
    let mut p = vec![0.0; kmax + 1];
    if lambda == 0.0 {
        p[0] = 1.0;
        return p;
    }
    let mode = (lambda.floor() as usize).min(kmax);
    p[mode] = poisson_ln_pmf(lambda, mode as u64).exp();
    for k in mode..kmax {
        p[k + 1] = p[k] * lambda / (k + 1) as f64;
    }
    for k in (1..=mode).rev() {
        p[k - 1] = p[k] * k as f64 / lambda;
    }
    p
}

fn safe_kmax(lambda: f64) -> usize {
    (lambda + 40.0 * lambda.sqrt() + 60.0).ceil() as usize
}

/// `ln P{Poi(λ) ≤ x}`; summed directly in whichever tail is smaller.
pub fn poisson_ln_cdf(lambda: f64, x: f64) -> f64 {
    if x < 0.0 {
        return f64::NEG_INFINITY;
    }
    if lambda == 0.0 || x >= 1e15 {
        return 0.0;
    }
    let k = x.floor() as u64;
    if (k as f64) < lambda {
        let anchor = poisson_ln_pmf(lambda, k);
        let (mut term, mut sum) = (1.0_f64, 1.0_f64);
        for i in (1..=k).rev() {
            term *= i as f64 / lambda;
            sum += term;
            if term < 1e-17 * sum {
                break;
            }
        }
        anchor + sum.ln()
    } else {
        (-poisson_ln_sf(lambda, k + 1).exp()).ln_1p()
    }
}

/// `ln P{Poi(λ) ≥ k}`.
pub fn poisson_ln_sf(lambda: f64, k: u64) -> f64 {
    if k == 0 {
        return 0.0;
    }
    if lambda == 0.0 {
        return f64::NEG_INFINITY;
    }
    if (k as f64) > lambda {
        let anchor = poisson_ln_pmf(lambda, k);
        let (mut term, mut sum) = (1.0_f64, 1.0_f64);
        let mut i = k;
        loop {
            term *= lambda / (i + 1) as f64;
            sum += term;
            i += 1;
            if term < 1e-17 * sum {
                break;
            }
        }
        anchor + sum.ln()
    } else {
        (-poisson_ln_cdf(lambda, (k - 1) as f64).exp()).ln_1p()
    }
}

pub fn poisson_cdf(lambda: f64, x: f64) -> f64 {
    poisson_ln_cdf(lambda, x).exp()
}

/// `P{Poi(λ) ≥ k}`.
pub fn poisson_sf(lambda: f64, k: u64) -> f64 {
    poisson_ln_sf(lambda, k).exp()
}

// ---------------------------------------------------------------------------
// Finite pmf tables

/// A pmf on `{0..len}` together with the mass lying beyond the table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pmf {
    pub probs: Vec<f64>,
    pub deficit: f64,
}

impl Pmf {
    pub fn new(probs: Vec<f64>, deficit: f64) -> Result<Self> {
        if probs.is_empty() {
            return Err(invalid("pmf table must be non-empty"));
        }
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) || !(deficit >= 0.0) {
            return Err(invalid("pmf entries must be finite and non-negative"));
        }
        Ok(Self { probs, deficit })
    }

    pub fn point_mass(k: usize) -> Self {
        let mut probs = vec![0.0; k + 1];
        probs[k] = 1.0;
        Self { probs, deficit: 0.0 }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn get(&self, k: usize) -> f64 {
        self.probs.get(k).copied().unwrap_or(0.0)
    }

    /// Tabulated mass at or below `x`; includes the deficit when `x` is infinite.
    pub fn cdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        if x.is_infinite() {
            return self.probs.iter().sum::<f64>() + self.deficit;
        }
        let k = x.floor() as usize;
        self.probs.iter().take(k.saturating_add(1)).sum()
    }
}

/// Poisson table on `{0..=K}` with `K` minimal such that the discarded upper
/// tail is at most `mass_tol`.
pub fn truncated_poisson_pmf(lambda: f64, mass_tol: f64) -> Result<Pmf> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(domain(format!("Poisson mean must be finite and >= 0, got {lambda}")));
    }
    if !(mass_tol > 0.0 && mass_tol < 1.0) {
        return Err(domain(format!("mass_tol must lie in (0, 1), got {mass_tol}")));
    }
    if lambda == 0.0 {
        return Ok(Pmf::point_mass(0));
    }
    let full = poisson_pmf_range(lambda, safe_kmax(lambda));
    let mut tail = 0.0;
    let mut cut = full.len();
    // Walk down from the top while the discarded tail stays within budget.
    while cut > 1 && tail + full[cut - 1] <= mass_tol {
        tail += full[cut - 1];
        cut -= 1;
    }
    Ok(Pmf {
        probs: full[..cut].to_vec(),
        deficit: tail,
    })
}

/// Poisson table on the fixed support `{0..=kmax}`.
pub fn poisson_pmf_on(lambda: f64, kmax: usize) -> Result<Pmf> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(domain(format!("Poisson mean must be finite and >= 0, got {lambda}")));
    }
    let probs = poisson_pmf_range(lambda, kmax);
    let deficit = if lambda == 0.0 { 0.0 } else { poisson_sf(lambda, kmax as u64 + 1) };
    Ok(Pmf { probs, deficit })
}

// ---------------------------------------------------------------------------
// Products and mixtures

/// Independent coordinates, each described by a finite pmf table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteProductDist {
    pub coords: Vec<Pmf>,
    pub truncation_deficit: f64,
}

impl FiniteProductDist {
    pub fn new(coords: Vec<Pmf>) -> Self {
        let truncation_deficit = coords.iter().map(|c| c.deficit).sum();
        Self {
            coords,
            truncation_deficit,
        }
    }

    /// `⊗ Poi(rates_j)` with `mass_tol` split evenly across coordinates.
    pub fn poisson(rates: &[f64], mass_tol: f64) -> Result<Self> {
        if rates.is_empty() {
            return Err(invalid("product needs at least one coordinate"));
        }
        let per = mass_tol / rates.len() as f64;
        let coords = rates
            .iter()
            .map(|&r| truncated_poisson_pmf(r, per))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(coords))
    }

    /// `⊗ Poi(rates_j)` on the box `∏ {0..=kmax_j}`.
    pub fn poisson_on(rates: &[f64], kmax: &[usize]) -> Result<Self> {
        if rates.len() != kmax.len() {
            return Err(Error::LengthMismatch {
                expected: rates.len(),
                got: kmax.len(),
            });
        }
        let coords = rates
            .iter()
            .zip(kmax)
            .map(|(&r, &k)| poisson_pmf_on(r, k))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(coords))
    }

    pub fn atoms(&self) -> f64 {
        self.coords.iter().map(|c| c.len() as f64).product()
    }
}

/// A finite mixture `Σ w_i P_i` of product laws on a common dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductMixture {
    pub components: Vec<(f64, FiniteProductDist)>,
}

impl ProductMixture {
    pub fn new(components: Vec<(f64, FiniteProductDist)>) -> Result<Self> {
        let Some(first) = components.first() else {
            return Err(invalid("mixture needs at least one component"));
        };
        let dim = first.1.coords.len();
        let mut total = 0.0;
        for (w, d) in &components {
            if !(*w >= 0.0) {
                return Err(invalid("mixture weights must be non-negative"));
            }
            if d.coords.len() != dim {
                return Err(Error::LengthMismatch {
                    expected: dim,
                    got: d.coords.len(),
                });
            }
            total += w;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("mixture weights sum to {total}")));
        }
        Ok(Self { components })
    }

    /// Uniform mixture of Poisson products.
    pub fn uniform_poisson(rate_vectors: &[Vec<f64>], mass_tol: f64) -> Result<Self> {
        if rate_vectors.is_empty() {
            return Err(invalid("mixture needs at least one component"));
        }
        let w = 1.0 / rate_vectors.len() as f64;
        let comps = rate_vectors
            .iter()
            .map(|r| Ok((w, FiniteProductDist::poisson(r, mass_tol)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(comps)
    }
}

impl From<FiniteProductDist> for ProductMixture {
    fn from(d: FiniteProductDist) -> Self {
        Self {
            components: vec![(1.0, d)],
        }
    }
}

/// A law on `N^d` that can be evaluated pointwise over a finite box.
pub trait DiscreteLaw {
    fn dim(&self) -> usize;
    /// Table length per coordinate; the law puts no tabulated mass outside.
    fn shape(&self) -> Vec<usize>;
    fn prob(&self, x: &[usize]) -> f64;
    /// Total mass not represented by the tables.
    fn deficit(&self) -> f64;
}

impl DiscreteLaw for FiniteProductDist {
    fn dim(&self) -> usize {
        self.coords.len()
    }

    fn shape(&self) -> Vec<usize> {
        self.coords.iter().map(Pmf::len).collect()
    }

    fn prob(&self, x: &[usize]) -> f64 {
        self.coords.iter().zip(x).map(|(c, &k)| c.get(k)).product()
    }

    fn deficit(&self) -> f64 {
        self.truncation_deficit
    }
}

impl DiscreteLaw for ProductMixture {
    fn dim(&self) -> usize {
        self.components[0].1.dim()
    }

    fn shape(&self) -> Vec<usize> {
        let mut s = vec![0; self.dim()];
        for (_, d) in &self.components {
            for (a, b) in s.iter_mut().zip(d.shape()) {
                *a = (*a).max(b);
            }
        }
        s
    }

    fn prob(&self, x: &[usize]) -> f64 {
        self.components.iter().map(|(w, d)| w * d.prob(x)).sum()
    }

    fn deficit(&self) -> f64 {
        self.components.iter().map(|(w, d)| w * d.deficit()).sum()
    }
}

/// Visits every point of the union box of `p` and `q`.
fn enumerate_pair<P, Q, F>(p: &P, q: &Q, budget: f64, mut f: F) -> Result<()>
where
    P: DiscreteLaw + ?Sized,
    Q: DiscreteLaw + ?Sized,
    F: FnMut(f64, f64),
{
    if p.dim() != q.dim() {
        return Err(Error::LengthMismatch {
            expected: p.dim(),
            got: q.dim(),
        });
    }
    let shape: Vec<usize> = p.shape().into_iter().zip(q.shape()).map(|(a, b)| a.max(b)).collect();
    let atoms: f64 = shape.iter().map(|&s| s as f64).product();
    if atoms > budget {
        return Err(Error::AtomBudget { atoms, budget });
    }
    let mut x = vec![0usize; shape.len()];
    loop {
        f(p.prob(&x), q.prob(&x));
        let mut i = 0;
        loop {
            if i == x.len() {
                return Ok(());
            }
            x[i] += 1;
            if x[i] < shape[i] {
                break;
            }
            x[i] = 0;
            i += 1;
        }
    }
}

/// `½ Σ |p - q|` over the union support; the error bar is the total
/// truncation deficit of both laws.
pub fn tv_distance<P, Q>(p: &P, q: &Q) -> Result<Certified>
where
    P: DiscreteLaw + ?Sized,
    Q: DiscreteLaw + ?Sized,
{
    let mut acc = 0.0;
    enumerate_pair(p, q, ATOM_BUDGET, |a, b| acc += (a - b).abs())?;
    Ok(Certified {
        value: (0.5 * acc).min(1.0),
        error: p.deficit() + q.deficit(),
    })
}

/// `√(Σ (√p - √q)²)`.
pub fn hellinger_distance<P, Q>(p: &P, q: &Q) -> Result<Certified>
where
    P: DiscreteLaw + ?Sized,
    Q: DiscreteLaw + ?Sized,
{
    let mut acc = 0.0;
    enumerate_pair(p, q, ATOM_BUDGET, |a, b| {
        let d = a.sqrt() - b.sqrt();
        acc += d * d;
    })?;
    let value = acc.min(2.0).sqrt();
    let slack = p.deficit() + q.deficit();
    Ok(Certified {
        value,
        error: (acc + slack).min(2.0).sqrt() - value,
    })
}

/// `χ²(p ‖ q) = Σ p²/q - 1` over the union box; infinite when `p` charges a
/// point that `q` does not.
pub fn chi_square_enumerated<P, Q>(p: &P, q: &Q) -> Result<Certified>
where
    P: DiscreteLaw + ?Sized,
    Q: DiscreteLaw + ?Sized,
{
    let mut acc = 0.0;
    let mut singular = false;
    enumerate_pair(p, q, ATOM_BUDGET, |a, b| {
        if b > 0.0 {
            acc += a * a / b;
        } else if a > 0.0 {
            singular = true;
        }
    })?;
    let value = if singular { f64::INFINITY } else { (acc - 1.0).max(0.0) };
    Ok(Certified {
        value,
        error: p.deficit() + q.deficit(),
    })
}

/// `χ²(⊗Poi(a) ‖ ⊗Poi(b)) = exp(Σ (a_j - b_j)²/b_j) - 1`.
pub fn chi_square_poisson_products(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let mut s = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        if !(x >= 0.0 && y >= 0.0) {
            return Err(domain("Poisson rates must be non-negative"));
        }
        if x == y {
            continue;
        }
        if y == 0.0 {
            return Err(domain("reference rate is zero where the other rate is positive"));
        }
        s += (x - y) * (x - y) / y;
    }
    Ok(s.exp_m1())
}

/// `χ²(⊗Poi(a) ‖ ⊗Poi(b))` by summing `p²/q` over each coordinate's support
/// in log space, with the range sized so that the tilted law `Poi(a²/b)` is
/// captured to `mass_tol`. The joint sum factorises over coordinates.
pub fn chi_square_poisson_enumerated(a: &[f64], b: &[f64], mass_tol: f64) -> Result<Certified> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let per = mass_tol / a.len().max(1) as f64;
    let mut second = 1.0;
    for (&x, &y) in a.iter().zip(b) {
        if !(x >= 0.0 && y >= 0.0) {
            return Err(domain("Poisson rates must be non-negative"));
        }
        if y == 0.0 {
            if x > 0.0 {
                return Ok(Certified {
                    value: f64::INFINITY,
                    error: 0.0,
                });
            }
            continue;
        }
        let kmax = truncated_poisson_pmf(x.max(y).max(x * x / y), per)?.len();
        let mut s = 0.0;
        for k in 0..kmax as u64 {
            s += (2.0 * poisson_ln_pmf(x, k) - poisson_ln_pmf(y, k)).exp();
        }
        second *= s;
    }
    Ok(Certified {
        value: (second - 1.0).max(0.0),
        error: mass_tol * second,
    })
}

// ---------------------------------------------------------------------------
// Conditioning on a capped maximum

fn truncate_pmf(pmf: &Pmf, bound: f64) -> (Pmf, f64) {
    if bound.is_infinite() {
        return (pmf.clone(), pmf.cdf(bound));
    }
    if bound < 0.0 {
        return (
            Pmf {
                probs: vec![0.0],
                deficit: 0.0,
            },
            0.0,
        );
    }
    let k = (bound.floor() as usize).min(pmf.len() - 1);
    let probs = pmf.probs[..=k].to_vec();
    let deficit = if k + 1 >= pmf.len() && (bound.floor() as usize) >= pmf.len() {
        pmf.deficit
    } else {
        0.0
    };
    let mass = probs.iter().sum::<f64>() + deficit;
    (Pmf { probs, deficit }, mass)
}

/// Restricts a product law to `E = {max_j X_j - center ≤ cap}` and
/// renormalises. Returns the conditioned law and `P(E)`.
pub fn condition_on_max_event(dist: &FiniteProductDist, center: f64, cap: f64) -> Result<(FiniteProductDist, f64)> {
    let bound = center + cap;
    let mut coords = Vec::with_capacity(dist.coords.len());
    let mut pe = 1.0;
    for c in &dist.coords {
        let (t, m) = truncate_pmf(c, bound);
        pe *= m;
        coords.push(t);
    }
    if !(pe > 0.0) {
        return Err(Error::EmptyEvent);
    }
    let scale = pe.powf(1.0 / coords.len() as f64);
    for c in &mut coords {
        for p in &mut c.probs {
            *p /= scale;
        }
        c.deficit /= scale;
    }
    Ok((FiniteProductDist::new(coords), pe))
}

/// Mixture version: each component is conditioned and reweighted by its
/// share of `P(E)`.
pub fn condition_mixture_on_max_event(mix: &ProductMixture, center: f64, cap: f64) -> Result<(ProductMixture, f64)> {
    let mut parts = Vec::with_capacity(mix.components.len());
    let mut pe = 0.0;
    for (w, d) in &mix.components {
        match condition_on_max_event(d, center, cap) {
            Ok((c, m)) => {
                pe += w * m;
                parts.push((w * m, Some(c)));
            }
            Err(Error::EmptyEvent) => parts.push((0.0, None)),
            Err(e) => return Err(e),
        }
    }
    if !(pe > 0.0) {
        return Err(Error::EmptyEvent);
    }
    let components = parts
        .into_iter()
        .filter_map(|(w, c)| c.map(|c| (w / pe, c)))
        .collect();
    Ok((ProductMixture { components }, pe))
}

// ---------------------------------------------------------------------------
// Conditional second-moment evaluators

/// `e^{c²ψ²/μ} P{Poi((μ + cψ)²/μ) ≤ μ + ψ}`, computed in log space.
pub fn spike_collision_term(mu: f64, psi: f64, c: f64) -> Result<f64> {
    if !(mu > 0.0 && psi >= 0.0 && c >= 0.0) {
        return Err(domain("need mu > 0, psi >= 0, c >= 0"));
    }
    let shift = c * psi;
    let lam = (mu + shift) * (mu + shift) / mu;
    Ok((shift * shift / mu + poisson_ln_cdf(lam, mu + psi)).exp())
}

/// `(1 - 1/j*) + (1/j*) e^{c²ψ²/μ} P{Poi((μ + cψ)²/μ) ≤ μ + ψ}`.
pub fn poisson_conditional_chisq_bound(mu_jstar: f64, psi: f64, c: f64, j_star: usize) -> Result<f64> {
    if j_star == 0 {
        return Err(domain("j* must be >= 1"));
    }
    let inv = 1.0 / j_star as f64;
    Ok((1.0 - inv) + inv * spike_collision_term(mu_jstar, psi, c)?)
}

/// Bennett-cancelled majorant of [`spike_collision_term`],
/// `exp(-ν h(ξ/ν) + 2ν(1 + ξ/ν) ln(1 + cξ/ν))`; available when `c²ξ > ν`.
pub fn bennett_cancelled_term(nu: f64, xi: f64, c: f64) -> Option<f64> {
    if !(nu > 0.0 && xi > 0.0 && c > 0.0) || c * c * xi <= nu {
        return None;
    }
    let r = xi / nu;
    let hv = h(r).ok()?;
    Some((-nu * hv + 2.0 * nu * (1.0 + r) * (c * r).ln_1p()).exp())
}

/// The spike bound with the collision term replaced by its Bennett majorant.
pub fn poisson_conditional_chisq_bound_cancelled(mu_jstar: f64, psi: f64, c: f64, j_star: usize) -> Option<f64> {
    if j_star == 0 {
        return None;
    }
    let inv = 1.0 / j_star as f64;
    bennett_cancelled_term(mu_jstar, psi, c).map(|t| (1.0 - inv) + inv * t)
}

fn ln_choose(n: usize, k: usize) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Pmf of the overlap of two independent uniform `m`-subsets of a
/// `pool`-element set (hypergeometric), from log-factorials.
pub fn overlap_pmf(pool: usize, m: usize) -> Result<Vec<f64>> {
    if m > pool {
        return Err(domain(format!("subset size {m} exceeds pool {pool}")));
    }
    let denom = ln_choose(pool, m);
    Ok((0..=m)
        .map(|k| {
            if m - k > pool - m {
                return 0.0;
            }
            (ln_choose(m, k) + ln_choose(pool - m, m - k) - denom).exp()
        })
        .collect())
}

/// `E exp(t |𝓘 ∩ 𝓘'|)` for independent uniform `m`-subsets of a size-`pool` set.
pub fn overlap_mgf(pool: usize, m: usize, t: f64) -> Result<f64> {
    if m == 0 {
        return Ok(1.0);
    }
    Ok(overlap_pmf(pool, m)?
        .iter()
        .enumerate()
        .map(|(k, &p)| p * (t * k as f64).exp())
        .sum())
}

/// `exp((m²/(j* - 1))(e^t - 1))`, the binomial-moment majorant of the overlap MGF.
pub fn overlap_mgf_binomial_bound(j_star: usize, m: usize, t: f64) -> Result<f64> {
    if m == 0 {
        return Ok(1.0);
    }
    if j_star < 2 {
        return Err(domain("binomial bound needs j* >= 2"));
    }
    let mf = m as f64;
    Ok((mf * mf / (j_star - 1) as f64 * t.exp_m1()).exp())
}

/// Overlap MGF times `[1 + (1/(j* - m))(collision - 1)_+]`.
pub fn multinomial_conditional_chisq_bound(mu_jstar: f64, psi: f64, c: f64, j_star: usize, m: usize) -> Result<f64> {
    if j_star == 0 || m >= j_star {
        return Err(domain(format!("need 0 <= m <= j* - 1, got m={m}, j*={j_star}")));
    }
    let mgf = if m == 0 {
        1.0
    } else {
        let mf = m as f64;
        overlap_mgf(j_star, m, c * c * psi * psi / (mf * mf * mu_jstar))?
    };
    let collision = spike_collision_term(mu_jstar, psi, c)?;
    let bracket = 1.0 + (collision - 1.0).max(0.0) / (j_star - m) as f64;
    Ok(mgf * bracket)
}

// ---------------------------------------------------------------------------
// Exact Bayes risk

/// `1 - TV(null, mixture)`.
pub fn exact_bayes_risk<P, Q>(null: &P, mixture: &Q) -> Result<Certified>
where
    P: DiscreteLaw + ?Sized,
    Q: DiscreteLaw + ?Sized,
{
    let tv = tv_distance(null, mixture)?;
    Ok(Certified {
        value: 1.0 - tv.value,
        error: tv.error,
    })
}

/// A homoskedastic null `Poi(μ)^{⊗k}` against the uniform mixture over
/// placements of one raised coordinate (`μ + up`) and `m` lowered
/// coordinates (`μ - down`) in distinct positions.
///
/// With `m = 0` this is the flattened spike mixture; with `m ≥ 1` it is the
/// flattened simplex mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExchangeableMixture {
    pub k: usize,
    pub mu: f64,
    pub up: f64,
    pub down: f64,
    pub m: usize,
}

impl ExchangeableMixture {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || (self.m > 0 && self.m >= self.k) {
            return Err(domain(format!("need k >= 1 and m <= k - 1, got k={}, m={}", self.k, self.m)));
        }
        if !(self.mu > 0.0 && self.up >= 0.0 && self.down >= 0.0) || self.down > self.mu {
            return Err(Error::Flattening(format!(
                "shifted means must be non-negative: mu={}, down={}",
                self.mu, self.down
            )));
        }
        Ok(())
    }

    /// Explicit component list; only sensible for small `k`.
    pub fn to_mixture(&self, mass_tol: f64) -> Result<ProductMixture> {
        self.validate()?;
        let mut rates = Vec::new();
        for j in 0..self.k {
            let others: Vec<usize> = (0..self.k).filter(|&i| i != j).collect();
            for subset in combinations(&others, self.m) {
                let mut r = vec![self.mu; self.k];
                r[j] += self.up;
                for i in subset {
                    r[i] -= self.down;
                }
                rates.push(r);
            }
        }
        let kmax = self.common_kmax(mass_tol)?;
        let w = 1.0 / rates.len() as f64;
        let comps = rates
            .iter()
            .map(|r| Ok((w, FiniteProductDist::poisson_on(r, &vec![kmax; self.k])?)))
            .collect::<Result<Vec<_>>>()?;
        ProductMixture::new(comps)
    }

    pub fn null(&self, mass_tol: f64) -> Result<FiniteProductDist> {
        let kmax = self.common_kmax(mass_tol)?;
        FiniteProductDist::poisson_on(&vec![self.mu; self.k], &vec![kmax; self.k])
    }

    fn common_kmax(&self, mass_tol: f64) -> Result<usize> {
        Ok(truncated_poisson_pmf(self.mu + self.up, mass_tol / self.k as f64)?.len() - 1)
    }

    /// Likelihood ratio of the mixture to the null at a point given by its
    /// coordinate values.
    fn likelihood_ratio(&self, x: &[usize]) -> f64 {
        let ra = 1.0 + self.up / self.mu;
        let rb = 1.0 - self.down / self.mu;
        let base = (-self.up + self.m as f64 * self.down).exp();
        if self.m == 0 {
            let s: f64 = x.iter().map(|&v| ra.powi(v as i32)).sum();
            return base * s / self.k as f64;
        }
        let lowered: Vec<f64> = x.iter().map(|&v| if v == 0 { 1.0 } else { rb.powi(v as i32) }).collect();
        let mut total = 0.0;
        for j in 0..self.k {
            // Elementary symmetric polynomial of degree m over the others.
            let mut e = vec![0.0; self.m + 1];
            e[0] = 1.0;
            for (i, &z) in lowered.iter().enumerate() {
                if i == j {
                    continue;
                }
                for d in (1..=self.m).rev() {
                    e[d] += e[d - 1] * z;
                }
            }
            total += ra.powi(x[j] as i32) * e[self.m];
        }
        let placements = self.k as f64 * ln_choose(self.k - 1, self.m).exp();
        base * total / placements
    }
}

fn combinations(items: &[usize], m: usize) -> Vec<Vec<usize>> {
    if m == 0 {
        return vec![Vec::new()];
    }
    if items.len() < m {
        return Vec::new();
    }
    let mut out = Vec::new();
    for (i, &first) in items.iter().enumerate() {
        for mut rest in combinations(&items[i + 1..], m - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Exact `TV(Poi(μ)^{⊗k}, mixture) = E_null (1 - L)_+` by enumerating
/// histogram types of the null sample.
///
/// Values at which a single coordinate already forces `L ≥ 1` are lumped
/// into an absorbing bin that contributes nothing. Subtrees whose null mass
/// falls below `prune` are skipped and their mass is added to the error bar.
pub fn exchangeable_tv(mix: &ExchangeableMixture, prune: f64) -> Result<Certified> {
    mix.validate()?;
    let k = mix.k;
    let ra = 1.0 + mix.up / mix.mu;
    // Smallest value v with e^{-up} ra^v / k ≥ 1 (only meaningful for m = 0).
    let absorbing = if mix.m == 0 && mix.up > 0.0 {
        Some(((k as f64).ln() + mix.up) / ra.ln()).map(|t| t.ceil().max(0.0) as usize)
    } else {
        None
    };
    let table = truncated_poisson_pmf(mix.mu, (prune / k as f64).max(1e-300))?;
    let values = match absorbing {
        Some(a) => a.min(table.len()),
        None => table.len(),
    };
    let probs = &table.probs[..values];
    let overflow = (1.0 - probs.iter().sum::<f64>()).max(0.0);
    let overflow_absorbs = absorbing.is_some_and(|a| a <= table.len());

    // suffix[v] = mass of values ≥ v including the overflow bin.
    let mut suffix = vec![overflow; values + 1];
    for v in (0..values).rev() {
        suffix[v] = suffix[v + 1] + probs[v];
    }
    let ln_kfact = ln_gamma(k as f64 + 1.0);

    struct State<'a> {
        mix: &'a ExchangeableMixture,
        probs: &'a [f64],
        suffix: &'a [f64],
        overflow_absorbs: bool,
        prune: f64,
        x: Vec<usize>,
        tv: f64,
        err: f64,
        visited: f64,
    }

    fn recurse(s: &mut State<'_>, v: usize, rem: usize, ln_w: f64) -> Result<()> {
        s.visited += 1.0;
        if s.visited > ATOM_BUDGET {
            return Err(Error::AtomBudget {
                atoms: s.visited,
                budget: ATOM_BUDGET,
            });
        }
        let subtree = (ln_w - ln_gamma(rem as f64 + 1.0)).exp() * s.suffix[v].powi(rem as i32);
        if rem == 0 {
            let l = s.mix.likelihood_ratio(&s.x);
            s.tv += ln_w.exp() * (1.0 - l).max(0.0);
            return Ok(());
        }
        if subtree < s.prune {
            s.err += subtree;
            return Ok(());
        }
        if v == s.probs.len() {
            // Everything left sits in the overflow bin.
            if !s.overflow_absorbs {
                s.err += subtree;
            }
            return Ok(());
        }
        let p = s.probs[v];
        let lp = p.ln();
        for cnt in (0..=rem).rev() {
            if cnt > 0 && p == 0.0 {
                continue;
            }
            let add = if cnt == 0 { 0.0 } else { cnt as f64 * lp - ln_gamma(cnt as f64 + 1.0) };
            for _ in 0..cnt {
                s.x.push(v);
            }
            recurse(s, v + 1, rem - cnt, ln_w + add)?;
            for _ in 0..cnt {
                s.x.pop();
            }
        }
        Ok(())
    }

    let mut state = State {
        mix,
        probs,
        suffix: &suffix,
        overflow_absorbs,
        prune,
        x: Vec::with_capacity(k),
        tv: 0.0,
        err: 0.0,
        visited: 0.0,
    };
    recurse(&mut state, 0, k, ln_kfact)?;
    Ok(Certified {
        value: state.tv.min(1.0),
        error: state.err,
    })
}

/// `1 - TV` for an exchangeable mixture.
pub fn exchangeable_bayes_risk(mix: &ExchangeableMixture, prune: f64) -> Result<Certified> {
    let tv = exchangeable_tv(mix, prune)?;
    Ok(Certified {
        value: 1.0 - tv.value,
        error: tv.error,
    })
}

/// Default lattice size for [`spike_tv_lattice`].
pub const LATTICE_BINS: usize = 1 << 22;

/// `TV(Poi(μ)^{⊗k}, spike mixture)` for large `k`, where type enumeration
/// is out of reach. Only `m = 0` mixtures are accepted.
///
/// Writing `Y_j = r^{X_j} - 1` with `r = 1 + up/μ`, the likelihood ratio is
/// `e^{-up}(1 + ΣY_j/k)` and `TV = E(1 - L)_+` only sees `ΣY < k(e^{up} - 1)`.
/// That range is cut into `bins` cells; rounding every `Y_j` down and up gives
/// two lattice sums that bracket `ΣY`, and their `k`-fold convolutions
/// (FFT, truncated to the range) bracket the TV. The error bar is the half
/// width of the bracket plus untabulated Poisson mass and a floating-point
/// allowance for the transforms.
pub fn spike_tv_lattice(mix: &ExchangeableMixture, bins: usize) -> Result<Certified> {
    mix.validate()?;
    if mix.m != 0 {
        return Err(domain("the lattice bracket only handles spike mixtures (m = 0)"));
    }
    if bins < 2 {
        return Err(domain("need at least two lattice bins"));
    }
    if mix.up == 0.0 {
        return Ok(Certified { value: 0.0, error: 0.0 });
    }
    let k = mix.k as f64;
    let ln_r = (mix.up / mix.mu).ln_1p();
    let range = k * mix.up.exp_m1();
    let step = range / bins as f64;

    let mut down = vec![0.0; bins];
    let mut up = vec![0.0; bins];
    let mut tabulated = 0.0;
    let mut x = 0u64;
    loop {
        let y = (x as f64 * ln_r).exp_m1();
        if y >= range {
            break;
        }
        let p = poisson_ln_pmf(mix.mu, x).exp();
        if p == 0.0 && x as f64 > mix.mu {
            break;
        }
        let u = y / step;
        down[(u.floor() as usize).min(bins - 1)] += p;
        let hi = u.ceil() as usize;
        if hi < bins {
            up[hi] += p;
        }
        tabulated += p;
        x += 1;
    }
    let beyond = poisson_sf(mix.mu, x);
    let lost = k * (1.0 - tabulated - beyond).max(0.0);

    let mut conv = LatticeConv::new(bins);
    let sum_down = conv.power(&down, mix.k);
    let sum_up = conv.power(&up, mix.k);

    let scale = (-mix.up).exp();
    let gain = |s: usize| (1.0 - scale * (1.0 + s as f64 * step / k)).max(0.0);
    let upper: f64 = sum_down.iter().enumerate().map(|(s, &p)| p * gain(s)).sum();
    let lower: f64 = sum_up.iter().enumerate().map(|(s, &p)| p * gain(s)).sum();
    let allowance = conv.products as f64 * bins as f64 * 8.0 * f64::EPSILON * (conv.len as f64).log2();
    Ok(Certified {
        value: (0.5 * (upper + lower)).min(1.0),
        error: 0.5 * (upper - lower).max(0.0) + lost + allowance,
    })
}

/// Truncated convolution powers of densities on `0..bins`.
struct LatticeConv {
    bins: usize,
    len: usize,
    forward: std::sync::Arc<dyn rustfft::Fft<f64>>,
    inverse: std::sync::Arc<dyn rustfft::Fft<f64>>,
    products: usize,
}

impl LatticeConv {
    fn new(bins: usize) -> Self {
        let len = (2 * bins).next_power_of_two();
        let mut planner = rustfft::FftPlanner::new();
        Self {
            bins,
            len,
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
            products: 0,
        }
    }

    fn transform(&self, a: &[f64]) -> Vec<rustfft::num_complex::Complex<f64>> {
        let mut buf = vec![rustfft::num_complex::Complex::new(0.0, 0.0); self.len];
        for (b, &v) in buf.iter_mut().zip(a) {
            b.re = v;
        }
        self.forward.process(&mut buf);
        buf
    }

    fn multiply(&mut self, a: &[f64], b: &[f64]) -> Vec<f64> {
        self.products += 1;
        let mut fa = self.transform(a);
        if std::ptr::eq(a, b) {
            fa.iter_mut().for_each(|z| *z = *z * *z);
        } else {
            let fb = self.transform(b);
            fa.iter_mut().zip(&fb).for_each(|(z, w)| *z *= w);
        }
        self.inverse.process(&mut fa);
        let norm = 1.0 / self.len as f64;
        fa[..self.bins].iter().map(|z| (z.re * norm).max(0.0)).collect()
    }

    fn power(&mut self, base: &[f64], mut n: usize) -> Vec<f64> {
        let mut acc: Option<Vec<f64>> = None;
        let mut sq = base.to_vec();
        loop {
            if n & 1 == 1 {
                acc = Some(match acc {
                    None => sq.clone(),
                    Some(a) => self.multiply(&a, &sq),
                });
            }
            n >>= 1;
            if n == 0 {
                break;
            }
            sq = self.multiply(&sq, &sq);
        }
        acc.unwrap_or_else(|| {
            let mut one = vec![0.0; self.bins];
            one[0] = 1.0;
            one
        })
    }
}

/// `√δ`-type benchmark: `H²(Poi(μ), Poi(μ + δ)) = 2(1 - exp(√(μ² + μδ) - μ - δ/2))`.
pub fn poisson_hellinger_sq(mu: f64, delta: f64) -> f64 {
    2.0 * (1.0 - ((mu * mu + mu * delta).sqrt() - mu - delta / 2.0).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::E;

    #[test]
    fn pmf_table_examples() {
        let t = truncated_poisson_pmf(0.0, 1e-12).unwrap();
        assert_eq!(t.probs, vec![1.0]);
        let t = truncated_poisson_pmf(1.0, 1e-12).unwrap();
        assert!((13..=19).contains(&(t.len() - 1)));
        assert!((t.probs[0] - (-1.0f64).exp()).abs() < 1e-15);
        let mut fact = 1.0;
        for (k, &p) in t.probs.iter().enumerate() {
            if k > 0 {
                fact *= k as f64;
            }
            assert!((p - (-1.0f64).exp() / fact).abs() < 1e-15);
        }
        assert!(t.deficit <= 1e-12);
        assert!((t.probs.iter().sum::<f64>() + t.deficit - 1.0).abs() < 1e-14);
    }

    #[test]
    fn cdf_and_sf_agree() {
        for &lam in &[0.3, 1.0, 7.5, 40.0, 300.0] {
            for k in [0u64, 1, 3, 10, 50, 400] {
                let c = poisson_cdf(lam, k as f64);
                let s = poisson_sf(lam, k + 1);
                assert!((c + s - 1.0).abs() < 1e-12, "lam={lam} k={k}");
            }
        }
        assert_eq!(poisson_cdf(2.0, -0.5), 0.0);
        // Deep lower tail stays finite in log space.
        let l = poisson_ln_cdf(1e4, 10.0);
        assert!(l.is_finite() && l < -9000.0);
    }

    #[test]
    fn tv_examples() {
        let p = FiniteProductDist::poisson(&[1.0], 1e-12).unwrap();
        assert_eq!(tv_distance(&p, &p).unwrap().value, 0.0);
        let q = FiniteProductDist::poisson(&[2.0], 1e-12).unwrap();
        assert!(tv_distance(&p, &q).unwrap().upper() <= 1.0);
        let q = FiniteProductDist::poisson(&[1.01], 1e-12).unwrap();
        assert!(tv_distance(&p, &q).unwrap().upper() <= 0.1);
    }

    #[test]
    fn chi_square_closed_and_enumerated() {
        assert_eq!(chi_square_poisson_products(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_relative_eq!(chi_square_poisson_products(&[2.0], &[1.0]).unwrap(), E - 1.0, epsilon = 1e-12);
        let enumerated = chi_square_poisson_enumerated(&[2.0, 0.5], &[1.0, 0.7], 1e-14).unwrap();
        let closed = chi_square_poisson_products(&[2.0, 0.5], &[1.0, 0.7]).unwrap();
        assert_relative_eq!(enumerated.value, closed, max_relative = 1e-8);
        assert!(chi_square_poisson_products(&[1.0], &[0.0]).is_err());
    }

    #[test]
    fn hellinger_matches_closed_form() {
        let p = FiniteProductDist::poisson(&[3.0], 1e-14).unwrap();
        let q = FiniteProductDist::poisson(&[3.5], 1e-14).unwrap();
        let hd = hellinger_distance(&p, &q).unwrap();
        assert!((hd.value.powi(2) - poisson_hellinger_sq(3.0, 0.5)).abs() < 1e-10);
    }

    #[test]
    fn conditioning() {
        let d = FiniteProductDist::poisson(&[1.0, 2.0], 1e-12).unwrap();
        let (same, pe) = condition_on_max_event(&d, 0.0, f64::INFINITY).unwrap();
        assert!((pe - 1.0).abs() < 1e-12);
        assert!(tv_distance(&d, &same).unwrap().value < 1e-12);
        let (cond, pe) = condition_on_max_event(&d, 1.0, 2.0).unwrap();
        let expect = poisson_cdf(1.0, 3.0) * poisson_cdf(2.0, 3.0);
        assert!((pe - expect).abs() < 1e-12);
        assert!(tv_distance(&d, &cond).unwrap().value <= 2.0 * (1.0 - pe) + 1e-12);
        assert!(matches!(condition_on_max_event(&d, 0.0, -1.0), Err(Error::EmptyEvent)));
    }

    #[test]
    fn chisq_bound_examples() {
        let b = poisson_conditional_chisq_bound(1.0, 2.0, 0.0, 4).unwrap();
        assert!(b <= 1.0 + 1e-15);
        let one = poisson_conditional_chisq_bound(1.5, 2.0, 0.3, 1).unwrap();
        let direct = (0.09f64 * 4.0 / 1.5).exp() * poisson_cdf((1.5f64 + 0.6).powi(2) / 1.5, 3.5);
        assert_relative_eq!(one, direct, max_relative = 1e-12);
        for &(nu, xi, c) in &[(1.0, 10.0, 0.5), (0.5, 30.0, 0.2), (2.0, 50.0, 0.3)] {
            let exact = spike_collision_term(nu, xi, c).unwrap();
            let bound = bennett_cancelled_term(nu, xi, c).unwrap();
            assert!(exact <= bound * (1.0 + 1e-12));
        }
        assert!(bennett_cancelled_term(1.0, 1.0, 0.5).is_none());
    }

    #[test]
    fn overlap_examples() {
        let p = overlap_pmf(2, 1).unwrap();
        assert!((p[1] - 0.5).abs() < 1e-13);
        assert_eq!(overlap_mgf(5, 0, 3.0).unwrap(), 1.0);
        // Brute force over all pairs of 2-subsets of a 5-set.
        let subsets = combinations(&[0, 1, 2, 3, 4], 2);
        let mut hist = [0.0; 3];
        for a in &subsets {
            for b in &subsets {
                hist[a.iter().filter(|x| b.contains(x)).count()] += 1.0;
            }
        }
        let total = (subsets.len() * subsets.len()) as f64;
        for (k, &v) in overlap_pmf(5, 2).unwrap().iter().enumerate() {
            assert!((v - hist[k] / total).abs() < 1e-14);
        }
    }

    #[test]
    fn exchangeable_matches_explicit() {
        let spike = ExchangeableMixture {
            k: 3,
            mu: 1.0,
            up: 0.8,
            down: 0.0,
            m: 0,
        };
        let fast = exchangeable_tv(&spike, 1e-16).unwrap();
        let slow = tv_distance(&spike.null(1e-13).unwrap(), &spike.to_mixture(1e-13).unwrap()).unwrap();
        assert!((fast.value - slow.value).abs() < 1e-10, "{fast:?} {slow:?}");

        let simplex = ExchangeableMixture {
            k: 4,
            mu: 1.5,
            up: 0.9,
            down: 0.45,
            m: 2,
        };
        let fast = exchangeable_tv(&simplex, 1e-16).unwrap();
        let slow = tv_distance(&simplex.null(1e-13).unwrap(), &simplex.to_mixture(1e-13).unwrap()).unwrap();
        assert!((fast.value - slow.value).abs() < 1e-9, "{fast:?} {slow:?}");
    }

    #[test]
    fn lattice_brackets_enumeration() {
        for &(k, mu, up) in &[(20, 1.0, 3.0), (8, 6.0, 5.0), (1, 2.0, 1.0), (30, 0.3, 2.5)] {
            let mix = ExchangeableMixture { k, mu, up, down: 0.0, m: 0 };
            let exact = exchangeable_tv(&mix, 1e-12).unwrap();
            let lat = spike_tv_lattice(&mix, 1 << 16).unwrap();
            assert!(lat.error < 0.01, "{lat:?}");
            assert!((lat.value - exact.value).abs() <= lat.error + exact.error + 1e-12, "{lat:?} {exact:?}");
        }
        let flat = ExchangeableMixture { k: 5, mu: 1.0, up: 0.0, down: 0.0, m: 0 };
        assert_eq!(spike_tv_lattice(&flat, 16).unwrap().value, 0.0);
        let simplex = ExchangeableMixture { k: 5, mu: 1.0, up: 1.0, down: 0.5, m: 2 };
        assert!(spike_tv_lattice(&simplex, 16).is_err());
    }
}
