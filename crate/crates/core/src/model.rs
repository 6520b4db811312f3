//! Null vectors, count data and exact samplers.
//!
//! Nulls are stored sorted non-increasingly. The `from_unsorted`
//! constructors sort and hand back the [`Permutation`] so that user-facing
//! category labels survive the reordering.
//!
//! Randomness comes from ChaCha8 streams: a 64-bit seed selects the key and
//! the stream id selects an independent sequence, so Monte Carlo trial `t`
//! always sees the same draws regardless of thread scheduling.

use std::io::Read;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, Error, Result};

/// Tolerance on the total mass of a [`SimplexVector`].
pub const SIMPLEX_SUM_TOL: f64 = 1e-12;

/// Position map produced when sorting a user-supplied vector.
///
/// `order[i]` is the original index of the entry at sorted position `i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation {
    pub order: Vec<usize>,
}

impl Permutation {
    pub fn identity(p: usize) -> Self {
        Self {
            order: (0..p).collect(),
        }
    }

    /// Reorders data given in original labels into sorted positions.
    pub fn to_sorted<T: Clone>(&self, original: &[T]) -> Result<Vec<T>> {
        if original.len() != self.order.len() {
            return Err(Error::LengthMismatch {
                expected: self.order.len(),
                got: original.len(),
            });
        }
        Ok(self.order.iter().map(|&i| original[i].clone()).collect())
    }

    /// Maps data in sorted positions back to the original labels.
    pub fn to_original<T: Clone + Default>(&self, sorted: &[T]) -> Result<Vec<T>> {
        if sorted.len() != self.order.len() {
            return Err(Error::LengthMismatch {
                expected: self.order.len(),
                got: sorted.len(),
            });
        }
        let mut out = vec![T::default(); sorted.len()];
        for (pos, &orig) in self.order.iter().enumerate() {
            out[orig] = sorted[pos].clone();
        }
        Ok(out)
    }
}

fn sort_desc(values: &[f64]) -> (Vec<f64>, Permutation) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let sorted = order.iter().map(|&i| values[i]).collect();
    (sorted, Permutation { order })
}

fn check_non_increasing(values: &[f64], what: &str) -> Result<()> {
    if let Some(j) = values.windows(2).position(|w| w[0] < w[1]) {
        return Err(invalid(format!(
            "{what} must be sorted non-increasingly (entry {} < entry {})",
            j + 1,
            j + 2
        )));
    }
    Ok(())
}

/// Neumaier-compensated sum.
pub(crate) fn stable_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Poisson null rates `μ_1 ≥ … ≥ μ_p > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct RateVector {
    rates: Vec<f64>,
}

impl RateVector {
    pub fn new(rates: Vec<f64>) -> Result<Self> {
        if rates.is_empty() {
            return Err(invalid("rate vector must have length >= 1"));
        }
        if let Some(j) = rates.iter().position(|r| !r.is_finite() || *r <= 0.0) {
            return Err(invalid(format!(
                "Poisson rates must be finite and strictly positive (entry {} = {})",
                j + 1,
                rates[j]
            )));
        }
        check_non_increasing(&rates, "rates")?;
        Ok(Self { rates })
    }

    /// Sorts the rates and remembers where each one came from.
    pub fn from_unsorted(rates: Vec<f64>) -> Result<(Self, Permutation)> {
        let (sorted, perm) = sort_desc(&rates);
        Ok((Self::new(sorted)?, perm))
    }

    pub fn constant(value: f64, p: usize) -> Result<Self> {
        Self::new(vec![value; p])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.rates
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }
}

impl TryFrom<Vec<f64>> for RateVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<RateVector> for Vec<f64> {
    fn from(v: RateVector) -> Self {
        v.rates
    }
}

/// Multinomial null `q_0(1) ≥ … ≥ q_0(p) ≥ 0` summing to one.
///
/// Zero cells are allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SimplexVector {
    probs: Vec<f64>,
}

impl SimplexVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(invalid("probability vector must have length >= 1"));
        }
        if let Some(j) = probs.iter().position(|q| !q.is_finite() || *q < 0.0) {
            return Err(invalid(format!(
                "probabilities must be finite and >= 0 (entry {} = {})",
                j + 1,
                probs[j]
            )));
        }
        check_non_increasing(&probs, "probabilities")?;
        let total = stable_sum(probs.iter().copied());
        if (total - 1.0).abs() > SIMPLEX_SUM_TOL {
            return Err(invalid(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self { probs })
    }

    pub fn from_unsorted(probs: Vec<f64>) -> Result<(Self, Permutation)> {
        let (sorted, perm) = sort_desc(&probs);
        Ok((Self::new(sorted)?, perm))
    }

    pub fn uniform(p: usize) -> Result<Self> {
        if p == 0 {
            return Err(invalid("uniform simplex needs p >= 1"));
        }
        Self::new(vec![1.0 / p as f64; p])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// `q_0^max`, the largest cell.
    pub fn head(&self) -> f64 {
        self.probs[0]
    }

    /// `q_0^{-max}`, every cell except the largest.
    pub fn tail(&self) -> &[f64] {
        &self.probs[1..]
    }
}

impl TryFrom<Vec<f64>> for SimplexVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<SimplexVector> for Vec<f64> {
    fn from(v: SimplexVector) -> Self {
        v.probs
    }
}

/// Observed counts `X = (X_1, …, X_p)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CountVector {
    pub counts: Vec<u64>,
}

impl CountVector {
    pub fn new(counts: Vec<u64>) -> Self {
        Self { counts }
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn check_len(&self, p: usize) -> Result<()> {
        if self.counts.len() != p {
            return Err(Error::LengthMismatch {
                expected: p,
                got: self.counts.len(),
            });
        }
        Ok(())
    }
}

/// Sample size `n > 0`; real-valued so that Poissonized sizes like
/// `(1 + c) n` are representable.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct SampleSize(f64);

impl SampleSize {
    pub fn new(n: f64) -> Result<Self> {
        if !(n > 0.0) || !n.is_finite() {
            return Err(invalid(format!("sample size must be positive and finite, got {n}")));
        }
        Ok(Self(n))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// The size as an integer, for exact multinomial sampling.
    pub fn as_count(self) -> Result<u64> {
        if self.0.fract() != 0.0 || self.0 > u64::MAX as f64 {
            return Err(invalid(format!("sample size {} is not an integer", self.0)));
        }
        Ok(self.0 as u64)
    }
}

impl TryFrom<f64> for SampleSize {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<SampleSize> for f64 {
    fn from(v: SampleSize) -> Self {
        v.0
    }
}

/// Deterministic random stream `stream` under key `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One Poisson draw: sequential-search inversion below mean 10, PTRS
/// transformed rejection (Hörmann 1993) from 10 upward.
pub fn sample_poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    if lambda < 10.0 {
        let u: f64 = rng.random();
        let mut k = 0u64;
        let mut p = (-lambda).exp();
        let mut cdf = p;
        while u > cdf {
            k += 1;
            p *= lambda / k as f64;
            cdf += p;
            if p < 1e-300 {
                break;
            }
        }
        return k;
    }
    let slam = lambda.sqrt();
    let loglam = lambda.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u: f64 = rng.random::<f64>() - 0.5;
        let v: f64 = rng.random();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + lambda + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        let lhs = v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln();
        let rhs = -lambda + k * loglam - ln_gamma(k + 1.0);
        if lhs <= rhs {
            return k as u64;
        }
    }
}

/// Independent Poisson draws, one per coordinate.
pub fn sample_poisson_product<R: Rng + ?Sized>(lambda: &[f64], rng: &mut R) -> Result<CountVector> {
    if let Some(j) = lambda.iter().position(|l| !l.is_finite() || *l < 0.0) {
        return Err(invalid(format!(
            "Poisson means must be finite and >= 0 (entry {} = {})",
            j + 1,
            lambda[j]
        )));
    }
    Ok(CountVector::new(
        lambda.iter().map(|&l| sample_poisson(l, rng)).collect(),
    ))
}

/// Multinomial draw for an arbitrary (not necessarily sorted) probability
/// vector, by sequential conditional binomials.
pub fn sample_multinomial_probs<R: Rng + ?Sized>(n: u64, probs: &[f64], rng: &mut R) -> Result<CountVector> {
    if let Some(j) = probs.iter().position(|q| !q.is_finite() || *q < 0.0) {
        return Err(invalid(format!(
            "probabilities must be finite and >= 0 (entry {} = {})",
            j + 1,
            probs[j]
        )));
    }
    let total = stable_sum(probs.iter().copied());
    if (total - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("probabilities sum to {total}, not 1")));
    }
    let mut counts = vec![0u64; probs.len()];
    let mut left = n;
    let mut mass = total;
    for (j, &q) in probs.iter().enumerate() {
        if left == 0 {
            break;
        }
        if j + 1 == probs.len() {
            counts[j] = left;
            break;
        }
        let p = if mass > 0.0 { (q / mass).clamp(0.0, 1.0) } else { 1.0 };
        let x = if p >= 1.0 {
            left
        } else if p <= 0.0 {
            0
        } else {
            Binomial::new(left, p)
                .map_err(|e| Error::Numeric(format!("binomial sampler: {e}")))?
                .sample(rng)
        };
        counts[j] = x;
        left -= x;
        mass -= q;
    }
    Ok(CountVector::new(counts))
}

/// `Multinomial(n, q)` draw; counts always sum to `n`.
pub fn sample_multinomial<R: Rng + ?Sized>(n: u64, q: &SimplexVector, rng: &mut R) -> CountVector {
    sample_multinomial_probs(n, q.as_slice(), rng).expect("validated simplex")
}

/// Poissonized multinomial: `N ~ Poisson(n)`, then `Multinomial(N, q)`.
pub fn sample_poissonized_multinomial<R: Rng + ?Sized>(n: SampleSize, q: &SimplexVector, rng: &mut R) -> CountVector {
    let total = sample_poisson(n.value(), rng);
    sample_multinomial(total, q, rng)
}

/// Two-stage Poissonized draw for an arbitrary probability vector.
pub fn sample_poissonized_probs<R: Rng + ?Sized>(n: f64, probs: &[f64], rng: &mut R) -> Result<CountVector> {
    let total = sample_poisson(n, rng);
    sample_multinomial_probs(total, probs, rng)
}

/// Reads a table of counts: one replicate per row, `p` integer columns.
///
/// A non-numeric first row is treated as a header; lines starting with
/// `#` are skipped.
pub fn read_counts_csv<R: Read>(reader: R) -> Result<Vec<CountVector>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Parse(format!("row {}: {e}", i + 1)))?;
        let parsed: std::result::Result<Vec<u64>, _> = record.iter().map(|f| f.parse::<u64>()).collect();
        match parsed {
            Ok(counts) => rows.push(CountVector::new(counts)),
            Err(_) if i == 0 => continue,
            Err(e) => return Err(Error::Parse(format!("row {}: {e}", i + 1))),
        }
    }
    Ok(rows)
}
