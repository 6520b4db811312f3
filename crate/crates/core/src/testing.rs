//! Decision procedures: the Poisson max test, the multinomial head and tail
//! tests, their disjunction, and the plain sup-norm threshold test used in
//! the sharp-constant sweeps.
//!
//! Comparisons follow the defining displays exactly: strict `>` for the max
//! and tail tests, non-strict `≥` for the head test and the threshold test.

use std::f64::consts::{E, PI};

use serde::{Deserialize, Serialize};

use crate::core_math::h_inv;
use crate::error::{domain, Error, Result};
use crate::model::{CountVector, RateVector, SampleSize, SimplexVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Reject,
    Accept,
}

impl Decision {
    pub fn from_bool(reject: bool) -> Self {
        if reject {
            Decision::Reject
        } else {
            Decision::Accept
        }
    }

    pub fn is_reject(self) -> bool {
        self == Decision::Reject
    }
}

/// A decision together with the realised statistic and threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub statistic: f64,
    pub threshold: f64,
    pub decision: Decision,
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(domain(format!("eta must lie in (0, 1), got {eta}")));
    }
    Ok(())
}

/// Smallest `C'` with `Σ_{j≥1} 2/(C' j²) ≤ η/2`, i.e. `C' = 2π²/(3η)`.
pub fn calibrate_poisson(eta: f64) -> Result<f64> {
    check_eta(eta)?;
    Ok(2.0 * PI * PI / (3.0 * eta))
}

/// `K₁ = (η/4)^{-1/2}`, the Chebyshev constant of the head test.
pub fn calibrate_head(eta: f64) -> Result<f64> {
    check_eta(eta)?;
    Ok((eta / 4.0).powf(-0.5))
}

/// Smallest `K₂ ≥ e` with `Σ_{j≥2} 2/(K₂ (j-1)²) ≤ η/4`.
pub fn calibrate_tail(eta: f64) -> Result<f64> {
    check_eta(eta)?;
    Ok((4.0 * PI * PI / (3.0 * eta)).max(E))
}

/// Per-coordinate thresholds `u_j = μ_j h⁻¹(ln(C' j²)/μ_j)` of the max test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonTestConfig {
    pub c_prime: f64,
    pub thresholds: Vec<f64>,
}

impl PoissonTestConfig {
    pub fn new(mu: &RateVector, c_prime: f64) -> Result<Self> {
        if !(c_prime >= 1.0) || !c_prime.is_finite() {
            return Err(domain(format!("C' must be >= 1, got {c_prime}")));
        }
        let thresholds = mu
            .as_slice()
            .iter()
            .enumerate()
            .map(|(i, &m)| {
                let j = (i + 1) as f64;
                Ok(m * h_inv((c_prime * j * j).ln() / m)?)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { c_prime, thresholds })
    }

    pub fn calibrated(mu: &RateVector, eta: f64) -> Result<Self> {
        Self::new(mu, calibrate_poisson(eta)?)
    }

    /// The realised threshold `max_j u_j`.
    pub fn max_threshold(&self) -> f64 {
        self.thresholds.iter().copied().fold(0.0, f64::max)
    }
}

/// `max_j |x_j - center_j|`.
pub fn sup_deviation(x: &[u64], center: &[f64]) -> f64 {
    x.iter()
        .zip(center)
        .map(|(&xi, &c)| (xi as f64 - c).abs())
        .fold(0.0, f64::max)
}

/// Rejects iff `‖x - μ‖∞ > max_j u_j`.
pub fn poisson_max_test(x: &CountVector, mu: &RateVector, cfg: &PoissonTestConfig) -> Result<TestOutcome> {
    x.check_len(mu.len())?;
    if cfg.thresholds.len() != mu.len() {
        return Err(Error::LengthMismatch {
            expected: mu.len(),
            got: cfg.thresholds.len(),
        });
    }
    let statistic = sup_deviation(&x.counts, mu.as_slice());
    let threshold = cfg.max_threshold();
    Ok(TestOutcome {
        statistic,
        threshold,
        decision: Decision::from_bool(statistic > threshold),
    })
}

/// Rejects iff `‖x - center‖∞ ≥ threshold`.
pub fn sup_norm_threshold_test(x: &CountVector, center: &[f64], threshold: f64) -> Result<TestOutcome> {
    x.check_len(center.len())?;
    let statistic = sup_deviation(&x.counts, center);
    Ok(TestOutcome {
        statistic,
        threshold,
        decision: Decision::from_bool(statistic >= threshold),
    })
}

/// Thresholds of the multinomial head and tail tests.
///
/// `tail_thresholds[j - 2]` belongs to category `j ≥ 2`; cells with
/// `n q_0(j)(1 - q_0(j)) = 0` get threshold 0 and are excluded from the tail
/// maximum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultinomialTestConfig {
    pub k1: f64,
    pub k2: f64,
    pub n: f64,
    pub head_threshold: f64,
    pub tail_thresholds: Vec<f64>,
}

impl MultinomialTestConfig {
    pub fn new(q0: &SimplexVector, n: SampleSize, k1: f64, k2: f64) -> Result<Self> {
        if !(k1 > 0.0) {
            return Err(domain(format!("K1 must be positive, got {k1}")));
        }
        if !(k2 >= E) {
            return Err(domain(format!("K2 must be >= e, got {k2}")));
        }
        let nn = n.value();
        let head = q0.head();
        let head_threshold = k1 * (1.0 + (nn * head * (1.0 - head)).sqrt());
        let tail_thresholds = q0
            .tail()
            .iter()
            .enumerate()
            .map(|(i, &q)| {
                let v = nn * q * (1.0 - q);
                if v == 0.0 {
                    return Ok(0.0);
                }
                let jm1 = (i + 1) as f64;
                Ok(v * h_inv((k2 * jm1 * jm1).ln() / v)?)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            k1,
            k2,
            n: nn,
            head_threshold,
            tail_thresholds,
        })
    }

    pub fn calibrated(q0: &SimplexVector, n: SampleSize, eta: f64) -> Result<Self> {
        Self::new(q0, n, calibrate_head(eta)?, calibrate_tail(eta)?)
    }

    fn check(&self, x: &CountVector, q0: &SimplexVector) -> Result<()> {
        x.check_len(q0.len())?;
        if self.tail_thresholds.len() + 1 != q0.len() {
            return Err(Error::LengthMismatch {
                expected: q0.len() - 1,
                got: self.tail_thresholds.len(),
            });
        }
        Ok(())
    }
}

/// Rejects iff `|x_1 - n q_0(1)| ≥ K₁ (1 + √(n q_0(1)(1 - q_0(1))))`.
pub fn multinomial_head_test(x: &CountVector, q0: &SimplexVector, cfg: &MultinomialTestConfig) -> Result<TestOutcome> {
    cfg.check(x, q0)?;
    let statistic = (x.counts[0] as f64 - cfg.n * q0.head()).abs();
    Ok(TestOutcome {
        statistic,
        threshold: cfg.head_threshold,
        decision: Decision::from_bool(statistic >= cfg.head_threshold),
    })
}

/// Rejects iff `max_{j≥2} |x_j - n q_0(j)|` exceeds the largest tail
/// threshold, or a zero-probability cell has a positive count.
pub fn multinomial_tail_test(x: &CountVector, q0: &SimplexVector, cfg: &MultinomialTestConfig) -> Result<TestOutcome> {
    cfg.check(x, q0)?;
    let mut statistic = 0.0_f64;
    let mut threshold = 0.0_f64;
    let mut guard = false;
    for (i, &q) in q0.tail().iter().enumerate() {
        let xj = x.counts[i + 1] as f64;
        let v = cfg.n * q * (1.0 - q);
        if v == 0.0 {
            if q == 0.0 && xj > 0.0 {
                guard = true;
                statistic = statistic.max(xj);
            }
            continue;
        }
        statistic = statistic.max((xj - cfg.n * q).abs());
        threshold = threshold.max(cfg.tail_thresholds[i]);
    }
    Ok(TestOutcome {
        statistic,
        threshold,
        decision: Decision::from_bool(guard || statistic > threshold),
    })
}

/// Both sub-tests and their disjunction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CombinedOutcome {
    pub head: TestOutcome,
    pub tail: TestOutcome,
    pub decision: Decision,
}

/// `φ = φ₁ ∨ φ₂`.
pub fn multinomial_combined_test(
    x: &CountVector,
    q0: &SimplexVector,
    cfg: &MultinomialTestConfig,
) -> Result<CombinedOutcome> {
    let head = multinomial_head_test(x, q0, cfg)?;
    let tail = multinomial_tail_test(x, q0, cfg)?;
    Ok(CombinedOutcome {
        head,
        tail,
        decision: Decision::from_bool(head.decision.is_reject() || tail.decision.is_reject()),
    })
}
