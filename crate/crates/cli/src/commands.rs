use std::fs::File;

use serde::Serialize;
use supnorm_gof::model::{read_counts_csv, stream_rng, CountVector, Permutation};
use supnorm_gof::priors::{verify_spike_flattening, MultinomialSimplexPrior, PoissonSpikePrior, SPIKE_CONSTANT};
use supnorm_gof::rates::{multinomial_rate, poisson_rate, RateProfile};
use supnorm_gof::risk::{
    estimate_multinomial_risk, estimate_poisson_risk, sweep_multinomial_sharp_constant, sweep_sharp_constant,
    AlphaRule, MultinomialAlternative, PoissonAlternative, RiskEstimate, Sampling, SweepResult,
};
use supnorm_gof::testing::{
    multinomial_combined_test, poisson_max_test, Decision, MultinomialTestConfig, PoissonTestConfig, TestOutcome,
};

use crate::config::{self, Format, Null};
use crate::output::{csv_table, emit, float, json_line};
use crate::{Cli, CliError, Mode, VerifyCheck};

/// Validates the mode-specific configuration, runs it, writes the artefact
/// and returns the one-line summary.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    let o = &cli.opts;
    let format = o.format.unwrap_or(match cli.mode {
        Mode::Sweep => Format::Csv,
        _ => Format::Json,
    });
    match &cli.mode {
        Mode::Rate => {
            json_only("rate", format)?;
            let null = config::load_null(o.null.as_deref(), o.model)?;
            rate(&null, o.out.as_deref())
        }
        Mode::Test => {
            let null = config::load_null(o.null.as_deref(), o.model)?;
            let data = config::require_data(o.data.as_deref())?;
            let eta = config::check_eta(o.eta)?;
            test(&null, &data, eta, format, o.out.as_deref())
        }
        Mode::Prior => {
            json_only("prior", format)?;
            let null = config::load_null(o.null.as_deref(), o.model)?;
            let c = o.c.map(|c| config::check_positive("c", c)).transpose()?;
            prior(&null, c, o.draws, o.seed, o.out.as_deref())
        }
        Mode::Verify { check } => {
            let null = config::load_null(o.null.as_deref(), o.model)?;
            let c = config::check_positive("c", o.c.unwrap_or(1.0))?;
            match check {
                VerifyCheck::Flattening => verify_flattening(&null, c, format, o.out.as_deref()),
            }
        }
        Mode::Risk => {
            let null = config::load_null(o.null.as_deref(), o.model)?;
            let eta = config::check_eta(o.eta)?;
            let trials = config::check_trials(o.trials)?;
            let c = o.c.map(|c| config::check_positive("c", c)).transpose()?;
            risk(&null, eta, c, trials, o.seed, format, o.out.as_deref())
        }
        Mode::Sweep => {
            let null = config::load_null(o.null.as_deref(), o.model)?;
            let grid = config::parse_xi_grid(&o.xi_grid)?;
            let alpha = AlphaRule::parse(&o.alpha_rule).map_err(|e| CliError::config("alpha_rule", e.to_string()))?;
            alpha
                .alpha(null.len())
                .map_err(|e| CliError::config("alpha_rule", e.to_string()))?;
            let trials = config::check_trials(o.trials)?;
            if let Null::Multinomial { n, .. } = &null {
                n.as_count()
                    .map_err(|_| CliError::config("null_spec.n", "sweep draws exact samples; n must be an integer"))?;
            }
            sweep(&null, &grid, alpha, trials, o.seed, format, o.out.as_deref())
        }
    }
}

fn json_only(mode: &str, format: Format) -> Result<(), CliError> {
    match format {
        Format::Json => Ok(()),
        Format::Csv => Err(CliError::config("format", format!("{mode} output is JSON only"))),
    }
}

fn profile(null: &Null) -> Result<RateProfile, CliError> {
    Ok(match null {
        Null::Poisson { mu, .. } => poisson_rate(mu)?,
        Null::Multinomial { q0, n, .. } => multinomial_rate(q0, *n, SPIKE_CONSTANT)?,
    })
}

fn rate(null: &Null, out: Option<&std::path::Path>) -> Result<String, CliError> {
    let prof = profile(null)?;
    emit(out, &(json_line(&prof)? + "\n"))?;
    Ok(format!(
        "rate: {} null, p = {}, epsilon_star = {}, j_star = {}, regime = {}",
        null.model().as_str(),
        null.len(),
        prof.epsilon_star,
        prof.j_star,
        prof.regime.as_str()
    ))
}

#[derive(Serialize)]
struct TestRow {
    statistic: f64,
    threshold: f64,
    decision: Decision,
    /// Multinomial only: which sub-test the reported pair comes from.
    #[serde(skip_serializing_if = "Option::is_none")]
    component: Option<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    head: Option<TestOutcome>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tail: Option<TestOutcome>,
}

fn read_rows(path: &std::path::Path, perm: &Permutation) -> Result<Vec<CountVector>, CliError> {
    let file = File::open(path).map_err(|e| CliError::data(format!("cannot open '{}': {e}", path.display())))?;
    let rows = read_counts_csv(file).map_err(|e| CliError::data(format!("'{}': {e}", path.display())))?;
    if rows.is_empty() {
        return Err(CliError::data(format!("'{}' has no data rows", path.display())));
    }
    rows.into_iter()
        .enumerate()
        .map(|(i, r)| {
            perm.to_sorted(&r.counts)
                .map(CountVector::new)
                .map_err(|e| CliError::data(format!("row {}: {e}", i + 1)))
        })
        .collect()
}

fn ratio(o: &TestOutcome) -> f64 {
    if o.threshold > 0.0 {
        o.statistic / o.threshold
    } else {
        f64::INFINITY
    }
}

fn test(
    null: &Null,
    data: &std::path::Path,
    eta: f64,
    format: Format,
    out: Option<&std::path::Path>,
) -> Result<String, CliError> {
    let rows = read_rows(data, null.perm())?;
    let results: Vec<TestRow> = match null {
        Null::Poisson { mu, .. } => {
            let cfg = PoissonTestConfig::calibrated(mu, eta)?;
            rows.iter()
                .map(|x| {
                    let o = poisson_max_test(x, mu, &cfg)?;
                    Ok(TestRow {
                        statistic: o.statistic,
                        threshold: o.threshold,
                        decision: o.decision,
                        component: None,
                        head: None,
                        tail: None,
                    })
                })
                .collect::<Result<_, supnorm_gof::error::Error>>()?
        }
        Null::Multinomial { q0, n, .. } => {
            let cfg = MultinomialTestConfig::calibrated(q0, *n, eta)?;
            rows.iter()
                .map(|x| {
                    let o = multinomial_combined_test(x, q0, &cfg)?;
                    let (component, lead) = if ratio(&o.tail) > ratio(&o.head) {
                        ("tail", o.tail)
                    } else {
                        ("head", o.head)
                    };
                    Ok(TestRow {
                        statistic: lead.statistic,
                        threshold: lead.threshold,
                        decision: o.decision,
                        component: Some(component),
                        head: Some(o.head),
                        tail: Some(o.tail),
                    })
                })
                .collect::<Result<_, supnorm_gof::error::Error>>()?
        }
    };
    let rejected = results.iter().filter(|r| r.decision.is_reject()).count();
    let text = match format {
        Format::Json => {
            let mut s = String::new();
            for r in &results {
                s.push_str(&json_line(r)?);
                s.push('\n');
            }
            s
        }
        Format::Csv => {
            let body: Vec<Vec<String>> = results
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    vec![
                        (i + 1).to_string(),
                        float(r.statistic),
                        float(r.threshold),
                        decision_str(r.decision).to_string(),
                    ]
                })
                .collect();
            csv_table(&["row", "statistic", "threshold", "decision"], &body)
        }
    };
    emit(out, &text)?;
    Ok(format!(
        "test: {} null, eta = {eta}, {} rows, {rejected} rejected",
        null.model().as_str(),
        results.len()
    ))
}

fn decision_str(d: Decision) -> &'static str {
    match d {
        Decision::Reject => "reject",
        Decision::Accept => "accept",
    }
}

#[derive(Serialize)]
struct PoissonDraw {
    /// Spiked coordinate, 1-based in the input order.
    index: usize,
    rates: Vec<f64>,
}

#[derive(Serialize)]
struct SimplexDrawOut {
    /// Category receiving mass, 1-based in the input order.
    index: usize,
    /// Categories losing mass, 1-based in the input order.
    subset: Vec<usize>,
    probs: Vec<f64>,
}

fn multinomial_prior(null: &Null, c: Option<f64>) -> Result<MultinomialSimplexPrior, CliError> {
    let Null::Multinomial { q0, n, .. } = null else {
        unreachable!("called with a multinomial null")
    };
    Ok(match c {
        Some(c) => MultinomialSimplexPrior::new(q0.clone(), *n, c, SPIKE_CONSTANT)?,
        None => MultinomialSimplexPrior::certified(q0.clone(), *n, SPIKE_CONSTANT)?,
    })
}

fn prior(null: &Null, c: Option<f64>, draws: usize, seed: u64, out: Option<&std::path::Path>) -> Result<String, CliError> {
    let perm = null.perm();
    let label = |sorted_pos: usize| perm.order[sorted_pos - 1] + 1;
    let mut rng = stream_rng(seed, 0);
    let mut text = String::new();
    let (scale, magnitude) = match null {
        Null::Poisson { mu, .. } => {
            let p = PoissonSpikePrior::new(mu.clone(), c.unwrap_or(1.0), SPIKE_CONSTANT)?;
            for _ in 0..draws {
                let j = p.draw_index(&mut rng);
                let line = PoissonDraw {
                    index: label(j),
                    rates: perm.to_original(&p.rates_for(j))?,
                };
                text.push_str(&json_line(&line)?);
                text.push('\n');
            }
            (p.c, p.magnitude())
        }
        Null::Multinomial { .. } => {
            let p = multinomial_prior(null, c)?;
            for _ in 0..draws {
                let d = p.draw_with_indices(&mut rng);
                let line = SimplexDrawOut {
                    index: label(d.j),
                    subset: d.subset.iter().map(|&s| label(s)).collect(),
                    probs: perm.to_original(&d.q)?,
                };
                text.push_str(&json_line(&line)?);
                text.push('\n');
            }
            (p.c, p.magnitude())
        }
    };
    emit(out, &text)?;
    Ok(format!(
        "prior: {} null, {draws} draws, c = {scale}, sup-norm size = {magnitude}, seed = {seed}",
        null.model().as_str()
    ))
}

#[derive(Serialize)]
struct FlatteningOut {
    lhs: f64,
    lhs_error: f64,
    rhs: f64,
    rhs_error: f64,
    holds: bool,
}

fn verify_flattening(null: &Null, c: f64, format: Format, out: Option<&std::path::Path>) -> Result<String, CliError> {
    let Null::Poisson { mu, .. } = null else {
        return Err(CliError::config("model", "verify flattening needs a poisson null"));
    };
    let p = PoissonSpikePrior::new(mu.clone(), c, SPIKE_CONSTANT)?;
    let check = verify_spike_flattening(&p)?;
    let res = FlatteningOut {
        lhs: check.lhs.value,
        lhs_error: check.lhs.error,
        rhs: check.rhs.value,
        rhs_error: check.rhs.error,
        holds: check.holds(1e-8),
    };
    let text = match format {
        Format::Json => json_line(&res)? + "\n",
        Format::Csv => csv_table(
            &["lhs", "lhs_error", "rhs", "rhs_error", "holds"],
            &[vec![
                float(res.lhs),
                float(res.lhs_error),
                float(res.rhs),
                float(res.rhs_error),
                res.holds.to_string(),
            ]],
        ),
    };
    emit(out, &text)?;
    Ok(format!(
        "verify flattening: TV before = {}, TV after = {}, holds = {}",
        res.lhs, res.rhs, res.holds
    ))
}

#[derive(Serialize)]
struct RiskOut {
    model: &'static str,
    eta: f64,
    c: f64,
    /// Sup-norm distance of every prior draw from the null.
    magnitude: f64,
    epsilon_star: f64,
    #[serde(flatten)]
    risk: RiskEstimate,
}

fn risk(
    null: &Null,
    eta: f64,
    c: Option<f64>,
    trials: u64,
    seed: u64,
    format: Format,
    out: Option<&std::path::Path>,
) -> Result<String, CliError> {
    let prof = profile(null)?;
    let (c, magnitude, risk) = match null {
        Null::Poisson { mu, .. } => {
            let p = PoissonSpikePrior::new(mu.clone(), c.unwrap_or(1.0), SPIKE_CONSTANT)?;
            let (c, mag) = (p.c, p.magnitude());
            (c, mag, estimate_poisson_risk(mu, &PoissonAlternative::Spike(p), eta, trials, seed)?)
        }
        Null::Multinomial { q0, n, .. } => {
            let p = multinomial_prior(null, c)?;
            let (c, mag) = (p.c, p.magnitude());
            let sampling = if n.as_count().is_ok() {
                Sampling::Exact
            } else {
                Sampling::Poissonized
            };
            let alt = MultinomialAlternative::Simplex(p);
            (c, mag, estimate_multinomial_risk(q0, *n, &alt, eta, sampling, trials, seed)?)
        }
    };
    let res = RiskOut {
        model: null.model().as_str(),
        eta,
        c,
        magnitude,
        epsilon_star: prof.epsilon_star,
        risk,
    };
    let text = match format {
        Format::Json => json_line(&res)? + "\n",
        Format::Csv => csv_table(
            &["eta", "c", "magnitude", "type1", "type2", "total", "ci", "trials", "seed"],
            &[vec![
                float(eta),
                float(c),
                float(magnitude),
                float(risk.type1),
                float(risk.type2),
                float(risk.total),
                float(risk.ci_halfwidth),
                risk.trials.to_string(),
                risk.seed.to_string(),
            ]],
        ),
    };
    emit(out, &text)?;
    Ok(format!(
        "risk: {} null, c = {c}, type I = {}, type II = {}, total = {} +- {} over {trials} trials",
        res.model, risk.type1, risk.type2, risk.total, risk.ci_halfwidth
    ))
}

fn sweep(
    null: &Null,
    grid: &[f64],
    alpha: AlphaRule,
    trials: u64,
    seed: u64,
    format: Format,
    out: Option<&std::path::Path>,
) -> Result<String, CliError> {
    let res: SweepResult = match null {
        Null::Poisson { mu, .. } => sweep_sharp_constant(mu, grid, alpha, trials, seed)?,
        Null::Multinomial { q0, n, .. } => sweep_multinomial_sharp_constant(q0, *n, grid, alpha, trials, seed)?,
    };
    let text = match format {
        Format::Json => json_line(&res)? + "\n",
        Format::Csv => {
            let regime = res.regime.as_str();
            let body: Vec<Vec<String>> = res
                .points()
                .map(|pt| {
                    vec![
                        float(pt.xi),
                        float(pt.epsilon),
                        float(pt.risk.type1),
                        float(pt.risk.type2),
                        float(pt.risk.total),
                        float(pt.risk.ci_halfwidth),
                        pt.risk.trials.to_string(),
                        pt.risk.seed.to_string(),
                        regime.to_string(),
                    ]
                })
                .collect();
            csv_table(
                &["xi", "epsilon", "type1", "type2", "total", "ci", "trials", "seed", "regime"],
                &body,
            )
        }
    };
    emit(out, &text)?;
    let first = res.risks.first().map_or(f64::NAN, |r| r.total);
    let last = res.risks.last().map_or(f64::NAN, |r| r.total);
    Ok(format!(
        "sweep: {} null, p = {}, regime = {}, {} grid points, risk {first} at xi = {} to {last} at xi = {}",
        null.model().as_str(),
        res.p,
        res.regime.as_str(),
        grid.len(),
        grid[0],
        grid[grid.len() - 1]
    ))
}
