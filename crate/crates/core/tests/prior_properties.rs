use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use supnorm_gof::divergence::{
    chi_square_enumerated, chi_square_poisson_enumerated, truncated_poisson_pmf, FiniteProductDist,
};
use supnorm_gof::model::{stream_rng, RateVector, SampleSize, SimplexVector};
use supnorm_gof::priors::{
    flatten_poisson_pair, multinomial_parametric_alternative, parametric_chi_square, spike_support_radius,
    verify_flattening, MultinomialSimplexPrior, PoissonSpikePrior,
};
use supnorm_gof::rates::multinomial_rate;

fn sorted(lo: f64, hi: f64, len: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(lo..hi, len).prop_map(|mut v| {
        v.sort_by(|a, b| b.partial_cmp(a).unwrap());
        v
    })
}

fn chi_square_gof(counts: &[u64]) -> bool {
    let total: u64 = counts.iter().sum();
    let e = total as f64 / counts.len() as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    let crit = ChiSquared::new((counts.len() - 1) as f64).unwrap().inverse_cdf(1.0 - 1e-4);
    stat <= crit
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spike_draws_are_separated(
        r in sorted(0.01, 30.0, 1..=40),
        c in 0.05f64..3.0,
        extra in 0.0f64..20.0,
        seed in any::<u64>(),
    ) {
        let mu = RateVector::new(r).unwrap();
        let prior = PoissonSpikePrior::new(mu.clone(), c, std::f64::consts::E + extra).unwrap();
        let floor = c * spike_support_radius(&mu).unwrap();
        let mut rng = stream_rng(seed, 0);
        for _ in 0..200 {
            let lam = prior.draw(&mut rng);
            let dev = lam.iter().zip(mu.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!(dev >= floor * (1.0 - 1e-12), "{dev} < {floor}");
        }
    }

    #[test]
    fn simplex_draws_stay_in_the_alternative(
        raw in prop::collection::vec(0.05f64..1.0, 3..60),
        n in 10.0f64..1e5,
        seed in any::<u64>(),
    ) {
        let s: f64 = raw.iter().sum();
        let (q0, _) = SimplexVector::from_unsorted(raw.iter().map(|v| v / s).collect()).unwrap();
        let n = SampleSize::new(n).unwrap();
        let prior = MultinomialSimplexPrior::certified(q0.clone(), n, std::f64::consts::E).unwrap();
        let radius = prior.magnitude();
        let mut rng = stream_rng(seed, 0);
        for _ in 0..200 {
            let q = prior.draw(&mut rng);
            prop_assert!(q.iter().all(|&v| v >= 0.0));
            prop_assert!((q.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            let dev = q.iter().zip(q0.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!((dev - radius).abs() <= 1e-12 * radius.max(1e-300) + 1e-15);
        }
    }

    #[test]
    fn flattening_never_increases_distance(
        omega in sorted(0.0, 3.0, 1..=3),
        k_frac in 0.0f64..1.0,
        floor_frac in 0.0f64..=1.0,
        head_atoms in prop::collection::vec((0.1f64..1.0, prop::collection::vec(0.0f64..1.0, 3)), 1..4),
        tail_atoms in prop::collection::vec((0.1f64..1.0, prop::collection::vec(0.0f64..3.0, 3)), 1..3),
    ) {
        let p = omega.len();
        let k = 1 + ((k_frac * p.min(2) as f64) as usize).min(p.min(2) - 1);
        let under = floor_frac * omega[k - 1];
        let mut prior = Vec::new();
        for (wh, uh) in &head_atoms {
            for (wt, ut) in &tail_atoms {
                let mut xi: Vec<f64> = (0..k).map(|j| {
                    let lo = omega[j] - under;
                    lo + uh[j] * (3.0 - lo)
                }).collect();
                xi.extend_from_slice(&ut[..p - k]);
                prior.push((wh * wt, xi));
            }
        }
        let pair = flatten_poisson_pair(&omega, &prior, k, under, 1e-10).unwrap();
        let check = verify_flattening(&pair).unwrap();
        prop_assert!(check.lhs.value <= check.rhs.value + 1e-8, "{:?}", check);
    }

    #[test]
    fn parametric_chi_square_identity(
        raw in prop::collection::vec(0.05f64..1.0, 2..=3),
        n in 1.0f64..8.0,
        c in 0.0f64..=1.0,
    ) {
        let s: f64 = raw.iter().sum();
        let (q0, _) = SimplexVector::from_unsorted(raw.iter().map(|v| v / s).collect()).unwrap();
        let n = SampleSize::new(n).unwrap();
        let q1 = multinomial_parametric_alternative(&q0, n, c).unwrap();
        let a: Vec<f64> = q1.iter().map(|v| v * n.value()).collect();
        let b: Vec<f64> = q0.as_slice().iter().map(|v| v * n.value()).collect();
        let closed = parametric_chi_square(&q0, n, c);
        let summed = chi_square_poisson_enumerated(&a, &b, 1e-15).unwrap().value;
        // Joint box over both laws, sized for the tilted rate a²/b.
        let kmax: Vec<usize> = a.iter().zip(&b).map(|(&x, &y)| {
            truncated_poisson_pmf(x.max(y).max(x * x / y), 1e-16).unwrap().len() - 1
        }).collect();
        let joint = chi_square_enumerated(
            &FiniteProductDist::poisson_on(&a, &kmax).unwrap(),
            &FiniteProductDist::poisson_on(&b, &kmax).unwrap(),
        ).unwrap().value;
        let scale = closed.max(1e-6);
        prop_assert!((closed - summed).abs() <= 1e-8 * scale, "{closed} vs {summed}");
        prop_assert!((closed - joint).abs() <= 1e-8 * scale, "{closed} vs {joint}");
        prop_assert!(closed <= (c * c).exp_m1() + 1e-15);
    }
}

#[test]
fn spike_index_is_uniform() {
    let mu = RateVector::constant(1.0, 12).unwrap();
    let prior = PoissonSpikePrior::new(mu, 0.5, std::f64::consts::E).unwrap();
    let mut counts = vec![0u64; prior.j_star];
    let mut rng = stream_rng(5, 0);
    for _ in 0..100_000 {
        counts[prior.draw_index(&mut rng) - 1] += 1;
    }
    assert!(chi_square_gof(&counts));
}

#[test]
fn simplex_indices_are_uniform() {
    let base = SimplexVector::uniform(8).unwrap();
    let prior = MultinomialSimplexPrior {
        base,
        n: SampleSize::new(800.0).unwrap(),
        j_star: 6,
        psi: 1.0,
        m: 2,
        c: 1.0,
        c_tilde: std::f64::consts::E,
    };
    // J on 2..=7, then an unordered pair from the remaining 5 cells.
    let mut joint = vec![0u64; 6 * 10];
    let mut rng = stream_rng(9, 0);
    for _ in 0..100_000 {
        let d = prior.draw_with_indices(&mut rng);
        let mut rest: Vec<usize> = (2..=7).filter(|&i| i != d.j).collect();
        rest.sort_unstable();
        let mut s = d.subset.clone();
        s.sort_unstable();
        let a = rest.iter().position(|&v| v == s[0]).unwrap();
        let b = rest.iter().position(|&v| v == s[1]).unwrap();
        let pair = (0..a).map(|i| 4 - i).sum::<usize>() + (b - a - 1);
        joint[(d.j - 2) * 10 + pair] += 1;
    }
    assert!(chi_square_gof(&joint));
    let marg: Vec<u64> = joint.chunks(10).map(|c| c.iter().sum()).collect();
    assert!(chi_square_gof(&marg));
}

#[test]
fn certified_simplex_prior_exists_on_large_nulls() {
    let q0 = SimplexVector::uniform(400).unwrap();
    let n = SampleSize::new(2000.0).unwrap();
    let prof = multinomial_rate(&q0, n, std::f64::consts::E).unwrap();
    let prior = MultinomialSimplexPrior::certified(q0, n, std::f64::consts::E).unwrap();
    assert_eq!(prior.m, prof.m);
    assert!(prior.c > 0.0 && prior.c <= 1.0);
}
