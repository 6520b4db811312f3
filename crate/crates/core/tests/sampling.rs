use std::collections::HashMap;

use proptest::prelude::*;
use supnorm_gof::divergence::poisson_ln_pmf;
use supnorm_gof::model::{
    sample_multinomial, sample_poisson_product, sample_poissonized_multinomial, stream_rng, SampleSize, SimplexVector,
};

#[test]
fn poissonized_counts_match_product_poisson() {
    let q = SimplexVector::new(vec![0.7, 0.3]).unwrap();
    let n = SampleSize::new(2.0).unwrap();
    let draws = 1_000_000u64;
    let mut rng = stream_rng(11, 0);
    let mut hist: HashMap<(u64, u64), u64> = HashMap::new();
    for _ in 0..draws {
        let x = sample_poissonized_multinomial(n, &q, &mut rng);
        *hist.entry((x.counts[0], x.counts[1])).or_default() += 1;
    }
    let (l0, l1) = (1.4, 0.6);
    let mut covered = 0.0;
    let mut tv = 0.0;
    for a in 0..30u64 {
        for b in 0..30u64 {
            let p = (poisson_ln_pmf(l0, a) + poisson_ln_pmf(l1, b)).exp();
            covered += p;
            let emp = *hist.get(&(a, b)).unwrap_or(&0) as f64 / draws as f64;
            tv += (p - emp).abs();
        }
    }
    let outside: u64 = hist.iter().filter(|((a, b), _)| *a >= 30 || *b >= 30).map(|(_, c)| c).sum();
    tv = 0.5 * (tv + (1.0 - covered) + outside as f64 / draws as f64);
    assert!(tv <= 0.01, "tv = {tv}");
}

proptest! {
    #[test]
    fn multinomial_sums_to_n(
        raw in prop::collection::vec(0.0f64..1.0, 1..12),
        n in 0u64..5000,
        seed in any::<u64>(),
    ) {
        let total: f64 = raw.iter().sum();
        prop_assume!(total > 1e-3);
        let (q, _) = SimplexVector::from_unsorted(raw.iter().map(|v| v / total).collect()).unwrap();
        let x = sample_multinomial(n, &q, &mut stream_rng(seed, 0));
        prop_assert_eq!(x.total(), n);
        prop_assert_eq!(x.len(), q.len());
    }

    #[test]
    fn samplers_are_seed_deterministic(seed in any::<u64>(), stream in 0u64..8) {
        let q = SimplexVector::uniform(6).unwrap();
        let a = sample_multinomial(300, &q, &mut stream_rng(seed, stream));
        let b = sample_multinomial(300, &q, &mut stream_rng(seed, stream));
        prop_assert_eq!(a, b);
        let n = SampleSize::new(300.0).unwrap();
        let a = sample_poissonized_multinomial(n, &q, &mut stream_rng(seed, stream));
        let b = sample_poissonized_multinomial(n, &q, &mut stream_rng(seed, stream));
        prop_assert_eq!(a, b);
        let rates = [40.0, 3.0, 0.2];
        let a = sample_poisson_product(&rates, &mut stream_rng(seed, stream)).unwrap();
        let b = sample_poisson_product(&rates, &mut stream_rng(seed, stream)).unwrap();
        prop_assert_eq!(a, b);
    }
}
