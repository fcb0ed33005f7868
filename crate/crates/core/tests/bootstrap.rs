use constraint_tax::metrics::{paired_delta_cis, rate_ci, BootstrapConfig};
use constraint_tax::taskgen::{RngSeed, StreamRng};

// Smoke check that the percentile interval actually covers: simulate
// Bernoulli samples of known rate and count how often the CI contains it.
#[test]
fn percentile_interval_covers_the_true_rate() {
    let p = 0.7;
    let sims = 500;
    let mut covered = 0;
    for s in 0..sims {
        let mut rng = StreamRng::new(RngSeed(99), "coverage", s);
        let data: Vec<bool> = (0..200).map(|_| rng.chance(p)).collect();
        let cfg = BootstrapConfig {
            resamples: 400,
            seed: s,
            ..BootstrapConfig::default()
        };
        let ci = rate_ci(&data, &cfg).unwrap();
        if ci.low <= p && p <= ci.high {
            covered += 1;
        }
    }
    let coverage = covered as f64 / sims as f64;
    assert!(coverage >= 0.90, "coverage {coverage}");
}

#[test]
fn paired_interval_brackets_the_observed_delta() {
    // 200 pairs: baseline right on 183, constrained right on 96, the
    // constrained successes a subset of the baseline ones
    let pairs: Vec<[(bool, bool); 1]> = (0..200).map(|i| [(i < 183, i < 96)]).collect();
    let [ci] = paired_delta_cis(&pairs, &BootstrapConfig::default()).unwrap();
    let observed = (96.0 - 183.0) / 200.0;
    assert!(ci.low < observed && observed < ci.high, "{ci:?}");
    assert!(ci.high < 0.0);
    assert_eq!(Some([ci]), paired_delta_cis(&pairs, &BootstrapConfig::default()));
}

#[test]
fn different_seeds_give_different_intervals() {
    let data: Vec<bool> = (0..200).map(|i| i % 3 != 0).collect();
    let a = rate_ci(&data, &BootstrapConfig::default()).unwrap();
    let b = rate_ci(&data, &BootstrapConfig { seed: 1, ..BootstrapConfig::default() }).unwrap();
    assert_ne!((a.low, a.high, a.seed), (b.low, b.high, b.seed));
}
