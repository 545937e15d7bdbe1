//! The synthetic benchmark against its closed-form Bayes accuracy.

use ibm_core::harness::{generate_split_gaussians, run_sequence_on, DataSpec, GaussianSpec, RunConfig};
use ibm_core::SeededRng;
use statrs::distribution::{ContinuousCDF, Normal};

fn spec(separation: f64, informative: usize, test: usize) -> GaussianSpec {
    GaussianSpec {
        tasks: 1,
        dims: 12,
        informative_per_task: informative,
        train_per_task: 512,
        test_per_task: test,
        separation,
    }
}

/// Class means sit `separation` apart with unit noise, so the optimal rule errs with
/// probability `Φ(−separation / 2)`.
fn bayes_accuracy(separation: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().cdf(separation / 2.0)
}

#[test]
fn optimal_rule_matches_closed_form() {
    for (separation, informative) in [(0.0, 1), (1.5, 2), (3.0, 3), (6.0, 4)] {
        let n = 40_000;
        let task = &generate_split_gaussians(&spec(separation, informative, n), &mut SeededRng::new(8)).unwrap()[0];
        let hits = (0..n)
            .filter(|&i| {
                let s: f64 = task.informative.iter().map(|&d| task.test.x.row(i)[d]).sum();
                usize::from(s > 0.0) == task.test.y[i]
            })
            .count();
        let observed = hits as f64 / n as f64;
        let expected = bayes_accuracy(separation);
        let stderr = (expected * (1.0 - expected) / n as f64).sqrt();
        assert!(
            (observed - expected).abs() <= 4.0 * stderr + 1e-9,
            "separation {separation}: {observed} vs {expected}"
        );
    }
    assert!(bayes_accuracy(6.0) > 0.99);
}

fn trained_accuracy(separation: f64) -> f64 {
    let cfg = RunConfig {
        epochs_per_task: 10,
        hidden_widths: vec![16, 16],
        multitask_baseline: false,
        data: DataSpec::SplitGaussians(spec(separation, 2, 2000)),
        ..RunConfig::default()
    };
    let tasks = match &cfg.data {
        DataSpec::SplitGaussians(g) => generate_split_gaussians(g, &mut SeededRng::new(3)).unwrap(),
        DataSpec::Idx(_) => unreachable!(),
    };
    run_sequence_on(&cfg, &tasks).unwrap().report.acc
}

#[test]
fn trained_network_tracks_separation() {
    let wide = trained_accuracy(6.0);
    assert!(wide > 0.95, "separation 6: {wide}");
    let none = trained_accuracy(0.0);
    assert!((none - 0.5).abs() <= 0.05, "separation 0: {none}");
}
