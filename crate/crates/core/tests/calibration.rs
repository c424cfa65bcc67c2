mod common;

use common::checks::llr_scores;
use common::{normal, oracle_calibration_loss, rng};
use proptest::prelude::*;
use rand::Rng;

use tandem_core::train_calibrator;

#[test]
fn recovers_identity_on_true_llrs() {
    for (seed, priors) in [(1, (0.5, 0.5)), (2, (0.05, 0.95)), (3, (0.9, 0.1))] {
        let fit = train_calibrator(&llr_scores(5000, seed), priors).unwrap();
        let c = fit.calibrator;
        assert!((0.9..=1.1).contains(&c.a), "a = {}", c.a);
        assert!((-0.1..=0.1).contains(&c.b), "b = {}", c.b);
    }
}

#[test]
fn scaling_scores_rescales_the_slope() {
    let scores = llr_scores(5000, 4);
    let scaled: Vec<(f64, bool)> = scores.iter().map(|&(s, y)| (10.0 * s, y)).collect();
    let priors = (0.3, 0.7);
    let c1 = train_calibrator(&scores, priors).unwrap().calibrator;
    let c10 = train_calibrator(&scaled, priors).unwrap().calibrator;
    let ratio = c10.a / c1.a;
    assert!((ratio - 0.1).abs() <= 0.005, "ratio {ratio}");
    assert!((c10.b - c1.b).abs() < 1e-4);
    for (s, t) in scores.iter().zip(&scaled) {
        assert_eq!(c1.log_odds(s.0) > 0.0, c10.log_odds(t.0) > 0.0);
    }
}

#[test]
fn fit_matches_grid_search() {
    let mut r = rng(9);
    let scores: Vec<(f64, bool)> = (0..400)
        .map(|i| {
            let pos = i % 3 == 0;
            (2.0 * normal(&mut r) + if pos { 3.0 } else { 0.5 }, pos)
        })
        .collect();
    let priors = (0.2, 0.8);
    let fit = train_calibrator(&scores, priors).unwrap();
    let c = fit.calibrator;
    let at_fit = oracle_calibration_loss(&scores, priors, c.a, c.b);
    assert!((fit.loss - at_fit).abs() < 1e-12);
    // coarse grid, then a finer grid around its best point
    let mut best = (f64::INFINITY, 0.0, 0.0);
    let (mut ca, mut cb, mut step) = (1.0, 0.0, 0.25);
    for _ in 0..6 {
        for i in -20..=20 {
            for j in -20..=20 {
                let (a, b) = (ca + i as f64 * step, cb + j as f64 * step);
                let l = oracle_calibration_loss(&scores, priors, a, b);
                if l < best.0 {
                    best = (l, a, b);
                }
            }
        }
        (ca, cb, step) = (best.1, best.2, step / 8.0);
    }
    assert!(at_fit <= best.0 + 1e-10, "fit {at_fit} grid {}", best.0);
    assert!((c.a - best.1).abs() < 1e-3 && (c.b - best.2).abs() < 1e-3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gradient_vanishes_at_the_fit(seed in any::<u64>(), prior in 0.05..0.95f64, sep in 1.0..3.0f64) {
        let mut r = rng(seed);
        let n = r.random_range(50..200);
        let mut scores: Vec<(f64, bool)> = (0..n)
            .map(|_| {
                let pos = r.random_bool(0.5);
                (normal(&mut r) + if pos { sep } else { 0.0 }, pos)
            })
            .collect();
        // overlap keeps the optimum finite
        scores.push((sep + 1.0, false));
        scores.push((-1.0, true));
        let fit = train_calibrator(&scores, (prior, 1.0 - prior)).unwrap();
        prop_assert!(fit.grad_norm < 1e-6);
        prop_assert!(fit.calibrator.a > 0.0);
        let (a, b) = (fit.calibrator.a, fit.calibrator.b);
        let l = oracle_calibration_loss(&scores, (prior, 1.0 - prior), a, b);
        for (da, db) in [(1e-3, 0.0), (-1e-3, 0.0), (0.0, 1e-3), (0.0, -1e-3)] {
            prop_assert!(oracle_calibration_loss(&scores, (prior, 1.0 - prior), a + da, b + db) >= l - 1e-12);
        }
    }
}

#[test]
fn degenerate_inputs_are_rejected() {
    assert!(train_calibrator(&[(1.0, true), (2.0, true)], (0.5, 0.5)).is_err());
    assert!(train_calibrator(&[(0.0, true), (1.0, false)], (0.5, 0.5)).is_err());
    assert!(train_calibrator(&[(f64::NAN, true), (1.0, false)], (0.5, 0.5)).is_err());
}
