//! Randomized check instances shared by the integration tests and the
//! acceptance runner. Each returns the worst error it observed.

use rand::Rng;

use tandem_core::calibration::calibration_loss;
use tandem_core::nn::Layer;
use tandem_core::soft_tdcf::{soft_tdcf_gradients, SoftTrial};
use tandem_core::train::{asv_examples, bce_gradients, cm_examples, pg_surrogate, FrozenAction};
use tandem_core::{
    reward, sample_action, soft_tdcf_loss, Activation, Calibrator, PolicyPair, RewardSpec, Scorer, SoftThresholds,
    TandemCostParams, Trial, TrialClass, TrialLabel,
};

use super::{
    max_rel_err, normal, numeric_gradient, oracle_calibration_loss, oracle_soft_tdcf, random_trials, rng, sigmoid,
    with_params,
};

pub const EPS: f64 = 1e-5;

pub fn scorer(input: usize, seed: u64) -> Scorer {
    let act = if seed.is_multiple_of(2) {
        Activation::Tanh
    } else {
        Activation::Relu
    };
    Scorer::new(&[input, 4, 1], act, seed).unwrap()
}

pub fn batch(seed: u64) -> (Vec<Trial>, (usize, usize)) {
    let mut r = rng(seed);
    let dims = (r.random_range(1..4), r.random_range(1..4));
    let n = r.random_range(6..16);
    (random_trials(&mut r, n, dims), dims)
}

/// Soft t-DCF in raw scores and thresholds. Also folds in the gap between
/// the loss value and the oracle.
pub fn soft_tdcf_scores(seed: u64) -> f64 {
    let p = TandemCostParams::default();
    let mut r = rng(1000 + seed);
    let (trials, _) = batch(seed);
    let classes: Vec<_> = trials.iter().map(Trial::class).collect();
    let n = trials.len();
    let temperature = r.random_range(0.3..2.0);
    // [asv scores, cm scores, tau_asv, tau_cm]
    let mut x: Vec<f64> = (0..2 * n).map(|_| r.random_range(-2.0..2.0)).collect();
    x.push(r.random_range(-1.0..1.0));
    x.push(r.random_range(-1.0..1.0));
    let eval = |x: &[f64]| {
        let b: Vec<SoftTrial> = (0..n)
            .map(|i| SoftTrial {
                class: classes[i],
                asv_score: x[i],
                cm_score: x[n + i],
            })
            .collect();
        let taus = SoftThresholds {
            tau_asv: x[2 * n],
            tau_cm: x[2 * n + 1],
        };
        soft_tdcf_loss(&b, taus, &p, temperature).unwrap()
    };
    let got = eval(&x);
    let plain: Vec<_> = (0..n).map(|i| (classes[i], x[i], x[n + i])).collect();
    let value_gap = (got.loss - oracle_soft_tdcf(&plain, x[2 * n], x[2 * n + 1], &p, temperature)).abs();

    let mut analytic = got.d_asv.clone();
    analytic.extend(&got.d_cm);
    analytic.extend([got.d_tau_asv, got.d_tau_cm]);
    let numeric = numeric_gradient(|x| eval(x).loss, &x, EPS);
    max_rel_err(&analytic, &numeric).max(value_gap)
}

/// Soft t-DCF through both scorers and the thresholds.
pub fn soft_tdcf_params(seed: u64) -> f64 {
    let p = TandemCostParams::default();
    let (trials, dims) = batch(seed);
    let refs: Vec<&Trial> = trials.iter().collect();
    let (asv, cm) = (scorer(dims.0, seed), scorer(dims.1, seed + 500));
    let taus = SoftThresholds {
        tau_asv: 0.1,
        tau_cm: -0.2,
    };
    let temperature = 0.5 + (seed % 20) as f64 / 20.0;
    let g = soft_tdcf_gradients(&asv, &cm, taus, &refs, &p, temperature).unwrap();
    let (pa, pc) = (asv.params(), cm.params());
    let mut x = pa.clone();
    x.extend(&pc);
    x.extend([taus.tau_asv, taus.tau_cm]);
    let loss = |x: &[f64]| {
        let a = with_params(&asv, &x[..pa.len()]);
        let c = with_params(&cm, &x[pa.len()..pa.len() + pc.len()]);
        let t = SoftThresholds {
            tau_asv: x[x.len() - 2],
            tau_cm: x[x.len() - 1],
        };
        soft_tdcf_gradients(&a, &c, t, &refs, &p, temperature).unwrap().loss
    };
    let mut analytic = g.asv.flat();
    analytic.extend(g.cm.flat());
    analytic.extend([g.d_tau_asv, g.d_tau_cm]);
    max_rel_err(&analytic, &numeric_gradient(loss, &x, EPS))
}

/// Weighted cross-entropy of both subsystems.
pub fn cross_entropy(seed: u64) -> f64 {
    let (trials, dims) = batch(seed);
    let weights = (1.0 + (seed % 10) as f64 / 10.0, 0.7);
    let mut worst: f64 = 0.0;
    for (s, examples) in [
        (scorer(dims.0, seed), asv_examples(&trials, weights)),
        (scorer(dims.1, seed + 7), cm_examples(&trials, weights)),
    ] {
        let (_, tape) = bce_gradients(&s, &examples).unwrap();
        let numeric = numeric_gradient(
            |x| bce_gradients(&with_params(&s, x), &examples).unwrap().0,
            &s.params(),
            EPS,
        );
        worst = worst.max(max_rel_err(&tape.flat(), &numeric));
    }
    worst
}

/// Calibration loss in `(a, b)`, plus the gap to the oracle loss value.
pub fn calibration(seed: u64) -> f64 {
    let mut r = rng(2000 + seed);
    let n = r.random_range(4..40);
    let mut scores: Vec<(f64, bool)> = (0..n)
        .map(|_| {
            let pos = r.random_bool(0.5);
            (normal(&mut r) * 2.0 + if pos { 1.0 } else { -1.0 }, pos)
        })
        .collect();
    scores[0].1 = true;
    scores[1].1 = false;
    let prior = r.random_range(0.05..0.95);
    let priors = (prior, 1.0 - prior);
    let (a, b) = (r.random_range(0.1..3.0), r.random_range(-2.0..2.0));
    let (loss, (ga, gb)) = calibration_loss(&scores, priors, a, b);
    let value_gap = (loss - oracle_calibration_loss(&scores, priors, a, b)).abs();
    let numeric = numeric_gradient(|x| calibration_loss(&scores, priors, x[0], x[1]).0, &[a, b], EPS);
    max_rel_err(&[ga, gb], &numeric).max(value_gap)
}

/// Frozen-action policy-gradient surrogate in the MLP parameters and, on
/// every third instance, in the calibration heads too.
pub fn pg_surrogate_instance(seed: u64) -> f64 {
    let spec = RewardSpec::tdcf_single(TandemCostParams::default()).unwrap();
    let mut r = rng(3000 + seed);
    let (trials, dims) = batch(seed);
    let refs: Vec<&Trial> = trials.iter().collect();
    let mut pair = PolicyPair::new(scorer(dims.0, seed), scorer(dims.1, seed + 3));
    let calibrated = seed.is_multiple_of(3);
    if calibrated {
        pair.asv.calibration = Some(Calibrator {
            a: 1.3,
            b: -0.2,
            prior_log_odds: 0.4,
        });
        pair.cm.calibration = Some(Calibrator {
            a: 0.8,
            b: 0.1,
            prior_log_odds: -0.3,
        });
    }
    let actions: Vec<FrozenAction> = trials
        .iter()
        .map(|t| {
            let (p_asv, p_cm) = pair.accept_probabilities(t).unwrap();
            let (a_asv, _) = sample_action(p_asv, &mut r);
            let (a_cm, _) = sample_action(p_cm, &mut r);
            FrozenAction {
                a_asv,
                a_cm,
                reward: reward(&spec, a_asv.and(a_cm), &t.label),
            }
        })
        .collect();
    let g = pg_surrogate(&pair, &refs, &actions).unwrap();

    let (pa, pc) = (pair.asv.params(), pair.cm.params());
    let mut x = pa.clone();
    x.extend(&pc);
    let loss = |x: &[f64]| {
        let mut q = pair.clone();
        q.asv = with_params(&pair.asv, &x[..pa.len()]);
        q.cm = with_params(&pair.cm, &x[pa.len()..]);
        pg_surrogate(&q, &refs, &actions).unwrap().loss
    };
    let mut analytic = g.asv.flat();
    analytic.extend(g.cm.flat());
    let mut worst = max_rel_err(&analytic, &numeric_gradient(loss, &x, EPS));

    if calibrated {
        let (ca, cc) = (pair.asv.calibration.unwrap(), pair.cm.calibration.unwrap());
        let loss = |x: &[f64]| {
            let mut q = pair.clone();
            q.asv.calibration = Some(Calibrator { a: x[0], b: x[1], ..ca });
            q.cm.calibration = Some(Calibrator { a: x[2], b: x[3], ..cc });
            pg_surrogate(&q, &refs, &actions).unwrap().loss
        };
        let analytic = [
            g.asv.calibration.0,
            g.asv.calibration.1,
            g.cm.calibration.0,
            g.cm.calibration.1,
        ];
        let numeric = numeric_gradient(loss, &[ca.a, ca.b, cc.a, cc.b], EPS);
        worst = worst.max(max_rel_err(&analytic, &numeric));
    }
    worst
}

fn linear(w: f64, b: f64) -> Scorer {
    Scorer::from_layers(vec![Layer::new(1, 1, vec![w], vec![b]).unwrap()], Activation::Tanh).unwrap()
}

/// Parameters `[w_asv, b_asv, w_cm, b_cm]` of the toy tandem.
pub const TOY_PARAMS: [f64; 4] = [0.5, 0.1, 0.6, -0.1];

/// Four-trial tandem of one-input linear scorers. Features are signed so
/// that every trial pulls each weight the same way.
pub fn toy() -> (PolicyPair, Vec<Trial>) {
    let [wa, ba, wc, bc] = TOY_PARAMS;
    let pair = PolicyPair::new(linear(wa, ba), linear(wc, bc));
    let trials = vec![
        Trial::new("tar1", vec![1.0], vec![0.8], TrialLabel::target(), (1, 1)).unwrap(),
        Trial::new("non", vec![-1.0], vec![-0.5], TrialLabel::nontarget(), (1, 1)).unwrap(),
        Trial::new("spf", vec![-0.8], vec![-1.0], TrialLabel::spoof("A01").unwrap(), (1, 1)).unwrap(),
        Trial::new("tar2", vec![0.6], vec![1.2], TrialLabel::target(), (1, 1)).unwrap(),
    ];
    (pair, trials)
}

/// Expected-reward gradient of the toy by enumerating the four joint
/// actions of every trial.
pub fn enumerated_gradient(params: [f64; 4], trials: &[Trial], p: &TandemCostParams) -> [f64; 4] {
    let [wa, ba, wc, bc] = params;
    let mut g = [0.0; 4];
    for t in trials {
        let (xa, xc) = (t.x_asv[0], t.x_cm[0]);
        let (pa, pc) = (sigmoid(wa * xa + ba), sigmoid(wc * xc + bc));
        let (dpa, dpc) = (pa * (1.0 - pa), pc * (1.0 - pc));
        // (reward if both accept, reward otherwise)
        let (r_acc, r_rej) = match t.class() {
            TrialClass::Target => (0.0, -p.c_miss * p.rho_tar),
            TrialClass::Nontarget => (-p.c_fa * p.rho_non, 0.0),
            TrialClass::Spoof => (-p.c_fa_spoof * p.rho_spoof, 0.0),
        };
        for asv_acc in [true, false] {
            for cm_acc in [true, false] {
                let r = if asv_acc && cm_acc { r_acc } else { r_rej };
                let (prob_a, dprob_a) = if asv_acc { (pa, dpa) } else { (1.0 - pa, -dpa) };
                let (prob_c, dprob_c) = if cm_acc { (pc, dpc) } else { (1.0 - pc, -dpc) };
                g[0] += r * dprob_a * prob_c * xa;
                g[1] += r * dprob_a * prob_c;
                g[2] += r * prob_a * dprob_c * xc;
                g[3] += r * prob_a * dprob_c;
            }
        }
    }
    g.map(|v| v / trials.len() as f64)
}

/// Mean and standard error of `n` Monte Carlo policy-gradient estimates on
/// the toy, next to the enumerated gradient.
pub struct PgEstimate {
    pub mean: [f64; 4],
    pub std_err: [f64; 4],
    pub exact: [f64; 4],
}

pub fn monte_carlo_pg(n: usize, seed: u64) -> PgEstimate {
    let (pair, trials) = toy();
    let refs: Vec<&Trial> = trials.iter().collect();
    let p = TandemCostParams::default();
    let spec = RewardSpec::tdcf_single(p).unwrap();
    let probs: Vec<(f64, f64)> = trials.iter().map(|t| pair.accept_probabilities(t).unwrap()).collect();
    let mut r = rng(seed);
    let (mut sum, mut sum_sq) = ([0.0; 4], [0.0; 4]);
    for _ in 0..n {
        let actions: Vec<FrozenAction> = trials
            .iter()
            .zip(&probs)
            .map(|(t, &(pa, pc))| {
                let (a_asv, _) = sample_action(pa, &mut r);
                let (a_cm, _) = sample_action(pc, &mut r);
                FrozenAction {
                    a_asv,
                    a_cm,
                    reward: reward(&spec, a_asv.and(a_cm), &t.label),
                }
            })
            .collect();
        let g = pg_surrogate(&pair, &refs, &actions).unwrap();
        let flat: Vec<f64> = g.asv.flat().into_iter().chain(g.cm.flat()).collect();
        for k in 0..4 {
            sum[k] += flat[k];
            sum_sq[k] += flat[k] * flat[k];
        }
    }
    let nf = n as f64;
    let mean = sum.map(|s| s / nf);
    let mut std_err = [0.0; 4];
    for k in 0..4 {
        std_err[k] = ((sum_sq[k] / nf - mean[k] * mean[k]) / nf).sqrt();
    }
    PgEstimate {
        mean,
        std_err,
        exact: enumerated_gradient(TOY_PARAMS, &trials, &p),
    }
}

/// Scores that are exact log-likelihood ratios of two equal-variance
/// Gaussians, `n` per class.
pub fn llr_scores(n: usize, seed: u64) -> Vec<(f64, bool)> {
    let (mu_pos, mu_neg, sigma) = (1.5, -0.5, 1.2);
    let llr = |x: f64| (mu_pos - mu_neg) / (sigma * sigma) * (x - (mu_pos + mu_neg) / 2.0);
    let mut r = rng(seed);
    let mut out = Vec::with_capacity(2 * n);
    for _ in 0..n {
        out.push((llr(mu_pos + sigma * normal(&mut r)), true));
        out.push((llr(mu_neg + sigma * normal(&mut r)), false));
    }
    out
}
