//! Reference implementations used as test oracles. Nothing here calls into
//! the metric or gradient code under test; everything is recomputed by
//! direct counting or finite differences.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub mod checks;

use tandem_core::{ScoreEntry, ScoreSet, TandemCostParams, TrialClass, TrialLabel};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Equal error rate by brute force over the thresholds `min - 1`, the
/// midpoints `(a + b) / 2` of neighbouring distinct scores and `max + 1`
/// (accept iff score > t), keeping the first threshold with the smallest rate
/// gap. Any threshold inside a gap gives the same rates on `scores`; the
/// midpoint matters once the threshold is applied to other trials.
///
/// Returns `(threshold, p_miss, p_fa)`.
pub fn oracle_eer_point(scores: &[(f64, bool)]) -> (f64, f64, f64) {
    let mut v: Vec<f64> = scores.iter().map(|s| s.0).collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v.dedup();
    let mut ts = vec![v[0] - 1.0];
    ts.extend(v.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    ts.push(v[v.len() - 1] + 1.0);
    let n_pos = scores.iter().filter(|s| s.1).count() as f64;
    let n_neg = scores.len() as f64 - n_pos;
    let mut best = (f64::INFINITY, 0.0, 0.0, 0.0);
    for t in ts {
        let miss = scores.iter().filter(|s| s.1 && s.0 <= t).count() as f64 / n_pos;
        let fa = scores.iter().filter(|s| !s.1 && s.0 > t).count() as f64 / n_neg;
        if (miss - fa).abs() < best.0 {
            best = ((miss - fa).abs(), t, miss, fa);
        }
    }
    (best.1, best.2, best.3)
}

pub fn oracle_eer(scores: &[(f64, bool)]) -> f64 {
    let (_, miss, fa) = oracle_eer_point(scores);
    (miss + fa) / 2.0
}

/// Tandem cost written out term by term from counts.
pub fn oracle_tdcf(s: &ScoreSet, tau_asv: f64, tau_cm: f64, p: &TandemCostParams) -> f64 {
    let (mut n_tar, mut n_non, mut n_spoof) = (0.0, 0.0, 0.0);
    let (mut miss_asv, mut miss_cm, mut fa_non, mut fa_spoof) = (0.0, 0.0, 0.0, 0.0);
    for e in s.entries() {
        let cm = e.cm_score > tau_cm;
        let asv = e.asv_score > tau_asv;
        match e.label.class() {
            TrialClass::Target => {
                n_tar += 1.0;
                if !cm {
                    miss_cm += 1.0;
                } else if !asv {
                    miss_asv += 1.0;
                }
            }
            TrialClass::Nontarget => {
                n_non += 1.0;
                if cm && asv {
                    fa_non += 1.0;
                }
            }
            TrialClass::Spoof => {
                n_spoof += 1.0;
                if cm && asv {
                    fa_spoof += 1.0;
                }
            }
        }
    }
    p.c_miss * p.rho_tar * (miss_asv / n_tar + miss_cm / n_tar)
        + p.c_fa * p.rho_non * fa_non / n_non
        + p.c_fa_spoof * p.rho_spoof * fa_spoof / n_spoof
}

/// Minimum normalized t-DCF by enumerating every CM threshold, with the ASV
/// threshold at its bonafide EER point. Returns `(normalized, raw)`.
pub fn oracle_min_tdcf(s: &ScoreSet, p: &TandemCostParams) -> (f64, f64) {
    let bona: Vec<(f64, bool)> = s
        .entries()
        .iter()
        .filter(|e| e.label.class() != TrialClass::Spoof)
        .map(|e| (e.asv_score, e.label.class() == TrialClass::Target))
        .collect();
    let tau_asv = oracle_eer_point(&bona).0;
    let mut ts: Vec<f64> = s.entries().iter().map(|e| e.cm_score).collect();
    ts.push(f64::NEG_INFINITY);
    let top = ts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw = ts
        .iter()
        .map(|&t| oracle_tdcf(s, tau_asv, t, p))
        .fold(f64::INFINITY, f64::min);
    let norm = oracle_tdcf(s, tau_asv, f64::NEG_INFINITY, p).min(oracle_tdcf(s, tau_asv, top, p));
    (if norm > 0.0 { raw / norm } else { 0.0 }, raw)
}

/// Random labelled score list with both classes present. Half the time the
/// scores sit on a coarse grid so that ties occur.
pub fn random_scores(rng: &mut impl Rng, max_len: usize) -> Vec<(f64, bool)> {
    let n = rng.random_range(2..=max_len);
    let coarse = rng.random_bool(0.5);
    let sep = rng.random_range(0.0..3.0);
    let mut out: Vec<(f64, bool)> = (0..n)
        .map(|_| {
            let pos = rng.random_bool(0.5);
            let mut s = normal(rng) + if pos { sep } else { 0.0 };
            if coarse {
                s = (s * 2.0).round() / 2.0;
            }
            (s, pos)
        })
        .collect();
    out[0].1 = true;
    out[1].1 = false;
    out
}

/// Random score set holding every class, with up to `max_len` trials.
pub fn random_score_set(rng: &mut impl Rng, max_len: usize) -> ScoreSet {
    let n = rng.random_range(3..=max_len);
    let coarse = rng.random_bool(0.5);
    let attacks = ["A01", "A02", "A03"];
    let entries = (0..n)
        .map(|i| {
            let class = match i {
                0 => 0,
                1 => 1,
                2 => 2,
                _ => rng.random_range(0..3),
            };
            let (label, asv_mu, cm_mu) = match class {
                0 => (TrialLabel::target(), 2.0, 2.0),
                1 => (TrialLabel::nontarget(), -1.0, 2.0),
                _ => (
                    TrialLabel::spoof(attacks[rng.random_range(0..attacks.len())]).unwrap(),
                    1.0,
                    -1.0,
                ),
            };
            let mut a = asv_mu + 1.5 * normal(rng);
            let mut c = cm_mu + 1.5 * normal(rng);
            if coarse {
                a = a.round();
                c = c.round();
            }
            ScoreEntry {
                trial_id: format!("t{i:04}"),
                label,
                asv_score: a,
                cm_score: c,
            }
        })
        .collect();
    ScoreSet::new(entries).unwrap()
}

/// Central-difference gradient of `f` at `x`.
pub fn numeric_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut up = x.to_vec();
            let mut down = x.to_vec();
            up[i] += eps;
            down[i] -= eps;
            (f(&up) - f(&down)) / (2.0 * eps)
        })
        .collect()
}

/// Relative error, compared in absolute terms once both values are tiny.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| rel_err(x, y)).fold(0.0, f64::max)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Prior-weighted logistic calibration loss.
pub fn oracle_calibration_loss(scores: &[(f64, bool)], priors: (f64, f64), a: f64, b: f64) -> f64 {
    let plo = (priors.0 / priors.1).ln();
    let n_pos = scores.iter().filter(|s| s.1).count() as f64;
    let n_neg = scores.len() as f64 - n_pos;
    let pos: f64 = scores
        .iter()
        .filter(|s| s.1)
        .map(|s| softplus(-(a * s.0 + b + plo)))
        .sum();
    let neg: f64 = scores
        .iter()
        .filter(|s| !s.1)
        .map(|s| softplus(a * s.0 + b + plo))
        .sum();
    priors.0 * pos / n_pos + priors.1 * neg / n_neg
}

/// Random trials covering every class, with features drawn around class
/// dependent means.
pub fn random_trials(rng: &mut impl Rng, n: usize, dims: (usize, usize)) -> Vec<tandem_core::Trial> {
    (0..n)
        .map(|i| {
            let class = if i < 3 { i } else { rng.random_range(0..3) };
            let label = match class {
                0 => TrialLabel::target(),
                1 => TrialLabel::nontarget(),
                _ => TrialLabel::spoof(format!("A0{}", rng.random_range(1..4))).unwrap(),
            };
            let shift = class as f64 - 1.0;
            let x_asv = (0..dims.0).map(|_| normal(rng) + shift).collect();
            let x_cm = (0..dims.1).map(|_| normal(rng) - shift).collect();
            tandem_core::Trial::new(format!("t{i:03}"), x_asv, x_cm, label, dims).unwrap()
        })
        .collect()
}

/// Copy of `s` with its parameters replaced by `params`.
pub fn with_params(s: &tandem_core::Scorer, params: &[f64]) -> tandem_core::Scorer {
    let mut out = s.clone();
    for (i, &v) in params.iter().enumerate() {
        *out.param_mut(i) = v;
    }
    out
}

/// Soft t-DCF written directly from the sigmoid acceptance probabilities.
pub fn oracle_soft_tdcf(
    batch: &[(TrialClass, f64, f64)],
    tau_asv: f64,
    tau_cm: f64,
    p: &TandemCostParams,
    temperature: f64,
) -> f64 {
    let acc = |s: f64, t: f64| sigmoid((s - t) / temperature);
    let mean = |c: TrialClass, f: &dyn Fn(f64, f64) -> f64| {
        let v: Vec<f64> = batch.iter().filter(|b| b.0 == c).map(|b| f(b.1, b.2)).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let p_a = mean(TrialClass::Target, &|a, c| acc(c, tau_cm) * (1.0 - acc(a, tau_asv)));
    let p_d = mean(TrialClass::Target, &|_, c| 1.0 - acc(c, tau_cm));
    let p_b = mean(TrialClass::Nontarget, &|a, c| acc(c, tau_cm) * acc(a, tau_asv));
    let p_c = mean(TrialClass::Spoof, &|a, c| acc(c, tau_cm) * acc(a, tau_asv));
    p.c_miss * p.rho_tar * (p_a + p_d) + p.c_fa * p.rho_non * p_b + p.c_fa_spoof * p.rho_spoof * p_c
}
