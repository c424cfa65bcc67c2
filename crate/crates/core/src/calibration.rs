//! Affine score calibration and LLR-to-posterior conversion.
//!
//! A calibrated score `a * s + b` is treated as a log-likelihood ratio. Adding
//! the prior log-odds turns it into posterior log-odds, and the sigmoid of that
//! is the probability of accepting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Logistic function, stable for large `|s|`.
pub fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `log(p / (1 - p))`.
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibrator {
    pub a: f64,
    pub b: f64,
    pub prior_log_odds: f64,
}

impl Calibrator {
    pub fn identity() -> Self {
        Calibrator {
            a: 1.0,
            b: 0.0,
            prior_log_odds: 0.0,
        }
    }

    /// Calibrated log-likelihood ratio.
    pub fn llr(&self, raw_score: f64) -> f64 {
        self.a * raw_score + self.b
    }

    /// Posterior log-odds of the accept hypothesis.
    pub fn log_odds(&self, raw_score: f64) -> f64 {
        self.llr(raw_score) + self.prior_log_odds
    }

    pub fn accept_probability(&self, raw_score: f64) -> f64 {
        sigmoid(self.log_odds(raw_score))
    }

    /// Raw-score threshold equivalent to thresholding the posterior at 0.5.
    pub fn raw_threshold(&self) -> f64 {
        -(self.b + self.prior_log_odds) / self.a
    }
}

pub fn accept_probability(c: &Calibrator, raw_score: f64) -> f64 {
    c.accept_probability(raw_score)
}

/// Prior-weighted logistic calibration loss and its gradient in `(a, b)`.
///
/// `L = p_pos/|P| * sum_P softplus(-z) + p_neg/|N| * sum_N softplus(z)` with
/// `z = a*s + b + log(p_pos/p_neg)`.
pub fn calibration_loss(scores: &[(f64, bool)], priors: (f64, f64), a: f64, b: f64) -> (f64, (f64, f64)) {
    let (loss, grad, _) = loss_grad_hessian(scores, priors, a, b);
    (loss, grad)
}

/// Loss, gradient and Hessian `[h_aa, h_ab, h_bb]` of [`calibration_loss`].
fn loss_grad_hessian(scores: &[(f64, bool)], priors: (f64, f64), a: f64, b: f64) -> (f64, (f64, f64), [f64; 3]) {
    let plo = logit_of_priors(priors);
    let n_pos = scores.iter().filter(|s| s.1).count() as f64;
    let n_neg = scores.len() as f64 - n_pos;
    let (w_pos, w_neg) = (priors.0 / n_pos, priors.1 / n_neg);
    let (mut loss, mut ga, mut gb) = (0.0, 0.0, 0.0);
    let mut h = [0.0; 3];
    for &(s, is_pos) in scores {
        let z = a * s + b + plo;
        let sz = sigmoid(z);
        let (w, l, dz) = if is_pos {
            (w_pos, softplus(-z), sz - 1.0)
        } else {
            (w_neg, softplus(z), sz)
        };
        loss += w * l;
        ga += w * dz * s;
        gb += w * dz;
        let c = w * sz * (1.0 - sz);
        h[0] += c * s * s;
        h[1] += c * s;
        h[2] += c;
    }
    (loss, (ga, gb), h)
}

fn logit_of_priors(priors: (f64, f64)) -> f64 {
    (priors.0 / priors.1).ln()
}

/// Outcome of [`train_calibrator`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFit {
    pub calibrator: Calibrator,
    pub loss: f64,
    pub iterations: usize,
    pub grad_norm: f64,
}

pub const CALIBRATION_MAX_ITERS: usize = 10_000;
pub const CALIBRATION_GRAD_TOL: f64 = 1e-6;
/// Upper bound on the length of one step in standardized coordinates.
const MAX_STEP: f64 = 8.0;

/// Fits `(a, b)` by minimizing [`calibration_loss`].
///
/// Runs damped Newton iterations on standardized scores (an exact
/// reparameterization of the same loss), falling back to the negative
/// gradient when the Hessian is not safely positive definite, with
/// backtracking on the loss. Stops once the gradient norm in the original
/// `(a, b)` coordinates falls below [`CALIBRATION_GRAD_TOL`]. Perfectly
/// separable scores have no finite optimum and are rejected.
pub fn train_calibrator(scores: &[(f64, bool)], priors: (f64, f64)) -> Result<CalibrationFit> {
    let n_pos = scores.iter().filter(|s| s.1).count();
    if n_pos == 0 {
        return Err(Error::MissingClass("positive"));
    }
    if n_pos == scores.len() {
        return Err(Error::MissingClass("negative"));
    }
    if !(priors.0 > 0.0 && priors.1 > 0.0) || ((priors.0 + priors.1) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "calibration priors must be positive and sum to 1, got ({}, {})",
            priors.0, priors.1
        )));
    }
    if let Some(s) = scores.iter().find(|s| !s.0.is_finite()) {
        return Err(Error::NonFinite(format!("calibration score {}", s.0)));
    }
    let min_pos = scores.iter().filter(|s| s.1).map(|s| s.0).fold(f64::INFINITY, f64::min);
    let max_pos = scores
        .iter()
        .filter(|s| s.1)
        .map(|s| s.0)
        .fold(f64::NEG_INFINITY, f64::max);
    let min_neg = scores
        .iter()
        .filter(|s| !s.1)
        .map(|s| s.0)
        .fold(f64::INFINITY, f64::min);
    let max_neg = scores
        .iter()
        .filter(|s| !s.1)
        .map(|s| s.0)
        .fold(f64::NEG_INFINITY, f64::max);
    if max_neg < min_pos || max_pos < min_neg {
        return Err(Error::Diverged(
            "calibration scores are perfectly separable; the optimum is at infinity".into(),
        ));
    }
    let n = scores.len() as f64;
    let mean = scores.iter().map(|s| s.0).sum::<f64>() / n;
    let std = (scores.iter().map(|s| (s.0 - mean).powi(2)).sum::<f64>() / n).sqrt();
    let standardized: Vec<(f64, bool)> = scores.iter().map(|&(s, y)| ((s - mean) / std, y)).collect();

    // z = alpha * t + beta + plo with t standardized, i.e. a = alpha / std and
    // b = beta - a * mean.
    let to_original = |alpha: f64, beta: f64| {
        let a = alpha / std;
        (a, beta - a * mean)
    };
    let original_grad_norm = |g: (f64, f64)| {
        // dL/da = std * dL/dalpha + mean * dL/dbeta, dL/db = dL/dbeta
        let ga = std * g.0 + mean * g.1;
        (ga * ga + g.1 * g.1).sqrt()
    };

    let (mut alpha, mut beta) = (1.0, 0.0);
    let (mut loss, mut grad, mut hess) = loss_grad_hessian(&standardized, priors, alpha, beta);
    let mut iterations = 0;
    while original_grad_norm(grad) >= CALIBRATION_GRAD_TOL {
        if iterations == CALIBRATION_MAX_ITERS {
            return Err(Error::NotConverged {
                iterations,
                grad_norm: original_grad_norm(grad),
            });
        }
        iterations += 1;
        let [h_aa, h_ab, h_bb] = hess;
        let det = h_aa * h_bb - h_ab * h_ab;
        let mut dir = if det > 1e-12 * (h_aa * h_bb).max(f64::MIN_POSITIVE) && h_aa > 0.0 {
            (
                -(h_bb * grad.0 - h_ab * grad.1) / det,
                -(h_aa * grad.1 - h_ab * grad.0) / det,
            )
        } else {
            (-grad.0, -grad.1)
        };
        let len = (dir.0 * dir.0 + dir.1 * dir.1).sqrt();
        if len > MAX_STEP {
            dir = (dir.0 * MAX_STEP / len, dir.1 * MAX_STEP / len);
        }
        let slope = dir.0 * grad.0 + dir.1 * grad.1;
        let mut t = 1.0;
        loop {
            let (na, nb) = (alpha + t * dir.0, beta + t * dir.1);
            let (nl, ng, nh) = loss_grad_hessian(&standardized, priors, na, nb);
            if nl <= loss + 1e-4 * t * slope || t < 1e-12 {
                alpha = na;
                beta = nb;
                loss = nl;
                grad = ng;
                hess = nh;
                break;
            }
            t *= 0.5;
        }
    }

    let (a, b) = to_original(alpha, beta);
    if a <= 0.0 {
        return Err(Error::AntiOriented(a));
    }
    Ok(CalibrationFit {
        calibrator: Calibrator {
            a,
            b,
            prior_log_odds: logit_of_priors(priors),
        },
        loss,
        iterations,
        grad_norm: original_grad_norm(grad),
    })
}
