//! Differentiable surrogate of the t-DCF.
//!
//! Each hard indicator `1(s > tau)` is replaced by `sigmoid((s - tau) / T)`.
//! The joint tandem events (CM and ASV both deciding a certain way) use the
//! product of the two per-subsystem sigmoids, so for every trial the soft
//! probability that the tandem accepts is `A_cm * A_asv`.

use serde::{Deserialize, Serialize};

use crate::calibration::sigmoid;
use crate::error::{Error, Result};
use crate::nn::{ForwardCache, GradientTape, Scorer, StepDirection};
use crate::types::{ErrorRates, TandemCostParams, Trial, TrialClass};

/// Trainable decision thresholds of the two subsystems.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftThresholds {
    pub tau_asv: f64,
    pub tau_cm: f64,
}

/// Soft miss and false-accept rates at `tau` (unit temperature).
pub fn soft_rates(scores: &[(f64, bool)], tau: f64) -> Result<(f64, f64)> {
    let (mut miss, mut fa, mut n_pos, mut n_neg) = (0.0, 0.0, 0usize, 0usize);
    for &(s, is_pos) in scores {
        if is_pos {
            miss += sigmoid(tau - s);
            n_pos += 1;
        } else {
            fa += sigmoid(s - tau);
            n_neg += 1;
        }
    }
    if n_pos == 0 {
        return Err(Error::MissingClass("positive"));
    }
    if n_neg == 0 {
        return Err(Error::MissingClass("negative"));
    }
    Ok((miss / n_pos as f64, fa / n_neg as f64))
}

/// Scores of one trial as seen by the surrogate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftTrial {
    pub class: TrialClass,
    pub asv_score: f64,
    pub cm_score: f64,
}

/// Surrogate value with exact gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftTdcf {
    pub loss: f64,
    pub rates: ErrorRates,
    pub d_asv: Vec<f64>,
    pub d_cm: Vec<f64>,
    pub d_tau_asv: f64,
    pub d_tau_cm: f64,
}

pub fn soft_tdcf_loss(
    batch: &[SoftTrial],
    taus: SoftThresholds,
    p: &TandemCostParams,
    temperature: f64,
) -> Result<SoftTdcf> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Config(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let count = |c: TrialClass| batch.iter().filter(|t| t.class == c).count();
    let (n_tar, n_non, n_spoof) = (
        count(TrialClass::Target),
        count(TrialClass::Nontarget),
        count(TrialClass::Spoof),
    );
    for (n, class) in [
        (n_tar, TrialClass::Target),
        (n_non, TrialClass::Nontarget),
        (n_spoof, TrialClass::Spoof),
    ] {
        if n == 0 {
            return Err(Error::MissingClass(class.name()));
        }
    }

    let mut rates = ErrorRates::default();
    let mut d_asv = Vec::with_capacity(batch.len());
    let mut d_cm = Vec::with_capacity(batch.len());
    for t in batch {
        let acc_cm = sigmoid((t.cm_score - taus.tau_cm) / temperature);
        let rej_cm = sigmoid((taus.tau_cm - t.cm_score) / temperature);
        let acc_asv = sigmoid((t.asv_score - taus.tau_asv) / temperature);
        let rej_asv = sigmoid((taus.tau_asv - t.asv_score) / temperature);
        // Loss contribution is sign * weight * acc_cm * acc_asv (+ const).
        let (sign, weight) = match t.class {
            TrialClass::Target => {
                rates.p_a += acc_cm * rej_asv;
                rates.p_d += rej_cm;
                (-1.0, p.miss_weight() / n_tar as f64)
            }
            TrialClass::Nontarget => {
                rates.p_b += acc_cm * acc_asv;
                (1.0, p.fa_weight() / n_non as f64)
            }
            TrialClass::Spoof => {
                rates.p_c += acc_cm * acc_asv;
                (1.0, p.fa_spoof_weight() / n_spoof as f64)
            }
        };
        let scale = sign * weight / temperature;
        d_cm.push(scale * acc_asv * acc_cm * rej_cm);
        d_asv.push(scale * acc_cm * acc_asv * rej_asv);
    }
    rates.p_a /= n_tar as f64;
    rates.p_d /= n_tar as f64;
    rates.p_b /= n_non as f64;
    rates.p_c /= n_spoof as f64;
    let loss = crate::metrics::tdcf(&rates, p);
    let d_tau_asv = -d_asv.iter().sum::<f64>();
    let d_tau_cm = -d_cm.iter().sum::<f64>();
    Ok(SoftTdcf {
        loss,
        rates,
        d_asv,
        d_cm,
        d_tau_asv,
        d_tau_cm,
    })
}

/// Soft t-DCF of two scorers on a batch, with parameter gradients.
#[derive(Debug, Clone)]
pub struct SoftTdcfGradients {
    pub loss: f64,
    pub asv: GradientTape,
    pub cm: GradientTape,
    pub d_tau_asv: f64,
    pub d_tau_cm: f64,
}

pub fn soft_tdcf_gradients(
    asv: &Scorer,
    cm: &Scorer,
    taus: SoftThresholds,
    batch: &[&Trial],
    p: &TandemCostParams,
    temperature: f64,
) -> Result<SoftTdcfGradients> {
    let mut caches: Vec<(ForwardCache, ForwardCache)> = Vec::with_capacity(batch.len());
    let mut soft = Vec::with_capacity(batch.len());
    for t in batch {
        let (asv_score, asv_cache) = asv.forward(&t.x_asv)?;
        let (cm_score, cm_cache) = cm.forward(&t.x_cm)?;
        caches.push((asv_cache, cm_cache));
        soft.push(SoftTrial {
            class: t.class(),
            asv_score,
            cm_score,
        });
    }
    let out = soft_tdcf_loss(&soft, taus, p, temperature)?;
    let mut asv_tape = GradientTape::for_scorer(asv);
    let mut cm_tape = GradientTape::for_scorer(cm);
    for ((asv_cache, cm_cache), (&ga, &gc)) in caches.iter().zip(out.d_asv.iter().zip(&out.d_cm)) {
        asv.backward(asv_cache, ga, &mut asv_tape)?;
        cm.backward(cm_cache, gc, &mut cm_tape)?;
    }
    Ok(SoftTdcfGradients {
        loss: out.loss,
        asv: asv_tape,
        cm: cm_tape,
        d_tau_asv: out.d_tau_asv,
        d_tau_cm: out.d_tau_cm,
    })
}

/// One descent step on both scorers and both thresholds. Returns the loss
/// before the step.
pub fn soft_tdcf_train_step(
    asv: &mut Scorer,
    cm: &mut Scorer,
    taus: &mut SoftThresholds,
    batch: &[&Trial],
    p: &TandemCostParams,
    lr: f64,
    temperature: f64,
) -> Result<f64> {
    let mut g = soft_tdcf_gradients(asv, cm, *taus, batch, p, temperature)?;
    if !g.loss.is_finite() || !g.d_tau_asv.is_finite() || !g.d_tau_cm.is_finite() {
        return Err(Error::NonFiniteGradient("soft t-DCF thresholds".into()));
    }
    asv.sgd_step(&mut g.asv, lr, StepDirection::Descent)?;
    cm.sgd_step(&mut g.cm, lr, StepDirection::Descent)?;
    taus.tau_asv -= lr * g.d_tau_asv;
    taus.tau_cm -= lr * g.d_tau_cm;
    Ok(g.loss)
}
