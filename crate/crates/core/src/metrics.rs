//! Exact, hard-count evaluation: EER, DCF, the t-DCF decomposition, the
//! ASV-constrained minimum normalized t-DCF, and per-attack / cross-task
//! breakdowns.
//!
//! Every subsystem accepts a trial iff `score > tau`; a score exactly equal to
//! the threshold is a reject. Threshold sweeps only visit the finite candidate
//! set returned by [`candidate_thresholds`]: one sentinel below the smallest
//! score, the midpoints between consecutive distinct scores, and one sentinel
//! above the largest score. Error rates are piecewise constant between
//! observed scores, so this set is exhaustive.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{CmLabel, ErrorRates, ScoreSet, TandemCostParams, TrialClass};

/// Score-space decision threshold of one subsystem.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Threshold(pub f64);

impl Threshold {
    pub fn value(self) -> f64 {
        self.0
    }

    pub fn accepts(self, score: f64) -> bool {
        score > self.0
    }
}

/// How the minimum t-DCF is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TdcfNormalization {
    /// Divide by the cost of the best trivial CM (accept-all or reject-all)
    /// at the fixed ASV operating point.
    #[default]
    BestTrivialGate,
    /// Report the raw t-DCF.
    None,
}

fn below(x: f64) -> f64 {
    let t = x - 1.0;
    if t < x {
        t
    } else {
        x.next_down()
    }
}

fn above(x: f64) -> f64 {
    let t = x + 1.0;
    if t > x {
        t
    } else {
        x.next_up()
    }
}

/// Threshold strictly separating `lo < hi`: `lo <= t < hi`.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m >= hi {
        lo
    } else {
        m
    }
}

/// Ascending candidate thresholds for a set of scores.
pub fn candidate_thresholds(scores: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut s: Vec<f64> = scores.into_iter().collect();
    s.sort_by(f64::total_cmp);
    s.dedup();
    let Some((&first, &last)) = s.first().zip(s.last()) else {
        return Vec::new();
    };
    let mut out = Vec::with_capacity(s.len() + 1);
    out.push(below(first));
    out.extend(s.windows(2).map(|w| midpoint(w[0], w[1])));
    out.push(above(last));
    out
}

fn split_classes(scores: &[(f64, bool)]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for &(s, is_pos) in scores {
        if !s.is_finite() {
            return Err(Error::NonFinite(format!("score {s}")));
        }
        if is_pos {
            pos.push(s);
        } else {
            neg.push(s);
        }
    }
    if pos.is_empty() {
        return Err(Error::MissingClass("positive"));
    }
    if neg.is_empty() {
        return Err(Error::MissingClass("negative"));
    }
    Ok((pos, neg))
}

/// Miss and false-accept rates at `tau`.
pub fn hard_rates(scores: &[(f64, bool)], tau: Threshold) -> Result<(f64, f64)> {
    let (pos, neg) = split_classes(scores)?;
    let misses = pos.iter().filter(|&&s| !tau.accepts(s)).count();
    let fas = neg.iter().filter(|&&s| tau.accepts(s)).count();
    Ok((misses as f64 / pos.len() as f64, fas as f64 / neg.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EerPoint {
    pub eer: f64,
    pub threshold: Threshold,
    pub p_miss: f64,
    pub p_fa: f64,
}

/// Equal error rate.
///
/// Picks the candidate threshold minimizing `|p_miss - p_fa|` (smallest
/// threshold on ties) and reports the mean of the two rates there. Without
/// tied scores the returned point satisfies
/// `|p_miss - p_fa| <= 1 / min(|P|, |N|)`.
pub fn eer(scores: &[(f64, bool)]) -> Result<EerPoint> {
    let (mut pos, mut neg) = split_classes(scores)?;
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);
    let (np, nn) = (pos.len() as f64, neg.len() as f64);

    let candidates = candidate_thresholds(pos.iter().chain(neg.iter()).copied());
    let (mut ip, mut ineg) = (0usize, 0usize);
    let mut best: Option<(f64, EerPoint)> = None;
    for t in candidates {
        // Advance past every score <= t.
        while ip < pos.len() && pos[ip] <= t {
            ip += 1;
        }
        while ineg < neg.len() && neg[ineg] <= t {
            ineg += 1;
        }
        let p_miss = ip as f64 / np;
        let p_fa = (neg.len() - ineg) as f64 / nn;
        let gap = (p_miss - p_fa).abs();
        if best.as_ref().is_none_or(|(g, _)| gap < *g) {
            best = Some((
                gap,
                EerPoint {
                    eer: (p_miss + p_fa) / 2.0,
                    threshold: Threshold(t),
                    p_miss,
                    p_fa,
                },
            ));
        }
    }
    Ok(best.expect("candidate set is non-empty").1)
}

/// Single-detector detection cost.
pub fn dcf(p_miss: f64, p_fa: f64, c_miss: f64, c_fa: f64, rho_tar: f64) -> f64 {
    rho_tar * c_miss * p_miss + (1.0 - rho_tar) * c_fa * p_fa
}

/// Tandem error rates at a pair of thresholds.
pub fn tandem_error_rates(s: &ScoreSet, tau_asv: Threshold, tau_cm: Threshold) -> Result<ErrorRates> {
    s.require_all_classes()?;
    let (mut n_tar, mut n_non, mut n_spoof) = (0usize, 0usize, 0usize);
    let (mut a, mut b, mut c, mut d) = (0usize, 0usize, 0usize, 0usize);
    for e in s.entries() {
        let cm_acc = tau_cm.accepts(e.cm_score);
        let asv_acc = tau_asv.accepts(e.asv_score);
        match e.label.class() {
            TrialClass::Target => {
                n_tar += 1;
                if !cm_acc {
                    d += 1;
                } else if !asv_acc {
                    a += 1;
                }
            }
            TrialClass::Nontarget => {
                n_non += 1;
                b += usize::from(cm_acc && asv_acc);
            }
            TrialClass::Spoof => {
                n_spoof += 1;
                c += usize::from(cm_acc && asv_acc);
            }
        }
    }
    Ok(ErrorRates {
        p_a: a as f64 / n_tar as f64,
        p_b: b as f64 / n_non as f64,
        p_c: c as f64 / n_spoof as f64,
        p_d: d as f64 / n_tar as f64,
    })
}

/// Tandem detection cost function.
pub fn tdcf(rates: &ErrorRates, p: &TandemCostParams) -> f64 {
    p.c_miss * p.rho_tar * (rates.p_a + rates.p_d)
        + p.c_fa * p.rho_non * rates.p_b
        + p.c_fa_spoof * p.rho_spoof * rates.p_c
}

/// Result of the ASV-constrained t-DCF minimization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinTdcf {
    /// Normalized minimum.
    pub value: f64,
    pub tau_cm: Threshold,
    pub tau_asv: Threshold,
    /// Error rates at the minimizing CM threshold.
    pub rates: ErrorRates,
    /// Un-normalized t-DCF at the minimizing CM threshold.
    pub raw: f64,
    pub normalizer: f64,
}

/// ASV threshold at the EER point of target vs non-target bonafide trials.
pub fn asv_eer_point(s: &ScoreSet) -> Result<EerPoint> {
    let scores: Vec<(f64, bool)> = s
        .entries()
        .iter()
        .filter(|e| e.label.is_bonafide())
        .map(|e| (e.asv_score, e.label.class() == TrialClass::Target))
        .collect();
    eer(&scores)
}

/// Minimum normalized t-DCF under the ASV-constrained protocol with the
/// default normalization.
pub fn min_norm_tdcf(s: &ScoreSet, p: &TandemCostParams) -> Result<MinTdcf> {
    min_norm_tdcf_with(s, p, TdcfNormalization::BestTrivialGate)
}

/// Minimum t-DCF over CM thresholds with the ASV threshold fixed at its EER
/// point.
///
/// The sweep sorts trials by CM score once and moves trials from CM-accepted
/// to CM-rejected as the threshold rises, so every candidate costs O(1).
pub fn min_norm_tdcf_with(s: &ScoreSet, p: &TandemCostParams, normalization: TdcfNormalization) -> Result<MinTdcf> {
    s.require_all_classes()?;
    let tau_asv = asv_eer_point(s)?.threshold;

    let mut order: Vec<usize> = (0..s.len()).collect();
    let entries = s.entries();
    order.sort_by(|&i, &j| entries[i].cm_score.total_cmp(&entries[j].cm_score));

    let n_tar = s.count(TrialClass::Target) as f64;
    let n_non = s.count(TrialClass::Nontarget) as f64;
    let n_spoof = s.count(TrialClass::Spoof) as f64;

    // Counts with every trial CM-accepted.
    let (mut a, mut b, mut c, mut d) = (0usize, 0usize, 0usize, 0usize);
    for e in entries {
        let asv_acc = tau_asv.accepts(e.asv_score);
        match e.label.class() {
            TrialClass::Target => a += usize::from(!asv_acc),
            TrialClass::Nontarget => b += usize::from(asv_acc),
            TrialClass::Spoof => c += usize::from(asv_acc),
        }
    }
    let rates_of = |a: usize, b: usize, c: usize, d: usize| ErrorRates {
        p_a: a as f64 / n_tar,
        p_b: b as f64 / n_non,
        p_c: c as f64 / n_spoof,
        p_d: d as f64 / n_tar,
    };

    let lowest = entries[order[0]].cm_score;
    let mut sweep: Vec<(f64, ErrorRates)> = Vec::with_capacity(s.len() + 1);
    sweep.push((below(lowest), rates_of(a, b, c, d)));
    let mut k = 0;
    while k < order.len() {
        let v = entries[order[k]].cm_score;
        while k < order.len() && entries[order[k]].cm_score == v {
            let e = &entries[order[k]];
            let asv_acc = tau_asv.accepts(e.asv_score);
            match e.label.class() {
                TrialClass::Target => {
                    d += 1;
                    a -= usize::from(!asv_acc);
                }
                TrialClass::Nontarget => b -= usize::from(asv_acc),
                TrialClass::Spoof => c -= usize::from(asv_acc),
            }
            k += 1;
        }
        let t = match order.get(k) {
            Some(&next) => midpoint(v, entries[next].cm_score),
            None => above(v),
        };
        sweep.push((t, rates_of(a, b, c, d)));
    }

    let accept_all = tdcf(&sweep[0].1, p);
    let reject_all = tdcf(&sweep[sweep.len() - 1].1, p);
    let normalizer = match normalization {
        TdcfNormalization::BestTrivialGate => accept_all.min(reject_all),
        TdcfNormalization::None => 1.0,
    };

    let mut best: Option<(f64, f64, ErrorRates)> = None;
    for (t, rates) in sweep {
        let cost = tdcf(&rates, p);
        if best.as_ref().is_none_or(|(c, _, _)| cost < *c) {
            best = Some((cost, t, rates));
        }
    }
    let (raw, t, rates) = best.expect("sweep is non-empty");
    // A zero normalizer means the accept-all gate is already free; the
    // minimum is then zero as well.
    let value = if normalizer > 0.0 { raw / normalizer } else { 0.0 };
    Ok(MinTdcf {
        value,
        tau_cm: Threshold(t),
        tau_asv,
        rates,
        raw,
        normalizer,
    })
}

/// Per-attack CM and ASV EERs.
///
/// CM: all bonafide vs the attack's spoofs. ASV: target-bonafide vs the
/// attack's spoofs.
pub fn per_attack_breakdown(s: &ScoreSet) -> Result<(BTreeMap<String, f64>, BTreeMap<String, f64>)> {
    let mut cm = BTreeMap::new();
    let mut asv = BTreeMap::new();
    let attacks = s.attack_ids();
    if attacks.is_empty() {
        return Ok((cm, asv));
    }
    let bonafide_cm: Vec<(f64, bool)> = s
        .entries()
        .iter()
        .filter(|e| e.label.is_bonafide())
        .map(|e| (e.cm_score, true))
        .collect();
    let target_asv: Vec<(f64, bool)> = s.of_class(TrialClass::Target).map(|e| (e.asv_score, true)).collect();
    for attack in attacks {
        let spoofs: Vec<_> = s
            .entries()
            .iter()
            .filter(|e| e.label.attack_id() == Some(attack.as_str()))
            .collect();
        let mut cm_scores = bonafide_cm.clone();
        cm_scores.extend(spoofs.iter().map(|e| (e.cm_score, false)));
        let mut asv_scores = target_asv.clone();
        asv_scores.extend(spoofs.iter().map(|e| (e.asv_score, false)));
        cm.insert(attack.clone(), eer(&cm_scores)?.eer);
        asv.insert(attack, eer(&asv_scores)?.eer);
    }
    Ok((cm, asv))
}

/// EER of the ASV scores on the CM task (bonafide positive, spoof negative).
pub fn cross_task_eer(s: &ScoreSet) -> Result<f64> {
    let scores: Vec<(f64, bool)> = s
        .entries()
        .iter()
        .map(|e| (e.asv_score, e.label.cm() == CmLabel::Bonafide))
        .collect();
    Ok(eer(&scores)?.eer)
}

/// CM EER on bonafide vs spoof.
pub fn cm_eer(s: &ScoreSet) -> Result<EerPoint> {
    let scores: Vec<(f64, bool)> = s
        .entries()
        .iter()
        .map(|e| (e.cm_score, e.label.is_bonafide()))
        .collect();
    eer(&scores)
}

/// Removes every spoof trial whose attack id is in `excluded`.
pub fn filter_attacks(s: &ScoreSet, excluded: &BTreeSet<String>) -> ScoreSet {
    s.filtered(|e| e.label.attack_id().is_none_or(|a| !excluded.contains(a)))
}

/// Error rates and t-DCF at one threshold pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub tau_asv: Threshold,
    pub tau_cm: Threshold,
    pub rates: ErrorRates,
    pub tdcf: f64,
}

/// Full evaluation of one score set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub asv_eer: f64,
    pub cm_eer: f64,
    pub min_norm_tdcf: f64,
    pub tau_cm_star: Threshold,
    pub tau_asv: Threshold,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tdcf_at: Option<Vec<OperatingPoint>>,
    pub per_attack_cm_eer: BTreeMap<String, f64>,
    pub per_attack_asv_eer: BTreeMap<String, f64>,
    pub cross_task_eer: f64,
}

impl MetricReport {
    /// Computes every metric; `tdcf_at` holds the minimizing operating point.
    pub fn compute(s: &ScoreSet, p: &TandemCostParams, normalization: TdcfNormalization) -> Result<MetricReport> {
        let min = min_norm_tdcf_with(s, p, normalization)?;
        let (per_attack_cm_eer, per_attack_asv_eer) = per_attack_breakdown(s)?;
        Ok(MetricReport {
            asv_eer: asv_eer_point(s)?.eer,
            cm_eer: cm_eer(s)?.eer,
            min_norm_tdcf: min.value,
            tau_cm_star: min.tau_cm,
            tau_asv: min.tau_asv,
            tdcf_at: Some(vec![OperatingPoint {
                tau_asv: min.tau_asv,
                tau_cm: min.tau_cm,
                rates: min.rates,
                tdcf: min.raw,
            }]),
            per_attack_cm_eer,
            per_attack_asv_eer,
            cross_task_eer: cross_task_eer(s)?,
        })
    }
}
