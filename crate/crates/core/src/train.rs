//! Tandem optimization: REINFORCE over the joint ASV/CM accept decision,
//! separate cross-entropy finetuning, and soft t-DCF descent.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calibration::{sigmoid, softplus};
use crate::error::{Error, Result};
use crate::nn::{ForwardCache, GradientTape, Scorer, StepDirection};
use crate::soft_tdcf::{soft_tdcf_train_step, SoftThresholds};
use crate::types::{
    tandem_ground_truth, AsvLabel, CmLabel, Decision, ScoreEntry, ScoreSet, TandemCostParams, Trial, TrialClass,
    TrialLabel,
};

/// Accept probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub const PROB_CLAMP: f64 = 1e-6;

/// Derives an independent seed for sub-stream `stream` of `base`.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(stream);
    rng.next_u64()
}

/// The ASV and CM policies of a tandem system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyPair {
    pub asv: Scorer,
    pub cm: Scorer,
    /// Trainable thresholds, present after soft t-DCF training.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taus: Option<SoftThresholds>,
}

impl PolicyPair {
    pub fn new(asv: Scorer, cm: Scorer) -> Self {
        PolicyPair { asv, cm, taus: None }
    }

    pub fn check_dims(&self, dims: (usize, usize)) -> Result<()> {
        for (expected, got) in [(self.asv.input_dim(), dims.0), (self.cm.input_dim(), dims.1)] {
            if expected != got {
                return Err(Error::DimensionMismatch { expected, got });
            }
        }
        Ok(())
    }

    /// Raw scores of both subsystems for every trial.
    pub fn score(&self, trials: &[Trial]) -> Result<ScoreSet> {
        let entries = trials
            .iter()
            .map(|t| {
                Ok(ScoreEntry {
                    trial_id: t.id.clone(),
                    label: t.label.clone(),
                    asv_score: self.asv.score(&t.x_asv)?,
                    cm_score: self.cm.score(&t.x_cm)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        ScoreSet::new(entries)
    }

    /// Unclamped accept probabilities `(p_asv, p_cm)` for one trial.
    pub fn accept_probabilities(&self, t: &Trial) -> Result<(f64, f64)> {
        Ok((
            policy_eval(&self.asv, &t.x_asv)?.p_raw,
            policy_eval(&self.cm, &t.x_cm)?.p_raw,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RewardKind {
    PlusMinusOne,
    TdcfSingle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub kind: RewardKind,
    pub cost_params: TandemCostParams,
}

impl RewardSpec {
    pub fn plus_minus_one() -> Self {
        RewardSpec {
            kind: RewardKind::PlusMinusOne,
            cost_params: TandemCostParams::default(),
        }
    }

    pub fn tdcf_single(cost_params: TandemCostParams) -> Result<Self> {
        cost_params.validate()?;
        Ok(RewardSpec {
            kind: RewardKind::TdcfSingle,
            cost_params,
        })
    }
}

/// Per-trial reward of a tandem decision.
pub fn reward(spec: &RewardSpec, a_tandem: Decision, label: &TrialLabel) -> f64 {
    let correct = a_tandem == tandem_ground_truth(label);
    match spec.kind {
        RewardKind::PlusMinusOne => {
            if correct {
                1.0
            } else {
                -1.0
            }
        }
        RewardKind::TdcfSingle => {
            if correct {
                return 0.0;
            }
            let p = &spec.cost_params;
            match label.class() {
                TrialClass::Target => -p.miss_weight(),
                TrialClass::Nontarget => -p.fa_weight(),
                TrialClass::Spoof => -p.fa_spoof_weight(),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Sample target, non-target and spoof trials with equal probability.
    pub balanced_sampling: bool,
    pub seed: u64,
    /// Sigmoid temperature of the soft t-DCF.
    pub temperature: f64,
    /// Also update calibration heads during REINFORCE.
    pub update_calibration: bool,
    /// Subtract a running mean of past rewards.
    pub reward_baseline: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch_size: 64,
            epochs: 5,
            balanced_sampling: true,
            seed: 0,
            temperature: 1.0,
            update_calibration: false,
            reward_baseline: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Clamps `p` into `[PROB_CLAMP, 1 - PROB_CLAMP]`; the flag reports clamping.
pub fn clamp_probability(p: f64) -> (f64, bool) {
    let c = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    (c, c != p)
}

/// Draws ACCEPT iff `u <= p_accept` for `u ~ U[0, 1)`. Returns the action and
/// its probability.
pub fn sample_action(p_accept: f64, rng: &mut impl Rng) -> (Decision, f64) {
    let (p, clamped) = clamp_probability(p_accept);
    if clamped {
        log::debug!("accept probability {p_accept} clamped to {p}");
    }
    let u: f64 = rng.random();
    if u <= p {
        (Decision::Accept, p)
    } else {
        (Decision::Reject, 1.0 - p)
    }
}

/// Joint tandem action and its probability under independent sampling.
pub fn tandem_action_probability(a_asv: Decision, a_cm: Decision, p_asv: f64, p_cm: f64) -> (Decision, f64) {
    let a = a_asv.and(a_cm);
    let both = p_asv * p_cm;
    if a.is_accept() {
        (a, both)
    } else {
        (a, 1.0 - both)
    }
}

/// One policy evaluated on one input.
struct PolicyEval {
    raw: f64,
    p_raw: f64,
    /// Clamped probability used for sampling and in the surrogate.
    p: f64,
    clamped: bool,
    cache: ForwardCache,
}

fn policy_eval(s: &Scorer, x: &[f64]) -> Result<PolicyEval> {
    let (raw, cache) = s.forward(x)?;
    let logit = s.calibration.map_or(raw, |c| c.log_odds(raw));
    let p_raw = sigmoid(logit);
    let (p, clamped) = clamp_probability(p_raw);
    Ok(PolicyEval {
        raw,
        p_raw,
        p,
        clamped,
        cache,
    })
}

/// Backpropagates `d_logit` through the calibration head (if any) into the
/// scorer and the tape.
fn backprop_logit(s: &Scorer, e: &PolicyEval, d_logit: f64, tape: &mut GradientTape) -> Result<()> {
    let d_raw = match s.calibration {
        Some(c) => {
            tape.calibration.0 += d_logit * e.raw;
            tape.calibration.1 += d_logit;
            d_logit * c.a
        }
        None => d_logit,
    };
    s.backward(&e.cache, d_raw, tape)?;
    Ok(())
}

/// Sampled actions and reward of one trial, held fixed while differentiating.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrozenAction {
    pub a_asv: Decision,
    pub a_cm: Decision,
    pub reward: f64,
}

/// Loss value and gradients for both policies.
#[derive(Debug, Clone)]
pub struct PairGradients {
    pub loss: f64,
    pub asv: GradientTape,
    pub cm: GradientTape,
}

fn pg_from_evals(
    pair: &PolicyPair,
    evals: &[(PolicyEval, PolicyEval)],
    actions: &[FrozenAction],
) -> Result<PairGradients> {
    let n = evals.len() as f64;
    let mut asv_tape = GradientTape::for_scorer(&pair.asv);
    let mut cm_tape = GradientTape::for_scorer(&pair.cm);
    let mut loss = 0.0;
    for ((ea, ec), act) in evals.iter().zip(actions) {
        let (a_t, p_t) = tandem_action_probability(act.a_asv, act.a_cm, ea.p, ec.p);
        loss += p_t.ln() * act.reward / n;
        if act.reward == 0.0 {
            continue;
        }
        // d log(p_t) / d p for each subsystem
        let (dp_asv, dp_cm) = if a_t.is_accept() {
            (1.0 / ea.p, 1.0 / ec.p)
        } else {
            (-ec.p / p_t, -ea.p / p_t)
        };
        let scale = act.reward / n;
        let dlogit = |e: &PolicyEval, dp: f64| {
            if e.clamped {
                0.0
            } else {
                scale * dp * e.p * (1.0 - e.p)
            }
        };
        backprop_logit(&pair.asv, ea, dlogit(ea, dp_asv), &mut asv_tape)?;
        backprop_logit(&pair.cm, ec, dlogit(ec, dp_cm), &mut cm_tape)?;
    }
    Ok(PairGradients {
        loss,
        asv: asv_tape,
        cm: cm_tape,
    })
}

/// Policy-gradient surrogate `L = (1/B) sum log(p_tandem) * r` at fixed
/// actions, with its gradient.
pub fn pg_surrogate(pair: &PolicyPair, batch: &[&Trial], actions: &[FrozenAction]) -> Result<PairGradients> {
    if batch.len() != actions.len() {
        return Err(Error::DimensionMismatch {
            expected: batch.len(),
            got: actions.len(),
        });
    }
    let evals = batch
        .iter()
        .map(|t| Ok((policy_eval(&pair.asv, &t.x_asv)?, policy_eval(&pair.cm, &t.x_cm)?)))
        .collect::<Result<Vec<_>>>()?;
    pg_from_evals(pair, &evals, actions)
}

/// Weighted binary cross-entropy on raw scores used as logits:
/// `(1/n) sum w_i * bce(s_i, y_i)`.
pub fn bce_gradients(s: &Scorer, examples: &[(&[f64], bool, f64)]) -> Result<(f64, GradientTape)> {
    let mut tape = GradientTape::for_scorer(s);
    if examples.is_empty() {
        return Ok((0.0, tape));
    }
    let n = examples.len() as f64;
    let mut loss = 0.0;
    for &(x, y, w) in examples {
        let (z, cache) = s.forward(x)?;
        let (l, dz) = if y {
            (softplus(-z), sigmoid(z) - 1.0)
        } else {
            (softplus(z), sigmoid(z))
        };
        loss += w * l / n;
        s.backward(&cache, w * dz / n, &mut tape)?;
    }
    Ok((loss, tape))
}

/// Records which trials contributed to gradient updates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UpdateAudit {
    ids: BTreeSet<String>,
    updates: usize,
}

impl UpdateAudit {
    pub fn record<'a>(&mut self, batch: impl IntoIterator<Item = &'a Trial>) {
        self.ids.extend(batch.into_iter().map(|t| t.id.clone()));
        self.updates += 1;
    }

    pub fn contains(&self, id: &str) -> bool {
        self.ids.contains(id)
    }

    pub fn ids(&self) -> &BTreeSet<String> {
        &self.ids
    }

    pub fn updates(&self) -> usize {
        self.updates
    }
}

/// Mutable state owned by one training run.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub rng: ChaCha8Rng,
    pub audit: UpdateAudit,
    reward_sum: f64,
    reward_count: usize,
}

impl TrainState {
    pub fn new(seed: u64) -> Self {
        TrainState {
            rng: ChaCha8Rng::seed_from_u64(seed),
            audit: UpdateAudit::default(),
            reward_sum: 0.0,
            reward_count: 0,
        }
    }
}

/// Trial indices visited in one epoch.
///
/// Balanced: an exactly balanced, shuffled sequence of classes, each slot
/// filled by drawing from that class's pool with replacement. Otherwise a
/// shuffled pass over the data without replacement.
pub fn epoch_order(data: &[Trial], balanced: bool, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if !balanced {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(rng);
        return Ok(order);
    }
    let pools: Vec<Vec<usize>> = TrialClass::ALL
        .iter()
        .map(|&c| (0..data.len()).filter(|&i| data[i].class() == c).collect())
        .collect();
    for (pool, class) in pools.iter().zip(TrialClass::ALL) {
        if pool.is_empty() {
            return Err(Error::MissingClass(class.name()));
        }
    }
    let n = data.len();
    let mut classes: Vec<usize> = (0..n).map(|i| i % 3).collect();
    classes.shuffle(rng);
    Ok(classes
        .into_iter()
        .map(|c| pools[c][rng.random_range(0..pools[c].len())])
        .collect())
}

/// Splits an epoch order into minibatches of exactly `batch_size`; the
/// remainder is dropped unless it is the only batch.
pub fn minibatches(order: &[usize], batch_size: usize) -> Vec<&[usize]> {
    if order.len() <= batch_size {
        return if order.is_empty() { vec![] } else { vec![order] };
    }
    order.chunks_exact(batch_size).collect()
}

/// One REINFORCE epoch; returns the surrogate loss of every batch.
pub fn reinforce_epoch(
    pair: &mut PolicyPair,
    data: &[Trial],
    spec: &RewardSpec,
    cfg: &TrainConfig,
    state: &mut TrainState,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let order = epoch_order(data, cfg.balanced_sampling, &mut state.rng)?;
    let mut losses = Vec::new();
    for (b, idx) in minibatches(&order, cfg.batch_size).into_iter().enumerate() {
        let batch: Vec<&Trial> = idx.iter().map(|&i| &data[i]).collect();
        let mut evals = Vec::with_capacity(batch.len());
        let mut actions = Vec::with_capacity(batch.len());
        let baseline = if cfg.reward_baseline && state.reward_count > 0 {
            state.reward_sum / state.reward_count as f64
        } else {
            0.0
        };
        for t in &batch {
            let ea = policy_eval(&pair.asv, &t.x_asv)?;
            let ec = policy_eval(&pair.cm, &t.x_cm)?;
            let (a_asv, _) = sample_action(ea.p, &mut state.rng);
            let (a_cm, _) = sample_action(ec.p, &mut state.rng);
            let r = reward(spec, a_asv.and(a_cm), &t.label);
            state.reward_sum += r;
            state.reward_count += 1;
            actions.push(FrozenAction {
                a_asv,
                a_cm,
                reward: r - baseline,
            });
            evals.push((ea, ec));
        }
        let mut g = pg_from_evals(pair, &evals, &actions)?;
        if !g.loss.is_finite() {
            return Err(Error::Diverged(format!(
                "non-finite policy-gradient surrogate {} in batch {b}",
                g.loss
            )));
        }
        if !cfg.update_calibration {
            g.asv.calibration = (0.0, 0.0);
            g.cm.calibration = (0.0, 0.0);
        }
        pair.asv.sgd_step(&mut g.asv, cfg.lr, StepDirection::Ascent)?;
        pair.cm.sgd_step(&mut g.cm, cfg.lr, StepDirection::Ascent)?;
        state.audit.record(batch.iter().copied());
        losses.push(g.loss);
    }
    Ok(losses)
}

/// ASV training examples: bonafide trials labelled target vs non-target.
pub fn asv_examples<'a>(
    batch: impl IntoIterator<Item = &'a Trial>,
    weights: (f64, f64),
) -> Vec<(&'a [f64], bool, f64)> {
    batch
        .into_iter()
        .filter(|t| t.label.is_bonafide())
        .map(|t| {
            let y = t.label.asv() == AsvLabel::Target;
            (t.x_asv.as_slice(), y, if y { weights.0 } else { weights.1 })
        })
        .collect()
}

/// CM training examples: every trial labelled bonafide vs spoof.
pub fn cm_examples<'a>(batch: impl IntoIterator<Item = &'a Trial>, weights: (f64, f64)) -> Vec<(&'a [f64], bool, f64)> {
    batch
        .into_iter()
        .map(|t| {
            let y = t.label.cm() == CmLabel::Bonafide;
            (t.x_cm.as_slice(), y, if y { weights.0 } else { weights.1 })
        })
        .collect()
}

/// One epoch of separate cross-entropy finetuning; returns the summed ASV
/// and CM loss per batch.
pub fn finetune_epoch(
    pair: &mut PolicyPair,
    data: &[Trial],
    cfg: &TrainConfig,
    state: &mut TrainState,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let order = epoch_order(data, cfg.balanced_sampling, &mut state.rng)?;
    let mut losses = Vec::new();
    for idx in minibatches(&order, cfg.batch_size) {
        let batch: Vec<&Trial> = idx.iter().map(|&i| &data[i]).collect();
        let (asv_loss, mut asv_tape) = bce_gradients(&pair.asv, &asv_examples(batch.iter().copied(), (1.0, 1.0)))?;
        let (cm_loss, mut cm_tape) = bce_gradients(&pair.cm, &cm_examples(batch.iter().copied(), (1.0, 1.0)))?;
        pair.asv.sgd_step(&mut asv_tape, cfg.lr, StepDirection::Descent)?;
        pair.cm.sgd_step(&mut cm_tape, cfg.lr, StepDirection::Descent)?;
        state.audit.record(batch.iter().copied());
        losses.push(asv_loss + cm_loss);
    }
    Ok(losses)
}

/// One epoch of soft t-DCF descent on both scorers and the thresholds in
/// `pair.taus`. Batches lacking a class are skipped.
pub fn soft_tdcf_epoch(
    pair: &mut PolicyPair,
    data: &[Trial],
    p: &TandemCostParams,
    cfg: &TrainConfig,
    state: &mut TrainState,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let mut taus = pair
        .taus
        .ok_or_else(|| Error::Config("soft t-DCF training needs initial thresholds".into()))?;
    let order = epoch_order(data, cfg.balanced_sampling, &mut state.rng)?;
    let mut losses = Vec::new();
    for idx in minibatches(&order, cfg.batch_size) {
        let batch: Vec<&Trial> = idx.iter().map(|&i| &data[i]).collect();
        if TrialClass::ALL.iter().any(|&c| !batch.iter().any(|t| t.class() == c)) {
            log::warn!("skipping a soft t-DCF batch that lacks a trial class");
            continue;
        }
        let loss = soft_tdcf_train_step(
            &mut pair.asv,
            &mut pair.cm,
            &mut taus,
            &batch,
            p,
            cfg.lr,
            cfg.temperature,
        )?;
        state.audit.record(batch.iter().copied());
        losses.push(loss);
    }
    pair.taus = Some(taus);
    Ok(losses)
}

/// The six compared training methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Method {
    Finetune,
    Reinforce,
    ReinforceCalib,
    ReinforceTdcf,
    ReinforceCalibTdcf,
    SoftTdcf,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Finetune,
        Method::Reinforce,
        Method::ReinforceCalib,
        Method::ReinforceTdcf,
        Method::ReinforceCalibTdcf,
        Method::SoftTdcf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Finetune => "FINETUNE",
            Method::Reinforce => "REINFORCE",
            Method::ReinforceCalib => "REINFORCE_CALIB",
            Method::ReinforceTdcf => "REINFORCE_TDCF",
            Method::ReinforceCalibTdcf => "REINFORCE_CALIB_TDCF",
            Method::SoftTdcf => "SOFT_TDCF",
        }
    }

    pub fn uses_calibration(self) -> bool {
        matches!(self, Method::ReinforceCalib | Method::ReinforceCalibTdcf)
    }

    /// Reward kind for the REINFORCE variants.
    pub fn reward_kind(self) -> Option<RewardKind> {
        match self {
            Method::Reinforce | Method::ReinforceCalib => Some(RewardKind::PlusMinusOne),
            Method::ReinforceTdcf | Method::ReinforceCalibTdcf => Some(RewardKind::TdcfSingle),
            Method::Finetune | Method::SoftTdcf => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownMethod {
                name: s.to_owned(),
                valid: Method::ALL.iter().map(|m| m.name()).collect::<Vec<_>>().join(", "),
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::Calibrator;
    use crate::gradcheck::{central_difference, max_relative_error};
    use crate::nn::Activation;

    fn trial(id: &str, label: TrialLabel, x_asv: Vec<f64>, x_cm: Vec<f64>) -> Trial {
        let dims = (x_asv.len(), x_cm.len());
        Trial::new(id, x_asv, x_cm, label, dims).unwrap()
    }

    fn toy_trials() -> Vec<Trial> {
        vec![
            trial("t1", TrialLabel::target(), vec![0.3, -0.5], vec![0.2, 0.9]),
            trial("t2", TrialLabel::target(), vec![-0.4, 0.1], vec![-0.6, 0.3]),
            trial("n1", TrialLabel::nontarget(), vec![0.8, 0.7], vec![0.1, -0.2]),
            trial(
                "s1",
                TrialLabel::spoof("A01").unwrap(),
                vec![-0.2, 0.6],
                vec![0.5, -0.7],
            ),
        ]
    }

    fn toy_pair(seed: u64) -> PolicyPair {
        PolicyPair::new(
            Scorer::new(&[2, 3, 1], Activation::Tanh, seed).unwrap(),
            Scorer::new(&[2, 3, 1], Activation::Tanh, seed + 1).unwrap(),
        )
    }

    #[test]
    fn tandem_probability_examples() {
        use Decision::*;
        assert_eq!(tandem_action_probability(Accept, Accept, 0.5, 0.5), (Accept, 0.25));
        assert_eq!(tandem_action_probability(Reject, Accept, 0.5, 0.5), (Reject, 0.75));
        let (_, acc) = tandem_action_probability(Accept, Accept, 0.3, 0.8);
        let (_, rej) = tandem_action_probability(Accept, Reject, 0.3, 0.8);
        assert!((acc + rej - 1.0).abs() < 1e-15);
    }

    #[test]
    fn reward_examples() {
        let tdcf = RewardSpec::tdcf_single(TandemCostParams::default()).unwrap();
        assert_eq!(reward(&tdcf, Decision::Reject, &TrialLabel::target()), -0.9405);
        assert_eq!(reward(&tdcf, Decision::Accept, &TrialLabel::target()), 0.0);
        let pm = RewardSpec::plus_minus_one();
        assert_eq!(reward(&pm, Decision::Accept, &TrialLabel::spoof("A01").unwrap()), -1.0);
        assert_eq!(reward(&pm, Decision::Reject, &TrialLabel::nontarget()), 1.0);
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..100).map(|_| sample_action(0.4, &mut rng).0).collect::<Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));
        assert_ne!(draw(3), draw(4));
    }

    #[test]
    fn extreme_probabilities_are_clamped() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, p) = sample_action(1.0, &mut rng);
        assert!(p <= 1.0 - PROB_CLAMP || p >= PROB_CLAMP);
        assert_eq!(clamp_probability(0.0), (PROB_CLAMP, true));
        assert_eq!(clamp_probability(0.5), (0.5, false));
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        let err = "PPO".parse::<Method>().unwrap_err().to_string();
        assert!(err.contains("PPO") && err.contains("SOFT_TDCF") && err.contains("FINETUNE"));
    }

    #[test]
    fn zero_reward_gives_zero_gradient() {
        let pair = toy_pair(1);
        let trials = toy_trials();
        let batch: Vec<&Trial> = trials.iter().collect();
        let actions = vec![
            FrozenAction {
                a_asv: Decision::Accept,
                a_cm: Decision::Reject,
                reward: 0.0
            };
            4
        ];
        let g = pg_surrogate(&pair, &batch, &actions).unwrap();
        assert!(g.asv.is_zero() && g.cm.is_zero());
        assert_eq!(g.loss, 0.0);
    }

    #[test]
    fn pg_surrogate_matches_finite_differences_with_calibration() {
        let mut pair = toy_pair(5);
        pair.asv.calibration = Some(Calibrator {
            a: 0.8,
            b: 0.3,
            prior_log_odds: 1.5,
        });
        let trials = toy_trials();
        let batch: Vec<&Trial> = trials.iter().collect();
        use Decision::*;
        let actions = [
            FrozenAction {
                a_asv: Accept,
                a_cm: Accept,
                reward: 1.0,
            },
            FrozenAction {
                a_asv: Reject,
                a_cm: Accept,
                reward: -1.0,
            },
            FrozenAction {
                a_asv: Accept,
                a_cm: Reject,
                reward: 0.7,
            },
            FrozenAction {
                a_asv: Reject,
                a_cm: Reject,
                reward: -0.3,
            },
        ];
        let g = pg_surrogate(&pair, &batch, &actions).unwrap();
        let mut analytic = g.asv.flat();
        analytic.push(g.asv.calibration.0);
        analytic.push(g.asv.calibration.1);
        analytic.extend(g.cm.flat());

        let n_asv = pair.asv.num_params();
        let mut x = pair.asv.params();
        x.extend([0.8, 0.3]);
        x.extend(pair.cm.params());
        let eval = |x: &[f64]| {
            let mut p = pair.clone();
            for i in 0..n_asv {
                *p.asv.param_mut(i) = x[i];
            }
            let c = p.asv.calibration.as_mut().unwrap();
            c.a = x[n_asv];
            c.b = x[n_asv + 1];
            for i in 0..p.cm.num_params() {
                *p.cm.param_mut(i) = x[n_asv + 2 + i];
            }
            pg_surrogate(&p, &batch, &actions).unwrap().loss
        };
        let numeric = central_difference(eval, &x, 1e-6);
        assert!(max_relative_error(&analytic, &numeric) < 1e-6);
    }

    #[test]
    fn bernoulli_policy_gradient_estimate_is_one() {
        // E[r] = p for r = 1(accept); the score-function estimate of dE/dp
        // is 1/p on accept and 0 on reject.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let p = 0.3;
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let (a, prob) = sample_action(p, &mut rng);
            let r = if a.is_accept() { 1.0 } else { 0.0 };
            let dlogp_dp = if a.is_accept() { 1.0 / prob } else { -1.0 / prob };
            sum += dlogp_dp * r;
        }
        assert!((sum / n as f64 - 1.0).abs() < 0.02);
    }

    #[test]
    fn bce_gradient_matches_finite_differences() {
        let s = Scorer::new(&[3, 4, 1], Activation::Tanh, 9).unwrap();
        let xs = [vec![0.1, -0.4, 0.9], vec![1.2, 0.3, -0.2], vec![-0.7, 0.5, 0.05]];
        let examples: Vec<(&[f64], bool, f64)> = vec![(&xs[0], true, 1.0), (&xs[1], false, 2.0), (&xs[2], true, 0.5)];
        let err = crate::gradcheck::finite_diff_check(&s, |s| bce_gradients(s, &examples), 1e-6).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn balanced_order_has_equal_class_counts() {
        let mut data = toy_trials();
        data.push(trial("n2", TrialLabel::nontarget(), vec![0.0, 0.0], vec![0.0, 0.0]));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let order = epoch_order(&data, true, &mut rng).unwrap();
        assert_eq!(order.len(), data.len());
        let mut counts = [0; 3];
        for &i in &order {
            counts[TrialClass::ALL.iter().position(|&c| c == data[i].class()).unwrap()] += 1;
        }
        assert_eq!(counts.iter().sum::<usize>(), 5);
        assert!(counts.iter().all(|&c| c == 1 || c == 2));
    }

    #[test]
    fn minibatches_drop_remainder() {
        let order: Vec<usize> = (0..10).collect();
        assert_eq!(minibatches(&order, 4).len(), 2);
        assert_eq!(minibatches(&order, 10).len(), 1);
        assert_eq!(minibatches(&order, 64), vec![&order[..]]);
        assert!(minibatches(&[], 4).is_empty());
    }

    #[test]
    fn zero_lr_leaves_policies_unchanged() {
        let trials = toy_trials();
        let cfg = TrainConfig {
            lr: 0.0,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let mut pair = toy_pair(2);
        let before = pair.clone();
        let mut state = TrainState::new(0);
        reinforce_epoch(&mut pair, &trials, &RewardSpec::plus_minus_one(), &cfg, &mut state).unwrap();
        finetune_epoch(&mut pair, &trials, &cfg, &mut state).unwrap();
        assert_eq!(pair, before);
        assert_eq!(state.audit.updates(), 4);
    }
}
