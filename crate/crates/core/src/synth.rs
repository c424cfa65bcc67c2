//! Synthetic tandem problems with known generating densities.
//!
//! Speakers are Gaussian embeddings; an utterance is its speaker embedding
//! plus session noise. The ASV input of a trial is the element-wise absolute
//! difference between the enrollment and test utterances. Spoofs of an
//! attack move the test utterance from a source speaker towards the target,
//! by a fraction given by the attack's ASV effectiveness. CM inputs are
//! isotropic Gaussian noise for bonafide speech, shifted along an attack
//! direction for spoofs.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, Scorer, StepDirection};
use crate::train::{asv_examples, bce_gradients, cm_examples, derive_seed, minibatches, PolicyPair};
use crate::types::{Trial, TrialLabel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackSplit {
    /// Present in train and dev.
    Seen,
    /// Present in eval only.
    Unseen,
    /// Eval only, hard for the CM and ineffective against the ASV.
    Outlier,
}

/// Largest effectiveness and detectability allowed for an outlier attack.
pub const OUTLIER_MAX_LEVEL: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub attack_id: String,
    /// 1 puts spoofs exactly on the target speaker, 0 on the source speaker.
    pub asv_effectiveness: f64,
    /// Shift of the spoof CM distribution, in units of `cm_shift`.
    pub cm_detectability: f64,
    pub split: AttackSplit,
}

impl AttackSpec {
    pub fn new(id: &str, asv_effectiveness: f64, cm_detectability: f64, split: AttackSplit) -> Self {
        AttackSpec {
            attack_id: id.to_owned(),
            asv_effectiveness,
            cm_detectability,
            split,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.attack_id.is_empty() || self.attack_id == "-" || self.attack_id.contains(char::is_whitespace) {
            return Err(Error::Config(format!("invalid attack id `{}`", self.attack_id)));
        }
        for (name, v) in [
            ("asv_effectiveness", self.asv_effectiveness),
            ("cm_detectability", self.cm_detectability),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!(
                    "attack {}: {name} = {v} out of range [0, 1]",
                    self.attack_id
                )));
            }
        }
        if self.split == AttackSplit::Outlier
            && (self.asv_effectiveness > OUTLIER_MAX_LEVEL || self.cm_detectability > OUTLIER_MAX_LEVEL)
        {
            return Err(Error::Config(format!(
                "outlier attack {} needs effectiveness and detectability <= {OUTLIER_MAX_LEVEL}",
                self.attack_id
            )));
        }
        Ok(())
    }
}

/// A value per data split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerSplit<T> {
    pub train: T,
    pub dev: T,
    pub eval: T,
}

impl<T: Copy> PerSplit<T> {
    pub fn get(&self, split: Split) -> T {
        match split {
            Split::Train => self.train,
            Split::Dev => self.dev,
            Split::Eval => self.eval,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Eval,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Eval];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Eval => "eval",
        }
    }

    fn stream(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Dev => 2,
            Split::Eval => 3,
        }
    }

    /// Whether attacks of `kind` appear in this split.
    pub fn hosts(self, kind: AttackSplit) -> bool {
        match self {
            Split::Train | Split::Dev => kind == AttackSplit::Seen,
            Split::Eval => kind != AttackSplit::Seen,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub seed: u64,
    pub speakers: PerSplit<usize>,
    pub trials_per_class: PerSplit<usize>,
    pub d_asv: usize,
    pub d_cm: usize,
    /// Standard deviation of speaker embeddings.
    pub speaker_scale: f64,
    /// Standard deviation of per-utterance session noise.
    pub session_noise: f64,
    /// Standard deviation of CM features.
    pub cm_noise: f64,
    /// Length of the spoof CM shift at detectability 1.
    pub cm_shift: f64,
    /// Weight in `[0, 1]` of the direction shared by all attacks.
    pub shared_direction: f64,
    pub attacks: Vec<AttackSpec>,
}

impl Default for WorldConfig {
    fn default() -> Self {
        use AttackSplit::*;
        WorldConfig {
            seed: 2024,
            speakers: PerSplit {
                train: 40,
                dev: 8,
                eval: 40,
            },
            trials_per_class: PerSplit {
                train: 667,
                dev: 667,
                eval: 667,
            },
            d_asv: 8,
            d_cm: 8,
            speaker_scale: 1.0,
            session_noise: 0.2,
            cm_noise: 1.0,
            cm_shift: 6.0,
            shared_direction: 0.95,
            attacks: vec![
                AttackSpec::new("A01", 0.72, 0.8, Seen),
                AttackSpec::new("A02", 0.64, 0.6, Seen),
                AttackSpec::new("A03", 0.56, 0.9, Seen),
                AttackSpec::new("A10", 0.68, 0.7, Unseen),
                AttackSpec::new("A11", 0.6, 0.8, Unseen),
                AttackSpec::new("A12", 0.64, 0.6, Unseen),
                AttackSpec::new("A13", 0.72, 0.9, Unseen),
                AttackSpec::new("A17", 0.2, 0.1, Outlier),
                AttackSpec::new("A18", 0.15, 0.1, Outlier),
            ],
        }
    }
}

impl WorldConfig {
    pub fn dims(&self) -> (usize, usize) {
        (self.d_asv, self.d_cm)
    }

    pub fn validate(&self) -> Result<()> {
        for split in Split::ALL {
            if self.speakers.get(split) < 2 {
                return Err(Error::Config(format!(
                    "{} split needs at least 2 speakers",
                    split.name()
                )));
            }
            if self.trials_per_class.get(split) == 0 {
                return Err(Error::Config(format!(
                    "trials_per_class for the {} split must be positive",
                    split.name()
                )));
            }
            if !self.attacks.iter().any(|a| split.hosts(a.split)) {
                return Err(Error::Config(format!(
                    "no attacks assigned to the {} split",
                    split.name()
                )));
            }
        }
        if self.d_asv == 0 || self.d_cm == 0 {
            return Err(Error::Config("feature dimensions must be positive".into()));
        }
        for (name, v) in [
            ("speaker_scale", self.speaker_scale),
            ("session_noise", self.session_noise),
            ("cm_noise", self.cm_noise),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.cm_shift >= 0.0 && self.cm_shift.is_finite()) {
            return Err(Error::Config(format!("cm_shift must be >= 0, got {}", self.cm_shift)));
        }
        if !(0.0..=1.0).contains(&self.shared_direction) {
            return Err(Error::Config(format!(
                "shared_direction = {} out of range [0, 1]",
                self.shared_direction
            )));
        }
        let mut ids = BTreeSet::new();
        for a in &self.attacks {
            a.validate()?;
            if !ids.insert(a.attack_id.as_str()) {
                return Err(Error::Config(format!("duplicate attack id `{}`", a.attack_id)));
            }
        }
        Ok(())
    }

    /// Unit CM shift direction of every configured attack, in config order.
    pub fn attack_directions(&self) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, 100));
        let shared = unit_vector(self.d_cm, &mut rng);
        let w = self.shared_direction;
        self.attacks
            .iter()
            .map(|_| {
                let mut own = gaussian_vector(self.d_cm, &mut rng);
                let proj: f64 = own.iter().zip(&shared).map(|(a, b)| a * b).sum();
                own.iter_mut().zip(&shared).for_each(|(o, s)| *o -= proj * s);
                normalize(&mut own);
                shared
                    .iter()
                    .zip(&own)
                    .map(|(s, o)| w * s + (1.0 - w * w).sqrt() * o)
                    .collect()
            })
            .collect()
    }

    /// Mean of the CM features of spoofs from `attack` (config index).
    pub fn spoof_cm_mean(&self, attack: usize) -> Vec<f64> {
        let dir = &self.attack_directions()[attack];
        let len = self.attacks[attack].cm_detectability * self.cm_shift;
        dir.iter().map(|d| len * d).collect()
    }

    /// Exact log-likelihood ratio of bonafide vs spoofs of `attack` for a CM
    /// feature vector.
    pub fn bayes_cm_llr(&self, attack: usize, x_cm: &[f64]) -> f64 {
        let mu = self.spoof_cm_mean(attack);
        let var = self.cm_noise * self.cm_noise;
        let dot: f64 = mu.iter().zip(x_cm).map(|(m, x)| m * x).sum();
        let mu2: f64 = mu.iter().map(|m| m * m).sum();
        (mu2 / 2.0 - dot) / var
    }
}

fn gaussian_vector(d: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn unit_vector(d: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut v = gaussian_vector(d, rng);
    normalize(&mut v);
    v
}

/// Provenance of one generated trial.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialMeta {
    pub enroll_speaker: String,
    /// Speaker of the test utterance; for spoofs, the source speaker.
    pub test_speaker: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitData {
    pub split: Split,
    pub trials: Vec<Trial>,
    pub meta: Vec<TrialMeta>,
}

impl SplitData {
    pub fn speakers(&self) -> BTreeSet<&str> {
        self.meta
            .iter()
            .flat_map(|m| [m.enroll_speaker.as_str(), m.test_speaker.as_str()])
            .collect()
    }

    pub fn attack_ids(&self) -> BTreeSet<&str> {
        self.trials.iter().filter_map(|t| t.label.attack_id()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub train: SplitData,
    pub dev: SplitData,
    pub eval: SplitData,
}

impl World {
    pub fn split(&self, split: Split) -> &SplitData {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Eval => &self.eval,
        }
    }
}

pub fn generate_world(cfg: &WorldConfig) -> Result<World> {
    cfg.validate()?;
    let directions = cfg.attack_directions();
    let gen = |split| generate_split(cfg, split, &directions);
    Ok(World {
        train: gen(Split::Train)?,
        dev: gen(Split::Dev)?,
        eval: gen(Split::Eval)?,
    })
}

fn generate_split(cfg: &WorldConfig, split: Split, directions: &[Vec<f64>]) -> Result<SplitData> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, split.stream()));
    let n_spk = cfg.speakers.get(split);
    let speakers: Vec<Vec<f64>> = (0..n_spk)
        .map(|_| {
            gaussian_vector(cfg.d_asv, &mut rng)
                .into_iter()
                .map(|v| v * cfg.speaker_scale)
                .collect()
        })
        .collect();
    let speaker_name = |k: usize| format!("{}-spk{k:03}", split.name());
    let attacks: Vec<usize> = (0..cfg.attacks.len())
        .filter(|&i| split.hosts(cfg.attacks[i].split))
        .collect();
    let n = cfg.trials_per_class.get(split);

    let mut trials = Vec::with_capacity(3 * n);
    let mut meta = Vec::with_capacity(3 * n);
    // 0 = target, 1 = nontarget, 2 = spoof
    let mut kinds: Vec<usize> = (0..3 * n).map(|i| i / n).collect();
    kinds.shuffle(&mut rng);
    let mut spoof_counter = 0;
    for (i, kind) in kinds.into_iter().enumerate() {
        let target = rng.random_range(0..n_spk);
        let other = (target + rng.random_range(1..n_spk)) % n_spk;
        let session = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            gaussian_vector(cfg.d_asv, rng)
                .into_iter()
                .map(|v| v * cfg.session_noise)
                .collect()
        };
        let enroll: Vec<f64> = speakers[target]
            .iter()
            .zip(session(&mut rng))
            .map(|(e, s)| e + s)
            .collect();
        let test_noise = session(&mut rng);
        let cm_noise: Vec<f64> = gaussian_vector(cfg.d_cm, &mut rng)
            .into_iter()
            .map(|v| v * cfg.cm_noise)
            .collect();
        let (test_center, x_cm, label, test_speaker) = match kind {
            0 => (speakers[target].clone(), cm_noise, TrialLabel::target(), target),
            1 => (speakers[other].clone(), cm_noise, TrialLabel::nontarget(), other),
            _ => {
                let a = attacks[spoof_counter % attacks.len()];
                spoof_counter += 1;
                let spec = &cfg.attacks[a];
                let keep = 1.0 - spec.asv_effectiveness;
                let center = speakers[target]
                    .iter()
                    .zip(&speakers[other])
                    .map(|(t, s)| t + keep * (s - t))
                    .collect();
                let shift = spec.cm_detectability * cfg.cm_shift;
                let x_cm = cm_noise
                    .iter()
                    .zip(&directions[a])
                    .map(|(n, d)| n + shift * d)
                    .collect();
                (center, x_cm, TrialLabel::spoof(spec.attack_id.clone())?, other)
            }
        };
        let x_asv = enroll
            .iter()
            .zip(test_center.iter().zip(&test_noise))
            .map(|(e, (c, s))| (e - (c + s)).abs())
            .collect();
        let id = format!("{}_{:05}", split.name(), i);
        trials.push(Trial::new(id, x_asv, x_cm, label, cfg.dims())?);
        meta.push(TrialMeta {
            enroll_speaker: speaker_name(target),
            test_speaker: speaker_name(test_speaker),
        });
    }
    Ok(SplitData { split, trials, meta })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop once the relative loss improvement over an epoch falls below this.
    pub plateau_tol: f64,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            lr: 0.05,
            batch_size: 64,
            max_epochs: 50,
            plateau_tol: 1e-4,
            seed: 1,
            hidden: vec![16],
            activation: Activation::Tanh,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("pretrain lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("pretrain batch_size must be positive".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn layer_sizes(&self, input: usize) -> Vec<usize> {
        let mut sizes = vec![input];
        sizes.extend(&self.hidden);
        sizes.push(1);
        sizes
    }
}

/// Training summary of one subsystem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretrainSummary {
    pub epochs: usize,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainOutcome {
    pub pair: PolicyPair,
    pub asv: PretrainSummary,
    pub cm: PretrainSummary,
}

/// Class weights making both classes contribute equally on average.
fn balanced_weights(n_pos: usize, n_neg: usize) -> (f64, f64) {
    let n = (n_pos + n_neg) as f64;
    (n / (2.0 * n_pos.max(1) as f64), n / (2.0 * n_neg.max(1) as f64))
}

type Examples<'a> = Vec<(&'a [f64], bool, f64)>;

fn fit_scorer(
    scorer: &mut Scorer,
    examples: &Examples<'_>,
    cfg: &PretrainConfig,
    seed: u64,
    what: &str,
) -> Result<PretrainSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prev = bce_gradients(scorer, examples)?.0;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        for idx in minibatches(&order, cfg.batch_size) {
            let batch: Examples<'_> = idx.iter().map(|&i| examples[i]).collect();
            let (_, mut tape) = bce_gradients(scorer, &batch)?;
            scorer
                .sgd_step(&mut tape, cfg.lr, StepDirection::Descent)
                .map_err(|e| match e {
                    Error::NonFiniteGradient(w) => Error::Diverged(format!("{what} pretraining: {w}")),
                    other => other,
                })?;
        }
        let loss = bce_gradients(scorer, examples)?.0;
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("{what} pretraining loss became {loss}")));
        }
        log::debug!("{what} pretraining epoch {epoch}: loss {loss:.6}");
        let improvement = (prev - loss) / prev.abs().max(f64::MIN_POSITIVE);
        prev = loss;
        if improvement < cfg.plateau_tol {
            return Ok(PretrainSummary {
                epochs: epoch,
                final_loss: loss,
            });
        }
    }
    Ok(PretrainSummary {
        epochs: cfg.max_epochs,
        final_loss: prev,
    })
}

/// Trains the ASV scorer on bonafide target vs non-target trials and the CM
/// scorer on bonafide vs spoof, separately, with class-balanced
/// cross-entropy.
pub fn pretrain_pair(train: &[Trial], cfg: &PretrainConfig) -> Result<PretrainOutcome> {
    cfg.validate()?;
    let first = train.first().ok_or(Error::MissingClass("target-bonafide"))?;
    let (d_asv, d_cm) = (first.x_asv.len(), first.x_cm.len());
    let mut asv = Scorer::new(&cfg.layer_sizes(d_asv), cfg.activation, derive_seed(cfg.seed, 1))?;
    let mut cm = Scorer::new(&cfg.layer_sizes(d_cm), cfg.activation, derive_seed(cfg.seed, 2))?;

    let count = |ex: &Examples<'_>| {
        let pos = ex.iter().filter(|e| e.1).count();
        (pos, ex.len() - pos)
    };
    let mut asv_ex = asv_examples(train, (1.0, 1.0));
    let (pos, neg) = count(&asv_ex);
    if pos == 0 || neg == 0 {
        return Err(Error::MissingClass(if pos == 0 {
            "target-bonafide"
        } else {
            "nontarget-bonafide"
        }));
    }
    let w = balanced_weights(pos, neg);
    asv_ex.iter_mut().for_each(|e| e.2 = if e.1 { w.0 } else { w.1 });

    let mut cm_ex = cm_examples(train, (1.0, 1.0));
    let (pos, neg) = count(&cm_ex);
    if neg == 0 {
        return Err(Error::MissingClass("spoof"));
    }
    let w = balanced_weights(pos, neg);
    cm_ex.iter_mut().for_each(|e| e.2 = if e.1 { w.0 } else { w.1 });

    let asv_summary = fit_scorer(&mut asv, &asv_ex, cfg, derive_seed(cfg.seed, 3), "ASV")?;
    let cm_summary = fit_scorer(&mut cm, &cm_ex, cfg, derive_seed(cfg.seed, 4), "CM")?;
    Ok(PretrainOutcome {
        pair: PolicyPair::new(asv, cm),
        asv: asv_summary,
        cm: cm_summary,
    })
}
