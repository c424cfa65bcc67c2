//! Trials, labels, cost parameters and score containers shared by every
//! other module.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AsvLabel {
    Target,
    Nontarget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CmLabel {
    Bonafide,
    Spoof,
}

/// Binary decision of a detector or of the whole tandem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Accept,
    Reject,
}

impl Decision {
    pub fn from_bool(accept: bool) -> Self {
        if accept {
            Decision::Accept
        } else {
            Decision::Reject
        }
    }

    pub fn is_accept(self) -> bool {
        self == Decision::Accept
    }

    /// Logical-and of two decisions.
    pub fn and(self, other: Decision) -> Decision {
        Decision::from_bool(self.is_accept() && other.is_accept())
    }
}

/// The three legal trial classes of a tandem evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialClass {
    /// Target speaker, bonafide speech.
    Target,
    /// Non-target speaker, bonafide speech.
    Nontarget,
    /// Spoofing attack aimed at the target speaker.
    Spoof,
}

impl TrialClass {
    pub const ALL: [TrialClass; 3] = [TrialClass::Target, TrialClass::Nontarget, TrialClass::Spoof];

    pub fn name(self) -> &'static str {
        match self {
            TrialClass::Target => "target-bonafide",
            TrialClass::Nontarget => "nontarget-bonafide",
            TrialClass::Spoof => "spoof",
        }
    }
}

/// Ground-truth labels of one trial.
///
/// Only three combinations are representable: (target, bonafide),
/// (nontarget, bonafide) and (target, spoof, attack). Spoofs always claim the
/// target identity, and only spoofs carry an attack id.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrialLabel {
    asv: AsvLabel,
    cm: CmLabel,
    attack_id: Option<String>,
}

impl TrialLabel {
    pub fn new(asv: AsvLabel, cm: CmLabel, attack_id: Option<String>) -> Result<Self> {
        match (asv, cm, &attack_id) {
            (_, CmLabel::Bonafide, Some(a)) => {
                Err(Error::InvalidLabel(format!("bonafide trial carries attack id `{a}`")))
            }
            (_, CmLabel::Spoof, None) => Err(Error::InvalidLabel("spoof trial without attack id".into())),
            (AsvLabel::Nontarget, CmLabel::Spoof, _) => Err(Error::InvalidLabel(
                "spoof trials must claim the target identity".into(),
            )),
            (_, CmLabel::Spoof, Some(a)) if a.is_empty() || a == "-" || a.contains(char::is_whitespace) => {
                Err(Error::InvalidLabel(format!("invalid attack id `{a}`")))
            }
            _ => Ok(TrialLabel { asv, cm, attack_id }),
        }
    }

    pub fn target() -> Self {
        TrialLabel {
            asv: AsvLabel::Target,
            cm: CmLabel::Bonafide,
            attack_id: None,
        }
    }

    pub fn nontarget() -> Self {
        TrialLabel {
            asv: AsvLabel::Nontarget,
            cm: CmLabel::Bonafide,
            attack_id: None,
        }
    }

    pub fn spoof(attack_id: impl Into<String>) -> Result<Self> {
        TrialLabel::new(AsvLabel::Target, CmLabel::Spoof, Some(attack_id.into()))
    }

    pub fn of_class(class: TrialClass, attack_id: Option<&str>) -> Result<Self> {
        match class {
            TrialClass::Target => Ok(TrialLabel::target()),
            TrialClass::Nontarget => Ok(TrialLabel::nontarget()),
            TrialClass::Spoof => TrialLabel::spoof(attack_id.unwrap_or_default()),
        }
    }

    pub fn asv(&self) -> AsvLabel {
        self.asv
    }

    pub fn cm(&self) -> CmLabel {
        self.cm
    }

    pub fn attack_id(&self) -> Option<&str> {
        self.attack_id.as_deref()
    }

    pub fn class(&self) -> TrialClass {
        match (self.asv, self.cm) {
            (AsvLabel::Target, CmLabel::Bonafide) => TrialClass::Target,
            (AsvLabel::Nontarget, CmLabel::Bonafide) => TrialClass::Nontarget,
            _ => TrialClass::Spoof,
        }
    }

    pub fn is_bonafide(&self) -> bool {
        self.cm == CmLabel::Bonafide
    }
}

/// Ground-truth tandem decision: accept iff target speaker and bonafide speech.
pub fn tandem_ground_truth(label: &TrialLabel) -> Decision {
    Decision::from_bool(label.asv() == AsvLabel::Target && label.cm() == CmLabel::Bonafide)
}

/// One evaluation unit: ASV and CM inputs plus labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub id: String,
    pub x_asv: Vec<f64>,
    pub x_cm: Vec<f64>,
    pub label: TrialLabel,
}

impl Trial {
    /// Builds a trial, checking feature dimensions and finiteness.
    pub fn new(
        id: impl Into<String>,
        x_asv: Vec<f64>,
        x_cm: Vec<f64>,
        label: TrialLabel,
        dims: (usize, usize),
    ) -> Result<Self> {
        let id = id.into();
        if id.is_empty() || id.contains(char::is_whitespace) {
            return Err(Error::InvalidTrial {
                id,
                reason: "trial id must be non-empty without whitespace".into(),
            });
        }
        for (name, x, d) in [("x_asv", &x_asv, dims.0), ("x_cm", &x_cm, dims.1)] {
            if x.len() != d {
                return Err(Error::InvalidTrial {
                    id,
                    reason: format!("{name} has dimension {}, expected {d}", x.len()),
                });
            }
            if let Some(i) = x.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidTrial {
                    id,
                    reason: format!("{name}[{i}] is not finite"),
                });
            }
        }
        Ok(Trial { id, x_asv, x_cm, label })
    }

    pub fn class(&self) -> TrialClass {
        self.label.class()
    }
}

/// The five t-DCF parameters: three costs and three priors summing to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TandemCostParams {
    pub c_miss: f64,
    pub c_fa: f64,
    pub c_fa_spoof: f64,
    pub rho_tar: f64,
    pub rho_non: f64,
    pub rho_spoof: f64,
}

impl Default for TandemCostParams {
    /// ASVspoof 2019 evaluation convention.
    fn default() -> Self {
        TandemCostParams {
            c_miss: 1.0,
            c_fa: 10.0,
            c_fa_spoof: 10.0,
            rho_tar: 0.9405,
            rho_non: 0.0095,
            rho_spoof: 0.05,
        }
    }
}

impl TandemCostParams {
    pub fn new(c_miss: f64, c_fa: f64, c_fa_spoof: f64, rho_tar: f64, rho_non: f64, rho_spoof: f64) -> Result<Self> {
        let p = TandemCostParams {
            c_miss,
            c_fa,
            c_fa_spoof,
            rho_tar,
            rho_non,
            rho_spoof,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        validate_cost_params(self)
    }

    /// Weighted cost of a missed target, `C_miss * rho_tar`.
    pub fn miss_weight(&self) -> f64 {
        self.c_miss * self.rho_tar
    }

    /// Weighted cost of an accepted non-target, `C_fa * rho_non`.
    pub fn fa_weight(&self) -> f64 {
        self.c_fa * self.rho_non
    }

    /// Weighted cost of an accepted spoof, `C_fa,spoof * rho_spoof`.
    pub fn fa_spoof_weight(&self) -> f64 {
        self.c_fa_spoof * self.rho_spoof
    }
}

pub fn validate_cost_params(p: &TandemCostParams) -> Result<()> {
    let costs = [("c_miss", p.c_miss), ("c_fa", p.c_fa), ("c_fa_spoof", p.c_fa_spoof)];
    let priors = [
        ("rho_tar", p.rho_tar),
        ("rho_non", p.rho_non),
        ("rho_spoof", p.rho_spoof),
    ];
    for (name, v) in costs.iter().chain(priors.iter()) {
        if !v.is_finite() {
            return Err(Error::InvalidCostParams(format!("{name} is not finite")));
        }
    }
    for (name, c) in costs {
        if c < 0.0 {
            return Err(Error::InvalidCostParams(format!("negative cost {name} = {c}")));
        }
        if c == 0.0 {
            return Err(Error::InvalidCostParams(format!("cost {name} must be > 0")));
        }
    }
    for (name, r) in priors {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::InvalidCostParams(format!(
                "prior {name} = {r} out of range [0, 1]"
            )));
        }
    }
    let sum = p.rho_tar + p.rho_non + p.rho_spoof;
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidCostParams(format!("priors sum to {sum}")));
    }
    Ok(())
}

/// One scored trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub trial_id: String,
    pub label: TrialLabel,
    pub asv_score: f64,
    pub cm_score: f64,
}

/// Aligned ASV and CM scores with labels; the unit every metric consumes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    entries: Vec<ScoreEntry>,
}

impl ScoreSet {
    pub fn new(entries: Vec<ScoreEntry>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if !e.asv_score.is_finite() || !e.cm_score.is_finite() {
                return Err(Error::NonFinite(format!("score of trial `{}`", e.trial_id)));
            }
            if !seen.insert(e.trial_id.as_str()) {
                return Err(Error::DuplicateTrialId(e.trial_id.clone()));
            }
        }
        Ok(ScoreSet { entries })
    }

    pub fn entries(&self) -> &[ScoreEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn of_class(&self, class: TrialClass) -> impl Iterator<Item = &ScoreEntry> {
        self.entries.iter().filter(move |e| e.label.class() == class)
    }

    pub fn count(&self, class: TrialClass) -> usize {
        self.of_class(class).count()
    }

    /// Retains entries matching `keep`. Uniqueness and finiteness are preserved.
    pub fn filtered(&self, mut keep: impl FnMut(&ScoreEntry) -> bool) -> ScoreSet {
        ScoreSet {
            entries: self.entries.iter().filter(|e| keep(e)).cloned().collect(),
        }
    }

    /// Sorted, de-duplicated attack ids present in the set.
    pub fn attack_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .entries
            .iter()
            .filter_map(|e| e.label.attack_id().map(str::to_owned))
            .collect();
        ids.sort();
        ids.dedup();
        ids
    }

    /// Errors unless all three trial classes are present.
    pub fn require_all_classes(&self) -> Result<()> {
        for class in TrialClass::ALL {
            if self.count(class) == 0 {
                return Err(Error::MissingClass(class.name()));
            }
        }
        Ok(())
    }
}

/// Tandem error rates of the four error cases.
///
/// * `p_a`: target accepted by the CM but rejected by the ASV
/// * `p_b`: non-target accepted by both
/// * `p_c`: spoof accepted by both
/// * `p_d`: target rejected by the CM
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorRates {
    pub p_a: f64,
    pub p_b: f64,
    pub p_c: f64,
    pub p_d: f64,
}

impl fmt::Display for AsvLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AsvLabel::Target => "target",
            AsvLabel::Nontarget => "nontarget",
        })
    }
}

impl FromStr for AsvLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "target" => Ok(AsvLabel::Target),
            "nontarget" => Ok(AsvLabel::Nontarget),
            other => Err(Error::InvalidLabel(format!("unknown ASV label `{other}`"))),
        }
    }
}

impl fmt::Display for CmLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CmLabel::Bonafide => "bonafide",
            CmLabel::Spoof => "spoof",
        })
    }
}

impl FromStr for CmLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bonafide" => Ok(CmLabel::Bonafide),
            "spoof" => Ok(CmLabel::Spoof),
            other => Err(Error::InvalidLabel(format!("unknown CM label `{other}`"))),
        }
    }
}
