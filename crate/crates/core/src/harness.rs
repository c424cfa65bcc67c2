//! Experiment harness: running a method with per-epoch evaluation,
//! telemetry, multi-seed aggregation and output manifests.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibration::{train_calibrator, Calibrator};
use crate::error::{Error, Result};
use crate::metrics::{asv_eer_point, cm_eer, filter_attacks, MetricReport, TdcfNormalization};
use crate::soft_tdcf::SoftThresholds;
use crate::train::{
    finetune_epoch, reinforce_epoch, soft_tdcf_epoch, Method, PolicyPair, RewardSpec, TrainConfig, TrainState,
    UpdateAudit,
};
use crate::types::{AsvLabel, CmLabel, ScoreSet, TandemCostParams, Trial};

pub const SPLIT_TRAIN: &str = "train";
pub const SPLIT_DEV: &str = "dev";
pub const SPLIT_EVAL: &str = "eval";
pub const SPLIT_EVAL_FILTERED: &str = "eval_filtered";

/// Trial sets used by a run. Tandem training uses `dev`; `train` is only
/// used to fit calibrators.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Vec<Trial>,
    pub dev: Vec<Trial>,
    pub eval: Vec<Trial>,
}

/// Evaluation settings shared by every run of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub costs: TandemCostParams,
    pub normalization: TdcfNormalization,
    pub exclude_attacks: BTreeSet<String>,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            costs: TandemCostParams::default(),
            normalization: TdcfNormalization::BestTrivialGate,
            exclude_attacks: BTreeSet::new(),
        }
    }
}

/// One CSV telemetry row. Evaluation rows carry metrics, training rows the
/// batch loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRow {
    pub step: usize,
    pub epoch: usize,
    pub method: Method,
    pub seed: u64,
    pub split: String,
    pub asv_eer: Option<f64>,
    pub cm_eer: Option<f64>,
    pub min_norm_tdcf: Option<f64>,
    pub train_loss: Option<f64>,
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSnapshot {
    pub method: Method,
    pub train: TrainConfig,
    pub settings: RunSettings,
    /// Digests of external inputs (data manifest, checkpoint), filled in by
    /// the caller.
    #[serde(default)]
    pub inputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: Method,
    pub seed: u64,
    pub rows: Vec<TelemetryRow>,
    pub initial: BTreeMap<String, MetricReport>,
    #[serde(rename = "final")]
    pub final_reports: BTreeMap<String, MetricReport>,
    pub config: RunSnapshot,
}

impl RunRecord {
    /// Evaluation rows of `split`, in step order.
    pub fn eval_rows<'a>(&'a self, split: &'a str) -> impl Iterator<Item = &'a TelemetryRow> + 'a {
        self.rows
            .iter()
            .filter(move |r| r.split == split && r.min_norm_tdcf.is_some())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        for r in &self.rows {
            w.serialize(r).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Vec<TelemetryRow>> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        r.deserialize()
            .collect::<std::result::Result<Vec<TelemetryRow>, _>>()
            .map_err(|e| csv_error(path, e))
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        path: path.to_path_buf(),
        line,
        reason: e.to_string(),
    }
}

/// Output of [`run_method`].
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub record: RunRecord,
    pub pair: PolicyPair,
    pub audit: UpdateAudit,
}

/// Fits the ASV calibrator on bonafide target vs non-target trials and the
/// CM calibrator on bonafide vs spoof trials, with priors taken from the
/// cost parameters.
pub fn fit_calibrators(pair: &PolicyPair, trials: &[Trial], p: &TandemCostParams) -> Result<(Calibrator, Calibrator)> {
    let scores = pair.score(trials)?;
    let asv: Vec<(f64, bool)> = scores
        .entries()
        .iter()
        .filter(|e| e.label.is_bonafide())
        .map(|e| (e.asv_score, e.label.asv() == AsvLabel::Target))
        .collect();
    let cm: Vec<(f64, bool)> = scores
        .entries()
        .iter()
        .map(|e| (e.cm_score, e.label.cm() == CmLabel::Bonafide))
        .collect();
    let bona = p.rho_tar + p.rho_non;
    let asv_priors = (p.rho_tar / bona, p.rho_non / bona);
    let cm_priors = (bona, p.rho_spoof);
    Ok((
        train_calibrator(&asv, asv_priors)?.calibrator,
        train_calibrator(&cm, cm_priors)?.calibrator,
    ))
}

/// Attaches whatever `method` needs on top of the pretrained pair:
/// calibration heads or initial soft thresholds.
pub fn prepare_pair(
    method: Method,
    pretrained: &PolicyPair,
    splits: &Splits,
    p: &TandemCostParams,
) -> Result<PolicyPair> {
    let mut pair = pretrained.clone();
    pair.asv.calibration = None;
    pair.cm.calibration = None;
    pair.taus = None;
    if method.uses_calibration() {
        let (asv, cm) = fit_calibrators(&pair, &splits.train, p)?;
        pair.asv.calibration = Some(asv);
        pair.cm.calibration = Some(cm);
    }
    if method == Method::SoftTdcf {
        let scores = pair.score(&splits.dev)?;
        pair.taus = Some(SoftThresholds {
            tau_asv: asv_eer_point(&scores)?.threshold.value(),
            tau_cm: cm_eer(&scores)?.threshold.value(),
        });
    }
    Ok(pair)
}

pub fn evaluate_pair(pair: &PolicyPair, trials: &[Trial], settings: &RunSettings) -> Result<(ScoreSet, MetricReport)> {
    let scores = pair.score(trials)?;
    let report = MetricReport::compute(&scores, &settings.costs, settings.normalization)?;
    Ok((scores, report))
}

/// Score sets of every evaluated split.
pub fn evaluation_scores(
    pair: &PolicyPair,
    splits: &Splits,
    settings: &RunSettings,
) -> Result<BTreeMap<String, ScoreSet>> {
    let mut out = BTreeMap::new();
    out.insert(SPLIT_DEV.to_owned(), pair.score(&splits.dev)?);
    let eval = pair.score(&splits.eval)?;
    if !settings.exclude_attacks.is_empty() {
        out.insert(
            SPLIT_EVAL_FILTERED.to_owned(),
            filter_attacks(&eval, &settings.exclude_attacks),
        );
    }
    out.insert(SPLIT_EVAL.to_owned(), eval);
    Ok(out)
}

fn evaluate_all(pair: &PolicyPair, splits: &Splits, settings: &RunSettings) -> Result<BTreeMap<String, MetricReport>> {
    evaluation_scores(pair, splits, settings)?
        .into_iter()
        .map(|(k, s)| Ok((k, MetricReport::compute(&s, &settings.costs, settings.normalization)?)))
        .collect()
}

fn eval_rows(
    reports: &BTreeMap<String, MetricReport>,
    step: usize,
    epoch: usize,
    method: Method,
    seed: u64,
) -> impl Iterator<Item = TelemetryRow> + '_ {
    reports.iter().map(move |(split, r)| TelemetryRow {
        step,
        epoch,
        method,
        seed,
        split: split.clone(),
        asv_eer: Some(r.asv_eer),
        cm_eer: Some(r.cm_eer),
        min_norm_tdcf: Some(r.min_norm_tdcf),
        train_loss: None,
    })
}

/// Trains `method` from `pretrained` on the dev split, evaluating dev, eval
/// and (if attacks are excluded) filtered eval after every epoch.
pub fn run_method(
    method: Method,
    pretrained: &PolicyPair,
    splits: &Splits,
    cfg: &TrainConfig,
    settings: &RunSettings,
) -> Result<RunOutput> {
    cfg.validate()?;
    settings.costs.validate()?;
    let mut pair = prepare_pair(method, pretrained, splits, &settings.costs)?;
    let mut state = TrainState::new(cfg.seed);
    let seed = cfg.seed;
    let initial = evaluate_all(&pair, splits, settings)?;
    let mut rows: Vec<TelemetryRow> = eval_rows(&initial, 0, 0, method, seed).collect();
    let mut last = initial.clone();
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let losses = match method {
            Method::Finetune => finetune_epoch(&mut pair, &splits.dev, cfg, &mut state)?,
            Method::SoftTdcf => soft_tdcf_epoch(&mut pair, &splits.dev, &settings.costs, cfg, &mut state)?,
            m => {
                let spec = RewardSpec {
                    kind: m.reward_kind().expect("REINFORCE variant"),
                    cost_params: settings.costs,
                };
                reinforce_epoch(&mut pair, &splits.dev, &spec, cfg, &mut state)?
            }
        };
        for loss in losses {
            step += 1;
            rows.push(TelemetryRow {
                step,
                epoch,
                method,
                seed,
                split: SPLIT_TRAIN.to_owned(),
                asv_eer: None,
                cm_eer: None,
                min_norm_tdcf: None,
                train_loss: Some(loss),
            });
        }
        last = evaluate_all(&pair, splits, settings)?;
        rows.extend(eval_rows(&last, step, epoch, method, seed));
        log::info!(
            "{method} seed {seed} epoch {epoch}: dev min t-DCF {:.4}",
            last[SPLIT_DEV].min_norm_tdcf
        );
    }
    Ok(RunOutput {
        record: RunRecord {
            method,
            seed,
            rows,
            initial,
            final_reports: last,
            config: RunSnapshot {
                method,
                train: cfg.clone(),
                settings: settings.clone(),
                inputs: BTreeMap::new(),
            },
        },
        pair,
        audit: state.audit,
    })
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    // shifting by the first value keeps identical inputs exact
    let x0 = xs.first().copied().unwrap_or(f64::NAN);
    let shift = xs.iter().map(|x| x - x0).sum::<f64>() / n;
    let mean = x0 + shift;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - x0 - shift).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Errors unless all records share one configuration up to method and seed.
pub fn check_consistent(records: &[RunRecord]) -> Result<()> {
    let key = |r: &RunRecord| {
        let mut c = r.config.clone();
        c.method = Method::Finetune;
        c.train.seed = 0;
        c
    };
    let first = records
        .first()
        .ok_or_else(|| Error::InconsistentRuns("no run records".into()))?;
    let reference = key(first);
    for r in records {
        if key(r) != reference {
            return Err(Error::InconsistentRuns(format!(
                "{} seed {} was run with a different configuration than {} seed {}",
                r.method, r.seed, first.method, first.seed
            )));
        }
    }
    Ok(())
}

/// Label used for the pretrained systems in comparison tables.
pub const INITIAL_LABEL: &str = "INITIAL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub split: String,
    pub n_seeds: usize,
    pub asv_eer_mean: f64,
    pub asv_eer_std: f64,
    pub cm_eer_mean: f64,
    pub cm_eer_std: f64,
    pub min_norm_tdcf_mean: f64,
    pub min_norm_tdcf_std: f64,
}

fn summarize(method: &str, split: &str, reports: &[&MetricReport]) -> ComparisonRow {
    let col = |f: fn(&MetricReport) -> f64| mean_std(&reports.iter().map(|r| f(r)).collect::<Vec<_>>());
    let (asv_eer_mean, asv_eer_std) = col(|r| r.asv_eer);
    let (cm_eer_mean, cm_eer_std) = col(|r| r.cm_eer);
    let (min_norm_tdcf_mean, min_norm_tdcf_std) = col(|r| r.min_norm_tdcf);
    ComparisonRow {
        method: method.to_owned(),
        split: split.to_owned(),
        n_seeds: reports.len(),
        asv_eer_mean,
        asv_eer_std,
        cm_eer_mean,
        cm_eer_std,
        min_norm_tdcf_mean,
        min_norm_tdcf_std,
    }
}

/// Per method and split: metric means and standard deviations over seeds of
/// the final reports, preceded by the initial (pretrained) rows.
pub fn comparison_table(records: &[RunRecord]) -> Result<Vec<ComparisonRow>> {
    check_consistent(records)?;
    let splits: BTreeSet<&str> = records
        .iter()
        .flat_map(|r| r.final_reports.keys().map(String::as_str))
        .collect();
    let methods: BTreeSet<Method> = records.iter().map(|r| r.method).collect();
    let mut rows = Vec::new();
    for &split in &splits {
        // every method starts from the same pretrained pair; count each seed once
        let first_method = *methods.iter().next().expect("non-empty");
        let initial: Vec<&MetricReport> = records
            .iter()
            .filter(|r| r.method == first_method)
            .filter_map(|r| r.initial.get(split))
            .collect();
        rows.push(summarize(INITIAL_LABEL, split, &initial));
        for &m in &methods {
            let finals: Vec<&MetricReport> = records
                .iter()
                .filter(|r| r.method == m)
                .filter_map(|r| r.final_reports.get(split))
                .collect();
            rows.push(summarize(m.name(), split, &finals));
        }
    }
    Ok(rows)
}

/// Mean and standard deviation over seeds of metric changes relative to
/// step 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub method: Method,
    pub split: String,
    pub epoch: usize,
    pub step: usize,
    pub n_seeds: usize,
    pub d_asv_eer_mean: f64,
    pub d_asv_eer_std: f64,
    pub d_cm_eer_mean: f64,
    pub d_cm_eer_std: f64,
    pub d_min_norm_tdcf_mean: f64,
    pub d_min_norm_tdcf_std: f64,
}

pub fn learning_curves(records: &[RunRecord]) -> Result<Vec<CurveRow>> {
    check_consistent(records)?;
    // (method, split, epoch) -> per-record deltas
    let mut acc: BTreeMap<(Method, String, usize), (usize, Vec<[f64; 3]>)> = BTreeMap::new();
    for r in records {
        let splits: BTreeSet<&str> = r.initial.keys().map(String::as_str).collect();
        for split in splits {
            let mut rows = r.eval_rows(split);
            let Some(base) = rows.next() else { continue };
            let metrics = |row: &TelemetryRow| {
                [
                    row.asv_eer.unwrap_or(f64::NAN),
                    row.cm_eer.unwrap_or(f64::NAN),
                    row.min_norm_tdcf.unwrap_or(f64::NAN),
                ]
            };
            let b = metrics(base);
            for row in std::iter::once(base).chain(rows) {
                let m = metrics(row);
                let entry = acc
                    .entry((r.method, split.to_owned(), row.epoch))
                    .or_insert((row.step, Vec::new()));
                if entry.0 != row.step {
                    return Err(Error::InconsistentRuns(format!(
                        "{} epoch {} ends at different steps across seeds",
                        r.method, row.epoch
                    )));
                }
                entry.1.push([m[0] - b[0], m[1] - b[1], m[2] - b[2]]);
            }
        }
    }
    Ok(acc
        .into_iter()
        .map(|((method, split, epoch), (step, deltas))| {
            let col = |k: usize| mean_std(&deltas.iter().map(|d| d[k]).collect::<Vec<_>>());
            let (d_asv_eer_mean, d_asv_eer_std) = col(0);
            let (d_cm_eer_mean, d_cm_eer_std) = col(1);
            let (d_min_norm_tdcf_mean, d_min_norm_tdcf_std) = col(2);
            CurveRow {
                method,
                split,
                epoch,
                step,
                n_seeds: deltas.len(),
                d_asv_eer_mean,
                d_asv_eer_std,
                d_cm_eer_mean,
                d_cm_eer_std,
                d_min_norm_tdcf_mean,
                d_min_norm_tdcf_std,
            }
        })
        .collect())
}

pub fn write_csv_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Lower-case hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Listing of every output file with its digest, plus the configuration
/// that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: BTreeMap<String, String>,
    pub config: serde_json::Value,
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else if path != root.join(MANIFEST_FILE) {
            out.push(path);
        }
    }
    Ok(())
}

/// Hashes every file below `dir` (except the manifest itself) and writes
/// `manifest.json`.
pub fn write_manifest(dir: &Path, config: &impl Serialize) -> Result<Manifest> {
    let mut paths = Vec::new();
    collect_files(dir, dir, &mut paths)?;
    let mut files = BTreeMap::new();
    for p in paths {
        let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
        let rel = p
            .strip_prefix(dir)
            .expect("collected below dir")
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/");
        files.insert(rel, sha256_hex(&bytes));
    }
    let manifest = Manifest {
        files,
        config: serde_json::to_value(config)?,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
