use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use tandem_core::config::Config;
use tandem_core::harness::{
    comparison_table, evaluation_scores, learning_curves, run_method, write_csv_rows, write_manifest, RunRecord,
    RunSettings, Splits, MANIFEST_FILE,
};
use tandem_core::io::{load_trials, write_features, write_protocol, write_scores, write_text};
use tandem_core::metrics::filter_attacks;
use tandem_core::synth::{generate_world, Split};
use tandem_core::train::{Method, TrainConfig};
use tandem_core::{MetricReport, PolicyPair, Trial, TrialClass};

pub const CONFIG_FILE: &str = "config.toml";
pub const RECORD_FILE: &str = "record.json";

fn protocol_path(dir: &Path, split: &str) -> PathBuf {
    dir.join(format!("{split}.protocol.txt"))
}

fn features_path(dir: &Path, split: &str) -> PathBuf {
    dir.join(format!("{split}.features.txt"))
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    write_text(path, &text)?;
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Ok(Config::load(p)?),
        None => Ok(Config::default()),
    }
}

/// Configuration of a data directory, unless overridden.
fn data_config(data: &Path, over: Option<&Path>) -> Result<Config> {
    let path = over.map(Path::to_path_buf).unwrap_or_else(|| data.join(CONFIG_FILE));
    Config::load(&path).with_context(|| format!("loading configuration for {}", data.display()))
}

fn load_split(data: &Path, split: &str, cfg: &Config) -> Result<Vec<Trial>> {
    Ok(load_trials(
        &protocol_path(data, split),
        &features_path(data, split),
        cfg.world.dims(),
    )?)
}

fn load_splits(data: &Path, cfg: &Config) -> Result<Splits> {
    Ok(Splits {
        train: load_split(data, "train", cfg)?,
        dev: load_split(data, "dev", cfg)?,
        eval: load_split(data, "eval", cfg)?,
    })
}

fn load_checkpoint(path: &Path, cfg: &Config) -> Result<PolicyPair> {
    let text = fs::read_to_string(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    let pair: PolicyPair =
        serde_json::from_str(&text).with_context(|| format!("parsing checkpoint {}", path.display()))?;
    pair.check_dims(cfg.world.dims())
        .with_context(|| format!("checkpoint {} does not match the data", path.display()))?;
    Ok(pair)
}

fn parse_exclusions(flag: Option<&str>, cfg: &Config) -> BTreeSet<String> {
    match flag {
        Some(list) => list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_owned)
            .collect(),
        None => cfg.experiment.excluded(),
    }
}

fn settings(cfg: &Config, exclude: BTreeSet<String>) -> RunSettings {
    RunSettings {
        costs: cfg.costs,
        normalization: cfg.experiment.normalization,
        exclude_attacks: exclude,
    }
}

fn summary(report: &MetricReport) -> String {
    format!(
        "asv_eer {:.4}  cm_eer {:.4}  min_norm_tdcf {:.4}",
        report.asv_eer, report.cm_eer, report.min_norm_tdcf
    )
}

pub fn gen_data(config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let world = generate_world(&cfg.world)?;
    create_dir(out)?;
    write_text(&out.join(CONFIG_FILE), &cfg.to_toml()?)?;
    for split in Split::ALL {
        let data = world.split(split);
        let name = split.name();
        write_protocol(&protocol_path(out, name), &data.trials)?;
        write_features(&features_path(out, name), &data.trials)?;
        let count = |c| data.trials.iter().filter(|t| t.class() == c).count();
        let attacks: Vec<&str> = data.attack_ids().into_iter().collect();
        println!(
            "{name}: {} trials ({} target, {} nontarget, {} spoof), {} speakers, attacks {}",
            data.trials.len(),
            count(TrialClass::Target),
            count(TrialClass::Nontarget),
            count(TrialClass::Spoof),
            data.speakers().len(),
            attacks.join(",")
        );
    }
    write_manifest(out, &cfg)?;
    Ok(())
}

pub fn pretrain(data: &Path, out: &Path, config: Option<&Path>) -> Result<()> {
    let cfg = data_config(data, config)?;
    let splits = load_splits(data, &cfg)?;
    let outcome = tandem_core::pretrain_pair(&splits.train, &cfg.pretrain)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_json(out, &outcome.pair)?;
    println!(
        "pretrained ASV: {} epochs, loss {:.5}; CM: {} epochs, loss {:.5}",
        outcome.asv.epochs, outcome.asv.final_loss, outcome.cm.epochs, outcome.cm.final_loss
    );
    let run = settings(&cfg, cfg.experiment.excluded());
    for (split, scores) in evaluation_scores(&outcome.pair, &splits, &run)? {
        let report = MetricReport::compute(&scores, &run.costs, run.normalization)?;
        println!("initial {split:<14} {}", summary(&report));
    }
    Ok(())
}

pub struct TrainArgs<'a> {
    pub method: &'a str,
    pub ckpt: &'a Path,
    pub data: &'a Path,
    pub seeds: Option<usize>,
    pub out: &'a Path,
    pub exclude_attacks: Option<&'a str>,
    pub config: Option<&'a Path>,
}

pub fn train_tandem(args: &TrainArgs<'_>) -> Result<()> {
    let method: Method = args.method.parse()?;
    let cfg = data_config(args.data, args.config)?;
    let pretrained = load_checkpoint(args.ckpt, &cfg)?;
    let splits = load_splits(args.data, &cfg)?;
    let seeds = args.seeds.unwrap_or(cfg.experiment.seeds);
    if seeds == 0 {
        bail!("--seeds must be positive");
    }
    let run = settings(&cfg, parse_exclusions(args.exclude_attacks, &cfg));
    let mut inputs = std::collections::BTreeMap::new();
    inputs.insert("checkpoint".to_owned(), sha256_file(args.ckpt)?);
    let data_manifest = args.data.join(MANIFEST_FILE);
    if data_manifest.exists() {
        inputs.insert("data_manifest".to_owned(), sha256_file(&data_manifest)?);
    }

    for k in 0..seeds as u64 {
        let train = TrainConfig {
            seed: cfg.train.seed + k,
            ..cfg.train.clone()
        };
        let mut output = run_method(method, &pretrained, &splits, &train, &run)
            .with_context(|| format!("{method} seed {}", train.seed))?;
        output.record.config.inputs = inputs.clone();
        let dir = args.out.join(method.name()).join(format!("seed_{}", train.seed));
        create_dir(&dir)?;
        write_json(&dir.join(RECORD_FILE), &output.record)?;
        output.record.write_csv(&dir.join("telemetry.csv"))?;
        write_json(&dir.join("final.ckpt.json"), &output.pair)?;
        for (split, scores) in evaluation_scores(&output.pair, &splits, &run)? {
            write_scores(&dir.join(format!("scores_{split}.txt")), &scores)?;
        }
        let r = &output.record;
        let line: Vec<String> = r
            .initial
            .iter()
            .map(|(split, init)| {
                format!(
                    "{split} {:.4} -> {:.4}",
                    init.min_norm_tdcf, r.final_reports[split].min_norm_tdcf
                )
            })
            .collect();
        println!("{method} seed {}: {}", train.seed, line.join(", "));
    }
    write_manifest(args.out, &cfg)?;
    Ok(())
}

pub fn evaluate(
    ckpt: &Path,
    data: &Path,
    exclude_attacks: Option<&str>,
    out: &Path,
    split: &str,
    config: Option<&Path>,
) -> Result<()> {
    let cfg = data_config(data, config)?;
    if !Split::ALL.iter().any(|s| s.name() == split) {
        bail!("unknown split `{split}`; expected train, dev or eval");
    }
    let pair = load_checkpoint(ckpt, &cfg)?;
    let trials = load_split(data, split, &cfg)?;
    let excluded: BTreeSet<String> = match exclude_attacks {
        Some(list) => parse_exclusions(Some(list), &cfg),
        None => BTreeSet::new(),
    };
    let scores = filter_attacks(&pair.score(&trials)?, &excluded);
    let report = MetricReport::compute(&scores, &cfg.costs, cfg.experiment.normalization)
        .with_context(|| format!("evaluating {split}"))?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_scores(&scores_path(out), &scores)?;
    write_json(out, &report)?;
    println!("{split}: {}", summary(&report));
    Ok(())
}

/// Score file written next to an evaluation report.
pub fn scores_path(report: &Path) -> PathBuf {
    report.with_extension("scores.txt")
}

fn find_records(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    entries.sort();
    for path in entries {
        if path.is_dir() {
            find_records(&path, out)?;
        } else if path.file_name().is_some_and(|n| n == RECORD_FILE) {
            out.push(path);
        }
    }
    Ok(())
}

pub fn report(runs: &Path, out: &Path) -> Result<()> {
    let mut paths = Vec::new();
    find_records(runs, &mut paths)?;
    if paths.is_empty() {
        bail!("no {RECORD_FILE} found below {}", runs.display());
    }
    let records = paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<RunRecord>(&text).with_context(|| format!("parsing {}", p.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    let table = comparison_table(&records)?;
    let curves = learning_curves(&records)?;
    create_dir(out)?;
    write_csv_rows(&out.join("comparison.csv"), &table)?;
    write_csv_rows(&out.join("learning_curves.csv"), &curves)?;
    let runs_list: Vec<_> = records
        .iter()
        .map(|r| json!({"method": r.method, "seed": r.seed}))
        .collect();
    write_manifest(out, &json!({ "runs": runs_list, "config": records[0].config }))?;
    for row in table.iter().filter(|r| r.split != "train") {
        println!(
            "{:<22} {:<14} asv_eer {:.4}  cm_eer {:.4}  min_norm_tdcf {:.4} ± {:.4}",
            row.method, row.split, row.asv_eer_mean, row.cm_eer_mean, row.min_norm_tdcf_mean, row.min_norm_tdcf_std
        );
    }
    Ok(())
}
