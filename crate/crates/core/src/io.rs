//! Plain-text protocol, feature and score files.
//!
//! * protocol: `trial_id asv_label cm_label attack_id` (`-` when bonafide)
//! * features: `trial_id` followed by the ASV then the CM feature values
//! * scores:   `trial_id asv_score cm_score`
//!
//! Reals are written with 17 significant digits so they round-trip exactly.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{AsvLabel, CmLabel, ScoreEntry, ScoreSet, Trial, TrialLabel};

fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

/// Non-empty lines with their 1-based line numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split_whitespace().collect::<Vec<_>>()))
        .filter(|(_, f)| !f.is_empty())
}

fn parse_real(path: &Path, line: usize, s: &str) -> Result<f64> {
    let v: f64 = s
        .parse()
        .map_err(|_| parse_err(path, line, format!("invalid number `{s}`")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("non-finite value `{s}`")));
    }
    Ok(v)
}

pub fn format_protocol<'a>(entries: impl IntoIterator<Item = (&'a str, &'a TrialLabel)>) -> String {
    let mut out = String::new();
    for (id, label) in entries {
        let _ = writeln!(
            out,
            "{id} {} {} {}",
            label.asv(),
            label.cm(),
            label.attack_id().unwrap_or("-")
        );
    }
    out
}

pub fn write_protocol(path: &Path, trials: &[Trial]) -> Result<()> {
    write_text(path, &format_protocol(trials.iter().map(|t| (t.id.as_str(), &t.label))))
}

pub fn read_protocol(path: &Path) -> Result<Vec<(String, TrialLabel)>> {
    let text = read(path)?;
    let mut out = Vec::new();
    for (n, f) in lines(&text) {
        if f.len() != 4 {
            return Err(parse_err(path, n, format!("expected 4 fields, found {}", f.len())));
        }
        let asv: AsvLabel = f[1].parse().map_err(|e: Error| parse_err(path, n, e.to_string()))?;
        let cm: CmLabel = f[2].parse().map_err(|e: Error| parse_err(path, n, e.to_string()))?;
        let attack = (f[3] != "-").then(|| f[3].to_owned());
        let label = TrialLabel::new(asv, cm, attack).map_err(|e| parse_err(path, n, e.to_string()))?;
        out.push((f[0].to_owned(), label));
    }
    Ok(out)
}

pub fn write_features(path: &Path, trials: &[Trial]) -> Result<()> {
    let mut out = String::new();
    for t in trials {
        out.push_str(&t.id);
        for &v in t.x_asv.iter().chain(&t.x_cm) {
            out.push(' ');
            out.push_str(&fmt_real(v));
        }
        out.push('\n');
    }
    write_text(path, &out)
}

/// Reads a features file into `(trial_id, x_asv, x_cm)` rows.
pub fn read_features(path: &Path, dims: (usize, usize)) -> Result<Vec<(String, Vec<f64>, Vec<f64>)>> {
    let text = read(path)?;
    let mut out = Vec::new();
    for (n, f) in lines(&text) {
        if f.len() != 1 + dims.0 + dims.1 {
            return Err(parse_err(
                path,
                n,
                format!("expected {} fields, found {}", 1 + dims.0 + dims.1, f.len()),
            ));
        }
        let vals = f[1..]
            .iter()
            .map(|s| parse_real(path, n, s))
            .collect::<Result<Vec<_>>>()?;
        out.push((f[0].to_owned(), vals[..dims.0].to_vec(), vals[dims.0..].to_vec()));
    }
    Ok(out)
}

/// Joins a protocol and a features file into trials, in protocol order.
pub fn load_trials(protocol: &Path, features: &Path, dims: (usize, usize)) -> Result<Vec<Trial>> {
    let labels = read_protocol(protocol)?;
    let mut feats: HashMap<String, (Vec<f64>, Vec<f64>)> = HashMap::new();
    for (id, a, c) in read_features(features, dims)? {
        if feats.insert(id.clone(), (a, c)).is_some() {
            return Err(Error::DuplicateTrialId(id));
        }
    }
    if feats.len() != labels.len() {
        return Err(Error::Config(format!(
            "{} lists {} trials but {} has {}",
            protocol.display(),
            labels.len(),
            features.display(),
            feats.len()
        )));
    }
    labels
        .into_iter()
        .map(|(id, label)| {
            let (a, c) = feats.remove(&id).ok_or_else(|| Error::InvalidTrial {
                id: id.clone(),
                reason: format!("no features in {}", features.display()),
            })?;
            Trial::new(id, a, c, label, dims)
        })
        .collect()
}

pub fn format_scores(s: &ScoreSet) -> String {
    let mut out = String::new();
    for e in s.entries() {
        let _ = writeln!(out, "{} {} {}", e.trial_id, fmt_real(e.asv_score), fmt_real(e.cm_score));
    }
    out
}

pub fn write_scores(path: &Path, s: &ScoreSet) -> Result<()> {
    write_text(path, &format_scores(s))
}

/// Reads a score file, attaching labels from `protocol` entries.
pub fn read_scores(path: &Path, protocol: &[(String, TrialLabel)]) -> Result<ScoreSet> {
    let labels: HashMap<&str, &TrialLabel> = protocol.iter().map(|(id, l)| (id.as_str(), l)).collect();
    let text = read(path)?;
    let mut entries = Vec::new();
    for (n, f) in lines(&text) {
        if f.len() != 3 {
            return Err(parse_err(path, n, format!("expected 3 fields, found {}", f.len())));
        }
        let label = labels
            .get(f[0])
            .ok_or_else(|| parse_err(path, n, format!("trial `{}` not in protocol", f[0])))?;
        entries.push(ScoreEntry {
            trial_id: f[0].to_owned(),
            label: (*label).clone(),
            asv_score: parse_real(path, n, f[1])?,
            cm_score: parse_real(path, n, f[2])?,
        });
    }
    ScoreSet::new(entries)
}
