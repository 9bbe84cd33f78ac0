//! Report persistence: per-round CSV summary and a JSON provenance
//! document.

use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

use super::{ExperimentConfig, RoundResult};
use crate::error::Result;

/// FNV-1a over the canonical JSON serialization of the config.
pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let json = serde_json::to_string(cfg)?;
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in json.as_bytes() {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    Ok(format!("{hash:016x}"))
}

/// Full provenance document persisted as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDoc {
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub rounds: Vec<RoundResult>,
}

impl ReportDoc {
    pub fn new(config: &ExperimentConfig, rounds: &[RoundResult]) -> Result<Self> {
        Ok(ReportDoc {
            config_hash: config_hash(config)?,
            config: config.clone(),
            rounds: rounds.to_vec(),
        })
    }

    /// Copy with wall-clock fields zeroed, for determinism comparisons.
    pub fn without_timings(&self) -> Self {
        let mut doc = self.clone();
        for r in &mut doc.rounds {
            r.train_seconds = 0.0;
            r.eval_seconds = 0.0;
            r.query_seconds = 0.0;
        }
        doc
    }
}

pub const REPORT_CSV_COLUMNS: usize = 8;

fn rounds_to_csv(rounds: &[RoundResult]) -> String {
    let mut out = String::from("round,ratio,labeled,oa,aa,train_s,eval_s,query_s\n");
    for r in rounds {
        out.push_str(&format!(
            "{},{:.6},{},{:.6},{:.6},{:.3},{:.3},{:.3}\n",
            r.round, r.ratio, r.labeled_size, r.oa, r.aa, r.train_seconds, r.eval_seconds,
            r.query_seconds
        ));
    }
    out
}

/// Write `report.csv` and `report.json` into `dir`; returns both paths.
pub fn emit_report(
    config: &ExperimentConfig,
    rounds: &[RoundResult],
    dir: &Path,
) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let csv_path = dir.join("report.csv");
    let json_path = dir.join("report.json");
    fs::write(&csv_path, rounds_to_csv(rounds))?;
    let doc = ReportDoc::new(config, rounds)?;
    fs::write(&json_path, serde_json::to_string_pretty(&doc)?)?;
    Ok((csv_path, json_path))
}

/// Parse a `report.json` back into its document form.
pub fn read_report_json(path: &Path) -> Result<ReportDoc> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn sample_rounds() -> Vec<RoundResult> {
        vec![RoundResult {
            round: 0,
            ratio: 0.01,
            labeled_size: 14,
            oa: 0.5,
            aa: 0.4875,
            per_class_acc: vec![0.5, 0.475],
            queried: vec![3, 9],
            train_seconds: 1.25,
            eval_seconds: 0.01,
            query_seconds: 0.5,
        }]
    }

    #[test]
    fn csv_has_fixed_column_count() {
        let csv = rounds_to_csv(&sample_rounds());
        for line in csv.lines() {
            assert_eq!(line.split(',').count(), REPORT_CSV_COLUMNS, "line {line:?}");
        }
    }

    #[test]
    fn json_round_trips() {
        let dir = tempdir().unwrap();
        let cfg = ExperimentConfig::default();
        let rounds = sample_rounds();
        let (_, json_path) = emit_report(&cfg, &rounds, dir.path()).unwrap();
        let doc = read_report_json(&json_path).unwrap();
        assert_eq!(doc.rounds, rounds);
        assert_eq!(doc.config, cfg);
        assert_eq!(doc.config_hash, config_hash(&cfg).unwrap());
    }

    #[test]
    fn deterministic_bytes_given_results() {
        let dir1 = tempdir().unwrap();
        let dir2 = tempdir().unwrap();
        let cfg = ExperimentConfig::default();
        let rounds = sample_rounds();
        let (c1, j1) = emit_report(&cfg, &rounds, dir1.path()).unwrap();
        let (c2, j2) = emit_report(&cfg, &rounds, dir2.path()).unwrap();
        assert_eq!(fs::read(c1).unwrap(), fs::read(c2).unwrap());
        assert_eq!(fs::read(j1).unwrap(), fs::read(j2).unwrap());
    }

    #[test]
    fn config_hash_distinguishes_configs() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig {
            trial_seed: 1,
            ..Default::default()
        };
        assert_ne!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
    }
}
