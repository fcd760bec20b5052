//! CSV and JSON outputs. Column order is fixed; see the README for schemas.

use std::fs;
use std::path::{Path, PathBuf};

use metadefa_core::EpochRecord;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Version stamped into JSON reports; bump when any column or field changes.
pub const SCHEMA_VERSION: u32 = 1;

pub const HISTORY_COLUMNS: [&str; 8] = ["epoch", "ce", "cam", "minor_ori", "minor_aug", "style", "total", "val_accuracy"];

/// Mean and sample standard deviation (n − 1 denominator; 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(Error::write(dir))?;
    }
    let file = fs::File::create(path).map_err(Error::write(path))?;
    Ok(csv::Writer::from_writer(file))
}

/// Per-epoch meta-train losses (mean over the epoch's tasks) and source-validation accuracy.
pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(HISTORY_COLUMNS)?;
    for r in history {
        let l = &r.train_loss;
        w.write_record([
            r.epoch.to_string(),
            l.ce.to_string(),
            l.cam.to_string(),
            l.minor_ori.to_string(),
            l.minor_aug.to_string(),
            l.style.to_string(),
            l.total.to_string(),
            r.val_accuracy.to_string(),
        ])?;
    }
    w.flush().map_err(Error::write(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedAccuracy {
    pub seed: u64,
    pub domain: String,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub domain: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub source_domain: String,
    /// One entry per target domain, then `average` (statistics of per-seed target means).
    pub per_domain_accuracy: Vec<Summary>,
    pub per_seed_detail: Vec<SeedAccuracy>,
    pub loss_history_paths: Vec<PathBuf>,
}

pub const AVERAGE: &str = "average";

impl EvalReport {
    /// Aggregates per-seed accuracies; `targets` fixes the row order.
    pub fn aggregate(
        source_domain: &str,
        targets: &[String],
        detail: Vec<SeedAccuracy>,
        loss_history_paths: Vec<PathBuf>,
    ) -> Self {
        let mut rows: Vec<Summary> = targets
            .iter()
            .map(|t| {
                let v: Vec<f64> = detail.iter().filter(|d| &d.domain == t).map(|d| d.accuracy).collect();
                let (mean, std) = mean_std(&v);
                Summary {
                    domain: t.clone(),
                    mean,
                    std,
                }
            })
            .collect();
        let (mean, std) = mean_std(&per_seed_average(&detail, targets));
        rows.push(Summary {
            domain: AVERAGE.into(),
            mean,
            std,
        });
        Self {
            schema_version: SCHEMA_VERSION,
            source_domain: source_domain.into(),
            per_domain_accuracy: rows,
            per_seed_detail: detail,
            loss_history_paths,
        }
    }

    pub fn summary(&self, domain: &str) -> Option<&Summary> {
        self.per_domain_accuracy.iter().find(|s| s.domain == domain)
    }

    /// Writes `eval.json`, `eval.csv` (domain,mean,std) and
    /// `eval_seeds.csv` (seed,domain,accuracy) into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(Error::write(dir))?;
        let json = dir.join("eval.json");
        fs::write(&json, serde_json::to_string_pretty(self)? + "\n").map_err(Error::write(&json))?;

        let path = dir.join("eval.csv");
        let mut w = writer(&path)?;
        w.write_record(["domain", "mean", "std"])?;
        for s in &self.per_domain_accuracy {
            w.write_record([s.domain.clone(), s.mean.to_string(), s.std.to_string()])?;
        }
        w.flush().map_err(Error::write(&path))?;

        let path = dir.join("eval_seeds.csv");
        let mut w = writer(&path)?;
        w.write_record(["seed", "domain", "accuracy"])?;
        for d in &self.per_seed_detail {
            w.write_record([d.seed.to_string(), d.domain.clone(), d.accuracy.to_string()])?;
        }
        w.flush().map_err(Error::write(&path))
    }
}

/// Mean target accuracy of each seed, in order of first appearance.
pub fn per_seed_average(detail: &[SeedAccuracy], targets: &[String]) -> Vec<f64> {
    let mut seeds: Vec<u64> = Vec::new();
    for d in detail {
        if !seeds.contains(&d.seed) {
            seeds.push(d.seed);
        }
    }
    seeds
        .iter()
        .map(|s| {
            let v: Vec<f64> = detail
                .iter()
                .filter(|d| d.seed == *s && targets.contains(&d.domain))
                .map(|d| d.accuracy)
                .collect();
            mean_std(&v).0
        })
        .collect()
}

/// One ablation configuration and its evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub name: String,
    pub report: EvalReport,
}

/// `ablation.csv`: `config,<t>_mean,<t>_std,…,average_mean,average_std`;
/// `ablation_seeds.csv`: `config,seed,domain,accuracy`.
pub fn write_ablation(dir: &Path, targets: &[String], rows: &[AblationRow]) -> Result<()> {
    let path = dir.join("ablation.csv");
    let mut w = writer(&path)?;
    let mut header = vec!["config".to_string()];
    for d in targets.iter().map(String::as_str).chain([AVERAGE]) {
        header.push(format!("{d}_mean"));
        header.push(format!("{d}_std"));
    }
    w.write_record(&header)?;
    for row in rows {
        let mut rec = vec![row.name.clone()];
        for d in targets.iter().map(String::as_str).chain([AVERAGE]) {
            let s = row.report.summary(d).ok_or_else(|| Error::UnknownDomain(d.into()))?;
            rec.push(s.mean.to_string());
            rec.push(s.std.to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(Error::write(&path))?;

    let path = dir.join("ablation_seeds.csv");
    let mut w = writer(&path)?;
    w.write_record(["config", "seed", "domain", "accuracy"])?;
    for row in rows {
        for d in &row.report.per_seed_detail {
            w.write_record([row.name.clone(), d.seed.to_string(), d.domain.clone(), d.accuracy.to_string()])?;
        }
    }
    w.flush().map_err(Error::write(&path))
}
