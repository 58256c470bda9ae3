use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::error::{Error, Result};

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const TABLE_FILE: &str = "table.md";

/// Cross-validation result of one run. Accuracies are percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub variant: String,
    pub seed: u64,
    pub config_hash: String,
    pub fold_accuracies: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation over folds.
    pub std: f64,
    pub wall_clock_seconds: f64,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl EvalReport {
    pub fn new(cfg: &RunConfig, dataset: &str, fold_accuracies: Vec<f64>, wall_clock_seconds: f64) -> Self {
        let (mean, std) = mean_std(&fold_accuracies);
        Self {
            dataset: dataset.to_string(),
            variant: cfg.variant(),
            seed: cfg.seed,
            config_hash: cfg.hash(),
            fold_accuracies,
            mean,
            std,
            wall_clock_seconds,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("dataset,variant,seed,config_hash,fold,accuracy\n");
        for (i, a) in self.fold_accuracies.iter().enumerate() {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                self.dataset,
                self.variant,
                self.seed,
                self.config_hash,
                i + 1,
                a
            ));
        }
        s.push_str(&format!(
            "{},{},{},{},mean,{}\n{},{},{},{},std,{}\n",
            self.dataset, self.variant, self.seed, self.config_hash, self.mean, self.dataset, self.variant, self.seed,
            self.config_hash, self.std
        ));
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join(REPORT_JSON), serde_json::to_string_pretty(self)? + "\n")?;
        fs::write(dir.join(REPORT_CSV), self.to_csv())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        let r: Self = serde_json::from_str(&text)?;
        if r.fold_accuracies.is_empty() {
            return Err(Error::Config(format!("{}: report has no folds", path.display())));
        }
        Ok(r)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalTable {
    pub rows: Vec<EvalReport>,
    pub skipped: Vec<PathBuf>,
}

/// Read reports, skipping unreadable ones with a warning.
pub fn collect_reports(paths: &[PathBuf]) -> EvalTable {
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for p in paths {
        let path = if p.is_dir() { p.join(REPORT_JSON) } else { p.clone() };
        match EvalReport::read(&path) {
            Ok(r) => rows.push(r),
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                skipped.push(path);
            }
        }
    }
    EvalTable { rows, skipped }
}

impl EvalTable {
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| Dataset | Variant | Seed | Accuracy (%) | Folds | Config |\n");
        s.push_str("|---|---|---|---|---|---|\n");
        for r in &self.rows {
            s.push_str(&format!(
                "| {} | {} | {} | {:.2} ± {:.2} | {} | {} |\n",
                r.dataset,
                r.variant,
                r.seed,
                r.mean,
                r.std,
                r.fold_accuracies.len(),
                r.config_hash
            ));
        }
        if !self.skipped.is_empty() {
            s.push_str(&format!("\nSkipped {} unreadable report(s).\n", self.skipped.len()));
        }
        s
    }
}

/// Render the table, print it and write `table.md` into `out`.
pub fn cmd_eval(paths: &[PathBuf], out: &Path) -> Result<EvalTable> {
    if paths.is_empty() {
        return Err(Error::Config("eval needs at least one report".into()));
    }
    let table = collect_reports(paths);
    fs::create_dir_all(out)?;
    let md = table.to_markdown();
    fs::write(out.join(TABLE_FILE), &md)?;
    print!("{md}");
    Ok(table)
}
