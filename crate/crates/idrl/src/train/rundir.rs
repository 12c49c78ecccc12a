//! Run directory layout: resolved config, metrics, checkpoints,
//! certificates, and rendered curves all live under one root.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;

use super::metrics::{parse_metrics_csv, MetricsRow, METRICS_HEADER};
use super::TrainError;

pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    /// Create (or open) the run directory and its checkpoint subdirectory.
    pub fn create(root: impl Into<PathBuf>) -> Result<RunDir, TrainError> {
        let root = root.into();
        fs::create_dir_all(root.join("checkpoints"))?;
        Ok(RunDir { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("resolved_config.toml")
    }

    pub fn certificates_path(&self) -> PathBuf {
        self.root.join("certificates.csv")
    }

    pub fn summary_path(&self) -> PathBuf {
        self.root.join("certificates_summary.json")
    }

    pub fn checkpoint_path(&self, step: usize) -> PathBuf {
        self.root.join("checkpoints").join(format!("ckpt_{step:012}.bin"))
    }

    pub fn diagnostic_checkpoint_path(&self, step: usize) -> PathBuf {
        self.root
            .join("checkpoints")
            .join(format!("diagnostic_{step:012}.bin"))
    }

    pub fn write_resolved_config(&self, cfg: &RunConfig) -> Result<(), TrainError> {
        fs::write(self.config_path(), cfg.to_toml())?;
        Ok(())
    }

    pub fn start_metrics(&self) -> Result<(), TrainError> {
        fs::write(self.metrics_path(), format!("{METRICS_HEADER}\n"))?;
        Ok(())
    }

    pub fn append_metrics(&self, row: &MetricsRow) -> Result<(), TrainError> {
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.metrics_path())?;
        writeln!(f, "{}", row.to_csv_line())?;
        Ok(())
    }

    pub fn read_metrics(&self) -> Result<Vec<MetricsRow>, TrainError> {
        let text = fs::read_to_string(self.metrics_path())?;
        Ok(parse_metrics_csv(&text))
    }

    /// Drop metrics rows recorded after `step` (resume support) and return
    /// the surviving rows.
    pub fn truncate_metrics_after(&self, step: usize) -> Result<Vec<MetricsRow>, TrainError> {
        let rows: Vec<MetricsRow> = self
            .read_metrics()?
            .into_iter()
            .filter(|r| r.step <= step)
            .collect();
        let mut text = String::from(METRICS_HEADER);
        text.push('\n');
        for r in &rows {
            text.push_str(&r.to_csv_line());
            text.push('\n');
        }
        fs::write(self.metrics_path(), text)?;
        Ok(rows)
    }

    /// Highest-step regular checkpoint, if any.
    pub fn latest_checkpoint(&self) -> Option<(usize, PathBuf)> {
        let dir = self.root.join("checkpoints");
        let mut best: Option<(usize, PathBuf)> = None;
        let entries = fs::read_dir(&dir).ok()?;
        for entry in entries.flatten() {
            let name = entry.file_name();
            let name = name.to_string_lossy();
            if let Some(step_str) = name
                .strip_prefix("ckpt_")
                .and_then(|s| s.strip_suffix(".bin"))
            {
                if let Ok(step) = step_str.parse::<usize>() {
                    if best.as_ref().map_or(true, |(b, _)| step > *b) {
                        best = Some((step, entry.path()));
                    }
                }
            }
        }
        best
    }
}
