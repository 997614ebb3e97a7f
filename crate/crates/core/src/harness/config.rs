// SPDX-License-Identifier: Apache-2.0

//! `key=value` run configuration. Lines starting with `#` are comments.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::aplearn::ApParams;
use crate::dataio::SubsetPolicy;
use crate::error::{Error, Result};
use crate::pretrain::PretrainSchedule;
use crate::somcore::KernelParams;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub val_images: Option<PathBuf>,
    pub val_labels: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub checkpoint_in: Option<PathBuf>,
    pub checkpoint_out: Option<PathBuf>,
    pub seed: u64,
    pub block_size: usize,
    pub n_blocks: usize,
    pub validation_size: usize,
    pub subset_policy: SubsetPolicy,
    pub ap: ApParams,
    pub kernels: KernelParams,
    pub pretrain_iterations: u64,
    pub pretrain_rho_start: f64,
    pub pretrain_rho_end: f64,
    pub pretrain_sigma_start: f64,
    pub pretrain_sigma_end: f64,
    pub log_interval: u64,
    /// Write wall-clock seconds into curve files (0 otherwise).
    pub record_timing: bool,
    pub export_atlas: bool,
    pub export_usage: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let schedule = PretrainSchedule::default();
        RunConfig {
            train_images: None,
            train_labels: None,
            val_images: None,
            val_labels: None,
            out_dir: PathBuf::from("out"),
            checkpoint_in: None,
            checkpoint_out: None,
            seed: 1,
            block_size: 10_000,
            n_blocks: 20,
            validation_size: 10_000,
            subset_policy: SubsetPolicy::Fixed,
            ap: ApParams::default(),
            kernels: KernelParams::default(),
            pretrain_iterations: schedule.total,
            pretrain_rho_start: schedule.rho_start,
            pretrain_rho_end: schedule.rho_end,
            pretrain_sigma_start: schedule.sigma_start,
            pretrain_sigma_end: schedule.sigma_end,
            log_interval: 1000,
            record_timing: true,
            export_atlas: true,
            export_usage: true,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected true/false, got {value:?}"
        ))),
    }
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_default()
}

impl RunConfig {
    /// Sets one key. Hyphens and underscores are interchangeable.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        let k = key.as_str();
        match k {
            "train_images" => self.train_images = opt_path(value),
            "train_labels" => self.train_labels = opt_path(value),
            "val_images" => self.val_images = opt_path(value),
            "val_labels" => self.val_labels = opt_path(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "checkpoint_in" => self.checkpoint_in = opt_path(value),
            "checkpoint_out" => self.checkpoint_out = opt_path(value),
            "seed" => self.seed = parse_num(k, value)?,
            "block_size" => self.block_size = parse_num(k, value)?,
            "blocks" | "n_blocks" => self.n_blocks = parse_num(k, value)?,
            "validation_size" => self.validation_size = parse_num(k, value)?,
            "subset_policy" => {
                self.subset_policy = match value {
                    "fixed" => SubsetPolicy::Fixed,
                    "rolling" => SubsetPolicy::Rolling,
                    _ => return Err(Error::Config(format!("{k}: expected fixed or rolling"))),
                }
            }
            "rho_base" => self.ap.rho_base = parse_num(k, value)?,
            "beta" => self.ap.beta = parse_num(k, value)?,
            "anchor_output" => self.ap.anchor_output = parse_bool(k, value)?,
            "r" => self.ap.r = parse_num(k, value)?,
            "n" => self.ap.n = parse_num(k, value)?,
            "sigma_out" => self.kernels.sigma_out = parse_num(k, value)?,
            "sigma_update" => self.kernels.sigma_update = parse_num(k, value)?,
            "normalize_inputs" => self.kernels.normalize_inputs = parse_bool(k, value)?,
            "pretrain_iterations" => self.pretrain_iterations = parse_num(k, value)?,
            "pretrain_rho_start" => self.pretrain_rho_start = parse_num(k, value)?,
            "pretrain_rho_end" => self.pretrain_rho_end = parse_num(k, value)?,
            "pretrain_sigma_start" => self.pretrain_sigma_start = parse_num(k, value)?,
            "pretrain_sigma_end" => self.pretrain_sigma_end = parse_num(k, value)?,
            "log_interval" => self.log_interval = parse_num(k, value)?,
            "record_timing" => self.record_timing = parse_bool(k, value)?,
            "export_atlas" => self.export_atlas = parse_bool(k, value)?,
            "export_usage" => self.export_usage = parse_bool(k, value)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies every `key=value` line of `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Pre-training schedule: the first `n - 1` layers open at staggered
    /// iterations, the output layer never trains.
    pub fn schedule(&self) -> PretrainSchedule {
        let n = self.ap.n;
        let mut s = PretrainSchedule::staggered(n, n.saturating_sub(1), self.pretrain_iterations);
        s.rho_start = self.pretrain_rho_start;
        s.rho_end = self.pretrain_rho_end;
        s.sigma_start = self.pretrain_sigma_start;
        s.sigma_end = self.pretrain_sigma_end;
        s
    }

    /// Every key with its resolved value; parses back to the same config.
    pub fn to_manifest(&self) -> String {
        let policy = match self.subset_policy {
            SubsetPolicy::Fixed => "fixed",
            SubsetPolicy::Rolling => "rolling",
        };
        let entries: Vec<(&str, String)> = vec![
            ("train_images", show_path(&self.train_images)),
            ("train_labels", show_path(&self.train_labels)),
            ("val_images", show_path(&self.val_images)),
            ("val_labels", show_path(&self.val_labels)),
            ("out_dir", self.out_dir.display().to_string()),
            ("checkpoint_in", show_path(&self.checkpoint_in)),
            ("checkpoint_out", show_path(&self.checkpoint_out)),
            ("seed", self.seed.to_string()),
            ("block_size", self.block_size.to_string()),
            ("blocks", self.n_blocks.to_string()),
            ("validation_size", self.validation_size.to_string()),
            ("subset_policy", policy.to_string()),
            ("rho_base", self.ap.rho_base.to_string()),
            ("beta", self.ap.beta.to_string()),
            ("anchor_output", self.ap.anchor_output.to_string()),
            ("r", self.ap.r.to_string()),
            ("n", self.ap.n.to_string()),
            ("sigma_out", self.kernels.sigma_out.to_string()),
            ("sigma_update", self.kernels.sigma_update.to_string()),
            (
                "normalize_inputs",
                self.kernels.normalize_inputs.to_string(),
            ),
            ("pretrain_iterations", self.pretrain_iterations.to_string()),
            ("pretrain_rho_start", self.pretrain_rho_start.to_string()),
            ("pretrain_rho_end", self.pretrain_rho_end.to_string()),
            (
                "pretrain_sigma_start",
                self.pretrain_sigma_start.to_string(),
            ),
            ("pretrain_sigma_end", self.pretrain_sigma_end.to_string()),
            ("log_interval", self.log_interval.to_string()),
            ("record_timing", self.record_timing.to_string()),
            ("export_atlas", self.export_atlas.to_string()),
            ("export_usage", self.export_usage.to_string()),
        ];
        let mut out = String::from("# resolved deepsom configuration\n");
        for (k, v) in entries {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.kernels.validate()?;
        if self.block_size == 0 {
            return Err(Error::Config("block_size must be > 0".into()));
        }
        self.schedule().validate(self.ap.n)?;
        self.ap.validate(self.ap.n)
    }
}
