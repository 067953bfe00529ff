//! Flat `key = value` experiment configuration.
//!
//! Every key has a default; unknown keys are errors. `#` starts a comment.
//! Relative paths are resolved against the directory of the file they
//! appear in, and the echoed configuration stores them absolute so that a
//! run can be repeated from the echo alone.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use ctxnet::data::DatasetPreset;
use ctxnet::layers::LrnParams;
use ctxnet::network::{Init, NetworkConfig};
use ctxnet::optim::TrainPlan;

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub cube: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    /// Named class subset, applied to the label file.
    pub preset: Option<String>,
    /// Source class ids to keep; empty keeps every class of the label file.
    pub classes: Vec<u16>,
    pub width: usize,
    pub residual_modules: usize,
    pub plain_modules: usize,
    pub bank_scales: Vec<usize>,
    pub lrn: LrnParams,
    pub dropout_rate: f64,
    pub init: Init,
    pub n_per_class: usize,
    pub partitions: usize,
    pub seed: u64,
    pub plan: TrainPlan,
    /// Tile edge for whole-image prediction; 0 predicts in one piece.
    pub tile: usize,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            cube: None,
            labels: None,
            preset: None,
            classes: Vec::new(),
            width: 128,
            residual_modules: 2,
            plain_modules: 0,
            bank_scales: vec![1, 3, 5],
            lrn: LrnParams::default(),
            dropout_rate: 0.5,
            init: Init::Paper,
            n_per_class: 200,
            partitions: 20,
            seed: 0,
            plan: TrainPlan::default(),
            tile: 64,
            out_dir: PathBuf::from("ctxnet-run"),
        }
    }
}

fn list<T: std::str::FromStr>(value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| anyhow!("{s:?}: {e}")))
        .collect()
}

fn scalar<T: std::str::FromStr>(value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| anyhow!("{value:?}: {e}"))
}

fn switch(value: &str) -> Result<bool> {
    match value {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        _ => bail!("{value:?} is not on/off"),
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text(&text, base)
            .with_context(|| format!("in config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str, base: &Path) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key = value", i + 1))?;
            self.set(key.trim(), value.trim(), base)
                .with_context(|| format!("line {}", i + 1))?;
        }
        Ok(())
    }

    /// Applies one `key=value` override; relative paths resolve against
    /// `base`.
    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        let path = |v: &str| -> Option<PathBuf> {
            (!v.is_empty()).then(|| {
                let p = PathBuf::from(v);
                if p.is_absolute() {
                    p
                } else {
                    base.join(p)
                }
            })
        };
        match key {
            "cube" => self.cube = path(value),
            "labels" => self.labels = path(value),
            "out_dir" => self.out_dir = path(value).ok_or_else(|| anyhow!("out_dir is empty"))?,
            "preset" => {
                self.preset = match value {
                    "" | "none" => None,
                    name => Some(DatasetPreset::by_name(name)?.name.to_string()),
                }
            }
            "classes" => self.classes = list(value)?,
            "width" => self.width = scalar(value)?,
            "residual_modules" => self.residual_modules = scalar(value)?,
            "plain_modules" => self.plain_modules = scalar(value)?,
            "bank_scales" => self.bank_scales = list(value)?,
            "lrn_n" => self.lrn.n = scalar(value)?,
            "lrn_k" => self.lrn.k = scalar(value)?,
            "lrn_alpha" => self.lrn.alpha = scalar(value)?,
            "lrn_beta" => self.lrn.beta = scalar(value)?,
            "dropout_rate" => self.dropout_rate = scalar(value)?,
            "init" => self.init = value.parse()?,
            "n_per_class" => self.n_per_class = scalar(value)?,
            "partitions" => self.partitions = scalar(value)?,
            "seed" => self.seed = scalar(value)?,
            "base_lr" => self.plan.base_lr = scalar(value)?,
            "gamma" => self.plan.gamma = scalar(value)?,
            "step_iters" => self.plan.step_iters = list(value)?,
            "momentum" => self.plan.momentum = scalar(value)?,
            "weight_decay" => self.plan.weight_decay = scalar(value)?,
            "batch_size" => self.plan.batch_size = scalar(value)?,
            "max_iters" => self.plan.max_iters = scalar(value)?,
            "augmentation" => self.plan.augmentation = switch(value)?,
            "snapshot_every" => self.plan.snapshot_every = scalar(value)?,
            "log_every" => self.plan.log_every = scalar(value)?,
            "tile" => self.tile = scalar(value)?,
            other => bail!("unknown key {other:?}"),
        }
        Ok(())
    }

    /// Replaces the iteration budget and moves the two rate steps to one
    /// and two thirds of it.
    pub fn rescale_iterations(&mut self, max_iters: usize) {
        let scaled = TrainPlan::scaled(max_iters);
        self.plan.max_iters = scaled.max_iters;
        self.plan.step_iters = scaled.step_iters;
    }

    pub fn network(&self, bands: usize, classes: usize) -> Result<NetworkConfig> {
        let cfg = NetworkConfig {
            bands,
            classes,
            width: self.width,
            residual_modules: self.residual_modules,
            bank_scales: self.bank_scales.clone(),
            lrn: self.lrn,
            dropout_rate: self.dropout_rate,
            plain_modules: self.plain_modules,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn plan(&self) -> Result<TrainPlan> {
        let plan = TrainPlan {
            seed: self.seed,
            ..self.plan.clone()
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn tile(&self) -> Option<usize> {
        (self.tile > 0).then_some(self.tile)
    }

    /// Every key with its effective value, in a form [`apply_text`]
    /// accepts.
    pub fn to_text(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| absolute(p).display().to_string()).unwrap_or_default();
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("cube", path(&self.cube));
        kv("labels", path(&self.labels));
        kv("preset", self.preset.clone().unwrap_or_else(|| "none".into()));
        kv("classes", join(&self.classes));
        kv("width", self.width.to_string());
        kv("residual_modules", self.residual_modules.to_string());
        kv("plain_modules", self.plain_modules.to_string());
        kv("bank_scales", join(&self.bank_scales));
        kv("lrn_n", self.lrn.n.to_string());
        kv("lrn_k", self.lrn.k.to_string());
        kv("lrn_alpha", self.lrn.alpha.to_string());
        kv("lrn_beta", self.lrn.beta.to_string());
        kv("dropout_rate", self.dropout_rate.to_string());
        kv("init", match self.init {
            Init::Paper => "paper".into(),
            Init::Scaled => "scaled".into(),
        });
        kv("n_per_class", self.n_per_class.to_string());
        kv("partitions", self.partitions.to_string());
        kv("seed", self.seed.to_string());
        kv("base_lr", self.plan.base_lr.to_string());
        kv("gamma", self.plan.gamma.to_string());
        kv("step_iters", join(&self.plan.step_iters));
        kv("momentum", self.plan.momentum.to_string());
        kv("weight_decay", self.plan.weight_decay.to_string());
        kv("batch_size", self.plan.batch_size.to_string());
        kv("max_iters", self.plan.max_iters.to_string());
        kv("augmentation", if self.plan.augmentation { "on" } else { "off" }.into());
        kv("snapshot_every", self.plan.snapshot_every.to_string());
        kv("log_every", self.plan.log_every.to_string());
        kv("tile", self.tile.to_string());
        kv("out_dir", absolute(&self.out_dir).display().to_string());
        s
    }
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}
