//! Flat `key=value` run configuration.
//!
//! Sources are layered defaults < file < command-line overrides. The resolved
//! configuration is written next to every run so the run can be repeated from
//! that file alone.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use pane_gnn_core::model::AttentionMode;
use pane_gnn_core::rank::{DisinterestFilter, FilterDirection, MetricOptions};
use pane_gnn_core::train::{EarlyStopping, HyperParams, TrainOptions, Variant};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub hp: HyperParams,
    pub variant: Variant,
    pub attention: AttentionMode,
    pub step_per_epoch: bool,
    pub redistort_each_epoch: bool,
    pub contrastive_candidates: Option<usize>,
    pub early_stopping: bool,
    pub patience: usize,
    pub holdout_fraction: f64,
    pub train_edges: Option<PathBuf>,
    pub test_edges: Option<PathBuf>,
    pub user_map: Option<PathBuf>,
    pub item_map: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Write an intermediate checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    pub folds: usize,
    pub fold_index: usize,
    pub ks: Vec<usize>,
    pub filter: FilterDirection,
    pub capped_idcg: bool,
    pub backfill_as_miss: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            hp: HyperParams::default(),
            variant: Variant::Full,
            attention: AttentionMode::PerNode,
            step_per_epoch: false,
            redistort_each_epoch: false,
            contrastive_candidates: None,
            early_stopping: false,
            patience: EarlyStopping::default().patience,
            holdout_fraction: EarlyStopping::default().holdout_fraction,
            train_edges: None,
            test_edges: None,
            user_map: None,
            item_map: None,
            out_dir: PathBuf::from("run"),
            checkpoint_every: 0,
            folds: 5,
            fold_index: 0,
            ks: vec![5, 10, 15],
            filter: FilterDirection::KeepBelow,
            capped_idcg: false,
            backfill_as_miss: false,
        }
    }
}

pub const KEYS: &[&str] = &[
    "dim",
    "layers",
    "p",
    "b",
    "delta",
    "lambda1",
    "lambda2",
    "tau",
    "lr",
    "batch_size",
    "epochs",
    "neg_samples",
    "dropout",
    "seed",
    "variant",
    "attention",
    "step_per_epoch",
    "redistort_each_epoch",
    "contrastive_candidates",
    "early_stopping",
    "patience",
    "holdout_fraction",
    "train_edges",
    "test_edges",
    "user_map",
    "item_map",
    "out_dir",
    "checkpoint_every",
    "folds",
    "fold_index",
    "ks",
    "filter",
    "capped_idcg",
    "backfill_as_miss",
];

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(CliError::Config(format!("`{key}`: expected true or false, got `{value}`"))),
    }
}

fn opt_path(value: &str) -> Option<PathBuf> {
    let v = value.trim();
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

pub fn parse_attention(value: &str) -> Option<AttentionMode> {
    match value.trim().to_ascii_lowercase().as_str() {
        "node" | "per-node" | "per_node" => Some(AttentionMode::PerNode),
        "global" => Some(AttentionMode::Global),
        _ => None,
    }
}

fn attention_label(a: AttentionMode) -> &'static str {
    match a {
        AttentionMode::PerNode => "node",
        AttentionMode::Global => "global",
    }
}

pub fn parse_ks(value: &str) -> Result<Vec<usize>> {
    let v = value.trim();
    if v.is_empty() {
        return Ok(Vec::new());
    }
    let ks = v.split(',').map(|k| num::<usize>("ks", k)).collect::<Result<Vec<_>>>()?;
    if ks.contains(&0) {
        return Err(CliError::Config("`ks`: cutoffs must be at least 1".into()));
    }
    Ok(ks)
}

impl RunConfig {
    /// Apply one `key=value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let hp = &mut self.hp;
        match key.trim() {
            "dim" => hp.dim = num(key, value)?,
            "layers" => hp.layers = num(key, value)?,
            "p" => hp.removal_prob = num(key, value)?,
            "b" => hp.feedback_coef = num(key, value)?,
            "delta" => hp.delta = num(key, value)?,
            "lambda1" => hp.contrastive_weight = num(key, value)?,
            "lambda2" => hp.reg_weight = num(key, value)?,
            "tau" => hp.temperature = num(key, value)?,
            "lr" => hp.learning_rate = num(key, value)?,
            "batch_size" => hp.batch_size = num(key, value)?,
            "epochs" => hp.epochs = num(key, value)?,
            "neg_samples" => hp.neg_samples = num(key, value)?,
            "dropout" => hp.dropout_rate = num(key, value)?,
            "seed" => hp.seed = num(key, value)?,
            "variant" => {
                self.variant = Variant::parse(value.trim())
                    .ok_or_else(|| CliError::Config(format!("`variant`: expected A, B, C, D or full, got `{value}`")))?
            }
            "attention" => {
                self.attention = parse_attention(value)
                    .ok_or_else(|| CliError::Config(format!("`attention`: expected node or global, got `{value}`")))?
            }
            "step_per_epoch" => self.step_per_epoch = flag(key, value)?,
            "redistort_each_epoch" => self.redistort_each_epoch = flag(key, value)?,
            "contrastive_candidates" => {
                self.contrastive_candidates = match value.trim() {
                    "" | "all" => None,
                    v => Some(num(key, v)?),
                }
            }
            "early_stopping" => self.early_stopping = flag(key, value)?,
            "patience" => self.patience = num(key, value)?,
            "holdout_fraction" => self.holdout_fraction = num(key, value)?,
            "train_edges" => self.train_edges = opt_path(value),
            "test_edges" => self.test_edges = opt_path(value),
            "user_map" => self.user_map = opt_path(value),
            "item_map" => self.item_map = opt_path(value),
            "out_dir" => {
                self.out_dir =
                    opt_path(value).ok_or_else(|| CliError::Config("`out_dir` must not be empty".into()))?
            }
            "checkpoint_every" => self.checkpoint_every = num(key, value)?,
            "folds" => self.folds = num(key, value)?,
            "fold_index" => self.fold_index = num(key, value)?,
            "ks" => self.ks = parse_ks(value)?,
            "filter" => {
                self.filter = match value.trim() {
                    "below" => FilterDirection::KeepBelow,
                    "above" => FilterDirection::KeepAbove,
                    v => return Err(CliError::Config(format!("`filter`: expected below or above, got `{v}`"))),
                }
            }
            "capped_idcg" => self.capped_idcg = flag(key, value)?,
            "backfill_as_miss" => self.backfill_as_miss = flag(key, value)?,
            k => {
                return Err(CliError::Config(format!(
                    "unknown key `{k}`; known keys: {}",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Apply a `key=value` string.
    pub fn assign(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("expected key=value, got `{assignment}`")))?;
        self.set(k, v)
    }

    /// Layer a config file over `self`. Blank lines and `#` comments are
    /// skipped.
    pub fn merge_text(&mut self, text: &str, path: &Path) -> Result<()> {
        for (k, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::parse(path, k + 1, "expected key=value"))?;
            self.set(key, value).map_err(|e| match e {
                CliError::Config(msg) => CliError::parse(path, k + 1, msg),
                e => e,
            })?;
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        self.merge_text(&text, path)
    }

    /// Defaults, then `file`, then `overrides` in order.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut c = Self::default();
        if let Some(f) = file {
            c.merge_file(f)?;
        }
        for o in overrides {
            c.assign(o)?;
        }
        Ok(c)
    }

    /// Every key with its resolved value, in `KEYS` order.
    pub fn to_kv(&self) -> String {
        let hp = &self.hp;
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        put("dim", hp.dim.to_string());
        put("layers", hp.layers.to_string());
        put("p", hp.removal_prob.to_string());
        put("b", hp.feedback_coef.to_string());
        put("delta", hp.delta.to_string());
        put("lambda1", hp.contrastive_weight.to_string());
        put("lambda2", hp.reg_weight.to_string());
        put("tau", hp.temperature.to_string());
        put("lr", hp.learning_rate.to_string());
        put("batch_size", hp.batch_size.to_string());
        put("epochs", hp.epochs.to_string());
        put("neg_samples", hp.neg_samples.to_string());
        put("dropout", hp.dropout_rate.to_string());
        put("seed", hp.seed.to_string());
        put("variant", self.variant.label().into());
        put("attention", attention_label(self.attention).into());
        put("step_per_epoch", self.step_per_epoch.to_string());
        put("redistort_each_epoch", self.redistort_each_epoch.to_string());
        put(
            "contrastive_candidates",
            self.contrastive_candidates.map_or("all".into(), |c| c.to_string()),
        );
        put("early_stopping", self.early_stopping.to_string());
        put("patience", self.patience.to_string());
        put("holdout_fraction", self.holdout_fraction.to_string());
        put("train_edges", show_path(&self.train_edges));
        put("test_edges", show_path(&self.test_edges));
        put("user_map", show_path(&self.user_map));
        put("item_map", show_path(&self.item_map));
        put("out_dir", self.out_dir.display().to_string());
        put("checkpoint_every", self.checkpoint_every.to_string());
        put("folds", self.folds.to_string());
        put("fold_index", self.fold_index.to_string());
        put(
            "ks",
            self.ks.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(","),
        );
        put(
            "filter",
            match self.filter {
                FilterDirection::KeepBelow => "below",
                FilterDirection::KeepAbove => "above",
            }
            .into(),
        );
        put("capped_idcg", self.capped_idcg.to_string());
        put("backfill_as_miss", self.backfill_as_miss.to_string());
        s
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            variant: self.variant,
            attention: self.attention,
            step_per_epoch: self.step_per_epoch,
            redistort_each_epoch: self.redistort_each_epoch,
            contrastive_candidates: self.contrastive_candidates,
            early_stopping: self.early_stopping.then(|| EarlyStopping {
                patience: self.patience,
                holdout_fraction: self.holdout_fraction,
                ..EarlyStopping::default()
            }),
        }
    }

    /// Ranking filter: the variant decides whether it applies at all, the
    /// config decides its direction.
    pub fn ranking_filter(&self) -> DisinterestFilter {
        match self.variant {
            Variant::Full => DisinterestFilter {
                delta: self.hp.delta,
                direction: self.filter,
            },
            v => v.ranking_filter(self.hp.delta),
        }
    }

    pub fn metric_options(&self) -> MetricOptions {
        MetricOptions {
            capped_idcg: self.capped_idcg,
            backfill_as_miss: self.backfill_as_miss,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        if self.early_stopping && !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(CliError::Config(format!(
                "`holdout_fraction` must lie in (0, 1), got {}",
                self.holdout_fraction
            )));
        }
        if self.contrastive_candidates == Some(0) {
            return Err(CliError::Config("`contrastive_candidates` must be positive".into()));
        }
        Ok(())
    }
}
