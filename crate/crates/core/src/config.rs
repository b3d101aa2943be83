//! Experiment configuration: JSON file plus ordered `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::augment::AugmentSettings;
use crate::contrastive::{ContrastiveSettings, QueuePolicy};
use crate::encoder::{EncoderConfig, EncoderVariant};
use crate::error::{Error, Result};
use crate::harness::SyntheticSpec;
use crate::meta_loop::{TrainSettings, Weighting};
use crate::reweighter::{Activation, ReweightConfig};

/// Training method: baselines and the reweighting/contrastive variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Raw data only.
    Plain,
    /// Raw plus all augmented data, unit weights.
    Aug,
    /// Raw plus readability-filtered augmented data, unit weights.
    AugFilter,
    Mrco,
    /// Learned weights without the contrastive term.
    MrcoNoContrastive,
    /// FIFO negative queues instead of weight-ordered ones.
    MrcoFifo,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Plain,
        Method::Aug,
        Method::AugFilter,
        Method::Mrco,
        Method::MrcoNoContrastive,
        Method::MrcoFifo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Plain => "plain",
            Method::Aug => "aug",
            Method::AugFilter => "aug_filter",
            Method::Mrco => "mrco",
            Method::MrcoNoContrastive => "mrco_no_contrastive",
            Method::MrcoFifo => "mrco_fifo",
        }
    }

    pub fn learns_weights(self) -> bool {
        matches!(self, Method::Mrco | Method::MrcoNoContrastive | Method::MrcoFifo)
    }

    pub fn uses_augmentation(self) -> bool {
        self != Method::Plain
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Training TSV; when absent the synthetic benchmark is generated.
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    /// Prebuilt augmented TSV; when absent augmentation runs in-process.
    pub augmented: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub synthetic: SyntheticSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSettings {
    pub variant: EncoderVariant,
    pub d_emb: usize,
    pub d_hidden: usize,
    pub n_filters: usize,
    pub widths: Vec<usize>,
    pub max_len: usize,
    pub dropout: f64,
    /// Tokens seen fewer times than this map to the unknown token.
    pub min_frequency: usize,
}

impl Default for EncoderSettings {
    fn default() -> Self {
        Self {
            variant: EncoderVariant::EmbedMeanMlp,
            d_emb: 64,
            d_hidden: 64,
            n_filters: 32,
            widths: vec![3, 4, 5],
            max_len: 64,
            dropout: 0.0,
            min_frequency: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReweightSettings {
    pub d_label: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub dropout: f64,
}

impl Default for ReweightSettings {
    fn default() -> Self {
        Self {
            d_label: 16,
            hidden: vec![64],
            activation: Activation::Relu,
            dropout: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub meta_batch_size: usize,
    pub main_lr: f64,
    pub reweight_lr: f64,
    /// Virtual-update step size.
    pub alpha: f64,
    /// Contrastive loss coefficient.
    pub lambda: f64,
    pub meta_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            meta_batch_size: 32,
            main_lr: 2e-3,
            reweight_lr: 1e-3,
            alpha: 0.1,
            lambda: 0.1,
            meta_fraction: 0.1,
        }
    }
}

/// Readability band for the filtered baseline; `null` is unbounded.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl FilterConfig {
    pub fn bounds(&self) -> (f64, f64) {
        (self.lower.unwrap_or(f64::NEG_INFINITY), self.upper.unwrap_or(f64::INFINITY))
    }
}

/// Values to sweep; an empty axis keeps the base configuration's value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub n_neg: Vec<usize>,
    pub tau: Vec<u32>,
    pub lambda: Vec<f64>,
    pub rho: Vec<f64>,
    /// Readability limits for `aug_filter`.
    pub filter_lower: Vec<f64>,
    pub filter_upper: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub encoder: EncoderSettings,
    pub reweight: ReweightSettings,
    pub train: TrainConfig,
    pub contrastive: ContrastiveSettings,
    pub augment: AugmentSettings,
    pub filter: FilterConfig,
    pub sweep: SweepGrid,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            methods: vec![Method::Mrco],
            seeds: vec![0, 1, 2, 3, 4],
            encoder: EncoderSettings::default(),
            reweight: ReweightSettings::default(),
            train: TrainConfig::default(),
            contrastive: ContrastiveSettings::default(),
            augment: AugmentSettings {
                flip_rate: 0.3,
                ..AugmentSettings::default()
            },
            filter: FilterConfig::default(),
            sweep: SweepGrid::default(),
        }
    }
}

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Applies one `key=value` override.
    ///
    /// `key` is a dotted path such as `train.lambda`; a bare name that is
    /// not a top-level field is looked up in every section and must match
    /// exactly one (`lambda=0` sets `train.lambda`). The sweep grid is only
    /// reachable by dotted path (`sweep.lambda=0,0.1`). `method` is accepted
    /// for `methods`. Values parse as JSON, falling back to a string; a
    /// comma list not valid as JSON fills an array field.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override {assignment:?} is not key=value")))?;
        let key = key.trim();
        let key = if key == "method" { "methods" } else { key };
        let mut root = serde_json::to_value(&*self)?;
        let path = resolve(&root, key)?;
        let slot = path.iter().try_fold(&mut root, |v, k| v.get_mut(k.as_str()));
        let slot = slot.ok_or_else(|| Error::config(format!("unknown config key {key:?}")))?;
        let mut value = parse_value(raw.trim());
        if slot.is_array() && !value.is_array() {
            value = Value::Array(raw.split(',').map(|s| parse_value(s.trim())).collect());
        }
        *slot = value;
        let cfg: Self = serde_json::from_value(root).map_err(|e| Error::config(format!("{key}: {e}")))?;
        cfg.validate()?;
        *self = cfg;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.methods.is_empty() {
            return bad("methods must not be empty".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        let t = &self.train;
        if !(t.main_lr > 0.0 && t.reweight_lr > 0.0) {
            return bad("learning rates (main_lr, reweight_lr) must be positive".into());
        }
        // zero freezes the reweighter at its initial weights
        if !(t.alpha >= 0.0 && t.alpha.is_finite()) {
            return bad("alpha must be non-negative".into());
        }
        if !(t.lambda >= 0.0 && t.lambda.is_finite()) {
            return bad("lambda must be non-negative".into());
        }
        if t.batch_size == 0 || t.meta_batch_size == 0 {
            return bad("batch sizes must be at least 1".into());
        }
        if !(t.meta_fraction > 0.0 && t.meta_fraction < 1.0) {
            return bad("meta_fraction must lie in (0, 1)".into());
        }
        self.contrastive.validate()?;
        self.augment.validate()?;
        let (lo, hi) = self.filter.bounds();
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return bad("filter lower limit exceeds upper limit".into());
        }
        if self.data.train.is_some() && self.data.dev.is_none() {
            return bad("data.dev is required with data.train".into());
        }
        if self.data.train.is_none() {
            self.data.synthetic.validate()?;
        }
        self.encoder_config(3, 2).validate()?;
        self.reweight_config(2, 1).validate()?;
        for &n in &self.sweep.n_neg {
            if n == 0 {
                return bad("sweep n_neg values must be at least 1".into());
            }
        }
        if self.sweep.tau.contains(&0) {
            return bad("sweep tau values must be at least 1".into());
        }
        if self.sweep.lambda.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return bad("sweep lambda values must be non-negative".into());
        }
        if self.sweep.rho.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return bad("sweep rho values must lie in [0, 1]".into());
        }
        if self.sweep.filter_lower.iter().chain(&self.sweep.filter_upper).any(|v| v.is_nan()) {
            return bad("sweep filter limits must be numbers".into());
        }
        Ok(())
    }

    pub fn encoder_config(&self, vocab_size: usize, num_classes: usize) -> EncoderConfig {
        let e = &self.encoder;
        EncoderConfig {
            variant: e.variant,
            vocab_size,
            num_classes,
            d_emb: e.d_emb,
            d_hidden: e.d_hidden,
            n_filters: e.n_filters,
            widths: e.widths.clone(),
            max_len: e.max_len,
            dropout: e.dropout,
        }
    }

    pub fn reweight_config(&self, num_classes: usize, input_width: usize) -> ReweightConfig {
        ReweightConfig {
            num_classes,
            input_width,
            d_label: self.reweight.d_label,
            hidden: self.reweight.hidden.clone(),
            activation: self.reweight.activation,
            dropout: self.reweight.dropout,
        }
    }

    /// Trainer settings realizing `method`.
    pub fn train_settings(&self, method: Method) -> TrainSettings {
        let t = &self.train;
        let mut contrastive = self.contrastive.clone();
        if method == Method::MrcoFifo {
            contrastive.policy = QueuePolicy::Fifo;
        }
        let (weighting, lambda) = match method {
            Method::Plain | Method::Aug | Method::AugFilter => (Weighting::Constant(1.0), 0.0),
            Method::MrcoNoContrastive => (Weighting::Learned, 0.0),
            Method::Mrco | Method::MrcoFifo => (Weighting::Learned, t.lambda),
        };
        TrainSettings {
            main_lr: t.main_lr,
            reweight_lr: t.reweight_lr,
            meta_lr: t.alpha,
            lambda,
            weighting,
            contrastive,
        }
    }
}

/// Dotted path of `key` inside the serialized config.
fn resolve(root: &Value, key: &str) -> Result<Vec<String>> {
    let parts: Vec<String> = key.split('.').map(str::to_string).collect();
    if parts.len() > 1 || root.get(key).is_some() {
        return Ok(parts);
    }
    let mut hits = Vec::new();
    let mut stack: Vec<(Vec<String>, &Value)> = vec![(vec![], root)];
    while let Some((prefix, v)) = stack.pop() {
        if let Value::Object(map) = v {
            for (k, child) in map {
                let mut p = prefix.clone();
                p.push(k.clone());
                if k == key {
                    hits.push(p.clone());
                }
                if child.is_object() && !(prefix.is_empty() && k == "sweep") {
                    stack.push((p, child));
                }
            }
        }
    }
    match hits.len() {
        1 => Ok(hits.pop().expect("one hit")),
        0 => Err(Error::config(format!("unknown config key {key:?}"))),
        _ => {
            let mut names: Vec<String> = hits.iter().map(|h| h.join(".")).collect();
            names.sort();
            Err(Error::config(format!("ambiguous config key {key:?}: {}", names.join(", "))))
        }
    }
}
