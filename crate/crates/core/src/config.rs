//! Experiment configuration and its flat `key = value` form.
//!
//! The same keys are used for command-line flags (`--key value`) and for
//! configuration files, so a config can be written out and replayed exactly.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::controllers::{
    hp_ratio, BaseSettings, BatchSizeRange, ClipMode, ControllerRanges, CyclicalRange, LrPolicy,
};
use crate::data::{AugmentationStrength, BlobParams};
use crate::error::{Error, Result};
use crate::schedule::{validate_cyclical_factor, CyclicalSchedule};

/// Flat key-value pairs, ordered by key.
pub type KeyValues = BTreeMap<String, String>;

/// Canonical experiment keys with their accepted aliases.
pub const EXPERIMENT_KEYS: &[(&str, &[&str], &str)] = &[
    ("classes", &[], "number of classes in the synthetic task"),
    (
        "train_per_class",
        &["train-per-class"],
        "training samples per class",
    ),
    (
        "test_per_class",
        &["test-per-class"],
        "test samples per class",
    ),
    ("dims", &[], "feature dimensions"),
    ("spread", &[], "per-coordinate std of each class cloud"),
    (
        "label_noise",
        &["label-noise"],
        "fraction of training labels reassigned",
    ),
    ("hidden", &[], "comma-separated hidden layer widths"),
    (
        "epochs",
        &[],
        "epochs over which schedules complete one cycle",
    ),
    (
        "cooldown_epochs",
        &["cooldown-epochs"],
        "extra epochs at the final settings",
    ),
    ("lr", &[], "peak learning rate"),
    ("sched", &[], "learning-rate policy: cosine or constant"),
    (
        "warmup_epochs",
        &["warmup-epochs"],
        "linear warmup epochs for the cosine policy",
    ),
    (
        "weight_decay",
        &["weight-decay", "wd"],
        "constant weight decay",
    ),
    ("momentum", &[], "constant momentum"),
    (
        "batch_size",
        &["batch-size", "b", "bs"],
        "constant batch size",
    ),
    ("temperature", &[], "constant training softmax temperature"),
    ("clip", &[], "constant clip threshold, or `none`"),
    (
        "clip_mode",
        &["clip-mode"],
        "gradient clipping mode: value or norm",
    ),
    (
        "mask_high_loss",
        &["mask-high-loss"],
        "drop samples whose loss exceeds the clip threshold instead of clipping",
    ),
    (
        "cyclical_factor",
        &["cyclical-factor"],
        "cycle shape shared by all controllers",
    ),
    ("wd_min", &["wd-min"], "cyclical weight decay, easy end"),
    ("wd_max", &["wd-max"], "cyclical weight decay, hard end"),
    (
        "wd_cyclical_factor",
        &["wd-cyclical-factor"],
        "cycle shape for weight decay",
    ),
    ("T_min", &["T-min"], "cyclical temperature, easy end"),
    ("T_max", &["T-max"], "cyclical temperature, hard end"),
    (
        "T_cyclical_factor",
        &["T-cyclical-factor"],
        "cycle shape for temperature",
    ),
    (
        "clip_min",
        &["clip-min"],
        "cyclical clip threshold, easy end",
    ),
    (
        "clip_max",
        &["clip-max"],
        "cyclical clip threshold, hard end",
    ),
    (
        "clip_cyclical_factor",
        &["clip-cyclical-factor"],
        "cycle shape for clipping",
    ),
    ("bs_min", &["bs-min"], "cyclical batch size, hard end"),
    ("bs_max", &["bs-max"], "cyclical batch size, easy end"),
    (
        "bs_cyclical_factor",
        &["bs-cyclical-factor"],
        "cycle shape for batch size",
    ),
    ("m_min", &["m-min"], "cyclical momentum, easy end"),
    ("m_max", &["m-max"], "cyclical momentum, hard end"),
    (
        "m_cyclical_factor",
        &["m-cyclical-factor"],
        "cycle shape for momentum",
    ),
    (
        "aug_min",
        &["aug-min"],
        "feature-noise augmentation std, easy end",
    ),
    (
        "aug_max",
        &["aug-max"],
        "feature-noise augmentation std, hard end",
    ),
    (
        "aug_cyclical_factor",
        &["aug-cyclical-factor"],
        "cycle shape for augmentation",
    ),
    ("seeds", &["seed"], "comma-separated run seeds"),
    ("output", &[], "run log path (CSV)"),
    ("timing", &[], "record wall-clock milliseconds per epoch"),
];

/// Map a key or alias to its canonical spelling.
pub fn canonical_key(key: &str) -> Option<&'static str> {
    let key = key.trim_start_matches('-');
    EXPERIMENT_KEYS
        .iter()
        .find(|(name, aliases, _)| *name == key || aliases.contains(&key))
        .map(|(name, _, _)| *name)
}

/// Parse `key = value` / `key value` lines; `#` starts a comment.
pub fn parse_key_values(text: &str) -> Result<KeyValues> {
    let mut out = KeyValues::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = match line.split_once('=') {
            Some((k, v)) => (k.trim(), v.trim()),
            None => line
                .split_once(char::is_whitespace)
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| {
                    Error::invalid("config", format!("line {}: missing value", lineno + 1))
                })?,
        };
        let canonical = canonical_key(key)
            .ok_or_else(|| Error::invalid(key, format!("unknown key on line {}", lineno + 1)))?;
        out.insert(canonical.to_string(), value.to_string());
    }
    Ok(out)
}

pub fn render_key_values(pairs: &KeyValues) -> String {
    pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Cosine,
    Constant,
}

/// Scheduled range as written in a config: endpoints plus optional own f_c.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeSpec<T> {
    pub min: T,
    pub max: T,
    pub cyclical_factor: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub dims: usize,
    pub spread: f64,
    pub label_noise: f64,
}

impl DatasetSpec {
    pub fn train_params(&self) -> BlobParams {
        BlobParams {
            class_count: self.classes,
            samples_per_class: self.train_per_class,
            dims: self.dims,
            spread: self.spread,
            label_noise_fraction: self.label_noise,
        }
    }

    /// Test labels are always clean.
    pub fn test_params(&self) -> BlobParams {
        BlobParams {
            samples_per_class: self.test_per_class,
            label_noise_fraction: 0.0,
            ..self.train_params()
        }
    }

    pub fn train_len(&self) -> usize {
        self.classes * self.train_per_class
    }
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            classes: 4,
            train_per_class: 1000,
            test_per_class: 500,
            dims: 8,
            spread: 0.45,
            label_noise: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub cooldown_epochs: usize,
    pub lr: f64,
    pub sched: LrSchedule,
    pub warmup_epochs: usize,
    pub weight_decay: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub temperature: f64,
    pub clip: Option<f64>,
    pub clip_mode: ClipMode,
    pub mask_high_loss: bool,
    pub cyclical_factor: f64,
    pub wd: Option<RangeSpec<f64>>,
    pub temperature_range: Option<RangeSpec<f64>>,
    pub clip_range: Option<RangeSpec<f64>>,
    pub batch_range: Option<RangeSpec<usize>>,
    pub momentum_range: Option<RangeSpec<f64>>,
    pub augmentation: Option<RangeSpec<f64>>,
    pub seeds: Vec<u64>,
    pub output: Option<PathBuf>,
    pub timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let base = BaseSettings::default();
        Self {
            dataset: DatasetSpec::default(),
            hidden: vec![32, 32],
            epochs: 60,
            cooldown_epochs: 0,
            lr: base.lr,
            sched: LrSchedule::Cosine,
            warmup_epochs: 3,
            weight_decay: base.weight_decay,
            momentum: base.momentum,
            batch_size: base.batch_size,
            temperature: base.temperature,
            clip: None,
            clip_mode: ClipMode::Value,
            mask_high_loss: false,
            cyclical_factor: 2.0,
            wd: None,
            temperature_range: None,
            clip_range: None,
            batch_range: None,
            momentum_range: None,
            augmentation: None,
            seeds: vec![0],
            output: None,
            timing: false,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, raw: &str) -> Result<T>
where
    T::Err: Display,
{
    raw.trim()
        .parse::<T>()
        .map_err(|e| Error::invalid(key, format!("cannot parse `{raw}`: {e}")))
}

fn parse_list<T: FromStr>(key: &str, raw: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    if raw.trim().is_empty() {
        return Ok(Vec::new());
    }
    raw.split(',').map(|item| parse_value(key, item)).collect()
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn parse_bool(key: &str, raw: &str) -> Result<bool> {
    match raw.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => Err(Error::invalid(key, format!("`{other}` is not a boolean"))),
    }
}

fn take_range<T: FromStr + Copy>(
    pairs: &mut KeyValues,
    prefix: &str,
) -> Result<Option<RangeSpec<T>>>
where
    T::Err: Display,
{
    let min_key = format!("{prefix}_min");
    let max_key = format!("{prefix}_max");
    let fc_key = format!("{prefix}_cyclical_factor");
    let min = pairs.remove(&min_key);
    let max = pairs.remove(&max_key);
    let cyclical_factor = pairs
        .remove(&fc_key)
        .map(|v| parse_value::<f64>(&fc_key, &v))
        .transpose()?;
    match (min, max) {
        (Some(min), Some(max)) => Ok(Some(RangeSpec {
            min: parse_value(&min_key, &min)?,
            max: parse_value(&max_key, &max)?,
            cyclical_factor,
        })),
        (None, None) => {
            if cyclical_factor.is_some() {
                return Err(Error::invalid(
                    fc_key,
                    format!("given without {min_key}/{max_key}"),
                ));
            }
            Ok(None)
        }
        (Some(_), None) => Err(Error::invalid(
            max_key,
            format!("required when {min_key} is set"),
        )),
        (None, Some(_)) => Err(Error::invalid(
            min_key,
            format!("required when {max_key} is set"),
        )),
    }
}

fn put_range<T: Display>(out: &mut KeyValues, prefix: &str, range: &Option<RangeSpec<T>>) {
    if let Some(r) = range {
        out.insert(format!("{prefix}_min"), r.min.to_string());
        out.insert(format!("{prefix}_max"), r.max.to_string());
        if let Some(fc) = r.cyclical_factor {
            out.insert(format!("{prefix}_cyclical_factor"), fc.to_string());
        }
    }
}

impl ExperimentConfig {
    /// Build from canonical keys; keys not present keep their defaults.
    pub fn from_pairs(pairs: &KeyValues) -> Result<Self> {
        let mut pairs = pairs.clone();
        let mut cfg = ExperimentConfig::default();

        macro_rules! take {
            ($key:literal, $field:expr) => {
                if let Some(v) = pairs.remove($key) {
                    $field = parse_value($key, &v)?;
                }
            };
        }

        take!("classes", cfg.dataset.classes);
        take!("train_per_class", cfg.dataset.train_per_class);
        take!("test_per_class", cfg.dataset.test_per_class);
        take!("dims", cfg.dataset.dims);
        take!("spread", cfg.dataset.spread);
        take!("label_noise", cfg.dataset.label_noise);
        if let Some(v) = pairs.remove("hidden") {
            cfg.hidden = parse_list("hidden", &v)?;
        }
        take!("epochs", cfg.epochs);
        take!("cooldown_epochs", cfg.cooldown_epochs);
        take!("lr", cfg.lr);
        if let Some(v) = pairs.remove("sched") {
            cfg.sched = match v.trim() {
                "cosine" => LrSchedule::Cosine,
                "constant" => LrSchedule::Constant,
                other => {
                    return Err(Error::invalid(
                        "sched",
                        format!("`{other}` is not one of cosine, constant"),
                    ))
                }
            };
        }
        take!("warmup_epochs", cfg.warmup_epochs);
        take!("weight_decay", cfg.weight_decay);
        take!("momentum", cfg.momentum);
        take!("batch_size", cfg.batch_size);
        take!("temperature", cfg.temperature);
        if let Some(v) = pairs.remove("clip") {
            cfg.clip = match v.trim() {
                "none" | "" => None,
                other => Some(parse_value("clip", other)?),
            };
        }
        if let Some(v) = pairs.remove("clip_mode") {
            cfg.clip_mode = v.trim().parse()?;
        }
        if let Some(v) = pairs.remove("mask_high_loss") {
            cfg.mask_high_loss = parse_bool("mask_high_loss", &v)?;
        }
        take!("cyclical_factor", cfg.cyclical_factor);
        cfg.wd = take_range(&mut pairs, "wd")?;
        cfg.temperature_range = take_range(&mut pairs, "T")?;
        cfg.clip_range = take_range(&mut pairs, "clip")?;
        cfg.batch_range = take_range(&mut pairs, "bs")?;
        cfg.momentum_range = take_range(&mut pairs, "m")?;
        cfg.augmentation = take_range(&mut pairs, "aug")?;
        if let Some(v) = pairs.remove("seeds") {
            cfg.seeds = parse_list("seeds", &v)?;
        }
        if let Some(v) = pairs.remove("output") {
            cfg.output = Some(PathBuf::from(v));
        }
        if let Some(v) = pairs.remove("timing") {
            cfg.timing = parse_bool("timing", &v)?;
        }

        if let Some(key) = pairs.keys().next() {
            return Err(Error::invalid(key.clone(), "unknown key"));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every setting as canonical key-value pairs. Unset optional ranges are omitted.
    pub fn to_pairs(&self) -> KeyValues {
        let mut out = KeyValues::new();
        let mut put = |k: &str, v: String| {
            out.insert(k.to_string(), v);
        };
        let d = &self.dataset;
        put("classes", d.classes.to_string());
        put("train_per_class", d.train_per_class.to_string());
        put("test_per_class", d.test_per_class.to_string());
        put("dims", d.dims.to_string());
        put("spread", d.spread.to_string());
        put("label_noise", d.label_noise.to_string());
        put("hidden", join(&self.hidden));
        put("epochs", self.epochs.to_string());
        put("cooldown_epochs", self.cooldown_epochs.to_string());
        put("lr", self.lr.to_string());
        put(
            "sched",
            match self.sched {
                LrSchedule::Cosine => "cosine",
                LrSchedule::Constant => "constant",
            }
            .to_string(),
        );
        put("warmup_epochs", self.warmup_epochs.to_string());
        put("weight_decay", self.weight_decay.to_string());
        put("momentum", self.momentum.to_string());
        put("batch_size", self.batch_size.to_string());
        put("temperature", self.temperature.to_string());
        put(
            "clip",
            self.clip
                .map_or_else(|| "none".to_string(), |c| c.to_string()),
        );
        put("clip_mode", self.clip_mode.to_string());
        put("mask_high_loss", self.mask_high_loss.to_string());
        put("cyclical_factor", self.cyclical_factor.to_string());
        put("seeds", join(&self.seeds));
        if let Some(p) = &self.output {
            put("output", p.display().to_string());
        }
        put("timing", self.timing.to_string());
        put_range(&mut out, "wd", &self.wd);
        put_range(&mut out, "T", &self.temperature_range);
        put_range(&mut out, "clip", &self.clip_range);
        put_range(&mut out, "bs", &self.batch_range);
        put_range(&mut out, "m", &self.momentum_range);
        put_range(&mut out, "aug", &self.augmentation);
        out
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_pairs(&parse_key_values(&text)?)
    }

    fn fc(&self, own: Option<f64>) -> f64 {
        own.unwrap_or(self.cyclical_factor)
    }

    /// Network shape: input, hidden layers, classes.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.dataset.dims];
        sizes.extend(&self.hidden);
        sizes.push(self.dataset.classes);
        sizes
    }

    /// Epochs actually trained, including cooldown.
    pub fn total_epochs(&self) -> usize {
        self.epochs + self.cooldown_epochs
    }

    pub fn base_settings(&self) -> BaseSettings {
        BaseSettings {
            lr: self.lr,
            weight_decay: self.weight_decay,
            momentum: self.momentum,
            batch_size: self.batch_size,
            temperature: self.temperature,
            clip_threshold: self.clip,
            clip_mode: self.clip_mode,
        }
    }

    pub fn controller_ranges(&self) -> Result<ControllerRanges> {
        let policy = match self.sched {
            LrSchedule::Cosine => LrPolicy::WarmupCosine {
                warmup_epochs: self.warmup_epochs,
            },
            LrSchedule::Constant => LrPolicy::Constant,
        };
        let mut ranges =
            ControllerRanges::new(self.epochs, self.base_settings())?.with_lr_policy(policy);
        let scalar =
            |r: &RangeSpec<f64>| CyclicalRange::new(r.min, r.max, self.fc(r.cyclical_factor));
        if let Some(r) = &self.wd {
            ranges = ranges.with_weight_decay(scalar(r))?;
        }
        if let Some(r) = &self.temperature_range {
            ranges = ranges.with_temperature(scalar(r))?;
        }
        if let Some(r) = &self.clip_range {
            ranges = ranges.with_clip(scalar(r))?;
        }
        if let Some(r) = &self.momentum_range {
            ranges = ranges.with_momentum(scalar(r))?;
        }
        if let Some(r) = &self.batch_range {
            ranges = ranges.with_batch_size(BatchSizeRange::new(
                r.min,
                r.max,
                self.fc(r.cyclical_factor),
            ))?;
        }
        Ok(ranges)
    }

    /// Noise-std schedule for augmentation, if enabled.
    pub fn augmentation_schedule(&self) -> Result<Option<CyclicalSchedule>> {
        self.augmentation
            .map(|r| {
                AugmentationStrength::new(r.min)?;
                AugmentationStrength::new(r.max)?;
                if r.min > r.max {
                    return Err(Error::invalid("aug_min", "exceeds aug_max"));
                }
                CyclicalSchedule::new(r.min, r.max, self.fc(r.cyclical_factor), self.epochs)
            })
            .transpose()
    }

    /// Check every setting before any run starts.
    pub fn validate(&self) -> Result<()> {
        self.dataset.train_params().validate()?;
        self.dataset.test_params().validate()?;
        if self.hidden.contains(&0) {
            return Err(Error::invalid("hidden", "layer widths must be positive"));
        }
        validate_cyclical_factor("cyclical_factor", self.cyclical_factor)?;
        let ranges = self.controller_ranges()?;
        self.augmentation_schedule()?;
        let train_len = self.dataset.train_len();
        let largest_batch = ranges.batch_size().map_or(self.batch_size, |r| r.max);
        if largest_batch > train_len {
            return Err(Error::invalid(
                if ranges.batch_size().is_some() {
                    "bs_max"
                } else {
                    "batch_size"
                },
                format!("{largest_batch} exceeds the {train_len} training samples"),
            ));
        }
        if self.mask_high_loss && self.clip.is_none() && self.clip_range.is_none() {
            return Err(Error::invalid(
                "mask_high_loss",
                "needs a loss threshold from clip or clip_min/clip_max",
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("seeds", "need at least one seed"));
        }
        Ok(())
    }

    /// `LR * WD / (BS * (1 - m))` for the constant settings.
    pub fn ratio(&self) -> Result<f64> {
        hp_ratio(self.lr, self.weight_decay, self.batch_size, self.momentum)
    }

    /// Same data and network; anything else may differ.
    pub fn same_task_as(&self, other: &ExperimentConfig) -> Result<()> {
        if self.dataset != other.dataset {
            return Err(Error::Incompatible("dataset settings differ".into()));
        }
        if self.layer_sizes() != other.layer_sizes() {
            return Err(Error::Incompatible("network architecture differs".into()));
        }
        Ok(())
    }
}
