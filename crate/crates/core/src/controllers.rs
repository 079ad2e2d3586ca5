//! Per-hyper-parameter controllers built on the schedule engine.
//!
//! Each controller knows which end of its range is the "easy" one:
//!
//! | setting        | easy (`xi = 1`) | hard (`xi = 0`) |
//! |----------------|-----------------|-----------------|
//! | weight decay   | min             | max             |
//! | temperature    | min             | max             |
//! | clip threshold | min             | max             |
//! | momentum       | min             | max             |
//! | batch size     | max             | min             |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::{blend, cycle_coefficient, validate_cyclical_factor, CycleCoefficient};

/// Lower bound of the band in which `LR * WD / (BS * (1 - m))` is considered balanced.
pub const RATIO_LOWER: f64 = 1e-7;
/// Upper bound of the balanced band.
pub const RATIO_UPPER: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClipMode {
    /// Clamp every gradient component to `[-C, C]`.
    #[default]
    Value,
    /// Rescale the whole gradient when its global L2 norm exceeds `C`.
    Norm,
}

impl fmt::Display for ClipMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClipMode::Value => f.write_str("value"),
            ClipMode::Norm => f.write_str("norm"),
        }
    }
}

impl FromStr for ClipMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "value" => Ok(ClipMode::Value),
            "norm" => Ok(ClipMode::Norm),
            other => Err(Error::invalid(
                "clip_mode",
                format!("`{other}` is not one of value, norm"),
            )),
        }
    }
}

/// Hyper-parameters in effect for one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerSet {
    pub lr: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub temperature: f64,
    pub clip_threshold: Option<f64>,
    pub clip_mode: ClipMode,
}

fn check_finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("{v} is not finite")))
    }
}

fn check_ordered(min_name: &str, min: f64, max_name: &str, max: f64) -> Result<()> {
    if min > max {
        return Err(Error::invalid(
            min_name,
            format!("{min} exceeds {max_name} = {max}"),
        ));
    }
    Ok(())
}

fn check_weight_decay_range(wd_min: f64, wd_max: f64) -> Result<()> {
    check_finite("wd_min", wd_min)?;
    check_finite("wd_max", wd_max)?;
    if wd_min < 0.0 {
        return Err(Error::invalid("wd_min", "must be >= 0"));
    }
    check_ordered("wd_min", wd_min, "wd_max", wd_max)
}

fn check_positive_range(min_name: &str, min: f64, max_name: &str, max: f64) -> Result<()> {
    check_finite(min_name, min)?;
    check_finite(max_name, max)?;
    if min <= 0.0 {
        return Err(Error::invalid(min_name, "must be > 0"));
    }
    check_ordered(min_name, min, max_name, max)
}

fn check_momentum_range(m_min: f64, m_max: f64) -> Result<()> {
    for (name, m) in [("m_min", m_min), ("m_max", m_max)] {
        if !(0.0..1.0).contains(&m) {
            return Err(Error::invalid(name, format!("{m} is outside [0, 1)")));
        }
    }
    check_ordered("m_min", m_min, "m_max", m_max)
}

fn check_batch_range(bs_min: usize, bs_max: usize) -> Result<()> {
    if bs_min < 1 {
        return Err(Error::invalid("bs_min", "must be at least 1"));
    }
    if bs_min > bs_max {
        return Err(Error::invalid(
            "bs_min",
            format!("{bs_min} exceeds bs_max = {bs_max}"),
        ));
    }
    Ok(())
}

/// Cyclical weight decay: small decay early and late, large decay mid-run.
pub fn resolve_weight_decay(wd_min: f64, wd_max: f64, xi: CycleCoefficient) -> Result<f64> {
    check_weight_decay_range(wd_min, wd_max)?;
    Ok(blend(wd_min, wd_max, xi))
}

/// Cyclical softmax temperature: confident (low T) early, soft (high T) mid-run.
pub fn resolve_temperature(t_min: f64, t_max: f64, xi: CycleCoefficient) -> Result<f64> {
    check_positive_range("T_min", t_min, "T_max", t_max)?;
    Ok(blend(t_min, t_max, xi))
}

/// Cyclical clip threshold: tight early, loose mid-run.
pub fn resolve_clip(gc_min: f64, gc_max: f64, xi: CycleCoefficient) -> Result<f64> {
    check_positive_range("clip_min", gc_min, "clip_max", gc_max)?;
    Ok(blend(gc_min, gc_max, xi))
}

/// Cyclical batch size: large batches early, small mid-run. Rounds half up.
pub fn resolve_batch_size(bs_min: usize, bs_max: usize, xi: CycleCoefficient) -> Result<usize> {
    check_batch_range(bs_min, bs_max)?;
    if bs_min == bs_max {
        return Ok(bs_min);
    }
    let xi = xi.value();
    let raw = xi * bs_max as f64 + (1.0 - xi) * bs_min as f64;
    let rounded = (raw + 0.5).floor() as usize;
    Ok(rounded.clamp(bs_min, bs_max))
}

/// Cyclical momentum: low early, high mid-run.
pub fn resolve_momentum(m_min: f64, m_max: f64, xi: CycleCoefficient) -> Result<f64> {
    check_momentum_range(m_min, m_max)?;
    Ok(blend(m_min, m_max, xi))
}

/// `LR * WD / (BS * (1 - m))`, the balance heuristic between the four
/// regularising settings. Balanced configurations sit near `1e-6`.
pub fn hp_ratio(lr: f64, weight_decay: f64, batch_size: usize, momentum: f64) -> Result<f64> {
    check_finite("lr", lr)?;
    check_finite("weight_decay", weight_decay)?;
    check_finite("momentum", momentum)?;
    if batch_size < 1 {
        return Err(Error::invalid("batch_size", "must be at least 1"));
    }
    if momentum >= 1.0 {
        return Err(Error::invalid("momentum", "must be < 1"));
    }
    Ok(lr * weight_decay / (batch_size as f64 * (1.0 - momentum)))
}

/// Whether a ratio lies within one decade of `1e-6`.
pub fn ratio_in_range(ratio: f64) -> bool {
    (RATIO_LOWER..=RATIO_UPPER).contains(&ratio)
}

/// Endpoints and cycle shape of one scheduled scalar setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CyclicalRange {
    pub min: f64,
    pub max: f64,
    pub cyclical_factor: f64,
}

impl CyclicalRange {
    pub fn new(min: f64, max: f64, cyclical_factor: f64) -> Self {
        Self {
            min,
            max,
            cyclical_factor,
        }
    }

    /// Same value at both ends.
    pub fn constant(value: f64) -> Self {
        Self::new(value, value, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchSizeRange {
    pub min: usize,
    pub max: usize,
    pub cyclical_factor: f64,
}

impl BatchSizeRange {
    pub fn new(min: usize, max: usize, cyclical_factor: f64) -> Self {
        Self {
            min,
            max,
            cyclical_factor,
        }
    }
}

/// Learning-rate policy applied underneath the cyclical controllers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LrPolicy {
    Constant,
    /// Linear warmup over `warmup_epochs`, then cosine decay towards zero.
    WarmupCosine {
        warmup_epochs: usize,
    },
}

impl LrPolicy {
    pub fn lr(&self, base_lr: f64, epoch: usize, total_epochs: usize) -> f64 {
        match *self {
            LrPolicy::Constant => base_lr,
            LrPolicy::WarmupCosine { warmup_epochs } => {
                let epoch = epoch.min(total_epochs.saturating_sub(1));
                let warmup = warmup_epochs.min(total_epochs.saturating_sub(1));
                if epoch < warmup {
                    base_lr * (epoch + 1) as f64 / (warmup + 1) as f64
                } else {
                    let span = (total_epochs - warmup) as f64;
                    let progress = (epoch - warmup) as f64 / span;
                    0.5 * base_lr * (1.0 + (std::f64::consts::PI * progress).cos())
                }
            }
        }
    }
}

/// Constant settings used whenever a controller is disabled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseSettings {
    pub lr: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub temperature: f64,
    pub clip_threshold: Option<f64>,
    pub clip_mode: ClipMode,
}

impl Default for BaseSettings {
    fn default() -> Self {
        Self {
            lr: 0.05,
            weight_decay: 5e-4,
            momentum: 0.9,
            batch_size: 64,
            temperature: 1.0,
            clip_threshold: None,
            clip_mode: ClipMode::Value,
        }
    }
}

impl BaseSettings {
    fn validate(&self) -> Result<()> {
        check_finite("lr", self.lr)?;
        if self.lr <= 0.0 {
            return Err(Error::invalid("lr", "must be > 0"));
        }
        check_finite("weight_decay", self.weight_decay)?;
        if self.weight_decay < 0.0 {
            return Err(Error::invalid("weight_decay", "must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum", "must be in [0, 1)"));
        }
        if self.batch_size < 1 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        check_finite("temperature", self.temperature)?;
        if self.temperature <= 0.0 {
            return Err(Error::invalid("temperature", "must be > 0"));
        }
        if let Some(c) = self.clip_threshold {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::invalid("clip", "must be > 0"));
            }
        }
        Ok(())
    }
}

/// Immutable description of how every hyper-parameter evolves over a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerRanges {
    epochs: usize,
    base: BaseSettings,
    lr_policy: LrPolicy,
    weight_decay: Option<CyclicalRange>,
    temperature: Option<CyclicalRange>,
    clip: Option<CyclicalRange>,
    momentum: Option<CyclicalRange>,
    batch_size: Option<BatchSizeRange>,
}

impl ControllerRanges {
    /// All controllers disabled, constant learning rate.
    pub fn new(epochs: usize, base: BaseSettings) -> Result<Self> {
        if epochs < 1 {
            return Err(Error::invalid("epochs", "must be at least 1"));
        }
        base.validate()?;
        Ok(Self {
            epochs,
            base,
            lr_policy: LrPolicy::Constant,
            weight_decay: None,
            temperature: None,
            clip: None,
            momentum: None,
            batch_size: None,
        })
    }

    pub fn with_lr_policy(mut self, policy: LrPolicy) -> Self {
        self.lr_policy = policy;
        self
    }

    pub fn with_weight_decay(mut self, range: CyclicalRange) -> Result<Self> {
        check_weight_decay_range(range.min, range.max)?;
        validate_cyclical_factor("wd_cyclical_factor", range.cyclical_factor)?;
        self.weight_decay = Some(range);
        Ok(self)
    }

    pub fn with_temperature(mut self, range: CyclicalRange) -> Result<Self> {
        check_positive_range("T_min", range.min, "T_max", range.max)?;
        validate_cyclical_factor("T_cyclical_factor", range.cyclical_factor)?;
        self.temperature = Some(range);
        Ok(self)
    }

    pub fn with_clip(mut self, range: CyclicalRange) -> Result<Self> {
        check_positive_range("clip_min", range.min, "clip_max", range.max)?;
        validate_cyclical_factor("clip_cyclical_factor", range.cyclical_factor)?;
        self.clip = Some(range);
        Ok(self)
    }

    pub fn with_momentum(mut self, range: CyclicalRange) -> Result<Self> {
        check_momentum_range(range.min, range.max)?;
        validate_cyclical_factor("m_cyclical_factor", range.cyclical_factor)?;
        self.momentum = Some(range);
        Ok(self)
    }

    pub fn with_batch_size(mut self, range: BatchSizeRange) -> Result<Self> {
        check_batch_range(range.min, range.max)?;
        validate_cyclical_factor("bs_cyclical_factor", range.cyclical_factor)?;
        self.batch_size = Some(range);
        Ok(self)
    }

    pub fn epochs(&self) -> usize {
        self.epochs
    }

    pub fn base(&self) -> &BaseSettings {
        &self.base
    }

    pub fn lr_policy(&self) -> LrPolicy {
        self.lr_policy
    }

    pub fn weight_decay(&self) -> Option<CyclicalRange> {
        self.weight_decay
    }

    pub fn temperature(&self) -> Option<CyclicalRange> {
        self.temperature
    }

    pub fn clip(&self) -> Option<CyclicalRange> {
        self.clip
    }

    pub fn momentum(&self) -> Option<CyclicalRange> {
        self.momentum
    }

    pub fn batch_size(&self) -> Option<BatchSizeRange> {
        self.batch_size
    }

    fn xi(&self, epoch: usize, cyclical_factor: f64) -> CycleCoefficient {
        cycle_coefficient(epoch as f64, self.epochs, cyclical_factor)
            .expect("ranges validated at construction")
    }

    /// Settings in effect at the start of `epoch`.
    pub fn resolve_epoch(&self, epoch: usize) -> ControllerSet {
        let base = &self.base;
        let scalar = |range: Option<CyclicalRange>, constant: f64| match range {
            Some(r) => blend(r.min, r.max, self.xi(epoch, r.cyclical_factor)),
            None => constant,
        };

        let batch_size = match self.batch_size {
            Some(r) => resolve_batch_size(r.min, r.max, self.xi(epoch, r.cyclical_factor))
                .expect("ranges validated at construction"),
            None => base.batch_size,
        };
        let clip_threshold = match self.clip {
            Some(r) => Some(blend(r.min, r.max, self.xi(epoch, r.cyclical_factor))),
            None => base.clip_threshold,
        };

        ControllerSet {
            lr: self.lr_policy.lr(base.lr, epoch, self.epochs),
            weight_decay: scalar(self.weight_decay, base.weight_decay),
            momentum: scalar(self.momentum, base.momentum),
            batch_size,
            temperature: scalar(self.temperature, base.temperature),
            clip_threshold,
            clip_mode: base.clip_mode,
        }
    }
}
