//! Cyclical schedule engine.
//!
//! A schedule moves a scalar setting between an "easy" endpoint, used at the
//! start (and, for a cyclical factor above one, at the end) of training, and a
//! "hard" endpoint reached in between. The shape is controlled by the cycle
//! coefficient `xi`, where `xi = 1` selects the easy endpoint and `xi = 0` the
//! hard one:
//!
//! ```text
//! value = xi * p_easy + (1 - xi) * p_hard
//! ```
//!
//! With `cyclical_factor = 1` the trajectory is a monotone ramp from easy to
//! hard, with `2` a symmetric triangle, and with `4` the hard endpoint is hit a
//! quarter of the way in before returning to easy.
//!
//! ```
//! use cyclical::schedule::CyclicalSchedule;
//!
//! let s = CyclicalSchedule::new(0.0, 1.0, 2.0, 5).unwrap();
//! let values: Vec<f64> = s.trace().into_iter().map(|(_, v)| v).collect();
//! assert_eq!(values, vec![0.0, 0.5, 1.0, 0.5, 0.0]);
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Blend weight of the easy endpoint, always within `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct CycleCoefficient(f64);

impl CycleCoefficient {
    pub const EASY: CycleCoefficient = CycleCoefficient(1.0);
    pub const HARD: CycleCoefficient = CycleCoefficient(0.0);

    pub fn new(value: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::invalid("xi", format!("{value} is outside [0, 1]")));
        }
        Ok(Self(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

pub(crate) fn validate_cyclical_factor(name: &str, cyclical_factor: f64) -> Result<()> {
    if !cyclical_factor.is_finite() || cyclical_factor < 1.0 {
        return Err(Error::invalid(
            name,
            format!("{cyclical_factor} must be a finite value >= 1"),
        ));
    }
    Ok(())
}

/// Cycle coefficient for (possibly fractional) epoch `epoch` of `total_epochs`.
///
/// Progress is normalised by `total_epochs - 1` so that the first and last
/// epochs land exactly on their endpoints. Epochs past the end (cooldown) are
/// clamped to the last epoch. A single-epoch run always uses the easy endpoint.
pub fn cycle_coefficient(
    epoch: f64,
    total_epochs: usize,
    cyclical_factor: f64,
) -> Result<CycleCoefficient> {
    validate_cyclical_factor("cyclical_factor", cyclical_factor)?;
    if total_epochs < 1 {
        return Err(Error::invalid("epochs", "must be at least 1"));
    }
    if !epoch.is_finite() || epoch < 0.0 {
        return Err(Error::invalid(
            "epoch",
            format!("{epoch} must be finite and >= 0"),
        ));
    }
    if total_epochs == 1 {
        return Ok(CycleCoefficient::EASY);
    }

    let last = (total_epochs - 1) as f64;
    let position = cyclical_factor * epoch.min(last);
    let xi = if position < total_epochs as f64 {
        1.0 - position / last
    } else if cyclical_factor == 1.0 {
        0.0
    } else {
        (position / last - 1.0) / (cyclical_factor - 1.0)
    };
    Ok(CycleCoefficient(xi.clamp(0.0, 1.0)))
}

/// `xi * p_easy + (1 - xi) * p_hard`, kept inside the endpoint interval.
///
/// Equal endpoints return that value bit-for-bit, so a degenerate range is
/// indistinguishable from a constant setting.
pub fn blend(p_easy: f64, p_hard: f64, xi: CycleCoefficient) -> f64 {
    if p_easy == p_hard {
        return p_easy;
    }
    let xi = xi.value();
    let value = xi * p_easy + (1.0 - xi) * p_hard;
    value.clamp(p_easy.min(p_hard), p_easy.max(p_hard))
}

/// One cyclical trajectory of a scalar setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CyclicalSchedule {
    p_easy: f64,
    p_hard: f64,
    cyclical_factor: f64,
    total_epochs: usize,
}

impl CyclicalSchedule {
    pub fn new(
        p_easy: f64,
        p_hard: f64,
        cyclical_factor: f64,
        total_epochs: usize,
    ) -> Result<Self> {
        if !p_easy.is_finite() {
            return Err(Error::invalid("p_easy", "must be finite"));
        }
        if !p_hard.is_finite() {
            return Err(Error::invalid("p_hard", "must be finite"));
        }
        validate_cyclical_factor("cyclical_factor", cyclical_factor)?;
        if total_epochs < 1 {
            return Err(Error::invalid("epochs", "must be at least 1"));
        }
        Ok(Self {
            p_easy,
            p_hard,
            cyclical_factor,
            total_epochs,
        })
    }

    pub fn p_easy(&self) -> f64 {
        self.p_easy
    }

    pub fn p_hard(&self) -> f64 {
        self.p_hard
    }

    pub fn cyclical_factor(&self) -> f64 {
        self.cyclical_factor
    }

    pub fn total_epochs(&self) -> usize {
        self.total_epochs
    }

    pub fn coefficient(&self, epoch: usize) -> CycleCoefficient {
        self.coefficient_at(epoch as f64)
    }

    /// Fractional-epoch variant for per-iteration stepping.
    pub fn coefficient_at(&self, epoch: f64) -> CycleCoefficient {
        cycle_coefficient(epoch.max(0.0), self.total_epochs, self.cyclical_factor)
            .expect("schedule parameters validated at construction")
    }

    pub fn value(&self, epoch: usize) -> f64 {
        blend(self.p_easy, self.p_hard, self.coefficient(epoch))
    }

    pub fn value_at(&self, epoch: f64) -> f64 {
        blend(self.p_easy, self.p_hard, self.coefficient_at(epoch))
    }

    /// `(epoch, value)` for every epoch of the run.
    pub fn trace(&self) -> Vec<(usize, f64)> {
        (0..self.total_epochs).map(|e| (e, self.value(e))).collect()
    }
}
