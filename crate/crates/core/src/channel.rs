//! Free-space channel: inverse-square loss plus a constant ambient term.

use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::signal::{Level, OpticalWaveform};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub distance_m: f64,
    pub reference_distance_m: f64,
    /// Background irradiance in the same relative units as the LED output.
    pub ambient_irradiance: f64,
    /// Pixels covered by the LED image.
    pub n_lit_pixels: usize,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            distance_m: 200.0,
            reference_distance_m: 200.0,
            ambient_irradiance: 0.2,
            n_lit_pixels: 16,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.distance_m > 0.0) || !(self.reference_distance_m > 0.0) {
            return Err(config("ch.distance_m and ch.reference_distance_m must be positive"));
        }
        if !(self.ambient_irradiance >= 0.0) {
            return Err(config("ch.ambient_irradiance must be non-negative"));
        }
        if self.n_lit_pixels == 0 {
            return Err(config("ch.n_lit_pixels must be at least 1"));
        }
        Ok(())
    }

    /// Geometric gain `(reference / distance)^2`.
    pub fn path_gain(&self) -> f64 {
        (self.reference_distance_m / self.distance_m).powi(2)
    }

    /// Received ON/OFF irradiance ratio for the given source levels.
    pub fn contrast_ratio(&self, on: f64, off: f64) -> f64 {
        let g = self.path_gain();
        (g * on + self.ambient_irradiance) / (g * off + self.ambient_irradiance)
    }
}

/// Piecewise-constant irradiance seen by one pixel over `[0, span_us)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Irradiance {
    /// Value before the first step.
    pub initial: f64,
    /// `(time, value)` steps, time strictly increasing.
    pub steps: Vec<(f64, f64)>,
    pub span_us: f64,
}

impl Irradiance {
    pub fn constant(value: f64, span_us: f64) -> Self {
        Self {
            initial: value,
            steps: Vec::new(),
            span_us,
        }
    }

    pub fn value_at(&self, t_us: f64) -> f64 {
        let idx = self.steps.partition_point(|&(t, _)| t <= t_us);
        if idx == 0 {
            self.initial
        } else {
            self.steps[idx - 1].1
        }
    }

    pub fn full_scale(&self) -> f64 {
        self.steps
            .iter()
            .map(|&(_, v)| v)
            .fold(self.initial, f64::max)
    }

    /// Shifts every step by `lead_us` and extends the span by `lead_us + tail_us`.
    pub fn padded(&self, lead_us: f64, tail_us: f64) -> Self {
        Self {
            initial: self.initial,
            steps: self.steps.iter().map(|&(t, v)| (t + lead_us, v)).collect(),
            span_us: self.span_us + lead_us + tail_us,
        }
    }
}

/// Irradiance delivered identically to every lit pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct ReceivedSignal {
    pub irradiance: Irradiance,
    pub n_pixels: usize,
}

/// Scales the LED signal by the path gain and adds ambient light.
pub fn apply_channel(w: &OpticalWaveform, cfg: &ChannelConfig) -> Result<ReceivedSignal> {
    cfg.validate()?;
    let g = cfg.path_gain();
    let value = |level| g * w.intensity(level) + cfg.ambient_irradiance;
    let steps = w
        .edges()
        .into_iter()
        .map(|(t, level)| (t, value(level)))
        .collect();
    Ok(ReceivedSignal {
        irradiance: Irradiance {
            initial: value(Level::Off),
            steps,
            span_us: w.end_us,
        },
        n_pixels: cfg.n_lit_pixels,
    })
}
