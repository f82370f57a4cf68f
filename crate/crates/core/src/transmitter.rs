//! NRZ OOK modulation with microcontroller timing imperfections.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::rng::rng_from_seed;
use crate::signal::{BitStream, Level, OpticalWaveform, Transition};

/// Minimum spacing between realized edges, as a fraction of the symbol period.
pub const MIN_EDGE_GAP: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TxConfig {
    pub symbol_rate_hz: f64,
    /// Standard deviation of the Gaussian per-edge timing error.
    pub jitter_sigma_us: f64,
    /// Timer resolution; realized edges snap to multiples of it. Zero disables.
    pub timer_quantum_us: f64,
    pub on_intensity: f64,
    pub off_intensity: f64,
}

impl Default for TxConfig {
    fn default() -> Self {
        Self {
            symbol_rate_hz: 50_000.0,
            jitter_sigma_us: 0.0,
            timer_quantum_us: 0.0,
            on_intensity: 1.0,
            off_intensity: 0.05,
        }
    }
}

impl TxConfig {
    pub fn symbol_period_us(&self) -> f64 {
        1e6 / self.symbol_rate_hz
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.symbol_rate_hz > 0.0 && self.symbol_rate_hz.is_finite()) {
            return Err(config(format!(
                "tx.symbol_rate_hz must be positive, got {}",
                self.symbol_rate_hz
            )));
        }
        if !(self.jitter_sigma_us >= 0.0) || !(self.timer_quantum_us >= 0.0) {
            return Err(config("tx jitter and timer quantum must be non-negative"));
        }
        // on == off is accepted: it models a link with no usable contrast.
        if !(self.on_intensity > 0.0) || !(self.off_intensity >= 0.0) {
            return Err(config("tx.on_intensity must be > 0 and tx.off_intensity >= 0"));
        }
        if self.off_intensity > self.on_intensity {
            return Err(config(format!(
                "tx.off_intensity {} exceeds tx.on_intensity {}",
                self.off_intensity, self.on_intensity
            )));
        }
        Ok(())
    }
}

/// Maps line bits onto LED transitions (1 -> ON, 0 -> OFF).
///
/// The first transition marks the start of the waveform and is never
/// perturbed. Every later edge is moved by Gaussian jitter, snapped to the
/// timer grid and finally pushed forward where needed so that edges stay at
/// least [`MIN_EDGE_GAP`] of a period apart.
pub fn modulate_ook(bits: &BitStream, cfg: &TxConfig, seed: u64) -> Result<OpticalWaveform> {
    cfg.validate()?;
    if bits.is_empty() {
        return Err(Error::Structural("cannot modulate an empty bit stream".into()));
    }
    let period = cfg.symbol_period_us();
    let mut rng = rng_from_seed(seed);
    let jitter = Normal::new(0.0, cfg.jitter_sigma_us).map_err(|e| config(e.to_string()))?;
    let min_gap = MIN_EDGE_GAP * period;

    let mut transitions: Vec<Transition> = Vec::new();
    let mut prev_bit = None;
    for (k, &bit) in bits.bits.iter().enumerate() {
        if prev_bit == Some(bit) {
            continue;
        }
        prev_bit = Some(bit);
        let level = if bit { Level::On } else { Level::Off };
        let ideal = k as f64 * period;
        let t = match transitions.last() {
            None => ideal,
            Some(last) => {
                let mut t = ideal;
                if cfg.jitter_sigma_us > 0.0 {
                    t += jitter.sample(&mut rng);
                }
                if cfg.timer_quantum_us > 0.0 {
                    t = (t / cfg.timer_quantum_us).round() * cfg.timer_quantum_us;
                }
                t.max(last.t_us + min_gap)
            }
        };
        transitions.push(Transition { t_us: t, level });
    }
    let nominal_end = bits.len() as f64 * period;
    let end_us = nominal_end.max(transitions.last().map_or(0.0, |t| t.t_us) + min_gap);
    Ok(OpticalWaveform {
        transitions,
        end_us,
        on_intensity: cfg.on_intensity,
        off_intensity: cfg.off_intensity,
    })
}
