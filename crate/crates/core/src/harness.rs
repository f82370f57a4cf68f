//! BER trials, parameter sweeps and the DPLL on/off comparison.
//!
//! A trial is fully determined by `(master_seed, trial_index)`. The captured
//! event stream of a trial does not depend on the receiver settings, so
//! DPLL on and off are always evaluated on the very same events.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{apply_channel, ChannelConfig};
use crate::demod::{demodulate, DemodConfig, DemodStats, Roi};
use crate::error::{config, Error, Result};
use crate::evs::{simulate_array, ArraySpread, PixelLayout, PixelParams};
use crate::line_coding::{align_and_extract, deframe, frame_payload, Frame};
use crate::rng::{derive_seed, rng_from_seed};
use crate::signal::{BitStream, Event, SensorGeometry};
use crate::transmitter::{modulate_ook, TxConfig};

/// BER below which hard-decision FEC with 7% overhead cleans up the link.
pub const HD_FEC_LIMIT: f64 = 1e-3;

/// Extra line bits demodulated past the end of the frame.
pub const DEMOD_SLACK_BITS: usize = 16;

/// Idle symbol periods simulated before the first and after the last edge.
const PAD_PERIODS: f64 = 4.0;

const PAYLOAD_STREAM: u64 = 0;
const TX_STREAM: u64 = 1;
const SENSOR_STREAM: u64 = 2;
const IMPAIR_STREAM: u64 = 3;

/// Where the LED image falls on the sensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    pub geometry: SensorGeometry,
    pub origin_x: u16,
    pub origin_y: u16,
    pub columns: u16,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            geometry: SensorGeometry::default(),
            origin_x: 640,
            origin_y: 360,
            columns: 4,
        }
    }
}

/// Link fading on top of the physical model.
///
/// Each LED edge fades with probability `peak_loss`; during a faded edge
/// (up to the next edge) each event survives with probability `fade_keep`.
/// `fade_keep = 0` deletes the edge's events outright.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Impairment {
    pub peak_loss: f64,
    pub fade_keep: f64,
}

impl Default for Impairment {
    fn default() -> Self {
        Self {
            peak_loss: 0.0,
            fade_keep: 0.25,
        }
    }
}

impl Impairment {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.peak_loss) || !(0.0..=1.0).contains(&self.fade_keep) {
            return Err(config("impair.peak_loss and impair.fade_keep must be in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkConfig {
    pub tx: TxConfig,
    pub ch: ChannelConfig,
    pub px: PixelParams,
    pub spread: ArraySpread,
    pub sensor: SensorConfig,
    pub dm: DemodConfig,
    /// Receiver crop; the bounding box of the lit pixels when absent.
    pub roi: Option<Roi>,
    pub impair: Impairment,
    pub payload_bits: usize,
    pub n_trials: usize,
    pub master_seed: u64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        let tx = TxConfig::default();
        Self {
            dm: DemodConfig::for_symbol_rate(tx.symbol_rate_hz),
            tx,
            ch: ChannelConfig::default(),
            px: PixelParams::default(),
            spread: ArraySpread::default(),
            sensor: SensorConfig::default(),
            roi: None,
            impair: Impairment::default(),
            payload_bits: 10_000,
            n_trials: 10,
            master_seed: 1,
        }
    }
}

impl LinkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.payload_bits == 0 || !self.payload_bits.is_multiple_of(8) {
            return Err(config(format!(
                "payload_bits must be a positive multiple of 8, got {}",
                self.payload_bits
            )));
        }
        if self.n_trials == 0 {
            return Err(config("n_trials must be at least 1"));
        }
        self.tx.validate()?;
        self.ch.validate()?;
        self.px.validate()?;
        self.spread.validate()?;
        self.dm.validate()?;
        self.impair.validate()?;
        let (_, x_max, _, y_max) = self.layout().bounds();
        let g = &self.sensor.geometry;
        if self.sensor.columns == 0 || x_max >= g.width || y_max >= g.height {
            return Err(config(format!(
                "lit pixels reach ({x_max}, {y_max}), outside the {}x{} sensor",
                g.width, g.height
            )));
        }
        if let Some(roi) = &self.roi {
            roi.validate()?;
        }
        Ok(())
    }

    pub fn payload_bytes(&self) -> usize {
        self.payload_bits / 8
    }

    pub fn layout(&self) -> PixelLayout {
        PixelLayout {
            origin_x: self.sensor.origin_x,
            origin_y: self.sensor.origin_y,
            columns: self.sensor.columns,
            n_pixels: self.ch.n_lit_pixels,
        }
    }

    pub fn roi(&self) -> Roi {
        self.roi.unwrap_or_else(|| {
            let (x_min, x_max, y_min, y_max) = self.layout().bounds();
            Roi { x_min, x_max, y_min, y_max }
        })
    }

    /// Line bits handed to the demodulator.
    pub fn demod_bits(&self) -> usize {
        Frame::line_bits(self.payload_bytes()) + DEMOD_SLACK_BITS
    }

    /// Moves transmitter and receiver to a new symbol rate.
    pub fn with_symbol_rate(&self, rate_hz: f64) -> Self {
        let mut c = self.clone();
        c.tx.symbol_rate_hz = rate_hz;
        c.dm = c.dm.retimed(rate_hz);
        c
    }

    pub fn with_dpll(&self, on: bool) -> Self {
        let mut c = self.clone();
        c.dm.use_dpll = on;
        c
    }
}

/// Hamming distance between two equal-length bit sequences.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BitErrorCount {
    pub bit_errors: u64,
    pub bits_compared: u64,
    pub ber: f64,
}

pub fn compute_ber(tx: &[bool], rx: &[bool]) -> Result<BitErrorCount> {
    if tx.len() != rx.len() {
        return Err(Error::Structural(format!(
            "BER needs equal lengths, got {} and {}",
            tx.len(),
            rx.len()
        )));
    }
    let bit_errors = tx.iter().zip(rx).filter(|(a, b)| a != b).count() as u64;
    let bits_compared = tx.len() as u64;
    Ok(BitErrorCount {
        bit_errors,
        bits_compared,
        ber: if bits_compared == 0 {
            0.0
        } else {
            bit_errors as f64 / bits_compared as f64
        },
    })
}

/// Everything the sensor recorded for one trial.
#[derive(Clone, Debug, PartialEq)]
pub struct Capture {
    pub trial_index: u64,
    pub seed: u64,
    pub payload: Vec<u8>,
    pub events: Vec<Event>,
    /// Realized LED edge times on the sensor clock.
    pub edges_us: Vec<f64>,
}

/// Thins the events that follow faded edges.
pub fn apply_fade(events: &[Event], edges_us: &[f64], impair: &Impairment, seed: u64) -> Vec<Event> {
    if impair.peak_loss == 0.0 {
        return events.to_vec();
    }
    let mut rng = rng_from_seed(seed);
    let faded: Vec<bool> = edges_us.iter().map(|_| rng.random::<f64>() < impair.peak_loss).collect();
    events
        .iter()
        .filter(|e| {
            let i = edges_us.partition_point(|&t| t <= e.t as f64);
            i == 0 || !faded[i - 1] || rng.random::<f64>() < impair.fade_keep
        })
        .copied()
        .collect()
}

/// Runs the transmit side, channel and sensor for one trial.
pub fn capture(cfg: &LinkConfig, trial_index: u64) -> Result<Capture> {
    cfg.validate()?;
    let seed = derive_seed(cfg.master_seed, trial_index);
    let mut rng = rng_from_seed(derive_seed(seed, PAYLOAD_STREAM));
    let payload: Vec<u8> = (0..cfg.payload_bytes()).map(|_| rng.random()).collect();
    let line = frame_payload(&payload)?;
    let wave = modulate_ook(&line, &cfg.tx, derive_seed(seed, TX_STREAM))?;
    let rx = apply_channel(&wave, &cfg.ch)?;
    let pad = PAD_PERIODS * cfg.tx.symbol_period_us();
    let irr = rx.irradiance.padded(pad, pad);
    let events = simulate_array(
        &irr,
        &cfg.px,
        &cfg.spread,
        &cfg.layout(),
        derive_seed(seed, SENSOR_STREAM),
    )?;
    let edges_us: Vec<f64> = wave.edges().iter().map(|&(t, _)| t + pad).collect();
    let events = apply_fade(&events, &edges_us, &cfg.impair, derive_seed(seed, IMPAIR_STREAM));
    Ok(Capture {
        trial_index,
        seed,
        payload,
        events,
        edges_us,
    })
}

/// Payload recovered from a demodulated line-bit stream.
#[derive(Clone, Debug, PartialEq)]
pub struct Recovered {
    pub payload: Vec<u8>,
    pub aligned: bool,
    pub flagged_groups: usize,
    pub delimiter_ok: bool,
}

/// Aligns on the sync and decodes `payload_len` bytes. Without a sync the
/// payload is all zero and every group counts as flagged.
pub fn recover_payload(line_bits: &BitStream, payload_len: usize) -> Recovered {
    match align_and_extract(&line_bits.bits) {
        Ok(a) => {
            let d = deframe(&a.payload_bits, Some(payload_len));
            Recovered {
                flagged_groups: d.flagged(),
                payload: d.payload,
                aligned: true,
                delimiter_ok: d.delimiter_ok,
            }
        }
        Err(_) => Recovered {
            payload: vec![0; payload_len],
            aligned: false,
            flagged_groups: payload_len,
            delimiter_ok: false,
        },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial_index: u64,
    pub seed: u64,
    pub bit_errors: u64,
    pub bits_compared: u64,
    pub ber: f64,
    pub aligned: bool,
    pub flagged_groups: usize,
    pub delimiter_ok: bool,
    pub events: usize,
    pub demod: DemodStats,
}

/// Receives a capture with the given receiver settings.
pub fn evaluate(cfg: &LinkConfig, cap: &Capture, use_dpll: bool) -> Result<TrialResult> {
    let dm = DemodConfig {
        use_dpll,
        ..cfg.dm.clone()
    };
    let out = demodulate(&cap.events, &dm, &cfg.roi(), cfg.demod_bits())?;
    let rec = recover_payload(&out.bits, cap.payload.len());
    let count = compute_ber(
        &BitStream::from_bytes(&cap.payload).bits,
        &BitStream::from_bytes(&rec.payload).bits,
    )?;
    Ok(TrialResult {
        trial_index: cap.trial_index,
        seed: cap.seed,
        bit_errors: count.bit_errors,
        bits_compared: count.bits_compared,
        ber: count.ber,
        aligned: rec.aligned,
        flagged_groups: rec.flagged_groups,
        delimiter_ok: rec.delimiter_ok,
        events: cap.events.len(),
        demod: out.stats,
    })
}

/// One full trial with the receiver settings in `cfg.dm`.
pub fn run_trial(cfg: &LinkConfig, trial_index: u64) -> Result<TrialResult> {
    evaluate(cfg, &capture(cfg, trial_index)?, cfg.dm.use_dpll)
}

/// Aggregate over trials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BerResult {
    pub dpll_enabled: bool,
    pub bit_errors: u64,
    pub bits_compared: u64,
    pub ber: f64,
    pub flagged_groups: usize,
    pub alignment_failures: usize,
    pub trials: Vec<TrialResult>,
}

impl BerResult {
    pub fn from_trials(dpll_enabled: bool, trials: Vec<TrialResult>) -> Self {
        let bit_errors = trials.iter().map(|t| t.bit_errors).sum();
        let bits_compared: u64 = trials.iter().map(|t| t.bits_compared).sum();
        Self {
            dpll_enabled,
            bit_errors,
            bits_compared,
            ber: if bits_compared == 0 {
                0.0
            } else {
                bit_errors as f64 / bits_compared as f64
            },
            flagged_groups: trials.iter().map(|t| t.flagged_groups).sum(),
            alignment_failures: trials.iter().filter(|t| !t.aligned).count(),
            trials,
        }
    }

    pub fn passes_hd_fec(&self) -> bool {
        passes_hd_fec(self.ber)
    }
}

/// Runs `cfg.n_trials` trials once and evaluates each receiver setting in
/// `modes` on the same captures. Results come back in `modes` order.
pub fn run_trials_modes(cfg: &LinkConfig, modes: &[bool]) -> Result<Vec<BerResult>> {
    cfg.validate()?;
    let per_trial: Vec<Vec<TrialResult>> = (0..cfg.n_trials as u64)
        .into_par_iter()
        .map(|i| {
            let cap = capture(cfg, i)?;
            modes.iter().map(|&m| evaluate(cfg, &cap, m)).collect()
        })
        .collect::<Result<_>>()?;
    Ok(modes
        .iter()
        .enumerate()
        .map(|(k, &m)| BerResult::from_trials(m, per_trial.iter().map(|t| t[k].clone()).collect()))
        .collect())
}

pub fn run_trials(cfg: &LinkConfig) -> Result<BerResult> {
    Ok(run_trials_modes(cfg, &[cfg.dm.use_dpll])?.remove(0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    SymbolRate,
    Distance,
    Jitter,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symbol_rate" => Ok(SweepAxis::SymbolRate),
            "distance" => Ok(SweepAxis::Distance),
            "jitter" => Ok(SweepAxis::Jitter),
            other => Err(config(format!(
                "unknown sweep axis {other:?} (symbol_rate | distance | jitter)"
            ))),
        }
    }
}

impl SweepAxis {
    /// `cfg` with the axis set to `value` (Hz, metres or microseconds).
    pub fn apply(self, cfg: &LinkConfig, value: f64) -> LinkConfig {
        match self {
            SweepAxis::SymbolRate => cfg.with_symbol_rate(value),
            SweepAxis::Distance => {
                let mut c = cfg.clone();
                c.ch.distance_m = value;
                c
            }
            SweepAxis::Jitter => {
                let mut c = cfg.clone();
                c.tx.jitter_sigma_us = value;
                c
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DpllMode {
    On,
    Off,
    Both,
}

impl std::str::FromStr for DpllMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "on" => Ok(DpllMode::On),
            "off" => Ok(DpllMode::Off),
            "both" => Ok(DpllMode::Both),
            other => Err(config(format!("unknown DPLL mode {other:?} (on | off | both)"))),
        }
    }
}

impl DpllMode {
    pub fn settings(self) -> &'static [bool] {
        match self {
            DpllMode::On => &[true],
            DpllMode::Off => &[false],
            DpllMode::Both => &[false, true],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis_value: f64,
    pub result: BerResult,
}

/// One row per (value, DPLL setting), values in the given order, DPLL off
/// before on.
pub fn sweep(cfg: &LinkConfig, axis: SweepAxis, values: &[f64], mode: DpllMode) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(config("sweep needs at least one value"));
    }
    let mut rows = Vec::new();
    for &v in values {
        for result in run_trials_modes(&axis.apply(cfg, v), mode.settings())? {
            rows.push(SweepRow {
                axis_value: v,
                result,
            });
        }
    }
    Ok(rows)
}

pub const SWEEP_CSV_HEADER: &str = "axis_value,dpll,ber,bit_errors,bits,flags";

pub fn write_sweep_csv<W: Write>(mut w: W, rows: &[SweepRow]) -> Result<()> {
    writeln!(w, "{SWEEP_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.axis_value,
            if r.result.dpll_enabled { "on" } else { "off" },
            r.result.ber,
            r.result.bit_errors,
            r.result.bits_compared,
            r.result.flagged_groups
        )?;
    }
    Ok(())
}

/// Net rate after line coding and FEC overhead.
pub fn net_rate_with(gross_bps: f64, line_efficiency: f64, fec_overhead: f64) -> f64 {
    gross_bps * line_efficiency * (1.0 - fec_overhead)
}

/// Net rate for 8b/10b and 7% HD-FEC.
pub fn net_rate(gross_bps: f64) -> f64 {
    net_rate_with(gross_bps, 0.8, 0.07)
}

pub fn passes_hd_fec(ber: f64) -> bool {
    ber < HD_FEC_LIMIT
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation; `None` when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        None
    } else {
        Some(sxy / (sxx * syy).sqrt())
    }
}
