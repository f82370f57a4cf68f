//! Offline receiver: crop -> bin -> smooth -> peak detection -> toggle
//! demodulation, optionally clocked by a DPLL.
//!
//! # Timing convention
//!
//! `t_start` is the origin of the bit grid. Peaks (edges) are expected in
//! the middle of slot `k`, at `t_start + (k + 1/2) T`, and bit `k` is
//! decided at the slot end `t_start + (k + 1) T`, i.e. halfway between two
//! possible edges. [`demodulate`] puts the origin half a period before the
//! first detected peak, less [`LEAD_SLOTS`] idle slots.
//!
//! # Toggle demodulation
//!
//! A set/reset flip-flop: a POS peak sets the state to 1, a NEG peak resets
//! it to 0, and the state holds until the opposite polarity shows up. Each
//! decision instant reads the state left by the latest peak at or before
//! it. When a POS and a NEG peak share a timestamp the NEG peak wins.
//!
//! # DPLL
//!
//! A second-order loop on the merged POS+NEG peak train. For each expected
//! edge position it takes the nearest peak within half a period, corrects
//! phase by `kp * e` and period by `kf * e`, and coasts on the current
//! period estimate when no peak is found. With the DPLL on, weak peaks
//! (below the normal detection threshold but above `gate_threshold`) are
//! also accepted when they fall within `gate_halfwidth` periods of an
//! expected edge.

use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::signal::{first_unsorted, BitStream, Event, EventHistogram, Polarity};

/// Rectangular pixel region, bounds inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roi {
    pub x_min: u16,
    pub x_max: u16,
    pub y_min: u16,
    pub y_max: u16,
}

impl Roi {
    pub fn validate(&self) -> Result<()> {
        if self.x_min > self.x_max || self.y_min > self.y_max {
            return Err(config(format!("empty region of interest {self:?}")));
        }
        Ok(())
    }

    pub fn contains(&self, e: &Event) -> bool {
        (self.x_min..=self.x_max).contains(&e.x) && (self.y_min..=self.y_max).contains(&e.y)
    }

    /// The whole sensor.
    pub fn full(width: u16, height: u16) -> Self {
        Self {
            x_min: 0,
            x_max: width.saturating_sub(1),
            y_min: 0,
            y_max: height.saturating_sub(1),
        }
    }
}

/// Keeps events inside `roi`, preserving order.
pub fn crop_roi(events: &[Event], roi: &Roi) -> Result<Vec<Event>> {
    roi.validate()?;
    Ok(events.iter().filter(|e| roi.contains(e)).copied().collect())
}

/// Counts events per polarity in bins of `bin_width_us` over `[t0, t1)`.
pub fn bin_events(events: &[Event], bin_width_us: f64, t0: f64, t1: f64) -> Result<EventHistogram> {
    if !(bin_width_us > 0.0) {
        return Err(config(format!("bin width must be positive, got {bin_width_us}")));
    }
    if !(t1 > t0) {
        return Err(config(format!("histogram range [{t0}, {t1}) is empty")));
    }
    let n = ((t1 - t0) / bin_width_us).ceil() as usize;
    let mut pos = vec![0u32; n];
    let mut neg = vec![0u32; n];
    for e in events {
        let t = e.t as f64;
        if t < t0 || t >= t1 {
            continue;
        }
        let idx = (((t - t0) / bin_width_us) as usize).min(n - 1);
        match e.polarity {
            Polarity::Pos => pos[idx] += 1,
            Polarity::Neg => neg[idx] += 1,
        }
    }
    Ok(EventHistogram {
        bin_width_us,
        t0_us: t0,
        pos_counts: pos,
        neg_counts: neg,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SmoothKernel {
    MovingAverage,
    /// Gaussian with sigma = width / 6, truncated to `width` taps.
    Gaussian,
}

impl std::str::FromStr for SmoothKernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "moving_average" => Ok(SmoothKernel::MovingAverage),
            "gaussian" => Ok(SmoothKernel::Gaussian),
            other => Err(config(format!(
                "unknown smoothing kernel {other:?} (moving_average | gaussian)"
            ))),
        }
    }
}

impl std::fmt::Display for SmoothKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SmoothKernel::MovingAverage => "moving_average",
            SmoothKernel::Gaussian => "gaussian",
        })
    }
}

/// Normalized kernel taps (sum 1).
pub fn kernel_taps(kind: SmoothKernel, width: usize) -> Vec<f64> {
    let width = width.max(1);
    let taps: Vec<f64> = match kind {
        SmoothKernel::MovingAverage => vec![1.0; width],
        SmoothKernel::Gaussian => {
            let c = (width as f64 - 1.0) / 2.0;
            let sigma = width as f64 / 6.0;
            (0..width)
                .map(|j| (-0.5 * ((j as f64 - c) / sigma).powi(2)).exp())
                .collect()
        }
    };
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// "Same"-length convolution with a zero-padded input.
///
/// Output sample `i` is aligned with full-convolution sample
/// `i + (width - 1) / 2`.
pub fn smooth_series(series: &[f64], kind: SmoothKernel, width: usize) -> Vec<f64> {
    let width = width.max(1);
    let n = series.len();
    let off = (width - 1) / 2;
    match kind {
        SmoothKernel::MovingAverage => {
            let mut prefix = Vec::with_capacity(n + 1);
            prefix.push(0.0);
            for &v in series {
                prefix.push(prefix.last().unwrap() + v);
            }
            (0..n)
                .map(|i| {
                    let hi = (i + off + 1).min(n);
                    let lo = (i + off + 1).saturating_sub(width).min(hi);
                    (prefix[hi] - prefix[lo]) / width as f64
                })
                .collect()
        }
        SmoothKernel::Gaussian => {
            let taps = kernel_taps(kind, width);
            (0..n)
                .map(|i| {
                    let j = i + off;
                    taps.iter()
                        .enumerate()
                        .filter_map(|(m, &k)| j.checked_sub(m).and_then(|s| series.get(s)).map(|&x| x * k))
                        .sum()
                })
                .collect()
        }
    }
}

/// Smoothed per-polarity histogram.
#[derive(Clone, Debug, PartialEq)]
pub struct SmoothedHistogram {
    pub t0_us: f64,
    pub bin_width_us: f64,
    pub pos: Vec<f64>,
    pub neg: Vec<f64>,
}

pub fn smooth(h: &EventHistogram, cfg: &DemodConfig) -> Result<SmoothedHistogram> {
    if cfg.smooth_width_bins == 0 {
        return Err(config("dm.smooth_width_bins must be at least 1"));
    }
    let run = |counts: &[u32]| {
        let x: Vec<f64> = counts.iter().map(|&c| f64::from(c)).collect();
        smooth_series(&x, cfg.smooth_kernel, cfg.smooth_width_bins)
    };
    Ok(SmoothedHistogram {
        t0_us: h.t0_us,
        bin_width_us: h.bin_width_us,
        pos: run(&h.pos_counts),
        neg: run(&h.neg_counts),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub t_us: f64,
    pub value: f64,
}

/// Peaks of one polarity, strictly increasing in time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeakList {
    pub polarity: Polarity,
    pub peaks: Vec<Peak>,
}

impl PeakList {
    pub fn new(polarity: Polarity) -> Self {
        Self {
            polarity,
            peaks: Vec::new(),
        }
    }

    /// Peaks at the given times with unit height.
    pub fn from_times(polarity: Polarity, times: &[f64]) -> Self {
        Self {
            polarity,
            peaks: times.iter().map(|&t| Peak { t_us: t, value: 1.0 }).collect(),
        }
    }

    pub fn times(&self) -> Vec<f64> {
        self.peaks.iter().map(|p| p.t_us).collect()
    }

    pub fn len(&self) -> usize {
        self.peaks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.peaks.is_empty()
    }
}

/// Local-maximum detection on a binned series.
///
/// Plateaus count as one maximum at their center; endpoints never qualify.
/// Candidates below `threshold * max(series)` are dropped, then the
/// survivors are thinned greedily, largest first, so that kept peaks are at
/// least `min_separation_us` apart. Peak time is the bin center.
pub fn detect_peaks(
    series: &[f64],
    t0_us: f64,
    bin_width_us: f64,
    polarity: Polarity,
    threshold: f64,
    min_separation_us: f64,
) -> PeakList {
    let n = series.len();
    let global_max = series.iter().copied().fold(0.0, f64::max);
    let floor = threshold * global_max;
    let mut cands: Vec<Peak> = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        let v = series[i];
        if v <= series[i - 1] || v <= 0.0 {
            i += 1;
            continue;
        }
        let mut end = i;
        while end + 1 < n && series[end + 1] == v {
            end += 1;
        }
        if end + 1 < n && series[end + 1] < v && v >= floor {
            let center = (i + end) as f64 / 2.0;
            cands.push(Peak {
                t_us: t0_us + (center + 0.5) * bin_width_us,
                value: v,
            });
        }
        i = end + 1;
    }

    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&a, &b| cands[b].value.total_cmp(&cands[a].value).then(a.cmp(&b)));
    let mut removed = vec![false; cands.len()];
    for &c in &order {
        if removed[c] {
            continue;
        }
        let t = cands[c].t_us;
        for j in (0..c).rev() {
            if t - cands[j].t_us >= min_separation_us {
                break;
            }
            removed[j] = true;
        }
        for j in c + 1..cands.len() {
            if cands[j].t_us - t >= min_separation_us {
                break;
            }
            removed[j] = true;
        }
    }
    PeakList {
        polarity,
        peaks: cands
            .into_iter()
            .zip(removed)
            .filter(|(_, r)| !r)
            .map(|(p, _)| p)
            .collect(),
    }
}

/// Loop state of the timing-recovery DPLL.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpllState {
    pub period_us: f64,
    /// Expected position of the next edge.
    pub phase_us: f64,
    pub kp: f64,
    pub kf: f64,
    pub lock: bool,
    nominal_period_us: f64,
    error_avg: f64,
}

/// Smoothed |phase error| / period below which the loop reports lock.
pub const LOCK_THRESHOLD: f64 = 0.15;

impl DpllState {
    pub fn new(nominal_period_us: f64, kp: f64, kf: f64, first_edge_us: f64) -> Result<Self> {
        if !(nominal_period_us > 0.0) {
            return Err(config("DPLL period must be positive"));
        }
        if !(kp > 0.0 && kp < 1.0) || !(kf >= 0.0 && kf < kp) {
            return Err(config(format!(
                "DPLL gains need 0 < kp < 1 and 0 <= kf < kp, got kp={kp} kf={kf}"
            )));
        }
        Ok(Self {
            period_us: nominal_period_us,
            phase_us: first_edge_us,
            kp,
            kf,
            lock: true,
            nominal_period_us,
            error_avg: 0.0,
        })
    }

    /// Applies a phase error measurement for the current slot.
    pub fn correct(&mut self, error_us: f64) {
        self.phase_us += self.kp * error_us;
        self.period_us = (self.period_us + self.kf * error_us)
            .clamp(0.5 * self.nominal_period_us, 1.5 * self.nominal_period_us);
        self.error_avg = 0.9 * self.error_avg + 0.1 * (error_us / self.period_us).abs();
        self.lock = self.error_avg < LOCK_THRESHOLD;
    }

    /// Moves on to the next slot.
    pub fn advance(&mut self) {
        self.phase_us += self.period_us;
    }
}

/// Output of [`dpll_track`].
#[derive(Clone, Debug, PartialEq)]
pub struct DpllTrack {
    /// Decision instants, one per slot, strictly increasing.
    pub instants: Vec<f64>,
    /// Corrected edge position for each slot.
    pub edges: Vec<f64>,
    pub final_period_us: f64,
    pub matched_slots: usize,
    pub locked_slots: usize,
}

impl DpllTrack {
    pub fn lock_rate(&self) -> f64 {
        if self.instants.is_empty() {
            0.0
        } else {
            self.locked_slots as f64 / self.instants.len() as f64
        }
    }
}

/// Tracks a sorted train of peak times and emits `n_slots` decision
/// instants, flywheeling through slots without a peak.
pub fn dpll_track(
    peaks: &[f64],
    nominal_period_us: f64,
    kp: f64,
    kf: f64,
    t_start: f64,
    n_slots: usize,
) -> Result<DpllTrack> {
    let mut st = DpllState::new(nominal_period_us, kp, kf, t_start + nominal_period_us / 2.0)?;
    let mut instants = Vec::with_capacity(n_slots);
    let mut edges = Vec::with_capacity(n_slots);
    let mut cursor = 0;
    let mut matched_slots = 0;
    let mut locked_slots = 0;
    for _ in 0..n_slots {
        let half = st.period_us / 2.0;
        while cursor < peaks.len() && peaks[cursor] < st.phase_us - half {
            cursor += 1;
        }
        let mut best: Option<usize> = None;
        let mut j = cursor;
        while j < peaks.len() && peaks[j] <= st.phase_us + half {
            if best.is_none_or(|b| (peaks[j] - st.phase_us).abs() < (peaks[b] - st.phase_us).abs()) {
                best = Some(j);
            }
            j += 1;
        }
        if let Some(b) = best {
            st.correct(peaks[b] - st.phase_us);
            cursor = b + 1;
            matched_slots += 1;
        }
        if st.lock {
            locked_slots += 1;
        }
        edges.push(st.phase_us);
        instants.push(st.phase_us + st.period_us / 2.0);
        st.advance();
    }
    Ok(DpllTrack {
        instants,
        edges,
        final_period_us: st.period_us,
        matched_slots,
        locked_slots,
    })
}

/// Decision instants of the free-running clock: `t_start + (k + 1) T`.
pub fn nominal_instants(t_start: f64, period_us: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| t_start + (k + 1) as f64 * period_us).collect()
}

/// Set/reset state sampled at ascending `instants`.
pub fn sample_toggle(pos: &PeakList, neg: &PeakList, instants: &[f64]) -> BitStream {
    // (time, is_neg): at equal times NEG sorts last, so it wins.
    let mut merged: Vec<(f64, bool)> = pos
        .peaks
        .iter()
        .map(|p| (p.t_us, false))
        .chain(neg.peaks.iter().map(|p| (p.t_us, true)))
        .collect();
    merged.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut state = false;
    let mut cursor = 0;
    let bits = instants
        .iter()
        .map(|&t| {
            while cursor < merged.len() && merged[cursor].0 <= t {
                state = !merged[cursor].1;
                cursor += 1;
            }
            state
        })
        .collect();
    BitStream::line_coded(bits)
}

fn merged_times(a: &PeakList, b: &PeakList) -> Vec<f64> {
    let mut t: Vec<f64> = a.peaks.iter().chain(&b.peaks).map(|p| p.t_us).collect();
    t.sort_by(f64::total_cmp);
    t
}

/// Toggle demodulation of `n_bits` starting at the grid origin `t_start`,
/// clocked by the nominal rate or, with `use_dpll`, by [`dpll_track`] on
/// the merged peak train.
pub fn toggle_demodulate(
    pos: &PeakList,
    neg: &PeakList,
    cfg: &DemodConfig,
    t_start: f64,
    n_bits: usize,
) -> Result<BitStream> {
    if n_bits == 0 {
        return Err(config("toggle demodulation needs n_bits > 0"));
    }
    let period = cfg.symbol_period_us();
    let instants = if cfg.use_dpll {
        dpll_track(&merged_times(pos, neg), period, cfg.kp, cfg.kf, t_start, n_bits)?.instants
    } else {
        nominal_instants(t_start, period, n_bits)
    };
    Ok(sample_toggle(pos, neg, &instants))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemodConfig {
    pub bin_width_us: f64,
    pub smooth_kernel: SmoothKernel,
    pub smooth_width_bins: usize,
    pub peak_min_separation_us: f64,
    /// Detection floor as a fraction of the series maximum.
    pub peak_threshold: f64,
    pub nominal_symbol_rate_hz: f64,
    pub use_dpll: bool,
    pub kp: f64,
    pub kf: f64,
    /// Floor for DPLL-gated weak peaks, fraction of the series maximum.
    pub gate_threshold: f64,
    /// Gate half-width in symbol periods.
    pub gate_halfwidth: f64,
}

impl Default for DemodConfig {
    fn default() -> Self {
        Self::for_symbol_rate(50_000.0)
    }
}

impl DemodConfig {
    /// Defaults for a symbol rate: bins of T/8, 3-bin moving average,
    /// same-polarity peaks at least T apart (NRZ puts them 2T or more apart).
    pub fn for_symbol_rate(rate_hz: f64) -> Self {
        let period = 1e6 / rate_hz;
        Self {
            bin_width_us: period / 8.0,
            smooth_kernel: SmoothKernel::MovingAverage,
            smooth_width_bins: 3,
            peak_min_separation_us: period,
            peak_threshold: 0.3,
            nominal_symbol_rate_hz: rate_hz,
            use_dpll: true,
            kp: 0.1,
            kf: 0.01,
            gate_threshold: 0.05,
            gate_halfwidth: 0.4,
        }
    }

    /// Same settings re-scaled to a new symbol rate.
    pub fn retimed(&self, rate_hz: f64) -> Self {
        let scale = self.nominal_symbol_rate_hz / rate_hz;
        Self {
            bin_width_us: self.bin_width_us * scale,
            peak_min_separation_us: self.peak_min_separation_us * scale,
            nominal_symbol_rate_hz: rate_hz,
            ..self.clone()
        }
    }

    pub fn symbol_period_us(&self) -> f64 {
        1e6 / self.nominal_symbol_rate_hz
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nominal_symbol_rate_hz > 0.0) {
            return Err(config("dm.nominal_symbol_rate_hz must be positive"));
        }
        let period = self.symbol_period_us();
        if !(self.bin_width_us > 0.0) || self.bin_width_us > period / 4.0 * (1.0 + 1e-12) {
            return Err(config(format!(
                "dm.bin_width_us {} must be in (0, T/4 = {}]",
                self.bin_width_us,
                period / 4.0
            )));
        }
        if self.peak_min_separation_us < 2.0 * self.bin_width_us * (1.0 - 1e-12) {
            return Err(config(format!(
                "dm.peak_min_separation_us {} must be at least two bins ({})",
                self.peak_min_separation_us,
                2.0 * self.bin_width_us
            )));
        }
        if self.smooth_width_bins == 0 {
            return Err(config("dm.smooth_width_bins must be at least 1"));
        }
        if !(self.peak_threshold > 0.0 && self.peak_threshold <= 1.0) {
            return Err(config("dm.peak_threshold must be in (0, 1]"));
        }
        if !(self.gate_threshold > 0.0 && self.gate_threshold <= 1.0) || !(self.gate_halfwidth >= 0.0) {
            return Err(config("dm.gate_threshold must be in (0, 1] and dm.gate_halfwidth >= 0"));
        }
        DpllState::new(period, self.kp, self.kf, 0.0).map(|_| ())
    }
}

/// Peaks extracted from an event stream.
#[derive(Clone, Debug, PartialEq)]
pub struct PeakSet {
    pub pos: PeakList,
    pub neg: PeakList,
    /// Sub-threshold candidates eligible for DPLL gating.
    pub pos_weak: PeakList,
    pub neg_weak: PeakList,
    pub events_in_roi: usize,
}

impl PeakSet {
    fn empty() -> Self {
        Self {
            pos: PeakList::new(Polarity::Pos),
            neg: PeakList::new(Polarity::Neg),
            pos_weak: PeakList::new(Polarity::Pos),
            neg_weak: PeakList::new(Polarity::Neg),
            events_in_roi: 0,
        }
    }
}

/// Runs crop, bin, smooth and peak detection.
pub fn extract_peaks(events: &[Event], cfg: &DemodConfig, roi: &Roi) -> Result<PeakSet> {
    cfg.validate()?;
    if let Some(i) = first_unsorted(events) {
        return Err(Error::Unsorted {
            stream: 0,
            index: i,
            t: events[i].t,
            prev: events[i - 1].t,
        });
    }
    let cropped = crop_roi(events, roi)?;
    let (Some(first), Some(last)) = (cropped.first(), cropped.last()) else {
        return Ok(PeakSet::empty());
    };
    // one idle period each side so edge peaks never sit on an endpoint
    let margin = cfg.symbol_period_us();
    let t0 = first.t as f64 - margin;
    let hist = bin_events(&cropped, cfg.bin_width_us, t0, last.t as f64 + 1.0 + margin)?;
    let sm = smooth(&hist, cfg)?;
    let sep = cfg.peak_min_separation_us;
    let bw = cfg.bin_width_us;
    let detect = |series: &[f64], pol, thr| detect_peaks(series, t0, bw, pol, thr, sep);
    let weak_floor = cfg.gate_threshold.min(cfg.peak_threshold);
    let weak = |series: &[f64], pol| {
        let max = series.iter().copied().fold(0.0, f64::max);
        let mut list = detect(series, pol, weak_floor);
        list.peaks.retain(|p| p.value < cfg.peak_threshold * max);
        list
    };
    Ok(PeakSet {
        pos: detect(&sm.pos, Polarity::Pos, cfg.peak_threshold),
        neg: detect(&sm.neg, Polarity::Neg, cfg.peak_threshold),
        pos_weak: weak(&sm.pos, Polarity::Pos),
        neg_weak: weak(&sm.neg, Polarity::Neg),
        events_in_roi: cropped.len(),
    })
}

/// Idle slots decoded ahead of the first peak. The line rests low before
/// the first edge, so these read as leading zeros.
pub const LEAD_SLOTS: usize = 4;

/// Receiver diagnostics.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DemodStats {
    pub events_in_roi: usize,
    pub pos_peaks: usize,
    pub neg_peaks: usize,
    /// Weak peaks admitted by the DPLL gate.
    pub gated_peaks: usize,
    pub no_peaks: bool,
    pub t_start_us: Option<f64>,
    pub lock_rate: Option<f64>,
    pub final_period_us: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DemodOutput {
    pub bits: BitStream,
    pub stats: DemodStats,
}

fn gate(weak: &PeakList, edges: &[f64], halfwidth_us: f64) -> Vec<Peak> {
    weak.peaks
        .iter()
        .filter(|p| {
            let i = edges.partition_point(|&e| e < p.t_us);
            let near = |j: usize| edges.get(j).map_or(f64::INFINITY, |&e| (e - p.t_us).abs());
            near(i).min(if i > 0 { near(i - 1) } else { f64::INFINITY }) <= halfwidth_us
        })
        .copied()
        .collect()
}

fn with_extra(list: &PeakList, extra: Vec<Peak>) -> PeakList {
    let mut peaks = list.peaks.clone();
    peaks.extend(extra);
    peaks.sort_by(|a, b| a.t_us.total_cmp(&b.t_us));
    PeakList {
        polarity: list.polarity,
        peaks,
    }
}

/// Turns extracted peaks into `n_bits` decisions.
pub fn decide(peaks: &PeakSet, cfg: &DemodConfig, n_bits: usize) -> Result<DemodOutput> {
    cfg.validate()?;
    if n_bits == 0 {
        return Err(config("demodulation needs n_bits > 0"));
    }
    let mut stats = DemodStats {
        events_in_roi: peaks.events_in_roi,
        pos_peaks: peaks.pos.len(),
        neg_peaks: peaks.neg.len(),
        ..DemodStats::default()
    };
    let first = peaks
        .pos
        .peaks
        .first()
        .into_iter()
        .chain(peaks.neg.peaks.first())
        .map(|p| p.t_us)
        .min_by(f64::total_cmp);
    let Some(first) = first else {
        stats.no_peaks = true;
        return Ok(DemodOutput {
            bits: BitStream::line_coded(vec![false; n_bits]),
            stats,
        });
    };
    let period = cfg.symbol_period_us();
    let t_start = first - period / 2.0 - LEAD_SLOTS as f64 * period;
    stats.t_start_us = Some(t_start);

    let bits = if cfg.use_dpll {
        let track = dpll_track(
            &merged_times(&peaks.pos, &peaks.neg),
            period,
            cfg.kp,
            cfg.kf,
            t_start,
            n_bits,
        )?;
        stats.lock_rate = Some(track.lock_rate());
        stats.final_period_us = Some(track.final_period_us);
        let halfwidth = cfg.gate_halfwidth * period;
        let extra_pos = gate(&peaks.pos_weak, &track.edges, halfwidth);
        let extra_neg = gate(&peaks.neg_weak, &track.edges, halfwidth);
        stats.gated_peaks = extra_pos.len() + extra_neg.len();
        sample_toggle(
            &with_extra(&peaks.pos, extra_pos),
            &with_extra(&peaks.neg, extra_neg),
            &track.instants,
        )
    } else {
        sample_toggle(&peaks.pos, &peaks.neg, &nominal_instants(t_start, period, n_bits))
    };
    Ok(DemodOutput { bits, stats })
}

/// Full receiver chain for one event stream.
pub fn demodulate(events: &[Event], cfg: &DemodConfig, roi: &Roi, n_bits: usize) -> Result<DemodOutput> {
    decide(&extract_peaks(events, cfg, roi)?, cfg, n_bits)
}
