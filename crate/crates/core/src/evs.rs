//! Event-based vision sensor pixel model.
//!
//! Each pixel runs, once per `sample_dt_us`:
//!
//! ```txt
//! L   = ln(irradiance + eps) + N(0, noise_sigma^2)
//! Lf += alpha * (L - Lf)                      single-pole low-pass at lp_cutoff_hz
//! if  Lf - Lref >= theta_on   -> POS, Lref = Lf
//! if  Lref - Lf >= theta_off  -> NEG, Lref = Lf
//! ```
//!
//! After an event the comparator is blind for `refractory_us`. The filter
//! state and reference level start at the steady state of the first sample,
//! so a constant input never fires.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::Irradiance;
use crate::error::{config, Result};
use crate::rng::{derive_seed, rng_from_seed, SimRng};
use crate::signal::{merge_streams, Event, Polarity};

/// Log-intensity floor relative to the brightest input level.
pub const EPS_FRACTION: f64 = 1e-6;

const PARAM_STREAM: u64 = 0x7061_7261_6d73;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PixelParams {
    pub theta_on: f64,
    pub theta_off: f64,
    pub lp_cutoff_hz: f64,
    pub refractory_us: f64,
    /// Std of the Gaussian noise added to the log intensity at every sample.
    pub noise_sigma: f64,
    pub sample_dt_us: f64,
}

impl Default for PixelParams {
    fn default() -> Self {
        Self {
            theta_on: 0.2,
            theta_off: 0.2,
            lp_cutoff_hz: 200_000.0,
            refractory_us: 1.0,
            noise_sigma: 0.02,
            sample_dt_us: 0.5,
        }
    }
}

impl PixelParams {
    /// Filter time constant in microseconds.
    pub fn time_constant_us(&self) -> f64 {
        1e6 / (2.0 * std::f64::consts::PI * self.lp_cutoff_hz)
    }

    fn check_values(&self) -> Result<()> {
        if !(self.theta_on > 0.0) || !(self.theta_off > 0.0) {
            return Err(config("px.theta_on and px.theta_off must be positive"));
        }
        if !(self.lp_cutoff_hz > 0.0) {
            return Err(config("px.lp_cutoff_hz must be positive"));
        }
        if !(self.sample_dt_us > 0.0) {
            return Err(config(format!(
                "px.sample_dt_us must be positive, got {}",
                self.sample_dt_us
            )));
        }
        if !(self.refractory_us >= 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(config("px.refractory_us and px.noise_sigma must be non-negative"));
        }
        Ok(())
    }

    /// Full validation, including that the step resolves the filter
    /// (`sample_dt <= 1 / (10 * cutoff)`).
    pub fn validate(&self) -> Result<()> {
        self.check_values()?;
        let max_dt = 1e6 / (10.0 * self.lp_cutoff_hz);
        if self.sample_dt_us > max_dt * (1.0 + 1e-12) {
            return Err(config(format!(
                "px.sample_dt_us {} does not resolve a {} Hz filter (max {max_dt})",
                self.sample_dt_us, self.lp_cutoff_hz
            )));
        }
        Ok(())
    }
}

/// Relative per-pixel spread of each parameter (std / mean).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ArraySpread {
    pub theta: f64,
    pub lp_cutoff: f64,
    pub refractory: f64,
    pub noise: f64,
}

impl ArraySpread {
    pub fn uniform(rel: f64) -> Self {
        Self {
            theta: rel,
            lp_cutoff: rel,
            refractory: rel,
            noise: rel,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.theta, self.lp_cutoff, self.refractory, self.noise]
            .iter()
            .all(|&s| s >= 0.0)
        {
            Ok(())
        } else {
            Err(config("spread values must be non-negative"))
        }
    }

    fn draw(&self, base: &PixelParams, rng: &mut SimRng) -> PixelParams {
        let mut factor = |rel: f64| {
            let z: f64 = rng.sample(StandardNormal);
            (1.0 + rel * z).max(0.1)
        };
        let theta = factor(self.theta);
        let cutoff = factor(self.lp_cutoff);
        let refractory = factor(self.refractory);
        let noise = factor(self.noise);
        PixelParams {
            theta_on: base.theta_on * theta,
            theta_off: base.theta_off * theta,
            lp_cutoff_hz: base.lp_cutoff_hz * cutoff,
            refractory_us: base.refractory_us * refractory,
            noise_sigma: base.noise_sigma * noise,
            sample_dt_us: base.sample_dt_us,
        }
    }
}

/// Placement of the lit pixels on the sensor: row-major from the origin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PixelLayout {
    pub origin_x: u16,
    pub origin_y: u16,
    pub columns: u16,
    pub n_pixels: usize,
}

impl PixelLayout {
    pub fn coords(&self, index: usize) -> (u16, u16) {
        let cols = usize::from(self.columns.max(1));
        (
            self.origin_x + (index % cols) as u16,
            self.origin_y + (index / cols) as u16,
        )
    }

    /// Inclusive bounding box `(x_min, x_max, y_min, y_max)`.
    pub fn bounds(&self) -> (u16, u16, u16, u16) {
        let cols = usize::from(self.columns.max(1));
        let rows = self.n_pixels.div_ceil(cols).max(1);
        let used_cols = self.n_pixels.clamp(1, cols);
        (
            self.origin_x,
            self.origin_x + used_cols as u16 - 1,
            self.origin_y,
            self.origin_y + rows as u16 - 1,
        )
    }
}

fn run_pixel(irr: &Irradiance, p: &PixelParams, x: u16, y: u16, rng: &mut SimRng) -> Vec<Event> {
    let dt = p.sample_dt_us;
    let n = (irr.span_us / dt).ceil().max(0.0) as usize;
    let eps = EPS_FRACTION * irr.full_scale().max(f64::MIN_POSITIVE);
    let log_of = |v: f64| (v.max(0.0) + eps).ln();
    let alpha = 1.0 - (-2.0 * std::f64::consts::PI * p.lp_cutoff_hz * dt * 1e-6).exp();

    let mut events = Vec::new();
    let mut step = 0;
    let mut level = log_of(irr.initial);
    let mut filtered = level;
    let mut reference = filtered;
    let mut last_ts: Option<u64> = None;
    for k in 0..n {
        let t = k as f64 * dt;
        while step < irr.steps.len() && irr.steps[step].0 <= t {
            level = log_of(irr.steps[step].1);
            step += 1;
        }
        let input = if p.noise_sigma > 0.0 {
            level + p.noise_sigma * rng.sample::<f64, _>(StandardNormal)
        } else {
            level
        };
        filtered += alpha * (input - filtered);
        let ts = t as u64;
        if let Some(last) = last_ts {
            if ((ts - last) as f64) < p.refractory_us {
                continue;
            }
        }
        let polarity = if filtered - reference >= p.theta_on {
            Polarity::Pos
        } else if reference - filtered >= p.theta_off {
            Polarity::Neg
        } else {
            continue;
        };
        events.push(Event::new(ts, x, y, polarity));
        reference = filtered;
        last_ts = Some(ts);
    }
    events
}

/// Simulates one pixel over the irradiance span.
pub fn simulate_pixel(
    irr: &Irradiance,
    p: &PixelParams,
    x: u16,
    y: u16,
    seed: u64,
) -> Result<Vec<Event>> {
    p.validate()?;
    Ok(run_pixel(irr, p, x, y, &mut rng_from_seed(seed)))
}

/// Simulates a block of pixels with per-pixel parameter spread.
///
/// Pixel `i` uses seed `derive_seed(seed, i)`, so the output does not depend
/// on evaluation order.
pub fn simulate_array(
    irr: &Irradiance,
    base: &PixelParams,
    spread: &ArraySpread,
    layout: &PixelLayout,
    seed: u64,
) -> Result<Vec<Event>> {
    base.validate()?;
    spread.validate()?;
    if layout.n_pixels == 0 {
        return Err(config("pixel array needs at least one pixel"));
    }
    let streams: Vec<Vec<Event>> = (0..layout.n_pixels)
        .into_par_iter()
        .map(|i| {
            let pixel_seed = derive_seed(seed, i as u64);
            let params =
                spread.draw(base, &mut rng_from_seed(derive_seed(pixel_seed, PARAM_STREAM)));
            let (x, y) = layout.coords(i);
            run_pixel(irr, &params, x, y, &mut rng_from_seed(pixel_seed))
        })
        .collect();
    merge_streams(&streams)
}

/// Event counts for one drive frequency.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyPoint {
    pub freq_hz: f64,
    pub pos_count: u64,
    pub neg_count: u64,
    /// Intensity toggles inside the observation window.
    pub toggles: u64,
}

impl FrequencyPoint {
    pub fn events_per_toggle(&self) -> f64 {
        if self.toggles == 0 {
            0.0
        } else {
            (self.pos_count + self.neg_count) as f64 / self.toggles as f64
        }
    }
}

/// Square wave between 1 and e (one natural-log unit of contrast),
/// starting low, toggling every half period.
pub fn unit_contrast_square_wave(freq_hz: f64, duration_us: f64) -> Irradiance {
    let half = 0.5e6 / freq_hz;
    let mut steps = Vec::new();
    let mut j = 1u64;
    loop {
        let t = j as f64 * half;
        if t >= duration_us {
            break;
        }
        let value = if j % 2 == 1 { std::f64::consts::E } else { 1.0 };
        steps.push((t, value));
        j += 1;
    }
    Irradiance {
        initial: 1.0,
        steps,
        span_us: duration_us.max(0.0),
    }
}

/// Drives one pixel with a unit-contrast square wave at each frequency and
/// counts the events it produces. Frequency `i` draws its noise from
/// `derive_seed(seed, i)`.
pub fn frequency_response(
    base: &PixelParams,
    freqs_hz: &[f64],
    duration_us: f64,
    seed: u64,
) -> Result<Vec<FrequencyPoint>> {
    base.validate()?;
    if let Some(f) = freqs_hz.iter().find(|&&f| !(f > 0.0)) {
        return Err(config(format!("frequencies must be positive, got {f}")));
    }
    Ok(freqs_hz
        .iter()
        .enumerate()
        .map(|(i, &f)| {
            let irr = unit_contrast_square_wave(f, duration_us);
            let mut rng = rng_from_seed(derive_seed(seed, i as u64));
            let events = run_pixel(&irr, base, 0, 0, &mut rng);
            let pos_count = events.iter().filter(|e| e.polarity == Polarity::Pos).count() as u64;
            FrequencyPoint {
                freq_hz: f,
                pos_count,
                neg_count: events.len() as u64 - pos_count,
                toggles: irr.steps.len() as u64,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clean(theta: f64, cutoff: f64) -> PixelParams {
        PixelParams {
            theta_on: theta,
            theta_off: theta,
            lp_cutoff_hz: cutoff,
            refractory_us: 0.0,
            noise_sigma: 0.0,
            sample_dt_us: 0.5,
        }
    }

    fn count(events: &[Event], p: Polarity) -> usize {
        events.iter().filter(|e| e.polarity == p).count()
    }

    #[test]
    fn constant_input_is_silent() {
        let irr = Irradiance::constant(0.7, 10_000.0);
        assert!(simulate_pixel(&irr, &clean(0.05, 100_000.0), 0, 0, 1)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn falling_step_fires_only_negative_events() {
        let theta: f64 = 0.2;
        let drop = (2.0 * theta).exp();
        let irr = Irradiance {
            initial: 1.0,
            steps: vec![(100.0, 1.0 / drop)],
            span_us: 500.0,
        };
        let ev = simulate_pixel(&irr, &clean(theta, 100_000.0), 0, 0, 1).unwrap();
        assert!(count(&ev, Polarity::Neg) >= 1);
        assert_eq!(count(&ev, Polarity::Pos), 0);
    }

    #[test]
    fn one_event_per_edge_for_square_wave() {
        // A threshold between half and all of the unit log step leaves room
        // for exactly one crossing per edge with reset-to-current semantics.
        let irr = unit_contrast_square_wave(1_000.0, 100_000.0);
        let ev = simulate_pixel(&irr, &clean(0.6, 10_000.0), 0, 0, 1).unwrap();
        assert_eq!(irr.steps.len(), 199);
        assert_eq!(count(&ev, Polarity::Pos), 100);
        assert_eq!(count(&ev, Polarity::Neg), 99);
        // each event lands in the first quarter of its half-period
        for e in &ev {
            let since = irr
                .steps
                .iter()
                .rev()
                .find(|s| s.0 <= e.t as f64)
                .map(|s| e.t as f64 - s.0)
                .unwrap();
            assert!(since <= 250.0, "event {e:?} {since} us after edge");
        }
    }

    #[test]
    fn polarity_follows_edge_direction() {
        let irr = unit_contrast_square_wave(2_000.0, 20_000.0);
        let ev = simulate_pixel(&irr, &clean(0.3, 50_000.0), 0, 0, 1).unwrap();
        let tau = clean(0.3, 50_000.0).time_constant_us();
        for e in &ev {
            let (edge_t, v) = irr
                .steps
                .iter()
                .rev()
                .find(|s| s.0 <= e.t as f64)
                .copied()
                .unwrap();
            let rising = v > 1.5;
            assert_eq!(e.polarity == Polarity::Pos, rising);
            assert!(e.t as f64 - edge_t <= 5.0 * tau + 1.0);
        }
    }

    #[test]
    fn refractory_spacing_holds() {
        let irr = unit_contrast_square_wave(5_000.0, 20_000.0);
        let mut p = clean(0.05, 200_000.0);
        p.refractory_us = 3.0;
        p.noise_sigma = 0.05;
        let ev = simulate_pixel(&irr, &p, 0, 0, 9).unwrap();
        assert!(ev.len() > 10);
        for w in ev.windows(2) {
            assert!(w[1].t - w[0].t >= 3, "{:?}", w);
        }
    }

    #[test]
    fn zero_dt_is_a_config_error() {
        let mut p = clean(0.2, 1_000.0);
        p.sample_dt_us = 0.0;
        assert!(simulate_pixel(&Irradiance::constant(1.0, 10.0), &p, 0, 0, 0).is_err());
        let mut p = clean(0.2, 100_000.0);
        p.sample_dt_us = 2.0;
        assert!(p.validate().is_err());
    }

    fn layout(n: usize) -> PixelLayout {
        PixelLayout {
            origin_x: 10,
            origin_y: 20,
            columns: 4,
            n_pixels: n,
        }
    }

    #[test]
    fn single_pixel_array_equals_pixel() {
        let irr = unit_contrast_square_wave(3_000.0, 5_000.0);
        let mut p = clean(0.1, 100_000.0);
        p.noise_sigma = 0.03;
        let arr = simulate_array(&irr, &p, &ArraySpread::default(), &layout(1), 77).unwrap();
        let px = simulate_pixel(&irr, &p, 10, 20, derive_seed(77, 0)).unwrap();
        assert_eq!(arr, px);
    }

    #[test]
    fn identical_pixels_fire_together() {
        let irr = unit_contrast_square_wave(3_000.0, 5_000.0);
        let p = clean(0.1, 100_000.0);
        let arr = simulate_array(&irr, &p, &ArraySpread::default(), &layout(10), 5).unwrap();
        let first: Vec<u64> = arr.iter().filter(|e| e.x == 10 && e.y == 20).map(|e| e.t).collect();
        for i in 0..10 {
            let (x, y) = layout(10).coords(i);
            let times: Vec<u64> = arr.iter().filter(|e| e.x == x && e.y == y).map(|e| e.t).collect();
            assert_eq!(times, first);
        }
    }

    #[test]
    fn spread_desynchronizes_pixels() {
        let irr = unit_contrast_square_wave(2_000.0, 2_000.0);
        let p = clean(0.25, 50_000.0);
        let arr =
            simulate_array(&irr, &p, &ArraySpread::uniform(0.05), &layout(10), 5).unwrap();
        // first POS event of each pixel after the first rising edge at 250 us
        let firsts: Vec<f64> = (0..10)
            .map(|i| {
                let (x, y) = layout(10).coords(i);
                arr.iter()
                    .find(|e| e.x == x && e.y == y && e.polarity == Polarity::Pos)
                    .unwrap()
                    .t as f64
            })
            .collect();
        let mean = firsts.iter().sum::<f64>() / 10.0;
        let var = firsts.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / 9.0;
        assert!(var.sqrt() > 0.0);
    }

    #[test]
    fn empty_array_rejected() {
        let irr = Irradiance::constant(1.0, 10.0);
        assert!(simulate_array(&irr, &clean(0.1, 1e4), &ArraySpread::default(), &layout(0), 0)
            .is_err());
    }

    #[test]
    fn array_is_order_independent() {
        let irr = unit_contrast_square_wave(4_000.0, 3_000.0);
        let mut p = clean(0.1, 100_000.0);
        p.noise_sigma = 0.05;
        let a = simulate_array(&irr, &p, &ArraySpread::uniform(0.1), &layout(8), 3).unwrap();
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(3)
            .build()
            .unwrap()
            .install(|| simulate_array(&irr, &p, &ArraySpread::uniform(0.1), &layout(8), 3))
            .unwrap();
        assert_eq!(a, b);
    }

    fn freq_params(cutoff: f64) -> PixelParams {
        PixelParams {
            sample_dt_us: 0.25,
            ..clean(0.6, cutoff)
        }
    }

    #[test]
    fn low_frequency_gives_one_event_per_toggle() {
        let duration = 20_000.0;
        let pts = frequency_response(&freq_params(50_000.0), &[1_000.0, 2_000.0], duration, 1).unwrap();
        for pt in pts {
            let expected = 2.0 * pt.freq_hz * duration * 1e-6;
            let got = (pt.pos_count + pt.neg_count) as f64;
            assert!((got - expected).abs() <= 0.1 * expected, "{pt:?}");
        }
    }

    #[test]
    fn far_above_cutoff_is_attenuated_away() {
        let pts = frequency_response(&freq_params(10_000.0), &[100_000.0], 10_000.0, 1).unwrap();
        let periods = 100_000.0 * 10_000.0 * 1e-6;
        assert!(((pts[0].pos_count + pts[0].neg_count) as f64) / periods < 1.0);
    }

    #[test]
    fn zero_duration_counts_nothing() {
        let pts = frequency_response(&freq_params(10_000.0), &[1_000.0, 5_000.0], 0.0, 1).unwrap();
        assert!(pts.iter().all(|p| p.pos_count == 0 && p.neg_count == 0 && p.toggles == 0));
    }

    #[test]
    fn raising_cutoff_never_lowers_high_frequency_counts() {
        let freqs = [30_000.0, 50_000.0, 80_000.0];
        let slow = frequency_response(&freq_params(20_000.0), &freqs, 5_000.0, 1).unwrap();
        let fast = frequency_response(&freq_params(100_000.0), &freqs, 5_000.0, 1).unwrap();
        for (s, f) in slow.iter().zip(&fast) {
            assert!(f.pos_count + f.neg_count >= s.pos_count + s.neg_count);
        }
    }

    #[test]
    fn negative_frequency_rejected() {
        assert!(frequency_response(&freq_params(1e4), &[-1.0], 10.0, 1).is_err());
    }
}
