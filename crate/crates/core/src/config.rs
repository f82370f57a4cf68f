//! Flat `key=value` configuration files.
//!
//! One setting per line, dotted section prefixes, `#` starts a comment:
//!
//! ```txt
//! # 50 kbps link at the reference distance
//! tx.symbol_rate_hz = 50000
//! ch.ambient_irradiance = 0.2
//! dm.use_dpll = on
//! ```
//!
//! Every key is optional and falls back to [`LinkConfig::default`]. Unknown
//! or repeated keys are rejected. Receiver timing keys that are left out
//! (`dm.nominal_symbol_rate_hz`, `dm.bin_width_us`,
//! `dm.peak_min_separation_us`) follow the transmitter symbol rate.

use std::collections::BTreeMap;
use std::path::Path;

use crate::demod::{DemodConfig, Roi};
use crate::error::{Error, Result};
use crate::harness::LinkConfig;

struct Entry {
    line: usize,
    value: String,
    used: bool,
}

struct Entries(BTreeMap<String, Entry>);

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

impl Entries {
    fn parse(text: &str) -> Result<Self> {
        let mut map: BTreeMap<String, Entry> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body
                .split_once('=')
                .ok_or_else(|| parse_err(line, format!("expected key=value, got {body:?}")))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(parse_err(line, "empty key"));
            }
            let entry = Entry {
                line,
                value: value.trim().to_string(),
                used: false,
            };
            if let Some(prev) = map.insert(key.to_string(), entry) {
                return Err(parse_err(line, format!("{key} already set on line {}", prev.line)));
            }
        }
        Ok(Self(map))
    }

    fn take<T: std::str::FromStr>(&mut self, key: &str, dst: &mut T) -> Result<bool>
    where
        T::Err: std::fmt::Display,
    {
        let Some(e) = self.0.get_mut(key) else {
            return Ok(false);
        };
        e.used = true;
        *dst = e
            .value
            .parse()
            .map_err(|err| parse_err(e.line, format!("{key}: cannot parse {:?}: {err}", e.value)))?;
        Ok(true)
    }

    fn take_bool(&mut self, key: &str, dst: &mut bool) -> Result<()> {
        let Some(e) = self.0.get_mut(key) else {
            return Ok(());
        };
        e.used = true;
        *dst = match e.value.as_str() {
            "on" | "true" | "1" => true,
            "off" | "false" | "0" => false,
            v => return Err(parse_err(e.line, format!("{key}: expected on/off, got {v:?}"))),
        };
        Ok(())
    }

    fn finish(self) -> Result<()> {
        match self.0.into_iter().find(|(_, e)| !e.used) {
            Some((key, e)) => Err(parse_err(e.line, format!("unknown key {key}"))),
            None => Ok(()),
        }
    }
}

/// Parses configuration text and validates the result.
pub fn parse_link_config(text: &str) -> Result<LinkConfig> {
    let mut e = Entries::parse(text)?;
    let mut c = LinkConfig::default();

    e.take("payload_bits", &mut c.payload_bits)?;
    e.take("n_trials", &mut c.n_trials)?;
    e.take("master_seed", &mut c.master_seed)?;

    e.take("tx.symbol_rate_hz", &mut c.tx.symbol_rate_hz)?;
    e.take("tx.jitter_sigma_us", &mut c.tx.jitter_sigma_us)?;
    e.take("tx.timer_quantum_us", &mut c.tx.timer_quantum_us)?;
    e.take("tx.on_intensity", &mut c.tx.on_intensity)?;
    e.take("tx.off_intensity", &mut c.tx.off_intensity)?;

    e.take("ch.distance_m", &mut c.ch.distance_m)?;
    e.take("ch.reference_distance_m", &mut c.ch.reference_distance_m)?;
    e.take("ch.ambient_irradiance", &mut c.ch.ambient_irradiance)?;
    e.take("ch.n_lit_pixels", &mut c.ch.n_lit_pixels)?;

    e.take("px.theta_on", &mut c.px.theta_on)?;
    e.take("px.theta_off", &mut c.px.theta_off)?;
    e.take("px.lp_cutoff_hz", &mut c.px.lp_cutoff_hz)?;
    e.take("px.refractory_us", &mut c.px.refractory_us)?;
    e.take("px.noise_sigma", &mut c.px.noise_sigma)?;
    e.take("px.sample_dt_us", &mut c.px.sample_dt_us)?;

    e.take("spread.theta", &mut c.spread.theta)?;
    e.take("spread.lp_cutoff", &mut c.spread.lp_cutoff)?;
    e.take("spread.refractory", &mut c.spread.refractory)?;
    e.take("spread.noise", &mut c.spread.noise)?;

    e.take("sensor.width", &mut c.sensor.geometry.width)?;
    e.take("sensor.height", &mut c.sensor.geometry.height)?;
    e.take("sensor.origin_x", &mut c.sensor.origin_x)?;
    e.take("sensor.origin_y", &mut c.sensor.origin_y)?;
    e.take("sensor.columns", &mut c.sensor.columns)?;

    let mut nominal = c.tx.symbol_rate_hz;
    e.take("dm.nominal_symbol_rate_hz", &mut nominal)?;
    c.dm = DemodConfig::for_symbol_rate(nominal);
    e.take("dm.bin_width_us", &mut c.dm.bin_width_us)?;
    e.take("dm.smooth_kernel", &mut c.dm.smooth_kernel)?;
    e.take("dm.smooth_width_bins", &mut c.dm.smooth_width_bins)?;
    e.take("dm.peak_min_separation_us", &mut c.dm.peak_min_separation_us)?;
    e.take("dm.peak_threshold", &mut c.dm.peak_threshold)?;
    e.take_bool("dm.use_dpll", &mut c.dm.use_dpll)?;
    e.take("dm.kp", &mut c.dm.kp)?;
    e.take("dm.kf", &mut c.dm.kf)?;
    e.take("dm.gate_threshold", &mut c.dm.gate_threshold)?;
    e.take("dm.gate_halfwidth", &mut c.dm.gate_halfwidth)?;

    let mut roi = Roi { x_min: 0, x_max: 0, y_min: 0, y_max: 0 };
    let found = [
        e.take("roi.x_min", &mut roi.x_min)?,
        e.take("roi.x_max", &mut roi.x_max)?,
        e.take("roi.y_min", &mut roi.y_min)?,
        e.take("roi.y_max", &mut roi.y_max)?,
    ];
    if found.iter().all(|&f| f) {
        c.roi = Some(roi);
    } else if found.iter().any(|&f| f) {
        return Err(Error::Config(
            "roi needs all of roi.x_min, roi.x_max, roi.y_min, roi.y_max".into(),
        ));
    }

    e.take("impair.peak_loss", &mut c.impair.peak_loss)?;
    e.take("impair.fade_keep", &mut c.impair.fade_keep)?;

    e.finish()?;
    c.validate()?;
    Ok(c)
}

/// Reads and parses a configuration file.
pub fn load_link_config(path: &Path) -> Result<LinkConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|err| Error::Config(format!("cannot read {}: {err}", path.display())))?;
    parse_link_config(&text)
}

/// Writes every setting back out in the file format.
pub fn render_link_config(c: &LinkConfig) -> String {
    let mut lines = vec![
        format!("payload_bits = {}", c.payload_bits),
        format!("n_trials = {}", c.n_trials),
        format!("master_seed = {}", c.master_seed),
        format!("tx.symbol_rate_hz = {}", c.tx.symbol_rate_hz),
        format!("tx.jitter_sigma_us = {}", c.tx.jitter_sigma_us),
        format!("tx.timer_quantum_us = {}", c.tx.timer_quantum_us),
        format!("tx.on_intensity = {}", c.tx.on_intensity),
        format!("tx.off_intensity = {}", c.tx.off_intensity),
        format!("ch.distance_m = {}", c.ch.distance_m),
        format!("ch.reference_distance_m = {}", c.ch.reference_distance_m),
        format!("ch.ambient_irradiance = {}", c.ch.ambient_irradiance),
        format!("ch.n_lit_pixels = {}", c.ch.n_lit_pixels),
        format!("px.theta_on = {}", c.px.theta_on),
        format!("px.theta_off = {}", c.px.theta_off),
        format!("px.lp_cutoff_hz = {}", c.px.lp_cutoff_hz),
        format!("px.refractory_us = {}", c.px.refractory_us),
        format!("px.noise_sigma = {}", c.px.noise_sigma),
        format!("px.sample_dt_us = {}", c.px.sample_dt_us),
        format!("spread.theta = {}", c.spread.theta),
        format!("spread.lp_cutoff = {}", c.spread.lp_cutoff),
        format!("spread.refractory = {}", c.spread.refractory),
        format!("spread.noise = {}", c.spread.noise),
        format!("sensor.width = {}", c.sensor.geometry.width),
        format!("sensor.height = {}", c.sensor.geometry.height),
        format!("sensor.origin_x = {}", c.sensor.origin_x),
        format!("sensor.origin_y = {}", c.sensor.origin_y),
        format!("sensor.columns = {}", c.sensor.columns),
        format!("dm.nominal_symbol_rate_hz = {}", c.dm.nominal_symbol_rate_hz),
        format!("dm.bin_width_us = {}", c.dm.bin_width_us),
        format!("dm.smooth_kernel = {}", c.dm.smooth_kernel),
        format!("dm.smooth_width_bins = {}", c.dm.smooth_width_bins),
        format!("dm.peak_min_separation_us = {}", c.dm.peak_min_separation_us),
        format!("dm.peak_threshold = {}", c.dm.peak_threshold),
        format!("dm.use_dpll = {}", if c.dm.use_dpll { "on" } else { "off" }),
        format!("dm.kp = {}", c.dm.kp),
        format!("dm.kf = {}", c.dm.kf),
        format!("dm.gate_threshold = {}", c.dm.gate_threshold),
        format!("dm.gate_halfwidth = {}", c.dm.gate_halfwidth),
        format!("impair.peak_loss = {}", c.impair.peak_loss),
        format!("impair.fade_keep = {}", c.impair.fade_keep),
    ];
    if let Some(r) = &c.roi {
        lines.push(format!("roi.x_min = {}", r.x_min));
        lines.push(format!("roi.x_max = {}", r.x_max));
        lines.push(format!("roi.y_min = {}", r.y_min));
        lines.push(format!("roi.y_max = {}", r.y_max));
    }
    lines.join("\n") + "\n"
}
