//! Shared domain types: events, bit streams, LED waveforms, histograms.
//!
//! Event timestamps are integer microseconds, as delivered by event sensors.
//! Waveform transition times are real-valued microseconds and are only
//! quantized when the sensor samples them.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Direction of a brightness change.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    Pos,
    Neg,
}

impl Polarity {
    /// Wire encoding: POS = 1, NEG = -1.
    pub fn as_i8(self) -> i8 {
        match self {
            Polarity::Pos => 1,
            Polarity::Neg => -1,
        }
    }

    pub fn from_i8(v: i8) -> Option<Self> {
        match v {
            1 => Some(Polarity::Pos),
            -1 => Some(Polarity::Neg),
            _ => None,
        }
    }
}

/// One brightness-change detection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Event {
    pub t: u64,
    pub x: u16,
    pub y: u16,
    pub polarity: Polarity,
}

impl Event {
    pub fn new(t: u64, x: u16, y: u16, polarity: Polarity) -> Self {
        Self { t, x, y, polarity }
    }
}

/// Pixel array dimensions of a stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorGeometry {
    pub width: u16,
    pub height: u16,
}

impl Default for SensorGeometry {
    /// 1280 x 720, the resolution of common 0.92 MP event sensors.
    fn default() -> Self {
        Self {
            width: 1280,
            height: 720,
        }
    }
}

impl SensorGeometry {
    /// Checks that every event lies inside the array.
    pub fn check(&self, events: &[Event]) -> Result<()> {
        match events
            .iter()
            .position(|e| e.x >= self.width || e.y >= self.height)
        {
            Some(i) => Err(Error::Structural(format!(
                "event {i} at ({}, {}) outside {}x{} sensor",
                events[i].x, events[i].y, self.width, self.height
            ))),
            None => Ok(()),
        }
    }
}

/// Returns the index of the first event whose timestamp decreases.
pub fn first_unsorted(events: &[Event]) -> Option<usize> {
    events.windows(2).position(|w| w[1].t < w[0].t).map(|i| i + 1)
}

/// What a bit sequence represents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BitOrigin {
    Payload,
    LineCoded,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitStream {
    pub bits: Vec<bool>,
    pub origin: BitOrigin,
}

impl BitStream {
    pub fn new(bits: Vec<bool>, origin: BitOrigin) -> Self {
        Self { bits, origin }
    }

    pub fn line_coded(bits: Vec<bool>) -> Self {
        Self::new(bits, BitOrigin::LineCoded)
    }

    /// Expands bytes MSB first.
    pub fn from_bytes(bytes: &[u8]) -> Self {
        let bits = bytes
            .iter()
            .flat_map(|b| (0..8).rev().map(move |i| (b >> i) & 1 == 1))
            .collect();
        Self::new(bits, BitOrigin::Payload)
    }

    /// Parses a string of `0`/`1` characters, ignoring whitespace.
    pub fn parse(s: &str, origin: BitOrigin) -> Result<Self> {
        let bits = s
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::Structural(format!("invalid bit character {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(bits, origin))
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }
}

impl std::fmt::Display for BitStream {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for &b in &self.bits {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// LED state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Level {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub t_us: f64,
    pub level: Level,
}

/// Piecewise-constant LED output.
///
/// Before the first transition and after `end_us` the LED is dark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpticalWaveform {
    pub transitions: Vec<Transition>,
    pub end_us: f64,
    pub on_intensity: f64,
    pub off_intensity: f64,
}

impl OpticalWaveform {
    pub fn intensity(&self, level: Level) -> f64 {
        match level {
            Level::On => self.on_intensity,
            Level::Off => self.off_intensity,
        }
    }

    /// Transition times where the emitted level actually changes, starting
    /// from the dark idle state.
    pub fn edges(&self) -> Vec<(f64, Level)> {
        let mut prev = Level::Off;
        let mut out = Vec::new();
        for tr in &self.transitions {
            if tr.level != prev {
                out.push((tr.t_us, tr.level));
                prev = tr.level;
            }
        }
        if prev == Level::On {
            out.push((self.end_us, Level::Off));
        }
        out
    }

    /// Level at time `t_us` (dark outside the waveform span).
    pub fn level_at(&self, t_us: f64) -> Level {
        if t_us >= self.end_us {
            return Level::Off;
        }
        let idx = self.transitions.partition_point(|tr| tr.t_us <= t_us);
        if idx == 0 {
            Level::Off
        } else {
            self.transitions[idx - 1].level
        }
    }

    /// Checks strict time ordering and level alternation.
    pub fn validate(&self) -> Result<()> {
        for w in self.transitions.windows(2) {
            if w[1].t_us <= w[0].t_us {
                return Err(Error::Structural(format!(
                    "transition at {} us does not follow {} us",
                    w[1].t_us, w[0].t_us
                )));
            }
            if w[1].level == w[0].level {
                return Err(Error::Structural(format!(
                    "repeated level at {} us",
                    w[1].t_us
                )));
            }
        }
        Ok(())
    }
}

/// Per-polarity binned event counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventHistogram {
    pub bin_width_us: f64,
    pub t0_us: f64,
    pub pos_counts: Vec<u32>,
    pub neg_counts: Vec<u32>,
}

impl EventHistogram {
    pub fn len(&self) -> usize {
        self.pos_counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pos_counts.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.pos_counts
            .iter()
            .chain(&self.neg_counts)
            .map(|&c| u64::from(c))
            .sum()
    }

    /// Center time of bin `i`.
    pub fn bin_center(&self, i: usize) -> f64 {
        self.t0_us + (i as f64 + 0.5) * self.bin_width_us
    }
}

/// k-way merge of time-sorted event streams.
///
/// Events with equal timestamps keep the order they would have after
/// concatenating the inputs and stable-sorting by time.
pub fn merge_streams<S: AsRef<[Event]>>(streams: &[S]) -> Result<Vec<Event>> {
    for (s, stream) in streams.iter().enumerate() {
        let stream = stream.as_ref();
        if let Some(i) = first_unsorted(stream) {
            return Err(Error::Unsorted {
                stream: s,
                index: i,
                t: stream[i].t,
                prev: stream[i - 1].t,
            });
        }
    }
    let total = streams.iter().map(|s| s.as_ref().len()).sum();
    let mut out = Vec::with_capacity(total);
    let mut heap = BinaryHeap::with_capacity(streams.len());
    for (s, stream) in streams.iter().enumerate() {
        if let Some(e) = stream.as_ref().first() {
            heap.push(Reverse((e.t, s, 0usize)));
        }
    }
    while let Some(Reverse((_, s, i))) = heap.pop() {
        let stream = streams[s].as_ref();
        out.push(stream[i]);
        if let Some(e) = stream.get(i + 1) {
            heap.push(Reverse((e.t, s, i + 1)));
        }
    }
    Ok(out)
}

pub const CSV_HEADER: &str = "t_us,x,y,p";

/// Writes events as `t_us,x,y,p` lines with a header.
pub fn write_events_csv<W: Write>(mut w: W, events: &[Event]) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for e in events {
        writeln!(w, "{},{},{},{}", e.t, e.x, e.y, e.polarity.as_i8())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the event CSV format. Errors carry 1-based line numbers.
pub fn read_events_csv<R: BufRead>(r: R) -> Result<Vec<Event>> {
    let mut lines = r.lines();
    match lines.next() {
        Some(header) => {
            let header = header?;
            if header.trim() != CSV_HEADER {
                return Err(Error::Parse {
                    line: 1,
                    msg: format!("expected header {CSV_HEADER:?}, found {:?}", header.trim()),
                });
            }
        }
        None => {
            return Err(Error::Parse {
                line: 1,
                msg: "missing header".into(),
            })
        }
    }
    let mut events = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        events.push(parse_event(line).map_err(|msg| Error::Parse { line: line_no, msg })?);
    }
    Ok(events)
}

fn parse_event(line: &str) -> std::result::Result<Event, String> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != 4 {
        return Err(format!("expected 4 fields, found {}", fields.len()));
    }
    let t = fields[0]
        .parse::<u64>()
        .map_err(|e| format!("bad t_us {:?}: {e}", fields[0]))?;
    let x = fields[1]
        .parse::<u16>()
        .map_err(|e| format!("bad x {:?}: {e}", fields[1]))?;
    let y = fields[2]
        .parse::<u16>()
        .map_err(|e| format!("bad y {:?}: {e}", fields[2]))?;
    let polarity = fields[3]
        .parse::<i8>()
        .ok()
        .and_then(Polarity::from_i8)
        .ok_or_else(|| format!("polarity must be 1 or -1, found {:?}", fields[3]))?;
    Ok(Event { t, x, y, polarity })
}
