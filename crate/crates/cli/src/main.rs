//! `evocc`: simulate, sweep and decode event-based optical camera links.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use evocc::config::load_link_config;
use evocc::demod::{demodulate, DemodStats, Roi};
use evocc::evs::{frequency_response, FrequencyPoint};
use evocc::harness::{
    capture, net_rate, passes_hd_fec, run_trials, sweep, write_sweep_csv, BerResult, DpllMode,
    LinkConfig, SweepAxis, SweepRow,
};
use evocc::line_coding::{align_and_extract, deframe, SYNC_BITS};
use evocc::signal::{read_events_csv, write_events_csv};
use evocc::Error;

#[derive(Parser)]
#[command(name = "evocc", version, about = "Event-based optical camera communication simulator and demodulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

impl OnOff {
    fn enabled(self) -> bool {
        matches!(self, OnOff::On)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Dpll {
    On,
    Off,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum Axis {
    SymbolRate,
    Distance,
    Jitter,
}

#[derive(Subcommand)]
enum Command {
    /// Run BER trials for a link configuration and write a JSON report.
    Simulate {
        config: PathBuf,
        /// Master seed, overriding the configuration.
        #[arg(long)]
        seed: Option<u64>,
        /// Number of trials, overriding the configuration.
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, value_enum)]
        dpll: Option<OnOff>,
        #[arg(long)]
        out: PathBuf,
        /// Write the event stream of trial 0 as CSV.
        #[arg(long)]
        dump_events: Option<PathBuf>,
        /// Write the payload of trial 0 as raw bytes.
        #[arg(long)]
        dump_payload: Option<PathBuf>,
    },
    /// Sweep one link parameter and write a CSV table.
    Sweep {
        config: PathBuf,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated axis values (Hz, metres or microseconds).
        #[arg(long)]
        values: String,
        #[arg(long, value_enum, default_value = "both")]
        dpll: Dpll,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Also write every row, with per-trial detail, as JSON.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Count single-pixel events for a square-wave drive at each frequency.
    FreqResponse {
        /// Configuration providing the px.* settings.
        config: PathBuf,
        /// Comma-separated frequencies in Hz; default 21 log-spaced points from 1 kHz to 100 kHz.
        #[arg(long)]
        freqs: Option<String>,
        #[arg(long, default_value_t = 20_000.0)]
        duration_us: f64,
        /// Overrides master_seed for the sensor noise.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Demodulate a recorded event CSV and write the payload bytes.
    Decode {
        events: PathBuf,
        /// Configuration providing the dm.* and roi.* settings.
        config: PathBuf,
        /// Line bits to demodulate.
        #[arg(long)]
        n_bits: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        stats: Option<PathBuf>,
        /// Expected payload length; without it decoding stops at the end delimiter.
        #[arg(long)]
        payload_bytes: Option<usize>,
        #[arg(long, value_enum)]
        dpll: Option<OnOff>,
    },
    /// Run a short end-to-end check of the library.
    Selftest,
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::Parse { .. } | Error::Unsorted { .. } => 2,
            _ => 1,
        };
        Failure {
            code,
            msg: e.to_string(),
        }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        msg: msg.into(),
    }
}

fn runtime(msg: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        msg: msg.into(),
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| runtime(format!("cannot create {}: {e}", path.display())))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult {
    std::fs::write(path, bytes).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| runtime(e.to_string()))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

fn parse_list(s: &str, what: &str) -> CliResult<Vec<f64>> {
    let values: Vec<f64> = s
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| v.parse().map_err(|_| usage(format!("bad {what} value {v:?}"))))
        .collect::<CliResult<_>>()?;
    if values.is_empty() {
        return Err(usage(format!("empty {what} list")));
    }
    Ok(values)
}

fn load(path: &Path, seed: Option<u64>, trials: Option<usize>) -> CliResult<LinkConfig> {
    let mut cfg = load_link_config(path)?;
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    if let Some(n) = trials {
        cfg.n_trials = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct SimulateReport<'a> {
    master_seed: u64,
    symbol_rate_hz: f64,
    net_rate_bps: f64,
    hd_fec_pass: bool,
    result: &'a BerResult,
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    config: &Path,
    seed: Option<u64>,
    trials: Option<usize>,
    dpll: Option<OnOff>,
    out: &Path,
    dump_events: Option<&Path>,
    dump_payload: Option<&Path>,
) -> CliResult {
    let mut cfg = load(config, seed, trials)?;
    if let Some(d) = dpll {
        cfg.dm.use_dpll = d.enabled();
    }
    let result = run_trials(&cfg)?;
    write_json(
        out,
        &SimulateReport {
            master_seed: cfg.master_seed,
            symbol_rate_hz: cfg.tx.symbol_rate_hz,
            net_rate_bps: net_rate(cfg.tx.symbol_rate_hz),
            hd_fec_pass: passes_hd_fec(result.ber),
            result: &result,
        },
    )?;
    if dump_events.is_some() || dump_payload.is_some() {
        let cap = capture(&cfg, 0)?;
        if let Some(path) = dump_events {
            let mut w = create(path)?;
            write_events_csv(&mut w, &cap.events)?;
            w.flush().map_err(|e| runtime(e.to_string()))?;
        }
        if let Some(path) = dump_payload {
            write_bytes(path, &cap.payload)?;
        }
    }
    println!(
        "BER {:.3e} ({} / {} bits, {} trials, DPLL {})",
        result.ber,
        result.bit_errors,
        result.bits_compared,
        result.trials.len(),
        if result.dpll_enabled { "on" } else { "off" }
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    config: &Path,
    axis: Axis,
    values: &str,
    dpll: Dpll,
    seed: Option<u64>,
    trials: Option<usize>,
    out: &Path,
    summary: Option<&Path>,
) -> CliResult {
    let values = parse_list(values, "sweep")?;
    let cfg = load(config, seed, trials)?;
    let axis = match axis {
        Axis::SymbolRate => SweepAxis::SymbolRate,
        Axis::Distance => SweepAxis::Distance,
        Axis::Jitter => SweepAxis::Jitter,
    };
    let mode = match dpll {
        Dpll::On => DpllMode::On,
        Dpll::Off => DpllMode::Off,
        Dpll::Both => DpllMode::Both,
    };
    let rows = sweep(&cfg, axis, &values, mode)?;
    let mut w = create(out)?;
    write_sweep_csv(&mut w, &rows)?;
    w.flush().map_err(|e| runtime(e.to_string()))?;
    if let Some(path) = summary {
        #[derive(Serialize)]
        struct Summary<'a> {
            axis: SweepAxis,
            master_seed: u64,
            rows: &'a [SweepRow],
        }
        write_json(
            path,
            &Summary {
                axis,
                master_seed: cfg.master_seed,
                rows: &rows,
            },
        )?;
    }
    println!("{} rows written to {}", rows.len(), out.display());
    Ok(())
}

/// 21 log-spaced points from 1 kHz to 100 kHz.
fn default_freqs() -> Vec<f64> {
    (0..21).map(|i| 1e3 * 100f64.powf(f64::from(i) / 20.0)).collect()
}

fn write_freq_csv<W: Write>(mut w: W, points: &[FrequencyPoint]) -> std::io::Result<()> {
    writeln!(w, "freq_hz,pos_count,neg_count,toggles,events_per_toggle")?;
    for p in points {
        writeln!(
            w,
            "{},{},{},{},{}",
            p.freq_hz,
            p.pos_count,
            p.neg_count,
            p.toggles,
            p.events_per_toggle()
        )?;
    }
    w.flush()
}

fn cmd_freq_response(
    config: &Path,
    freqs: Option<&str>,
    duration_us: f64,
    seed: Option<u64>,
    out: &Path,
) -> CliResult {
    let freqs = match freqs {
        Some(s) => parse_list(s, "frequency")?,
        None => default_freqs(),
    };
    if duration_us.is_nan() || duration_us <= 0.0 {
        return Err(usage("--duration-us must be positive"));
    }
    let cfg = load_link_config(config)?;
    let seed = seed.unwrap_or(cfg.master_seed);
    let points = frequency_response(&cfg.px, &freqs, duration_us, seed)?;
    write_freq_csv(create(out)?, &points).map_err(|e| runtime(e.to_string()))?;
    println!("{} frequencies written to {}", points.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct DecodeStats {
    demod: DemodStats,
    aligned: bool,
    sync_offset: Option<usize>,
    payload_bytes: usize,
    flagged_groups: usize,
    delimiter_ok: bool,
}

#[allow(clippy::too_many_arguments)]
fn cmd_decode(
    events_path: &Path,
    config: &Path,
    n_bits: usize,
    out: &Path,
    stats_path: Option<&Path>,
    payload_bytes: Option<usize>,
    dpll: Option<OnOff>,
) -> CliResult {
    let mut cfg = load_link_config(config)?;
    if let Some(d) = dpll {
        cfg.dm.use_dpll = d.enabled();
    }
    if n_bits == 0 {
        return Err(usage("--n-bits must be positive"));
    }
    let file = File::open(events_path)
        .map_err(|e| usage(format!("cannot open {}: {e}", events_path.display())))?;
    let events = read_events_csv(BufReader::new(file))?;
    cfg.sensor.geometry.check(&events).map_err(|e| usage(e.to_string()))?;
    let roi = cfg
        .roi
        .unwrap_or_else(|| Roi::full(cfg.sensor.geometry.width, cfg.sensor.geometry.height));
    let out_bits = demodulate(&events, &cfg.dm, &roi, n_bits)?;

    let (payload, stats) = match align_and_extract(&out_bits.bits.bits) {
        Ok(a) => {
            let d = deframe(&a.payload_bits, payload_bytes);
            let stats = DecodeStats {
                demod: out_bits.stats,
                aligned: true,
                sync_offset: Some(a.offset),
                payload_bytes: d.payload.len(),
                flagged_groups: d.flagged(),
                delimiter_ok: d.delimiter_ok,
            };
            (d.payload, stats)
        }
        Err(_) => {
            let len = payload_bytes.unwrap_or(n_bits.saturating_sub(SYNC_BITS + 10) / 10);
            let stats = DecodeStats {
                demod: out_bits.stats,
                aligned: false,
                sync_offset: None,
                payload_bytes: len,
                flagged_groups: len,
                delimiter_ok: false,
            };
            (vec![0; len], stats)
        }
    };
    write_bytes(out, &payload)?;
    if let Some(path) = stats_path {
        write_json(path, &stats)?;
    }
    if !stats.aligned {
        let why = if stats.demod.no_peaks { "no peaks found" } else { "frame sync not found" };
        return Err(runtime(format!("{why}; wrote {} zero bytes", payload.len())));
    }
    println!(
        "decoded {} bytes ({} flagged groups)",
        payload.len(),
        stats.flagged_groups
    );
    Ok(())
}

fn cmd_selftest() -> CliResult {
    let cfg = LinkConfig {
        payload_bits: 800,
        n_trials: 2,
        ..LinkConfig::default()
    };
    let r = run_trials(&cfg)?;
    if r.bit_errors != 0 {
        return Err(runtime(format!("clean link produced {} bit errors", r.bit_errors)));
    }
    let points = frequency_response(&cfg.px, &[1e3], 5_000.0, cfg.master_seed)?;
    if points[0].events_per_toggle() == 0.0 {
        return Err(runtime("pixel produced no events"));
    }
    println!("selftest ok");
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Simulate {
            config,
            seed,
            trials,
            dpll,
            out,
            dump_events,
            dump_payload,
        } => cmd_simulate(
            &config,
            seed,
            trials,
            dpll,
            &out,
            dump_events.as_deref(),
            dump_payload.as_deref(),
        ),
        Command::Sweep {
            config,
            axis,
            values,
            dpll,
            seed,
            trials,
            out,
            summary,
        } => cmd_sweep(&config, axis, &values, dpll, seed, trials, &out, summary.as_deref()),
        Command::FreqResponse {
            config,
            freqs,
            duration_us,
            seed,
            out,
        } => cmd_freq_response(&config, freqs.as_deref(), duration_us, seed, &out),
        Command::Decode {
            events,
            config,
            n_bits,
            out,
            stats,
            payload_bytes,
            dpll,
        } => cmd_decode(&events, &config, n_bits, &out, stats.as_deref(), payload_bytes, dpll),
        Command::Selftest => cmd_selftest(),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("evocc: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
