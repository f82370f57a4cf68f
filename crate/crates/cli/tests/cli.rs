use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use evocc::config::load_link_config;
use evocc::harness::{sweep, DpllMode, SweepAxis};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_evocc"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn evocc")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_config(dir: &TempDir) -> PathBuf {
    let text = std::fs::read_to_string(configs().join("clean.conf")).unwrap();
    let text = text.replace("payload_bits = 10000", "payload_bits = 800");
    let path = dir.path().join("small.conf");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn simulate_writes_a_result_and_is_seed_deterministic() {
    let dir = TempDir::new().unwrap();
    let conf = small_config(&dir);
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for out in [&a, &b] {
        let o = run(&["simulate", s(&conf), "--seed", "9", "--out", s(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let ja = std::fs::read(&a).unwrap();
    assert_eq!(ja, std::fs::read(&b).unwrap());
    let v: serde_json::Value = serde_json::from_slice(&ja).unwrap();
    assert_eq!(v["master_seed"], 9);
    assert_eq!(v["result"]["bit_errors"], 0);
    assert_eq!(v["hd_fec_pass"], true);
}

#[test]
fn different_seeds_give_different_captures() {
    let dir = TempDir::new().unwrap();
    let conf = small_config(&dir);
    let mut dumps = Vec::new();
    for seed in ["1", "2"] {
        let ev = dir.path().join(format!("ev{seed}.csv"));
        let out = dir.path().join("r.json");
        let o = run(&["simulate", s(&conf), "--seed", seed, "--out", s(&out), "--dump-events", s(&ev)]);
        assert!(o.status.success());
        dumps.push(std::fs::read(ev).unwrap());
    }
    assert_ne!(dumps[0], dumps[1]);
}

#[test]
fn decode_recovers_a_simulated_payload() {
    let dir = TempDir::new().unwrap();
    let conf = small_config(&dir);
    let ev = dir.path().join("ev.csv");
    let pay = dir.path().join("payload.bin");
    let o = run(&[
        "simulate", s(&conf), "--trials", "1", "--out", s(&dir.path().join("r.json")),
        "--dump-events", s(&ev), "--dump-payload", s(&pay),
    ]);
    assert!(o.status.success());
    let cfg = load_link_config(&conf).unwrap();
    let n_bits = cfg.demod_bits().to_string();
    let rx = dir.path().join("rx.bin");
    let stats = dir.path().join("stats.json");
    let o = run(&[
        "decode", s(&ev), s(&conf), "--n-bits", &n_bits, "--out", s(&rx), "--stats", s(&stats),
        "--payload-bytes", &cfg.payload_bytes().to_string(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read(&rx).unwrap(), std::fs::read(&pay).unwrap());
    let st: serde_json::Value = serde_json::from_slice(&std::fs::read(stats).unwrap()).unwrap();
    assert_eq!(st["aligned"], true);
    assert_eq!(st["flagged_groups"], 0);
}

#[test]
fn decode_of_an_empty_stream_reports_no_peaks() {
    let dir = TempDir::new().unwrap();
    let conf = small_config(&dir);
    let ev = dir.path().join("empty.csv");
    std::fs::write(&ev, "t_us,x,y,p\n").unwrap();
    let rx = dir.path().join("rx.bin");
    let stats = dir.path().join("stats.json");
    let o = run(&["decode", s(&ev), s(&conf), "--n-bits", "250", "--out", s(&rx), "--stats", s(&stats)]);
    assert_eq!(o.status.code(), Some(1));
    let bytes = std::fs::read(&rx).unwrap();
    assert_eq!(bytes.len(), 20);
    assert!(bytes.iter().all(|&b| b == 0));
    let st: serde_json::Value = serde_json::from_slice(&std::fs::read(stats).unwrap()).unwrap();
    assert_eq!(st["demod"]["no_peaks"], true);
    assert_eq!(st["aligned"], false);
}

#[test]
fn malformed_events_exit_with_the_offending_line() {
    let dir = TempDir::new().unwrap();
    let conf = small_config(&dir);
    let ev = dir.path().join("bad.csv");
    std::fs::write(&ev, "t_us,x,y,p\n10,640,360,1\n20,640,360,7\n").unwrap();
    let o = run(&["decode", s(&ev), s(&conf), "--n-bits", "100", "--out", s(&dir.path().join("rx.bin"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
}

#[test]
fn unsorted_events_are_rejected() {
    let dir = TempDir::new().unwrap();
    let conf = small_config(&dir);
    let ev = dir.path().join("unsorted.csv");
    std::fs::write(&ev, "t_us,x,y,p\n20,640,360,1\n10,640,360,-1\n").unwrap();
    let o = run(&["decode", s(&ev), s(&conf), "--n-bits", "100", "--out", s(&dir.path().join("rx.bin"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_configs_exit_two() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("r.json");
    let missing = dir.path().join("nope.conf");
    let o = run(&["simulate", s(&missing), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.conf"));

    let garbage = dir.path().join("garbage.conf");
    std::fs::write(&garbage, "tx.symbol_rate_hz = fast\n").unwrap();
    assert_eq!(run(&["simulate", s(&garbage), "--out", s(&out)]).status.code(), Some(2));

    let negative = dir.path().join("neg.conf");
    std::fs::write(&negative, "tx.symbol_rate_hz = -5\n").unwrap();
    assert_eq!(run(&["simulate", s(&negative), "--out", s(&out)]).status.code(), Some(2));

    assert_eq!(run(&["simulate"]).status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn sweep_rows_match_the_library() {
    let dir = TempDir::new().unwrap();
    let conf = small_config(&dir);
    let out = dir.path().join("sweep.csv");
    let o = run(&[
        "sweep", s(&conf), "--axis", "symbol_rate", "--values", "20000,50000,100000",
        "--trials", "2", "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("axis_value,dpll,ber,bit_errors,bits,flags"));
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(str::to_owned).collect()).collect();
    assert_eq!(rows.len(), 6);

    let mut cfg = load_link_config(&conf).unwrap();
    cfg.n_trials = 2;
    let lib = sweep(&cfg, SweepAxis::SymbolRate, &[20_000.0, 50_000.0, 100_000.0], DpllMode::Both).unwrap();
    let csv_errors: u64 = rows.iter().map(|r| r[3].parse::<u64>().unwrap()).sum();
    let csv_bits: u64 = rows.iter().map(|r| r[4].parse::<u64>().unwrap()).sum();
    let lib_errors: u64 = lib.iter().map(|r| r.result.bit_errors).sum();
    let lib_bits: u64 = lib.iter().map(|r| r.result.bits_compared).sum();
    assert_eq!((csv_errors, csv_bits), (lib_errors, lib_bits));
}

#[test]
fn sweep_rejects_an_empty_value_list() {
    let dir = TempDir::new().unwrap();
    let conf = small_config(&dir);
    let o = run(&["sweep", s(&conf), "--axis", "jitter", "--values", "", "--out", s(&dir.path().join("x.csv"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn freq_response_writes_one_row_per_frequency() {
    let dir = TempDir::new().unwrap();
    let conf = configs().join("pixel.conf");
    let out = dir.path().join("fr.csv");
    let o = run(&["freq-response", s(&conf), "--duration-us", "5000", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 22);
    let o = run(&["freq-response", s(&conf), "--freqs", "1000,2000", "--duration-us", "5000", "--out", s(&out)]);
    assert!(o.status.success());
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 3);
}

#[test]
fn shipped_configs_parse() {
    for name in ["clean.conf", "ablation.conf", "distance.conf", "pixel.conf"] {
        load_link_config(&configs().join(name)).unwrap();
    }
}

#[test]
fn selftest_passes() {
    let o = run(&["selftest"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn freq_response_is_seed_deterministic() {
    let dir = TempDir::new().unwrap();
    let conf = configs().join("pixel.conf");
    let mut outs = Vec::new();
    for name in ["a.csv", "b.csv"] {
        let out = dir.path().join(name);
        let o = run(&["freq-response", s(&conf), "--seed", "5", "--duration-us", "5000", "--out", s(&out)]);
        assert!(o.status.success());
        outs.push(std::fs::read(out).unwrap());
    }
    assert_eq!(outs[0], outs[1]);
}
