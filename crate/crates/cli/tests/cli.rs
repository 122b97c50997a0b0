use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

const SUBCOMMANDS: [&str; 13] = [
    "cov",
    "sample",
    "check-assumptions",
    "max-stats",
    "tail",
    "pairs",
    "loc",
    "dmart",
    "xi",
    "barrier",
    "gstar",
    "limit-compare",
    "clrem-w",
];

fn lcgf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lcgf"))
        .args(args)
        .env_remove("LCGF_SEED")
        .env_remove("LCGF_WORKERS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("cli");
    fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn body(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).collect()
}

#[test]
fn clrem_covariance_query() {
    let out = stdout(&lcgf(&["cov", "--family", "clrem", "-N", "8", "-W", "0", "--k", "0", "--l", "4"]));
    let v: f64 = body(&out)[1].parse().unwrap();
    assert!((v + 2f64.ln()).abs() < 1e-12);
}

#[test]
fn lattice_variance_sums_all_levels() {
    let out = stdout(&lcgf(&["cov", "-d", "1", "-n", "3", "--x", "2", "--y", "2"]));
    let v: f64 = body(&out)[1].parse().unwrap();
    assert!((v - 4.0 * 2f64.ln()).abs() < 1e-12);
}

#[test]
fn max_stats_is_deterministic_for_any_worker_count() {
    let args = ["max-stats", "--family", "mbrw", "-d", "2", "-n", "5", "--replicas", "40", "--seed", "7"];
    let a = stdout(&lcgf(&args));
    let mut more = args.to_vec();
    more.extend(["--workers", "1"]);
    let b = stdout(&lcgf(&more));
    assert_eq!(body(&a), body(&b));
    assert_eq!(body(&a)[0], "replica,max,centered");
    assert_eq!(body(&a).len(), 41);
    let c = stdout(&lcgf(&args));
    assert_eq!(a, c);
}

#[test]
fn output_reproduces_from_its_header() {
    let path = scratch("replay.csv");
    let p = path.to_str().unwrap();
    stdout(&lcgf(&["dmart", "-n", "4", "--replicas", "10", "--seed", "11", "-o", p]));
    let first = fs::read_to_string(&path).unwrap();
    let again = stdout(&lcgf(&["dmart", "--config", p]));
    assert_eq!(first, again);
}

#[test]
fn command_line_overrides_config_file() {
    let cfg = scratch("override.cfg");
    fs::write(&cfg, "# replicas and seed\nreplicas = 3\nseed = 5\nn = 4\n").unwrap();
    let c = cfg.to_str().unwrap();
    let from_file = stdout(&lcgf(&["max-stats", "--config", c]));
    assert!(from_file.contains("#! replicas = 3\n"));
    assert_eq!(body(&from_file).len(), 4);
    let overridden = stdout(&lcgf(&["max-stats", "--config", c, "--replicas", "6"]));
    assert!(overridden.contains("#! replicas = 6\n"));
    assert!(overridden.contains("#! seed = 5\n"));
    assert_eq!(body(&overridden)[1..4], body(&from_file)[1..4]);
    assert_eq!(body(&overridden).len(), 7);
}

#[test]
fn unknown_config_key_is_an_input_error() {
    let cfg = scratch("bad.cfg");
    fs::write(&cfg, "replicas = 3\nnot-a-flag = 1\n").unwrap();
    let o = lcgf(&["max-stats", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("not-a-flag"));
}

#[test]
fn seed_comes_from_environment() {
    let run = |seed: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_lcgf"));
        c.args(["max-stats", "-n", "3", "--replicas", "5"]).env_remove("LCGF_SEED");
        if let Some(s) = seed {
            c.env("LCGF_SEED", s);
        }
        stdout(&c.output().unwrap())
    };
    let env = run(Some("9"));
    assert!(env.contains("#! seed = 9\n"));
    let flag = stdout(&lcgf(&["max-stats", "-n", "3", "--replicas", "5", "--seed", "9"]));
    assert_eq!(env, flag);
    assert_ne!(body(&run(None)), body(&env));
}

#[test]
fn impossible_gstar_parameters_exit_with_numerical_code() {
    let o = lcgf(&["gstar", "--beta-star", "100", "--gamma", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("domain error"));
}

#[test]
fn unknown_subcommand_prints_usage() {
    let o = lcgf(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn empty_tail_window_is_insufficient_data() {
    let o = lcgf(&["tail", "-n", "3", "--replicas", "5", "--z-lo", "50", "--z-hi", "60"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn non_positive_definite_clrem_exits_with_numerical_code() {
    let o = lcgf(&["sample", "--family", "clrem", "-N", "64", "-W", "-2"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn binary_output_gets_config_sidecar() {
    let path = scratch("field.bin");
    let p = path.to_str().unwrap();
    stdout(&lcgf(&["sample", "-d", "1", "-n", "4", "--format", "bin", "-o", p, "--seed", "3"]));
    let bytes = fs::read(&path).unwrap();
    assert_eq!(&bytes[..8], b"LCGFFLD1");
    assert_eq!(bytes.len(), 24 + 16 * 8);
    let sidecar = fs::read_to_string(format!("{p}.config")).unwrap();
    assert!(sidecar.contains("#! command = sample\n"));
    assert!(sidecar.contains("#! seed = 3\n"));
    let csv = stdout(&lcgf(&["sample", "--config", &format!("{p}.config"), "--format", "csv"]));
    let first: f64 = body(&csv)[1].split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(first.to_le_bytes(), bytes[24..32]);
}

#[test]
fn gstar_draws_feed_limit_compare() {
    let path = scratch("gstar.csv");
    let p = path.to_str().unwrap();
    stdout(&lcgf(&["gstar", "--draws", "400", "--gamma", "3", "-o", p]));
    let out = stdout(&lcgf(&[
        "limit-compare", "--samples", p, "--column", "value", "--z-samples", p, "--z-column",
        "dm_proxy", "--beta-star", "1",
    ]));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["comparison"]["n_samples"], 400);
    assert_eq!(v["config"]["beta-star"], "1");
    assert!(v["tool"].as_str().unwrap().starts_with("lcgf "));
}

#[test]
fn barrier_counts_are_contained() {
    let out = stdout(&lcgf(&[
        "barrier", "-n", "6", "--kp", "1", "--lp", "1", "--replicas", "5", "--z", "1,1.5",
    ]));
    let rows = body(&out);
    assert_eq!(rows[0], "replica,z,lambda,gamma,g_event");
    assert_eq!(rows.len(), 11);
    for r in &rows[1..] {
        let f: Vec<u64> = r.split(',').skip(2).take(2).map(|x| x.parse().unwrap()).collect();
        assert!(f[0] <= f[1]);
    }
}

#[test]
fn clrem_w_reports_threshold() {
    let out = stdout(&lcgf(&["clrem-w", "-N", "16"]));
    assert_eq!(body(&out)[0], "w");
    assert!(body(&out)[1].parse::<f64>().unwrap().is_finite());
}

#[test]
fn help_matches_snapshot() {
    let mut text = stdout(&lcgf(&["--help"]));
    for sub in SUBCOMMANDS {
        text.push_str(&format!("\n===== {sub} =====\n"));
        text.push_str(&stdout(&lcgf(&[sub, "--help"])));
    }
    let snap = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/snapshots/help.txt");
    if std::env::var_os("LCGF_UPDATE_SNAPSHOTS").is_some() {
        fs::write(&snap, &text).unwrap();
    }
    let expected = fs::read_to_string(&snap).expect("snapshot exists");
    assert_eq!(text, expected, "help changed; rerun with LCGF_UPDATE_SNAPSHOTS=1");
}
