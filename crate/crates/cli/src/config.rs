//! `key = value` configuration files and the resolved-configuration header.
//!
//! Blank lines, `#` comments and lines without `=` are ignored; a leading
//! `#!` is stripped first, so the header of an output file is itself a valid
//! configuration.

use std::fs;
use std::path::Path;

use clap::{ArgAction, ArgMatches, Command};

use lcgf::Error;

pub const HEADER_PREFIX: &str = "#!";

/// Keys recorded in headers but never replayed.
const NOT_REPLAYED: [&str; 4] = ["config", "output", "tool", "command"];

pub fn parse(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|line| {
            let line = line.trim();
            let line = line.strip_prefix(HEADER_PREFIX).unwrap_or(line).trim();
            if line.is_empty() || line.starts_with('#') {
                return None;
            }
            let (k, v) = line.split_once('=')?;
            Some((k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

/// Finds `--config FILE` or `--config=FILE` among the user arguments.
fn config_path(args: &[String]) -> Option<String> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p.to_string());
        }
    }
    None
}

/// Inserts the flags of the configuration file (if any) right after the
/// subcommand, so later command-line flags override them.
pub fn inject(cmd: &Command, argv: Vec<String>) -> Result<Vec<String>, Error> {
    if argv.len() < 2 {
        return Ok(argv);
    }
    let Some(path) = config_path(&argv[2..]) else {
        return Ok(argv);
    };
    let Some(sub) = cmd.find_subcommand(&argv[1]) else {
        return Ok(argv);
    };
    let text = fs::read_to_string(Path::new(&path))
        .map_err(|e| Error::Input(format!("cannot read config {path}: {e}")))?;
    let mut flags = Vec::new();
    for (key, value) in parse(&text) {
        if NOT_REPLAYED.contains(&key.as_str()) {
            continue;
        }
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()))
            .ok_or_else(|| Error::Input(format!("unknown config key {key:?} for {}", argv[1])))?;
        match arg.get_action() {
            ArgAction::SetTrue => {
                if value == "true" {
                    flags.push(format!("--{key}"));
                }
            }
            _ => flags.push(format!("--{key}={value}")),
        }
    }
    let mut out = argv[..2].to_vec();
    out.extend(flags);
    out.extend_from_slice(&argv[2..]);
    Ok(out)
}

/// `(key, value)` pairs of every resolved argument of the subcommand, in
/// declaration order.
pub fn resolved(cmd: &Command, name: &str, m: &ArgMatches) -> Vec<(String, String)> {
    let Some(sub) = cmd.find_subcommand(name) else {
        return Vec::new();
    };
    sub.get_arguments()
        .filter_map(|a| {
            let long = a.get_long()?;
            if NOT_REPLAYED.contains(&long) {
                return None;
            }
            let raw = m.try_get_raw(a.get_id().as_str()).ok()??;
            let vals: Vec<String> = raw.map(|v| v.to_string_lossy().into_owned()).collect();
            Some((long.to_string(), vals.join(",")))
        })
        .collect()
}
