//! Output sinks carrying the resolved-configuration header.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::{Map, Value};

use lcgf::{Error, Result};

use crate::config::HEADER_PREFIX;

pub const TOOL: &str = concat!("lcgf ", env!("CARGO_PKG_VERSION"));

/// Tool version, subcommand and resolved arguments of one run.
#[derive(Debug, Clone)]
pub struct Header {
    pub command: String,
    pub entries: Vec<(String, String)>,
}

impl Header {
    pub fn lines(&self) -> Vec<String> {
        let mut out = vec![
            format!("{HEADER_PREFIX} tool = {TOOL}"),
            format!("{HEADER_PREFIX} command = {}", self.command),
        ];
        out.extend(self.entries.iter().map(|(k, v)| format!("{HEADER_PREFIX} {k} = {v}")));
        out
    }

    pub fn write<W: Write>(&self, out: &mut W) -> Result<()> {
        for line in self.lines() {
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn json(&self) -> Value {
        let config: Map<String, Value> = self
            .entries
            .iter()
            .map(|(k, v)| (k.clone(), Value::String(v.clone())))
            .collect();
        serde_json::json!({
            "tool": TOOL,
            "command": self.command,
            "config": config,
        })
    }

    /// Writes the header alone next to a binary output file.
    pub fn write_sidecar(&self, data: &Path) -> Result<PathBuf> {
        let mut name = data.as_os_str().to_owned();
        name.push(".config");
        let path = PathBuf::from(name);
        let mut f = BufWriter::new(create(&path)?);
        self.write(&mut f)?;
        f.flush()?;
        Ok(path)
    }
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| Error::Input(format!("cannot create {}: {e}", path.display())))
}

/// Opens `path`, or standard output when absent.
pub fn open(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

/// Opens the sink and writes the header.
pub fn text(path: Option<&Path>, header: &Header) -> Result<Box<dyn Write>> {
    let mut out = open(path)?;
    header.write(&mut out)?;
    Ok(out)
}

/// Opens a binary output file; the header goes to `<file>.config`.
pub fn binary(path: Option<&Path>, header: &Header) -> Result<Box<dyn Write>> {
    let path = path.ok_or_else(|| Error::Input("binary output needs --output".into()))?;
    header.write_sidecar(path)?;
    open(Some(path))
}

/// Pretty JSON with the header merged in under `tool`, `command`, `config`.
pub fn json(path: Option<&Path>, header: &Header, body: (&str, Value)) -> Result<()> {
    let mut v = header.json();
    v[body.0] = body.1;
    let mut out = open(path)?;
    serde_json::to_writer_pretty(&mut out, &v).map_err(io::Error::from)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}
