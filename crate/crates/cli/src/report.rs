use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use gridsp::netmodel::{parse_case, GridCase};
use gridsp::GridError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{}: {source}", path.display())]
    Input { path: PathBuf, source: GridError },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Invalid(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// What a subcommand hands back: the JSON payload and whether its solver
/// reached the requested accuracy.
pub struct Outcome {
    pub result: Value,
    pub converged: bool,
}

impl Outcome {
    pub fn ok<T: Serialize>(result: &T) -> CliResult<Self> {
        Ok(Self {
            result: to_value(result)?,
            converged: true,
        })
    }

    pub fn with_status<T: Serialize>(result: &T, converged: bool) -> CliResult<Self> {
        Ok(Self {
            result: to_value(result)?,
            converged,
        })
    }
}

pub fn to_value<T: Serialize>(v: &T) -> CliResult<Value> {
    serde_json::to_value(v).map_err(|e| CliError::Invalid(format!("result encoding: {e}")))
}

#[derive(Serialize)]
pub struct RunReport {
    pub version: u32,
    pub command: Vec<String>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub wall_time_s: f64,
    pub status: &'static str,
    pub exit_code: i32,
    pub result: Option<Value>,
    pub error: Option<String>,
}

/// Shared state of one invocation: input digests and files written.
pub struct Run {
    out_dir: PathBuf,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
}

impl Run {
    pub fn new(out_dir: &Path) -> Self {
        Self {
            out_dir: out_dir.to_path_buf(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn read(&mut self, path: &Path) -> CliResult<String> {
        let bytes = fs::read(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.inputs
            .insert(path.display().to_string(), hex::encode(Sha256::digest(&bytes)));
        String::from_utf8(bytes).map_err(|_| CliError::Invalid(format!("{}: not UTF-8", path.display())))
    }

    pub fn json<T: DeserializeOwned>(&mut self, path: &Path) -> CliResult<T> {
        let text = self.read(path)?;
        serde_json::from_str(&text).map_err(|source| CliError::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Reads with one of the library's own parsers, tagging errors with the path.
    pub fn parse<T>(&mut self, path: &Path, f: impl FnOnce(&str) -> gridsp::Result<T>) -> CliResult<T> {
        let text = self.read(path)?;
        f(&text).map_err(|source| CliError::Input {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn case(&mut self, path: &Path) -> CliResult<GridCase> {
        self.parse(path, parse_case)
    }

    fn prepare(&self) -> CliResult<()> {
        fs::create_dir_all(&self.out_dir).map_err(|source| CliError::Io {
            path: self.out_dir.clone(),
            source,
        })
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> CliResult<()> {
        self.prepare()?;
        let path = self.out_dir.join(name);
        fs::write(&path, text).map_err(|source| CliError::Io { path, source })?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    pub fn write_csv<R, I>(&mut self, name: &str, header: &[&str], rows: I) -> CliResult<()>
    where
        R: IntoIterator<Item = String>,
        I: IntoIterator<Item = R>,
    {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Invalid(e.to_string()))?;
        self.write_text(name, &String::from_utf8_lossy(&bytes))
    }
}

pub fn num(v: f64) -> String {
    format!("{v:?}")
}
