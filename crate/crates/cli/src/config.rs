//! Run configuration files.
//!
//! ```toml
//! seed = 1
//! output_dir = "out/sea"
//! window = 1000
//! snapshot_every = 200        # chunks; omit to disable
//! progress_every = 100        # chunks between progress lines
//! model = "auto"              # or "bels1" / "bels2" / "bels3", or a table
//!
//! [stream]
//! kind = "sea"
//! functions = [0, 2]
//! segment_len = 25000
//! noise = 0.1
//! standardize = true
//! ```
//!
//! A model table takes an optional `preset` plus any model field, e.g.
//! `model = { preset = "bels2", chunk_size = 50, variant = "BELS-Ens" }`.

use std::path::{Path, PathBuf};

use bels_core::{BelsConfig, StreamConfig};
use serde::Deserialize;

use crate::error::CliError;

pub const DEFAULT_WINDOW: usize = 1000;
pub const DEFAULT_PROGRESS_EVERY: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub enum ModelChoice {
    /// Pick from the default grid on the stream head.
    Auto,
    Fixed(BelsConfig),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub window: usize,
    pub snapshot_every: Option<usize>,
    pub progress_every: usize,
    pub stream: StreamConfig,
    pub model: ModelChoice,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRunConfig {
    #[serde(default)]
    seed: u64,
    output_dir: Option<PathBuf>,
    window: Option<usize>,
    snapshot_every: Option<usize>,
    progress_every: Option<usize>,
    stream: Option<toml::Value>,
    model: Option<toml::Value>,
}

/// Stream spec file for `generate`: the stream keys at top level plus an
/// optional seed.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerateSpec {
    pub seed: u64,
    pub stream: StreamConfig,
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))
}

fn stream_from(value: toml::Value, context: &str) -> Result<StreamConfig, CliError> {
    value
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(format!("{context}: {}", e.message())))
}

/// Resolves a `model` value into a choice. Relative CSV paths are not
/// touched here.
pub fn model_from(value: Option<toml::Value>) -> Result<ModelChoice, CliError> {
    let bad = |m: String| CliError::Config(format!("model: {m}"));
    match value {
        None => Ok(ModelChoice::Auto),
        Some(toml::Value::String(name)) if name.eq_ignore_ascii_case("auto") => {
            Ok(ModelChoice::Auto)
        }
        Some(toml::Value::String(name)) => BelsConfig::preset(&name)
            .map(ModelChoice::Fixed)
            .map_err(|e| bad(e.to_string())),
        Some(toml::Value::Table(mut table)) => {
            let base = match table.remove("preset") {
                None => BelsConfig::default(),
                Some(toml::Value::String(p)) => {
                    BelsConfig::preset(&p).map_err(|e| bad(e.to_string()))?
                }
                Some(other) => return Err(bad(format!("preset must be a string, got {other}"))),
            };
            let mut merged = toml::Table::try_from(&base).map_err(|e| bad(e.to_string()))?;
            merged.extend(table);
            let cfg: BelsConfig = toml::Value::Table(merged)
                .try_into()
                .map_err(|e: toml::de::Error| bad(e.message().to_owned()))?;
            Ok(ModelChoice::Fixed(cfg))
        }
        Some(other) => Err(bad(format!(
            "expected \"auto\", a preset name or a table, got {other}"
        ))),
    }
}

/// Points relative CSV paths at the config file's directory.
fn anchor_paths(stream: &mut StreamConfig, base: &Path) {
    if let bels_core::stream::StreamSpec::Csv { path, .. } = &mut stream.spec {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let raw: RawRunConfig =
            toml::from_str(text).map_err(|e| CliError::Config(e.message().to_owned()))?;
        let stream = raw
            .stream
            .ok_or_else(|| CliError::Config("missing required key `stream`".into()))?;
        let mut stream = stream_from(stream, "stream")?;
        anchor_paths(&mut stream, base);
        let output_dir = raw
            .output_dir
            .ok_or_else(|| CliError::Config("missing required key `output_dir`".into()))?;
        let window = raw.window.unwrap_or(DEFAULT_WINDOW);
        if window == 0 {
            return Err(CliError::Config("window must be >= 1".into()));
        }
        if raw.snapshot_every == Some(0) || raw.progress_every == Some(0) {
            return Err(CliError::Config(
                "snapshot_every and progress_every must be >= 1".into(),
            ));
        }
        let model = model_from(raw.model)?;
        if let ModelChoice::Fixed(cfg) = &model {
            cfg.validate()?;
        }
        Ok(Self {
            seed: raw.seed,
            output_dir: base.join(output_dir),
            window,
            snapshot_every: raw.snapshot_every,
            progress_every: raw.progress_every.unwrap_or(DEFAULT_PROGRESS_EVERY),
            stream,
            model,
        })
    }

    /// Reads a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        Self::parse(&read(path)?, path.parent().unwrap_or(Path::new(".")))
    }
}

impl GenerateSpec {
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| CliError::Config(e.message().to_owned()))?;
        let seed = match table.remove("seed") {
            None => 0,
            Some(toml::Value::Integer(s)) if s >= 0 => s as u64,
            Some(other) => {
                return Err(CliError::Config(format!(
                    "seed must be a non-negative integer, got {other}"
                )))
            }
        };
        let mut stream = stream_from(toml::Value::Table(table), "stream spec")?;
        anchor_paths(&mut stream, base);
        Ok(Self { seed, stream })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        Self::parse(&read(path)?, path.parent().unwrap_or(Path::new(".")))
    }
}
