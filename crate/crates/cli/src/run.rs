//! Config resolution and run-directory provenance.

use crate::{DataArgs, TrainOverrides};
use anyhow::{Context, Result};
use mvfuse_core::checkpoint::file_sha256;
use mvfuse_core::config::{Stage, TrainConfig};
use serde::Serialize;
use std::path::{Path, PathBuf};

pub const DATA_ROOT_ENV: &str = "MVFUSE_DATA_ROOT";

/// Bad flags or config values; exits with code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Parsed `--config` file: optional top-level `data_root` and `[train]`.
#[derive(Default)]
pub struct ConfigFile {
    pub data_root: Option<PathBuf>,
    pub train: toml::Table,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut table: toml::Table = toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let data_root = match table.remove("data_root") {
            Some(toml::Value::String(s)) => Some(PathBuf::from(s)),
            Some(_) => return Err(usage(format!("{}: data_root must be a string", path.display()))),
            None => None,
        };
        let train = match table.remove("train") {
            Some(toml::Value::Table(t)) => t,
            Some(_) => return Err(usage(format!("{}: [train] must be a table", path.display()))),
            None => toml::Table::new(),
        };
        if let Some(k) = table.keys().next() {
            return Err(usage(format!("{}: unknown key `{k}`", path.display())));
        }
        Ok(Self { data_root, train })
    }
}

/// Flag, then config file, then the environment.
pub fn data_root(args: &DataArgs, file: &ConfigFile) -> Result<PathBuf> {
    args.data_root
        .clone()
        .or_else(|| file.data_root.clone())
        .or_else(|| std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from))
        .ok_or_else(|| {
            usage(format!("no dataset root: pass --data-root, set data_root in the config or {DATA_ROOT_ENV}"))
        })
}

/// Stage defaults, overlaid with the config file, overlaid with flags.
pub fn train_config(stage: Stage, file: &ConfigFile, flags: &TrainOverrides) -> Result<TrainConfig> {
    let mut table = match toml::Value::try_from(TrainConfig::for_stage(stage))? {
        toml::Value::Table(t) => t,
        _ => unreachable!("a struct serialises to a table"),
    };
    for (k, v) in &file.train {
        if k == "stage" {
            return Err(usage("the stage is fixed by the command; remove `stage` from [train]"));
        }
        table.insert(k.clone(), v.clone());
    }
    let mut set = |k: &str, v: Option<toml::Value>| {
        if let Some(v) = v {
            table.insert(k.into(), v);
        }
    };
    set("epochs", flags.epochs.map(|v| (v as i64).into()));
    set("lr", flags.lr.map(|v| (v as f64).into()));
    set("weight_decay", flags.weight_decay.map(|v| (v as f64).into()));
    set("batch_size", flags.batch_size.map(|v| (v as i64).into()));
    set("seed", flags.seed.map(|v| (v as i64).into()));
    set("segments", flags.segments.map(|v| (v as i64).into()));
    set("crop_size", flags.crop_size.map(|v| (v as i64).into()));
    set("max_steps", flags.max_steps.map(|v| (v as i64).into()));
    if let Some(text) = &flags.lr_milestones {
        let epochs = text
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<i64>().map(toml::Value::from))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| usage(format!("--lr-milestones: {e}")))?;
        set("lr_milestones", Some(toml::Value::Array(epochs)));
    }
    let cfg: TrainConfig =
        toml::Value::Table(table).try_into().map_err(|e| usage(format!("invalid [train] config: {e}")))?;
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

#[derive(Serialize)]
struct OutputEntry {
    path: String,
    bytes: u64,
    sha256: String,
}

#[derive(Serialize)]
struct OutputManifest<'a> {
    command: &'a str,
    files: Vec<OutputEntry>,
}

/// Output directory of one command: records every produced file and writes
/// `resolved_config.toml` and `outputs.json`.
pub struct RunDir {
    pub root: PathBuf,
    command: &'static str,
    files: Vec<PathBuf>,
}

impl RunDir {
    pub fn create(root: &Path, command: &'static str) -> Result<Self> {
        std::fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self { root: root.to_path_buf(), command, files: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Registers a file written by the command.
    pub fn produced(&mut self, path: PathBuf) {
        self.files.push(path);
    }

    pub fn write(&mut self, name: &str, contents: &[u8]) -> Result<()> {
        let p = self.path(name);
        std::fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))?;
        self.produced(p);
        Ok(())
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn write_resolved(&mut self, resolved: &impl Serialize) -> Result<()> {
        let mut table = match toml::Value::try_from(resolved)? {
            toml::Value::Table(t) => t,
            _ => anyhow::bail!("resolved config must be a table"),
        };
        table.insert("command".into(), self.command.into());
        self.write("resolved_config.toml", toml::to_string(&table)?.as_bytes())
    }

    pub fn finish(self) -> Result<()> {
        let mut files = Vec::with_capacity(self.files.len());
        for p in &self.files {
            let rel = p.strip_prefix(&self.root).unwrap_or(p);
            files.push(OutputEntry {
                path: rel.display().to_string(),
                bytes: std::fs::metadata(p)?.len(),
                sha256: file_sha256(p)?,
            });
        }
        files.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = OutputManifest { command: self.command, files };
        let p = self.root.join("outputs.json");
        std::fs::write(&p, serde_json::to_string_pretty(&manifest)? + "\n")
            .with_context(|| format!("writing {}", p.display()))?;
        Ok(())
    }
}
