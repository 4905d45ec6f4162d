//! Run configuration: command sections merged from a TOML/JSON file and the
//! command line, plus helpers for writing artifacts.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use sandhi_core::{ModelConfig, Task, TranslitTable};

/// Parsed config file: one table per command plus an optional `model` table.
#[derive(Debug, Default, Clone)]
pub struct ConfigFile(Map<String, Value>);

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<ConfigFile> {
        let Some(path) = path else {
            return Ok(ConfigFile::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let value: Value = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        } else {
            let t: toml::Table = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            serde_json::to_value(t)?
        };
        match value {
            Value::Object(m) => Ok(ConfigFile(m)),
            _ => bail!("{}: config must be a table", path.display()),
        }
    }

    pub fn table(&self) -> Map<String, Value> {
        self.0.clone()
    }

    pub fn section(&self, name: &str) -> Result<Map<String, Value>> {
        match self.0.get(name) {
            None => Ok(Map::new()),
            Some(Value::Object(m)) => Ok(m.clone()),
            Some(_) => bail!("config section [{name}] must be a table"),
        }
    }
}

/// Lays the set keys of `cli` over `file` and deserializes the result.
pub fn merge<T: Serialize + DeserializeOwned>(mut file: Map<String, Value>, cli: &T) -> Result<T> {
    if let Value::Object(flags) = serde_json::to_value(cli)? {
        file.extend(flags.into_iter().filter(|(_, v)| !v.is_null()));
    }
    serde_json::from_value(Value::Object(file)).context("invalid configuration")
}

/// Parses `on`/`off` (and the usual boolean spellings).
pub fn on_off(s: &str) -> Result<bool, String> {
    match s.to_ascii_lowercase().as_str() {
        "on" | "true" | "yes" | "1" => Ok(true),
        "off" | "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected on or off, got {s:?}")),
    }
}

/// Model hyper-parameters settable from the command line. Unset flags fall
/// back to the `[model]` table, then to the per-task defaults.
#[derive(Debug, Default, Clone, clap::Args, Serialize)]
pub struct ModelFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    #[arg(long)]
    pub max_lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Minimum frequency of a stem rule.
    #[arg(long = "cutoff")]
    pub rule_cutoff: Option<usize>,
    /// Feed models internal-alphabet (`on`) or raw IAST (`off`) text.
    #[arg(long = "translit", value_parser = on_off, value_name = "on|off")]
    #[serde(rename = "transliteration")]
    pub translit: Option<bool>,
    /// `max` or `lstm`.
    #[arg(long)]
    pub char2token: Option<String>,
    #[arg(long, value_parser = on_off, value_name = "on|off")]
    pub use_lstm: Option<bool>,
    #[arg(long, value_parser = on_off, value_name = "on|off")]
    pub joint_tag_rules: Option<bool>,
    /// `gold` or `predicted`.
    #[arg(long)]
    pub span_source: Option<String>,
    /// Any other model field, as `key=value` (value parsed as JSON if possible).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    #[serde(skip)]
    pub set: Vec<String>,
}

fn parse_set(item: &str) -> Result<(String, Value)> {
    let (k, v) = item
        .split_once('=')
        .with_context(|| format!("--set {item:?}: expected KEY=VALUE"))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

/// Resolves the model configuration: task defaults, then the file's `[model]`
/// table, then the flags, then `overrides` (a sweep's grid point).
pub fn resolve_model(task: Task, file: &ConfigFile, overrides: &Map<String, Value>, flags: &ModelFlags) -> Result<ModelConfig> {
    let Value::Object(mut m) = serde_json::to_value(ModelConfig::for_task(task))? else {
        unreachable!("ModelConfig serializes to an object")
    };
    m.extend(file.section("model")?);
    if let Value::Object(f) = serde_json::to_value(flags)? {
        m.extend(f.into_iter().filter(|(_, v)| !v.is_null()));
    }
    for item in &flags.set {
        let (k, v) = parse_set(item)?;
        m.insert(k, v);
    }
    m.extend(overrides.clone());
    let cfg: ModelConfig = serde_json::from_value(Value::Object(m)).context("invalid model configuration")?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_translit(path: Option<&Path>) -> Result<TranslitTable> {
    match path {
        None => Ok(TranslitTable::builtin()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            TranslitTable::from_tsv(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

/// Provenance stored in every artifact. `config` has the layout of a config
/// file, so it can be fed back through `--config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub tool_version: String,
    pub command: String,
    pub config: Value,
}

impl Meta {
    pub fn new(command: &str, section: &impl Serialize, model: Option<&ModelConfig>) -> Result<Meta> {
        let mut config = Map::new();
        config.insert(command.to_string(), serde_json::to_value(section)?);
        if let Some(m) = model {
            config.insert("model".into(), serde_json::to_value(m)?);
        }
        Ok(Meta {
            tool_version: sandhi_core::VERSION.to_string(),
            command: command.to_string(),
            config: Value::Object(config),
        })
    }
}

/// Writes `bytes` to a temporary file next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).with_context(|| format!("creating a file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn required<'a, T>(v: &'a Option<T>, what: &str) -> Result<&'a T> {
    v.as_ref().with_context(|| format!("missing {what} (flag or config file)"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Default, Serialize, Deserialize, PartialEq)]
    #[serde(deny_unknown_fields)]
    struct Section {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        a: Option<u32>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        b: Option<String>,
    }

    #[test]
    fn flags_override_file_values() {
        let file: Map<String, Value> = serde_json::from_str(r#"{"a": 1, "b": "file"}"#).unwrap();
        let cli = Section {
            a: None,
            b: Some("cli".into()),
        };
        let got = merge(file, &cli).unwrap();
        assert_eq!(got, Section { a: Some(1), b: Some("cli".into()) });
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let file: Map<String, Value> = serde_json::from_str(r#"{"c": 1}"#).unwrap();
        assert!(merge(file, &Section::default()).is_err());
    }

    #[test]
    fn model_precedence() {
        let file = ConfigFile(serde_json::from_str(r#"{"model": {"epochs": 3, "hidden_dim": 64}}"#).unwrap());
        let flags = ModelFlags {
            epochs: Some(5),
            translit: Some(false),
            set: vec!["warmup_fraction=0.25".into(), "char2token=lstm".into()],
            ..Default::default()
        };
        let cfg = resolve_model(Task::T2, &file, &Map::new(), &flags).unwrap();
        assert_eq!(cfg.epochs, 5);
        assert_eq!(cfg.hidden_dim, 64);
        assert!(!cfg.transliteration);
        assert_eq!(cfg.warmup_fraction, 0.25);
        assert_eq!(cfg.char2token, sandhi_core::Char2Token::Lstm);
        assert_eq!(cfg.batch_size, ModelConfig::for_task(Task::T2).batch_size);
    }

    #[test]
    fn bad_model_values_fail() {
        let flags = ModelFlags {
            set: vec!["hidden_size=3".into()],
            ..Default::default()
        };
        assert!(resolve_model(Task::T1, &ConfigFile::default(), &Map::new(), &flags).is_err());
        let flags = ModelFlags {
            dropout: Some(1.5),
            ..Default::default()
        };
        assert!(resolve_model(Task::T1, &ConfigFile::default(), &Map::new(), &flags).is_err());
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.json");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
