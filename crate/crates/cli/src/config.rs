//! Flat `key = value` configuration files layered under command-line flags.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyType {
    Count,
    Seed,
    Real,
    RealList,
    Flag,
    Text,
}

pub const KEYS: &[(&str, KeyType)] = &[
    ("adapt_lr", KeyType::Real),
    ("budgets", KeyType::Count),
    ("components", KeyType::Count),
    ("dim", KeyType::Count),
    ("episodes", KeyType::Count),
    ("file", KeyType::Text),
    ("instances", KeyType::Count),
    ("iterations", KeyType::Count),
    ("kind", KeyType::Text),
    ("lambda", KeyType::Real),
    ("lr_encoder", KeyType::Real),
    ("lr_predictor", KeyType::Real),
    ("m", KeyType::Count),
    ("model", KeyType::Text),
    ("n", KeyType::Count),
    ("noise", KeyType::RealList),
    ("noise_sd", KeyType::Real),
    ("out", KeyType::Text),
    ("run_baseline", KeyType::Flag),
    ("seed", KeyType::Seed),
    ("seeds", KeyType::Count),
    ("svg", KeyType::Flag),
    ("transfer_samples", KeyType::Count),
    ("workers", KeyType::Count),
];

fn key_type(key: &str) -> Option<KeyType> {
    KEYS.iter().find(|(k, _)| *k == key).map(|(_, t)| *t)
}

fn check_type(t: KeyType, raw: &str) -> Result<(), String> {
    let r = match t {
        KeyType::Count => raw.parse::<usize>().map(drop).map_err(|e| e.to_string()),
        KeyType::Seed => raw.parse::<u64>().map(drop).map_err(|e| e.to_string()),
        KeyType::Real => raw.parse::<f64>().map(drop).map_err(|e| e.to_string()),
        KeyType::RealList => raw.split(',').try_for_each(|v| v.trim().parse::<f64>().map(drop)).map_err(|e| e.to_string()),
        KeyType::Flag => raw.parse::<bool>().map(drop).map_err(|e| e.to_string()),
        KeyType::Text => Ok(()),
    };
    r.map_err(|e| format!("'{raw}': {e}"))
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{path}:{line}: {msg}")]
    Syntax { path: String, line: usize, msg: String },
    #[error("{path}:{line}: unknown key `{key}`")]
    UnknownKey { path: String, line: usize, key: String },
    #[error("invalid value for `{key}`: {msg}")]
    Type { key: String, msg: String },
    #[error("cannot read config {path}: {msg}")]
    Read { path: String, msg: String },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FileConfig {
    path: String,
    values: BTreeMap<String, (usize, String)>,
}

pub fn load_config(path: &Path) -> Result<FileConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    parse_config(&text, &path.display().to_string())
}

/// Blank lines and `#` comments are skipped; a repeated key keeps its last
/// value.
pub fn parse_config(text: &str, path: &str) -> Result<FileConfig, ConfigError> {
    let mut values = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::Syntax {
                path: path.into(),
                line: i + 1,
                msg: "expected `key = value`".into(),
            });
        };
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(ConfigError::Syntax { path: path.into(), line: i + 1, msg: "empty key".into() });
        }
        let Some(t) = key_type(key) else {
            return Err(ConfigError::UnknownKey { path: path.into(), line: i + 1, key: key.into() });
        };
        check_type(t, value).map_err(|msg| ConfigError::Type {
            key: key.into(),
            msg: format!("{path}:{}: {msg}", i + 1),
        })?;
        values.insert(key.to_string(), (i + 1, value.to_string()));
    }
    Ok(FileConfig { path: path.into(), values })
}

/// Resolves each setting as flag, then config file, then default, and
/// remembers the effective value for the manifest.
#[derive(Debug, Default)]
pub struct Resolver {
    file: FileConfig,
    effective: BTreeMap<String, String>,
    scope: Option<String>,
}

impl Resolver {
    pub fn new(file: FileConfig) -> Self {
        Self { file, effective: BTreeMap::new(), scope: None }
    }

    pub fn get<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, ConfigError>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        debug_assert!(key_type(key).is_some(), "{key}");
        let value = match flag {
            Some(v) => v,
            None => match self.file.values.get(key) {
                Some((line, raw)) => raw.parse::<T>().map_err(|e| ConfigError::Type {
                    key: key.into(),
                    msg: format!("{}:{line}: '{raw}': {e}", self.file.path),
                })?,
                None => default,
            },
        };
        self.record(key, value.to_string());
        Ok(value)
    }

    /// Comma-separated list.
    pub fn get_list<T>(&mut self, key: &str, flag: Option<Vec<T>>, default: Vec<T>) -> Result<Vec<T>, ConfigError>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let value = match flag {
            Some(v) => v,
            None => match self.file.values.get(key) {
                Some((line, raw)) => raw
                    .split(',')
                    .map(|s| s.trim().parse::<T>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| ConfigError::Type {
                        key: key.into(),
                        msg: format!("{}:{line}: '{raw}': {e}", self.file.path),
                    })?,
                None => default,
            },
        };
        let shown: Vec<String> = value.iter().map(|v| v.to_string()).collect();
        self.record(key, shown.join(","));
        Ok(value)
    }

    /// Prefix manifest entries with `scope.` (used when one run covers
    /// several scenarios).
    pub fn set_scope(&mut self, scope: Option<&str>) {
        self.scope = scope.map(str::to_string);
    }

    fn record(&mut self, key: &str, value: String) {
        let k = match &self.scope {
            Some(s) => format!("{s}.{key}"),
            None => key.to_string(),
        };
        self.effective.insert(k, value);
    }

    pub fn manifest(&self, command: &str) -> String {
        let mut s = format!(
            "command = {command}\nversion = {} {}\n",
            env!("CARGO_PKG_NAME"),
            env!("CARGO_PKG_VERSION")
        );
        for (k, v) in &self.effective {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }
}
