//! `key=value` settings: a config file overridden by command-line flags.
//! Every value read is recorded so the resolved set can be written back as
//! a snapshot.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

#[derive(Debug, Default)]
pub struct Settings {
    given: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
}

/// Parses `key=value` lines. Blank lines and lines starting with `#` are
/// skipped; keys may use `-` or `_`.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key=value, got {line:?}", i + 1))?;
        let key = normalize(k.trim());
        if key.is_empty() {
            return Err(format!("line {}: empty key", i + 1));
        }
        map.insert(key, v.trim().to_string());
    }
    Ok(map)
}

fn normalize(key: &str) -> String {
    key.replace('-', "_")
}

impl Settings {
    pub fn load(config: Option<&Path>) -> Result<Self, CliError> {
        let given = match config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
                parse_config(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
            }
            None => BTreeMap::new(),
        };
        Ok(Self {
            given,
            resolved: BTreeMap::new(),
        })
    }

    /// A flag value replaces whatever the config file said.
    pub fn flag<T: Display>(&mut self, key: &str, value: Option<T>) {
        if let Some(v) = value {
            self.given.insert(normalize(key), v.to_string());
        }
    }

    /// A boolean switch only overrides when present.
    pub fn switch(&mut self, key: &str, on: bool) {
        if on {
            self.given.insert(normalize(key), "true".into());
        }
    }

    fn parse<T: FromStr>(&self, key: &str, raw: &str) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        raw.parse()
            .map_err(|e| CliError::Usage(format!("invalid value {raw:?} for {}: {e}", key.replace('_', "-"))))
    }

    pub fn get<T: FromStr + Display>(&mut self, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        let v = match self.given.get(key) {
            Some(raw) => self.parse(key, raw)?,
            None => default,
        };
        self.resolved.insert(key.into(), v.to_string());
        Ok(v)
    }

    pub fn optional<T: FromStr + Display>(&mut self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        let v = match self.given.get(key) {
            Some(raw) => Some(self.parse::<T>(key, raw)?),
            None => None,
        };
        if let Some(x) = &v {
            self.resolved.insert(key.into(), x.to_string());
        }
        Ok(v)
    }

    pub fn require<T: FromStr + Display>(&mut self, key: &str) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        self.optional(key)?
            .ok_or_else(|| CliError::Usage(format!("missing required --{}", key.replace('_', "-"))))
    }

    /// Comma-separated list of exactly `N` values.
    pub fn array<const N: usize>(&mut self, key: &str, default: [usize; N]) -> Result<[usize; N], CliError> {
        let v = match self.given.get(key) {
            Some(raw) => {
                let parts: Vec<usize> = raw
                    .split(',')
                    .map(|p| self.parse(key, p.trim()))
                    .collect::<Result<_, _>>()?;
                parts
                    .try_into()
                    .map_err(|_| CliError::Usage(format!("{key} needs {N} comma-separated values, got {raw:?}")))?
            }
            None => default,
        };
        self.resolved
            .insert(key.into(), v.iter().map(ToString::to_string).collect::<Vec<_>>().join(","));
        Ok(v)
    }

    /// Fails on keys that no reader asked for, so typos do not pass silently.
    pub fn finish(&self) -> Result<(), CliError> {
        match self.given.keys().find(|k| !self.resolved.contains_key(*k)) {
            Some(k) => Err(CliError::Usage(format!("unknown setting {k:?}"))),
            None => Ok(()),
        }
    }

    pub fn snapshot(&self) -> String {
        self.resolved.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn write_snapshot(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.snapshot()).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }
}
