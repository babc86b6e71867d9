//! Flat `key = value` configuration files.
//!
//! Keys are the long flag names without the leading dashes; `_` and `-` are
//! interchangeable. Values given on the command line win over the file.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};

#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    source: Option<PathBuf>,
    values: BTreeMap<String, String>,
}

fn normalize_key(key: &str) -> String {
    key.trim().trim_start_matches("--").replace('_', "-").to_ascii_lowercase()
}

impl ConfigFile {
    /// Loads `path` and rejects keys outside `allowed`.
    pub fn load(path: &Path, allowed: &[&str]) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config file {}", path.display()))?;
        let mut cfg = Self::parse(&text, allowed).with_context(|| format!("in config file {}", path.display()))?;
        cfg.source = Some(path.to_path_buf());
        Ok(cfg)
    }

    pub fn parse(text: &str, allowed: &[&str]) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("line {}: expected `key = value`, found '{}'", n + 1, raw.trim());
            };
            let key = normalize_key(key);
            if !allowed.contains(&key.as_str()) {
                bail!(
                    "line {}: unknown key '{key}' (allowed: {})",
                    n + 1,
                    allowed.join(", ")
                );
            }
            let value = value.trim().trim_matches('"').to_string();
            if values.insert(key.clone(), value).is_some() {
                bail!("line {}: duplicate key '{key}'", n + 1);
            }
        }
        Ok(Self { source: None, values })
    }

    pub fn optional(path: Option<&Path>, allowed: &[&str]) -> Result<Self> {
        match path {
            Some(p) => Self::load(p, allowed),
            None => Ok(Self::default()),
        }
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// The flag value if given, otherwise the parsed file value.
    pub fn pick<T>(&self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|e| {
                let src = self.source.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
                anyhow::anyhow!("config {src}: invalid value '{v}' for '{key}': {e}")
            }),
        }
    }

    pub fn pick_or<T>(&self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.pick(key, flag)?.unwrap_or(default))
    }

    pub fn require<T>(&self, key: &str, flag: Option<T>) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.pick(key, flag)?
            .ok_or_else(|| anyhow::anyhow!("missing required setting --{key} (flag or config file)"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_precedence() {
        let cfg = ConfigFile::parse("# top\nepochs = 5  # trailing\n\nlearning_rate=0.01\n", &["epochs", "learning-rate"]).unwrap();
        assert_eq!(cfg.pick_or::<usize>("epochs", None, 100).unwrap(), 5);
        assert_eq!(cfg.pick_or::<usize>("epochs", Some(7), 100).unwrap(), 7);
        assert_eq!(cfg.pick_or::<f64>("learning-rate", None, 0.003).unwrap(), 0.01);
        assert_eq!(cfg.pick_or::<usize>("batch-size", None, 256).unwrap(), 256);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(ConfigFile::parse("colour = red\n", &["epochs"]).is_err());
        assert!(ConfigFile::parse("epochs\n", &["epochs"]).is_err());
        assert!(ConfigFile::parse("epochs = 1\nepochs = 2\n", &["epochs"]).is_err());
        let cfg = ConfigFile::parse("epochs = many\n", &["epochs"]).unwrap();
        assert!(cfg.pick::<usize>("epochs", None).is_err());
    }
}
