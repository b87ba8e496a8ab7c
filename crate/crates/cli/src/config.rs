//! Flat `key = value` configuration with layered overrides.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

/// Effective settings for one subcommand. Keys are fixed by the defaults;
/// later layers may only overwrite known keys.
#[derive(Debug, Clone)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn with_defaults(defaults: &[(&str, &str)]) -> Self {
        Self {
            values: defaults
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.trim().to_string();
                Ok(())
            }
            None => bail!("unknown config key `{key}`"),
        }
    }

    /// Applies `--set key=value` style assignments.
    pub fn set_pairs(&mut self, pairs: &[String]) -> Result<()> {
        for pair in pairs {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| anyhow!("expected key=value, got `{pair}`"))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn set_opt<T: Display>(&mut self, key: &str, value: Option<T>) -> Result<()> {
        match value {
            Some(v) => self.set(key, &v.to_string()),
            None => Ok(()),
        }
    }

    pub fn merge_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{origin}:{}: expected `key = value`", i + 1))?;
            self.set(k, v)
                .with_context(|| format!("{origin}:{}", i + 1))?;
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        self.merge_text(&text, &path.display().to_string())
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("config key `{key}` has no default"))
    }

    pub fn get<T>(&self, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|e| anyhow!("config key `{key}`: cannot parse `{raw}`: {e}"))
    }

    /// `auto` (or `none`) maps to `None`.
    pub fn get_opt<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.raw(key) {
            "auto" | "none" | "" => Ok(None),
            _ => self.get(key).map(Some),
        }
    }

    pub fn header(&self) -> Vec<(String, String)> {
        self.values
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> Config {
        Config::with_defaults(&[("epochs", "60"), ("c_max", "auto"), ("mode", "at2")])
    }

    #[test]
    fn layers_override_in_order() {
        let mut c = base();
        c.merge_text("# comment\nepochs = 10\n\nmode = nt # trailing\n", "file")
            .unwrap();
        assert_eq!(c.get::<usize>("epochs").unwrap(), 10);
        c.set_pairs(&["epochs=3".into()]).unwrap();
        c.set_opt("mode", Some("at1")).unwrap();
        c.set_opt::<usize>("epochs", None).unwrap();
        assert_eq!(c.get::<usize>("epochs").unwrap(), 3);
        assert_eq!(c.raw("mode"), "at1");
        assert_eq!(c.get_opt::<f64>("c_max").unwrap(), None);
    }

    #[test]
    fn rejects_unknown_keys_and_junk() {
        let mut c = base();
        assert!(c
            .set("bogus", "1")
            .unwrap_err()
            .to_string()
            .contains("bogus"));
        assert!(c.merge_text("epochs 3\n", "f").is_err());
        c.set("epochs", "x").unwrap();
        assert!(c.get::<usize>("epochs").is_err());
    }
}
