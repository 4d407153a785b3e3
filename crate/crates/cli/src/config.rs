//! `key = value` settings files. Keys are long flag names without the
//! leading dashes; values given on the command line win.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Default, Clone, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, (usize, String)>,
}

impl Settings {
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected `key = value`", i + 1))?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(format!("line {}: empty key", i + 1));
            }
            if values.insert(key.clone(), (i + 1, value.trim().to_string())).is_some() {
                return Err(format!("line {}: {key} is set twice", i + 1));
            }
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// Rejects keys the current subcommand does not take.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<(), String> {
        match self.values.iter().find(|(k, _)| !allowed.contains(&k.as_str())) {
            Some((k, (line, _))) => Err(format!(
                "line {line}: unknown key {k:?} (accepted here: {})",
                allowed.join(", ")
            )),
            None => Ok(()),
        }
    }

    /// The flag value if given, else the file value, parsed.
    pub fn pick<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, String>
    where
        T: FromStr,
        T::Err: Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.values.get(key) {
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|e| format!("line {line}: bad value for {key}: {e}")),
            None => Ok(None),
        }
    }
}
