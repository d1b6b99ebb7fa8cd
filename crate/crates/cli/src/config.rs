//! `key = value` config files and step-list parsing.
//!
//! Keys are the long flag names without dashes prefix, e.g. `target-tpr = 0.99`.
//! Values from the file override built-in defaults; explicit flags override both.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Default, Clone, PartialEq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("config line {}: expected `key = value`", i + 1))?;
            let key = key.trim().replace('_', "-");
            if values.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(format!("config line {}: duplicate key `{key}`", i + 1));
            }
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text)
    }

    /// Rejects keys no command understands, so typos do not pass silently.
    pub fn check_keys(&self, known: &[&str]) -> Result<(), String> {
        match self.values.keys().find(|k| !known.contains(&k.as_str())) {
            Some(k) => Err(format!("unknown config key `{k}`")),
            None => Ok(()),
        }
    }

    /// Flag value if given, else the config value, else `None`.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, String> {
        if flag.is_some() {
            return Ok(flag);
        }
        self.values
            .get(key)
            .map(|raw| {
                raw.parse()
                    .map_err(|_| format!("invalid config value for `{key}`: `{raw}`"))
            })
            .transpose()
    }

    pub fn pick_or<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, String> {
        Ok(self.pick(flag, key)?.unwrap_or(default))
    }
}

/// Step list: `a..b` (inclusive), `a,b,c`, or a single value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Steps(pub Vec<u32>);

impl FromStr for Steps {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let num = |t: &str| {
            t.trim()
                .parse::<u32>()
                .map_err(|_| format!("invalid step `{t}`"))
        };
        let steps = if let Some((a, b)) = s.split_once("..") {
            let (a, b) = (num(a)?, num(b.trim_start_matches('='))?);
            if a > b {
                return Err(format!("empty range `{s}`"));
            }
            (a..=b).collect()
        } else {
            s.split(',').map(num).collect::<Result<Vec<_>, _>>()?
        };
        if steps.is_empty() {
            return Err("no steps given".into());
        }
        Ok(Steps(steps))
    }
}

/// Comma-separated attacker model names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Models(pub Vec<rba_privacy::attack::AttackerKind>);

impl FromStr for Models {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let models = s
            .split(',')
            .map(|m| m.trim().parse())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e: String| e)?;
        Ok(Models(models))
    }
}
