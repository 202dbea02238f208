//! `key = value` config files merged under command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use bicap_core::{Error, Result};

/// Values read from a config file, consumed key by key as a command
/// resolves its settings. Keys may use dashes or underscores.
#[derive(Debug, Default)]
pub struct Resolver {
    source: Option<PathBuf>,
    entries: BTreeMap<String, String>,
}

fn normalize(key: &str) -> String {
    key.trim().replace('-', "_")
}

impl Resolver {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Resolver::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_owned(),
            source: e,
        })?;
        let mut r = Self::parse(&text)?;
        r.source = Some(path.to_owned());
        Ok(r)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {}: expected key = value", lineno + 1)))?;
            let key = normalize(k);
            if key.is_empty() {
                return Err(Error::Config(format!("config line {}: empty key", lineno + 1)));
            }
            if entries.insert(key.clone(), v.trim().to_owned()).is_some() {
                return Err(Error::Config(format!("config key `{key}` given twice")));
            }
        }
        Ok(Resolver { source: None, entries })
    }

    /// The flag value if present, else the config value, else `None`.
    pub fn opt<T: FromStr>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>> {
        let from_file = self.entries.remove(key);
        if flag.is_some() {
            return Ok(flag);
        }
        from_file
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::Config(format!("config key `{key}`: invalid value `{v}`")))
            })
            .transpose()
    }

    pub fn or<T: FromStr>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T> {
        Ok(self.opt(key, flag)?.unwrap_or(default))
    }

    pub fn required<T: FromStr>(&mut self, key: &str, flag: Option<T>) -> Result<T> {
        self.opt(key, flag)?.ok_or_else(|| {
            Error::Config(format!("missing required setting `--{}`", key.replace('_', "-")))
        })
    }

    /// Rejects any config key the command did not consume.
    pub fn finish(self) -> Result<()> {
        match self.entries.keys().next() {
            None => Ok(()),
            Some(k) => {
                let origin = self
                    .source
                    .map(|p| format!(" in {}", p.display()))
                    .unwrap_or_default();
                Err(Error::Config(format!("unknown config key `{k}`{origin}")))
            }
        }
    }
}

/// Comma-separated list such as `1,5,10`.
#[derive(Debug, Clone, PartialEq)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T> {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        s.split(',')
            .map(|p| p.trim().parse().map_err(|_| format!("bad list element `{p}`")))
            .collect::<std::result::Result<Vec<T>, String>>()
            .map(List)
    }
}

/// A count that may be switched off with `none`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Optional<T>(pub Option<T>);

impl<T: FromStr> FromStr for Optional<T> {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("none") {
            return Ok(Optional(None));
        }
        s.parse().map(|v| Optional(Some(v))).map_err(|_| format!("expected a value or `none`, got `{s}`"))
    }
}
