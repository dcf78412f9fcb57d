//! `key = value` config files and their merge with command-line flags.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use complex_se::{Error, Result};

/// Parses flat `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str, origin: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |detail: String| Error::Parse {
            path: origin.to_path_buf(),
            detail: format!("line {}: {detail}", n + 1),
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("expected `key = value`, got {line:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(bad("empty key".into()));
        }
        if out.insert(key.to_string(), value.to_string()).is_some() {
            return Err(bad(format!("duplicate key {key:?}")));
        }
    }
    Ok(out)
}

/// Resolves each option from its flag, then the config file, then the
/// default, remembering the outcome for the resolved-config header.
pub struct Resolver {
    file: BTreeMap<String, String>,
    resolved: Vec<(String, String)>,
}

impl Resolver {
    pub fn new(config: Option<&str>) -> Result<Self> {
        let file = match config {
            Some(p) => {
                let path = Path::new(p);
                let text =
                    std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read config {p}: {e}")))?;
                parse_config(&text, path)?
            }
            None => BTreeMap::new(),
        };
        Ok(Resolver {
            file,
            resolved: Vec::new(),
        })
    }

    fn raw(&mut self, key: &str, flag: Option<String>, default: Option<&str>) -> Result<String> {
        let from_file = self.file.remove(key);
        let value = flag
            .or(from_file)
            .or_else(|| default.map(str::to_string))
            .ok_or_else(|| Error::Config(format!("missing required option --{key}")))?;
        self.resolved.push((key.to_string(), value.clone()));
        Ok(value)
    }

    pub fn get<T>(&mut self, key: &str, flag: Option<String>, default: Option<&str>) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        let raw = self.raw(key, flag, default)?;
        raw.parse()
            .map_err(|e| Error::Config(format!("invalid value {raw:?} for --{key}: {e}")))
    }

    /// Fails on config-file keys no option asked for, otherwise returns the
    /// resolved `key = value` header.
    pub fn finish(self) -> Result<String> {
        if let Some(key) = self.file.keys().next() {
            return Err(Error::Config(format!("unknown config key {key:?}")));
        }
        let mut s = String::from("# resolved config\n");
        for (k, v) in &self.resolved {
            s.push_str(&format!("{k} = {v}\n"));
        }
        Ok(s)
    }
}
