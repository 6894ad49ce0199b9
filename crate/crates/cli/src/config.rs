//! `key = value` run configuration merged with `--key value` overrides.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

/// Bad invocation or configuration; maps to exit code 2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> UsageError {
    UsageError(msg.into())
}

/// One accepted key. `default: None` marks a required key.
#[derive(Debug, Clone)]
pub struct Key {
    pub name: &'static str,
    pub default: Option<String>,
    pub help: &'static str,
}

pub fn key(name: &'static str, default: impl ToString, help: &'static str) -> Key {
    Key {
        name,
        default: Some(default.to_string()),
        help,
    }
}

pub fn required(name: &'static str, help: &'static str) -> Key {
    Key {
        name,
        default: None,
        help,
    }
}

/// Parses `key = value` lines. `#` starts a comment; blank lines are
/// ignored; a repeated key is an error.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>, UsageError> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| usage(format!("config line {}: expected `key = value`", i + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(usage(format!("config line {}: empty key", i + 1)));
        }
        if out.iter().any(|(seen, _)| seen == k) {
            return Err(usage(format!("config line {}: duplicate key {k:?}", i + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Splits `--key value` / `--key=value` arguments. `--config PATH` is
/// returned separately.
pub fn parse_overrides(args: &[String]) -> Result<(Option<PathBuf>, Vec<(String, String)>), UsageError> {
    let mut config = None;
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let body = arg
            .strip_prefix("--")
            .ok_or_else(|| usage(format!("unexpected argument {arg:?}; expected --key value")))?;
        let (k, v) = match body.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it.next().ok_or_else(|| usage(format!("--{body} needs a value")))?;
                (body.to_string(), v.clone())
            }
        };
        let k = k.replace('-', "_");
        if k.is_empty() {
            return Err(usage("empty option name"));
        }
        if k == "config" {
            if config.replace(PathBuf::from(v)).is_some() {
                return Err(usage("--config given twice"));
            }
        } else {
            out.push((k, v));
        }
    }
    Ok((config, out))
}

/// Fully resolved settings of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    command: String,
    order: Vec<&'static str>,
    values: BTreeMap<String, String>,
}

impl RunConfig {
    /// Defaults, then the config file, then overrides (flags win). Keys
    /// outside `schema` are rejected.
    pub fn resolve(
        command: &str,
        schema: &[Key],
        file: &[(String, String)],
        overrides: &[(String, String)],
    ) -> Result<Self, UsageError> {
        let mut values = BTreeMap::new();
        for k in schema {
            if let Some(d) = &k.default {
                values.insert(k.name.to_string(), d.clone());
            }
        }
        for (source, pairs) in [("config file", file), ("command line", overrides)] {
            for (k, v) in pairs {
                if !schema.iter().any(|s| s.name == k) {
                    let known: Vec<&str> = schema.iter().map(|s| s.name).collect();
                    return Err(usage(format!(
                        "unknown key {k:?} on the {source} for `{command}` (accepted: {})",
                        known.join(", ")
                    )));
                }
                values.insert(k.clone(), v.clone());
            }
        }
        if let Some(missing) = schema.iter().find(|k| !values.contains_key(k.name)) {
            return Err(usage(format!("`{command}` needs --{} ({})", missing.name, missing.help)));
        }
        Ok(RunConfig {
            command: command.to_string(),
            order: schema.iter().map(|k| k.name).collect(),
            values,
        })
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("key {key:?} is not in the schema"))
    }

    pub fn get<V: FromStr>(&self, key: &str) -> Result<V, UsageError>
    where
        V::Err: std::fmt::Display,
    {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|e| usage(format!("bad value {raw:?} for {key}: {e}")))
    }

    /// Empty values read as absent.
    pub fn optional(&self, key: &str) -> Option<&str> {
        Some(self.raw(key)).filter(|v| !v.is_empty())
    }

    /// A path that must already exist.
    pub fn input_path(&self, key: &str) -> Result<PathBuf, UsageError> {
        let p = PathBuf::from(self.raw(key));
        if self.raw(key).is_empty() || !p.exists() {
            return Err(usage(format!("{key}: no such file {:?}", self.raw(key))));
        }
        Ok(p)
    }

    pub fn optional_input_path(&self, key: &str) -> Result<Option<PathBuf>, UsageError> {
        self.optional(key).map(|_| self.input_path(key)).transpose()
    }

    /// `# key = value` lines in schema order.
    pub fn render(&self) -> String {
        let mut out = format!("# command = {}\n", self.command);
        for k in &self.order {
            let _ = writeln!(out, "# {k} = {}", self.values[*k]);
        }
        out
    }
}
