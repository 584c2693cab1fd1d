//! Plain-text `key = value` experiment configuration.
//!
//! One pair per line, `#` starts a comment, blank lines are ignored. Every
//! subcommand declares its keys and defaults; anything else is rejected.

use crate::error::CliError;
use std::collections::BTreeMap;
use std::str::FromStr;

/// A declared key with its default and a one-line description.
pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

pub const fn key(name: &'static str, default: &'static str, help: &'static str) -> Key {
    Key { name, default, help }
}

/// Raw pairs in file order, keeping the line number for diagnostics.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String, usize)>, CliError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Syntax { line: i + 1, text: raw.trim().to_string() })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(CliError::Syntax { line: i + 1, text: raw.trim().to_string() });
        }
        out.push((k.to_string(), v.trim().to_string(), i + 1));
    }
    Ok(out)
}

/// Fully resolved parameters for one subcommand.
#[derive(Clone, Debug, PartialEq)]
pub struct Resolved {
    values: BTreeMap<String, String>,
}

impl Resolved {
    /// Defaults from `schema`, overridden by `pairs` in order. Unknown keys are
    /// an error naming the key.
    pub fn new(schema: &[Key], pairs: &[(String, String)]) -> Result<Self, CliError> {
        let mut values: BTreeMap<String, String> =
            schema.iter().map(|k| (k.name.to_string(), k.default.to_string())).collect();
        for (k, v) in pairs {
            match values.get_mut(k) {
                Some(slot) => *slot = v.clone(),
                None => {
                    let known: Vec<&str> = schema.iter().map(|k| k.name).collect();
                    return Err(CliError::UnknownKey { key: k.clone(), known: known.join(", ") });
                }
            }
        }
        Ok(Self { values })
    }

    pub fn map(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    pub fn str(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("undeclared key {key}"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.str(key);
        raw.parse().map_err(|e: T::Err| CliError::BadValue { key: key.into(), value: raw.into(), reason: e.to_string() })
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.str(key);
        raw.split(',')
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse().map_err(|e: T::Err| CliError::BadValue { key: key.into(), value: raw.into(), reason: e.to_string() })
            })
            .collect()
    }

    pub fn bad(&self, key: &str, reason: impl Into<String>) -> CliError {
        CliError::BadValue { key: key.into(), value: self.str(key).into(), reason: reason.into() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCHEMA: &[Key] = &[key("d", "16", "dimension"), key("lr", "1e-3", "step size"), key("ds", "4,8", "list")];

    fn pairs(text: &str) -> Vec<(String, String)> {
        parse_pairs(text).unwrap().into_iter().map(|(k, v, _)| (k, v)).collect()
    }

    #[test]
    fn comments_blank_lines_and_overrides() {
        let p = pairs("# header\n\nd = 64   # trailing\nlr=0.5\n");
        let r = Resolved::new(SCHEMA, &p).unwrap();
        assert_eq!(r.get::<usize>("d").unwrap(), 64);
        assert_eq!(r.get::<f64>("lr").unwrap(), 0.5);
        assert_eq!(r.list::<usize>("ds").unwrap(), vec![4, 8]);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = Resolved::new(SCHEMA, &pairs("d=4\nwidht=3\n")).unwrap_err();
        assert!(err.to_string().contains("widht"), "{err}");
    }

    #[test]
    fn malformed_line_and_value() {
        assert!(matches!(parse_pairs("d 4"), Err(CliError::Syntax { line: 1, .. })));
        let r = Resolved::new(SCHEMA, &pairs("d=four")).unwrap();
        let err = r.get::<usize>("d").unwrap_err();
        assert!(err.to_string().contains("'d'"), "{err}");
    }
}
