//! Flat key=value run configuration: a config file merged with command-line
//! flags (flags win), validated against the keys a command accepts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use implicit_slim::formats::parse_key_values;
use implicit_slim::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    command: &'static str,
    values: BTreeMap<String, String>,
    /// Keys that may carry comma-separated grids.
    grid_keys: &'static [&'static str],
}

impl RunConfig {
    /// Merges `file` entries with `flags`. Every key must be in `allowed`.
    pub fn build(
        command: &'static str,
        allowed: &[&str],
        grid_keys: &'static [&'static str],
        file: Option<&Path>,
        flags: Vec<(&'static str, Option<String>)>,
    ) -> Result<Self> {
        let mut values = BTreeMap::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let parsed = parse_key_values(&text).map_err(|e| match e {
                Error::Parse { line, message } => {
                    Error::Config(format!("{}:{line}: {message}", path.display()))
                }
                other => other,
            })?;
            for (k, v) in parsed {
                if !allowed.contains(&k.as_str()) {
                    return Err(Error::Config(format!(
                        "unknown key `{k}` for `{command}` in {}",
                        path.display()
                    )));
                }
                values.insert(k, v);
            }
        }
        for (k, v) in flags {
            if let Some(v) = v {
                if !allowed.contains(&k) {
                    return Err(Error::Config(format!("`--{k}` is not used by `{command}`")));
                }
                values.insert(k.to_string(), v);
            }
        }
        Ok(RunConfig {
            command,
            values,
            grid_keys,
        })
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn bad(&self, key: &str, message: impl std::fmt::Display) -> Error {
        Error::Config(format!("`{}`: key `{key}`: {message}", self.command))
    }

    fn single(&self, key: &str) -> Result<Option<&str>> {
        match self.raw(key) {
            Some(v) if v.contains(',') && !self.grid_keys.contains(&key) => {
                Err(self.bad(key, "lists are only accepted by `sweep`"))
            }
            other => Ok(other),
        }
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.single(key)? {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| self.bad(key, format!("cannot parse `{v}`: {e}"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.parse(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.parse(key)?.ok_or_else(|| self.bad(key, "is required"))
    }

    pub fn path(&self, key: &str) -> Result<PathBuf> {
        self.require::<String>(key).map(PathBuf::from)
    }

    pub fn opt_path(&self, key: &str) -> Result<Option<PathBuf>> {
        Ok(self.parse::<String>(key)?.map(PathBuf::from))
    }

    /// Comma-separated values; a single value is a one-element list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        let Some(raw) = self.raw(key) else {
            return Ok(None);
        };
        raw.split(',')
            .map(|s| {
                let s = s.trim();
                s.parse()
                    .map_err(|e| self.bad(key, format!("cannot parse `{s}`: {e}")))
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str, flags: Vec<(&'static str, Option<String>)>) -> Result<RunConfig> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, text).unwrap();
        RunConfig::build(
            "train",
            &["lambda", "alpha", "L"],
            &["lambda"],
            Some(&path),
            flags,
        )
    }

    #[test]
    fn flags_override_file() {
        let c = cfg(
            "lambda=5\nalpha=2\n",
            vec![("lambda", Some("7".into())), ("alpha", None)],
        )
        .unwrap();
        assert_eq!(c.require::<f64>("lambda").unwrap(), 7.0);
        assert_eq!(c.require::<f64>("alpha").unwrap(), 2.0);
        assert_eq!(c.get_or::<usize>("L", 64).unwrap(), 64);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = cfg("beta=1\n", vec![]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn lists_only_for_grid_keys() {
        let c = cfg("lambda=1,10\nalpha=1,2\n", vec![]).unwrap();
        assert_eq!(c.list::<f64>("lambda").unwrap().unwrap(), vec![1.0, 10.0]);
        assert!(c.parse::<f64>("alpha").is_err());
    }
}
