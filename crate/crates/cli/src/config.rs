//! Flat `key = value` run configuration.
//!
//! Values come from command-line flags first, then from the file passed with
//! `--config`, then from built-in defaults. Every resolved value is recorded
//! so the run can write a config file that reproduces it.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use kae_core::report::write_text;
use kae_core::{Error, Result};

pub fn parse(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!("config line {}: expected key = value, got '{raw}'", i + 1)));
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("config line {}: empty key", i + 1)));
        }
        if map.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Config(format!("config line {}: duplicate key '{k}'", i + 1)));
        }
    }
    Ok(map)
}

pub struct Resolver {
    command: &'static str,
    file: BTreeMap<String, String>,
    resolved: Vec<(String, String)>,
}

impl Resolver {
    pub fn new(command: &'static str, path: Option<&Path>) -> Result<Self> {
        let file = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| Error::Io { path: p.to_path_buf(), source })?;
                parse(&text)?
            }
            None => BTreeMap::new(),
        };
        Ok(Self { command, file, resolved: Vec::new() })
    }

    fn lookup<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let from_file = self.file.remove(key);
        let value = match (flag, from_file) {
            (Some(v), _) => Some(v),
            (None, Some(s)) => {
                Some(s.parse::<T>().map_err(|e| Error::Config(format!("config key '{key}' = '{s}': {e}")))?)
            }
            (None, None) => None,
        };
        if let Some(v) = &value {
            self.resolved.push((key.to_string(), v.to_string()));
        }
        Ok(value)
    }

    pub fn get<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        match self.lookup(key, flag)? {
            Some(v) => Ok(v),
            None => {
                self.resolved.push((key.to_string(), default.to_string()));
                Ok(default)
            }
        }
    }

    pub fn opt<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        self.lookup(key, flag)
    }

    pub fn path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<Option<PathBuf>> {
        let flag = flag.map(|p| p.to_string_lossy().into_owned());
        Ok(self.lookup::<String>(key, flag)?.map(PathBuf::from))
    }

    pub fn require_path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<PathBuf> {
        self.path(key, flag)?.ok_or_else(|| Error::Config(format!("{}: --{key} is required", self.command)))
    }

    /// Fails on keys in the file that no option consumed.
    pub fn finish(&self) -> Result<()> {
        if let Some(k) = self.file.keys().next() {
            return Err(Error::Config(format!("{}: unknown config key '{k}'", self.command)));
        }
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut out = format!("# kae {}\n", self.command);
        for (k, v) in &self.resolved {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_text(path, &self.render())
    }
}

/// Comma-separated list such as `2,4,8`.
pub fn parse_list(key: &str, s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|t| t.trim())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<usize>().map_err(|e| Error::Config(format!("{key}: '{t}' is not a count: {e}"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blanks() {
        let m = parse("# run\n\nheads = 8   # fewer\nlr=0.01\n").unwrap();
        assert_eq!(m["heads"], "8");
        assert_eq!(m["lr"], "0.01");
        assert!(parse("heads 8").is_err());
        assert!(parse("a = 1\na = 2").is_err());
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let mut r = Resolver::new("train", None).unwrap();
        r.file = parse("heads = 8\nepochs = 3").unwrap();
        assert_eq!(r.get("heads", Some(4usize), 32).unwrap(), 4);
        assert_eq!(r.get("epochs", None, 700usize).unwrap(), 3);
        assert_eq!(r.get("batch", None, 32usize).unwrap(), 32);
        r.finish().unwrap();
        assert_eq!(r.render(), "# kae train\nheads = 4\nepochs = 3\nbatch = 32\n");
    }

    #[test]
    fn rendered_config_round_trips() {
        let mut r = Resolver::new("train", None).unwrap();
        r.get("lr", None, 1e-3f64).unwrap();
        r.get("x", Some(0.1 + 0.2), 0.0f64).unwrap();
        let m = parse(&r.render()).unwrap();
        assert_eq!(m["x"].parse::<f64>().unwrap(), 0.1 + 0.2);
        assert_eq!(m["lr"].parse::<f64>().unwrap(), 1e-3);
    }

    #[test]
    fn unknown_and_bad_keys_are_config_errors() {
        let mut r = Resolver::new("eig", None).unwrap();
        r.file = parse("hedas = 3").unwrap();
        assert!(matches!(r.finish(), Err(Error::Config(_))));
        let mut r = Resolver::new("eig", None).unwrap();
        r.file = parse("heads = many").unwrap();
        assert!(matches!(r.get("heads", None, 1usize), Err(Error::Config(_))));
        assert_eq!(parse_list("heads", "2, 4,8").unwrap(), vec![2, 4, 8]);
        assert!(parse_list("heads", "2,x").is_err());
    }
}
