//! Flat key=value configuration with section headers.
//!
//! Format: `[section]` headers group plain `key = value` lines; `#` starts a
//! comment; blank lines are ignored. Keys are addressed as `section.key`.
//! Every key consumed by an experiment is tracked, and any leftover key is
//! rejected as unknown, so a config cannot silently misspell a knob.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(n) => write!(f, "config line {}: {}", n, self.message),
            None => write!(f, "config: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn err(line: Option<usize>, message: impl Into<String>) -> ConfigError {
    ConfigError {
        line,
        message: message.into(),
    }
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: Option<usize>,
    consumed: bool,
}

/// Parsed configuration plus consumption tracking and an echo of every
/// resolved value (including defaults) for the run manifest.
#[derive(Debug, Clone, Default)]
pub struct Config {
    entries: BTreeMap<String, Entry>,
    resolved: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| err(Some(line_no), "unterminated section header"))?
                    .trim();
                if name.is_empty() {
                    return Err(err(Some(line_no), "empty section name"));
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(Some(line_no), format!("expected key = value, got {line:?}")))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(err(Some(line_no), "empty key"));
            }
            if section.is_empty() {
                return Err(err(
                    Some(line_no),
                    format!("key {key:?} before any [section] header"),
                ));
            }
            let full = format!("{section}.{key}");
            if entries.contains_key(&full) {
                return Err(err(Some(line_no), format!("duplicate key {full}")));
            }
            entries.insert(
                full,
                Entry {
                    value: value.trim().to_string(),
                    line: Some(line_no),
                    consumed: false,
                },
            );
        }
        Ok(Config {
            entries,
            resolved: BTreeMap::new(),
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| err(None, format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Insert or overwrite a value, e.g. from a CLI flag. Overrides count as
    /// already-provided config and are subject to the same consumption check.
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(
            key.to_string(),
            Entry {
                value: value.into(),
                line: None,
                consumed: false,
            },
        );
    }

    fn take(&mut self, key: &str) -> Option<(String, Option<usize>)> {
        self.entries.get_mut(key).map(|e| {
            e.consumed = true;
            (e.value.clone(), e.line)
        })
    }

    fn record(&mut self, key: &str, shown: &str) {
        self.resolved.insert(key.to_string(), shown.to_string());
    }

    pub fn get_str(&mut self, key: &str, default: &str) -> String {
        let v = match self.take(key) {
            Some((v, _)) => v,
            None => default.to_string(),
        };
        self.record(key, &v);
        v
    }

    pub fn get_opt_str(&mut self, key: &str) -> Option<String> {
        let v = self.take(key).map(|(v, _)| v);
        if let Some(ref s) = v {
            self.record(key, s);
        }
        v
    }

    pub fn get_f64(&mut self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.take(key) {
            Some((v, line)) => {
                let parsed = v
                    .parse::<f64>()
                    .map_err(|_| err(line, format!("{key}: expected a number, got {v:?}")))?;
                self.record(key, &v);
                Ok(parsed)
            }
            None => {
                self.record(key, &format!("{default}"));
                Ok(default)
            }
        }
    }

    pub fn get_opt_f64(&mut self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.take(key) {
            Some((v, line)) => {
                let parsed = v
                    .parse::<f64>()
                    .map_err(|_| err(line, format!("{key}: expected a number, got {v:?}")))?;
                self.record(key, &v);
                Ok(Some(parsed))
            }
            None => Ok(None),
        }
    }

    pub fn get_usize(&mut self, key: &str, default: usize) -> Result<usize, ConfigError> {
        match self.take(key) {
            Some((v, line)) => {
                let parsed = v.parse::<usize>().map_err(|_| {
                    err(
                        line,
                        format!("{key}: expected a nonnegative integer, got {v:?}"),
                    )
                })?;
                self.record(key, &v);
                Ok(parsed)
            }
            None => {
                self.record(key, &format!("{default}"));
                Ok(default)
            }
        }
    }

    pub fn get_u64(&mut self, key: &str, default: u64) -> Result<u64, ConfigError> {
        match self.take(key) {
            Some((v, line)) => {
                let parsed = v
                    .parse::<u64>()
                    .map_err(|_| err(line, format!("{key}: expected an integer, got {v:?}")))?;
                self.record(key, &v);
                Ok(parsed)
            }
            None => {
                self.record(key, &format!("{default}"));
                Ok(default)
            }
        }
    }

    /// Error if any provided key was never consumed by the experiment.
    pub fn reject_unknown(&self) -> Result<(), ConfigError> {
        for (key, entry) in &self.entries {
            if !entry.consumed {
                return Err(err(entry.line, format!("unknown key {key}")));
            }
        }
        Ok(())
    }

    /// Deterministic echo of every resolved key (defaults included), one
    /// `key = value` per line, sorted by key.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.resolved {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_comments_and_values() {
        let mut c =
            Config::parse("# top comment\n[run]\nseed = 7  # trailing\n\n[grid]\nn_space = 64\n")
                .unwrap();
        assert_eq!(c.get_u64("run.seed", 42).unwrap(), 7);
        assert_eq!(c.get_usize("grid.n_space", 128).unwrap(), 64);
        c.reject_unknown().unwrap();
    }

    #[test]
    fn unknown_key_rejected_with_line() {
        let mut c = Config::parse("[run]\nseed = 7\nbogus = 1\n").unwrap();
        let _ = c.get_u64("run.seed", 42).unwrap();
        let e = c.reject_unknown().unwrap_err();
        assert_eq!(e.line, Some(3));
        assert!(e.message.contains("run.bogus"));
    }

    #[test]
    fn defaults_recorded_in_echo() {
        let mut c = Config::parse("[grid]\nn_space = 32\n").unwrap();
        let _ = c.get_usize("grid.n_space", 128).unwrap();
        let _ = c.get_f64("grid.horizon", 0.1).unwrap();
        let echo = c.echo();
        assert!(echo.contains("grid.n_space = 32"));
        assert!(echo.contains("grid.horizon = 0.1"));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        assert_eq!(Config::parse("[run\n").unwrap_err().line, Some(1));
        assert_eq!(Config::parse("[a]\nnovalue\n").unwrap_err().line, Some(2));
        assert_eq!(Config::parse("orphan = 1\n").unwrap_err().line, Some(1));
        assert_eq!(
            Config::parse("[a]\nk = 1\nk = 2\n").unwrap_err().line,
            Some(3)
        );
    }

    #[test]
    fn bad_number_is_an_error() {
        let mut c = Config::parse("[grid]\nhorizon = abc\n").unwrap();
        let e = c.get_f64("grid.horizon", 0.1).unwrap_err();
        assert_eq!(e.line, Some(2));
    }

    #[test]
    fn cli_override_wins() {
        let mut c = Config::parse("[run]\nseed = 7\n").unwrap();
        c.set("run.seed", "99");
        assert_eq!(c.get_u64("run.seed", 42).unwrap(), 99);
    }
}
