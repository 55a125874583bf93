//! Flat `key=value` configuration text with section prefixes
//! (`walk.walk_length=9`, `model.hidden=64`).

use std::fmt::Display;
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected key=value, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("bad value {value:?} for {key}: {msg}")]
    Value { key: String, value: String, msg: String },
}

/// A configuration settable from string pairs and listable back to them.
pub trait KvConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError>;
    fn entries(&self) -> Vec<(String, String)>;

    /// Applies every pair whose key starts with `section.`; others are
    /// ignored.
    fn apply_section(&mut self, section: &str, pairs: &[(String, String)]) -> Result<(), ConfigError> {
        let prefix = format!("{section}.");
        for (k, v) in pairs {
            if let Some(rest) = k.strip_prefix(&prefix) {
                self.set(rest, v).map_err(|e| match e {
                    ConfigError::UnknownKey(_) => ConfigError::UnknownKey(k.clone()),
                    other => other,
                })?;
            }
        }
        Ok(())
    }

    fn render(&self, section: &str) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{section}.{k}={v}\n")).collect()
    }
}

/// Parses `key=value` lines. Blank lines and lines starting with `#` are
/// skipped; whitespace around keys and values is trimmed.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError::Syntax { line: i + 1, text: raw.to_string() });
        };
        let k = k.trim();
        if k.is_empty() {
            return Err(ConfigError::Syntax { line: i + 1, text: raw.to_string() });
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Value { key: key.to_string(), value: value.to_string(), msg: e.to_string() })
}

/// Implements [`KvConfig`] over plain fields whose types are `FromStr +
/// Display`.
macro_rules! kv_config {
    ($ty:ty { $($field:ident),* $(,)? }) => {
        impl $crate::config::KvConfig for $ty {
            fn set(&mut self, key: &str, value: &str) -> Result<(), $crate::config::ConfigError> {
                match key {
                    $(stringify!($field) => self.$field = $crate::config::parse_value(key, value)?,)*
                    _ => return Err($crate::config::ConfigError::UnknownKey(key.to_string())),
                }
                Ok(())
            }

            fn entries(&self) -> Vec<(String, String)> {
                vec![$((stringify!($field).to_string(), self.$field.to_string()),)*]
            }
        }
    };
}
pub(crate) use kv_config;

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Default, PartialEq)]
    struct Demo {
        a: usize,
        b: f64,
        c: bool,
    }
    kv_config!(Demo { a, b, c });

    #[test]
    fn sections_and_round_trip() {
        let pairs = parse_kv("# comment\n demo.a = 3\nother.a=9\n\ndemo.b=0.1\ndemo.c=true\n").unwrap();
        let mut d = Demo::default();
        d.apply_section("demo", &pairs).unwrap();
        assert_eq!(d, Demo { a: 3, b: 0.1, c: true });
        let mut back = Demo::default();
        back.apply_section("demo", &parse_kv(&d.render("demo")).unwrap()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn errors() {
        assert!(matches!(parse_kv("novalue"), Err(ConfigError::Syntax { line: 1, .. })));
        let mut d = Demo::default();
        assert_eq!(d.set("zz", "1"), Err(ConfigError::UnknownKey("zz".into())));
        assert!(matches!(d.set("a", "-1"), Err(ConfigError::Value { .. })));
        let e = d.apply_section("demo", &[("demo.q".into(), "1".into())]).unwrap_err();
        assert_eq!(e, ConfigError::UnknownKey("demo.q".into()));
    }
}
