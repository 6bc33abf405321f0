//! Line-oriented `key = value` files with `#` comments and no nesting.
//!
//! Used for run configs, geometry sidecars and the manifests that accompany
//! phantom and eigenspace directories.

use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

pub fn parse(text: &str) -> Result<Vec<Entry>> {
    let mut entries = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let content = content.trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
            line,
            message: format!("expected `key = value`, found `{content}`"),
        })?;
        let key = key.trim();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(Error::Config {
                line,
                message: format!("invalid key `{key}`"),
            });
        }
        if entries.iter().any(|e: &Entry| e.key == key) {
            return Err(Error::Config {
                line,
                message: format!("duplicate key `{key}`"),
            });
        }
        entries.push(Entry {
            line,
            key: key.to_string(),
            value: value.trim().to_string(),
        });
    }
    Ok(entries)
}

pub fn read(path: impl AsRef<Path>) -> Result<Vec<Entry>> {
    let text = fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
    parse(&text)
}

impl Entry {
    pub fn parse<T>(&self) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.value.parse::<T>().map_err(|e| Error::Config {
            line: self.line,
            message: format!("`{}`: cannot parse `{}`: {e}", self.key, self.value),
        })
    }

    pub fn parse_list<T>(&self) -> Result<Vec<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.value
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<T>().map_err(|e| Error::Config {
                    line: self.line,
                    message: format!("`{}`: cannot parse `{s}`: {e}", self.key),
                })
            })
            .collect()
    }

    pub fn error(&self, message: impl Into<String>) -> Error {
        Error::Config {
            line: self.line,
            message: format!("`{}`: {}", self.key, message.into()),
        }
    }
}

/// Looks up a required key in a machine-written file such as a manifest.
pub fn require<'a>(entries: &'a [Entry], key: &str) -> Result<&'a Entry> {
    entries
        .iter()
        .find(|e| e.key == key)
        .ok_or_else(|| Error::Format(format!("missing key `{key}`")))
}

/// Accumulates `key = value` lines for writing.
#[derive(Default)]
pub struct Writer {
    text: String,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn comment(&mut self, text: &str) -> &mut Self {
        self.text.push_str("# ");
        self.text.push_str(text);
        self.text.push('\n');
        self
    }

    pub fn entry(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.text.push_str(&format!("{key} = {value}\n"));
        self
    }

    pub fn finish(&self) -> &str {
        &self.text
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path.as_ref(), &self.text).map_err(|e| Error::io(path, e))
    }
}
