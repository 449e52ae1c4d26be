//! Line-oriented `section.key = value` configuration text.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub section: String,
    pub key: String,
    pub value: String,
    pub line: usize,
}

impl Entry {
    pub fn name(&self) -> String {
        format!("{}.{}", self.section, self.key)
    }

    fn fail(&self, doc: &KvDocument, message: impl Into<String>) -> Error {
        Error::config(
            format!("{}:{} {}", doc.path.display(), self.line, self.name()),
            message,
        )
    }
}

/// Entries in file order. Keys are unique; `#` starts a comment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KvDocument {
    path: PathBuf,
    entries: Vec<Entry>,
}

impl KvDocument {
    pub fn parse(text: &str, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut entries: Vec<Entry> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let here = || format!("{}:{line}", path.display());
            let (lhs, value) = body
                .split_once('=')
                .ok_or_else(|| Error::config(here(), "expected `section.key = value`"))?;
            let (section, key) = lhs
                .trim()
                .split_once('.')
                .ok_or_else(|| Error::config(here(), format!("key `{}` has no section", lhs.trim())))?;
            let (section, key) = (section.trim(), key.trim());
            let valid = |s: &str| {
                !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || "_-.".contains(c))
            };
            if !valid(section) || !valid(key) {
                return Err(Error::config(here(), format!("malformed key `{}`", lhs.trim())));
            }
            if let Some(prev) = entries.iter().find(|e| e.section == section && e.key == key) {
                return Err(Error::config(
                    here(),
                    format!("`{section}.{key}` already set on line {}", prev.line),
                ));
            }
            entries.push(Entry {
                section: section.to_string(),
                key: key.to_string(),
                value: value.trim().to_string(),
                line,
            });
        }
        Ok(Self { path, entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::config(path.display().to_string(), format!("cannot read config: {e}"))
        })?;
        Self::parse(&text, path)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn section<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a Entry> + 'a {
        self.entries.iter().filter(move |e| e.section == name)
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.section == section && e.key == key)
    }

    /// Reject sections outside `sections` and, for each listed section with
    /// a key list, keys outside it. `None` accepts any key.
    pub fn check_known(&self, sections: &[(&str, Option<&[&str]>)]) -> Result<()> {
        for e in &self.entries {
            match sections.iter().find(|(s, _)| *s == e.section) {
                None => return Err(e.fail(self, format!("unknown section `{}`", e.section))),
                Some((_, Some(keys))) if !keys.contains(&e.key.as_str()) => {
                    return Err(e.fail(self, "unknown key"))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn error(&self, section: &str, key: &str, message: impl Into<String>) -> Error {
        match self.get(section, key) {
            Some(e) => e.fail(self, message),
            None => Error::config(format!("{} {section}.{key}", self.path.display()), message),
        }
    }

    pub fn require(&self, section: &str, key: &str) -> Result<&Entry> {
        self.get(section, key)
            .ok_or_else(|| self.error(section, key, "required key is missing"))
    }

    pub fn parse_value<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.get(section, key)
            .map(|e| {
                e.value
                    .parse::<T>()
                    .map_err(|err| e.fail(self, format!("cannot parse `{}`: {err}", e.value)))
            })
            .transpose()
    }

    pub fn value_or<T: FromStr>(&self, section: &str, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.parse_value(section, key)?.unwrap_or(default))
    }

    pub fn required<T: FromStr>(&self, section: &str, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.require(section, key)?;
        Ok(self.parse_value(section, key)?.expect("checked"))
    }

    /// Comma-separated list value.
    pub fn list<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        self.get(section, key)
            .map(|e| {
                e.value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse::<T>()
                            .map_err(|err| e.fail(self, format!("cannot parse `{s}`: {err}")))
                    })
                    .collect()
            })
            .transpose()
    }

    pub fn bool_or(&self, section: &str, key: &str, default: bool) -> Result<bool> {
        match self.get(section, key) {
            None => Ok(default),
            Some(e) => match e.value.to_ascii_lowercase().as_str() {
                "true" | "yes" | "on" | "1" => Ok(true),
                "false" | "no" | "off" | "0" => Ok(false),
                v => Err(e.fail(self, format!("`{v}` is not a boolean"))),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_in_order_with_comments() {
        let d = KvDocument::parse(
            "# top\nlayer.b = MLP(3,4)\nlayer.a = FC(4,2) # tail\n\ntrain.epochs=3\n",
            "x.cfg",
        )
        .unwrap();
        let keys: Vec<_> = d.section("layer").map(|e| e.key.as_str()).collect();
        assert_eq!(keys, ["b", "a"]);
        assert_eq!(d.required::<usize>("train", "epochs").unwrap(), 3);
        assert_eq!(d.get("layer", "a").unwrap().line, 3);
    }

    #[test]
    fn errors_are_config_errors() {
        assert!(KvDocument::parse("nonsense", "x").unwrap_err().is_config());
        assert!(KvDocument::parse("a = 1", "x").unwrap_err().is_config());
        assert!(KvDocument::parse("a.b = 1\na.b = 2", "x").unwrap_err().is_config());
        let d = KvDocument::parse("train.epochs = many\nfoo.bar = 1", "x").unwrap();
        assert!(d.parse_value::<usize>("train", "epochs").unwrap_err().is_config());
        let err = d.check_known(&[("train", Some(&["epochs"][..]))]).unwrap_err();
        assert!(err.to_string().contains("foo"));
    }

    #[test]
    fn lists_and_bools() {
        let d = KvDocument::parse("p.sizes = 512, 128 ,32\np.on = yes", "x").unwrap();
        assert_eq!(d.list::<usize>("p", "sizes").unwrap().unwrap(), vec![512, 128, 32]);
        assert!(d.bool_or("p", "on", false).unwrap());
        assert!(!d.bool_or("p", "off", false).unwrap());
    }
}
