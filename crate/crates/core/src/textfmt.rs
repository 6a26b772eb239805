//! Line-oriented text container shared by environment and checkpoint files.
//!
//! ```text
//! # clp-lab env v1
//! key value ...
//! [section arg ...]
//! 0.25 0.75
//! ```
//!
//! Header lines are `key value...` pairs before the first section. Section
//! bodies are rows of whitespace-separated numbers. Floats are written with
//! Rust's shortest round-trip formatting, so parsing restores every value
//! bit-for-bit.

use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Section {
    pub name: String,
    pub args: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Section {
    pub fn new(name: impl Into<String>, args: Vec<String>) -> Self {
        Self { name: name.into(), args, rows: Vec::new() }
    }

    /// All rows concatenated.
    pub fn flat(&self) -> Vec<f64> {
        self.rows.concat()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TextDoc {
    pub magic: String,
    pub header: Vec<(String, Vec<String>)>,
    pub sections: Vec<Section>,
}

impl TextDoc {
    pub fn new(magic: impl Into<String>) -> Self {
        Self { magic: magic.into(), ..Default::default() }
    }

    pub fn push_header(&mut self, key: &str, values: impl IntoIterator<Item = impl ToString>) {
        self.header.push((key.to_string(), values.into_iter().map(|v| v.to_string()).collect()));
    }

    pub fn header_values(&self, key: &str) -> Result<&[String]> {
        self.header
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| parse_err(0, format!("missing header key `{key}`")))
    }

    pub fn header_value<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let vals = self.header_values(key)?;
        let first = vals.first().ok_or_else(|| parse_err(0, format!("empty header key `{key}`")))?;
        first.parse().map_err(|_| parse_err(0, format!("bad value `{first}` for `{key}`")))
    }

    pub fn section(&self, name: &str) -> Result<&Section> {
        self.sections
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| parse_err(0, format!("missing section [{name}]")))
    }

    pub fn sections_named<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a Section> + 'a {
        self.sections.iter().filter(move |s| s.name == name)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        writeln!(out, "# {}", self.magic).unwrap();
        for (k, vs) in &self.header {
            writeln!(out, "{k} {}", vs.join(" ")).unwrap();
        }
        for s in &self.sections {
            if s.args.is_empty() {
                writeln!(out, "[{}]", s.name).unwrap();
            } else {
                writeln!(out, "[{} {}]", s.name, s.args.join(" ")).unwrap();
            }
            for row in &s.rows {
                let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
                writeln!(out, "{}", cells.join(" ")).unwrap();
            }
        }
        out
    }

    pub fn parse(text: &str, expected_magic: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let magic = loop {
            match lines.next() {
                Some((_, l)) if l.trim().is_empty() => continue,
                Some((i, l)) => {
                    let m = l.trim().strip_prefix('#').map(str::trim).unwrap_or("");
                    if m != expected_magic {
                        return Err(parse_err(i + 1, format!("expected `# {expected_magic}`, found `{l}`")));
                    }
                    break m.to_string();
                }
                None => return Err(parse_err(0, "empty document")),
            }
        };
        let mut doc = TextDoc::new(magic);
        for (i, raw) in lines {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(inner) = line.strip_prefix('[') {
                let inner = inner
                    .strip_suffix(']')
                    .ok_or_else(|| parse_err(i + 1, "unterminated section header"))?;
                let mut parts = inner.split_whitespace();
                let name = parts.next().ok_or_else(|| parse_err(i + 1, "empty section name"))?;
                doc.sections.push(Section::new(name, parts.map(str::to_string).collect()));
            } else if let Some(sec) = doc.sections.last_mut() {
                let row = line
                    .split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|_| parse_err(i + 1, format!("bad number `{t}`"))))
                    .collect::<Result<Vec<_>>>()?;
                sec.rows.push(row);
            } else {
                let mut parts = line.split_whitespace();
                let key = parts.next().unwrap_or_default().to_string();
                doc.header.push((key, parts.map(str::to_string).collect()));
            }
        }
        Ok(doc)
    }
}

pub(crate) fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_parse_is_exact() {
        let mut doc = TextDoc::new("demo v1");
        doc.push_header("dims", [3, 4]);
        let mut s = Section::new("values", vec!["x".into()]);
        s.rows.push(vec![0.1, 1.0 / 3.0, -2.5e-300, 7.0]);
        doc.sections.push(s);
        let back = TextDoc::parse(&doc.render(), "demo v1").unwrap();
        assert_eq!(back, doc);
    }

    #[test]
    fn wrong_magic_is_rejected() {
        assert!(TextDoc::parse("# other v1\n", "demo v1").is_err());
    }
}
