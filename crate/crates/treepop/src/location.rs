//! Source positions for paths into a TOML document.

use std::ops::Range;

use toml::de::{DeTable, DeValue};
use toml::Spanned;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum PathSeg {
    Key(String),
    Index(usize),
}

impl PathSeg {
    pub fn key(k: &str) -> Self {
        PathSeg::Key(k.to_string())
    }
}

/// 1-based line and column of byte offset `pos`.
pub(crate) fn line_col(text: &str, pos: usize) -> (usize, usize) {
    let pos = pos.min(text.len());
    let before = &text[..pos];
    let line = before.matches('\n').count() + 1;
    let start = before.rfind('\n').map_or(0, |i| i + 1);
    (line, before[start..].chars().count() + 1)
}

pub(crate) fn segments(path: &serde_ignored::Path<'_>) -> Vec<PathSeg> {
    use serde_ignored::Path;
    let mut out = Vec::new();
    let mut cur = path;
    loop {
        match cur {
            Path::Root => break,
            Path::Seq { parent, index } => {
                out.push(PathSeg::Index(*index));
                cur = parent;
            }
            Path::Map { parent, key } => {
                out.push(PathSeg::Key(key.clone()));
                cur = parent;
            }
            Path::Some { parent }
            | Path::NewtypeStruct { parent }
            | Path::NewtypeVariant { parent } => {
                cur = parent;
            }
        }
    }
    out.reverse();
    out
}

pub(crate) fn dotted(segs: &[PathSeg]) -> String {
    segs.iter()
        .map(|s| match s {
            PathSeg::Key(k) => k.clone(),
            PathSeg::Index(i) => i.to_string(),
        })
        .collect::<Vec<_>>()
        .join(".")
}

/// Spanned view of a document.
pub(crate) struct Locator<'a> {
    text: &'a str,
    root: Spanned<DeTable<'a>>,
}

impl<'a> Locator<'a> {
    pub fn new(text: &'a str) -> Result<Self, toml::de::Error> {
        Ok(Locator {
            text,
            root: DeTable::parse(text)?,
        })
    }

    /// Position of the deepest element of `path` that exists.
    pub fn locate(&self, path: &[PathSeg]) -> (usize, usize) {
        let span = self.span(path).unwrap_or(0..0);
        line_col(self.text, span.start)
    }

    fn span(&self, path: &[PathSeg]) -> Option<Range<usize>> {
        let mut best = None;
        let mut table = Some(self.root.get_ref());
        let mut value: Option<&DeValue<'a>> = None;
        for seg in path {
            match seg {
                PathSeg::Key(k) => {
                    let t = table.or(match value {
                        Some(DeValue::Table(t)) => Some(t),
                        _ => None,
                    })?;
                    let (key, v) = t
                        .iter()
                        .find(|(key, _)| key.get_ref().as_ref() == k.as_str())?;
                    best = Some(key.span());
                    value = Some(v.get_ref());
                    table = None;
                }
                PathSeg::Index(i) => {
                    let Some(DeValue::Array(a)) = value else {
                        return best;
                    };
                    let item = a.get(*i)?;
                    best = Some(item.span());
                    value = Some(item.get_ref());
                    table = None;
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positions() {
        let text = "a = 1\n[[b]]\nx = 2\n[[b]]\ny = 3\n";
        let loc = Locator::new(text).unwrap();
        assert_eq!(loc.locate(&[PathSeg::key("a")]), (1, 1));
        assert_eq!(
            loc.locate(&[PathSeg::key("b"), PathSeg::Index(1), PathSeg::key("y")]),
            (5, 1)
        );
        assert_eq!(line_col("ab\ncd", 4), (2, 2));
    }
}
