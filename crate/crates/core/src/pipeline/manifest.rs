//! Training/evaluation pair lists: one `hr<TAB>ref<TAB>level?` record per line.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Reference similarity label carried through to metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Level {
    XH,
    H,
    M,
    L,
    XL,
}

impl Level {
    pub fn parse(s: &str) -> Option<Level> {
        Some(match s {
            "XH" => Level::XH,
            "H" => Level::H,
            "M" => Level::M,
            "L" => Level::L,
            "XL" => Level::XL,
            _ => return None,
        })
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::XH => "XH",
            Level::H => "H",
            Level::M => "M",
            Level::L => "L",
            Level::XL => "XL",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord {
    pub hr_path: PathBuf,
    pub ref_path: PathBuf,
    pub level: Option<Level>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairManifest {
    pub records: Vec<PairRecord>,
}

impl PairManifest {
    /// Parses manifest text. Relative paths resolve against `base`; blank
    /// lines and `#` comments are skipped. Paths must exist.
    pub fn parse(text: &str, base: &Path, origin: &Path) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let bad = |msg: String| Error::Manifest { path: origin.to_path_buf(), line: i + 1, msg };
            let trimmed = line.trim_end_matches('\r');
            if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split('\t').collect();
            if !(2..=3).contains(&fields.len()) {
                return Err(bad(format!("expected 2 or 3 tab-separated fields, found {}", fields.len())));
            }
            let resolve = |p: &str| {
                let p = Path::new(p.trim());
                if p.is_absolute() {
                    p.to_path_buf()
                } else {
                    base.join(p)
                }
            };
            let hr_path = resolve(fields[0]);
            let ref_path = resolve(fields[1]);
            for p in [&hr_path, &ref_path] {
                if !p.is_file() {
                    return Err(bad(format!("{} does not exist", p.display())));
                }
            }
            let level = match fields.get(2).map(|s| s.trim()) {
                None | Some("") => None,
                Some(tag) => Some(Level::parse(tag).ok_or_else(|| bad(format!("unknown level `{tag}` (XH, H, M, L, XL)")))?),
            };
            records.push(PairRecord { hr_path, ref_path, level });
        }
        if records.is_empty() {
            return Err(Error::Manifest { path: origin.to_path_buf(), line: 0, msg: "no records".into() });
        }
        Ok(PairManifest { records })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")), path)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Zero-padded identifier of the `i`-th record, also the stem of its output files.
pub fn pair_id(i: usize) -> String {
    format!("{i:04}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_records() {
        let dir = tempfile::tempdir().unwrap();
        for f in ["a.png", "b.png"] {
            fs::write(dir.path().join(f), b"x").unwrap();
        }
        let text = "# pairs\na.png\tb.png\tXH\n\nb.png\ta.png\n";
        let m = PairManifest::parse(text, dir.path(), Path::new("m.tsv")).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.records[0].level, Some(Level::XH));
        assert_eq!(m.records[1].level, None);
        assert_eq!(m.records[1].ref_path, dir.path().join("a.png"));
    }

    #[test]
    fn rejects_malformed() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.png"), b"x").unwrap();
        let origin = Path::new("m.tsv");
        let err = PairManifest::parse("a.png\tmissing.png\n", dir.path(), origin).unwrap_err();
        assert!(matches!(err, Error::Manifest { line: 1, .. }));
        assert!(PairManifest::parse("a.png\ta.png\tQ\n", dir.path(), origin).is_err());
        assert!(PairManifest::parse("a.png a.png\n", dir.path(), origin).is_err());
        assert!(PairManifest::parse("# nothing\n", dir.path(), origin).is_err());
    }

    #[test]
    fn ids_are_padded() {
        assert_eq!(pair_id(7), "0007");
    }
}
