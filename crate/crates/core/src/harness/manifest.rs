//! Line-oriented dataset manifests.
//!
//! ```text
//! split train
//! paired src/a001.vcf tgt/a001.vcf
//! source src/a002.vcf
//! target tgt/a003.vcf
//! split test
//! paired src/b001.vcf tgt/b001.vcf
//! ```
//!
//! `split <name>` applies to every following entry. Relative paths resolve
//! against the manifest's directory. The prompt of an entry is its file
//! stem.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "valid" | "dev" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::input(format!("unknown split `{other}`"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Entry {
    Paired { source: PathBuf, target: PathBuf },
    Source(PathBuf),
    Target(PathBuf),
}

impl Entry {
    pub fn paths(&self) -> Vec<&Path> {
        match self {
            Entry::Paired { source, target } => vec![source, target],
            Entry::Source(p) | Entry::Target(p) => vec![p],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub entry: Entry,
    pub split: Split,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

pub fn prompt_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

impl DatasetManifest {
    /// Parses and validates manifest text; relative paths are joined to
    /// `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut split = Split::Train;
        let mut entries = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::input(format!("manifest line {}: malformed entry `{line}`", no + 1));
            let resolve = |p: &str| {
                let p = Path::new(p);
                if p.is_absolute() {
                    p.to_path_buf()
                } else {
                    base.join(p)
                }
            };
            let entry = match toks.as_slice() {
                ["split", name] => {
                    split = name
                        .parse()
                        .map_err(|e: Error| Error::input(format!("manifest line {}: {e}", no + 1)))?;
                    continue;
                }
                ["paired", s, t] => Entry::Paired {
                    source: resolve(s),
                    target: resolve(t),
                },
                ["source", p] => Entry::Source(resolve(p)),
                ["target", p] => Entry::Target(resolve(p)),
                _ => return Err(bad()),
            };
            entries.push(ManifestEntry { entry, split });
        }
        let m = DatasetManifest { entries };
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::input(format!("cannot read manifest {}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Text form with paths relative to `base` where possible.
    pub fn to_text(&self, base: &Path) -> String {
        let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
        let mut out = String::new();
        let mut current = None;
        for e in &self.entries {
            if current != Some(e.split) {
                out.push_str(&format!("split {}\n", e.split));
                current = Some(e.split);
            }
            match &e.entry {
                Entry::Paired { source, target } => {
                    out.push_str(&format!("paired {} {}\n", rel(source), rel(target)))
                }
                Entry::Source(p) => out.push_str(&format!("source {}\n", rel(p))),
                Entry::Target(p) => out.push_str(&format!("target {}\n", rel(p))),
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text(path.parent().unwrap_or(Path::new("."))))?;
        Ok(())
    }

    /// No file in two splits; no prompt both source-only and target-only.
    pub fn validate(&self) -> Result<()> {
        let mut split_of: HashMap<&Path, Split> = HashMap::new();
        for e in &self.entries {
            for p in e.entry.paths() {
                if let Some(prev) = split_of.insert(p, e.split) {
                    if prev != e.split {
                        return Err(Error::input(format!(
                            "{} appears in both the {prev} and {} splits",
                            p.display(),
                            e.split
                        )));
                    }
                }
            }
        }
        let sources: HashSet<String> = self
            .entries
            .iter()
            .filter_map(|e| match &e.entry {
                Entry::Source(p) => Some(prompt_of(p)),
                _ => None,
            })
            .collect();
        for e in &self.entries {
            if let Entry::Target(p) = &e.entry {
                let prompt = prompt_of(p);
                if sources.contains(&prompt) {
                    return Err(Error::input(format!(
                        "prompt `{prompt}` appears in both source-only and target-only entries"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn paired(&self, split: Split) -> Vec<(&Path, &Path)> {
        self.entries
            .iter()
            .filter(|e| e.split == split)
            .filter_map(|e| match &e.entry {
                Entry::Paired { source, target } => Some((source.as_path(), target.as_path())),
                _ => None,
            })
            .collect()
    }

    pub fn source_only(&self, split: Split) -> Vec<&Path> {
        self.entries
            .iter()
            .filter(|e| e.split == split)
            .filter_map(|e| match &e.entry {
                Entry::Source(p) => Some(p.as_path()),
                _ => None,
            })
            .collect()
    }

    pub fn target_only(&self, split: Split) -> Vec<&Path> {
        self.entries
            .iter()
            .filter(|e| e.split == split)
            .filter_map(|e| match &e.entry {
                Entry::Target(p) => Some(p.as_path()),
                _ => None,
            })
            .collect()
    }

    /// Number of training utterances, counting a pair once.
    pub fn train_utterances(&self) -> usize {
        self.entries.iter().filter(|e| e.split == Split::Train).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_splits_and_resolves_paths() {
        let text = "# corpus\npaired s/a.vcf t/a.vcf\nsource s/b.vcf\nsplit test\npaired s/c.vcf /abs/t/c.vcf\n";
        let m = DatasetManifest::parse(text, Path::new("/data")).unwrap();
        assert_eq!(m.entries.len(), 3);
        assert_eq!(m.paired(Split::Train), vec![(Path::new("/data/s/a.vcf"), Path::new("/data/t/a.vcf"))]);
        assert_eq!(m.source_only(Split::Train), vec![Path::new("/data/s/b.vcf")]);
        assert_eq!(m.paired(Split::Test)[0].1, Path::new("/abs/t/c.vcf"));
        let again = DatasetManifest::parse(&m.to_text(Path::new("/data")), Path::new("/data")).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn rejects_overlaps_and_garbage() {
        let base = Path::new("/d");
        assert!(DatasetManifest::parse("paired a.vcf b.vcf\nsplit test\nsource a.vcf\n", base).is_err());
        let err = DatasetManifest::parse("source s/p01.vcf\ntarget t/p01.vcf\n", base).unwrap_err();
        assert!(err.to_string().contains("p01"));
        assert!(DatasetManifest::parse("paired only_one.vcf\n", base).is_err());
        assert!(DatasetManifest::parse("split holdout\n", base).is_err());
        assert!(DatasetManifest::parse("source s/p01.vcf\ntarget t/p02.vcf\n", base).is_ok());
    }
}
