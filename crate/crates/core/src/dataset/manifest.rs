use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use super::storage::{io_err, read_record, read_sequence, StorageError};
use super::{parse_sequence_key, GaitSequence, Modality, SequenceMeta};

pub const INDEX_FILE: &str = "index.tsv";
pub const SPLITS_FILE: &str = "splits.tsv";

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("dataset root {0} not found")]
    RootNotFound(PathBuf),
    #[error("duplicate sequence key {0}")]
    DuplicateKey(String),
    #[error("sequence {0} has zero frames")]
    EmptySequence(String),
    #[error("{path}:{line}: {message}")]
    BadIndexLine {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Storage(#[from] StorageError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub meta: SequenceMeta,
    pub rel_path: PathBuf,
    pub frame_count: usize,
}

/// Index of the sequences stored under one dataset root, sorted by key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub root: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(root: impl Into<PathBuf>, mut entries: Vec<ManifestEntry>) -> Result<Self, ManifestError> {
        entries.sort_by_key(|e| e.meta.key());
        let mut seen = HashSet::new();
        for e in &entries {
            let key = e.meta.key();
            if e.frame_count == 0 {
                return Err(ManifestError::EmptySequence(key));
            }
            if !seen.insert(key.clone()) {
                return Err(ManifestError::DuplicateKey(key));
            }
        }
        Ok(Manifest {
            root: root.into(),
            entries,
        })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn find(&self, meta: &SequenceMeta) -> Option<&ManifestEntry> {
        let key = meta.key();
        self.entries
            .binary_search_by(|e| e.meta.key().cmp(&key))
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn subjects(&self) -> BTreeSet<String> {
        self.entries.iter().map(|e| e.meta.subject_id.clone()).collect()
    }

    pub fn modalities(&self) -> BTreeSet<Modality> {
        self.entries.iter().map(|e| e.meta.modality).collect()
    }

    /// Entries grouped by subject, in key order.
    pub fn by_subject(&self) -> BTreeMap<String, Vec<&ManifestEntry>> {
        let mut out: BTreeMap<String, Vec<&ManifestEntry>> = BTreeMap::new();
        for e in &self.entries {
            out.entry(e.meta.subject_id.clone()).or_default().push(e);
        }
        out
    }

    pub fn filter(&self, mut keep: impl FnMut(&ManifestEntry) -> bool) -> Manifest {
        Manifest {
            root: self.root.clone(),
            entries: self.entries.iter().filter(|e| keep(e)).cloned().collect(),
        }
    }

    pub fn with_subjects(&self, subjects: &BTreeSet<String>) -> Manifest {
        self.filter(|e| subjects.contains(&e.meta.subject_id))
    }

    pub fn load(&self, entry: &ManifestEntry) -> Result<GaitSequence, StorageError> {
        read_sequence(&self.root.join(&entry.rel_path))
    }

    pub fn index_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\n",
                e.meta.key(),
                e.rel_path.to_string_lossy(),
                e.frame_count
            ));
        }
        out
    }

    /// Writes `index.tsv` into the dataset root.
    pub fn write_index(&self) -> Result<PathBuf, ManifestError> {
        let path = self.root.join(INDEX_FILE);
        fs::write(&path, self.index_text()).map_err(io_err(&path))?;
        Ok(path)
    }

    pub fn read_index(root: &Path) -> Result<Manifest, ManifestError> {
        if !root.is_dir() {
            return Err(ManifestError::RootNotFound(root.to_path_buf()));
        }
        let path = root.join(INDEX_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let bad = |line: usize, message: String| ManifestError::BadIndexLine {
            path: path.clone(),
            line,
            message,
        };
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [key, rel, count] = fields[..] else {
                return Err(bad(i + 1, "expected 3 tab-separated fields".into()));
            };
            let meta = parse_sequence_key(key).map_err(|e| bad(i + 1, e.to_string()))?;
            let frame_count = count
                .parse()
                .map_err(|_| bad(i + 1, format!("bad frame count `{count}`")))?;
            entries.push(ManifestEntry {
                meta,
                rel_path: PathBuf::from(rel),
                frame_count,
            });
        }
        Manifest::new(root, entries)
    }
}

#[derive(Debug, Clone)]
pub struct ScanResult {
    pub manifest: Manifest,
    /// Directories that looked like sequences but could not be used.
    pub warnings: Vec<String>,
}

/// Walks `root` and indexes every sequence directory.
///
/// Directories whose path does not parse as a key, or whose metadata record
/// is unreadable, are reported in `warnings` and skipped.
pub fn scan_manifest(root: &Path) -> Result<ScanResult, ManifestError> {
    if !root.is_dir() {
        return Err(ManifestError::RootNotFound(root.to_path_buf()));
    }
    let mut entries = Vec::new();
    let mut warnings = Vec::new();
    let mut stack = vec![(PathBuf::new(), 0usize)];
    while let Some((rel, depth)) = stack.pop() {
        let dir = root.join(&rel);
        if depth == 4 {
            let key = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect::<Vec<_>>()
                .join("/");
            match index_one(&dir, &key) {
                Ok(frame_count) => entries.push(ManifestEntry {
                    meta: parse_sequence_key(&key).expect("checked in index_one"),
                    rel_path: rel,
                    frame_count,
                }),
                Err(msg) => {
                    log::warn!("skipping {}: {msg}", dir.display());
                    warnings.push(format!("{key}: {msg}"));
                }
            }
            continue;
        }
        let mut children: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(io_err(&dir))?
            .filter_map(|e| e.ok())
            .filter(|e| e.file_type().map(|t| t.is_dir()).unwrap_or(false))
            .map(|e| rel.join(e.file_name()))
            .collect();
        children.sort();
        for child in children.into_iter().rev() {
            stack.push((child, depth + 1));
        }
    }
    Ok(ScanResult {
        manifest: Manifest::new(root, entries)?,
        warnings,
    })
}

fn index_one(dir: &Path, key: &str) -> Result<usize, String> {
    parse_sequence_key(key).map_err(|e| e.to_string())?;
    let record = read_record(dir).map_err(|e| e.to_string())?;
    if record.key != key {
        return Err(format!("meta.json names `{}`", record.key));
    }
    if record.frames == 0 {
        return Err("zero frames".into());
    }
    Ok(record.frames)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Subject-to-split assignment stored next to the index as `splits.tsv`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SplitTable {
    pub subjects: BTreeMap<String, Split>,
}

impl SplitTable {
    pub fn subjects_in(&self, split: Split) -> BTreeSet<String> {
        self.subjects
            .iter()
            .filter(|(_, s)| **s == split)
            .map(|(id, _)| id.clone())
            .collect()
    }

    pub fn write(&self, root: &Path) -> Result<(), ManifestError> {
        let path = root.join(SPLITS_FILE);
        let text: String = self
            .subjects
            .iter()
            .map(|(id, s)| format!("{id}\t{}\n", s.name()))
            .collect();
        fs::write(&path, text).map_err(io_err(&path))?;
        Ok(())
    }

    pub fn read(root: &Path) -> Result<SplitTable, ManifestError> {
        let path = root.join(SPLITS_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let mut subjects = BTreeMap::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
            let split = match line.split_once('\t') {
                Some((id, "train")) => (id, Split::Train),
                Some((id, "test")) => (id, Split::Test),
                _ => {
                    return Err(ManifestError::BadIndexLine {
                        path: path.clone(),
                        line: i + 1,
                        message: "expected `<subject>\\t<train|test>`".into(),
                    })
                }
            };
            subjects.insert(split.0.to_string(), split.1);
        }
        Ok(SplitTable { subjects })
    }
}
