//! UCF101-style split lists and the dataset directory layout.
//!
//! `classInd.txt` holds `id name` lines with 1-based ids. A split list holds
//! `relative_path label` lines with the same 1-based labels; the label may be
//! omitted (as in the official test lists), in which case it is taken from
//! the class directory in the path. Labels are 0-based in memory.

use super::mvt::{read_mv_clip, MvClip};
use crate::error::{Error, IoContext, Result};
use std::collections::HashSet;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub video_id: String,
    pub label: usize,
    pub relative_path: String,
}

impl ManifestEntry {
    /// The id is the file stem of the relative path.
    pub fn new(relative_path: impl Into<String>, label: usize) -> Self {
        let relative_path = relative_path.into();
        let video_id = Path::new(&relative_path)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| relative_path.clone());
        Self { video_id, label, relative_path }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitManifest {
    pub split_name: String,
    pub class_names: Vec<String>,
    pub entries: Vec<ManifestEntry>,
}

impl SplitManifest {
    pub fn new(split_name: impl Into<String>, class_names: Vec<String>, entries: Vec<ManifestEntry>) -> Result<Self> {
        let m = Self { split_name: split_name.into(), class_names, entries };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.class_names.len();
        let mut ids = HashSet::new();
        for e in &self.entries {
            if e.label >= c {
                return Err(Error::InvalidArgument(format!("label {} of `{}` is not below {c}", e.label, e.video_id)));
            }
            if !ids.insert(e.video_id.as_str()) {
                return Err(Error::DuplicateId(e.video_id.clone()));
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.label).collect()
    }

    pub fn parse(text: &str, class_names: Vec<String>, split_name: &str, path: &Path) -> Result<Self> {
        let malformed = |line: usize, detail: String| Error::Malformed {
            path: path.to_path_buf(),
            detail: format!("line {line}: {detail}"),
        };
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let rel = parts.next().unwrap_or_default();
            let label = match parts.next() {
                Some(l) => {
                    let l: usize = l.parse().map_err(|_| malformed(i + 1, format!("bad label `{l}`")))?;
                    if l == 0 || l > class_names.len() {
                        return Err(malformed(i + 1, format!("label {l} outside 1..={}", class_names.len())));
                    }
                    l - 1
                }
                None => {
                    let dir = rel.split('/').next().unwrap_or_default();
                    class_names
                        .iter()
                        .position(|c| c == dir)
                        .ok_or_else(|| malformed(i + 1, format!("no label and `{dir}` is not a class")))?
                }
            };
            if parts.next().is_some() {
                return Err(malformed(i + 1, "expected `relative_path [label]`".into()));
            }
            entries.push(ManifestEntry::new(rel, label));
        }
        Self::new(split_name, class_names, entries)
            .map_err(|e| Error::Malformed { path: path.to_path_buf(), detail: e.to_string() })
    }

    pub fn to_list_text(&self) -> String {
        self.entries.iter().map(|e| format!("{} {}\n", e.relative_path, e.label + 1)).collect()
    }

    pub fn read(list_path: &Path, class_names: Vec<String>, split_name: &str) -> Result<Self> {
        let text = std::fs::read_to_string(list_path).at(list_path)?;
        Self::parse(&text, class_names, split_name, list_path)
    }

    pub fn write(&self, list_path: &Path) -> Result<()> {
        super::write_atomic(list_path, self.to_list_text().as_bytes())
    }
}

pub fn parse_class_index(text: &str, path: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (id, name) = line.split_once(char::is_whitespace).ok_or_else(|| Error::Malformed {
            path: path.to_path_buf(),
            detail: format!("line {}: expected `id name`", i + 1),
        })?;
        if id.parse::<usize>().ok() != Some(names.len() + 1) {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                detail: format!("line {}: class ids must run 1, 2, 3, ... (found `{id}`)", i + 1),
            });
        }
        names.push(name.trim().to_string());
    }
    if names.is_empty() {
        return Err(Error::Malformed { path: path.to_path_buf(), detail: "no classes".into() });
    }
    Ok(names)
}

pub fn class_index_text(names: &[String]) -> String {
    names.iter().enumerate().map(|(i, n)| format!("{} {n}\n", i + 1)).collect()
}

/// Where a dataset keeps its files:
///
/// ```text
/// root/classInd.txt
/// root/trainlist.txt, root/testlist.txt
/// root/mv/<video_id>.mvt
/// root/frames/<video_id>/*.{png,jpg}
/// ```
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetLayout {
    pub root: PathBuf,
}

impl DatasetLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn class_index_path(&self) -> PathBuf {
        self.root.join("classInd.txt")
    }

    pub fn list_path(&self, split: &str) -> PathBuf {
        self.root.join(format!("{split}list.txt"))
    }

    pub fn mv_path(&self, video_id: &str) -> PathBuf {
        self.root.join("mv").join(format!("{video_id}.mvt"))
    }

    pub fn frames_dir(&self, video_id: &str) -> PathBuf {
        self.root.join("frames").join(video_id)
    }

    pub fn class_names(&self) -> Result<Vec<String>> {
        let p = self.class_index_path();
        parse_class_index(&std::fs::read_to_string(&p).at(&p)?, &p)
    }

    /// Loads `split` from its default list path, or from `list` if given.
    pub fn manifest(&self, split: &str, list: Option<&Path>) -> Result<SplitManifest> {
        let path = list.map(Path::to_path_buf).unwrap_or_else(|| self.list_path(split));
        SplitManifest::read(&path, self.class_names()?, split)
    }

    pub fn load_clip(&self, entry: &ManifestEntry) -> Result<MvClip> {
        let p = self.mv_path(&entry.video_id);
        if !p.exists() {
            return Err(Error::MissingVideo(entry.video_id.clone()));
        }
        read_mv_clip(&p, &entry.video_id, entry.label)
    }

    /// Frame images of a video in file-name order.
    pub fn frame_paths(&self, video_id: &str) -> Result<Vec<PathBuf>> {
        let dir = self.frames_dir(video_id);
        if !dir.is_dir() {
            return Err(Error::MissingVideo(video_id.to_string()));
        }
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
            .at(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
            })
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(Error::MissingVideo(video_id.to_string()));
        }
        Ok(paths)
    }
}

pub fn load_rgb(path: &Path) -> Result<image::RgbImage> {
    image::open(path).map(|i| i.to_rgb8()).map_err(|e| Error::Image { path: path.to_path_buf(), detail: e.to_string() })
}
