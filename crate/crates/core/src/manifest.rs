//! Dataset manifests: one scene per line as `scene_id<TAB>path<TAB>split`.
//!
//! Paths are relative to the manifest file. An optional header line
//! `# label_space <name>` names the label space the scenes are annotated in.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::io;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Manifest(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneEntry {
    pub scene_id: String,
    /// Path as written in the manifest (relative to `DatasetManifest::root`).
    pub path: PathBuf,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub label_space: String,
    pub scenes: Vec<SceneEntry>,
}

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>, label_space: impl Into<String>) -> Self {
        Self {
            root: root.into(),
            label_space: label_space.into(),
            scenes: Vec::new(),
        }
    }

    pub fn push(
        &mut self,
        scene_id: impl Into<String>,
        path: impl Into<PathBuf>,
        split: Split,
    ) -> Result<()> {
        let scene_id = scene_id.into();
        if scene_id.contains(['\t', '\n']) {
            return Err(Error::Manifest(format!(
                "scene id `{scene_id}` contains a tab or newline"
            )));
        }
        if self.scenes.iter().any(|s| s.scene_id == scene_id) {
            return Err(Error::Manifest(format!("scene `{scene_id}` listed twice")));
        }
        self.scenes.push(SceneEntry {
            scene_id,
            path: path.into(),
            split,
        });
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &SceneEntry> {
        self.scenes.iter().filter(move |s| s.split == split)
    }

    /// Copy restricted to one split.
    pub fn subset(&self, split: Split) -> DatasetManifest {
        DatasetManifest {
            root: self.root.clone(),
            label_space: self.label_space.clone(),
            scenes: self.split(split).cloned().collect(),
        }
    }

    pub fn counts(&self) -> (usize, usize, usize) {
        (
            self.split(Split::Train).count(),
            self.split(Split::Val).count(),
            self.split(Split::Test).count(),
        )
    }

    pub fn resolve(&self, entry: &SceneEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    pub fn load_scene(&self, entry: &SceneEntry) -> Result<PointCloud> {
        let mut pc = io::load_auto(&self.resolve(entry))?;
        pc.scene_id = entry.scene_id.clone();
        Ok(pc)
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<PointCloud>> {
        self.split(split).map(|e| self.load_scene(e)).collect()
    }

    pub fn load_all(&self) -> Result<Vec<PointCloud>> {
        self.scenes.iter().map(|e| self.load_scene(e)).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("# label_space {}\n", self.label_space);
        for s in &self.scenes {
            out.push_str(&format!(
                "{}\t{}\t{}\n",
                s.scene_id,
                s.path.display(),
                s.split
            ));
        }
        out
    }

    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut m = DatasetManifest::new(root, "");
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(name) = rest.trim().strip_prefix("label_space") {
                    m.label_space = name.trim().to_string();
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(Error::Manifest(format!(
                    "line {}: expected 3 tab-separated columns, found {}",
                    lineno + 1,
                    cols.len()
                )));
            }
            let split = cols[2]
                .trim()
                .parse()
                .map_err(|e| Error::Manifest(format!("line {}: {e}", lineno + 1)))?;
            m.push(cols[0].trim(), cols[1].trim(), split)?;
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, root)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}
