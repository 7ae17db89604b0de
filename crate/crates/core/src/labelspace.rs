//! Class taxonomies, cross-dataset name overlap, and label translation.
//!
//! Ground-truth labels annotated in one label space are translated at load
//! time into the label space a model was trained on. Classes without a
//! counterpart are routed to the model space's designated none-class, and
//! those none-classes are then excluded from scoring.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::cloud::{Label, IGNORE_LABEL};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSpace {
    pub name: String,
    pub classes: Vec<String>,
    /// Indices of none-type (catch-all) classes, ascending.
    pub none_indices: Vec<usize>,
}

impl LabelSpace {
    pub fn new(name: impl Into<String>, classes: &[&str], none: &[&str]) -> Result<Self> {
        let classes: Vec<String> = classes.iter().map(|s| s.to_string()).collect();
        let mut none_indices = Vec::new();
        for n in none {
            let i = classes
                .iter()
                .position(|c| c == n)
                .ok_or_else(|| Error::LabelSpace(format!("none-class `{n}` is not a class")))?;
            none_indices.push(i);
        }
        none_indices.sort_unstable();
        let space = LabelSpace {
            name: name.into(),
            classes,
            none_indices,
        };
        space.validate()?;
        Ok(space)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for c in &self.classes {
            if !seen.insert(c) {
                return Err(Error::LabelSpace(format!(
                    "class `{c}` appears twice in `{}`",
                    self.name
                )));
            }
        }
        if self.classes.len() >= IGNORE_LABEL as usize {
            return Err(Error::LabelSpace("too many classes".into()));
        }
        if self.none_indices.iter().any(|&i| i >= self.classes.len()) {
            return Err(Error::LabelSpace("none index out of range".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }

    pub fn is_none_class(&self, idx: usize) -> bool {
        self.none_indices.contains(&idx)
    }

    /// Definition-file text: one class per line, none-classes followed by `\tnone`.
    pub fn to_text(&self) -> String {
        let mut out = format!("# label_space {}\n", self.name);
        for (i, c) in self.classes.iter().enumerate() {
            if self.is_none_class(i) {
                let _ = writeln!(out, "{c}\tnone");
            } else {
                let _ = writeln!(out, "{c}");
            }
        }
        out
    }

    pub fn parse(text: &str, default_name: &str) -> Result<Self> {
        let mut name = default_name.to_string();
        let mut classes = Vec::new();
        let mut none = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(n) = rest.trim().strip_prefix("label_space") {
                    name = n.trim().to_string();
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let mut cols = line.split('\t');
            let class = cols.next().unwrap().trim().to_string();
            match cols.next().map(str::trim) {
                None | Some("") => {}
                Some("none") => none.push(class.clone()),
                Some(flag) => {
                    return Err(Error::LabelSpace(format!(
                        "unknown flag `{flag}` on `{class}`"
                    )))
                }
            }
            classes.push(class);
        }
        let classes: Vec<&str> = classes.iter().map(String::as_str).collect();
        let none: Vec<&str> = none.iter().map(String::as_str).collect();
        LabelSpace::new(name, &classes, &none)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::parse(&text, &stem)
    }
}

/// Name-equivalence table mapping class names to canonical names.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AliasTable {
    map: BTreeMap<String, String>,
}

impl AliasTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, from: &str, to: &str) -> Self {
        self.insert(from, to);
        self
    }

    pub fn insert(&mut self, from: &str, to: &str) {
        self.map.insert(from.to_string(), to.to_string());
    }

    /// Follows the alias chain to its end.
    pub fn canonical(&self, name: &str) -> Result<String> {
        let mut current = name;
        let mut visited = BTreeSet::new();
        while let Some(next) = self.map.get(current) {
            if !visited.insert(current) {
                return Err(Error::LabelSpace(format!(
                    "alias cycle through `{current}`"
                )));
            }
            current = next;
        }
        Ok(current.to_string())
    }

    /// Alias file text: `from\tto` per line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut t = AliasTable::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
            if cols.len() != 2 {
                return Err(Error::LabelSpace(format!(
                    "alias line {}: expected `from<TAB>to`",
                    i + 1
                )));
            }
            t.insert(cols[0], cols[1]);
        }
        Ok(t)
    }

    pub fn to_text(&self) -> String {
        self.map
            .iter()
            .map(|(a, b)| format!("{a}\t{b}\n"))
            .collect()
    }
}

/// Class-occurrence matrix over canonical class names (rows, sorted) and
/// label spaces (columns, in input order).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverlapMatrix {
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    pub cells: Vec<Vec<u8>>,
}

impl OverlapMatrix {
    pub fn get(&self, class: &str, space: &str) -> Option<u8> {
        let r = self.rows.iter().position(|c| c == class)?;
        let c = self.columns.iter().position(|s| s == space)?;
        Some(self.cells[r][c])
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("class\t{}\n", self.columns.join("\t"));
        for (name, row) in self.rows.iter().zip(&self.cells) {
            let cells: Vec<String> = row.iter().map(u8::to_string).collect();
            let _ = writeln!(out, "{name}\t{}", cells.join("\t"));
        }
        out
    }
}

pub fn overlap_matrix(spaces: &[LabelSpace], aliases: &AliasTable) -> Result<OverlapMatrix> {
    let canon: Vec<BTreeSet<String>> = spaces
        .iter()
        .map(|s| s.classes.iter().map(|c| aliases.canonical(c)).collect())
        .collect::<Result<_>>()?;
    let rows: BTreeSet<String> = canon.iter().flatten().cloned().collect();
    let rows: Vec<String> = rows.into_iter().collect();
    let cells = rows
        .iter()
        .map(|r| canon.iter().map(|set| u8::from(set.contains(r))).collect())
        .collect();
    Ok(OverlapMatrix {
        rows,
        columns: spaces.iter().map(|s| s.name.clone()).collect(),
        cells,
    })
}

/// Total mapping from source class indices to target class indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranslationMap {
    pub source: String,
    pub target: String,
    pub mapping: Vec<usize>,
    /// Target indices that received unmatched source classes; not scored.
    pub excluded: BTreeSet<usize>,
    pub source_classes: Vec<String>,
    pub target_classes: Vec<String>,
}

impl TranslationMap {
    pub fn identity(space: &LabelSpace) -> Self {
        TranslationMap {
            source: space.name.clone(),
            target: space.name.clone(),
            mapping: (0..space.len()).collect(),
            excluded: BTreeSet::new(),
            source_classes: space.classes.clone(),
            target_classes: space.classes.clone(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.excluded.is_empty() && self.mapping.iter().enumerate().all(|(i, &m)| i == m)
    }

    /// Audit table: `source<TAB>target[<TAB>excluded]`.
    pub fn to_table(&self) -> String {
        let mut out = String::from("source\ttarget\n");
        for (s, &t) in self.mapping.iter().enumerate() {
            let flag = if self.excluded.contains(&t) {
                "\texcluded"
            } else {
                ""
            };
            let _ = writeln!(
                out,
                "{}\t{}{flag}",
                self.source_classes[s], self.target_classes[t]
            );
        }
        out
    }
}

pub fn build_translation(
    source: &LabelSpace,
    target: &LabelSpace,
    aliases: &AliasTable,
) -> Result<TranslationMap> {
    let mut by_name: HashMap<String, usize> = HashMap::new();
    for (i, c) in target.classes.iter().enumerate() {
        by_name.entry(aliases.canonical(c)?).or_insert(i);
    }
    let fallback = target.none_indices.first().copied();
    let mut mapping = Vec::with_capacity(source.len());
    let mut excluded = BTreeSet::new();
    for c in &source.classes {
        match by_name.get(&aliases.canonical(c)?) {
            Some(&t) => mapping.push(t),
            None => {
                let t = fallback.ok_or_else(|| {
                    Error::LabelSpace(format!(
                        "`{c}` has no counterpart in `{}` and it has no none-class",
                        target.name
                    ))
                })?;
                mapping.push(t);
                excluded.insert(t);
            }
        }
    }
    Ok(TranslationMap {
        source: source.name.clone(),
        target: target.name.clone(),
        mapping,
        excluded,
        source_classes: source.classes.clone(),
        target_classes: target.classes.clone(),
    })
}

pub fn translate_labels(labels: &[Label], map: &TranslationMap) -> Result<Vec<Label>> {
    labels
        .iter()
        .map(|&l| {
            if l == IGNORE_LABEL {
                Ok(IGNORE_LABEL)
            } else {
                map.mapping
                    .get(l as usize)
                    .map(|&t| t as Label)
                    .ok_or(Error::LabelOutOfRange {
                        label: l as u32,
                        num_classes: map.mapping.len(),
                    })
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Built-in spaces

pub const TARGET: &str = "shell-11";
pub const PRETRAIN: &str = "pretrain-9";
pub const S3DIS_LIKE: &str = "s3dis-like";
pub const SCANNET_LIKE: &str = "scannet-like";
pub const STRUCTURED3D_LIKE: &str = "structured3d-like";
pub const VASAD_LIKE: &str = "vasad-like";

/// Shell-construction classes, in annotation order.
pub const TARGET_CLASSES: [&str; 11] = [
    "ceiling",
    "floor",
    "wall",
    "beam",
    "column",
    "window",
    "door",
    "stairs",
    "equipment",
    "installation",
    "none",
];

pub fn target_space() -> LabelSpace {
    LabelSpace::new(TARGET, &TARGET_CLASSES, &["none"]).unwrap()
}

/// Subset space used to pretrain on synthetic scenes: no stairs or
/// installation, a different order, and a clutter catch-all.
pub fn pretrain_space() -> LabelSpace {
    LabelSpace::new(
        PRETRAIN,
        &[
            "wall",
            "floor",
            "ceiling",
            "door",
            "window",
            "beam",
            "column",
            "equipment",
            "clutter",
        ],
        &["clutter"],
    )
    .unwrap()
}

pub fn s3dis_like() -> LabelSpace {
    LabelSpace::new(
        S3DIS_LIKE,
        &[
            "ceiling", "floor", "wall", "beam", "column", "window", "door", "table", "chair",
            "sofa", "bookcase", "board", "clutter",
        ],
        &["clutter"],
    )
    .unwrap()
}

pub fn scannet_like() -> LabelSpace {
    LabelSpace::new(
        SCANNET_LIKE,
        &[
            "wall",
            "floor",
            "cabinet",
            "bed",
            "chair",
            "sofa",
            "table",
            "door",
            "window",
            "bookshelf",
            "picture",
            "counter",
            "desk",
            "curtain",
            "refrigerator",
            "shower curtain",
            "toilet",
            "sink",
            "bathtub",
            "otherfurniture",
        ],
        &["otherfurniture"],
    )
    .unwrap()
}

pub fn structured3d_like() -> LabelSpace {
    LabelSpace::new(
        STRUCTURED3D_LIKE,
        &[
            "wall",
            "floor",
            "cabinet",
            "bed",
            "chair",
            "sofa",
            "table",
            "door",
            "window",
            "picture",
            "desk",
            "shelves",
            "curtain",
            "dresser",
            "pillow",
            "mirror",
            "ceiling",
            "refrigerator",
            "television",
            "nightstand",
            "sink",
            "lamp",
            "otherstructure",
            "otherfurniture",
            "otherprop",
        ],
        &["otherstructure", "otherfurniture", "otherprop"],
    )
    .unwrap()
}

pub fn vasad_like() -> LabelSpace {
    LabelSpace::new(
        VASAD_LIKE,
        &[
            "slab",
            "ceiling",
            "bearing wall",
            "partition wall",
            "beam",
            "column",
            "door",
            "window",
            "stair",
            "other",
        ],
        &["other"],
    )
    .unwrap()
}

pub fn builtin_spaces() -> Vec<LabelSpace> {
    vec![
        target_space(),
        pretrain_space(),
        s3dis_like(),
        scannet_like(),
        structured3d_like(),
        vasad_like(),
    ]
}

pub fn builtin(name: &str) -> Option<LabelSpace> {
    builtin_spaces().into_iter().find(|s| s.name == name)
}

/// Singular/plural and synonym unification used across the built-in spaces.
pub fn default_aliases() -> AliasTable {
    AliasTable::new()
        .with("stairs", "stair")
        .with("clutter", "none")
        .with("other", "none")
        .with("_none", "none")
        .with("slab", "floor")
        .with("bearing wall", "wall")
        .with("bookcase", "bookshelf")
}
