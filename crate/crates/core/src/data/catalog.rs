use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// Class names with a seen/unseen partition. The last class is always
/// background and belongs to neither set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassCatalog {
    names: Vec<String>,
    seen: Vec<usize>,
    unseen: Vec<usize>,
}

pub const SEMANTIC_KITTI_CLASSES: [&str; 19] = [
    "car",
    "bicycle",
    "motorcycle",
    "truck",
    "other-vehicle",
    "person",
    "bicyclist",
    "motorcyclist",
    "road",
    "parking",
    "sidewalk",
    "other-ground",
    "building",
    "fence",
    "vegetation",
    "trunk",
    "terrain",
    "pole",
    "traffic-sign",
];
pub const SEMANTIC_KITTI_UNSEEN: [&str; 4] = ["motorcycle", "truck", "bicyclist", "traffic-sign"];

pub const NUSCENES_CLASSES: [&str; 16] = [
    "barrier",
    "bicycle",
    "bus",
    "car",
    "construction-vehicle",
    "motorcycle",
    "pedestrian",
    "traffic-cone",
    "trailer",
    "truck",
    "driveable-surface",
    "other-flat",
    "sidewalk",
    "terrain",
    "manmade",
    "vegetation",
];
pub const NUSCENES_UNSEEN: [&str; 4] = [
    "motorcycle",
    "construction-vehicle",
    "traffic-cone",
    "trailer",
];

/// Object classes of the synthetic benchmark (background is appended).
pub const SYNTHETIC_CLASSES: [&str; 8] = [
    "car",
    "truck",
    "pedestrian",
    "cyclist",
    "pole",
    "traffic-sign",
    "vegetation",
    "building",
];
pub const SYNTHETIC_UNSEEN: [&str; 2] = ["truck", "traffic-sign"];

pub const BACKGROUND_NAME: &str = "background";

impl ClassCatalog {
    /// `names` excludes background, which is appended as the last class.
    pub fn new(names: &[&str], seen: &[usize], unseen: &[usize]) -> Result<Self> {
        let mut all: Vec<String> = names.iter().map(|s| s.to_string()).collect();
        all.push(BACKGROUND_NAME.to_string());
        let catalog = Self {
            names: all,
            seen: sorted(seen),
            unseen: sorted(unseen),
        };
        catalog.validate()?;
        Ok(catalog)
    }

    /// Every non-background class not listed in `unseen` is seen.
    pub fn with_unseen_names(names: &[&str], unseen: &[&str]) -> Result<Self> {
        let mut unseen_ids = Vec::new();
        for u in unseen {
            let id = names
                .iter()
                .position(|n| n == u)
                .ok_or_else(|| Error::Catalog(format!("unknown unseen class '{u}'")))?;
            unseen_ids.push(id);
        }
        let seen: Vec<usize> = (0..names.len())
            .filter(|i| !unseen_ids.contains(i))
            .collect();
        Self::new(names, &seen, &unseen_ids)
    }

    pub fn synthetic() -> Self {
        Self::with_unseen_names(&SYNTHETIC_CLASSES, &SYNTHETIC_UNSEEN).expect("static split")
    }

    pub fn semantic_kitti() -> Self {
        Self::with_unseen_names(&SEMANTIC_KITTI_CLASSES, &SEMANTIC_KITTI_UNSEEN)
            .expect("static split")
    }

    pub fn nuscenes() -> Self {
        Self::with_unseen_names(&NUSCENES_CLASSES, &NUSCENES_UNSEEN).expect("static split")
    }

    /// Same classes with every non-background class treated as unseen.
    pub fn annotation_free(&self) -> Self {
        Self {
            names: self.names.clone(),
            seen: Vec::new(),
            unseen: (0..self.background()).collect(),
        }
    }

    fn validate(&self) -> Result<()> {
        let n = self.names.len();
        if n < 2 {
            return Err(Error::Catalog(
                "need at least one class plus background".into(),
            ));
        }
        let bg = n - 1;
        let s: BTreeSet<usize> = self.seen.iter().copied().collect();
        let u: BTreeSet<usize> = self.unseen.iter().copied().collect();
        if s.len() != self.seen.len() || u.len() != self.unseen.len() {
            return Err(Error::Catalog("duplicate class ids".into()));
        }
        if let Some(c) = s.iter().chain(&u).find(|&&c| c >= n) {
            return Err(Error::Catalog(format!("class id {c} out of range")));
        }
        if let Some(&c) = s.intersection(&u).next() {
            return Err(Error::Catalog(format!(
                "seen ∩ unseen must be empty, but class {c} ('{}') is in both",
                self.names[c]
            )));
        }
        if s.contains(&bg) || u.contains(&bg) {
            return Err(Error::Catalog(
                "background may be neither seen nor unseen".into(),
            ));
        }
        if s.len() + u.len() != bg {
            let missing: Vec<usize> = (0..bg)
                .filter(|c| !s.contains(c) && !u.contains(c))
                .collect();
            return Err(Error::Catalog(format!(
                "seen ∪ unseen must cover every class; missing {missing:?}"
            )));
        }
        let mut names = BTreeSet::new();
        for name in &self.names {
            if !names.insert(name) {
                return Err(Error::Catalog(format!("duplicate class name '{name}'")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn background(&self) -> usize {
        self.names.len() - 1
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn seen(&self) -> &[usize] {
        &self.seen
    }

    pub fn unseen(&self) -> &[usize] {
        &self.unseen
    }

    pub fn is_seen(&self, c: usize) -> bool {
        self.seen.binary_search(&c).is_ok()
    }

    pub fn is_unseen(&self, c: usize) -> bool {
        self.unseen.binary_search(&c).is_ok()
    }

    /// Label space of teacher pseudo labels.
    pub fn unseen_and_background(&self) -> Vec<usize> {
        let mut v = self.unseen.clone();
        v.push(self.background());
        v
    }

    pub fn all(&self) -> Vec<usize> {
        (0..self.names.len()).collect()
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// One `name kind` line per class, kind ∈ {seen, unseen, background}.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, name) in self.names.iter().enumerate() {
            let kind = if i == self.background() {
                "background"
            } else if self.is_seen(i) {
                "seen"
            } else {
                "unseen"
            };
            out.push_str(&format!("{name} {kind}\n"));
        }
        out
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut names = Vec::new();
        let mut seen = Vec::new();
        let mut unseen = Vec::new();
        let mut background = false;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (name, kind) = line
                .split_once(char::is_whitespace)
                .ok_or_else(|| Error::Catalog(format!("malformed catalog line '{line}'")))?;
            if background {
                return Err(Error::Catalog("background must be the last class".into()));
            }
            match kind.trim() {
                "seen" => seen.push(names.len()),
                "unseen" => unseen.push(names.len()),
                "background" => {
                    background = true;
                    continue;
                }
                other => return Err(Error::Catalog(format!("unknown class kind '{other}'"))),
            }
            names.push(name.to_string());
        }
        if !background {
            return Err(Error::Catalog("missing background class".into()));
        }
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        Self::new(&refs, &seen, &unseen)
    }
}

fn sorted(v: &[usize]) -> Vec<usize> {
    let mut v = v.to_vec();
    v.sort_unstable();
    v
}
