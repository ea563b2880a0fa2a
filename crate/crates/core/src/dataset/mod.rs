//! Objects, their two views, and split metadata.
//!
//! Sender views are feature vectors (or fixed-size sets of region vectors);
//! receiver views are sets of word vectors whose mean is the pooled
//! description. Everything is stored as `f32`, matching the on-disk payload.

mod import;
mod io;
mod splits;
mod synthetic;

use std::ops::Range;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use import::{import_corpus, ImportPaths};
pub use io::{load_dataset, save_dataset, DATASET_FORMAT, MANIFEST_FILE, PAYLOAD_FILE};
pub use splits::{make_splits, SplitCounts, SPLIT_OOD, SPLIT_TEST, SPLIT_TRAIN, SPLIT_TRANSFER, SPLIT_VAL};
pub use synthetic::{generate_synthetic, synthetic_with_splits, SyntheticData, SyntheticSpec};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("class `{class}`: {detail}")]
    Class { class: String, detail: String },
    #[error("split `{split}`: {detail}")]
    Split { split: String, detail: String },
    #[error("unknown split `{0}`")]
    UnknownSplit(String),
    #[error("split `{0}` has no sender views")]
    EmptySplit(String),
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
    #[error("import: {0}")]
    Import(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub id: u32,
    pub name: String,
    /// Externally supplied per-class score for the length analysis; higher
    /// means easier to recognise (an F1-style score).
    pub difficulty: Option<f64>,
    /// `num_views * set_size * sender_dim` values.
    pub sender_views: Vec<f32>,
    /// `num_words * receiver_dim` values.
    pub receiver_words: Vec<f32>,
}

/// Contiguous block of one class's sender views that belongs to a split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewRange {
    pub class: usize,
    pub start: usize,
    pub end: usize,
}

impl ViewRange {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn views(&self) -> Range<usize> {
        self.start..self.end
    }
}

/// A named partition: which sender views are played and which receiver
/// views make up the candidate set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub name: String,
    /// Class indices forming `O_R` for games in this split, in order.
    pub candidates: Vec<usize>,
    pub ranges: Vec<ViewRange>,
}

impl Split {
    pub fn num_views(&self) -> usize {
        self.ranges.iter().map(ViewRange::len).sum()
    }

    /// Every (class, view) pair in the split, in range order.
    pub fn instances(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.ranges
            .iter()
            .flat_map(|r| r.views().map(move |v| (r.class, v)))
    }

    pub fn classes(&self) -> Vec<usize> {
        let mut c: Vec<usize> = self.ranges.iter().filter(|r| !r.is_empty()).map(|r| r.class).collect();
        c.dedup();
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub sender_dim: usize,
    /// Vectors per sender view: 1 for pooled features, >1 for region sets.
    pub sender_set_size: usize,
    pub receiver_dim: usize,
    pub classes: Vec<ClassEntry>,
    pub splits: Vec<Split>,
}

impl Dataset {
    pub fn sender_view_len(&self) -> usize {
        self.sender_set_size * self.sender_dim
    }

    pub fn num_views(&self, class: usize) -> usize {
        self.classes[class].sender_views.len() / self.sender_view_len()
    }

    pub fn num_words(&self, class: usize) -> usize {
        self.classes[class].receiver_words.len() / self.receiver_dim
    }

    /// Raw values of one sender view (`set_size * sender_dim` floats).
    pub fn sender_view(&self, class: usize, view: usize) -> &[f32] {
        let n = self.sender_view_len();
        &self.classes[class].sender_views[view * n..(view + 1) * n]
    }

    pub fn receiver_words(&self, class: usize) -> impl Iterator<Item = &[f32]> {
        self.classes[class].receiver_words.chunks(self.receiver_dim)
    }

    pub fn split(&self, name: &str) -> Result<&Split, DataError> {
        self.splits
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| DataError::UnknownSplit(name.to_string()))
    }

    pub fn class_index(&self, id: u32) -> Option<usize> {
        self.classes.iter().position(|c| c.id == id)
    }

    /// Checks every structural invariant; loaders call this before returning.
    pub fn validate(&self) -> Result<(), DataError> {
        if self.sender_dim == 0 || self.receiver_dim == 0 || self.sender_set_size == 0 {
            return Err(DataError::Spec(
                "feature dimensions and set size must be positive".into(),
            ));
        }
        let sv = self.sender_view_len();
        for c in &self.classes {
            let err = |detail: String| DataError::Class {
                class: c.name.clone(),
                detail,
            };
            if c.sender_views.is_empty() || c.sender_views.len() % sv != 0 {
                return Err(err(format!(
                    "{} sender values is not a positive multiple of the view size {sv}",
                    c.sender_views.len()
                )));
            }
            if c.receiver_words.is_empty() || c.receiver_words.len() % self.receiver_dim != 0 {
                return Err(err(format!(
                    "{} receiver values is not a positive multiple of dimension {}",
                    c.receiver_words.len(),
                    self.receiver_dim
                )));
            }
            if c.sender_views.iter().chain(&c.receiver_words).any(|v| !v.is_finite()) {
                return Err(err("non-finite feature value".into()));
            }
        }
        let mut ids: Vec<u32> = self.classes.iter().map(|c| c.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(DataError::Spec("duplicate class ids".into()));
        }
        // per class: (split name, range) claimed so far
        let mut claimed: Vec<Vec<(&str, ViewRange)>> = vec![Vec::new(); self.classes.len()];
        for s in &self.splits {
            let err = |detail: String| DataError::Split {
                split: s.name.clone(),
                detail,
            };
            if self.splits.iter().filter(|o| o.name == s.name).count() > 1 {
                return Err(err("defined more than once".into()));
            }
            for &c in &s.candidates {
                if c >= self.classes.len() {
                    return Err(err(format!("candidate class index {c} does not exist")));
                }
            }
            let mut cands = s.candidates.clone();
            cands.sort_unstable();
            if cands.windows(2).any(|w| w[0] == w[1]) {
                return Err(err("duplicate candidate class".into()));
            }
            for r in &s.ranges {
                if r.class >= self.classes.len() {
                    return Err(err(format!("range refers to missing class index {}", r.class)));
                }
                let name = &self.classes[r.class].name;
                if r.start > r.end || r.end > self.num_views(r.class) {
                    return Err(err(format!(
                        "range {}..{} out of bounds for class `{name}` with {} views",
                        r.start,
                        r.end,
                        self.num_views(r.class)
                    )));
                }
                if !r.is_empty() && !s.candidates.contains(&r.class) {
                    return Err(err(format!("class `{name}` is played but not a candidate")));
                }
                for (other, o) in &claimed[r.class] {
                    if r.start < o.end && o.start < r.end {
                        return Err(err(format!(
                            "views of class `{name}` overlap with split `{other}`"
                        )));
                    }
                }
                claimed[r.class].push((&s.name, *r));
            }
        }
        Ok(())
    }
}


#[cfg(test)]
mod tests {
    use super::test_util::tiny;
    use super::*;

    #[test]
    fn overlapping_ranges_rejected() {
        let mut d = tiny(2, 10);
        d.splits.push(Split {
            name: "a".into(),
            candidates: vec![0, 1],
            ranges: vec![ViewRange { class: 0, start: 0, end: 6 }],
        });
        d.splits.push(Split {
            name: "b".into(),
            candidates: vec![0, 1],
            ranges: vec![ViewRange { class: 0, start: 5, end: 10 }],
        });
        let err = d.validate().unwrap_err();
        assert!(err.to_string().contains("overlap"), "{err}");
    }

    #[test]
    fn played_class_must_be_candidate() {
        let mut d = tiny(2, 4);
        d.splits.push(Split {
            name: "a".into(),
            candidates: vec![1],
            ranges: vec![ViewRange { class: 0, start: 0, end: 2 }],
        });
        assert!(d.validate().is_err());
    }

    #[test]
    fn ragged_payload_rejected() {
        let mut d = tiny(2, 4);
        d.classes[1].sender_views.pop();
        let err = d.validate().unwrap_err();
        assert!(err.to_string().contains("c1"), "{err}");
    }

    #[test]
    fn view_accessors() {
        let d = tiny(2, 3);
        assert_eq!(d.num_views(1), 3);
        assert_eq!(d.sender_view(1, 2), &[104.0, 105.0]);
        assert_eq!(d.receiver_words(1).next().unwrap(), &[1.0, 1.0]);
    }
}
