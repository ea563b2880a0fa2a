//! `manifest.json` + `payload.bin` on-disk layout.
//!
//! The payload is little-endian `f32`. For each class, in manifest order, the
//! sender block (`sender_views * sender_set_size * sender_dim` values) is
//! followed by the receiver block (`receiver_words * receiver_dim` values).
//! Offsets in the manifest are byte offsets into the payload and must be
//! contiguous.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClassEntry, DataError, Dataset, Split, ViewRange};

pub const DATASET_FORMAT: &str = "refgame-dataset";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PAYLOAD_FILE: &str = "payload.bin";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    version: u32,
    sender_dim: usize,
    sender_set_size: usize,
    receiver_dim: usize,
    payload: String,
    classes: Vec<ClassManifest>,
    splits: Vec<SplitManifest>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassManifest {
    id: u32,
    name: String,
    difficulty: Option<f64>,
    sender_views: usize,
    sender_offset: u64,
    receiver_words: usize,
    receiver_offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitManifest {
    name: String,
    candidates: Vec<u32>,
    ranges: Vec<RangeManifest>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RangeManifest {
    class: u32,
    start: usize,
    end: usize,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<(), DataError> {
    dataset.validate()?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut payload: Vec<u8> = Vec::new();
    let mut classes = Vec::with_capacity(dataset.classes.len());
    for (i, c) in dataset.classes.iter().enumerate() {
        let sender_offset = payload.len() as u64;
        payload.extend(c.sender_views.iter().flat_map(|v| v.to_le_bytes()));
        let receiver_offset = payload.len() as u64;
        payload.extend(c.receiver_words.iter().flat_map(|v| v.to_le_bytes()));
        classes.push(ClassManifest {
            id: c.id,
            name: c.name.clone(),
            difficulty: c.difficulty,
            sender_views: dataset.num_views(i),
            sender_offset,
            receiver_words: dataset.num_words(i),
            receiver_offset,
        });
    }
    let id_of = |idx: usize| dataset.classes[idx].id;
    let splits = dataset
        .splits
        .iter()
        .map(|s| SplitManifest {
            name: s.name.clone(),
            candidates: s.candidates.iter().map(|&c| id_of(c)).collect(),
            ranges: s
                .ranges
                .iter()
                .map(|r| RangeManifest {
                    class: id_of(r.class),
                    start: r.start,
                    end: r.end,
                })
                .collect(),
        })
        .collect();
    let manifest = Manifest {
        format: DATASET_FORMAT.to_string(),
        version: 1,
        sender_dim: dataset.sender_dim,
        sender_set_size: dataset.sender_set_size,
        receiver_dim: dataset.receiver_dim,
        payload: PAYLOAD_FILE.to_string(),
        classes,
        splits,
    };
    let payload_path = dir.join(PAYLOAD_FILE);
    fs::write(&payload_path, &payload).map_err(io_err(&payload_path))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&manifest_path, text).map_err(io_err(&manifest_path))?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, DataError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let m: Manifest = serde_json::from_str(&text)?;
    if m.format != DATASET_FORMAT || m.version != 1 {
        return Err(DataError::Spec(format!(
            "unsupported dataset format {} v{}",
            m.format, m.version
        )));
    }
    if m.sender_dim == 0 || m.receiver_dim == 0 || m.sender_set_size == 0 {
        return Err(DataError::Spec("feature dimensions must be positive".into()));
    }
    let payload_path = dir.join(&m.payload);
    let bytes = fs::read(&payload_path).map_err(io_err(&payload_path))?;

    let view_len = (m.sender_set_size * m.sender_dim) as u64;
    let mut cursor = 0u64;
    let mut classes = Vec::with_capacity(m.classes.len());
    for c in &m.classes {
        let err = |detail: String| DataError::Class {
            class: c.name.clone(),
            detail,
        };
        if c.sender_views == 0 {
            return Err(err("no sender views".into()));
        }
        if c.receiver_words == 0 {
            return Err(err("no receiver view".into()));
        }
        let sender_bytes = c.sender_views as u64 * view_len * 4;
        let receiver_bytes = c.receiver_words as u64 * m.receiver_dim as u64 * 4;
        if c.sender_offset != cursor {
            return Err(err(format!(
                "sender block starts at byte {} but the previous block ends at {cursor}; \
                 advertised dimensions do not match the payload",
                c.sender_offset
            )));
        }
        if c.receiver_offset != cursor + sender_bytes {
            return Err(err(format!(
                "receiver block starts at byte {} but {} sender views of {} x {} floats end at {}; \
                 advertised dimensions do not match the payload",
                c.receiver_offset,
                c.sender_views,
                m.sender_set_size,
                m.sender_dim,
                cursor + sender_bytes
            )));
        }
        let end = c.receiver_offset + receiver_bytes;
        if end > bytes.len() as u64 {
            return Err(err(format!(
                "payload truncated: needs {end} bytes, file has {}",
                bytes.len()
            )));
        }
        let floats = |from: u64, to: u64| -> Vec<f32> {
            bytes[from as usize..to as usize]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect()
        };
        classes.push(ClassEntry {
            id: c.id,
            name: c.name.clone(),
            difficulty: c.difficulty,
            sender_views: floats(c.sender_offset, c.receiver_offset),
            receiver_words: floats(c.receiver_offset, end),
        });
        cursor = end;
    }
    if cursor != bytes.len() as u64 {
        return Err(DataError::Spec(format!(
            "payload has {} bytes but the manifest accounts for {cursor}",
            bytes.len()
        )));
    }

    let index_of = |split: &str, id: u32| -> Result<usize, DataError> {
        m.classes
            .iter()
            .position(|c| c.id == id)
            .ok_or_else(|| DataError::Split {
                split: split.to_string(),
                detail: format!("refers to missing class id {id}"),
            })
    };
    let mut splits = Vec::with_capacity(m.splits.len());
    for s in &m.splits {
        let candidates = s
            .candidates
            .iter()
            .map(|&id| index_of(&s.name, id))
            .collect::<Result<_, _>>()?;
        let ranges = s
            .ranges
            .iter()
            .map(|r| {
                Ok(ViewRange {
                    class: index_of(&s.name, r.class)?,
                    start: r.start,
                    end: r.end,
                })
            })
            .collect::<Result<_, DataError>>()?;
        splits.push(Split {
            name: s.name.clone(),
            candidates,
            ranges,
        });
    }
    let dataset = Dataset {
        sender_dim: m.sender_dim,
        sender_set_size: m.sender_set_size,
        receiver_dim: m.receiver_dim,
        classes,
        splits,
    };
    dataset.validate()?;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::test_util::tiny;
    use crate::dataset::{make_splits, SplitCounts};

    #[test]
    fn round_trip_is_bit_identical() {
        let mut d = tiny(3, 5);
        d.classes[0].difficulty = Some(0.123_456_789_012_345_6);
        d.classes[1].sender_views[3] = f32::MIN_POSITIVE;
        let d = make_splits(
            &d,
            &[0, 1],
            &[2],
            &[],
            &SplitCounts {
                train: 3,
                val: 1,
                test: 1,
                out_of_domain: 4,
                transfer: 0,
            },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&d, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn dimension_mismatch_names_the_class() {
        // payload written with 511-dim features, manifest claims 512
        let mut d = tiny(2, 2);
        d.sender_dim = 511;
        d.classes[0].sender_views = vec![0.5; 2 * 511];
        d.classes[0].name = "aardvark".into();
        d.classes[1].sender_views = vec![0.25; 2 * 511];
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&d, dir.path()).unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path)
            .unwrap()
            .replace("\"sender_dim\": 511", "\"sender_dim\": 512");
        fs::write(&path, text).unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(matches!(&err, DataError::Class { class, .. } if class == "aardvark"), "{err}");
    }

    #[test]
    fn unknown_manifest_keys_rejected() {
        let d = tiny(1, 1);
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&d, dir.path()).unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path)
            .unwrap()
            .replacen('{', "{\"extra\": 1,", 1);
        fs::write(&path, text).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(DataError::Manifest(_))));
    }

    #[test]
    fn missing_split_class_rejected() {
        let d = tiny(2, 2);
        let dir = tempfile::tempdir().unwrap();
        let d = make_splits(
            &d,
            &[0, 1],
            &[],
            &[],
            &SplitCounts {
                train: 1,
                val: 1,
                test: 0,
                out_of_domain: 0,
                transfer: 0,
            },
        )
        .unwrap();
        save_dataset(&d, dir.path()).unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        let mut m: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        m["splits"][0]["candidates"][0] = serde_json::json!(99);
        fs::write(&path, m.to_string()).unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("99"), "{err}");
    }
}
