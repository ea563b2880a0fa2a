//! Builds a [`Dataset`] from plain-text inputs.
//!
//! * descriptions: one line per class, `class_name<TAB>token token ...`
//! * embeddings: `token v1 ... vN` per line (GloVe text layout)
//! * features: one line per sender view, `class_name<TAB>v1 ... vD`
//!
//! Each description becomes a bag of unique tokens; tokens missing from the
//! embedding table are dropped. The receiver view is the set of the remaining
//! word vectors (their mean is the pooled description).

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use super::{ClassEntry, DataError, Dataset};

#[derive(Debug, Clone)]
pub struct ImportPaths {
    pub descriptions: PathBuf,
    pub embeddings: PathBuf,
    pub features: PathBuf,
}

fn read(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_floats(path: &Path, line_no: usize, fields: &str) -> Result<Vec<f32>, DataError> {
    fields
        .split_whitespace()
        .map(|t| {
            t.parse::<f32>().map_err(|_| {
                DataError::Import(format!("{}:{line_no}: bad number `{t}`", path.display()))
            })
        })
        .collect()
}

pub fn import_corpus(paths: &ImportPaths) -> Result<Dataset, DataError> {
    let mut table: HashMap<String, Vec<f32>> = HashMap::new();
    let mut receiver_dim = None;
    for (i, line) in read(&paths.embeddings)?.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (token, rest) = line.split_once(char::is_whitespace).ok_or_else(|| {
            DataError::Import(format!("{}:{}: token without vector", paths.embeddings.display(), i + 1))
        })?;
        let v = parse_floats(&paths.embeddings, i + 1, rest)?;
        match receiver_dim {
            None => receiver_dim = Some(v.len()),
            Some(d) if d != v.len() => {
                return Err(DataError::Import(format!(
                    "{}:{}: vector for `{token}` has {} entries, expected {d}",
                    paths.embeddings.display(),
                    i + 1,
                    v.len()
                )))
            }
            _ => {}
        }
        table.insert(token.to_string(), v);
    }
    let receiver_dim =
        receiver_dim.ok_or_else(|| DataError::Import("embedding table is empty".into()))?;

    let mut classes: Vec<ClassEntry> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (i, line) in read(&paths.descriptions)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (name, text) = line.split_once('\t').ok_or_else(|| {
            DataError::Import(format!(
                "{}:{}: expected `name<TAB>tokens`",
                paths.descriptions.display(),
                i + 1
            ))
        })?;
        let name = name.trim().to_string();
        if index.contains_key(&name) {
            return Err(DataError::Import(format!("class `{name}` described twice")));
        }
        let mut seen = HashSet::new();
        let mut words = Vec::new();
        for tok in text.split_whitespace() {
            if seen.insert(tok) {
                if let Some(v) = table.get(tok) {
                    words.extend_from_slice(v);
                }
            }
        }
        if words.is_empty() {
            return Err(DataError::Class {
                class: name,
                detail: "no description token has an embedding".into(),
            });
        }
        index.insert(name.clone(), classes.len());
        classes.push(ClassEntry {
            id: classes.len() as u32,
            name,
            difficulty: None,
            sender_views: Vec::new(),
            receiver_words: words,
        });
    }

    let mut sender_dim = None;
    for (i, line) in read(&paths.features)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (name, rest) = line.split_once('\t').ok_or_else(|| {
            DataError::Import(format!(
                "{}:{}: expected `name<TAB>values`",
                paths.features.display(),
                i + 1
            ))
        })?;
        let &c = index.get(name.trim()).ok_or_else(|| {
            DataError::Import(format!(
                "{}:{}: features for undescribed class `{}`",
                paths.features.display(),
                i + 1,
                name.trim()
            ))
        })?;
        let v = parse_floats(&paths.features, i + 1, rest)?;
        match sender_dim {
            None => sender_dim = Some(v.len()),
            Some(d) if d != v.len() => {
                return Err(DataError::Class {
                    class: classes[c].name.clone(),
                    detail: format!("feature vector has {} entries, expected {d}", v.len()),
                })
            }
            _ => {}
        }
        classes[c].sender_views.extend(v);
    }
    if let Some(c) = classes.iter().find(|c| c.sender_views.is_empty()) {
        return Err(DataError::Class {
            class: c.name.clone(),
            detail: "no sender features".into(),
        });
    }
    let dataset = Dataset {
        sender_dim: sender_dim.ok_or_else(|| DataError::Import("no feature lines".into()))?,
        sender_set_size: 1,
        receiver_dim,
        classes,
        splits: Vec::new(),
    };
    dataset.validate()?;
    Ok(dataset)
}
