use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, Split, ViewRange};

pub const SPLIT_TRAIN: &str = "train";
pub const SPLIT_VAL: &str = "val";
pub const SPLIT_TEST: &str = "test";
pub const SPLIT_OOD: &str = "ood";
pub const SPLIT_TRANSFER: &str = "transfer";

/// Views per class taken for each split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub out_of_domain: usize,
    pub transfer: usize,
}

impl SplitCounts {
    /// 550/50/20 in-domain views, 100 per held-out or transfer class.
    pub fn reference() -> Self {
        Self {
            train: 550,
            val: 50,
            test: 20,
            out_of_domain: 100,
            transfer: 100,
        }
    }
}

/// Partitions a dataset into train/val/test (in-domain classes), an
/// out-of-domain split and a transfer split.
///
/// In-domain classes take consecutive view blocks for train, val and test.
/// Held-out and transfer classes take their first views. The candidate set of
/// the held-out and transfer splits always includes the in-domain classes.
pub fn make_splits(
    dataset: &Dataset,
    in_domain: &[usize],
    out_of_domain: &[usize],
    transfer: &[usize],
    counts: &SplitCounts,
) -> Result<Dataset, DataError> {
    let groups = [
        ("in-domain", in_domain),
        ("out-of-domain", out_of_domain),
        ("transfer", transfer),
    ];
    let mut seen = vec![None; dataset.classes.len()];
    for (label, list) in groups {
        for &c in list {
            if c >= dataset.classes.len() {
                return Err(DataError::Spec(format!(
                    "{label} class index {c} does not exist"
                )));
            }
            if let Some(prev) = seen[c] {
                return Err(DataError::Spec(format!(
                    "class `{}` listed as both {prev} and {label}",
                    dataset.classes[c].name
                )));
            }
            seen[c] = Some(label);
        }
    }
    let need = |c: usize, n: usize| -> Result<(), DataError> {
        if dataset.num_views(c) < n {
            return Err(DataError::Class {
                class: dataset.classes[c].name.clone(),
                detail: format!("needs {n} views, has {}", dataset.num_views(c)),
            });
        }
        Ok(())
    };
    let block = |list: &[usize], start: usize, len: usize| -> Vec<ViewRange> {
        list.iter()
            .map(|&class| ViewRange {
                class,
                start,
                end: start + len,
            })
            .filter(|r| !r.is_empty())
            .collect()
    };
    for &c in in_domain {
        need(c, counts.train + counts.val + counts.test)?;
    }
    for &c in out_of_domain {
        need(c, counts.out_of_domain)?;
    }
    for &c in transfer {
        need(c, counts.transfer)?;
    }
    let with = |extra: &[usize]| -> Vec<usize> { in_domain.iter().chain(extra).copied().collect() };

    if out_of_domain.is_empty() || counts.out_of_domain == 0 {
        log::warn!("out-of-domain split is empty");
    }
    let mut out = dataset.clone();
    out.splits = vec![
        Split {
            name: SPLIT_TRAIN.into(),
            candidates: in_domain.to_vec(),
            ranges: block(in_domain, 0, counts.train),
        },
        Split {
            name: SPLIT_VAL.into(),
            candidates: in_domain.to_vec(),
            ranges: block(in_domain, counts.train, counts.val),
        },
        Split {
            name: SPLIT_TEST.into(),
            candidates: in_domain.to_vec(),
            ranges: block(in_domain, counts.train + counts.val, counts.test),
        },
        Split {
            name: SPLIT_OOD.into(),
            candidates: with(out_of_domain),
            ranges: block(out_of_domain, 0, counts.out_of_domain),
        },
        Split {
            name: SPLIT_TRANSFER.into(),
            candidates: with(transfer),
            ranges: block(transfer, 0, counts.transfer),
        },
    ];
    out.validate()?;
    Ok(out)
}
