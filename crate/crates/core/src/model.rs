//! Parameter store plus both agents and the baselines, and its checkpoint format.
//!
//! A checkpoint directory holds `checkpoint.json` and `tensors.bin`. The payload
//! is little-endian `f64`: for each tensor in manifest order, its values and then
//! its RMSProp accumulator.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{ModelConfig, ReceiverAgent, SenderAgent};
use crate::nn::{NnError, ParamId, ParamStore, RmsProp};
use crate::training::BaselineNet;

pub const CODE_VERSION: &str = concat!("refgame ", env!("CARGO_PKG_VERSION"));
pub const CHECKPOINT_FORMAT: &str = "refgame-checkpoint";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TENSORS_FILE: &str = "tensors.bin";

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub sender: SenderAgent,
    pub receiver: ReceiverAgent,
    pub baselines: BaselineNet,
}

impl Model {
    /// Glorot-uniform weights and zero biases drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, NnError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let sender = SenderAgent::register(&mut store, &config, &mut rng)?;
        let receiver = ReceiverAgent::register(&mut store, &config, &mut rng)?;
        let baselines = BaselineNet::register(&mut store, &config, &mut rng)?;
        Ok(Self {
            config,
            store,
            sender,
            receiver,
            baselines,
        })
    }

    pub fn sender_ids(&self) -> Vec<ParamId> {
        self.sender.param_ids()
    }

    /// Order-sensitive FNV-1a hash over the bit patterns of the given tensors.
    pub fn checksum(&self, ids: &[ParamId]) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for &id in ids {
            for v in &self.store.get(id).values {
                for b in v.to_bits().to_le_bytes() {
                    h ^= u64::from(b);
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }

    /// Overwrites the parameters of `self` with same-named tensors of `other`.
    pub fn copy_from(&mut self, other: &ParamStore) -> Result<(), NnError> {
        for t in self.store.iter_mut() {
            let id = other.id(&t.name).ok_or_else(|| NnError::Dimension {
                op: "copy_from",
                detail: format!("source has no tensor `{}`", t.name),
            })?;
            let src = other.get(id);
            if src.shape != t.shape {
                return Err(NnError::Dimension {
                    op: "copy_from",
                    detail: format!("`{}` has shape {:?}, source {:?}", t.name, t.shape, src.shape),
                });
            }
            t.values.clone_from(&src.values);
            t.opt_state.clone_from(&src.opt_state);
        }
        Ok(())
    }
}

/// Position of the counter-based training RNG streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub epoch: u64,
    pub update: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    version: u32,
    code_version: String,
    model: ModelConfig,
    optimizer: RmsProp,
    rng: RngState,
    payload: String,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    extra: serde_json::Value,
}

#[derive(Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: RmsProp,
    pub rng: RngState,
    pub code_version: String,
    /// Free-form metadata (training configuration, best validation score, ...).
    pub extra: serde_json::Value,
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid checkpoint manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn save_checkpoint(
    dir: &Path,
    model: &Model,
    optimizer: &RmsProp,
    rng: RngState,
    extra: serde_json::Value,
) -> Result<(), CheckpointError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut payload = Vec::with_capacity(model.store.num_scalars() * 16);
    let mut tensors = Vec::with_capacity(model.store.len());
    for t in model.store.iter() {
        tensors.push(TensorEntry {
            name: t.name.clone(),
            shape: t.shape.clone(),
            dtype: "f64".into(),
            offset: payload.len() as u64,
        });
        for v in t.values.iter().chain(&t.opt_state) {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT.into(),
        version: 1,
        code_version: CODE_VERSION.into(),
        model: model.config.clone(),
        optimizer: *optimizer,
        rng,
        payload: TENSORS_FILE.into(),
        tensors,
        extra,
    };
    let p = dir.join(TENSORS_FILE);
    fs::write(&p, payload).map_err(io_err(&p))?;
    let m = dir.join(CHECKPOINT_FILE);
    fs::write(&m, serde_json::to_string_pretty(&manifest)?).map_err(io_err(&m))?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint, CheckpointError> {
    let mpath = dir.join(CHECKPOINT_FILE);
    let text = fs::read_to_string(&mpath).map_err(io_err(&mpath))?;
    let m: Manifest = serde_json::from_str(&text)?;
    if m.format != CHECKPOINT_FORMAT || m.version != 1 {
        return Err(CheckpointError::Format(format!(
            "unsupported format {} v{}",
            m.format, m.version
        )));
    }
    let ppath = dir.join(&m.payload);
    let bytes = fs::read(&ppath).map_err(io_err(&ppath))?;
    let mut model = Model::new(m.model.clone(), 0)?;
    if m.tensors.len() != model.store.len() {
        return Err(CheckpointError::Format(format!(
            "{} tensors stored, the configured model has {}",
            m.tensors.len(),
            model.store.len()
        )));
    }
    let mut cursor = 0u64;
    for e in &m.tensors {
        let id = model
            .store
            .id(&e.name)
            .ok_or_else(|| CheckpointError::Format(format!("unexpected tensor `{}`", e.name)))?;
        let t = model.store.get_mut(id);
        if e.shape != t.shape || e.dtype != "f64" {
            return Err(CheckpointError::Format(format!(
                "tensor `{}` stored as {} {:?}, model expects f64 {:?}",
                e.name, e.dtype, e.shape, t.shape
            )));
        }
        if e.offset != cursor {
            return Err(CheckpointError::Format(format!(
                "tensor `{}` at byte {} but previous data ends at {cursor}",
                e.name, e.offset
            )));
        }
        let n = t.len();
        let end = cursor as usize + 16 * n;
        if end > bytes.len() {
            return Err(CheckpointError::Format(format!("payload truncated at tensor `{}`", e.name)));
        }
        let mut vals = bytes[cursor as usize..end]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")));
        t.values = vals.by_ref().take(n).collect();
        t.opt_state = vals.collect();
        cursor = end as u64;
    }
    if cursor != bytes.len() as u64 {
        return Err(CheckpointError::Format(format!(
            "payload has {} bytes, manifest accounts for {cursor}",
            bytes.len()
        )));
    }
    Ok(Checkpoint {
        model,
        optimizer: m.optimizer,
        rng: m.rng,
        code_version: m.code_version,
        extra: m.extra,
    })
}
