//! Python bindings: datasets, models, training, episodes and the analysis
//! statistics. Structured values cross the boundary as plain dicts and lists.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use refgame_core::analysis::{self, EpisodeLog};
use refgame_core::dataset::{load_dataset, save_dataset, synthetic_with_splits, SyntheticSpec};
use refgame_core::fixtures;
use refgame_core::game::{k_for, play_episode, EpisodeTrace, GameConfig, GameSplit, PlayMode};
use refgame_core::model::{load_checkpoint, save_checkpoint, RngState};
use refgame_core::nn::RmsProp;
use refgame_core::training::{evaluate_split, train as train_agents, TrainConfig};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(runtime_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_kwargs<T: DeserializeOwned>(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<T> {
    let map = match kwargs {
        Some(d) => {
            let text: String = d.py().import("json")?.call_method1("dumps", (d,))?.extract()?;
            serde_json::from_str::<Map<String, Value>>(&text).map_err(value_err)?
        }
        None => Map::new(),
    };
    serde_json::from_value(Value::Object(map)).map_err(value_err)
}

/// Objects with sender views, receiver word vectors and named splits.
#[pyclass(name = "Dataset", module = "refgame")]
struct PyDataset {
    inner: refgame_core::dataset::Dataset,
}

#[pymethods]
impl PyDataset {
    /// Generates a synthetic dataset; keyword arguments override spec fields.
    #[staticmethod]
    #[pyo3(signature = (**kwargs))]
    fn synthetic(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let spec: SyntheticSpec = from_kwargs(kwargs)?;
        spec.validate().map_err(value_err)?;
        let inner = synthetic_with_splits(&spec).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: load_dataset(&path).map_err(value_err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_dataset(&self.inner, &path).map_err(runtime_err)
    }

    #[getter]
    fn class_names(&self) -> Vec<String> {
        self.inner.classes.iter().map(|c| c.name.clone()).collect()
    }

    #[getter]
    fn difficulty(&self) -> Vec<Option<f64>> {
        self.inner.classes.iter().map(|c| c.difficulty).collect()
    }

    #[getter]
    fn splits(&self) -> Vec<String> {
        self.inner.splits.iter().map(|s| s.name.clone()).collect()
    }

    #[getter]
    fn sender_dim(&self) -> usize {
        self.inner.sender_dim
    }

    #[getter]
    fn receiver_dim(&self) -> usize {
        self.inner.receiver_dim
    }

    fn __len__(&self) -> usize {
        self.inner.classes.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset({} classes, sender_dim={}, receiver_dim={}, splits={:?})",
            self.inner.classes.len(),
            self.inner.sender_dim,
            self.inner.receiver_dim,
            self.splits()
        )
    }
}

/// Sender, receiver and baseline parameters.
#[pyclass(name = "Model", module = "refgame")]
struct PyModel {
    inner: refgame_core::Model,
}

impl PyModel {
    fn game(&self, max_steps: usize, greedy: bool) -> GameConfig {
        GameConfig {
            message_dim: self.inner.config.message_dim,
            max_steps,
            mode: if greedy { PlayMode::TestGreedy } else { PlayMode::TrainSample },
            k: 1,
        }
    }
}

#[pymethods]
impl PyModel {
    /// Freshly initialised agents sized for `dataset`; keyword arguments are
    /// training-configuration fields such as `message_dim` or `memory_size`.
    #[new]
    #[pyo3(signature = (dataset, seed=0, **kwargs))]
    fn new(dataset: &PyDataset, seed: u64, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let cfg: TrainConfig = from_kwargs(kwargs)?;
        let inner = refgame_core::Model::new(cfg.model_config(&dataset.inner), seed).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: load_checkpoint(&path).map_err(value_err)?.model })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let rng = RngState { seed: 0, epoch: 0, update: 0 };
        save_checkpoint(&path, &self.inner, &RmsProp::default(), rng, Value::Null).map_err(runtime_err)
    }

    #[getter]
    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.config)
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.inner.store.num_scalars()
    }

    /// Hex digest of the sender's parameters.
    fn sender_checksum(&self) -> String {
        format!("{:016x}", self.inner.checksum(&self.inner.sender_ids()))
    }

    /// Plays one episode on `(object, view)` of a split and returns its trace.
    #[pyo3(signature = (dataset, split, object, view, max_steps=10, greedy=true, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn play<'py>(
        &self,
        py: Python<'py>,
        dataset: &PyDataset,
        split: &str,
        object: usize,
        view: usize,
        max_steps: usize,
        greedy: bool,
        seed: u64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let s = GameSplit::new(&dataset.inner, split).map_err(value_err)?;
        if object >= s.num_objects() {
            return Err(value_err(format!("object {object} out of range for {} objects", s.num_objects())));
        }
        let views = s.pairs().iter().filter(|p| p.0 == object).count();
        if view >= views {
            return Err(value_err(format!("view {view} out of range for {views} views")));
        }
        let inst = s.instance(object, view);
        let game = self.game(max_steps, greedy);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = &self.inner;
        let trace = play_episode(&m.store, &m.sender, &m.receiver, &inst, &game, &mut rng).map_err(value_err)?;
        to_py(py, &trace)
    }

    /// Greedy episodes over a whole split plus accuracy@K and accuracy@1.
    #[pyo3(signature = (dataset, split, max_steps=10, k=None, k_fraction=0.1))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        dataset: &PyDataset,
        split: &str,
        max_steps: usize,
        k: Option<usize>,
        k_fraction: f64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let s = GameSplit::new(&dataset.inner, split).map_err(value_err)?;
        let k = k.unwrap_or_else(|| k_for(s.num_candidates(), k_fraction));
        let traces = evaluate_split(&self.inner, &s, &self.game(max_steps, true)).map_err(runtime_err)?;
        let logs = EpisodeLog::from_traces(&traces).map_err(runtime_err)?;
        let acc_k = analysis::accuracy_at_k(&logs, k).map_err(value_err)?;
        let acc_1 = analysis::accuracy_at_k(&logs, 1).map_err(value_err)?;
        let mean_length = logs.iter().map(|l| l.length as f64).sum::<f64>() / logs.len() as f64;
        to_py(
            py,
            &serde_json::json!({
                "split": split, "K": k, "acc@K": acc_k, "acc@1": acc_1,
                "mean_length": mean_length, "episodes": traces,
            }),
        )
    }
}

/// Trains new agents; keyword arguments are training-configuration fields.
/// Returns `(best_model, epoch_log)`.
#[pyfunction]
#[pyo3(signature = (dataset, **kwargs))]
fn train<'py>(
    py: Python<'py>,
    dataset: &PyDataset,
    kwargs: Option<&Bound<'_, PyDict>>,
) -> PyResult<(PyModel, Bound<'py, PyAny>)> {
    let cfg: TrainConfig = from_kwargs(kwargs)?;
    cfg.validate().map_err(value_err)?;
    let data = &dataset.inner;
    let outcome = py.detach(|| train_agents(&cfg, data)).map_err(runtime_err)?;
    let log = to_py(py, &outcome.log)?;
    Ok((PyModel { inner: outcome.best }, log))
}

/// Pearson correlation with its two-sided p-value.
#[pyfunction]
fn pearson(x: Vec<f64>, y: Vec<f64>) -> PyResult<(f64, f64)> {
    let c = analysis::pearson(&x, &y).map_err(value_err)?;
    Ok((c.r, c.p))
}

fn traces_from_py(episodes: &Bound<'_, PyAny>) -> PyResult<Vec<EpisodeTrace>> {
    let text: String = episodes.py().import("json")?.call_method1("dumps", (episodes,))?.extract()?;
    serde_json::from_str(&text).map_err(value_err)
}

/// Fraction of episode traces whose target ranks within the top `k`.
#[pyfunction]
fn accuracy_at_k(episodes: &Bound<'_, PyAny>, k: usize) -> PyResult<f64> {
    let logs = EpisodeLog::from_traces(&traces_from_py(episodes)?).map_err(value_err)?;
    analysis::accuracy_at_k(&logs, k).map_err(value_err)
}

/// Per-step entropy curves of a list of episode traces.
#[pyfunction]
fn entropy_curves<'py>(py: Python<'py>, episodes: &Bound<'_, PyAny>) -> PyResult<Bound<'py, PyAny>> {
    let logs = EpisodeLog::from_traces(&traces_from_py(episodes)?).map_err(value_err)?;
    to_py(py, &analysis::entropy_curves(&logs))
}

/// The two-object game with hand-set agents that always win in one step.
#[pyfunction]
fn oracle() -> (PyDataset, PyModel) {
    (
        PyDataset { inner: fixtures::oracle_dataset() },
        PyModel { inner: fixtures::oracle_model() },
    )
}

#[pymodule]
fn refgame(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(entropy_curves, m)?)?;
    m.add_function(wrap_pyfunction!(oracle, m)?)?;
    Ok(())
}
