//! Python bindings: worlds, episodes, models, single-episode runs and metrics.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use askroute::data::WorldSet;
use askroute::eval::{self, EvalPlan};
use askroute::interact::{run_asa, run_base, run_mc, AgentKind, MCConfig, RunOptions};
use askroute::lang::{LangConfig, Vocabulary};
use askroute::policy::{ModelConfig, ModelParams};
use askroute::world::{self, WorldConfig, WorldGraph};

fn py_err(e: askroute::Error) -> PyErr {
    match e {
        askroute::Error::Config(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn agent_kind(name: &str) -> PyResult<AgentKind> {
    match name {
        "base" => Ok(AgentKind::Base),
        "mc" => Ok(AgentKind::Mc),
        "asa" => Ok(AgentKind::Asa),
        other => Err(PyValueError::new_err(format!("unknown agent {other:?}; expected base, mc or asa"))),
    }
}

/// Procedurally generated viewpoint graph.
#[pyclass(name = "World", frozen)]
struct PyWorld(WorldGraph);

#[pymethods]
impl PyWorld {
    #[new]
    #[pyo3(signature = (seed, num_viewpoints=None))]
    fn new(seed: u64, num_viewpoints: Option<usize>) -> PyResult<Self> {
        let mut cfg = WorldConfig::default();
        if let Some(n) = num_viewpoints {
            cfg.num_viewpoints = n;
        }
        world::generate_world(&cfg, seed).map(Self).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        WorldGraph::load(&path).map(Self).map_err(py_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(&path).map_err(py_err)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }

    #[getter]
    fn landmark_classes(&self) -> usize {
        self.0.config.landmark_classes
    }

    #[getter]
    fn vis_dim(&self) -> usize {
        self.0.vis_dim()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn edge_count(&self) -> usize {
        self.0.edge_count()
    }

    fn neighbors(&self, v: usize) -> Vec<(usize, f64)> {
        self.0.neighbors(v).to_vec()
    }

    /// Euclidean distance between two viewpoints.
    fn distance(&self, a: usize, b: usize) -> PyResult<f64> {
        self.0.distance(a, b).map_err(py_err)
    }

    fn shortest_path(&self, a: usize, b: usize) -> PyResult<Vec<usize>> {
        self.0.shortest_path(a, b).map_err(py_err)
    }

    fn is_success(&self, final_viewpoint: usize, target: usize) -> PyResult<bool> {
        eval::is_success(&self.0, final_viewpoint, target).map_err(py_err)
    }
}

/// One navigation task: instruction, start, target and reference path.
#[pyclass(name = "Episode", frozen)]
struct PyEpisode(world::Episode);

#[pymethods]
impl PyEpisode {
    #[new]
    #[pyo3(signature = (world, seed, min_len=3, max_len=6))]
    fn new(world: &PyWorld, seed: u64, min_len: usize, max_len: usize) -> PyResult<Self> {
        let vocab = Vocabulary::new(world.0.config.landmark_classes);
        world::sample_episode(&world.0, &vocab, &LangConfig::default(), seed, (min_len, max_len))
            .map(Self)
            .map_err(py_err)
    }

    #[getter]
    fn start(&self) -> usize {
        self.0.start
    }

    #[getter]
    fn target(&self) -> usize {
        self.0.target
    }

    #[getter]
    fn path(&self) -> Vec<usize> {
        self.0.gt_trajectory.clone()
    }

    #[getter]
    fn tokens(&self) -> Vec<usize> {
        self.0.instruction.token_ids.clone()
    }

    /// Instruction as words, using the vocabulary of `world`.
    fn text(&self, world: &PyWorld) -> String {
        Vocabulary::new(world.0.config.landmark_classes).decode(&self.0.instruction.token_ids)
    }
}

/// Policy parameters (checkpoint).
#[pyclass(name = "Model", frozen)]
struct PyModel(ModelParams);

#[pymethods]
impl PyModel {
    /// Fresh random model sized for `world`.
    #[new]
    #[pyo3(signature = (world, seed, ask_enabled=false, hidden=64))]
    fn new(world: &PyWorld, seed: u64, ask_enabled: bool, hidden: usize) -> PyResult<Self> {
        let cfg = ModelConfig {
            vocab_size: Vocabulary::new(world.0.config.landmark_classes).len(),
            vis_dim: world.0.vis_dim(),
            hidden,
            ask_enabled,
            ..ModelConfig::default()
        };
        ModelParams::init(&cfg, seed).map(Self).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        ModelParams::load(&path).map(Self).map_err(py_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(&path).map_err(py_err)
    }

    #[getter]
    fn ask_enabled(&self) -> bool {
        self.0.ask_enabled()
    }
}

fn options(noise_c: f64, max_steps: usize) -> RunOptions {
    let mut o = RunOptions {
        max_steps,
        ..RunOptions::default()
    };
    o.oracle.noise_c = noise_c;
    o
}

/// Runs one episode and returns the interaction trace as a JSON string.
#[pyfunction]
#[pyo3(signature = (model, world, episode, agent="base", epsilon=0.3, noise_c=0.0, max_steps=20))]
fn run_episode(
    model: &PyModel,
    world: &PyWorld,
    episode: &PyEpisode,
    agent: &str,
    epsilon: f64,
    noise_c: f64,
    max_steps: usize,
) -> PyResult<String> {
    let opts = options(noise_c, max_steps);
    let trace = match agent_kind(agent)? {
        AgentKind::Base => run_base(&model.0, &world.0, &episode.0, max_steps),
        AgentKind::Mc => MCConfig::new(epsilon).and_then(|mc| run_mc(&model.0, &world.0, &episode.0, mc, &opts)),
        AgentKind::Asa => run_asa(&model.0, &world.0, &episode.0, &opts),
    }
    .map_err(py_err)?;
    trace.to_json().map_err(py_err)
}

/// Evaluates a model on episodes in one world; returns a metrics dict as JSON.
#[pyfunction]
#[pyo3(signature = (model, world, episodes, agent="base", epsilon=0.3, noise_c=0.0, max_steps=20))]
fn evaluate(
    model: &PyModel,
    world: &PyWorld,
    episodes: Vec<PyRef<'_, PyEpisode>>,
    agent: &str,
    epsilon: f64,
    noise_c: f64,
    max_steps: usize,
) -> PyResult<String> {
    let mut worlds = WorldSet::new();
    worlds.insert(world.0.clone());
    let eps: Vec<world::Episode> = episodes.iter().map(|e| e.0.clone()).collect();
    let plan = EvalPlan {
        agent: agent_kind(agent)?,
        epsilon,
        options: options(noise_c, max_steps),
    };
    let (_, m) = eval::evaluate(&model.0, &worlds, &eps, &plan).map_err(py_err)?;
    serde_json::to_string(&m).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Share of decisions that were questions.
#[pyfunction]
fn ask_percentage(asks: f64, moves: f64) -> f64 {
    eval::ask_percentage(asks, moves)
}

#[pymodule]
fn askroute_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyWorld>()?;
    m.add_class::<PyEpisode>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(run_episode, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(ask_percentage, m)?)?;
    m.add("SUCCESS_RADIUS", eval::SUCCESS_RADIUS)?;
    Ok(())
}
