//! Python bindings: configs, training runs, environments, replay and the
//! evaluation metrics.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use wmar::envs;
use wmar::evalkit::{self, PerfCurve};
use wmar::replay::{AugmentedBuffer, Chunk, Step};
use wmar::trainer::{self, ExperimentConfig, Mode, RunOptions};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn curve(points: Vec<(u64, f64)>) -> PyResult<PerfCurve> {
    PerfCurve::new(points).map_err(value_err)
}

#[pyclass(name = "Config", module = "wmar_py", skip_from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    /// Defaults, or the given config text.
    #[new]
    #[pyo3(signature = (text = None))]
    fn new(text: Option<&str>) -> PyResult<Self> {
        let inner = match text {
            Some(t) => ExperimentConfig::from_text(t).map_err(value_err)?,
            None => ExperimentConfig::default(),
        };
        Ok(Self { inner })
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.inner.set(key, value).map_err(value_err)
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(value_err)
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn experiment_hash(&self) -> String {
        self.inner.experiment_hash()
    }

    fn entries(&self) -> Vec<(String, String)> {
        self.inner.entries()
    }

    /// Task labels in training order.
    fn task_labels(&self) -> PyResult<Vec<String>> {
        Ok(self.inner.tasks().map_err(value_err)?.into_iter().map(|t| t.label).collect())
    }

    fn __repr__(&self) -> String {
        format!("Config(suite={:?}, hash={})", self.inner.suite, &self.inner.experiment_hash()[..12])
    }
}

#[pyclass(name = "RunRecord", module = "wmar_py", frozen)]
struct PyRunRecord {
    inner: trainer::RunRecord,
}

#[pymethods]
impl PyRunRecord {
    #[getter]
    fn mode(&self) -> String {
        self.inner.mode.to_string()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.inner.labels.clone()
    }

    #[getter]
    fn config_hash(&self) -> String {
        self.inner.config_hash.clone()
    }

    #[getter]
    fn steps_per_task(&self) -> Vec<u64> {
        self.inner.steps_per_task.clone()
    }

    #[getter]
    fn wall_clock_secs(&self) -> f64 {
        self.inner.wall_clock_secs
    }

    #[getter]
    fn peak_stored_steps(&self) -> usize {
        self.inner.accounting.peak_stored_steps
    }

    #[getter]
    fn memory_bound(&self) -> usize {
        self.inner.accounting.memory_bound
    }

    /// `(global_step, task_trained, eval_task, episodic_reward)` tuples.
    fn rows(&self) -> Vec<(u64, String, String, f64)> {
        self.inner
            .rows
            .iter()
            .map(|r| (r.global_step, r.task_trained.clone(), r.eval_task.clone(), r.episodic_reward))
            .collect()
    }

    /// `(global_step, reconstruction, reward, continuation, kl)` tuples.
    fn losses(&self) -> Vec<(u64, f64, f64, f64, f64)> {
        self.inner
            .losses
            .iter()
            .map(|l| (l.global_step, l.reconstruction, l.reward, l.continuation, l.kl))
            .collect()
    }

    /// Raw curve per evaluation task as `{label: [(step, reward), ...]}`.
    fn curves(&self) -> PyResult<Vec<(String, Vec<(u64, f64)>)>> {
        Ok(self
            .inner
            .curves()
            .map_err(runtime_err)?
            .into_iter()
            .map(|(l, c)| (l, c.points().to_vec()))
            .collect())
    }

    fn write_metrics_csv(&self, path: &str) -> PyResult<()> {
        evalkit::write_metrics_csv(std::path::Path::new(path), &self.inner.rows).map_err(runtime_err)
    }
}

fn parse_mode(mode: &str) -> PyResult<Mode> {
    mode.parse().map_err(value_err)
}

/// Runs `mode` (wmar, fifo_only, single_task, random) for one seed.
#[pyfunction]
#[pyo3(signature = (config, mode, seed))]
fn run(config: &PyConfig, mode: &str, seed: u64) -> PyResult<PyRunRecord> {
    let mode = parse_mode(mode)?;
    let inner = trainer::run_mode(&config.inner, mode, seed, &RunOptions::default()).map_err(runtime_err)?;
    Ok(PyRunRecord { inner })
}

/// Resumable training loop for the continual modes.
#[pyclass(name = "Trainer", module = "wmar_py")]
struct PyTrainer {
    inner: trainer::Trainer,
}

#[pymethods]
impl PyTrainer {
    #[new]
    #[pyo3(signature = (config, seed, mode = "wmar"))]
    fn new(config: &PyConfig, seed: u64, mode: &str) -> PyResult<Self> {
        let tasks = config.inner.tasks().map_err(value_err)?;
        let inner = trainer::Trainer::new(&config.inner, parse_mode(mode)?, tasks.clone(), tasks, seed)
            .map_err(runtime_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let inner = trainer::Trainer::load(std::path::Path::new(path)).map_err(runtime_err)?;
        Ok(Self { inner })
    }

    fn to_bytes(&self) -> PyResult<Vec<u8>> {
        self.inner.to_bytes().map_err(runtime_err)
    }

    #[staticmethod]
    fn from_bytes(bytes: Vec<u8>) -> PyResult<Self> {
        let inner = trainer::Trainer::from_bytes(&bytes).map_err(runtime_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn global_step(&self) -> u64 {
        self.inner.global_step()
    }

    #[getter]
    fn is_done(&self) -> bool {
        self.inner.is_done()
    }

    /// Trains until the end, or until `stop_after_iterations` iterations
    /// have run in total (returns None in that case).
    #[pyo3(signature = (stop_after_iterations = None, checkpoint_dir = None))]
    fn run(
        &mut self,
        stop_after_iterations: Option<u64>,
        checkpoint_dir: Option<String>,
    ) -> PyResult<Option<PyRunRecord>> {
        let opts = RunOptions {
            checkpoint_dir: checkpoint_dir.map(Into::into),
            stop_after_iterations,
        };
        Ok(self.inner.run(&opts).map_err(runtime_err)?.map(|inner| PyRunRecord { inner }))
    }
}

/// One environment from a suite, with its own RNG.
#[pyclass(name = "Env", module = "wmar_py")]
struct PyEnv {
    env: envs::Env,
    label: String,
    rng: ChaCha8Rng,
}

#[pymethods]
impl PyEnv {
    #[new]
    #[pyo3(signature = (suite, index, seed = 0))]
    fn new(suite: &str, index: usize, seed: u64) -> PyResult<Self> {
        let tasks = envs::suite(suite).map_err(value_err)?;
        let task = tasks
            .get(index)
            .ok_or_else(|| value_err(format!("suite {suite} has {} tasks", tasks.len())))?;
        Ok(Self {
            env: task.build().map_err(value_err)?,
            label: task.label.clone(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    #[getter]
    fn label(&self) -> String {
        self.label.clone()
    }

    #[getter]
    fn observation_width(&self) -> usize {
        envs::OBS_WIDTH
    }

    #[getter]
    fn action_count(&self) -> usize {
        envs::ACTION_COUNT
    }

    fn reset(&mut self) -> Vec<f64> {
        self.env.reset(&mut self.rng).observation
    }

    /// Returns `(observation, reward, done, terminal)`.
    fn step(&mut self, action: usize) -> PyResult<(Vec<f64>, f64, bool, bool)> {
        let t = self.env.step(action, &mut self.rng).map_err(value_err)?;
        Ok((t.step.observation, t.step.reward, t.done, t.step.is_terminal))
    }

    /// Mean episodic reward of the uniform random policy.
    fn random_policy_mean(&mut self, episodes: usize) -> f64 {
        envs::random_policy(&mut self.env, episodes, &mut self.rng).mean()
    }
}

/// FIFO plus reservoir store of fixed-length chunks.
#[pyclass(name = "AugmentedBuffer", module = "wmar_py")]
struct PyBuffer {
    inner: AugmentedBuffer,
    next_key: ChaCha8Rng,
}

#[pymethods]
impl PyBuffer {
    #[new]
    #[pyo3(signature = (fifo_steps, ltdm_chunks, chunk_size, seed = 0))]
    fn new(fifo_steps: usize, ltdm_chunks: usize, chunk_size: usize, seed: u64) -> Self {
        Self {
            inner: AugmentedBuffer::new(fifo_steps, ltdm_chunks, chunk_size, seed),
            next_key: ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15),
        }
    }

    /// Inserts one chunk given as `(observation, action, reward, is_first,
    /// is_terminal)` steps.
    #[pyo3(signature = (steps, task = 0))]
    fn insert(&mut self, steps: Vec<(Vec<f64>, usize, f64, bool, bool)>, task: usize) -> PyResult<()> {
        if steps.len() != self.inner.chunk_size() {
            return Err(value_err(format!(
                "chunk has {} steps, expected {}",
                steps.len(),
                self.inner.chunk_size()
            )));
        }
        let steps = steps
            .into_iter()
            .map(|(observation, action, reward, is_first, is_terminal)| Step {
                observation,
                action,
                reward,
                is_first,
                is_terminal,
            })
            .collect();
        let key = rand::Rng::gen::<f64>(&mut self.next_key);
        self.inner.insert(Chunk::new(steps, key, task));
        Ok(())
    }

    #[getter]
    fn stored_steps(&self) -> usize {
        self.inner.stored_steps()
    }

    #[getter]
    fn memory_bound(&self) -> usize {
        self.inner.memory_bound()
    }

    /// Samples a minibatch and returns its rewards as `batch × length`.
    fn sample_rewards(&mut self, batch_size: usize, batch_length: usize) -> PyResult<Vec<Vec<f64>>> {
        let mb = self.inner.sample(batch_size, batch_length).map_err(runtime_err)?;
        Ok(mb
            .windows
            .iter()
            .map(|w| w.iter().map(|s| s.reward).collect())
            .collect())
    }
}

#[pyfunction]
fn normalize(p: f64, p_rand: f64, p_single: f64) -> PyResult<f64> {
    evalkit::normalize(p, p_rand, p_single).map_err(value_err)
}

/// Average forgetting and its per-task components from normalized curves.
#[pyfunction]
fn forgetting(curves: Vec<Vec<(u64, f64)>>, n: u64) -> PyResult<(f64, Vec<f64>)> {
    let cs = curves.into_iter().map(curve).collect::<PyResult<Vec<_>>>()?;
    evalkit::forgetting(&cs, n).map_err(value_err)
}

/// Average forward transfer (None if every task is excluded) and its
/// components.
#[pyfunction]
fn forward_transfer(
    continual: Vec<Vec<(u64, f64)>>,
    single: Vec<Vec<(u64, f64)>>,
    n: u64,
) -> PyResult<(Option<f64>, Vec<Option<f64>>)> {
    let cl = continual.into_iter().map(curve).collect::<PyResult<Vec<_>>>()?;
    let st = single.into_iter().map(curve).collect::<PyResult<Vec<_>>>()?;
    let r = evalkit::forward_transfer(&cl, &st, n).map_err(value_err)?;
    Ok((r.average, r.components))
}

/// `(median, q25, q75)`.
#[pyfunction]
fn quartiles(values: Vec<f64>) -> PyResult<(f64, f64, f64)> {
    let q = evalkit::quartiles(&values).map_err(value_err)?;
    Ok((q.median, q.q25, q.q75))
}

/// Finite-difference checks: worst relative error over the ops and over the
/// full world-model loss.
#[pyfunction]
#[pyo3(signature = (trials = 100, seed = 0))]
fn grad_check(trials: usize, seed: u64) -> PyResult<(f64, f64)> {
    let ops = wmar::diffcore::op_suite(trials, seed).map_err(runtime_err)?;
    let wm = wmar::worldmodel::loss_grad_check(seed).map_err(runtime_err)?;
    Ok((ops.max_rel_err, wm.max_rel_err))
}

#[pymodule]
fn wmar_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyRunRecord>()?;
    m.add_class::<PyTrainer>()?;
    m.add_class::<PyEnv>()?;
    m.add_class::<PyBuffer>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(normalize, m)?)?;
    m.add_function(wrap_pyfunction!(forgetting, m)?)?;
    m.add_function(wrap_pyfunction!(forward_transfer, m)?)?;
    m.add_function(wrap_pyfunction!(quartiles, m)?)?;
    m.add_function(wrap_pyfunction!(grad_check, m)?)?;
    Ok(())
}
