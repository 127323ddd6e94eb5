//! The continual training loop: per task, alternate environment
//! collection with world-model updates on the augmented buffer and
//! actor-critic updates in dreams, evaluating on every suite task at a
//! fixed step interval. Also runs the single-task, FIFO-only and
//! random-policy baselines.

mod config;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{ActionMode, Agent, AgentError};
use crate::diffcore::Tensor;
use crate::envs::{self, Env, EnvError, TaskConfig};
use crate::evalkit::{curves_from_rows, MetricError, MetricRow, PerfCurve};
use crate::persist::{self, PersistError};
use crate::replay::{AugmentedBuffer, ReplayError, ReplayState, Splicer, Step};
use crate::worldmodel::{ModelState, WmDiagnostics, WorldModel, WorldModelError};

pub use config::{ConfigError, EvalConfig, ExperimentConfig, Mode, ReplayConfig, RunBudget};

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    WorldModel(WorldModelError),
    #[error("non-finite training loss at step {step}: {detail} (crash checkpoint: {checkpoint:?})")]
    NonFinite {
        step: u64,
        detail: String,
        checkpoint: Option<PathBuf>,
    },
    #[error("stored experience {stored} exceeds the configured bound {bound}")]
    MemoryBound { stored: usize, bound: usize },
    #[error(transparent)]
    Persist(#[from] PersistError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Mode(String),
}

impl From<WorldModelError> for TrainerError {
    fn from(e: WorldModelError) -> Self {
        TrainerError::WorldModel(e)
    }
}

/// Mean world-model and actor-critic diagnostics over one iteration's
/// updates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub global_step: u64,
    pub updates: usize,
    pub reconstruction: f64,
    pub reward: f64,
    pub continuation: f64,
    pub kl: f64,
    pub actor_entropy: f64,
    pub mean_return: f64,
}

/// Step and chunk counters for checking the accounting invariants.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Accounting {
    pub steps_collected: u64,
    pub chunks_emitted: u64,
    pub chunks_offered_long_term: u64,
    /// Steps still waiting in the splicer for their chunk.
    pub steps_in_carry: u64,
    pub memory_bound: usize,
    pub peak_stored_steps: usize,
    /// Times the memory bound was checked (once per stored chunk).
    pub memory_checks: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub mode: Mode,
    pub suite: String,
    /// Evaluation tasks, in suite order.
    pub labels: Vec<String>,
    pub seed: u64,
    pub config_hash: String,
    pub rows: Vec<MetricRow>,
    pub losses: Vec<LossPoint>,
    pub steps_per_task: Vec<u64>,
    pub accounting: Accounting,
    pub wall_clock_secs: f64,
    pub checkpoints: Vec<PathBuf>,
}

impl RunRecord {
    /// Raw performance curves, one per evaluation task.
    pub fn curves(&self) -> Result<Vec<(String, PerfCurve)>, MetricError> {
        curves_from_rows(&self.rows)
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Where periodic and crash checkpoints go.
    pub checkpoint_dir: Option<PathBuf>,
    /// Stop (as if interrupted) after this many iterations in total.
    pub stop_after_iterations: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Streams {
    env: ChaCha8Rng,
    act: ChaCha8Rng,
    train: ChaCha8Rng,
    eval: ChaCha8Rng,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

const MAGIC: [u8; 4] = *b"WMTR";
const VERSION: u32 = 1;
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const CRASH_FILE: &str = "crash.bin";

/// Complete state of one run; serializing it is a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trainer {
    config: ExperimentConfig,
    mode: Mode,
    tasks: Vec<TaskConfig>,
    eval_tasks: Vec<TaskConfig>,
    scales: Vec<f64>,
    seed: u64,
    hash: String,
    wm: WorldModel,
    agent: Agent,
    replay: ReplayState,
    memory_bound: usize,
    env: Option<Env>,
    latent: ModelState,
    started: bool,
    task: usize,
    iteration: u64,
    iterations_done: u64,
    global_step: u64,
    next_eval: u64,
    rng: Streams,
    rows: Vec<MetricRow>,
    losses: Vec<LossPoint>,
    steps_per_task: Vec<u64>,
    peak_stored: usize,
    memory_checks: u64,
    elapsed_secs: f64,
    checkpoints: Vec<PathBuf>,
}

impl Trainer {
    /// A fresh run training on `tasks` in order and evaluating on
    /// `eval_tasks`. `mode` must be `Wmar` or `FifoOnly`.
    pub fn new(
        config: &ExperimentConfig,
        mode: Mode,
        tasks: Vec<TaskConfig>,
        eval_tasks: Vec<TaskConfig>,
        seed: u64,
    ) -> Result<Self, TrainerError> {
        config.validate()?;
        if !matches!(mode, Mode::Wmar | Mode::FifoOnly) {
            return Err(TrainerError::Mode(format!("the training loop cannot run mode {mode}")));
        }
        let scales = tasks
            .iter()
            .map(|t| {
                if config.reward_scales.is_empty() {
                    1.0
                } else {
                    config.reward_scales.get(&t.label).unwrap_or(1.0)
                }
            })
            .collect();
        let mut init = stream(seed, 1);
        let mut wm_config = config.wm.clone();
        wm_config.obs_width = envs::OBS_WIDTH;
        wm_config.action_count = envs::ACTION_COUNT;
        let wm = WorldModel::new(wm_config, &mut init);
        let agent = Agent::new(config.agent.clone(), wm.config.feature_width(), envs::ACTION_COUNT, &mut init)?;
        let r = &config.replay;
        let memory_bound = r.memory_bound();
        let (fifo, ltdm) = match mode {
            Mode::FifoOnly => (memory_bound, 0),
            _ => (r.fifo_steps, r.ltdm_chunks),
        };
        let buffer = AugmentedBuffer::new(fifo, ltdm, r.chunk_size, init.gen());
        let splicer = Splicer::new(r.chunk_size, init.gen())?;
        let latent = ModelState::zeros(1, &wm.config);
        let n_tasks = tasks.len();
        Ok(Self {
            config: config.clone(),
            mode,
            tasks,
            eval_tasks,
            scales,
            seed,
            hash: config.experiment_hash(),
            wm,
            agent,
            replay: ReplayState { buffer, splicer },
            memory_bound,
            env: None,
            latent,
            started: false,
            task: 0,
            iteration: 0,
            iterations_done: 0,
            global_step: 0,
            next_eval: 0,
            rng: Streams {
                env: stream(seed, 2),
                act: stream(seed, 3),
                train: stream(seed, 4),
                eval: stream(seed, 5),
            },
            rows: Vec::new(),
            losses: Vec::new(),
            steps_per_task: vec![0; n_tasks],
            peak_stored: 0,
            memory_checks: 0,
            elapsed_secs: 0.0,
            checkpoints: Vec::new(),
        })
    }

    pub fn world_model(&self) -> &WorldModel {
        &self.wm
    }

    pub fn agent(&self) -> &Agent {
        &self.agent
    }

    pub fn buffer(&self) -> &AugmentedBuffer {
        &self.replay.buffer
    }

    pub fn global_step(&self) -> u64 {
        self.global_step
    }

    pub fn is_done(&self) -> bool {
        self.started && self.task >= self.tasks.len()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, TrainerError> {
        Ok(persist::encode(MAGIC, VERSION, self)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TrainerError> {
        Ok(persist::decode(MAGIC, VERSION, bytes)?)
    }

    pub fn load(path: &Path) -> Result<Self, TrainerError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    fn write_checkpoint(&mut self, dir: &Path, name: &str) -> Result<PathBuf, TrainerError> {
        let path = dir.join(name);
        if !self.checkpoints.contains(&path) {
            self.checkpoints.push(path.clone());
        }
        persist::write_atomic(&path, &self.to_bytes()?)?;
        Ok(path)
    }

    /// Runs until the budget is spent (returning the record) or until
    /// `stop_after_iterations` (returning `None`).
    pub fn run(&mut self, opts: &RunOptions) -> Result<Option<RunRecord>, TrainerError> {
        let clock = Instant::now();
        let base = self.elapsed_secs;
        let out = self.run_inner(opts, clock, base);
        self.elapsed_secs = base + clock.elapsed().as_secs_f64();
        out
    }

    fn run_inner(&mut self, opts: &RunOptions, clock: Instant, base: f64) -> Result<Option<RunRecord>, TrainerError> {
        if !self.started {
            self.evaluate_all()?;
            self.started = true;
            self.next_eval = self.config.eval.interval;
        }
        let k = self.config.budget.k();
        while self.task < self.tasks.len() {
            if self.iteration >= k {
                self.task += 1;
                self.iteration = 0;
                self.env = None;
                continue;
            }
            if let Err(e) = self.iterate() {
                if let TrainerError::NonFinite { step, detail, .. } = e {
                    let checkpoint = match &opts.checkpoint_dir {
                        Some(dir) => {
                            self.elapsed_secs = base + clock.elapsed().as_secs_f64();
                            Some(self.write_checkpoint(dir, CRASH_FILE)?)
                        }
                        None => None,
                    };
                    return Err(TrainerError::NonFinite {
                        step,
                        detail,
                        checkpoint,
                    });
                }
                return Err(e);
            }
            self.iteration += 1;
            self.iterations_done += 1;
            if self.global_step >= self.next_eval || self.iteration == k {
                self.evaluate_all()?;
                while self.next_eval <= self.global_step {
                    self.next_eval += self.config.eval.interval;
                }
            }
            let every = self.config.checkpoint_every;
            if let Some(dir) = &opts.checkpoint_dir {
                if every > 0 && self.iterations_done % every == 0 {
                    self.elapsed_secs = base + clock.elapsed().as_secs_f64();
                    let dir = dir.clone();
                    self.write_checkpoint(&dir, CHECKPOINT_FILE)?;
                }
            }
            if opts.stop_after_iterations.map_or(false, |s| self.iterations_done >= s) {
                return Ok(None);
            }
        }
        self.elapsed_secs = base + clock.elapsed().as_secs_f64();
        Ok(Some(self.record()))
    }

    fn record(&self) -> RunRecord {
        let splicer = &self.replay.splicer;
        RunRecord {
            mode: self.mode,
            suite: self.config.suite.clone(),
            labels: self.eval_tasks.iter().map(|t| t.label.clone()).collect(),
            seed: self.seed,
            config_hash: self.hash.clone(),
            rows: self.rows.clone(),
            losses: self.losses.clone(),
            steps_per_task: self.steps_per_task.clone(),
            accounting: Accounting {
                steps_collected: self.global_step,
                chunks_emitted: splicer.chunks_emitted(),
                chunks_offered_long_term: self.replay.buffer.ltdm.offered(),
                steps_in_carry: splicer.carry().len() as u64,
                memory_bound: self.memory_bound,
                peak_stored_steps: self.peak_stored,
                memory_checks: self.memory_checks,
            },
            wall_clock_secs: self.elapsed_secs,
            checkpoints: self.checkpoints.clone(),
        }
    }

    fn store(&mut self, step: Step) -> Result<(), TrainerError> {
        self.global_step += 1;
        self.steps_per_task[self.task] += 1;
        if let Some(chunk) = self.replay.splicer.push(step, self.task) {
            self.replay.buffer.insert(chunk);
            let stored = self.replay.buffer.stored_steps();
            self.memory_checks += 1;
            self.peak_stored = self.peak_stored.max(stored);
            if stored > self.memory_bound {
                return Err(TrainerError::MemoryBound {
                    stored,
                    bound: self.memory_bound,
                });
            }
        }
        Ok(())
    }

    fn observe(&mut self, action: usize, obs: &[f64], first: bool) -> Result<(), TrainerError> {
        let x = Tensor::row_vector(obs.to_vec());
        self.latent = self
            .wm
            .observe_step(&self.latent, &[action], &x, &[first], &mut self.rng.act)?
            .state;
        Ok(())
    }

    fn collect_step(&mut self) -> Result<(), TrainerError> {
        if self.env.is_none() {
            self.env = Some(self.tasks[self.task].build()?);
        }
        let env = self.env.as_mut().expect("environment built");
        if !env.is_active() {
            let step = env.reset(&mut self.rng.env);
            self.observe(0, &step.observation, true)?;
            return self.store(step);
        }
        let action = if self.global_step < self.config.prefill_steps {
            self.rng.act.gen_range(0..envs::ACTION_COUNT)
        } else {
            self.agent.act(&self.latent, ActionMode::Sample, &mut self.rng.act)?.0[0]
        };
        let env = self.env.as_mut().expect("environment built");
        let mut step = env.step(action, &mut self.rng.env)?.step;
        self.observe(action, &step.observation, false)?;
        step.reward *= self.scales[self.task];
        self.store(step)
    }

    fn iterate(&mut self) -> Result<(), TrainerError> {
        for _ in 0..self.config.budget.steps_per_iteration {
            self.collect_step()?;
        }
        if self.global_step < self.config.prefill_steps || self.replay.buffer.is_empty() {
            return Ok(());
        }
        let updates = self.config.budget.updates_per_iteration();
        if updates == 0 {
            return Ok(());
        }
        let (b, l) = (self.config.replay.batch_size, self.config.replay.batch_length);
        let mut sum = WmDiagnostics::default();
        let (mut entropy, mut ret) = (0.0, 0.0);
        for _ in 0..updates {
            let mb = self.replay.buffer.sample(b, l)?;
            let (d, post) = match self.wm.train_step(&mb.windows, &mut self.rng.train) {
                Ok(x) => x,
                Err(WorldModelError::NonFinite(detail)) => {
                    return Err(TrainerError::NonFinite {
                        step: self.global_step,
                        detail,
                        checkpoint: None,
                    })
                }
                Err(e) => return Err(e.into()),
            };
            let ac = self.agent.train_in_dream(&self.wm, &post, &mut self.rng.train)?;
            if !(ac.actor_loss.is_finite() && ac.critic_loss.is_finite()) {
                return Err(TrainerError::NonFinite {
                    step: self.global_step,
                    detail: "actor-critic loss".into(),
                    checkpoint: None,
                });
            }
            sum.reconstruction += d.reconstruction;
            sum.reward += d.reward;
            sum.continuation += d.continuation;
            sum.kl += d.kl;
            entropy += ac.entropy;
            ret += ac.mean_return;
        }
        let n = updates as f64;
        self.losses.push(LossPoint {
            global_step: self.global_step,
            updates,
            reconstruction: sum.reconstruction / n,
            reward: sum.reward / n,
            continuation: sum.continuation / n,
            kl: sum.kl / n,
            actor_entropy: entropy / n,
            mean_return: ret / n,
        });
        Ok(())
    }

    fn evaluate_all(&mut self) -> Result<(), TrainerError> {
        let trained = self.tasks[self.task.min(self.tasks.len().saturating_sub(1))].label.clone();
        for i in 0..self.eval_tasks.len() {
            let task = self.eval_tasks[i].clone();
            let reward = evaluate_policy(
                &self.wm,
                &self.agent,
                &task,
                self.config.eval.episodes,
                &mut self.rng.eval,
            )?;
            self.rows.push(MetricRow {
                global_step: self.global_step,
                task_trained: trained.clone(),
                eval_task: task.label.clone(),
                episodic_reward: reward,
            });
        }
        Ok(())
    }
}

/// Mean raw episodic reward of the actor (sampled actions, parameters
/// untouched) over `episodes` parallel episodes of `task`.
pub fn evaluate_policy<R: Rng + ?Sized>(
    wm: &WorldModel,
    agent: &Agent,
    task: &TaskConfig,
    episodes: usize,
    rng: &mut R,
) -> Result<f64, TrainerError> {
    let mut envs: Vec<Env> = (0..episodes).map(|_| task.build()).collect::<Result<_, _>>()?;
    let mut obs = Vec::with_capacity(episodes * envs::OBS_WIDTH);
    for e in envs.iter_mut() {
        obs.extend(e.reset(rng).observation);
    }
    let mut state = ModelState::zeros(episodes, &wm.config);
    let x = Tensor::from_rows(episodes, envs::OBS_WIDTH, obs.clone());
    state = wm.observe_step(&state, &vec![0; episodes], &x, &vec![true; episodes], rng)?.state;
    let mut totals = vec![0.0; episodes];
    let first = vec![false; episodes];
    while envs.iter().any(Env::is_active) {
        let (actions, _) = agent.act(&state, ActionMode::Sample, rng)?;
        for (i, e) in envs.iter_mut().enumerate() {
            if e.is_active() {
                let tr = e.step(actions[i], rng)?;
                totals[i] += tr.step.reward;
                obs[i * envs::OBS_WIDTH..(i + 1) * envs::OBS_WIDTH].copy_from_slice(&tr.step.observation);
            }
        }
        let x = Tensor::from_rows(episodes, envs::OBS_WIDTH, obs.clone());
        state = wm.observe_step(&state, &actions, &x, &first, rng)?.state;
    }
    Ok(totals.iter().sum::<f64>() / episodes as f64)
}

fn finish(mut trainer: Trainer, opts: &RunOptions) -> Result<RunRecord, TrainerError> {
    trainer
        .run(opts)?
        .ok_or_else(|| TrainerError::Mode("run stopped before completion".into()))
}

/// Trains on every suite task in order, evaluating on all of them.
pub fn run_continual(config: &ExperimentConfig, seed: u64) -> Result<RunRecord, TrainerError> {
    run_continual_with(config, seed, &RunOptions::default())
}

pub fn run_continual_with(config: &ExperimentConfig, seed: u64, opts: &RunOptions) -> Result<RunRecord, TrainerError> {
    let tasks = config.tasks()?;
    finish(Trainer::new(config, Mode::Wmar, tasks.clone(), tasks, seed)?, opts)
}

/// The continual loop with the reservoir disabled and the FIFO grown to
/// the same total memory.
pub fn run_ablation_fifo_only(config: &ExperimentConfig, seed: u64) -> Result<RunRecord, TrainerError> {
    run_ablation_fifo_only_with(config, seed, &RunOptions::default())
}

pub fn run_ablation_fifo_only_with(
    config: &ExperimentConfig,
    seed: u64,
    opts: &RunOptions,
) -> Result<RunRecord, TrainerError> {
    let tasks = config.tasks()?;
    finish(Trainer::new(config, Mode::FifoOnly, tasks.clone(), tasks, seed)?, opts)
}

/// Trains and evaluates on suite task `index` alone.
pub fn run_single_task(config: &ExperimentConfig, index: usize, seed: u64) -> Result<RunRecord, TrainerError> {
    let tasks = config.tasks()?;
    let task = tasks
        .get(index)
        .cloned()
        .ok_or_else(|| TrainerError::Mode(format!("task index {index} out of range")))?;
    let mut rec = finish(
        Trainer::new(config, Mode::Wmar, vec![task.clone()], vec![task], seed)?,
        &RunOptions::default(),
    )?;
    rec.mode = Mode::SingleTask;
    Ok(rec)
}

/// One single-task run per suite task, merged into one record whose
/// steps count from zero within each task.
pub fn run_single_task_suite(config: &ExperimentConfig, seed: u64) -> Result<RunRecord, TrainerError> {
    let n = config.tasks()?.len();
    let mut merged: Option<RunRecord> = None;
    for i in 0..n {
        let rec = run_single_task(config, i, seed)?;
        merged = Some(match merged {
            None => rec,
            Some(mut m) => {
                m.labels.extend(rec.labels);
                m.rows.extend(rec.rows);
                m.losses.extend(rec.losses);
                m.steps_per_task.extend(rec.steps_per_task);
                m.wall_clock_secs += rec.wall_clock_secs;
                m.accounting.steps_collected += rec.accounting.steps_collected;
                m.accounting.peak_stored_steps = m.accounting.peak_stored_steps.max(rec.accounting.peak_stored_steps);
                m.accounting.memory_checks += rec.accounting.memory_checks;
                m
            }
        });
    }
    merged.ok_or_else(|| TrainerError::Mode("empty suite".into()))
}

/// Uniform random policy on every suite task, recorded at step 0.
pub fn run_random(config: &ExperimentConfig, seed: u64) -> Result<RunRecord, TrainerError> {
    config.validate()?;
    let tasks = config.tasks()?;
    let clock = Instant::now();
    let mut rng = stream(seed, 6);
    let mut rows = Vec::new();
    for t in &tasks {
        let mut env = t.build()?;
        let r = envs::random_policy(&mut env, config.eval.random_episodes, &mut rng);
        rows.push(MetricRow {
            global_step: 0,
            task_trained: t.label.clone(),
            eval_task: t.label.clone(),
            episodic_reward: r.mean(),
        });
    }
    Ok(RunRecord {
        mode: Mode::Random,
        suite: config.suite.clone(),
        labels: tasks.iter().map(|t| t.label.clone()).collect(),
        seed,
        config_hash: config.experiment_hash(),
        rows,
        losses: Vec::new(),
        steps_per_task: vec![0; tasks.len()],
        accounting: Accounting::default(),
        wall_clock_secs: clock.elapsed().as_secs_f64(),
        checkpoints: Vec::new(),
    })
}

/// Dispatches on `mode`.
pub fn run_mode(config: &ExperimentConfig, mode: Mode, seed: u64, opts: &RunOptions) -> Result<RunRecord, TrainerError> {
    match mode {
        Mode::Wmar => run_continual_with(config, seed, opts),
        Mode::FifoOnly => run_ablation_fifo_only_with(config, seed, opts),
        Mode::SingleTask => run_single_task_suite(config, seed),
        Mode::Random => run_random(config, seed),
    }
}

/// Runs `f` once per seed on at most `jobs` worker threads; results come
/// back in seed order.
pub fn run_seeds<T: Send>(seeds: &[u64], jobs: usize, f: impl Fn(u64) -> T + Sync) -> Vec<T> {
    let next = AtomicUsize::new(0);
    let out: Mutex<Vec<Option<T>>> = Mutex::new((0..seeds.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, seeds.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= seeds.len() {
                    break;
                }
                let r = f(seeds[i]);
                out.lock().expect("result slots")[i] = Some(r);
            });
        }
    });
    out.into_inner()
        .expect("result slots")
        .into_iter()
        .map(|r| r.expect("every seed ran"))
        .collect()
}

#[cfg(test)]
mod tests;
