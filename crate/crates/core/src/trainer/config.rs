//! Experiment configuration as flat `key = value` text.
//!
//! Keys use dotted section names (`budget.N`, `wm.deter`, ...). Lines
//! starting with `#` and blank lines are ignored; unknown or repeated keys
//! are errors. `reward_scale.<task label>` entries fill the reward-scale
//! table.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agent::{AgentConfig, RewardScaleTable};
use crate::diffcore::AdamConfig;
use crate::envs::{self, TaskConfig};
use crate::worldmodel::WorldModelConfig;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, found `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{0}` given twice")]
    Duplicate(String),
    #[error("bad value `{value}` for `{key}`: {reason}")]
    Value { key: String, value: String, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// FIFO plus long-term reservoir.
    Wmar,
    /// Reservoir disabled, FIFO enlarged to the same total memory.
    FifoOnly,
    /// Each suite task trained on its own.
    SingleTask,
    /// Uniformly random actions, no training.
    Random,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Wmar => "wmar",
            Mode::FifoOnly => "fifo_only",
            Mode::SingleTask => "single_task",
            Mode::Random => "random",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "wmar" => Ok(Mode::Wmar),
            "fifo_only" => Ok(Mode::FifoOnly),
            "single_task" => Ok(Mode::SingleTask),
            "random" => Ok(Mode::Random),
            _ => Err("expected wmar, fifo_only, single_task or random".into()),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-task step budget. `K = N / steps_per_iteration` collection rounds,
/// each followed by `train_ratio × steps_per_iteration` model updates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunBudget {
    pub n: u64,
    pub steps_per_iteration: u64,
    pub train_ratio: f64,
}

impl RunBudget {
    pub fn k(&self) -> u64 {
        self.n / self.steps_per_iteration.max(1)
    }

    pub fn updates_per_iteration(&self) -> usize {
        (self.train_ratio * self.steps_per_iteration as f64).round() as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayConfig {
    pub fifo_steps: usize,
    pub ltdm_chunks: usize,
    pub chunk_size: usize,
    pub batch_size: usize,
    pub batch_length: usize,
}

impl ReplayConfig {
    /// Total stored steps the configuration allows.
    pub fn memory_bound(&self) -> usize {
        self.fifo_steps + self.ltdm_chunks * self.chunk_size
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Global steps between evaluation points.
    pub interval: u64,
    /// Episodes per task per evaluation point.
    pub episodes: usize,
    /// Episodes per task for the random baseline.
    pub random_episodes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub suite: String,
    /// Indices into the suite; empty keeps the listed order.
    pub task_order: Vec<usize>,
    pub mode: Mode,
    pub seeds: Vec<u64>,
    pub output: PathBuf,
    pub budget: RunBudget,
    /// Random-policy steps collected before the first update; they count
    /// against the first task's budget.
    pub prefill_steps: u64,
    pub eval: EvalConfig,
    pub replay: ReplayConfig,
    pub wm: WorldModelConfig,
    pub agent: AgentConfig,
    pub reward_scales: RewardScaleTable,
    /// Iterations between checkpoints; 0 writes none.
    pub checkpoint_every: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            suite: "shared4".into(),
            task_order: Vec::new(),
            mode: Mode::Wmar,
            seeds: vec![0, 1, 2, 3, 4],
            output: PathBuf::from("runs"),
            budget: RunBudget {
                n: 40_000,
                steps_per_iteration: 200,
                train_ratio: 0.5,
            },
            prefill_steps: 1000,
            eval: EvalConfig {
                interval: 2000,
                episodes: 10,
                random_episodes: 500,
            },
            replay: ReplayConfig {
                fifo_steps: 8192,
                ltdm_chunks: 128,
                chunk_size: 64,
                batch_size: 16,
                batch_length: 32,
            },
            wm: WorldModelConfig {
                optimizer: AdamConfig {
                    lr: 1e-3,
                    ..AdamConfig::default()
                },
                ..WorldModelConfig::default()
            },
            agent: AgentConfig {
                dream_starts: 64,
                ..AgentConfig::default()
            },
            reward_scales: RewardScaleTable::new(),
            checkpoint_every: 0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| ConfigError::Value {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Parses config text on top of the defaults.
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: line.into(),
            })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    text: line.into(),
                });
            }
            if !seen.insert(k.to_string()) {
                return Err(ConfigError::Duplicate(k.into()));
            }
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    /// Sets one key, as in the text format.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key {
            "suite" => self.suite = v.into(),
            "task_order" => self.task_order = parse_list(key, v)?,
            "mode" => self.mode = parse(key, v)?,
            "seeds" => self.seeds = parse_list(key, v)?,
            "output" => self.output = PathBuf::from(v),
            "budget.N" => self.budget.n = parse(key, v)?,
            "budget.steps_per_iteration" => self.budget.steps_per_iteration = parse(key, v)?,
            "budget.train_ratio" => self.budget.train_ratio = parse(key, v)?,
            "budget.prefill_steps" => self.prefill_steps = parse(key, v)?,
            "eval.interval" => self.eval.interval = parse(key, v)?,
            "eval.episodes" => self.eval.episodes = parse(key, v)?,
            "eval.random_episodes" => self.eval.random_episodes = parse(key, v)?,
            "replay.fifo_steps" => self.replay.fifo_steps = parse(key, v)?,
            "replay.ltdm_chunks" => self.replay.ltdm_chunks = parse(key, v)?,
            "replay.chunk_size" => self.replay.chunk_size = parse(key, v)?,
            "replay.batch_size" => self.replay.batch_size = parse(key, v)?,
            "replay.batch_length" => self.replay.batch_length = parse(key, v)?,
            "wm.deter" => self.wm.deter = parse(key, v)?,
            "wm.stoch_units" => self.wm.stoch_units = parse(key, v)?,
            "wm.stoch_classes" => self.wm.stoch_classes = parse(key, v)?,
            "wm.embed" => self.wm.embed = parse(key, v)?,
            "wm.hidden" => self.wm.hidden = parse(key, v)?,
            "wm.layers" => self.wm.layers = parse(key, v)?,
            "wm.beta_dyn" => self.wm.beta_dyn = parse(key, v)?,
            "wm.beta_rep" => self.wm.beta_rep = parse(key, v)?,
            "wm.free_bits" => self.wm.free_bits = parse(key, v)?,
            "wm.lr" => self.wm.optimizer.lr = parse(key, v)?,
            "wm.clip_norm" => self.wm.optimizer.clip_norm = parse(key, v)?,
            "agent.gamma" => self.agent.gamma = parse(key, v)?,
            "agent.lambda" => self.agent.lambda = parse(key, v)?,
            "agent.entropy" => self.agent.entropy = parse(key, v)?,
            "agent.horizon" => self.agent.horizon = parse(key, v)?,
            "agent.hidden" => self.agent.hidden = parse(key, v)?,
            "agent.layers" => self.agent.layers = parse(key, v)?,
            "agent.slow_critic_decay" => self.agent.slow_critic_decay = parse(key, v)?,
            "agent.dream_starts" => self.agent.dream_starts = parse(key, v)?,
            "agent.actor_lr" => self.agent.actor_optimizer.lr = parse(key, v)?,
            "agent.critic_lr" => self.agent.critic_optimizer.lr = parse(key, v)?,
            "agent.clip_norm" => {
                let c: f64 = parse(key, v)?;
                self.agent.actor_optimizer.clip_norm = c;
                self.agent.critic_optimizer.clip_norm = c;
            }
            "run.checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            _ => match key.strip_prefix("reward_scale.") {
                Some(label) if !label.is_empty() => {
                    let s: f64 = parse(key, v)?;
                    self.reward_scales.insert(label, s).map_err(|e| ConfigError::Value {
                        key: key.into(),
                        value: v.into(),
                        reason: e.to_string(),
                    })?;
                }
                _ => return Err(ConfigError::UnknownKey(key.into())),
            },
        }
        Ok(())
    }

    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut out: Vec<(&str, String)> = vec![
            ("suite", self.suite.clone()),
            ("task_order", join(&self.task_order)),
            ("mode", self.mode.to_string()),
            ("seeds", join(&self.seeds)),
            ("output", self.output.display().to_string()),
            ("budget.N", self.budget.n.to_string()),
            ("budget.steps_per_iteration", self.budget.steps_per_iteration.to_string()),
            ("budget.train_ratio", self.budget.train_ratio.to_string()),
            ("budget.prefill_steps", self.prefill_steps.to_string()),
            ("eval.interval", self.eval.interval.to_string()),
            ("eval.episodes", self.eval.episodes.to_string()),
            ("eval.random_episodes", self.eval.random_episodes.to_string()),
            ("replay.fifo_steps", self.replay.fifo_steps.to_string()),
            ("replay.ltdm_chunks", self.replay.ltdm_chunks.to_string()),
            ("replay.chunk_size", self.replay.chunk_size.to_string()),
            ("replay.batch_size", self.replay.batch_size.to_string()),
            ("replay.batch_length", self.replay.batch_length.to_string()),
            ("wm.deter", self.wm.deter.to_string()),
            ("wm.stoch_units", self.wm.stoch_units.to_string()),
            ("wm.stoch_classes", self.wm.stoch_classes.to_string()),
            ("wm.embed", self.wm.embed.to_string()),
            ("wm.hidden", self.wm.hidden.to_string()),
            ("wm.layers", self.wm.layers.to_string()),
            ("wm.beta_dyn", self.wm.beta_dyn.to_string()),
            ("wm.beta_rep", self.wm.beta_rep.to_string()),
            ("wm.free_bits", self.wm.free_bits.to_string()),
            ("wm.lr", self.wm.optimizer.lr.to_string()),
            ("wm.clip_norm", self.wm.optimizer.clip_norm.to_string()),
            ("agent.gamma", self.agent.gamma.to_string()),
            ("agent.lambda", self.agent.lambda.to_string()),
            ("agent.entropy", self.agent.entropy.to_string()),
            ("agent.horizon", self.agent.horizon.to_string()),
            ("agent.hidden", self.agent.hidden.to_string()),
            ("agent.layers", self.agent.layers.to_string()),
            ("agent.slow_critic_decay", self.agent.slow_critic_decay.to_string()),
            ("agent.dream_starts", self.agent.dream_starts.to_string()),
            ("agent.actor_lr", self.agent.actor_optimizer.lr.to_string()),
            ("agent.critic_lr", self.agent.critic_optimizer.lr.to_string()),
            ("agent.clip_norm", self.agent.actor_optimizer.clip_norm.to_string()),
            ("run.checkpoint_every", self.checkpoint_every.to_string()),
        ];
        let scales: Vec<(String, String)> = self
            .reward_scales
            .iter()
            .map(|(l, s)| (format!("reward_scale.{l}"), s.to_string()))
            .collect();
        let mut all: Vec<(String, String)> = out.drain(..).map(|(k, v)| (k.to_string(), v)).collect();
        all.extend(scales);
        all
    }

    /// Canonical text; parses back to an equal config.
    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// SHA-256 over the settings that make runs comparable: everything
    /// except mode, seeds, output directory, checkpoint cadence and
    /// reward scales.
    pub fn experiment_hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.entries() {
            if matches!(k.as_str(), "mode" | "seeds" | "output" | "run.checkpoint_every") || k.starts_with("reward_scale.") {
                continue;
            }
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Suite tasks in training order.
    pub fn tasks(&self) -> Result<Vec<TaskConfig>, ConfigError> {
        let suite = envs::suite(&self.suite).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.task_order.is_empty() {
            return Ok(suite);
        }
        let mut sorted = self.task_order.clone();
        sorted.sort_unstable();
        if sorted != (0..suite.len()).collect::<Vec<_>>() {
            return Err(ConfigError::Invalid(format!(
                "task_order {:?} is not a permutation of 0..{}",
                self.task_order,
                suite.len()
            )));
        }
        Ok(self.task_order.iter().map(|&i| suite[i].clone()).collect())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let tasks = self.tasks()?;
        let b = &self.budget;
        if b.steps_per_iteration == 0 {
            return bad("budget.steps_per_iteration must be positive".into());
        }
        if b.n % b.steps_per_iteration != 0 {
            return bad(format!(
                "budget.N = {} is not a multiple of budget.steps_per_iteration = {}",
                b.n, b.steps_per_iteration
            ));
        }
        if !(b.train_ratio >= 0.0 && b.train_ratio.is_finite()) {
            return bad("budget.train_ratio must be finite and non-negative".into());
        }
        let r = &self.replay;
        if r.chunk_size < 2 {
            return bad("replay.chunk_size must be at least 2".into());
        }
        if r.batch_size == 0 || r.batch_length == 0 {
            return bad("replay batch dimensions must be positive".into());
        }
        if r.batch_length > r.chunk_size {
            return bad("replay.batch_length exceeds replay.chunk_size".into());
        }
        if r.fifo_steps < r.chunk_size {
            return bad("replay.fifo_steps must hold at least one chunk".into());
        }
        if self.eval.interval == 0 || self.eval.episodes == 0 || self.eval.random_episodes == 0 {
            return bad("eval.interval, eval.episodes and eval.random_episodes must be positive".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        let w = &self.wm;
        if [w.deter, w.stoch_units, w.stoch_classes, w.embed, w.hidden].contains(&0) {
            return bad("world-model sizes must be positive".into());
        }
        if !(w.optimizer.lr > 0.0) {
            return bad("wm.lr must be positive".into());
        }
        if !(w.free_bits >= 0.0 && w.beta_dyn >= 0.0 && w.beta_rep >= 0.0) {
            return bad("KL weights and free bits must be non-negative".into());
        }
        if self.agent.hidden == 0 {
            return bad("agent.hidden must be positive".into());
        }
        if !(self.agent.actor_optimizer.lr > 0.0 && self.agent.critic_optimizer.lr > 0.0) {
            return bad("agent learning rates must be positive".into());
        }
        self.agent.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !self.reward_scales.is_empty() {
            for t in &tasks {
                if self.reward_scales.get(&t.label).is_none() {
                    return bad(format!("reward_scale.{} missing (the table must cover every task)", t.label));
                }
            }
        }
        for (label, _) in self.reward_scales.iter() {
            if !tasks.iter().any(|t| t.label == label) {
                return bad(format!("reward_scale.{label} names no task in suite `{}`", self.suite));
            }
        }
        Ok(())
    }
}
