//! Toy POMDP task suites.
//!
//! All tasks share one observation width (a 3×3 egocentric window of
//! 3-channel cells, or an equally wide vector for non-grid tasks) and four
//! discrete actions, so a single learner can move between them without a
//! task identifier.
//!
//! * `shared4`: one gridworld under four cumulative surface perturbations
//!   (identity, channel permutation, background noise, value inversion).
//! * `distinct4`: chain walk, context bandit with ×100 rewards, key-door
//!   gridworld with inverted encoding and permuted actions, and a
//!   goal gridworld with its own layout.

mod palette;
mod tasks;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::replay::Step;

pub use palette::{permute_channels, Palette};
pub use tasks::{ChainWalk, ContextBandit, GridWorld, KeyDoor};

pub const WINDOW: usize = 3;
pub const CHANNELS: usize = 3;
pub const OBS_WIDTH: usize = WINDOW * WINDOW * CHANNELS;
pub const ACTION_COUNT: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("step called on a finished or unstarted episode")]
    EpisodeOver,
    #[error("action {0} out of range")]
    Action(usize),
    #[error("unknown suite or task `{0}`")]
    UnknownSuite(String),
    #[error("invalid palette for task `{0}`")]
    Palette(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub label: String,
    pub obs_width: usize,
    pub action_count: usize,
    pub max_episode_steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TaskKind {
    Grid(GridWorld),
    Chain(ChainWalk),
    Bandit(ContextBandit),
    KeyDoor(KeyDoor),
}

/// Declarative description of one task; [`TaskConfig::build`] makes a
/// fresh environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub label: String,
    pub kind: TaskKind,
    pub palette: Palette,
    pub max_episode_steps: usize,
}

impl TaskConfig {
    pub fn build(&self) -> Result<Env, EnvError> {
        if !self.palette.is_valid() || self.palette.permutation.len() != CHANNELS {
            return Err(EnvError::Palette(self.label.clone()));
        }
        Ok(Env {
            spec: EnvSpec {
                label: self.label.clone(),
                obs_width: OBS_WIDTH,
                action_count: ACTION_COUNT,
                max_episode_steps: self.max_episode_steps,
            },
            task: self.kind.clone(),
            palette: self.palette.clone(),
            t: 0,
            active: false,
        })
    }
}

/// Result of one environment step.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub step: Step,
    /// Episode finished: terminal state or truncation.
    pub done: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Env {
    spec: EnvSpec,
    task: TaskKind,
    palette: Palette,
    t: usize,
    active: bool,
}

impl Env {
    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn task(&self) -> &TaskKind {
        &self.task
    }

    pub fn task_mut(&mut self) -> &mut TaskKind {
        &mut self.task
    }

    pub fn palette(&self) -> &Palette {
        &self.palette
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    pub fn elapsed(&self) -> usize {
        self.t
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Step {
        match &mut self.task {
            TaskKind::Grid(g) => g.reset(rng),
            TaskKind::Chain(c) => c.reset(),
            TaskKind::Bandit(b) => b.reset(rng),
            TaskKind::KeyDoor(k) => k.reset(rng),
        }
        self.t = 0;
        self.active = true;
        Step::first(self.observe())
    }

    /// Applies `action`. The episode ends at a terminal state or after
    /// `max_episode_steps` steps.
    pub fn step<R: Rng + ?Sized>(&mut self, action: usize, rng: &mut R) -> Result<Transition, EnvError> {
        if !self.active {
            return Err(EnvError::EpisodeOver);
        }
        if action >= ACTION_COUNT {
            return Err(EnvError::Action(action));
        }
        let (reward, terminal) = match &mut self.task {
            TaskKind::Grid(g) => g.step(action),
            TaskKind::Chain(c) => c.step(action),
            TaskKind::Bandit(b) => b.step(action, rng),
            TaskKind::KeyDoor(k) => k.step(action),
        };
        self.t += 1;
        let done = terminal || self.t >= self.spec.max_episode_steps;
        if done {
            self.active = false;
        }
        Ok(Transition {
            step: Step {
                observation: self.observe(),
                action,
                reward,
                is_first: false,
                is_terminal: terminal,
            },
            done,
        })
    }

    /// Observation before the palette is applied.
    pub fn base_observation(&self) -> Vec<f64> {
        match &self.task {
            TaskKind::Grid(g) => g.observe(),
            TaskKind::Chain(c) => c.observe(),
            TaskKind::Bandit(b) => b.observe(),
            TaskKind::KeyDoor(k) => k.observe(),
        }
    }

    pub fn observe(&self) -> Vec<f64> {
        apply_palette(&self.base_observation(), &self.palette)
    }
}

pub fn apply_palette(base: &[f64], palette: &Palette) -> Vec<f64> {
    palette.apply(base)
}

/// Episodic rewards of a uniformly random policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomPolicyResult {
    pub episode_rewards: Vec<f64>,
}

impl RandomPolicyResult {
    pub fn mean(&self) -> f64 {
        if self.episode_rewards.is_empty() {
            return 0.0;
        }
        self.episode_rewards.iter().sum::<f64>() / self.episode_rewards.len() as f64
    }

    pub fn standard_error(&self) -> f64 {
        let n = self.episode_rewards.len() as f64;
        if n < 2.0 {
            return 0.0;
        }
        let m = self.mean();
        let var = self
            .episode_rewards
            .iter()
            .map(|r| (r - m).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        (var / n).sqrt()
    }
}

pub fn random_policy<R: Rng + ?Sized>(env: &mut Env, episodes: usize, rng: &mut R) -> RandomPolicyResult {
    let mut out = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        env.reset(rng);
        let mut total = 0.0;
        loop {
            let a = rng.gen_range(0..ACTION_COUNT);
            let tr = env.step(a, rng).expect("episode active");
            total += tr.step.reward;
            if tr.done {
                break;
            }
        }
        out.push(total);
    }
    RandomPolicyResult {
        episode_rewards: out,
    }
}

/// Default goal-gridworld layout seed shared by the `shared4` variants.
pub const SHARED_LAYOUT_SEED: u64 = 7;

fn grid_cells() -> usize {
    WINDOW * WINDOW
}

/// The four cumulative perturbations used by `shared4`.
pub fn shared_palettes() -> Vec<(String, Palette)> {
    let permuted = Palette::permuted(vec![2, 0, 1]);
    // floor is channel 2, moved to position 1 by the permutation
    let noisy = permuted.clone().with_background_noise(grid_cells(), 1, 0.6, 99);
    let inverted = noisy.clone().inverted(OBS_WIDTH);
    vec![
        ("grid".into(), Palette::identity(CHANNELS)),
        ("grid+perm".into(), permuted),
        ("grid+perm+noise".into(), noisy),
        ("grid+perm+noise+invert".into(), inverted),
    ]
}

pub fn shared4() -> Vec<TaskConfig> {
    shared_palettes()
        .into_iter()
        .map(|(label, palette)| TaskConfig {
            label,
            kind: TaskKind::Grid(GridWorld::generate(6, 3, SHARED_LAYOUT_SEED)),
            palette,
            max_episode_steps: 40,
        })
        .collect()
}

pub fn distinct4() -> Vec<TaskConfig> {
    vec![
        TaskConfig {
            label: "chain".into(),
            kind: TaskKind::Chain(ChainWalk::new(5, 10.0)),
            palette: Palette::identity(CHANNELS),
            max_episode_steps: 25,
        },
        TaskConfig {
            label: "bandit".into(),
            kind: TaskKind::Bandit(ContextBandit::new(100.0)),
            palette: Palette::identity(CHANNELS),
            max_episode_steps: 8,
        },
        TaskConfig {
            label: "keydoor".into(),
            kind: TaskKind::KeyDoor(KeyDoor::new(4, 1.0, vec![2, 3, 0, 1])),
            palette: Palette::identity(CHANNELS).inverted(OBS_WIDTH),
            max_episode_steps: 40,
        },
        TaskConfig {
            label: "goalgrid".into(),
            kind: TaskKind::Grid(GridWorld::generate(6, 3, 31)),
            palette: Palette::identity(CHANNELS),
            max_episode_steps: 40,
        },
    ]
}

/// Resolves `shared4`, `distinct4`, or a single task such as `shared4[0]`.
pub fn suite(id: &str) -> Result<Vec<TaskConfig>, EnvError> {
    let id = id.trim();
    let (name, index) = match id.find('[') {
        Some(open) if id.ends_with(']') => {
            let idx: usize = id[open + 1..id.len() - 1]
                .trim()
                .parse()
                .map_err(|_| EnvError::UnknownSuite(id.into()))?;
            (&id[..open], Some(idx))
        }
        Some(_) => return Err(EnvError::UnknownSuite(id.into())),
        None => (id, None),
    };
    let tasks = match name {
        "shared4" => shared4(),
        "distinct4" => distinct4(),
        _ => return Err(EnvError::UnknownSuite(id.into())),
    };
    match index {
        None => Ok(tasks),
        Some(i) => tasks
            .get(i)
            .cloned()
            .map(|t| vec![t])
            .ok_or_else(|| EnvError::UnknownSuite(id.into())),
    }
}
