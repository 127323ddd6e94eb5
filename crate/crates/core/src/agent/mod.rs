//! Actor-critic trained only on dreamed trajectories.
//!
//! The actor is updated with REINFORCE on λ-return advantages plus a fixed
//! entropy bonus; the critic regresses λ-returns computed from a slowly
//! averaged copy of itself. Rewards reaching the learner are already
//! multiplied by a fixed per-task scale.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffcore::{softmax_groups, Adam, AdamConfig, DiffError, Graph, Mlp, ParamStore, Tensor};
use crate::persist::{self, PersistError};
use crate::worldmodel::{ModelState, WorldModel, WorldModelError};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    WorldModel(#[from] WorldModelError),
    #[error("sequence lengths differ: {0}")]
    Length(String),
    #[error("no reward scale for task `{0}`")]
    MissingScale(String),
    #[error("reward scale for `{0}` must be positive and finite, got {1}")]
    BadScale(String, f64),
    #[error("invalid agent config: {0}")]
    Config(String),
    #[error(transparent)]
    Persist(#[from] PersistError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub gamma: f64,
    pub lambda: f64,
    /// Entropy bonus weight.
    pub entropy: f64,
    /// Dream length in steps.
    pub horizon: usize,
    pub hidden: usize,
    pub layers: usize,
    /// EMA decay of the critic copy that produces return targets.
    pub slow_critic_decay: f64,
    /// Dream start states per update, drawn from the last world-model
    /// batch; 0 uses all of them.
    pub dream_starts: usize,
    pub actor_optimizer: AdamConfig,
    pub critic_optimizer: AdamConfig,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            lambda: 0.95,
            entropy: 3e-3,
            horizon: 16,
            hidden: 128,
            layers: 2,
            slow_critic_decay: 0.98,
            dream_starts: 0,
            actor_optimizer: AdamConfig::default(),
            critic_optimizer: AdamConfig::default(),
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(AgentError::Config(format!("gamma {} not in (0, 1)", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(AgentError::Config(format!("lambda {} not in [0, 1]", self.lambda)));
        }
        if !(self.entropy >= 0.0) {
            return Err(AgentError::Config(format!("entropy {} is negative", self.entropy)));
        }
        if self.horizon == 0 {
            return Err(AgentError::Config("horizon must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.slow_critic_decay) {
            return Err(AgentError::Config("slow_critic_decay not in [0, 1]".into()));
        }
        Ok(())
    }
}

/// How actions are picked from the policy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActionMode {
    Sample,
    Greedy,
}

/// A dreamed batch of trajectories. Index `t` of `actions`, `log_probs`,
/// `rewards` and `continues` belongs to the transition `s_t → s_{t+1}`;
/// `states` holds `s_0 … s_H`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Vec<ModelState>,
    pub actions: Vec<Vec<usize>>,
    pub log_probs: Vec<Vec<f64>>,
    pub rewards: Vec<Vec<f64>>,
    pub continues: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn batch(&self) -> usize {
        self.states.first().map_or(0, |s| s.rows())
    }
}

/// Inputs of one actor step, one row per state.
#[derive(Clone, Debug, PartialEq)]
pub struct ActorBatch {
    pub features: Tensor,
    pub actions: Vec<usize>,
    pub advantages: Vec<f64>,
    pub weights: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AcDiagnostics {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    pub mean_return: f64,
    pub mean_advantage: f64,
    pub actor_grad_norm: f64,
    pub critic_grad_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub config: AgentConfig,
    pub action_count: usize,
    pub feature_width: usize,
    actor_store: ParamStore,
    actor: Mlp,
    critic_store: ParamStore,
    critic: Mlp,
    slow_critic: ParamStore,
    actor_opt: Adam,
    critic_opt: Adam,
    updates: u64,
}

const MAGIC: [u8; 4] = *b"WMAC";
const VERSION: u32 = 1;

impl Agent {
    pub fn new<R: Rng + ?Sized>(
        config: AgentConfig,
        feature_width: usize,
        action_count: usize,
        rng: &mut R,
    ) -> Result<Self, AgentError> {
        config.validate()?;
        let mut actor_store = ParamStore::new();
        let actor = Mlp::new(&mut actor_store, "actor", feature_width, config.hidden, config.layers, action_count, rng);
        let mut critic_store = ParamStore::new();
        let critic = Mlp::with_zero_output(&mut critic_store, "critic", feature_width, config.hidden, config.layers, 1, rng);
        let slow_critic = critic_store.clone();
        let actor_opt = Adam::new(config.actor_optimizer.clone(), &actor_store);
        let critic_opt = Adam::new(config.critic_optimizer.clone(), &critic_store);
        Ok(Self {
            config,
            action_count,
            feature_width,
            actor_store,
            actor,
            critic_store,
            critic,
            slow_critic,
            actor_opt,
            critic_opt,
            updates: 0,
        })
    }

    pub fn actor_params(&self) -> &ParamStore {
        &self.actor_store
    }

    pub fn actor_params_mut(&mut self) -> &mut ParamStore {
        &mut self.actor_store
    }

    pub fn critic_params(&self) -> &ParamStore {
        &self.critic_store
    }

    pub fn slow_critic_params(&self) -> &ParamStore {
        &self.slow_critic
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn policy_logits(&self, features: &Tensor) -> Result<Tensor, AgentError> {
        let mut g = Graph::no_grad();
        let x = g.constant(features.clone());
        let y = self.actor.forward(&mut g, &self.actor_store, x)?;
        Ok(g.value(y).clone())
    }

    pub fn policy_probs(&self, features: &Tensor) -> Result<Tensor, AgentError> {
        Ok(softmax_groups(&self.policy_logits(features)?, self.action_count))
    }

    fn values_with(&self, store: &ParamStore, features: &Tensor) -> Result<Vec<f64>, AgentError> {
        let mut g = Graph::no_grad();
        let x = g.constant(features.clone());
        let y = self.critic.forward(&mut g, store, x)?;
        Ok(g.value(y).data().to_vec())
    }

    pub fn values(&self, features: &Tensor) -> Result<Vec<f64>, AgentError> {
        self.values_with(&self.critic_store, features)
    }

    pub fn slow_values(&self, features: &Tensor) -> Result<Vec<f64>, AgentError> {
        self.values_with(&self.slow_critic, features)
    }

    /// Picks one action per state row, returning the actions and their
    /// log-probabilities.
    pub fn act<R: Rng + ?Sized>(
        &self,
        state: &ModelState,
        mode: ActionMode,
        rng: &mut R,
    ) -> Result<(Vec<usize>, Vec<f64>), AgentError> {
        let probs = self.policy_probs(&state.features())?;
        let n = self.action_count;
        let mut actions = Vec::with_capacity(state.rows());
        let mut log_probs = Vec::with_capacity(state.rows());
        for p in probs.data().chunks(n) {
            let a = match mode {
                ActionMode::Sample => {
                    let u: f64 = rng.gen();
                    let mut acc = 0.0;
                    let mut pick = n - 1;
                    for (i, &pi) in p.iter().enumerate() {
                        acc += pi;
                        if u < acc {
                            pick = i;
                            break;
                        }
                    }
                    pick
                }
                ActionMode::Greedy => {
                    let mut best = 0;
                    for i in 1..n {
                        if p[i] > p[best] {
                            best = i;
                        }
                    }
                    best
                }
            };
            actions.push(a);
            log_probs.push(p[a].max(f64::MIN_POSITIVE).ln());
        }
        Ok((actions, log_probs))
    }

    /// Rolls the world model forward `horizon` steps from `starts` with
    /// actions drawn from the actor.
    pub fn dream_rollout<R: Rng + ?Sized>(
        &self,
        wm: &WorldModel,
        starts: &ModelState,
        horizon: usize,
        rng: &mut R,
    ) -> Result<Trajectory, AgentError> {
        let mut states = Vec::with_capacity(horizon + 1);
        let mut actions = Vec::with_capacity(horizon);
        let mut log_probs = Vec::with_capacity(horizon);
        let mut rewards = Vec::with_capacity(horizon);
        let mut continues = Vec::with_capacity(horizon);
        states.push(starts.clone());
        for _ in 0..horizon {
            let current = states.last().expect("start state");
            let (a, lp) = self.act(current, ActionMode::Sample, rng)?;
            let next = wm.dream_step(current, &a, rng)?;
            let (r, c) = wm.predict_heads(&next)?;
            actions.push(a);
            log_probs.push(lp);
            rewards.push(r);
            continues.push(c);
            states.push(next);
        }
        Ok(Trajectory {
            states,
            actions,
            log_probs,
            rewards,
            continues,
        })
    }

    /// One REINFORCE step on the actor:
    /// `−mean_i w_i·[A_i·log π(a_i|s_i) + η·H(π(·|s_i))]`.
    pub fn update_actor(&mut self, batch: &ActorBatch) -> Result<(f64, f64, f64), AgentError> {
        let rows = batch.features.rows();
        if batch.actions.len() != rows || batch.advantages.len() != rows || batch.weights.len() != rows {
            return Err(AgentError::Length("actor batch".into()));
        }
        let (grads, loss, entropy) = {
            let mut g = Graph::new();
            let store = &self.actor_store;
            let x = g.constant(batch.features.clone());
            let logits = self.actor.forward(&mut g, store, x)?;
            let logp = g.log_softmax_groups(logits, self.action_count)?;
            let chosen = g.gather(logp, &batch.actions)?;
            let coef: Vec<f64> = batch
                .advantages
                .iter()
                .zip(&batch.weights)
                .map(|(a, w)| a * w)
                .collect();
            let pg = g.mul_const(chosen, Tensor::column(coef))?;
            let ent = g.entropy_groups(logits, self.action_count)?;
            let ew: Vec<f64> = batch.weights.iter().map(|w| w * self.config.entropy).collect();
            let ent_term = g.mul_const(ent, Tensor::column(ew))?;
            let objective = g.add(pg, ent_term)?;
            let mean = g.mean(objective)?;
            let loss = g.scale(mean, -1.0)?;
            let entropy = g.value(ent).sum() / rows as f64;
            let grads = g.backward(loss)?.for_params(store);
            (grads, g.value(loss).item(), entropy)
        };
        let norm = self.actor_opt.step(&mut self.actor_store, &grads)?;
        Ok((loss, entropy, norm))
    }

    /// One regression step of the critic towards fixed `targets`:
    /// `mean_i w_i·(V(s_i) − R_i)²`.
    pub fn update_critic(&mut self, features: &Tensor, targets: &[f64], weights: &[f64]) -> Result<(f64, f64), AgentError> {
        let rows = features.rows();
        if targets.len() != rows || weights.len() != rows {
            return Err(AgentError::Length("critic batch".into()));
        }
        let (grads, loss) = {
            let mut g = Graph::new();
            let store = &self.critic_store;
            let x = g.constant(features.clone());
            let v = self.critic.forward(&mut g, store, x)?;
            let t = g.constant(Tensor::column(targets.to_vec()));
            let d = g.sub(v, t)?;
            let sq = g.square(d)?;
            let wsq = g.mul_const(sq, Tensor::column(weights.to_vec()))?;
            let loss = g.mean(wsq)?;
            let grads = g.backward(loss)?.for_params(store);
            (grads, g.value(loss).item())
        };
        let norm = self.critic_opt.step(&mut self.critic_store, &grads)?;
        Ok((loss, norm))
    }

    /// Actor and critic updates from one dreamed batch. The world model is
    /// only read.
    pub fn actor_critic_update(&mut self, traj: &Trajectory) -> Result<AcDiagnostics, AgentError> {
        let h = traj.horizon();
        let b = traj.batch();
        if h == 0 || traj.states.len() != h + 1 {
            return Err(AgentError::Length("trajectory".into()));
        }
        let c = self.config.clone();
        let feats: Vec<Tensor> = traj.states.iter().map(|s| s.features()).collect();
        let all = Tensor::vstack(&feats.iter().collect::<Vec<_>>());
        let slow = self.slow_values(&all)?;
        let online = self.values(&all)?;

        // per row: returns for s_0 … s_{H-1} and cumulative continue weights
        let mut targets = vec![0.0; h * b];
        let mut weights = vec![0.0; h * b];
        let mut advantages = vec![0.0; h * b];
        let mut rewards = vec![0.0; h];
        let mut conts = vec![0.0; h];
        let mut next_values = vec![0.0; h];
        for row in 0..b {
            for t in 0..h {
                rewards[t] = traj.rewards[t][row];
                conts[t] = traj.continues[t][row];
                next_values[t] = slow[(t + 1) * b + row];
            }
            let returns = lambda_returns(&rewards, &next_values, &conts, slow[h * b + row], c.gamma, c.lambda)?;
            let mut w = 1.0;
            for t in 0..h {
                let i = t * b + row;
                targets[i] = returns[t];
                weights[i] = w;
                advantages[i] = returns[t] - online[i];
                w *= conts[t];
            }
        }
        let start_feats = Tensor::vstack(&feats[..h].iter().collect::<Vec<_>>());
        let actions: Vec<usize> = traj.actions.iter().flatten().copied().collect();
        let (actor_loss, entropy, actor_grad_norm) = self.update_actor(&ActorBatch {
            features: start_feats.clone(),
            actions,
            advantages: advantages.clone(),
            weights: weights.clone(),
        })?;
        let (critic_loss, critic_grad_norm) = self.update_critic(&start_feats, &targets, &weights)?;
        self.slow_critic.ema_from(&self.critic_store, c.slow_critic_decay);
        self.updates += 1;
        let n = (h * b) as f64;
        Ok(AcDiagnostics {
            actor_loss,
            critic_loss,
            entropy,
            mean_return: targets.iter().sum::<f64>() / n,
            mean_advantage: advantages.iter().sum::<f64>() / n,
            actor_grad_norm,
            critic_grad_norm,
        })
    }

    /// Dreams from (a random subset of) `starts` and updates on the result.
    pub fn train_in_dream<R: Rng + ?Sized>(
        &mut self,
        wm: &WorldModel,
        starts: &ModelState,
        rng: &mut R,
    ) -> Result<AcDiagnostics, AgentError> {
        let n = self.config.dream_starts;
        let starts = if n == 0 || n >= starts.rows() {
            starts.clone()
        } else {
            let picks: Vec<usize> = rand::seq::index::sample(rng, starts.rows(), n).into_vec();
            starts.select_rows(&picks)
        };
        let traj = self.dream_rollout(wm, &starts, self.config.horizon, rng)?;
        self.actor_critic_update(&traj)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, AgentError> {
        Ok(persist::encode(MAGIC, VERSION, self)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AgentError> {
        Ok(persist::decode(MAGIC, VERSION, bytes)?)
    }
}

/// λ-returns computed backwards:
/// `R_t = r_t + γ·c_t·[(1−λ)·v_t + λ·R_{t+1}]` with `R_H = bootstrap`,
/// where `r_t`, `c_t`, `v_t` belong to the state reached by step `t`.
pub fn lambda_returns(
    rewards: &[f64],
    values: &[f64],
    continues: &[f64],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Result<Vec<f64>, AgentError> {
    let h = rewards.len();
    if values.len() != h || continues.len() != h {
        return Err(AgentError::Length(format!(
            "{} rewards, {} values, {} continues",
            h,
            values.len(),
            continues.len()
        )));
    }
    let mut out = vec![0.0; h];
    let mut next = bootstrap;
    for t in (0..h).rev() {
        next = rewards[t] + gamma * continues[t] * ((1.0 - lambda) * values[t] + lambda * next);
        out[t] = next;
    }
    Ok(out)
}

/// Fixed multiplier per task label.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardScaleTable {
    scales: BTreeMap<String, f64>,
}

impl RewardScaleTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, label: impl Into<String>, scale: f64) -> Result<(), AgentError> {
        let label = label.into();
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(AgentError::BadScale(label, scale));
        }
        self.scales.insert(label, scale);
        Ok(())
    }

    pub fn get(&self, label: &str) -> Option<f64> {
        self.scales.get(label).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.scales.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scales.is_empty()
    }

    /// Scale `1 / mean` rounded to one significant figure for each task's
    /// trained single-task mean episodic reward.
    pub fn from_single_task_means<'a>(means: impl IntoIterator<Item = (&'a str, f64)>) -> Result<Self, AgentError> {
        let mut table = Self::new();
        for (label, mean) in means {
            if !(mean > 0.0 && mean.is_finite()) {
                return Err(AgentError::BadScale(label.into(), mean));
            }
            table.insert(label, round_sig1(1.0 / mean))?;
        }
        Ok(table)
    }
}

fn round_sig1(x: f64) -> f64 {
    let mag = 10f64.powf(x.abs().log10().floor());
    (x / mag).round() * mag
}

pub fn scale_reward(raw: f64, label: &str, table: &RewardScaleTable) -> Result<f64, AgentError> {
    table
        .get(label)
        .map(|s| raw * s)
        .ok_or_else(|| AgentError::MissingScale(label.into()))
}
