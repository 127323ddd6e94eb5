//! Recurrent state-space world model.
//!
//! The state is a deterministic GRU vector `h` and a stochastic one-hot
//! sample `z` over `units` categorical variables. Observations are embedded
//! by an MLP encoder; the posterior sees `[h, embed]`, the prior only `h`.
//! Decoder, reward and continue heads read `[h, z]`.
//!
//! Time step `t` consumes the action stored with step `t` (the one that
//! produced its observation): `h_t = GRU(h_{t-1}, [z_{t-1}, a_t])`. On a
//! reset flag the previous state and action are replaced by the learned
//! initial `h₀`, a `z₀` drawn from the prior at `h₀`, and a zero action.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffcore::gradcheck::FD_STEP;
use crate::diffcore::{
    grad_check, Adam, AdamConfig, DiffError, GradCheckReport, Graph, GruCell, Mlp, ParamStore, Tensor, Var,
};
use crate::persist::{self, PersistError};
use crate::replay::Step;

#[derive(Debug, Error)]
pub enum WorldModelError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("bad batch: {0}")]
    Batch(String),
    #[error("non-finite world-model loss ({0})")]
    NonFinite(String),
    #[error(transparent)]
    Persist(#[from] PersistError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldModelConfig {
    pub obs_width: usize,
    pub action_count: usize,
    /// Width of the deterministic state `h`.
    pub deter: usize,
    pub stoch_units: usize,
    pub stoch_classes: usize,
    pub embed: usize,
    pub hidden: usize,
    pub layers: usize,
    pub beta_dyn: f64,
    pub beta_rep: f64,
    pub free_bits: f64,
    pub optimizer: AdamConfig,
}

impl Default for WorldModelConfig {
    fn default() -> Self {
        Self {
            obs_width: crate::envs::OBS_WIDTH,
            action_count: crate::envs::ACTION_COUNT,
            deter: 128,
            stoch_units: 8,
            stoch_classes: 8,
            embed: 128,
            hidden: 128,
            layers: 2,
            beta_dyn: 0.5,
            beta_rep: 0.1,
            free_bits: 1.0,
            optimizer: AdamConfig::default(),
        }
    }
}

impl WorldModelConfig {
    pub fn stoch(&self) -> usize {
        self.stoch_units * self.stoch_classes
    }

    /// Width of the `[h, z]` feature vector the heads and the agent read.
    pub fn feature_width(&self) -> usize {
        self.deter + self.stoch()
    }
}

/// How stochastic latents enter the graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Latent {
    /// One-hot draws with straight-through gradients.
    Sample,
    /// Class probabilities instead of draws. The loss is then a smooth
    /// deterministic function of the parameters, which is what finite
    /// differences can check.
    Relaxed,
}

/// A batch of model states, one per row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub h: Tensor,
    pub z: Tensor,
}

impl ModelState {
    pub fn zeros(rows: usize, config: &WorldModelConfig) -> Self {
        Self {
            h: Tensor::zeros(rows, config.deter),
            z: Tensor::zeros(rows, config.stoch()),
        }
    }

    pub fn rows(&self) -> usize {
        self.h.rows()
    }

    /// `[h, z]` per row.
    pub fn features(&self) -> Tensor {
        Tensor::hstack(&[&self.h, &self.z])
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            h: self.h.select_rows(rows),
            z: self.z.select_rows(rows),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObserveOutput {
    pub state: ModelState,
    pub posterior_logits: Tensor,
    pub prior_logits: Tensor,
}

/// Per-term means of one loss evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WmDiagnostics {
    pub loss: f64,
    pub reconstruction: f64,
    pub reward: f64,
    pub continuation: f64,
    /// Clamped dynamics term before weighting.
    pub kl_dyn: f64,
    /// Clamped representation term before weighting.
    pub kl_rep: f64,
    /// Unclamped posterior-prior KL.
    pub kl: f64,
    /// Pre-clip gradient norm; zero when no update was made.
    pub grad_norm: f64,
}

/// Step windows laid out time-major (row `t·B + b`).
struct Batch {
    batch: usize,
    length: usize,
    obs: Tensor,
    actions: Vec<Tensor>,
    resets: Vec<Vec<bool>>,
    rewards: Tensor,
    continues: Tensor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldModel {
    pub config: WorldModelConfig,
    store: ParamStore,
    encoder: Mlp,
    posterior: Mlp,
    prior: Mlp,
    gru: GruCell,
    decoder: Mlp,
    reward: Mlp,
    cont: Mlp,
    h0: usize,
    optimizer: Adam,
}

const MAGIC: [u8; 4] = *b"WMWM";
const VERSION: u32 = 1;

/// Loss graph pieces kept for diagnostics and dream start states.
pub struct LossGraph {
    pub loss: Var,
    pub diagnostics: WmDiagnostics,
    /// Posterior states of every batch element and time step.
    pub states: ModelState,
    /// Values entering the stop-gradient branches of the KL terms.
    pub stopped: StoppedLogits,
}

/// Posterior and prior logits as seen by the stop-gradient side of KL
/// balancing.
#[derive(Clone, Debug, PartialEq)]
pub struct StoppedLogits {
    pub posterior: Tensor,
    pub prior: Tensor,
}

impl WorldModel {
    pub fn new<R: Rng + ?Sized>(config: WorldModelConfig, rng: &mut R) -> Self {
        let c = &config;
        let mut store = ParamStore::new();
        let feat = c.feature_width();
        let stoch = c.stoch();
        let encoder = Mlp::new(&mut store, "enc", c.obs_width, c.hidden, c.layers, c.embed, rng);
        let posterior = Mlp::new(&mut store, "post", c.deter + c.embed, c.hidden, c.layers, stoch, rng);
        let prior = Mlp::new(&mut store, "prior", c.deter, c.hidden, c.layers, stoch, rng);
        let gru = GruCell::new(&mut store, "gru", stoch + c.action_count, c.deter, rng);
        let decoder = Mlp::new(&mut store, "dec", feat, c.hidden, c.layers, c.obs_width, rng);
        let reward = Mlp::with_zero_output(&mut store, "rew", feat, c.hidden, c.layers, 1, rng);
        let cont = Mlp::new(&mut store, "cont", feat, c.hidden, c.layers, 1, rng);
        let h0 = store.add("h0", Tensor::zeros(1, c.deter));
        let optimizer = Adam::new(c.optimizer.clone(), &store);
        Self {
            config,
            store,
            encoder,
            posterior,
            prior,
            gru,
            decoder,
            reward,
            cont,
            h0,
            optimizer,
        }
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn gru(&self) -> &GruCell {
        &self.gru
    }

    pub fn updates(&self) -> u64 {
        self.optimizer.steps()
    }

    pub fn initial_h(&self) -> &Tensor {
        self.store.get(self.h0)
    }

    fn latent<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        logits: Var,
        mode: Latent,
        rng: &mut R,
    ) -> Result<Var, DiffError> {
        match mode {
            Latent::Sample => g.categorical_sample_st(logits, self.config.stoch_classes, rng),
            Latent::Relaxed => g.softmax_groups(logits, self.config.stoch_classes),
        }
    }

    /// Replaces the rows flagged in `resets` with the initial state.
    fn reset_rows<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        h: Var,
        z: Var,
        resets: &[bool],
        mode: Latent,
        rng: &mut R,
    ) -> Result<(Var, Var), DiffError> {
        if !resets.iter().any(|&r| r) {
            return Ok((h, z));
        }
        let rows = resets.len();
        let h0 = g.param(store, self.h0);
        let h = g.blend_rows(h, h0, resets)?;
        let prior_row = self.prior.forward(g, store, h0)?;
        let zeros = g.constant(Tensor::zeros(rows, self.config.stoch()));
        let all = vec![true; rows];
        let prior_logits = g.blend_rows(zeros, prior_row, &all)?;
        let z0 = self.latent(g, prior_logits, mode, rng)?;
        let z = if resets.iter().all(|&r| r) {
            z0
        } else {
            let keep: Vec<f64> = resets.iter().map(|&r| if r { 0.0 } else { 1.0 }).collect();
            let stoch = self.config.stoch();
            let keep = Tensor::from_rows(rows, stoch, keep.iter().flat_map(|&k| std::iter::repeat(k).take(stoch)).collect());
            let take = keep.map(|k| 1.0 - k);
            let a = g.mul_const(z, keep)?;
            let b = g.mul_const(z0, take)?;
            g.add(a, b)?
        };
        Ok((h, z))
    }

    fn action_tensor(&self, actions: &[usize], resets: &[bool]) -> Result<Tensor, WorldModelError> {
        let n = self.config.action_count;
        let mut t = Tensor::zeros(actions.len(), n);
        for (r, (&a, &reset)) in actions.iter().zip(resets).enumerate() {
            if a >= n {
                return Err(WorldModelError::Batch(format!("action {a} out of range")));
            }
            if !reset {
                t.data_mut()[r * n + a] = 1.0;
            }
        }
        Ok(t)
    }

    fn gru_step(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        h: Var,
        z: Var,
        action: Var,
    ) -> Result<Var, DiffError> {
        let input = g.concat(&[z, action])?;
        self.gru.forward(g, store, h, input)
    }

    /// Filtering step for a batch of rows.
    pub fn observe_step<R: Rng + ?Sized>(
        &self,
        state: &ModelState,
        actions: &[usize],
        observations: &Tensor,
        is_first: &[bool],
        rng: &mut R,
    ) -> Result<ObserveOutput, WorldModelError> {
        let rows = state.rows();
        if actions.len() != rows || is_first.len() != rows || observations.rows() != rows {
            return Err(WorldModelError::Batch("observe_step row counts differ".into()));
        }
        if observations.cols() != self.config.obs_width {
            return Err(WorldModelError::Batch(format!(
                "observation width {} (expected {})",
                observations.cols(),
                self.config.obs_width
            )));
        }
        if !observations.is_finite() {
            return Err(WorldModelError::NonFinite("observation".into()));
        }
        let store = &self.store;
        let mut g = Graph::no_grad();
        let h = g.constant(state.h.clone());
        let z = g.constant(state.z.clone());
        let (h, z) = self.reset_rows(&mut g, store, h, z, is_first, Latent::Sample, rng)?;
        let a = g.constant(self.action_tensor(actions, is_first)?);
        let h = self.gru_step(&mut g, store, h, z, a)?;
        let x = g.constant(observations.clone());
        let embed = self.encoder.forward(&mut g, store, x)?;
        let he = g.concat(&[h, embed])?;
        let post = self.posterior.forward(&mut g, store, he)?;
        let prior = self.prior.forward(&mut g, store, h)?;
        let z = self.latent(&mut g, post, Latent::Sample, rng)?;
        Ok(ObserveOutput {
            state: ModelState {
                h: g.value(h).clone(),
                z: g.value(z).clone(),
            },
            posterior_logits: g.value(post).clone(),
            prior_logits: g.value(prior).clone(),
        })
    }

    /// Open-loop step: `z` drawn from the prior.
    pub fn dream_step<R: Rng + ?Sized>(
        &self,
        state: &ModelState,
        actions: &[usize],
        rng: &mut R,
    ) -> Result<ModelState, WorldModelError> {
        if actions.len() != state.rows() {
            return Err(WorldModelError::Batch("dream_step row counts differ".into()));
        }
        let store = &self.store;
        let mut g = Graph::no_grad();
        let h = g.constant(state.h.clone());
        let z = g.constant(state.z.clone());
        let a = g.constant(self.action_tensor(actions, &vec![false; actions.len()])?);
        let h = self.gru_step(&mut g, store, h, z, a)?;
        let prior = self.prior.forward(&mut g, store, h)?;
        let z = self.latent(&mut g, prior, Latent::Sample, rng)?;
        Ok(ModelState {
            h: g.value(h).clone(),
            z: g.value(z).clone(),
        })
    }

    /// Predicted reward and continue probability for each state row.
    pub fn predict_heads(&self, state: &ModelState) -> Result<(Vec<f64>, Vec<f64>), WorldModelError> {
        let store = &self.store;
        let mut g = Graph::no_grad();
        let f = g.constant(state.features());
        let r = self.reward.forward(&mut g, store, f)?;
        let c = self.cont.forward(&mut g, store, f)?;
        let c = g.sigmoid(c)?;
        Ok((g.value(r).data().to_vec(), g.value(c).data().to_vec()))
    }

    /// Reconstructed observation for each state row.
    pub fn decode(&self, state: &ModelState) -> Result<Tensor, WorldModelError> {
        let store = &self.store;
        let mut g = Graph::no_grad();
        let f = g.constant(state.features());
        let x = self.decoder.forward(&mut g, store, f)?;
        Ok(g.value(x).clone())
    }

    fn layout(&self, windows: &[Vec<Step>]) -> Result<Batch, WorldModelError> {
        let batch = windows.len();
        let length = windows.first().map_or(0, |w| w.len());
        if batch == 0 || length == 0 || windows.iter().any(|w| w.len() != length) {
            return Err(WorldModelError::Batch("windows must be non-empty and equally long".into()));
        }
        let width = self.config.obs_width;
        let mut obs = Vec::with_capacity(batch * length * width);
        let mut rewards = Vec::with_capacity(batch * length);
        let mut continues = Vec::with_capacity(batch * length);
        let mut actions = Vec::with_capacity(length);
        let mut resets = Vec::with_capacity(length);
        for t in 0..length {
            let mut acts = Vec::with_capacity(batch);
            // every window starts from the initial state
            let flags: Vec<bool> = windows.iter().map(|w| t == 0 || w[t].is_first).collect();
            for w in windows {
                let s = &w[t];
                if s.observation.len() != width {
                    return Err(WorldModelError::Batch(format!(
                        "observation width {} (expected {width})",
                        s.observation.len()
                    )));
                }
                obs.extend_from_slice(&s.observation);
                rewards.push(s.reward);
                continues.push(if s.is_terminal { 0.0 } else { 1.0 });
                acts.push(s.action);
            }
            actions.push(self.action_tensor(&acts, &flags)?);
            resets.push(flags);
        }
        let obs = Tensor::from_rows(batch * length, width, obs);
        if !obs.is_finite() || rewards.iter().any(|r| !r.is_finite()) {
            return Err(WorldModelError::NonFinite("batch data".into()));
        }
        Ok(Batch {
            batch,
            length,
            obs,
            actions,
            resets,
            rewards: Tensor::column(rewards),
            continues: Tensor::column(continues),
        })
    }

    /// Records the training loss on `g`, reading parameters from `store`
    /// (which must share this model's layout).
    pub fn loss_graph<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        windows: &[Vec<Step>],
        mode: Latent,
        rng: &mut R,
    ) -> Result<LossGraph, WorldModelError> {
        self.loss_graph_stopped(g, store, windows, mode, None, rng)
    }

    /// As [`WorldModel::loss_graph`], with the stop-gradient KL inputs
    /// optionally pinned to `stopped` instead of the current values. With
    /// them pinned, the loss is an ordinary function whose derivative is
    /// the stop-gradient gradient, so finite differences can verify it.
    pub fn loss_graph_stopped<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        windows: &[Vec<Step>],
        mode: Latent,
        stopped: Option<&StoppedLogits>,
        rng: &mut R,
    ) -> Result<LossGraph, WorldModelError> {
        let c = &self.config;
        let batch = self.layout(windows)?;
        let b = batch.batch;
        let obs = g.constant(batch.obs.clone());
        let embed_all = self.encoder.forward(g, store, obs)?;

        let mut h = g.constant(Tensor::zeros(b, c.deter));
        let mut z = g.constant(Tensor::zeros(b, c.stoch()));
        let mut hs = Vec::with_capacity(batch.length);
        let mut zs = Vec::with_capacity(batch.length);
        let mut posts = Vec::with_capacity(batch.length);
        for t in 0..batch.length {
            let (hr, zr) = self.reset_rows(g, store, h, z, &batch.resets[t], mode, rng)?;
            let a = g.constant(batch.actions[t].clone());
            h = self.gru_step(g, store, hr, zr, a)?;
            let e = g.slice_rows(embed_all, t * b, b)?;
            let he = g.concat(&[h, e])?;
            let post = self.posterior.forward(g, store, he)?;
            z = self.latent(g, post, mode, rng)?;
            hs.push(h);
            zs.push(z);
            posts.push(post);
        }
        let h_all = g.stack_rows(&hs)?;
        let z_all = g.stack_rows(&zs)?;
        let post_all = g.stack_rows(&posts)?;
        let prior_all = self.prior.forward(g, store, h_all)?;
        let feat = g.concat(&[h_all, z_all])?;

        let rows = (b * batch.length) as f64;
        let x_hat = self.decoder.forward(g, store, feat)?;
        let dx = g.sub(x_hat, obs)?;
        let sq = g.square(dx)?;
        let recon = g.sum(sq)?;
        let recon = g.scale(recon, 0.5 / rows)?;

        let r_hat = self.reward.forward(g, store, feat)?;
        let r_target = g.constant(batch.rewards.clone());
        let dr = g.sub(r_hat, r_target)?;
        let sq = g.square(dr)?;
        let rew = g.mean(sq)?;
        let rew = g.scale(rew, 0.5)?;

        let c_logit = self.cont.forward(g, store, feat)?;
        let bce = g.bce_with_logits(c_logit, batch.continues.clone())?;
        let cont = g.mean(bce)?;

        let classes = c.stoch_classes;
        let (post_sg, prior_sg) = match stopped {
            Some(s) => (g.constant(s.posterior.clone()), g.constant(s.prior.clone())),
            None => (g.detach(post_all), g.detach(prior_all)),
        };
        let kl_dyn_raw = g.kl_categorical(post_sg, prior_all, classes)?;
        let kl_rep_raw = g.kl_categorical(post_all, prior_sg, classes)?;
        let kl_dyn = g.clamp_min(kl_dyn_raw, c.free_bits)?;
        let kl_dyn = g.mean(kl_dyn)?;
        let kl_rep = g.clamp_min(kl_rep_raw, c.free_bits)?;
        let kl_rep = g.mean(kl_rep)?;
        let kl_dyn_w = g.scale(kl_dyn, c.beta_dyn)?;
        let kl_rep_w = g.scale(kl_rep, c.beta_rep)?;

        let mut loss = g.add(recon, rew)?;
        for term in [cont, kl_dyn_w, kl_rep_w] {
            loss = g.add(loss, term)?;
        }
        let kl = g.value(kl_dyn_raw).sum() / rows;
        let diagnostics = WmDiagnostics {
            loss: g.value(loss).item(),
            reconstruction: g.value(recon).item(),
            reward: g.value(rew).item(),
            continuation: g.value(cont).item(),
            kl_dyn: g.value(kl_dyn).item(),
            kl_rep: g.value(kl_rep).item(),
            kl,
            grad_norm: 0.0,
        };
        Ok(LossGraph {
            loss,
            diagnostics,
            states: ModelState {
                h: g.value(h_all).clone(),
                z: g.value(z_all).clone(),
            },
            stopped: StoppedLogits {
                posterior: g.value(post_all).clone(),
                prior: g.value(prior_all).clone(),
            },
        })
    }

    /// Loss value and diagnostics without an update.
    pub fn evaluate_loss<R: Rng + ?Sized>(
        &self,
        windows: &[Vec<Step>],
        mode: Latent,
        rng: &mut R,
    ) -> Result<WmDiagnostics, WorldModelError> {
        let mut g = Graph::no_grad();
        Ok(self.loss_graph(&mut g, &self.store, windows, mode, rng)?.diagnostics)
    }

    /// One optimizer step on `windows`. Returns the diagnostics and the
    /// posterior states visited, which seed the dream rollouts.
    pub fn train_step<R: Rng + ?Sized>(
        &mut self,
        windows: &[Vec<Step>],
        rng: &mut R,
    ) -> Result<(WmDiagnostics, ModelState), WorldModelError> {
        let (grads, mut diagnostics, states) = {
            let mut g = Graph::new();
            let out = self
                .loss_graph(&mut g, &self.store, windows, Latent::Sample, rng)
                .map_err(|e| match e {
                    WorldModelError::Diff(DiffError::NonFinite(op)) => WorldModelError::NonFinite(op),
                    other => other,
                })?;
            let grads = g.backward(out.loss)?.for_params(&self.store);
            (grads, out.diagnostics, out.states)
        };
        diagnostics.grad_norm = self.optimizer.step(&mut self.store, &grads)?;
        if !self.store.all_finite() {
            return Err(WorldModelError::NonFinite("parameters after update".into()));
        }
        Ok((diagnostics, states))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, WorldModelError> {
        Ok(persist::encode(MAGIC, VERSION, self)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WorldModelError> {
        Ok(persist::decode(MAGIC, VERSION, bytes)?)
    }
}

/// Runs `iterations` updates on fresh minibatches from `buffer`.
/// Finite-difference check of the full training loss on a random batch of
/// two 2-step windows (one with a terminal flag) for a small model.
/// Latents are relaxed to class probabilities, free bits are off and the
/// stop-gradient inputs of the KL terms are pinned at the base point, so
/// the loss is a smooth function whose total derivative is exactly what
/// backpropagation computes.
pub fn loss_grad_check(seed: u64) -> Result<GradCheckReport, WorldModelError> {
    let config = WorldModelConfig {
        obs_width: 6,
        action_count: 3,
        deter: 12,
        stoch_units: 3,
        stoch_classes: 4,
        embed: 10,
        hidden: 16,
        layers: 1,
        free_bits: 0.0,
        ..WorldModelConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = WorldModel::new(config, &mut rng);
    let mut windows: Vec<Vec<Step>> = (0..2)
        .map(|_| {
            (0..2)
                .map(|t| Step {
                    observation: (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    action: if t == 0 { 0 } else { rng.gen_range(0..3) },
                    reward: rng.gen_range(-1.0..1.0),
                    is_first: t == 0,
                    is_terminal: false,
                })
                .collect()
        })
        .collect();
    windows[1][1].is_terminal = true;
    let mut base = Graph::no_grad();
    let stopped = model
        .loss_graph(&mut base, model.params(), &windows, Latent::Relaxed, &mut rng)?
        .stopped;
    let report = grad_check(
        model.params(),
        |g, s| {
            let mut r = ChaCha8Rng::seed_from_u64(0);
            model
                .loss_graph_stopped(g, s, &windows, Latent::Relaxed, Some(&stopped), &mut r)
                .map(|l| l.loss)
                .map_err(|e| match e {
                    WorldModelError::Diff(d) => d,
                    other => DiffError::Shape(other.to_string()),
                })
        },
        FD_STEP,
    )?;
    Ok(report)
}

pub fn train_wm<R: Rng + ?Sized>(
    model: &mut WorldModel,
    buffer: &mut crate::replay::AugmentedBuffer,
    iterations: usize,
    batch_size: usize,
    batch_length: usize,
    rng: &mut R,
) -> Result<Vec<WmDiagnostics>, WorldModelError> {
    let mut out = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let mb = buffer
            .sample(batch_size, batch_length)
            .map_err(|e| WorldModelError::Batch(e.to_string()))?;
        out.push(model.train_step(&mb.windows, rng)?.0);
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
