use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Surface perturbation of a per-cell channel observation: channels are
/// permuted within each cell, then every feature is remapped by
/// `v ↦ gain·v + offset`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Palette {
    /// `permutation[c]` is the output channel receiving input channel `c`.
    pub permutation: Vec<usize>,
    pub gain: f64,
    /// Per-feature offsets; empty means zero.
    pub offsets: Vec<f64>,
}

impl Palette {
    pub fn identity(channels: usize) -> Self {
        Self {
            permutation: (0..channels).collect(),
            gain: 1.0,
            offsets: Vec::new(),
        }
    }

    pub fn permuted(permutation: Vec<usize>) -> Self {
        Self {
            permutation,
            gain: 1.0,
            offsets: Vec::new(),
        }
    }

    /// Adds a fixed pseudo-random background pattern of amplitude
    /// `amplitude` to the channel that ends up at `channel`.
    pub fn with_background_noise(mut self, cells: usize, channel: usize, amplitude: f64, seed: u64) -> Self {
        let channels = self.permutation.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut offsets = if self.offsets.is_empty() {
            vec![0.0; cells * channels]
        } else {
            self.offsets
        };
        for cell in 0..cells {
            offsets[cell * channels + channel] += rng.gen_range(0.0..amplitude);
        }
        self.offsets = offsets;
        self
    }

    /// Composes `v ↦ 1 − v` after the current remapping.
    pub fn inverted(mut self, features: usize) -> Self {
        self.gain = -self.gain;
        let mut offsets = if self.offsets.is_empty() {
            vec![0.0; features]
        } else {
            self.offsets
        };
        offsets.iter_mut().for_each(|o| *o = 1.0 - *o);
        self.offsets = offsets;
        self
    }

    pub fn is_valid(&self) -> bool {
        let mut seen = vec![false; self.permutation.len()];
        for &p in &self.permutation {
            if p >= seen.len() || seen[p] {
                return false;
            }
            seen[p] = true;
        }
        self.gain.is_finite() && self.offsets.iter().all(|v| v.is_finite())
    }

    pub fn inverse_permutation(&self) -> Vec<usize> {
        let mut inv = vec![0; self.permutation.len()];
        for (c, &p) in self.permutation.iter().enumerate() {
            inv[p] = c;
        }
        inv
    }

    pub fn apply(&self, base: &[f64]) -> Vec<f64> {
        permute_channels(base, &self.permutation)
            .into_iter()
            .enumerate()
            .map(|(i, v)| self.gain * v + self.offsets.get(i).copied().unwrap_or(0.0))
            .collect()
    }
}

/// Moves channel `c` of every cell to position `permutation[c]`.
pub fn permute_channels(base: &[f64], permutation: &[usize]) -> Vec<f64> {
    let channels = permutation.len();
    let mut out = vec![0.0; base.len()];
    for (cell, src) in base.chunks(channels).enumerate() {
        for (c, &v) in src.iter().enumerate() {
            out[cell * channels + permutation[c]] = v;
        }
    }
    out
}
