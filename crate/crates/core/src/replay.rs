//! Augmented replay: episodes are spliced into fixed-length chunks that go
//! to both a short-term FIFO buffer and a long-term reservoir that keeps a
//! uniform random subset of every chunk ever seen.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::persist::{self, PersistError};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("chunk size must be at least 2, got {0}")]
    ChunkSize(usize),
    #[error("episode {0} does not start with a reset flag")]
    EpisodeStart(usize),
    #[error("both replay buffers are empty")]
    Empty,
    #[error("batch length {batch_length} exceeds chunk size {chunk_size}")]
    BatchLength {
        batch_length: usize,
        chunk_size: usize,
    },
    #[error(transparent)]
    Persist(#[from] PersistError),
}

/// One environment transition. `action` is the action that produced
/// `observation` (zero on reset) and `reward` the reward received with it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub observation: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub is_first: bool,
    /// Episode ended by reaching a terminal state (not by truncation).
    pub is_terminal: bool,
}

impl Step {
    pub fn first(observation: Vec<f64>) -> Self {
        Self {
            observation,
            action: 0,
            reward: 0.0,
            is_first: true,
            is_terminal: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    steps: Vec<Step>,
    reservoir_key: f64,
    /// Task that produced the first step; bookkeeping only.
    pub source_task: usize,
}

impl Chunk {
    pub fn new(steps: Vec<Step>, reservoir_key: f64, source_task: usize) -> Self {
        Self {
            steps,
            reservoir_key,
            source_task,
        }
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn reservoir_key(&self) -> f64 {
        self.reservoir_key
    }
}

/// Lays steps end to end across episode boundaries and cuts them into
/// chunks of `chunk_size`. Each chunk gets its reservoir key from a
/// dedicated RNG stream when it is cut.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Splicer {
    chunk_size: usize,
    carry: Vec<Step>,
    carry_task: usize,
    key_rng: ChaCha8Rng,
    emitted: u64,
}

impl Splicer {
    pub fn new(chunk_size: usize, key_seed: u64) -> Result<Self, ReplayError> {
        if chunk_size < 2 {
            return Err(ReplayError::ChunkSize(chunk_size));
        }
        Ok(Self {
            chunk_size,
            carry: Vec::with_capacity(chunk_size),
            carry_task: 0,
            key_rng: ChaCha8Rng::seed_from_u64(key_seed),
            emitted: 0,
        })
    }

    pub fn chunk_size(&self) -> usize {
        self.chunk_size
    }

    /// Steps waiting for the next chunk.
    pub fn carry(&self) -> &[Step] {
        &self.carry
    }

    pub fn chunks_emitted(&self) -> u64 {
        self.emitted
    }

    pub fn push(&mut self, step: Step, task: usize) -> Option<Chunk> {
        if self.carry.is_empty() {
            self.carry_task = task;
        }
        self.carry.push(step);
        if self.carry.len() < self.chunk_size {
            return None;
        }
        let steps = std::mem::replace(&mut self.carry, Vec::with_capacity(self.chunk_size));
        let key: f64 = self.key_rng.gen();
        self.emitted += 1;
        Some(Chunk::new(steps, key, self.carry_task))
    }

    /// Splices whole episodes; each must begin with `is_first`.
    pub fn push_episodes(&mut self, episodes: &[Vec<Step>], task: usize) -> Result<Vec<Chunk>, ReplayError> {
        for (i, ep) in episodes.iter().enumerate() {
            if ep.first().map_or(false, |s| !s.is_first) {
                return Err(ReplayError::EpisodeStart(i));
            }
        }
        let mut out = Vec::new();
        for ep in episodes {
            for s in ep {
                out.extend(self.push(s.clone(), task));
            }
        }
        Ok(out)
    }
}

/// Short-term buffer holding the most recent chunks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FifoBuffer {
    capacity_steps: usize,
    chunks: VecDeque<Chunk>,
    stored_steps: usize,
}

impl FifoBuffer {
    pub fn new(capacity_steps: usize) -> Self {
        Self {
            capacity_steps,
            chunks: VecDeque::new(),
            stored_steps: 0,
        }
    }

    /// Appends `chunk`, then evicts oldest-first until within capacity.
    pub fn insert(&mut self, chunk: Chunk) -> Vec<Chunk> {
        self.stored_steps += chunk.len();
        self.chunks.push_back(chunk);
        let mut evicted = Vec::new();
        while self.stored_steps > self.capacity_steps {
            match self.chunks.pop_front() {
                Some(old) => {
                    self.stored_steps -= old.len();
                    evicted.push(old);
                }
                None => break,
            }
        }
        evicted
    }

    pub fn capacity_steps(&self) -> usize {
        self.capacity_steps
    }

    pub fn stored_steps(&self) -> usize {
        self.stored_steps
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn chunks(&self) -> impl Iterator<Item = &Chunk> {
        self.chunks.iter()
    }

    pub fn get(&self, i: usize) -> &Chunk {
        &self.chunks[i]
    }
}

/// Heap entry ordered so that the smallest key sits at the top.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct MinKey(Chunk);

impl Eq for MinKey {}

impl PartialOrd for MinKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for MinKey {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.reservoir_key.total_cmp(&self.0.reservoir_key)
    }
}

/// Long-term distribution-matching buffer: retains the `capacity_chunks`
/// chunks with the highest reservoir keys among everything inserted.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReservoirBuffer {
    capacity_chunks: usize,
    heap: BinaryHeap<MinKey>,
    offered: u64,
}

impl PartialEq for ReservoirBuffer {
    fn eq(&self, other: &Self) -> bool {
        self.capacity_chunks == other.capacity_chunks
            && self.offered == other.offered
            && self.heap.as_slice() == other.heap.as_slice()
    }
}

impl ReservoirBuffer {
    pub fn new(capacity_chunks: usize) -> Self {
        Self {
            capacity_chunks,
            heap: BinaryHeap::with_capacity(capacity_chunks),
            offered: 0,
        }
    }

    /// Returns the chunk that is not retained: the previous minimum, the
    /// incoming chunk when its key does not beat the minimum, or nothing
    /// while under capacity.
    pub fn insert(&mut self, chunk: Chunk) -> Option<Chunk> {
        self.offered += 1;
        if self.heap.len() < self.capacity_chunks {
            self.heap.push(MinKey(chunk));
            return None;
        }
        match self.heap.peek() {
            Some(min) if chunk.reservoir_key > min.0.reservoir_key => {
                let old = self.heap.pop().map(|m| m.0);
                self.heap.push(MinKey(chunk));
                old
            }
            _ => Some(chunk),
        }
    }

    pub fn capacity_chunks(&self) -> usize {
        self.capacity_chunks
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn offered(&self) -> u64 {
        self.offered
    }

    pub fn min_key(&self) -> Option<f64> {
        self.heap.peek().map(|m| m.0.reservoir_key)
    }

    pub fn stored_steps(&self) -> usize {
        self.heap.iter().map(|m| m.0.len()).sum()
    }

    /// Stored chunks in internal (heap) order.
    pub fn chunks(&self) -> impl Iterator<Item = &Chunk> {
        self.heap.as_slice().iter().map(|m| &m.0)
    }

    pub fn get(&self, i: usize) -> &Chunk {
        &self.heap.as_slice()[i].0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BufferKind {
    Fifo,
    LongTerm,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Minibatch {
    pub source: BufferKind,
    /// `batch_size` windows of `batch_length` consecutive steps.
    pub windows: Vec<Vec<Step>>,
}

const REPLAY_MAGIC: [u8; 4] = *b"WMRB";
const REPLAY_VERSION: u32 = 1;

/// FIFO plus long-term reservoir, sampled as one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentedBuffer {
    pub fifo: FifoBuffer,
    pub ltdm: ReservoirBuffer,
    chunk_size: usize,
    rng: ChaCha8Rng,
}

impl AugmentedBuffer {
    pub fn new(fifo_steps: usize, ltdm_chunks: usize, chunk_size: usize, seed: u64) -> Self {
        Self {
            fifo: FifoBuffer::new(fifo_steps),
            ltdm: ReservoirBuffer::new(ltdm_chunks),
            chunk_size,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Offers `chunk` to both buffers.
    pub fn insert(&mut self, chunk: Chunk) {
        if self.ltdm.capacity_chunks() > 0 {
            self.ltdm.insert(chunk.clone());
        }
        self.fifo.insert(chunk);
    }

    pub fn chunk_size(&self) -> usize {
        self.chunk_size
    }

    pub fn stored_steps(&self) -> usize {
        self.fifo.stored_steps() + self.ltdm.stored_steps()
    }

    /// Upper bound on stored steps implied by the configured capacities.
    pub fn memory_bound(&self) -> usize {
        self.fifo.capacity_steps() + self.ltdm.capacity_chunks() * self.chunk_size
    }

    pub fn is_empty(&self) -> bool {
        self.fifo.is_empty() && self.ltdm.is_empty()
    }

    /// Picks one buffer uniformly (the FIFO alone while the long-term
    /// buffer holds fewer chunks than a batch), then draws `batch_size`
    /// windows, each from a uniformly chosen chunk at a uniform offset.
    pub fn sample(&mut self, batch_size: usize, batch_length: usize) -> Result<Minibatch, ReplayError> {
        if self.is_empty() {
            return Err(ReplayError::Empty);
        }
        if batch_length > self.chunk_size {
            return Err(ReplayError::BatchLength {
                batch_length,
                chunk_size: self.chunk_size,
            });
        }
        let source = if self.fifo.is_empty() {
            BufferKind::LongTerm
        } else if self.ltdm.len() < batch_size.max(1) {
            BufferKind::Fifo
        } else if self.rng.gen::<bool>() {
            BufferKind::Fifo
        } else {
            BufferKind::LongTerm
        };
        let count = match source {
            BufferKind::Fifo => self.fifo.len(),
            BufferKind::LongTerm => self.ltdm.len(),
        };
        let mut windows = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let idx = self.rng.gen_range(0..count);
            let chunk = match source {
                BufferKind::Fifo => self.fifo.get(idx),
                BufferKind::LongTerm => self.ltdm.get(idx),
            };
            let start = self.rng.gen_range(0..=chunk.len() - batch_length);
            windows.push(chunk.steps()[start..start + batch_length].to_vec());
        }
        Ok(Minibatch { source, windows })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, ReplayError> {
        Ok(persist::encode(REPLAY_MAGIC, REPLAY_VERSION, self)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ReplayError> {
        Ok(persist::decode(REPLAY_MAGIC, REPLAY_VERSION, bytes)?)
    }
}

/// Buffer contents plus the splice carry, as one checkpoint record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayState {
    pub buffer: AugmentedBuffer,
    pub splicer: Splicer,
}

impl ReplayState {
    pub fn to_bytes(&self) -> Result<Vec<u8>, ReplayError> {
        Ok(persist::encode(REPLAY_MAGIC, REPLAY_VERSION, self)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ReplayError> {
        Ok(persist::decode(REPLAY_MAGIC, REPLAY_VERSION, bytes)?)
    }
}
