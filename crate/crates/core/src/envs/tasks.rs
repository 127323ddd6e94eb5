use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CHANNELS, OBS_WIDTH, WINDOW};

pub type Pos = (usize, usize);

/// Moves in action order: up, right, down, left.
const MOVES: [(isize, isize); 4] = [(-1, 0), (0, 1), (1, 0), (0, -1)];

fn shift(pos: Pos, action: usize, size: usize) -> Option<Pos> {
    let (dr, dc) = MOVES[action];
    let r = pos.0 as isize + dr;
    let c = pos.1 as isize + dc;
    if r < 0 || c < 0 || r >= size as isize || c >= size as isize {
        None
    } else {
        Some((r as usize, c as usize))
    }
}

/// Writes a 3×3 egocentric window; `cell` returns the channel values for
/// an in-bounds cell, out-of-bounds cells get `outside`.
fn window(
    center: Pos,
    size: usize,
    outside: [f64; CHANNELS],
    cell: impl Fn(Pos) -> [f64; CHANNELS],
) -> Vec<f64> {
    let mut obs = Vec::with_capacity(OBS_WIDTH);
    let half = (WINDOW / 2) as isize;
    for dr in -half..=half {
        for dc in -half..=half {
            let r = center.0 as isize + dr;
            let c = center.1 as isize + dc;
            if r < 0 || c < 0 || r >= size as isize || c >= size as isize {
                obs.extend_from_slice(&outside);
            } else {
                obs.extend_from_slice(&cell((r as usize, c as usize)));
            }
        }
    }
    obs
}

/// Goal-reaching gridworld seen through a 3×3 window with channels
/// `[wall, goal, floor]`. Reaching the goal pays `reward` and ends the
/// episode; bumping into walls leaves the agent in place.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridWorld {
    pub size: usize,
    pub walls: Vec<bool>,
    pub goal: Pos,
    pub agent: Pos,
    pub reward: f64,
}

impl GridWorld {
    /// Random layout with `wall_count` interior walls, regenerated until
    /// every free cell can reach the goal.
    pub fn generate(size: usize, wall_count: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let mut walls = vec![false; size * size];
            let mut placed = 0;
            while placed < wall_count {
                let i = rng.gen_range(0..size * size);
                if !walls[i] {
                    walls[i] = true;
                    placed += 1;
                }
            }
            let free: Vec<usize> = (0..size * size).filter(|&i| !walls[i]).collect();
            let g = free[rng.gen_range(0..free.len())];
            let world = Self {
                size,
                walls,
                goal: (g / size, g % size),
                agent: (g / size, g % size),
                reward: 1.0,
            };
            if world.connected() {
                return world;
            }
        }
    }

    pub fn is_wall(&self, p: Pos) -> bool {
        self.walls[p.0 * self.size + p.1]
    }

    /// Cells an episode may start in (free and not the goal).
    pub fn start_cells(&self) -> Vec<Pos> {
        (0..self.size * self.size)
            .map(|i| (i / self.size, i % self.size))
            .filter(|&p| !self.is_wall(p) && p != self.goal)
            .collect()
    }

    fn connected(&self) -> bool {
        let mut seen = vec![false; self.size * self.size];
        let mut queue = VecDeque::from([self.goal]);
        seen[self.goal.0 * self.size + self.goal.1] = true;
        while let Some(p) = queue.pop_front() {
            for a in 0..4 {
                if let Some(n) = shift(p, a, self.size) {
                    let i = n.0 * self.size + n.1;
                    if !self.walls[i] && !seen[i] {
                        seen[i] = true;
                        queue.push_back(n);
                    }
                }
            }
        }
        (0..self.size * self.size).all(|i| self.walls[i] || seen[i])
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let cells = self.start_cells();
        self.agent = cells[rng.gen_range(0..cells.len())];
    }

    /// Next position for `action`, staying put on walls and edges.
    pub fn next_position(&self, from: Pos, action: usize) -> Pos {
        match shift(from, action, self.size) {
            Some(n) if !self.is_wall(n) => n,
            _ => from,
        }
    }

    pub fn step(&mut self, action: usize) -> (f64, bool) {
        self.agent = self.next_position(self.agent, action);
        if self.agent == self.goal {
            (self.reward, true)
        } else {
            (0.0, false)
        }
    }

    pub fn observe(&self) -> Vec<f64> {
        window(self.agent, self.size, [1.0, 0.0, 0.0], |p| {
            if self.is_wall(p) {
                [1.0, 0.0, 0.0]
            } else if p == self.goal {
                [0.0, 1.0, 0.0]
            } else {
                [0.0, 0.0, 1.0]
            }
        })
    }
}

/// Walk along `length` links from the left end; reaching the right end
/// pays `reward` and terminates. Action 1 moves right, 3 moves left, the
/// others stay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainWalk {
    pub length: usize,
    pub position: usize,
    pub reward: f64,
}

impl ChainWalk {
    pub fn new(length: usize, reward: f64) -> Self {
        assert!(length + 1 <= OBS_WIDTH, "chain longer than the observation");
        Self {
            length,
            position: 0,
            reward,
        }
    }

    pub fn reset(&mut self) {
        self.position = 0;
    }

    pub fn step(&mut self, action: usize) -> (f64, bool) {
        match action {
            1 => self.position = (self.position + 1).min(self.length),
            3 => self.position = self.position.saturating_sub(1),
            _ => {}
        }
        if self.position == self.length {
            (self.reward, true)
        } else {
            (0.0, false)
        }
    }

    pub fn observe(&self) -> Vec<f64> {
        let mut obs = vec![0.0; OBS_WIDTH];
        obs[self.position] = 1.0;
        obs
    }
}

/// Each step shows a binary context; choosing the matching arm
/// (`action % 2 == context`) pays `reward`. Episodes run until truncation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextBandit {
    pub context: usize,
    pub reward: f64,
}

impl ContextBandit {
    pub fn new(reward: f64) -> Self {
        Self { context: 0, reward }
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.context = rng.gen_range(0..2);
    }

    pub fn step<R: Rng + ?Sized>(&mut self, action: usize, rng: &mut R) -> (f64, bool) {
        let r = if action % 2 == self.context {
            self.reward
        } else {
            0.0
        };
        self.context = rng.gen_range(0..2);
        (r, false)
    }

    pub fn observe(&self) -> Vec<f64> {
        let mut obs = vec![0.0; OBS_WIDTH];
        obs[OBS_WIDTH - 3 + self.context] = 1.0;
        obs[OBS_WIDTH - 1] = 1.0;
        obs
    }
}

/// Open `size × size` room with a key in the top-right corner and a door
/// in the bottom-left. Walking onto the key picks it up; reaching the door
/// while holding it pays `reward` and terminates. Channels are
/// `[wall, key, door]`; actions are remapped through `action_map`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeyDoor {
    pub size: usize,
    pub agent: Pos,
    pub key: Pos,
    pub door: Pos,
    pub has_key: bool,
    pub reward: f64,
    pub action_map: Vec<usize>,
}

impl KeyDoor {
    pub fn new(size: usize, reward: f64, action_map: Vec<usize>) -> Self {
        Self {
            size,
            agent: (0, 0),
            key: (0, size - 1),
            door: (size - 1, 0),
            has_key: false,
            reward,
            action_map,
        }
    }

    pub fn start_cells(&self) -> Vec<Pos> {
        (0..self.size * self.size)
            .map(|i| (i / self.size, i % self.size))
            .filter(|&p| p != self.key && p != self.door)
            .collect()
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let cells = self.start_cells();
        self.agent = cells[rng.gen_range(0..cells.len())];
        self.has_key = false;
    }

    pub fn step(&mut self, action: usize) -> (f64, bool) {
        let a = self.action_map[action];
        if let Some(n) = shift(self.agent, a, self.size) {
            self.agent = n;
        }
        if self.agent == self.key {
            self.has_key = true;
        }
        if self.agent == self.door && self.has_key {
            (self.reward, true)
        } else {
            (0.0, false)
        }
    }

    pub fn observe(&self) -> Vec<f64> {
        window(self.agent, self.size, [1.0, 0.0, 0.0], |p| {
            if p == self.key && !self.has_key {
                [0.0, 1.0, 0.0]
            } else if p == self.door {
                [0.0, 0.0, 1.0]
            } else {
                [0.0, 0.0, 0.0]
            }
        })
    }
}
