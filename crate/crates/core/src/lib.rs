//! World models with augmented replay: an RSSM world model, a dream-trained
//! actor-critic and a FIFO + reservoir replay buffer for continual
//! reinforcement learning, with the evaluation metrics and experiment
//! harness around them.

pub mod agent;
pub mod diffcore;
pub mod envs;
pub mod evalkit;
pub mod persist;
pub mod replay;
pub mod trainer;
pub mod worldmodel;
