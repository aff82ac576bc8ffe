//! Open-world planning agent that discovers new operators by exploring
//! with tabular Q-learning when its planner reaches an impasse.

pub mod engine;
pub mod executors;
pub mod genprecon;
pub mod gridworld;
pub mod harness;
pub mod owpddl;
pub mod par;
pub mod rl;
pub mod symbolic;
