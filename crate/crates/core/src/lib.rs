//! Sequential evidence acquisition for differential diagnosis.
//!
//! The crate models a patient interview as a finite-horizon MDP over a
//! naive-Bayes knowledge base, shapes the sparse acquisition reward with
//! belief-based auxiliary terms, and provides two agents that produce
//! comparable dialogues: a DQN learner with a jointly trained classifier, and
//! a training-free Bayesian experimental designer. [`metrics`] scores the
//! resulting trajectories.

pub mod agent;
pub mod bed;
pub mod datagen;
pub mod environment;
pub mod knowledge;
pub mod metrics;
pub mod rollout;
pub mod seed;
pub mod shaping;
