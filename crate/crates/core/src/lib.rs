//! Cooperative multi-agent herding simulator.
//!
//! A deterministic gridworld in which player agents learn, by tabular
//! Q-learning over abstracted states, to herd flocking cows into a corral.
//! A coordinator agent elects an entrance detector, broadcasts the corral
//! entrances, and fuses the agents' per-behavior Q-tables by visit-weighted
//! averaging so that experience transfers between team members. A separate
//! cooperative goal-search benchmark reuses the same learning and fusion
//! machinery, and an experiment harness computes transfer metrics
//! (jumpstart, transfer rate, convergence iteration) from paired runs.

pub mod abstraction;
pub mod agents;
pub mod coordinator;
pub mod error;
pub mod geom;
pub mod goalsearch;
pub mod harness;
pub mod learning;
pub mod rng;
pub mod validate;
pub mod world;

pub use error::{Error, Result};
