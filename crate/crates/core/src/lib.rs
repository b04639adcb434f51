//! Trains DQN representations in a pixel maze under configurable auxiliary
//! losses, freezes and transfers them to new goal locations, and measures
//! six representation properties over a fixed probe dataset.
//!
//! The crate is organized around the workflow:
//!
//! * [`gridworld`] — the deterministic pixel-observation maze MDP;
//! * [`nn`] / [`tensor`] — a minimal dense-tensor numerical core with exact
//!   reverse-mode gradients (convolution, linear, ReLU, FTA, Adam);
//! * [`model`] — the shared representation trunk plus value head;
//! * [`aux`] — the nine auxiliary objectives sharing that trunk;
//! * [`agent`] — DQN with replay, target network, and the two training stages;
//! * [`properties`] — the six representation-property metrics;
//! * [`task_similarity`] — tabular successor-representation task ranking;
//! * [`harness`] — sweeps, campaigns, result store, and reports.

pub mod agent;
pub mod aux;
pub mod checkpoint;
pub mod csvio;
pub mod error;
pub mod gridworld;
pub mod harness;
pub mod model;
pub mod nn;
pub mod num;
pub mod properties;
pub mod rng;
pub mod task_similarity;
pub mod tensor;

pub use error::{Error, Result};
pub use num::{Real, Scalar};
pub use tensor::Tensor;
