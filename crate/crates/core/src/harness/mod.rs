//! Synthetic scenes, metrics, and the command-line driver.

pub mod cli;
pub mod metrics;
pub mod scene;
pub mod selftest;

pub use metrics::{compute_metrics, evaluate_run, Evaluation, Metrics};
pub use scene::{gen_sequence, Scene, SceneConfig};
