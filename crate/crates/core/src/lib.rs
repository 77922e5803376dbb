//! Data-driven converter efficiency modeling with experimental augmentation.
//!
//! A boosted-tree landscape model is trained on dense simulation data, a
//! second boosted model learns the measured gap on sparse experimental data,
//! and a particle swarm with adaptive velocity limits searches the stacked
//! surrogate for the most efficient modulation at each load.
//!
//! Modules:
//! - [`gbrt`]: squared-loss gradient-boosted regression trees.
//! - [`residual_stack`]: the two-stage surrogate, accuracy metrics and
//!   baseline comparisons.
//! - [`pso`]: particle swarm optimization with adaptive velocity limits.
//! - [`oracle`]: synthetic hardware and simulation efficiency surfaces.
//! - [`datasets`]: grid/pool generation, splits and CSV files.
//! - [`config`]: `key = value` configuration files.

pub mod config;
pub mod datasets;
pub mod error;
pub mod gbrt;
pub mod oracle;
pub mod pipeline;
pub mod pso;
pub mod residual_stack;
pub mod sample;

pub use error::{Error, Result};
pub use sample::{Fidelity, OperatingPoint, Sample};
