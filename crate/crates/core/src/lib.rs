//! Swing-equation simulation and operator-learning surrogates for
//! single-machine infinite-bus (SMIB) transient stability.
//!
//! The crate is `no_std` with `alloc`. Everything here is a pure function
//! of its inputs; file formats, the command-line tool and wall-clock
//! timing live in the `psno` companion crate.
//!
//! Module map:
//!
//! - [`smib`]: swing-equation dynamics, equal-area thresholds, ground-truth
//!   integration and the instability-boundary search.
//! - [`ode`]: the Dormand–Prince 5(4) integrator with dense output.
//! - [`datagen`]: stable/unstable sampling, dataset assembly, normalization.
//! - [`numcore`]: tensors, reverse-mode gradients, FFT, initialization, Adam.
//! - [`operators`]: DeepONet, FNO and latent neural ODE surrogates.
//! - [`training`]: relative H1 loss and the mini-batch training loop.
//! - [`evaluation`]: RMSE/MASE, bootstrap intervals and the two experiments.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod datagen;
pub mod evaluation;
mod math;
pub mod numcore;
pub mod ode;
pub mod operators;
pub mod rng;
pub mod smib;
pub mod training;

pub use datagen::{Dataset, NormalizationStats, SamplingConfig, Split, SplitDatasets, TrajectoryRecord};
pub use operators::{Model, ModelConfig, ModelKind};


pub use numcore::{ParamSet, Tensor};

pub use smib::{MachineState, SmibParams, StabilityLabel, Trajectory};
