//! Spiking neural network training with excitatory/inhibitory neuron
//! partitions: LIF forward simulation, surrogate-gradient BPTT under
//! Dale's-law sign constraints, noisy weight updates, spike-train metrics,
//! and a reproducible experiment harness.

pub mod encode;
pub mod error;
pub mod exp;
pub mod matrix;
pub mod metrics;
pub mod net;
pub mod rng;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
