// SPDX-License-Identifier: Apache-2.0

//! Deep networks of self-organizing map (SOM) modules.
//!
//! Each module is a 10×10 grid of unit-norm weight rows. A module responds to
//! its input with a winners-share-all (WSA) activation: the best-matching
//! neuron outputs 1.0 and its grid neighbours a Gaussian share of it. Modules
//! are stacked into layers with receptive-field wiring, pre-trained layer by
//! layer with competitive learning, and fine-tuned with advance propagation:
//! a purely feedforward supervised rule in which a correctly classified
//! exemplar of the required class is propagated first and its activations are
//! blended into the misclassified target's pass.
//!
//! With the default `parallel` feature, per-module work inside a layer and
//! validation-set classification run on the rayon thread pool. Without it the
//! same code runs sequentially with identical results.

pub mod aplearn;
pub mod dataio;
mod error;
pub mod harness;
pub mod par;
pub mod pretrain;
pub mod somcore;
pub mod topology;

pub use aplearn::{AdvanceCache, ApParams, LabelMap, Prediction, TrialOutcome};
pub use dataio::{Dataset, Image, SampleStream};
pub use error::{Error, Result};
pub use pretrain::PretrainSchedule;
pub use somcore::{ActivationResult, Kernel, KernelParams, SomGrid, UpdateSign};
pub use topology::{
    LayerActivation, LayerInputs, LayerSpec, Network, NetworkState, NetworkTopology,
    ReceptiveField, TimeTag,
};
