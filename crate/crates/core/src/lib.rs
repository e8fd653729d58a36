// SPDX-License-Identifier: Apache-2.0

//! Vertical federated tree models.
//!
//! Random forests, GBDT and XGBoost trained over a simulated multi-party
//! bus, either by gathering protected bucket ordinals at the task party or
//! by scattering (optionally encrypted) label statistics to data parties.

pub mod config;
pub mod dataset;
pub mod datasets;
pub mod error;
pub mod experiment;
pub mod fg;
pub mod inference;
pub mod ls;
pub mod messaging;
pub mod metrics;
pub mod party;
pub mod privacy;
pub mod protocol;
pub mod reference;
pub mod rng;
pub mod session;
pub mod split;
pub mod tree;
pub mod wire;

pub use error::{Result, VflError};
pub use messaging::{Bus, CommStats, Envelope, PartyId, Phase, Role};
pub use session::{train_federated, Protection, Protocol, TrainConfig, TrainedModel};
pub use tree::{Ensemble, GradPair, Hyperparams, ModelKind, SplitPointer, TaskKind, TreeNode};
