//! Two-server secure inference for convolutional networks.
//!
//! A model owner and a client additively secret-share the model and the
//! query between two non-colluding servers. The servers evaluate
//! convolution and fully-connected layers with Beaver triplets (generated
//! offline through batched ring-LWE encryption), ReLU with a garbled
//! circuit, and average pooling locally; the client recombines the logits.

pub mod engine;
pub mod error;
pub mod gc;
pub mod he;
pub mod nn;
pub mod ring;
pub mod rng;
pub mod sharing;
pub mod transport;
pub mod triplet;

pub use error::{Error, Result};
pub use ring::{RingParams, RingValue, Role};
pub use rng::{Prg, Seed};
pub use sharing::{RingTensor, SharedTensor};
