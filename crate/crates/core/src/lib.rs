//! Dense networks read as sparse graphs.
//!
//! The crate trains small ReLU/softmax networks with masked SGD, categorizes
//! their weights into activating, inhibiting and inactive edges, measures how
//! much of the resulting graph lies on complete input→output paths, and
//! provides the lightning initializer, which seeds a network with random
//! complete paths and nothing else.

pub mod analysis;
pub mod data;
pub mod error;
pub mod graph;
pub mod init;
pub mod nn;

pub use error::{Error, Result};

/// Level sizes of LeNet 300-100 on MNIST.
pub const LENET_300_100: [usize; 4] = [784, 300, 100, 10];
