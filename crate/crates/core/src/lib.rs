//! Language-guided skill discovery from demonstrations.

pub mod autograd;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod gridworld;
pub mod hrl;
pub mod nets;
pub mod oracle;
pub mod pipeline;
pub mod segmenter;
pub mod tvi;

pub use error::{Error, Result};
