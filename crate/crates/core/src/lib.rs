//! Receding-horizon ridepooling simulation with demand anticipation.

pub mod anticipatory;
pub mod cli;
pub mod demand;
pub mod engine;
pub mod error;
pub mod fleet;
pub mod network;
pub mod matching;
pub mod rates;
pub mod routing;
pub mod scenarios;

pub use error::{Error, Result};
