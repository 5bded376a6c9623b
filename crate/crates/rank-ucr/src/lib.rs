//! Contextual ranking bandits with upper-confidence exploration.

pub mod config;
pub mod error;
pub mod glm;
pub mod harness;
mod linalg;
pub mod matching;
pub mod policy;
pub mod rewards;
pub mod simenv;

pub use error::{Error, Result};
