pub mod agent;
pub mod attacks;
pub mod config;
pub mod envs;
pub mod error;
pub mod harness;
pub mod ndnet;
pub mod reliability;
pub mod seeding;
pub mod training;

pub use error::{Error, Result};
