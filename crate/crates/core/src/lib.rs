pub mod capture;
pub mod cli;
pub mod config;
pub mod costs;
pub mod error;
pub mod forecast;
pub mod formation;
pub mod geometry;
pub mod local_planner;
pub mod simulator;
pub mod world;

pub use error::{Error, Result};
