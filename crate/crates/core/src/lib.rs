//! Desk-scale navigation dynamics laboratory.
//!
//! A 2D simulator with a second-order robot motion model, a Fast-Marching
//! expert, and instruments for sensitivity analysis, latent probing, memory
//! ablation, planning-quality maps and Shapley input importance.

#[cfg(feature = "cli")]
pub mod cli;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod estimator;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod planner;
pub mod policy;
pub mod probing;
pub mod sensitivity;
#[cfg(feature = "server")]
pub mod service;
pub mod shapley;
pub mod world;

pub use error::{Error, Result};
