//! Surface-wave simulation and neural surrogate forecasting toolkit.
//!
//! The pipeline has three stages:
//!
//! 1. Simulate shallow-water (Saint-Venant) dynamics in a square tank
//!    ([`solver`]), shade the height fields into grayscale frames
//!    ([`render`]) and persist them as sequence datasets ([`dataset`]).
//! 2. Train forecasting models ([`models`], [`training`]) on clips of those
//!    frames using the built-in reverse-mode autodiff engine ([`autodiff`]).
//! 3. Evaluate long-horizon autoregressive rollouts, generalization across
//!    physical settings, inference speed and latent content ([`eval`],
//!    [`probe`]).

pub mod autodiff;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod models;
pub mod probe;
pub mod render;
pub mod solver;
pub mod training;

pub use error::{Error, Result};
