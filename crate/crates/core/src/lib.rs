//! Desk-scale workbench for model-extraction attacks on sequential
//! recommenders: synthetic secret data, black-box targets, simulated users
//! that generate surrogate data, ranking distillation, and evaluation.

pub mod agent;
pub mod corpus;
pub mod distill;
pub mod genpipe;
pub mod metrics;
pub mod error;
pub mod experiment;
pub mod optim;
pub mod par;
pub mod recsys;
pub mod seed;

pub use error::{Error, Result};
