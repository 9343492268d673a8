//! Poisoning-attack laboratory for review-based recommender systems:
//! template selection, rating/review generation, surrogate and detector
//! models, the bi-level attack loop, victim models, and evaluation.

pub mod attack;
pub mod checkpoint;
pub mod data;
pub mod detector;
pub mod error;
pub mod nn;
pub mod ranking;
pub mod rating_gen;
pub mod review_gen;
pub mod rng;
pub mod surrogate;
pub mod config;
pub mod eval;
pub mod experiment;
pub mod templates;
pub mod victims;

pub use data::{Dataset, RatingScale};
pub use error::{Error, Result};
