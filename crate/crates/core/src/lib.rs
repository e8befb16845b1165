//! Emotion-aware music recommendation.

pub mod classifier;
pub mod corpus;
pub mod emotion;
pub mod gateway;
pub mod image;
pub mod ledger;
pub mod nn;
pub mod recommender;
pub mod synthetic;
pub mod text;
