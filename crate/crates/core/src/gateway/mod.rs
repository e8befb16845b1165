//! HTTP service wiring the classifier, recommender and ledger together.

pub mod config;
pub mod http;
pub mod provider;
pub mod service;

pub use config::{ConfigError, ServiceConfig};
pub use http::{router, serve, serve_on};
pub use provider::{CatalogProvider, ExternalTrack, StubProvider};
pub use service::{
    synthetic_image_classifier, ApiError, FeedbackResponse, RecommendationView, Service,
    ServiceParts,
};
