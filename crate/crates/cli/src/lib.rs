//! HTTP job service and shared plumbing for the `vsdf` command-line tool.

pub mod api;
pub mod config;
pub mod error;
pub mod jobs;
pub mod model;
pub mod store;

pub use api::{router, AppState};
pub use config::ServiceConfig;
pub use error::ServiceError;
