//! Command-line interface and HTTP service for the promptloom engine.

pub mod cli;
pub mod errors;
pub mod provider;
pub mod service;
pub mod view;

pub use errors::{AppError, ErrorBody, ERROR_TABLE};
