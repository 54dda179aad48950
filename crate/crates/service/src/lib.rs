//! HTTP service and command-line front end for the perfsieve workbench.

pub mod api;
pub mod cli;
pub mod error;
pub mod jobs;
pub mod project;

pub use api::{router, AppState};
pub use error::{AppError, AppResult};
