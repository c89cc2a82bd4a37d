//! Suggestion service over the penwise engine: a JSON HTTP API, the
//! command-line front end and an HTTP translation client.

pub mod api;
pub mod cli;
pub mod engine;
pub mod error;
pub mod http;
pub mod translator;

pub use api::{Kind, Provenance, SuggestRequest, SuggestResponse, Suggestion};
pub use engine::{Engine, Models};
pub use error::{ApiError, ErrorBody};
