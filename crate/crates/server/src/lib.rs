//! HTTP service and command-line front end over `metaforge-core`.

pub mod api;
pub mod cli;
pub mod error;
pub mod store;

pub use api::router;
pub use error::ApiError;
pub use store::Store;
