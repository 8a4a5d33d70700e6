//! Network edges: the HTTP client for an external dialog inpainter and the
//! HTTP API for live interleaved sessions.

pub mod api;
pub mod inpainter;

pub use api::{router, serve};
pub use inpainter::{HttpInpainter, InpainterSettings};
