//! Distribution estimation for a population split into participants, who
//! share raw records, and non-participants, who only answer one
//! locally-private question about their class membership.

pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod ldp;
pub mod model;
pub mod pipeline;
pub mod protocol;
pub mod rng;
pub mod server;

pub use error::{Error, Result};
