pub mod ensemble;
pub mod error;
pub mod imgcore;
pub mod masksel;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod postproc;
pub mod student;
pub mod videopca;

pub use error::{Error, Result};
