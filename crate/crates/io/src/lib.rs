//! File formats used by the `bald` command-line tool.
//!
//! Every parser here takes untrusted bytes or text and returns an error
//! rather than panicking; each has a fuzz target under `fuzz/`.

pub mod container;
pub mod csv_io;
pub mod error;
pub mod labels;
pub mod nifti;
pub mod phantom_toml;

pub use container::{read_container, write_container, Container, Payload, Provenance, Sidecar};
pub use error::{IoError, Result};
pub use labels::LabelMap;
