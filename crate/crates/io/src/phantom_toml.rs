//! Phantom specifications as TOML documents.

use std::fs;
use std::path::Path;

use bald_core::phantom::PhantomSpec;

use crate::error::{IoError, Result};

/// Parses and validates a phantom spec. Missing keys take the defaults of
/// the built-in 3x3 grid.
pub fn parse_phantom_spec(text: &str) -> Result<PhantomSpec> {
    let spec: PhantomSpec = toml::from_str(text).map_err(|e| IoError::format("phantom spec", e.to_string()))?;
    spec.validate()?;
    Ok(spec)
}

pub fn phantom_spec_to_toml(spec: &PhantomSpec) -> String {
    toml::to_string(spec).expect("phantom spec serializes")
}

pub fn read_phantom_spec(path: &Path) -> Result<PhantomSpec> {
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    parse_phantom_spec(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let spec = PhantomSpec::default();
        let text = phantom_spec_to_toml(&spec);
        assert_eq!(parse_phantom_spec(&text).unwrap(), spec);
    }

    #[test]
    fn partial_document_uses_defaults() {
        let spec =
            parse_phantom_spec("height = 64\nwidth = 64\n[offsets]\nstart = -5.0\nstop = 5.0\nstep = 0.5\n").unwrap();
        assert_eq!(spec.offsets.offsets().unwrap().len(), 21);
        assert_eq!(spec.compartments.len(), 9);
    }

    #[test]
    fn rejections() {
        assert!(parse_phantom_spec("height = 0").is_err());
        assert!(parse_phantom_spec("unknown_key = 1").is_err());
        assert!(parse_phantom_spec("height = \"tall\"").is_err());
        assert!(parse_phantom_spec("[background]\nglucose = 1.0").is_err());
    }
}
