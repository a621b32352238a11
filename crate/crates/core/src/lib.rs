//! Blind adaptive local denoising (BALD) for multi-offset spectral image
//! sequences such as CEST z-spectra, plus the downstream analysis and
//! simulation tools used to evaluate it.

pub mod analysis;
pub mod error;
pub mod eval;
pub mod noise;
pub mod phantom;
pub mod pipeline;
pub mod sequence;
pub mod svd;

pub use error::{BaldError, Result};
pub use noise::{
    apply_ivst, apply_vst, build_vst, estimate_noise_curve, extract_noise_samples, NoiseCurve, NoiseSamples,
    VstTransform,
};
pub use sequence::{Roi, SpectralSequence};
pub use svd::{denoise_hard, denoise_wiener, PatchConfig, PatchDecomposition};
