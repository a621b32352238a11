//! End-to-end denoising: estimate the noise curve, stabilize, denoise, and
//! invert the stabilization.
//!
//! Any denoiser can be run inside the stabilized domain through
//! [`wrap_denoiser`]; the two-stage SVD filter is just one [`Denoiser`].

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{BaldError, Result};
use crate::noise::{
    apply_ivst, apply_vst, build_vst, estimate_noise_curve, extract_noise_samples_with, NoiseCurve, SampleIntensity,
    DEFAULT_T1, DEFAULT_T2,
};
use crate::sequence::SpectralSequence;
use crate::svd::{denoise_hard, denoise_wiener, PatchConfig, DEFAULT_PATCH_SIZE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaldParams {
    pub t1: usize,
    pub t2: usize,
    pub patch_size: usize,
    /// Defaults to `patch_size / 2`.
    pub stride: Option<usize>,
    #[serde(skip)]
    pub sample_intensity: SampleIntensity,
}

impl Default for BaldParams {
    fn default() -> Self {
        Self {
            t1: DEFAULT_T1,
            t2: DEFAULT_T2,
            patch_size: DEFAULT_PATCH_SIZE,
            stride: None,
            sample_intensity: SampleIntensity::default(),
        }
    }
}

impl BaldParams {
    pub fn patch_config(&self) -> PatchConfig {
        let cfg = PatchConfig::new(self.patch_size);
        match self.stride {
            Some(s) => cfg.with_stride(s),
            None => cfg,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t1 < 2 {
            return Err(BaldError::Config(format!("t1 must be at least 2, got {}", self.t1)));
        }
        if self.t2 < self.t1 {
            return Err(BaldError::Config(format!(
                "t2 ({}) must be at least t1 ({})",
                self.t2, self.t1
            )));
        }
        if self.patch_size == 0 || self.stride == Some(0) {
            return Err(BaldError::Config("patch size and stride must be positive".into()));
        }
        Ok(())
    }
}

/// A denoiser run in the stabilized domain, where the noise is roughly
/// Gaussian with deviation `sigma`. Must return a sequence of the same shape.
pub trait Denoiser: Sync {
    fn denoise(&self, seq: &SpectralSequence, sigma: f64) -> Result<SpectralSequence>;
}

impl<F> Denoiser for F
where
    F: Fn(&SpectralSequence, f64) -> Result<SpectralSequence> + Sync,
{
    fn denoise(&self, seq: &SpectralSequence, sigma: f64) -> Result<SpectralSequence> {
        self(seq, sigma)
    }
}

/// Hard thresholding followed by guided Wiener shrinkage, both at `sigma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoStageSvd {
    pub config: PatchConfig,
}

impl Denoiser for TwoStageSvd {
    fn denoise(&self, seq: &SpectralSequence, sigma: f64) -> Result<SpectralSequence> {
        let oracle = denoise_hard(seq, sigma, &self.config)?;
        denoise_wiener(seq, &oracle, sigma, &self.config)
    }
}

/// Per-frame spatial Gaussian blur with a fixed width; ignores `sigma`.
/// A simple baseline for checking what stabilization does for a denoiser
/// that knows nothing about the noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianBlur {
    /// Kernel standard deviation in pixels.
    pub sigma_px: f64,
}

impl GaussianBlur {
    fn kernel(&self) -> Vec<f64> {
        let radius = (3.0 * self.sigma_px).ceil().max(1.0) as isize;
        let k: Vec<f64> = (-radius..=radius)
            .map(|i| (-(i * i) as f64 / (2.0 * self.sigma_px * self.sigma_px)).exp())
            .collect();
        let total: f64 = k.iter().sum();
        k.into_iter().map(|v| v / total).collect()
    }

    pub fn blur_frame(&self, frame: &Array2<f64>) -> Array2<f64> {
        let k = self.kernel();
        let r = (k.len() / 2) as isize;
        let (h, w) = frame.dim();
        // Mirror (half-sample symmetric) boundary.
        let reflect = |i: isize, n: usize| -> usize {
            let n = n as isize;
            let mut i = i;
            loop {
                if i < 0 {
                    i = -i - 1;
                } else if i >= n {
                    i = 2 * n - i - 1;
                } else {
                    return i as usize;
                }
            }
        };
        let rows: Array2<f64> = Array2::from_shape_fn((h, w), |(y, x)| {
            k.iter()
                .enumerate()
                .map(|(j, kv)| kv * frame[[y, reflect(x as isize + j as isize - r, w)]])
                .sum()
        });
        Array2::from_shape_fn((h, w), |(y, x)| {
            k.iter()
                .enumerate()
                .map(|(j, kv)| kv * rows[[reflect(y as isize + j as isize - r, h), x]])
                .sum()
        })
    }
}

impl Denoiser for GaussianBlur {
    fn denoise(&self, seq: &SpectralSequence, _sigma: f64) -> Result<SpectralSequence> {
        if !(self.sigma_px > 0.0 && self.sigma_px.is_finite()) {
            return Err(BaldError::Config(format!(
                "blur width must be positive, got {}",
                self.sigma_px
            )));
        }
        let mut frames = seq.frames().clone();
        frames.axis_iter_mut(Axis(0)).into_par_iter().for_each(|mut f| {
            let out = self.blur_frame(&f.to_owned());
            f.assign(&out);
        });
        seq.with_frames(frames)
    }
}

/// Output of a stabilized denoising run.
#[derive(Debug, Clone, PartialEq)]
pub struct BaldOutput {
    pub sequence: SpectralSequence,
    pub curve: NoiseCurve,
    /// Foreground values clamped by the forward transform.
    pub clamped_forward: usize,
    /// Foreground values clamped by the inverse transform.
    pub clamped_inverse: usize,
}

/// Estimates the noise curve of `seq`. Only foreground pixels contribute.
pub fn estimate_curve(seq: &SpectralSequence, params: &BaldParams) -> Result<NoiseCurve> {
    params.validate()?;
    let samples = extract_noise_samples_with(seq, params.sample_intensity)?;
    estimate_noise_curve(&samples, params.t1, params.t2)
}

/// Runs `denoiser` between the forward and inverse transforms built from
/// `curve`, with `sigma` the curve's target deviation. Background pixels are
/// not transformed.
pub fn wrap_denoiser_with_curve(
    seq: &SpectralSequence,
    curve: &NoiseCurve,
    denoiser: &dyn Denoiser,
) -> Result<BaldOutput> {
    let vst = build_vst(curve);
    let forward = apply_vst(seq, &vst);
    let denoised = denoiser.denoise(&forward.sequence, vst.sigma_target())?;
    if denoised.frames().dim() != seq.frames().dim() || denoised.offsets_ppm() != seq.offsets_ppm() {
        return Err(BaldError::Contract(format!(
            "denoiser changed the sequence shape from {:?} to {:?}",
            seq.frames().dim(),
            denoised.frames().dim()
        )));
    }
    // Keep the caller's metadata; only the frames come from the denoiser.
    let denoised = forward.sequence.with_frames(denoised.into_frames())?;
    let inverse = apply_ivst(&denoised, &vst);
    Ok(BaldOutput {
        sequence: seq.with_frames(inverse.sequence.into_frames())?,
        curve: curve.clone(),
        clamped_forward: forward.clamped,
        clamped_inverse: inverse.clamped,
    })
}

/// Estimates the curve from `seq`, then runs `denoiser` in the stabilized
/// domain.
pub fn wrap_denoiser(seq: &SpectralSequence, params: &BaldParams, denoiser: &dyn Denoiser) -> Result<BaldOutput> {
    let curve = estimate_curve(seq, params)?;
    wrap_denoiser_with_curve(seq, &curve, denoiser)
}

/// The full pipeline with the two-stage SVD denoiser.
pub fn bald(seq: &SpectralSequence, params: &BaldParams) -> Result<BaldOutput> {
    params.validate()?;
    let cfg = params.patch_config();
    cfg.validate(seq.height(), seq.width())?;
    wrap_denoiser(seq, params, &TwoStageSvd { config: cfg })
}

/// The full pipeline with a caller-supplied curve instead of an estimated one.
pub fn bald_with_curve(seq: &SpectralSequence, curve: &NoiseCurve, params: &BaldParams) -> Result<BaldOutput> {
    params.validate()?;
    let cfg = params.patch_config();
    cfg.validate(seq.height(), seq.width())?;
    wrap_denoiser_with_curve(seq, curve, &TwoStageSvd { config: cfg })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::psnr;
    use crate::phantom::{add_rician_noise, generate_phantom, OffsetGrid, PhantomSpec};
    use ndarray::Array3;

    fn small_phantom() -> SpectralSequence {
        let mut spec = PhantomSpec {
            height: 32,
            width: 32,
            offsets: OffsetGrid {
                start: -8.0,
                stop: 8.0,
                step: 0.5,
            },
            ..Default::default()
        };
        for c in &mut spec.compartments {
            c.row *= 0.5;
            c.col *= 0.5;
            c.radius = 4.0;
        }
        generate_phantom(&spec).unwrap()
    }

    #[test]
    fn identity_denoiser_round_trips() {
        let clean = small_phantom();
        let noisy = add_rician_noise(&clean, 0.03, 1).unwrap();
        let identity = |s: &SpectralSequence, _: f64| Ok(s.clone());
        let out = wrap_denoiser(&noisy, &BaldParams::default(), &identity).unwrap();
        let range = out.curve.range();
        for (a, b) in out.sequence.frames().iter().zip(noisy.frames()) {
            assert!((a - b).abs() <= 1e-6 * range, "{a} vs {b}");
        }
        assert_eq!(out.clamped_forward, 0);
    }

    #[test]
    fn built_in_stack_matches_bald() {
        let noisy = add_rician_noise(&small_phantom(), 0.05, 2).unwrap();
        let params = BaldParams::default();
        let a = bald(&noisy, &params).unwrap();
        let stack = TwoStageSvd {
            config: params.patch_config(),
        };
        let b = wrap_denoiser(&noisy, &params, &stack).unwrap();
        assert_eq!(a, b);
        // Deterministic: same bits twice.
        assert_eq!(a, bald(&noisy, &params).unwrap());
    }

    #[test]
    fn shape_changing_denoiser_is_rejected() {
        let noisy = add_rician_noise(&small_phantom(), 0.05, 3).unwrap();
        let cropping = |s: &SpectralSequence, _: f64| {
            let f = s.frames().slice(ndarray::s![.., 1.., ..]).to_owned();
            SpectralSequence::new(s.offsets_ppm().to_vec(), f)
        };
        assert!(matches!(
            wrap_denoiser(&noisy, &BaldParams::default(), &cropping),
            Err(BaldError::Contract(_))
        ));
    }

    #[test]
    fn improves_over_noisy_input() {
        let clean = small_phantom();
        let noisy = add_rician_noise(&clean, 0.05, 4).unwrap();
        let out = bald(&noisy, &BaldParams::default()).unwrap();
        let before = psnr(&clean, &noisy, Some(1.0)).unwrap();
        let after = psnr(&clean, &out.sequence, Some(1.0)).unwrap();
        assert!(after > before + 1.0, "{before} -> {after}");
    }

    #[test]
    fn noiseless_input_is_nearly_unchanged() {
        let clean = small_phantom();
        let out = bald(&clean, &BaldParams::default()).unwrap();
        let p = psnr(&clean, &out.sequence, Some(1.0)).unwrap();
        assert!(p >= 60.0, "{p}");
    }

    #[test]
    fn parameter_validation() {
        let seq = small_phantom();
        let bad_t1 = BaldParams {
            t1: 1,
            ..Default::default()
        };
        assert!(matches!(bald(&seq, &bad_t1), Err(BaldError::Config(_))));
        let big_patch = BaldParams {
            patch_size: 64,
            ..Default::default()
        };
        assert!(bald(&seq, &big_patch).is_err());
        let two = SpectralSequence::new(vec![0.0, 1.0], Array3::ones((2, 8, 8))).unwrap();
        assert!(bald(&two, &BaldParams::default()).is_err());
    }

    #[test]
    fn blur_preserves_constants() {
        let seq = SpectralSequence::new(vec![0.0, 1.0, 2.0], Array3::from_elem((3, 9, 7), 0.3)).unwrap();
        let out = GaussianBlur { sigma_px: 1.2 }.denoise(&seq, 0.1).unwrap();
        for v in out.frames() {
            assert!((v - 0.3).abs() < 1e-12);
        }
    }
}
