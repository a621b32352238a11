//! Two-stage patch-local SVD denoising.
//!
//! Every `s x s x C` patch is flattened to an `s^2 x C` matrix (rows are
//! pixels, columns are offsets) and decomposed as `U S V^T`. The spatial
//! coefficients `U S` are filtered, the patch is rebuilt against `V^T`, and
//! overlapping patches are blended with per-patch weights.
//!
//! The first stage zeroes coefficients below `3 sigma` and weights each patch
//! by `1 / (1 + N_p)`, `N_p` being the number of survivors. The second stage
//! shrinks coefficients by `rho = G^2 / (G^2 + sigma^2)`, where `G` is the
//! guide patch projected on the noisy patch's right basis, and weights each
//! patch by `1 / (1 + sum rho^2)`.

use faer::Mat;
use ndarray::Array3;
use rayon::prelude::*;

use crate::error::{BaldError, Result};
use crate::sequence::SpectralSequence;

/// Multiple of sigma below which hard thresholding zeroes a coefficient.
pub const HARD_THRESHOLD_FACTOR: f64 = 3.0;

pub const DEFAULT_PATCH_SIZE: usize = 8;

/// Patch geometry. Patch positions run from 0 in steps of `stride`; a final
/// position flush with the far edge is added when needed, so the tiling always
/// covers the image without padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchConfig {
    pub patch_size: usize,
    pub stride: usize,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self::new(DEFAULT_PATCH_SIZE)
    }
}

impl PatchConfig {
    /// Patch of side `patch_size` with 50% overlap.
    pub fn new(patch_size: usize) -> Self {
        Self {
            patch_size,
            stride: (patch_size / 2).max(1),
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        let s = self.patch_size;
        if s == 0 || self.stride == 0 || self.stride > s {
            return Err(BaldError::Config(format!(
                "need 1 <= stride <= patch size, got stride {} and patch {s}",
                self.stride
            )));
        }
        if s > height.min(width) {
            return Err(BaldError::Config(format!(
                "patch size {s} exceeds image size {height}x{width}"
            )));
        }
        Ok(())
    }

    /// Start coordinates along an axis of length `len`.
    pub fn positions(&self, len: usize) -> Vec<usize> {
        let last = len - self.patch_size;
        let mut out: Vec<usize> = (0..=last).step_by(self.stride).collect();
        if *out.last().unwrap() != last {
            out.push(last);
        }
        out
    }
}

/// Thin SVD of a flattened patch with a deterministic sign convention: the
/// largest-magnitude entry of every left vector is nonnegative.
#[derive(Debug, Clone)]
pub struct PatchDecomposition {
    /// `s^2 x r` left factors.
    pub u: Mat<f64>,
    /// `r` singular values, descending.
    pub singular_values: Vec<f64>,
    /// `C x r` right factors.
    pub v: Mat<f64>,
}

impl PatchDecomposition {
    pub fn new(patch: &Mat<f64>) -> Self {
        let svd = patch.thin_svd().expect("SVD of a finite patch converges");
        let (u, s, v) = (svd.U(), svd.S(), svd.V());
        let r = s.dim();

        let mut order: Vec<usize> = (0..r).collect();
        order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));

        let mut uo = Mat::zeros(u.nrows(), r);
        let mut vo = Mat::zeros(v.nrows(), r);
        let mut so = Vec::with_capacity(r);
        for (dst, &src) in order.iter().enumerate() {
            let pivot = (0..u.nrows())
                .map(|i| u[(i, src)])
                .fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
            let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
            for i in 0..u.nrows() {
                uo[(i, dst)] = sign * u[(i, src)];
            }
            for i in 0..v.nrows() {
                vo[(i, dst)] = sign * v[(i, src)];
            }
            so.push(s[src]);
        }
        Self {
            u: uo,
            singular_values: so,
            v: vo,
        }
    }

    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// Spatial coefficients `U S`.
    pub fn coefficients(&self) -> Mat<f64> {
        Mat::from_fn(self.u.nrows(), self.rank(), |i, j| {
            self.u[(i, j)] * self.singular_values[j]
        })
    }

    /// `coefficients * V^T`.
    pub fn reconstruct_from(&self, coefficients: &Mat<f64>) -> Mat<f64> {
        coefficients * self.v.transpose()
    }
}

/// Flattens the patch at `(top, left)` into an `s^2 x C` matrix, pixel rows
/// in row-major order.
pub fn extract_patch(frames: &Array3<f64>, top: usize, left: usize, s: usize) -> Mat<f64> {
    let c = frames.dim().0;
    Mat::from_fn(s * s, c, |i, k| frames[[k, top + i / s, left + i % s]])
}

struct PatchResult {
    top: usize,
    left: usize,
    block: Mat<f64>,
    weight: f64,
}

/// Runs `filter` over every patch and blends the results. Patch rows are
/// filtered in parallel but accumulated in a fixed order, so the output does
/// not depend on the number of worker threads.
fn aggregate<F>(seq: &SpectralSequence, cfg: &PatchConfig, filter: F) -> Result<SpectralSequence>
where
    F: Fn(usize, usize, &Mat<f64>) -> (Mat<f64>, f64) + Sync,
{
    let (c, h, w) = seq.frames().dim();
    cfg.validate(h, w)?;
    let s = cfg.patch_size;
    let rows = cfg.positions(h);
    let cols = cfg.positions(w);
    let frames = seq.frames();

    let mut acc = Array3::<f64>::zeros((c, h, w));
    let mut weights = ndarray::Array2::<f64>::zeros((h, w));

    for &top in &rows {
        let results: Vec<PatchResult> = cols
            .par_iter()
            .map(|&left| {
                let patch = extract_patch(frames, top, left, s);
                let (block, weight) = filter(top, left, &patch);
                PatchResult {
                    top,
                    left,
                    block,
                    weight,
                }
            })
            .collect();
        for res in results {
            for i in 0..s * s {
                let (r, col) = (res.top + i / s, res.left + i % s);
                weights[[r, col]] += res.weight;
                for k in 0..c {
                    acc[[k, r, col]] += res.weight * res.block[(i, k)];
                }
            }
        }
    }

    if let Some(((r, col), _)) = weights.indexed_iter().find(|(_, &wt)| wt.is_nan() || wt <= 0.0) {
        return Err(BaldError::Internal(format!(
            "pixel ({r}, {col}) received no aggregation weight"
        )));
    }
    for k in 0..c {
        for r in 0..h {
            for col in 0..w {
                acc[[k, r, col]] /= weights[[r, col]];
            }
        }
    }
    seq.with_frames(acc)
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(BaldError::Config(format!("sigma must be positive, got {sigma}")));
    }
    Ok(())
}

/// Hard-threshold stage. Produces the oracle used to guide the Wiener stage.
pub fn denoise_hard(seq: &SpectralSequence, sigma: f64, cfg: &PatchConfig) -> Result<SpectralSequence> {
    check_sigma(sigma)?;
    let threshold = HARD_THRESHOLD_FACTOR * sigma;
    aggregate(seq, cfg, |_, _, patch| {
        let dec = PatchDecomposition::new(patch);
        let mut coef = dec.coefficients();
        let mut survivors = 0usize;
        for j in 0..coef.ncols() {
            for i in 0..coef.nrows() {
                let x = &mut coef[(i, j)];
                if x.abs() < threshold {
                    *x = 0.0;
                } else {
                    survivors += 1;
                }
            }
        }
        (dec.reconstruct_from(&coef), 1.0 / (1.0 + survivors as f64))
    })
}

/// Wiener stage guided by `guide`, typically the output of [`denoise_hard`].
pub fn denoise_wiener(
    seq: &SpectralSequence,
    guide: &SpectralSequence,
    sigma: f64,
    cfg: &PatchConfig,
) -> Result<SpectralSequence> {
    check_sigma(sigma)?;
    if !seq.same_shape(guide) {
        return Err(BaldError::DimensionMismatch {
            expected: format!("{:?}", seq.frames().dim()),
            found: format!("{:?}", guide.frames().dim()),
        });
    }
    let s = cfg.patch_size;
    let var = sigma * sigma;
    aggregate(seq, cfg, |top, left, patch| {
        let dec = PatchDecomposition::new(patch);
        let mut coef = dec.coefficients();
        let guide_coef = extract_patch(guide.frames(), top, left, s) * &dec.v;
        let mut energy = 0.0;
        for j in 0..coef.ncols() {
            for i in 0..coef.nrows() {
                let g = guide_coef[(i, j)];
                let rho = g * g / (g * g + var);
                energy += rho * rho;
                coef[(i, j)] *= rho;
            }
        }
        (dec.reconstruct_from(&coef), 1.0 / (1.0 + energy))
    })
}
