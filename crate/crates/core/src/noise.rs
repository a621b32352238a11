//! Blind estimation of the intensity-dependent noise curve and the adaptive
//! variance-stabilizing transform built from it.
//!
//! Noise is extracted with a normalized second difference along the offset
//! axis, which annihilates any signal that is locally affine in the offset
//! index. The resulting `(intensity, noise)` pairs are binned per frame, each
//! frame yields an RMS-per-bin curve, and the frame curves are merged with a
//! median so that a few corrupted frames cannot drag the estimate.

use ndarray::Axis;
use rayon::prelude::*;

use crate::error::{BaldError, Result};
use crate::sequence::SpectralSequence;

/// Bins whose deviation falls below `DEVIATION_FLOOR_REL * L` are treated as
/// invalid and replaced by their nearest valid neighbour.
pub const DEVIATION_FLOOR_REL: f64 = 1e-6;

/// A frame contributes to a bin's median only when it put at least this many
/// samples there; the RMS of a handful of samples is too skewed to merge.
pub const MIN_FRAME_BIN_SAMPLES: usize = 16;

/// Default number of coarse intensity bins.
pub const DEFAULT_T1: usize = 10;
/// Default number of interpolated knots.
pub const DEFAULT_T2: usize = 100;

/// Noise samples of one interior frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSamples {
    pub frame: usize,
    /// `(noisy intensity, noise sample)` pairs, one per foreground pixel.
    pub pairs: Vec<(f64, f64)>,
}

/// Output of [`extract_noise_samples`].
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSamples {
    pub frames: Vec<FrameSamples>,
    /// Smallest foreground intensity over every frame (including the ends).
    pub intensity_min: f64,
    /// Largest foreground intensity over every frame (including the ends).
    pub intensity_max: f64,
}

impl NoiseSamples {
    pub fn len(&self) -> usize {
        self.frames.iter().map(|f| f.pairs.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every noise sample, frame by frame.
    pub fn noise_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.frames.iter().flat_map(|f| f.pairs.iter().map(|p| p.1))
    }
}

/// Which intensity a noise sample is keyed by when it is binned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SampleIntensity {
    /// The noisy centre value `u_k`. Because the noise sample contains
    /// `2 n_k`, binning by `u_k` selects on the noise itself and biases the
    /// per-bin RMS whenever the bin width is comparable to the noise.
    Center,
    /// The three-point mean `(u_{k-1} + u_k + u_{k+1}) / 3`. For locally
    /// affine signals and locally constant noise it is uncorrelated with (and,
    /// for Gaussian noise, independent of) the second difference, so binning
    /// does not bias the estimate.
    #[default]
    LocalMean,
}

/// Emits `(u_k, (2 u_k - u_{k-1} - u_{k+1}) / sqrt(6))` for every foreground
/// pixel and every interior offset `k`.
pub fn extract_noise_samples(seq: &SpectralSequence) -> Result<NoiseSamples> {
    extract_noise_samples_with(seq, SampleIntensity::Center)
}

/// Like [`extract_noise_samples`], keying each sample by `key`.
pub fn extract_noise_samples_with(seq: &SpectralSequence, key: SampleIntensity) -> Result<NoiseSamples> {
    let c = seq.n_offsets();
    if c < 3 {
        return Err(BaldError::Config(format!(
            "noise extraction needs at least 3 offsets, got {c}"
        )));
    }
    let (h, w) = (seq.height(), seq.width());
    let frames = seq.frames();

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for frame in frames.axis_iter(Axis(0)) {
        for ((r, col), &v) in frame.indexed_iter() {
            if seq.is_foreground(r, col) {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }

    let norm = 6f64.sqrt().recip();
    let per_frame: Vec<FrameSamples> = (1..c - 1)
        .into_par_iter()
        .map(|k| {
            let mut pairs = Vec::with_capacity(h * w);
            for r in 0..h {
                for col in 0..w {
                    if !seq.is_foreground(r, col) {
                        continue;
                    }
                    let (prev, u, next) = (frames[[k - 1, r, col]], frames[[k, r, col]], frames[[k + 1, r, col]]);
                    let d = 2.0 * u - prev - next;
                    let key = match key {
                        SampleIntensity::Center => u,
                        SampleIntensity::LocalMean => (prev + u + next) / 3.0,
                    };
                    pairs.push((key, d * norm));
                }
            }
            FrameSamples { frame: k, pairs }
        })
        .collect();

    Ok(NoiseSamples {
        frames: per_frame,
        intensity_min: lo,
        intensity_max: hi,
    })
}

/// Merged statistics of one coarse intensity bin.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBin {
    /// Bin centre intensity.
    pub center: f64,
    /// Median over contributing frames of the per-frame RMS, after floor
    /// handling.
    pub sigma: f64,
    /// Samples that fell into this bin, summed over all frames.
    pub count: usize,
    /// Number of frames that contributed to the median.
    pub frames: usize,
    /// `false` when the value was borrowed from a neighbouring bin.
    pub estimated: bool,
}

/// Piecewise-linear map from intensity to noise standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseCurve {
    knots: Vec<(f64, f64)>,
    intensity_min: f64,
    intensity_max: f64,
    t1: usize,
    bins: Vec<NoiseBin>,
}

impl NoiseCurve {
    /// Builds a curve from explicit knots, e.g. an imported CSV.
    ///
    /// Knot intensities must be strictly increasing and deviations positive.
    /// The coarse bin count is taken to equal the knot count.
    pub fn from_knots(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(BaldError::Config(format!(
                "a noise curve needs at least 2 knots, got {}",
                knots.len()
            )));
        }
        if knots.iter().any(|(u, g)| !u.is_finite() || !g.is_finite()) {
            return Err(BaldError::Data("noise curve knots must be finite".into()));
        }
        if !knots.windows(2).all(|w| w[1].0 > w[0].0) {
            return Err(BaldError::Data(
                "noise curve intensities must be strictly increasing".into(),
            ));
        }
        if knots.iter().any(|&(_, g)| g <= 0.0) {
            return Err(BaldError::Data("noise curve deviations must be positive".into()));
        }
        let intensity_min = knots[0].0;
        let intensity_max = knots[knots.len() - 1].0;
        let t1 = knots.len();
        Ok(Self {
            knots,
            intensity_min,
            intensity_max,
            t1,
            bins: Vec::new(),
        })
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    pub fn intensity_min(&self) -> f64 {
        self.intensity_min
    }

    pub fn intensity_max(&self) -> f64 {
        self.intensity_max
    }

    /// Intensity range `L = max - min`.
    pub fn range(&self) -> f64 {
        self.intensity_max - self.intensity_min
    }

    pub fn t1(&self) -> usize {
        self.t1
    }

    pub fn t2(&self) -> usize {
        self.knots.len()
    }

    /// Coarse bins the curve was interpolated from; empty for imported curves.
    pub fn bins(&self) -> &[NoiseBin] {
        &self.bins
    }

    /// Mean of the knot deviations: the noise level after stabilization.
    pub fn sigma_target(&self) -> f64 {
        self.knots.iter().map(|k| k.1).sum::<f64>() / self.knots.len() as f64
    }

    /// Noise deviation at `u`, held flat outside the knot range.
    pub fn eval(&self, u: f64) -> f64 {
        let (xs, ys): (Vec<f64>, Vec<f64>) = self.knots.iter().copied().unzip();
        interp_clamped(&xs, &ys, u).0
    }
}

/// Estimates the noise curve from extracted samples.
///
/// Each frame's intensities are binned into `t1` equal-width bins over
/// `[intensity_min, intensity_max]` (half-open bins, last bin closed). The
/// per-bin RMS of each frame is merged across frames by the median, skipping
/// frames that put fewer than [`MIN_FRAME_BIN_SAMPLES`] samples in the bin. The merged bin-centre values are linearly
/// interpolated onto `t2` evenly spaced knots spanning the full range.
pub fn estimate_noise_curve(samples: &NoiseSamples, t1: usize, t2: usize) -> Result<NoiseCurve> {
    estimate_noise_curve_with(samples, t1, t2, MIN_FRAME_BIN_SAMPLES)
}

/// [`estimate_noise_curve`] with an explicit per-frame minimum bin population.
pub fn estimate_noise_curve_with(
    samples: &NoiseSamples,
    t1: usize,
    t2: usize,
    min_frame_samples: usize,
) -> Result<NoiseCurve> {
    if t1 < 2 {
        return Err(BaldError::Config(format!("t1 must be at least 2, got {t1}")));
    }
    if t2 < t1 {
        return Err(BaldError::Config(format!("t2 ({t2}) must be at least t1 ({t1})")));
    }
    if samples.is_empty() {
        return Err(BaldError::Estimation("no frame contributed noise samples".into()));
    }
    let lo = samples.intensity_min;
    let hi = samples.intensity_max;
    let range = hi - lo;
    if !(range > 0.0 && range.is_finite()) {
        return Err(BaldError::Estimation(format!(
            "degenerate intensity range [{lo}, {hi}]"
        )));
    }

    // Per-frame (sum of squares, count) for each bin.
    let per_frame: Vec<Vec<(f64, usize)>> = samples
        .frames
        .par_iter()
        .map(|f| {
            let mut acc = vec![(0.0, 0usize); t1];
            for &(u, n) in &f.pairs {
                let b = bin_index(u, lo, range, t1);
                acc[b].0 += n * n;
                acc[b].1 += 1;
            }
            acc
        })
        .collect();

    let floor = DEVIATION_FLOOR_REL * range;
    let mut merged: Vec<Option<f64>> = Vec::with_capacity(t1);
    let mut bins = Vec::with_capacity(t1);
    for b in 0..t1 {
        let mut rms: Vec<f64> = per_frame
            .iter()
            .filter(|acc| acc[b].1 > 0 && acc[b].1 >= min_frame_samples)
            .map(|acc| (acc[b].0 / acc[b].1 as f64).sqrt())
            .collect();
        let count = per_frame.iter().map(|acc| acc[b].1).sum();
        let value = median(&mut rms).filter(|&g| g >= floor);
        merged.push(value);
        bins.push(NoiseBin {
            center: lo + (b as f64 + 0.5) * range / t1 as f64,
            sigma: 0.0,
            count,
            frames: rms.len(),
            estimated: value.is_some(),
        });
    }

    if bins.iter().all(|b| b.count == 0) {
        return Err(BaldError::Estimation("all intensity bins are empty".into()));
    }

    let filled = fill_from_nearest(&merged, floor);
    for (bin, g) in bins.iter_mut().zip(&filled) {
        bin.sigma = *g;
    }

    let centers: Vec<f64> = bins.iter().map(|b| b.center).collect();
    let knots = (0..t2)
        .map(|i| {
            let u = if i + 1 == t2 {
                hi
            } else {
                lo + range * i as f64 / (t2 - 1) as f64
            };
            (u, interp_clamped(&centers, &filled, u).0)
        })
        .collect();

    Ok(NoiseCurve {
        knots,
        intensity_min: lo,
        intensity_max: hi,
        t1,
        bins,
    })
}

#[inline]
fn bin_index(u: f64, lo: f64, range: f64, t1: usize) -> usize {
    let pos = (u - lo) / range * t1 as f64;
    if pos <= 0.0 {
        0
    } else {
        (pos as usize).min(t1 - 1)
    }
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Replaces missing entries by the nearest present one (lower index wins
/// ties). With nothing present every entry becomes `floor`.
fn fill_from_nearest(values: &[Option<f64>], floor: f64) -> Vec<f64> {
    let present: Vec<usize> = (0..values.len()).filter(|&i| values[i].is_some()).collect();
    if present.is_empty() {
        return vec![floor; values.len()];
    }
    (0..values.len())
        .map(|i| match values[i] {
            Some(v) => v,
            None => {
                let j = *present
                    .iter()
                    .min_by_key(|&&j| (j as isize - i as isize).unsigned_abs())
                    .unwrap();
                values[j].unwrap()
            }
        })
        .collect()
}

/// Linear interpolation on increasing `xs`, clamped to the end values.
/// The flag reports whether `x` fell outside `[xs[0], xs[n-1]]`.
pub(crate) fn interp_clamped(xs: &[f64], ys: &[f64], x: f64) -> (f64, bool) {
    let n = xs.len();
    if x <= xs[0] {
        return (ys[0], x < xs[0]);
    }
    if x >= xs[n - 1] {
        return (ys[n - 1], x > xs[n - 1]);
    }
    let j = xs.partition_point(|&v| v <= x);
    let (x0, x1) = (xs[j - 1], xs[j]);
    let (y0, y1) = (ys[j - 1], ys[j]);
    let t = (x - x0) / (x1 - x0);
    (y0 + t * (y1 - y0), false)
}

/// Monotone forward/inverse lookup pair plus the target deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct VstTransform {
    forward_x: Vec<f64>,
    forward_y: Vec<f64>,
    sigma_target: f64,
}

impl VstTransform {
    pub fn sigma_target(&self) -> f64 {
        self.sigma_target
    }

    /// `(u, f(u))` knots.
    pub fn forward_knots(&self) -> Vec<(f64, f64)> {
        self.forward_x
            .iter()
            .copied()
            .zip(self.forward_y.iter().copied())
            .collect()
    }

    /// `(v, f^-1(v))` knots; the forward table with coordinates swapped.
    pub fn inverse_knots(&self) -> Vec<(f64, f64)> {
        self.forward_y
            .iter()
            .copied()
            .zip(self.forward_x.iter().copied())
            .collect()
    }

    /// `f(u)` with clamping; the flag is set when `u` was out of range.
    pub fn forward(&self, u: f64) -> (f64, bool) {
        interp_clamped(&self.forward_x, &self.forward_y, u)
    }

    /// `f^-1(v)` with clamping; the flag is set when `v` was out of range.
    pub fn inverse(&self, v: f64) -> (f64, bool) {
        interp_clamped(&self.forward_y, &self.forward_x, v)
    }
}

/// Builds `f(u) = sigma * integral_{min}^{u} dt / g(t)` by cumulative
/// trapezoidal integration over the curve's knots, with `sigma` the mean
/// knot deviation.
pub fn build_vst(curve: &NoiseCurve) -> VstTransform {
    let sigma = curve.sigma_target();
    let knots = curve.knots();
    let forward_x: Vec<f64> = knots.iter().map(|k| k.0).collect();
    let mut forward_y = Vec::with_capacity(knots.len());
    let mut acc = 0.0;
    forward_y.push(acc);
    for w in knots.windows(2) {
        let (u0, g0) = w[0];
        let (u1, g1) = w[1];
        acc += 0.5 * (sigma / g0 + sigma / g1) * (u1 - u0);
        forward_y.push(acc);
    }
    VstTransform {
        forward_x,
        forward_y,
        sigma_target: sigma,
    }
}

/// A transformed sequence plus the number of clamped foreground values.
#[derive(Debug, Clone, PartialEq)]
pub struct Transformed {
    pub sequence: SpectralSequence,
    pub clamped: usize,
}

/// Applies `f` to every foreground pixel; background pixels pass through.
pub fn apply_vst(seq: &SpectralSequence, t: &VstTransform) -> Transformed {
    map_foreground(seq, |u| t.forward(u))
}

/// Applies `f^-1` to every foreground pixel; background pixels pass through.
pub fn apply_ivst(seq: &SpectralSequence, t: &VstTransform) -> Transformed {
    map_foreground(seq, |v| t.inverse(v))
}

fn map_foreground(seq: &SpectralSequence, f: impl Fn(f64) -> (f64, bool) + Sync) -> Transformed {
    let mut frames = seq.frames().clone();
    let clamped: usize = frames
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .map(|mut frame| {
            let mut n = 0;
            for ((r, c), v) in frame.indexed_iter_mut() {
                if seq.is_foreground(r, c) {
                    let (y, out) = f(*v);
                    *v = y;
                    n += out as usize;
                }
            }
            n
        })
        .sum();
    Transformed {
        sequence: seq.with_frames(frames).expect("mapping preserves dimensions"),
        clamped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array2, Array3};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn seq_from(frames: Array3<f64>) -> SpectralSequence {
        let c = frames.dim().0;
        SpectralSequence::new((0..c).map(|k| k as f64).collect(), frames).unwrap()
    }

    fn constant_plus_noise(level: f64, std: f64, dims: (usize, usize, usize), seed: u64) -> SpectralSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, std).unwrap();
        seq_from(Array3::from_shape_simple_fn(dims, || level + normal.sample(&mut rng)))
    }

    #[test]
    fn affine_spectra_give_exact_zero_noise() {
        let frames = Array3::from_shape_fn((9, 4, 5), |(k, r, c)| {
            0.25 * r as f64 + 0.5 * c as f64 + (1.0 + r as f64) * k as f64
        });
        let s = extract_noise_samples(&seq_from(frames)).unwrap();
        assert_eq!(s.frames.len(), 7);
        assert_eq!(s.frames[0].frame, 1);
        assert!(s.noise_values().all(|n| n == 0.0));
    }

    #[test]
    fn two_offsets_is_a_config_error() {
        let seq = seq_from(Array3::zeros((2, 3, 3)));
        assert!(matches!(extract_noise_samples(&seq), Err(BaldError::Config(_))));
    }

    #[test]
    fn off_mask_pixels_are_excluded() {
        let mut mask = Array2::from_elem((2, 2), false);
        mask[[0, 1]] = true;
        let seq = seq_from(Array3::ones((5, 2, 2))).with_mask(mask).unwrap();
        let s = extract_noise_samples(&seq).unwrap();
        assert!(s.frames.iter().all(|f| f.pairs.len() == 1));
    }

    #[test]
    fn gaussian_noise_std_is_recovered() {
        // 64x64x31 constant field with unit-free noise 0.05, ten seeds.
        for seed in 0..10 {
            let seq = constant_plus_noise(0.7, 0.05, (31, 64, 64), seed);
            let s = extract_noise_samples(&seq).unwrap();
            let n = s.len() as f64;
            let mean = s.noise_values().sum::<f64>() / n;
            let var = s.noise_values().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let std = var.sqrt();
            assert!((std - 0.05).abs() < 0.05 * 0.05, "seed {seed}: {std}");
        }
    }

    #[test]
    fn constant_curve_is_recovered() {
        let seq = constant_plus_noise(0.5, 0.05, (31, 64, 64), 11);
        let samples = extract_noise_samples_with(&seq, SampleIntensity::LocalMean).unwrap();
        let curve = estimate_noise_curve(&samples, 10, 100).unwrap();
        assert_eq!(curve.t2(), 100);
        assert_eq!(curve.t1(), 10);
        for &(_, g) in curve.knots() {
            assert!((0.045..=0.055).contains(&g), "{g}");
        }
    }

    #[test]
    fn centre_keyed_binning_is_biased_on_a_flat_signal() {
        // On a constant signal the noisy centre value sorts samples by their
        // own noise, so the outer bins see inflated RMS.
        let seq = constant_plus_noise(0.5, 0.05, (31, 64, 64), 11);
        let curve = estimate_noise_curve(&extract_noise_samples(&seq).unwrap(), 10, 100).unwrap();
        let first = curve.knots()[0].1;
        assert!(first > 0.08, "{first}");
    }

    #[test]
    fn local_mean_key_is_the_three_point_average() {
        let frames = Array3::from_shape_vec((3, 1, 1), vec![0.1, 0.5, 0.3]).unwrap();
        let s = extract_noise_samples_with(&seq_from(frames), SampleIntensity::LocalMean).unwrap();
        let (key, n) = s.frames[0].pairs[0];
        assert!((key - 0.3).abs() < 1e-15);
        assert!((n - 0.6 / 6f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn median_ignores_an_outlier_frame() {
        let seq = constant_plus_noise(0.5, 0.05, (21, 48, 48), 3);
        let clean = extract_noise_samples(&seq).unwrap();
        let mut corrupted = clean.clone();
        for p in &mut corrupted.frames[7].pairs {
            p.1 *= 10.0;
        }
        let a = estimate_noise_curve(&clean, 10, 100).unwrap();
        let b = estimate_noise_curve(&corrupted, 10, 100).unwrap();
        for (ka, kb) in a.knots().iter().zip(b.knots()) {
            assert!((ka.1 - kb.1).abs() < 0.05 * ka.1, "{ka:?} vs {kb:?}");
        }
    }

    #[test]
    fn config_and_estimation_errors() {
        let samples = NoiseSamples {
            frames: vec![FrameSamples {
                frame: 1,
                pairs: vec![(0.0, 0.1), (1.0, 0.1)],
            }],
            intensity_min: 0.0,
            intensity_max: 1.0,
        };
        assert!(matches!(
            estimate_noise_curve(&samples, 1, 10),
            Err(BaldError::Config(_))
        ));
        assert!(matches!(
            estimate_noise_curve(&samples, 10, 5),
            Err(BaldError::Config(_))
        ));
        let empty = NoiseSamples {
            frames: vec![],
            ..samples
        };
        assert!(matches!(
            estimate_noise_curve(&empty, 2, 2),
            Err(BaldError::Estimation(_))
        ));
    }

    #[test]
    fn empty_bins_borrow_from_nearest_neighbour() {
        // Samples only at the two ends of the range.
        let samples = NoiseSamples {
            frames: vec![FrameSamples {
                frame: 1,
                pairs: vec![(0.0, 0.1), (0.0, -0.1), (1.0, 0.3), (1.0, -0.3)],
            }],
            intensity_min: 0.0,
            intensity_max: 1.0,
        };
        let curve = estimate_noise_curve_with(&samples, 4, 4, 1).unwrap();
        let sig: Vec<f64> = curve.bins().iter().map(|b| b.sigma).collect();
        assert!((sig[0] - 0.1).abs() < 1e-12 && (sig[1] - 0.1).abs() < 1e-12);
        assert!((sig[2] - 0.3).abs() < 1e-12 && (sig[3] - 0.3).abs() < 1e-12);
        assert!(!curve.bins()[1].estimated);
        // The last bin is closed, so u = max counts there.
        assert_eq!(curve.bins()[3].count, 2);
    }

    #[test]
    fn all_zero_noise_falls_back_to_the_floor() {
        let frames = Array3::from_shape_fn((6, 3, 3), |(k, r, _)| r as f64 + 0.1 * k as f64);
        let curve = estimate_noise_curve(&extract_noise_samples(&seq_from(frames)).unwrap(), 2, 3).unwrap();
        let floor = DEVIATION_FLOOR_REL * curve.range();
        assert!(curve.knots().iter().all(|k| k.1 == floor));
    }

    #[test]
    fn sigma_target_is_knot_mean() {
        let curve = NoiseCurve::from_knots(vec![(0.0, 0.02), (0.5, 0.04), (1.0, 0.06)]).unwrap();
        assert!((curve.sigma_target() - 0.04).abs() < 1e-15);
    }

    #[test]
    fn constant_curve_gives_unit_slope_transform() {
        let knots = (0..50).map(|i| (0.2 + i as f64 * 0.02, 0.07)).collect();
        let t = build_vst(&NoiseCurve::from_knots(knots).unwrap());
        for (u, f) in t.forward_knots() {
            assert!((f - (u - 0.2)).abs() < 1e-12);
        }
        let seq = seq_from(Array3::from_shape_fn((3, 2, 2), |(k, r, c)| {
            0.3 + 0.1 * (k + r + c) as f64
        }));
        let out = apply_vst(&seq, &t);
        assert_eq!(out.clamped, 0);
        for (a, b) in out.sequence.frames().iter().zip(seq.frames()) {
            assert!((a - (b - 0.2)).abs() < 1e-12);
        }
    }

    #[test]
    fn clamping_is_counted() {
        let t = build_vst(&NoiseCurve::from_knots(vec![(0.0, 0.1), (1.0, 0.2)]).unwrap());
        let seq = seq_from(Array3::from_shape_vec((3, 1, 1), vec![-0.5, 0.5, 1.5]).unwrap());
        let out = apply_vst(&seq, &t);
        assert_eq!(out.clamped, 2);
        let f = out.sequence.frames();
        assert_eq!(f[[0, 0, 0]], 0.0);
        assert_eq!(f[[2, 0, 0]], t.forward(1.0).0);
    }

    #[test]
    fn from_knots_validation() {
        assert!(NoiseCurve::from_knots(vec![(0.0, 1.0)]).is_err());
        assert!(NoiseCurve::from_knots(vec![(0.0, 1.0), (0.0, 1.0)]).is_err());
        assert!(NoiseCurve::from_knots(vec![(0.0, 1.0), (1.0, 0.0)]).is_err());
        assert!(NoiseCurve::from_knots(vec![(0.0, 1.0), (f64::NAN, 1.0)]).is_err());
    }
}
