//! Image-quality metrics and ROI statistics.

use ndarray::Array2;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{BaldError, Result};
use crate::sequence::{Roi, SpectralSequence};

/// PSNR in dB over paired samples. `peak` defaults to the reference maximum.
/// Identical inputs give `f64::INFINITY`.
pub fn psnr_values(reference: &[f64], test: &[f64], peak: Option<f64>) -> Result<f64> {
    if reference.len() != test.len() {
        return Err(BaldError::DimensionMismatch {
            expected: format!("{} values", reference.len()),
            found: format!("{} values", test.len()),
        });
    }
    if reference.is_empty() {
        return Err(BaldError::Data("PSNR over an empty set".into()));
    }
    let peak = peak.unwrap_or_else(|| reference.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(BaldError::Config(format!("PSNR peak must be positive, got {peak}")));
    }
    let mse = reference.iter().zip(test).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / reference.len() as f64;
    if mse.is_nan() {
        return Err(BaldError::Data("PSNR inputs contain non-finite values".into()));
    }
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// PSNR between two sequences over the reference's foreground.
pub fn psnr(reference: &SpectralSequence, test: &SpectralSequence, peak: Option<f64>) -> Result<f64> {
    if !reference.same_shape(test) {
        return Err(BaldError::DimensionMismatch {
            expected: format!("{:?}", reference.frames().dim()),
            found: format!("{:?}", test.frames().dim()),
        });
    }
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for ((k_r_c, &x), &y) in reference.frames().indexed_iter().zip(test.frames().iter()) {
        if reference.is_foreground(k_r_c.1, k_r_c.2) {
            a.push(x);
            b.push(y);
        }
    }
    psnr_values(&a, &b, peak)
}

/// PSNR between two maps, optionally restricted to `mask`.
pub fn psnr_map(
    reference: &Array2<f64>,
    test: &Array2<f64>,
    mask: Option<&Array2<bool>>,
    peak: Option<f64>,
) -> Result<f64> {
    if reference.dim() != test.dim() || mask.is_some_and(|m| m.dim() != reference.dim()) {
        return Err(BaldError::DimensionMismatch {
            expected: format!("{:?}", reference.dim()),
            found: format!("{:?}", test.dim()),
        });
    }
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for ((rc, &x), &y) in reference.indexed_iter().zip(test.iter()) {
        if mask.is_none_or(|m| m[rc]) {
            a.push(x);
            b.push(y);
        }
    }
    psnr_values(&a, &b, peak)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WelchResult {
    pub t: f64,
    /// Welch-Satterthwaite degrees of freedom.
    pub df: f64,
    /// Two-sided p-value.
    pub p: f64,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Two-sided unequal-variance t-test.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(BaldError::Data(format!(
            "t-test needs at least 2 values per sample, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(BaldError::Data("t-test samples contain non-finite values".into()));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se2 = sa + sb;
    if se2 == 0.0 {
        return Err(BaldError::Data("t-test samples both have zero variance".into()));
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| BaldError::Internal(e.to_string()))?;
    let p = (2.0 * dist.cdf(-t.abs())).min(1.0);
    Ok(WelchResult { t, df, p })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoiStats {
    pub label: String,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1).
    pub std: f64,
    /// Quartiles by linear interpolation between order statistics.
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
}

/// Linear-interpolation quantile of sorted data (`h = (n - 1) p`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn roi_values(map: &Array2<f64>, roi: &Roi) -> Result<Vec<f64>> {
    let (h, w) = map.dim();
    roi.pixels()
        .iter()
        .map(|&(r, c)| {
            map.get((r, c)).copied().ok_or(BaldError::OutOfBounds {
                row: r,
                col: c,
                height: h,
                width: w,
            })
        })
        .collect()
}

pub fn roi_stats(map: &Array2<f64>, roi: &Roi) -> Result<RoiStats> {
    let mut v = roi_values(map, roi)?;
    if v.len() < 2 {
        return Err(BaldError::Data(format!(
            "ROI '{}' has {} pixel(s); statistics need at least 2",
            roi.label(),
            v.len()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(BaldError::Data(format!(
            "ROI '{}' contains non-finite values",
            roi.label()
        )));
    }
    let (mean, var) = mean_var(&v);
    v.sort_by(f64::total_cmp);
    Ok(RoiStats {
        label: roi.label().to_string(),
        n: v.len(),
        mean,
        std: var.sqrt(),
        q1: quantile_sorted(&v, 0.25),
        q2: quantile_sorted(&v, 0.5),
        q3: quantile_sorted(&v, 0.75),
    })
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(BaldError::Data(
            "Spearman needs two equal-length samples of size >= 2".into(),
        ));
    }
    let rx = ranks(x);
    let ry = ranks(y);
    let (mx, vx) = mean_var(&rx);
    let (my, vy) = mean_var(&ry);
    if vx == 0.0 || vy == 0.0 {
        return Err(BaldError::Data("Spearman undefined for constant input".into()));
    }
    let cov = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / (x.len() as f64 - 1.0);
    Ok(cov / (vx * vy).sqrt())
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn psnr_cases() {
        let x = [0.2, 0.5, 1.0, 0.7];
        assert_eq!(psnr_values(&x, &x, None).unwrap(), f64::INFINITY);
        // MSE = peak^2.
        assert!(psnr_values(&[0.0, 0.0], &[1.0, -1.0], Some(1.0)).unwrap().abs() < 1e-12);
        // MSE = 1e-4.
        let r = [0.5; 4];
        let t = [0.51, 0.49, 0.51, 0.49];
        assert!((psnr_values(&r, &t, Some(1.0)).unwrap() - 40.0).abs() < 1e-9);
        assert!(psnr_values(&r, &t[..3], None).is_err());
        assert!(psnr_values(&r, &t, Some(0.0)).is_err());
    }

    #[test]
    fn psnr_map_with_mask() {
        let r = Array2::from_elem((2, 2), 1.0);
        let mut t = r.clone();
        t[[1, 1]] = 0.0;
        let mut m = Array2::from_elem((2, 2), true);
        assert!(psnr_map(&r, &t, Some(&m), None).unwrap().is_finite());
        m[[1, 1]] = false;
        assert_eq!(psnr_map(&r, &t, Some(&m), None).unwrap(), f64::INFINITY);
    }

    proptest! {
        #[test]
        fn psnr_symmetric_with_fixed_peak(
            a in prop::collection::vec(0.0f64..1.0, 8),
            b in prop::collection::vec(0.0f64..1.0, 8),
        ) {
            let p1 = psnr_values(&a, &b, Some(1.0)).unwrap();
            let p2 = psnr_values(&b, &a, Some(1.0)).unwrap();
            prop_assert_eq!(p1, p2);
            prop_assert_eq!(psnr_values(&a, &a, Some(1.0)).unwrap(), f64::INFINITY);
        }

        #[test]
        fn welch_symmetric(
            a in prop::collection::vec(-5.0f64..5.0, 2..20),
            b in prop::collection::vec(-5.0f64..5.0, 2..20),
        ) {
            if let (Ok(x), Ok(y)) = (welch_t_test(&a, &b), welch_t_test(&b, &a)) {
                prop_assert!((x.p - y.p).abs() < 1e-12);
                prop_assert!((x.t + y.t).abs() < 1e-9 * x.t.abs().max(1.0));
                prop_assert!((0.0..=1.0).contains(&x.p));
            }
        }
    }

    #[test]
    fn welch_identical_samples() {
        let a = [1.0, 2.0, 3.5, 4.0];
        let r = welch_t_test(&a, &a).unwrap();
        assert_eq!(r.t, 0.0);
        assert_eq!(r.p, 1.0);
    }

    #[test]
    fn welch_degenerate() {
        assert!(welch_t_test(&[1.0], &[1.0, 2.0]).is_err());
        assert!(welch_t_test(&[1.0, 1.0], &[2.0, 2.0]).is_err());
    }

    #[test]
    fn welch_far_apart_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = Normal::new(0.0, 1.0).unwrap();
        let a: Vec<f64> = (0..500).map(|_| n.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..500).map(|_| 5.0 + n.sample(&mut rng)).collect();
        assert!(welch_t_test(&a, &b).unwrap().p < 1e-10);
    }

    #[test]
    fn welch_reference_values() {
        // scipy.stats.ttest_ind(a, b, equal_var=False)
        let a = [
            27.5, 21.0, 19.0, 23.6, 17.0, 17.9, 16.9, 20.1, 21.9, 22.6, 23.1, 19.6, 19.0, 21.7, 21.4,
        ];
        let b = [
            27.1, 22.0, 20.8, 23.4, 23.4, 23.5, 25.8, 22.0, 24.8, 20.2, 21.9, 22.1, 22.9, 20.5, 24.4,
        ];
        let r = welch_t_test(&a, &b).unwrap();
        assert!((r.t - -2.455356398286006).abs() < 1e-9, "{}", r.t);
        assert!((r.df - 24.988529290231416).abs() < 1e-9, "{}", r.df);
        assert!((r.p - 0.021378001462866985).abs() < 1e-9 * 0.0214, "{}", r.p);
    }

    #[test]
    fn roi_stats_cases() {
        let map = Array2::from_elem((3, 3), 2.5);
        let roi = Roi::new("all", (0..9).map(|i| (i / 3, i % 3)).collect(), 3, 3).unwrap();
        let s = roi_stats(&map, &roi).unwrap();
        assert_eq!((s.n, s.mean, s.std), (9, 2.5, 0.0));

        let single = Roi::new("one", vec![(1, 1)], 3, 3).unwrap();
        assert!(matches!(roi_stats(&map, &single), Err(BaldError::Data(_))));
    }

    #[test]
    fn quartiles_match_sorted_index_map() {
        let (h, w) = (5, 7);
        let map = Array2::from_shape_fn((h, w), |(r, c)| (r * w + c) as f64);
        let pixels: Vec<_> = (0..h * w).step_by(3).map(|i| (i / w, i % w)).collect();
        let mut sorted: Vec<f64> = pixels.iter().map(|&(r, c)| (r * w + c) as f64).collect();
        sorted.sort_by(f64::total_cmp);
        let roi = Roi::new("idx", pixels, h, w).unwrap();
        let s = roi_stats(&map, &roi).unwrap();
        // Brute force: n = 12 values 0, 3, ..., 33; h = 11 p.
        let brute = |p: f64| {
            let pos = 11.0 * p;
            let i = pos.floor() as usize;
            sorted[i] + (pos - i as f64) * (sorted[(i + 1).min(11)] - sorted[i])
        };
        assert_eq!(s.q1, brute(0.25));
        assert_eq!(s.q2, brute(0.5));
        assert_eq!(s.q3, brute(0.75));
        assert!(s.q1 <= s.q2 && s.q2 <= s.q3);
        assert_eq!(s.q2, 16.5);
    }

    #[test]
    fn spearman_cases() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[0.1, 0.5, 0.9]).unwrap(), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }
}
