//! Magnetization-transfer-ratio asymmetry and APT-weighted maps.

use ndarray::Array2;

use crate::error::{BaldError, Result};
use crate::sequence::SpectralSequence;

/// Amide proton offset in ppm.
pub const APT_OFFSET_PPM: f64 = 3.5;

/// Linearly interpolates the spectrum at `x`. Offsets may be ascending or
/// descending.
pub fn interpolate(offsets: &[f64], z: &[f64], x: f64) -> Result<f64> {
    if offsets.len() != z.len() || offsets.is_empty() {
        return Err(BaldError::DimensionMismatch {
            expected: format!("{} samples", offsets.len()),
            found: format!("{} samples", z.len()),
        });
    }
    let n = offsets.len();
    let descending = n > 1 && offsets[0] > offsets[n - 1];
    let at = |i: usize| if descending { n - 1 - i } else { i };
    let (first, last) = (offsets[at(0)], offsets[at(n - 1)]);
    if !(x >= first && x <= last) {
        return Err(BaldError::Config(format!(
            "offset {x} ppm outside sampled range [{first}, {last}]"
        )));
    }
    let j = (0..n).position(|i| offsets[at(i)] >= x).unwrap();
    if offsets[at(j)] == x || j == 0 {
        return Ok(z[at(j)]);
    }
    let (x0, x1) = (offsets[at(j - 1)], offsets[at(j)]);
    let (y0, y1) = (z[at(j - 1)], z[at(j)]);
    Ok(y0 + (x - x0) / (x1 - x0) * (y1 - y0))
}

/// `z(-dw) - z(+dw)`.
pub fn mtr_asym(offsets: &[f64], z: &[f64], dw: f64) -> Result<f64> {
    Ok(interpolate(offsets, z, -dw)? - interpolate(offsets, z, dw)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AptwMap {
    /// MTR asymmetry at 3.5 ppm in percent; 0 on background pixels.
    pub values: Array2<f64>,
    pub off_mask: Array2<bool>,
}

/// Per-pixel MTR asymmetry at 3.5 ppm, in percent.
pub fn aptw_map(seq: &SpectralSequence) -> Result<AptwMap> {
    let offsets = seq.offsets_ppm();
    let (lo, hi) = offsets
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &o| (l.min(o), h.max(o)));
    if lo > -APT_OFFSET_PPM || hi < APT_OFFSET_PPM {
        return Err(BaldError::Config(format!(
            "offsets [{lo}, {hi}] do not cover +-{APT_OFFSET_PPM} ppm"
        )));
    }
    let (h, w) = (seq.height(), seq.width());
    let mut values = Array2::zeros((h, w));
    let mut off_mask = Array2::from_elem((h, w), false);
    for r in 0..h {
        for c in 0..w {
            if seq.is_foreground(r, c) {
                values[[r, c]] = 100.0 * mtr_asym(offsets, &seq.spectrum(r, c), APT_OFFSET_PPM)?;
            } else {
                off_mask[[r, c]] = true;
            }
        }
    }
    Ok(AptwMap { values, off_mask })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use proptest::prelude::*;

    fn grid() -> Vec<f64> {
        (0..=16).map(|i| -4.0 + 0.5 * i as f64).collect()
    }

    #[test]
    fn symmetric_spectrum_has_zero_asymmetry() {
        let offsets = grid();
        let z: Vec<f64> = offsets.iter().map(|o| 1.0 - 0.5 / (1.0 + o * o)).collect();
        for dw in [0.0, 0.5, 1.25, 3.5, 4.0] {
            assert!(mtr_asym(&offsets, &z, dw).unwrap().abs() < 1e-15);
        }
    }

    #[test]
    fn direct_subtraction() {
        let offsets = vec![-3.5, 0.0, 3.5];
        let z = vec![0.95, 0.2, 0.90];
        assert!((mtr_asym(&offsets, &z, 3.5).unwrap() - 0.05).abs() < 1e-15);
        // Same answer with the grid reversed.
        let (ro, rz): (Vec<f64>, Vec<f64>) = offsets.iter().rev().zip(z.iter().rev()).unzip();
        assert!((mtr_asym(&ro, &rz, 3.5).unwrap() - 0.05).abs() < 1e-15);
    }

    #[test]
    fn outside_range_is_an_error() {
        assert!(mtr_asym(&[-1.0, 0.0, 2.0], &[1.0, 1.0, 1.0], 1.5).is_err());
    }

    #[test]
    fn interpolates_between_samples() {
        let v = interpolate(&[0.0, 1.0, 2.0], &[1.0, 0.0, 2.0], 1.5).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn antisymmetric_under_mirroring(z in prop::collection::vec(0.0f64..1.0, 17), dw in 0.0f64..4.0) {
            let offsets = grid();
            let mirrored: Vec<f64> = z.iter().rev().copied().collect();
            let a = mtr_asym(&offsets, &z, dw).unwrap();
            let b = mtr_asym(&offsets, &mirrored, dw).unwrap();
            prop_assert!((a + b).abs() < 1e-12);
        }

        #[test]
        fn linear_in_the_spectrum(
            s1 in prop::collection::vec(-1.0f64..1.0, 17),
            s2 in prop::collection::vec(-1.0f64..1.0, 17),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
            dw in 0.0f64..4.0,
        ) {
            let offsets = grid();
            let mix: Vec<f64> = s1.iter().zip(&s2).map(|(x, y)| a * x + b * y).collect();
            let lhs = mtr_asym(&offsets, &mix, dw).unwrap();
            let rhs = a * mtr_asym(&offsets, &s1, dw).unwrap() + b * mtr_asym(&offsets, &s2, dw).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn aptw_map_masks_and_coverage() {
        let offsets = vec![-4.0, -3.5, 0.0, 3.5, 4.0];
        let frames = Array3::from_shape_fn((5, 2, 2), |(k, r, c)| {
            if k == 1 {
                0.95
            } else if k == 3 {
                0.9 - 0.01 * (r + c) as f64
            } else {
                0.5
            }
        });
        let mut mask = Array2::from_elem((2, 2), true);
        mask[[1, 1]] = false;
        let seq = SpectralSequence::new(offsets, frames).unwrap().with_mask(mask).unwrap();
        let map = aptw_map(&seq).unwrap();
        assert!((map.values[[0, 0]] - 5.0).abs() < 1e-12);
        assert!((map.values[[0, 1]] - 6.0).abs() < 1e-12);
        assert_eq!(map.values[[1, 1]], 0.0);
        assert!(map.off_mask[[1, 1]] && !map.off_mask[[0, 0]]);

        let narrow = SpectralSequence::new(vec![-2.0, 0.0, 2.0], Array3::ones((3, 1, 1))).unwrap();
        assert!(aptw_map(&narrow).is_err());
    }
}
