//! The multi-offset image stack and the small helpers every other stage
//! needs: M0 normalization, z-spectrum extraction and ROIs.

use ndarray::{Array2, Array3, ArrayView2, Axis, Zip};

use crate::error::{BaldError, Result};

/// A stack of `C` frames of `H x W` intensities, one per saturation offset.
///
/// Frames are stored offset-major as a `(C, H, W)` array of `f64`. The
/// container is immutable once built; every transformation returns a new
/// sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSequence {
    offsets_ppm: Vec<f64>,
    frames: Array3<f64>,
    m0: Option<Array2<f64>>,
    mask: Option<Array2<bool>>,
}

impl SpectralSequence {
    /// Builds a sequence from offsets and a `(C, H, W)` frame stack.
    ///
    /// Offsets must be finite and strictly monotone (either direction).
    pub fn new(offsets_ppm: Vec<f64>, frames: Array3<f64>) -> Result<Self> {
        let (c, h, w) = frames.dim();
        if c == 0 || h == 0 || w == 0 {
            return Err(BaldError::Config(format!(
                "sequence must be non-empty, got {c}x{h}x{w}"
            )));
        }
        if offsets_ppm.len() != c {
            return Err(BaldError::DimensionMismatch {
                expected: format!("{c} offsets"),
                found: format!("{} offsets", offsets_ppm.len()),
            });
        }
        check_monotone(&offsets_ppm)?;
        Ok(Self {
            offsets_ppm,
            frames,
            m0: None,
            mask: None,
        })
    }

    pub fn with_m0(mut self, m0: Array2<f64>) -> Result<Self> {
        self.check_plane_dims(m0.dim(), "m0")?;
        self.m0 = Some(m0);
        Ok(self)
    }

    /// Averages several M0 acquisitions into one reference frame.
    pub fn with_m0_acquisitions(self, acquisitions: &[Array2<f64>]) -> Result<Self> {
        let m0 = average_m0(acquisitions)?;
        self.with_m0(m0)
    }

    pub fn with_mask(mut self, mask: Array2<bool>) -> Result<Self> {
        self.check_plane_dims(mask.dim(), "mask")?;
        self.mask = Some(mask);
        Ok(self)
    }

    pub fn without_mask(mut self) -> Self {
        self.mask = None;
        self
    }

    /// Returns a sequence with the same metadata and new frames.
    pub fn with_frames(&self, frames: Array3<f64>) -> Result<Self> {
        if frames.dim() != self.frames.dim() {
            return Err(BaldError::DimensionMismatch {
                expected: format!("{:?}", self.frames.dim()),
                found: format!("{:?}", frames.dim()),
            });
        }
        Ok(Self {
            offsets_ppm: self.offsets_ppm.clone(),
            frames,
            m0: self.m0.clone(),
            mask: self.mask.clone(),
        })
    }

    fn check_plane_dims(&self, dim: (usize, usize), what: &str) -> Result<()> {
        let expected = (self.height(), self.width());
        if dim != expected {
            return Err(BaldError::DimensionMismatch {
                expected: format!("{what} of {}x{}", expected.0, expected.1),
                found: format!("{}x{}", dim.0, dim.1),
            });
        }
        Ok(())
    }

    pub fn n_offsets(&self) -> usize {
        self.frames.dim().0
    }

    pub fn height(&self) -> usize {
        self.frames.dim().1
    }

    pub fn width(&self) -> usize {
        self.frames.dim().2
    }

    pub fn offsets_ppm(&self) -> &[f64] {
        &self.offsets_ppm
    }

    pub fn frames(&self) -> &Array3<f64> {
        &self.frames
    }

    pub fn into_frames(self) -> Array3<f64> {
        self.frames
    }

    pub fn frame(&self, k: usize) -> ArrayView2<'_, f64> {
        self.frames.index_axis(Axis(0), k)
    }

    pub fn m0(&self) -> Option<&Array2<f64>> {
        self.m0.as_ref()
    }

    pub fn mask(&self) -> Option<&Array2<bool>> {
        self.mask.as_ref()
    }

    /// Foreground test; every pixel is foreground when no mask is set.
    #[inline]
    pub fn is_foreground(&self, row: usize, col: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[[row, col]])
    }

    pub fn foreground_count(&self) -> usize {
        self.mask
            .as_ref()
            .map_or(self.height() * self.width(), |m| m.iter().filter(|&&b| b).count())
    }

    pub fn check_in_bounds(&self, row: usize, col: usize) -> Result<()> {
        if row >= self.height() || col >= self.width() {
            return Err(BaldError::OutOfBounds {
                row,
                col,
                height: self.height(),
                width: self.width(),
            });
        }
        Ok(())
    }

    /// Checks that every intensity is finite.
    pub fn check_finite(&self) -> Result<()> {
        let bad = self.frames.iter().filter(|v| !v.is_finite()).count();
        if bad > 0 {
            return Err(BaldError::Data(format!("{bad} non-finite intensities")));
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &SpectralSequence) -> bool {
        self.frames.dim() == other.frames.dim()
    }

    /// Per-pixel z-spectrum as `(offset_ppm, z)` pairs in stored order.
    pub fn extract_zspectrum(&self, row: usize, col: usize) -> Result<Vec<(f64, f64)>> {
        self.check_in_bounds(row, col)?;
        Ok(self
            .offsets_ppm
            .iter()
            .zip(self.frames.slice(ndarray::s![.., row, col]))
            .map(|(&o, &z)| (o, z))
            .collect())
    }

    /// The intensities of one pixel across all offsets.
    pub fn spectrum(&self, row: usize, col: usize) -> Vec<f64> {
        self.frames.slice(ndarray::s![.., row, col]).to_vec()
    }

    /// Divides every frame by M0 pixel-wise.
    ///
    /// Off-mask pixels are set to 0 and the resulting M0 is all ones.
    pub fn normalize_by_m0(&self) -> Result<Self> {
        let m0 = self
            .m0
            .as_ref()
            .ok_or_else(|| BaldError::Config("normalization requires an M0 frame".into()))?;

        let mut bad = 0usize;
        for ((r, c), &v) in m0.indexed_iter() {
            if self.is_foreground(r, c) && !(v > 0.0 && v.is_finite()) {
                bad += 1;
            }
        }
        if bad > 0 {
            return Err(BaldError::Data(format!(
                "M0 is non-positive at {bad} foreground pixel(s)"
            )));
        }

        let mut frames = self.frames.clone();
        for mut frame in frames.axis_iter_mut(Axis(0)) {
            Zip::indexed(&mut frame).and(m0).for_each(|(r, c), v, &m| {
                if self.is_foreground(r, c) {
                    *v /= m;
                } else {
                    *v = 0.0;
                }
            });
        }
        Ok(Self {
            offsets_ppm: self.offsets_ppm.clone(),
            frames,
            m0: Some(Array2::ones(m0.dim())),
            mask: self.mask.clone(),
        })
    }
}

fn check_monotone(offsets: &[f64]) -> Result<()> {
    if offsets.iter().any(|o| !o.is_finite()) {
        return Err(BaldError::Config("offsets must be finite".into()));
    }
    if offsets.len() < 2 {
        return Ok(());
    }
    let ascending = offsets.windows(2).all(|w| w[1] > w[0]);
    let descending = offsets.windows(2).all(|w| w[1] < w[0]);
    if !(ascending || descending) {
        return Err(BaldError::Config(
            "offsets must be strictly monotone without duplicates".into(),
        ));
    }
    Ok(())
}

/// Pixel-wise mean of repeated M0 acquisitions.
pub fn average_m0(acquisitions: &[Array2<f64>]) -> Result<Array2<f64>> {
    let first = acquisitions
        .first()
        .ok_or_else(|| BaldError::Config("at least one M0 acquisition required".into()))?;
    let mut sum = Array2::<f64>::zeros(first.dim());
    for a in acquisitions {
        if a.dim() != first.dim() {
            return Err(BaldError::DimensionMismatch {
                expected: format!("{:?}", first.dim()),
                found: format!("{:?}", a.dim()),
            });
        }
        sum += a;
    }
    Ok(sum / acquisitions.len() as f64)
}

/// A labelled set of pixel coordinates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Roi {
    label: String,
    pixels: Vec<(usize, usize)>,
}

impl Roi {
    pub fn new(label: impl Into<String>, pixels: Vec<(usize, usize)>, height: usize, width: usize) -> Result<Self> {
        let label = label.into();
        if pixels.is_empty() {
            return Err(BaldError::Config(format!("ROI '{label}' is empty")));
        }
        if let Some(&(row, col)) = pixels.iter().find(|&&(r, c)| r >= height || c >= width) {
            return Err(BaldError::OutOfBounds {
                row,
                col,
                height,
                width,
            });
        }
        Ok(Self { label, pixels })
    }

    /// All pixels of `labels` equal to `value`.
    pub fn from_label_map(label: impl Into<String>, labels: &Array2<u32>, value: u32) -> Result<Self> {
        let (h, w) = labels.dim();
        let pixels = labels
            .indexed_iter()
            .filter(|(_, &v)| v == value)
            .map(|(rc, _)| rc)
            .collect();
        Self::new(label, pixels, h, w)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn pixels(&self) -> &[(usize, usize)] {
        &self.pixels
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}
