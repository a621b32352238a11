//! Synthetic Lorentzian phantoms and noise injection.
//!
//! Pool amplitudes are linear in concentration (`amplitude_per_molar`), which
//! keeps the monotone concentration gradients of the grid design without a
//! full exchange simulation.
//!
//! All randomness comes from `ChaCha8Rng::seed_from_u64(seed)`, drawn
//! sequentially in offset-major, row-major order with the ziggurat standard
//! normal, so outputs are identical across platforms.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::analysis::lorentzian::{evaluate, PoolParams};
use crate::error::{BaldError, Result};
use crate::sequence::SpectralSequence;

/// Evenly spaced offsets `start, start + step, ..., stop`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OffsetGrid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Default for OffsetGrid {
    fn default() -> Self {
        Self {
            start: -10.0,
            stop: 10.0,
            step: 0.25,
        }
    }
}

impl OffsetGrid {
    pub fn offsets(&self) -> Result<Vec<f64>> {
        if !(self.step > 0.0 && self.start.is_finite() && self.stop >= self.start) {
            return Err(BaldError::Config(format!(
                "invalid offset grid {}..{} step {}",
                self.start, self.stop, self.step
            )));
        }
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1;
        if n > 100_000 {
            return Err(BaldError::Config(format!("offset grid has {n} points")));
        }
        Ok((0..n).map(|i| self.start + self.step * i as f64).collect())
    }
}

/// An exchange or MT pool whose amplitude scales with concentration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolDef {
    pub name: String,
    /// ppm, relative to water.
    pub center: f64,
    /// FWHM in ppm.
    pub width: f64,
    pub amplitude_per_molar: f64,
}

/// A disc-shaped compartment with its own pool concentrations (molar),
/// added on top of the background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Compartment {
    pub name: String,
    pub row: f64,
    pub col: f64,
    pub radius: f64,
    #[serde(default)]
    pub concentrations: BTreeMap<String, f64>,
}

impl Compartment {
    pub fn contains(&self, r: usize, c: usize) -> bool {
        let (dr, dc) = (r as f64 - self.row, c as f64 - self.col);
        dr * dr + dc * dc <= self.radius * self.radius
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub height: usize,
    pub width: usize,
    pub offsets: OffsetGrid,
    /// Direct water saturation, present everywhere.
    pub water: PoolParams,
    pub pools: Vec<PoolDef>,
    /// Concentrations present at every pixel.
    pub background: BTreeMap<String, f64>,
    pub compartments: Vec<Compartment>,
}

impl Default for PhantomSpec {
    /// 64x64 3x3 grid: APT 0 / 0.4 / 0.8 M by column, NOE 0 / 0.8 / 1.6 M by
    /// row, 15 M MT everywhere.
    fn default() -> Self {
        let (h, w) = (64usize, 64usize);
        let levels_apt = [0.0, 0.4, 0.8];
        let levels_noe = [0.0, 0.8, 1.6];
        let mut compartments = Vec::new();
        for (i, &noe) in levels_noe.iter().enumerate() {
            for (j, &apt) in levels_apt.iter().enumerate() {
                compartments.push(Compartment {
                    name: format!("r{}c{}", i + 1, j + 1),
                    row: (i as f64 + 0.5) * h as f64 / 3.0 - 0.5,
                    col: (j as f64 + 0.5) * w as f64 / 3.0 - 0.5,
                    radius: 8.0,
                    concentrations: BTreeMap::from([("apt".into(), apt), ("noe".into(), noe)]),
                });
            }
        }
        Self {
            height: h,
            width: w,
            offsets: OffsetGrid::default(),
            water: PoolParams::new(0.85, 4.0, 0.0),
            pools: vec![
                PoolDef {
                    name: "apt".into(),
                    center: 3.5,
                    width: 2.5,
                    amplitude_per_molar: 0.075,
                },
                PoolDef {
                    name: "noe".into(),
                    center: -3.5,
                    width: 3.0,
                    amplitude_per_molar: 0.05,
                },
                PoolDef {
                    name: "mt".into(),
                    center: -2.5,
                    width: 25.0,
                    amplitude_per_molar: 0.1 / 15.0,
                },
            ],
            background: BTreeMap::from([("mt".into(), 15.0)]),
            compartments,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(BaldError::Config(m));
        if self.height == 0 || self.width == 0 {
            return bad("phantom dimensions must be positive".into());
        }
        if self.height.saturating_mul(self.width) > 1 << 24 {
            return bad(format!("phantom {}x{} is too large", self.height, self.width));
        }
        let w = &self.water;
        if !(w.amplitude >= 0.0 && w.width > 0.0 && w.center.is_finite()) {
            return bad("water pool needs amplitude >= 0 and width > 0".into());
        }
        for p in &self.pools {
            if !(p.amplitude_per_molar >= 0.0 && p.width > 0.0 && p.center.is_finite()) {
                return bad(format!("pool '{}' needs amplitude >= 0 and width > 0", p.name));
            }
        }
        let known = |name: &str| self.pools.iter().any(|p| p.name == name);
        let concs = self
            .background
            .iter()
            .chain(self.compartments.iter().flat_map(|c| &c.concentrations));
        for (name, &v) in concs {
            if !known(name) {
                return bad(format!("unknown pool '{name}'"));
            }
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("concentration of '{name}' must be >= 0"));
            }
        }
        for c in &self.compartments {
            if !(c.radius > 0.0 && c.row.is_finite() && c.col.is_finite()) {
                return bad(format!("compartment '{}' has invalid geometry", c.name));
            }
        }
        self.offsets.offsets()?;
        // Disjointness, checked on the pixel grid.
        if let (_, Some((r, c))) = self.paint(true) {
            return bad(format!("compartments overlap at pixel ({r}, {c})"));
        }
        Ok(())
    }

    /// Label map: 0 for background, `i + 1` for compartment `i`. Where
    /// compartments overlap, the first one wins.
    pub fn labels(&self) -> Array2<u32> {
        self.paint(false).0
    }

    /// Rasterizes the compartments, visiting only each one's bounding box.
    /// With `stop_on_overlap`, returns at the first pixel claimed twice.
    fn paint(&self, stop_on_overlap: bool) -> (Array2<u32>, Option<(usize, usize)>) {
        let mut labels = Array2::zeros((self.height, self.width));
        let span = |centre: f64, radius: f64, len: usize| {
            let last = len.saturating_sub(1) as f64;
            let lo = (centre - radius).floor().clamp(0.0, last) as usize;
            let hi = (centre + radius).ceil().clamp(0.0, last) as usize;
            lo..=hi
        };
        for (i, k) in self.compartments.iter().enumerate() {
            for r in span(k.row, k.radius, self.height) {
                for c in span(k.col, k.radius, self.width) {
                    if !k.contains(r, c) {
                        continue;
                    }
                    if labels[[r, c]] == 0 {
                        labels[[r, c]] = i as u32 + 1;
                    } else if stop_on_overlap {
                        return (labels, Some((r, c)));
                    }
                }
            }
        }
        (labels, None)
    }

    /// `(label value, compartment name)` pairs for [`labels`](Self::labels).
    pub fn label_names(&self) -> Vec<(u32, String)> {
        self.compartments
            .iter()
            .enumerate()
            .map(|(i, c)| (i as u32 + 1, c.name.clone()))
            .collect()
    }

    /// Ground-truth amplitude of `pool` inside compartment `index`.
    pub fn amplitude(&self, index: usize, pool: &str) -> f64 {
        let Some(def) = self.pools.iter().find(|p| p.name == pool) else {
            return 0.0;
        };
        let bg = self.background.get(pool).copied().unwrap_or(0.0);
        let extra = self.compartments[index]
            .concentrations
            .get(pool)
            .copied()
            .unwrap_or(0.0);
        def.amplitude_per_molar * (bg + extra)
    }

    fn packed_params(&self, compartment: Option<&Compartment>) -> Vec<f64> {
        let mut p = vec![self.water.amplitude, self.water.width, self.water.center];
        for def in &self.pools {
            let conc = self.background.get(&def.name).copied().unwrap_or(0.0)
                + compartment
                    .and_then(|c| c.concentrations.get(&def.name))
                    .copied()
                    .unwrap_or(0.0);
            p.extend([def.amplitude_per_molar * conc, def.width, def.center]);
        }
        p
    }
}

/// Noise-free phantom with `m0 = 1`.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<SpectralSequence> {
    spec.validate()?;
    let offsets = spec.offsets.offsets()?;
    let labels = spec.labels();
    let params: Vec<Vec<f64>> = std::iter::once(spec.packed_params(None))
        .chain(spec.compartments.iter().map(|c| spec.packed_params(Some(c))))
        .collect();
    let frames = Array3::from_shape_fn((offsets.len(), spec.height, spec.width), |(k, r, c)| {
        evaluate(&params[labels[[r, c]] as usize], offsets[k])
    });
    SpectralSequence::new(offsets, frames)?.with_m0(Array2::ones((spec.height, spec.width)))
}

/// `g(u) = a + b exp(-u / c)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticNoise {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl AnalyticNoise {
    pub fn constant(sigma: f64) -> Self {
        Self {
            a: sigma,
            b: 0.0,
            c: 1.0,
        }
    }

    pub fn eval(&self, u: f64) -> f64 {
        self.a + self.b * (-u / self.c).exp()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.b >= 0.0 && self.c > 0.0 && self.a.is_finite() && self.b.is_finite()) {
            return Err(BaldError::Config(format!(
                "analytic noise needs a > 0, b >= 0, c > 0 (got {self:?})"
            )));
        }
        Ok(())
    }
}

/// The four built-in analytic noise families: steep at low intensity,
/// flattening out above it, each with a different knee and tail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NoiseModelId {
    A,
    B,
    C,
    D,
}

impl NoiseModelId {
    pub const ALL: [NoiseModelId; 4] = [Self::A, Self::B, Self::C, Self::D];

    pub fn params(self) -> AnalyticNoise {
        let (a, b, c) = match self {
            Self::A => (0.02, 0.03, 0.25),
            Self::B => (0.03, 0.02, 0.4),
            Self::C => (0.015, 0.025, 0.2),
            Self::D => (0.025, 0.04, 0.3),
        };
        AnalyticNoise { a, b, c }
    }
}

impl fmt::Display for NoiseModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::A => "A",
            Self::B => "B",
            Self::C => "C",
            Self::D => "D",
        };
        f.write_str(s)
    }
}

impl FromStr for NoiseModelId {
    type Err = BaldError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Self::A),
            "B" => Ok(Self::B),
            "C" => Ok(Self::C),
            "D" => Ok(Self::D),
            _ => Err(BaldError::Config(format!(
                "unknown noise model '{s}' (expected A, B, C or D)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NoiseKind {
    Rician { sigma: f64 },
    SignalDependentGaussian { model: AnalyticNoise },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    #[serde(flatten)]
    pub kind: NoiseKind,
    pub seed: u64,
}

pub fn add_noise(seq: &SpectralSequence, spec: &NoiseSpec) -> Result<SpectralSequence> {
    match spec.kind {
        NoiseKind::Rician { sigma } => add_rician_noise(seq, sigma, spec.seed),
        NoiseKind::SignalDependentGaussian { model } => add_analytic_noise(seq, &model, spec.seed),
    }
}

/// `sqrt((v + n1)^2 + n2^2)` with `n1, n2 ~ N(0, sigma^2)`.
pub fn add_rician_noise(seq: &SpectralSequence, sigma: f64, seed: u64) -> Result<SpectralSequence> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(BaldError::Config(format!("noise level must be positive, got {sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut frames = seq.frames().clone();
    for v in frames.iter_mut() {
        let n1: f64 = rng.sample(StandardNormal);
        let n2: f64 = rng.sample(StandardNormal);
        *v = ((*v + sigma * n1).powi(2) + (sigma * n2).powi(2)).sqrt();
    }
    seq.with_frames(frames)
}

/// `v + g(v) n` with `n ~ N(0, 1)` and `g` one of the built-in families.
pub fn add_model_noise(seq: &SpectralSequence, id: NoiseModelId, seed: u64) -> Result<SpectralSequence> {
    add_analytic_noise(seq, &id.params(), seed)
}

pub fn add_analytic_noise(seq: &SpectralSequence, model: &AnalyticNoise, seed: u64) -> Result<SpectralSequence> {
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut frames = seq.frames().clone();
    for v in frames.iter_mut() {
        let n: f64 = rng.sample(StandardNormal);
        *v += model.eval(*v) * n;
    }
    seq.with_frames(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_spec() -> PhantomSpec {
        let mut spec = PhantomSpec {
            height: 24,
            width: 24,
            offsets: OffsetGrid {
                start: -6.0,
                stop: 6.0,
                step: 0.5,
            },
            ..Default::default()
        };
        for c in &mut spec.compartments {
            c.row *= 24.0 / 64.0;
            c.col *= 24.0 / 64.0;
            c.radius = 3.0;
        }
        spec
    }

    #[test]
    fn default_grid_layout() {
        let spec = PhantomSpec::default();
        spec.validate().unwrap();
        assert_eq!(spec.offsets.offsets().unwrap().len(), 81);
        let labels = spec.labels();
        for k in 1..=9u32 {
            let n = labels.iter().filter(|&&l| l == k).count();
            assert!(n > 150, "compartment {k} has {n} pixels");
        }
        // Centre compartment: half of the maximum APT and NOE.
        let centre = spec.compartments.iter().position(|c| c.name == "r2c2").unwrap();
        assert!((spec.amplitude(centre, "apt") - 0.5 * spec.amplitude(8, "apt")).abs() < 1e-15);
        assert!((spec.amplitude(centre, "noe") - 0.5 * spec.amplitude(8, "noe")).abs() < 1e-15);
        assert!((spec.amplitude(0, "mt") - 0.1).abs() < 1e-15);
    }

    #[test]
    fn zero_amplitudes_give_ones() {
        let mut spec = small_spec();
        spec.water.amplitude = 0.0;
        spec.background.clear();
        for c in &mut spec.compartments {
            c.concentrations.clear();
        }
        let seq = generate_phantom(&spec).unwrap();
        assert!(seq.frames().iter().all(|&v| v == 1.0));
        assert!(seq.m0().unwrap().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn dips_at_pool_centres() {
        let spec = small_spec();
        let seq = generate_phantom(&spec).unwrap();
        let offsets = seq.offsets_ppm().to_vec();
        let idx = |o: f64| offsets.iter().position(|&x| (x - o).abs() < 1e-12).unwrap();
        let c = &spec.compartments[8];
        let z = seq.spectrum(c.row.round() as usize, c.col.round() as usize);
        assert!(z[idx(3.5)] < z[idx(6.0)]);
        assert!(z[idx(0.0)] < z[idx(-6.0)]);
    }

    #[test]
    fn equal_multipliers_give_equal_spectra() {
        let mut spec = small_spec();
        let conc = spec.compartments[4].concentrations.clone();
        spec.compartments[0].concentrations = conc;
        let seq = generate_phantom(&spec).unwrap();
        let a = &spec.compartments[0];
        let b = &spec.compartments[4];
        assert_eq!(
            seq.spectrum(a.row.round() as usize, a.col.round() as usize),
            seq.spectrum(b.row.round() as usize, b.col.round() as usize)
        );
    }

    #[test]
    fn overlap_and_unknown_pool_rejected() {
        let mut spec = small_spec();
        spec.compartments[1].col = spec.compartments[0].col + 1.0;
        assert!(matches!(spec.validate(), Err(BaldError::Config(_))));

        let mut spec = small_spec();
        spec.background.insert("glutamate".into(), 1.0);
        assert!(spec.validate().is_err());

        let mut spec = small_spec();
        spec.compartments[0].concentrations.insert("apt".into(), -1.0);
        assert!(spec.validate().is_err());
    }

    #[test]
    fn rician_limits_and_determinism() {
        let seq = generate_phantom(&small_spec()).unwrap();
        let tiny = add_rician_noise(&seq, 1e-12, 3).unwrap();
        for (a, b) in tiny.frames().iter().zip(seq.frames()) {
            assert!((a - b).abs() < 1e-9);
        }
        let x = add_rician_noise(&seq, 0.05, 9).unwrap();
        let y = add_rician_noise(&seq, 0.05, 9).unwrap();
        let z = add_rician_noise(&seq, 0.05, 10).unwrap();
        assert_eq!(x, y);
        assert_ne!(x, z);
        assert!(x.frames().iter().all(|&v| v >= 0.0));
        assert_eq!(x.offsets_ppm(), seq.offsets_ppm());
        assert!(add_rician_noise(&seq, 0.0, 1).is_err());
    }

    #[test]
    fn rayleigh_mean_at_zero_signal() {
        let zeros = SpectralSequence::new(vec![0.0, 1.0, 2.0, 3.0], Array3::zeros((4, 100, 100))).unwrap();
        let sigma = 0.05;
        let noisy = add_rician_noise(&zeros, sigma, 17).unwrap();
        let mean = noisy.frames().mean().unwrap();
        let expected = sigma * (std::f64::consts::PI / 2.0).sqrt();
        // 40 000 samples; standard error of the mean is ~1.6e-4.
        assert!((mean - expected).abs() < 1e-3, "{mean} vs {expected}");
    }

    #[test]
    fn constant_model_adds_iid_gaussian() {
        let flat = SpectralSequence::new(vec![0.0, 1.0, 2.0, 3.0], Array3::from_elem((4, 100, 100), 0.5)).unwrap();
        let noisy = add_analytic_noise(&flat, &AnalyticNoise::constant(0.04), 5).unwrap();
        let d: Vec<f64> = noisy.frames().iter().map(|v| v - 0.5).collect();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (d.len() - 1) as f64).sqrt();
        assert!(mean.abs() < 1e-3);
        assert!((sd - 0.04).abs() < 0.04 * 0.02, "{sd}");
    }

    #[test]
    fn model_ids() {
        assert_eq!("b".parse::<NoiseModelId>().unwrap(), NoiseModelId::B);
        assert!("E".parse::<NoiseModelId>().is_err());
        for id in NoiseModelId::ALL {
            let g = id.params();
            g.validate().unwrap();
            // Decreasing, then nearly flat at high intensity.
            assert!(g.eval(0.0) > g.eval(0.2) && g.eval(0.2) > g.eval(1.0));
            assert!(g.eval(0.8) - g.eval(1.0) < 0.1 * g.eval(1.0));
            assert_eq!(id.to_string().parse::<NoiseModelId>().unwrap(), id);
        }
        let seq = generate_phantom(&small_spec()).unwrap();
        let a = add_model_noise(&seq, NoiseModelId::C, 4).unwrap();
        assert_eq!(a, add_model_noise(&seq, NoiseModelId::C, 4).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn noise_preserves_shape_and_offsets(seed in any::<u64>(), sigma in 0.001f64..0.2) {
            let seq = generate_phantom(&small_spec()).unwrap();
            let r = add_rician_noise(&seq, sigma, seed).unwrap();
            prop_assert_eq!(r.frames().dim(), seq.frames().dim());
            prop_assert_eq!(r.offsets_ppm(), seq.offsets_ppm());
            prop_assert!(r.frames().iter().all(|&v| v >= 0.0));
            let g = add_analytic_noise(&seq, &AnalyticNoise { a: sigma, b: 0.05, c: 0.2 }, seed).unwrap();
            prop_assert_eq!(g.frames().dim(), seq.frames().dim());
        }

        #[test]
        fn labels_match_brute_force(
            discs in proptest::collection::vec((-5.0f64..25.0, -5.0f64..25.0, 0.1f64..12.0), 0..5),
        ) {
            let mut spec = small_spec();
            spec.height = 17;
            spec.width = 21;
            spec.compartments = discs
                .iter()
                .enumerate()
                .map(|(i, &(row, col, radius))| Compartment {
                    name: format!("d{i}"),
                    row,
                    col,
                    radius,
                    concentrations: BTreeMap::new(),
                })
                .collect();
            let labels = spec.labels();
            let mut overlap = false;
            for ((r, c), &v) in labels.indexed_iter() {
                let hits: Vec<usize> = (0..discs.len()).filter(|&i| spec.compartments[i].contains(r, c)).collect();
                prop_assert_eq!(v, hits.first().map_or(0, |&i| i as u32 + 1));
                overlap |= hits.len() > 1;
            }
            prop_assert_eq!(spec.validate().is_err(), overlap);
        }
    }
}
