//! Multi-pool Lorentzian z-spectrum model.
//!
//! ```text
//! L(p, dw) = 1 - A_w / (1 + ((dw - d_w) / (G_w / 2))^2)
//!              - sum_j A_j / (1 + ((dw - d_w - d_j) / (G_j / 2))^2)
//! ```
//!
//! The water (direct saturation) centre `d_w` is absolute; every other pool's
//! centre is relative to it, so a B0 shift moves the whole spectrum.
//!
//! Parameters are packed pool by pool as `[A, G, d]`, water first.

use serde::{Deserialize, Serialize};

/// Parameters per pool in the packed vector.
pub const PARAMS_PER_POOL: usize = 3;

/// Amplitude, full width at half maximum and centre of one pool.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolParams {
    pub amplitude: f64,
    /// FWHM in ppm.
    pub width: f64,
    /// Centre in ppm; relative to water except for the water pool itself.
    pub center: f64,
}

impl PoolParams {
    pub fn new(amplitude: f64, width: f64, center: f64) -> Self {
        Self {
            amplitude,
            width,
            center,
        }
    }
}

/// Water pool plus any number of exchange pools.
#[derive(Debug, Clone, PartialEq)]
pub struct LorentzianModel {
    pub water: PoolParams,
    pub pools: Vec<PoolParams>,
}

impl LorentzianModel {
    pub fn new(water: PoolParams, pools: Vec<PoolParams>) -> Self {
        Self { water, pools }
    }

    pub fn n_params(&self) -> usize {
        PARAMS_PER_POOL * (1 + self.pools.len())
    }

    pub fn to_params(&self) -> Vec<f64> {
        std::iter::once(&self.water)
            .chain(&self.pools)
            .flat_map(|p| [p.amplitude, p.width, p.center])
            .collect()
    }

    pub fn from_params(p: &[f64]) -> Self {
        assert!(
            p.len() >= PARAMS_PER_POOL && p.len().is_multiple_of(PARAMS_PER_POOL),
            "packed parameter length must be a positive multiple of 3"
        );
        let mut it = p
            .chunks_exact(PARAMS_PER_POOL)
            .map(|c| PoolParams::new(c[0], c[1], c[2]));
        let water = it.next().unwrap();
        Self {
            water,
            pools: it.collect(),
        }
    }

    pub fn eval(&self, offset: f64) -> f64 {
        evaluate(&self.to_params(), offset)
    }

    pub fn spectrum(&self, offsets: &[f64]) -> Vec<f64> {
        let p = self.to_params();
        offsets.iter().map(|&o| evaluate(&p, o)).collect()
    }
}

#[inline]
fn absolute_center(p: &[f64], pool: usize) -> f64 {
    let water = p[2];
    if pool == 0 {
        water
    } else {
        water + p[PARAMS_PER_POOL * pool + 2]
    }
}

/// Evaluates the model for packed parameters `p`.
pub fn evaluate(p: &[f64], offset: f64) -> f64 {
    let mut z = 1.0;
    for (i, chunk) in p.chunks_exact(PARAMS_PER_POOL).enumerate() {
        let (a, g) = (chunk[0], chunk[1]);
        let x = 2.0 * (offset - absolute_center(p, i)) / g;
        z -= a / (1.0 + x * x);
    }
    z
}

/// Writes `dL/dp` at `offset` into `grad` (same length as `p`).
pub fn gradient(p: &[f64], offset: f64, grad: &mut [f64]) {
    debug_assert_eq!(p.len(), grad.len());
    grad[2] = 0.0;
    for (i, chunk) in p.chunks_exact(PARAMS_PER_POOL).enumerate() {
        let (a, g) = (chunk[0], chunk[1]);
        let x = 2.0 * (offset - absolute_center(p, i)) / g;
        let d = 1.0 + x * x;
        let base = PARAMS_PER_POOL * i;
        grad[base] = -1.0 / d;
        grad[base + 1] = -2.0 * a * x * x / (g * d * d);
        // dL/d(absolute centre); every pool's centre moves with water.
        let dc = -4.0 * a * x / (g * d * d);
        if i > 0 {
            grad[base + 2] = dc;
        }
        grad[2] += dc;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_model() -> LorentzianModel {
        LorentzianModel::new(
            PoolParams::new(0.8, 2.5, 0.2),
            vec![
                PoolParams::new(0.05, 2.0, 3.5),
                PoolParams::new(0.07, 3.0, -3.5),
                PoolParams::new(0.1, 25.0, -2.5),
            ],
        )
    }

    #[test]
    fn zero_amplitudes_give_one() {
        let m = LorentzianModel::new(PoolParams::new(0.0, 1.0, 0.3), vec![PoolParams::new(0.0, 2.0, 3.5)]);
        for o in [-10.0, -0.3, 0.0, 0.3, 7.5] {
            assert_eq!(m.eval(o), 1.0);
        }
    }

    #[test]
    fn dip_at_pool_centre() {
        let m = sample_model();
        assert!(m.eval(0.2) < m.eval(10.0));
        // Far off-resonance the spectrum is still below one (the MT pool).
        assert!(m.eval(10.0) < 1.0);
    }

    #[test]
    fn packing_round_trip() {
        let m = sample_model();
        assert_eq!(LorentzianModel::from_params(&m.to_params()), m);
        assert_eq!(m.n_params(), 12);
    }

    #[test]
    fn pool_centres_follow_the_water_shift() {
        let mut m = sample_model();
        let before = m.eval(3.5 + 0.2);
        m.water.center += 0.5;
        assert!((m.eval(3.5 + 0.7) - before).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let p = sample_model().to_params();
        let mut g = vec![0.0; p.len()];
        for &o in &[-6.0, -3.4, -1.0, 0.0, 0.4, 2.2, 3.6, 9.0] {
            gradient(&p, o, &mut g);
            for k in 0..p.len() {
                let h = 1e-6 * p[k].abs().max(1.0);
                let mut hi = p.clone();
                let mut lo = p.clone();
                hi[k] += h;
                lo[k] -= h;
                let fd = (evaluate(&hi, o) - evaluate(&lo, o)) / (2.0 * h);
                assert!(
                    (fd - g[k]).abs() <= 1e-6 * g[k].abs().max(1e-3),
                    "param {k} at {o}: {fd} vs {}",
                    g[k]
                );
            }
        }
    }
}
