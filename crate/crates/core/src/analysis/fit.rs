//! Bound-constrained damped least-squares fitting of the Lorentzian model.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lorentzian::{evaluate, gradient, LorentzianModel, PARAMS_PER_POOL};
use crate::error::{BaldError, Result};
use crate::sequence::SpectralSequence;

/// Lower bound on every width in the second starting point, ppm.
pub const WIDE_START_WIDTH: f64 = 3.0;

/// Fit bounds and starting point of one pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub name: String,
    /// ppm; absolute for water, relative to water otherwise.
    pub center: f64,
    /// Half-width of the allowed centre interval; 0 pins the centre.
    pub center_tolerance: f64,
    pub amplitude_init: f64,
    pub amplitude_max: f64,
    pub width_init: f64,
    pub width_min: f64,
    pub width_max: f64,
}

impl PoolSpec {
    fn with_defaults(name: &str, center: f64, amplitude_init: f64, width_init: f64) -> Self {
        Self {
            name: name.to_string(),
            center,
            center_tolerance: 0.0,
            amplitude_init,
            amplitude_max: 1.0,
            width_init,
            width_min: 0.2,
            width_max: 100.0,
        }
    }

    /// Direct water saturation, centre free within +-1 ppm.
    pub fn water() -> Self {
        Self {
            center_tolerance: 1.0,
            ..Self::with_defaults("water", 0.0, 0.9, 1.0)
        }
    }

    pub fn apt() -> Self {
        Self::with_defaults("apt", 3.5, 0.1, 1.0)
    }

    pub fn noe() -> Self {
        Self::with_defaults("noe", -3.5, 0.1, 1.0)
    }

    pub fn mt() -> Self {
        Self::with_defaults("mt", -2.5, 0.1, 20.0)
    }

    pub fn amine() -> Self {
        Self::with_defaults("amine", 2.0, 0.1, 1.0)
    }

    /// Looks up one of the built-in exchange pools by name.
    pub fn by_name(name: &str) -> Result<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "apt" | "amide" => Ok(Self::apt()),
            "noe" => Ok(Self::noe()),
            "mt" => Ok(Self::mt()),
            "amine" => Ok(Self::amine()),
            other => Err(BaldError::Config(format!(
                "unknown pool '{other}' (known: apt, noe, mt, amine)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.width_min > 0.0
            && self.width_min <= self.width_max
            && self.amplitude_max >= 0.0
            && self.center_tolerance >= 0.0
            && [
                self.center,
                self.center_tolerance,
                self.amplitude_init,
                self.amplitude_max,
                self.width_init,
                self.width_min,
                self.width_max,
            ]
            .iter()
            .all(|v| v.is_finite());
        if !ok {
            return Err(BaldError::Config(format!("pool '{}' has invalid bounds", self.name)));
        }
        Ok(())
    }
}

/// The water pool plus the exchange pools to fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolSet {
    pub water: PoolSpec,
    pub pools: Vec<PoolSpec>,
}

impl Default for PoolSet {
    /// Water, APT (+3.5), NOE (-3.5) and MT (-2.5).
    fn default() -> Self {
        Self {
            water: PoolSpec::water(),
            pools: vec![PoolSpec::apt(), PoolSpec::noe(), PoolSpec::mt()],
        }
    }
}

impl PoolSet {
    /// Water plus the named built-in pools, e.g. `["apt", "noe", "mt"]`.
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let pools = names
            .iter()
            .map(|n| PoolSpec::by_name(n.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            water: PoolSpec::water(),
            pools,
        })
    }

    pub fn names(&self) -> Vec<&str> {
        self.pools.iter().map(|p| p.name.as_str()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.pools.iter().position(|p| p.name == name)
    }

    pub fn n_params(&self) -> usize {
        PARAMS_PER_POOL * (1 + self.pools.len())
    }

    /// Smallest number of samples the fit accepts.
    pub fn min_samples(&self) -> usize {
        2 + 3 + 2 * self.pools.len()
    }

    fn all(&self) -> impl Iterator<Item = &PoolSpec> {
        std::iter::once(&self.water).chain(&self.pools)
    }

    /// Packed lower and upper bounds.
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = Vec::with_capacity(self.n_params());
        let mut hi = Vec::with_capacity(self.n_params());
        for p in self.all() {
            lo.extend([0.0, p.width_min, p.center - p.center_tolerance]);
            hi.extend([p.amplitude_max, p.width_max, p.center + p.center_tolerance]);
        }
        (lo, hi)
    }

    /// Packed initial point, clamped into the bounds.
    pub fn initial(&self) -> Vec<f64> {
        let (lo, hi) = self.bounds();
        self.all()
            .flat_map(|p| [p.amplitude_init, p.width_init, p.center])
            .zip(lo.iter().zip(&hi))
            .map(|(v, (&l, &h))| v.clamp(l, h))
            .collect()
    }

    /// [`Self::initial`] with every width raised to at least
    /// [`WIDE_START_WIDTH`]. Starting every line narrow lets a broad NOE line
    /// swallow the MT pool on some spectra; this start avoids that basin.
    pub fn wide_initial(&self) -> Vec<f64> {
        let (lo, hi) = self.bounds();
        let mut p = self.initial();
        for k in (1..p.len()).step_by(PARAMS_PER_POOL) {
            p[k] = p[k].max(WIDE_START_WIDTH).clamp(lo[k], hi[k]);
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        self.all().try_for_each(PoolSpec::validate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Stop once an accepted step lowers the cost by less than this fraction.
    pub relative_tolerance: f64,
    pub initial_damping: f64,
    /// Record the cost after every accepted step.
    pub record_trace: bool,
    /// Also start from [`PoolSet::wide_initial`] and keep the cheaper fit.
    pub second_start: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            relative_tolerance: 1e-8,
            initial_damping: 1e-3,
            record_trace: false,
            second_start: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    /// Packed parameters, water first (see [`LorentzianModel::from_params`]).
    pub params: Vec<f64>,
    /// Euclidean norm of the final residual.
    pub residual_norm: f64,
    pub converged: bool,
    /// Trial steps taken, accepted or not.
    pub iterations: usize,
    /// Cost `0.5 |r|^2` at the start and after each accepted step, when
    /// requested.
    pub trace: Vec<f64>,
}

impl FitResult {
    pub fn model(&self) -> LorentzianModel {
        LorentzianModel::from_params(&self.params)
    }

    /// Amplitude of exchange pool `pool` (0-based, water excluded).
    pub fn amplitude(&self, pool: usize) -> f64 {
        self.params[PARAMS_PER_POOL * (pool + 1)]
    }

    pub fn water_shift(&self) -> f64 {
        self.params[2]
    }
}

fn cost_of(p: &[f64], offsets: &[f64], z: &[f64], r: &mut [f64]) -> f64 {
    let mut c = 0.0;
    for ((ri, &o), &zi) in r.iter_mut().zip(offsets).zip(z) {
        *ri = evaluate(p, o) - zi;
        c += *ri * *ri;
    }
    0.5 * c
}

/// Fits the Lorentzian model to one spectrum.
///
/// The fit runs from [`PoolSet::initial`] and, unless disabled, again from
/// [`PoolSet::wide_initial`]; the lower-cost result wins.
///
/// Each trial step solves `(J^T J + lambda diag(J^T J)) dp = -J^T r` over the
/// parameters that are not pinned against a bound, projects the result into
/// the box, and is accepted only if it lowers the cost; otherwise the damping
/// grows and the step is retried. Running out of iterations is not an error:
/// the best point so far is returned with `converged = false`.
pub fn fit_lorentzian(offsets: &[f64], z: &[f64], pools: &PoolSet, opts: &FitOptions) -> Result<FitResult> {
    if offsets.len() != z.len() {
        return Err(BaldError::DimensionMismatch {
            expected: format!("{} samples", offsets.len()),
            found: format!("{} samples", z.len()),
        });
    }
    if z.len() < pools.min_samples() {
        return Err(BaldError::Config(format!(
            "fit needs at least {} samples, got {}",
            pools.min_samples(),
            z.len()
        )));
    }
    if z.iter().chain(offsets).any(|v| !v.is_finite()) {
        return Err(BaldError::Data("spectrum contains non-finite values".into()));
    }
    pools.validate()?;

    let (lo, hi) = pools.bounds();
    let first = levenberg_marquardt(pools.initial(), &lo, &hi, offsets, z, opts);
    if !opts.second_start {
        return Ok(first);
    }
    let second = levenberg_marquardt(pools.wide_initial(), &lo, &hi, offsets, z, opts);
    Ok(if second.residual_norm < first.residual_norm {
        second
    } else {
        first
    })
}

fn levenberg_marquardt(
    mut p: Vec<f64>,
    lo: &[f64],
    hi: &[f64],
    offsets: &[f64],
    z: &[f64],
    opts: &FitOptions,
) -> FitResult {
    let n = lo.len();
    let m = z.len();
    let free: Vec<usize> = (0..n).filter(|&k| lo[k] < hi[k]).collect();

    let mut r = vec![0.0; m];
    let mut cost = cost_of(&p, offsets, z, &mut r);
    let mut trace = Vec::new();
    if opts.record_trace {
        trace.push(cost);
    }

    let mut lambda = opts.initial_damping;
    let mut iterations = 0;
    let mut converged = false;
    let mut grad_row = vec![0.0; n];
    let mut jtj = vec![0.0; n * n];
    let mut jtr = vec![0.0; n];
    let mut need_jacobian = true;
    let mut trial = vec![0.0; n];
    let mut r_trial = vec![0.0; m];

    while iterations < opts.max_iterations {
        if cost == 0.0 {
            converged = true;
            break;
        }
        if need_jacobian {
            jtj.iter_mut().for_each(|v| *v = 0.0);
            jtr.iter_mut().for_each(|v| *v = 0.0);
            for (&o, &ri) in offsets.iter().zip(&r) {
                gradient(&p, o, &mut grad_row);
                for &a in &free {
                    jtr[a] += grad_row[a] * ri;
                    for &b in &free {
                        jtj[a * n + b] += grad_row[a] * grad_row[b];
                    }
                }
            }
            need_jacobian = false;
        }
        iterations += 1;

        // Parameters pressed against a bound by the gradient sit this step out.
        let active: Vec<usize> = free
            .iter()
            .copied()
            .filter(|&k| !((p[k] <= lo[k] && jtr[k] > 0.0) || (p[k] >= hi[k] && jtr[k] < 0.0)))
            .collect();
        if active.is_empty() {
            converged = true;
            break;
        }
        let k = active.len();
        let mut a = vec![0.0; k * k];
        let mut b = vec![0.0; k];
        for (i, &pi) in active.iter().enumerate() {
            for (j, &pj) in active.iter().enumerate() {
                a[i * k + j] = jtj[pi * n + pj];
            }
            a[i * k + i] += lambda * jtj[pi * n + pi].max(1e-12);
            b[i] = -jtr[pi];
        }

        trial.copy_from_slice(&p);
        let trial_cost = match solve_dense(&mut a, &mut b, k) {
            Some(step) => {
                for (i, &pi) in active.iter().enumerate() {
                    trial[pi] = (p[pi] + step[i]).clamp(lo[pi], hi[pi]);
                }
                cost_of(&trial, offsets, z, &mut r_trial)
            }
            None => f64::INFINITY,
        };

        if trial_cost < cost {
            let rel = (cost - trial_cost) / cost;
            std::mem::swap(&mut p, &mut trial);
            std::mem::swap(&mut r, &mut r_trial);
            cost = trial_cost;
            if opts.record_trace {
                trace.push(cost);
            }
            lambda = (lambda / 3.0).max(1e-15);
            need_jacobian = true;
            if rel < opts.relative_tolerance {
                converged = true;
                break;
            }
        } else {
            lambda *= 4.0;
            if lambda > 1e15 {
                // No damped step lowers the cost: a stationary point of the
                // box-constrained problem.
                converged = true;
                break;
            }
        }
    }

    FitResult {
        params: p,
        residual_norm: (2.0 * cost).sqrt(),
        converged,
        iterations,
        trace,
    }
}

/// Gaussian elimination with partial pivoting on a row-major `n x n` system.
fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Option<Vec<f64>> {
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))?;
        if a[pivot * n + col].is_nan() || a[pivot * n + col].abs() <= 1e-300 {
            return None;
        }
        if pivot != col {
            for j in 0..n {
                a.swap(col * n + j, pivot * n + j);
            }
            b.swap(col, pivot);
        }
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
            if f != 0.0 {
                for j in col..n {
                    a[row * n + j] -= f * a[col * n + j];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|j| a[row * n + j] * x[j]).sum();
        x[row] = (b[row] - s) / a[row * n + row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Per-pool amplitude maps from pixel-wise fits.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastMaps {
    pub names: Vec<String>,
    /// One `H x W` amplitude map per exchange pool, in `names` order.
    pub amplitudes: Vec<Array2<f64>>,
    /// Fitted water centre (B0 shift) per pixel.
    pub water_shift: Array2<f64>,
    pub residual_norm: Array2<f64>,
    /// `true` where the fit ran out of iterations.
    pub failed: Array2<bool>,
    /// `true` for background pixels, which are left at 0 and not fitted.
    pub off_mask: Array2<bool>,
}

impl ContrastMaps {
    pub fn map(&self, name: &str) -> Option<&Array2<f64>> {
        self.names.iter().position(|n| n == name).map(|i| &self.amplitudes[i])
    }
}

/// Fits every foreground pixel independently.
pub fn contrast_maps(seq: &SpectralSequence, pools: &PoolSet, opts: &FitOptions) -> Result<ContrastMaps> {
    let (h, w) = (seq.height(), seq.width());
    let offsets = seq.offsets_ppm();
    let fits: Vec<Option<FitResult>> = (0..h * w)
        .into_par_iter()
        .map(|i| {
            let (r, c) = (i / w, i % w);
            if !seq.is_foreground(r, c) {
                return Ok(None);
            }
            fit_lorentzian(offsets, &seq.spectrum(r, c), pools, opts).map(Some)
        })
        .collect::<Result<_>>()?;

    let np = pools.pools.len();
    let mut amplitudes = vec![Array2::zeros((h, w)); np];
    let mut water_shift = Array2::zeros((h, w));
    let mut residual_norm = Array2::zeros((h, w));
    let mut failed = Array2::from_elem((h, w), false);
    let mut off_mask = Array2::from_elem((h, w), false);
    for (i, fit) in fits.into_iter().enumerate() {
        let rc = (i / w, i % w);
        match fit {
            None => off_mask[rc] = true,
            Some(f) => {
                for (j, map) in amplitudes.iter_mut().enumerate() {
                    map[rc] = f.amplitude(j);
                }
                water_shift[rc] = f.water_shift();
                residual_norm[rc] = f.residual_norm;
                failed[rc] = !f.converged;
            }
        }
    }
    Ok(ContrastMaps {
        names: pools.pools.iter().map(|p| p.name.clone()).collect(),
        amplitudes,
        water_shift,
        residual_norm,
        failed,
        off_mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::lorentzian::PoolParams;
    use ndarray::Array3;

    fn grid() -> Vec<f64> {
        (0..=80).map(|i| -10.0 + 0.25 * i as f64).collect()
    }

    fn truth() -> LorentzianModel {
        LorentzianModel::new(
            PoolParams::new(0.85, 3.0, 0.3),
            vec![
                PoolParams::new(0.04, 2.5, 3.5),
                PoolParams::new(0.06, 3.0, -3.5),
                PoolParams::new(0.1, 25.0, -2.5),
            ],
        )
    }

    #[test]
    fn noiseless_spectrum_is_recovered() {
        let offsets = grid();
        let m = truth();
        let z = m.spectrum(&offsets);
        let fit = fit_lorentzian(&offsets, &z, &PoolSet::default(), &FitOptions::default()).unwrap();
        assert!(fit.converged);
        let got = fit.model();
        for (g, t) in got.pools.iter().zip(&m.pools) {
            assert!((g.amplitude - t.amplitude).abs() < 0.01 * t.amplitude, "{g:?} vs {t:?}");
        }
        assert!((got.water.amplitude - 0.85).abs() < 0.01 * 0.85);
        assert!((got.water.center - 0.3).abs() < 0.02);
    }

    #[test]
    fn second_start_escapes_the_broad_noe_basin() {
        let offsets = grid();
        let truth = LorentzianModel::new(
            PoolParams::new(0.854, 3.614, 0.18),
            vec![
                PoolParams::new(0.088, 2.545, 3.5),
                PoolParams::new(0.072, 3.2, -3.5),
                PoolParams::new(0.095, 25.441, -2.5),
            ],
        );
        let z = truth.spectrum(&offsets);
        let single = FitOptions {
            second_start: false,
            ..Default::default()
        };
        let trapped = fit_lorentzian(&offsets, &z, &PoolSet::default(), &single).unwrap();
        assert!(trapped.residual_norm > 1e-3, "{}", trapped.residual_norm);
        let fit = fit_lorentzian(&offsets, &z, &PoolSet::default(), &FitOptions::default()).unwrap();
        assert!(fit.residual_norm < 1e-6);
        for (g, t) in fit.model().pools.iter().zip(&truth.pools) {
            assert!((g.amplitude - t.amplitude).abs() < 0.01 * t.amplitude, "{g:?} vs {t:?}");
        }
    }

    #[test]
    fn flat_spectrum_fits_zero_amplitudes() {
        let offsets = grid();
        let z = vec![1.0; offsets.len()];
        let fit = fit_lorentzian(&offsets, &z, &PoolSet::default(), &FitOptions::default()).unwrap();
        let m = fit.model();
        assert!(m.water.amplitude < 1e-6);
        for p in &m.pools {
            assert!(p.amplitude < 1e-6, "{p:?}");
        }
        assert!(fit.residual_norm < 1e-6);
    }

    #[test]
    fn accepted_steps_never_raise_the_cost() {
        let offsets = grid();
        let z: Vec<f64> = truth()
            .spectrum(&offsets)
            .iter()
            .enumerate()
            .map(|(i, v)| v + 0.01 * ((i * 7919) % 13) as f64 / 13.0 - 0.005)
            .collect();
        let opts = FitOptions {
            record_trace: true,
            ..Default::default()
        };
        let fit = fit_lorentzian(&offsets, &z, &PoolSet::default(), &opts).unwrap();
        assert!(fit.trace.len() > 1);
        assert!(fit.trace.windows(2).all(|w| w[1] <= w[0]));
        let (lo, hi) = PoolSet::default().bounds();
        for ((v, l), h) in fit.params.iter().zip(&lo).zip(&hi) {
            assert!(v >= l && v <= h);
        }
    }

    #[test]
    fn too_few_samples_and_non_finite_input() {
        let pools = PoolSet::default();
        let offsets: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert!(matches!(
            fit_lorentzian(&offsets, &[1.0; 10], &pools, &FitOptions::default()),
            Err(BaldError::Config(_))
        ));
        let offsets = grid();
        let mut z = vec![1.0; offsets.len()];
        z[3] = f64::NAN;
        assert!(matches!(
            fit_lorentzian(&offsets, &z, &pools, &FitOptions::default()),
            Err(BaldError::Data(_))
        ));
    }

    #[test]
    fn iteration_cap_flags_the_result() {
        let offsets = grid();
        let z = truth().spectrum(&offsets);
        let opts = FitOptions {
            max_iterations: 2,
            ..Default::default()
        };
        let fit = fit_lorentzian(&offsets, &z, &PoolSet::default(), &opts).unwrap();
        assert!(!fit.converged);
        assert_eq!(fit.iterations, 2);
        assert!(fit.residual_norm.is_finite());
    }

    #[test]
    fn unknown_pool_name() {
        assert!(PoolSet::from_names(&["apt", "glucose"]).is_err());
        assert_eq!(PoolSet::from_names(&["NOE", "mt"]).unwrap().names(), vec!["noe", "mt"]);
    }

    #[test]
    fn maps_for_a_single_pixel() {
        let offsets = grid();
        let z = truth().spectrum(&offsets);
        let frames = Array3::from_shape_vec((offsets.len(), 1, 1), z).unwrap();
        let seq = SpectralSequence::new(offsets, frames).unwrap();
        let maps = contrast_maps(&seq, &PoolSet::default(), &FitOptions::default()).unwrap();
        assert_eq!(maps.amplitudes.len(), 3);
        assert_eq!(maps.map("apt").unwrap().dim(), (1, 1));
        assert!((maps.map("apt").unwrap()[[0, 0]] - 0.04).abs() < 4e-4);
    }

    #[test]
    fn dense_solver() {
        let mut a = vec![2.0, 1.0, 1.0, 3.0];
        let mut b = vec![3.0, 5.0];
        let x = solve_dense(&mut a, &mut b, 2).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-15 && (x[1] - 1.4).abs() < 1e-15);
        let mut singular = vec![0.0; 4];
        assert!(solve_dense(&mut singular, &mut [1.0, 1.0], 2).is_none());
    }
}
