//! Downstream contrast analysis: MTR asymmetry and multi-pool Lorentzian
//! fitting.

pub mod fit;
pub mod lorentzian;
pub mod mtr;

pub use fit::{contrast_maps, fit_lorentzian, ContrastMaps, FitOptions, FitResult, PoolSet, PoolSpec};
pub use lorentzian::{LorentzianModel, PoolParams};
pub use mtr::{aptw_map, mtr_asym, AptwMap, APT_OFFSET_PPM};
