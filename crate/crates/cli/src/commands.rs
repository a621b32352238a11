use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use bald_core::analysis::{aptw_map, contrast_maps, FitOptions, PoolSet};
use bald_core::eval::{psnr, psnr_map, psnr_values, roi_stats, roi_values, welch_t_test, RoiStats};
use bald_core::phantom::{add_model_noise, add_rician_noise, generate_phantom, OffsetGrid};
use bald_core::pipeline::{bald, bald_with_curve, BaldParams};
use bald_core::{BaldError, Roi, SpectralSequence};
use bald_io::csv_io::{metrics_to_csv, read_curve, roi_stats_to_csv, write_curve};
use bald_io::labels::{read_label_map, write_label_map};
use bald_io::nifti::read_nifti;
use bald_io::phantom_toml::{parse_phantom_spec, read_phantom_spec};
use bald_io::{read_container, write_container, Container, IoError, LabelMap, Payload, Provenance};
use ndarray::{s, Array2, Axis};

use crate::{
    AptwArgs, DenoiseArgs, EvalArgs, FitArgs, Format, ImportNiftiArgs, NoiseArg, SimulateArgs, UsageError,
    DEFAULT_PHANTOM,
};

/// File name only, so provenance does not depend on the working directory.
fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| IoError::io(path, e))?;
    Ok(())
}

fn read_sequence(path: &Path) -> Result<(SpectralSequence, Provenance)> {
    let c = read_container(path).with_context(|| format!("reading {}", path.display()))?;
    let prov = c.provenance.clone();
    let seq = c
        .into_sequence()
        .with_context(|| format!("reading {}", path.display()))?;
    Ok((seq, prov))
}

fn normalized(seq: SpectralSequence) -> Result<SpectralSequence> {
    Ok(match seq.m0() {
        Some(_) => seq.normalize_by_m0()?,
        None => seq,
    })
}

fn read_rois(path: &Path, height: usize, width: usize) -> Result<Vec<Roi>> {
    let labels = read_label_map(path)?;
    if labels.map.dim() != (height, width) {
        return Err(BaldError::DimensionMismatch {
            expected: format!("{height}x{width} label map"),
            found: format!("{}x{}", labels.map.nrows(), labels.map.ncols()),
        })
        .with_context(|| format!("reading {}", path.display()));
    }
    Ok(labels.rois()?)
}

fn default_curve_path(out: &Path) -> PathBuf {
    out.with_extension("curve.csv")
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let (spec, spec_name) = match &a.spec {
        Some(p) => (read_phantom_spec(p)?, file_name(p)),
        None => (parse_phantom_spec(DEFAULT_PHANTOM)?, "builtin".to_string()),
    };
    let clean = generate_phantom(&spec)?;
    let mut prov = Provenance::new("simulate")
        .with("spec", &spec_name)
        .with("noise", a.noise.to_string())
        .with("seed", a.seed);
    let noisy = match a.noise {
        NoiseArg::None => clean.clone(),
        NoiseArg::Rician => {
            prov = prov.with("level", a.level);
            add_rician_noise(&clean, a.level, a.seed)?
        }
        NoiseArg::Model(id) => add_model_noise(&clean, id, a.seed)?,
    };
    write_container(&a.out, &Container::sequence(noisy, prov))?;
    if let Some(p) = &a.clean_out {
        let prov = Provenance::new("simulate")
            .with("spec", &spec_name)
            .with("noise", "none");
        write_container(p, &Container::sequence(clean, prov))?;
    }
    if let Some(p) = &a.labels_out {
        let names: BTreeMap<u32, String> = spec.label_names().into_iter().collect();
        write_label_map(p, &LabelMap::new(spec.labels(), names))?;
    }
    Ok(())
}

pub fn denoise(a: &DenoiseArgs) -> Result<()> {
    let params = BaldParams {
        t1: a.t1,
        t2: a.t2,
        patch_size: a.patch,
        stride: a.stride,
        ..BaldParams::default()
    };
    params.validate()?;
    let curve_in = a.curve_in.as_deref().map(read_curve).transpose()?;
    let (seq, source) = read_sequence(&a.input)?;
    let out = match &curve_in {
        Some(curve) => bald_with_curve(&seq, curve, &params)?,
        None => bald(&seq, &params).context("denoising")?,
    };
    let curve_path = a.curve_out.clone().unwrap_or_else(|| default_curve_path(&a.out));
    write_curve(&curve_path, &out.curve)?;
    if out.clamped_forward + out.clamped_inverse > 0 {
        eprintln!(
            "note: {} values clamped by the forward transform, {} by the inverse",
            out.clamped_forward, out.clamped_inverse
        );
    }
    let mut prov = Provenance::new("denoise")
        .with("input", file_name(&a.input))
        .with("t1", a.t1)
        .with("t2", a.t2)
        .with("patch", a.patch)
        .with("stride", a.stride)
        .with("curve_in", a.curve_in.as_deref().map(file_name))
        .with("sigma_target", out.curve.sigma_target())
        .with("clamped_forward", out.clamped_forward)
        .with("clamped_inverse", out.clamped_inverse)
        .with("source", &source);
    prov.noise_curve = Some(file_name(&curve_path));
    write_container(&a.out, &Container::sequence(out.sequence, prov))?;
    Ok(())
}

pub fn fit(a: &FitArgs) -> Result<()> {
    let pools = PoolSet::from_names(&a.pools)?;
    if a.max_iterations == 0 {
        return Err(UsageError("--max-iterations must be positive".into()).into());
    }
    let (seq, source) = read_sequence(&a.input)?;
    let seq = normalized(seq)?;
    let opts = FitOptions {
        max_iterations: a.max_iterations,
        ..FitOptions::default()
    };
    let maps = contrast_maps(&seq, &pools, &opts)?;
    let failed = maps.failed.iter().filter(|&&f| f).count();
    if failed > 0 {
        eprintln!("note: {failed} pixel fits hit the iteration cap; see the 'failed' map");
    }

    if let (Some(rois), Some(stats_out)) = (&a.rois, &a.stats_out) {
        let rois = read_rois(rois, seq.height(), seq.width())?;
        let mut rows = Vec::new();
        for (name, map) in maps.names.iter().zip(&maps.amplitudes) {
            for roi in &rois {
                rows.push(labelled(roi_stats(map, roi)?, name));
            }
        }
        write_text(stats_out, &roi_stats_to_csv(&rows))?;
    }

    let mut names = maps.names.clone();
    let mut planes = maps.amplitudes.clone();
    names.extend(["water_shift", "residual_norm", "failed"].map(String::from));
    planes.push(maps.water_shift);
    planes.push(maps.residual_norm);
    planes.push(maps.failed.mapv(|f| f as u8 as f64));
    let prov = Provenance::new("fit")
        .with("input", file_name(&a.input))
        .with("pools", &a.pools)
        .with("max_iterations", a.max_iterations)
        .with("source", &source);
    write_container(&a.out, &Container::maps(names, &planes, prov)?)?;
    Ok(())
}

fn labelled(mut s: RoiStats, map: &str) -> RoiStats {
    s.label = format!("{map}:{}", s.label);
    s
}

pub fn aptw(a: &AptwArgs) -> Result<()> {
    let (seq, source) = read_sequence(&a.input)?;
    let map = aptw_map(&normalized(seq)?)?;
    let prov = Provenance::new("aptw")
        .with("input", file_name(&a.input))
        .with("source", &source);
    write_container(&a.out, &Container::maps(vec!["aptw".into()], &[map.values], prov)?)?;
    Ok(())
}

fn roi_psnr(reference: &SpectralSequence, test: &SpectralSequence, roi: &Roi, peak: Option<f64>) -> Result<f64> {
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (r, t) in reference
        .frames()
        .axis_iter(Axis(0))
        .zip(test.frames().axis_iter(Axis(0)))
    {
        for &rc in roi.pixels() {
            a.push(r[rc]);
            b.push(t[rc]);
        }
    }
    Ok(psnr_values(&a, &b, peak)?)
}

fn foreground_max(seq: &SpectralSequence) -> f64 {
    seq.frames()
        .indexed_iter()
        .filter(|((_, r, c), _)| seq.is_foreground(*r, *c))
        .fold(f64::NEG_INFINITY, |m, (_, &v)| m.max(v))
}

fn table(rows: &[(String, f64)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(6);
    let mut s = format!("{:<width$}  value\n", "metric");
    for (name, v) in rows {
        s.push_str(&format!("{name:<width$}  {v:.6}\n"));
    }
    s
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    if let Some(p) = a.peak {
        if !(p > 0.0 && p.is_finite()) {
            return Err(UsageError(format!("--peak must be positive, got {p}")).into());
        }
    }
    let reference = read_container(&a.reference).with_context(|| format!("reading {}", a.reference.display()))?;
    let test = read_container(&a.test).with_context(|| format!("reading {}", a.test.display()))?;
    let mut rows: Vec<(String, f64)> = Vec::new();
    match (&reference.payload, &test.payload) {
        (Payload::Sequence(r), Payload::Sequence(t)) => {
            rows.push(("psnr".into(), psnr(r, t, a.peak)?));
            if let Some(p) = &a.rois {
                let peak = a.peak.or_else(|| Some(foreground_max(r)));
                for roi in read_rois(p, r.height(), r.width())? {
                    rows.push((format!("psnr:{}", roi.label()), roi_psnr(r, t, &roi, peak)?));
                }
            }
            if a.stats_out.is_some() {
                return Err(UsageError("--stats-out needs map containers".into()).into());
            }
        }
        (Payload::Maps { names, data }, Payload::Maps { .. }) => {
            let (h, w) = (data.dim().1, data.dim().2);
            let rois = a
                .rois
                .as_deref()
                .map(|p| read_rois(p, h, w))
                .transpose()?
                .unwrap_or_default();
            let mut stats = Vec::new();
            for (i, name) in names.iter().enumerate() {
                let Some(t) = test.map(name) else { continue };
                let r = data.slice(s![i, .., ..]).to_owned();
                let ref_max = r.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                if a.peak.is_none() && (ref_max.is_nan() || ref_max <= 0.0) {
                    eprintln!("note: skipping map '{name}': reference has no positive peak (use --peak)");
                    continue;
                }
                let peak = a.peak.or(Some(ref_max));
                rows.push((format!("psnr:{name}"), psnr_map(&r, &t, None, peak)?));
                for roi in &rois {
                    let mask = Array2::from_shape_fn((h, w), |rc| roi.pixels().contains(&rc));
                    rows.push((
                        format!("psnr:{name}:{}", roi.label()),
                        psnr_map(&r, &t, Some(&mask), peak)?,
                    ));
                    // Identical constant samples have no defined p-value.
                    let p = welch_t_test(&roi_values(&r, roi)?, &roi_values(&t, roi)?).map_or(f64::NAN, |w| w.p);
                    rows.push((format!("welch_p:{name}:{}", roi.label()), p));
                    stats.push(labelled(roi_stats(&t, roi)?, name));
                }
            }
            if rows.is_empty() {
                return Err(UsageError("the containers share no map names".into()).into());
            }
            if let Some(p) = &a.stats_out {
                write_text(p, &roi_stats_to_csv(&stats))?;
            }
        }
        _ => return Err(UsageError("cannot compare a sequence with a map container".into()).into()),
    }
    let csv = metrics_to_csv(&rows);
    match a.format {
        Format::Csv => print!("{csv}"),
        Format::Table => print!("{}", table(&rows)),
    }
    if let Some(p) = &a.out {
        write_text(p, &csv)?;
    }
    Ok(())
}

pub fn import_nifti(a: &ImportNiftiArgs) -> Result<()> {
    let offsets = match (a.offsets.is_empty(), a.grid.as_slice()) {
        (false, []) => a.offsets.clone(),
        (true, &[start, stop, step]) => OffsetGrid { start, stop, step }.offsets()?,
        _ => return Err(UsageError("give either --offsets or --grid start,stop,step".into()).into()),
    };
    let (_, volume) = read_nifti(&a.input)?;
    let n = volume.dim().0;
    let (frames, m0) = match a.m0_frame {
        Some(k) if k >= n => return Err(UsageError(format!("--m0-frame {k} is out of range for {n} volumes")).into()),
        Some(k) => {
            let keep: Vec<usize> = (0..n).filter(|&i| i != k).collect();
            (
                volume.select(Axis(0), &keep),
                Some(volume.index_axis(Axis(0), k).to_owned()),
            )
        }
        None => (volume, None),
    };
    if frames.dim().0 != offsets.len() {
        return Err(UsageError(format!(
            "{} offsets given for {} saturated volumes",
            offsets.len(),
            frames.dim().0
        ))
        .into());
    }
    let mut seq = SpectralSequence::new(offsets, frames)?;
    if let Some(m0) = m0 {
        seq = seq.with_m0(m0)?;
    }
    let prov = Provenance::new("import-nifti")
        .with("input", file_name(&a.input))
        .with("m0_frame", a.m0_frame);
    write_container(&a.out, &Container::sequence(seq, prov))?;
    Ok(())
}
