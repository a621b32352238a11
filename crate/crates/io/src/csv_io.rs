//! CSV tables: noise curves (`intensity,sigma`), metrics (`metric,value`)
//! and ROI statistics (`roi,n,mean,std,q1,q2,q3`).

use std::fs;
use std::path::Path;

use bald_core::eval::RoiStats;
use bald_core::NoiseCurve;

use crate::error::{IoError, Result};

pub const CURVE_HEADER: [&str; 2] = ["intensity", "sigma"];
pub const METRICS_HEADER: [&str; 2] = ["metric", "value"];
pub const ROI_HEADER: [&str; 7] = ["roi", "n", "mean", "std", "q1", "q2", "q3"];

/// Upper bound on knots accepted from a file.
pub const MAX_KNOTS: usize = 1 << 20;

fn to_string(mut w: csv::Writer<Vec<u8>>) -> String {
    w.flush().expect("in-memory write");
    String::from_utf8(w.into_inner().expect("in-memory write")).expect("csv output is UTF-8")
}

pub fn curve_to_csv(curve: &NoiseCurve) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CURVE_HEADER).expect("in-memory write");
    for &(u, g) in curve.knots() {
        w.write_record([u.to_string(), g.to_string()]).expect("in-memory write");
    }
    to_string(w)
}

/// Parses a noise curve. Knots must be strictly increasing in intensity with
/// positive deviations.
pub fn parse_curve_csv(text: &str) -> Result<NoiseCurve> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| IoError::format("noise curve", e.to_string()))?;
    if header.iter().collect::<Vec<_>>() != CURVE_HEADER {
        return Err(IoError::format("noise curve", "header must be 'intensity,sigma'"));
    }
    let mut knots = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| IoError::format("noise curve", e.to_string()))?;
        if knots.len() >= MAX_KNOTS {
            return Err(IoError::format("noise curve", "too many knots"));
        }
        let field = |j: usize| -> Result<f64> {
            rec.get(j)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| IoError::format("noise curve", format!("row {}: bad number", i + 2)))
        };
        if rec.len() != 2 {
            return Err(IoError::format(
                "noise curve",
                format!("row {}: expected 2 fields", i + 2),
            ));
        }
        knots.push((field(0)?, field(1)?));
    }
    Ok(NoiseCurve::from_knots(knots)?)
}

pub fn read_curve(path: &Path) -> Result<NoiseCurve> {
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    parse_curve_csv(&text)
}

pub fn write_curve(path: &Path, curve: &NoiseCurve) -> Result<()> {
    fs::write(path, curve_to_csv(curve)).map_err(|e| IoError::io(path, e))
}

/// `metric,value` rows; infinite values print as `inf`.
pub fn metrics_to_csv(rows: &[(String, f64)]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(METRICS_HEADER).expect("in-memory write");
    for (name, v) in rows {
        w.write_record([name.clone(), v.to_string()]).expect("in-memory write");
    }
    to_string(w)
}

pub fn roi_stats_to_csv(rows: &[RoiStats]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(ROI_HEADER).expect("in-memory write");
    for s in rows {
        w.write_record([
            s.label.clone(),
            s.n.to_string(),
            s.mean.to_string(),
            s.std.to_string(),
            s.q1.to_string(),
            s.q2.to_string(),
            s.q3.to_string(),
        ])
        .expect("in-memory write");
    }
    to_string(w)
}
