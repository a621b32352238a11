//! Plain-text ROI label maps.
//!
//! ```text
//! # labels: 1=tumor, 2=cnawm
//! 0 0 1 1
//! 0 2 2 1
//! ```
//!
//! One row of whitespace-separated non-negative integers per image row;
//! 0 is background. Other `#` lines are comments. Labels without a name
//! are called `label<N>`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use bald_core::Roi;
use ndarray::Array2;

use crate::error::{IoError, Result};

/// Refuse label maps with more pixels than this.
pub const MAX_PIXELS: usize = 1 << 26;

#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    pub map: Array2<u32>,
    pub names: BTreeMap<u32, String>,
}

fn bad(msg: impl Into<String>) -> IoError {
    IoError::format("label map", msg)
}

impl LabelMap {
    pub fn new(map: Array2<u32>, names: BTreeMap<u32, String>) -> Self {
        Self { map, names }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut names = BTreeMap::new();
        let mut values = Vec::new();
        let mut width = None;
        let mut height = 0usize;
        for line in text.lines() {
            let line = line.trim();
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(spec) = comment.trim().strip_prefix("labels:") {
                    for entry in spec.split(',').map(str::trim).filter(|e| !e.is_empty()) {
                        let (k, v) = entry
                            .split_once('=')
                            .ok_or_else(|| bad(format!("label entry '{entry}' is not N=name")))?;
                        let k: u32 = k.trim().parse().map_err(|_| bad(format!("bad label '{k}'")))?;
                        let v = v.trim();
                        if k == 0 || v.is_empty() {
                            return Err(bad(format!("label entry '{entry}' is invalid")));
                        }
                        if names.insert(k, v.to_string()).is_some() {
                            return Err(bad(format!("label {k} named twice")));
                        }
                    }
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let row: Vec<u32> = line
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| bad(format!("'{t}' is not a label"))))
                .collect::<Result<_>>()?;
            match width {
                None => width = Some(row.len()),
                Some(w) if w != row.len() => {
                    return Err(bad(format!(
                        "row {} has {} entries, expected {w}",
                        height + 1,
                        row.len()
                    )))
                }
                _ => {}
            }
            values.extend(row);
            height += 1;
            if values.len() > MAX_PIXELS {
                return Err(bad("label map is too large"));
            }
        }
        let width = width.ok_or_else(|| bad("no rows"))?;
        let map = Array2::from_shape_vec((height, width), values).expect("rows checked");
        Ok(Self { map, names })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        if !self.names.is_empty() {
            let entries: Vec<String> = self.names.iter().map(|(k, v)| format!("{k}={v}")).collect();
            s.push_str(&format!("# labels: {}\n", entries.join(", ")));
        }
        for row in self.map.rows() {
            let cells: Vec<String> = row.iter().map(u32::to_string).collect();
            s.push_str(&cells.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn name_of(&self, label: u32) -> String {
        self.names
            .get(&label)
            .cloned()
            .unwrap_or_else(|| format!("label{label}"))
    }

    /// One ROI per non-zero label present in the map, in label order.
    pub fn rois(&self) -> Result<Vec<Roi>> {
        let mut present: Vec<u32> = self.map.iter().copied().filter(|&v| v != 0).collect();
        present.sort_unstable();
        present.dedup();
        present
            .into_iter()
            .map(|v| Ok(Roi::from_label_map(self.name_of(v), &self.map, v)?))
            .collect()
    }
}

pub fn read_label_map(path: &Path) -> Result<LabelMap> {
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    LabelMap::parse(&text)
}

pub fn write_label_map(path: &Path, labels: &LabelMap) -> Result<()> {
    fs::write(path, labels.to_text()).map_err(|e| IoError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_round_trip() {
        let text = "# labels: 1=tumor, 2=cnawm\n# a comment\n0 0 1 1\n0 2 2 1\n";
        let lm = LabelMap::parse(text).unwrap();
        assert_eq!(lm.map.dim(), (2, 4));
        assert_eq!(lm.map[[1, 1]], 2);
        assert_eq!(lm.to_text(), "# labels: 1=tumor, 2=cnawm\n0 0 1 1\n0 2 2 1\n");
        let rois = lm.rois().unwrap();
        assert_eq!(rois.len(), 2);
        assert_eq!(rois[0].label(), "tumor");
        assert_eq!(rois[0].len(), 3);
    }

    #[test]
    fn unnamed_labels_get_default_names() {
        let lm = LabelMap::parse("3 3\n0 3\n").unwrap();
        assert_eq!(lm.rois().unwrap()[0].label(), "label3");
    }

    #[test]
    fn rejections() {
        assert!(LabelMap::parse("").is_err());
        assert!(LabelMap::parse("1 2\n1\n").is_err());
        assert!(LabelMap::parse("1 -2\n").is_err());
        assert!(LabelMap::parse("# labels: 0=bg\n1\n").is_err());
        assert!(LabelMap::parse("# labels: 1=a, 1=b\n1\n").is_err());
        assert!(LabelMap::parse("# labels: tumor\n1\n").is_err());
    }
}
