use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

use super::curve::CurvePoint;
use super::seg::{mean_iou, DetectionRate};

pub const CURVE_CSV: &str = "curve.csv";
pub const SUMMARY_CSV: &str = "summary.csv";

const CLASS_NAMES: [&str; 3] = ["background", "target", "distractor"];

/// Metrics of one evaluation. Detection runs fill `curve` and `lamr`,
/// segmentation runs fill `iou_per_class` and `detection_rate`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub curve: Vec<CurvePoint>,
    pub lamr: Option<f64>,
    pub iou_per_class: Vec<Option<f64>>,
    pub detection_rate: Option<DetectionRate>,
}

fn class_name(c: usize) -> String {
    CLASS_NAMES
        .get(c)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("class{c}"))
}

impl MetricReport {
    pub fn mean_iou(&self) -> Option<f64> {
        mean_iou(&self.iou_per_class)
    }

    /// `(metric, value)` rows; `None` marks an undefined value.
    pub fn summary_rows(&self) -> Vec<(String, Option<f64>)> {
        let mut rows = Vec::new();
        if let Some(lamr) = self.lamr {
            rows.push(("lamr".to_string(), Some(lamr)));
        }
        if !self.iou_per_class.is_empty() {
            for (c, v) in self.iou_per_class.iter().enumerate() {
                rows.push((format!("iou_{}", class_name(c)), *v));
            }
            rows.push(("mean_iou".to_string(), self.mean_iou()));
        }
        if let Some(dr) = &self.detection_rate {
            rows.push(("detection_rate_avg".to_string(), Some(dr.avg)));
            for (k, v) in dr.by_threshold.iter().enumerate() {
                rows.push((format!("detection_rate_0.{}", k + 1), Some(*v)));
            }
        }
        rows
    }

    pub fn curve_csv(&self) -> String {
        let mut out = String::from("fppi,miss_rate\n");
        for p in &self.curve {
            let _ = writeln!(out, "{},{}", p.fppi, p.miss_rate);
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (name, v) in self.summary_rows() {
            match v {
                Some(v) => {
                    let _ = writeln!(out, "{name},{v}");
                }
                None => {
                    let _ = writeln!(out, "{name},undefined");
                }
            }
        }
        out
    }

    /// Aligned two-column table of the summary rows.
    pub fn summary_table(&self) -> String {
        let rows = self.summary_rows();
        let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(6).max(6);
        let mut out = format!("{:<width$}  value\n", "metric");
        for (name, v) in rows {
            let v = v.map_or("undefined".to_string(), |v| format!("{v:.4}"));
            let _ = writeln!(out, "{name:<width$}  {v}");
        }
        out
    }

    /// Writes the curve (detection only) and summary CSV files into `dir`.
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        if self.lamr.is_some() {
            let p = dir.join(CURVE_CSV);
            std::fs::write(&p, self.curve_csv()).map_err(|e| Error::io(&p, e))?;
        }
        let p = dir.join(SUMMARY_CSV);
        std::fs::write(&p, self.summary_csv()).map_err(|e| Error::io(&p, e))
    }
}
