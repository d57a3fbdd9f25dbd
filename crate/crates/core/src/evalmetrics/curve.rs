use crate::error::{Error, Result};

use super::boxes::{greedy_match, ScoredBox};

/// Miss rates below this are clamped before taking logs.
pub const MISS_RATE_FLOOR: f64 = 1e-4;
/// FPPI reference points sampled by [`log_average_miss_rate`].
pub const LAMR_POINTS: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub fppi: f64,
    pub miss_rate: f64,
}

/// Miss rate against false positives per image, sweeping the score
/// threshold over every distinct prediction score.
///
/// Predictions above a threshold are matched per image in score order, so
/// the matching at a lower threshold extends the one at a higher threshold
/// and a single pass suffices. The point before any prediction is accepted
/// is `(0, 1)`. For each FPPI value only the lowest miss rate is kept, which
/// leaves FPPI strictly increasing and the miss rate non-increasing.
pub fn fppi_missrate_curve(
    preds: &[Vec<ScoredBox>],
    gts: &[Vec<ScoredBox>],
    match_iou: f64,
) -> Result<Vec<CurvePoint>> {
    if !(match_iou > 0.0 && match_iou <= 1.0) {
        return Err(Error::config(format!("match IoU {match_iou} outside (0, 1]")));
    }
    if preds.len() != gts.len() {
        return Err(Error::Eval(format!(
            "{} prediction lists for {} images",
            preds.len(),
            gts.len()
        )));
    }
    let n_gt: usize = gts.iter().map(Vec::len).sum();
    if n_gt == 0 {
        return Err(Error::Eval(
            "miss rate is undefined without ground-truth boxes".into(),
        ));
    }
    let n_img = gts.len() as f64;
    // (score, matched) for every prediction of every image
    let mut events: Vec<(f64, bool)> = Vec::new();
    for (p, g) in preds.iter().zip(gts) {
        for (i, m) in greedy_match(p, g, match_iou) {
            events.push((p[i].score, m.is_some()));
        }
    }
    events.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut raw = vec![CurvePoint {
        fppi: 0.0,
        miss_rate: 1.0,
    }];
    let (mut fp, mut tp) = (0usize, 0usize);
    let mut i = 0;
    while i < events.len() {
        let score = events[i].0;
        while i < events.len() && events[i].0 == score {
            if events[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        raw.push(CurvePoint {
            fppi: fp as f64 / n_img,
            miss_rate: (n_gt - tp) as f64 / n_gt as f64,
        });
    }

    let mut curve: Vec<CurvePoint> = Vec::with_capacity(raw.len());
    for p in raw {
        match curve.last_mut() {
            Some(last) if last.fppi == p.fppi => last.miss_rate = last.miss_rate.min(p.miss_rate),
            _ => curve.push(p),
        }
    }
    Ok(curve)
}

/// FPPI values at which the miss rate is sampled: [`LAMR_POINTS`] points
/// evenly spaced in log10 from `fppi_lo` to `fppi_hi` inclusive.
pub fn lamr_reference_points(fppi_lo: f64, fppi_hi: f64) -> Result<Vec<f64>> {
    if !(fppi_lo > 0.0 && fppi_lo < fppi_hi && fppi_hi.is_finite()) {
        return Err(Error::config(format!(
            "FPPI range [{fppi_lo}, {fppi_hi}] must satisfy 0 < lo < hi"
        )));
    }
    let (lo, hi) = (fppi_lo.log10(), fppi_hi.log10());
    Ok((0..LAMR_POINTS)
        .map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (LAMR_POINTS - 1) as f64))
        .collect())
}

/// Miss rate of the curve at `fppi`: that of the largest curve FPPI not
/// above it, or the first point's if none is.
pub fn miss_rate_at(curve: &[CurvePoint], fppi: f64) -> f64 {
    // tolerate rounding of the log-spaced references
    let limit = fppi * (1.0 + 1e-12);
    curve
        .iter()
        .take_while(|p| p.fppi <= limit)
        .last()
        .unwrap_or(&curve[0])
        .miss_rate
}

/// Geometric mean of the miss rates sampled at the reference points, each
/// clamped to at least [`MISS_RATE_FLOOR`].
pub fn log_average_miss_rate(curve: &[CurvePoint], fppi_lo: f64, fppi_hi: f64) -> Result<f64> {
    if curve.is_empty() {
        return Err(Error::Eval("log-average miss rate of an empty curve".into()));
    }
    let refs = lamr_reference_points(fppi_lo, fppi_hi)?;
    let sum: f64 = refs
        .iter()
        .map(|&r| miss_rate_at(curve, r).max(MISS_RATE_FLOOR).ln())
        .sum();
    Ok((sum / refs.len() as f64).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x: f64, s: f64) -> ScoredBox {
        ScoredBox::new(x, 0.0, 10.0, 10.0, s)
    }

    #[test]
    fn perfect_detector_is_single_origin_point() {
        let gts = vec![vec![b(0.0, 1.0)], vec![b(30.0, 1.0)]];
        let curve = fppi_missrate_curve(&gts, &gts, 0.5).unwrap();
        assert_eq!(curve, vec![CurvePoint { fppi: 0.0, miss_rate: 0.0 }]);
    }

    #[test]
    fn no_predictions_is_full_miss() {
        let gts = vec![vec![b(0.0, 1.0)]];
        let curve = fppi_missrate_curve(&[vec![]], &gts, 0.5).unwrap();
        assert_eq!(curve, vec![CurvePoint { fppi: 0.0, miss_rate: 1.0 }]);
    }

    #[test]
    fn zero_ground_truth_is_an_error() {
        assert!(fppi_missrate_curve(&[vec![b(0.0, 0.5)]], &[vec![]], 0.5).is_err());
    }

    #[test]
    fn empty_curve_is_an_error() {
        assert!(log_average_miss_rate(&[], 1e-2, 1.0).is_err());
    }

    #[test]
    fn references_include_endpoints() {
        let r = lamr_reference_points(1e-2, 1e2).unwrap();
        assert_eq!(r.len(), 9);
        assert!((r[0] - 1e-2).abs() < 1e-15 && (r[8] - 1e2).abs() < 1e-10);
        assert!((r[4] - 1.0).abs() < 1e-12);
        assert!(lamr_reference_points(1.0, 1.0).is_err());
    }
}
