//! Boundary benchmark: thinning, tolerance-based correspondence against
//! several human labelings, precision/recall curves and ODS / OIS / AP.

mod correspond;
mod thin;

use std::fmt::Write as _;

use rayon::prelude::*;

pub use correspond::{correspond, match_pixels, match_radius, MatchCounts, DEFAULT_TOLERANCE};
pub use thin::{thin, BinaryMap};

use crate::error::{Error, Result};
use crate::raster::RasterImage;

/// Default number of evenly spaced thresholds in (0, 1).
pub const DEFAULT_THRESHOLD_COUNT: usize = 33;

/// `count` thresholds `k / (count + 1)`, `k = 1..=count`.
pub fn default_thresholds(count: usize) -> Vec<f64> {
    (1..=count).map(|k| k as f64 / (count + 1) as f64).collect()
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision, recall and F-measure of a set of counts.
pub fn prf(c: MatchCounts) -> (f64, f64, f64) {
    let p = ratio(c.tp, c.tp + c.fp);
    let r = ratio(c.tp, c.tp + c.fn_);
    let f = if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    };
    (p, r, f)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PRPoint {
    pub threshold: f64,
    pub counts: MatchCounts,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

impl PRPoint {
    pub fn new(threshold: f64, counts: MatchCounts) -> Self {
        let (precision, recall, f_measure) = prf(counts);
        Self {
            threshold,
            counts,
            precision,
            recall,
            f_measure,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PRCurve {
    pub points: Vec<PRPoint>,
}

impl PRCurve {
    pub fn thresholds(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.threshold).collect()
    }
}

/// Binarize `map` at each threshold, thin, and match against `gt_maps`.
pub fn pr_curve(
    map: &RasterImage,
    gt_maps: &[BinaryMap],
    thresholds: &[f64],
    tolerance: f64,
) -> Result<PRCurve> {
    if !(tolerance > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    if gt_maps.is_empty() {
        return Err(Error::invalid("at least one ground-truth map is required"));
    }
    if let Some(g) = gt_maps.iter().find(|g| g.dims() != map.dims()) {
        return Err(Error::invalid(format!(
            "ground truth is {}x{} but the map is {}x{}",
            g.height(),
            g.width(),
            map.height(),
            map.width()
        )));
    }
    let points = thresholds
        .par_iter()
        .map(|&t| {
            let edges = thin(&BinaryMap::threshold(map, t));
            PRPoint::new(t, correspond(&edges, gt_maps, tolerance))
        })
        .collect();
    Ok(PRCurve { points })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkScores {
    pub ods_f: f64,
    pub ods_threshold: f64,
    pub ois_f: f64,
    pub ap: f64,
    /// Dataset-level curve from counts summed over images.
    pub dataset_curve: PRCurve,
    pub per_image: Vec<PRCurve>,
}

fn pooled_f(curves: &[PRCurve], choice: &[usize]) -> (f64, MatchCounts) {
    let total = curves
        .iter()
        .zip(choice)
        .fold(MatchCounts::default(), |acc, (c, &t)| {
            acc.add(c.points[t].counts)
        });
    (prf(total).2, total)
}

/// Improve per-image threshold choices one image at a time until no single
/// change raises the pooled F. Never returns a worse assignment than `start`.
fn coordinate_ascent(curves: &[PRCurve], mut choice: Vec<usize>) -> (f64, Vec<usize>) {
    let (mut best, mut total) = pooled_f(curves, &choice);
    loop {
        let mut improved = false;
        for (i, curve) in curves.iter().enumerate() {
            let cur = curve.points[choice[i]].counts;
            for (t, p) in curve.points.iter().enumerate() {
                let cand = MatchCounts {
                    tp: total.tp - cur.tp + p.counts.tp,
                    fp: total.fp - cur.fp + p.counts.fp,
                    fn_: total.fn_ - cur.fn_ + p.counts.fn_,
                };
                let f = prf(cand).2;
                if f > best {
                    best = f;
                    total = cand;
                    choice[i] = t;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            return (best, choice);
        }
    }
}

/// Interpolated-precision area under a curve, integrated over recall by
/// trapezoids from recall 0.
pub fn average_precision(points: &[PRPoint]) -> f64 {
    let mut pr: Vec<(f64, f64)> = points.iter().map(|p| (p.recall, p.precision)).collect();
    if pr.is_empty() {
        return 0.0;
    }
    pr.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    // interpolated precision: best precision at this recall or beyond
    for i in (0..pr.len() - 1).rev() {
        pr[i].1 = pr[i].1.max(pr[i + 1].1);
    }
    let mut area = 0.0;
    let mut prev = (0.0, pr[0].1);
    for &(r, p) in &pr {
        area += (r - prev.0) * (p + prev.1) / 2.0;
        prev = (r, p);
    }
    area.clamp(0.0, 1.0)
}

/// ODS (best F of counts summed over images at one shared threshold), OIS
/// (best pooled F with a threshold per image) and AP of the summed curve.
pub fn aggregate(per_image: Vec<PRCurve>) -> Result<BenchmarkScores> {
    let first = per_image
        .first()
        .ok_or_else(|| Error::invalid("benchmark needs at least one image"))?;
    let thresholds = first.thresholds();
    if thresholds.is_empty() {
        return Err(Error::invalid("benchmark needs at least one threshold"));
    }
    if per_image.iter().any(|c| c.thresholds() != thresholds) {
        return Err(Error::invalid("all curves must share the same thresholds"));
    }
    let n = thresholds.len();
    let dataset_curve = PRCurve {
        points: (0..n)
            .map(|t| {
                let total = per_image
                    .iter()
                    .fold(MatchCounts::default(), |acc, c| acc.add(c.points[t].counts));
                PRPoint::new(thresholds[t], total)
            })
            .collect(),
    };
    let (ods_idx, ods_point) = dataset_curve.points.iter().enumerate().fold(
        (0, &dataset_curve.points[0]),
        |best, (i, p)| {
            if p.f_measure > best.1.f_measure {
                (i, p)
            } else {
                best
            }
        },
    );
    let ods_f = ods_point.f_measure;

    let own_best: Vec<usize> = per_image
        .iter()
        .map(|c| {
            let mut best = 0;
            for (t, p) in c.points.iter().enumerate() {
                if p.f_measure > c.points[best].f_measure {
                    best = t;
                }
            }
            best
        })
        .collect();
    let (from_shared, _) = coordinate_ascent(&per_image, vec![ods_idx; per_image.len()]);
    let (from_own, _) = coordinate_ascent(&per_image, own_best);
    let ois_f = from_shared.max(from_own);

    Ok(BenchmarkScores {
        ods_f,
        ods_threshold: thresholds[ods_idx],
        ois_f,
        ap: average_precision(&dataset_curve.points),
        dataset_curve,
        per_image,
    })
}

/// Flat `key=value` report; `header` lines are emitted first as `# ` comments.
pub fn format_report(scores: &BenchmarkScores, header: &[String]) -> String {
    let mut s = String::new();
    for line in header {
        let _ = writeln!(s, "# {line}");
    }
    let _ = writeln!(s, "ods_f={:.6}", scores.ods_f);
    let _ = writeln!(s, "ods_threshold={:.6}", scores.ods_threshold);
    let _ = writeln!(s, "ois_f={:.6}", scores.ois_f);
    let _ = writeln!(s, "ap={:.6}", scores.ap);
    s
}

/// Dataset-level PR curve as CSV, one row per threshold.
pub fn format_pr_csv(curve: &PRCurve) -> String {
    let mut s = String::from("threshold,tp,fp,fn,precision,recall,f\n");
    for p in &curve.points {
        let _ = writeln!(
            s,
            "{:.6},{},{},{},{:.6},{:.6},{:.6}",
            p.threshold, p.counts.tp, p.counts.fp, p.counts.fn_, p.precision, p.recall, p.f_measure
        );
    }
    s
}
