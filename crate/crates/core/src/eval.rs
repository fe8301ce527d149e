//! Mode-separation metrics and scatter plots.
//!
//! Separation is scored by nearest-center assignment: a generated sample
//! "belongs" to the mode whose ground-truth center is Euclidean-closest,
//! and `condition_consistency` is the fraction of samples assigned to their
//! own conditioning class. `centroid_shift` reports how far each class's
//! empirical centroid drifted from its center; it is diagnostic, not
//! thresholded.

use crate::data::MixtureSpec;
use crate::error::{Error, Result};
use crate::point::Point2;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class_id: usize,
    pub count: usize,
    pub consistency: f64,
    pub centroid_shift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub condition_consistency: f64,
    pub centroid_shift: f64,
    pub per_class: Vec<ClassMetrics>,
}

/// Nearest ground-truth center for each sample; ties break to the lowest
/// class index.
pub fn assign_modes(samples: &[(Point2, usize)], spec: &MixtureSpec) -> Vec<usize> {
    samples
        .iter()
        .map(|&(p, _)| nearest_center(p, spec))
        .collect()
}

fn nearest_center(p: Point2, spec: &MixtureSpec) -> usize {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (k, c) in spec.centers.iter().enumerate() {
        let d = (p - *c).norm_sq();
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    best
}

fn check_buckets(samples_by_class: &[Vec<Point2>], spec: &MixtureSpec) -> Result<()> {
    if samples_by_class.len() != spec.num_classes() {
        return Err(Error::InvalidInput(format!(
            "expected {} condition buckets, got {}",
            spec.num_classes(),
            samples_by_class.len()
        )));
    }
    if let Some(k) = samples_by_class.iter().position(|b| b.is_empty()) {
        return Err(Error::InvalidInput(format!("empty bucket for class {k}")));
    }
    Ok(())
}

/// Fraction of samples whose nearest center matches their conditioning
/// class.
pub fn condition_consistency(
    samples_by_class: &[Vec<Point2>],
    spec: &MixtureSpec,
) -> Result<f64> {
    check_buckets(samples_by_class, spec)?;
    let mut hits = 0usize;
    let mut total = 0usize;
    for (k, bucket) in samples_by_class.iter().enumerate() {
        hits += bucket.iter().filter(|&&p| nearest_center(p, spec) == k).count();
        total += bucket.len();
    }
    Ok(hits as f64 / total as f64)
}

/// Mean over classes of ‖empirical centroid − ground-truth center‖.
pub fn centroid_shift(samples_by_class: &[Vec<Point2>], spec: &MixtureSpec) -> Result<f64> {
    check_buckets(samples_by_class, spec)?;
    let mut sum = 0.0;
    for (k, bucket) in samples_by_class.iter().enumerate() {
        let centroid = bucket
            .iter()
            .fold(Point2::ZERO, |a, p| a + *p)
            .scale(1.0 / bucket.len() as f64);
        sum += centroid.dist(spec.centers[k]);
    }
    Ok(sum / spec.num_classes() as f64)
}

/// Full report: overall consistency and shift plus the per-class breakdown.
pub fn compute_metrics(
    samples_by_class: &[Vec<Point2>],
    spec: &MixtureSpec,
) -> Result<MetricsReport> {
    check_buckets(samples_by_class, spec)?;
    let mut per_class = Vec::with_capacity(spec.num_classes());
    for (k, bucket) in samples_by_class.iter().enumerate() {
        let hits = bucket.iter().filter(|&&p| nearest_center(p, spec) == k).count();
        let centroid = bucket
            .iter()
            .fold(Point2::ZERO, |a, p| a + *p)
            .scale(1.0 / bucket.len() as f64);
        per_class.push(ClassMetrics {
            class_id: k,
            count: bucket.len(),
            consistency: hits as f64 / bucket.len() as f64,
            centroid_shift: centroid.dist(spec.centers[k]),
        });
    }
    Ok(MetricsReport {
        condition_consistency: condition_consistency(samples_by_class, spec)?,
        centroid_shift: centroid_shift(samples_by_class, spec)?,
        per_class,
    })
}

// ---------------------------------------------------------------------------
// SVG rendering
// ---------------------------------------------------------------------------

const VIEW: f64 = 4.0; // world viewport [-4, 4]²
const SIZE: f64 = 640.0;

fn to_px(p: Point2) -> (f64, f64) {
    (
        (p.x + VIEW) / (2.0 * VIEW) * SIZE,
        (VIEW - p.y) / (2.0 * VIEW) * SIZE,
    )
}

/// Distinct fill color per class: evenly spaced hues.
pub fn class_color(class_id: usize, num_classes: usize) -> String {
    let hue = (360 * class_id) / num_classes.max(1);
    format!("hsl({hue},70%,45%)")
}

/// Render one scatter panel: one color per condition, ground-truth centers
/// as crosses, fixed [-4,4]² viewport. Pure function of its inputs, so the
/// byte output is deterministic.
pub fn render_scatter_svg(samples_by_class: &[Vec<Point2>], spec: &MixtureSpec) -> String {
    let mut svg = String::with_capacity(1 << 16);
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{s}\" height=\"{s}\" viewBox=\"0 0 {s} {s}\">\n",
        s = SIZE
    ));
    svg.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{s}\" height=\"{s}\" fill=\"white\" stroke=\"#444\"/>\n",
        s = SIZE
    ));
    // axes through the origin
    let (ox, oy) = to_px(Point2::ZERO);
    svg.push_str(&format!(
        "<line x1=\"0\" y1=\"{oy:.3}\" x2=\"{s}\" y2=\"{oy:.3}\" stroke=\"#ddd\"/>\n<line x1=\"{ox:.3}\" y1=\"0\" x2=\"{ox:.3}\" y2=\"{s}\" stroke=\"#ddd\"/>\n",
        s = SIZE
    ));
    let k = spec.num_classes();
    for (class_id, bucket) in samples_by_class.iter().enumerate() {
        let color = class_color(class_id, k);
        for p in bucket {
            let (x, y) = to_px(*p);
            svg.push_str(&format!(
                "<circle cx=\"{x:.3}\" cy=\"{y:.3}\" r=\"2.5\" fill=\"{color}\" fill-opacity=\"0.6\"/>\n"
            ));
        }
    }
    for center in &spec.centers {
        let (x, y) = to_px(*center);
        svg.push_str(&format!(
            "<path d=\"M {x0:.3} {y0:.3} L {x1:.3} {y1:.3} M {x0:.3} {y1:.3} L {x1:.3} {y0:.3}\" stroke=\"black\" stroke-width=\"2\"/>\n",
            x0 = x - 6.0,
            y0 = y - 6.0,
            x1 = x + 6.0,
            y1 = y + 6.0,
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn emit_scatter_svg(
    samples_by_class: &[Vec<Point2>],
    spec: &MixtureSpec,
    path: &Path,
) -> Result<()> {
    let svg = render_scatter_svg(samples_by_class, spec);
    crate::data::write_atomic(path, svg.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::build_ring_mixture;

    fn two_centers() -> MixtureSpec {
        MixtureSpec {
            centers: vec![Point2::new(1.0, 0.0), Point2::new(-1.0, 0.0)],
            std: 0.1,
        }
    }

    #[test]
    fn assign_modes_basics() {
        let spec = build_ring_mixture(6, 2.0, 0.1).unwrap();
        // exactly at center k -> label k
        for k in 0..6 {
            assert_eq!(assign_modes(&[(spec.centers[k], k)], &spec), vec![k]);
        }
        // exact ties break to the lowest index; use exactly representable
        // centers so the tie is a true float equality
        let square = MixtureSpec {
            centers: vec![
                Point2::new(1.0, 0.0),
                Point2::new(0.0, 1.0),
                Point2::new(-1.0, 0.0),
                Point2::new(0.0, -1.0),
            ],
            std: 0.1,
        };
        // (0.5, -0.5) is equidistant between centers 0 and 3 -> label 0
        assert_eq!(assign_modes(&[(Point2::new(0.5, -0.5), 1)], &square), vec![0]);
        // the origin ties all four centers -> label 0
        assert_eq!(assign_modes(&[(Point2::ZERO, 2)], &square), vec![0]);
        // two-center case
        let spec2 = two_centers();
        assert_eq!(assign_modes(&[(Point2::new(0.2, 0.0), 0)], &spec2), vec![0]);
    }

    #[test]
    fn consistency_hand_example() {
        let spec = two_centers();
        let buckets = vec![
            vec![
                Point2::new(0.9, 0.1),
                Point2::new(1.1, -0.1),
                Point2::new(-0.8, 0.0),
            ],
            vec![Point2::new(-1.0, 0.0)],
        ];
        // class 0: 2 of 3 nearest to (+1,0); class 1: 1 of 1 -> 3/4 overall
        let c = condition_consistency(&buckets, &spec).unwrap();
        assert!((c - 0.75).abs() < 1e-12);
        let report = compute_metrics(&buckets, &spec).unwrap();
        assert!((report.per_class[0].consistency - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(report.per_class[0].count, 3);
    }

    #[test]
    fn consistency_extremes() {
        let spec = build_ring_mixture(4, 2.0, 0.1).unwrap();
        let perfect: Vec<Vec<Point2>> = spec.centers.iter().map(|c| vec![*c; 5]).collect();
        assert_eq!(condition_consistency(&perfect, &spec).unwrap(), 1.0);
        assert_eq!(centroid_shift(&perfect, &spec).unwrap(), 0.0);
        // uniformly random labels hit ~1/K: emulate by putting the same
        // symmetric point set in every bucket (each center equally close)
        let everywhere: Vec<Vec<Point2>> = (0..4).map(|_| spec.centers.clone()).collect();
        let c = condition_consistency(&everywhere, &spec).unwrap();
        assert!((c - 0.25).abs() < 1e-12);
    }

    #[test]
    fn centroid_shift_hand_examples() {
        let spec = MixtureSpec {
            centers: vec![Point2::new(2.0, 0.0), Point2::new(-2.0, 0.0)],
            std: 0.1,
        };
        // symmetric cancellation
        let buckets = vec![
            vec![Point2::new(1.0, 0.0), Point2::new(3.0, 0.0)],
            vec![Point2::new(-2.0, 0.0)],
        ];
        assert_eq!(centroid_shift(&buckets, &spec).unwrap(), 0.0);
        // single displaced sample
        let buckets2 = vec![vec![Point2::new(3.0, 0.0)], vec![Point2::new(-2.0, 0.0)]];
        assert!((centroid_shift(&buckets2, &spec).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn empty_bucket_rejected() {
        let spec = two_centers();
        let buckets = vec![vec![Point2::ZERO], vec![]];
        assert!(condition_consistency(&buckets, &spec).is_err());
        assert!(centroid_shift(&buckets, &spec).is_err());
        assert!(compute_metrics(&buckets, &spec).is_err());
    }

    #[test]
    fn metrics_bounds() {
        let spec = build_ring_mixture(6, 2.0, 0.18).unwrap();
        let ds = crate::data::sample_clean(&spec, 200, 3);
        let mut buckets = vec![Vec::new(); 6];
        for r in &ds.records {
            buckets[r.class_id].push(r.x0);
        }
        let report = compute_metrics(&buckets, &spec).unwrap();
        assert!((0.0..=1.0).contains(&report.condition_consistency));
        assert!(report.centroid_shift >= 0.0 && report.centroid_shift.is_finite());
    }

    #[test]
    fn svg_deterministic_with_distinct_colors() {
        let spec = build_ring_mixture(6, 2.0, 0.18).unwrap();
        let ds = crate::data::sample_clean(&spec, 30, 9);
        let mut buckets = vec![Vec::new(); 6];
        for r in &ds.records {
            buckets[r.class_id].push(r.x0);
        }
        let a = render_scatter_svg(&buckets, &spec);
        let b = render_scatter_svg(&buckets, &spec);
        assert_eq!(a, b);
        let mut colors: Vec<&str> = a
            .split("fill=\"")
            .skip(1)
            .map(|s| s.split('"').next().unwrap())
            .filter(|c| c.starts_with("hsl"))
            .collect();
        colors.sort_unstable();
        colors.dedup();
        assert_eq!(colors.len(), 6, "expected 6 distinct fill colors");
    }

    #[test]
    fn svg_empty_sample_set_draws_frame_and_centers() {
        let spec = build_ring_mixture(3, 2.0, 0.18).unwrap();
        let buckets: Vec<Vec<Point2>> = vec![vec![], vec![], vec![]];
        let svg = render_scatter_svg(&buckets, &spec);
        assert!(!svg.contains("<circle"));
        assert_eq!(svg.matches("<path").count(), 3);
        assert!(svg.contains("<rect"));
    }
}
