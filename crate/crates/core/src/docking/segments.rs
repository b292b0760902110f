//! Deterministic split-and-merge line extraction over an angle-ordered scan.

use serde::{Deserialize, Serialize};

use crate::geometry::{angle_diff, Point2};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineSegment {
    pub a: Point2,
    pub b: Point2,
    /// Beam indices of the supporting points.
    pub inliers: Vec<usize>,
    pub rms_residual: f64,
}

impl LineSegment {
    pub fn length(&self) -> f64 {
        self.a.distance(self.b)
    }

    pub fn direction(&self) -> f64 {
        (self.b - self.a).angle()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractConfig {
    pub split_tolerance: f64,
    /// Radians.
    pub merge_angle: f64,
    pub merge_gap: f64,
    /// Consecutive points further apart than this never share a segment.
    pub break_gap: f64,
    pub min_points: usize,
    pub min_length: f64,
    /// Radius around a prior dock position processed before the rest.
    pub prior_radius: f64,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            split_tolerance: 0.03,
            merge_angle: 5f64.to_radians(),
            merge_gap: 0.10,
            break_gap: 0.25,
            min_points: 4,
            min_length: 0.05,
            prior_radius: 1.5,
        }
    }
}

/// Total least squares line: (centroid, unit direction, rms residual).
pub fn fit_tls(points: &[Point2]) -> (Point2, Point2, f64) {
    let n = points.len() as f64;
    let c = points.iter().fold(Point2::ORIGIN, |acc, p| acc + *p).scale(1.0 / n);
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in points {
        let d = *p - c;
        sxx += d.x * d.x;
        syy += d.y * d.y;
        sxy += d.x * d.y;
    }
    let phi = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let dir = Point2::from_polar(1.0, phi);
    let normal = Point2::new(-dir.y, dir.x);
    let ss: f64 = points.iter().map(|p| (*p - c).dot(normal).powi(2)).sum();
    (c, dir, (ss / n).sqrt())
}

fn make_segment(points: &[(usize, Point2)]) -> LineSegment {
    let pts: Vec<Point2> = points.iter().map(|p| p.1).collect();
    let (c, dir, rms) = fit_tls(&pts);
    let proj = |p: Point2| c + dir.scale((p - c).dot(dir));
    LineSegment {
        a: proj(pts[0]),
        b: proj(pts[pts.len() - 1]),
        inliers: points.iter().map(|p| p.0).collect(),
        rms_residual: rms,
    }
}

/// Recursive split on the chord between the run's end points. The split
/// point is shared by both halves so corners land on both segments.
fn split(points: &[(usize, Point2)], tol: f64, out: &mut Vec<Vec<(usize, Point2)>>) {
    if points.len() < 3 {
        out.push(points.to_vec());
        return;
    }
    let (a, b) = (points[0].1, points[points.len() - 1].1);
    let ab = b - a;
    let len = ab.norm();
    let mut worst = (0, 0.0);
    for (i, p) in points.iter().enumerate().take(points.len() - 1).skip(1) {
        let d = if len > 0.0 { (ab.cross(p.1 - a) / len).abs() } else { p.1.distance(a) };
        if d > worst.1 {
            worst = (i, d);
        }
    }
    if worst.1 > tol {
        split(&points[..=worst.0], tol, out);
        split(&points[worst.0..], tol, out);
    } else {
        out.push(points.to_vec());
    }
}

fn runs(points: &[(usize, Point2)], gap: f64, inside: &dyn Fn(Point2) -> bool) -> Vec<Vec<(usize, Point2)>> {
    let mut out: Vec<Vec<(usize, Point2)>> = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let cont = i > 0 && p.1.distance(points[i - 1].1) <= gap && inside(p.1) == inside(points[i - 1].1);
        if cont {
            out.last_mut().expect("run open").push(*p);
        } else {
            out.push(vec![*p]);
        }
    }
    out
}

fn extract_run(run: &[(usize, Point2)], cfg: &ExtractConfig) -> Vec<LineSegment> {
    let mut pieces = Vec::new();
    split(run, cfg.split_tolerance, &mut pieces);
    // Merge neighbours that are nearly collinear and touch.
    let mut merged: Vec<Vec<(usize, Point2)>> = Vec::new();
    for piece in pieces {
        if let Some(last) = merged.last_mut() {
            let sl = make_segment(last);
            let sp = make_segment(&piece);
            let mut ang = angle_diff(sl.direction(), sp.direction()).abs();
            ang = ang.min(std::f64::consts::PI - ang);
            if ang < cfg.merge_angle && sl.b.distance(sp.a) < cfg.merge_gap {
                let mut union = last.clone();
                let skip = usize::from(union.last().map(|p| p.0) == piece.first().map(|p| p.0));
                union.extend_from_slice(&piece[skip..]);
                if make_segment(&union).rms_residual <= cfg.split_tolerance {
                    *last = union;
                    continue;
                }
            }
        }
        merged.push(piece);
    }
    merged
        .iter()
        .filter(|p| p.len() >= cfg.min_points)
        .map(|p| make_segment(p))
        .filter(|s| s.length() >= cfg.min_length && s.rms_residual <= cfg.split_tolerance)
        .collect()
}

/// Segments from angle-ordered robot-frame points. With a prior dock
/// position, points near it form their own runs and are emitted first.
pub fn extract_segments(points: &[(usize, Point2)], prior: Option<Point2>, cfg: &ExtractConfig) -> Vec<LineSegment> {
    let inside = |p: Point2| prior.is_some_and(|c| p.distance(c) <= cfg.prior_radius);
    let all = runs(points, cfg.break_gap, &inside);
    let (near, far): (Vec<_>, Vec<_>) = all.into_iter().partition(|r| inside(r[0].1));
    near.iter().chain(far.iter()).flat_map(|r| extract_run(r, cfg)).collect()
}
