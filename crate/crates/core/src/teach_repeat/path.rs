//! Taught keyframe paths and the densified reference the controllers track.

use crate::geometry::{project_onto_segment, Point2, Pose2};
use crate::graph::{ExperienceGraph, ExperienceId, GraphError, KeyframeId};

#[derive(Debug, Clone, PartialEq)]
pub struct TaughtPath {
    pub experience_id: ExperienceId,
    pub keyframes: Vec<KeyframeId>,
    /// Cumulative chord length at each keyframe; starts at 0.
    pub arc_lengths: Vec<f64>,
    /// Keyframe poses in the experience frame.
    pub poses: Vec<Pose2>,
}

impl TaughtPath {
    pub fn from_graph(graph: &ExperienceGraph, experience: ExperienceId) -> Result<Self, GraphError> {
        let exp = graph.experience(experience).ok_or(GraphError::UnknownExperience(experience))?;
        let poses = graph.chain_poses(experience)?;
        let mut arc_lengths = Vec::with_capacity(poses.len());
        let mut s = 0.0;
        for (i, p) in poses.iter().enumerate() {
            if i > 0 {
                s += p.distance_to(&poses[i - 1]);
            }
            arc_lengths.push(s);
        }
        Ok(Self {
            experience_id: experience,
            keyframes: exp.keyframes.clone(),
            arc_lengths,
            poses,
        })
    }

    pub fn length(&self) -> f64 {
        self.arc_lengths.last().copied().unwrap_or(0.0)
    }

    pub fn is_degenerate(&self) -> bool {
        self.keyframes.len() < 2
    }
}

/// Dense polyline through the keyframe positions, built from cubic Hermite
/// segments whose tangents average the adjacent chord directions. A straight
/// tail past the end gives the lookahead somewhere to land.
#[derive(Debug, Clone, PartialEq)]
pub struct RepeatPath {
    points: Vec<Point2>,
    s: Vec<f64>,
    /// Keyframe segment each dense point starts in (in travel order).
    segment: Vec<usize>,
    length: f64,
    keyframe_count: usize,
}

fn unit(v: Point2) -> Point2 {
    let n = v.norm();
    if n > 0.0 {
        v.scale(1.0 / n)
    } else {
        Point2::ORIGIN
    }
}

impl RepeatPath {
    /// `reversed` traverses the keyframes from last to first.
    pub fn new(poses: &[Pose2], reversed: bool, sample: f64, tail: f64) -> Self {
        let mut knots: Vec<Point2> = poses.iter().map(|p| p.translation()).collect();
        if reversed {
            knots.reverse();
        }
        knots.dedup_by(|b, a| a.distance(*b) < 1e-9);
        let n = knots.len();
        let mut points = Vec::new();
        let mut segment = Vec::new();
        if n == 1 {
            points.push(knots[0]);
            segment.push(0);
        }
        let mut dirs: Vec<Point2> = (0..n)
            .map(|i| {
                let back = (i > 0).then(|| unit(knots[i] - knots[i - 1]));
                let fwd = (i + 1 < n).then(|| unit(knots[i + 1] - knots[i]));
                match (back, fwd) {
                    (Some(b), Some(f)) => {
                        let m = unit(b + f);
                        if m.norm() == 0.0 { f } else { m }
                    }
                    (Some(b), None) => b,
                    (None, Some(f)) => f,
                    (None, None) => Point2::ORIGIN,
                }
            })
            .collect();
        // End tangents mirror the interior one about the end chord, which is
        // exact for a circular arc.
        if n >= 3 {
            let reflect = |chord: Point2, d: Point2| unit(chord.scale(2.0 * chord.dot(d)) - d);
            dirs[0] = reflect(unit(knots[1] - knots[0]), dirs[1]);
            dirs[n - 1] = reflect(unit(knots[n - 1] - knots[n - 2]), dirs[n - 2]);
        }
        for i in 0..n.saturating_sub(1) {
            let (p0, p1) = (knots[i], knots[i + 1]);
            let h = p0.distance(p1);
            let (m0, m1) = (dirs[i].scale(h), dirs[i + 1].scale(h));
            let steps = ((h / sample).ceil() as usize).max(1);
            for k in 0..steps {
                let t = k as f64 / steps as f64;
                let (t2, t3) = (t * t, t * t * t);
                let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
                let h10 = t3 - 2.0 * t2 + t;
                let h01 = -2.0 * t3 + 3.0 * t2;
                let h11 = t3 - t2;
                points.push(p0.scale(h00) + m0.scale(h10) + p1.scale(h01) + m1.scale(h11));
                segment.push(i);
            }
        }
        if n > 1 {
            points.push(knots[n - 1]);
            segment.push(n - 2);
        }
        let mut s = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        for (i, p) in points.iter().enumerate() {
            if i > 0 {
                acc += p.distance(points[i - 1]);
            }
            s.push(acc);
        }
        let length = acc;
        if n > 1 && tail > 0.0 {
            let end = knots[n - 1];
            let d = dirs[n - 1];
            let steps = (tail / sample).ceil() as usize;
            for k in 1..=steps {
                let ds = tail * k as f64 / steps as f64;
                points.push(end + d.scale(ds));
                segment.push(n - 2);
                s.push(length + ds);
            }
        }
        Self {
            points,
            s,
            segment,
            length,
            keyframe_count: n,
        }
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    pub fn is_degenerate(&self) -> bool {
        self.points.len() < 2
    }

    pub fn start(&self) -> Point2 {
        self.points[0]
    }

    /// Dense-point index range covering keyframe segments `lo..=hi`.
    fn range_for_segments(&self, lo: usize, hi: usize) -> (usize, usize) {
        let a = self.segment.partition_point(|&g| g < lo);
        let b = self.segment.partition_point(|&g| g <= hi);
        (a, b.max(a + 1).min(self.points.len()))
    }

    /// Closest point among keyframe segments within `window` of `near`.
    /// Returns (dense segment index, projected point, arc length).
    pub fn project(&self, p: Point2, near: usize, window: usize) -> Projection {
        if self.points.len() == 1 {
            return Projection {
                index: 0,
                point: self.points[0],
                s: 0.0,
                tangent: 0.0,
                keyframe_segment: 0,
            };
        }
        let lo = near.saturating_sub(window);
        let hi = near + window;
        let (a, b) = self.range_for_segments(lo, hi);
        let mut best: Option<(f64, usize, Point2, f64)> = None;
        for i in a..b.min(self.points.len() - 1) {
            let (q, t) = project_onto_segment(p, self.points[i], self.points[i + 1]);
            let d = q.distance(p);
            if best.is_none_or(|b| d < b.0) {
                best = Some((d, i, q, t));
            }
        }
        let (_, i, q, t) = best.unwrap_or((0.0, 0, self.points[0], 0.0));
        let seg_len = self.s[i + 1] - self.s[i];
        Projection {
            index: i,
            point: q,
            s: self.s[i] + t * seg_len,
            tangent: (self.points[i + 1] - self.points[i]).angle(),
            keyframe_segment: self.segment[i],
        }
    }

    /// Point at arc length `s` (clamped to the dense path including tail).
    pub fn point_at(&self, s: f64) -> Point2 {
        let n = self.points.len();
        if s <= 0.0 || n == 1 {
            return self.points[0];
        }
        let i = self.s.partition_point(|&v| v <= s);
        if i >= n {
            return self.points[n - 1];
        }
        let (s0, s1) = (self.s[i - 1], self.s[i]);
        let t = if s1 > s0 { (s - s0) / (s1 - s0) } else { 0.0 };
        self.points[i - 1].lerp(self.points[i], t)
    }

    pub fn keyframe_count(&self) -> usize {
        self.keyframe_count
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub index: usize,
    pub point: Point2,
    pub s: f64,
    pub tangent: f64,
    pub keyframe_segment: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arc_poses(r: f64, n: usize, step: f64) -> Vec<Pose2> {
        (0..n)
            .map(|i| {
                let a = i as f64 * step / r;
                Pose2::new(r * a.sin(), r - r * a.cos(), a)
            })
            .collect()
    }

    #[test]
    fn dense_path_hugs_a_circle() {
        let poses = arc_poses(2.0, 7, 1.0);
        let path = RepeatPath::new(&poses, false, 0.05, 0.0);
        for p in path.points() {
            let r = (*p - Point2::new(0.0, 2.0)).norm();
            assert!((r - 2.0).abs() < 0.002, "radius {r}");
        }
        assert!((path.length() - 6.0).abs() < 0.02);
    }

    #[test]
    fn reversed_path_runs_backwards() {
        let poses = arc_poses(3.0, 5, 1.0);
        let fwd = RepeatPath::new(&poses, false, 0.05, 0.0);
        let rev = RepeatPath::new(&poses, true, 0.05, 0.0);
        assert!(rev.start().distance(*fwd.points().last().unwrap()) < 1e-12);
        assert!((fwd.length() - rev.length()).abs() < 1e-9);
    }

    #[test]
    fn projection_and_lookahead_on_a_line() {
        let poses: Vec<Pose2> = (0..6).map(|i| Pose2::new(i as f64, 0.0, 0.0)).collect();
        let path = RepeatPath::new(&poses, false, 0.05, 2.0);
        let pr = path.project(Point2::new(2.3, 0.2), 2, 5);
        assert!((pr.s - 2.3).abs() < 1e-9);
        assert!(pr.tangent.abs() < 1e-12);
        let la = path.point_at(pr.s + 1.5);
        assert!((la.x - 3.8).abs() < 1e-9 && la.y.abs() < 1e-12);
        // Beyond the end the tail keeps the target on the extension.
        let pr = path.project(Point2::new(4.9, 0.0), 4, 5);
        assert!((path.point_at(pr.s + 1.5).x - 6.4).abs() < 1e-9);
        assert_eq!(path.point_at(100.0), *path.points().last().unwrap());
    }
}
