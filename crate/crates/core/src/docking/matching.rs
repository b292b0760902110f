//! Dock pose from extracted segments: enumerate correspondences with the
//! dock model, solve each rigidly, keep the best-fitting one.

use serde::{Deserialize, Serialize};

use crate::geometry::{angle_diff, point_segment_distance, Point2, Pose2};
use crate::sim::DockLayout;

use super::segments::LineSegment;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DockModel {
    /// Dock-frame wall segments.
    pub segments: Vec<(Point2, Point2)>,
    /// Dock-frame runway, ending at the docked position.
    pub runway: (Point2, Point2),
    pub docked_pose: Pose2,
}

impl DockModel {
    pub fn from_layout(layout: &DockLayout) -> Self {
        let docked = layout.docked_pose();
        Self {
            segments: layout.segments().to_vec(),
            runway: (layout.runway_start().translation(), docked.translation()),
            docked_pose: docked,
        }
    }

    /// Model segments in the robot frame for a given dock pose.
    pub fn segments_in(&self, dock_pose: &Pose2) -> Vec<(Point2, Point2)> {
        self.segments
            .iter()
            .map(|(a, b)| (dock_pose.transform_point(*a), dock_pose.transform_point(*b)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchConfig {
    /// Detections may exceed a model segment's length by this much.
    pub length_tolerance: f64,
    /// Radians.
    pub angle_tolerance: f64,
    /// Mean endpoint residual accepted, metres.
    pub accept: f64,
    pub prior_translation: f64,
    /// Radians.
    pub prior_rotation: f64,
    /// Detections further than this from the robot are ignored.
    pub max_range: f64,
    pub min_length: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            length_tolerance: 0.10,
            angle_tolerance: 10f64.to_radians(),
            accept: 0.05,
            prior_translation: 0.5,
            prior_rotation: 20f64.to_radians(),
            max_range: 8.0,
            min_length: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DockFix {
    /// Dock frame expressed in the robot frame.
    pub dock_pose: Pose2,
    pub match_score: f64,
    pub matched: usize,
    pub stamp: f64,
}

fn line_dir(a: Point2, b: Point2) -> f64 {
    (b - a).angle()
}

/// Difference of two undirected line angles folded into [0, π/2].
fn undirected_gap(a: f64, b: f64) -> f64 {
    let d = angle_diff(a, b).abs();
    d.min(std::f64::consts::PI - d)
}

/// Gauss-Newton on endpoint-to-model-line distances, from a rotation guess.
fn solve(pairs: &[(&LineSegment, (Point2, Point2))], theta0: f64) -> Option<Pose2> {
    let obs: Vec<(Point2, Point2, f64)> = pairs
        .iter()
        .flat_map(|(d, (ma, mb))| {
            let dir = (*mb - *ma).scale(1.0 / ma.distance(*mb));
            let n = Point2::new(-dir.y, dir.x);
            let c = n.dot(*ma);
            [(d.a, n, c), (d.b, n, c)]
        })
        .collect();
    let mut theta = theta0;
    // Translation by linear least squares for the guessed rotation.
    let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (p, n, c) in &obs {
        let rn = n.rotate(theta);
        let rhs = rn.dot(*p) - c;
        a11 += rn.x * rn.x;
        a12 += rn.x * rn.y;
        a22 += rn.y * rn.y;
        b1 += rn.x * rhs;
        b2 += rn.y * rhs;
    }
    let det = a11 * a22 - a12 * a12;
    if det.abs() < 1e-9 {
        return None;
    }
    let mut t = Point2::new((a22 * b1 - a12 * b2) / det, (a11 * b2 - a12 * b1) / det);
    for _ in 0..8 {
        let mut h = [[0.0f64; 3]; 3];
        let mut g = [0.0f64; 3];
        for (p, n, c) in &obs {
            let q = (*p - t).rotate(-theta);
            let r = n.dot(q) - c;
            let rn = n.rotate(theta);
            let j = [-rn.x, -rn.y, n.x * q.y - n.y * q.x];
            for i in 0..3 {
                g[i] += j[i] * r;
                for k in 0..3 {
                    h[i][k] += j[i] * j[k];
                }
            }
        }
        let delta = solve3(h, g)?;
        t = Point2::new(t.x - delta[0], t.y - delta[1]);
        theta -= delta[2];
        if delta.iter().all(|d| d.abs() < 1e-12) {
            break;
        }
    }
    Some(Pose2::new(t.x, t.y, theta))
}

fn solve3(h: [[f64; 3]; 3], g: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(h);
    if d.abs() < 1e-12 {
        return None;
    }
    let mut out = [0.0; 3];
    for (i, o) in out.iter_mut().enumerate() {
        let mut m = h;
        for r in 0..3 {
            m[r][i] = g[r];
        }
        *o = det(m) / d;
    }
    Some(out)
}

/// Mean distance of detected endpoints, taken into the dock frame, to their
/// model segments; also the worst per-segment mean.
fn residuals(pairs: &[(&LineSegment, (Point2, Point2))], pose: &Pose2) -> (f64, f64) {
    let mut sum = 0.0;
    let mut worst: f64 = 0.0;
    for (d, (ma, mb)) in pairs {
        let ra = point_segment_distance(pose.inverse_transform_point(d.a), *ma, *mb);
        let rb = point_segment_distance(pose.inverse_transform_point(d.b), *ma, *mb);
        sum += ra + rb;
        worst = worst.max(0.5 * (ra + rb));
    }
    (sum / (2 * pairs.len()) as f64, worst)
}

/// Best dock pose over all consistent correspondences, or `None`.
/// Hypotheses matching more model segments win; then lower mean residual;
/// then enumeration order.
pub fn match_dock(segments: &[LineSegment], model: &DockModel, prior: Option<&Pose2>, stamp: f64, cfg: &MatchConfig) -> Option<DockFix> {
    let cands: Vec<&LineSegment> = segments
        .iter()
        .filter(|s| s.length() >= cfg.min_length && s.a.norm().min(s.b.norm()) <= cfg.max_range)
        .collect();
    let m = model.segments.len();
    let mlen: Vec<f64> = model.segments.iter().map(|(a, b)| a.distance(*b)).collect();
    let mdir: Vec<f64> = model.segments.iter().map(|(a, b)| line_dir(*a, *b)).collect();
    let mut assign: Vec<Option<usize>> = vec![None; m];
    let mut best: Option<(usize, f64, Pose2)> = None;

    #[allow(clippy::too_many_arguments)]
    fn rec(
        k: usize,
        assign: &mut Vec<Option<usize>>,
        cands: &[&LineSegment],
        model: &DockModel,
        mlen: &[f64],
        mdir: &[f64],
        prior: Option<&Pose2>,
        cfg: &MatchConfig,
        best: &mut Option<(usize, f64, Pose2)>,
    ) {
        if k == assign.len() {
            evaluate(assign, cands, model, mdir, prior, cfg, best);
            return;
        }
        for choice in cands.iter().enumerate().map(|(i, _)| Some(i)).chain([None]) {
            if let Some(i) = choice {
                if assign[..k].contains(&Some(i)) || cands[i].length() > mlen[k] + cfg.length_tolerance {
                    continue;
                }
                let d = cands[i].direction();
                let consistent = assign[..k].iter().enumerate().all(|(j, o)| match o {
                    Some(oi) => {
                        let dd = undirected_gap(d, cands[*oi].direction());
                        (dd - undirected_gap(mdir[k], mdir[j])).abs() <= cfg.angle_tolerance
                    }
                    None => true,
                });
                if !consistent {
                    continue;
                }
            }
            assign[k] = choice;
            rec(k + 1, assign, cands, model, mlen, mdir, prior, cfg, best);
            assign[k] = None;
        }
    }

    fn evaluate(
        assign: &[Option<usize>],
        cands: &[&LineSegment],
        model: &DockModel,
        mdir: &[f64],
        prior: Option<&Pose2>,
        cfg: &MatchConfig,
        best: &mut Option<(usize, f64, Pose2)>,
    ) {
        let pairs: Vec<(&LineSegment, (Point2, Point2))> = assign
            .iter()
            .enumerate()
            .filter_map(|(k, o)| o.map(|i| (cands[i], model.segments[k])))
            .collect();
        let used: Vec<usize> = assign.iter().enumerate().filter(|(_, o)| o.is_some()).map(|(k, _)| k).collect();
        let observable = used.iter().any(|&a| used.iter().any(|&b| undirected_gap(mdir[a], mdir[b]) > 0.3));
        if pairs.len() < 2 || !observable {
            return;
        }
        if best.as_ref().is_some_and(|b| b.0 > pairs.len()) {
            return;
        }
        let (d0, (ma, mb)) = pairs[0];
        let base = d0.direction() - line_dir(ma, mb);
        let prior_ok = |p: &Pose2| {
            prior.is_none_or(|q| p.translation().distance(q.translation()) <= cfg.prior_translation && angle_diff(p.theta, q.theta).abs() <= cfg.prior_rotation)
        };
        for theta0 in [base, base + std::f64::consts::PI] {
            let Some(pose) = solve(&pairs, theta0) else { continue };
            if !prior_ok(&pose) {
                continue;
            }
            let (mean, worst) = residuals(&pairs, &pose);
            if worst > cfg.accept || mean > cfg.accept {
                continue;
            }
            let better = match best {
                None => true,
                Some((n, s, _)) => pairs.len() > *n || (pairs.len() == *n && mean < *s),
            };
            if better {
                *best = Some((pairs.len(), mean, pose));
            }
        }
    }

    rec(0, &mut assign, &cands, model, &mlen, &mdir, prior, cfg, &mut best);
    best.map(|(matched, score, dock_pose)| DockFix {
        dock_pose,
        match_score: score,
        matched,
        stamp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn model() -> DockModel {
        DockModel::from_layout(&DockLayout::default())
    }

    fn as_detected(segs: &[(Point2, Point2)]) -> Vec<LineSegment> {
        segs.iter()
            .map(|(a, b)| LineSegment {
                a: *a,
                b: *b,
                inliers: vec![],
                rms_residual: 0.0,
            })
            .collect()
    }

    #[test]
    fn verbatim_model_gives_identity() {
        let m = model();
        let f = match_dock(&as_detected(&m.segments), &m, None, 0.0, &MatchConfig::default()).unwrap();
        assert!(f.dock_pose.approx_eq(&Pose2::IDENTITY, 1e-9, 1e-9));
        assert!(f.match_score < 1e-9);
        assert_eq!(f.matched, 3);
    }

    #[test]
    fn recovers_transformed_model_with_noise() {
        let m = model();
        let truth = Pose2::new(1.2, -0.4, 25f64.to_radians());
        let noise = Normal::new(0.0, 0.005).unwrap();
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut jitter = |p: Point2| p + Point2::new(noise.sample(&mut rng), noise.sample(&mut rng));
            let segs: Vec<(Point2, Point2)> = m.segments_in(&truth).into_iter().map(|(a, b)| (jitter(a), jitter(b))).collect();
            let f = match_dock(&as_detected(&segs), &m, None, 0.0, &MatchConfig::default()).unwrap();
            assert!(f.dock_pose.approx_eq(&truth, 0.02, 1f64.to_radians()), "seed {seed}: {:?}", f.dock_pose);
        }
    }

    #[test]
    fn plain_wall_is_unobservable() {
        let wall = as_detected(&[(Point2::new(2.0, -0.4), Point2::new(2.0, 0.4))]);
        assert!(match_dock(&wall, &model(), None, 0.0, &MatchConfig::default()).is_none());
    }

    #[test]
    fn score_invariant_under_scene_transform() {
        let m = model();
        let truth = Pose2::new(2.0, 0.3, 3.0);
        let moved = Pose2::new(-1.0, 4.0, -0.7);
        let noise = Normal::new(0.0, 0.005).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let segs: Vec<(Point2, Point2)> = m
            .segments_in(&truth)
            .into_iter()
            .map(|(a, b)| (a + Point2::new(noise.sample(&mut rng), 0.0), b + Point2::new(0.0, noise.sample(&mut rng))))
            .collect();
        let segs2: Vec<(Point2, Point2)> = segs.iter().map(|(a, b)| (moved.transform_point(*a), moved.transform_point(*b))).collect();
        let cfg = MatchConfig {
            max_range: 100.0,
            ..MatchConfig::default()
        };
        let prior2 = moved.compose(&truth);
        let f1 = match_dock(&as_detected(&segs), &m, Some(&truth), 0.0, &cfg).unwrap();
        let f2 = match_dock(&as_detected(&segs2), &m, Some(&prior2), 0.0, &cfg).unwrap();
        assert!((f1.match_score - f2.match_score).abs() < 1e-9);
        assert!(moved.compose(&f1.dock_pose).approx_eq(&f2.dock_pose, 1e-6, 1e-9));
    }

    #[test]
    fn partial_view_and_clutter() {
        let m = model();
        let truth = Pose2::new(2.5, 0.2, 3.0);
        let mut segs = m.segments_in(&truth);
        // Only half of the left wall visible and a fence post nearby.
        segs[0].0 = segs[0].0.lerp(segs[0].1, 0.5);
        segs.push((Point2::new(1.0, 2.0), Point2::new(1.6, 2.0)));
        let f = match_dock(&as_detected(&segs), &m, None, 0.0, &MatchConfig::default()).unwrap();
        assert!(f.dock_pose.approx_eq(&truth, 1e-6, 1e-6));
        assert_eq!(f.matched, 3);
    }
}
