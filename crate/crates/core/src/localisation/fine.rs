//! Metric localisation against keyframes: mutual-nearest-neighbour descriptor
//! association followed by a closed-form rigid fit and inlier counting.

use serde::{Deserialize, Serialize};

use crate::geometry::{Point2, Pose2};
use crate::graph::{ExperienceGraph, KeyframeId, MapLandmark};
use crate::sim::CameraObservation;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FineConfig {
    pub min_inliers: usize,
    /// Maximum descriptor L2 distance for an association.
    pub descriptor_threshold: f64,
    /// Maximum residual, metres, for an association to count as an inlier.
    pub geometric_gate: f64,
    /// BFS radius in edges around each seed.
    pub radius: usize,
}

impl Default for FineConfig {
    fn default() -> Self {
        Self {
            min_inliers: 10,
            descriptor_threshold: 0.4,
            geometric_gate: 0.15,
            radius: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalisationFix {
    pub keyframe_id: KeyframeId,
    /// Live frame expressed in the keyframe frame.
    pub offset: Pose2,
    pub inliers: usize,
    pub stamp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("no candidate reached the inlier threshold (best {best_inliers} over {candidates} candidates)")]
pub struct LocalisationFailure {
    pub best_inliers: usize,
    pub candidates: usize,
}

/// A live feature as the localiser sees it: no identity, just geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct LiveFeature<'a> {
    pub point: Point2,
    pub descriptor: &'a [f64],
}

pub fn live_features(obs: &CameraObservation) -> Vec<LiveFeature<'_>> {
    obs.observed
        .iter()
        .map(|f| LiveFeature {
            point: f.point(),
            descriptor: &f.descriptor,
        })
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mutual nearest neighbours within `threshold`; ties go to the lowest index.
/// Returns `(live index, map index)` ascending by live index.
pub fn mutual_matches(live: &[LiveFeature<'_>], map: &[MapLandmark], threshold: f64) -> Vec<(usize, usize)> {
    if live.is_empty() || map.is_empty() {
        return Vec::new();
    }
    let mut best_for_map = vec![(usize::MAX, f64::INFINITY); map.len()];
    let mut best_for_live = vec![(usize::MAX, f64::INFINITY); live.len()];
    for (i, l) in live.iter().enumerate() {
        for (j, m) in map.iter().enumerate() {
            let d = sq_dist(l.descriptor, &m.descriptor);
            if d < best_for_live[i].1 {
                best_for_live[i] = (j, d);
            }
            if d < best_for_map[j].1 {
                best_for_map[j] = (i, d);
            }
        }
    }
    let t2 = threshold * threshold;
    best_for_live
        .iter()
        .enumerate()
        .filter(|(i, (j, d))| *d <= t2 && best_for_map[*j].0 == *i)
        .map(|(i, (j, _))| (i, *j))
        .collect()
}

/// Least-squares rigid transform `T` minimising `sum |T*src_i - dst_i|^2`.
pub fn fit_rigid(pairs: &[(Point2, Point2)]) -> Option<Pose2> {
    if pairs.is_empty() {
        return None;
    }
    let n = pairs.len() as f64;
    let (cs, cd) = pairs.iter().fold((Point2::ORIGIN, Point2::ORIGIN), |(a, b), (s, d)| (a + *s, b + *d));
    let (cs, cd) = (cs.scale(1.0 / n), cd.scale(1.0 / n));
    let (mut sdot, mut scross) = (0.0, 0.0);
    for (s, d) in pairs {
        let (s, d) = (*s - cs, *d - cd);
        sdot += s.dot(d);
        scross += s.cross(d);
    }
    let theta = if pairs.len() == 1 { 0.0 } else { scross.atan2(sdot) };
    let t = cd - cs.rotate(theta);
    Some(Pose2::new(t.x, t.y, theta))
}

/// Pairs used to build minimal two-point hypotheses when the plain fit is
/// dragged off by wrong associations.
const MAX_HYPOTHESIS_PAIRS: usize = 24;

/// Associate, fit and count inliers for a single keyframe.
pub fn match_keyframe(live: &[LiveFeature<'_>], map: &[MapLandmark], cfg: &FineConfig) -> Option<(Pose2, usize)> {
    let matches = mutual_matches(live, map, cfg.descriptor_threshold);
    if matches.len() < 2 {
        return None;
    }
    let pairs: Vec<(Point2, Point2)> = matches.iter().map(|&(i, j)| (live[i].point, map[j].position)).collect();
    let gate2 = cfg.geometric_gate * cfg.geometric_gate;
    let count = |pose: &Pose2| {
        pairs
            .iter()
            .filter(|(s, d)| (pose.transform_point(*s) - *d).norm_squared() <= gate2)
            .count()
    };
    let inlier_set = |pose: &Pose2| -> Vec<(Point2, Point2)> {
        pairs
            .iter()
            .copied()
            .filter(|(s, d)| (pose.transform_point(*s) - *d).norm_squared() <= gate2)
            .collect()
    };
    let mut pose = fit_rigid(&pairs)?;
    if count(&pose) * 5 < pairs.len() * 4 {
        // Exhaustive, deterministic two-point consensus over the leading pairs.
        let m = pairs.len().min(MAX_HYPOTHESIS_PAIRS);
        let mut best = (count(&pose), pose);
        for a in 0..m {
            for b in a + 1..m {
                let Some(h) = fit_rigid(&[pairs[a], pairs[b]]) else { continue };
                let c = count(&h);
                if c > best.0 {
                    best = (c, h);
                }
            }
        }
        pose = best.1;
    }
    let mut inliers = inlier_set(&pose);
    // Refit on the inlier set until it stops changing.
    for _ in 0..3 {
        if inliers.len() < 2 {
            break;
        }
        let refit = fit_rigid(&inliers)?;
        let next = inlier_set(&refit);
        let stable = next.len() == inliers.len();
        pose = refit;
        inliers = next;
        if stable {
            break;
        }
    }
    Some((pose, inliers.len()))
}

/// Breadth-first candidate order: seed rank, then depth, then keyframe id.
/// A keyframe reached from several seeds is tried once, at its first position.
pub fn candidate_order(graph: &ExperienceGraph, seeds: &[KeyframeId], radius: usize) -> Vec<KeyframeId> {
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for &s in seeds {
        for (k, _) in graph.bfs(s, radius) {
            if seen.insert(k) {
                out.push(k);
            }
        }
    }
    out
}

/// First candidate reaching `min_inliers` and passing `accept`.
pub fn fine_localise_with<F>(
    graph: &ExperienceGraph,
    seeds: &[KeyframeId],
    live: &[LiveFeature<'_>],
    stamp: f64,
    cfg: &FineConfig,
    accept: F,
) -> Result<LocalisationFix, LocalisationFailure>
where
    F: Fn(&LocalisationFix) -> bool,
{
    let candidates = candidate_order(graph, seeds, cfg.radius);
    let mut best = 0;
    for &k in &candidates {
        let Some(kf) = graph.keyframe(k) else { continue };
        if let Some((offset, inliers)) = match_keyframe(live, &kf.landmarks, cfg) {
            best = best.max(inliers);
            if inliers >= cfg.min_inliers {
                let fix = LocalisationFix {
                    keyframe_id: k,
                    offset,
                    inliers,
                    stamp,
                };
                if accept(&fix) {
                    return Ok(fix);
                }
            }
        }
    }
    Err(LocalisationFailure {
        best_inliers: best,
        candidates: candidates.len(),
    })
}

pub fn fine_localise(
    graph: &ExperienceGraph,
    seeds: &[KeyframeId],
    live: &[LiveFeature<'_>],
    stamp: f64,
    cfg: &FineConfig,
) -> Result<LocalisationFix, LocalisationFailure> {
    fine_localise_with(graph, seeds, live, stamp, cfg, |_| true)
}
