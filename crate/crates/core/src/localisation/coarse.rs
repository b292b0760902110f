//! Place retrieval by cosine similarity of word histograms.

use crate::graph::{Bow, ExperienceGraph, Keyframe, KeyframeId};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Seed {
    pub keyframe: KeyframeId,
    pub score: f64,
}

/// Top-`k` keyframes accepted by `filter`, best first. Equal scores prefer
/// the newer experience, then the lower keyframe id.
pub fn coarse_localise_filtered<F>(graph: &ExperienceGraph, query: &Bow, k: usize, filter: F) -> Vec<Seed>
where
    F: Fn(&Keyframe) -> bool,
{
    let qn = query.norm();
    let mut scored: Vec<(f64, u32, KeyframeId)> = graph
        .keyframes()
        .filter(|kf| filter(kf))
        .map(|kf| {
            let n = qn * kf.bow.norm();
            let s = if n == 0.0 { 0.0 } else { (query.dot(&kf.bow) / n).clamp(-1.0, 1.0) };
            (s, kf.experience.0, kf.id)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)));
    scored
        .into_iter()
        .take(k)
        .map(|(score, _, keyframe)| Seed { keyframe, score })
        .collect()
}

pub fn coarse_localise(graph: &ExperienceGraph, query: &Bow, k: usize) -> Vec<Seed> {
    coarse_localise_filtered(graph, query, k, |_| true)
}
