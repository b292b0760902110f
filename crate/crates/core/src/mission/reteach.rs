//! Ranks edges whose active experience localises poorly, so an operator
//! knows which tracks to teach again.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::graph::ExperienceId;

/// Localisation summary of one traversal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraversalSample {
    pub edge: String,
    pub experience: ExperienceId,
    pub t_end: f64,
    pub ticks: u32,
    pub failed_ticks: u32,
    pub inlier_sum: u64,
    pub lost_events: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReteachConfig {
    pub max_loss_rate: f64,
    pub min_mean_inliers: f64,
    /// Trailing traversals scored per edge.
    pub window: usize,
}

impl Default for ReteachConfig {
    fn default() -> Self {
        Self {
            max_loss_rate: 0.10,
            min_mean_inliers: 20.0,
            window: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeScore {
    pub edge: String,
    /// Failed localisation ticks over all ticks in the window.
    pub loss_rate: f64,
    pub mean_inliers: f64,
    pub traversals: usize,
}

/// Edges over threshold, worst first: loss rate descending, then mean
/// inliers ascending, then edge key. Only traversals of each edge's most
/// recent experience count, so a fresh re-teach starts with a clean slate.
pub fn recommend_reteach(samples: &[TraversalSample], cfg: &ReteachConfig) -> Vec<EdgeScore> {
    let mut by_edge: BTreeMap<&str, Vec<&TraversalSample>> = BTreeMap::new();
    for s in samples {
        by_edge.entry(s.edge.as_str()).or_default().push(s);
    }
    let mut out: Vec<EdgeScore> = by_edge
        .into_iter()
        .filter_map(|(edge, mut list)| {
            list.sort_by(|a, b| a.t_end.total_cmp(&b.t_end));
            let latest = list.last()?.experience;
            let recent: Vec<&&TraversalSample> = list.iter().filter(|s| s.experience == latest).rev().take(cfg.window).collect();
            let ticks: u64 = recent.iter().map(|s| s.ticks as u64).sum();
            if ticks == 0 {
                return None;
            }
            let failed: u64 = recent.iter().map(|s| s.failed_ticks as u64).sum();
            let inl: u64 = recent.iter().map(|s| s.inlier_sum).sum();
            Some(EdgeScore {
                edge: edge.to_string(),
                loss_rate: failed as f64 / ticks as f64,
                mean_inliers: inl as f64 / ticks as f64,
                traversals: recent.len(),
            })
        })
        .filter(|e| e.loss_rate > cfg.max_loss_rate || e.mean_inliers < cfg.min_mean_inliers)
        .collect();
    out.sort_by(|a, b| {
        b.loss_rate
            .total_cmp(&a.loss_rate)
            .then(a.mean_inliers.total_cmp(&b.mean_inliers))
            .then_with(|| a.edge.cmp(&b.edge))
    });
    out
}
