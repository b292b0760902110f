//! Per-tick localiser: dead-reckons by VO along the active experience and
//! corrects against the keyframe predicted to be nearest.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{angle_diff, Pose2};
use crate::graph::{ExperienceGraph, ExperienceId, GraphError, KeyframeId};
use crate::localisation::coarse::coarse_localise_filtered;
use crate::localisation::fine::{
    fine_localise, fine_localise_with, FineConfig, LiveFeature, LocalisationFailure, LocalisationFix,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocaliserConfig {
    pub fine: FineConfig,
    /// Consecutive failures before LOST is declared.
    pub n_lost: u32,
    /// Consecutive failures between automatic coarse re-seeds.
    pub n_reseed: u32,
    /// Seeds taken from coarse retrieval.
    pub coarse_k: usize,
    /// Keyframes either side of the reference searched for the nearest one.
    pub window: usize,
    /// Accepted disagreement between an operator heading and a fix, radians.
    pub init_heading_tolerance: f64,
}

impl Default for LocaliserConfig {
    fn default() -> Self {
        Self {
            fine: FineConfig::default(),
            n_lost: 20,
            n_reseed: 50,
            coarse_k: 5,
            window: 5,
            init_heading_tolerance: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LocaliserError {
    #[error("localiser is not initialised; manual initialisation required")]
    Uninitialised,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("initialisation failed: {0}")]
    NoFix(LocalisationFailure),
    #[error("no seed keyframes supplied")]
    NoSeeds,
}

#[derive(Debug, Clone, PartialEq)]
struct Track {
    experience: ExperienceId,
    origin: Pose2,
    ids: Vec<KeyframeId>,
    /// Keyframe poses in the experience frame.
    chain: Vec<Pose2>,
    index: usize,
    /// Robot pose in the frame of `ids[index]`.
    offset: Pose2,
    /// Waiting for a first fix after a handover; no usable estimate yet.
    pending: bool,
}

impl Track {
    fn new(graph: &ExperienceGraph, experience: ExperienceId, index: usize, offset: Pose2, pending: bool) -> Result<Self, GraphError> {
        let exp = graph.experience(experience).ok_or(GraphError::UnknownExperience(experience))?;
        if exp.keyframes.is_empty() {
            return Err(GraphError::EmptyExperience(experience));
        }
        Ok(Self {
            experience,
            origin: exp.origin,
            ids: exp.keyframes.clone(),
            chain: graph.chain_poses(experience)?,
            index: index.min(exp.keyframes.len() - 1),
            offset,
            pending,
        })
    }

    fn pose(&self) -> Pose2 {
        self.chain[self.index].compose(&self.offset)
    }

    fn position_of(&self, id: KeyframeId) -> Option<usize> {
        self.ids.iter().position(|&k| k == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TickOutput {
    pub fix: Option<LocalisationFix>,
    /// Inliers of the fix, or the best sub-threshold attempt.
    pub inliers: usize,
    /// Set on the single tick where the failure counter reaches `n_lost`.
    pub lost_event: bool,
    pub reseeded: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Localiser {
    pub config: LocaliserConfig,
    track: Option<Track>,
    failures: u32,
    last_fix: Option<LocalisationFix>,
}

impl Localiser {
    pub fn new(config: LocaliserConfig) -> Self {
        Self {
            config,
            track: None,
            failures: 0,
            last_fix: None,
        }
    }

    pub fn is_initialised(&self) -> bool {
        self.track.is_some()
    }

    pub fn is_lost(&self) -> bool {
        self.track.is_some() && self.failures >= self.config.n_lost
    }

    pub fn failures(&self) -> u32 {
        self.failures
    }

    pub fn last_fix(&self) -> Option<&LocalisationFix> {
        self.last_fix.as_ref()
    }

    pub fn experience(&self) -> Option<ExperienceId> {
        self.track.as_ref().map(|t| t.experience)
    }

    /// Index within the active experience of the current reference keyframe.
    pub fn index(&self) -> Option<usize> {
        self.track.as_ref().map(|t| t.index)
    }

    /// Pose in the active experience frame, unless awaiting a first fix.
    pub fn pose_in_experience(&self) -> Option<(ExperienceId, Pose2)> {
        let t = self.track.as_ref()?;
        (!t.pending).then(|| (t.experience, t.pose()))
    }

    /// Pose in the approximate site frame the operator taught in.
    pub fn site_estimate(&self) -> Option<Pose2> {
        let t = self.track.as_ref()?;
        (!t.pending).then(|| t.origin.compose(&t.pose()))
    }

    pub fn reset(&mut self) {
        self.track = None;
        self.failures = 0;
        self.last_fix = None;
    }

    /// Switch to another experience at a supergraph node. The pose relative
    /// to it is unknown until the anchor neighbourhood yields a fix.
    pub fn handover(&mut self, graph: &ExperienceGraph, experience: ExperienceId, anchor_index: usize) -> Result<(), LocaliserError> {
        self.track = Some(Track::new(graph, experience, anchor_index, Pose2::IDENTITY, true)?);
        self.failures = 0;
        Ok(())
    }

    /// Place the localiser with a known offset from a keyframe, e.g. at the
    /// start of a repeat immediately after teaching.
    pub fn place(&mut self, graph: &ExperienceGraph, keyframe: KeyframeId, offset: Pose2) -> Result<(), LocaliserError> {
        let kf = graph.keyframe(keyframe).ok_or(GraphError::UnknownKeyframe(keyframe))?;
        let mut t = Track::new(graph, kf.experience, 0, offset, false)?;
        t.index = t.position_of(keyframe).ok_or(GraphError::UnknownKeyframe(keyframe))?;
        self.track = Some(t);
        self.failures = 0;
        Ok(())
    }

    /// Operator-assisted initialisation: localise against the given seed
    /// keyframes, rejecting fixes that disagree with the operator heading.
    pub fn initialise(
        &mut self,
        graph: &ExperienceGraph,
        seeds: &[KeyframeId],
        heading: Option<f64>,
        live: &[LiveFeature<'_>],
        stamp: f64,
    ) -> Result<LocalisationFix, LocaliserError> {
        if seeds.is_empty() {
            return Err(LocaliserError::NoSeeds);
        }
        let tol = self.config.init_heading_tolerance;
        let mut chains: std::collections::BTreeMap<ExperienceId, Track> = Default::default();
        for &s in seeds {
            let kf = graph.keyframe(s).ok_or(GraphError::UnknownKeyframe(s))?;
            if let std::collections::btree_map::Entry::Vacant(v) = chains.entry(kf.experience) {
                v.insert(Track::new(graph, kf.experience, 0, Pose2::IDENTITY, false)?);
            }
        }
        // Candidates reached by BFS stay inside the seed experiences.
        let accept = |fix: &LocalisationFix| -> bool {
            let Some(h) = heading else { return true };
            let Some(kf) = graph.keyframe(fix.keyframe_id) else { return false };
            let Some(t) = chains.get(&kf.experience) else { return false };
            let Some(i) = t.position_of(fix.keyframe_id) else { return false };
            let site = t.origin.compose(&t.chain[i]).compose(&fix.offset);
            angle_diff(site.theta, h).abs() <= tol
        };
        let fix = fine_localise_with(graph, seeds, live, stamp, &self.config.fine, accept).map_err(LocaliserError::NoFix)?;
        self.adopt(graph, &fix)?;
        Ok(fix)
    }

    fn adopt(&mut self, graph: &ExperienceGraph, fix: &LocalisationFix) -> Result<(), LocaliserError> {
        let kf = graph.keyframe(fix.keyframe_id).ok_or(GraphError::UnknownKeyframe(fix.keyframe_id))?;
        let reuse = self.track.as_ref().is_some_and(|t| t.experience == kf.experience);
        if !reuse {
            self.track = Some(Track::new(graph, kf.experience, 0, Pose2::IDENTITY, false)?);
        }
        let t = self.track.as_mut().expect("track set above");
        t.index = t.position_of(fix.keyframe_id).ok_or(GraphError::UnknownKeyframe(fix.keyframe_id))?;
        t.offset = fix.offset;
        t.pending = false;
        self.failures = 0;
        self.last_fix = Some(*fix);
        Ok(())
    }

    pub fn tick(
        &mut self,
        graph: &ExperienceGraph,
        vo_delta: &Pose2,
        live: &[LiveFeature<'_>],
        stamp: f64,
    ) -> Result<TickOutput, LocaliserError> {
        let window = self.config.window;
        let t = self.track.as_mut().ok_or(LocaliserError::Uninitialised)?;
        let seed = if t.pending {
            t.ids[t.index]
        } else {
            t.offset = t.offset.compose(vo_delta);
            let est = t.pose();
            let lo = t.index.saturating_sub(window);
            let hi = (t.index + window).min(t.ids.len() - 1);
            let mut best = (t.index, f64::INFINITY);
            for j in lo..=hi {
                let d = t.chain[j].translation().distance(est.translation());
                if d < best.1 {
                    best = (j, d);
                }
            }
            t.index = best.0;
            t.offset = t.chain[best.0].inverse().compose(&est);
            t.ids[best.0]
        };
        let experience = t.experience;
        let mut out = TickOutput::default();
        match fine_localise(graph, &[seed], live, stamp, &self.config.fine) {
            Ok(fix) => {
                self.adopt(graph, &fix)?;
                out.inliers = fix.inliers;
                out.fix = Some(fix);
                return Ok(out);
            }
            Err(fail) => out.inliers = fail.best_inliers,
        }
        self.failures += 1;
        out.lost_event = self.failures == self.config.n_lost;
        if self.config.n_reseed > 0 && self.failures.is_multiple_of(self.config.n_reseed) {
            out.reseeded = true;
            let bow = graph.vocabulary.quantise(live.iter().map(|f| f.descriptor));
            let seeds: Vec<KeyframeId> = coarse_localise_filtered(graph, &bow, self.config.coarse_k, |k| k.experience == experience)
                .into_iter()
                .map(|s| s.keyframe)
                .collect();
            if let Ok(fix) = fine_localise(graph, &seeds, live, stamp, &self.config.fine) {
                self.adopt(graph, &fix)?;
                out.inliers = fix.inliers;
                out.fix = Some(fix);
            }
        }
        Ok(out)
    }
}
