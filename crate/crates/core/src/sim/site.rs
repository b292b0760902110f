//! Ground-truth site layout: where plot sites are and which drivable tracks
//! connect them. Operators use it to teach paths; navigation never reads it.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::geometry::Point2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteNode {
    pub code: String,
    pub position: Point2,
    #[serde(default)]
    pub plot: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteEdge {
    pub a: String,
    pub b: String,
    /// Intermediate waypoints between the two node positions.
    #[serde(default)]
    pub waypoints: Vec<Point2>,
}

impl SiteEdge {
    /// Canonical undirected key, `"A-B"` with the codes in lexicographic order.
    pub fn key(&self) -> String {
        edge_key(&self.a, &self.b)
    }
}

pub fn edge_key(a: &str, b: &str) -> String {
    if a <= b {
        format!("{a}-{b}")
    } else {
        format!("{b}-{a}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteConfig {
    pub nodes: Vec<SiteNode>,
    pub edges: Vec<SiteEdge>,
    pub dock_node: String,
}

impl SiteConfig {
    pub fn node(&self, code: &str) -> Option<&SiteNode> {
        self.nodes.iter().find(|n| n.code == code)
    }

    pub fn edge(&self, key: &str) -> Option<&SiteEdge> {
        self.edges.iter().find(|e| e.key() == key)
    }

    /// Full polyline of an edge from `from` to the other end.
    pub fn polyline(&self, edge: &SiteEdge, from: &str) -> Option<Vec<Point2>> {
        let a = self.node(&edge.a)?.position;
        let b = self.node(&edge.b)?.position;
        let mut pts = Vec::with_capacity(edge.waypoints.len() + 2);
        pts.push(a);
        pts.extend(edge.waypoints.iter().copied());
        pts.push(b);
        if from == edge.b {
            pts.reverse();
        } else if from != edge.a {
            return None;
        }
        Some(pts)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut codes = BTreeSet::new();
        for n in &self.nodes {
            if !codes.insert(n.code.as_str()) {
                return Err(ConfigError::Invalid(format!(
                    "site.nodes: duplicate code {:?}",
                    n.code
                )));
            }
        }
        if !codes.contains(self.dock_node.as_str()) {
            return Err(ConfigError::Invalid(format!(
                "site.dock_node: unknown node {:?}",
                self.dock_node
            )));
        }
        let mut keys = BTreeSet::new();
        for (i, e) in self.edges.iter().enumerate() {
            for end in [&e.a, &e.b] {
                if !codes.contains(end.as_str()) {
                    return Err(ConfigError::Invalid(format!(
                        "site.edges[{i}]: unknown node {end:?}"
                    )));
                }
            }
            if e.a == e.b {
                return Err(ConfigError::Invalid(format!("site.edges[{i}]: self loop")));
            }
            if !keys.insert(e.key()) {
                return Err(ConfigError::Invalid(format!(
                    "site.edges[{i}]: duplicate edge {}",
                    e.key()
                )));
            }
        }
        Ok(())
    }
}
