//! Shortest walks over the supergraph.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use thiserror::Error;

use super::supergraph::Supergraph;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RoutingError {
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error("no route from {from:?} to {to:?}")]
    Disconnected { from: String, to: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    /// Visited node codes including both ends.
    pub nodes: Vec<String>,
    /// Supergraph edge indices, one per hop.
    pub edges: Vec<usize>,
    pub length: f64,
}

#[derive(PartialEq)]
struct Item<'a>(f64, &'a str);

impl Eq for Item<'_> {}

impl Ord for Item<'_> {
    fn cmp(&self, o: &Self) -> Ordering {
        o.0.total_cmp(&self.0).then_with(|| o.1.cmp(self.1))
    }
}

impl PartialOrd for Item<'_> {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// Dijkstra distances from `source` to every reachable node.
pub fn distances<'a>(g: &'a Supergraph, source: &'a str) -> BTreeMap<&'a str, f64> {
    let mut dist: BTreeMap<&str, f64> = BTreeMap::new();
    let mut heap = BinaryHeap::from([Item(0.0, source)]);
    dist.insert(source, 0.0);
    while let Some(Item(d, n)) = heap.pop() {
        if d > dist[n] {
            continue;
        }
        for (m, ei) in g.neighbours(n) {
            let nd = d + g.edges[ei].length;
            if dist.get(m).is_none_or(|&old| nd < old) {
                dist.insert(m, nd);
                heap.push(Item(nd, m));
            }
        }
    }
    dist
}

fn tied(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// Minimum-length walk. Among equal-length walks the node sequence that is
/// lexicographically smallest by code wins.
pub fn shortest_path(g: &Supergraph, a: &str, b: &str) -> Result<Route, RoutingError> {
    for n in [a, b] {
        if !g.nodes.contains_key(n) {
            return Err(RoutingError::UnknownNode(n.to_string()));
        }
    }
    let to_b = distances(g, b);
    let Some(&total) = to_b.get(a) else {
        return Err(RoutingError::Disconnected {
            from: a.to_string(),
            to: b.to_string(),
        });
    };
    let mut nodes = vec![a.to_string()];
    let mut edges = Vec::new();
    let mut cur = a;
    let mut length = 0.0;
    while cur != b {
        let here = to_b[cur];
        // Neighbours come sorted by code, so the first tight one is smallest.
        let (next, ei) = g
            .neighbours(cur)
            .into_iter()
            .find(|&(m, ei)| to_b.get(m).is_some_and(|&dm| dm < here && tied(here, dm + g.edges[ei].length)))
            .expect("a tight neighbour exists on a shortest-path tree");
        length += g.edges[ei].length;
        edges.push(ei);
        nodes.push(next.to_string());
        cur = next;
    }
    debug_assert!(tied(length, total));
    Ok(Route { nodes, edges, length })
}
