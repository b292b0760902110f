//! Open travelling-salesman tours over the metric closure of the targets.

use std::collections::BTreeSet;

use thiserror::Error;

use super::executor::{Mission, Step};
use super::routing::{distances, shortest_path, RoutingError};
use super::supergraph::Supergraph;

/// Largest target count solved exactly.
pub const HELD_KARP_MAX: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TourError {
    #[error("unknown start node {0:?}")]
    UnknownStart(String),
    #[error("target {0:?} is unreachable from the start")]
    Unreachable(String),
    #[error(transparent)]
    Routing(#[from] RoutingError),
}

fn tour_length(d: &[Vec<f64>], order: &[usize]) -> f64 {
    let mut prev = 0;
    let mut s = 0.0;
    for &i in order {
        s += d[prev][i];
        prev = i;
    }
    s
}

/// Exact dynamic programme over subsets; index 0 is the fixed start.
fn held_karp(d: &[Vec<f64>]) -> Vec<usize> {
    let m = d.len() - 1;
    if m == 0 {
        return Vec::new();
    }
    let full = 1usize << m;
    let mut cost = vec![f64::INFINITY; full * m];
    let mut parent = vec![usize::MAX; full * m];
    for j in 0..m {
        cost[(1 << j) * m + j] = d[0][j + 1];
    }
    for mask in 1..full {
        for j in 0..m {
            if mask & (1 << j) == 0 {
                continue;
            }
            let c = cost[mask * m + j];
            if !c.is_finite() {
                continue;
            }
            for k in 0..m {
                if mask & (1 << k) != 0 {
                    continue;
                }
                let nm = mask | (1 << k);
                let nc = c + d[j + 1][k + 1];
                if nc < cost[nm * m + k] {
                    cost[nm * m + k] = nc;
                    parent[nm * m + k] = j;
                }
            }
        }
    }
    let last = full - 1;
    let mut end = 0;
    for j in 1..m {
        if cost[last * m + j] < cost[last * m + end] {
            end = j;
        }
    }
    let mut order = Vec::with_capacity(m);
    let (mut mask, mut j) = (last, end);
    loop {
        order.push(j + 1);
        let p = parent[mask * m + j];
        mask &= !(1 << j);
        if p == usize::MAX {
            break;
        }
        j = p;
    }
    order.reverse();
    order
}

fn nearest_neighbour(d: &[Vec<f64>]) -> Vec<usize> {
    let n = d.len();
    let mut left: BTreeSet<usize> = (1..n).collect();
    let mut order = Vec::with_capacity(n - 1);
    let mut cur = 0;
    while let Some(&next) = left.iter().min_by(|&&a, &&b| d[cur][a].total_cmp(&d[cur][b])) {
        left.remove(&next);
        order.push(next);
        cur = next;
    }
    order
}

/// First-improvement 2-opt on an open path with a fixed start.
fn two_opt(d: &[Vec<f64>], order: &mut [usize]) {
    let m = order.len();
    let at = |o: &[usize], i: usize| if i == 0 { 0 } else { o[i - 1] };
    loop {
        let mut improved = false;
        for i in 1..=m {
            for j in i + 1..=m {
                let (a, b, c) = (at(order, i - 1), at(order, i), at(order, j));
                let mut delta = d[a][c] - d[a][b];
                if j < m {
                    let e = at(order, j + 1);
                    delta += d[b][e] - d[c][e];
                }
                if delta < -1e-9 {
                    order[i - 1..j].reverse();
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
}

/// Visiting order over indices `1..d.len()` from index 0, and its length.
pub fn solve_open_tour(d: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let order = if d.len() - 1 <= HELD_KARP_MAX {
        held_karp(d)
    } else {
        let mut o = nearest_neighbour(d);
        two_opt(d, &mut o);
        o
    };
    let len = tour_length(d, &order);
    (order, len)
}

/// Nearest-neighbour seed alone, exposed for the dominance check.
pub fn nearest_neighbour_tour(d: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let o = nearest_neighbour(d);
    let len = tour_length(d, &o);
    (o, len)
}

pub fn plan_tour(g: &Supergraph, id: impl Into<String>, start: &str, targets: &[String]) -> Result<Mission, TourError> {
    if !g.nodes.contains_key(start) {
        return Err(TourError::UnknownStart(start.to_string()));
    }
    let uniq: Vec<String> = targets.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let mut pts: Vec<&str> = vec![start];
    pts.extend(uniq.iter().map(|s| s.as_str()));
    let mut d = vec![vec![0.0; pts.len()]; pts.len()];
    for (i, p) in pts.iter().enumerate() {
        let di = distances(g, p);
        for (j, q) in pts.iter().enumerate() {
            match di.get(q) {
                Some(&v) => d[i][j] = v,
                None => return Err(TourError::Unreachable(q.to_string())),
            }
        }
    }
    let (order, _) = solve_open_tour(&d);
    let tour: Vec<String> = order.iter().map(|&i| pts[i].to_string()).collect();
    let mut route = Vec::new();
    let mut captures = Vec::new();
    let mut cur = start.to_string();
    for t in &tour {
        let r = shortest_path(g, &cur, t)?;
        for (w, &e) in r.nodes.windows(2).zip(&r.edges) {
            route.push(Step {
                edge: e,
                from: w[0].clone(),
                to: w[1].clone(),
            });
        }
        captures.push((route.len(), t.clone()));
        cur = t.clone();
    }
    Ok(Mission::new(id.into(), start.to_string(), uniq, tour, route, captures))
}
