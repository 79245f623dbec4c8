//! Minimum-cost perfect matching between equal-size clouds by the auction
//! algorithm with epsilon scaling, on a candidate edge set that is grown until
//! a dense dual check certifies global optimality.

use std::collections::VecDeque;

use rayon::prelude::*;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

use super::kdtree::KdTree;

/// Above this many cost entries the candidate graph is sparsified.
pub const DENSE_LIMIT: usize = 1_000_000;
const NEIGHBOURS: usize = 24;
const SCALING: f64 = 6.0;
/// Edges added per violated dual constraint.
const REPAIR: usize = 4;

pub(crate) fn cost_fn(p: f64) -> impl Fn(&[f64], &[f64]) -> f64 + Sync {
    move |x: &[f64], y: &[f64]| {
        let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        if p == 2.0 {
            d2
        } else {
            d2.sqrt().powf(p)
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Matching {
    /// Mean cost of the matching.
    pub mean_cost: f64,
    /// Mean cost minus a dual lower bound on the optimum.
    pub gap: f64,
    pub rounds: usize,
}

/// `adj[i]` lists `(j, c_ij)`, sorted by `j` and duplicate-free.
type Graph = Vec<Vec<(usize, f64)>>;

fn candidate_graph(a: &PointCloud, b: &PointCloud, p: f64) -> Graph {
    let n = a.len();
    let c = cost_fn(p);
    if n * n <= DENSE_LIMIT {
        return (0..n)
            .into_par_iter()
            .map(|i| (0..n).map(|j| (j, c(a.row(i), b.row(j)))).collect())
            .collect();
    }
    let k = NEIGHBOURS.min(n);
    let nearest = |from: &PointCloud, to: &PointCloud| -> Vec<Vec<usize>> {
        let tree = KdTree::new(to);
        (0..n)
            .into_par_iter()
            .map(|i| tree.best_k(from.row(i), k, p, None).into_iter().map(|e| e.1).collect())
            .collect()
    };
    let fwd = nearest(a, b);
    let back = nearest(b, a);
    let mut adj: Vec<Vec<usize>> = fwd;
    for (j, is) in back.into_iter().enumerate() {
        for i in is {
            adj[i].push(j);
        }
    }
    // Rank matchings along a few directions make the graph contain a perfect
    // matching, so the auction never runs out of admissible objects.
    let d = a.dim();
    let dirs = (0..d).map(|k| (0..d).map(|m| f64::from(m == k)).collect::<Vec<_>>());
    let diag = vec![1.0 / (d as f64).sqrt(); d];
    for theta in dirs.chain(std::iter::once(diag)).take(d.max(2)) {
        let order = |cloud: &PointCloud| {
            let proj: Vec<f64> = cloud.rows().map(|x| x.iter().zip(&theta).map(|(u, v)| u * v).sum()).collect();
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&x, &y| proj[x].total_cmp(&proj[y]).then(x.cmp(&y)));
            idx
        };
        for (i, j) in order(a).into_iter().zip(order(b)) {
            adj[i].push(j);
        }
    }
    adj.into_par_iter()
        .enumerate()
        .map(|(i, mut js)| {
            js.sort_unstable();
            js.dedup();
            js.into_iter().map(|j| (j, c(a.row(i), b.row(j)))).collect()
        })
        .collect()
}

/// Gauss–Seidel auction on `graph` (benefit `-c`), warm-started at `prices`.
/// Returns `None` when prices rise past the feasible bound within the phase, meaning the graph has no perfect matching.
fn auction(graph: &Graph, prices: &mut [f64], eps: f64, cap: f64) -> Option<Vec<usize>> {
    let n = graph.len();
    let base = prices.to_vec();
    let spread = base.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v)) - base.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    let limit = cap * (n as f64 + 2.0) + spread;
    let mut owner = vec![usize::MAX; n];
    let mut assigned = vec![usize::MAX; n];
    let mut queue: VecDeque<usize> = (0..n).collect();
    while let Some(i) = queue.pop_front() {
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        let mut second = f64::NEG_INFINITY;
        for &(j, c) in &graph[i] {
            let v = -c - prices[j];
            if v > best.0 {
                second = best.0;
                best = (v, j);
            } else if v > second {
                second = v;
            }
        }
        let j = best.1;
        let incr = if second.is_finite() { best.0 - second } else { cap };
        prices[j] += incr + eps;
        if prices[j] - base[j] > limit {
            return None;
        }
        let prev = owner[j];
        if prev != usize::MAX {
            assigned[prev] = usize::MAX;
            queue.push_back(prev);
        }
        owner[j] = i;
        assigned[i] = j;
    }
    Some(assigned)
}

/// Exact (to `rel_tol` of the mean cost) optimal matching of `a` onto `b`.
pub(crate) fn match_clouds(a: &PointCloud, b: &PointCloud, p: f64, rel_tol: f64) -> Result<Matching> {
    let n = a.len();
    if n != b.len() || n == 0 {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let c = cost_fn(p);
    let mut graph = candidate_graph(a, b, p);
    let cmax = graph
        .iter()
        .flat_map(|r| r.iter().map(|e| e.1))
        .fold(0.0f64, f64::max)
        .max(1e-300);
    let cmean = graph
        .iter()
        .map(|r| r.iter().map(|e| e.1).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / n as f64;
    // Bids below the price resolution would never terminate.
    let eps_final = (rel_tol * cmean).max(1e-13 * cmax);
    let tree = KdTree::new(b);
    let mut prices = vec![0.0; n];
    let mut rounds = 0;
    let mut start = cmax / 4.0;
    loop {
        rounds += 1;
        let mut eps = start;
        let mut assigned;
        loop {
            let cap = cmax + eps;
            match auction(&graph, &mut prices, eps.max(eps_final), cap) {
                Some(s) => assigned = s,
                None => {
                    // Densify: double every adjacency by nearest unused objects.
                                    graph = widen(&graph, a, b, &tree, p);
                    prices.iter_mut().for_each(|v| *v = 0.0);
                    eps = cmax / 4.0;
                    continue;
                }
            }
            if eps <= eps_final {
                break;
            }
            eps /= SCALING;
        }
        let viol = dual_check(a, &tree, p, &prices, &assigned);
        let bounds = tree.node_bounds(&prices);
        let repairs: Vec<(usize, Vec<usize>)> = viol
            .par_iter()
            .filter(|v| v.2 > v.3 + eps_final)
            .map(|&(i, _, _, own)| {
                let best = tree.best_k(a.row(i), REPAIR, p, Some((&prices, &bounds)));
                (i, best.into_iter().filter(|e| e.0 > own + eps_final).map(|e| e.1).collect())
            })
            .collect();
        let mut worst = 0.0f64;
        for &(_, _, pi, own) in &viol {
            if pi > own + eps_final {
                worst = worst.max(pi - own);
            }
        }
        let mut added = 0;
        for (i, js) in repairs {
            for j in js {
                if let Err(pos) = graph[i].binary_search_by(|e| e.0.cmp(&j)) {
                    graph[i].insert(pos, (j, c(a.row(i), b.row(j))));
                    added += 1;
                }
            }
        }
        // Repairs restart the scaling at the size of the largest violation.
        start = worst;
        if added == 0 || rounds > 50 {
            let primal: f64 = (0..n).map(|i| c(a.row(i), b.row(assigned[i]))).sum();
            // Dual bound: -(sum pi_i + sum p_j) <= optimum.
            let dual = -(viol.iter().map(|v| v.2).sum::<f64>() + prices.iter().sum::<f64>());
            return Ok(Matching {
                mean_cost: primal / n as f64,
                gap: ((primal - dual) / n as f64).max(0.0),
                rounds,
            });
        }
    }
}

/// For every person `i`, `(i, j*, pi_i, own_i)` with `pi_i = max_j (-c_ij - p_j)`
/// over all objects, found exactly by branch and bound.
fn dual_check(a: &PointCloud, tree: &KdTree<'_>, p: f64, prices: &[f64], assigned: &[usize]) -> Vec<(usize, usize, f64, f64)> {
    let c = cost_fn(p);
    let bounds = tree.node_bounds(prices);
    (0..a.len())
        .into_par_iter()
        .map(|i| {
            let x = a.row(i);
            let (pi, j) = tree.best_k(x, 1, p, Some((prices, &bounds)))[0];
            let own = assigned[i];
            (i, j, pi, -c(x, tree.point(own)) - prices[own])
        })
        .collect()
}

fn widen(graph: &Graph, a: &PointCloud, b: &PointCloud, tree: &KdTree<'_>, p: f64) -> Graph {
    let n = a.len();
    let c = cost_fn(p);
    graph
        .par_iter()
        .enumerate()
        .map(|(i, row)| {
            let k = (row.len() * 2).min(n);
            let mut js: Vec<usize> = tree
                .best_k(a.row(i), k, p, None)
                .into_iter()
                .map(|e| e.1)
                .chain(row.iter().map(|e| e.0))
                .collect();
            js.sort_unstable();
            js.dedup();
            js.into_iter().map(|j| (j, c(a.row(i), b.row(j)))).collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_matching_is_sorted() {
        let a = PointCloud::from_scalars(vec![3.0, -1.0, 0.5, 2.0]);
        let b = PointCloud::from_scalars(vec![0.0, 1.0, -2.0, 4.0]);
        let m = match_clouds(&a, &b, 2.0, 1e-12).unwrap();
        // sorted: (-1,-2), (0.5,0), (2,1), (3,4): 1 + 0.25 + 1 + 1
        assert!((m.mean_cost - 3.25 / 4.0).abs() < 1e-12, "{m:?}");
        assert!(m.gap < 1e-10);
    }
}
