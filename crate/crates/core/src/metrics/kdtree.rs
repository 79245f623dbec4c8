//! k-d tree over a point cloud for exact branch-and-bound queries of the form
//! `max_j (-c(x, y_j) - w_j)` with `c = |x - y|^p`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::cloud::PointCloud;

const LEAF: usize = 16;

struct Node {
    lo: Vec<f64>,
    hi: Vec<f64>,
    start: usize,
    end: usize,
    children: Option<(usize, usize)>,
}

pub(crate) struct KdTree<'a> {
    points: &'a PointCloud,
    perm: Vec<usize>,
    nodes: Vec<Node>,
}

/// Candidate ordered by score, ties broken towards the smaller index.
#[derive(Clone, Copy, PartialEq)]
struct Scored(f64, usize);

impl Eq for Scored {}

impl Ord for Scored {
    fn cmp(&self, other: &Self) -> Ordering {
        // Max-heap keeps the worst candidate on top: lowest score, then largest index.
        other.0.total_cmp(&self.0).then(self.1.cmp(&other.1))
    }
}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a PointCloud) -> Self {
        let mut tree = KdTree {
            points,
            perm: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let d = self.points.dim();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for &j in &self.perm[start..end] {
            for (k, &v) in self.points.row(j).iter().enumerate() {
                lo[k] = lo[k].min(v);
                hi[k] = hi[k].max(v);
            }
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            lo,
            hi,
            start,
            end,
            children: None,
        });
        if end - start > LEAF {
            let node = &self.nodes[id];
            let axis = (0..d)
                .max_by(|&x, &y| (node.hi[x] - node.lo[x]).total_cmp(&(node.hi[y] - node.lo[y])))
                .unwrap_or(0);
            let mid = (start + end) / 2;
            let pts = self.points;
            self.perm[start..end].select_nth_unstable_by(mid - start, |&x, &y| {
                pts.row(x)[axis].total_cmp(&pts.row(y)[axis]).then(x.cmp(&y))
            });
            let l = self.build(start, mid);
            let r = self.build(mid, end);
            self.nodes[id].children = Some((l, r));
        }
        id
    }

    pub fn point(&self, j: usize) -> &[f64] {
        self.points.row(j)
    }

    /// Per-node maximum of `-w_j`, used to bound scores.
    pub fn node_bounds(&self, w: &[f64]) -> Vec<f64> {
        let mut out = vec![f64::NEG_INFINITY; self.nodes.len()];
        for (id, node) in self.nodes.iter().enumerate().rev() {
            out[id] = match node.children {
                Some((l, r)) => out[l].max(out[r]),
                None => self.perm[node.start..node.end]
                    .iter()
                    .map(|&j| -w[j])
                    .fold(f64::NEG_INFINITY, f64::max),
            };
        }
        out
    }

    fn box_d2(&self, id: usize, x: &[f64]) -> f64 {
        let n = &self.nodes[id];
        x.iter()
            .enumerate()
            .map(|(k, &v)| {
                let e = (n.lo[k] - v).max(v - n.hi[k]).max(0.0);
                e * e
            })
            .sum()
    }

    /// The `k` best `(score, j)` with `score = -c(x, y_j) - w_j`, best first.
    pub fn best_k(&self, x: &[f64], k: usize, p: f64, w: Option<(&[f64], &[f64])>) -> Vec<(f64, usize)> {
        if self.nodes.is_empty() || k == 0 {
            return Vec::new();
        }
        let cost = |d2: f64| if p == 2.0 { d2 } else { d2.sqrt().powf(p) };
        let weight = |j: usize| w.map_or(0.0, |(w, _)| w[j]);
        let bound = |id: usize| w.map_or(0.0, |(_, b)| b[id]);
        let mut heap: BinaryHeap<Scored> = BinaryHeap::with_capacity(k + 1);
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let ub = -cost(self.box_d2(id, x)) + bound(id);
            if heap.len() == k && ub < heap.peek().expect("full heap").0 {
                continue;
            }
            let node = &self.nodes[id];
            match node.children {
                Some((l, r)) => {
                    // Visit the nearer child first.
                    let (near, far) = if self.box_d2(l, x) <= self.box_d2(r, x) { (l, r) } else { (r, l) };
                    stack.push(far);
                    stack.push(near);
                }
                None => {
                    for &j in &self.perm[node.start..node.end] {
                        let d2: f64 = x.iter().zip(self.points.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                        let s = Scored(-cost(d2) - weight(j), j);
                        if heap.len() < k {
                            heap.push(s);
                        } else if s < *heap.peek().expect("full heap") {
                            heap.pop();
                            heap.push(s);
                        }
                    }
                }
            }
        }
        let mut v: Vec<(f64, usize)> = heap.into_iter().map(|s| (s.0, s.1)).collect();
        v.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Measure;

    #[test]
    fn matches_brute_force() {
        let y = Measure::standard_gaussian(3).sample(500, 9).unwrap();
        let x = Measure::standard_gaussian(3).sample(40, 10).unwrap();
        let w: Vec<f64> = (0..500).map(|j| ((j * 37) % 11) as f64 * 0.1).collect();
        let tree = KdTree::new(&y);
        let b = tree.node_bounds(&w);
        for p in [1.0, 2.0, 3.0] {
            for i in 0..x.len() {
                let xi = x.row(i);
                let ranked = |weighted: bool| {
                    let mut v: Vec<(f64, usize)> = (0..500)
                        .map(|j| {
                            let d2: f64 = xi.iter().zip(y.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                            let c = if p == 2.0 { d2 } else { d2.sqrt().powf(p) };
                            (-c - if weighted { w[j] } else { 0.0 }, j)
                        })
                        .collect();
                    v.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
                    v
                };
                assert_eq!(tree.best_k(xi, 5, p, Some((&w, &b))), ranked(true)[..5].to_vec());
                assert_eq!(tree.best_k(xi, 3, p, None), ranked(false)[..3].to_vec());
            }
        }
    }
}
