//! Weighted least-squares regression trees grown level by level with an
//! exact split search over presorted feature orders.
//!
//! A tree fits targets `t` with weights `w` (zero weight = not in the
//! sample). Leaves hold `Σwt / Σw`, so Newton boosting passes
//! `t = -g/h, w = h` and bagging passes `t = y` with bootstrap counts.

use ndarray::ArrayView2;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        value: f64,
    },
    /// `x[feature] <= threshold` goes left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split { feature, threshold, left, right } => i = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }

    pub fn scale_leaves(&mut self, s: f64) {
        for n in &mut self.nodes {
            if let Node::Leaf { value } = n {
                *value *= s;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    /// `usize::MAX` for unlimited.
    pub max_depth: usize,
    /// Minimum number of distinct in-sample rows per child.
    pub min_leaf: usize,
    /// Features considered per node; `>= d` means all.
    pub max_features: usize,
}

/// Minimum child weight; guards Newton leaves against vanishing hessians.
const MIN_WEIGHT: f64 = 1e-12;

/// Per-feature row orders by ascending value.
pub fn presort(x: ArrayView2<f64>) -> Vec<Vec<u32>> {
    (0..x.ncols())
        .map(|f| {
            let col = x.column(f);
            let mut idx: Vec<u32> = (0..x.nrows() as u32).collect();
            idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
            idx
        })
        .collect()
}

#[derive(Clone, Copy)]
struct Stats {
    s: f64,
    w: f64,
    n: usize,
}

impl Stats {
    const ZERO: Stats = Stats { s: 0.0, w: 0.0, n: 0 };

    fn score(&self) -> f64 {
        if self.w > 0.0 {
            self.s * self.s / self.w
        } else {
            0.0
        }
    }
}

#[derive(Clone, Copy)]
struct Best {
    gain: f64,
    feature: usize,
    threshold: f64,
}

struct Open {
    node: usize,
    stats: Stats,
    features: Option<Vec<bool>>,
}

/// Grows one tree. `sorted` must come from [`presort`] on the same `x`.
pub fn grow<R: Rng>(x: ArrayView2<f64>, t: &[f64], w: &[f64], sorted: &[Vec<u32>], params: &TreeParams, rng: &mut R) -> Tree {
    let (n, d) = x.dim();
    const NONE: u32 = u32::MAX;
    let mut node_of = vec![NONE; n];
    let mut root = Stats::ZERO;
    for i in 0..n {
        if w[i] > 0.0 {
            node_of[i] = 0;
            root.s += w[i] * t[i];
            root.w += w[i];
            root.n += 1;
        }
    }
    let mut nodes = vec![Node::Leaf { value: if root.w > 0.0 { root.s / root.w } else { 0.0 } }];
    let mut open = vec![Open { node: 0, stats: root, features: None }];
    let mut depth = 0;
    while !open.is_empty() && depth < params.max_depth {
        // Local ids index `open`; map node id → local id for the scan.
        let mut local = vec![NONE; nodes.len()];
        for (k, o) in open.iter_mut().enumerate() {
            local[o.node] = k as u32;
            if params.max_features < d {
                let mut mask = vec![false; d];
                for f in sample(rng, d, params.max_features) {
                    mask[f] = true;
                }
                o.features = Some(mask);
            }
        }
        let mut best: Vec<Option<Best>> = vec![None; open.len()];
        let mut left = vec![Stats::ZERO; open.len()];
        let mut last = vec![f64::NAN; open.len()];
        for f in 0..d {
            if open.iter().all(|o| o.features.as_ref().is_some_and(|m| !m[f])) {
                continue;
            }
            left.fill(Stats::ZERO);
            let col = x.column(f);
            for &i in &sorted[f] {
                let i = i as usize;
                let nd = node_of[i];
                if nd == NONE {
                    continue;
                }
                let k = local[nd as usize] as usize;
                if open[k].features.as_ref().is_some_and(|m| !m[f]) {
                    continue;
                }
                let v = col[i];
                let l = left[k];
                if l.n > 0 && v > last[k] {
                    let tot = open[k].stats;
                    let r = Stats { s: tot.s - l.s, w: tot.w - l.w, n: tot.n - l.n };
                    if l.n >= params.min_leaf && r.n >= params.min_leaf && l.w > MIN_WEIGHT && r.w > MIN_WEIGHT {
                        let gain = l.score() + r.score() - tot.score();
                        if best[k].is_none_or(|b| gain > b.gain) {
                            let mut thr = last[k] + (v - last[k]) / 2.0;
                            if thr >= v {
                                thr = last[k];
                            }
                            best[k] = Some(Best { gain, feature: f, threshold: thr });
                        }
                    }
                }
                left[k].s += w[i] * t[i];
                left[k].w += w[i];
                left[k].n += 1;
                last[k] = v;
            }
        }
        // Split nodes with positive gain; children become the next frontier.
        let mut next = Vec::new();
        let mut child_of: Vec<Option<(usize, usize, usize, f64)>> = vec![None; open.len()];
        for (k, o) in open.iter().enumerate() {
            let Some(b) = best[k].filter(|b| b.gain > 1e-12 * o.stats.score().abs().max(1.0)) else { continue };
            let (l, r) = (nodes.len(), nodes.len() + 1);
            nodes.push(Node::Leaf { value: 0.0 });
            nodes.push(Node::Leaf { value: 0.0 });
            nodes[o.node] = Node::Split { feature: b.feature, threshold: b.threshold, left: l, right: r };
            child_of[k] = Some((l, r, b.feature, b.threshold));
        }
        let mut child_stats = vec![Stats::ZERO; nodes.len()];
        for i in 0..n {
            let nd = node_of[i];
            if nd == NONE {
                continue;
            }
            let k = local[nd as usize] as usize;
            match child_of[k] {
                None => node_of[i] = NONE,
                Some((l, r, f, thr)) => {
                    let c = if x[[i, f]] <= thr { l } else { r };
                    node_of[i] = c as u32;
                    let e = &mut child_stats[c];
                    e.s += w[i] * t[i];
                    e.w += w[i];
                    e.n += 1;
                }
            }
        }
        for &(l, r, _, _) in child_of.iter().take(open.len()).flatten() {
            for c in [l, r] {
                let st = child_stats[c];
                nodes[c] = Node::Leaf { value: st.s / st.w };
                next.push(Open { node: c, stats: st, features: None });
            }
        }
        open = next;
        depth += 1;
    }
    Tree { nodes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::rng_from;
    use ndarray::Array2;
    use rand::Rng;

    fn all(d: usize) -> TreeParams {
        TreeParams { max_depth: 1, min_leaf: 1, max_features: d }
    }

    /// Brute force: every feature, every midpoint, explicit weighted SSE.
    fn oracle_root(x: &Array2<f64>, t: &[f64], w: &[f64]) -> (usize, f64) {
        let sse = |rows: &[usize]| {
            let sw: f64 = rows.iter().map(|&i| w[i]).sum();
            let m = rows.iter().map(|&i| w[i] * t[i]).sum::<f64>() / sw;
            rows.iter().map(|&i| w[i] * (t[i] - m) * (t[i] - m)).sum::<f64>()
        };
        let mut best = (f64::INFINITY, 0, 0.0);
        for f in 0..x.ncols() {
            let mut vals: Vec<f64> = (0..x.nrows()).map(|i| x[[i, f]]).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            for pair in vals.windows(2) {
                let thr = (pair[0] + pair[1]) / 2.0;
                let (l, r): (Vec<usize>, Vec<usize>) = (0..x.nrows()).partition(|&i| x[[i, f]] <= thr);
                let cost = sse(&l) + sse(&r);
                if cost < best.0 - 1e-12 {
                    best = (cost, f, thr);
                }
            }
        }
        (best.1, best.2)
    }

    #[test]
    fn root_split_matches_brute_force() {
        for seed in 0..30 {
            let mut rng = rng_from(seed);
            let n = rng.random_range(5..=50);
            let x = Array2::<f64>::from_shape_fn((n, 4), |_| rng.random_range(-5.0..5.0));
            let t: Vec<f64> = (0..n).map(|i| x[[i, 1]].sin() + 0.3 * x[[i, 2]] + rng.random_range(-0.5..0.5)).collect();
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
            let tree = grow(x.view(), &t, &w, &presort(x.view()), &all(4), &mut rng);
            let (f, thr) = oracle_root(&x, &t, &w);
            match tree.nodes[0] {
                Node::Split { feature, threshold, .. } => {
                    assert_eq!(feature, f, "seed {seed}");
                    assert!((threshold - thr).abs() < 1e-12, "seed {seed}");
                }
                _ => panic!("no split"),
            }
        }
    }

    #[test]
    fn stump_on_sign_finds_the_gap() {
        let mut rng = rng_from(2);
        let x = Array2::from_shape_fn((100, 1), |_| rng.random_range(-1.0..1.0));
        let t: Vec<f64> = x.column(0).iter().map(|&v| (v > 0.0) as u8 as f64).collect();
        let tree = grow(x.view(), &t, &vec![1.0; 100], &presort(x.view()), &all(1), &mut rng);
        let neg = x.column(0).iter().copied().filter(|&v| v <= 0.0).fold(f64::NEG_INFINITY, f64::max);
        let pos = x.column(0).iter().copied().filter(|&v| v > 0.0).fold(f64::INFINITY, f64::min);
        let Node::Split { threshold, .. } = tree.nodes[0] else { panic!() };
        assert!(neg < threshold && threshold < pos);
        assert_eq!(tree.predict_row(&[neg]), 0.0);
        assert_eq!(tree.predict_row(&[pos]), 1.0);
    }

    #[test]
    fn depth_and_min_leaf_are_respected() {
        let mut rng = rng_from(8);
        let x = Array2::from_shape_fn((200, 3), |_| rng.random_range(0.0..1.0));
        let t: Vec<f64> = (0..200).map(|_| rng.random_range(0.0..1.0)).collect();
        let p = TreeParams { max_depth: 3, min_leaf: 10, max_features: 3 };
        let tree = grow(x.view(), &t, &vec![1.0; 200], &presort(x.view()), &p, &mut rng);
        assert!(tree.depth() <= 3);
        let mut counts = std::collections::HashMap::new();
        for i in 0..200 {
            let row: Vec<f64> = x.row(i).to_vec();
            let mut k = 0;
            while let Node::Split { feature, threshold, left, right } = tree.nodes[k] {
                k = if row[feature] <= threshold { left } else { right };
            }
            *counts.entry(k).or_insert(0) += 1;
        }
        assert!(counts.values().all(|&c| c >= 10));
    }

    #[test]
    fn constant_target_gives_single_leaf() {
        let x = Array2::from_shape_fn((20, 2), |(i, j)| (i * (j + 1)) as f64);
        let tree = grow(x.view(), &[3.0; 20], &[1.0; 20], &presort(x.view()), &TreeParams { max_depth: 5, min_leaf: 1, max_features: 2 }, &mut rng_from(0));
        assert_eq!(tree.nodes, vec![Node::Leaf { value: 3.0 }]);
    }
}
