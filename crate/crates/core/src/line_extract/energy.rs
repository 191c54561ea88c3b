//! Potts energy over component labels, minimized by alpha-expansion and
//! alpha-beta swap moves.

use serde::{Deserialize, Serialize};

use super::maxflow::FlowGraph;
use crate::error::{Error, Result};

/// `E(f) = sum_c unary[c][f_c] + sum_{(i,j,w)} w * [f_i != f_j]`.
/// Labels are indices `0..num_labels`; callers map them to blob ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyProblem {
    pub num_nodes: usize,
    pub num_labels: usize,
    /// Row-major `num_nodes x num_labels`.
    pub unary: Vec<f64>,
    pub edges: Vec<(usize, usize, f64)>,
}

/// Label index per node and the energy of that assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Labeling {
    pub labels: Vec<usize>,
    pub energy: f64,
}

pub const BRUTE_FORCE_LIMIT: f64 = 1e6;

impl EnergyProblem {
    pub fn new(num_nodes: usize, num_labels: usize, unary: Vec<f64>, edges: Vec<(usize, usize, f64)>) -> Result<Self> {
        if unary.len() != num_nodes * num_labels {
            return Err(Error::invalid("unary table size does not match nodes x labels"));
        }
        if unary.iter().any(|v| !v.is_finite()) || edges.iter().any(|e| !(e.2.is_finite() && e.2 >= 0.0)) {
            return Err(Error::invalid("energy terms must be finite, edge weights non-negative"));
        }
        if edges.iter().any(|&(i, j, _)| i == j || i >= num_nodes || j >= num_nodes) {
            return Err(Error::invalid("edge endpoints must be distinct nodes"));
        }
        Ok(EnergyProblem {
            num_nodes,
            num_labels,
            unary,
            edges,
        })
    }

    #[inline]
    pub fn unary(&self, node: usize, label: usize) -> f64 {
        self.unary[node * self.num_labels + label]
    }

    /// Summed in a fixed order: unaries by node, then edges as listed.
    pub fn energy(&self, labels: &[usize]) -> f64 {
        let mut e = 0.0;
        for (i, &l) in labels.iter().enumerate() {
            e += self.unary(i, l);
        }
        for &(i, j, w) in &self.edges {
            if labels[i] != labels[j] {
                e += w;
            }
        }
        e
    }

    /// Per-node data argmin, lowest label on ties.
    pub fn independent_argmin(&self) -> Vec<usize> {
        (0..self.num_nodes)
            .map(|i| {
                (0..self.num_labels).fold(0, |best, l| if self.unary(i, l) < self.unary(i, best) { l } else { best })
            })
            .collect()
    }

    fn labeling(&self, labels: Vec<usize>) -> Labeling {
        let energy = self.energy(&labels);
        Labeling { labels, energy }
    }

    /// Move-making descent from the independent argmin and from each
    /// constant labeling; the lowest energy wins, earlier starts on ties.
    pub fn minimize(&self) -> Result<Labeling> {
        if self.num_labels == 0 {
            return Err(Error::invalid("no labels to assign"));
        }
        let first = self.labeling(self.independent_argmin());
        if self.num_labels == 1 || self.num_nodes == 0 {
            return Ok(first);
        }
        let mut best = self.descend(first);
        for l in 0..self.num_labels {
            let cand = self.descend(self.labeling(vec![l; self.num_nodes]));
            if cand.energy < best.energy {
                best = cand;
            }
        }
        Ok(best)
    }

    /// Alternate alpha-expansion sweeps (labels ascending) and alpha-beta
    /// swap sweeps until neither makes a strict improvement.
    pub fn descend(&self, mut current: Labeling) -> Labeling {
        let accept = |current: &mut Labeling, proposal: Vec<usize>| {
            let energy = self.energy(&proposal);
            let better = energy < current.energy;
            if better {
                *current = Labeling {
                    labels: proposal,
                    energy,
                };
            }
            better
        };
        loop {
            let mut improved = false;
            for alpha in 0..self.num_labels {
                let proposal = self.expand(&current.labels, alpha);
                improved |= accept(&mut current, proposal);
            }
            for a in 0..self.num_labels {
                for b in a + 1..self.num_labels {
                    let proposal = self.swap(&current.labels, a, b);
                    improved |= accept(&mut current, proposal);
                }
            }
            if !improved {
                return current;
            }
        }
    }

    /// Optimal alpha-beta swap: nodes labeled `a` or `b` may exchange those
    /// labels, everything else stays. Ties keep more nodes at `a`.
    pub fn swap(&self, labels: &[usize], a: usize, b: usize) -> Vec<usize> {
        let n = self.num_nodes;
        let (s, t) = (n, n + 1);
        let free: Vec<bool> = labels.iter().map(|&l| l == a || l == b).collect();
        let mut cost_a: Vec<f64> = (0..n).map(|i| self.unary(i, a)).collect();
        let mut cost_b: Vec<f64> = (0..n).map(|i| self.unary(i, b)).collect();
        let mut g = FlowGraph::new(n + 2);
        for &(i, j, w) in &self.edges {
            match (free[i], free[j]) {
                (true, true) => {
                    if w > 0.0 {
                        g.add_edge(i, j, w, w);
                    }
                }
                (true, false) | (false, true) => {
                    let (f, o) = if free[i] { (i, j) } else { (j, i) };
                    if labels[o] != a {
                        cost_a[f] += w;
                    }
                    if labels[o] != b {
                        cost_b[f] += w;
                    }
                }
                (false, false) => {}
            }
        }
        for i in (0..n).filter(|&i| free[i]) {
            let m = cost_a[i].min(cost_b[i]);
            if cost_b[i] > m {
                g.add_edge(s, i, cost_b[i] - m, 0.0);
            }
            if cost_a[i] > m {
                g.add_edge(i, t, cost_a[i] - m, 0.0);
            }
        }
        g.max_flow(s, t);
        let sink = g.sink_side(t);
        labels
            .iter()
            .enumerate()
            .map(|(i, &l)| match (free[i], sink[i]) {
                (true, true) => b,
                (true, false) => a,
                _ => l,
            })
            .collect()
    }

    /// Optimal alpha-expansion of `labels`. Source side keeps its label,
    /// sink side switches to alpha; the smallest sink side is taken so ties
    /// keep the current label.
    pub fn expand(&self, labels: &[usize], alpha: usize) -> Vec<usize> {
        let n = self.num_nodes;
        let (s, t) = (n, n + 1);
        // cost of keeping (x = 0) and of switching (x = 1)
        let mut keep: Vec<f64> = (0..n).map(|i| self.unary(i, labels[i])).collect();
        let mut switch: Vec<f64> = (0..n).map(|i| self.unary(i, alpha)).collect();
        let fixed: Vec<bool> = labels.iter().map(|&l| l == alpha).collect();
        let mut g = FlowGraph::new(n + 2);

        for &(i, j, w) in &self.edges {
            let (li, lj) = (labels[i], labels[j]);
            let a = if li != lj { w } else { 0.0 };
            let b = if li != alpha { w } else { 0.0 };
            let c = if alpha != lj { w } else { 0.0 };
            match (fixed[i], fixed[j]) {
                (true, true) => {}
                (true, false) => keep[j] += c,
                (false, true) => keep[i] += b,
                (false, false) => {
                    // V = A + (C - A) x_i + (D - C) x_j + (B + C - A - D)(1 - x_i) x_j, D = 0
                    add_linear(&mut keep, &mut switch, i, c - a);
                    add_linear(&mut keep, &mut switch, j, -c);
                    let pair = b + c - a;
                    if pair > 0.0 {
                        g.add_edge(i, j, pair, 0.0);
                    }
                }
            }
        }
        for i in 0..n {
            if fixed[i] {
                continue;
            }
            let m = keep[i].min(switch[i]);
            let (k, sw) = (keep[i] - m, switch[i] - m);
            if sw > 0.0 {
                g.add_edge(s, i, sw, 0.0);
            }
            if k > 0.0 {
                g.add_edge(i, t, k, 0.0);
            }
        }
        g.max_flow(s, t);
        let sink = g.sink_side(t);
        labels
            .iter()
            .enumerate()
            .map(|(i, &l)| if !fixed[i] && sink[i] { alpha } else { l })
            .collect()
    }

    /// Exact minimum by enumeration; the lexicographically first minimizer wins.
    pub fn brute_force(&self) -> Result<Labeling> {
        if self.num_labels == 0 {
            return Err(Error::invalid("no labels to assign"));
        }
        let count = (self.num_labels as f64).powi(self.num_nodes as i32);
        if count > BRUTE_FORCE_LIMIT {
            return Err(Error::TooLarge(count));
        }
        let mut labels = vec![0usize; self.num_nodes];
        let mut best = self.labeling(labels.clone());
        loop {
            // increment as a base-L number, most significant digit first
            let mut k = self.num_nodes;
            loop {
                if k == 0 {
                    return Ok(best);
                }
                k -= 1;
                labels[k] += 1;
                if labels[k] < self.num_labels {
                    break;
                }
                labels[k] = 0;
            }
            let e = self.energy(&labels);
            if e < best.energy {
                best = Labeling {
                    labels: labels.clone(),
                    energy: e,
                };
            }
        }
    }
}

/// Add `coef * x_i`.
fn add_linear(keep: &mut [f64], switch: &mut [f64], i: usize, coef: f64) {
    if coef >= 0.0 {
        switch[i] += coef;
    } else {
        keep[i] -= coef;
    }
}
