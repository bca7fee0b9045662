//! Communication topology among agents.
//!
//! Graphs are weighted adjacency matrices. The Laplacian's largest eigenvalue
//! sets the largest uniform delay the consensus dynamics tolerate.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::matrix::SquareMatrix;

/// Errors raised while building or analysing a graph.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("edge ({j}, {m}) is a self-loop")]
    SelfLoop { j: usize, m: usize },
    #[error("edge ({j}, {m}) out of range for {n} agents")]
    OutOfRange { j: usize, m: usize, n: usize },
    #[error("edge ({j}, {m}) has non-positive or non-finite weight {w}")]
    BadWeight { j: usize, m: usize, w: f64 },
    #[error("graph needs at least one agent")]
    Empty,
    #[error("operation defined for undirected graphs only")]
    Directed,
    #[error("graph has no edges")]
    NoEdges,
    #[error("schedule is empty")]
    EmptySchedule,
    #[error("schedule times must be strictly increasing (entry {index})")]
    UnorderedSchedule { index: usize },
    #[error("schedule entry {index} has {got} agents, expected {expected}")]
    SizeMismatch { index: usize, got: usize, expected: usize },
    #[error("no graph is active at t = {t}")]
    BeforeSchedule { t: f64 },
}

/// Weighted adjacency `A = [e_jm]` among `n` agents; `e_jm` weights what `j`
/// hears from `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct CyberGraph {
    weights: SquareMatrix,
    directed: bool,
}

fn check_edge(n: usize, j: usize, m: usize, w: f64) -> Result<(), GraphError> {
    if j >= n || m >= n {
        return Err(GraphError::OutOfRange { j, m, n });
    }
    if j == m {
        return Err(GraphError::SelfLoop { j, m });
    }
    if !(w > 0.0 && w.is_finite()) {
        return Err(GraphError::BadWeight { j, m, w });
    }
    Ok(())
}

impl CyberGraph {
    /// Undirected graph; each `(j, m, w)` sets both `e_jm` and `e_mj`.
    pub fn undirected(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::Empty);
        }
        let mut weights = SquareMatrix::zeros(n);
        for &(j, m, w) in edges {
            check_edge(n, j, m, w)?;
            weights.set(j, m, w);
            weights.set(m, j, w);
        }
        Ok(Self { weights, directed: false })
    }

    /// Directed graph; `(j, m, w)` means `j` receives from `m` with weight `w`.
    pub fn directed(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::Empty);
        }
        let mut weights = SquareMatrix::zeros(n);
        for &(j, m, w) in edges {
            check_edge(n, j, m, w)?;
            weights.set(j, m, w);
        }
        Ok(Self { weights, directed: true })
    }

    /// Unit-weight complete graph.
    pub fn complete(n: usize) -> Self {
        let mut edges = Vec::new();
        for j in 0..n {
            for m in j + 1..n {
                edges.push((j, m, 1.0));
            }
        }
        Self::undirected(n.max(1), &edges).expect("complete graph is valid")
    }

    /// Unit-weight path `0 - 1 - ... - n-1`.
    pub fn chain(n: usize) -> Self {
        let edges: Vec<_> = (1..n).map(|j| (j - 1, j, 1.0)).collect();
        Self::undirected(n.max(1), &edges).expect("chain is valid")
    }

    /// Unit-weight ring with a chord from every third agent to the opposite side.
    pub fn ring_with_chords(n: usize) -> Self {
        let mut g = Self::chain(n);
        if n > 2 {
            g.weights.set(0, n - 1, 1.0);
            g.weights.set(n - 1, 0, 1.0);
            for j in (0..n).step_by(3) {
                let m = (j + n / 2) % n;
                if m != j {
                    g.weights.set(j, m, 1.0);
                    g.weights.set(m, j, 1.0);
                }
            }
        }
        g
    }

    pub fn n_agents(&self) -> usize {
        self.weights.n()
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    /// `e_jm`.
    pub fn weight(&self, j: usize, m: usize) -> f64 {
        self.weights.get(j, m)
    }

    pub fn weights(&self) -> &SquareMatrix {
        &self.weights
    }

    /// Agents `j` hears from, with weights, in index order.
    pub fn neighbors(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.weights.row(j).iter().copied().enumerate().filter(|&(_, w)| w > 0.0)
    }

    /// Row sum of the adjacency.
    pub fn in_degree(&self, j: usize) -> f64 {
        self.weights.row_sum(j)
    }

    /// Directed edge list `(dst, src)` of every link carrying data, i.e. `e_dst,src > 0`.
    pub fn links(&self) -> Vec<(usize, usize)> {
        let n = self.n_agents();
        let mut out = Vec::new();
        for j in 0..n {
            for (m, _) in self.neighbors(j) {
                out.push((j, m));
            }
        }
        out
    }

    /// Same structure with every weight multiplied by `k > 0`.
    pub fn scaled(&self, k: f64) -> Self {
        Self { weights: self.weights.scaled(k), directed: self.directed }
    }

    /// True when every agent is reachable from agent 0 ignoring edge direction.
    pub fn is_connected(&self) -> bool {
        let n = self.n_agents();
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(j) = queue.pop_front() {
            for m in 0..n {
                if !seen[m] && (self.weight(j, m) > 0.0 || self.weight(m, j) > 0.0) {
                    seen[m] = true;
                    queue.push_back(m);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Builds an undirected graph from an edge list.
pub fn build_graph(n: usize, edges: &[(usize, usize, f64)]) -> Result<CyberGraph, GraphError> {
    CyberGraph::undirected(n, edges)
}

/// In-degrees and the Laplacian `L = D_in - A`.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianView {
    pub d_in: Vec<f64>,
    pub laplacian: SquareMatrix,
    pub symmetric: bool,
    pub connected: bool,
}

pub fn laplacian(g: &CyberGraph) -> LaplacianView {
    let n = g.n_agents();
    let mut l = SquareMatrix::zeros(n);
    let mut d_in = vec![0.0; n];
    for j in 0..n {
        // Diagonal is the negated sum of the off-diagonal entries so rows cancel exactly.
        let mut off = 0.0;
        for m in 0..n {
            if m != j {
                let v = -g.weight(j, m);
                l.set(j, m, v);
                off += v;
            }
        }
        l.set(j, j, -off);
        d_in[j] = -off;
    }
    LaplacianView { d_in, laplacian: l, symmetric: !g.is_directed(), connected: g.is_connected() }
}

const POWER_MAX_ITERS: usize = 200_000;

/// Largest Laplacian eigenvalue by power iteration on `L - sI`.
///
/// The shift `s` is a quarter of the largest degree: every eigenvalue lies in
/// `[0, λ_max]` and `λ_max >= d_max`, so the shifted spectrum's dominant end is
/// always `λ_max - s`.
pub fn max_laplacian_eigenvalue(lv: &LaplacianView) -> Result<f64, GraphError> {
    if !lv.symmetric {
        return Err(GraphError::Directed);
    }
    let n = lv.laplacian.n();
    let d_max = lv.d_in.iter().copied().fold(0.0, f64::max);
    if d_max == 0.0 {
        return Ok(0.0);
    }
    let shift = 0.25 * d_max;
    // deterministic start vector with components in every eigen-direction
    let mut v: Vec<f64> = (0..n)
        .map(|i| {
            let x = crate::rng::splitmix64(0x5eed ^ i as u64);
            (x >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        })
        .collect();
    normalize(&mut v);
    let mut w = vec![0.0; n];
    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        lv.laplacian.mul_vec(&v, &mut w);
        let rq: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        for i in 0..n {
            w[i] -= shift * v[i];
        }
        if normalize(&mut w) == 0.0 {
            break;
        }
        core::mem::swap(&mut v, &mut w);
        let done = libm::fabs(rq - lambda) <= 1e-15 * libm::fabs(rq);
        lambda = rq;
        if done {
            break;
        }
    }
    lv.laplacian.mul_vec(&v, &mut w);
    Ok(v.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>().max(0.0))
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = libm::sqrt(v.iter().map(|x| x * x).sum());
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
    norm
}

/// Outcome of [`delay_stability_bound`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayBound {
    /// `π / (2 λ_max)`.
    pub tau_max: f64,
    pub lambda_max: f64,
    /// Set when the graph is disconnected; the bound is still computed.
    pub disconnected: bool,
}

/// Largest uniform delay for which the delayed consensus dynamics settle.
pub fn delay_stability_bound(lv: &LaplacianView) -> Result<DelayBound, GraphError> {
    let lambda_max = max_laplacian_eigenvalue(lv)?;
    if lambda_max <= 0.0 {
        return Err(GraphError::NoEdges);
    }
    Ok(DelayBound { tau_max: PI / (2.0 * lambda_max), lambda_max, disconnected: !lv.connected })
}

/// Piecewise-constant sequence of graphs.
#[derive(Debug, Clone, PartialEq)]
pub struct TopologySchedule {
    entries: Vec<(f64, CyberGraph)>,
}

impl TopologySchedule {
    pub fn new(entries: Vec<(f64, CyberGraph)>) -> Result<Self, GraphError> {
        let first = entries.first().ok_or(GraphError::EmptySchedule)?;
        let n = first.1.n_agents();
        for (i, w) in entries.windows(2).enumerate() {
            if !(w[1].0 > w[0].0) {
                return Err(GraphError::UnorderedSchedule { index: i + 1 });
            }
        }
        for (index, (_, g)) in entries.iter().enumerate() {
            if g.n_agents() != n {
                return Err(GraphError::SizeMismatch { index, got: g.n_agents(), expected: n });
            }
        }
        Ok(Self { entries })
    }

    /// A single graph active from `t = 0` on.
    pub fn fixed(g: CyberGraph) -> Self {
        Self { entries: vec![(0.0, g)] }
    }

    pub fn entries(&self) -> &[(f64, CyberGraph)] {
        &self.entries
    }

    pub fn n_agents(&self) -> usize {
        self.entries[0].1.n_agents()
    }

    /// Graph of the latest entry whose switch time is `<= t`.
    pub fn graph_at(&self, t: f64) -> Result<&CyberGraph, GraphError> {
        self.entries
            .iter()
            .rev()
            .find(|(ts, _)| *ts <= t)
            .map(|(_, g)| g)
            .ok_or(GraphError::BeforeSchedule { t })
    }

    /// Index of the entry active at `t`, if any.
    pub fn index_at(&self, t: f64) -> Option<usize> {
        self.entries.iter().rposition(|(ts, _)| *ts <= t)
    }
}

/// Free-function form of [`TopologySchedule::graph_at`].
pub fn graph_at(schedule: &TopologySchedule, t: f64) -> Result<&CyberGraph, GraphError> {
    schedule.graph_at(t)
}
