//! Communication graph and its doubly stochastic weight matrix.
//!
//! A [`Network`] is immutable once built. Construction validates that the
//! weights are symmetric, doubly stochastic and supported on the edge set,
//! that the graph is connected, and caches the consensus contraction factor
//! `ρ = ‖A − 11ᵀ/N‖₂`.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Matrix};
use crate::scalar::Scalar;

/// Power iteration stops when the eigen-residual drops below this.
pub const POWER_ITERATION_TOL: f64 = 1e-12;
pub const POWER_ITERATION_CAP: usize = 10_000;

#[derive(Clone, Debug)]
pub struct Network<T> {
    n_agents: usize,
    weights: Matrix<T>,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    rho: T,
}

impl<T: Scalar> Network<T> {
    /// Metropolis-Hastings weights: `a_ij = 1/(1 + max(deg_i, deg_j))` on
    /// edges and `a_ii = 1 − Σ_j a_ij`.
    pub fn metropolis(n_agents: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let edges = normalize_edges(n_agents, edges)?;
        let adjacency = adjacency_lists(n_agents, &edges);
        check_connected(&adjacency)?;
        let deg: Vec<usize> = adjacency.iter().map(Vec::len).collect();
        let mut w = Matrix::zeros(n_agents, n_agents);
        for &(i, j) in &edges {
            let a = T::one() / T::from_count(1 + deg[i].max(deg[j]));
            w[(i, j)] = a;
            w[(j, i)] = a;
        }
        for i in 0..n_agents {
            let off: T = adjacency[i].iter().map(|&j| w[(i, j)]).sum();
            w[(i, i)] = T::one() - off;
        }
        Self::assemble(n_agents, edges, adjacency, w)
    }

    /// Validates an explicit weight matrix against the edge set.
    pub fn from_weights(n_agents: usize, edges: &[(usize, usize)], weights: Matrix<T>) -> Result<Self> {
        if weights.rows() != n_agents || weights.cols() != n_agents {
            return Err(Error::InvalidGraph(format!(
                "weight matrix is {}x{}, expected {n_agents}x{n_agents}",
                weights.rows(),
                weights.cols()
            )));
        }
        let edges = normalize_edges(n_agents, edges)?;
        let adjacency = adjacency_lists(n_agents, &edges);
        check_connected(&adjacency)?;
        let tol = stochastic_tol::<T>(n_agents);
        let edge_set: BTreeSet<(usize, usize)> = edges.iter().copied().collect();
        for i in 0..n_agents {
            for j in 0..n_agents {
                let a = weights[(i, j)];
                if !a.is_finite() || a < T::zero() {
                    return Err(Error::InvalidGraph(format!("weight a[{i}][{j}] = {a} is negative or not finite")));
                }
                if i != j && a > T::zero() && !edge_set.contains(&(i.min(j), i.max(j))) {
                    return Err(Error::InvalidGraph(format!("weight a[{i}][{j}] > 0 but ({i},{j}) is not an edge")));
                }
            }
        }
        if !weights.is_symmetric(tol) {
            return Err(Error::InvalidGraph("weight matrix is not symmetric".into()));
        }
        for i in 0..n_agents {
            let row: T = (0..n_agents).map(|j| weights[(i, j)]).sum();
            let col: T = (0..n_agents).map(|j| weights[(j, i)]).sum();
            if (row - T::one()).abs() > tol || (col - T::one()).abs() > tol {
                return Err(Error::InvalidGraph(format!(
                    "row/column {i} sums to {row}/{col}, expected 1"
                )));
            }
        }
        Self::assemble(n_agents, edges, adjacency, weights)
    }

    /// Complete graph with uniform weights `1/N`; `A = 11ᵀ/N` so `ρ = 0`.
    pub fn complete_uniform(n_agents: usize) -> Result<Self> {
        let edges = complete_edges(n_agents);
        let w = Matrix::from_fn(n_agents, n_agents, |_, _| T::one() / T::from_count(n_agents));
        Self::from_weights(n_agents, &edges, w)
    }

    fn assemble(
        n_agents: usize,
        edges: Vec<(usize, usize)>,
        neighbors: Vec<Vec<usize>>,
        weights: Matrix<T>,
    ) -> Result<Self> {
        let rho = consensus_contraction(&weights);
        if !(rho < T::one()) {
            return Err(Error::InvalidGraph(format!("consensus contraction rho = {rho} is not below 1")));
        }
        Ok(Self {
            n_agents,
            weights,
            edges,
            neighbors,
            rho,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn weights(&self) -> &Matrix<T> {
        &self.weights
    }

    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> T {
        self.weights[(i, j)]
    }

    /// Undirected edges with `i < j`.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Neighbors of `i`, excluding `i` itself.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn is_neighbor(&self, i: usize, j: usize) -> bool {
        i == j || self.neighbors[i].binary_search(&j).is_ok()
    }

    /// `‖A − 11ᵀ/N‖₂`, cached at construction.
    pub fn rho(&self) -> T {
        self.rho
    }
}

fn stochastic_tol<T: Scalar>(n: usize) -> T {
    T::tol_floor(1e-12, 32.0 * n.max(1) as f64)
}

fn normalize_edges(n: usize, edges: &[(usize, usize)]) -> Result<Vec<(usize, usize)>> {
    if n == 0 {
        return Err(Error::InvalidGraph("graph needs at least one agent".into()));
    }
    let mut set = BTreeSet::new();
    for &(i, j) in edges {
        if i >= n || j >= n {
            return Err(Error::InvalidGraph(format!("edge ({i},{j}) out of range for {n} agents")));
        }
        if i == j {
            return Err(Error::InvalidGraph(format!("self-loop ({i},{i}) in edge list")));
        }
        set.insert((i.min(j), i.max(j)));
    }
    Ok(set.into_iter().collect())
}

fn adjacency_lists(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for &(i, j) in edges {
        adj[i].push(j);
        adj[j].push(i);
    }
    for a in &mut adj {
        a.sort_unstable();
    }
    adj
}

/// Connected components in order of their smallest member.
pub fn components(adjacency: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let n = adjacency.len();
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        let mut comp = vec![start];
        seen[start] = true;
        let mut head = 0;
        while head < comp.len() {
            let v = comp[head];
            head += 1;
            for &w in &adjacency[v] {
                if !seen[w] {
                    seen[w] = true;
                    comp.push(w);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

fn check_connected(adjacency: &[Vec<usize>]) -> Result<()> {
    let comps = components(adjacency);
    if comps.len() > 1 {
        return Err(Error::DisconnectedGraph { components: comps });
    }
    Ok(())
}

/// `ρ = ‖A − 11ᵀ/N‖₂` for a symmetric weight matrix.
///
/// Power iteration on `(A − 11ᵀ/N)²`, which is positive semidefinite, so a
/// pair of eigenvalues `±ρ` cannot stall the iteration. The start vector is
/// fixed, making the result deterministic.
pub fn consensus_contraction<T: Scalar>(weights: &Matrix<T>) -> T {
    let n = weights.rows();
    if n <= 1 {
        return T::zero();
    }
    let inv_n = T::one() / T::from_count(n);
    let apply = |v: &[T]| -> Vec<T> {
        let mean = v.iter().copied().sum::<T>() * inv_n;
        let mut out = weights.mul_vec(v);
        out.iter_mut().for_each(|x| *x = *x - mean);
        out
    };
    // deterministic start with no special symmetry
    let golden = T::lit(0.618_033_988_749_894_9);
    let mut v: Vec<T> = (0..n)
        .map(|i| {
            let k = T::from_count(i + 1) * golden;
            k - k.floor() + T::lit(0.1)
        })
        .collect();
    let mean = v.iter().copied().sum::<T>() * inv_n;
    v.iter_mut().for_each(|x| *x = *x - mean);
    let nv = norm(&v);
    if nv == T::zero() {
        return T::zero();
    }
    v.iter_mut().for_each(|x| *x = *x / nv);

    let tol = T::tol_floor(POWER_ITERATION_TOL, 64.0);
    let mut theta = T::zero();
    for _ in 0..POWER_ITERATION_CAP {
        let w = apply(&apply(&v));
        theta = dot(&v, &w);
        let resid: T = w
            .iter()
            .zip(&v)
            .map(|(&wi, &vi)| (wi - theta * vi) * (wi - theta * vi))
            .sum::<T>()
            .sqrt();
        let nw = norm(&w);
        if nw == T::zero() {
            return T::zero();
        }
        v = w.into_iter().map(|x| x / nw).collect();
        if resid <= tol {
            break;
        }
    }
    theta.max(T::zero()).sqrt()
}

pub fn ring_edges(n: usize) -> Vec<(usize, usize)> {
    match n {
        0 | 1 => Vec::new(),
        2 => vec![(0, 1)],
        _ => (0..n).map(|i| (i, (i + 1) % n)).collect(),
    }
}

pub fn path_edges(n: usize) -> Vec<(usize, usize)> {
    (1..n).map(|i| (i - 1, i)).collect()
}

pub fn complete_edges(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect()
}

/// Erdős–Rényi `G(n, p)`, resampled until connected (at most 1000 draws).
pub fn erdos_renyi_edges<R: Rng>(n: usize, p: f64, rng: &mut R) -> Result<Vec<(usize, usize)>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidGraph(format!("edge probability {p} outside [0,1]")));
    }
    for _ in 0..1000 {
        let edges: Vec<(usize, usize)> = complete_edges(n)
            .into_iter()
            .filter(|_| rng.gen::<f64>() < p)
            .collect();
        if components(&adjacency_lists(n, &edges)).len() == 1 {
            return Ok(edges);
        }
    }
    Err(Error::InvalidGraph(format!(
        "no connected G({n}, {p}) sample in 1000 draws"
    )))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    Metropolis,
    Explicit,
}

/// On-disk graph description. Indices are 0-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub n_agents: usize,
    pub edges: Vec<[usize; 2]>,
    pub weighting: Weighting,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<Vec<f64>>>,
}

impl GraphSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            Error::InvalidConfig(format!("graph spec line {} column {}: {e}", e.line(), e.column()))
        })
    }

    pub fn from_network<T: Scalar>(net: &Network<T>, weighting: Weighting) -> Self {
        Self {
            n_agents: net.n_agents(),
            edges: net.edges().iter().map(|&(i, j)| [i, j]).collect(),
            weighting,
            weights: (weighting == Weighting::Explicit).then(|| {
                net.weights()
                    .to_rows()
                    .into_iter()
                    .map(|r| r.into_iter().map(Scalar::as_f64).collect())
                    .collect()
            }),
        }
    }

    pub fn build<T: Scalar>(&self) -> Result<Network<T>> {
        let edges: Vec<(usize, usize)> = self.edges.iter().map(|e| (e[0], e[1])).collect();
        match self.weighting {
            Weighting::Metropolis => Network::metropolis(self.n_agents, &edges),
            Weighting::Explicit => {
                let rows = self
                    .weights
                    .as_ref()
                    .ok_or_else(|| Error::InvalidGraph("explicit weighting requires `weights`".into()))?;
                let rows: Vec<Vec<T>> = rows
                    .iter()
                    .map(|r| r.iter().map(|&x| T::lit(x)).collect())
                    .collect();
                let m = Matrix::from_rows(&rows)
                    .ok_or_else(|| Error::InvalidGraph("ragged weight matrix".into()))?;
                Network::from_weights(self.n_agents, &edges, m)
            }
        }
    }
}
