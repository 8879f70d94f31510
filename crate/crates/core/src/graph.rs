//! Network topologies and their symmetric doubly stochastic weight matrices.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-sum and symmetry tolerance accepted when loading a weight matrix.
pub const WEIGHT_TOL: f64 = 1e-12;

const GEOMETRIC_RETRIES: u64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Complete,
    Ring,
    Star,
    Grid,
    RandomGeometric,
}

/// A connected undirected graph with its weight matrix.
///
/// The weight matrix is symmetric and doubly stochastic with positive diagonal,
/// and `a_ij > 0` exactly on edges and the diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TopologyRepr", into = "TopologyRepr")]
pub struct Topology {
    n: usize,
    edges: Vec<(usize, usize)>,
    weights: DMatrix<f64>,
    diameter: usize,
    /// Closed neighborhoods, each sorted by sensor index.
    neighborhoods: Vec<Vec<(usize, f64)>>,
}

impl Topology {
    /// Build a topology from an edge list using Metropolis weights.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let edges = normalize_edges(n, edges)?;
        let weights = metropolis_weights(n, &edges)?;
        Self::with_weights(n, edges, weights)
    }

    /// Build a topology with explicit weights, validating every invariant.
    pub fn with_weights(n: usize, edges: Vec<(usize, usize)>, weights: DMatrix<f64>) -> Result<Self> {
        let edges = normalize_edges(n, &edges)?;
        if weights.nrows() != n || weights.ncols() != n {
            return Err(Error::Construction(format!(
                "weight matrix is {}x{}, expected {n}x{n}",
                weights.nrows(),
                weights.ncols()
            )));
        }
        let adjacency = adjacency_lists(n, &edges);
        for i in 0..n {
            let row_sum: f64 = weights.row(i).iter().sum();
            if (row_sum - 1.0).abs() > WEIGHT_TOL {
                return Err(Error::Construction(format!("row {i} sums to {row_sum}")));
            }
            for j in 0..n {
                let a = weights[(i, j)];
                if (a - weights[(j, i)]).abs() > WEIGHT_TOL {
                    return Err(Error::Construction(format!("weights not symmetric at ({i}, {j})")));
                }
                let linked = i == j || adjacency[i].contains(&j);
                if (linked && a <= 0.0) || (!linked && a != 0.0) || a < 0.0 {
                    return Err(Error::Construction(format!(
                        "weight ({i}, {j}) = {a} does not match the edge set"
                    )));
                }
            }
        }
        let diameter = diameter_of(&adjacency)?;
        let neighborhoods = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| weights[(i, j)] > 0.0)
                    .map(|j| (j, weights[(i, j)]))
                    .collect()
            })
            .collect();
        Ok(Topology { n, edges, weights, diameter, neighborhoods })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[(i, j)]
    }

    /// Maximum shortest-path length; 0 for a single sensor.
    pub fn diameter(&self) -> usize {
        self.diameter
    }

    /// `(j, a_ij)` for every `j` in the closed neighborhood of `i`, ascending in `j`.
    pub fn neighborhood(&self, i: usize) -> &[(usize, f64)] {
        &self.neighborhoods[i]
    }
}

/// Build one of the standard topologies. `seed` only matters for `RandomGeometric`.
pub fn build_topology(kind: TopologyKind, n: usize, seed: u64) -> Result<Topology> {
    if n == 0 {
        return Err(Error::arg("a network needs at least one sensor"));
    }
    let edges = match kind {
        TopologyKind::Complete => (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect(),
        TopologyKind::Ring => match n {
            1 => Vec::new(),
            2 => vec![(0, 1)],
            _ => (0..n).map(|i| (i, (i + 1) % n)).collect(),
        },
        TopologyKind::Star => (1..n).map(|j| (0, j)).collect(),
        TopologyKind::Grid => grid_edges(n),
        TopologyKind::RandomGeometric => return random_geometric(n, seed),
    };
    Topology::from_edges(n, &edges)
}

fn grid_edges(n: usize) -> Vec<(usize, usize)> {
    let cols = (n as f64).sqrt().ceil() as usize;
    let mut edges = Vec::new();
    for v in 0..n {
        let (r, c) = (v / cols, v % cols);
        if c + 1 < cols && v + 1 < n {
            edges.push((v, v + 1));
        }
        let below = (r + 1) * cols + c;
        if below < n {
            edges.push((v, below));
        }
    }
    edges
}

fn random_geometric(n: usize, seed: u64) -> Result<Topology> {
    let radius = if n <= 2 { 2.0 } else { (2.0 * (n as f64).ln() / n as f64).sqrt().max(0.3) };
    for attempt in 0..GEOMETRIC_RETRIES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15)));
        let points: Vec<(f64, f64)> = (0..n).map(|_| (rng.random(), rng.random())).collect();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let (dx, dy) = (points[i].0 - points[j].0, points[i].1 - points[j].1);
                if (dx * dx + dy * dy).sqrt() <= radius {
                    edges.push((i, j));
                }
            }
        }
        if is_connected(&adjacency_lists(n, &edges)) {
            return Topology::from_edges(n, &edges);
        }
    }
    Err(Error::Construction(format!(
        "random geometric graph with n = {n} stayed disconnected after {GEOMETRIC_RETRIES} attempts"
    )))
}

fn normalize_edges(n: usize, edges: &[(usize, usize)]) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::with_capacity(edges.len());
    for &(a, b) in edges {
        if a >= n || b >= n {
            return Err(Error::arg(format!("edge ({a}, {b}) references a sensor outside 0..{n}")));
        }
        if a == b {
            return Err(Error::arg(format!("self loop at sensor {a}")));
        }
        out.push((a.min(b), a.max(b)));
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

fn adjacency_lists(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }
    adj
}

fn bfs_depths(adj: &[Vec<usize>], source: usize) -> Vec<Option<usize>> {
    let mut depth = vec![None; adj.len()];
    depth[source] = Some(0);
    let mut queue = VecDeque::from([source]);
    while let Some(v) = queue.pop_front() {
        let d = depth[v].unwrap_or(0);
        for &w in &adj[v] {
            if depth[w].is_none() {
                depth[w] = Some(d + 1);
                queue.push_back(w);
            }
        }
    }
    depth
}

fn is_connected(adj: &[Vec<usize>]) -> bool {
    adj.is_empty() || bfs_depths(adj, 0).iter().all(Option::is_some)
}

fn diameter_of(adj: &[Vec<usize>]) -> Result<usize> {
    let mut best = 0;
    for s in 0..adj.len() {
        for d in bfs_depths(adj, s) {
            best = best.max(d.ok_or(Error::Disconnected)?);
        }
    }
    Ok(best)
}

/// Metropolis weights: `a_ij = 1 / (1 + max(d_i, d_j))` on edges, the remainder on the diagonal.
pub fn metropolis_weights(n: usize, edges: &[(usize, usize)]) -> Result<DMatrix<f64>> {
    let edges = normalize_edges(n, edges)?;
    let adj = adjacency_lists(n, &edges);
    if !is_connected(&adj) {
        return Err(Error::Disconnected);
    }
    let mut a = DMatrix::zeros(n, n);
    for &(i, j) in &edges {
        let w = 1.0 / (1.0 + adj[i].len().max(adj[j].len()) as f64);
        a[(i, j)] = w;
        a[(j, i)] = w;
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| a[(i, j)]).sum();
        a[(i, i)] = 1.0 - off;
    }
    Ok(a)
}

/// `A^l` by repeated multiplication; `l = 0` gives the identity.
pub fn weight_power(a: &DMatrix<f64>, l: usize) -> DMatrix<f64> {
    let mut out = DMatrix::identity(a.nrows(), a.ncols());
    for _ in 0..l {
        out = &out * a;
    }
    out
}

/// Diameter of a topology's graph.
pub fn diameter(topology: &Topology) -> Result<usize> {
    diameter_of(&adjacency_lists(topology.n, &topology.edges))
}

/// `A^0, A^1, ..., A^max` materialized once, for closed-form oracles.
#[derive(Debug, Clone)]
pub struct WeightPowers {
    powers: Vec<DMatrix<f64>>,
}

impl WeightPowers {
    pub fn new(a: &DMatrix<f64>, max: usize) -> Self {
        let mut powers = Vec::with_capacity(max + 1);
        powers.push(DMatrix::identity(a.nrows(), a.ncols()));
        for l in 1..=max {
            let next = &powers[l - 1] * a;
            powers.push(next);
        }
        WeightPowers { powers }
    }

    /// `a_ij^{(l)}`.
    pub fn entry(&self, l: usize, i: usize, j: usize) -> f64 {
        self.powers[l][(i, j)]
    }

    pub fn power(&self, l: usize) -> &DMatrix<f64> {
        &self.powers[l]
    }

    pub fn max_power(&self) -> usize {
        self.powers.len() - 1
    }
}

#[derive(Serialize, Deserialize)]
struct TopologyRepr {
    n: usize,
    edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<Vec<f64>>>,
}

impl TryFrom<TopologyRepr> for Topology {
    type Error = Error;

    fn try_from(r: TopologyRepr) -> Result<Self> {
        let edges: Vec<(usize, usize)> = r.edges.iter().map(|e| (e[0], e[1])).collect();
        match r.weights {
            None => Topology::from_edges(r.n, &edges),
            Some(rows) => {
                if rows.len() != r.n || rows.iter().any(|row| row.len() != r.n) {
                    return Err(Error::Construction("weights must be an n x n array".into()));
                }
                let w = DMatrix::from_fn(r.n, r.n, |i, j| rows[i][j]);
                Topology::with_weights(r.n, edges, w)
            }
        }
    }
}

impl From<Topology> for TopologyRepr {
    fn from(t: Topology) -> Self {
        let weights = (0..t.n).map(|i| t.weights.row(i).iter().copied().collect()).collect();
        TopologyRepr { n: t.n, edges: t.edges.iter().map(|&(a, b)| [a, b]).collect(), weights: Some(weights) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_matrix(a: &DMatrix<f64>, expected: &[&[f64]]) {
        for (i, row) in expected.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert!((a[(i, j)] - v).abs() < 1e-15, "entry ({i},{j}) = {} != {v}", a[(i, j)]);
            }
        }
    }

    #[test]
    fn complete_two() {
        let t = build_topology(TopologyKind::Complete, 2, 0).unwrap();
        assert_matrix(t.weights(), &[&[0.5, 0.5], &[0.5, 0.5]]);
        assert_eq!(t.diameter(), 1);
    }

    #[test]
    fn ring_three_is_uniform() {
        let t = build_topology(TopologyKind::Ring, 3, 0).unwrap();
        let third = 1.0 / 3.0;
        assert_matrix(t.weights(), &[&[third; 3], &[third; 3], &[third; 3]]);
        assert_eq!(t.diameter(), 1);
    }

    #[test]
    fn star_three() {
        let t = build_topology(TopologyKind::Star, 3, 0).unwrap();
        let (a, b) = (1.0 / 3.0, 2.0 / 3.0);
        assert_matrix(t.weights(), &[&[a, a, a], &[a, b, 0.0], &[a, 0.0, b]]);
    }

    #[test]
    fn metropolis_examples() {
        assert_matrix(&metropolis_weights(2, &[(0, 1)]).unwrap(), &[&[0.5, 0.5], &[0.5, 0.5]]);
        let (a, b) = (1.0 / 3.0, 2.0 / 3.0);
        let path = metropolis_weights(3, &[(0, 1), (1, 2)]).unwrap();
        assert_matrix(&path, &[&[b, a, 0.0], &[a, a, a], &[0.0, a, b]]);
        let k4 = build_topology(TopologyKind::Complete, 4, 0).unwrap();
        assert_matrix(k4.weights(), &[&[0.25; 4], &[0.25; 4], &[0.25; 4], &[0.25; 4]]);
    }

    #[test]
    fn disconnected_is_rejected() {
        assert!(matches!(metropolis_weights(4, &[(0, 1), (2, 3)]), Err(Error::Disconnected)));
        assert!(matches!(Topology::from_edges(3, &[(0, 1)]), Err(Error::Disconnected)));
    }

    #[test]
    fn zero_sensors_is_an_argument_error() {
        assert!(matches!(build_topology(TopologyKind::Ring, 0, 0), Err(Error::Argument(_))));
    }

    #[test]
    fn diameters() {
        assert_eq!(build_topology(TopologyKind::Complete, 5, 0).unwrap().diameter(), 1);
        assert_eq!(build_topology(TopologyKind::Ring, 6, 0).unwrap().diameter(), 3);
        let star = build_topology(TopologyKind::Star, 5, 0).unwrap();
        assert_eq!(star.diameter(), 2);
        assert_eq!(diameter(&star).unwrap(), 2);
        assert_eq!(build_topology(TopologyKind::Grid, 9, 0).unwrap().diameter(), 4);
        assert_eq!(build_topology(TopologyKind::Ring, 1, 0).unwrap().diameter(), 0);
    }

    #[test]
    fn weight_power_examples() {
        let k2 = build_topology(TopologyKind::Complete, 2, 0).unwrap();
        assert_matrix(&weight_power(k2.weights(), 5), &[&[0.5, 0.5], &[0.5, 0.5]]);
        let ring = build_topology(TopologyKind::Ring, 3, 0).unwrap();
        assert_eq!(&weight_power(ring.weights(), 1), ring.weights());
        assert_eq!(weight_power(ring.weights(), 0), DMatrix::identity(3, 3));
    }

    #[test]
    fn path_power_at_diameter_is_positive() {
        let path = Topology::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        assert_eq!(path.diameter(), 2);
        // A^2 by hand: rows of A are [2/3,1/3,0], [1/3,1/3,1/3], [0,1/3,2/3].
        let (a, b) = (1.0 / 3.0, 2.0 / 3.0);
        let rows = [[b, a, 0.0], [a, a, a], [0.0, a, b]];
        let mut manual = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                manual[i][j] = (0..3).map(|k| rows[i][k] * rows[k][j]).sum();
            }
        }
        let a2 = weight_power(path.weights(), 2);
        for i in 0..3 {
            for j in 0..3 {
                assert!((a2[(i, j)] - manual[i][j]).abs() < 1e-15);
                assert!(a2[(i, j)] > 0.0);
            }
        }
        assert!((manual[0][2] - 1.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn random_geometric_is_connected_and_deterministic() {
        let a = build_topology(TopologyKind::RandomGeometric, 8, 11).unwrap();
        let b = build_topology(TopologyKind::RandomGeometric, 8, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.diameter() >= 1);
    }

    #[test]
    fn json_round_trip_and_validation() {
        let t = build_topology(TopologyKind::Star, 4, 0).unwrap();
        let s = serde_json::to_string(&t).unwrap();
        let back: Topology = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
        let bad = r#"{"n":2,"edges":[[0,1]],"weights":[[0.9,0.1],[0.2,0.8]]}"#;
        assert!(serde_json::from_str::<Topology>(bad).is_err());
        let no_weights: Topology = serde_json::from_str(r#"{"n":2,"edges":[[0,1]]}"#).unwrap();
        assert_eq!(no_weights.weight(0, 1), 0.5);
    }

    #[test]
    fn neighborhoods_are_closed_and_ordered() {
        let t = build_topology(TopologyKind::Ring, 5, 0).unwrap();
        let nb: Vec<usize> = t.neighborhood(0).iter().map(|&(j, _)| j).collect();
        assert_eq!(nb, vec![0, 1, 4]);
        let total: f64 = t.neighborhood(0).iter().map(|&(_, a)| a).sum();
        assert!((total - 1.0).abs() < 1e-15);
    }
}
