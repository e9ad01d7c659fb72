//! Directed communication graphs with leader pinning.
//!
//! Entry `(i, j)` of the adjacency matrix is the weight of the edge from node
//! `j` into node `i`, so row `i` collects the neighbours agent `i` listens to.
//! The pinned Laplacian `L + G` drives the synchronization error dynamics and
//! its spectrum is the input to every downstream analysis.

use std::collections::VecDeque;

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, Point};

/// Tolerance for pairing complex-conjugate eigenvalues.
pub const CONJUGATE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PinnedDigraph {
    adjacency: DMatrix<f64>,
    pinning: Vec<f64>,
}

impl PinnedDigraph {
    pub fn new(adjacency: DMatrix<f64>, pinning: Vec<f64>) -> Result<Self> {
        let n = adjacency.nrows();
        if n == 0 {
            return Err(Error::InvalidGraph("graph has no nodes".into()));
        }
        if adjacency.ncols() != n {
            return Err(Error::InvalidGraph(format!(
                "adjacency must be square, got {}x{}",
                n,
                adjacency.ncols()
            )));
        }
        if pinning.len() != n {
            return Err(Error::InvalidGraph(format!(
                "pinning has {} entries for {} nodes",
                pinning.len(),
                n
            )));
        }
        for i in 0..n {
            if adjacency[(i, i)] != 0.0 {
                return Err(Error::InvalidGraph(format!("self-loop at node {}", i + 1)));
            }
        }
        if adjacency.iter().chain(pinning.iter()).any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidGraph("weights must be finite and nonnegative".into()));
        }
        Ok(Self { adjacency, pinning })
    }

    /// Builds a graph from `(from, to, weight)` triples with zero-based node ids.
    pub fn from_edges(n_agents: usize, edges: &[(usize, usize, f64)], pinning: Vec<f64>) -> Result<Self> {
        let mut adjacency = DMatrix::zeros(n_agents, n_agents);
        for &(from, to, w) in edges {
            if from >= n_agents || to >= n_agents {
                return Err(Error::InvalidGraph(format!("edge ({from}, {to}) out of range")));
            }
            adjacency[(to, from)] += w;
        }
        Self::new(adjacency, pinning)
    }

    pub fn n_agents(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }

    pub fn pinning(&self) -> &[f64] {
        &self.pinning
    }

    /// In-degree matrix diagonal: row sums of the adjacency.
    pub fn in_degrees(&self) -> Vec<f64> {
        self.adjacency.row_iter().map(|r| r.sum()).collect()
    }

    /// `L = D - E`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let mut l = -self.adjacency.clone();
        for (i, d) in self.in_degrees().into_iter().enumerate() {
            l[(i, i)] += d;
        }
        l
    }
}

/// Returns `L + G`.
pub fn build_pinned_laplacian(g: &PinnedDigraph) -> DMatrix<f64> {
    let mut m = g.laplacian();
    for (i, p) in g.pinning.iter().enumerate() {
        m[(i, i)] += p;
    }
    m
}

/// Nodes reachable from `root` along directed edges.
fn reachable_from(g: &PinnedDigraph, root: usize) -> Vec<bool> {
    let n = g.n_agents();
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([root]);
    seen[root] = true;
    while let Some(j) = queue.pop_front() {
        for (i, s) in seen.iter_mut().enumerate() {
            if !*s && g.adjacency[(i, j)] > 0.0 {
                *s = true;
                queue.push_back(i);
            }
        }
    }
    seen
}

/// True iff some pinned node reaches every other node by a directed path.
pub fn check_assumption1(g: &PinnedDigraph) -> bool {
    (0..g.n_agents())
        .filter(|&r| g.pinning[r] > 0.0)
        .any(|r| reachable_from(g, r).into_iter().all(|v| v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PinnedSpectrum {
    eigenvalues: Vec<Complex<f64>>,
    min_real: f64,
    max_real: f64,
}

impl PinnedSpectrum {
    /// Wraps an explicit eigenvalue list (sorted by real, then imaginary part).
    pub fn from_eigenvalues(mut eigenvalues: Vec<Complex<f64>>) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::InvalidArgument("empty spectrum".into()));
        }
        eigenvalues.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
        let min_real = eigenvalues.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
        let max_real = eigenvalues.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        Ok(Self { eigenvalues, min_real, max_real })
    }

    pub fn eigenvalues(&self) -> &[Complex<f64>] {
        &self.eigenvalues
    }

    pub fn min_real(&self) -> f64 {
        self.min_real
    }

    pub fn max_real(&self) -> f64 {
        self.max_real
    }

    /// The spectrum scaled by a positive coupling gain.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            eigenvalues: self.eigenvalues.iter().map(|z| z * c).collect(),
            min_real: self.min_real * c,
            max_real: self.max_real * c,
        }
    }
}

pub fn pinned_spectrum(m: &DMatrix<f64>) -> Result<PinnedSpectrum> {
    if !m.is_square() || m.nrows() == 0 {
        return Err(Error::Dimension("pinned Laplacian must be square and nonempty".into()));
    }
    let schur = nalgebra::linalg::Schur::try_new(m.clone(), f64::EPSILON, 10_000).ok_or(Error::EigenFailure)?;
    let mut eig: Vec<Complex<f64>> = schur.complex_eigenvalues().iter().copied().collect();
    // Snap conjugate pairs so the set is exactly closed under conjugation.
    for z in eig.iter_mut() {
        if z.im.abs() <= CONJUGATE_TOL * (1.0 + z.norm()) {
            z.im = 0.0;
        }
    }
    PinnedSpectrum::from_eigenvalues(eig)
}

/// Vertices of the convex hull of the spectrum, counterclockwise.
pub fn eigenvalue_hull(s: &PinnedSpectrum) -> Vec<Point> {
    geometry::convex_hull(&s.eigenvalues)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example_graph() -> PinnedDigraph {
        // L = [2 -1 0 -1; 0 1 -1 0; -1 0 1 0; 0 -1 -1 2]
        let e = DMatrix::from_row_slice(
            4,
            4,
            &[0., 1., 0., 1., 0., 0., 1., 0., 1., 0., 0., 0., 0., 1., 1., 0.],
        );
        PinnedDigraph::new(e, vec![1., 1., 0., 0.]).unwrap()
    }

    #[test]
    fn example_pinned_laplacian() {
        let m = build_pinned_laplacian(&example_graph());
        let expected = DMatrix::from_row_slice(
            4,
            4,
            &[3., -1., 0., -1., 0., 2., -1., 0., -1., 0., 1., 0., 0., -1., -1., 2.],
        );
        assert_eq!(m, expected);
    }

    #[test]
    fn empty_graph_is_zero() {
        let g = PinnedDigraph::new(DMatrix::zeros(3, 3), vec![0.0; 3]).unwrap();
        assert_eq!(build_pinned_laplacian(&g), DMatrix::zeros(3, 3));
        assert!(!check_assumption1(&g));
    }

    #[test]
    fn laplacian_rows_sum_to_zero() {
        let g = example_graph();
        for row in g.laplacian().row_iter() {
            assert!(row.sum().abs() < 1e-12);
        }
    }

    #[test]
    fn assumption1_cases() {
        assert!(check_assumption1(&example_graph()));
        // chain 1 -> 2 -> 3
        let chain = |p: Vec<f64>| PinnedDigraph::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0)], p).unwrap();
        assert!(check_assumption1(&chain(vec![1.0, 0.0, 0.0])));
        assert!(!check_assumption1(&chain(vec![0.0, 0.0, 1.0])));
        // two components {1,2} and {3,4}
        let split = PinnedDigraph::from_edges(4, &[(0, 1, 1.0), (1, 0, 1.0), (2, 3, 1.0), (3, 2, 1.0)], vec![1.0; 4])
            .unwrap();
        assert!(!check_assumption1(&split));
    }

    #[test]
    fn rejects_invalid_graphs() {
        let mut e = DMatrix::zeros(2, 2);
        e[(0, 0)] = 1.0;
        assert!(PinnedDigraph::new(e, vec![1.0, 0.0]).is_err());
        assert!(PinnedDigraph::new(DMatrix::from_element(2, 2, -1.0), vec![0.0; 2]).is_err());
        assert!(PinnedDigraph::new(DMatrix::zeros(2, 2), vec![0.0; 3]).is_err());
        assert!(PinnedDigraph::from_edges(2, &[(0, 5, 1.0)], vec![0.0; 2]).is_err());
    }

    #[test]
    fn example_spectrum() {
        let s = pinned_spectrum(&build_pinned_laplacian(&example_graph())).unwrap();
        let ev = s.eigenvalues();
        let golden = (5f64.sqrt() + 3.0) / 2.0;
        assert!((ev[0] - Complex::new(1.0 / golden, 0.0)).norm() < 1e-9);
        assert!((ev[1] - Complex::new(2.5, -0.75f64.sqrt())).norm() < 1e-9);
        assert!((ev[2] - Complex::new(2.5, 0.75f64.sqrt())).norm() < 1e-9);
        assert!((ev[3] - Complex::new(golden, 0.0)).norm() < 1e-9);
        assert_eq!(eigenvalue_hull(&s).len(), 4);
    }

    #[test]
    fn identity_spectrum_and_degenerate_hull() {
        let s = pinned_spectrum(&DMatrix::identity(5, 5)).unwrap();
        assert!(s.eigenvalues().iter().all(|z| (z - Complex::new(1.0, 0.0)).norm() < 1e-14));
        assert_eq!(eigenvalue_hull(&s), vec![Complex::new(1.0, 0.0)]);
        let line = PinnedSpectrum::from_eigenvalues(vec![1.0, 3.0, 2.0].into_iter().map(|r| Complex::new(r, 0.0)).collect())
            .unwrap();
        assert_eq!(eigenvalue_hull(&line), vec![Complex::new(1.0, 0.0), Complex::new(3.0, 0.0)]);
    }
}
