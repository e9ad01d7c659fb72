//! Feasibility verdicts for [`LmiProblem`]s.
//!
//! A problem is posed as the conic program
//!
//! ```text
//! minimize t   s.t.   F(x) <= t I,   B(x) >= -t I  for positive-definite blocks B,
//! ```
//!
//! with the positive-definite blocks normalized by `B <= I` and the remaining
//! blocks boxed by a large bound. All constraints are homogeneous in the
//! blocks, so the normalization only fixes scale. The problem is feasible iff
//! the optimum satisfies `t <= -mu`; every feasible verdict carries a witness
//! that has been re-checked by a dense eigensolve.

mod ipm;

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::lmi::{BlockKind, LmiProblem, LmiWitness};

use ipm::{BlockSdp, IpmSettings, IpmStatus, SdpBlock};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Interior-point stopping tolerance (relative gap and residuals).
    pub tol: f64,
    /// Feasibility margin relative to the problem scale.
    pub margin_rel: f64,
    pub max_iter: usize,
    /// Box bound on symmetric and rectangular blocks without a sign constraint.
    pub free_bound: f64,
    /// Also require symmetric blocks to be positive definite with the margin.
    pub floor_symmetric: bool,
    /// Stop once a verified margin of `2 mu` is reached instead of solving to optimality.
    pub early_stop: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-9, margin_rel: 1e-7, max_iter: 120, free_bound: 100.0, floor_symmetric: false, early_stop: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeasibilityStatus {
    Feasible,
    Infeasible,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub iterations: usize,
    pub runtime: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityVerdict {
    pub status: FeasibilityStatus,
    pub witness: Option<LmiWitness>,
    /// `-max eig` of the constraint at the witness, or `-t` when there is none.
    pub slack: f64,
    /// Objective `t` reached by the solver; negative values certify feasibility.
    pub t: f64,
    pub margin: f64,
    pub stats: SolverStats,
}

impl FeasibilityVerdict {
    pub fn is_feasible(&self) -> bool {
        self.status == FeasibilityStatus::Feasible
    }
}

fn sym_basis(dim: usize, k: usize) -> DMatrix<f64> {
    // Index k enumerates the upper triangle row by row.
    let mut m = DMatrix::zeros(dim, dim);
    let mut idx = 0;
    for i in 0..dim {
        for j in i..dim {
            if idx == k {
                m[(i, j)] = 1.0;
                m[(j, i)] = 1.0;
                return m;
            }
            idx += 1;
        }
    }
    m
}

fn build_sdp(p: &LmiProblem, opts: &SolverOptions) -> BlockSdp {
    let nv = p.n_vars();
    let s = nv;
    let mut blocks = Vec::new();

    for c in &p.constraint {
        let d = c.dim();
        let mut a: Vec<(usize, DMatrix<f64>)> = c
            .coeffs
            .iter()
            .enumerate()
            .filter(|(_, m)| m.iter().any(|v| *v != 0.0))
            .map(|(i, m)| (i, m.clone()))
            .collect();
        a.push((s, DMatrix::identity(d, d)));
        blocks.push(SdpBlock { c: -&c.constant, a });
    }

    for (blk, off) in p.blocks.iter().zip(p.offsets()) {
        match blk.kind {
            BlockKind::PositiveDefinite | BlockKind::Symmetric => {
                let d = blk.rows;
                let basis: Vec<(usize, DMatrix<f64>)> =
                    (0..blk.n_vars()).map(|k| (off + k, sym_basis(d, k))).collect();
                let floor = blk.kind == BlockKind::PositiveDefinite || opts.floor_symmetric;
                let bound = if blk.kind == BlockKind::PositiveDefinite { 1.0 } else { opts.free_bound };
                // bound I - B >= 0
                blocks.push(SdpBlock { c: DMatrix::identity(d, d) * bound, a: basis.clone() });
                let neg: Vec<(usize, DMatrix<f64>)> = basis.iter().map(|(i, m)| (*i, -m)).collect();
                if floor {
                    // B - s I >= 0
                    let mut a = neg;
                    a.push((s, DMatrix::identity(d, d)));
                    blocks.push(SdpBlock { c: DMatrix::zeros(d, d), a });
                } else {
                    // bound I + B >= 0
                    blocks.push(SdpBlock { c: DMatrix::identity(d, d) * bound, a: neg });
                }
            }
            BlockKind::Free => {
                let count = blk.n_vars();
                let d = 2 * count;
                let a = (0..count)
                    .map(|k| {
                        let mut m = DMatrix::zeros(d, d);
                        m[(2 * k, 2 * k)] = 1.0;
                        m[(2 * k + 1, 2 * k + 1)] = -1.0;
                        (off + k, m)
                    })
                    .collect();
                blocks.push(SdpBlock { c: DMatrix::identity(d, d) * opts.free_bound, a });
            }
        }
    }

    let mut b = DVector::zeros(nv + 1);
    b[s] = 1.0;
    BlockSdp { blocks, b }
}

fn max_eig(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.max()
}

fn min_eig(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

/// Largest eigenvalue of the block-diagonal constraint at `x`.
pub fn constraint_max_eig(p: &LmiProblem, x: &[f64]) -> f64 {
    p.constraint
        .iter()
        .map(|c| max_eig(&c.eval(x)))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn witness_from_vars(p: &LmiProblem, x: &[f64]) -> LmiWitness {
    LmiWitness {
        blocks: p.blocks.iter().map(|b| b.name.clone()).zip(p.block_values(x)).collect(),
        max_eig: constraint_max_eig(p, x),
    }
}

/// Decides feasibility of `p`. A `Feasible` verdict always carries a witness
/// that passes [`verify_witness`]; solver trouble yields `Inconclusive`.
pub fn check_feasible(p: &LmiProblem, opts: &SolverOptions) -> FeasibilityVerdict {
    let start = Instant::now();
    let mu = p.margin(opts.margin_rel);
    let sdp = build_sdp(p, opts);
    let settings = IpmSettings {
        tol: opts.tol,
        max_iter: opts.max_iter,
        target: opts.early_stop.then_some(2.0 * mu),
    };
    let out = ipm::solve(&sdp, &settings);
    let nv = p.n_vars();
    let x: Vec<f64> = out.y.iter().take(nv).copied().collect();
    let s = out.y[nv];
    let stats = SolverStats { iterations: out.iterations, runtime: start.elapsed() };
    let converged = matches!(out.status, IpmStatus::Optimal | IpmStatus::ReachedTarget);

    if s >= mu && x.iter().all(|v| v.is_finite()) {
        let witness = witness_from_vars(p, &x);
        if verify_witness(p, &witness, opts) {
            return FeasibilityVerdict {
                status: FeasibilityStatus::Feasible,
                slack: -witness.max_eig,
                witness: Some(witness),
                t: -s,
                margin: mu,
                stats,
            };
        }
        log::debug!("solver margin {s:.3e} but witness failed verification");
        return FeasibilityVerdict {
            status: FeasibilityStatus::Inconclusive,
            witness: None,
            slack: s,
            t: -s,
            margin: mu,
            stats,
        };
    }
    let status = if converged { FeasibilityStatus::Infeasible } else { FeasibilityStatus::Inconclusive };
    if status == FeasibilityStatus::Inconclusive {
        log::debug!(
            "interior point stopped with {:?} after {} iterations (objectives {:.3e} / {:.3e})",
            out.status,
            out.iterations,
            out.primal_obj,
            out.dual_obj
        );
    }
    FeasibilityVerdict { status, witness: None, slack: s, t: -s, margin: mu, stats }
}

/// Trusted check: the constraint is `<= -mu/2` and every positive-definite
/// block is `>= mu/2`, by dense eigensolves independent of the solver.
pub fn verify_witness(p: &LmiProblem, w: &LmiWitness, opts: &SolverOptions) -> bool {
    let half = 0.5 * p.margin(opts.margin_rel);
    if w.blocks.len() != p.blocks.len() {
        return false;
    }
    let mut values = Vec::with_capacity(w.blocks.len());
    for (blk, (name, m)) in p.blocks.iter().zip(&w.blocks) {
        if *name != blk.name || m.nrows() != blk.rows || m.ncols() != blk.cols {
            return false;
        }
        if m.iter().any(|v| !v.is_finite()) {
            return false;
        }
        if blk.is_symmetric() {
            let asym = (m - m.transpose()).abs().max();
            if asym > 1e-12 * (1.0 + m.abs().max()) {
                return false;
            }
            if blk.kind == BlockKind::PositiveDefinite && min_eig(m) < half {
                return false;
            }
        }
        values.push(m.clone());
    }
    let Ok(x) = p.vars_from_blocks(&values) else {
        return false;
    };
    constraint_max_eig(p, &x) <= -half
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmi::{AffineSymmetric, DecisionBlock, ProblemKind, ProblemMeta};

    /// `A'P + PA < 0, P > 0` as a raw problem.
    fn lyapunov_problem(a: &DMatrix<f64>) -> LmiProblem {
        let n = a.nrows();
        let blk = DecisionBlock::symmetric("P", n, BlockKind::PositiveDefinite);
        let coeffs = (0..blk.n_vars())
            .map(|k| {
                let e = sym_basis(n, k);
                a.transpose() * &e + &e * a
            })
            .collect();
        LmiProblem {
            blocks: vec![blk],
            constraint: vec![AffineSymmetric { constant: DMatrix::zeros(n, n), coeffs }],
            meta: ProblemMeta { kind: ProblemKind::Stability, sigmas: vec![], h: 0.0, epsilon: None, scale: 1.0 },
        }
    }

    #[test]
    fn stable_diagonal_is_feasible() {
        let p = lyapunov_problem(&DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -2.0])));
        let opts = SolverOptions::default();
        let v = check_feasible(&p, &opts);
        assert_eq!(v.status, FeasibilityStatus::Feasible);
        let w = v.witness.unwrap();
        assert!(verify_witness(&p, &w, &opts));
        let pm = w.block("P").unwrap();
        assert!(pm[(0, 0)] > 0.0 && pm[(1, 1)] > 0.0);
        assert!(pm[(0, 1)].abs() < 1e-6 * pm[(0, 0)]);
    }

    #[test]
    fn unstable_mode_is_infeasible() {
        let p = lyapunov_problem(&DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -2.0])));
        let v = check_feasible(&p, &SolverOptions::default());
        assert_eq!(v.status, FeasibilityStatus::Infeasible);
        assert!(v.witness.is_none());
        assert!(v.t > -v.margin);
    }

    #[test]
    fn zero_witness_is_rejected() {
        let p = lyapunov_problem(&DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -2.0])));
        let w = LmiWitness { blocks: vec![("P".into(), DMatrix::zeros(2, 2))], max_eig: 0.0 };
        assert!(!verify_witness(&p, &w, &SolverOptions::default()));
        let wrong_shape = LmiWitness { blocks: vec![("P".into(), DMatrix::identity(3, 3))], max_eig: 0.0 };
        assert!(!verify_witness(&p, &wrong_shape, &SolverOptions::default()));
    }

    #[test]
    fn full_solve_matches_early_stop_verdict() {
        let a = DMatrix::from_row_slice(2, 2, &[-0.1, 1.0, -1.0, -0.1]);
        let p = lyapunov_problem(&a);
        let early = check_feasible(&p, &SolverOptions::default());
        let full = check_feasible(&p, &SolverOptions { early_stop: false, ..Default::default() });
        assert_eq!(early.status, full.status);
        assert!(full.t <= early.t + 1e-12);
    }
}
