//! Primal-dual interior-point method for block-diagonal semidefinite programs
//! in the LMI (dual) form
//!
//! ```text
//! maximize  b'y   subject to   Z_k = C_k - sum_i y_i A_ki  >= 0   for every block k
//! ```
//!
//! paired with the primal `minimize sum_k <C_k, X_k>  s.t.  sum_k <A_ki, X_k> = b_i, X_k >= 0`.
//! Search directions are HKM with a Mehrotra predictor-corrector; iterates may
//! start infeasible.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub(crate) struct SdpBlock {
    pub c: DMatrix<f64>,
    /// Sparse list of `(variable index, A_ki)`; absent entries are zero.
    pub a: Vec<(usize, DMatrix<f64>)>,
}

pub(crate) struct BlockSdp {
    pub blocks: Vec<SdpBlock>,
    pub b: DVector<f64>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct IpmSettings {
    pub tol: f64,
    pub max_iter: usize,
    /// Stop as soon as a dual-feasible iterate reaches this objective.
    pub target: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum IpmStatus {
    Optimal,
    ReachedTarget,
    MaxIterations,
    NumericalFailure,
}

/// Newton step `(dy, dX, dZ)`.
type Direction = (DVector<f64>, Vec<DMatrix<f64>>, Vec<DMatrix<f64>>);

#[derive(Debug, Clone)]
pub(crate) struct IpmOutcome {
    pub status: IpmStatus,
    pub y: DVector<f64>,
    pub primal_obj: f64,
    pub dual_obj: f64,
    pub iterations: usize,
}

const STEP_FRACTION: f64 = 0.95;

impl BlockSdp {
    fn n_vars(&self) -> usize {
        self.b.len()
    }

    /// `A(W)_i = sum_k <A_ki, W_k>`; `W_k` need not be symmetric.
    fn apply(&self, w: &[DMatrix<f64>]) -> DVector<f64> {
        let mut out = DVector::zeros(self.n_vars());
        for (blk, wk) in self.blocks.iter().zip(w) {
            for (i, ai) in &blk.a {
                out[*i] += ai.dot(wk);
            }
        }
        out
    }

    /// `A*(y)_k = sum_i y_i A_ki`.
    fn adjoint(&self, y: &DVector<f64>) -> Vec<DMatrix<f64>> {
        self.blocks
            .iter()
            .map(|blk| {
                let d = blk.c.nrows();
                let mut m = DMatrix::zeros(d, d);
                for (i, ai) in &blk.a {
                    if y[*i] != 0.0 {
                        m += ai * y[*i];
                    }
                }
                m
            })
            .collect()
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// Largest `alpha` with `X + alpha dX` positive semidefinite (infinite if unbounded).
fn max_step(x: &DMatrix<f64>, dx: &DMatrix<f64>) -> Option<f64> {
    let chol = x.clone().cholesky()?;
    let l = chol.l();
    let w = l.solve_lower_triangular(dx)?;
    let mut w2 = l.solve_lower_triangular(&w.transpose())?;
    symmetrize(&mut w2);
    let lmin = SymmetricEigen::new(w2).eigenvalues.min();
    Some(if lmin < 0.0 { -1.0 / lmin } else { f64::INFINITY })
}

fn block_step(xs: &[DMatrix<f64>], dxs: &[DMatrix<f64>]) -> Option<f64> {
    let mut alpha = f64::INFINITY;
    for (x, dx) in xs.iter().zip(dxs) {
        alpha = alpha.min(max_step(x, dx)?);
    }
    Some(alpha)
}

fn inner(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

struct SchurSolver {
    chol: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
    lu: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
}

impl SchurSolver {
    fn new(mut m: DMatrix<f64>) -> Self {
        symmetrize(&mut m);
        if let Some(chol) = m.clone().cholesky() {
            return Self { chol: Some(chol), lu: None };
        }
        let reg = 1e-14 * m.diagonal().abs().max().max(1.0);
        for i in 0..m.nrows() {
            m[(i, i)] += reg;
        }
        if let Some(chol) = m.clone().cholesky() {
            return Self { chol: Some(chol), lu: None };
        }
        Self { chol: None, lu: Some(m.lu()) }
    }

    fn solve(&self, rhs: &DVector<f64>) -> Option<DVector<f64>> {
        match (&self.chol, &self.lu) {
            (Some(c), _) => Some(c.solve(rhs)),
            (None, Some(lu)) => lu.solve(rhs),
            _ => None,
        }
    }
}

pub(crate) fn solve(sdp: &BlockSdp, settings: &IpmSettings) -> IpmOutcome {
    let m = sdp.n_vars();
    let dims: Vec<usize> = sdp.blocks.iter().map(|b| b.c.nrows()).collect();
    let n_total: usize = dims.iter().sum();
    let b_norm = sdp.b.norm();
    let c_norm = sdp.blocks.iter().map(|b| b.c.norm_squared()).sum::<f64>().sqrt();

    let mut xs: Vec<DMatrix<f64>> = Vec::with_capacity(dims.len());
    let mut zs: Vec<DMatrix<f64>> = Vec::with_capacity(dims.len());
    for blk in &sdp.blocks {
        let d = blk.c.nrows() as f64;
        let mut xi: f64 = 10f64.max(d.sqrt());
        let mut zi: f64 = 10f64.max(d.sqrt()).max(blk.c.norm());
        for (i, ai) in &blk.a {
            let an = ai.norm();
            xi = xi.max(d * (1.0 + sdp.b[*i].abs()) / (1.0 + an));
            zi = zi.max(an);
        }
        xs.push(DMatrix::identity(blk.c.nrows(), blk.c.nrows()) * xi);
        zs.push(DMatrix::identity(blk.c.nrows(), blk.c.nrows()) * zi);
    }
    let mut y = DVector::zeros(m);

    let outcome = |status, y: &DVector<f64>, p, d, it| IpmOutcome {
        status,
        y: y.clone(),
        primal_obj: p,
        dual_obj: d,
        iterations: it,
    };

    let mut primal_obj = f64::NAN;
    let mut dual_obj = f64::NAN;
    for iter in 0..settings.max_iter {
        let aty = sdp.adjoint(&y);
        let rd: Vec<DMatrix<f64>> = sdp
            .blocks
            .iter()
            .zip(&zs)
            .zip(&aty)
            .map(|((blk, z), a)| &blk.c - z - a)
            .collect();
        let rp = &sdp.b - sdp.apply(&xs);
        let gap = inner(&xs, &zs);
        let mu = gap / n_total as f64;
        primal_obj = sdp.blocks.iter().zip(&xs).map(|(blk, x)| blk.c.dot(x)).sum();
        dual_obj = sdp.b.dot(&y);
        let pinf = rp.norm() / (1.0 + b_norm);
        let dinf = rd.iter().map(|r| r.norm_squared()).sum::<f64>().sqrt() / (1.0 + c_norm);
        let rel_gap = (primal_obj - dual_obj).abs() / (1.0 + primal_obj.abs() + dual_obj.abs());
        log::trace!("it {iter} p {primal_obj:.6e} d {dual_obj:.6e} pinf {pinf:.2e} dinf {dinf:.2e} gap {rel_gap:.2e} mu {mu:.2e}");

        if let Some(t) = settings.target {
            if dinf < 1e-11 && dual_obj >= t {
                return outcome(IpmStatus::ReachedTarget, &y, primal_obj, dual_obj, iter);
            }
        }
        if pinf < settings.tol && dinf < settings.tol && rel_gap < settings.tol {
            return outcome(IpmStatus::Optimal, &y, primal_obj, dual_obj, iter);
        }

        let zinv: Option<Vec<DMatrix<f64>>> = zs.iter().map(|z| z.clone().cholesky().map(|c| c.inverse())).collect();
        let Some(zinv) = zinv else {
            return outcome(IpmStatus::NumericalFailure, &y, primal_obj, dual_obj, iter);
        };

        let mut schur = DMatrix::zeros(m, m);
        for (k, blk) in sdp.blocks.iter().enumerate() {
            let xz: Vec<DMatrix<f64>> = blk.a.iter().map(|(_, ai)| (&xs[k] * ai * &zinv[k]).transpose()).collect();
            for (gi, (i, _)) in xz.iter().zip(&blk.a) {
                for (j, aj) in &blk.a {
                    schur[(*i, *j)] += aj.dot(gi);
                }
            }
        }
        let solver = SchurSolver::new(schur);

        let xrz: Vec<DMatrix<f64>> = (0..dims.len()).map(|k| &xs[k] * &rd[k] * &zinv[k]).collect();
        let base_rhs = &sdp.b + sdp.apply(&xrz);

        let direction = |g: Option<&[DMatrix<f64>]>| -> Option<Direction> {
            let rhs = match g {
                Some(g) => {
                    let gz: Vec<DMatrix<f64>> = g.iter().zip(&zinv).map(|(g, zi)| g * zi).collect();
                    &base_rhs - sdp.apply(&gz)
                }
                None => base_rhs.clone(),
            };
            let dy = solver.solve(&rhs)?;
            if dy.iter().any(|v| !v.is_finite()) {
                return None;
            }
            let atdy = sdp.adjoint(&dy);
            let dz: Vec<DMatrix<f64>> = rd.iter().zip(&atdy).map(|(r, a)| r - a).collect();
            let dx: Vec<DMatrix<f64>> = (0..dims.len())
                .map(|k| {
                    let mut dx = -&xs[k] - &xs[k] * &dz[k] * &zinv[k];
                    if let Some(g) = g {
                        dx += &g[k] * &zinv[k];
                    }
                    symmetrize(&mut dx);
                    dx
                })
                .collect();
            Some((dy, dx, dz))
        };

        let Some((_, dx_p, dz_p)) = direction(None) else {
            return outcome(IpmStatus::NumericalFailure, &y, primal_obj, dual_obj, iter);
        };
        let (Some(ap), Some(ad)) = (block_step(&xs, &dx_p), block_step(&zs, &dz_p)) else {
            return outcome(IpmStatus::NumericalFailure, &y, primal_obj, dual_obj, iter);
        };
        let (ap, ad) = (ap.min(1.0), ad.min(1.0));
        let x_aff: Vec<DMatrix<f64>> = xs.iter().zip(&dx_p).map(|(x, d)| x + d * ap).collect();
        let z_aff: Vec<DMatrix<f64>> = zs.iter().zip(&dz_p).map(|(z, d)| z + d * ad).collect();
        let sigma = (inner(&x_aff, &z_aff) / gap).clamp(0.0, 1.0).powi(3);

        let g: Vec<DMatrix<f64>> = dx_p
            .iter()
            .zip(&dz_p)
            .map(|(dx, dz)| DMatrix::identity(dx.nrows(), dx.nrows()) * (sigma * mu) - dx * dz)
            .collect();
        let Some((dy, dx, dz)) = direction(Some(&g)) else {
            return outcome(IpmStatus::NumericalFailure, &y, primal_obj, dual_obj, iter);
        };
        let (Some(ap), Some(ad)) = (block_step(&xs, &dx), block_step(&zs, &dz)) else {
            return outcome(IpmStatus::NumericalFailure, &y, primal_obj, dual_obj, iter);
        };
        let ap = (STEP_FRACTION * ap).min(1.0);
        let ad = (STEP_FRACTION * ad).min(1.0);
        if ap < 1e-12 && ad < 1e-12 {
            return outcome(IpmStatus::NumericalFailure, &y, primal_obj, dual_obj, iter);
        }
        for k in 0..dims.len() {
            xs[k] += &dx[k] * ap;
            zs[k] += &dz[k] * ad;
            symmetrize(&mut xs[k]);
            symmetrize(&mut zs[k]);
        }
        y += dy * ad;
    }
    outcome(IpmStatus::MaxIterations, &y, primal_obj, dual_obj, settings.max_iter)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings() -> IpmSettings {
        IpmSettings { tol: 1e-9, max_iter: 100, target: None }
    }

    #[test]
    fn minimum_eigenvalue_as_sdp() {
        // max s  s.t.  C - s I >= 0  gives s = lambda_min(C).
        let c = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let sdp = BlockSdp {
            blocks: vec![SdpBlock { c: c.clone(), a: vec![(0, DMatrix::identity(3, 3))] }],
            b: DVector::from_element(1, 1.0),
        };
        let out = solve(&sdp, &settings());
        assert_eq!(out.status, IpmStatus::Optimal);
        let lmin = SymmetricEigen::new(c).eigenvalues.min();
        assert!((out.y[0] - lmin).abs() < 1e-7, "{} vs {}", out.y[0], lmin);
    }

    #[test]
    fn linear_program_as_diagonal_blocks() {
        // max y0 + y1  s.t.  y0 <= 1, y1 <= 2, y0 + y1 <= 2.5
        let one = |v: f64| DMatrix::from_element(1, 1, v);
        let sdp = BlockSdp {
            blocks: vec![
                SdpBlock { c: one(1.0), a: vec![(0, one(1.0))] },
                SdpBlock { c: one(2.0), a: vec![(1, one(1.0))] },
                SdpBlock { c: one(2.5), a: vec![(0, one(1.0)), (1, one(1.0))] },
            ],
            b: DVector::from_vec(vec![1.0, 1.0]),
        };
        let out = solve(&sdp, &settings());
        assert_eq!(out.status, IpmStatus::Optimal);
        assert!((out.dual_obj - 2.5).abs() < 1e-7);
        assert!((out.primal_obj - 2.5).abs() < 1e-7);
    }

    #[test]
    fn target_stops_early() {
        let c = DMatrix::identity(2, 2) * 5.0;
        let sdp = BlockSdp {
            blocks: vec![SdpBlock { c, a: vec![(0, DMatrix::identity(2, 2))] }],
            b: DVector::from_element(1, 1.0),
        };
        let out = solve(&sdp, &IpmSettings { target: Some(1.0), ..settings() });
        assert_eq!(out.status, IpmStatus::ReachedTarget);
        assert!(out.y[0] >= 1.0 && out.y[0] <= 5.0);
    }
}
