//! Construction of the delay-dependent LMI families as explicit affine
//! matrix functions of their decision blocks.
//!
//! Every builder produces a Hermitian affine function of the block entries,
//! realified into a real symmetric one with `[Re, -Im; Im, Re]`. A problem may
//! carry several constraint blocks; they are the diagonal blocks of a single
//! block-diagonal constraint that must be negative definite.

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex<f64>>;

/// Single-agent dynamics `x' = A x + B u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl AgentModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() || a.nrows() == 0 {
            return Err(Error::Dimension(format!("A must be square, got {}x{}", a.nrows(), a.ncols())));
        }
        if b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "B must be {}xm with m > 0, got {}x{}",
                a.nrows(),
                b.nrows(),
                b.ncols()
            )));
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// State dimension.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Input dimension.
    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// `A_d = -B K` for a gain `K` of shape `m x n`.
    pub fn delay_matrix(&self, k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if k.nrows() != self.m() || k.ncols() != self.n() {
            return Err(Error::Dimension(format!(
                "gain must be {}x{}, got {}x{}",
                self.m(),
                self.n(),
                k.nrows(),
                k.ncols()
            )));
        }
        Ok(-(&self.b * k))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockKind {
    /// Symmetric, required positive definite.
    PositiveDefinite,
    /// Symmetric, otherwise unconstrained.
    Symmetric,
    /// Rectangular, unconstrained.
    Free,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionBlock {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub kind: BlockKind,
}

impl DecisionBlock {
    pub fn symmetric(name: &str, dim: usize, kind: BlockKind) -> Self {
        Self { name: name.to_string(), rows: dim, cols: dim, kind }
    }

    pub fn free(name: &str, rows: usize, cols: usize) -> Self {
        Self { name: name.to_string(), rows, cols, kind: BlockKind::Free }
    }

    pub fn is_symmetric(&self) -> bool {
        self.kind != BlockKind::Free
    }

    /// Number of scalar unknowns in the block.
    pub fn n_vars(&self) -> usize {
        if self.is_symmetric() {
            self.rows * (self.rows + 1) / 2
        } else {
            self.rows * self.cols
        }
    }

    /// Matrix value for the given scalar entries. Symmetric blocks are
    /// parametrized by their upper triangle, row by row.
    pub fn to_matrix(&self, vars: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        let mut k = 0;
        if self.is_symmetric() {
            for i in 0..self.rows {
                for j in i..self.cols {
                    m[(i, j)] = vars[k];
                    m[(j, i)] = vars[k];
                    k += 1;
                }
            }
        } else {
            for i in 0..self.rows {
                for j in 0..self.cols {
                    m[(i, j)] = vars[k];
                    k += 1;
                }
            }
        }
        m
    }

    pub fn to_vars(&self, m: &DMatrix<f64>) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_vars());
        for i in 0..self.rows {
            let start = if self.is_symmetric() { i } else { 0 };
            for j in start..self.cols {
                out.push(m[(i, j)]);
            }
        }
        out
    }
}

/// `H(x) = H0 + sum_i x_i H_i` with Hermitian coefficients.
#[derive(Debug, Clone)]
pub struct AffineHermitian {
    pub constant: CMatrix,
    pub coeffs: Vec<CMatrix>,
}

impl AffineHermitian {
    pub fn eval(&self, x: &[f64]) -> CMatrix {
        let mut m = self.constant.clone();
        for (xi, c) in x.iter().zip(&self.coeffs) {
            if *xi != 0.0 {
                m += c * Complex::new(*xi, 0.0);
            }
        }
        m
    }
}

/// `F(x) = F0 + sum_i x_i F_i` with real symmetric coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineSymmetric {
    pub constant: DMatrix<f64>,
    pub coeffs: Vec<DMatrix<f64>>,
}

impl AffineSymmetric {
    pub fn dim(&self) -> usize {
        self.constant.nrows()
    }

    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        let mut m = self.constant.clone();
        for (xi, c) in x.iter().zip(&self.coeffs) {
            if *xi != 0.0 {
                m += c * *xi;
            }
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProblemKind {
    /// Delay-dependent stability of `x' = A x + sigma A_d x(t - tau)`.
    Stability,
    /// Descriptor-form state-feedback design.
    Design,
    /// Conjunction of several problems sharing their decision blocks.
    Stacked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemMeta {
    pub kind: ProblemKind,
    pub sigmas: Vec<Complex<f64>>,
    pub h: f64,
    pub epsilon: Option<f64>,
    /// Magnitude of the problem data; the feasibility margin is relative to it.
    pub scale: f64,
}

#[derive(Debug, Clone)]
pub struct LmiProblem {
    pub blocks: Vec<DecisionBlock>,
    /// Diagonal blocks of the constraint; all must be negative definite.
    pub constraint: Vec<AffineSymmetric>,
    pub meta: ProblemMeta,
}

impl LmiProblem {
    pub fn n_vars(&self) -> usize {
        self.blocks.iter().map(DecisionBlock::n_vars).sum()
    }

    /// Offset of each block's first scalar in the variable vector.
    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.blocks
            .iter()
            .map(|b| {
                let o = acc;
                acc += b.n_vars();
                o
            })
            .collect()
    }

    pub fn block_index(&self, name: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.name == name)
    }

    pub fn block_values(&self, x: &[f64]) -> Vec<DMatrix<f64>> {
        self.blocks
            .iter()
            .zip(self.offsets())
            .map(|(b, o)| b.to_matrix(&x[o..o + b.n_vars()]))
            .collect()
    }

    pub fn vars_from_blocks(&self, values: &[DMatrix<f64>]) -> Result<Vec<f64>> {
        if values.len() != self.blocks.len() {
            return Err(Error::Dimension(format!("expected {} blocks, got {}", self.blocks.len(), values.len())));
        }
        let mut x = Vec::with_capacity(self.n_vars());
        for (b, v) in self.blocks.iter().zip(values) {
            if v.nrows() != b.rows || v.ncols() != b.cols {
                return Err(Error::Dimension(format!(
                    "block {} must be {}x{}, got {}x{}",
                    b.name,
                    b.rows,
                    b.cols,
                    v.nrows(),
                    v.ncols()
                )));
            }
            x.extend(b.to_vars(v));
        }
        Ok(x)
    }

    /// Total dimension of the block-diagonal constraint.
    pub fn constraint_dim(&self) -> usize {
        self.constraint.iter().map(AffineSymmetric::dim).sum()
    }

    /// The assembled block-diagonal constraint matrix at `x`.
    pub fn constraint_matrix(&self, x: &[f64]) -> DMatrix<f64> {
        let dim = self.constraint_dim();
        let mut m = DMatrix::zeros(dim, dim);
        let mut off = 0;
        for c in &self.constraint {
            let d = c.dim();
            m.view_mut((off, off), (d, d)).copy_from(&c.eval(x));
            off += d;
        }
        m
    }

    /// Feasibility margin `mu` for the given relative margin.
    pub fn margin(&self, relative: f64) -> f64 {
        relative * self.meta.scale
    }
}

/// A concrete assignment of every decision block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmiWitness {
    pub blocks: Vec<(String, DMatrix<f64>)>,
    /// Largest eigenvalue of the constraint at this assignment.
    pub max_eig: f64,
}

impl LmiWitness {
    pub fn block(&self, name: &str) -> Option<&DMatrix<f64>> {
        self.blocks.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    /// Every block multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            blocks: self.blocks.iter().map(|(n, m)| (n.clone(), m * k)).collect(),
            max_eig: self.max_eig * k,
        }
    }
}

pub(crate) fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().max()
}

fn cplx(m: &DMatrix<f64>) -> CMatrix {
    m.map(|v| Complex::new(v, 0.0))
}

fn scaled(z: Complex<f64>, m: &DMatrix<f64>) -> CMatrix {
    m.map(|v| z * v)
}

/// Assembles a Hermitian matrix from its upper block triangle.
fn hermitian_from_upper(upper: &[Vec<CMatrix>]) -> CMatrix {
    let k = upper.len();
    let sizes: Vec<usize> = upper.iter().map(|row| row[0].nrows()).collect();
    let dim: usize = sizes.iter().sum();
    let mut m = CMatrix::zeros(dim, dim);
    let mut ro = 0;
    for i in 0..k {
        let mut co = ro;
        for j in i..k {
            let blk = &upper[i][j - i];
            m.view_mut((ro, co), (sizes[i], sizes[j])).copy_from(blk);
            if i != j {
                m.view_mut((co, ro), (sizes[j], sizes[i])).copy_from(&blk.adjoint());
            }
            co += sizes[j];
        }
        ro += sizes[i];
    }
    m
}

/// Evaluates an affine block-matrix function at zero and at each unit
/// vector to recover its constant and coefficients.
fn affine_from<F>(blocks: &[DecisionBlock], f: F) -> AffineHermitian
where
    F: Fn(&[DMatrix<f64>]) -> CMatrix,
{
    let n_vars: usize = blocks.iter().map(DecisionBlock::n_vars).sum();
    let values = |x: &[f64]| -> Vec<DMatrix<f64>> {
        let mut off = 0;
        blocks
            .iter()
            .map(|b| {
                let m = b.to_matrix(&x[off..off + b.n_vars()]);
                off += b.n_vars();
                m
            })
            .collect()
    };
    let mut x = vec![0.0; n_vars];
    let constant = f(&values(&x));
    let coeffs = (0..n_vars)
        .map(|i| {
            x[i] = 1.0;
            let c = f(&values(&x)) - &constant;
            x[i] = 0.0;
            c
        })
        .collect();
    AffineHermitian { constant, coeffs }
}

/// `[Re(M), -Im(M); Im(M), Re(M)]`, negative definite iff `M` is.
pub fn realify_matrix(m: &CMatrix) -> DMatrix<f64> {
    let (r, c) = m.shape();
    let mut out = DMatrix::zeros(2 * r, 2 * c);
    for i in 0..r {
        for j in 0..c {
            let z = m[(i, j)];
            out[(i, j)] = z.re;
            out[(i + r, j + c)] = z.re;
            out[(i, j + c)] = -z.im;
            out[(i + r, j)] = z.im;
        }
    }
    out
}

pub fn realify(h: &AffineHermitian) -> AffineSymmetric {
    AffineSymmetric {
        constant: realify_matrix(&h.constant),
        coeffs: h.coeffs.iter().map(realify_matrix).collect(),
    }
}

fn check_square(name: &str, m: &DMatrix<f64>, n: usize) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::Dimension(format!("{name} must be {n}x{n}, got {}x{}", m.nrows(), m.ncols())));
    }
    Ok(())
}

fn check_h(h: f64) -> Result<()> {
    if !(h.is_finite() && h >= 0.0) {
        return Err(Error::InvalidArgument(format!("delay bound must be finite and >= 0, got {h}")));
    }
    Ok(())
}

/// The Hermitian stability matrix in `P, S, R` (before realification).
pub fn stability_matrix(
    model: &AgentModel,
    a_d: &DMatrix<f64>,
    sigma: Complex<f64>,
    h: f64,
) -> Result<AffineHermitian> {
    let n = model.n();
    check_square("A_d", a_d, n)?;
    check_h(h)?;
    let blocks = stability_blocks(n);
    let a = model.a().clone();
    let at = a.transpose();
    let a_d = a_d.clone();
    let a_dt = a_d.transpose();
    Ok(affine_from(&blocks, move |v| {
        let (p, s, r) = (&v[0], &v[1], &v[2]);
        let m11 = cplx(&(&at * p + p * &a + s - r));
        let m12 = scaled(sigma, &(p * &a_d)) + cplx(r);
        let m13 = cplx(&(&at * r * h));
        let m22 = cplx(&(-(s + r)));
        let m23 = scaled(sigma.conj() * h, &(&a_dt * r));
        let m33 = cplx(&(-r));
        hermitian_from_upper(&[vec![m11, m12, m13], vec![m22, m23], vec![m33]])
    }))
}

fn stability_blocks(n: usize) -> Vec<DecisionBlock> {
    vec![
        DecisionBlock::symmetric("P", n, BlockKind::PositiveDefinite),
        DecisionBlock::symmetric("S", n, BlockKind::PositiveDefinite),
        DecisionBlock::symmetric("R", n, BlockKind::PositiveDefinite),
    ]
}

/// Delay-dependent stability LMI for `x' = A x + sigma A_d x(t - tau)`,
/// `tau in [0, h]`, realified to a `6n x 6n` symmetric constraint in `P, S, R`.
pub fn stability_lmi(model: &AgentModel, a_d: &DMatrix<f64>, sigma: Complex<f64>, h: f64) -> Result<LmiProblem> {
    let herm = stability_matrix(model, a_d, sigma, h)?;
    let scale = 1f64.max(spectral_norm(model.a())).max(sigma.norm() * spectral_norm(a_d));
    Ok(LmiProblem {
        blocks: stability_blocks(model.n()),
        constraint: vec![realify(&herm)],
        meta: ProblemMeta { kind: ProblemKind::Stability, sigmas: vec![sigma], h, epsilon: None, scale },
    })
}

fn design_blocks(n: usize, m: usize) -> Vec<DecisionBlock> {
    vec![
        DecisionBlock::symmetric("P", n, BlockKind::PositiveDefinite),
        DecisionBlock::symmetric("S", n, BlockKind::PositiveDefinite),
        DecisionBlock::symmetric("R", n, BlockKind::PositiveDefinite),
        DecisionBlock::symmetric("Y", n, BlockKind::Symmetric),
        DecisionBlock::free("X", m, n),
    ]
}

/// The Hermitian descriptor design matrix in `P, S, R, Y, X` (the barred
/// variables after the congruence with `Y^{-1}`).
pub fn descriptor_design_matrix(model: &AgentModel, sigma: Complex<f64>, h: f64, epsilon: f64) -> Result<AffineHermitian> {
    check_h(h)?;
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be > 0, got {epsilon}")));
    }
    let blocks = design_blocks(model.n(), model.m());
    let a = model.a().clone();
    let at = a.transpose();
    let b = model.b().clone();
    let bt = b.transpose();
    Ok(affine_from(&blocks, move |v| {
        let (p, s, r, y, x) = (&v[0], &v[1], &v[2], &v[3], &v[4]);
        let m11 = cplx(&(y * &at + &a * y + s - r));
        let m12 = scaled(-sigma, &(&b * x)) + cplx(r);
        let m13 = cplx(&(p - y + y * &at * epsilon));
        let m22 = cplx(&(-(s + r)));
        let m23 = scaled(-sigma.conj() * epsilon, &(x.transpose() * &bt));
        let m33 = cplx(&(y * (-2.0 * epsilon) + r * (h * h)));
        hermitian_from_upper(&[vec![m11, m12, m13], vec![m22, m23], vec![m33]])
    }))
}

/// Descriptor-form design LMI at a single `sigma`. The gain is recovered
/// from a witness as `K = X Y^{-1}`.
pub fn descriptor_design_lmi(model: &AgentModel, sigma: Complex<f64>, h: f64, epsilon: f64) -> Result<LmiProblem> {
    let herm = descriptor_design_matrix(model, sigma, h, epsilon)?;
    let scale = 1f64.max(spectral_norm(model.a())).max(sigma.norm() * spectral_norm(model.b()));
    Ok(LmiProblem {
        blocks: design_blocks(model.n(), model.m()),
        constraint: vec![realify(&herm)],
        meta: ProblemMeta { kind: ProblemKind::Design, sigmas: vec![sigma], h, epsilon: Some(epsilon), scale },
    })
}

/// Conjunction of problems with shared decision blocks.
pub fn common_blocks_problem(problems: &[LmiProblem]) -> Result<LmiProblem> {
    let first = problems
        .first()
        .ok_or_else(|| Error::InvalidArgument("no problems to combine".into()))?;
    if let Some(bad) = problems.iter().find(|p| p.blocks != first.blocks) {
        return Err(Error::Dimension(format!(
            "decision blocks differ: {:?} vs {:?}",
            first.blocks.iter().map(|b| &b.name).collect::<Vec<_>>(),
            bad.blocks.iter().map(|b| &b.name).collect::<Vec<_>>()
        )));
    }
    if problems.len() == 1 {
        return Ok(first.clone());
    }
    let mut sigmas = Vec::new();
    let mut constraint = Vec::new();
    let mut scale: f64 = 0.0;
    for p in problems {
        sigmas.extend(p.meta.sigmas.iter().copied());
        constraint.extend(p.constraint.iter().cloned());
        scale = scale.max(p.meta.scale);
    }
    Ok(LmiProblem {
        blocks: first.blocks.clone(),
        constraint,
        meta: ProblemMeta { kind: ProblemKind::Stacked, sigmas, h: first.meta.h, epsilon: first.meta.epsilon, scale },
    })
}
