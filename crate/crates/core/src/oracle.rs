//! Characteristic roots of `x' = A x + sigma A_d x(t - tau)` by Chebyshev
//! collocation of the infinitesimal generator of the solution semigroup.
//!
//! The state on `[-tau, 0]` is sampled at Chebyshev points; interior rows
//! differentiate the samples and the row at `theta = 0` imposes the dynamics.
//! The rightmost eigenvalues of the resulting matrix converge spectrally to
//! the rightmost characteristic roots; each is then polished by Newton's
//! method on the characteristic equation, and eigenvalues that do not polish
//! to a nearby root are discarded as discretization artifacts.

use std::f64::consts::PI;

use nalgebra::{Complex, DMatrix};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lmi::AgentModel;

type CMatrix = DMatrix<Complex<f64>>;

pub const DEFAULT_ORDER: usize = 20;
pub const MAX_ORDER: usize = 320;
/// Change in the rightmost real part below which the order is accepted.
pub const ORDER_TOL: f64 = 1e-8;
/// Largest delay probed when searching for a crossing.
pub const TAU_CAP: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralResult {
    pub rightmost_root: Complex<f64>,
    /// Approximate roots sorted by decreasing real part.
    pub roots: Vec<Complex<f64>>,
    pub order: usize,
}

/// Chebyshev points `cos(j pi / N)` and the differentiation matrix on them.
fn chebyshev(order: usize) -> (Vec<f64>, DMatrix<f64>) {
    let n = order;
    let x: Vec<f64> = (0..=n).map(|j| (j as f64 * PI / n as f64).cos()).collect();
    let c = |j: usize| -> f64 {
        let base = if j == 0 || j == n { 2.0 } else { 1.0 };
        if j.is_multiple_of(2) {
            base
        } else {
            -base
        }
    };
    let mut d = DMatrix::zeros(n + 1, n + 1);
    for i in 0..=n {
        for j in 0..=n {
            if i != j {
                d[(i, j)] = c(i) / c(j) / (x[i] - x[j]);
            }
        }
    }
    for i in 0..=n {
        let row_sum: f64 = (0..=n).filter(|&j| j != i).map(|j| d[(i, j)]).sum();
        d[(i, i)] = -row_sum;
    }
    (x, d)
}

fn to_complex(m: &DMatrix<f64>) -> CMatrix {
    m.map(|v| Complex::new(v, 0.0))
}

fn eigenvalues(m: CMatrix) -> Result<Vec<Complex<f64>>> {
    let schur = nalgebra::linalg::Schur::try_new(m, f64::EPSILON, 100_000).ok_or(Error::EigenFailure)?;
    let (_, t) = schur.unpack();
    Ok(t.diagonal().iter().copied().collect())
}

fn sorted_rightmost(mut roots: Vec<Complex<f64>>) -> SpectralResult {
    roots.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
    SpectralResult { rightmost_root: roots[0], roots, order: 0 }
}

/// Newton iteration on `det(lambda I - A - sigma A_d exp(-lambda tau)) = 0`.
/// Returns `None` unless it converges close to the starting point.
fn refine_root(a: &CMatrix, sad: &CMatrix, tau: f64, start: Complex<f64>) -> Option<Complex<f64>> {
    let n = a.nrows();
    let eye = CMatrix::identity(n, n);
    let mut z = start;
    for _ in 0..50 {
        let e = (-z * tau).exp();
        let delta = &eye * z - a - sad * e;
        let slope = &eye + sad * (e * tau);
        let lu = delta.lu();
        let Some(inv_slope) = lu.solve(&slope) else {
            // Singular characteristic matrix: z is a root to working precision.
            return Some(z);
        };
        let step = Complex::new(1.0, 0.0) / inv_slope.trace();
        if !step.re.is_finite() || !step.im.is_finite() {
            return Some(z);
        }
        z -= step;
        if (z - start).norm() > 0.1 * (1.0 + start.norm()) {
            return None;
        }
        if step.norm() <= 1e-14 * (1.0 + z.norm()) {
            return Some(z);
        }
    }
    None
}

/// Keeps the collocation eigenvalues that refine to characteristic roots.
fn refined_roots(a: &CMatrix, sad: &CMatrix, tau: f64, raw: Vec<Complex<f64>>) -> Vec<Complex<f64>> {
    let mut roots: Vec<Complex<f64>> = Vec::new();
    for z in raw.iter().filter_map(|&z| refine_root(a, sad, tau, z)) {
        if !roots.iter().any(|r| (r - z).norm() <= 1e-8 * (1.0 + z.norm())) {
            roots.push(z);
        }
    }
    if roots.is_empty() {
        raw
    } else {
        roots
    }
}

fn check_inputs(model: &AgentModel, a_d: &DMatrix<f64>, tau: f64) -> Result<()> {
    let n = model.n();
    if a_d.nrows() != n || a_d.ncols() != n {
        return Err(Error::Dimension(format!("A_d must be {n}x{n}, got {}x{}", a_d.nrows(), a_d.ncols())));
    }
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::InvalidArgument(format!("delay must be >= 0, got {tau}")));
    }
    Ok(())
}

/// Roots from a collocation of the given order; at `tau = 0` the eigenvalues
/// of `A + sigma A_d`.
pub fn rightmost_root(
    model: &AgentModel,
    a_d: &DMatrix<f64>,
    sigma: Complex<f64>,
    tau: f64,
    order: usize,
) -> Result<SpectralResult> {
    check_inputs(model, a_d, tau)?;
    if order < 8 {
        return Err(Error::InvalidArgument(format!("collocation order must be >= 8, got {order}")));
    }
    let n = model.n();
    let a = to_complex(model.a());
    let sad = to_complex(a_d) * sigma;
    if tau == 0.0 {
        let mut r = sorted_rightmost(eigenvalues(a + sad)?);
        r.order = order;
        return Ok(r);
    }

    let (_, d) = chebyshev(order);
    let dim = n * (order + 1);
    let mut g = CMatrix::zeros(dim, dim);
    g.view_mut((0, 0), (n, n)).copy_from(&a);
    g.view_mut((0, n * order), (n, n)).copy_from(&sad);
    // Nodes theta_j = tau (x_j - 1) / 2 map [-1, 1] onto [-tau, 0].
    let scale = 2.0 / tau;
    for i in 1..=order {
        for j in 0..=order {
            let v = Complex::new(scale * d[(i, j)], 0.0);
            for k in 0..n {
                g[(i * n + k, j * n + k)] = v;
            }
        }
    }
    let roots = refined_roots(&a, &sad, tau, eigenvalues(g)?);
    let mut r = sorted_rightmost(roots);
    r.order = order;
    Ok(r)
}

/// Doubles the order from [`DEFAULT_ORDER`] until the rightmost real part
/// moves by less than [`ORDER_TOL`].
pub fn rightmost_root_adaptive(
    model: &AgentModel,
    a_d: &DMatrix<f64>,
    sigma: Complex<f64>,
    tau: f64,
) -> Result<SpectralResult> {
    let mut order = DEFAULT_ORDER;
    let mut prev = rightmost_root(model, a_d, sigma, tau, order)?;
    if tau == 0.0 {
        return Ok(prev);
    }
    while order < MAX_ORDER {
        order *= 2;
        let next = rightmost_root(model, a_d, sigma, tau, order)?;
        if (next.rightmost_root.re - prev.rightmost_root.re).abs() < ORDER_TOL {
            return Ok(next);
        }
        prev = next;
    }
    log::debug!("collocation order capped at {MAX_ORDER} for tau = {tau}");
    Ok(prev)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaMargin {
    pub sigma: Complex<f64>,
    /// `None` when no crossing was found below [`TAU_CAP`].
    pub margin: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayMargin {
    /// Smallest margin over the points; [`TAU_CAP`] when `infinite`.
    pub margin: f64,
    pub infinite: bool,
    pub per_sigma: Vec<SigmaMargin>,
    pub tolerance: f64,
}

fn stable_at(model: &AgentModel, a_d: &DMatrix<f64>, sigma: Complex<f64>, tau: f64) -> Result<bool> {
    Ok(rightmost_root_adaptive(model, a_d, sigma, tau)?.rightmost_root.re < 0.0)
}

fn margin_for(model: &AgentModel, a_d: &DMatrix<f64>, sigma: Complex<f64>, tol: f64) -> Result<Option<f64>> {
    if !stable_at(model, a_d, sigma, 0.0)? {
        return Ok(Some(0.0));
    }
    let mut lo = 0.0;
    let mut hi = 0.01;
    loop {
        if hi > TAU_CAP {
            return Ok(None);
        }
        if !stable_at(model, a_d, sigma, hi)? {
            break;
        }
        lo = hi;
        hi *= 1.1;
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if stable_at(model, a_d, sigma, mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(0.5 * (lo + hi)))
}

/// Smallest delay at which a characteristic root reaches the imaginary axis,
/// minimized over `sigmas` and bisected to width `tol`.
pub fn true_delay_margin(
    model: &AgentModel,
    a_d: &DMatrix<f64>,
    sigmas: &[Complex<f64>],
    tol: f64,
) -> Result<DelayMargin> {
    check_inputs(model, a_d, 0.0)?;
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be > 0, got {tol}")));
    }
    if sigmas.is_empty() {
        return Err(Error::InvalidArgument("no coupling points given".into()));
    }
    // Conjugate points have conjugate roots; solve each pair once.
    let mut reps: Vec<Complex<f64>> = Vec::new();
    for s in sigmas {
        let rep = Complex::new(s.re, s.im.abs());
        if !reps.contains(&rep) {
            reps.push(rep);
        }
    }
    let margins = reps
        .par_iter()
        .map(|&s| margin_for(model, a_d, s, tol))
        .collect::<Result<Vec<_>>>()?;
    let per_sigma: Vec<SigmaMargin> = sigmas
        .iter()
        .map(|&s| {
            let k = reps.iter().position(|r| *r == Complex::new(s.re, s.im.abs())).unwrap();
            SigmaMargin { sigma: s, margin: margins[k] }
        })
        .collect();
    let finite = per_sigma.iter().filter_map(|m| m.margin).fold(f64::INFINITY, f64::min);
    let infinite = finite.is_infinite();
    Ok(DelayMargin { margin: if infinite { TAU_CAP } else { finite }, infinite, per_sigma, tolerance: tol })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(a: f64) -> AgentModel {
        AgentModel::new(DMatrix::from_element(1, 1, a), DMatrix::from_element(1, 1, 1.0)).unwrap()
    }

    fn one() -> Complex<f64> {
        Complex::new(1.0, 0.0)
    }

    #[test]
    fn differentiation_matrix_is_exact_on_cubics() {
        let (x, d) = chebyshev(10);
        let f: Vec<f64> = x.iter().map(|t| t * t * t - 2.0 * t).collect();
        for (i, t) in x.iter().enumerate() {
            let df: f64 = (0..x.len()).map(|j| d[(i, j)] * f[j]).sum();
            assert!((df - (3.0 * t * t - 2.0)).abs() < 1e-11);
        }
    }

    #[test]
    fn no_delay_term() {
        let r = rightmost_root(&scalar(-1.0), &DMatrix::zeros(1, 1), one(), 0.7, 20).unwrap();
        assert!((r.rightmost_root - Complex::new(-1.0, 0.0)).norm() < 1e-10);
    }

    #[test]
    fn delayed_integrator_crossing() {
        let a_d = DMatrix::from_element(1, 1, -1.0);
        let r = rightmost_root(&scalar(0.0), &a_d, one(), PI / 2.0, 20).unwrap();
        assert!(r.rightmost_root.re.abs() < 1e-6);
        assert!((r.rightmost_root.im.abs() - 1.0).abs() < 1e-6);
        let m = true_delay_margin(&scalar(0.0), &a_d, &[one()], 1e-6).unwrap();
        assert!((m.margin - PI / 2.0).abs() < 1e-4, "{}", m.margin);
    }

    #[test]
    fn delay_free_matches_matrix_eigenvalues() {
        let model = AgentModel::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]), DMatrix::from_row_slice(2, 1, &[0.0, 1.0]))
            .unwrap();
        let a_d = -(model.b() * DMatrix::from_row_slice(1, 2, &[0.134, 0.858]));
        let sigma = Complex::new(2.5, 0.866);
        let r = rightmost_root(&model, &a_d, sigma, 0.0, 20).unwrap();
        let m = to_complex(model.a()) + to_complex(&a_d) * sigma;
        let direct = crate::lmi::realify_matrix(&m).complex_eigenvalues();
        let best = direct.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        assert!((r.rightmost_root.re - best).abs() < 1e-10);
    }

    #[test]
    fn stable_drift_without_delay_term_is_infinite() {
        let m = true_delay_margin(&scalar(-1.0), &DMatrix::zeros(1, 1), &[one()], 1e-3).unwrap();
        assert!(m.infinite);
    }

    fn example_case() -> (AgentModel, DMatrix<f64>, Vec<Complex<f64>>) {
        let model = AgentModel::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]), DMatrix::from_row_slice(2, 1, &[0.0, 1.0]))
            .unwrap();
        let a_d = model.delay_matrix(&DMatrix::from_row_slice(1, 2, &[0.134, 1.34 * 0.6403])).unwrap();
        let golden = (5f64.sqrt() + 3.0) / 2.0;
        let sigmas = vec![
            Complex::new(1.0 / golden, 0.0),
            Complex::new(2.5, 0.75f64.sqrt()),
            Complex::new(2.5, -(0.75f64.sqrt())),
            Complex::new(golden, 0.0),
        ];
        (model, a_d, sigmas)
    }

    #[test]
    fn example_margin() {
        let (model, a_d, sigmas) = example_case();
        let m = true_delay_margin(&model, &a_d, &sigmas, 1e-5).unwrap();
        assert!(!m.infinite);
        assert!((m.margin - 0.4445).abs() < 2e-3, "{}", m.margin);
        let r = rightmost_root(&model, &a_d, sigmas[1], 0.4445, 20).unwrap();
        assert!(r.rightmost_root.re.abs() < 5e-3);
    }

    #[test]
    fn spectral_order_convergence() {
        let (model, a_d, sigmas) = example_case();
        for tau in [0.2, 0.4445, 0.6] {
            let r20 = rightmost_root(&model, &a_d, sigmas[1], tau, 20).unwrap();
            let r30 = rightmost_root(&model, &a_d, sigmas[1], tau, 30).unwrap();
            assert!((r20.rightmost_root.re - r30.rightmost_root.re).abs() < 1e-8);
        }
    }
}
