//! State-feedback synthesis for delay-robust synchronization.
//!
//! Two routes are offered. The common-functional design solves the
//! descriptor LMI at every hull vertex with shared blocks and reads off
//! `K = X Y^{-1}`. The scaled design solves it once at the centre of the
//! spectrum's real extent, estimates the region of admissible coupling points
//! for that base gain, and picks a coupling gain `c` that moves every scaled
//! eigenvalue into the region. Every returned gain has been re-checked with
//! the analysis LMI.

use nalgebra::{Complex, DMatrix};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{estimate_dsr, point_in_hull, robust_check_vertices, DsrEstimate, RobustCheck};
use crate::error::{Error, Result};
use crate::geometry::{self, Point};
use crate::graph::{eigenvalue_hull, PinnedSpectrum};
use crate::lmi::{common_blocks_problem, descriptor_design_lmi, AgentModel, LmiProblem, LmiWitness};
use crate::sdp::{check_feasible, FeasibilityStatus, SolverOptions};

/// Condition number of `Y` above which a witness is re-solved with `Y` floored.
pub const MAX_Y_CONDITION: f64 = 1e10;

/// Probe bounds and bisection width for the coupling-gain interval.
pub const C_PROBE_MIN: f64 = 1e-3;
pub const C_PROBE_MAX: f64 = 1e3;
pub const C_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignMethod {
    CommonLkf,
    Scaled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignCertificate {
    pub method: DesignMethod,
    pub h: f64,
    pub epsilon: f64,
    /// Coupling points the design LMI was solved at.
    pub design_points: Vec<Point>,
    /// Region estimate used to choose the coupling gain (scaled design).
    pub region: Option<Vec<Point>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerDesign {
    pub base_gain: DMatrix<f64>,
    pub coupling: f64,
    pub c_range: (f64, f64),
    pub certificate: DesignCertificate,
    /// Analysis check of the effective gain at the certificate delay.
    pub check: RobustCheck,
}

impl ControllerDesign {
    /// Effective gain `c * K_base`.
    pub fn gain(&self) -> DMatrix<f64> {
        &self.base_gain * self.coupling
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DesignOutcome {
    Designed(Box<ControllerDesign>),
    /// The design LMI has no solution.
    Infeasible,
    /// The solver or the analysis re-check could not settle the question.
    Inconclusive(String),
}

fn condition(m: &DMatrix<f64>) -> f64 {
    let sv = m.singular_values();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        sv.max() / min
    }
}

fn gain_from_witness(w: &LmiWitness) -> Option<DMatrix<f64>> {
    let y = w.block("Y")?;
    let x = w.block("X")?;
    if condition(y) > MAX_Y_CONDITION {
        return None;
    }
    let yinv = y.clone().try_inverse()?;
    Some(x * yinv)
}

enum GainSolve {
    Gain(DMatrix<f64>),
    Infeasible,
    Inconclusive(String),
}

fn solve_gain(problem: &LmiProblem, opts: &SolverOptions) -> GainSolve {
    let verdict = check_feasible(problem, opts);
    match verdict.status {
        FeasibilityStatus::Infeasible => return GainSolve::Infeasible,
        FeasibilityStatus::Inconclusive => return GainSolve::Inconclusive("design solve inconclusive".into()),
        FeasibilityStatus::Feasible => {}
    }
    if let Some(k) = verdict.witness.as_ref().and_then(gain_from_witness) {
        return GainSolve::Gain(k);
    }
    log::info!("ill-conditioned Y in design witness; re-solving with Y floored");
    let floored = SolverOptions { floor_symmetric: true, ..*opts };
    let retry = check_feasible(problem, &floored);
    match retry.witness.as_ref().and_then(gain_from_witness) {
        Some(k) => GainSolve::Gain(k),
        None => GainSolve::Inconclusive("no well-conditioned Y found".into()),
    }
}

fn upper_points(points: &[Point]) -> Vec<Point> {
    let mut out: Vec<Point> = Vec::new();
    for p in points {
        let rep = Complex::new(p.re, p.im.abs());
        if !out.iter().any(|q| (q - rep).norm() <= geometry::COLLINEAR_TOL) {
            out.push(rep);
        }
    }
    out
}

/// Common-functional design over the given vertices.
pub fn design_common_lkf(
    model: &AgentModel,
    vertices: &[Point],
    h: f64,
    epsilon: f64,
    opts: &SolverOptions,
) -> Result<DesignOutcome> {
    if vertices.is_empty() {
        return Err(Error::InvalidArgument("no vertices given".into()));
    }
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::InvalidArgument(format!("delay bound must be > 0, got {h}")));
    }
    let points = upper_points(vertices);
    let problems = points
        .iter()
        .map(|&s| descriptor_design_lmi(model, s, h, epsilon))
        .collect::<Result<Vec<_>>>()?;
    let stacked = common_blocks_problem(&problems)?;
    let k = match solve_gain(&stacked, opts) {
        GainSolve::Gain(k) => k,
        GainSolve::Infeasible => return Ok(DesignOutcome::Infeasible),
        GainSolve::Inconclusive(why) => return Ok(DesignOutcome::Inconclusive(why)),
    };
    let check = robust_check_vertices(model, &k, vertices, h, opts)?;
    if !check.is_certified() {
        return Ok(DesignOutcome::Inconclusive(format!(
            "designed gain not certified by the analysis LMI ({:?})",
            check.certificate
        )));
    }
    Ok(DesignOutcome::Designed(Box::new(ControllerDesign {
        base_gain: k,
        coupling: 1.0,
        c_range: (1.0, 1.0),
        certificate: DesignCertificate {
            method: DesignMethod::CommonLkf,
            h,
            epsilon,
            design_points: points,
            region: None,
        },
        check,
    })))
}

/// Midpoint of the real extent of the spectrum.
pub fn central_point(spectrum: &PinnedSpectrum) -> f64 {
    0.5 * (spectrum.min_real() + spectrum.max_real())
}

/// Admissible coupling gains: `c_min <= c <= c_max` keeps every `c * lambda`
/// inside the hull.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingRange {
    pub c_min: f64,
    pub c_max: f64,
}

impl CouplingRange {
    pub fn contains(&self, c: f64) -> bool {
        self.c_min <= c && c <= self.c_max
    }
}

fn scaled_inside(hull: &[Point], eigenvalues: &[Point], c: f64) -> bool {
    eigenvalues.iter().all(|z| point_in_hull(hull, z * c))
}

/// The maximal interval of `c` in `[C_PROBE_MIN, C_PROBE_MAX]` with all
/// `c * lambda` in the hull, by bisection from a valid seed. `None` when no
/// probed `c` is valid.
pub fn coupling_range(hull: &[Point], spectrum: &PinnedSpectrum, tol: f64) -> Result<Option<CouplingRange>> {
    if hull.is_empty() {
        return Err(Error::InvalidArgument("empty hull".into()));
    }
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be > 0, got {tol}")));
    }
    let ev = spectrum.eigenvalues();
    let valid = |c: f64| scaled_inside(hull, ev, c);

    let seed = if valid(1.0) {
        Some(1.0)
    } else {
        let steps = 4000;
        let ratio = (C_PROBE_MAX / C_PROBE_MIN).ln() / steps as f64;
        (0..=steps).map(|k| C_PROBE_MIN * (ratio * k as f64).exp()).find(|&c| valid(c))
    };
    let Some(seed) = seed else {
        return Ok(None);
    };

    let c_min = if valid(C_PROBE_MIN) {
        C_PROBE_MIN
    } else {
        let (mut lo, mut hi) = (C_PROBE_MIN, seed);
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if valid(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    };
    let c_max = if valid(C_PROBE_MAX) {
        C_PROBE_MAX
    } else {
        let (mut lo, mut hi) = (seed, C_PROBE_MAX);
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if valid(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    Ok(Some(CouplingRange { c_min, c_max }))
}

/// First eigenvalue that leaves the hull at `c = 1`, for diagnostics.
fn offending_eigenvalue(hull: &[Point], spectrum: &PinnedSpectrum) -> Point {
    spectrum
        .eigenvalues()
        .iter()
        .copied()
        .find(|z| !point_in_hull(hull, *z))
        .unwrap_or(spectrum.eigenvalues()[0])
}

fn pick_coupling(range: &CouplingRange) -> f64 {
    if range.contains(1.0) {
        1.0
    } else {
        (range.c_min * range.c_max).sqrt()
    }
}

/// Region estimate and coupling choice for a given base gain.
pub fn scale_into_region(
    model: &AgentModel,
    base_gain: &DMatrix<f64>,
    spectrum: &PinnedSpectrum,
    h: f64,
    delta: f64,
    opts: &SolverOptions,
) -> Result<(DsrEstimate, CouplingRange)> {
    let region = estimate_dsr(model, base_gain, h, delta, opts)?;
    let range = coupling_range(&region.hull, spectrum, C_TOL)?.ok_or_else(|| Error::NoCouplingGain {
        eigenvalue: offending_eigenvalue(&region.hull, spectrum),
    })?;
    Ok((region, range))
}

/// Single-point design at the spectrum centre followed by coupling-gain
/// scaling into the region estimate of the resulting base gain.
pub fn design_scaled(
    model: &AgentModel,
    spectrum: &PinnedSpectrum,
    h: f64,
    epsilon: f64,
    delta: f64,
    opts: &SolverOptions,
) -> Result<ControllerDesign> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::InvalidArgument(format!("delay bound must be > 0, got {h}")));
    }
    let centre = Complex::new(central_point(spectrum), 0.0);
    let problem = descriptor_design_lmi(model, centre, h, epsilon)?;
    let base_gain = match solve_gain(&problem, opts) {
        GainSolve::Gain(k) => k,
        GainSolve::Infeasible => return Err(Error::DesignInfeasible { sigma: centre }),
        GainSolve::Inconclusive(why) => return Err(Error::Inconclusive(why)),
    };
    let (region, range) = scale_into_region(model, &base_gain, spectrum, h, delta, opts)?;
    let coupling = pick_coupling(&range);
    let check = robust_check_vertices(model, &(&base_gain * coupling), &eigenvalue_hull(spectrum), h, opts)?;
    if !check.is_certified() {
        return Err(Error::Inconclusive(format!(
            "scaled gain c = {coupling} not certified by the analysis LMI ({:?})",
            check.certificate
        )));
    }
    Ok(ControllerDesign {
        base_gain,
        coupling,
        c_range: (range.c_min, range.c_max),
        certificate: DesignCertificate {
            method: DesignMethod::Scaled,
            h,
            epsilon,
            design_points: vec![centre],
            region: Some(region.hull),
        },
        check,
    })
}

/// Widens a common-functional design with the coupling interval admitted by
/// its own region estimate; the coupling stays at 1.
pub fn attach_coupling_range(
    model: &AgentModel,
    design: &mut ControllerDesign,
    spectrum: &PinnedSpectrum,
    delta: f64,
    opts: &SolverOptions,
) -> Result<()> {
    let (region, range) = scale_into_region(model, &design.base_gain, spectrum, design.certificate.h, delta, opts)?;
    design.c_range = (range.c_min, range.c_max);
    design.certificate.region = Some(region.hull);
    Ok(())
}

/// Evenly spaced gains across the admissible interval, each checked for
/// containment of every scaled eigenvalue.
pub fn coupling_grid_contained(hull: &[Point], spectrum: &PinnedSpectrum, range: &CouplingRange, n: usize) -> bool {
    (0..n)
        .into_par_iter()
        .map(|k| range.c_min + (range.c_max - range.c_min) * k as f64 / (n.max(2) - 1) as f64)
        .all(|c| scaled_inside(hull, spectrum.eigenvalues(), c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::robust_sync_check;
    use crate::graph::{build_pinned_laplacian, pinned_spectrum, PinnedDigraph};

    fn oscillator() -> AgentModel {
        AgentModel::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]), DMatrix::from_row_slice(2, 1, &[0.0, 1.0]))
            .unwrap()
    }

    fn example_spectrum() -> PinnedSpectrum {
        let e = DMatrix::from_row_slice(4, 4, &[0., 1., 0., 1., 0., 0., 1., 0., 1., 0., 0., 0., 0., 1., 1., 0.]);
        let g = PinnedDigraph::new(e, vec![1., 1., 0., 0.]).unwrap();
        pinned_spectrum(&build_pinned_laplacian(&g)).unwrap()
    }

    fn row(a: f64, b: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, 2, &[a, b])
    }

    #[test]
    fn common_design_example() {
        let opts = SolverOptions::default();
        let s = example_spectrum();
        let v = eigenvalue_hull(&s);
        let DesignOutcome::Designed(d) = design_common_lkf(&oscillator(), &v, 0.6, 0.1, &opts).unwrap() else {
            panic!("expected a design at h = 0.6");
        };
        assert!(d.c_range.0 <= 1.0 && d.coupling == 1.0);
        assert!(robust_sync_check(&oscillator(), &d.gain(), &s, 0.6, &opts).unwrap().is_certified());
        assert!(robust_sync_check(&oscillator(), &row(-0.0173, 0.2531), &s, 0.6, &opts).unwrap().is_certified());
        assert_eq!(design_common_lkf(&oscillator(), &v, 0.9, 0.1, &opts).unwrap(), DesignOutcome::Infeasible);
    }

    #[test]
    fn example_coupling_ranges() {
        let opts = SolverOptions::default();
        let s = example_spectrum();
        let (_, r6) = scale_into_region(&oscillator(), &row(-0.005, 0.2883), &s, 0.6, 0.05, &opts).unwrap();
        let (_, r9) = scale_into_region(&oscillator(), &row(-0.011, 0.1446), &s, 0.9, 0.05, &opts).unwrap();
        assert!((r6.c_min - 0.131).abs() < 0.01 && (r6.c_max - 1.873).abs() < 0.05, "{r6:?}");
        assert!((r9.c_max - 1.024).abs() < 0.05, "{r9:?}");
    }

    #[test]
    fn scaled_design_example() {
        let opts = SolverOptions::default();
        let s = example_spectrum();
        let d = design_scaled(&oscillator(), &s, 0.6, 0.1, 0.05, &opts).unwrap();
        assert!(d.check.is_certified());
        assert!(d.certificate.region.is_some());
        assert!(d.c_range.0 <= 1.0 && 1.0 <= d.c_range.1);
    }
}
