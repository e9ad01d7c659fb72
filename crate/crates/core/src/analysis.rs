//! Delay-dependent robustness over sets of complex coupling points.
//!
//! A gain `K` synchronizes the network for every delay in `[0, h]` when the
//! stability LMI holds at each vertex of the convex hull of the pinned
//! Laplacian spectrum, each vertex with its own functional. This module
//! answers that question for a fixed `h`, searches for the largest `h`, and
//! traces a convex inner estimate of the region of admissible coupling
//! points on a grid.

use std::collections::HashMap;
use std::sync::Mutex;

use nalgebra::{Complex, DMatrix};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, Point};
use crate::graph::{eigenvalue_hull, PinnedSpectrum};
use crate::lmi::{stability_lmi, AgentModel};
use crate::sdp::{check_feasible, FeasibilityStatus, FeasibilityVerdict, SolverOptions};

/// Default ceiling of the delay-bound search, in seconds.
pub const DEFAULT_H_CAP: f64 = 100.0;

/// Grid cells scanned along the real axis for the first feasible point.
pub const GAMMA_SCAN_CELLS: usize = 100;

/// Default cap on grid cells per axis during the boundary trace.
pub const DEFAULT_MAX_CELLS: usize = 400;

/// Decides the stability LMI at a single coupling point.
pub fn vertex_verdict(
    model: &AgentModel,
    a_d: &DMatrix<f64>,
    sigma: Point,
    h: f64,
    opts: &SolverOptions,
) -> Result<FeasibilityVerdict> {
    Ok(check_feasible(&stability_lmi(model, a_d, sigma, h)?, opts))
}

fn vertex_feasible(model: &AgentModel, a_d: &DMatrix<f64>, sigma: Point, h: f64, opts: &SolverOptions) -> Result<bool> {
    Ok(vertex_verdict(model, a_d, sigma, h, opts)?.is_feasible())
}

/// Vertices with `Im >= 0`; the LMI at a conjugate point is equivalent.
fn upper_representatives(vertices: &[Point]) -> Vec<Point> {
    let mut out: Vec<Point> = Vec::new();
    for v in vertices {
        let rep = Complex::new(v.re, v.im.abs());
        if !out.iter().any(|w| (w - rep).norm() <= geometry::COLLINEAR_TOL) {
            out.push(rep);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SyncCertificate {
    /// Every vertex LMI is feasible.
    Certified,
    /// Some vertex LMI is infeasible.
    NotCertified,
    /// No vertex is infeasible but at least one solve was inconclusive.
    Indeterminate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexCheck {
    pub vertex: Point,
    pub status: FeasibilityStatus,
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustCheck {
    pub certificate: SyncCertificate,
    pub h: f64,
    pub vertices: Vec<VertexCheck>,
}

impl RobustCheck {
    pub fn is_certified(&self) -> bool {
        self.certificate == SyncCertificate::Certified
    }
}

fn combine(statuses: impl IntoIterator<Item = FeasibilityStatus>) -> SyncCertificate {
    let mut inconclusive = false;
    for s in statuses {
        match s {
            FeasibilityStatus::Infeasible => return SyncCertificate::NotCertified,
            FeasibilityStatus::Inconclusive => inconclusive = true,
            FeasibilityStatus::Feasible => {}
        }
    }
    if inconclusive {
        SyncCertificate::Indeterminate
    } else {
        SyncCertificate::Certified
    }
}

/// Checks the stability LMI at the given points, in parallel.
pub fn robust_check_vertices(
    model: &AgentModel,
    k: &DMatrix<f64>,
    vertices: &[Point],
    h: f64,
    opts: &SolverOptions,
) -> Result<RobustCheck> {
    if vertices.is_empty() {
        return Err(Error::InvalidArgument("no vertices to check".into()));
    }
    let a_d = model.delay_matrix(k)?;
    let reps = upper_representatives(vertices);
    let checks = reps
        .par_iter()
        .map(|&v| {
            let verdict = vertex_verdict(model, &a_d, v, h, opts)?;
            Ok(VertexCheck { vertex: v, status: verdict.status, slack: verdict.slack })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RobustCheck { certificate: combine(checks.iter().map(|c| c.status)), h, vertices: checks })
}

/// Certifies synchronization for every delay in `[0, h]` by checking the
/// hull vertices of the spectrum.
pub fn robust_sync_check(
    model: &AgentModel,
    k: &DMatrix<f64>,
    spectrum: &PinnedSpectrum,
    h: f64,
    opts: &SolverOptions,
) -> Result<RobustCheck> {
    robust_check_vertices(model, k, &eigenvalue_hull(spectrum), h, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexBound {
    pub vertex: Point,
    /// Largest probed `h` with a verified witness.
    pub h_feasible: f64,
    /// Smallest probed `h` without one; `None` when the cap was reached.
    pub h_infeasible: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayBoundResult {
    pub h_max: f64,
    pub per_vertex: Vec<VertexBound>,
    pub tolerance: f64,
    /// The search hit the cap at every vertex.
    pub unbounded: bool,
}

fn bound_at_vertex(
    model: &AgentModel,
    a_d: &DMatrix<f64>,
    v: Point,
    tol: f64,
    h_cap: f64,
    opts: &SolverOptions,
) -> Result<VertexBound> {
    if !vertex_feasible(model, a_d, v, 0.0, opts)? {
        return Err(Error::DelayFreeInfeasible { vertex: v });
    }
    let mut lo = 0.0;
    let mut hi = tol;
    loop {
        if hi >= h_cap {
            if vertex_feasible(model, a_d, v, h_cap, opts)? {
                return Ok(VertexBound { vertex: v, h_feasible: h_cap, h_infeasible: None });
            }
            hi = h_cap;
            break;
        }
        if !vertex_feasible(model, a_d, v, hi, opts)? {
            break;
        }
        lo = hi;
        hi *= 2.0;
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if vertex_feasible(model, a_d, v, mid, opts)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(VertexBound { vertex: v, h_feasible: lo, h_infeasible: Some(hi) })
}

/// Largest delay bound certified at every vertex, by bracket doubling from
/// `tol` and bisection to width `tol`.
pub fn max_delay_bound(
    model: &AgentModel,
    k: &DMatrix<f64>,
    vertices: &[Point],
    tol: f64,
    opts: &SolverOptions,
) -> Result<DelayBoundResult> {
    max_delay_bound_capped(model, k, vertices, tol, DEFAULT_H_CAP, opts)
}

pub fn max_delay_bound_capped(
    model: &AgentModel,
    k: &DMatrix<f64>,
    vertices: &[Point],
    tol: f64,
    h_cap: f64,
    opts: &SolverOptions,
) -> Result<DelayBoundResult> {
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be > 0, got {tol}")));
    }
    if !(h_cap.is_finite() && h_cap > tol) {
        return Err(Error::InvalidArgument(format!("delay cap must exceed the tolerance, got {h_cap}")));
    }
    if vertices.is_empty() {
        return Err(Error::InvalidArgument("no vertices given".into()));
    }
    let a_d = model.delay_matrix(k)?;
    let reps = upper_representatives(vertices);
    let mut per_vertex = reps
        .par_iter()
        .map(|&v| bound_at_vertex(model, &a_d, v, tol, h_cap, opts))
        .collect::<Result<Vec<_>>>()?;

    let mut h_max = per_vertex.iter().map(|b| b.h_feasible).fold(f64::INFINITY, f64::min);
    // Feasibility in h need not be monotone; lower h_max until every vertex agrees.
    loop {
        let failing: Vec<usize> = per_vertex
            .par_iter()
            .enumerate()
            .filter_map(|(i, b)| match vertex_feasible(model, &a_d, b.vertex, h_max, opts) {
                Ok(true) => None,
                _ => Some(i),
            })
            .collect();
        if failing.is_empty() || h_max == 0.0 {
            break;
        }
        log::warn!("delay bound {h_max} not confirmed at {} vertices; lowering", failing.len());
        for i in failing {
            let v = per_vertex[i].vertex;
            per_vertex[i] = bound_at_vertex(model, &a_d, v, tol, h_max, opts)?;
            per_vertex[i].h_feasible = per_vertex[i].h_feasible.min(h_max);
        }
        let lowered = per_vertex.iter().map(|b| b.h_feasible).fold(f64::INFINITY, f64::min);
        h_max = if lowered < h_max { lowered } else { (h_max - tol).max(0.0) };
    }
    let unbounded = per_vertex.iter().all(|b| b.h_infeasible.is_none());
    Ok(DelayBoundResult { h_max, per_vertex, tolerance: tol, unbounded })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DsrEstimate {
    pub h: f64,
    pub gain: DMatrix<f64>,
    pub delta: f64,
    /// Verified boundary points of the trace, all with `Im >= 0`.
    pub boundary_vertices: Vec<Point>,
    /// Conjugate-closed hull of the boundary points, counterclockwise.
    pub hull: Vec<Point>,
    pub gamma_min: f64,
    /// The trace stopped at the cell cap.
    pub truncated: bool,
    pub probes: usize,
}

impl DsrEstimate {
    pub fn contains(&self, z: Point) -> bool {
        point_in_hull(&self.hull, z)
    }
}

/// Point-in-convex-polygon with the boundary counted as inside.
pub fn point_in_hull(hull: &[Point], z: Point) -> bool {
    geometry::point_in_convex_polygon(hull, z)
}

struct GridProbe<'a> {
    model: &'a AgentModel,
    a_d: DMatrix<f64>,
    h: f64,
    delta: f64,
    opts: &'a SolverOptions,
    cache: Mutex<HashMap<(usize, usize), bool>>,
}

impl GridProbe<'_> {
    fn point(&self, i: usize, j: usize) -> Point {
        Complex::new(i as f64 * self.delta, j as f64 * self.delta)
    }

    /// Feasibility of the given cells, solved in parallel where not cached.
    fn batch(&self, cells: &[(usize, usize)]) -> Result<Vec<bool>> {
        let missing: Vec<(usize, usize)> = {
            let cache = self.cache.lock().unwrap();
            cells.iter().copied().filter(|c| !cache.contains_key(c)).collect()
        };
        let solved = missing
            .par_iter()
            .map(|&(i, j)| Ok(((i, j), vertex_feasible(self.model, &self.a_d, self.point(i, j), self.h, self.opts)?)))
            .collect::<Result<Vec<_>>>()?;
        let mut cache = self.cache.lock().unwrap();
        cache.extend(solved);
        Ok(cells.iter().map(|c| cache[c]).collect())
    }

    fn feasible(&self, i: usize, j: usize) -> Result<bool> {
        Ok(self.batch(&[(i, j)])?[0])
    }

    /// Walks `start + step * k` for `k = 1, 2, ...` while feasible and returns
    /// the last feasible offset (0 when the first step fails). Stops at `limit`.
    fn march(&self, cell: impl Fn(usize) -> Option<(usize, usize)>, limit: usize) -> Result<(usize, bool)> {
        let width = rayon::current_num_threads().max(1);
        let mut last = 0;
        while last < limit {
            let cells: Vec<(usize, usize)> =
                (last + 1..=(last + width).min(limit)).map_while(&cell).collect();
            if cells.is_empty() {
                return Ok((last, false));
            }
            let ok = self.batch(&cells)?;
            match ok.iter().position(|f| !f) {
                Some(p) => return Ok((last + p, false)),
                None => last += cells.len(),
            }
        }
        Ok((last, true))
    }

    fn first_feasible(&self, cells: &[(usize, usize)]) -> Result<Option<(usize, usize)>> {
        for chunk in cells.chunks(rayon::current_num_threads().max(1)) {
            if let Some(p) = self.batch(chunk)?.iter().position(|&f| f) {
                return Ok(Some(chunk[p]));
            }
        }
        Ok(None)
    }

    fn probes(&self) -> usize {
        self.cache.lock().unwrap().len()
    }
}

/// Traces the boundary of the feasible coupling region on a grid of spacing
/// `delta` in the closed upper half-plane and returns its conjugate-closed
/// convex hull.
///
/// The trace first scans the real axis for the leftmost feasible cell, then
/// climbs column by column recording the highest feasible cell while the top
/// keeps rising, and finally descends row by row recording the rightmost
/// feasible cell. Only cells with a verified witness are recorded.
pub fn estimate_dsr(
    model: &AgentModel,
    k: &DMatrix<f64>,
    h: f64,
    delta: f64,
    opts: &SolverOptions,
) -> Result<DsrEstimate> {
    estimate_dsr_capped(model, k, h, delta, DEFAULT_MAX_CELLS, opts)
}

pub fn estimate_dsr_capped(
    model: &AgentModel,
    k: &DMatrix<f64>,
    h: f64,
    delta: f64,
    max_cells: usize,
    opts: &SolverOptions,
) -> Result<DsrEstimate> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::InvalidArgument(format!("grid step must be > 0, got {delta}")));
    }
    if !(h.is_finite() && h >= 0.0) {
        return Err(Error::InvalidArgument(format!("delay bound must be >= 0, got {h}")));
    }
    let grid = GridProbe {
        model,
        a_d: model.delay_matrix(k)?,
        h,
        delta,
        opts,
        cache: Mutex::new(HashMap::new()),
    };

    let axis: Vec<(usize, usize)> = (0..=GAMMA_SCAN_CELLS).map(|i| (i, 0)).collect();
    let i_min = grid.first_feasible(&axis)?.map(|(i, _)| i);
    let i_min = i_min.ok_or(Error::EmptyRegion { cells: GAMMA_SCAN_CELLS })?;
    let mut truncated = false;
    let mut recorded: Vec<(usize, usize)> = Vec::new();

    // Climb: highest feasible cell per column while the top does not drop.
    let mut i = i_min;
    let (mut top, capped) = grid.march(|s| Some((i, s)), max_cells)?;
    truncated |= capped;
    recorded.push((i, top));
    loop {
        if i + 1 - i_min > max_cells {
            truncated = true;
            break;
        }
        if !grid.feasible(i + 1, top)? {
            break;
        }
        i += 1;
        let (up, capped) = grid.march(|s| Some((i, top + s)), max_cells.saturating_sub(top))?;
        truncated |= capped;
        top += up;
        recorded.push((i, top));
    }

    // Descend: rightmost feasible cell per row, from the top row to the axis.
    let mut right = i;
    for j in (0..=top).rev() {
        if grid.feasible(right, j)? {
            let (dx, capped) = grid.march(|s| Some((right + s, j)), max_cells.saturating_sub(right - i_min))?;
            truncated |= capped;
            right += dx;
        } else {
            let row: Vec<(usize, usize)> = (0..right).rev().map(|c| (c, j)).collect();
            match grid.first_feasible(&row)? {
                Some((c, _)) => right = c,
                None => continue,
            }
        }
        recorded.push((right, j));
    }
    if truncated {
        log::warn!("boundary trace reached the cap of {max_cells} cells per axis");
    }

    recorded.sort_unstable();
    recorded.dedup();
    let boundary_vertices: Vec<Point> = recorded.iter().map(|&(i, j)| grid.point(i, j)).collect();
    let hull = geometry::conjugate_closed_hull(&boundary_vertices);

    // Independent re-check of the hull vertices.
    let hull_ok = upper_representatives(&hull)
        .par_iter()
        .map(|&v| vertex_feasible(model, &grid.a_d, v, h, opts))
        .collect::<Result<Vec<_>>>()?;
    if hull_ok.iter().any(|ok| !ok) {
        return Err(Error::Inconclusive("a traced hull vertex failed re-verification".into()));
    }

    Ok(DsrEstimate {
        h,
        gain: k.clone(),
        delta,
        boundary_vertices,
        hull,
        gamma_min: i_min as f64 * delta,
        truncated,
        probes: grid.probes(),
    })
}
