//! TOML run configuration.
//!
//! ```toml
//! [model]
//! a = [[0.0, 1.0], [-1.0, 0.0]]
//! b = [[0.0], [1.0]]
//!
//! [graph]
//! adjacency = [[0, 1, 0, 1], [0, 0, 1, 0], [1, 0, 0, 0], [0, 1, 1, 0]]
//! # or: n_agents = 4 and edges = [[from, to, weight], ...] with 1-based ids
//! pinning = [1, 1, 0, 0]
//!
//! [analysis]
//! gain = [[0.1, 0.6403]]
//! coupling = 1.34
//! tolerance = 1e-3
//! h = 0.419
//! delta = 0.05
//!
//! [design]
//! h = 0.6
//! epsilon = 0.1
//! method = "scaled"
//!
//! [simulation]
//! tau = 0.419
//! leader_x0 = [2.0, 2.0]
//! init_range = 2.0
//! seed = 1
//! ```

use std::path::Path;

use delaysync_core::graph::PinnedDigraph;
use delaysync_core::lmi::AgentModel;
use delaysync_core::simulate::Interpolation;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub model: ModelSection,
    pub graph: GraphSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub design: DesignSection,
    #[serde(default)]
    pub simulation: SimulationSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub a: Rows,
    pub b: Rows,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSection {
    pub adjacency: Option<Rows>,
    pub n_agents: Option<usize>,
    /// `[from, to, weight]` with 1-based node ids.
    pub edges: Option<Vec<(usize, usize, f64)>>,
    pub pinning: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub gain: Option<Rows>,
    pub coupling: f64,
    pub tolerance: f64,
    pub h: Option<f64>,
    pub h_sweep: Vec<f64>,
    pub h_cap: f64,
    pub delta: f64,
    pub max_cells: usize,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            gain: None,
            coupling: 1.0,
            tolerance: 1e-3,
            h: None,
            h_sweep: Vec::new(),
            h_cap: delaysync_core::analysis::DEFAULT_H_CAP,
            delta: 0.05,
            max_cells: delaysync_core::analysis::DEFAULT_MAX_CELLS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Common,
    Scaled,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DesignSection {
    pub h: Option<f64>,
    pub epsilon: f64,
    pub method: Method,
    pub delta: Option<f64>,
    pub epsilon_scan: Vec<f64>,
    /// Attach the coupling interval of the design's own region estimate.
    pub widen_coupling: bool,
}

impl Default for DesignSection {
    fn default() -> Self {
        Self { h: None, epsilon: 0.1, method: Method::Scaled, delta: None, epsilon_scan: Vec::new(), widen_coupling: false }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    pub tau: Option<f64>,
    pub tau_sweep: Vec<f64>,
    pub leader_x0: Option<Vec<f64>>,
    pub agent_x0: Option<Rows>,
    pub init_range: f64,
    pub seed: u64,
    pub t_final: f64,
    pub dt: f64,
    pub interpolation: Interpolation,
    /// Keep every k-th sample in the trajectory CSV.
    pub csv_stride: usize,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            tau: None,
            tau_sweep: Vec::new(),
            leader_x0: None,
            agent_x0: None,
            init_range: 2.0,
            seed: 0,
            t_final: 60.0,
            dt: 1e-3,
            interpolation: Interpolation::Hermite,
            csv_stride: 10,
        }
    }
}

pub fn matrix(name: &str, rows: &Rows) -> Result<DMatrix<f64>, CliError> {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    if r == 0 || c == 0 {
        return Err(CliError::Validation(format!("{name} is empty")));
    }
    if rows.iter().any(|row| row.len() != c) {
        return Err(CliError::Validation(format!("{name} has rows of unequal length")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(CliError::Validation(format!("{name} has non-finite entries")));
    }
    Ok(DMatrix::from_row_iterator(r, c, rows.iter().flatten().copied()))
}

pub fn rows_of(m: &DMatrix<f64>) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn positive(name: &str, v: f64) -> Result<f64, CliError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(CliError::Validation(format!("{name} must be a positive number, got {v}")))
    }
}

fn nonnegative(name: &str, v: f64) -> Result<f64, CliError> {
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(CliError::Validation(format!("{name} must be >= 0, got {v}")))
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))
    }

    pub fn model(&self) -> Result<AgentModel, CliError> {
        Ok(AgentModel::new(matrix("model.a", &self.model.a)?, matrix("model.b", &self.model.b)?)?)
    }

    pub fn graph(&self) -> Result<PinnedDigraph, CliError> {
        let g = &self.graph;
        match (&g.adjacency, &g.edges) {
            (Some(adj), None) => Ok(PinnedDigraph::new(matrix("graph.adjacency", adj)?, g.pinning.clone())?),
            (None, Some(edges)) => {
                let n = g
                    .n_agents
                    .ok_or_else(|| CliError::Validation("graph.n_agents is required with graph.edges".into()))?;
                let mut zero_based = Vec::with_capacity(edges.len());
                for &(from, to, w) in edges {
                    if from == 0 || to == 0 {
                        return Err(CliError::Validation("graph.edges use 1-based node ids".into()));
                    }
                    zero_based.push((from - 1, to - 1, w));
                }
                Ok(PinnedDigraph::from_edges(n, &zero_based, g.pinning.clone())?)
            }
            _ => Err(CliError::Validation("graph needs exactly one of adjacency or edges".into())),
        }
    }

    /// Effective gain `coupling * gain` from the analysis section.
    pub fn gain(&self) -> Result<DMatrix<f64>, CliError> {
        let rows = self
            .analysis
            .gain
            .as_ref()
            .ok_or_else(|| CliError::Validation("analysis.gain is required".into()))?;
        let c = positive("analysis.coupling", self.analysis.coupling)?;
        Ok(matrix("analysis.gain", rows)? * c)
    }

    pub fn tolerance(&self) -> Result<f64, CliError> {
        positive("analysis.tolerance", self.analysis.tolerance)
    }

    pub fn delta(&self) -> Result<f64, CliError> {
        positive("analysis.delta", self.analysis.delta)
    }

    pub fn analysis_h(&self) -> Result<f64, CliError> {
        let h = self.analysis.h.ok_or_else(|| CliError::Validation("analysis.h is required".into()))?;
        nonnegative("analysis.h", h)
    }

    pub fn design_h(&self) -> Result<f64, CliError> {
        let h = self.design.h.ok_or_else(|| CliError::Validation("design.h is required".into()))?;
        positive("design.h", h)
    }

    pub fn epsilon(&self) -> Result<f64, CliError> {
        positive("design.epsilon", self.design.epsilon)
    }

    pub fn validate_simulation(&self) -> Result<(), CliError> {
        let s = &self.simulation;
        positive("simulation.t_final", s.t_final)?;
        positive("simulation.dt", s.dt)?;
        positive("simulation.init_range", s.init_range)?;
        if s.csv_stride == 0 {
            return Err(CliError::Validation("simulation.csv_stride must be >= 1".into()));
        }
        for &t in s.tau.iter().chain(&s.tau_sweep) {
            nonnegative("simulation.tau", t)?;
        }
        Ok(())
    }

    pub fn leader_x0(&self, n: usize) -> Result<DVector<f64>, CliError> {
        match &self.simulation.leader_x0 {
            Some(v) if v.len() == n => Ok(DVector::from_vec(v.clone())),
            Some(v) => Err(CliError::Validation(format!("simulation.leader_x0 has {} entries, expected {n}", v.len()))),
            None => Ok(DVector::zeros(n)),
        }
    }
}
