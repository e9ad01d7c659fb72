//! Method-of-steps integration of the delayed leader-follower network.
//!
//! The step is snapped so the delay is an integer number of steps. Classical
//! RK4 then needs the delayed state only at grid points and grid midpoints;
//! midpoints are filled by cubic Hermite interpolation from the stored states
//! and derivatives (or linearly, on request). Delayed arguments at or before
//! `t = 0` are read from the initial history exactly.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_pinned_laplacian, PinnedDigraph};
use crate::lmi::AgentModel;

/// State norm beyond which a run is declared divergent.
pub const DIVERGENCE_NORM: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    #[default]
    Hermite,
    Linear,
}

/// Initial function on `[-tau, 0]` for the stacked state `[x_0; x_1; ...; x_N]`.
#[derive(Clone, Default)]
pub enum History {
    /// Every state held at its value at `t = 0`.
    #[default]
    Constant,
    /// Arbitrary history; the value at `t = 0` must match the initial states.
    Function(Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>),
}

impl std::fmt::Debug for History {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            History::Constant => f.write_str("Constant"),
            History::Function(_) => f.write_str("Function(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub model: AgentModel,
    pub graph: PinnedDigraph,
    pub gain: DMatrix<f64>,
    pub tau: f64,
    pub leader_x0: DVector<f64>,
    pub agent_x0: Vec<DVector<f64>>,
    pub t_final: f64,
    pub dt: f64,
    pub interpolation: Interpolation,
    pub history: History,
}

impl SimulationConfig {
    fn validate(&self) -> Result<()> {
        let n = self.model.n();
        self.model.delay_matrix(&self.gain)?;
        if self.leader_x0.len() != n {
            return Err(Error::Dimension(format!("leader state has length {}, expected {n}", self.leader_x0.len())));
        }
        if self.agent_x0.len() != self.graph.n_agents() {
            return Err(Error::Dimension(format!(
                "{} agent initial states for {} agents",
                self.agent_x0.len(),
                self.graph.n_agents()
            )));
        }
        if let Some(bad) = self.agent_x0.iter().find(|x| x.len() != n) {
            return Err(Error::Dimension(format!("agent state has length {}, expected {n}", bad.len())));
        }
        if !(self.tau.is_finite() && self.tau >= 0.0) {
            return Err(Error::InvalidArgument(format!("delay must be >= 0, got {}", self.tau)));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidArgument(format!("step must be > 0, got {}", self.dt)));
        }
        if !(self.t_final.is_finite() && self.t_final > 0.0) {
            return Err(Error::InvalidArgument(format!("horizon must be > 0, got {}", self.t_final)));
        }
        Ok(())
    }

    /// Step actually used: the largest `tau / k` not exceeding `dt`.
    pub fn effective_dt(&self) -> f64 {
        if self.tau == 0.0 {
            return self.dt;
        }
        self.tau / delay_steps(self.tau, self.dt) as f64
    }

    fn stacked_x0(&self) -> DVector<f64> {
        let n = self.model.n();
        let mut x = DVector::zeros(n * (self.agent_x0.len() + 1));
        x.rows_mut(0, n).copy_from(&self.leader_x0);
        for (i, xi) in self.agent_x0.iter().enumerate() {
            x.rows_mut(n * (i + 1), n).copy_from(xi);
        }
        x
    }
}

fn delay_steps(tau: f64, dt: f64) -> usize {
    ((tau / dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub leader_states: Vec<DVector<f64>>,
    /// Indexed by agent, then time.
    pub agent_states: Vec<Vec<DVector<f64>>>,
    /// Stacked errors `x_i - x_0` per time.
    pub sync_errors: Vec<DVector<f64>>,
    pub sync_error_norm: Vec<f64>,
    /// Time at which the divergence threshold was crossed.
    pub diverged: Option<f64>,
}

impl Trajectory {
    pub fn final_error(&self) -> f64 {
        *self.sync_error_norm.last().unwrap_or(&f64::NAN)
    }

    fn from_stacked(n: usize, n_agents: usize, times: Vec<f64>, states: &[DVector<f64>], diverged: Option<f64>) -> Self {
        let leader_states: Vec<DVector<f64>> = states.iter().map(|x| x.rows(0, n).into_owned()).collect();
        let agent_states: Vec<Vec<DVector<f64>>> = (0..n_agents)
            .map(|i| states.iter().map(|x| x.rows(n * (i + 1), n).into_owned()).collect())
            .collect();
        let sync_errors: Vec<DVector<f64>> = states
            .iter()
            .map(|x| {
                let mut d = x.rows(n, n * n_agents).into_owned();
                for i in 0..n_agents {
                    let mut di = d.rows_mut(n * i, n);
                    di -= x.rows(0, n);
                }
                d
            })
            .collect();
        let sync_error_norm = sync_errors.iter().map(|d| d.norm()).collect();
        Self { times, leader_states, agent_states, sync_errors, sync_error_norm, diverged }
    }
}

/// Constant-delay system `x' = f(x(t), x(t - tau))` on a fixed grid.
struct DelayIntegrator<'a, F> {
    rhs: F,
    history: &'a dyn Fn(f64) -> DVector<f64>,
    dt: f64,
    /// Delay in steps; zero means no delay.
    lag: usize,
    interpolation: Interpolation,
}

impl<F: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64>> DelayIntegrator<'_, F> {
    fn run(&self, x0: DVector<f64>, steps: usize) -> (Vec<DVector<f64>>, Option<f64>) {
        let mut xs: Vec<DVector<f64>> = Vec::with_capacity(steps + 1);
        let mut fs: Vec<DVector<f64>> = Vec::with_capacity(steps + 1);
        xs.push(x0);
        let dt = self.dt;
        let lag = self.lag as isize;

        let at = |xs: &[DVector<f64>], j: isize| -> DVector<f64> {
            if j <= 0 {
                (self.history)(j as f64 * dt)
            } else {
                xs[j as usize].clone()
            }
        };

        for k in 0..steps {
            let x = &xs[k];
            if self.lag == 0 {
                let f = |y: &DVector<f64>| (self.rhs)(y, y);
                let k1 = f(x);
                let k2 = f(&(x + &k1 * (0.5 * dt)));
                let k3 = f(&(x + &k2 * (0.5 * dt)));
                let k4 = f(&(x + &k3 * dt));
                fs.push(k1.clone());
                xs.push(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0));
            } else {
                let j = k as isize - lag;
                let d0 = at(&xs, j);
                let d1 = at(&xs, j + 1);
                let k1 = (self.rhs)(x, &d0);
                fs.push(k1.clone());
                let dm = if j < 0 {
                    (self.history)((j as f64 + 0.5) * dt)
                } else {
                    let (jl, jr) = (j as usize, (j + 1) as usize);
                    let mid = (&xs[jl] + &xs[jr]) * 0.5;
                    match self.interpolation {
                        Interpolation::Linear => mid,
                        Interpolation::Hermite => mid + (&fs[jl] - &fs[jr]) * (dt / 8.0),
                    }
                };
                let k2 = (self.rhs)(&(x + &k1 * (0.5 * dt)), &dm);
                let k3 = (self.rhs)(&(x + &k2 * (0.5 * dt)), &dm);
                let k4 = (self.rhs)(&(x + &k3 * dt), &d1);
                xs.push(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0));
            }
            let last = xs.last().unwrap();
            if !last.iter().all(|v| v.is_finite()) || last.norm() > DIVERGENCE_NORM {
                return (xs, Some((k + 1) as f64 * dt));
            }
        }
        (xs, None)
    }
}

fn step_count(t_final: f64, dt: f64) -> usize {
    ((t_final / dt) * (1.0 - 1e-12)).ceil() as usize
}

fn history_fn(cfg: &SimulationConfig) -> Box<dyn Fn(f64) -> DVector<f64> + Send + Sync + '_> {
    let x0 = cfg.stacked_x0();
    match &cfg.history {
        History::Constant => Box::new(move |_| x0.clone()),
        History::Function(f) => {
            let f = f.clone();
            Box::new(move |t| f(t))
        }
    }
}

/// Integrates the stacked error dynamics
/// `d' = (I (x) A) d - ((L + G) (x) B K) d(t - tau)` together with the free leader.
pub fn simulate(cfg: &SimulationConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let n = cfg.model.n();
    let n_agents = cfg.graph.n_agents();
    let dt = cfg.effective_dt();
    let lag = if cfg.tau == 0.0 { 0 } else { delay_steps(cfg.tau, cfg.dt) };
    let steps = step_count(cfg.t_final, dt);

    let a = cfg.model.a();
    let a_block = DMatrix::<f64>::identity(n_agents, n_agents).kronecker(a);
    let coupling = build_pinned_laplacian(&cfg.graph).kronecker(&(cfg.model.b() * &cfg.gain));

    // Augmented state [x_0; d]: the leader is undelayed.
    let full_history = history_fn(cfg);
    let to_error = move |x: &DVector<f64>| -> DVector<f64> {
        let mut z = x.clone();
        for i in 0..n_agents {
            let lead = x.rows(0, n).into_owned();
            let mut di = z.rows_mut(n * (i + 1), n);
            di -= lead;
        }
        z
    };
    let history = |t: f64| to_error(&full_history(t));
    let rhs = |z: &DVector<f64>, zd: &DVector<f64>| -> DVector<f64> {
        let mut out = DVector::zeros(z.len());
        out.rows_mut(0, n).copy_from(&(a * z.rows(0, n)));
        let d = z.rows(n, n * n_agents);
        let dd = zd.rows(n, n * n_agents);
        out.rows_mut(n, n * n_agents).copy_from(&(&a_block * d - &coupling * dd));
        out
    };
    let integrator = DelayIntegrator { rhs, history: &history, dt, lag, interpolation: cfg.interpolation };
    let (zs, diverged) = integrator.run(to_error(&cfg.stacked_x0()), steps);

    let states: Vec<DVector<f64>> = zs
        .iter()
        .map(|z| {
            let mut x = z.clone();
            for i in 0..n_agents {
                let lead = z.rows(0, n).into_owned();
                let mut xi = x.rows_mut(n * (i + 1), n);
                xi += lead;
            }
            x
        })
        .collect();
    let times = (0..states.len()).map(|k| k as f64 * dt).collect();
    Ok(Trajectory::from_stacked(n, n_agents, times, &states, diverged))
}

/// Integrates every agent with its own delayed local error
/// `e_i = sum_j a_ij (x_j - x_i) + g_i (x_0 - x_i)` and control `u_i = K e_i(t - tau)`.
pub fn simulate_agents(cfg: &SimulationConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let n = cfg.model.n();
    let n_agents = cfg.graph.n_agents();
    let dt = cfg.effective_dt();
    let lag = if cfg.tau == 0.0 { 0 } else { delay_steps(cfg.tau, cfg.dt) };
    let steps = step_count(cfg.t_final, dt);
    let a = cfg.model.a();
    let bk = cfg.model.b() * &cfg.gain;
    let adj = cfg.graph.adjacency();
    let pin = cfg.graph.pinning();

    let rhs = |x: &DVector<f64>, xd: &DVector<f64>| -> DVector<f64> {
        let mut out = DVector::zeros(x.len());
        out.rows_mut(0, n).copy_from(&(a * x.rows(0, n)));
        for i in 0..n_agents {
            let xi_d = xd.rows(n * (i + 1), n);
            let mut e = (xd.rows(0, n) - xi_d) * pin[i];
            for j in 0..n_agents {
                if adj[(i, j)] != 0.0 {
                    e += (xd.rows(n * (j + 1), n) - xi_d) * adj[(i, j)];
                }
            }
            let xi = x.rows(n * (i + 1), n);
            out.rows_mut(n * (i + 1), n).copy_from(&(a * xi + &bk * e));
        }
        out
    };
    let history = history_fn(cfg);
    let integrator = DelayIntegrator { rhs, history: &*history, dt, lag, interpolation: cfg.interpolation };
    let (states, diverged) = integrator.run(cfg.stacked_x0(), steps);
    let times = (0..states.len()).map(|k| k as f64 * dt).collect();
    Ok(Trajectory::from_stacked(n, n_agents, times, &states, diverged))
}

/// Observed order from runs at `dt` and `dt/2` against a `dt/8` reference,
/// comparing the terminal synchronization error.
pub fn convergence_order_check(cfg: &SimulationConfig) -> Result<f64> {
    cfg.validate()?;
    let dt = cfg.effective_dt();
    let t_final = step_count(cfg.t_final, dt) as f64 * dt;
    let run = |h: f64| -> Result<DVector<f64>> {
        let c = SimulationConfig { dt: h, t_final, ..cfg.clone() };
        let tr = simulate(&c)?;
        if let Some(t) = tr.diverged {
            return Err(Error::Diverged { t });
        }
        let mut end = tr.sync_errors.last().unwrap().clone();
        end.extend(tr.leader_states.last().unwrap().iter().copied());
        Ok(end)
    };
    let reference = run(dt / 8.0)?;
    let e1 = (run(dt)? - &reference).norm();
    let e2 = (run(dt / 2.0)? - &reference).norm();
    if e2 == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok((e1 / e2).log2())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example_config(tau: f64) -> SimulationConfig {
        let e = DMatrix::from_row_slice(4, 4, &[0., 1., 0., 1., 0., 0., 1., 0., 1., 0., 0., 0., 0., 1., 1., 0.]);
        SimulationConfig {
            model: AgentModel::new(
                DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
                DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            )
            .unwrap(),
            graph: PinnedDigraph::new(e, vec![1., 1., 0., 0.]).unwrap(),
            gain: DMatrix::from_row_slice(1, 2, &[0.134, 1.34 * 0.6403]),
            tau,
            leader_x0: DVector::from_vec(vec![2.0, 2.0]),
            agent_x0: vec![
                DVector::from_vec(vec![-1.5, 0.3]),
                DVector::from_vec(vec![1.2, -1.9]),
                DVector::from_vec(vec![0.4, 1.7]),
                DVector::from_vec(vec![-0.8, -0.6]),
            ],
            t_final: 60.0,
            dt: 1e-2,
            interpolation: Interpolation::Hermite,
            history: History::Constant,
        }
    }

    #[test]
    fn initial_error_matches_offsets() {
        let cfg = example_config(0.3);
        let tr = simulate(&SimulationConfig { t_final: 0.1, ..cfg.clone() }).unwrap();
        for (i, xi) in cfg.agent_x0.iter().enumerate() {
            assert_eq!(tr.sync_errors[0].rows(2 * i, 2).into_owned(), xi - &cfg.leader_x0);
        }
    }

    #[test]
    fn delay_free_decays_at_slowest_mode_rate() {
        let cfg = example_config(0.0);
        let tr = simulate(&cfg).unwrap();
        assert!(tr.diverged.is_none());
        // Slowest mode of A - lambda B K over the pinned spectrum.
        let spectrum = crate::graph::pinned_spectrum(&build_pinned_laplacian(&cfg.graph)).unwrap();
        let bk = cfg.model.b() * &cfg.gain;
        let rate = spectrum
            .eigenvalues()
            .iter()
            .map(|l| {
                let m = crate::lmi::realify_matrix(&(cfg.model.a().map(|v| nalgebra::Complex::new(v, 0.0)) - bk.map(|v| l * v)));
                m.complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(rate < 0.0);
        let k30 = tr.times.iter().position(|&t| t >= 30.0).unwrap();
        let observed = (tr.final_error() / tr.sync_error_norm[k30]).ln() / (tr.times.last().unwrap() - tr.times[k30]);
        assert!((observed - rate).abs() < 0.1 * rate.abs(), "{observed} vs {rate}");
        assert!(tr.final_error() < 1e-3);
    }

    #[test]
    fn converges_at_bound_and_not_beyond_margin() {
        let ok = simulate(&example_config(0.419)).unwrap();
        assert!(ok.final_error() < 1e-2, "{}", ok.final_error());
        let bad = simulate(&example_config(0.47)).unwrap();
        assert!(bad.diverged.is_some() || bad.final_error() > bad.sync_error_norm[0], "{}", bad.final_error());
    }

    #[test]
    fn global_and_per_agent_forms_agree() {
        let cfg = SimulationConfig { t_final: 20.0, ..example_config(0.35) };
        let a = simulate(&cfg).unwrap();
        let b = simulate_agents(&cfg).unwrap();
        let worst = a.sync_errors.iter().zip(&b.sync_errors).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        assert!(worst < 1e-8, "{worst}");
    }

    #[test]
    fn linear_in_initial_data() {
        let cfg = SimulationConfig { t_final: 10.0, ..example_config(0.2) };
        let double = SimulationConfig {
            leader_x0: &cfg.leader_x0 * 2.0,
            agent_x0: cfg.agent_x0.iter().map(|x| x * 2.0).collect(),
            ..cfg.clone()
        };
        let a = simulate(&cfg).unwrap();
        let b = simulate(&double).unwrap();
        for (x, y) in a.sync_errors.iter().zip(&b.sync_errors) {
            assert!((x * 2.0 - y).norm() <= 1e-9 * (1.0 + y.norm()));
        }
    }

    #[test]
    fn integration_order() {
        let scalar = SimulationConfig {
            model: AgentModel::new(DMatrix::from_element(1, 1, -1.0), DMatrix::from_element(1, 1, 1.0)).unwrap(),
            graph: PinnedDigraph::new(DMatrix::zeros(1, 1), vec![1.0]).unwrap(),
            gain: DMatrix::zeros(1, 1),
            tau: 0.0,
            leader_x0: DVector::from_vec(vec![0.0]),
            agent_x0: vec![DVector::from_vec(vec![1.0])],
            t_final: 2.0,
            dt: 0.05,
            interpolation: Interpolation::Hermite,
            history: History::Constant,
        };
        let p = convergence_order_check(&scalar).unwrap();
        assert!(p >= 3.9, "{p}");
        let delayed = SimulationConfig { t_final: 5.0, dt: 0.02, ..example_config(0.2) };
        let p = convergence_order_check(&delayed).unwrap();
        assert!(p >= 3.0, "{p}");
        let linear = convergence_order_check(&SimulationConfig { interpolation: Interpolation::Linear, ..delayed }).unwrap();
        assert!(linear < 2.5 && linear > 1.5, "{linear}");
    }
}
