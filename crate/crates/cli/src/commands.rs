//! The five subcommands. Each returns a one-line status and writes its files
//! through [`Run`]; the caller emits the manifest.

use std::path::PathBuf;

use delaysync_core::analysis::{self, DsrEstimate};
use delaysync_core::geometry::{boundary_distance, Point};
use delaysync_core::graph::{build_pinned_laplacian, check_assumption1, eigenvalue_hull, pinned_spectrum, PinnedSpectrum};
use delaysync_core::lmi::AgentModel;
use delaysync_core::oracle;
use delaysync_core::sdp::SolverOptions;
use delaysync_core::simulate::{simulate, SimulationConfig, Trajectory};
use delaysync_core::synthesis::{self, ControllerDesign, DesignOutcome};
use delaysync_core::Error as CoreError;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Config, Method};
use crate::error::CliError;
use crate::output::{fmt_complex, g17, Csv, DesignFile, OutDir};
use crate::svg::{self, Panel, PALETTE};

/// Final sync-error norm below which a run counts as converged.
pub const CONVERGED_NORM: f64 = 1e-2;

const SVG_POINTS: usize = 1500;

pub struct Run {
    pub config: Config,
    pub out: OutDir,
    pub opts: SolverOptions,
    pub design_path: Option<PathBuf>,
}

struct Network {
    model: AgentModel,
    spectrum: PinnedSpectrum,
}

impl Run {
    fn network(&self) -> Result<Network, CliError> {
        let model = self.config.model()?;
        let graph = self.config.graph()?;
        if !check_assumption1(&graph) {
            return Err(CoreError::Assumption1Violated.into());
        }
        let spectrum = pinned_spectrum(&build_pinned_laplacian(&graph))?;
        Ok(Network { model, spectrum })
    }

    /// Effective gain from `--design` when given, else from the analysis section.
    fn gain(&self) -> Result<DMatrix<f64>, CliError> {
        match &self.design_path {
            Some(p) => DesignFile::load(p)?.effective_gain(),
            None => self.config.gain(),
        }
    }

    fn report_spectrum(&self, s: &PinnedSpectrum) {
        let list: Vec<String> = s.eigenvalues().iter().map(|z| fmt_complex(*z)).collect();
        println!("eig(L+G) = [{}]", list.join(", "));
    }
}

pub fn delay_bound(run: &mut Run) -> Result<String, CliError> {
    let tol = run.config.tolerance()?;
    let net = run.network()?;
    let k = run.gain()?;
    run.report_spectrum(&net.spectrum);
    let vertices = eigenvalue_hull(&net.spectrum);
    let r = analysis::max_delay_bound_capped(&net.model, &k, &vertices, tol, run.config.analysis.h_cap, &run.opts)?;

    let mut csv = Csv::new(&["vertex_re", "vertex_im", "h_feasible", "h_infeasible"]);
    for b in &r.per_vertex {
        let hi = b.h_infeasible.unwrap_or(f64::INFINITY);
        csv.row([b.vertex.re, b.vertex.im, b.h_feasible, hi]);
        let hi_text = b.h_infeasible.map_or("none below cap".to_string(), |h| format!("{h:.5}"));
        println!("  vertex {:>18}: feasible up to {:.5}, infeasible at {hi_text}", fmt_complex(b.vertex), b.h_feasible);
    }
    run.out.write("delay_bound.csv", csv.as_str())?;

    if r.unbounded {
        println!("h_max >= {} (cap reached at every vertex)", g17(r.h_max));
        Ok(format!("unbounded below cap {}", r.h_max))
    } else {
        println!("h_max = {:.4} ± {}", r.h_max, r.tolerance);
        Ok(format!("h_max = {}", g17(r.h_max)))
    }
}

fn containment(spectrum: &PinnedSpectrum, est: &DsrEstimate) -> Vec<(Point, bool, f64)> {
    spectrum
        .eigenvalues()
        .iter()
        .map(|&z| (z, est.contains(z), boundary_distance(&est.hull, z)))
        .collect()
}

pub fn dsr(run: &mut Run) -> Result<String, CliError> {
    let delta = run.config.delta()?;
    let net = run.network()?;
    let k = run.gain()?;
    let hs = if run.config.analysis.h_sweep.is_empty() {
        vec![run.config.analysis_h()?]
    } else {
        run.config.analysis.h_sweep.clone()
    };
    run.report_spectrum(&net.spectrum);

    let mut hull_csv = Csv::new(&["h", "re", "im"]);
    let mut trace_csv = Csv::new(&["h", "re", "im"]);
    let mut report = Csv::new(&["h", "eig_re", "eig_im", "inside", "boundary_distance"]);
    let mut panel = Panel::new("Delay-dependent synchronizing region", "Re", "Im").equal_aspect();
    let mut all_inside = true;

    for (idx, &h) in hs.iter().enumerate() {
        let est = analysis::estimate_dsr_capped(&net.model, &k, h, delta, run.config.analysis.max_cells, &run.opts)?;
        println!(
            "h = {h}: {} traced points, hull of {} vertices, gamma_min = {:.4}, {} probes{}",
            est.boundary_vertices.len(),
            est.hull.len(),
            est.gamma_min,
            est.probes,
            if est.truncated { ", truncated at cell cap" } else { "" }
        );
        for z in &est.hull {
            hull_csv.row([h, z.re, z.im]);
        }
        for z in &est.boundary_vertices {
            trace_csv.row([h, z.re, z.im]);
        }
        for (z, inside, dist) in containment(&net.spectrum, &est) {
            all_inside &= inside;
            report.text_row(&[g17(h), g17(z.re), g17(z.im), inside.to_string(), g17(dist)]);
            println!("  {:>18}: {} (distance to boundary {dist:.4})", fmt_complex(z), if inside { "inside" } else { "outside" });
        }
        let color = PALETTE[idx % PALETTE.len()];
        panel.polygon(
            &est.hull.iter().map(|z| (z.re, z.im)).collect::<Vec<_>>(),
            color,
            Some(&format!("h = {h}")),
        );
        let traced: Vec<(f64, f64)> = est.boundary_vertices.iter().map(|z| (z.re, z.im)).collect();
        panel.markers(&traced, color, false, None);
    }
    let eig: Vec<(f64, f64)> = net.spectrum.eigenvalues().iter().map(|z| (z.re, z.im)).collect();
    panel.markers(&eig, "#000000", true, Some("eig(L+G)"));

    run.out.write("dsr_hull.csv", hull_csv.as_str())?;
    run.out.write("dsr_trace.csv", trace_csv.as_str())?;
    run.out.write("dsr_containment.csv", report.as_str())?;
    run.out.write("dsr.svg", &svg::document(&[panel], 720.0, 520.0))?;
    Ok(if all_inside {
        "all eigenvalues inside every hull".into()
    } else {
        "some eigenvalues outside a hull".into()
    })
}

fn design_once(run: &Run, net: &Network, method: Method, h: f64, epsilon: f64) -> Result<ControllerDesign, CliError> {
    let delta = run.config.design.delta.unwrap_or(run.config.analysis.delta);
    match method {
        Method::Scaled => Ok(synthesis::design_scaled(&net.model, &net.spectrum, h, epsilon, delta, &run.opts)?),
        Method::Common => {
            let vertices = eigenvalue_hull(&net.spectrum);
            match synthesis::design_common_lkf(&net.model, &vertices, h, epsilon, &run.opts)? {
                DesignOutcome::Designed(d) => {
                    let mut d = *d;
                    if run.config.design.widen_coupling {
                        synthesis::attach_coupling_range(&net.model, &mut d, &net.spectrum, delta, &run.opts)?;
                    }
                    Ok(d)
                }
                DesignOutcome::Infeasible => {
                    Err(CliError::Infeasible(format!("common design LMI has no feasible solution at h = {h}")))
                }
                DesignOutcome::Inconclusive(why) => Err(CliError::Inconclusive(why)),
            }
        }
    }
}

fn print_matrix(name: &str, m: &DMatrix<f64>) {
    let rows: Vec<String> = m
        .row_iter()
        .map(|r| r.iter().map(|v| format!("{v:.5}")).collect::<Vec<_>>().join(" "))
        .collect();
    println!("{name} = [{}]", rows.join("; "));
}

pub fn design(run: &mut Run) -> Result<String, CliError> {
    let h = run.config.design_h()?;
    let epsilon = run.config.epsilon()?;
    let method = run.config.design.method;
    let net = run.network()?;
    run.report_spectrum(&net.spectrum);

    if !run.config.design.epsilon_scan.is_empty() {
        let tol = run.config.tolerance()?;
        let mut table = Csv::new(&["epsilon", "designed", "h_max"]);
        let mut best: Option<(f64, f64)> = None;
        println!("epsilon scan:");
        for &eps in &run.config.design.epsilon_scan {
            match design_once(run, &net, method, h, eps) {
                Ok(d) => {
                    let vertices = eigenvalue_hull(&net.spectrum);
                    let b = analysis::max_delay_bound_capped(
                        &net.model,
                        &d.gain(),
                        &vertices,
                        tol,
                        run.config.analysis.h_cap,
                        &run.opts,
                    )?;
                    println!("  epsilon = {eps}: h_max = {:.4}", b.h_max);
                    table.text_row(&[g17(eps), "true".into(), g17(b.h_max)]);
                    if best.is_none_or(|(_, hb)| b.h_max > hb) {
                        best = Some((eps, b.h_max));
                    }
                }
                Err(e @ (CliError::Infeasible(_) | CliError::Inconclusive(_) | CliError::Core(_))) => {
                    println!("  epsilon = {eps}: no design ({e})");
                    table.text_row(&[g17(eps), "false".into(), "nan".into()]);
                }
                Err(e) => return Err(e),
            }
        }
        if let Some((eps, hb)) = best {
            println!("best epsilon = {eps} with h_max = {hb:.4}");
        }
        run.out.write("epsilon_scan.csv", table.as_str())?;
    }

    let d = design_once(run, &net, method, h, epsilon)?;
    print_matrix("K_base", &d.base_gain);
    println!("coupling c = {:.4}, admissible c in [{:.4}, {:.4}]", d.coupling, d.c_range.0, d.c_range.1);
    print_matrix("K", &d.gain());
    println!("robust check at h = {}: {:?}", h, d.check.certificate);
    let file = DesignFile::from_design(&d);
    run.out.write("design.json", &serde_json::to_string_pretty(&file)?)?;
    Ok(format!("designed ({:?}) at h = {h}", d.certificate.method))
}

fn random_initials(n_agents: usize, n: usize, range: f64, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_agents)
        .map(|_| DVector::from_fn(n, |_, _| rng.gen_range(-range..=range)))
        .collect()
}

fn trajectory_csv(tr: &Trajectory, stride: usize) -> Csv {
    let n = tr.leader_states.first().map_or(0, |x| x.len());
    let mut header = vec!["t".to_string()];
    header.extend((0..n).map(|c| format!("leader_x{}", c + 1)));
    for i in 0..tr.agent_states.len() {
        header.extend((0..n).map(|c| format!("agent{}_x{}", i + 1, c + 1)));
    }
    header.push("sync_error_norm".into());
    let mut csv = Csv::with_header(header);
    let last = tr.times.len().saturating_sub(1);
    for s in (0..tr.times.len()).filter(|&s| s % stride == 0 || s == last) {
        let mut row = vec![tr.times[s]];
        row.extend(tr.leader_states[s].iter());
        for agent in &tr.agent_states {
            row.extend(agent[s].iter());
        }
        row.push(tr.sync_error_norm[s]);
        csv.row(row);
    }
    csv
}

fn trajectory_panels(tr: &Trajectory, tau: f64, stride: usize) -> Vec<Panel> {
    let n = tr.leader_states.first().map_or(0, |x| x.len());
    let idx: Vec<usize> = (0..tr.times.len()).step_by(stride).collect();
    let series = |get: &dyn Fn(usize) -> f64| -> Vec<(f64, f64)> { idx.iter().map(|&s| (tr.times[s], get(s))).collect() };
    let mut panels = Vec::new();
    for c in 0..n {
        let mut p = Panel::new(&format!("State x{} (tau = {tau})", c + 1), "t", &format!("x{}", c + 1));
        for (i, agent) in tr.agent_states.iter().enumerate() {
            p.polyline(&series(&|s| agent[s][c]), PALETTE[(i + 1) % PALETTE.len()], Some(&format!("agent {}", i + 1)));
        }
        p.polyline(&series(&|s| tr.leader_states[s][c]), "#000000", Some("leader"));
        panels.push(p);
    }
    let mut p = Panel::new("Synchronization error", "t", "log10 ||x_i - x_0||");
    p.polyline(&series(&|s| tr.sync_error_norm[s].max(1e-300).log10()), PALETTE[0], None);
    panels.push(p);
    panels
}

pub fn simulate_cmd(run: &mut Run) -> Result<String, CliError> {
    run.config.validate_simulation()?;
    let model = run.config.model()?;
    let graph = run.config.graph()?;
    if !check_assumption1(&graph) {
        return Err(CoreError::Assumption1Violated.into());
    }
    let k = run.gain()?;
    let s = run.config.simulation.clone();
    let taus: Vec<f64> = if !s.tau_sweep.is_empty() {
        s.tau_sweep.clone()
    } else {
        vec![s.tau.ok_or_else(|| CliError::Validation("simulation.tau (or --tau) is required".into()))?]
    };
    let n = model.n();
    let leader_x0 = run.config.leader_x0(n)?;
    let agent_x0 = match &s.agent_x0 {
        Some(rows) => {
            if rows.len() != graph.n_agents() {
                return Err(CliError::Validation(format!(
                    "simulation.agent_x0 has {} rows for {} agents",
                    rows.len(),
                    graph.n_agents()
                )));
            }
            rows.iter().map(|r| DVector::from_vec(r.clone())).collect()
        }
        None => random_initials(graph.n_agents(), n, s.init_range, s.seed),
    };

    let mut summary = Csv::new(&["tau", "dt", "final_error", "converged", "diverged_at"]);
    let mut panels = Vec::new();
    let mut verdicts = Vec::new();
    for &tau in &taus {
        let cfg = SimulationConfig {
            model: model.clone(),
            graph: graph.clone(),
            gain: k.clone(),
            tau,
            leader_x0: leader_x0.clone(),
            agent_x0: agent_x0.clone(),
            t_final: s.t_final,
            dt: s.dt,
            interpolation: s.interpolation,
            history: Default::default(),
        };
        let tr = simulate(&cfg)?;
        let err = tr.final_error();
        let converged = tr.diverged.is_none() && err < CONVERGED_NORM;
        println!(
            "tau = {tau}: ||x_i - x_0||(t = {}) = {}, {}",
            s.t_final,
            g17(err),
            match tr.diverged {
                Some(t) => format!("diverged at t = {t:.3}"),
                None if converged => "converged".into(),
                None => "not converged".into(),
            }
        );
        summary.text_row(&[
            g17(tau),
            g17(cfg.effective_dt()),
            g17(err),
            converged.to_string(),
            tr.diverged.map_or("nan".into(), g17),
        ]);
        run.out.write(&format!("trajectory_tau_{tau}.csv"), trajectory_csv(&tr, s.csv_stride).as_str())?;
        let plot_stride = s.csv_stride.max(tr.times.len() / SVG_POINTS);
        panels.extend(trajectory_panels(&tr, tau, plot_stride));
        verdicts.push(format!("tau {tau}: {}", if converged { "converged" } else { "not converged" }));
    }
    run.out.write("simulation_summary.csv", summary.as_str())?;
    run.out.write("trajectories.svg", &svg::document(&panels, 820.0, 280.0))?;
    Ok(verdicts.join("; "))
}

pub fn audit(run: &mut Run) -> Result<String, CliError> {
    let tol = run.config.tolerance()?;
    let net = run.network()?;
    let k = run.gain()?;
    let a_d = net.model.delay_matrix(&k)?;
    run.report_spectrum(&net.spectrum);
    let mut csv = Csv::new(&["quantity", "value"]);

    if a_d.iter().all(|v| *v == 0.0) {
        println!("delay-independent: the delayed coupling term vanishes");
        csv.text_row(&["delay_independent".into(), "true".into()]);
        run.out.write("audit.csv", csv.as_str())?;
        return Ok("delay-independent".into());
    }

    let vertices = eigenvalue_hull(&net.spectrum);
    let bound = analysis::max_delay_bound_capped(&net.model, &k, &vertices, tol, run.config.analysis.h_cap, &run.opts)?;
    let margin = oracle::true_delay_margin(&net.model, &a_d, net.spectrum.eigenvalues(), tol)?;
    for m in &margin.per_sigma {
        let text = m.margin.map_or("none below cap".to_string(), |t| format!("{t:.5}"));
        println!("  sigma {:>18}: delay margin {text}", fmt_complex(m.sigma));
    }
    let gap = margin.margin - bound.h_max;
    println!("LKF bound      h_max = {:.4}{}", bound.h_max, if bound.unbounded { " (cap)" } else { "" });
    println!("spectral margin tau_m = {:.4}{}", margin.margin, if margin.infinite { " (cap)" } else { "" });
    println!("gap tau_m - h_max     = {gap:.4}");
    if gap < -tol - margin.tolerance {
        log::warn!("LKF bound exceeds the spectral margin; the certificate is not conservative");
    }
    csv.text_row(&["h_max".into(), g17(bound.h_max)]);
    csv.text_row(&["h_max_unbounded".into(), bound.unbounded.to_string()]);
    csv.text_row(&["tau_m".into(), g17(margin.margin)]);
    csv.text_row(&["tau_m_infinite".into(), margin.infinite.to_string()]);
    csv.text_row(&["gap".into(), g17(gap)]);
    run.out.write("audit.csv", csv.as_str())?;
    Ok(format!("h_max = {}, tau_m = {}, gap = {}", g17(bound.h_max), g17(margin.margin), g17(gap)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_initials_are_seeded_and_bounded() {
        let a = random_initials(4, 2, 2.0, 7);
        let b = random_initials(4, 2, 2.0, 7);
        assert_eq!(a, b);
        assert!(a.iter().flat_map(|x| x.iter()).all(|v| v.abs() <= 2.0));
        assert_ne!(a, random_initials(4, 2, 2.0, 8));
    }
}
