//! Experiment orchestration: time-domain runs with settling and oscillation
//! detection, robustness sweeps, eigenvalue studies, equilibrium
//! verification against the dispatch optimum, and CSV emission.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::controller::{self, ControllerConfig, ControllerKind, ControllerState};
use crate::dynamics::{ClosedLoop, Disturbance, DynamicsError, PhysicalState, TurbineModelKind};
use crate::network::{line_flows, solve_equilibrium, GridModel, PowerFlowError};
use crate::oracle::{self, ComparisonReport, DispatchProblem, DispatchSolution};
use crate::scenario::{LineTarget, Scenario, ScenarioError, Selector, Target};
use crate::stability::{
    self, ActiveSet, EigenReport, EquilibriumPoint, StabilityError,
};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("power flow failed: {0}")]
    PowerFlow(#[from] PowerFlowError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Stability(#[from] StabilityError),
    #[error("selector references unknown entity: {0}")]
    BadSelector(String),
    #[error("series too short for a {0} s oscillation window")]
    SeriesTooShort(f64),
    #[error(transparent)]
    Oracle(#[from] oracle::OracleError),
    #[error("output error: {0}")]
    Io(#[from] std::io::Error),
}

/// Outcome of one time-domain run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub times: Vec<f64>,
    pub series: Vec<(String, Vec<f64>)>,
    pub settled: bool,
    pub settling_time: Option<f64>,
    /// Oscillation report per recorded series.
    pub oscillation: Vec<(String, OscillationReport)>,
    pub final_phys: PhysicalState,
    pub final_ctrl: ControllerState,
    pub final_applied: Vec<f64>,
    pub final_r: Vec<f64>,
    pub max_abs_omega_end: f64,
    /// Most negative line multiplier seen across the trajectory.
    pub min_rho: f64,
    /// Worst load power-balance residual across accepted steps.
    pub max_load_residual: f64,
    /// Set when the run aborted; partial series are still returned.
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy)]
pub struct OscillationReport {
    pub oscillating: bool,
    /// Peak-to-peak amplitude ratio of the last window vs the previous one.
    pub decay_ratio: f64,
    /// Peak-to-peak amplitude in the last window.
    pub amplitude: f64,
}

/// Peak-to-peak comparison of the two trailing windows of a series.
/// Oscillating means the amplitude barely decays (ratio > 0.8) and remains
/// above ten settling tolerances.
pub fn detect_oscillation(
    series: &[f64],
    dt: f64,
    window: f64,
    settling_tol: f64,
) -> Result<OscillationReport, RunError> {
    let w = (window / dt).round() as usize;
    if w < 2 || series.len() < 2 * w {
        return Err(RunError::SeriesTooShort(window));
    }
    let p2p = |s: &[f64]| {
        let hi = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = s.iter().cloned().fold(f64::INFINITY, f64::min);
        hi - lo
    };
    let n = series.len();
    let last = p2p(&series[n - w..]);
    let prev = p2p(&series[n - 2 * w..n - w]);
    let ratio = if prev > 0.0 { last / prev } else { 0.0 };
    Ok(OscillationReport {
        oscillating: ratio > 0.8 && last > 10.0 * settling_tol,
        decay_ratio: ratio,
        amplitude: last,
    })
}

/// A recorded quantity: label plus an extractor over the full system state.
struct Probe {
    label: String,
    kind: ProbeKind,
}

enum ProbeKind {
    Omega(usize),
    Lambda(usize),
    Phi(usize),
    Flow(usize),
    Applied(usize),
    PMech(usize),
    PMechEst(usize),
    RhoPlus(usize),
    RhoMinus(usize),
}

fn resolve_probes(
    grid: &GridModel,
    config: &ControllerConfig,
    scenario: &Scenario,
) -> Result<Vec<Probe>, RunError> {
    // Selectors that have no backing state under this controller kind are
    // dropped rather than rejected, so one scenario file can serve several
    // controller variants.
    let has_multipliers = matches!(config.kind, ControllerKind::Uc | ControllerKind::Duc);
    let has_emulator = config.kind == ControllerKind::Duc;
    let mut probes = Vec::new();
    let bus_idx = |id: usize| {
        grid.bus_by_id(id)
            .ok_or_else(|| RunError::BadSelector(format!("bus {id}")))
    };
    let line_idx = |a: usize, b: usize| {
        grid.line_between(a, b)
            .ok_or_else(|| RunError::BadSelector(format!("line {a}-{b}")))
    };
    for sel in &scenario.records {
        match sel {
            Selector::Lambda(_) | Selector::Phi(_) | Selector::RhoPlus(..) | Selector::RhoMinus(..)
                if !has_multipliers =>
            {
                continue
            }
            Selector::PMechEst(_) if !has_emulator => continue,
            Selector::Omega(t) | Selector::Lambda(t) | Selector::Phi(t) => {
                let name = match sel {
                    Selector::Omega(_) => "omega",
                    Selector::Lambda(_) => "lambda",
                    _ => "phi",
                };
                let ids: Vec<usize> = match t {
                    Target::Bus(id) => vec![*id],
                    Target::All => grid.buses.iter().map(|b| b.id).collect(),
                };
                for id in ids {
                    let idx = bus_idx(id)?;
                    probes.push(Probe {
                        label: format!("{name}_{id}"),
                        kind: match sel {
                            Selector::Omega(_) => ProbeKind::Omega(idx),
                            Selector::Lambda(_) => ProbeKind::Lambda(idx),
                            _ => ProbeKind::Phi(idx),
                        },
                    });
                }
            }
            Selector::Flow(t) => {
                let lines: Vec<usize> = match t {
                    LineTarget::Line(a, b) => vec![line_idx(*a, *b)?],
                    LineTarget::All => (0..grid.n_lines()).collect(),
                };
                for e in lines {
                    let l = &grid.lines[e];
                    probes.push(Probe {
                        label: format!(
                            "flow_{}_{}",
                            grid.buses[l.from].id, grid.buses[l.to].id
                        ),
                        kind: ProbeKind::Flow(e),
                    });
                }
            }
            Selector::Applied(id) => probes.push(Probe {
                label: format!("p_{id}"),
                kind: ProbeKind::Applied(bus_idx(*id)?),
            }),
            Selector::PMech(id) => {
                let idx = bus_idx(*id)?;
                let slot = grid
                    .gen_slot(idx)
                    .ok_or_else(|| RunError::BadSelector(format!("bus {id} is not a generator")))?;
                probes.push(Probe {
                    label: format!("pmech_{id}"),
                    kind: ProbeKind::PMech(slot),
                });
            }
            Selector::PMechEst(id) => {
                let idx = bus_idx(*id)?;
                let slot = grid
                    .gen_slot(idx)
                    .ok_or_else(|| RunError::BadSelector(format!("bus {id} is not a generator")))?;
                probes.push(Probe {
                    label: format!("pmech_est_{id}"),
                    kind: ProbeKind::PMechEst(slot),
                });
            }
            Selector::RhoPlus(a, b) => probes.push(Probe {
                label: format!("rho+_{a}_{b}"),
                kind: ProbeKind::RhoPlus(line_idx(*a, *b)?),
            }),
            Selector::RhoMinus(a, b) => probes.push(Probe {
                label: format!("rho-_{a}_{b}"),
                kind: ProbeKind::RhoMinus(line_idx(*a, *b)?),
            }),
        }
    }
    Ok(probes)
}

fn sample(
    grid: &GridModel,
    probes: &[Probe],
    phys: &PhysicalState,
    ctrl: &ControllerState,
    applied: &[f64],
) -> Vec<f64> {
    let flows = line_flows(grid, &phys.theta);
    probes
        .iter()
        .map(|p| match p.kind {
            ProbeKind::Omega(i) => phys.omega[i],
            ProbeKind::Lambda(i) => ctrl.lambda[i],
            ProbeKind::Phi(i) => ctrl.phi[i],
            ProbeKind::Flow(e) => flows[e],
            ProbeKind::Applied(i) => applied[i],
            ProbeKind::PMech(s) => phys.p_mech[s],
            ProbeKind::PMechEst(s) => ctrl.pm_est[s],
            ProbeKind::RhoPlus(e) => ctrl.rho_plus[e],
            ProbeKind::RhoMinus(e) => ctrl.rho_minus[e],
        })
        .collect()
}

/// Integrate a scenario over its horizon.
///
/// The disturbance schedule splits the horizon into segments with constant
/// injections so steps never straddle a discontinuity. Settling is decided
/// on full-resolution frequencies, never on decimated series.
pub fn run_scenario(scenario: &Scenario) -> Result<RunResult, RunError> {
    let grid = scenario.load_grid()?;
    let config = scenario.build_config(&grid)?;
    let disturbance = scenario.build_disturbance(&grid)?;
    run_with(&grid, &config, scenario, &disturbance)
}

/// Run with pre-built grid/config (sweeps reuse these across points).
pub fn run_with(
    grid: &GridModel,
    config: &ControllerConfig,
    scenario: &Scenario,
    disturbance: &Disturbance,
) -> Result<RunResult, RunError> {
    let probes = resolve_probes(grid, config, scenario)?;
    let loop_ = ClosedLoop::new(grid, config, scenario.turbine);
    let eq = solve_equilibrium(grid, &grid.nominal_injections())?;
    let (phys0, ctrl0) = loop_.initial_state(&eq.theta);
    let mut x = loop_.pack(&phys0, &ctrl0);

    let h = scenario.step;
    let record_every = (scenario.decimation / h).round().max(1.0) as usize;
    let total_steps = (scenario.horizon / h).round() as usize;

    let mut times = Vec::with_capacity(total_steps / record_every + 1);
    let mut data: Vec<Vec<f64>> = vec![Vec::with_capacity(times.capacity()); probes.len()];
    let mut omega_max_history = Vec::with_capacity(total_steps + 1);
    let mut min_rho = 0.0_f64;
    let mut max_load_residual = 0.0_f64;
    let mut error: Option<String> = None;

    let record =
        |t: f64,
         x: &[f64],
         times: &mut Vec<f64>,
         data: &mut Vec<Vec<f64>>|
         -> Result<(PhysicalState, ControllerState, Vec<f64>, Vec<f64>), RunError> {
            let r = disturbance.at(t, grid.n_buses());
            let (mut phys, ctrl) = loop_.unpack(x);
            loop_.resolve_algebraic(&mut phys, &ctrl, &r)?;
            let applied = controller::applied_commands(grid, config, &phys.omega, &ctrl);
            let row = sample(grid, &probes, &phys, &ctrl, &applied);
            times.push(t);
            for (col, v) in data.iter_mut().zip(row) {
                col.push(v);
            }
            Ok((phys, ctrl, applied, r))
        };

    let (mut phys, mut ctrl, mut applied, mut r_now) = record(0.0, &x, &mut times, &mut data)?;
    omega_max_history.push(max_abs(&phys.omega));

    'outer: for k in 0..total_steps {
        let t = k as f64 * h;
        let r = disturbance.at(t, grid.n_buses());
        if let Err(e) = loop_.step(&mut x, &r, t, h) {
            error = Some(e.to_string());
            break 'outer;
        }
        let t_next = (k + 1) as f64 * h;
        let r_next = disturbance.at(t_next, grid.n_buses());
        let (mut p, c) = loop_.unpack(&x);
        loop_.resolve_algebraic(&mut p, &c, &r_next)?;
        let a = controller::applied_commands(grid, config, &p.omega, &c);
        omega_max_history.push(max_abs(&p.omega));
        let resid = crate::dynamics::load_balance_residual(grid, &p, &a, &r_next);
        max_load_residual = max_load_residual.max(max_abs(&resid));
        min_rho = min_rho
            .min(c.rho_plus.iter().cloned().fold(0.0, f64::min))
            .min(c.rho_minus.iter().cloned().fold(0.0, f64::min));
        if (k + 1) % record_every == 0 {
            let row = sample(grid, &probes, &p, &c, &a);
            times.push(t_next);
            for (col, v) in data.iter_mut().zip(row) {
                col.push(v);
            }
        }
        phys = p;
        ctrl = c;
        applied = a;
        r_now = r_next;
    }

    // Settling: last time the frequency band was violated, plus drift of the
    // recorded series over the final tenth of the horizon.
    let tol = scenario.settling_tol;
    let last_violation = omega_max_history.iter().rposition(|&m| m > tol);
    let settling_time = match last_violation {
        None => Some(0.0),
        Some(i) if i + 1 < omega_max_history.len() => Some((i + 1) as f64 * h),
        Some(_) => None,
    };
    let tail = times.len().saturating_sub(times.len() / 10).max(1) - 1;
    let drift_ok = data.iter().all(|col| {
        if col.is_empty() {
            return true;
        }
        let tail_slice = &col[tail.min(col.len() - 1)..];
        let hi = tail_slice.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = tail_slice.iter().cloned().fold(f64::INFINITY, f64::min);
        hi - lo <= tol
    });
    let settled =
        error.is_none() && settling_time.is_some() && *omega_max_history.last().unwrap() <= tol && drift_ok;

    let series: Vec<(String, Vec<f64>)> = probes
        .iter()
        .map(|p| p.label.clone())
        .zip(data)
        .collect();
    let mut oscillation = Vec::new();
    for (label, col) in &series {
        if let Ok(rep) = detect_oscillation(col, scenario.decimation, scenario.osc_window, tol) {
            oscillation.push((label.clone(), rep));
        }
    }

    Ok(RunResult {
        times,
        series,
        settled,
        settling_time,
        oscillation,
        final_phys: phys,
        final_ctrl: ctrl,
        final_applied: applied,
        final_r: r_now,
        max_abs_omega_end: *omega_max_history.last().unwrap(),
        min_rho,
        max_load_residual,
        error,
    })
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Step-response metrics of one recorded series.
#[derive(Debug, Clone, Copy)]
pub struct SeriesMetrics {
    /// Last time the series leaves the 2% band around its final value.
    pub settling_time: f64,
    /// Residual excursion: peak deviation from the final value once the
    /// initial disturbance transient has passed (half an oscillation window
    /// after the series' peak), relative to the total swing.
    pub overshoot: f64,
}

pub fn series_metrics(times: &[f64], series: &[f64], window: f64) -> SeriesMetrics {
    let s_end = *series.last().unwrap_or(&0.0);
    let s_start = *series.first().unwrap_or(&0.0);
    let swing = (s_end - s_start).abs().max(1e-12);
    let band = 0.02 * swing;
    let mut settling_time = 0.0;
    for (t, s) in times.iter().zip(series) {
        if (s - s_end).abs() > band {
            settling_time = *t;
        }
    }
    let t_peak = times
        .iter()
        .zip(series)
        .max_by(|a, b| (a.1 - s_end).abs().total_cmp(&(b.1 - s_end).abs()))
        .map(|(t, _)| *t)
        .unwrap_or(0.0);
    let cutoff = t_peak + window / 2.0;
    let residual = times
        .iter()
        .zip(series)
        .filter(|(t, _)| **t >= cutoff)
        .map(|(_, s)| (s - s_end).abs())
        .fold(0.0_f64, f64::max);
    SeriesMetrics {
        settling_time,
        overshoot: residual / swing,
    }
}

/// One row of a robustness sweep.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub factor: f64,
    pub settled: bool,
    pub settling_time: f64,
    pub overshoot: f64,
    pub oscillating: bool,
    pub error: Option<String>,
}

/// Rerun a decoupled-controller scenario with the emulator constants scaled
/// by each factor, reporting step metrics of the monitored lambda trace.
pub fn run_robustness_sweep(
    scenario: &Scenario,
    factors: &[f64],
) -> Result<Vec<SweepPoint>, RunError> {
    let grid = scenario.load_grid()?;
    let disturbance = scenario.build_disturbance(&grid)?;
    let monitor = scenario
        .monitor
        .ok_or_else(|| RunError::BadSelector("sweep needs a monitor bus".into()))?;
    let label = format!("lambda_{monitor}");
    let mut out = Vec::new();
    for &f in factors {
        let mut sc = scenario.clone();
        sc.controller.t_turbine_factor = f;
        sc.controller.t_governor_factor = f;
        let config = sc.build_config(&grid)?;
        match run_with(&grid, &config, &sc, &disturbance) {
            Ok(result) => {
                let col = result
                    .series
                    .iter()
                    .find(|(l, _)| l == &label)
                    .map(|(_, c)| c.clone())
                    .ok_or_else(|| {
                        RunError::BadSelector(format!("sweep needs `record lambda:{monitor}`"))
                    })?;
                let metrics = series_metrics(&result.times, &col, scenario.osc_window);
                let osc = result
                    .oscillation
                    .iter()
                    .find(|(l, _)| l == &label)
                    .map(|(_, r)| r.oscillating)
                    .unwrap_or(false);
                out.push(SweepPoint {
                    factor: f,
                    settled: result.settled,
                    settling_time: metrics.settling_time,
                    overshoot: metrics.overshoot,
                    oscillating: osc,
                    error: result.error,
                });
            }
            Err(e) => out.push(SweepPoint {
                factor: f,
                settled: false,
                settling_time: f64::NAN,
                overshoot: f64::NAN,
                oscillating: false,
                error: Some(e.to_string()),
            }),
        }
    }
    Ok(out)
}

/// One eigen-study variant outcome.
#[derive(Debug)]
pub struct EigenVariant {
    pub kind: ControllerKind,
    pub turbine: TurbineModelKind,
    pub report: Result<EigenReport, StabilityError>,
}

/// Linearize the closed loop about the pre-disturbance equilibrium for each
/// controller/turbine variant of the scenario.
pub fn run_eigen_study(
    scenario: &Scenario,
    variants: &[(ControllerKind, TurbineModelKind)],
) -> Result<Vec<EigenVariant>, RunError> {
    let grid = scenario.load_grid()?;
    let eq = solve_equilibrium(&grid, &grid.nominal_injections())?;
    let mut out = Vec::new();
    for &(kind, turbine) in variants {
        let mut sc = scenario.clone();
        sc.controller.kind = kind;
        sc.turbine = turbine;
        let config = sc.build_config(&grid)?;
        let loop_ = ClosedLoop::new(&grid, &config, turbine);
        let (phys, ctrl) = loop_.initial_state(&eq.theta);
        let point = EquilibriumPoint {
            phys,
            ctrl,
            r: vec![0.0; grid.n_buses()],
        };
        let active = ActiveSet::from_equilibrium(&grid, &config, &point);
        let report = stability::linearize(&grid, &config, turbine, &point, &active)
            .and_then(|m| stability::eigenvalues(&m));
        out.push(EigenVariant {
            kind,
            turbine,
            report,
        });
    }
    Ok(out)
}

/// Outcome of an oracle-verification run.
#[derive(Debug)]
pub struct VerifyOutcome {
    pub result: RunResult,
    pub solution: DispatchSolution,
    pub report: ComparisonReport,
}

/// Run a scenario to its horizon and compare the settled state with the
/// independently solved dispatch optimum.
pub fn verify_scenario(scenario: &Scenario, tolerance: f64) -> Result<VerifyOutcome, RunError> {
    let grid = scenario.load_grid()?;
    let config = scenario.build_config(&grid)?;
    let disturbance = scenario.build_disturbance(&grid)?;
    let result = run_with(&grid, &config, scenario, &disturbance)?;
    let load_side_all = grid
        .buses
        .iter()
        .enumerate()
        .all(|(i, b)| b.is_gen() || config.load_side[i]);
    let problem = DispatchProblem::new(&grid, result.final_r.clone(), load_side_all, config.area_control);
    let solution = oracle::solve_dispatch(&problem);
    let report = oracle::verify_equilibrium(
        &grid,
        &result.final_applied,
        &result.final_phys.theta,
        &result.final_phys.omega,
        result.settled,
        &solution,
        tolerance,
    )?;
    Ok(VerifyOutcome {
        result,
        solution,
        report,
    })
}

/// Write a run as CSV: `t,<series...>` header, shortest round-trip decimal
/// formatting, atomic replace. Aborted runs carry a trailing error marker.
pub fn write_run_csv(path: &Path, result: &RunResult) -> Result<(), RunError> {
    let mut text = String::from("t");
    for (label, _) in &result.series {
        write!(text, ",{label}").unwrap();
    }
    text.push('\n');
    for (i, t) in result.times.iter().enumerate() {
        write!(text, "{t}").unwrap();
        for (_, col) in &result.series {
            write!(text, ",{}", col[i]).unwrap();
        }
        text.push('\n');
    }
    if let Some(err) = &result.error {
        writeln!(text, "# error: {err}").unwrap();
    }
    atomic_write(path, &text)
}

/// Eigen report CSV: `re,im` rows plus a trailing summary comment line.
pub fn write_eigen_csv(path: &Path, report: &EigenReport) -> Result<(), RunError> {
    let mut text = String::from("re,im\n");
    for c in &report.eigenvalues {
        writeln!(text, "{},{}", c.re, c.im).unwrap();
    }
    writeln!(
        text,
        "# abscissa={} classification={} unstable={}",
        report.spectral_abscissa,
        report.classification.as_str(),
        report.n_unstable
    )
    .unwrap();
    atomic_write(path, &text)
}

fn atomic_write(path: &Path, text: &str) -> Result<(), RunError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
