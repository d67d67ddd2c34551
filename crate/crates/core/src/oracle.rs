//! Independent dispatch optimization: minimizes the quadratic deviation from
//! the pre-disturbance dispatch subject to power balance, sine line flows,
//! line limits, control limits, and scheduled area exchanges. Used to verify
//! that closed-loop simulation equilibria land on the constrained optimum.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::network::{line_flows, GridModel};

/// KKT residual below which a solution is reported optimal.
pub const KKT_TOL: f64 = 1e-8;

const NEWTON_TOL: f64 = 1e-11;
const MAX_OUTER: usize = 60;
const MAX_NEWTON: usize = 60;

/// One congestion-constrained dispatch instance.
#[derive(Debug, Clone)]
pub struct DispatchProblem<'a> {
    pub grid: &'a GridModel,
    /// Persistent disturbance per bus.
    pub r: Vec<f64>,
    /// Effective bounds on the total commanded injection.
    pub p_lo: Vec<f64>,
    pub p_hi: Vec<f64>,
    /// Enforce scheduled inter-area exchanges.
    pub area_control: bool,
}

impl<'a> DispatchProblem<'a> {
    /// Build from grid data. Without load-side control, load-bus injections
    /// are pinned at their nominal values.
    pub fn new(grid: &'a GridModel, r: Vec<f64>, load_side: bool, area_control: bool) -> Self {
        let mut p_lo = Vec::with_capacity(grid.n_buses());
        let mut p_hi = Vec::with_capacity(grid.n_buses());
        for bus in &grid.buses {
            if bus.is_gen() || load_side {
                p_lo.push(bus.p_min);
                p_hi.push(bus.p_max);
            } else {
                p_lo.push(bus.injection);
                p_hi.push(bus.injection);
            }
        }
        DispatchProblem {
            grid,
            r,
            p_lo,
            p_hi,
            area_control,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DispatchStatus {
    Optimal,
    /// No feasible point found; carries the most-violated constraint.
    Infeasible(String),
    NotConverged,
}

/// Indices of constraints binding at the reported optimum.
#[derive(Debug, Clone, Default)]
pub struct ActiveConstraints {
    pub p_lower: Vec<usize>,
    pub p_upper: Vec<usize>,
    pub flow_upper: Vec<usize>,
    pub flow_lower: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct DispatchSolution {
    /// Optimal total injections.
    pub p: Vec<f64>,
    /// Deviation from the nominal dispatch.
    pub p_dev: Vec<f64>,
    pub theta: Vec<f64>,
    pub flows: Vec<f64>,
    /// Power-balance multipliers, oriented to match the controller's lambda.
    pub lambda: Vec<f64>,
    pub rho_plus: Vec<f64>,
    pub rho_minus: Vec<f64>,
    pub pi: Vec<f64>,
    pub objective: f64,
    pub active: ActiveConstraints,
    pub status: DispatchStatus,
    pub kkt_residual: f64,
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("dispatch solve failed: {0}")]
    Solve(String),
    #[error("simulation has not settled; equilibrium comparison is meaningless")]
    NotSettled,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Bound {
    Free,
    Lower,
    Upper,
}

struct Iterate {
    p: Vec<f64>,
    theta: Vec<f64>,
    lambda: Vec<f64>,
    rho_plus: Vec<f64>,
    rho_minus: Vec<f64>,
    pi: Vec<f64>,
}

/// Solve the dispatch problem by an active-set Newton iteration on the KKT
/// conditions, warm-started from the pre-disturbance operating point.
pub fn solve_dispatch(problem: &DispatchProblem) -> DispatchSolution {
    let grid = problem.grid;
    let n = grid.n_buses();
    let m = grid.n_lines();
    let n_pi = if problem.area_control { grid.n_areas() } else { 0 };

    let mut bounds = vec![Bound::Free; n];
    // Equality-pinned injections stay permanently on their bound.
    for i in 0..n {
        if problem.p_hi[i] - problem.p_lo[i] <= 0.0 {
            bounds[i] = Bound::Lower;
        }
    }
    let mut act_plus = vec![false; m];
    let mut act_minus = vec![false; m];

    let warm = crate::network::solve_equilibrium(grid, &grid.nominal_injections())
        .map(|eq| eq.theta)
        .unwrap_or_else(|_| vec![0.0; n]);
    let mut it = Iterate {
        p: grid
            .buses
            .iter()
            .enumerate()
            .map(|(i, b)| b.injection.clamp(problem.p_lo[i], problem.p_hi[i]))
            .collect(),
        theta: warm,
        lambda: vec![0.0; n],
        rho_plus: vec![0.0; m],
        rho_minus: vec![0.0; m],
        pi: vec![0.0; n_pi],
    };

    let mut converged = false;
    for _outer in 0..MAX_OUTER {
        if !newton_solve(problem, &mut it, &bounds, &act_plus, &act_minus) {
            return report(problem, it, DispatchStatus::NotConverged, bounds, act_plus, act_minus);
        }
        let mut changed = false;

        // Release bound constraints whose implied multiplier has the wrong sign.
        for i in 0..n {
            if problem.p_hi[i] - problem.p_lo[i] <= 0.0 {
                continue;
            }
            let s = (it.p[i] - grid.buses[i].injection) / problem_alpha(grid, i) + it.lambda[i];
            match bounds[i] {
                Bound::Lower if s < -1e-12 => {
                    bounds[i] = Bound::Free;
                    changed = true;
                }
                Bound::Upper if s > 1e-12 => {
                    bounds[i] = Bound::Free;
                    changed = true;
                }
                _ => {}
            }
        }
        for e in 0..m {
            if act_plus[e] && it.rho_plus[e] < -1e-12 {
                act_plus[e] = false;
                it.rho_plus[e] = 0.0;
                changed = true;
            }
            if act_minus[e] && it.rho_minus[e] < -1e-12 {
                act_minus[e] = false;
                it.rho_minus[e] = 0.0;
                changed = true;
            }
        }
        if changed {
            continue;
        }

        // Activate the worst violated inequality, if any.
        let flows = line_flows(grid, &it.theta);
        let mut worst: Option<(f64, usize, bool)> = None;
        for (e, line) in grid.lines.iter().enumerate() {
            let over = flows[e] - line.p_max;
            let under = line.p_min - flows[e];
            if !act_plus[e] && over > 1e-10 && worst.map_or(true, |w| over > w.0) {
                worst = Some((over, e, true));
            }
            if !act_minus[e] && under > 1e-10 && worst.map_or(true, |w| under > w.0) {
                worst = Some((under, e, false));
            }
        }
        let mut worst_bound: Option<(f64, usize, Bound)> = None;
        for i in 0..n {
            if bounds[i] != Bound::Free {
                continue;
            }
            let below = problem.p_lo[i] - it.p[i];
            let above = it.p[i] - problem.p_hi[i];
            if below > 1e-10 && worst_bound.map_or(true, |w| below > w.0) {
                worst_bound = Some((below, i, Bound::Lower));
            }
            if above > 1e-10 && worst_bound.map_or(true, |w| above > w.0) {
                worst_bound = Some((above, i, Bound::Upper));
            }
        }
        match (worst, worst_bound) {
            (Some((v, e, plus)), Some((vb, _, _))) if v >= vb => {
                if plus {
                    act_plus[e] = true;
                } else {
                    act_minus[e] = true;
                }
            }
            (_, Some((_, i, side))) => {
                bounds[i] = side;
                it.p[i] = match side {
                    Bound::Lower => problem.p_lo[i],
                    Bound::Upper => problem.p_hi[i],
                    Bound::Free => unreachable!(),
                };
            }
            (Some((_, e, plus)), None) => {
                if plus {
                    act_plus[e] = true;
                } else {
                    act_minus[e] = true;
                }
            }
            (None, None) => {
                converged = true;
                break;
            }
        }
    }

    let status = if converged {
        DispatchStatus::Optimal
    } else {
        DispatchStatus::NotConverged
    };
    report(problem, it, status, bounds, act_plus, act_minus)
}

fn problem_alpha(grid: &GridModel, i: usize) -> f64 {
    grid.buses[i].alpha
}

/// Newton iteration on the KKT equalities for a fixed active set.
fn newton_solve(
    problem: &DispatchProblem,
    it: &mut Iterate,
    bounds: &[Bound],
    act_plus: &[bool],
    act_minus: &[bool],
) -> bool {
    let grid = problem.grid;
    let n = grid.n_buses();
    let n_pi = it.pi.len();
    let reference = grid.reference;

    let theta_cols: Vec<usize> = (0..n).filter(|&i| i != reference).collect();
    let act_p: Vec<usize> = (0..grid.n_lines()).filter(|&e| act_plus[e]).collect();
    let act_m: Vec<usize> = (0..grid.n_lines()).filter(|&e| act_minus[e]).collect();
    let dim = n + theta_cols.len() + n + act_p.len() + act_m.len() + n_pi;

    let pack = |it: &Iterate| -> DVector<f64> {
        let mut x = DVector::zeros(dim);
        let mut k = 0;
        for i in 0..n {
            x[k] = it.p[i];
            k += 1;
        }
        for &i in &theta_cols {
            x[k] = it.theta[i];
            k += 1;
        }
        for i in 0..n {
            x[k] = it.lambda[i];
            k += 1;
        }
        for &e in &act_p {
            x[k] = it.rho_plus[e];
            k += 1;
        }
        for &e in &act_m {
            x[k] = it.rho_minus[e];
            k += 1;
        }
        for k2 in 0..n_pi {
            x[k] = it.pi[k2];
            k += 1;
        }
        x
    };
    let unpack = |x: &DVector<f64>, it: &mut Iterate| {
        let mut k = 0;
        for i in 0..n {
            it.p[i] = x[k];
            k += 1;
        }
        it.theta[reference] = 0.0;
        for &i in &theta_cols {
            it.theta[i] = x[k];
            k += 1;
        }
        for i in 0..n {
            it.lambda[i] = x[k];
            k += 1;
        }
        for e in 0..grid.n_lines() {
            it.rho_plus[e] = 0.0;
            it.rho_minus[e] = 0.0;
        }
        for &e in &act_p {
            it.rho_plus[e] = x[k];
            k += 1;
        }
        for &e in &act_m {
            it.rho_minus[e] = x[k];
            k += 1;
        }
        for k2 in 0..n_pi {
            it.pi[k2] = x[k];
            k += 1;
        }
    };

    let residual = |it: &Iterate| -> DVector<f64> {
        kkt_equations(problem, it, bounds, &act_p, &act_m, &theta_cols)
    };

    let mut x = pack(it);
    unpack(&x, it);
    let mut f = residual(it);
    for _ in 0..MAX_NEWTON {
        let fnorm = f.amax();
        if fnorm <= NEWTON_TOL {
            return true;
        }
        let jac = kkt_jacobian(problem, it, bounds, &act_p, &act_m, &theta_cols);
        let step = match jac.lu().solve(&f) {
            Some(s) => s,
            None => return false,
        };
        // Backtracking on the residual norm.
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let xt = &x - t * &step;
            unpack(&xt, it);
            let ft = residual(it);
            if ft.amax() < fnorm * (1.0 - 1e-4 * t) || ft.amax() <= NEWTON_TOL {
                x = xt;
                f = ft;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            unpack(&x, it);
            return false;
        }
    }
    f.amax() <= NEWTON_TOL
}

/// KKT equalities for the current active set, in residual form.
fn kkt_equations(
    problem: &DispatchProblem,
    it: &Iterate,
    bounds: &[Bound],
    act_p: &[usize],
    act_m: &[usize],
    theta_cols: &[usize],
) -> DVector<f64> {
    let grid = problem.grid;
    let n = grid.n_buses();
    let flows = line_flows(grid, &it.theta);
    let sums = grid.flow_sums(&flows);
    let c0 = flow_coefficients(problem, it);
    let dim = n + theta_cols.len() + n + act_p.len() + act_m.len() + it.pi.len();
    let mut f = DVector::zeros(dim);
    let mut k = 0;
    for i in 0..n {
        f[k] = match bounds[i] {
            Bound::Free => {
                (it.p[i] - grid.buses[i].injection) / problem_alpha(grid, i) + it.lambda[i]
            }
            Bound::Lower => it.p[i] - problem.p_lo[i],
            Bound::Upper => it.p[i] - problem.p_hi[i],
        };
        k += 1;
    }
    // Stationarity in the angles: weighted divergence of the flow coefficients.
    let w: Vec<f64> = grid
        .lines
        .iter()
        .map(|l| l.susceptance * (it.theta[l.from] - it.theta[l.to]).cos())
        .collect();
    for &i in theta_cols {
        let mut acc = 0.0;
        for &(e, sign) in grid.incident(i) {
            acc += sign * w[e] * c0[e];
        }
        f[k] = acc;
        k += 1;
    }
    for i in 0..n {
        f[k] = problem.r[i] + it.p[i] - sums[i];
        k += 1;
    }
    for &e in act_p {
        f[k] = flows[e] - grid.lines[e].p_max;
        k += 1;
    }
    for &e in act_m {
        f[k] = grid.lines[e].p_min - flows[e];
        k += 1;
    }
    if problem.area_control {
        for (a, area) in grid.areas.iter().enumerate() {
            let export: f64 = area.ties.iter().map(|&(e, s)| s * flows[e]).sum();
            f[k] = export - area.schedule;
            let _ = a;
            k += 1;
        }
    }
    f
}

/// Per-line coefficient multiplying `dP/dtheta` in the angle stationarity:
/// `-(lambda_from - lambda_to) + rho+ - rho- + oriented pi`.
fn flow_coefficients(problem: &DispatchProblem, it: &Iterate) -> Vec<f64> {
    let grid = problem.grid;
    let mut c: Vec<f64> = grid
        .lines
        .iter()
        .enumerate()
        .map(|(e, l)| {
            -(it.lambda[l.from] - it.lambda[l.to]) + it.rho_plus[e] - it.rho_minus[e]
        })
        .collect();
    if problem.area_control {
        for (k, area) in grid.areas.iter().enumerate() {
            for &(e, sign) in &area.ties {
                c[e] += sign * it.pi[k];
            }
        }
    }
    c
}

fn kkt_jacobian(
    problem: &DispatchProblem,
    it: &Iterate,
    bounds: &[Bound],
    act_p: &[usize],
    act_m: &[usize],
    theta_cols: &[usize],
) -> DMatrix<f64> {
    let grid = problem.grid;
    let n = grid.n_buses();
    let n_theta = theta_cols.len();
    let n_pi = it.pi.len();
    let dim = n + n_theta + n + act_p.len() + act_m.len() + n_pi;
    let mut j = DMatrix::zeros(dim, dim);

    let mut theta_slot = vec![usize::MAX; n];
    for (k, &i) in theta_cols.iter().enumerate() {
        theta_slot[i] = k;
    }
    let col_p = |i: usize| i;
    let col_t = |i: usize| n + theta_slot[i];
    let col_l = |i: usize| n + n_theta + i;
    let col_rp = |idx: usize| n + n_theta + n + idx;
    let col_rm = |idx: usize| n + n_theta + n + act_p.len() + idx;
    let col_pi = |k: usize| n + n_theta + n + act_p.len() + act_m.len() + k;

    let w: Vec<f64> = grid
        .lines
        .iter()
        .map(|l| l.susceptance * (it.theta[l.from] - it.theta[l.to]).cos())
        .collect();
    let dw: Vec<f64> = grid
        .lines
        .iter()
        .map(|l| -l.susceptance * (it.theta[l.from] - it.theta[l.to]).sin())
        .collect();
    let c0 = flow_coefficients(problem, it);

    let mut row = 0;
    for i in 0..n {
        match bounds[i] {
            Bound::Free => {
                j[(row, col_p(i))] = 1.0 / problem_alpha(grid, i);
                j[(row, col_l(i))] = 1.0;
            }
            _ => j[(row, col_p(i))] = 1.0,
        }
        row += 1;
    }
    // Angle stationarity rows.
    for &i in theta_cols {
        for &(e, sign) in grid.incident(i) {
            let l = &grid.lines[e];
            // d/dtheta of w_e * c0_e summed with orientation.
            let dd = sign * dw[e] * c0[e];
            if theta_slot[l.from] != usize::MAX {
                j[(row, col_t(l.from))] += dd;
            }
            if theta_slot[l.to] != usize::MAX {
                j[(row, col_t(l.to))] -= dd;
            }
            // d/dlambda: c0 depends on lambda differences.
            j[(row, col_l(l.from))] += sign * w[e] * (-1.0);
            j[(row, col_l(l.to))] += sign * w[e] * 1.0;
            if let Some(idx) = act_p.iter().position(|&a| a == e) {
                j[(row, col_rp(idx))] += sign * w[e];
            }
            if let Some(idx) = act_m.iter().position(|&a| a == e) {
                j[(row, col_rm(idx))] -= sign * w[e];
            }
            if problem.area_control {
                for (k, area) in grid.areas.iter().enumerate() {
                    for &(ae, asign) in &area.ties {
                        if ae == e {
                            j[(row, col_pi(k))] += sign * w[e] * asign;
                        }
                    }
                }
            }
        }
        row += 1;
    }
    // Power-balance rows.
    for i in 0..n {
        j[(row, col_p(i))] = 1.0;
        for &(e, sign) in grid.incident(i) {
            let l = &grid.lines[e];
            if theta_slot[l.from] != usize::MAX {
                j[(row, col_t(l.from))] -= sign * w[e];
            }
            if theta_slot[l.to] != usize::MAX {
                j[(row, col_t(l.to))] += sign * w[e];
            }
        }
        row += 1;
    }
    // Active line-limit rows.
    for &e in act_p {
        let l = &grid.lines[e];
        if theta_slot[l.from] != usize::MAX {
            j[(row, col_t(l.from))] = w[e];
        }
        if theta_slot[l.to] != usize::MAX {
            j[(row, col_t(l.to))] = -w[e];
        }
        row += 1;
    }
    for &e in act_m {
        let l = &grid.lines[e];
        if theta_slot[l.from] != usize::MAX {
            j[(row, col_t(l.from))] = -w[e];
        }
        if theta_slot[l.to] != usize::MAX {
            j[(row, col_t(l.to))] = w[e];
        }
        row += 1;
    }
    if problem.area_control {
        for area in &grid.areas {
            for &(e, sign) in &area.ties {
                let l = &grid.lines[e];
                if theta_slot[l.from] != usize::MAX {
                    j[(row, col_t(l.from))] += sign * w[e];
                }
                if theta_slot[l.to] != usize::MAX {
                    j[(row, col_t(l.to))] -= sign * w[e];
                }
            }
            row += 1;
        }
    }
    debug_assert_eq!(row, dim);
    j
}

/// Max KKT residual of the original inequality-constrained problem.
pub fn kkt_residual(problem: &DispatchProblem, sol: &DispatchSolution) -> f64 {
    let grid = problem.grid;
    let mut worst = 0.0_f64;
    // Projected stationarity in p.
    for i in 0..grid.n_buses() {
        let s = (sol.p[i] - grid.buses[i].injection) / problem_alpha(grid, i) + sol.lambda[i];
        let res = if problem.p_hi[i] - problem.p_lo[i] <= 0.0 {
            0.0
        } else if (sol.p[i] - problem.p_lo[i]).abs() < 1e-9 {
            (-s).max(0.0)
        } else if (sol.p[i] - problem.p_hi[i]).abs() < 1e-9 {
            s.max(0.0)
        } else {
            s.abs()
        };
        worst = worst.max(res);
    }
    // Angle stationarity.
    let it = Iterate {
        p: sol.p.clone(),
        theta: sol.theta.clone(),
        lambda: sol.lambda.clone(),
        rho_plus: sol.rho_plus.clone(),
        rho_minus: sol.rho_minus.clone(),
        pi: sol.pi.clone(),
    };
    let c0 = flow_coefficients(problem, &it);
    let w: Vec<f64> = grid
        .lines
        .iter()
        .map(|l| l.susceptance * (sol.theta[l.from] - sol.theta[l.to]).cos())
        .collect();
    for i in 0..grid.n_buses() {
        if i == grid.reference {
            continue;
        }
        let mut acc = 0.0;
        for &(e, sign) in grid.incident(i) {
            acc += sign * w[e] * c0[e];
        }
        worst = worst.max(acc.abs());
    }
    // Primal feasibility, dual feasibility, complementarity.
    let sums = grid.flow_sums(&sol.flows);
    for i in 0..grid.n_buses() {
        worst = worst.max((problem.r[i] + sol.p[i] - sums[i]).abs());
        worst = worst.max(problem.p_lo[i] - sol.p[i]);
        worst = worst.max(sol.p[i] - problem.p_hi[i]);
    }
    for (e, line) in grid.lines.iter().enumerate() {
        worst = worst.max(sol.flows[e] - line.p_max);
        worst = worst.max(line.p_min - sol.flows[e]);
        worst = worst.max(-sol.rho_plus[e]);
        worst = worst.max(-sol.rho_minus[e]);
        worst = worst.max((sol.rho_plus[e] * (line.p_max - sol.flows[e])).abs());
        worst = worst.max((sol.rho_minus[e] * (sol.flows[e] - line.p_min)).abs());
    }
    if problem.area_control {
        for area in &grid.areas {
            let export: f64 = area.ties.iter().map(|&(e, s)| s * sol.flows[e]).sum();
            worst = worst.max((export - area.schedule).abs());
        }
    }
    worst
}

fn report(
    problem: &DispatchProblem,
    it: Iterate,
    status: DispatchStatus,
    bounds: Vec<Bound>,
    act_plus: Vec<bool>,
    act_minus: Vec<bool>,
) -> DispatchSolution {
    let grid = problem.grid;
    let flows = line_flows(grid, &it.theta);
    let p_dev: Vec<f64> = it
        .p
        .iter()
        .zip(&grid.buses)
        .map(|(p, b)| p - b.injection)
        .collect();
    let objective: f64 = p_dev
        .iter()
        .zip(&grid.buses)
        .map(|(d, b)| d * d / (2.0 * b.alpha))
        .sum();
    let active = ActiveConstraints {
        p_lower: bounds
            .iter()
            .enumerate()
            .filter(|(i, b)| {
                **b == Bound::Lower && problem.p_hi[*i] - problem.p_lo[*i] > 0.0
            })
            .map(|(i, _)| i)
            .collect(),
        p_upper: bounds
            .iter()
            .enumerate()
            .filter(|(_, b)| **b == Bound::Upper)
            .map(|(i, _)| i)
            .collect(),
        flow_upper: act_plus
            .iter()
            .enumerate()
            .filter(|(_, a)| **a)
            .map(|(e, _)| e)
            .collect(),
        flow_lower: act_minus
            .iter()
            .enumerate()
            .filter(|(_, a)| **a)
            .map(|(e, _)| e)
            .collect(),
    };
    let mut sol = DispatchSolution {
        p: it.p,
        p_dev,
        theta: it.theta,
        flows,
        lambda: it.lambda,
        rho_plus: it.rho_plus,
        rho_minus: it.rho_minus,
        pi: it.pi,
        objective,
        active,
        status,
        kkt_residual: f64::NAN,
    };
    sol.kkt_residual = kkt_residual(problem, &sol);
    if sol.status == DispatchStatus::Optimal && sol.kkt_residual > KKT_TOL {
        sol.status = DispatchStatus::NotConverged;
    }
    if sol.status == DispatchStatus::NotConverged {
        // Distinguish plain non-convergence from infeasibility.
        let sums = grid.flow_sums(&sol.flows);
        let (worst_bus, worst) = problem
            .r
            .iter()
            .enumerate()
            .map(|(i, r)| (i, (r + sol.p[i] - sums[i]).abs()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap_or((0, 0.0));
        if worst > 1e-4 {
            sol.status = DispatchStatus::Infeasible(format!(
                "power balance at bus {} violated by {:.3e} pu",
                grid.buses[worst_bus].id, worst
            ));
        }
    }
    sol
}

/// Comparison of a settled closed-loop state against the dispatch optimum.
#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub max_dp: f64,
    pub max_dflow: f64,
    pub max_omega: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Worst line-limit violation in the simulated flows (diagnostic for
    /// baselines that ignore congestion).
    pub sim_flow_violation: f64,
}

/// Compare the simulated equilibrium (applied injections, flows at the final
/// angles, final frequency deviations) with the dispatch solution.
pub fn verify_equilibrium(
    grid: &GridModel,
    applied: &[f64],
    theta: &[f64],
    omega: &[f64],
    settled: bool,
    sol: &DispatchSolution,
    tolerance: f64,
) -> Result<ComparisonReport, OracleError> {
    if !settled {
        return Err(OracleError::NotSettled);
    }
    let sim_flows = line_flows(grid, theta);
    let max_dp = applied
        .iter()
        .zip(&sol.p)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0_f64, f64::max);
    let max_dflow = sim_flows
        .iter()
        .zip(&sol.flows)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0_f64, f64::max);
    let max_omega = omega.iter().fold(0.0_f64, |acc, w| acc.max(w.abs()));
    let sim_flow_violation = grid
        .lines
        .iter()
        .enumerate()
        .map(|(e, l)| (sim_flows[e] - l.p_max).max(l.p_min - sim_flows[e]))
        .fold(f64::NEG_INFINITY, f64::max);
    let pass = max_dp <= tolerance && max_dflow <= tolerance && max_omega <= tolerance;
    Ok(ComparisonReport {
        max_dp,
        max_dflow,
        max_omega,
        tolerance,
        pass,
        sim_flow_violation,
    })
}
