//! Physical plant dynamics and the joint plant/controller integrator.
//!
//! The plant is a semi-explicit index-1 DAE: generator angles, speeds and
//! the turbine/governor chain are differential states; load-bus frequency
//! deviations follow algebraically from the load power balance, which is
//! linear in the frequency and eliminated in closed form at every stage.

use thiserror::Error;

use crate::controller::{
    self, ControllerConfig, ControllerKind, ControllerState, Measurements,
};
use crate::network::{line_flows, GridModel};

/// Turbine/governor representation at generator buses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TurbineModelKind {
    /// Turbine and governor as two first-order lags.
    SecondOrder,
    /// Single turbine lag driven directly by the command; valve unused.
    FirstOrder,
}

impl TurbineModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TurbineModelKind::SecondOrder => "second-order",
            TurbineModelKind::FirstOrder => "first-order",
        }
    }
}

/// Plant variables at one instant. Angles and frequency deviations cover
/// every bus (load-bus entries of `omega` satisfy the algebraic balance);
/// mechanical power and valve position cover generators only.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalState {
    pub theta: Vec<f64>,
    pub omega: Vec<f64>,
    pub p_mech: Vec<f64>,
    pub valve: Vec<f64>,
}

impl PhysicalState {
    /// Pre-disturbance state on a solved power-flow equilibrium.
    pub fn at_equilibrium(grid: &GridModel, theta: &[f64]) -> Self {
        let p0: Vec<f64> = grid.gen_buses().iter().map(|&i| grid.buses[i].injection).collect();
        PhysicalState {
            theta: theta.to_vec(),
            omega: vec![0.0; grid.n_buses()],
            p_mech: p0.clone(),
            valve: p0,
        }
    }
}

/// Time derivatives of the differential plant variables.
#[derive(Debug, Clone)]
pub struct PhysicalDeriv {
    pub theta: Vec<f64>,
    pub omega: Vec<f64>,
    pub p_mech: Vec<f64>,
    pub valve: Vec<f64>,
}

/// Step-change disturbance schedule; changes accumulate per bus.
#[derive(Debug, Clone, Default)]
pub struct Disturbance {
    /// `(time, bus index, added injection)` sorted by time.
    steps: Vec<(f64, usize, f64)>,
}

impl Disturbance {
    pub fn new(mut steps: Vec<(f64, usize, f64)>) -> Result<Self, DynamicsError> {
        if steps.iter().any(|s| s.0 < 0.0) {
            return Err(DynamicsError::BadDisturbance("negative step time".into()));
        }
        steps.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Disturbance { steps })
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Cumulative disturbance vector at time `t` (right-continuous steps).
    pub fn at(&self, t: f64, n_buses: usize) -> Vec<f64> {
        let mut r = vec![0.0; n_buses];
        for &(time, bus, dr) in &self.steps {
            if time <= t {
                r[bus] += dr;
            }
        }
        r
    }

    /// Times at which the disturbance changes, ascending and deduplicated.
    pub fn switch_times(&self) -> Vec<f64> {
        let mut ts: Vec<f64> = self.steps.iter().map(|s| s.0).collect();
        ts.dedup();
        ts
    }
}

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("load bus {bus} has zero damping; the load balance cannot be solved for omega")]
    DegenerateDamping { bus: usize },
    #[error("invalid disturbance: {0}")]
    BadDisturbance(String),
    #[error("non-finite value in `{label}` at t = {t:.6} s")]
    NonFinite { label: String, t: f64 },
    #[error("step size must be positive, got {0}")]
    BadStep(f64),
}

/// Solve the load power balance for the load-bus frequency deviations,
/// writing them into `omega`. `applied` are total bus injections.
pub fn solve_load_buses(
    grid: &GridModel,
    theta: &[f64],
    applied: &[f64],
    r: &[f64],
    omega: &mut [f64],
) -> Result<(), DynamicsError> {
    let flows = line_flows(grid, theta);
    let sums = grid.flow_sums(&flows);
    for (i, bus) in grid.buses.iter().enumerate() {
        if bus.is_gen() {
            continue;
        }
        if bus.damping <= 0.0 {
            return Err(DynamicsError::DegenerateDamping { bus: bus.id });
        }
        omega[i] = (applied[i] + r[i] - sums[i]) / bus.damping;
    }
    Ok(())
}

/// Time derivatives of the plant given the applied commands and disturbance.
///
/// Assumes load-bus `omega` entries already satisfy the algebraic balance.
pub fn physical_rhs(
    grid: &GridModel,
    state: &PhysicalState,
    applied: &[f64],
    r: &[f64],
    kind: TurbineModelKind,
) -> PhysicalDeriv {
    let flows = line_flows(grid, &state.theta);
    let sums = grid.flow_sums(&flows);
    let g = grid.n_gens();
    let mut d = PhysicalDeriv {
        theta: state.omega.clone(),
        omega: vec![0.0; g],
        p_mech: vec![0.0; g],
        valve: vec![0.0; g],
    };
    for (slot, &bus) in grid.gen_buses().iter().enumerate() {
        let b = &grid.buses[bus];
        d.omega[slot] = (-b.damping * state.omega[bus] - sums[bus]
            + state.p_mech[slot]
            + r[bus])
            / b.inertia;
        match kind {
            TurbineModelKind::SecondOrder => {
                d.p_mech[slot] = (state.valve[slot] - state.p_mech[slot]) / b.turbine_t;
                d.valve[slot] = (applied[bus] - state.valve[slot]) / b.governor_t;
            }
            TurbineModelKind::FirstOrder => {
                d.p_mech[slot] = (applied[bus] - state.p_mech[slot]) / b.turbine_t;
            }
        }
    }
    d
}

/// Residual of the load power balance per load bus (zero entries at
/// generator buses); diagnostic for the algebraic-elimination invariant.
pub fn load_balance_residual(
    grid: &GridModel,
    state: &PhysicalState,
    applied: &[f64],
    r: &[f64],
) -> Vec<f64> {
    let flows = line_flows(grid, &state.theta);
    let sums = grid.flow_sums(&flows);
    grid.buses
        .iter()
        .enumerate()
        .map(|(i, bus)| {
            if bus.is_gen() {
                0.0
            } else {
                -bus.damping * state.omega[i] - sums[i] + applied[i] + r[i]
            }
        })
        .collect()
}

/// The coupled plant + controller system advanced by the fixed-step
/// integrator. Pure: all state moves through the flat vector.
pub struct ClosedLoop<'a> {
    pub grid: &'a GridModel,
    pub config: &'a ControllerConfig,
    pub turbine: TurbineModelKind,
    pub layout: StateLayout,
}

/// Offsets of each state block inside the flat integration vector.
#[derive(Debug, Clone)]
pub struct StateLayout {
    pub n: usize,
    pub g: usize,
    pub m: usize,
    pub turbine: TurbineModelKind,
    pub kind: ControllerKind,
    pub area_control: bool,
    pub n_pi: usize,
    pub n_agc: usize,
    pub dim: usize,
}

impl StateLayout {
    pub fn new(grid: &GridModel, config: &ControllerConfig, turbine: TurbineModelKind) -> Self {
        let n = grid.n_buses();
        let g = grid.n_gens();
        let m = grid.n_lines();
        let valves = match turbine {
            TurbineModelKind::SecondOrder => g,
            TurbineModelKind::FirstOrder => 0,
        };
        let (ctrl_dim, n_pi, n_agc) = match config.kind {
            ControllerKind::Uc | ControllerKind::Duc => {
                let n_pi = if config.area_control { grid.n_areas() } else { 0 };
                let emu = if config.kind == ControllerKind::Duc {
                    g + valves
                } else {
                    0
                };
                // lambda + phi + rho+- + pi + emulator chain
                (n + n + 2 * m + n_pi + emu, n_pi, 0)
            }
            ControllerKind::Agc => {
                let n_agc = config.n_agc(grid);
                (n_agc, 0, n_agc)
            }
            ControllerKind::Droop => (0, 0, 0),
        };
        StateLayout {
            n,
            g,
            m,
            turbine,
            kind: config.kind,
            area_control: config.area_control,
            n_pi,
            n_agc,
            dim: n + g + g + valves + ctrl_dim,
        }
    }

    fn has_valve(&self) -> bool {
        self.turbine == TurbineModelKind::SecondOrder
    }

    pub fn label(&self, grid: &GridModel, idx: usize) -> String {
        let mut i = idx;
        let id = |bus: usize| grid.buses[bus].id;
        if i < self.n {
            return format!("theta_{}", id(i));
        }
        i -= self.n;
        if i < self.g {
            return format!("omega_{}", id(grid.gen_buses()[i]));
        }
        i -= self.g;
        if i < self.g {
            return format!("pmech_{}", id(grid.gen_buses()[i]));
        }
        i -= self.g;
        if self.has_valve() {
            if i < self.g {
                return format!("valve_{}", id(grid.gen_buses()[i]));
            }
            i -= self.g;
        }
        match self.kind {
            ControllerKind::Uc | ControllerKind::Duc => {
                if i < self.n {
                    return format!("lambda_{}", id(i));
                }
                i -= self.n;
                if i < self.n {
                    return format!("phi_{}", id(i));
                }
                i -= self.n;
                if i < self.m {
                    let l = &grid.lines[i];
                    return format!("rho+_{}-{}", id(l.from), id(l.to));
                }
                i -= self.m;
                if i < self.m {
                    let l = &grid.lines[i];
                    return format!("rho-_{}-{}", id(l.from), id(l.to));
                }
                i -= self.m;
                if i < self.n_pi {
                    return format!("pi_{}", grid.areas[i].id);
                }
                i -= self.n_pi;
                if i < self.g {
                    return format!("pmech_est_{}", id(grid.gen_buses()[i]));
                }
                i -= self.g;
                format!("valve_est_{}", id(grid.gen_buses()[i]))
            }
            ControllerKind::Agc => format!("agc_{}", i + 1),
            ControllerKind::Droop => format!("state_{idx}"),
        }
    }
}

impl<'a> ClosedLoop<'a> {
    pub fn new(
        grid: &'a GridModel,
        config: &'a ControllerConfig,
        turbine: TurbineModelKind,
    ) -> Self {
        let layout = StateLayout::new(grid, config, turbine);
        ClosedLoop {
            grid,
            config,
            turbine,
            layout,
        }
    }

    /// Split the flat vector into owned state structs. Load-bus omega
    /// entries are left at zero; call `resolve_algebraic` to fill them.
    pub fn unpack(&self, x: &[f64]) -> (PhysicalState, ControllerState) {
        let l = &self.layout;
        let (n, g, m) = (l.n, l.g, l.m);
        let mut pos = 0;
        let mut take = |len: usize| {
            let s = x[pos..pos + len].to_vec();
            pos += len;
            s
        };
        let theta = take(n);
        let omega_g = take(g);
        let p_mech = take(g);
        let valve = if l.has_valve() { take(g) } else { vec![0.0; g] };
        let mut omega = vec![0.0; n];
        for (slot, &bus) in self.grid.gen_buses().iter().enumerate() {
            omega[bus] = omega_g[slot];
        }
        let phys = PhysicalState {
            theta,
            omega,
            p_mech,
            valve,
        };
        let ctrl = match l.kind {
            ControllerKind::Uc | ControllerKind::Duc => {
                let lambda = take(n);
                let phi = take(n);
                let rho_plus = take(m);
                let rho_minus = take(m);
                let pi = take(l.n_pi);
                let (pm_est, valve_est) = if l.kind == ControllerKind::Duc {
                    let pm = take(g);
                    let ve = if l.has_valve() { take(g) } else { Vec::new() };
                    (pm, ve)
                } else {
                    (Vec::new(), Vec::new())
                };
                ControllerState {
                    lambda,
                    phi,
                    rho_plus,
                    rho_minus,
                    pi,
                    pm_est,
                    valve_est,
                    agc: Vec::new(),
                }
            }
            ControllerKind::Agc => ControllerState {
                lambda: Vec::new(),
                phi: Vec::new(),
                rho_plus: Vec::new(),
                rho_minus: Vec::new(),
                pi: Vec::new(),
                pm_est: Vec::new(),
                valve_est: Vec::new(),
                agc: take(l.n_agc),
            },
            ControllerKind::Droop => ControllerState {
                lambda: Vec::new(),
                phi: Vec::new(),
                rho_plus: Vec::new(),
                rho_minus: Vec::new(),
                pi: Vec::new(),
                pm_est: Vec::new(),
                valve_est: Vec::new(),
                agc: Vec::new(),
            },
        };
        (phys, ctrl)
    }

    pub fn pack(&self, phys: &PhysicalState, ctrl: &ControllerState) -> Vec<f64> {
        let l = &self.layout;
        let mut x = Vec::with_capacity(l.dim);
        x.extend_from_slice(&phys.theta);
        for &bus in self.grid.gen_buses() {
            x.push(phys.omega[bus]);
        }
        x.extend_from_slice(&phys.p_mech);
        if l.has_valve() {
            x.extend_from_slice(&phys.valve);
        }
        match l.kind {
            ControllerKind::Uc | ControllerKind::Duc => {
                x.extend_from_slice(&ctrl.lambda);
                x.extend_from_slice(&ctrl.phi);
                x.extend_from_slice(&ctrl.rho_plus);
                x.extend_from_slice(&ctrl.rho_minus);
                x.extend_from_slice(&ctrl.pi);
                x.extend_from_slice(&ctrl.pm_est);
                x.extend_from_slice(&ctrl.valve_est);
            }
            ControllerKind::Agc => x.extend_from_slice(&ctrl.agc),
            ControllerKind::Droop => {}
        }
        debug_assert_eq!(x.len(), l.dim);
        x
    }

    /// Fill load-bus omega entries, applying the per-bus joint solve when
    /// load-side control couples the command back into the balance.
    pub fn resolve_algebraic(
        &self,
        phys: &mut PhysicalState,
        ctrl: &ControllerState,
        r: &[f64],
    ) -> Result<(), DynamicsError> {
        let flows = line_flows(self.grid, &phys.theta);
        let sums = self.grid.flow_sums(&flows);
        let kind_allows_loads = matches!(
            self.config.kind,
            ControllerKind::Uc | ControllerKind::Duc | ControllerKind::Droop
        );
        for (i, bus) in self.grid.buses.iter().enumerate() {
            if bus.is_gen() {
                continue;
            }
            if bus.damping <= 0.0 {
                return Err(DynamicsError::DegenerateDamping { bus: bus.id });
            }
            if !(kind_allows_loads && self.config.load_side[i]) {
                phys.omega[i] = (bus.injection + r[i] - sums[i]) / bus.damping;
                continue;
            }
            let lambda = match self.config.kind {
                ControllerKind::Droop => 0.0,
                _ => ctrl.lambda[i],
            };
            let alpha = self.config.alpha[i];
            // Unsaturated joint solve of balance and command.
            let omega = (bus.injection - alpha * lambda + r[i] - sums[i])
                / (bus.damping + alpha);
            let dev = controller::raw_command(alpha, omega, lambda);
            let clipped = controller::clip_deviation(self.grid, i, dev);
            if (clipped - dev).abs() <= f64::EPSILON * dev.abs().max(1.0) {
                phys.omega[i] = omega;
            } else {
                phys.omega[i] =
                    (bus.injection + clipped + r[i] - sums[i]) / bus.damping;
            }
        }
        Ok(())
    }

    /// Full coupled right-hand side at a flat state.
    pub fn rhs(&self, x: &[f64], r: &[f64]) -> Result<Vec<f64>, DynamicsError> {
        let (mut phys, ctrl) = self.unpack(x);
        self.resolve_algebraic(&mut phys, &ctrl, r)?;
        let applied = controller::applied_commands(self.grid, self.config, &phys.omega, &ctrl);
        let pd = physical_rhs(self.grid, &phys, &applied, r, self.turbine);
        let accel: Vec<f64> = self
            .grid
            .gen_buses()
            .iter()
            .enumerate()
            .map(|(slot, &bus)| self.grid.buses[bus].inertia * pd.omega[slot])
            .collect();
        let meas = Measurements {
            omega: phys.omega.clone(),
            flows: line_flows(self.grid, &phys.theta),
            accel,
            applied,
        };
        let cd = match self.config.kind {
            ControllerKind::Uc => controller::uc_rhs(self.grid, self.config, &ctrl, &meas),
            ControllerKind::Duc => controller::duc_rhs(self.grid, self.config, &ctrl, &meas),
            ControllerKind::Agc => {
                let (ds, _) =
                    controller::agc_rhs(self.grid, self.config, &meas.omega, &meas.flows, &ctrl.agc);
                let mut cd = ctrl.zeros_like();
                cd.agc = ds;
                cd
            }
            ControllerKind::Droop => ctrl.zeros_like(),
        };
        let dphys = PhysicalState {
            theta: pd.theta,
            omega: {
                let mut om = vec![0.0; self.layout.n];
                for (slot, &bus) in self.grid.gen_buses().iter().enumerate() {
                    om[bus] = pd.omega[slot];
                }
                om
            },
            p_mech: pd.p_mech,
            valve: pd.valve,
        };
        Ok(self.pack(&dphys, &cd))
    }

    /// One classical Runge-Kutta-4 step from `t` to `t + h` with the
    /// disturbance held at `r`. Re-asserts multiplier nonnegativity and
    /// aborts on non-finite values.
    pub fn step(&self, x: &mut Vec<f64>, r: &[f64], t: f64, h: f64) -> Result<(), DynamicsError> {
        if h <= 0.0 {
            return Err(DynamicsError::BadStep(h));
        }
        let k1 = self.rhs(x, r)?;
        let mut x2 = x.clone();
        axpy(&mut x2, 0.5 * h, &k1);
        let k2 = self.rhs(&x2, r)?;
        let mut x3 = x.clone();
        axpy(&mut x3, 0.5 * h, &k2);
        let k3 = self.rhs(&x3, r)?;
        let mut x4 = x.clone();
        axpy(&mut x4, h, &k3);
        let k4 = self.rhs(&x4, r)?;
        for i in 0..x.len() {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        self.clamp_multipliers(x);
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(DynamicsError::NonFinite {
                label: self.layout.label(self.grid, i),
                t: t + h,
            });
        }
        Ok(())
    }

    /// Zero out roundoff-negative line multipliers after a step.
    fn clamp_multipliers(&self, x: &mut [f64]) {
        if !matches!(self.layout.kind, ControllerKind::Uc | ControllerKind::Duc) {
            return;
        }
        let l = &self.layout;
        let start = l.n + 2 * l.g + if l.has_valve() { l.g } else { 0 } + 2 * l.n;
        for v in &mut x[start..start + 2 * l.m] {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }

    /// Initial flat state on the pre-disturbance equilibrium.
    pub fn initial_state(
        &self,
        theta_eq: &[f64],
    ) -> (PhysicalState, ControllerState) {
        let phys = PhysicalState::at_equilibrium(self.grid, theta_eq);
        let ctrl = ControllerState::at_equilibrium(
            self.grid,
            self.config,
            theta_eq,
            self.turbine == TurbineModelKind::SecondOrder,
        );
        (phys, ctrl)
    }
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}
