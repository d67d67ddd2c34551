//! Small-signal analysis of the closed loop: analytic linearization about an
//! equilibrium with the load-bus algebraic constraints eliminated, reference
//! angle modes removed, and projection/saturation branches frozen, followed
//! by a dense eigenvalue solve.
//!
//! Reduced coordinates: bus angles (physical and virtual) are expressed
//! relative to the reference bus, which removes the two rigid-shift modes
//! instead of leaving spurious zero eigenvalues in the spectrum.

use nalgebra::{Complex, DMatrix, DVector};
use thiserror::Error;

use crate::controller::{self, ControllerConfig, ControllerKind, ControllerState};
use crate::dynamics::{ClosedLoop, DynamicsError, PhysicalState, TurbineModelKind};
use crate::network::GridModel;

/// Default boundary between marginal and decisively stable/unstable spectra.
pub const ABSCISSA_TOL: f64 = 1e-8;

/// Residual norm above which a state is rejected as a linearization point.
pub const EQUILIBRIUM_TOL: f64 = 1e-8;

/// A closed-loop state together with the persistent disturbance it balances.
#[derive(Debug, Clone)]
pub struct EquilibriumPoint {
    pub phys: PhysicalState,
    pub ctrl: ControllerState,
    pub r: Vec<f64>,
}

/// Frozen branches of the nonsmooth terms at the linearization point.
#[derive(Debug, Clone)]
pub struct ActiveSet {
    /// Upper/lower line-limit multipliers with an open projection gate.
    pub rho_plus: Vec<bool>,
    pub rho_minus: Vec<bool>,
    /// Buses whose command sits on a control limit.
    pub saturated: Vec<bool>,
}

impl ActiveSet {
    /// Derive the branches from an equilibrium: a multiplier is active when
    /// it is positive or its argument is nonnegative; a command is saturated
    /// when clipping moves it.
    pub fn from_equilibrium(
        grid: &GridModel,
        config: &ControllerConfig,
        eq: &EquilibriumPoint,
    ) -> Self {
        let m = grid.n_lines();
        let mut rho_plus = vec![false; m];
        let mut rho_minus = vec![false; m];
        if matches!(config.kind, ControllerKind::Uc | ControllerKind::Duc) {
            let p_hat = controller::virtual_flows(grid, &eq.ctrl.phi);
            for (e, line) in grid.lines.iter().enumerate() {
                rho_plus[e] =
                    eq.ctrl.rho_plus[e] > 1e-9 || p_hat[e] - line.p_max > -1e-9;
                rho_minus[e] =
                    eq.ctrl.rho_minus[e] > 1e-9 || line.p_min - p_hat[e] > -1e-9;
            }
        }
        let mut saturated = vec![false; grid.n_buses()];
        for (i, bus) in grid.buses.iter().enumerate() {
            let raw = match config.kind {
                ControllerKind::Uc | ControllerKind::Duc => {
                    controller::raw_command(config.alpha[i], eq.phys.omega[i], eq.ctrl.lambda[i])
                }
                ControllerKind::Droop => {
                    controller::raw_command(config.alpha[i], eq.phys.omega[i], 0.0)
                }
                ControllerKind::Agc => match grid.gen_slot(i) {
                    Some(slot) => {
                        let area = grid.area_of_bus(i).unwrap_or(0);
                        -config.alpha[i] * eq.phys.omega[i]
                            + config.agc.participation[slot] * eq.ctrl.agc[area]
                    }
                    None => 0.0,
                },
            };
            let clipped = controller::clip_deviation(grid, i, raw);
            saturated[i] = (clipped - raw).abs() > 1e-12;
            let _ = bus;
        }
        ActiveSet {
            rho_plus,
            rho_minus,
            saturated,
        }
    }

    /// All projection branches closed, no saturation: the no-congestion
    /// setting used for the eigenvalue studies.
    pub fn all_inactive(grid: &GridModel) -> Self {
        ActiveSet {
            rho_plus: vec![false; grid.n_lines()],
            rho_minus: vec![false; grid.n_lines()],
            saturated: vec![false; grid.n_buses()],
        }
    }
}

#[derive(Debug, Error)]
pub enum StabilityError {
    #[error("state is not an equilibrium: RHS residual {residual:.3e} exceeds {EQUILIBRIUM_TOL:.0e}")]
    NotEquilibrium { residual: f64 },
    #[error("load-bus elimination is singular: {0}")]
    SingularElimination(String),
    #[error("eigenvalue iteration did not converge")]
    EigNoConvergence,
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Linearized closed loop `dx/dt = A x` about an equilibrium.
#[derive(Debug, Clone)]
pub struct LinearModel {
    pub a: DMatrix<f64>,
    pub labels: Vec<String>,
    /// Reduced-coordinate equilibrium snapshot the model is anchored at.
    pub x0: DVector<f64>,
}

impl LinearModel {
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    Stable,
    Marginal,
    Unstable,
}

impl Classification {
    pub fn as_str(&self) -> &'static str {
        match self {
            Classification::Stable => "stable",
            Classification::Marginal => "marginal",
            Classification::Unstable => "unstable",
        }
    }
}

/// Closed-loop spectrum with stability classification.
#[derive(Debug, Clone)]
pub struct EigenReport {
    pub eigenvalues: Vec<Complex<f64>>,
    pub spectral_abscissa: f64,
    pub classification: Classification,
    pub n_unstable: usize,
    pub tol: f64,
}

/// Column map of the reduced linearization coordinates.
pub struct LinLayout {
    pub dim: usize,
    n: usize,
    reference: usize,
    theta_slot: Vec<usize>,
    omega0: usize,
    pm0: usize,
    valve0: Option<usize>,
    lambda0: Option<usize>,
    phi_slot: Vec<usize>,
    active_plus: Vec<usize>,
    rho_plus_col: Vec<Option<usize>>,
    active_minus: Vec<usize>,
    rho_minus_col: Vec<Option<usize>>,
    pi0: Option<usize>,
    pmest0: Option<usize>,
    vest0: Option<usize>,
    agc0: Option<usize>,
    n_agc: usize,
}

impl LinLayout {
    pub fn new(
        grid: &GridModel,
        config: &ControllerConfig,
        turbine: TurbineModelKind,
        active: &ActiveSet,
    ) -> Self {
        let n = grid.n_buses();
        let g = grid.n_gens();
        let has_valve = turbine == TurbineModelKind::SecondOrder;
        let mut theta_slot = vec![usize::MAX; n];
        let mut k = 0;
        for i in 0..n {
            if i != grid.reference {
                theta_slot[i] = k;
                k += 1;
            }
        }
        let omega0 = k;
        k += g;
        let pm0 = k;
        k += g;
        let valve0 = has_valve.then(|| {
            let o = k;
            k += g;
            o
        });
        let mut lambda0 = None;
        let mut phi_slot = vec![usize::MAX; n];
        let mut active_plus = Vec::new();
        let mut rho_plus_col = vec![None; grid.n_lines()];
        let mut active_minus = Vec::new();
        let mut rho_minus_col = vec![None; grid.n_lines()];
        let mut pi0 = None;
        let mut pmest0 = None;
        let mut vest0 = None;
        let mut agc0 = None;
        let mut n_agc = 0;
        match config.kind {
            ControllerKind::Uc | ControllerKind::Duc => {
                lambda0 = Some(k);
                k += n;
                for i in 0..n {
                    if i != grid.reference {
                        phi_slot[i] = k;
                        k += 1;
                    }
                }
                for (e, &a) in active.rho_plus.iter().enumerate() {
                    if a {
                        rho_plus_col[e] = Some(k);
                        active_plus.push(e);
                        k += 1;
                    }
                }
                for (e, &a) in active.rho_minus.iter().enumerate() {
                    if a {
                        rho_minus_col[e] = Some(k);
                        active_minus.push(e);
                        k += 1;
                    }
                }
                if config.area_control {
                    pi0 = Some(k);
                    k += grid.n_areas();
                }
                if config.kind == ControllerKind::Duc {
                    pmest0 = Some(k);
                    k += g;
                    if has_valve {
                        vest0 = Some(k);
                        k += g;
                    }
                }
            }
            ControllerKind::Agc => {
                agc0 = Some(k);
                n_agc = config.n_agc(grid);
                k += n_agc;
            }
            ControllerKind::Droop => {}
        }
        LinLayout {
            dim: k,
            n,
            reference: grid.reference,
            theta_slot,
            omega0,
            pm0,
            valve0,
            lambda0,
            phi_slot,
            active_plus,
            rho_plus_col,
            active_minus,
            rho_minus_col,
            pi0,
            pmest0,
            vest0,
            agc0,
            n_agc,
        }
    }

    pub fn theta_col(&self, bus: usize) -> Option<usize> {
        (self.theta_slot[bus] != usize::MAX).then(|| self.theta_slot[bus])
    }
    pub fn omega_col(&self, slot: usize) -> usize {
        self.omega0 + slot
    }
    pub fn pm_col(&self, slot: usize) -> usize {
        self.pm0 + slot
    }
    pub fn valve_col(&self, slot: usize) -> Option<usize> {
        self.valve0.map(|o| o + slot)
    }
    pub fn lambda_col(&self, bus: usize) -> Option<usize> {
        self.lambda0.map(|o| o + bus)
    }
    pub fn phi_col(&self, bus: usize) -> Option<usize> {
        (self.phi_slot[bus] != usize::MAX).then(|| self.phi_slot[bus])
    }
    pub fn pi_col(&self, area: usize) -> Option<usize> {
        self.pi0.map(|o| o + area)
    }
    pub fn pmest_col(&self, slot: usize) -> Option<usize> {
        self.pmest0.map(|o| o + slot)
    }
    pub fn vest_col(&self, slot: usize) -> Option<usize> {
        self.vest0.map(|o| o + slot)
    }
    pub fn agc_col(&self, area: usize) -> Option<usize> {
        self.agc0.map(|o| o + area)
    }

    pub fn labels(&self, grid: &GridModel) -> Vec<String> {
        let id = |bus: usize| grid.buses[bus].id;
        let mut out = vec![String::new(); self.dim];
        for i in 0..self.n {
            if let Some(c) = self.theta_col(i) {
                out[c] = format!("theta_{}", id(i));
            }
        }
        for (slot, &b) in grid.gen_buses().iter().enumerate() {
            out[self.omega_col(slot)] = format!("omega_{}", id(b));
            out[self.pm_col(slot)] = format!("pmech_{}", id(b));
            if let Some(c) = self.valve_col(slot) {
                out[c] = format!("valve_{}", id(b));
            }
            if let Some(c) = self.pmest_col(slot) {
                out[c] = format!("pmech_est_{}", id(b));
            }
            if let Some(c) = self.vest_col(slot) {
                out[c] = format!("valve_est_{}", id(b));
            }
        }
        for i in 0..self.n {
            if let Some(c) = self.lambda_col(i) {
                out[c] = format!("lambda_{}", id(i));
            }
            if let Some(c) = self.phi_col(i) {
                out[c] = format!("phi_{}", id(i));
            }
        }
        for &e in &self.active_plus {
            let l = &grid.lines[e];
            out[self.rho_plus_col[e].unwrap()] = format!("rho+_{}-{}", id(l.from), id(l.to));
        }
        for &e in &self.active_minus {
            let l = &grid.lines[e];
            out[self.rho_minus_col[e].unwrap()] = format!("rho-_{}-{}", id(l.from), id(l.to));
        }
        if let Some(o) = self.pi0 {
            for (k, area) in grid.areas.iter().enumerate() {
                out[o + k] = format!("pi_{}", area.id);
            }
        }
        if let Some(o) = self.agc0 {
            for k in 0..self.n_agc {
                out[o + k] = format!("agc_{}", k + 1);
            }
        }
        out
    }

    /// Project a full closed-loop state onto the reduced coordinates.
    pub fn reduce_state(&self, grid: &GridModel, eq: &EquilibriumPoint) -> DVector<f64> {
        let mut x = DVector::zeros(self.dim);
        for i in 0..self.n {
            if let Some(c) = self.theta_col(i) {
                x[c] = eq.phys.theta[i] - eq.phys.theta[self.reference];
            }
        }
        for (slot, &b) in grid.gen_buses().iter().enumerate() {
            x[self.omega_col(slot)] = eq.phys.omega[b];
            x[self.pm_col(slot)] = eq.phys.p_mech[slot];
            if let Some(c) = self.valve_col(slot) {
                x[c] = eq.phys.valve[slot];
            }
            if let Some(c) = self.pmest_col(slot) {
                x[c] = eq.ctrl.pm_est[slot];
            }
            if let Some(c) = self.vest_col(slot) {
                x[c] = eq.ctrl.valve_est[slot];
            }
        }
        for i in 0..self.n {
            if let Some(c) = self.lambda_col(i) {
                x[c] = eq.ctrl.lambda[i];
            }
            if let Some(c) = self.phi_col(i) {
                x[c] = eq.ctrl.phi[i] - eq.ctrl.phi[self.reference];
            }
        }
        for &e in &self.active_plus {
            x[self.rho_plus_col[e].unwrap()] = eq.ctrl.rho_plus[e];
        }
        for &e in &self.active_minus {
            x[self.rho_minus_col[e].unwrap()] = eq.ctrl.rho_minus[e];
        }
        if let Some(o) = self.pi0 {
            for k in 0..eq.ctrl.pi.len() {
                x[o + k] = eq.ctrl.pi[k];
            }
        }
        if let Some(o) = self.agc0 {
            for k in 0..eq.ctrl.agc.len() {
                x[o + k] = eq.ctrl.agc[k];
            }
        }
        x
    }

    /// Rebuild a full closed-loop state from reduced coordinates, holding the
    /// reference angles and every inactive/frozen variable at the anchor.
    pub fn expand_state(
        &self,
        grid: &GridModel,
        anchor: &EquilibriumPoint,
        x: &DVector<f64>,
    ) -> (PhysicalState, ControllerState) {
        let mut phys = anchor.phys.clone();
        let mut ctrl = anchor.ctrl.clone();
        for i in 0..self.n {
            if let Some(c) = self.theta_col(i) {
                phys.theta[i] = anchor.phys.theta[self.reference] + x[c];
            }
        }
        for (slot, &b) in grid.gen_buses().iter().enumerate() {
            phys.omega[b] = x[self.omega_col(slot)];
            phys.p_mech[slot] = x[self.pm_col(slot)];
            if let Some(c) = self.valve_col(slot) {
                phys.valve[slot] = x[c];
            }
            if let Some(c) = self.pmest_col(slot) {
                ctrl.pm_est[slot] = x[c];
            }
            if let Some(c) = self.vest_col(slot) {
                ctrl.valve_est[slot] = x[c];
            }
        }
        for i in 0..self.n {
            if let Some(c) = self.lambda_col(i) {
                ctrl.lambda[i] = x[c];
            }
            if let Some(c) = self.phi_col(i) {
                ctrl.phi[i] = anchor.ctrl.phi[self.reference] + x[c];
            }
        }
        for &e in &self.active_plus {
            ctrl.rho_plus[e] = x[self.rho_plus_col[e].unwrap()];
        }
        for &e in &self.active_minus {
            ctrl.rho_minus[e] = x[self.rho_minus_col[e].unwrap()];
        }
        if let Some(o) = self.pi0 {
            for k in 0..ctrl.pi.len() {
                ctrl.pi[k] = x[o + k];
            }
        }
        if let Some(o) = self.agc0 {
            for k in 0..ctrl.agc.len() {
                ctrl.agc[k] = x[o + k];
            }
        }
        (phys, ctrl)
    }

    /// Map a full-state derivative onto the reduced rows (angle rows are
    /// taken relative to the reference bus; frozen rows are dropped).
    pub fn reduce_deriv(
        &self,
        grid: &GridModel,
        dphys: &PhysicalState,
        dctrl: &ControllerState,
    ) -> DVector<f64> {
        let eqv = EquilibriumPoint {
            phys: dphys.clone(),
            ctrl: dctrl.clone(),
            r: Vec::new(),
        };
        // Derivatives transform like the states: relative angles subtract the
        // reference row, everything else passes through.
        self.reduce_state(grid, &eqv)
    }
}

/// Evaluate the reduced nonlinear right-hand side at reduced state `x`.
/// Independent consumers (finite differencing) and the analytic Jacobian
/// must agree on this map.
pub fn reduced_rhs(
    grid: &GridModel,
    config: &ControllerConfig,
    turbine: TurbineModelKind,
    anchor: &EquilibriumPoint,
    layout: &LinLayout,
    x: &DVector<f64>,
) -> Result<DVector<f64>, StabilityError> {
    let loop_ = ClosedLoop::new(grid, config, turbine);
    let (phys, ctrl) = layout.expand_state(grid, anchor, x);
    let flat = loop_.pack(&phys, &ctrl);
    let dflat = loop_.rhs(&flat, &anchor.r).map_err(map_dyn_err)?;
    let (dphys, dctrl) = loop_.unpack(&dflat);
    // unpack leaves load omega rows at zero; theta rows carry them instead.
    let mut dphys_full = dphys;
    for (i, bus) in grid.buses.iter().enumerate() {
        if !bus.is_gen() {
            dphys_full.omega[i] = 0.0;
        }
    }
    Ok(layout.reduce_deriv(grid, &dphys_full, &dctrl))
}

fn map_dyn_err(e: DynamicsError) -> StabilityError {
    match e {
        DynamicsError::DegenerateDamping { bus } => StabilityError::SingularElimination(format!(
            "load bus {bus} has zero damping"
        )),
        other => StabilityError::Dynamics(other),
    }
}

/// Central-difference Jacobian of the reduced right-hand side; the
/// independent oracle the analytic matrix is checked against.
pub fn fd_jacobian(
    grid: &GridModel,
    config: &ControllerConfig,
    turbine: TurbineModelKind,
    eq: &EquilibriumPoint,
    active: &ActiveSet,
    step: f64,
) -> Result<DMatrix<f64>, StabilityError> {
    let layout = LinLayout::new(grid, config, turbine, active);
    let x0 = layout.reduce_state(grid, eq);
    let mut a = DMatrix::zeros(layout.dim, layout.dim);
    for j in 0..layout.dim {
        let mut xp = x0.clone();
        xp[j] += step;
        let fp = reduced_rhs(grid, config, turbine, eq, &layout, &xp)?;
        let mut xm = x0.clone();
        xm[j] -= step;
        let fm = reduced_rhs(grid, config, turbine, eq, &layout, &xm)?;
        for i in 0..layout.dim {
            a[(i, j)] = (fp[i] - fm[i]) / (2.0 * step);
        }
    }
    Ok(a)
}

/// How the algebraic load frequency at a bus responds to the states.
#[derive(Clone, Copy)]
enum OmegaDep {
    /// Generator: omega is the state at this slot.
    State(usize),
    /// Load: `omega = scale * (stuff - (CP)_i)`, optional lambda coupling.
    Algebraic { scale: f64, dlambda: f64 },
}

/// Analytic linearization of the closed loop about `eq` with frozen branches.
pub fn linearize(
    grid: &GridModel,
    config: &ControllerConfig,
    turbine: TurbineModelKind,
    eq: &EquilibriumPoint,
    active: &ActiveSet,
) -> Result<LinearModel, StabilityError> {
    // Reject states that are not stationary.
    let loop_ = ClosedLoop::new(grid, config, turbine);
    let flat = loop_.pack(&eq.phys, &eq.ctrl);
    let residual = loop_
        .rhs(&flat, &eq.r)
        .map_err(map_dyn_err)?
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()));
    if residual > EQUILIBRIUM_TOL {
        return Err(StabilityError::NotEquilibrium { residual });
    }
    assemble(grid, config, turbine, eq, active)
}

/// Jacobian assembly without the stationarity gate.
fn assemble(
    grid: &GridModel,
    config: &ControllerConfig,
    turbine: TurbineModelKind,
    eq: &EquilibriumPoint,
    active: &ActiveSet,
) -> Result<LinearModel, StabilityError> {
    let layout = LinLayout::new(grid, config, turbine, active);
    let n = grid.n_buses();
    let dim = layout.dim;
    let mut a = DMatrix::zeros(dim, dim);

    // Line weights at the equilibrium.
    let w_plant: Vec<f64> = grid
        .lines
        .iter()
        .map(|l| l.susceptance * (eq.phys.theta[l.from] - eq.phys.theta[l.to]).cos())
        .collect();
    let has_ctrl_angles = matches!(config.kind, ControllerKind::Uc | ControllerKind::Duc);
    let w_virtual: Vec<f64> = if has_ctrl_angles {
        grid.lines
            .iter()
            .map(|l| l.susceptance * (eq.ctrl.phi[l.from] - eq.ctrl.phi[l.to]).cos())
            .collect()
    } else {
        Vec::new()
    };

    let kind_allows_loads = matches!(
        config.kind,
        ControllerKind::Uc | ControllerKind::Duc | ControllerKind::Droop
    );
    let omega_dep: Vec<OmegaDep> = grid
        .buses
        .iter()
        .enumerate()
        .map(|(i, bus)| match grid.gen_slot(i) {
            Some(slot) => OmegaDep::State(slot),
            None => {
                if bus.damping <= 0.0 {
                    // surfaced as an error below
                    OmegaDep::Algebraic {
                        scale: f64::NAN,
                        dlambda: 0.0,
                    }
                } else if kind_allows_loads && config.load_side[i] && !active.saturated[i] {
                    let denom = bus.damping + config.alpha[i];
                    let dl = if config.kind == ControllerKind::Droop {
                        0.0
                    } else {
                        -config.alpha[i] / denom
                    };
                    OmegaDep::Algebraic {
                        scale: 1.0 / denom,
                        dlambda: dl,
                    }
                } else {
                    OmegaDep::Algebraic {
                        scale: 1.0 / bus.damping,
                        dlambda: 0.0,
                    }
                }
            }
        })
        .collect();
    for (i, bus) in grid.buses.iter().enumerate() {
        if !bus.is_gen() && bus.damping <= 0.0 {
            return Err(StabilityError::SingularElimination(format!(
                "load bus {} has zero damping",
                grid.buses[i].id
            )));
        }
    }

    // Row vector of d(omega_bus)/d(states) over reduced columns.
    let omega_row = |bus: usize| -> Vec<f64> {
        let mut row = vec![0.0; dim];
        match omega_dep[bus] {
            OmegaDep::State(slot) => row[layout.omega_col(slot)] = 1.0,
            OmegaDep::Algebraic { scale, dlambda } => {
                // -(CP)_i / D_eff: differentiate the flow sum at this bus.
                for &(e, sign) in grid.incident(bus) {
                    let l = &grid.lines[e];
                    let dd = sign * w_plant[e] * scale;
                    if let Some(c) = layout.theta_col(l.from) {
                        row[c] -= dd;
                    }
                    if let Some(c) = layout.theta_col(l.to) {
                        row[c] += dd;
                    }
                }
                if dlambda != 0.0 {
                    if let Some(c) = layout.lambda_col(bus) {
                        row[c] += dlambda;
                    }
                }
            }
        }
        row
    };

    // Deviation-command sensitivity per bus; empty when frozen by saturation.
    // Entries: (column scale applied to omega_row, lambda col coeff, agc col).
    let command_row = |bus: usize| -> Vec<(usize, f64)> {
        let mut entries = Vec::new();
        if active.saturated[bus] {
            return entries;
        }
        let alpha = config.alpha[bus];
        match config.kind {
            ControllerKind::Uc | ControllerKind::Duc => {
                for (c, v) in omega_row(bus).into_iter().enumerate() {
                    if v != 0.0 {
                        entries.push((c, -alpha * v));
                    }
                }
                if let Some(c) = layout.lambda_col(bus) {
                    entries.push((c, -alpha));
                }
            }
            ControllerKind::Droop => {
                for (c, v) in omega_row(bus).into_iter().enumerate() {
                    if v != 0.0 {
                        entries.push((c, -alpha * v));
                    }
                }
            }
            ControllerKind::Agc => {
                if let Some(slot) = grid.gen_slot(bus) {
                    for (c, v) in omega_row(bus).into_iter().enumerate() {
                        if v != 0.0 {
                            entries.push((c, -alpha * v));
                        }
                    }
                    let area = grid.area_of_bus(bus).unwrap_or(0);
                    if let Some(c) = layout.agc_col(area) {
                        entries.push((c, config.agc.participation[slot]));
                    }
                }
            }
        }
        entries
    };

    // --- plant rows ---------------------------------------------------

    // Relative angles: d(theta_i - theta_ref)/dt = omega_i - omega_ref.
    let ref_row = omega_row(grid.reference);
    for i in 0..n {
        if let Some(rc) = layout.theta_col(i) {
            let row = omega_row(i);
            for c in 0..dim {
                let v = row[c] - ref_row[c];
                if v != 0.0 {
                    a[(rc, c)] += v;
                }
            }
        }
    }

    for (slot, &b) in grid.gen_buses().iter().enumerate() {
        let bus = &grid.buses[b];
        let rw = layout.omega_col(slot);
        a[(rw, layout.omega_col(slot))] -= bus.damping / bus.inertia;
        a[(rw, layout.pm_col(slot))] += 1.0 / bus.inertia;
        for &(e, sign) in grid.incident(b) {
            let l = &grid.lines[e];
            let dd = sign * w_plant[e] / bus.inertia;
            if let Some(c) = layout.theta_col(l.from) {
                a[(rw, c)] -= dd;
            }
            if let Some(c) = layout.theta_col(l.to) {
                a[(rw, c)] += dd;
            }
        }

        let rp = layout.pm_col(slot);
        match turbine {
            TurbineModelKind::SecondOrder => {
                a[(rp, layout.pm_col(slot))] -= 1.0 / bus.turbine_t;
                a[(rp, layout.valve_col(slot).unwrap())] += 1.0 / bus.turbine_t;
                let rv = layout.valve_col(slot).unwrap();
                a[(rv, rv)] -= 1.0 / bus.governor_t;
                for (c, v) in command_row(b) {
                    a[(rv, c)] += v / bus.governor_t;
                }
            }
            TurbineModelKind::FirstOrder => {
                a[(rp, layout.pm_col(slot))] -= 1.0 / bus.turbine_t;
                for (c, v) in command_row(b) {
                    a[(rp, c)] += v / bus.turbine_t;
                }
            }
        }
    }

    // --- controller rows ------------------------------------------------

    match config.kind {
        ControllerKind::Uc | ControllerKind::Duc => {
            let duc = config.kind == ControllerKind::Duc;
            for (i, bus) in grid.buses.iter().enumerate() {
                let rl = layout.lambda_col(i).unwrap();
                let k = config.k_lambda[i];
                match grid.gen_slot(i) {
                    Some(slot) => {
                        // K (p_mech + r - sum of virtual flows [- alpha
                        // lambda - pm_est for the decoupled variant]).
                        a[(rl, layout.pm_col(slot))] += k;
                        for &(e, sign) in grid.incident(i) {
                            let l = &grid.lines[e];
                            let dd = sign * w_virtual[e] * k;
                            if let Some(c) = layout.phi_col(l.from) {
                                a[(rl, c)] -= dd;
                            }
                            if let Some(c) = layout.phi_col(l.to) {
                                a[(rl, c)] += dd;
                            }
                        }
                        if duc {
                            a[(rl, layout.lambda_col(i).unwrap())] -= k * config.alpha[i];
                            a[(rl, layout.pmest_col(slot).unwrap())] -= k;
                        }
                    }
                    None => {
                        // K (D omega + (CP)_i - (CP_hat)_i [DUC extras]).
                        for (c, v) in omega_row(i).into_iter().enumerate() {
                            if v != 0.0 {
                                a[(rl, c)] += k * bus.damping * v;
                            }
                        }
                        for &(e, sign) in grid.incident(i) {
                            let l = &grid.lines[e];
                            let dp = sign * w_plant[e] * k;
                            if let Some(c) = layout.theta_col(l.from) {
                                a[(rl, c)] += dp;
                            }
                            if let Some(c) = layout.theta_col(l.to) {
                                a[(rl, c)] -= dp;
                            }
                            let dh = sign * w_virtual[e] * k;
                            if let Some(c) = layout.phi_col(l.from) {
                                a[(rl, c)] -= dh;
                            }
                            if let Some(c) = layout.phi_col(l.to) {
                                a[(rl, c)] += dh;
                            }
                        }
                        if duc && config.load_side[i] {
                            a[(rl, layout.lambda_col(i).unwrap())] -= k * config.alpha[i];
                            // minus the applied load command deviation
                            for (c, v) in command_row(i) {
                                a[(rl, c)] -= k * v;
                            }
                        }
                    }
                }
            }

            // Virtual-angle rows (relative to the reference bus).
            let phi_row = |i: usize| -> Vec<f64> {
                let mut row = vec![0.0; dim];
                let kphi = config.k_phi[i];
                for &(e, sign) in grid.incident(i) {
                    let l = &grid.lines[e];
                    let b_e = l.susceptance;
                    // mu_e = lambda_from - lambda_to - rho+ + rho- - oriented pi
                    row[layout.lambda_col(l.from).unwrap()] += kphi * sign * b_e;
                    row[layout.lambda_col(l.to).unwrap()] -= kphi * sign * b_e;
                    if let Some(c) = layout.rho_plus_col[e] {
                        row[c] -= kphi * sign * b_e;
                    }
                    if let Some(c) = layout.rho_minus_col[e] {
                        row[c] += kphi * sign * b_e;
                    }
                    if config.area_control {
                        for (kk, area) in grid.areas.iter().enumerate() {
                            for &(ae, asign) in &area.ties {
                                if ae == e {
                                    if let Some(c) = layout.pi_col(kk) {
                                        row[c] -= kphi * sign * b_e * asign;
                                    }
                                }
                            }
                        }
                    }
                }
                row
            };
            let ref_phi = phi_row(grid.reference);
            for i in 0..n {
                if let Some(rc) = layout.phi_col(i) {
                    let row = phi_row(i);
                    for c in 0..dim {
                        let v = row[c] - ref_phi[c];
                        if v != 0.0 {
                            a[(rc, c)] += v;
                        }
                    }
                }
            }

            // Open-gate multiplier rows.
            for &e in &layout.active_plus {
                let rc = layout.rho_plus_col[e].unwrap();
                let l = &grid.lines[e];
                let kk = config.k_rho_plus[e];
                if let Some(c) = layout.phi_col(l.from) {
                    a[(rc, c)] += kk * w_virtual[e];
                }
                if let Some(c) = layout.phi_col(l.to) {
                    a[(rc, c)] -= kk * w_virtual[e];
                }
            }
            for &e in &layout.active_minus {
                let rc = layout.rho_minus_col[e].unwrap();
                let l = &grid.lines[e];
                let kk = config.k_rho_minus[e];
                if let Some(c) = layout.phi_col(l.from) {
                    a[(rc, c)] -= kk * w_virtual[e];
                }
                if let Some(c) = layout.phi_col(l.to) {
                    a[(rc, c)] += kk * w_virtual[e];
                }
            }

            if config.area_control {
                for (kk, area) in grid.areas.iter().enumerate() {
                    let rc = layout.pi_col(kk).unwrap();
                    for &(e, sign) in &area.ties {
                        let l = &grid.lines[e];
                        let dd = config.k_pi[kk] * sign * w_virtual[e];
                        if let Some(c) = layout.phi_col(l.from) {
                            a[(rc, c)] += dd;
                        }
                        if let Some(c) = layout.phi_col(l.to) {
                            a[(rc, c)] -= dd;
                        }
                    }
                }
            }

            if duc {
                for (slot, &b) in grid.gen_buses().iter().enumerate() {
                    let tt = config.emu_turbine_t[slot];
                    let rp = layout.pmest_col(slot).unwrap();
                    a[(rp, rp)] -= 1.0 / tt;
                    match layout.vest_col(slot) {
                        Some(rv) => {
                            a[(rp, rv)] += 1.0 / tt;
                            let tg = config.emu_governor_t[slot];
                            a[(rv, rv)] -= 1.0 / tg;
                            for (c, v) in command_row(b) {
                                a[(rv, c)] += v / tg;
                            }
                        }
                        None => {
                            for (c, v) in command_row(b) {
                                a[(rp, c)] += v / tt;
                            }
                        }
                    }
                }
            }
        }
        ControllerKind::Agc => {
            for k in 0..layout.n_agc {
                let rc = layout.agc_col(k).unwrap();
                for (i, _) in grid.buses.iter().enumerate() {
                    if grid.area_of_bus(i).unwrap_or(0) != k {
                        continue;
                    }
                    for (c, v) in omega_row(i).into_iter().enumerate() {
                        if v != 0.0 {
                            a[(rc, c)] -= config.agc.gain * config.agc.bias[i] * v;
                        }
                    }
                }
                if config.area_control && k < grid.n_areas() {
                    for &(e, sign) in &grid.areas[k].ties {
                        let l = &grid.lines[e];
                        let dd = config.agc.gain * sign * w_plant[e];
                        if let Some(c) = layout.theta_col(l.from) {
                            a[(rc, c)] -= dd;
                        }
                        if let Some(c) = layout.theta_col(l.to) {
                            a[(rc, c)] += dd;
                        }
                    }
                }
            }
        }
        ControllerKind::Droop => {}
    }

    let labels = layout.labels(grid);
    let x0 = layout.reduce_state(grid, eq);
    Ok(LinearModel { a, labels, x0 })
}

/// Newton-refine a near-equilibrium state to a true closed-loop fixed point
/// for a fixed active set, using the analytic Jacobian. The result either
/// passes the linearization residual gate or an error is returned.
pub fn polish_equilibrium(
    grid: &GridModel,
    config: &ControllerConfig,
    turbine: TurbineModelKind,
    seed: &EquilibriumPoint,
    active: &ActiveSet,
) -> Result<EquilibriumPoint, StabilityError> {
    let layout = LinLayout::new(grid, config, turbine, active);
    let mut point = seed.clone();
    for _ in 0..20 {
        let mut x = layout.reduce_state(grid, &point);
        let f = reduced_rhs(grid, config, turbine, &point, &layout, &x)?;
        let residual = f.amax();
        if residual <= EQUILIBRIUM_TOL * 1e-3 {
            return Ok(point);
        }
        let model = assemble(grid, config, turbine, &point, active)?;
        let step = model
            .a
            .lu()
            .solve(&f)
            .ok_or_else(|| StabilityError::SingularElimination("Newton step failed".into()))?;
        x -= step;
        let (phys, ctrl) = layout.expand_state(grid, &point, &x);
        point = EquilibriumPoint {
            phys,
            ctrl,
            r: point.r,
        };
    }
    let x = layout.reduce_state(grid, &point);
    let residual = reduced_rhs(grid, config, turbine, &point, &layout, &x)?.amax();
    if residual <= EQUILIBRIUM_TOL {
        Ok(point)
    } else {
        Err(StabilityError::NotEquilibrium { residual })
    }
}

/// Full spectrum of the linear model through a real Schur decomposition.
pub fn eigenvalues(model: &LinearModel) -> Result<EigenReport, StabilityError> {
    eigenvalues_with_tol(model, ABSCISSA_TOL)
}

pub fn eigenvalues_with_tol(model: &LinearModel, tol: f64) -> Result<EigenReport, StabilityError> {
    if model.dim() == 0 {
        return Ok(EigenReport {
            eigenvalues: Vec::new(),
            spectral_abscissa: f64::NEG_INFINITY,
            classification: Classification::Stable,
            n_unstable: 0,
            tol,
        });
    }
    let schur = nalgebra::linalg::Schur::try_new(model.a.clone(), 1e-13, 100_000)
        .ok_or(StabilityError::EigNoConvergence)?;
    let eigs: Vec<Complex<f64>> = schur.complex_eigenvalues().iter().cloned().collect();
    let abscissa = eigs.iter().map(|c| c.re).fold(f64::NEG_INFINITY, f64::max);
    let n_unstable = eigs.iter().filter(|c| c.re > tol).count();
    let classification = if abscissa > tol {
        Classification::Unstable
    } else if abscissa.abs() <= tol {
        Classification::Marginal
    } else {
        Classification::Stable
    };
    Ok(EigenReport {
        eigenvalues: eigs,
        spectral_abscissa: abscissa,
        classification,
        n_unstable,
        tol,
    })
}

/// Spectral abscissa as a function of a common gain scale; locates the
/// stability boundary of a controller configuration.
pub fn gain_sweep(
    grid: &GridModel,
    config: &ControllerConfig,
    turbine: TurbineModelKind,
    eq: &EquilibriumPoint,
    active: &ActiveSet,
    scales: &[f64],
) -> Vec<(f64, Result<f64, StabilityError>)> {
    scales
        .iter()
        .map(|&s| {
            let scaled = config.scaled_gains(s);
            let result = linearize(grid, &scaled, turbine, eq, active)
                .and_then(|m| eigenvalues(&m))
                .map(|rep| rep.spectral_abscissa);
            (s, result)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{parse_grid, solve_equilibrium};

    fn diag_model(entries: &[f64]) -> LinearModel {
        let n = entries.len();
        let mut a = DMatrix::zeros(n, n);
        for (i, &v) in entries.iter().enumerate() {
            a[(i, i)] = v;
        }
        LinearModel {
            a,
            labels: (0..n).map(|i| format!("x{i}")).collect(),
            x0: DVector::zeros(n),
        }
    }

    #[test]
    fn diagonal_spectrum() {
        let rep = eigenvalues(&diag_model(&[-1.0, -2.0])).unwrap();
        let mut res: Vec<f64> = rep.eigenvalues.iter().map(|c| c.re).collect();
        res.sort_by(f64::total_cmp);
        assert!((res[0] + 2.0).abs() < 1e-12 && (res[1] + 1.0).abs() < 1e-12);
        assert_eq!(rep.classification, Classification::Stable);
    }

    #[test]
    fn rotation_is_marginal() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let rep = eigenvalues(&LinearModel {
            a,
            labels: vec!["x".into(), "y".into()],
            x0: DVector::zeros(2),
        })
        .unwrap();
        assert_eq!(rep.classification, Classification::Marginal);
        assert!(rep.eigenvalues.iter().any(|c| (c.im - 1.0).abs() < 1e-12));
        assert!(rep.eigenvalues.iter().any(|c| (c.im + 1.0).abs() < 1e-12));
    }

    /// Single generator with one tiny load neighbor removed: hand-derived
    /// 4x4 Jacobian over (omega, pmech, valve, lambda) for the unified
    /// controller with no congestion rows.
    #[test]
    fn single_generator_hand_jacobian() {
        // One generator bus only; the angle is the grounded reference, no
        // lines. States reduce to omega, pmech, valve, lambda.
        let grid = parse_grid(
            "\
[bus]
1 gen 2.0 0.5 3.0 1.0 -99 99 4.0 0.0
2 load - 1.0 - - -99 99 4.0 0.0
[line]
1 2 0.000001 -99 99
",
        )
        .unwrap();
        // Susceptance ~0 isolates the generator while keeping the graph
        // connected; compare only the generator block.
        let cfg = {
            let mut c = ControllerConfig::new(&grid, ControllerKind::Uc);
            c.k_lambda = vec![0.7; 2];
            c
        };
        let eqn = solve_equilibrium(&grid, &[0.0, 0.0]).unwrap();
        let turbine = TurbineModelKind::SecondOrder;
        let loop_ = ClosedLoop::new(&grid, &cfg, turbine);
        let (phys, ctrl) = loop_.initial_state(&eqn.theta);
        let eq = EquilibriumPoint {
            phys,
            ctrl,
            r: vec![0.0; 2],
        };
        let active = ActiveSet::all_inactive(&grid);
        let model = linearize(&grid, &cfg, turbine, &eq, &active).unwrap();
        let idx = |name: &str| model.labels.iter().position(|l| l == name).unwrap();
        let (m, d, tt, tg, alpha, k) = (2.0, 0.5, 3.0, 1.0, 4.0, 0.7);
        let rows = [
            ("omega_1", "omega_1", -d / m),
            ("omega_1", "pmech_1", 1.0 / m),
            ("pmech_1", "pmech_1", -1.0 / tt),
            ("pmech_1", "valve_1", 1.0 / tt),
            ("valve_1", "valve_1", -1.0 / tg),
            ("valve_1", "omega_1", -alpha / tg),
            ("valve_1", "lambda_1", -alpha / tg),
            ("lambda_1", "pmech_1", k),
        ];
        for (r, c, v) in rows {
            let got = model.a[(idx(r), idx(c))];
            assert!(
                (got - v).abs() < 1e-9,
                "A[{r},{c}] = {got}, expected {v}"
            );
        }
    }
}
