//! Distributed controllers: the unified primal-dual controller, its
//! decoupled variant with an internal turbine-governor emulator, and the
//! AGC / droop baselines.
//!
//! Controllers work in deviation coordinates around the pre-disturbance
//! dispatch: `lambda`, `phi` (virtual angles), line multipliers `rho`, area
//! multipliers `pi`, and for the decoupled variant the emulator states
//! `pm_est`/`valve_est` estimating the mechanical-power deviation. The
//! command deviation at bus i is `-alpha_i (omega_i + lambda_i)`, clipped so
//! the total commanded injection stays within the bus control limits.

use crate::network::GridModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerKind {
    /// Unified controller: primal-dual frequency control plus congestion
    /// management driven by physical measurements.
    Uc,
    /// Decoupled unified controller: replaces mechanical-power feedback with
    /// an internal emulator estimate.
    Duc,
    /// Frequency-bias integral control with participation factors.
    Agc,
    /// Proportional frequency feedback only.
    Droop,
}

impl ControllerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ControllerKind::Uc => "uc",
            ControllerKind::Duc => "duc",
            ControllerKind::Agc => "agc",
            ControllerKind::Droop => "droop",
        }
    }
}

/// AGC baseline settings.
#[derive(Debug, Clone)]
pub struct AgcConfig {
    /// Integral gain on the area control error.
    pub gain: f64,
    /// Frequency-bias coefficient per bus.
    pub bias: Vec<f64>,
    /// Participation factor per generator; sums to one.
    pub participation: Vec<f64>,
}

impl AgcConfig {
    /// Textbook defaults: bias `D_i + alpha_i`, uniform participation.
    pub fn defaults(grid: &GridModel) -> Self {
        let bias = grid
            .buses
            .iter()
            .map(|b| b.damping + b.alpha)
            .collect();
        let g = grid.n_gens();
        AgcConfig {
            gain: 0.05,
            bias,
            participation: vec![1.0 / g as f64; g],
        }
    }
}

/// Gains and options of a controller instance. Vectors are per bus, per
/// line, per area or per generator as noted.
#[derive(Debug, Clone)]
pub struct ControllerConfig {
    pub kind: ControllerKind,
    pub k_lambda: Vec<f64>,
    pub k_phi: Vec<f64>,
    pub k_rho_plus: Vec<f64>,
    pub k_rho_minus: Vec<f64>,
    pub k_pi: Vec<f64>,
    /// Disutility / droop coefficient per bus (defaults from the grid).
    pub alpha: Vec<f64>,
    /// Emulator turbine constants per generator (decoupled variant).
    pub emu_turbine_t: Vec<f64>,
    /// Emulator governor constants per generator (decoupled variant).
    pub emu_governor_t: Vec<f64>,
    /// Enforce scheduled inter-area flows through the `pi` multipliers.
    pub area_control: bool,
    /// Per-bus load actuation: when false the bus demand stays at its
    /// nominal value while `lambda`/`phi` are still computed and exchanged.
    /// Ignored at generator buses, which always actuate.
    pub load_side: Vec<bool>,
    pub agc: AgcConfig,
}

impl ControllerConfig {
    /// Unit gains, grid-supplied alpha, emulator constants equal to the
    /// plant's. Scenario files override from here.
    pub fn new(grid: &GridModel, kind: ControllerKind) -> Self {
        let n = grid.n_buses();
        let m = grid.n_lines();
        ControllerConfig {
            kind,
            k_lambda: vec![1.0; n],
            k_phi: vec![1.0; n],
            k_rho_plus: vec![1.0; m],
            k_rho_minus: vec![1.0; m],
            k_pi: vec![1.0; grid.n_areas().max(1)],
            alpha: grid.buses.iter().map(|b| b.alpha).collect(),
            emu_turbine_t: grid.gen_buses().iter().map(|&i| grid.buses[i].turbine_t).collect(),
            emu_governor_t: grid
                .gen_buses()
                .iter()
                .map(|&i| grid.buses[i].governor_t)
                .collect(),
            area_control: false,
            load_side: vec![false; n],
            agc: AgcConfig::defaults(grid),
        }
    }

    /// Copy with every controller gain (not alpha) multiplied by `scale`.
    pub fn scaled_gains(&self, scale: f64) -> Self {
        let mut out = self.clone();
        for v in [
            &mut out.k_lambda,
            &mut out.k_phi,
            &mut out.k_rho_plus,
            &mut out.k_rho_minus,
            &mut out.k_pi,
        ] {
            for x in v.iter_mut() {
                *x *= scale;
            }
        }
        out
    }

    /// Number of AGC integrators: one per declared area, else one.
    pub fn n_agc(&self, grid: &GridModel) -> usize {
        if grid.n_areas() > 0 {
            grid.n_areas()
        } else {
            1
        }
    }
}

/// Internal controller variables. Unused blocks are empty for a given kind.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub lambda: Vec<f64>,
    /// Virtual angles generating the virtual flows.
    pub phi: Vec<f64>,
    pub rho_plus: Vec<f64>,
    pub rho_minus: Vec<f64>,
    pub pi: Vec<f64>,
    /// Emulated mechanical-power deviation per generator (decoupled only).
    pub pm_est: Vec<f64>,
    /// Emulated valve deviation per generator (decoupled only).
    pub valve_est: Vec<f64>,
    /// AGC integral state per area.
    pub agc: Vec<f64>,
}

impl ControllerState {
    /// Pre-disturbance initialization: multipliers at zero, virtual angles at
    /// the physical equilibrium angles, emulator at zero deviation.
    /// `emulator_valve` selects a two-stage emulator (second-order plant).
    pub fn at_equilibrium(
        grid: &GridModel,
        config: &ControllerConfig,
        theta_eq: &[f64],
        emulator_valve: bool,
    ) -> Self {
        let n = grid.n_buses();
        let m = grid.n_lines();
        let g = grid.n_gens();
        match config.kind {
            ControllerKind::Uc | ControllerKind::Duc => {
                let duc = config.kind == ControllerKind::Duc;
                ControllerState {
                    lambda: vec![0.0; n],
                    phi: theta_eq.to_vec(),
                    rho_plus: vec![0.0; m],
                    rho_minus: vec![0.0; m],
                    pi: if config.area_control {
                        vec![0.0; grid.n_areas()]
                    } else {
                        Vec::new()
                    },
                    pm_est: if duc { vec![0.0; g] } else { Vec::new() },
                    valve_est: if duc && emulator_valve {
                        vec![0.0; g]
                    } else {
                        Vec::new()
                    },
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
                agc: vec![0.0; config.n_agc(grid)],
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
        }
    }

    /// Same shape with all entries zero, for holding derivatives.
    pub fn zeros_like(&self) -> Self {
        ControllerState {
            lambda: vec![0.0; self.lambda.len()],
            phi: vec![0.0; self.phi.len()],
            rho_plus: vec![0.0; self.rho_plus.len()],
            rho_minus: vec![0.0; self.rho_minus.len()],
            pi: vec![0.0; self.pi.len()],
            pm_est: vec![0.0; self.pm_est.len()],
            valve_est: vec![0.0; self.valve_est.len()],
            agc: vec![0.0; self.agc.len()],
        }
    }
}

/// Measurements the controllers are allowed to use: local frequencies, line
/// flows, the generator net-torque term `M_i * domega_i` (supplied
/// analytically by the plant model), and the applied bus injections.
#[derive(Debug, Clone)]
pub struct Measurements {
    /// Frequency deviation per bus, load entries from the algebraic balance.
    pub omega: Vec<f64>,
    /// Physical line flows.
    pub flows: Vec<f64>,
    /// `M_i * domega_i` per generator.
    pub accel: Vec<f64>,
    /// Applied total injection command per bus.
    pub applied: Vec<f64>,
}

/// Positive projection with gate variable: passes `x` when the gate `y` is
/// strictly positive or `x` itself is positive, else zero. Keeps multipliers
/// nonnegative along trajectories started at nonnegative values.
pub fn project(x: f64, y: f64) -> f64 {
    if y > 0.0 || x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Virtual line flows `B_ij sin(phi_i - phi_j)` generated by the virtual angles.
pub fn virtual_flows(grid: &GridModel, phi: &[f64]) -> Vec<f64> {
    crate::network::line_flows(grid, phi)
}

/// Command deviation before limits: `-alpha (omega + lambda)`.
pub fn raw_command(alpha: f64, omega: f64, lambda: f64) -> f64 {
    -alpha * (omega + lambda)
}

/// Commanded deviation clipped to the control limits expressed around the
/// operating point: `clip(-alpha (omega + lambda), lo, hi)`.
pub fn control_command(alpha: f64, omega: f64, lambda: f64, lo: f64, hi: f64) -> f64 {
    raw_command(alpha, omega, lambda).clamp(lo, hi)
}

/// Clip a deviation command so the total injection honors the bus limits.
pub fn clip_deviation(grid: &GridModel, bus: usize, dev: f64) -> f64 {
    let b = &grid.buses[bus];
    dev.clamp(b.p_min - b.injection, b.p_max - b.injection)
}

/// Applied total injection per bus for the current states.
///
/// Generator buses always actuate. Load buses actuate only under load-side
/// control; otherwise their demand stays at the nominal injection.
pub fn applied_commands(
    grid: &GridModel,
    config: &ControllerConfig,
    omega: &[f64],
    ctrl: &ControllerState,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(grid.n_buses());
    for (i, bus) in grid.buses.iter().enumerate() {
        let dev = match config.kind {
            ControllerKind::Uc | ControllerKind::Duc => {
                raw_command(config.alpha[i], omega[i], ctrl.lambda[i])
            }
            ControllerKind::Droop => raw_command(config.alpha[i], omega[i], 0.0),
            ControllerKind::Agc => match grid.gen_slot(i) {
                Some(slot) => {
                    let area = grid.area_of_bus(i).unwrap_or(0);
                    -config.alpha[i] * omega[i]
                        + config.agc.participation[slot] * ctrl.agc[area]
                }
                None => 0.0,
            },
        };
        let actuates = bus.is_gen()
            || (config.load_side[i]
                && matches!(
                    config.kind,
                    ControllerKind::Uc | ControllerKind::Duc | ControllerKind::Droop
                ));
        if actuates {
            out.push(bus.injection + clip_deviation(grid, i, dev));
        } else {
            out.push(bus.injection);
        }
    }
    out
}

/// Per-line multiplier mismatch driving the virtual-angle dynamics:
/// `lambda_from - lambda_to - rho+ + rho- - sum of oriented pi`.
fn line_multiplier_mismatch(grid: &GridModel, config: &ControllerConfig, ctrl: &ControllerState) -> Vec<f64> {
    let mut mu: Vec<f64> = grid
        .lines
        .iter()
        .enumerate()
        .map(|(e, l)| {
            ctrl.lambda[l.from] - ctrl.lambda[l.to] - ctrl.rho_plus[e] + ctrl.rho_minus[e]
        })
        .collect();
    if config.area_control {
        for (k, area) in grid.areas.iter().enumerate() {
            for &(e, sign) in &area.ties {
                mu[e] -= sign * ctrl.pi[k];
            }
        }
    }
    mu
}

/// Shared virtual-angle, line-multiplier and area-multiplier dynamics of the
/// unified and decoupled controllers.
fn phi_rho_pi_rhs(
    grid: &GridModel,
    config: &ControllerConfig,
    ctrl: &ControllerState,
    virtual_flows: &[f64],
    out: &mut ControllerState,
) {
    let mu = line_multiplier_mismatch(grid, config, ctrl);
    for (i, dphi) in out.phi.iter_mut().enumerate() {
        let mut acc = 0.0;
        for &(e, sign) in grid.incident(i) {
            acc += sign * grid.lines[e].susceptance * mu[e];
        }
        *dphi = config.k_phi[i] * acc;
    }
    for (e, line) in grid.lines.iter().enumerate() {
        out.rho_plus[e] = config.k_rho_plus[e]
            * project(virtual_flows[e] - line.p_max, ctrl.rho_plus[e]);
        out.rho_minus[e] = config.k_rho_minus[e]
            * project(line.p_min - virtual_flows[e], ctrl.rho_minus[e]);
    }
    if config.area_control {
        for (k, area) in grid.areas.iter().enumerate() {
            let export: f64 = area
                .ties
                .iter()
                .map(|&(e, sign)| sign * virtual_flows[e])
                .sum();
            out.pi[k] = config.k_pi[k] * (export - area.schedule);
        }
    }
}

/// Unified-controller dynamics: multiplier updates driven by the measured
/// power imbalance and the virtual-vs-physical flow mismatch.
pub fn uc_rhs(
    grid: &GridModel,
    config: &ControllerConfig,
    ctrl: &ControllerState,
    meas: &Measurements,
) -> ControllerState {
    let mut out = ctrl.zeros_like();
    let p_hat = virtual_flows(grid, &ctrl.phi);
    let sums = grid.flow_sums(&meas.flows);
    let hat_sums = grid.flow_sums(&p_hat);
    for (i, bus) in grid.buses.iter().enumerate() {
        let mismatch = sums[i] - hat_sums[i];
        let torque = match grid.gen_slot(i) {
            Some(slot) => meas.accel[slot],
            None => 0.0,
        };
        out.lambda[i] =
            config.k_lambda[i] * (torque + bus.damping * meas.omega[i] + mismatch);
    }
    phi_rho_pi_rhs(grid, config, ctrl, &p_hat, &mut out);
    out
}

/// Decoupled-controller dynamics. Relative to the unified controller the
/// lambda updates subtract `alpha_i lambda_i` plus the emulator estimate
/// (generators) or the load command (loads), and the emulator chain tracks
/// the commanded deviation through the assumed turbine/governor lags.
pub fn duc_rhs(
    grid: &GridModel,
    config: &ControllerConfig,
    ctrl: &ControllerState,
    meas: &Measurements,
) -> ControllerState {
    let mut out = ctrl.zeros_like();
    let p_hat = virtual_flows(grid, &ctrl.phi);
    let sums = grid.flow_sums(&meas.flows);
    let hat_sums = grid.flow_sums(&p_hat);
    for (i, bus) in grid.buses.iter().enumerate() {
        let mismatch = sums[i] - hat_sums[i];
        let feedback = match grid.gen_slot(i) {
            Some(slot) => {
                meas.accel[slot] + bus.damping * meas.omega[i] + mismatch
                    - config.alpha[i] * ctrl.lambda[i]
                    - ctrl.pm_est[slot]
            }
            None => {
                // The extra terms exist to cancel the load's own actuation
                // out of the measured balance; a passive load has nothing to
                // cancel and keeps the plain balance form.
                if config.load_side[i] {
                    let dev = meas.applied[i] - bus.injection;
                    bus.damping * meas.omega[i] + mismatch
                        - config.alpha[i] * ctrl.lambda[i]
                        - dev
                } else {
                    bus.damping * meas.omega[i] + mismatch
                }
            }
        };
        out.lambda[i] = config.k_lambda[i] * feedback;
    }
    phi_rho_pi_rhs(grid, config, ctrl, &p_hat, &mut out);
    // Emulator: same structure as the plant turbine chain, driven by the
    // clipped command deviation.
    for (slot, &bus) in grid.gen_buses().iter().enumerate() {
        let u = clip_deviation(
            grid,
            bus,
            raw_command(config.alpha[bus], meas.omega[bus], ctrl.lambda[bus]),
        );
        if ctrl.valve_est.is_empty() {
            out.pm_est[slot] = (u - ctrl.pm_est[slot]) / config.emu_turbine_t[slot];
        } else {
            out.pm_est[slot] =
                (ctrl.valve_est[slot] - ctrl.pm_est[slot]) / config.emu_turbine_t[slot];
            out.valve_est[slot] = (u - ctrl.valve_est[slot]) / config.emu_governor_t[slot];
        }
    }
    out
}

/// AGC dynamics: per-area integral of the area control error. Returns the
/// integral derivatives and the generator deviation commands (droop plus
/// participation share), before limit clipping.
pub fn agc_rhs(
    grid: &GridModel,
    config: &ControllerConfig,
    omega: &[f64],
    flows: &[f64],
    agc_state: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let n_areas = agc_state.len();
    let mut ace = vec![0.0; n_areas];
    for (i, _) in grid.buses.iter().enumerate() {
        let area = grid.area_of_bus(i).unwrap_or(0);
        ace[area] += config.agc.bias[i] * omega[i];
    }
    if config.area_control {
        for (k, area) in grid.areas.iter().enumerate() {
            let export: f64 = area.ties.iter().map(|&(e, s)| s * flows[e]).sum();
            ace[k] += export - area.schedule;
        }
    }
    let ds: Vec<f64> = ace.iter().map(|a| -config.agc.gain * a).collect();
    let commands = grid
        .gen_buses()
        .iter()
        .enumerate()
        .map(|(slot, &bus)| {
            let area = grid.area_of_bus(bus).unwrap_or(0);
            -config.alpha[bus] * omega[bus] + config.agc.participation[slot] * agc_state[area]
        })
        .collect();
    (ds, commands)
}

/// Which side of the disturbance estimate to form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimateSide {
    /// Exact per-bus disturbance from the load power balance.
    Load,
    /// Lumped `r_i + p_i^M` from the generator swing balance.
    Generator,
}

/// Disturbance estimation from local measurements.
///
/// Load side recovers `r_i = D_i omega_i + sum P_ij - p_i` exactly;
/// generator side returns the lumped `r_i + p_i^M = M_i domega_i +
/// D_i omega_i + sum P_ij`. Entries for buses of the other side are zero.
pub fn estimate_disturbance(
    grid: &GridModel,
    meas: &Measurements,
    side: EstimateSide,
) -> Vec<f64> {
    let sums = grid.flow_sums(&meas.flows);
    grid.buses
        .iter()
        .enumerate()
        .map(|(i, bus)| match (side, grid.gen_slot(i)) {
            (EstimateSide::Load, None) => {
                bus.damping * meas.omega[i] + sums[i] - meas.applied[i]
            }
            (EstimateSide::Generator, Some(slot)) => {
                meas.accel[slot] + bus.damping * meas.omega[i] + sums[i]
            }
            _ => 0.0,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::parse_grid;

    const ONE_GEN: &str = "\
[bus]
34 gen 10.0 2.0 3.0 1.0 -99 99 1.0 0.0
35 load -   2.0 -   -   -99 99 1.0 0.0
[line]
34 35 10.0 -99 99
";

    fn tiny() -> crate::network::GridModel {
        parse_grid(ONE_GEN).unwrap()
    }

    #[test]
    fn projection_matches_printed_definition() {
        assert_eq!(project(5.0, -1.0), 5.0);
        assert_eq!(project(-3.0, 0.0), 0.0);
        assert_eq!(project(-3.0, 2.0), -3.0);
    }

    #[test]
    fn command_arithmetic_and_clipping() {
        assert_eq!(control_command(1.0, 0.0, 0.0, -1.0, 1.0), 0.0);
        let c = control_command(20.0, 0.01, 0.02, -10.0, 10.0);
        assert!((c + 0.6).abs() < 1e-15);
        assert_eq!(control_command(20.0, 0.02, 0.04, -1.0, 1.0), -1.0);
    }

    #[test]
    fn virtual_flows_match_sine_law() {
        let g = tiny();
        assert_eq!(virtual_flows(&g, &[0.2, 0.2]), vec![0.0]);
        let f = virtual_flows(&g, &[std::f64::consts::FRAC_PI_6, 0.0]);
        assert!((f[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn uc_lambda_rate_from_damping_term() {
        // Net torque forced to zero, only D*omega = 2 * 0.01 drives lambda.
        let g = tiny();
        let cfg = ControllerConfig::new(&g, ControllerKind::Uc);
        let ctrl = ControllerState::at_equilibrium(&g, &cfg, &[0.0, 0.0], true);
        let meas = Measurements {
            omega: vec![0.01, 0.0],
            flows: vec![0.0],
            accel: vec![0.0],
            applied: vec![0.0, 0.0],
        };
        let d = uc_rhs(&g, &cfg, &ctrl, &meas);
        assert!((d.lambda[0] - 0.02).abs() < 1e-15);
    }

    #[test]
    fn duc_lambda_rest_is_stationary() {
        let g = tiny();
        let cfg = ControllerConfig::new(&g, ControllerKind::Duc);
        let ctrl = ControllerState::at_equilibrium(&g, &cfg, &[0.0, 0.0], true);
        let meas = Measurements {
            omega: vec![0.0, 0.0],
            flows: vec![0.0],
            accel: vec![0.0],
            applied: vec![0.0, 0.0],
        };
        let d = duc_rhs(&g, &cfg, &ctrl, &meas);
        assert!(d.lambda.iter().all(|x| x.abs() < 1e-15));
        assert!(d.pm_est.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn agc_droop_component() {
        // alpha = 1/R = 20, uniform omega = -0.01 -> +0.2 pu per generator.
        let text = ONE_GEN.replace(" 1.0 0.0", " 20.0 0.0");
        let g = parse_grid(&text).unwrap();
        let cfg = ControllerConfig::new(&g, ControllerKind::Agc);
        let (_, commands) = agc_rhs(&g, &cfg, &[-0.01, -0.01], &[0.0], &[0.0]);
        assert!((commands[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn agc_rest_gives_zero_commands() {
        let g = tiny();
        let cfg = ControllerConfig::new(&g, ControllerKind::Agc);
        let (ds, commands) = agc_rhs(&g, &cfg, &[0.0, 0.0], &[0.0], &[0.0]);
        assert_eq!(ds, vec![0.0]);
        assert_eq!(commands, vec![0.0]);
    }
}
