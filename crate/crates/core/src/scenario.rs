//! Scenario files: grid reference, disturbance schedule, controller
//! configuration, integration settings and output selection.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::controller::{ControllerConfig, ControllerKind};
use crate::dynamics::{Disturbance, TurbineModelKind};
use crate::network::{load_grid, GridError, GridModel};

/// One experiment description, as parsed from a scenario file.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub grid_path: PathBuf,
    pub horizon: f64,
    pub step: f64,
    /// Recording interval for time series.
    pub decimation: f64,
    pub turbine: TurbineModelKind,
    /// Frequency band defining "settled", pu.
    pub settling_tol: f64,
    /// Oscillation-detector window, seconds.
    pub osc_window: f64,
    /// Bus whose lambda trace is monitored in sweeps, if any.
    pub monitor: Option<usize>,
    pub records: Vec<Selector>,
    pub disturbance: Vec<(f64, usize, f64)>,
    pub controller: ControllerSpec,
}

/// Controller block before binding to a grid (ids not yet resolved).
#[derive(Debug, Clone)]
pub struct ControllerSpec {
    pub kind: ControllerKind,
    pub k_lambda: BroadcastGain,
    pub k_phi: BroadcastGain,
    pub k_rho_plus: BroadcastGain,
    pub k_rho_minus: BroadcastGain,
    pub k_pi: BroadcastGain,
    pub alpha: Option<BroadcastGain>,
    pub gain_scale: f64,
    pub t_turbine_factor: f64,
    pub t_governor_factor: f64,
    pub area_control: bool,
    pub load_side_control: bool,
    pub load_side_overrides: Vec<(usize, bool)>,
    pub agc_gain: Option<f64>,
}

impl Default for ControllerSpec {
    fn default() -> Self {
        ControllerSpec {
            kind: ControllerKind::Uc,
            k_lambda: BroadcastGain::new(1.0),
            k_phi: BroadcastGain::new(1.0),
            k_rho_plus: BroadcastGain::new(1.0),
            k_rho_minus: BroadcastGain::new(1.0),
            k_pi: BroadcastGain::new(1.0),
            alpha: None,
            gain_scale: 1.0,
            t_turbine_factor: 1.0,
            t_governor_factor: 1.0,
            area_control: false,
            load_side_control: false,
            load_side_overrides: Vec::new(),
            agc_gain: None,
        }
    }
}

/// A scalar value with optional per-entity overrides (`key@entity value`).
#[derive(Debug, Clone)]
pub struct BroadcastGain {
    pub base: f64,
    /// Entity key (bus id, line `from-to`, or area id) to value.
    pub overrides: Vec<(String, f64)>,
}

impl BroadcastGain {
    pub fn new(base: f64) -> Self {
        BroadcastGain {
            base,
            overrides: Vec::new(),
        }
    }
}

/// What to record from a run.
#[derive(Debug, Clone, PartialEq)]
pub enum Selector {
    Omega(Target),
    Lambda(Target),
    Phi(Target),
    Flow(LineTarget),
    Applied(usize),
    PMech(usize),
    PMechEst(usize),
    RhoPlus(usize, usize),
    RhoMinus(usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Bus(usize),
    All,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LineTarget {
    Line(usize, usize),
    All,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario file: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario parse error at line {line_no}: {msg}")]
    Parse { line_no: usize, msg: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Load a scenario file and apply `key=value` overrides (`controller.`-
/// prefixed keys address the controller block).
pub fn load_scenario<P: AsRef<Path>>(
    path: P,
    overrides: &[String],
) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let base_dir = path.parent().unwrap_or_else(|| Path::new("."));
    parse_scenario(&text, base_dir, overrides)
}

pub fn parse_scenario(
    text: &str,
    base_dir: &Path,
    overrides: &[String],
) -> Result<Scenario, ScenarioError> {
    let mut grid_path: Option<PathBuf> = None;
    let mut horizon = None;
    let mut step = 1e-3;
    let mut decimation = 1e-2;
    let mut turbine = TurbineModelKind::SecondOrder;
    let mut settling_tol = 1e-3;
    let mut osc_window: Option<f64> = None;
    let mut monitor = None;
    let mut records = Vec::new();
    let mut disturbance = Vec::new();
    let mut ctrl = ControllerSpec::default();

    #[derive(PartialEq)]
    enum Section {
        Top,
        Disturbance,
        Controller,
    }
    let mut section = Section::Top;

    let perr = |line_no: usize, msg: String| ScenarioError::Parse { line_no, msg };

    // Overrides are appended as synthetic lines of the matching section.
    let mut top_extra = Vec::new();
    let mut ctrl_extra = Vec::new();
    for ov in overrides {
        let (key, value) = ov.split_once('=').ok_or_else(|| {
            ScenarioError::Invalid(format!("override `{ov}` must look like key=value"))
        })?;
        match key.strip_prefix("controller.") {
            Some(k) => ctrl_extra.push(format!("{k} {value}")),
            None => top_extra.push(format!("{key} {value}")),
        }
    }

    let lines: Vec<(usize, String, u8)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.to_string(), 0u8))
        .chain(top_extra.iter().map(|l| (0, l.clone(), 1u8)))
        .chain(ctrl_extra.iter().map(|l| (0, l.clone(), 2u8)))
        .collect();

    for (line_no, raw, forced) in lines {
        let stripped = match raw.find('#') {
            Some(p) => &raw[..p],
            None => &raw[..],
        };
        let trimmed = stripped.trim();
        if trimmed.is_empty() {
            continue;
        }
        match (trimmed, forced) {
            ("[disturbance]", 0) => {
                section = Section::Disturbance;
                continue;
            }
            ("[controller]", 0) => {
                section = Section::Controller;
                continue;
            }
            _ => {}
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        let in_ctrl = forced == 2 || (forced == 0 && section == Section::Controller);
        let in_dist = forced == 0 && section == Section::Disturbance;
        if in_dist {
            if fields.len() != 3 {
                return Err(perr(line_no, "disturbance row needs: time bus delta".into()));
            }
            let t: f64 = num(fields[0], line_no, "time")?;
            let bus: usize = int(fields[1], line_no, "bus id")?;
            let dr: f64 = num(fields[2], line_no, "delta")?;
            disturbance.push((t, bus, dr));
            continue;
        }
        let key = fields[0];
        let rest = &fields[1..];
        let one = |name: &str| -> Result<&str, ScenarioError> {
            rest.first().copied().ok_or(ScenarioError::Parse {
                line_no,
                msg: format!("{name} needs a value"),
            })
        };
        if in_ctrl {
            let (base_key, entity) = match key.split_once('@') {
                Some((k, e)) => (k, Some(e.to_string())),
                None => (key, None),
            };
            let set_gain = |g: &mut BroadcastGain, v: f64, entity: Option<String>| match entity {
                Some(e) => g.overrides.push((e, v)),
                None => g.base = v,
            };
            match base_key {
                "kind" => {
                    ctrl.kind = match one("kind")? {
                        "uc" => ControllerKind::Uc,
                        "duc" => ControllerKind::Duc,
                        "agc" => ControllerKind::Agc,
                        "droop" => ControllerKind::Droop,
                        other => {
                            return Err(perr(line_no, format!("unknown controller kind `{other}`")))
                        }
                    }
                }
                "k_lambda" => set_gain(&mut ctrl.k_lambda, num(one("k_lambda")?, line_no, "k_lambda")?, entity),
                "k_phi" => set_gain(&mut ctrl.k_phi, num(one("k_phi")?, line_no, "k_phi")?, entity),
                "k_rho" => {
                    let v = num(one("k_rho")?, line_no, "k_rho")?;
                    set_gain(&mut ctrl.k_rho_plus, v, entity.clone());
                    set_gain(&mut ctrl.k_rho_minus, v, entity);
                }
                "k_rho_plus" => set_gain(
                    &mut ctrl.k_rho_plus,
                    num(one("k_rho_plus")?, line_no, "k_rho_plus")?,
                    entity,
                ),
                "k_rho_minus" => set_gain(
                    &mut ctrl.k_rho_minus,
                    num(one("k_rho_minus")?, line_no, "k_rho_minus")?,
                    entity,
                ),
                "k_pi" => set_gain(&mut ctrl.k_pi, num(one("k_pi")?, line_no, "k_pi")?, entity),
                "alpha" => {
                    let v = num(one("alpha")?, line_no, "alpha")?;
                    let g = ctrl.alpha.get_or_insert_with(|| BroadcastGain::new(v));
                    set_gain(g, v, entity);
                }
                "gain_scale" => ctrl.gain_scale = num(one("gain_scale")?, line_no, "gain_scale")?,
                "t_turbine_factor" => {
                    ctrl.t_turbine_factor = num(one("t_turbine_factor")?, line_no, "factor")?
                }
                "t_governor_factor" => {
                    ctrl.t_governor_factor = num(one("t_governor_factor")?, line_no, "factor")?
                }
                "area_control" => ctrl.area_control = flag(one("area_control")?, line_no)?,
                "load_side_control" => match entity {
                    Some(e) => {
                        let bus = e.parse().map_err(|_| perr(line_no, format!("bad bus `{e}`")))?;
                        let v = flag(one("load_side_control")?, line_no)?;
                        ctrl.load_side_overrides.push((bus, v));
                    }
                    None => ctrl.load_side_control = flag(one("load_side_control")?, line_no)?,
                },
                "agc_gain" => ctrl.agc_gain = Some(num(one("agc_gain")?, line_no, "agc_gain")?),
                other => return Err(perr(line_no, format!("unknown controller key `{other}`"))),
            }
            continue;
        }
        match key {
            "grid" => grid_path = Some(base_dir.join(one("grid")?)),
            "horizon" => horizon = Some(num(one("horizon")?, line_no, "horizon")?),
            "step" => step = num(one("step")?, line_no, "step")?,
            "decimation" => decimation = num(one("decimation")?, line_no, "decimation")?,
            "turbine" => {
                turbine = match one("turbine")? {
                    "second-order" => TurbineModelKind::SecondOrder,
                    "first-order" => TurbineModelKind::FirstOrder,
                    other => return Err(perr(line_no, format!("unknown turbine kind `{other}`"))),
                }
            }
            "settling_tol" => settling_tol = num(one("settling_tol")?, line_no, "settling_tol")?,
            "osc_window" => osc_window = Some(num(one("osc_window")?, line_no, "osc_window")?),
            "monitor" => monitor = Some(int(one("monitor")?, line_no, "monitor bus")?),
            "record" => {
                for sel in rest {
                    records.push(parse_selector(sel, line_no)?);
                }
            }
            other => return Err(perr(line_no, format!("unknown key `{other}`"))),
        }
    }

    let horizon = horizon.ok_or_else(|| ScenarioError::Invalid("horizon not set".into()))?;
    let scenario = Scenario {
        grid_path: grid_path.ok_or_else(|| ScenarioError::Invalid("grid not set".into()))?,
        horizon,
        step,
        decimation,
        turbine,
        settling_tol,
        osc_window: osc_window.unwrap_or(horizon / 8.0),
        monitor,
        records,
        disturbance,
        controller: ctrl,
    };
    scenario.validate()?;
    Ok(scenario)
}

fn num(s: &str, line_no: usize, name: &str) -> Result<f64, ScenarioError> {
    s.parse().map_err(|_| ScenarioError::Parse {
        line_no,
        msg: format!("bad {name} `{s}`"),
    })
}

fn int(s: &str, line_no: usize, name: &str) -> Result<usize, ScenarioError> {
    s.parse().map_err(|_| ScenarioError::Parse {
        line_no,
        msg: format!("bad {name} `{s}`"),
    })
}

fn flag(s: &str, line_no: usize) -> Result<bool, ScenarioError> {
    match s {
        "on" | "true" | "yes" => Ok(true),
        "off" | "false" | "no" => Ok(false),
        other => Err(ScenarioError::Parse {
            line_no,
            msg: format!("expected on/off, got `{other}`"),
        }),
    }
}

fn parse_selector(s: &str, line_no: usize) -> Result<Selector, ScenarioError> {
    let (kind, target) = s.split_once(':').ok_or_else(|| ScenarioError::Parse {
        line_no,
        msg: format!("selector `{s}` must look like kind:target"),
    })?;
    let bus_target = |t: &str| -> Result<Target, ScenarioError> {
        if t == "all" {
            Ok(Target::All)
        } else {
            Ok(Target::Bus(int(t, line_no, "selector bus")?))
        }
    };
    let line_target = |t: &str| -> Result<LineTarget, ScenarioError> {
        if t == "all" {
            return Ok(LineTarget::All);
        }
        let (a, b) = t.split_once('-').ok_or_else(|| ScenarioError::Parse {
            line_no,
            msg: format!("line selector `{t}` must look like from-to"),
        })?;
        Ok(LineTarget::Line(
            int(a, line_no, "selector bus")?,
            int(b, line_no, "selector bus")?,
        ))
    };
    match kind {
        "omega" => Ok(Selector::Omega(bus_target(target)?)),
        "lambda" => Ok(Selector::Lambda(bus_target(target)?)),
        "phi" => Ok(Selector::Phi(bus_target(target)?)),
        "flow" => Ok(Selector::Flow(line_target(target)?)),
        "p" => Ok(Selector::Applied(int(target, line_no, "selector bus")?)),
        "pmech" => Ok(Selector::PMech(int(target, line_no, "selector bus")?)),
        "pmech_est" => Ok(Selector::PMechEst(int(target, line_no, "selector bus")?)),
        "rho+" => match line_target(target)? {
            LineTarget::Line(a, b) => Ok(Selector::RhoPlus(a, b)),
            LineTarget::All => Err(ScenarioError::Parse {
                line_no,
                msg: "rho selectors need a specific line".into(),
            }),
        },
        "rho-" => match line_target(target)? {
            LineTarget::Line(a, b) => Ok(Selector::RhoMinus(a, b)),
            LineTarget::All => Err(ScenarioError::Parse {
                line_no,
                msg: "rho selectors need a specific line".into(),
            }),
        },
        other => Err(ScenarioError::Parse {
            line_no,
            msg: format!("unknown selector kind `{other}`"),
        }),
    }
}

impl Scenario {
    fn validate(&self) -> Result<(), ScenarioError> {
        if self.horizon <= 0.0 || self.step <= 0.0 {
            return Err(ScenarioError::Invalid(
                "horizon and step must be positive".into(),
            ));
        }
        if self.step > self.horizon / 100.0 {
            return Err(ScenarioError::Invalid(format!(
                "step {} too coarse for horizon {} (need step <= horizon/100)",
                self.step, self.horizon
            )));
        }
        if self.decimation < self.step {
            return Err(ScenarioError::Invalid(
                "decimation below the integration step".into(),
            ));
        }
        if self.disturbance.iter().any(|d| d.0 < 0.0) {
            return Err(ScenarioError::Invalid(
                "disturbance times must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    pub fn load_grid(&self) -> Result<GridModel, ScenarioError> {
        Ok(load_grid(&self.grid_path)?)
    }

    /// Bind the controller block to a grid, resolving per-entity overrides.
    pub fn build_config(&self, grid: &GridModel) -> Result<ControllerConfig, ScenarioError> {
        let spec = &self.controller;
        let mut cfg = ControllerConfig::new(grid, spec.kind);
        let n = grid.n_buses();

        let resolve_bus = |g: &BroadcastGain| -> Result<Vec<f64>, ScenarioError> {
            let mut v = vec![g.base; n];
            for (key, val) in &g.overrides {
                let id: usize = key
                    .parse()
                    .map_err(|_| ScenarioError::Invalid(format!("bad bus id `{key}`")))?;
                let idx = grid
                    .bus_by_id(id)
                    .ok_or_else(|| ScenarioError::Invalid(format!("unknown bus {id}")))?;
                v[idx] = *val;
            }
            Ok(v)
        };
        let resolve_line = |g: &BroadcastGain| -> Result<Vec<f64>, ScenarioError> {
            let mut v = vec![g.base; grid.n_lines()];
            for (key, val) in &g.overrides {
                let (a, b) = key.split_once('-').ok_or_else(|| {
                    ScenarioError::Invalid(format!("bad line key `{key}` (need from-to)"))
                })?;
                let (a, b): (usize, usize) = (
                    a.parse()
                        .map_err(|_| ScenarioError::Invalid(format!("bad bus id `{a}`")))?,
                    b.parse()
                        .map_err(|_| ScenarioError::Invalid(format!("bad bus id `{b}`")))?,
                );
                let e = grid
                    .line_between(a, b)
                    .ok_or_else(|| ScenarioError::Invalid(format!("no line {a}-{b}")))?;
                v[e] = *val;
            }
            Ok(v)
        };
        let resolve_area = |g: &BroadcastGain| -> Result<Vec<f64>, ScenarioError> {
            let mut v = vec![g.base; grid.n_areas().max(1)];
            for (key, val) in &g.overrides {
                let id: usize = key
                    .parse()
                    .map_err(|_| ScenarioError::Invalid(format!("bad area id `{key}`")))?;
                let k = grid
                    .areas
                    .iter()
                    .position(|a| a.id == id)
                    .ok_or_else(|| ScenarioError::Invalid(format!("unknown area {id}")))?;
                v[k] = *val;
            }
            Ok(v)
        };

        let s = spec.gain_scale;
        cfg.k_lambda = resolve_bus(&spec.k_lambda)?.iter().map(|v| v * s).collect();
        cfg.k_phi = resolve_bus(&spec.k_phi)?.iter().map(|v| v * s).collect();
        cfg.k_rho_plus = resolve_line(&spec.k_rho_plus)?.iter().map(|v| v * s).collect();
        cfg.k_rho_minus = resolve_line(&spec.k_rho_minus)?.iter().map(|v| v * s).collect();
        cfg.k_pi = resolve_area(&spec.k_pi)?.iter().map(|v| v * s).collect();
        if let Some(alpha) = &spec.alpha {
            cfg.alpha = resolve_bus(alpha)?;
        }
        for (slot, &bus) in grid.gen_buses().iter().enumerate() {
            cfg.emu_turbine_t[slot] = grid.buses[bus].turbine_t * spec.t_turbine_factor;
            cfg.emu_governor_t[slot] = grid.buses[bus].governor_t * spec.t_governor_factor;
        }
        cfg.area_control = spec.area_control && grid.n_areas() > 0;
        cfg.load_side = vec![spec.load_side_control; n];
        for &(bus, v) in &spec.load_side_overrides {
            let idx = grid
                .bus_by_id(bus)
                .ok_or_else(|| ScenarioError::Invalid(format!("unknown bus {bus}")))?;
            cfg.load_side[idx] = v;
        }
        if let Some(g) = spec.agc_gain {
            cfg.agc.gain = g;
        }
        Ok(cfg)
    }

    /// Resolve the disturbance schedule against a grid.
    pub fn build_disturbance(&self, grid: &GridModel) -> Result<Disturbance, ScenarioError> {
        let mut steps = Vec::with_capacity(self.disturbance.len());
        for &(t, id, dr) in &self.disturbance {
            let bus = grid
                .bus_by_id(id)
                .ok_or_else(|| ScenarioError::Invalid(format!("disturbance on unknown bus {id}")))?;
            steps.push((t, bus, dr));
        }
        Disturbance::new(steps).map_err(|e| ScenarioError::Invalid(e.to_string()))
    }
}
