//! Grid data model, per-unit conventions, and the steady-state power flow
//! used to initialize every simulation.
//!
//! All powers are in per unit on a common MVA base (default 100 MVA),
//! frequency deviations in pu of nominal, angles in radians, time constants
//! in seconds. The network is lossless: line flows follow
//! `P_ij = B_ij * sin(theta_i - theta_j)`.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Default common power base when the grid file does not declare one.
pub const DEFAULT_BASE_MVA: f64 = 100.0;

/// Net-injection imbalance beyond this is rejected by the equilibrium solve.
pub const IMBALANCE_TOL: f64 = 1e-8;

/// Per-bus residual target of the Newton power-flow solve.
pub const POWER_FLOW_TOL: f64 = 1e-11;

const NEWTON_MAX_ITER: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BusKind {
    Generator,
    Load,
}

impl fmt::Display for BusKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BusKind::Generator => write!(f, "gen"),
            BusKind::Load => write!(f, "load"),
        }
    }
}

/// One bus of the network. Generator buses carry rotor inertia and a
/// two-stage turbine/governor chain; load buses only a frequency-sensitive
/// demand. `injection` is the nominal (pre-disturbance) net power injection.
#[derive(Debug, Clone)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    /// Inertia constant, pu·s (generator buses).
    pub inertia: f64,
    /// Frequency sensitivity of generation/demand, pu power per pu frequency.
    pub damping: f64,
    /// Turbine time constant, s (generator buses).
    pub turbine_t: f64,
    /// Governor time constant, s (generator buses).
    pub governor_t: f64,
    /// Control limits on the total commanded injection, pu.
    pub p_min: f64,
    pub p_max: f64,
    /// Disutility coefficient of control deviations (also the droop gain).
    pub alpha: f64,
    /// Nominal net injection, pu (positive = generation).
    pub injection: f64,
}

impl Bus {
    pub fn is_gen(&self) -> bool {
        self.kind == BusKind::Generator
    }
}

/// One transmission line, oriented `from -> to` for flow bookkeeping.
#[derive(Debug, Clone)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    /// Susceptance, pu.
    pub susceptance: f64,
    /// Flow limits in the line's own orientation, pu.
    pub p_min: f64,
    pub p_max: f64,
}

/// A control area: a set of oriented tie lines and the scheduled net export.
///
/// Each tie is `(line index, sign)`; `sign = +1` when the line's `from -> to`
/// orientation points out of the area.
#[derive(Debug, Clone)]
pub struct AreaSpec {
    pub id: usize,
    pub ties: Vec<(usize, f64)>,
    pub schedule: f64,
}

/// Immutable validated network description.
///
/// Bus/line vectors use dense internal indices; `bus_index` maps the file's
/// bus ids. The model is safely shareable across threads after load.
#[derive(Debug, Clone)]
pub struct GridModel {
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub areas: Vec<AreaSpec>,
    pub base_mva: f64,
    /// Angle-reference bus (internal index).
    pub reference: usize,
    bus_index: HashMap<usize, usize>,
    /// Generator bus indices in bus order.
    gen_buses: Vec<usize>,
    /// Bus index -> generator slot (dense index into per-generator vectors).
    gen_slot: Vec<Option<usize>>,
    /// Bus index -> incident lines as (line index, orientation at this bus).
    incidence: Vec<Vec<(usize, f64)>>,
    /// Bus index -> owning area index, derived from tie-line topology.
    area_of_bus: Vec<Option<usize>>,
}

#[derive(Debug, Error)]
pub enum GridError {
    #[error("cannot read grid file: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line_no}: {msg}")]
    Parse { line_no: usize, msg: String },
    #[error("invalid grid: {0}")]
    Validation(String),
}

#[derive(Debug, Error)]
pub enum PowerFlowError {
    #[error("injections sum to {imbalance:.3e} pu, beyond the lossless-balance tolerance")]
    Imbalance { imbalance: f64 },
    #[error("power flow did not converge within {0} Newton iterations")]
    NoConvergence(usize),
    #[error("injection vector has length {got}, expected {expected}")]
    DimensionMismatch { got: usize, expected: usize },
}

/// Power-flow equilibrium: angles per bus (reference at zero) and flows per
/// line in the line's own orientation.
#[derive(Debug, Clone)]
pub struct Equilibrium {
    pub theta: Vec<f64>,
    pub flows: Vec<f64>,
}

impl GridModel {
    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_lines(&self) -> usize {
        self.lines.len()
    }

    pub fn n_gens(&self) -> usize {
        self.gen_buses.len()
    }

    pub fn n_areas(&self) -> usize {
        self.areas.len()
    }

    /// Generator bus indices in ascending bus order.
    pub fn gen_buses(&self) -> &[usize] {
        &self.gen_buses
    }

    /// Generator slot of a bus, `None` for load buses.
    pub fn gen_slot(&self, bus: usize) -> Option<usize> {
        self.gen_slot[bus]
    }

    /// Lines incident to `bus` as `(line index, orientation)`, orientation
    /// `+1` when the line leaves the bus.
    pub fn incident(&self, bus: usize) -> &[(usize, f64)] {
        &self.incidence[bus]
    }

    /// Internal index of a file-level bus id.
    pub fn bus_by_id(&self, id: usize) -> Option<usize> {
        self.bus_index.get(&id).copied()
    }

    /// Area owning a bus, when tie-line topology determines one.
    pub fn area_of_bus(&self, bus: usize) -> Option<usize> {
        self.area_of_bus[bus]
    }

    /// Nominal per-bus injections from the bus table.
    pub fn nominal_injections(&self) -> Vec<f64> {
        self.buses.iter().map(|b| b.injection).collect()
    }

    /// Find a line by its endpoint bus ids, in either orientation.
    pub fn line_between(&self, id_a: usize, id_b: usize) -> Option<usize> {
        let a = self.bus_by_id(id_a)?;
        let b = self.bus_by_id(id_b)?;
        self.lines
            .iter()
            .position(|l| (l.from == a && l.to == b) || (l.from == b && l.to == a))
    }

    /// Signed per-bus sum of line flows, `(C P)_i` for the incidence matrix C.
    pub fn flow_sums(&self, flows: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_buses()];
        for (e, line) in self.lines.iter().enumerate() {
            out[line.from] += flows[e];
            out[line.to] -= flows[e];
        }
        out
    }
}

/// Per-line flows `P_ij = B_ij sin(theta_i - theta_j)`.
pub fn line_flows(grid: &GridModel, theta: &[f64]) -> Vec<f64> {
    grid.lines
        .iter()
        .map(|l| l.susceptance * (theta[l.from] - theta[l.to]).sin())
        .collect()
}

/// Solve the lossless steady-state power flow for the given injections.
///
/// Newton iteration from a flat start with the reference angle pinned at
/// zero. Returns angles and flows satisfying, per non-reference bus,
/// `|injection_i - sum_ij B_ij sin(theta_i - theta_j)| <= 1e-9`.
pub fn solve_equilibrium(
    grid: &GridModel,
    injections: &[f64],
) -> Result<Equilibrium, PowerFlowError> {
    let n = grid.n_buses();
    if injections.len() != n {
        return Err(PowerFlowError::DimensionMismatch {
            got: injections.len(),
            expected: n,
        });
    }
    let imbalance: f64 = injections.iter().sum();
    if imbalance.abs() > IMBALANCE_TOL {
        return Err(PowerFlowError::Imbalance { imbalance });
    }

    // Reduced unknowns: theta at every non-reference bus.
    let reduced: Vec<usize> = (0..n).filter(|&i| i != grid.reference).collect();
    let mut slot = vec![usize::MAX; n];
    for (k, &i) in reduced.iter().enumerate() {
        slot[i] = k;
    }

    let mut theta = vec![0.0_f64; n];
    for iter in 0..NEWTON_MAX_ITER {
        let flows = line_flows(grid, &theta);
        let sums = grid.flow_sums(&flows);
        let mut residual = DVector::zeros(reduced.len());
        for (k, &i) in reduced.iter().enumerate() {
            residual[k] = injections[i] - sums[i];
        }
        if residual.amax() <= POWER_FLOW_TOL {
            return Ok(Equilibrium { theta, flows });
        }
        if iter == NEWTON_MAX_ITER - 1 {
            break;
        }

        let mut jac = DMatrix::zeros(reduced.len(), reduced.len());
        for line in &grid.lines {
            let w = line.susceptance * (theta[line.from] - theta[line.to]).cos();
            let (si, sj) = (slot[line.from], slot[line.to]);
            // d(residual_i)/d(theta) of the flow-sum term, sign-flipped.
            if si != usize::MAX {
                jac[(si, si)] -= w;
                if sj != usize::MAX {
                    jac[(si, sj)] += w;
                }
            }
            if sj != usize::MAX {
                jac[(sj, sj)] -= w;
                if si != usize::MAX {
                    jac[(sj, si)] += w;
                }
            }
        }
        let lu = jac.lu();
        let step = match lu.solve(&residual) {
            Some(s) => s,
            None => return Err(PowerFlowError::NoConvergence(iter + 1)),
        };
        for (k, &i) in reduced.iter().enumerate() {
            theta[i] -= step[k];
        }
    }
    Err(PowerFlowError::NoConvergence(NEWTON_MAX_ITER))
}

/// Parse and validate a grid file.
pub fn load_grid<P: AsRef<Path>>(path: P) -> Result<GridModel, GridError> {
    let text = std::fs::read_to_string(path)?;
    parse_grid(&text)
}

#[derive(PartialEq)]
enum Section {
    Preamble,
    Bus,
    Line,
    Area,
}

struct RawArea {
    id: usize,
    schedule: f64,
    ties: Vec<(usize, usize)>,
    line_no: usize,
}

/// Parse a grid description from text. See the fixture files for the format:
/// `key value` pairs, then `[bus]`, `[line]` and optional `[area]` sections
/// of whitespace-separated rows.
pub fn parse_grid(text: &str) -> Result<GridModel, GridError> {
    let mut section = Section::Preamble;
    let mut base_mva = DEFAULT_BASE_MVA;
    let mut reference_id: Option<usize> = None;
    let mut buses: Vec<Bus> = Vec::new();
    let mut raw_lines: Vec<(usize, usize, f64, f64, f64, usize)> = Vec::new();
    let mut raw_areas: Vec<RawArea> = Vec::new();

    let perr = |line_no: usize, msg: String| GridError::Parse { line_no, msg };

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let stripped = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        };
        let trimmed = stripped.trim();
        if trimmed.is_empty() {
            continue;
        }
        match trimmed {
            "[bus]" => {
                section = Section::Bus;
                continue;
            }
            "[line]" => {
                section = Section::Line;
                continue;
            }
            "[area]" => {
                section = Section::Area;
                continue;
            }
            _ => {}
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        match section {
            Section::Preamble => match fields[0] {
                "base_mva" => {
                    base_mva = parse_num(fields.get(1), "base_mva", line_no)?;
                }
                "reference" => {
                    reference_id =
                        Some(parse_int(fields.get(1), "reference bus id", line_no)?);
                }
                other => {
                    return Err(perr(line_no, format!("unknown key `{other}`")));
                }
            },
            Section::Bus => {
                if fields.len() != 10 {
                    return Err(perr(
                        line_no,
                        format!("bus row needs 10 fields, got {}", fields.len()),
                    ));
                }
                let id = parse_int(fields.first(), "bus id", line_no)?;
                let kind = match fields[1] {
                    "gen" => BusKind::Generator,
                    "load" => BusKind::Load,
                    other => {
                        return Err(perr(line_no, format!("unknown bus kind `{other}`")))
                    }
                };
                let opt = |s: &str, name: &str| -> Result<f64, GridError> {
                    if s == "-" {
                        if kind == BusKind::Generator {
                            Err(perr(line_no, format!("generator bus {id} must set {name}")))
                        } else {
                            Ok(0.0)
                        }
                    } else {
                        s.parse::<f64>()
                            .map_err(|_| perr(line_no, format!("bad {name} `{s}`")))
                    }
                };
                buses.push(Bus {
                    id,
                    kind,
                    inertia: opt(fields[2], "inertia")?,
                    damping: parse_num(fields.get(3), "damping", line_no)?,
                    turbine_t: opt(fields[4], "turbine time constant")?,
                    governor_t: opt(fields[5], "governor time constant")?,
                    p_min: parse_num(fields.get(6), "p_min", line_no)?,
                    p_max: parse_num(fields.get(7), "p_max", line_no)?,
                    alpha: parse_num(fields.get(8), "alpha", line_no)?,
                    injection: parse_num(fields.get(9), "injection", line_no)?,
                });
            }
            Section::Line => {
                if fields.len() != 5 {
                    return Err(perr(
                        line_no,
                        format!("line row needs 5 fields, got {}", fields.len()),
                    ));
                }
                raw_lines.push((
                    parse_int(fields.first(), "from bus", line_no)?,
                    parse_int(fields.get(1), "to bus", line_no)?,
                    parse_num(fields.get(2), "susceptance", line_no)?,
                    parse_num(fields.get(3), "flow p_min", line_no)?,
                    parse_num(fields.get(4), "flow p_max", line_no)?,
                    line_no,
                ));
            }
            Section::Area => {
                if fields.len() < 3 {
                    return Err(perr(
                        line_no,
                        "area row needs id, schedule and at least one tie".into(),
                    ));
                }
                let id = parse_int(fields.first(), "area id", line_no)?;
                let schedule = parse_num(fields.get(1), "area schedule", line_no)?;
                let mut ties = Vec::new();
                for tie in &fields[2..] {
                    let (a, b) = tie.split_once('>').ok_or_else(|| {
                        perr(line_no, format!("tie `{tie}` must look like from>to"))
                    })?;
                    ties.push((
                        a.parse().map_err(|_| {
                            perr(line_no, format!("bad tie bus id `{a}`"))
                        })?,
                        b.parse().map_err(|_| {
                            perr(line_no, format!("bad tie bus id `{b}`"))
                        })?,
                    ));
                }
                raw_areas.push(RawArea {
                    id,
                    schedule,
                    ties,
                    line_no,
                });
            }
        }
    }

    build_grid(base_mva, reference_id, buses, raw_lines, raw_areas)
}

fn parse_num(field: Option<&&str>, name: &str, line_no: usize) -> Result<f64, GridError> {
    let s = field.ok_or_else(|| GridError::Parse {
        line_no,
        msg: format!("missing {name}"),
    })?;
    s.parse::<f64>().map_err(|_| GridError::Parse {
        line_no,
        msg: format!("bad {name} `{s}`"),
    })
}

fn parse_int(field: Option<&&str>, name: &str, line_no: usize) -> Result<usize, GridError> {
    let s = field.ok_or_else(|| GridError::Parse {
        line_no,
        msg: format!("missing {name}"),
    })?;
    s.parse::<usize>().map_err(|_| GridError::Parse {
        line_no,
        msg: format!("bad {name} `{s}`"),
    })
}

fn build_grid(
    base_mva: f64,
    reference_id: Option<usize>,
    buses: Vec<Bus>,
    raw_lines: Vec<(usize, usize, f64, f64, f64, usize)>,
    raw_areas: Vec<RawArea>,
) -> Result<GridModel, GridError> {
    let verr = |msg: String| GridError::Validation(msg);

    if buses.is_empty() {
        return Err(verr("no buses declared".into()));
    }
    let mut bus_index = HashMap::new();
    for (i, bus) in buses.iter().enumerate() {
        if bus_index.insert(bus.id, i).is_some() {
            return Err(verr(format!("duplicate bus id {}", bus.id)));
        }
    }

    for bus in &buses {
        if bus.is_gen() && (bus.inertia <= 0.0 || bus.turbine_t <= 0.0 || bus.governor_t <= 0.0)
        {
            return Err(verr(format!(
                "generator bus {} needs positive inertia and time constants",
                bus.id
            )));
        }
        if bus.damping < 0.0 {
            return Err(verr(format!("bus {} has negative damping", bus.id)));
        }
        if bus.alpha <= 0.0 {
            return Err(verr(format!("bus {} needs positive alpha", bus.id)));
        }
        if bus.p_min > bus.p_max {
            return Err(verr(format!("bus {}: p_min exceeds p_max", bus.id)));
        }
    }

    let mut lines = Vec::with_capacity(raw_lines.len());
    let mut seen_pairs: HashMap<(usize, usize), usize> = HashMap::new();
    for (from_id, to_id, b, p_min, p_max, line_no) in raw_lines {
        let from = *bus_index.get(&from_id).ok_or_else(|| {
            verr(format!(
                "line {from_id}-{to_id} references undeclared bus {from_id}"
            ))
        })?;
        let to = *bus_index.get(&to_id).ok_or_else(|| {
            verr(format!(
                "line {from_id}-{to_id} references undeclared bus {to_id}"
            ))
        })?;
        if from == to {
            return Err(verr(format!("line {from_id}-{to_id} is a self-loop")));
        }
        if b <= 0.0 {
            return Err(verr(format!(
                "line {from_id}-{to_id} needs positive susceptance"
            )));
        }
        if p_min > p_max {
            return Err(verr(format!("line {from_id}-{to_id}: p_min exceeds p_max")));
        }
        let key = (from.min(to), from.max(to));
        if seen_pairs.insert(key, line_no).is_some() {
            return Err(verr(format!(
                "duplicate line {from_id}-{to_id}; pre-aggregate parallel lines"
            )));
        }
        lines.push(Line {
            from,
            to,
            susceptance: b,
            p_min,
            p_max,
        });
    }

    // Connectivity over the line graph.
    let n = buses.len();
    let mut incidence = vec![Vec::new(); n];
    for (e, line) in lines.iter().enumerate() {
        incidence[line.from].push((e, 1.0));
        incidence[line.to].push((e, -1.0));
    }
    if n > 1 {
        let comp = components(n, &lines, &[]);
        if comp.iter().any(|&c| c != comp[0]) {
            let stranded = buses[comp.iter().position(|&c| c != comp[0]).unwrap()].id;
            return Err(verr(format!(
                "network is disconnected (bus {stranded} unreachable from bus {})",
                buses[0].id
            )));
        }
    }

    let gen_buses: Vec<usize> = (0..n).filter(|&i| buses[i].is_gen()).collect();
    if gen_buses.is_empty() {
        return Err(verr("grid has no generator bus".into()));
    }
    let mut gen_slot = vec![None; n];
    for (slot, &i) in gen_buses.iter().enumerate() {
        gen_slot[i] = Some(slot);
    }

    let reference = match reference_id {
        Some(id) => *bus_index
            .get(&id)
            .ok_or_else(|| verr(format!("reference bus {id} not declared")))?,
        // Lowest-id generator by default.
        None => *gen_buses
            .iter()
            .min_by_key(|&&i| buses[i].id)
            .expect("nonempty"),
    };

    // Resolve areas: each tie names an existing line; the tie's `from` side
    // must sit inside the area once all tie lines are removed from the graph.
    let mut areas = Vec::new();
    let mut all_tie_lines: Vec<usize> = Vec::new();
    for raw in &raw_areas {
        for &(a_id, b_id) in &raw.ties {
            let a = *bus_index.get(&a_id).ok_or_else(|| {
                verr(format!("area {}: tie bus {a_id} not declared", raw.id))
            })?;
            let b = *bus_index.get(&b_id).ok_or_else(|| {
                verr(format!("area {}: tie bus {b_id} not declared", raw.id))
            })?;
            let e = lines
                .iter()
                .position(|l| (l.from == a && l.to == b) || (l.from == b && l.to == a))
                .ok_or_else(|| {
                    verr(format!(
                        "area {}: no line between buses {a_id} and {b_id}",
                        raw.id
                    ))
                })?;
            all_tie_lines.push(e);
        }
        let _ = raw.line_no;
    }
    let mut area_of_bus = vec![None; n];
    if !raw_areas.is_empty() {
        let comp = components(n, &lines, &all_tie_lines);
        let mut claimed: HashMap<usize, usize> = HashMap::new();
        for (k, raw) in raw_areas.iter().enumerate() {
            let mut ties = Vec::new();
            let mut inside_comp: Option<usize> = None;
            for &(a_id, b_id) in &raw.ties {
                let a = bus_index[&a_id];
                let b = bus_index[&b_id];
                let e = lines
                    .iter()
                    .position(|l| (l.from == a && l.to == b) || (l.from == b && l.to == a))
                    .expect("checked above");
                let sign = if lines[e].from == a { 1.0 } else { -1.0 };
                match inside_comp {
                    None => inside_comp = Some(comp[a]),
                    Some(c) if c != comp[a] => {
                        return Err(verr(format!(
                            "area {}: tie endpoints {a_id} and earlier ties disagree on the interior",
                            raw.id
                        )))
                    }
                    _ => {}
                }
                if comp[a] == comp[b] {
                    return Err(verr(format!(
                        "area {}: tie {a_id}>{b_id} has both endpoints inside the area",
                        raw.id
                    )));
                }
                ties.push((e, sign));
            }
            let interior = inside_comp.expect("area has ties");
            if let Some(&other) = claimed.get(&interior) {
                return Err(verr(format!(
                    "areas {} and {} claim the same interior region",
                    raw_areas[other].id, raw.id
                )));
            }
            claimed.insert(interior, k);
            for i in 0..n {
                if comp[i] == interior {
                    area_of_bus[i] = Some(k);
                }
            }
            areas.push(AreaSpec {
                id: raw.id,
                ties,
                schedule: raw.schedule,
            });
        }
    }

    Ok(GridModel {
        buses,
        lines,
        areas,
        base_mva,
        reference,
        bus_index,
        gen_buses,
        gen_slot,
        incidence,
        area_of_bus,
    })
}

/// Connected components after removing `skip` lines; returns component id per bus.
fn components(n: usize, lines: &[Line], skip: &[usize]) -> Vec<usize> {
    let mut adj = vec![Vec::new(); n];
    for (e, line) in lines.iter().enumerate() {
        if skip.contains(&e) {
            continue;
        }
        adj[line.from].push(line.to);
        adj[line.to].push(line.from);
    }
    let mut comp = vec![usize::MAX; n];
    let mut next = 0;
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let mut stack = vec![start];
        comp[start] = next;
        while let Some(i) = stack.pop() {
            for &j in &adj[i] {
                if comp[j] == usize::MAX {
                    comp[j] = next;
                    stack.push(j);
                }
            }
        }
        next += 1;
    }
    comp
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const TWO_BUS: &str = "\
base_mva 100
[bus]
# id kind M    D   Tt  Tg  pmin pmax alpha injection
1    gen  10.0 1.0 3.0 1.0 -5   5    1.0   1.0
2    load -    2.0 -   -   -5   5    1.0   -1.0
[line]
# from to b    pmin pmax
1      2  10.0 -5   5
";

    fn two_bus() -> GridModel {
        parse_grid(TWO_BUS).expect("valid grid")
    }

    #[test]
    fn parses_minimal_two_bus() {
        let g = two_bus();
        assert_eq!(g.n_buses(), 2);
        assert_eq!(g.n_lines(), 1);
        assert_eq!(g.n_gens(), 1);
        assert_eq!(g.reference, 0);
        assert_eq!(g.buses[1].kind, BusKind::Load);
    }

    #[test]
    fn rejects_line_to_undeclared_bus() {
        let bad = TWO_BUS.replace("1      2  10.0", "1      3  10.0");
        let err = parse_grid(&bad).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('3'), "error should name the line: {msg}");
    }

    #[test]
    fn rejects_duplicate_line() {
        let dup = format!("{TWO_BUS}2 1 4.0 -5 5\n");
        let err = parse_grid(&dup).unwrap_err();
        assert!(err.to_string().contains("duplicate line"));
    }

    #[test]
    fn rejects_disconnected_graph() {
        let grid = "\
[bus]
1 gen  10.0 1.0 3.0 1.0 -5 5 1.0 1.0
2 load -    2.0 -   -   -5 5 1.0 -1.0
3 load -    2.0 -   -   -5 5 1.0 0.0
[line]
1 2 10.0 -5 5
";
        let err = parse_grid(grid).unwrap_err();
        assert!(err.to_string().contains("disconnected"));
    }

    #[test]
    fn flows_zero_at_uniform_angles() {
        let g = two_bus();
        let flows = line_flows(&g, &[0.3, 0.3]);
        assert_eq!(flows, vec![0.0]);
    }

    #[test]
    fn flow_is_susceptance_times_sine() {
        let g = two_bus();
        let flows = line_flows(&g, &[std::f64::consts::FRAC_PI_6, 0.0]);
        assert!((flows[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn equilibrium_closed_form_two_bus() {
        let g = two_bus();
        let eq = solve_equilibrium(&g, &[1.0, -1.0]).expect("solvable");
        let expected = 0.1_f64.asin();
        assert!((eq.theta[0] - eq.theta[1] - expected).abs() < 1e-10);
        assert!((eq.flows[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn equilibrium_zero_injections_is_flat() {
        let g = two_bus();
        let eq = solve_equilibrium(&g, &[0.0, 0.0]).expect("solvable");
        assert!(eq.theta.iter().all(|t| t.abs() < 1e-14));
        assert!(eq.flows.iter().all(|p| p.abs() < 1e-14));
    }

    #[test]
    fn equilibrium_rejects_imbalance() {
        let g = two_bus();
        assert!(matches!(
            solve_equilibrium(&g, &[1.0, -0.5]),
            Err(PowerFlowError::Imbalance { .. })
        ));
    }

    #[test]
    fn antisymmetry_under_orientation_reversal() {
        let reversed = TWO_BUS.replace("1      2  10.0 -5   5", "2      1  10.0 -5   5");
        let g = two_bus();
        let r = parse_grid(&reversed).unwrap();
        let theta = [0.17, -0.05];
        let f = line_flows(&g, &theta);
        let fr = line_flows(&r, &theta);
        assert!((f[0] + fr[0]).abs() < 1e-15);
    }
}
