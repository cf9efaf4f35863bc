//! Immutable in-memory network model.
//!
//! All power quantities are stored in per-unit on `base_mva`; loads are kept
//! as negative injections so generators and loads share one parameter space.

mod matpower;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use matpower::{parse_matpower, write_matpower};

pub type BusId = u32;

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("cannot read case file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("topology error: {0}")]
    Topology(String),
    #[error("selector `{0}` matches no component")]
    EmptySelection(String),
    #[error("component {0} sits on the slack bus and cannot be treated as stochastic")]
    SlackComponent(String),
    #[error("unknown component id `{0}`")]
    UnknownComponent(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BusKind {
    Slack,
    PV,
    PQ,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: BusId,
    pub kind: BusKind,
    /// Voltage magnitude from the case data. Enforced for Slack/PV buses,
    /// used as the reference point of setpoint-relative limits otherwise.
    pub v_setpoint: f64,
    /// Radians. Only the slack angle is enforced.
    pub angle_setpoint: f64,
    pub v_max: f64,
    pub v_min: f64,
    /// Shunt conductance and susceptance at 1 pu voltage.
    pub gs: f64,
    pub bs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from_bus: BusId,
    pub to_bus: BusId,
    pub r: f64,
    pub x: f64,
    /// Total line charging susceptance.
    pub b_shunt: f64,
    /// Off-nominal turns ratio on the from side, 1.0 when absent.
    pub tap: f64,
    /// Radians.
    pub phase_shift: f64,
    pub in_service: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ComponentKind {
    Generator,
    Load,
}

/// A generator or a load: one complex power injection at a bus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub id: String,
    pub kind: ComponentKind,
    pub bus: BusId,
    pub p: f64,
    pub q: f64,
    pub essential: bool,
    pub fuel_tag: String,
}

pub type Generator = Component;
pub type Load = Component;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RemodelReason {
    /// PV bus without any in-service generator.
    NoActiveGenerator,
    /// An essential generator was tagged on a PV bus; the bus now holds its
    /// dispatch as a fixed PQ injection.
    EssentialOnPv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Remodel {
    pub bus: BusId,
    pub reason: RemodelReason,
    pub component: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCase {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    pub loads: Vec<Load>,
    pub remodeled: Vec<Remodel>,
}

impl GridCase {
    pub fn bus(&self, id: BusId) -> Option<&Bus> {
        self.buses.iter().find(|b| b.id == id)
    }

    pub fn bus_index(&self, id: BusId) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn slack(&self) -> Option<&Bus> {
        self.buses.iter().find(|b| b.kind == BusKind::Slack)
    }

    /// Generators followed by loads.
    pub fn components(&self) -> impl Iterator<Item = &Component> {
        self.generators.iter().chain(self.loads.iter())
    }

    pub fn component(&self, id: &str) -> Option<&Component> {
        self.components().find(|c| c.id == id)
    }

    pub(crate) fn component_mut(&mut self, id: &str) -> Option<&mut Component> {
        self.generators
            .iter_mut()
            .chain(self.loads.iter_mut())
            .find(|c| c.id == id)
    }

    pub fn essential_components(&self) -> impl Iterator<Item = &Component> {
        self.components().filter(|c| c.essential)
    }

    /// Net specified complex injection per bus, in bus order.
    pub fn net_injections(&self) -> Vec<(f64, f64)> {
        let mut s = vec![(0.0, 0.0); self.buses.len()];
        for c in self.components() {
            if let Some(i) = self.bus_index(c.bus) {
                s[i].0 += c.p;
                s[i].1 += c.q;
            }
        }
        s
    }

    /// PQ buses whose net specified injection is nonzero.
    pub fn nonzero_injection_pq_buses(&self) -> Vec<BusId> {
        let s = self.net_injections();
        self.buses
            .iter()
            .zip(&s)
            .filter(|(b, s)| b.kind == BusKind::PQ && (s.0 != 0.0 || s.1 != 0.0))
            .map(|(b, _)| b.id)
            .collect()
    }
}

/// Reads and validates a case file.
pub fn parse_case(path: impl AsRef<Path>, format: CaseFormat) -> Result<GridCase, CaseError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| CaseError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    match format {
        CaseFormat::MatpowerM => parse_matpower(&text, &name),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CaseFormat {
    #[default]
    MatpowerM,
}

// ---------------------------------------------------------------------------
// validation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Issue {
    NonPositiveBase(f64),
    DuplicateBus(BusId),
    NoSlack,
    MultipleSlack(Vec<BusId>),
    DanglingBranch {
        index: usize,
        bus: BusId,
    },
    DanglingComponent {
        component: String,
        bus: BusId,
    },
    DuplicateComponent(String),
    InvertedLimits {
        bus: BusId,
        v_min: f64,
        v_max: f64,
    },
    SetpointOutOfRange {
        bus: BusId,
        v: f64,
    },
    ZeroImpedance {
        index: usize,
        from: BusId,
        to: BusId,
    },
    NonPositiveTap {
        index: usize,
        tap: f64,
    },
    EssentialOffPq {
        component: String,
        bus: BusId,
    },
    NonFinite(String),
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Issue::NonPositiveBase(b) => write!(f, "base_mva must be positive, got {b}"),
            Issue::DuplicateBus(id) => write!(f, "bus {id} defined more than once"),
            Issue::NoSlack => write!(f, "no slack bus"),
            Issue::MultipleSlack(ids) => write!(f, "multiple slack buses: {ids:?}"),
            Issue::DanglingBranch { index, bus } => {
                write!(f, "branch #{index} references missing bus {bus}")
            }
            Issue::DanglingComponent { component, bus } => {
                write!(f, "component {component} references missing bus {bus}")
            }
            Issue::DuplicateComponent(id) => write!(f, "component id {id} used twice"),
            Issue::InvertedLimits { bus, v_min, v_max } => {
                write!(f, "bus {bus}: v_min {v_min} is not below v_max {v_max}")
            }
            Issue::SetpointOutOfRange { bus, v } => {
                write!(f, "bus {bus}: voltage setpoint {v} outside [0.5, 1.5] pu")
            }
            Issue::ZeroImpedance { index, from, to } => {
                write!(f, "branch #{index} ({from}-{to}) has zero impedance")
            }
            Issue::NonPositiveTap { index, tap } => {
                write!(f, "branch #{index} has non-positive tap {tap}")
            }
            Issue::EssentialOffPq { component, bus } => {
                write!(
                    f,
                    "essential component {component} is not on a PQ bus ({bus})"
                )
            }
            Issue::NonFinite(what) => write!(f, "non-finite value in {what}"),
        }
    }
}

impl Issue {
    fn is_topological(&self) -> bool {
        matches!(
            self,
            Issue::NoSlack
                | Issue::MultipleSlack(_)
                | Issue::DanglingBranch { .. }
                | Issue::DanglingComponent { .. }
                | Issue::DuplicateBus(_)
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
    /// Informational: buses whose control type was changed during ingest or tagging.
    pub remodeled: Vec<Remodel>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.issues.is_empty()
    }
}

pub fn validate_case(case: &GridCase) -> ValidationReport {
    let mut issues = Vec::new();
    if !(case.base_mva > 0.0) {
        issues.push(Issue::NonPositiveBase(case.base_mva));
    }

    let mut seen = std::collections::HashSet::new();
    for b in &case.buses {
        if !seen.insert(b.id) {
            issues.push(Issue::DuplicateBus(b.id));
        }
        if !(b.v_min < b.v_max) {
            issues.push(Issue::InvertedLimits {
                bus: b.id,
                v_min: b.v_min,
                v_max: b.v_max,
            });
        }
        if !(0.5..=1.5).contains(&b.v_setpoint) {
            issues.push(Issue::SetpointOutOfRange {
                bus: b.id,
                v: b.v_setpoint,
            });
        }
        if ![b.v_setpoint, b.angle_setpoint, b.gs, b.bs]
            .iter()
            .all(|v| v.is_finite())
        {
            issues.push(Issue::NonFinite(format!("bus {}", b.id)));
        }
    }

    let slacks: Vec<BusId> = case
        .buses
        .iter()
        .filter(|b| b.kind == BusKind::Slack)
        .map(|b| b.id)
        .collect();
    match slacks.len() {
        0 => issues.push(Issue::NoSlack),
        1 => {}
        _ => issues.push(Issue::MultipleSlack(slacks)),
    }

    for (index, br) in case.branches.iter().enumerate() {
        for bus in [br.from_bus, br.to_bus] {
            if !seen.contains(&bus) {
                issues.push(Issue::DanglingBranch { index, bus });
            }
        }
        if br.r == 0.0 && br.x == 0.0 {
            issues.push(Issue::ZeroImpedance {
                index,
                from: br.from_bus,
                to: br.to_bus,
            });
        }
        if !(br.tap > 0.0) {
            issues.push(Issue::NonPositiveTap { index, tap: br.tap });
        }
    }

    let mut ids = std::collections::HashSet::new();
    for c in case.components() {
        if !ids.insert(c.id.as_str()) {
            issues.push(Issue::DuplicateComponent(c.id.clone()));
        }
        match case.bus(c.bus) {
            None => issues.push(Issue::DanglingComponent {
                component: c.id.clone(),
                bus: c.bus,
            }),
            Some(b) if c.essential && b.kind != BusKind::PQ => issues.push(Issue::EssentialOffPq {
                component: c.id.clone(),
                bus: c.bus,
            }),
            _ => {}
        }
        if !(c.p.is_finite() && c.q.is_finite()) {
            issues.push(Issue::NonFinite(format!("component {}", c.id)));
        }
    }

    ValidationReport {
        issues,
        remodeled: case.remodeled.clone(),
    }
}

/// Maps the first structural breach to an error. Used by the parsers.
pub(crate) fn check_case(case: &GridCase) -> Result<(), CaseError> {
    let report = validate_case(case);
    if let Some(issue) = report.issues.iter().find(|i| i.is_topological()) {
        return Err(CaseError::Topology(issue.to_string()));
    }
    if let Some(issue) = report.issues.first() {
        return Err(CaseError::Schema(issue.to_string()));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// essential-component selection

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Selector {
    /// Every generator and load not located at the slack bus.
    All,
    AllSolar,
    AllWind,
    AllRenewable,
    Explicit(Vec<String>),
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Selector::All => f.write_str("all"),
            Selector::AllSolar => f.write_str("all-solar"),
            Selector::AllWind => f.write_str("all-wind"),
            Selector::AllRenewable => f.write_str("all-renewable"),
            Selector::Explicit(ids) => write!(f, "{}", ids.join(",")),
        }
    }
}

impl FromStr for Selector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        Ok(match s.to_ascii_lowercase().as_str() {
            "all" => Selector::All,
            "solar" | "all-solar" => Selector::AllSolar,
            "wind" | "all-wind" => Selector::AllWind,
            "renewable" | "all-renewable" => Selector::AllRenewable,
            _ => {
                let list = s.strip_prefix("ids:").unwrap_or(s);
                let ids: Vec<String> = list
                    .split(',')
                    .map(|t| t.trim().to_string())
                    .filter(|t| !t.is_empty())
                    .collect();
                if ids.is_empty() {
                    return Err(format!("empty selector `{s}`"));
                }
                Selector::Explicit(ids)
            }
        })
    }
}

pub fn is_solar(fuel: &str) -> bool {
    let f = fuel.to_ascii_lowercase();
    f.contains("solar") || f == "pv" || f.starts_with("pv_") || f.starts_with("pv-")
}

pub fn is_wind(fuel: &str) -> bool {
    fuel.to_ascii_lowercase().contains("wind")
}

/// Returns a copy of `case` whose `essential` flags match `selector` exactly.
///
/// PV buses hosting a selected generator are converted to PQ buses holding
/// the generator's dispatch; each conversion is recorded in `remodeled`.
pub fn tag_essential(case: &GridCase, selector: &Selector) -> Result<GridCase, CaseError> {
    let slack = case.slack().map(|b| b.id);
    let chosen: Vec<String> = match selector {
        Selector::Explicit(ids) => {
            for id in ids {
                let c = case
                    .component(id)
                    .ok_or_else(|| CaseError::UnknownComponent(id.clone()))?;
                if Some(c.bus) == slack {
                    return Err(CaseError::SlackComponent(id.clone()));
                }
            }
            ids.clone()
        }
        _ => case
            .components()
            .filter(|c| Some(c.bus) != slack)
            .filter(|c| match selector {
                Selector::All => true,
                Selector::AllSolar => c.kind == ComponentKind::Generator && is_solar(&c.fuel_tag),
                Selector::AllWind => c.kind == ComponentKind::Generator && is_wind(&c.fuel_tag),
                Selector::AllRenewable => {
                    c.kind == ComponentKind::Generator
                        && (is_solar(&c.fuel_tag) || is_wind(&c.fuel_tag))
                }
                Selector::Explicit(_) => unreachable!(),
            })
            .map(|c| c.id.clone())
            .collect(),
    };
    if chosen.is_empty() {
        return Err(CaseError::EmptySelection(selector.to_string()));
    }

    let mut out = case.clone();
    for c in out.generators.iter_mut().chain(out.loads.iter_mut()) {
        c.essential = false;
    }
    for id in &chosen {
        let bus = {
            let c = out.component_mut(id).expect("checked above");
            c.essential = true;
            c.bus
        };
        let b =
            out.buses.iter_mut().find(|b| b.id == bus).ok_or_else(|| {
                CaseError::Topology(format!("component {id} on missing bus {bus}"))
            })?;
        if b.kind == BusKind::PV {
            b.kind = BusKind::PQ;
            out.remodeled.push(Remodel {
                bus,
                reason: RemodelReason::EssentialOnPv,
                component: Some(id.clone()),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn bus(id: BusId, kind: BusKind) -> Bus {
        Bus {
            id,
            kind,
            v_setpoint: 1.0,
            angle_setpoint: 0.0,
            v_max: 1.1,
            v_min: 0.9,
            gs: 0.0,
            bs: 0.0,
        }
    }

    pub fn line(from: BusId, to: BusId, r: f64, x: f64) -> Branch {
        Branch {
            from_bus: from,
            to_bus: to,
            r,
            x,
            b_shunt: 0.0,
            tap: 1.0,
            phase_shift: 0.0,
            in_service: true,
        }
    }

    pub fn gen(id: &str, bus: BusId, p: f64, fuel: &str) -> Component {
        Component {
            id: id.into(),
            kind: ComponentKind::Generator,
            bus,
            p,
            q: 0.0,
            essential: false,
            fuel_tag: fuel.into(),
        }
    }

    pub fn load(bus: BusId, p: f64, q: f64) -> Component {
        Component {
            id: format!("l{bus}"),
            kind: ComponentKind::Load,
            bus,
            p: -p,
            q: -q,
            essential: false,
            fuel_tag: "load".into(),
        }
    }

    /// Slack bus 1 feeding a PQ load on bus 2 through a lossless line.
    pub fn two_bus(x: f64, p_load: f64, q_load: f64) -> GridCase {
        GridCase {
            name: "two_bus".into(),
            base_mva: 100.0,
            buses: vec![bus(1, BusKind::Slack), bus(2, BusKind::PQ)],
            branches: vec![line(1, 2, 0.0, x)],
            generators: vec![gen("g1", 1, 0.0, "ng")],
            loads: vec![load(2, p_load, q_load)],
            remodeled: vec![],
        }
    }

    /// Five generators: three solar (g2..g4 on PQ buses), two wind (one on a PV bus).
    pub fn mixed_fleet() -> GridCase {
        GridCase {
            name: "mixed".into(),
            base_mva: 100.0,
            buses: vec![
                bus(1, BusKind::Slack),
                bus(2, BusKind::PQ),
                bus(3, BusKind::PQ),
                bus(4, BusKind::PV),
                bus(5, BusKind::PQ),
            ],
            branches: vec![
                line(1, 2, 0.01, 0.1),
                line(2, 3, 0.01, 0.1),
                line(3, 4, 0.01, 0.1),
                line(4, 5, 0.01, 0.1),
                line(5, 1, 0.01, 0.1),
            ],
            generators: vec![
                gen("g1", 1, 1.0, "coal"),
                gen("g2", 2, 0.2, "solar"),
                gen("g3", 3, 0.2, "solar"),
                gen("g4", 5, 0.1, "solar"),
                gen("g5", 4, 0.3, "wind"),
                gen("g6", 5, 0.1, "wind"),
            ],
            loads: vec![load(2, 0.5, 0.1), load(3, 0.4, 0.1)],
            remodeled: vec![],
        }
    }
}
