//! Scenario files: a TOML document describing the gas network, the
//! electric system, coupling units, faults, event watches, solver settings
//! and output selection. Parsing fills defaults; validation checks every
//! cross-reference and physical precondition before any numerics run and
//! reports all violations at once.

use crate::events::{EventAction, EventKind, EventSpec};
use crate::faults::FaultSpec;
use crate::gasnet::{GasNode, GasProperties, NodeKind, Pipe, SpatialScheme};
use crate::powersys::{Branch, GasTurbine, LoadSpec, Machine, P2g};
use crate::rosenbrock::StepControl;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read scenario file: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("scenario serialization error: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("invalid scenario:\n{}", .0.join("\n"))]
    Validation(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GasSection {
    /// default cell width (m), per-pipe overrides via `pipes[].dx`
    pub dx: f64,
    #[serde(default)]
    pub properties: GasProperties,
    pub nodes: Vec<GasNode>,
    pub pipes: Vec<PipeSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipeSpec {
    #[serde(flatten)]
    pub pipe: Pipe,
    #[serde(default)]
    pub dx: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsSection {
    /// base angular frequency (rad/s); 100 pi by default
    #[serde(default = "default_omega_base")]
    pub omega_base: f64,
    /// apparent power base (W) converting coupling-unit power to pu
    #[serde(default = "default_s_base")]
    pub s_base: f64,
    pub buses: usize,
    #[serde(default)]
    pub branches: Vec<Branch>,
    #[serde(default)]
    pub loads: Vec<LoadSpec>,
    #[serde(default)]
    pub machines: Vec<Machine>,
    /// per-machine voltage set-point used by the power-flow initializer
    #[serde(default)]
    pub v_set: Vec<f64>,
}

fn default_omega_base() -> f64 {
    100.0 * std::f64::consts::PI
}

fn default_s_base() -> f64 {
    100e6
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CouplingSection {
    pub gts: Vec<GasTurbine>,
    pub p2gs: Vec<P2g>,
}

/// Three-phase short-circuit on a bus, applied and cleared on schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusFaultSpec {
    pub bus: usize,
    pub t_start: f64,
    /// cleared this long after application (s)
    pub duration: f64,
    #[serde(default = "default_fault_conductance")]
    pub conductance: f64,
    #[serde(default)]
    pub susceptance: f64,
}

fn default_fault_conductance() -> f64 {
    1e4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    #[serde(flatten)]
    pub control: StepControl,
    pub scheme: SpatialScheme,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            control: StepControl::default(),
            scheme: SpatialScheme::Weno3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// pipe grid indices written per pipe; empty means ends plus fault cells
    pub pipe_cells: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// simulated span (s)
    pub t_end: f64,
    pub gas: GasSection,
    #[serde(default)]
    pub eps: Option<EpsSection>,
    #[serde(default)]
    pub coupling: CouplingSection,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
    #[serde(default)]
    pub bus_fault: Option<BusFaultSpec>,
    #[serde(default)]
    pub events: Vec<EventSpec>,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl Scenario {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_str(&text)
    }

    pub fn from_str(text: &str) -> Result<Self, ScenarioError> {
        let scenario: Scenario = toml::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_toml(&self) -> Result<String, ScenarioError> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn n_nodes(&self) -> usize {
        self.gas.nodes.len()
    }

    /// Cell width of one pipe after overrides.
    pub fn pipe_dx(&self, pipe: usize) -> f64 {
        self.gas.pipes[pipe].dx.unwrap_or(self.gas.dx)
    }

    /// All faults must sit on their grid; exposes the faulted cell index.
    pub fn fault_cell(&self, fault: usize) -> Result<usize, crate::faults::FaultError> {
        let f = &self.faults[fault];
        f.cell_index(self.pipe_dx(f.pipe))
    }

    /// Full cross-reference and precondition check; collects all
    /// violations instead of stopping at the first.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut errs: Vec<String> = Vec::new();
        let n_nodes = self.gas.nodes.len();
        if self.t_end <= 0.0 {
            errs.push(format!("t_end must be positive, got {}", self.t_end));
        }
        if let Err(e) = self.gas.properties.validate() {
            errs.push(e.to_string());
        }
        for (i, node) in self.gas.nodes.iter().enumerate() {
            if node.id != i {
                errs.push(format!("node {i} has id {} (ids must be 0..n in order)", node.id));
            }
            if let NodeKind::CouplingGt { .. } | NodeKind::CouplingP2g { .. } = node.kind {
                errs.push(format!(
                    "node {i}: coupling kinds are assigned through [coupling] units, declare the node as junction"
                ));
            }
        }
        let mut incident_count = vec![0usize; n_nodes];
        for (i, ps) in self.gas.pipes.iter().enumerate() {
            let p = &ps.pipe;
            if p.id != i {
                errs.push(format!("pipe {i} has id {} (ids must be 0..n in order)", p.id));
            }
            if let Err(e) = p.validate() {
                errs.push(e.to_string());
            }
            if p.from_node >= n_nodes || p.to_node >= n_nodes {
                errs.push(format!(
                    "pipe {i} references nodes {} -> {} outside 0..{n_nodes}",
                    p.from_node, p.to_node
                ));
                continue;
            }
            if p.from_node == p.to_node {
                errs.push(format!("pipe {i} loops on node {}", p.from_node));
            }
            incident_count[p.from_node] += 1;
            incident_count[p.to_node] += 1;
            let dx = self.pipe_dx(i);
            let ratio = p.length / dx;
            if dx <= 0.0 || (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) || ratio < 1.0 {
                errs.push(format!(
                    "pipe {i}: length {} is not an integer multiple of dx {dx}",
                    p.length
                ));
            }
        }
        for (k, c) in incident_count.iter().enumerate() {
            if *c == 0 {
                errs.push(format!("node {k} has no incident pipe"));
            }
        }
        for (i, f) in self.faults.iter().enumerate() {
            if f.pipe >= self.gas.pipes.len() {
                errs.push(format!("fault {i} references missing pipe {}", f.pipe));
                continue;
            }
            let pipe = &self.gas.pipes[f.pipe].pipe;
            if !(0.0 < f.position && f.position < pipe.length) {
                errs.push(format!(
                    "fault {i}: position {} m outside pipe {} (length {} m)",
                    f.position, f.pipe, pipe.length
                ));
                continue;
            }
            if f.ramp < 0.0 || f.t_start < 0.0 {
                errs.push(format!("fault {i}: negative timing"));
            }
            if let Err(e) = f.validate(pipe, self.pipe_dx(f.pipe)) {
                errs.push(format!("fault {i}: {e}"));
            }
        }
        // electric side
        let n_bus = self.eps.as_ref().map_or(0, |e| e.buses);
        if let Some(eps) = &self.eps {
            if eps.machines.is_empty() {
                errs.push("eps section declared without machines".into());
            }
            if !eps.v_set.is_empty() && eps.v_set.len() != eps.machines.len() {
                errs.push("eps.v_set must list one value per machine".into());
            }
            for (i, b) in eps.branches.iter().enumerate() {
                if b.from >= n_bus || b.to >= n_bus {
                    errs.push(format!("branch {i} references buses outside 0..{n_bus}"));
                }
                if b.resistance == 0.0 && b.reactance == 0.0 {
                    errs.push(format!("branch {i} has zero impedance"));
                }
            }
            for (i, l) in eps.loads.iter().enumerate() {
                if l.bus >= n_bus {
                    errs.push(format!("load {i} references bus {} outside 0..{n_bus}", l.bus));
                }
            }
            for (i, m) in eps.machines.iter().enumerate() {
                if m.bus >= n_bus {
                    errs.push(format!("machine {i} references bus {} outside 0..{n_bus}", m.bus));
                }
                if m.inertia <= 0.0 {
                    errs.push(format!("machine {i}: inertia must be positive"));
                }
            }
        } else if !self.coupling.gts.is_empty() || !self.coupling.p2gs.is_empty() || self.bus_fault.is_some() {
            errs.push("coupling units or bus faults declared without an [eps] section".into());
        }
        let n_mach = self.eps.as_ref().map_or(0, |e| e.machines.len());
        let mut coupled_nodes: Vec<Option<&str>> = vec![None; n_nodes];
        let mut claim = |errs: &mut Vec<String>, node: usize, what: &'static str| {
            if node >= n_nodes {
                errs.push(format!("{what} references missing gas node {node}"));
                return;
            }
            if let Some(prev) = coupled_nodes[node] {
                errs.push(format!("gas node {node} already coupled to {prev}"));
            } else {
                coupled_nodes[node] = Some(what);
            }
        };
        for (i, gt) in self.coupling.gts.iter().enumerate() {
            if gt.machine >= n_mach {
                errs.push(format!("gas turbine {i} references missing machine {}", gt.machine));
            }
            claim(&mut errs, gt.gas_node, "a gas turbine");
            if gt.gas_node < n_nodes
                && !matches!(self.gas.nodes[gt.gas_node].kind, NodeKind::Junction)
            {
                errs.push(format!(
                    "gas turbine {i}: node {} must be declared junction",
                    gt.gas_node
                ));
            }
            if gt.droop <= 0.0 || gt.rated_fuel <= 0.0 {
                errs.push(format!("gas turbine {i}: droop and rated_fuel must be positive"));
            }
        }
        for (i, p2g) in self.coupling.p2gs.iter().enumerate() {
            if p2g.bus >= n_bus {
                errs.push(format!("p2g {i} references missing bus {}", p2g.bus));
            }
            claim(&mut errs, p2g.gas_node, "a p2g unit");
            if p2g.gas_node < n_nodes
                && !matches!(self.gas.nodes[p2g.gas_node].kind, NodeKind::Junction)
            {
                errs.push(format!("p2g {i}: node {} must be declared junction", p2g.gas_node));
            }
            if !(0.0 < p2g.efficiency && p2g.efficiency <= 1.0) {
                errs.push(format!("p2g {i}: efficiency must lie in (0, 1]"));
            }
            if p2g.q_max <= 0.0 || p2g.pressure_set <= 0.0 {
                errs.push(format!("p2g {i}: q_max and pressure_set must be positive"));
            }
        }
        if let Some(bf) = &self.bus_fault {
            if bf.bus >= n_bus {
                errs.push(format!("bus fault references missing bus {}", bf.bus));
            }
            if bf.duration <= 0.0 {
                errs.push("bus fault duration must be positive".into());
            }
        }
        for (i, ev) in self.events.iter().enumerate() {
            let need_node = matches!(
                ev.kind,
                EventKind::RegulatorMinPressure
                    | EventKind::LoadMinPressure
                    | EventKind::LoadMaxPressure
                    | EventKind::SourceMaxFlow
            );
            if need_node {
                match ev.node {
                    Some(n) if n < n_nodes => {}
                    _ => errs.push(format!("event {i}: kind needs a valid `node`")),
                }
            }
            match ev.kind {
                EventKind::GtMinInletPressure => {
                    let node_ok = ev.node.map_or(false, |n| n < n_nodes);
                    let unit_ok = ev.unit.map_or(false, |u| u < self.coupling.gts.len());
                    if !node_ok && !unit_ok {
                        errs.push(format!("event {i}: needs a valid `unit` (gas turbine) or `node`"));
                    }
                }
                EventKind::P2gSaturation => {
                    if !ev.unit.map_or(false, |u| u < self.coupling.p2gs.len()) {
                        errs.push(format!("event {i}: needs a valid `unit` (p2g)"));
                    }
                }
                EventKind::FaultOnset | EventKind::FaultClear => {
                    if !ev.fault.map_or(false, |f| f < self.faults.len()) {
                        errs.push(format!("event {i}: needs a valid `fault` index"));
                    }
                }
                _ => {}
            }
            if !ev.threshold.is_finite() {
                errs.push(format!("event {i}: threshold must be finite"));
            }
        }
        if !self.solver.control.atol.is_finite()
            || self.solver.control.atol <= 0.0
            || self.solver.control.rtol < 0.0
        {
            errs.push("solver tolerances must be positive".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Validation(errs))
        }
    }

    /// Events implied by the declared units and faults: scheduled fault
    /// onsets, bus fault application and clearing, turbine minimum-inlet
    /// trips and p2g saturation watches.
    pub fn implied_events(&self) -> Vec<EventSpec> {
        let mut out = Vec::new();
        for (i, f) in self.faults.iter().enumerate() {
            out.push(EventSpec {
                kind: EventKind::FaultOnset,
                node: None,
                unit: None,
                fault: Some(i),
                threshold: f.t_start,
                action: EventAction::ActivateFault,
            });
        }
        if let Some(bf) = &self.bus_fault {
            out.push(EventSpec {
                kind: EventKind::FaultOnset,
                node: None,
                unit: None,
                fault: None,
                threshold: bf.t_start,
                action: EventAction::ApplyBusFault,
            });
            out.push(EventSpec {
                kind: EventKind::FaultClear,
                node: None,
                unit: None,
                fault: None,
                threshold: bf.t_start + bf.duration,
                action: EventAction::ClearBusFault,
            });
        }
        for (u, gt) in self.coupling.gts.iter().enumerate() {
            out.push(EventSpec {
                kind: EventKind::GtMinInletPressure,
                node: None,
                unit: Some(u),
                fault: None,
                threshold: gt.p_min_inlet,
                action: EventAction::TripGt,
            });
        }
        for (u, p2g) in self.coupling.p2gs.iter().enumerate() {
            out.push(EventSpec {
                kind: EventKind::P2gSaturation,
                node: None,
                unit: Some(u),
                fault: None,
                threshold: p2g.q_max,
                action: EventAction::ConvertNodeToConstFlow,
            });
        }
        out
    }
}
