//! Gas network data model and spatial semi-discretization of the isothermal
//! pipe equations
//!
//! ```text
//!   dp/dt + (c^2/S) dq/dx = 0
//!   dq/dt +  S      dp/dx = -lambda c^2 q|q| / (2 D S p)
//! ```
//!
//! together with the node continuity relations that tie pipe ends to
//! network nodes.

mod scheme;

pub use scheme::{
    kt_interface_fluxes, pipe_rhs, segment_rhs, weno3_interface_fluxes, weno_weights, Padding,
    SchemeWorkspace, SegmentBoundaryFlow, SegmentFlux,
};

use serde::{Deserialize, Serialize};

/// WENO smoothness regularization, fixed by the flux reconstruction.
pub const WENO_EPSILON: f64 = 1e-6;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum GasError {
    #[error("pipe {pipe}: length {length} is not an integer multiple of dx {dx}")]
    NonIntegerCellCount { pipe: usize, length: f64, dx: f64 },
    #[error("pipe {pipe}: non-positive pressure {value} at cell {cell}")]
    NonPositivePressure { pipe: usize, cell: usize, value: f64 },
    #[error("invalid gas properties: {0}")]
    InvalidProperties(String),
    #[error("pipe {pipe}: invalid geometry: {reason}")]
    InvalidPipe { pipe: usize, reason: String },
    #[error("node {node} referenced by pipe {pipe} does not exist")]
    DanglingNode { node: usize, pipe: usize },
}

/// Physical constants of the transported gas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GasProperties {
    /// isentropic sound speed c (m/s)
    pub sound_speed: f64,
    /// adiabatic coefficient k (-)
    pub adiabatic_index: f64,
    /// molar mass (kg/mol)
    pub molar_mass: f64,
    /// gas temperature (K)
    pub temperature: f64,
    /// compressibility factor Z (-)
    pub compressibility: f64,
    /// ideal gas constant (J/(mol K))
    pub gas_constant: f64,
    /// atmospheric pressure (Pa)
    pub atmospheric_pressure: f64,
}

impl Default for GasProperties {
    fn default() -> Self {
        Self {
            sound_speed: 340.0,
            adiabatic_index: 1.3,
            molar_mass: 0.016,
            temperature: 273.15,
            compressibility: 1.0,
            gas_constant: 8.314,
            atmospheric_pressure: 0.101e6,
        }
    }
}

impl GasProperties {
    pub fn validate(&self) -> Result<(), GasError> {
        let all_positive = [
            self.sound_speed,
            self.molar_mass,
            self.temperature,
            self.compressibility,
            self.gas_constant,
            self.atmospheric_pressure,
        ]
        .iter()
        .all(|v| *v > 0.0);
        if !all_positive {
            return Err(GasError::InvalidProperties(
                "all properties must be positive".into(),
            ));
        }
        if self.adiabatic_index <= 1.0 {
            return Err(GasError::InvalidProperties(format!(
                "adiabatic coefficient must exceed 1, got {}",
                self.adiabatic_index
            )));
        }
        Ok(())
    }
}

/// A single pipeline with constant cross-section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pipe {
    pub id: usize,
    #[serde(rename = "from")]
    pub from_node: usize,
    #[serde(rename = "to")]
    pub to_node: usize,
    /// length L (m)
    pub length: f64,
    /// inner diameter D (m)
    pub diameter: f64,
    /// Darcy friction factor lambda (-)
    pub friction: f64,
}

impl Pipe {
    /// Cross-sectional area S = pi D^2 / 4 (m^2).
    pub fn area(&self) -> f64 {
        std::f64::consts::PI * self.diameter * self.diameter / 4.0
    }

    pub fn validate(&self) -> Result<(), GasError> {
        if self.length <= 0.0 || self.diameter <= 0.0 || self.friction <= 0.0 {
            return Err(GasError::InvalidPipe {
                pipe: self.id,
                reason: format!(
                    "length, diameter and friction must be positive (L={}, D={}, lambda={})",
                    self.length, self.diameter, self.friction
                ),
            });
        }
        Ok(())
    }
}

/// A pipe divided into `n_cells` sections of width `dx`, carrying grid-point
/// state at the `n_cells + 1` cell edges. Edge 0 is the inlet, edge
/// `n_cells` the outlet.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizedPipe {
    pub pipe: Pipe,
    pub dx: f64,
    pub n_cells: usize,
    /// pressures (Pa), one per cell edge
    pub pressure: Vec<f64>,
    /// mass flows (kg/s), one per cell edge
    pub flow: Vec<f64>,
}

impl DiscretizedPipe {
    pub fn n_points(&self) -> usize {
        self.n_cells + 1
    }
}

/// Splits a pipe into `L/dx` cells; fails unless the ratio is integral
/// (relative tolerance 1e-9). State vectors are allocated but unset; the
/// steady-state initializer fills them.
pub fn discretize_pipe(pipe: Pipe, dx: f64) -> Result<DiscretizedPipe, GasError> {
    pipe.validate()?;
    if dx <= 0.0 {
        return Err(GasError::NonIntegerCellCount {
            pipe: pipe.id,
            length: pipe.length,
            dx,
        });
    }
    let ratio = pipe.length / dx;
    let n_cells = ratio.round();
    if n_cells < 1.0 || (ratio - n_cells).abs() > 1e-9 * ratio.max(1.0) {
        return Err(GasError::NonIntegerCellCount {
            pipe: pipe.id,
            length: pipe.length,
            dx,
        });
    }
    let n_cells = n_cells as usize;
    Ok(DiscretizedPipe {
        pipe,
        dx,
        n_cells,
        pressure: vec![0.0; n_cells + 1],
        flow: vec![0.0; n_cells + 1],
    })
}

/// Spatial reconstruction scheme for the interface fluxes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpatialScheme {
    Weno3,
    Kt,
}

/// How a network node constrains its incident pipe ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeKind {
    /// pressure set-point (Pa); a gas well or regulated source
    ConstantPressure { pressure: f64 },
    /// net mass flow drawn from the network (kg/s, positive = load)
    ConstantMassFlow { draw: f64 },
    /// pure junction, zero net draw
    Junction,
    /// node feeding a gas turbine; draw follows the turbine fuel demand
    CouplingGt { unit: usize },
    /// node fed by a power-to-gas unit; constant pressure until saturation
    CouplingP2g { unit: usize },
}

impl NodeKind {
    /// Nodes that pin the pressure of their incident pipe ends.
    pub fn is_pressure_type(&self) -> bool {
        matches!(
            self,
            NodeKind::ConstantPressure { .. } | NodeKind::CouplingP2g { .. }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GasNode {
    pub id: usize,
    #[serde(flatten)]
    pub kind: NodeKind,
}

/// Which end of a pipe is incident to a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PipeEnd {
    Inlet,
    Outlet,
}

/// Sparse node-pipe incidence: +1 where a pipe flows into a node, -1 where
/// it flows out. Each pipe column carries exactly one entry of each sign.
#[derive(Debug, Clone)]
pub struct IncidenceMatrix {
    n_nodes: usize,
    /// per node: (pipe id, which end touches the node, incidence sign)
    incident: Vec<Vec<(usize, PipeEnd, f64)>>,
}

impl IncidenceMatrix {
    pub fn from_pipes(pipes: &[Pipe], n_nodes: usize) -> Result<Self, GasError> {
        let mut incident = vec![Vec::new(); n_nodes];
        for pipe in pipes {
            for (node, end, sign) in [
                (pipe.from_node, PipeEnd::Inlet, -1.0),
                (pipe.to_node, PipeEnd::Outlet, 1.0),
            ] {
                if node >= n_nodes {
                    return Err(GasError::DanglingNode {
                        node,
                        pipe: pipe.id,
                    });
                }
                incident[node].push((pipe.id, end, sign));
            }
        }
        Ok(Self { n_nodes, incident })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    /// Pipe ends incident to `node` with their incidence signs.
    pub fn ends_at(&self, node: usize) -> &[(usize, PipeEnd, f64)] {
        &self.incident[node]
    }

    /// Dense entry of the incidence matrix (test and debugging aid).
    pub fn entry(&self, node: usize, pipe: usize) -> f64 {
        self.incident[node]
            .iter()
            .filter(|(p, _, _)| *p == pipe)
            .map(|(_, _, s)| *s)
            .sum()
    }
}

/// Per-pipe end state as seen from the nodes.
#[derive(Debug, Clone, Copy)]
pub struct PipeEndState {
    pub inlet_pressure: f64,
    pub inlet_flow: f64,
    pub outlet_pressure: f64,
    pub outlet_flow: f64,
}

impl PipeEndState {
    fn pressure(&self, end: PipeEnd) -> f64 {
        match end {
            PipeEnd::Inlet => self.inlet_pressure,
            PipeEnd::Outlet => self.outlet_pressure,
        }
    }
    fn flow(&self, end: PipeEnd) -> f64 {
        match end {
            PipeEnd::Inlet => self.inlet_flow,
            PipeEnd::Outlet => self.outlet_flow,
        }
    }
}

/// Node-coupling residuals for the pure gas node kinds.
///
/// Per node, in order: the mass continuity defect
/// `sum(sign * q_end) - q_node`, the kind closure (pressure or draw
/// set-point; zero draw at junctions), then one pressure-continuity defect
/// `p_end - p_node` per incident pipe end. Coupling nodes contribute their
/// continuity and pressure rows here; their closures live with the unit
/// models.
pub fn node_residuals(
    nodes: &[GasNode],
    incidence: &IncidenceMatrix,
    ends: &[PipeEndState],
    node_pressure: &[f64],
    node_draw: &[f64],
    out: &mut Vec<f64>,
) {
    out.clear();
    for node in nodes {
        let k = node.id;
        let mut mass = -node_draw[k];
        for (pipe, end, sign) in incidence.ends_at(k) {
            mass += sign * ends[*pipe].flow(*end);
        }
        out.push(mass);
        match node.kind {
            NodeKind::ConstantPressure { pressure } => out.push(node_pressure[k] - pressure),
            NodeKind::ConstantMassFlow { draw } => out.push(node_draw[k] - draw),
            NodeKind::Junction => out.push(node_draw[k]),
            // closures provided by the coupling units
            NodeKind::CouplingGt { .. } | NodeKind::CouplingP2g { .. } => {}
        }
        for (pipe, end, _) in incidence.ends_at(k) {
            out.push(ends[*pipe].pressure(*end) - node_pressure[k]);
        }
    }
}

#[cfg(test)]
mod tests;
