//! Flattening of the gas network, fault closures, electric system and
//! coupling units into one semi-explicit DAE
//! `[y'; 0] = [f(t, y, z); g(t, y, z)]` with a fixed-pattern sparse
//! Jacobian.
//!
//! Differential states: pipe grid pressures and mass flows (except the
//! values pinned by node or fault closures), one linepack accumulator per
//! pipe, rotor speed and angle per machine, five turbine states per gas
//! turbine. Algebraic states: node pressures and draws, the pinned pipe
//! end values, fault face variables, bus voltages, machine currents and
//! electric power, and power-to-gas currents and power.
//!
//! The Jacobian mixes analytic blocks for the linear rows with directional
//! finite differences for the nonlinear ones. Gas columns are grouped so
//! that five-point stencils never collide, which prices a full Jacobian
//! refresh at twenty sweeps of the pipe right-hand sides regardless of the
//! grid size.

mod build;
mod jacobian;
mod steady;


use crate::events::{EventError, EventSpec, Probe};
use crate::faults::{FaultSpec, FaultState};
use crate::gasnet::{
    GasNode, GasProperties, IncidenceMatrix, NodeKind, Pipe, PipeEnd, SchemeWorkspace,
    SpatialScheme,
};
use crate::powersys::{EpsNetwork, GasTurbine, GtState, Machine, P2g};
use crate::rosenbrock::{DaeSystem, EvalFailure, SolveError};
use crate::scenario::Scenario;
use std::collections::HashMap;

#[derive(Debug, thiserror::Error)]
pub enum DaeError {
    #[error("steady-state iteration did not converge: residual {residual:.3e} after {iters} iterations")]
    NoConvergence { iters: usize, residual: f64 },
    #[error("power flow did not converge: residual {residual:.3e}")]
    PowerFlowFailed { residual: f64 },
    #[error("consistency solve failed at t = {t}: residual {residual:.3e}")]
    InconsistentRestart { t: f64, residual: f64 },
    #[error("jacobian pattern construction failed: {0}")]
    Pattern(String),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Power(#[from] crate::powersys::PowerError),
}

/// Identity of one state-vector entry, stable across layout rebuilds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VarKey {
    CellP { pipe: usize, point: usize },
    CellQ { pipe: usize, point: usize },
    FaultQUp { fault: usize },
    FaultQDn { fault: usize },
    FaultQLeak { fault: usize },
    Linepack { pipe: usize },
    NodeP { node: usize },
    NodeQ { node: usize },
    MachOmega { unit: usize },
    MachDelta { unit: usize },
    GtState { unit: usize, comp: usize },
    BusUx { bus: usize },
    BusUy { bus: usize },
    MachIx { unit: usize },
    MachIy { unit: usize },
    MachPe { unit: usize },
    P2gIx { unit: usize },
    P2gIy { unit: usize },
    P2gPower { unit: usize },
}

/// Current closure of a node; starts from the scenario declaration and is
/// mutated by event actions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RuntimeKind {
    /// node pressure pinned (wells, unsaturated power-to-gas)
    Pressure(f64),
    /// node draw pinned (loads, junctions, converted sources)
    Flow(f64),
    /// draw follows the turbine fuel demand
    GtDraw { unit: usize },
    /// pressure pinned by the p2g set-point
    P2gPressure { unit: usize },
}

impl RuntimeKind {
    pub fn is_pressure(&self) -> bool {
        matches!(self, RuntimeKind::Pressure(_) | RuntimeKind::P2gPressure { .. })
    }
}

/// Discrete run-time modes; any change is applied between accepted steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Modes {
    pub node_kind: Vec<RuntimeKind>,
    pub fault: Vec<FaultState>,
    pub gt_tripped: Vec<bool>,
    pub bus_fault_on: bool,
}

/// Geometry of one discretized pipe.
#[derive(Debug, Clone)]
pub struct PipeGeom {
    pub pipe: Pipe,
    pub dx: f64,
    /// number of cells; grid points are `0..=n_cells`
    pub n_cells: usize,
}

impl PipeGeom {
    pub fn n_points(&self) -> usize {
        self.n_cells + 1
    }
    /// linepack weight per grid point: S dx / c^2
    fn lp_weight(&self, props: &GasProperties) -> f64 {
        self.pipe.area() * self.dx / (props.sound_speed * props.sound_speed)
    }
}

/// Electric-side submodel.
#[derive(Debug, Clone)]
pub struct EpsBlock {
    pub machines: Vec<Machine>,
    pub gts: Vec<GasTurbine>,
    pub p2gs: Vec<P2g>,
    pub network: EpsNetwork,
    pub v_set: Vec<f64>,
    /// apparent-power base (W) for coupling-unit conversions
    pub s_base: f64,
}

/// Per-pipe layout: global slot of every grid value plus the active fault
/// face slots.
#[derive(Debug, Clone)]
struct PipeLayout {
    p_slot: Vec<usize>,
    /// at an active fault point this holds the upstream face slot
    q_slot: Vec<usize>,
    fault: Option<PipeFaultLayout>,
    acc_slot: usize,
    /// contiguous runs of grid points whose pressure rows are live, each
    /// with the bounding interface positions used by the accumulator
    lp_runs: Vec<LpRun>,
}

#[derive(Debug, Clone, Copy)]
struct PipeFaultLayout {
    cell: usize,
    q_up: usize,
    q_dn: usize,
    q_leak: Option<usize>,
}

/// One run of live pressure rows: points `start..=end`, bounded by the
/// interfaces `start - 1/2` and `end + 1/2` of its segment.
#[derive(Debug, Clone, Copy)]
struct LpRun {
    start: usize,
    end: usize,
}

/// Row indices of the algebraic equations, paired one-to-one with the
/// algebraic slots so that masking a row freezes exactly its variable.
#[derive(Debug, Clone, Default)]
struct GRows {
    mass: Vec<usize>,
    closure: Vec<usize>,
    /// per (pipe, end): the pressure-continuity row
    press: HashMap<(usize, PipeEnd), usize>,
    /// per active fault: [up/mass row, dn/eq15 row, pin/eq16 row, law row]
    fault_rows: Vec<Option<FaultRows>>,
    stator: Vec<(usize, usize)>,
    pe: Vec<usize>,
    bus: Vec<(usize, usize)>,
    p2g_ix: Vec<usize>,
    p2g_iy: Vec<usize>,
    p2g_power: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
struct FaultRows {
    /// rupture: q_up characteristic; leak: hole mass balance
    up: usize,
    /// rupture: q_dn characteristic; leak: downstream characteristic
    dn: usize,
    /// rupture: pressure pin; leak: upstream characteristic
    pin: usize,
    /// leak only: hole outflow law
    law: Option<usize>,
}

/// Variable and equation numbering of the flattened system.
#[derive(Debug, Clone)]
pub struct DaeLayout {
    pub n_diff: usize,
    pub n_alg: usize,
    keys: Vec<VarKey>,
    slot_of: HashMap<VarKey, usize>,
    pipes: Vec<PipeLayout>,
    rows: GRows,
}

impl DaeLayout {
    pub fn dim(&self) -> usize {
        self.n_diff + self.n_alg
    }
    pub fn slot(&self, key: VarKey) -> Option<usize> {
        self.slot_of.get(&key).copied()
    }
    pub fn key(&self, slot: usize) -> VarKey {
        self.keys[slot]
    }
}

/// Scratch buffers for one pipe.
#[derive(Debug, Clone, Default)]
struct PipeScratch {
    p: Vec<f64>,
    q: Vec<f64>,
    dp: Vec<f64>,
    dq: Vec<f64>,
    ws: SchemeWorkspace,
    acc_rate: f64,
}

/// Trajectory channels in display units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Time,
    /// pressure at a grid point (MPa)
    PipeP { pipe: usize, point: usize },
    /// mass flow at a grid point (kg/s); the upstream face at a faulted point
    PipeQ { pipe: usize, point: usize },
    /// node pressure (MPa)
    NodeP { node: usize },
    /// node draw (kg/s)
    NodeQ { node: usize },
    /// fault face values (MPa, kg/s)
    FaultPUp { fault: usize },
    FaultPDn { fault: usize },
    FaultQUp { fault: usize },
    FaultQDn { fault: usize },
    /// bus voltage magnitude (pu)
    BusVmag { bus: usize },
    /// machine speed (pu)
    MachOmega { unit: usize },
    /// turbine mechanical power (pu) and fuel signal (pu)
    GtPm { unit: usize },
    GtFuel { unit: usize },
    /// p2g electric power (MW)
    P2gPower { unit: usize },
}

/// The assembled co-simulation system.
pub struct SystemModel {
    pub props: GasProperties,
    pub pipes: Vec<PipeGeom>,
    pub nodes: Vec<GasNode>,
    pub incidence: IncidenceMatrix,
    pub scheme: SpatialScheme,
    pub faults: Vec<FaultSpec>,
    pub bus_fault: Option<crate::scenario::BusFaultSpec>,
    pub eps: Option<EpsBlock>,
    pub modes: Modes,
    pub layout: DaeLayout,
    jac: jacobian::JacobianPlan,
    scratch: Vec<PipeScratch>,
    /// residual parts buffer reused across evaluations
    gas_buf: Vec<f64>,
    fd_state: Vec<f64>,
    fd_plus: Vec<f64>,
    fd_minus: Vec<f64>,
}

impl SystemModel {
    /// Builds and validates the model for a scenario, with all faults
    /// inactive and every unit in service.
    pub fn new(scenario: &Scenario) -> Result<Self, crate::Error> {
        build::build(scenario)
    }

    pub fn n_diff(&self) -> usize {
        self.layout.n_diff
    }

    pub fn n_alg(&self) -> usize {
        self.layout.n_alg
    }

    /// Effective draw posted by a gas turbine at its node.
    fn gt_draw(&self, unit: usize, state: &[f64]) -> f64 {
        if self.modes.gt_tripped[unit] {
            return 0.0;
        }
        let eps = self.eps.as_ref().expect("gt without eps");
        let gt = &eps.gts[unit];
        let fuel = state[self.layout.slot(VarKey::GtState { unit, comp: 2 }).unwrap()];
        fuel * gt.rated_fuel
    }

    /// Stacked residual `[f; g]`; `out` has layout dimension.
    pub fn assemble_residual(
        &mut self,
        t: f64,
        state: &[f64],
        out: &mut [f64],
    ) -> Result<(), EvalFailure> {
        out.iter_mut().for_each(|v| *v = 0.0);
        self.gas_residual(t, state, out)?;
        self.node_rows(t, state, out);
        self.fault_rows(t, state, out);
        self.eps_rows(t, state, out);
        Ok(())
    }

    /// Pipe PDE rows and linepack accumulator rows only (cheap slice used
    /// by the colored finite differences).
    fn gas_residual(
        &mut self,
        _t: f64,
        state: &[f64],
        out: &mut [f64],
    ) -> Result<(), EvalFailure> {
        let scheme = self.scheme;
        let props = self.props;
        let n_diff = self.layout.n_diff;
        let pipes = &self.pipes;
        let layouts = &self.layout.pipes;
        let scratch = &mut self.scratch;
        let fail = std::sync::Mutex::new(None::<EvalFailure>);
        let eval_pipe = |idx: usize, sc: &mut PipeScratch| {
            let geom = &pipes[idx];
            let pl = &layouts[idx];
            let n = geom.n_points();
            sc.p.resize(n, 0.0);
            sc.q.resize(n, 0.0);
            sc.dp.resize(n, 0.0);
            sc.dq.resize(n, 0.0);
            for i in 0..n {
                sc.p[i] = state[pl.p_slot[i]];
                sc.q[i] = state[pl.q_slot[i]];
            }
            let lp_w = geom.lp_weight(&props) / geom.dx; // S / c^2
            let mut acc = 0.0;
            let result: Result<(), crate::gasnet::GasError> = (|| {
                if let Some(fl) = pl.fault {
                    let j = fl.cell;
                    sc.q[j] = state[fl.q_up];
                    {
                        let (head_p, _) = sc.p.split_at(j + 1);
                        let (head_q, _) = sc.q.split_at(j + 1);
                        let (head_dp, _) = sc.dp.split_at_mut(j + 1);
                        let (head_dq, _) = sc.dq.split_at_mut(j + 1);
                        crate::gasnet::segment_rhs(
                            head_p,
                            head_q,
                            scheme,
                            crate::gasnet::Padding::Ghost,
                            &props,
                            &geom.pipe,
                            geom.dx,
                            &mut sc.ws,
                            head_dp,
                            head_dq,
                        )?;
                    }
                    for run in pl.lp_runs.iter().filter(|r| r.end <= j) {
                        acc +=
                            lp_w * (sc.ws.flux.p_flux[run.start] - sc.ws.flux.p_flux[run.end + 1]);
                    }
                    sc.q[j] = state[fl.q_dn];
                    {
                        let (_, tail_p) = sc.p.split_at(j);
                        let (_, tail_q) = sc.q.split_at(j);
                        let (_, tail_dp) = sc.dp.split_at_mut(j);
                        let (_, tail_dq) = sc.dq.split_at_mut(j);
                        crate::gasnet::segment_rhs(
                            tail_p,
                            tail_q,
                            scheme,
                            crate::gasnet::Padding::Ghost,
                            &props,
                            &geom.pipe,
                            geom.dx,
                            &mut sc.ws,
                            tail_dp,
                            tail_dq,
                        )?;
                    }
                    for run in pl.lp_runs.iter().filter(|r| r.start > j) {
                        acc += lp_w
                            * (sc.ws.flux.p_flux[run.start - j]
                                - sc.ws.flux.p_flux[run.end + 1 - j]);
                    }
                } else {
                    crate::gasnet::segment_rhs(
                        &sc.p,
                        &sc.q,
                        scheme,
                        crate::gasnet::Padding::Ghost,
                        &props,
                        &geom.pipe,
                        geom.dx,
                        &mut sc.ws,
                        &mut sc.dp,
                        &mut sc.dq,
                    )?;
                    for run in &pl.lp_runs {
                        acc +=
                            lp_w * (sc.ws.flux.p_flux[run.start] - sc.ws.flux.p_flux[run.end + 1]);
                    }
                }
                Ok(())
            })();
            if let Err(e) = result {
                *fail.lock().unwrap() = Some(EvalFailure::new(e.to_string()));
            }
            sc.acc_rate = acc;
        };
        crate::par::for_each_mut(scratch, eval_pipe);
        if let Some(e) = fail.into_inner().unwrap() {
            return Err(e);
        }
        for (idx, pl) in layouts.iter().enumerate() {
            let sc = &scratch[idx];
            for i in 0..sc.dp.len() {
                let ps = pl.p_slot[i];
                if ps < n_diff {
                    out[ps] = sc.dp[i];
                }
                let qs = pl.q_slot[i];
                if qs < n_diff && pl.fault.map_or(true, |f| f.cell != i) {
                    out[qs] = sc.dq[i];
                }
            }
            out[pl.acc_slot] = sc.acc_rate;
        }
        Ok(())
    }

    /// Node continuity, closure, and pressure rows.
    fn node_rows(&self, t: f64, state: &[f64], out: &mut [f64]) {
        let _ = t;
        let layout = &self.layout;
        for node in &self.nodes {
            let k = node.id;
            let np = state[layout.slot(VarKey::NodeP { node: k }).unwrap()];
            let nq = state[layout.slot(VarKey::NodeQ { node: k }).unwrap()];
            let mut mass = -nq;
            for (pipe, end, sign) in self.incidence.ends_at(k) {
                let pl = &layout.pipes[*pipe];
                let point = match end {
                    PipeEnd::Inlet => 0,
                    PipeEnd::Outlet => self.pipes[*pipe].n_cells,
                };
                mass += sign * state[pl.q_slot[point]];
                out[layout.rows.press[&(*pipe, *end)]] = state[pl.p_slot[point]] - np;
            }
            out[layout.rows.mass[k]] = mass;
            out[layout.rows.closure[k]] = match self.modes.node_kind[k] {
                RuntimeKind::Pressure(set) => np - set,
                RuntimeKind::Flow(draw) => nq - draw,
                RuntimeKind::GtDraw { unit } => nq - self.gt_draw(unit, state),
                RuntimeKind::P2gPressure { unit } => {
                    np - self.eps.as_ref().unwrap().p2gs[unit].pressure_set
                }
            };
        }
    }

    /// Fault closure rows for the active faults.
    fn fault_rows(&self, t: f64, state: &[f64], out: &mut [f64]) {
        let layout = &self.layout;
        for (fi, spec) in self.faults.iter().enumerate() {
            let Some(rows) = layout.rows.fault_rows[fi] else {
                continue;
            };
            let fs = &self.modes.fault[fi];
            let pl = &layout.pipes[spec.pipe];
            let geom = &self.pipes[spec.pipe];
            let fl = pl.fault.expect("fault rows without fault layout");
            let j = fl.cell;
            let win = crate::faults::FaultWindow {
                p_m2: state[pl.p_slot[j - 2]],
                p_m1: state[pl.p_slot[j - 1]],
                p_p1: state[pl.p_slot[j + 1]],
                p_p2: state[pl.p_slot[j + 2]],
                q_m2: state[pl.q_slot[j - 2]],
                q_m1: state[pl.q_slot[j - 1]],
                q_p1: state[pl.q_slot[j + 1]],
                q_p2: state[pl.q_slot[j + 2]],
            };
            let p_fault = state[pl.p_slot[j]];
            let q_up = state[fl.q_up];
            let q_dn = state[fl.q_dn];
            match spec.kind {
                crate::faults::FaultKind::Rupture => {
                    let target = crate::faults::rupture_pressure_target(
                        fs.pre_fault_pressure,
                        t,
                        spec.t_start,
                        spec.ramp,
                        self.props.atmospheric_pressure,
                    );
                    let res = crate::faults::rupture_boundary_residuals(
                        &win, q_up, q_dn, p_fault, target, &geom.pipe, &self.props,
                    );
                    out[rows.up] = res[0];
                    out[rows.dn] = res[1];
                    out[rows.pin] = res[2];
                }
                crate::faults::FaultKind::Leak => {
                    let area = crate::faults::effective_hole_area(
                        spec.hole_area().expect("validated leak"),
                        t,
                        spec.t_start,
                        spec.ramp,
                    );
                    let q_leak = state[fl.q_leak.expect("leak layout")];
                    let res = crate::faults::leak_boundary_residuals(
                        &win, q_up, q_dn, p_fault, q_leak, area, &geom.pipe, &self.props,
                    );
                    out[rows.dn] = res[0];
                    out[rows.pin] = res[1];
                    out[rows.up] = res[2];
                    out[rows.law.expect("leak law row")] = res[3];
                }
            }
        }
    }

    /// Machine, turbine, network and p2g rows.
    fn eps_rows(&self, _t: f64, state: &[f64], out: &mut [f64]) {
        let Some(eps) = &self.eps else { return };
        let layout = &self.layout;
        let n_mach = eps.machines.len();
        let omega_base = eps.network.omega_base;
        let mut sum_t = 0.0;
        let mut coi = 0.0;
        for (m, mach) in eps.machines.iter().enumerate() {
            let w = state[layout.slot(VarKey::MachOmega { unit: m }).unwrap()];
            sum_t += mach.inertia;
            coi += mach.inertia * w;
        }
        coi /= sum_t;
        for m in 0..n_mach {
            let mach = &eps.machines[m];
            let omega = state[layout.slot(VarKey::MachOmega { unit: m }).unwrap()];
            let delta = state[layout.slot(VarKey::MachDelta { unit: m }).unwrap()];
            let pe = state[layout.slot(VarKey::MachPe { unit: m }).unwrap()];
            let gt = eps.gts.iter().position(|g| g.machine == m);
            let p_mech = match gt {
                Some(u) if self.modes.gt_tripped[u] => 0.0,
                Some(u) => {
                    let st = self.gt_state(u, state);
                    crate::powersys::gas_turbine_eval(&eps.gts[u], &st, omega)
                        .1
                        .p_mech
                }
                None => mach.p_mech,
            };
            let (domega, ddelta) =
                crate::powersys::machine_derivatives(mach, omega, p_mech, pe, coi, omega_base);
            out[layout.slot(VarKey::MachOmega { unit: m }).unwrap()] = domega;
            out[layout.slot(VarKey::MachDelta { unit: m }).unwrap()] = ddelta;
            // turbine states
            if let Some(u) = gt {
                let base = layout.slot(VarKey::GtState { unit: u, comp: 0 }).unwrap();
                if self.modes.gt_tripped[u] {
                    for c in 0..GtState::DIM {
                        out[base + c] = 0.0;
                    }
                } else {
                    let st = self.gt_state(u, state);
                    let d = crate::powersys::gas_turbine_eval(&eps.gts[u], &st, omega).0;
                    out[base] = d.temp_int;
                    out[base + 1] = d.valve;
                    out[base + 2] = d.fuel;
                    out[base + 3] = d.shield;
                    out[base + 4] = d.thermocouple;
                }
            }
            // stator or open-circuit rows
            let ix = state[layout.slot(VarKey::MachIx { unit: m }).unwrap()];
            let iy = state[layout.slot(VarKey::MachIy { unit: m }).unwrap()];
            let ux = state[layout.slot(VarKey::BusUx { bus: mach.bus }).unwrap()];
            let uy = state[layout.slot(VarKey::BusUy { bus: mach.bus }).unwrap()];
            let (rs_d, rs_q) = if gt.map_or(false, |u| self.modes.gt_tripped[u]) {
                (ix, iy)
            } else {
                crate::powersys::stator_residuals(mach, delta, ux, uy, ix, iy)
            };
            let (row_d, row_q) = layout.rows.stator[m];
            out[row_d] = rs_d;
            out[row_q] = rs_q;
            out[layout.rows.pe[m]] =
                pe - crate::powersys::electrical_power(ux, uy, ix, iy, mach.r_a);
        }
        // bus current balance
        let u_x: Vec<f64> = (0..eps.network.n_bus)
            .map(|b| state[layout.slot(VarKey::BusUx { bus: b }).unwrap()])
            .collect();
        let u_y: Vec<f64> = (0..eps.network.n_bus)
            .map(|b| state[layout.slot(VarKey::BusUy { bus: b }).unwrap()])
            .collect();
        for b in 0..eps.network.n_bus {
            let (net_x, net_y) = eps.network.network_current(b, &u_x, &u_y);
            let mut inj_x = 0.0;
            let mut inj_y = 0.0;
            for (m, mach) in eps.machines.iter().enumerate() {
                if mach.bus == b {
                    inj_x += state[layout.slot(VarKey::MachIx { unit: m }).unwrap()];
                    inj_y += state[layout.slot(VarKey::MachIy { unit: m }).unwrap()];
                }
            }
            for (u, p2g) in eps.p2gs.iter().enumerate() {
                if p2g.bus == b {
                    inj_x += state[layout.slot(VarKey::P2gIx { unit: u }).unwrap()];
                    inj_y += state[layout.slot(VarKey::P2gIy { unit: u }).unwrap()];
                }
            }
            let (row_x, row_y) = layout.rows.bus[b];
            out[row_x] = inj_x - net_x;
            out[row_y] = inj_y - net_y;
        }
        // p2g draw currents and conversion power (the power state is pu)
        for (u, p2g) in eps.p2gs.iter().enumerate() {
            let ux = u_x[p2g.bus];
            let uy = u_y[p2g.bus];
            let umag2 = ux * ux + uy * uy;
            let ix = state[layout.slot(VarKey::P2gIx { unit: u }).unwrap()];
            let iy = state[layout.slot(VarKey::P2gIy { unit: u }).unwrap()];
            let p_pu = state[layout.slot(VarKey::P2gPower { unit: u }).unwrap()];
            out[layout.rows.p2g_ix[u]] = ix * umag2 + p_pu * ux;
            out[layout.rows.p2g_iy[u]] = iy * umag2 + p_pu * uy;
            let np = state[layout.slot(VarKey::NodeP { node: p2g.gas_node }).unwrap()];
            let nq = state[layout.slot(VarKey::NodeQ { node: p2g.gas_node }).unwrap()];
            let c2 = self.props.sound_speed * self.props.sound_speed;
            // P eta p = h c^2 q_injected with q_injected = -q_node, scaled
            // to order one: pu power against MPa-scale pressures
            out[layout.rows.p2g_power[u]] = (p_pu * eps.s_base * p2g.efficiency * np
                + p2g.enthalpy * c2 * nq)
                / (eps.s_base * 1e6);
        }
    }

    fn gt_state(&self, unit: usize, state: &[f64]) -> GtState {
        let base = self
            .layout
            .slot(VarKey::GtState { unit, comp: 0 })
            .unwrap();
        GtState {
            temp_int: state[base],
            valve: state[base + 1],
            fuel: state[base + 2],
            shield: state[base + 3],
            thermocouple: state[base + 4],
        }
    }

    /// Linepack of a pipe: the pressure sum over live pressure rows times
    /// `S dx / c^2` (kg).
    pub fn linepack(&self, pipe: usize, state: &[f64]) -> f64 {
        let pl = &self.layout.pipes[pipe];
        let w = self.pipes[pipe].lp_weight(&self.props);
        let mut sum = 0.0;
        for run in &pl.lp_runs {
            for i in run.start..=run.end {
                sum += state[pl.p_slot[i]];
            }
        }
        w * sum
    }

    /// Difference between the linepack and its flux-integrated accumulator;
    /// stays at round-off when mass is conserved.
    pub fn linepack_defect(&self, pipe: usize, state: &[f64]) -> f64 {
        (self.linepack(pipe, state) - state[self.layout.pipes[pipe].acc_slot]).abs()
    }

    /// Resolves an event watch to a state probe under the current layout.
    pub fn resolve_probe(&self, spec: &EventSpec) -> Result<Probe, EventError> {
        use crate::events::EventKind::*;
        let node_pressure = |node: usize| -> Result<Probe, EventError> {
            self.layout
                .slot(VarKey::NodeP { node })
                .map(Probe::State)
                .ok_or(EventError::BadReference {
                    entity: "node",
                    index: node,
                })
        };
        match spec.kind {
            RegulatorMinPressure | LoadMinPressure | LoadMaxPressure => {
                node_pressure(spec.node.expect("validated event"))
            }
            GtMinInletPressure => {
                let node = match (spec.unit, spec.node) {
                    (Some(u), _) => {
                        let eps = self.eps.as_ref().ok_or(EventError::BadReference {
                            entity: "gas turbine",
                            index: u,
                        })?;
                        eps.gts
                            .get(u)
                            .ok_or(EventError::BadReference {
                                entity: "gas turbine",
                                index: u,
                            })?
                            .gas_node
                    }
                    (None, Some(n)) => n,
                    _ => unreachable!("validated event"),
                };
                node_pressure(node)
            }
            SourceMaxFlow => {
                let node = spec.node.expect("validated event");
                self.layout
                    .slot(VarKey::NodeQ { node })
                    .map(Probe::NegState)
                    .ok_or(EventError::BadReference {
                        entity: "node",
                        index: node,
                    })
            }
            P2gSaturation => {
                let u = spec.unit.expect("validated event");
                let eps = self.eps.as_ref().ok_or(EventError::BadReference {
                    entity: "p2g",
                    index: u,
                })?;
                let node = eps
                    .p2gs
                    .get(u)
                    .ok_or(EventError::BadReference {
                        entity: "p2g",
                        index: u,
                    })?
                    .gas_node;
                self.layout
                    .slot(VarKey::NodeQ { node })
                    .map(Probe::NegState)
                    .ok_or(EventError::BadReference {
                        entity: "node",
                        index: node,
                    })
            }
            FaultOnset | FaultClear => Ok(Probe::Time),
        }
    }

    /// State slot backing a channel, when it is a plain component.
    pub fn channel_slot(&self, ch: Channel) -> Option<usize> {
        let layout = &self.layout;
        match ch {
            Channel::PipeP { pipe, point } => Some(layout.pipes[pipe].p_slot[point]),
            Channel::PipeQ { pipe, point } => Some(layout.pipes[pipe].q_slot[point]),
            Channel::NodeP { node } => layout.slot(VarKey::NodeP { node }),
            Channel::NodeQ { node } => layout.slot(VarKey::NodeQ { node }),
            Channel::FaultPUp { fault } | Channel::FaultPDn { fault } => {
                let pipe = self.faults[fault].pipe;
                let pl = &layout.pipes[pipe];
                let cell = pl.fault.map(|f| f.cell).or_else(|| {
                    self.faults[fault]
                        .cell_index(self.pipes[pipe].dx)
                        .ok()
                })?;
                Some(pl.p_slot[cell])
            }
            Channel::FaultQUp { fault } => {
                let pipe = self.faults[fault].pipe;
                let pl = &layout.pipes[pipe];
                match pl.fault {
                    Some(f) => Some(f.q_up),
                    None => Some(pl.q_slot[self.faults[fault].cell_index(self.pipes[pipe].dx).ok()?]),
                }
            }
            Channel::FaultQDn { fault } => {
                let pipe = self.faults[fault].pipe;
                let pl = &layout.pipes[pipe];
                match pl.fault {
                    Some(f) => Some(f.q_dn),
                    None => Some(pl.q_slot[self.faults[fault].cell_index(self.pipes[pipe].dx).ok()?]),
                }
            }
            Channel::MachOmega { unit } => layout.slot(VarKey::MachOmega { unit }),
            Channel::P2gPower { unit } => layout.slot(VarKey::P2gPower { unit }),
            _ => None,
        }
    }

    /// Display-unit scale applied to raw slot values for a channel.
    pub fn channel_scale(&self, ch: Channel) -> f64 {
        match ch {
            Channel::PipeP { .. }
            | Channel::NodeP { .. }
            | Channel::FaultPUp { .. }
            | Channel::FaultPDn { .. } => 1e-6, // Pa -> MPa
            // pu -> MW on the system base
            Channel::P2gPower { .. } => {
                self.eps.as_ref().map_or(1.0, |e| e.s_base) * 1e-6
            }
            _ => 1.0,
        }
    }

    /// Channel value in display units.
    pub fn channel_value(&self, ch: Channel, t: f64, state: &[f64]) -> f64 {
        if let Some(slot) = self.channel_slot(ch) {
            return state[slot] * self.channel_scale(ch);
        }
        match ch {
            Channel::Time => t,
            Channel::BusVmag { bus } => {
                let ux = state[self.layout.slot(VarKey::BusUx { bus }).unwrap()];
                let uy = state[self.layout.slot(VarKey::BusUy { bus }).unwrap()];
                (ux * ux + uy * uy).sqrt()
            }
            Channel::GtPm { unit } => {
                if self.modes.gt_tripped[unit] {
                    return 0.0;
                }
                let eps = self.eps.as_ref().unwrap();
                let m = eps.gts[unit].machine;
                let omega = state[self.layout.slot(VarKey::MachOmega { unit: m }).unwrap()];
                let st = self.gt_state(unit, state);
                crate::powersys::gas_turbine_eval(&eps.gts[unit], &st, omega)
                    .1
                    .p_mech
            }
            Channel::GtFuel { unit } => {
                if self.modes.gt_tripped[unit] {
                    0.0
                } else {
                    self.gt_state(unit, state).fuel
                }
            }
            _ => f64::NAN,
        }
    }
}

impl DaeSystem for SystemModel {
    fn n_diff(&self) -> usize {
        self.layout.n_diff
    }
    fn n_alg(&self) -> usize {
        self.layout.n_alg
    }
    fn residual(&mut self, t: f64, state: &[f64], out: &mut [f64]) -> Result<(), EvalFailure> {
        self.assemble_residual(t, state, out)
    }
    fn refresh_jacobian(&mut self, t: f64, state: &[f64]) -> Result<(), EvalFailure> {
        jacobian::refresh(self, t, state)
    }
    fn factorize(&mut self, h_gamma: f64) -> Result<(), SolveError> {
        let plan = &mut self.jac;
        plan.factorize(1.0 / h_gamma, self.layout.n_diff, &[])
            .map_err(|_| SolveError::SingularIteration { t: f64::NAN, h: h_gamma })
    }
    fn solve_in_place(&self, rhs: &mut [f64]) {
        self.jac.solve_in_place(rhs);
    }
    fn jacobian_matvec(&self, v: &[f64], out: &mut [f64]) {
        self.jac.matvec(v, out);
    }
}
