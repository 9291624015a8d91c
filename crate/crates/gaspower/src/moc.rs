//! Method-of-characteristics reference solver.
//!
//! On a grid locked to `dt = dx / c` the Riemann quantities `S p +- c q`
//! transport exactly one cell per step, so the spatial and temporal
//! derivatives carry no discretization error; only the friction source is
//! approximated, by the trapezoid along each characteristic:
//!
//! ```text
//! p_i' - p_{i-1} + (c/S)(q_i' - q_{i-1})
//!     + (lambda c^2 dx / (4 D S^2)) (q_i' + q_{i-1})|q_i' + q_{i-1}| / (p_i' + p_{i-1}) = 0
//! p_{i+1} - p_i' + (c/S)(q_i' - q_{i+1})
//!     + (lambda c^2 dx / (4 D S^2)) (q_i' + q_{i+1})|q_i' + q_{i+1}| / (p_i' + p_{i+1}) = 0
//! ```
//!
//! (primes denote the new time level; the signed `u|u|` form keeps the
//! friction dissipative when flow reverses through a rupture). The solver
//! is gas-only and exists as the accuracy benchmark: coupling nodes
//! consume a recorded draw series instead of a live electric model.

use crate::daesys::Channel;
use crate::faults::{FaultKind, FaultSpec, FaultState};
use crate::gasnet::{GasProperties, NodeKind, Pipe, PipeEnd};
use crate::scenario::Scenario;

#[derive(Debug, thiserror::Error)]
pub enum MocError {
    #[error("newton on node {node} of pipe {pipe} diverged at t = {t}")]
    NewtonDivergence { pipe: usize, node: usize, t: f64 },
    #[error("network steady state did not converge (residual {residual:.3e})")]
    SteadyDiverged { residual: f64 },
    #[error("characteristics grid needs one dx for all pipes (found {0} and {1})")]
    MixedGrid(f64, f64),
    #[error("unsupported scenario for the benchmark: {0}")]
    Unsupported(String),
}

/// Draw posted at a node, possibly time-varying (recorded coupling series).
#[derive(Debug, Clone)]
pub enum DrawSource {
    Fixed(f64),
    /// piecewise-linear samples (t, draw), clamped at the ends
    Series(Vec<(f64, f64)>),
}

impl DrawSource {
    fn at(&self, t: f64) -> f64 {
        match self {
            DrawSource::Fixed(v) => *v,
            DrawSource::Series(samples) => {
                if samples.is_empty() {
                    return 0.0;
                }
                if t <= samples[0].0 {
                    return samples[0].1;
                }
                for w in samples.windows(2) {
                    if t <= w[1].0 {
                        let f = (t - w[0].0) / (w[1].0 - w[0].0);
                        return w[0].1 + f * (w[1].1 - w[0].1);
                    }
                }
                samples.last().unwrap().1
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum MocNodeKind {
    Pressure(f64),
    Draw,
}

struct MocPipe {
    pipe: Pipe,
    n_cells: usize,
    /// friction lump lambda c^2 dx / (4 D S^2)
    k_fric: f64,
    p: Vec<f64>,
    q: Vec<f64>,
    p_new: Vec<f64>,
    q_new: Vec<f64>,
    fault: Option<MocFault>,
}

struct MocFault {
    spec: FaultSpec,
    cell: usize,
    hole_area: f64,
    state: FaultState,
    /// downstream face flow (the stored q at the cell is the upstream face)
    q_dn: f64,
    q_dn_new: f64,
}

/// One recorded column of the reference trajectory.
pub struct MocTrajectory {
    pub times: Vec<f64>,
    pub channels: Vec<Channel>,
    pub values: Vec<Vec<f64>>,
}

impl MocTrajectory {
    pub fn channel(&self, ch: Channel) -> Option<&[f64]> {
        self.channels
            .iter()
            .position(|c| *c == ch)
            .map(|i| self.values[i].as_slice())
    }
}

/// The assembled characteristics benchmark.
pub struct MocOracle {
    props: GasProperties,
    pipes: Vec<MocPipe>,
    nodes: Vec<MocNodeKind>,
    draws: Vec<DrawSource>,
    incidence: Vec<Vec<(usize, PipeEnd, f64)>>,
    pub dx: f64,
    pub dt: f64,
    t: f64,
}

impl MocOracle {
    /// Builds the benchmark for a scenario on its own grid `dx`
    /// (`dt = dx / c`). Gas-turbine nodes default to the draw implied by
    /// the scenario dispatch and can be overridden with a recorded series.
    pub fn new(scenario: &Scenario, dx: f64) -> Result<Self, crate::Error> {
        scenario.validate()?;
        let props = scenario.gas.properties;
        let mut pipes = Vec::new();
        for ps in &scenario.gas.pipes {
            let pipe = ps.pipe;
            let ratio = pipe.length / dx;
            if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
                return Err(crate::Error::Moc(MocError::Unsupported(format!(
                    "pipe {} length {} not a multiple of dx {dx}",
                    pipe.id, pipe.length
                ))));
            }
            let n_cells = ratio.round() as usize;
            let s = pipe.area();
            let c = props.sound_speed;
            let k_fric = pipe.friction * c * c * dx / (4.0 * pipe.diameter * s * s);
            pipes.push(MocPipe {
                pipe,
                n_cells,
                k_fric,
                p: vec![0.0; n_cells + 1],
                q: vec![0.0; n_cells + 1],
                p_new: vec![0.0; n_cells + 1],
                q_new: vec![0.0; n_cells + 1],
                fault: None,
            });
        }
        for spec in &scenario.faults {
            let cell = spec.position / dx;
            if (cell - cell.round()).abs() > 1e-9 * cell.max(1.0) {
                return Err(crate::Error::Moc(MocError::Unsupported(
                    "fault position off the benchmark grid".into(),
                )));
            }
            let hole_area = match spec.kind {
                FaultKind::Leak => spec.hole_area().map_err(crate::Error::Fault)?,
                FaultKind::Rupture => 0.0,
            };
            pipes[spec.pipe].fault = Some(MocFault {
                spec: *spec,
                cell: cell.round() as usize,
                hole_area,
                state: FaultState {
                    active: false,
                    pre_fault_pressure: 0.0,
                },
                q_dn: 0.0,
                q_dn_new: 0.0,
            });
        }
        let mut nodes = Vec::new();
        let mut draws = Vec::new();
        for node in &scenario.gas.nodes {
            let (kind, draw) = match node.kind {
                NodeKind::ConstantPressure { pressure } => {
                    (MocNodeKind::Pressure(pressure), DrawSource::Fixed(0.0))
                }
                NodeKind::ConstantMassFlow { draw } => {
                    (MocNodeKind::Draw, DrawSource::Fixed(draw))
                }
                NodeKind::Junction | NodeKind::CouplingGt { .. } | NodeKind::CouplingP2g { .. } => {
                    (MocNodeKind::Draw, DrawSource::Fixed(0.0))
                }
            };
            nodes.push(kind);
            draws.push(draw);
        }
        // coupling units: p2g nodes hold pressure, turbine nodes draw the
        // dispatch fuel unless a recorded series overrides them
        for p2g in &scenario.coupling.p2gs {
            nodes[p2g.gas_node] = MocNodeKind::Pressure(p2g.pressure_set);
        }
        if let Some(eps) = &scenario.eps {
            for (u, gt) in scenario.coupling.gts.iter().enumerate() {
                let dispatch = eps.machines[gt.machine].p_mech;
                let (st, _) = crate::powersys::gas_turbine_equilibrium(gt, u, dispatch)
                    .map_err(crate::Error::Power)?;
                draws[gt.gas_node] = DrawSource::Fixed(st.fuel * gt.rated_fuel);
            }
        }
        let mut incidence = vec![Vec::new(); scenario.gas.nodes.len()];
        for ps in &scenario.gas.pipes {
            incidence[ps.pipe.from_node].push((ps.pipe.id, PipeEnd::Inlet, -1.0));
            incidence[ps.pipe.to_node].push((ps.pipe.id, PipeEnd::Outlet, 1.0));
        }
        let dt = dx / props.sound_speed;
        let mut oracle = Self {
            props,
            pipes,
            nodes,
            draws,
            incidence,
            dx,
            dt,
            t: 0.0,
        };
        oracle.steady_init()?;
        Ok(oracle)
    }

    /// Replaces a node's draw with a recorded series (one-way coupling).
    pub fn set_draw_series(&mut self, node: usize, series: Vec<(f64, f64)>) {
        self.draws[node] = DrawSource::Series(series);
    }

    /// Network steady state on the characteristics grid: uniform flow per
    /// pipe with the square-pressure drop `4 K M q|q|` end to end.
    fn steady_init(&mut self) -> Result<(), crate::Error> {
        let n_nodes = self.nodes.len();
        let n_pipes = self.pipes.len();
        // unknowns: node pressures + pipe flows
        let dim = n_nodes + n_pipes;
        let mut x = vec![0.0; dim];
        for (k, kind) in self.nodes.iter().enumerate() {
            x[k] = match kind {
                MocNodeKind::Pressure(p) => *p,
                MocNodeKind::Draw => 5.0e6,
            };
        }
        let res = |x: &[f64], out: &mut [f64]| {
            for (k, kind) in self.nodes.iter().enumerate() {
                match kind {
                    MocNodeKind::Pressure(p) => out[k] = x[k] - p,
                    MocNodeKind::Draw => {
                        let mut mass = -self.draws[k].at(0.0);
                        for (pipe, _, sign) in &self.incidence[k] {
                            mass += sign * x[n_nodes + pipe];
                        }
                        out[k] = mass;
                    }
                }
            }
            for (pi, mp) in self.pipes.iter().enumerate() {
                let q = x[n_nodes + pi];
                let pf = x[mp.pipe.from_node];
                let pt = x[mp.pipe.to_node];
                // scale to pressure units to keep the jacobian balanced
                out[n_nodes + pi] = (pf * pf - pt * pt
                    - 4.0 * mp.k_fric * mp.n_cells as f64 * q * q.abs())
                    / (pf + pt).max(1.0);
            }
        };
        let mut r = vec![0.0; dim];
        for _ in 0..60 {
            res(&x, &mut r);
            let norm = r.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            if norm < 1e-8 {
                break;
            }
            let mut jac = vec![0.0; dim * dim];
            let mut rp = vec![0.0; dim];
            for c in 0..dim {
                let orig = x[c];
                let d = 1e-7 * (1.0 + orig.abs());
                x[c] = orig + d;
                res(&x, &mut rp);
                x[c] = orig;
                for row in 0..dim {
                    jac[row * dim + c] = (rp[row] - r[row]) / d;
                }
            }
            let mut step = r.clone();
            if dense_solve(&mut jac, &mut step).is_err() {
                return Err(crate::Error::Moc(MocError::SteadyDiverged { residual: norm }));
            }
            for i in 0..dim {
                x[i] -= step[i];
            }
        }
        res(&x, &mut r);
        let norm = r.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        if norm >= 1e-6 {
            return Err(crate::Error::Moc(MocError::SteadyDiverged { residual: norm }));
        }
        for (pi, mp) in self.pipes.iter_mut().enumerate() {
            let q = x[n_nodes + pi];
            let p_from = x[mp.pipe.from_node];
            for i in 0..=mp.n_cells {
                let p2 = p_from * p_from - 4.0 * mp.k_fric * i as f64 * q * q.abs();
                mp.p[i] = p2.max(0.0).sqrt();
                mp.q[i] = q;
            }
            if let Some(f) = &mut mp.fault {
                f.q_dn = q;
            }
        }
        Ok(())
    }

    /// `C+` residual between the new point and its lower-left foot.
    #[inline]
    fn c_plus(k_fric: f64, cs: f64, p: f64, q: f64, p_foot: f64, q_foot: f64) -> f64 {
        let qc = q + q_foot;
        (p - p_foot) + cs * (q - q_foot) + k_fric * qc * qc.abs() / (p + p_foot)
    }

    /// `C-` residual between the new point and its lower-right foot.
    #[inline]
    fn c_minus(k_fric: f64, cs: f64, p: f64, q: f64, p_foot: f64, q_foot: f64) -> f64 {
        let qc = q + q_foot;
        (p_foot - p) + cs * (q - q_foot) + k_fric * qc * qc.abs() / (p + p_foot)
    }

    /// Solves the interior pair by a 2x2 newton.
    #[allow(clippy::too_many_arguments)]
    fn solve_interior(
        k_fric: f64,
        cs: f64,
        start: (f64, f64),
        left: (f64, f64),
        right: (f64, f64),
        pipe: usize,
        node: usize,
        t: f64,
    ) -> Result<(f64, f64), MocError> {
        let (mut p, mut q) = start;
        for _ in 0..30 {
            let r1 = Self::c_plus(k_fric, cs, p, q, left.0, left.1);
            let r2 = Self::c_minus(k_fric, cs, p, q, right.0, right.1);
            let scale = p.abs().max(left.0.abs()).max(1.0);
            if r1.abs().max(r2.abs()) < 1e-10 * scale {
                return Ok((p, q));
            }
            let qc1 = q + left.1;
            let qc2 = q + right.1;
            let d1p = 1.0 - k_fric * qc1 * qc1.abs() / ((p + left.0) * (p + left.0));
            let d1q = cs + 2.0 * k_fric * qc1.abs() / (p + left.0);
            let d2p = -1.0 - k_fric * qc2 * qc2.abs() / ((p + right.0) * (p + right.0));
            let d2q = cs + 2.0 * k_fric * qc2.abs() / (p + right.0);
            let det = d1p * d2q - d1q * d2p;
            if det.abs() < 1e-300 || !det.is_finite() {
                return Err(MocError::NewtonDivergence { pipe, node, t });
            }
            p -= (r1 * d2q - d1q * r2) / det;
            q -= (d1p * r2 - r1 * d2p) / det;
        }
        Err(MocError::NewtonDivergence { pipe, node, t })
    }

    /// Solves one characteristic relation for the flow at a fixed pressure.
    #[allow(clippy::too_many_arguments)]
    fn solve_q_given_p(
        k_fric: f64,
        cs: f64,
        plus: bool,
        p: f64,
        q_start: f64,
        foot: (f64, f64),
        pipe: usize,
        node: usize,
        t: f64,
    ) -> Result<f64, MocError> {
        let mut q = q_start;
        for _ in 0..30 {
            let r = if plus {
                Self::c_plus(k_fric, cs, p, q, foot.0, foot.1)
            } else {
                Self::c_minus(k_fric, cs, p, q, foot.0, foot.1)
            };
            let scale = p.abs().max(foot.0.abs()).max(1.0);
            if r.abs() < 1e-10 * scale {
                return Ok(q);
            }
            let qc = q + foot.1;
            let dq = cs + 2.0 * k_fric * qc.abs() / (p + foot.0);
            q -= r / dq;
        }
        Err(MocError::NewtonDivergence { pipe, node, t })
    }

    /// Derivative pair of a characteristic residual at fixed foot.
    fn char_dp_dq(k_fric: f64, cs: f64, plus: bool, p: f64, q: f64, foot: (f64, f64)) -> (f64, f64) {
        let qc = q + foot.1;
        let sgn = if plus { 1.0 } else { -1.0 };
        let dp = sgn - k_fric * qc * qc.abs() / ((p + foot.0) * (p + foot.0));
        let dq = cs + 2.0 * k_fric * qc.abs() / (p + foot.0);
        (dp, dq)
    }

    /// Advances one time level.
    pub fn step(&mut self) -> Result<(), crate::Error> {
        let t_new = self.t + self.dt;
        let c = self.props.sound_speed;
        // interior points, fault cells excluded
        for mp in self.pipes.iter_mut() {
            let cs = c / mp.pipe.area();
            let n = mp.n_cells;
            let fault_cell = mp.fault.as_ref().and_then(|f| {
                if f.state.active || t_new >= f.spec.t_start {
                    Some(f.cell)
                } else {
                    None
                }
            });
            let pipe_id = mp.pipe.id;
            let k_fric = mp.k_fric;
            let (p_old, q_old) = (&mp.p, &mp.q);
            let mut p_new = vec![0.0; n + 1];
            let mut q_new = vec![0.0; n + 1];
            for i in 1..n {
                if Some(i) == fault_cell {
                    continue;
                }
                let (p, q) = Self::solve_interior(
                    k_fric,
                    cs,
                    (p_old[i], q_old[i]),
                    (p_old[i - 1], q_old[i - 1]),
                    (p_old[i + 1], q_old[i + 1]),
                    pipe_id,
                    i,
                    t_new,
                )
                .map_err(crate::Error::Moc)?;
                p_new[i] = p;
                q_new[i] = q;
            }
            mp.p_new = p_new;
            mp.q_new = q_new;
        }
        // fault closures
        for mp in self.pipes.iter_mut() {
            let cs = c / mp.pipe.area();
            let pipe_id = mp.pipe.id;
            let k_fric = mp.k_fric;
            let k_props = self.props;
            let Some(fault) = mp.fault.as_mut() else {
                continue;
            };
            if !fault.state.active && t_new >= fault.spec.t_start {
                fault.state.active = true;
                fault.state.pre_fault_pressure = mp.p[fault.cell];
                fault.q_dn = mp.q[fault.cell];
            }
            if !fault.state.active {
                continue;
            }
            let j = fault.cell;
            let up_foot = (mp.p[j - 1], mp.q[j - 1]);
            let dn_foot = (mp.p[j + 1], mp.q[j + 1]);
            match fault.spec.kind {
                FaultKind::Rupture => {
                    let p_f = crate::faults::rupture_pressure_target(
                        fault.state.pre_fault_pressure,
                        t_new,
                        fault.spec.t_start,
                        fault.spec.ramp,
                        k_props.atmospheric_pressure,
                    );
                    let q_up = Self::solve_q_given_p(
                        k_fric, cs, true, p_f, mp.q[j], up_foot, pipe_id, j, t_new,
                    )
                    .map_err(crate::Error::Moc)?;
                    let q_dn = Self::solve_q_given_p(
                        k_fric, cs, false, p_f, fault.q_dn, dn_foot, pipe_id, j, t_new,
                    )
                    .map_err(crate::Error::Moc)?;
                    mp.p_new[j] = p_f;
                    mp.q_new[j] = q_up;
                    fault.q_dn_new = q_dn;
                }
                FaultKind::Leak => {
                    // outer newton on the hole pressure; each candidate
                    // solves the downstream characteristic and the hole law
                    let area = crate::faults::effective_hole_area(
                        fault.hole_area,
                        t_new,
                        fault.spec.t_start,
                        fault.spec.ramp,
                    );
                    let mut p_f = mp.p[j];
                    let mut q_up = mp.q[j];
                    let mut q_dn = fault.q_dn;
                    let mut converged = false;
                    for _ in 0..40 {
                        q_dn = Self::solve_q_given_p(
                            k_fric, cs, false, p_f, q_dn, dn_foot, pipe_id, j, t_new,
                        )
                        .map_err(crate::Error::Moc)?;
                        let q_leak = crate::faults::leak_mass_flow_clamped(p_f, area, &k_props);
                        q_up = q_leak + q_dn;
                        let r = Self::c_plus(k_fric, cs, p_f, q_up, up_foot.0, up_foot.1);
                        let scale = p_f.abs().max(up_foot.0.abs()).max(1.0);
                        if r.abs() < 1e-9 * scale {
                            converged = true;
                            break;
                        }
                        // derivative of the residual along p_f, carrying the
                        // law and downstream-characteristic sensitivities
                        let dd = 1e-6 * (1.0 + p_f.abs());
                        let q_dn_d = Self::solve_q_given_p(
                            k_fric, cs, false, p_f + dd, q_dn, dn_foot, pipe_id, j, t_new,
                        )
                        .map_err(crate::Error::Moc)?;
                        let q_leak_d =
                            crate::faults::leak_mass_flow_clamped(p_f + dd, area, &k_props);
                        let r_d = Self::c_plus(
                            k_fric,
                            cs,
                            p_f + dd,
                            q_leak_d + q_dn_d,
                            up_foot.0,
                            up_foot.1,
                        );
                        let slope = (r_d - r) / dd;
                        if !slope.is_finite() || slope.abs() < 1e-300 {
                            return Err(crate::Error::Moc(MocError::NewtonDivergence {
                                pipe: pipe_id,
                                node: j,
                                t: t_new,
                            }));
                        }
                        p_f -= r / slope;
                    }
                    if !converged {
                        return Err(crate::Error::Moc(MocError::NewtonDivergence {
                            pipe: pipe_id,
                            node: j,
                            t: t_new,
                        }));
                    }
                    mp.p_new[j] = p_f;
                    mp.q_new[j] = q_up;
                    fault.q_dn_new = q_dn;
                }
            }
        }
        // node closures
        let n_nodes = self.nodes.len();
        for k in 0..n_nodes {
            match self.nodes[k] {
                MocNodeKind::Pressure(p_set) => {
                    for (pipe, end, _) in self.incidence[k].clone() {
                        let mp = &self.pipes[pipe];
                        let cs = c / mp.pipe.area();
                        let (i, plus, foot) = match end {
                            PipeEnd::Inlet => (0usize, false, (mp.p[1], mp.q[1])),
                            PipeEnd::Outlet => {
                                let n = mp.n_cells;
                                (n, true, (mp.p[n - 1], mp.q[n - 1]))
                            }
                        };
                        let q = Self::solve_q_given_p(
                            mp.k_fric, cs, plus, p_set, mp.q[i], foot, pipe, i, t_new,
                        )
                        .map_err(crate::Error::Moc)?;
                        let mp = &mut self.pipes[pipe];
                        mp.p_new[i] = p_set;
                        mp.q_new[i] = q;
                    }
                }
                MocNodeKind::Draw => {
                    // outer newton on the node pressure driving the mass
                    // balance; each end's flow follows its characteristic
                    let draw = self.draws[k].at(t_new);
                    let ends = self.incidence[k].clone();
                    let mut p_node =
                        ends.iter().map(|(pipe, end, _)| {
                            let mp = &self.pipes[*pipe];
                            match end {
                                PipeEnd::Inlet => mp.p[0],
                                PipeEnd::Outlet => mp.p[mp.n_cells],
                            }
                        }).sum::<f64>() / ends.len() as f64;
                    let mut converged = false;
                    for _ in 0..40 {
                        let mut mass = -draw;
                        let mut dmass = 0.0;
                        for (pipe, end, sign) in &ends {
                            let mp = &self.pipes[*pipe];
                            let cs = c / mp.pipe.area();
                            let (i, plus, foot) = match end {
                                PipeEnd::Inlet => (0usize, false, (mp.p[1], mp.q[1])),
                                PipeEnd::Outlet => {
                                    let n = mp.n_cells;
                                    (n, true, (mp.p[n - 1], mp.q[n - 1]))
                                }
                            };
                            let q = Self::solve_q_given_p(
                                mp.k_fric, cs, plus, p_node, mp.q[i], foot, *pipe, i, t_new,
                            )
                            .map_err(crate::Error::Moc)?;
                            let (dp, dq) = Self::char_dp_dq(mp.k_fric, cs, plus, p_node, q, foot);
                            mass += sign * q;
                            dmass += sign * (-dp / dq);
                        }
                        if mass.abs() < 1e-10 * draw.abs().max(1.0) {
                            converged = true;
                            break;
                        }
                        if !dmass.is_finite() || dmass.abs() < 1e-300 {
                            break;
                        }
                        p_node -= mass / dmass;
                    }
                    if !converged {
                        return Err(crate::Error::Moc(MocError::NewtonDivergence {
                            pipe: usize::MAX,
                            node: k,
                            t: t_new,
                        }));
                    }
                    for (pipe, end, _) in &ends {
                        let mp = &self.pipes[*pipe];
                        let cs = c / mp.pipe.area();
                        let (i, plus, foot) = match end {
                            PipeEnd::Inlet => (0usize, false, (mp.p[1], mp.q[1])),
                            PipeEnd::Outlet => {
                                let n = mp.n_cells;
                                (n, true, (mp.p[n - 1], mp.q[n - 1]))
                            }
                        };
                        let q = Self::solve_q_given_p(
                            mp.k_fric, cs, plus, p_node, mp.q[i], foot, *pipe, i, t_new,
                        )
                        .map_err(crate::Error::Moc)?;
                        let mp = &mut self.pipes[*pipe];
                        mp.p_new[i] = p_node;
                        mp.q_new[i] = q;
                    }
                }
            }
        }
        // swap levels
        for mp in self.pipes.iter_mut() {
            std::mem::swap(&mut mp.p, &mut mp.p_new);
            std::mem::swap(&mut mp.q, &mut mp.q_new);
            if let Some(fault) = mp.fault.as_mut() {
                if fault.state.active {
                    fault.q_dn = fault.q_dn_new;
                }
            }
        }
        self.t = t_new;
        Ok(())
    }

    /// Channel value on the benchmark grid at the current level.
    pub fn channel_value(&self, ch: Channel) -> f64 {
        match ch {
            Channel::Time => self.t,
            Channel::PipeP { pipe, point } => self.pipes[pipe].p[point] * 1e-6,
            Channel::PipeQ { pipe, point } => self.pipes[pipe].q[point],
            Channel::FaultPUp { fault } | Channel::FaultPDn { fault } => {
                let mp = self.pipes.iter().find(|p| {
                    p.fault.as_ref().map_or(false, |f| f.spec == self.fault_spec(fault))
                });
                mp.map_or(f64::NAN, |p| {
                    p.p[p.fault.as_ref().unwrap().cell] * 1e-6
                })
            }
            Channel::FaultQUp { fault } => {
                let mp = self.fault_pipe(fault);
                mp.map_or(f64::NAN, |p| p.q[p.fault.as_ref().unwrap().cell])
            }
            Channel::FaultQDn { fault } => {
                let mp = self.fault_pipe(fault);
                mp.map_or(f64::NAN, |p| {
                    let f = p.fault.as_ref().unwrap();
                    if f.state.active {
                        f.q_dn
                    } else {
                        p.q[f.cell]
                    }
                })
            }
            _ => f64::NAN,
        }
    }

    fn fault_spec(&self, index: usize) -> FaultSpec {
        self.pipes
            .iter()
            .filter_map(|p| p.fault.as_ref())
            .nth(index)
            .map(|f| f.spec)
            .expect("fault index")
    }

    fn fault_pipe(&self, index: usize) -> Option<&MocPipe> {
        let spec = self.fault_spec(index);
        self.pipes.iter().find(|p| {
            p.fault.as_ref().map_or(false, |f| f.spec == spec)
        })
    }

    /// Runs to `t_end`, recording the channels at every level (including
    /// the initial one).
    pub fn run(&mut self, t_end: f64, channels: &[Channel]) -> Result<MocTrajectory, crate::Error> {
        let mut traj = MocTrajectory {
            times: Vec::new(),
            channels: channels.to_vec(),
            values: vec![Vec::new(); channels.len()],
        };
        let record = |oracle: &Self, traj: &mut MocTrajectory| {
            traj.times.push(oracle.t);
            for (i, ch) in channels.iter().enumerate() {
                traj.values[i].push(oracle.channel_value(*ch));
            }
        };
        record(self, &mut traj);
        let steps = (t_end / self.dt).ceil() as usize;
        for _ in 0..steps {
            if self.t >= t_end - 1e-12 {
                break;
            }
            self.step()?;
            record(self, &mut traj);
        }
        Ok(traj)
    }
}

/// Dense LU with partial pivoting for the small steady solve.
fn dense_solve(a: &mut [f64], b: &mut [f64]) -> Result<(), ()> {
    let n = b.len();
    let mut piv: Vec<usize> = (0..n).collect();
    for col in 0..n {
        let mut best = col;
        for row in col + 1..n {
            if a[row * n + col].abs() > a[best * n + col].abs() {
                best = row;
            }
        }
        if best != col {
            for j in 0..n {
                a.swap(col * n + j, best * n + j);
            }
            piv.swap(col, best);
        }
        let pivot = a[col * n + col];
        if pivot.abs() < 1e-300 {
            return Err(());
        }
        for row in col + 1..n {
            let f = a[row * n + col] / pivot;
            a[row * n + col] = f;
            for j in col + 1..n {
                a[row * n + j] -= f * a[col * n + j];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in 0..n {
        x[i] = b[piv[i]];
    }
    for i in 0..n {
        for j in 0..i {
            let xj = x[j];
            x[i] -= a[i * n + j] * xj;
        }
    }
    for i in (0..n).rev() {
        for j in i + 1..n {
            let xj = x[j];
            x[i] -= a[i * n + j] * xj;
        }
        x[i] /= a[i * n + i];
    }
    b.copy_from_slice(&x);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Scenario;

    fn single_pipe(draw: f64, friction: f64) -> Scenario {
        let text = format!(
            r#"
t_end = 100.0
[gas]
dx = 100.0
[[gas.nodes]]
id = 0
kind = "constant_pressure"
pressure = 6.62e6
[[gas.nodes]]
id = 1
kind = "constant_mass_flow"
draw = {draw}
[[gas.pipes]]
id = 0
from = 0
to = 1
length = 2000.0
diameter = 0.5901
friction = {friction}
"#
        );
        Scenario::from_str(&text).unwrap()
    }

    #[test]
    fn grid_lock_matches_reported_step() {
        // dx = 50 m at c = 340 m/s gives the 0.1471 s benchmark step
        let mut sc = single_pipe(14.0, 0.03);
        sc.gas.dx = 50.0;
        let oracle = MocOracle::new(&sc, 50.0).unwrap();
        assert!((oracle.dt - 0.1471).abs() < 1e-4, "dt = {}", oracle.dt);
    }

    #[test]
    fn frictionless_uniform_state_is_invariant() {
        let sc = single_pipe(10.0, 1e-12);
        let mut oracle = MocOracle::new(&sc, 100.0).unwrap();
        let p0 = oracle.pipes[0].p.clone();
        let q0 = oracle.pipes[0].q.clone();
        for _ in 0..5 {
            oracle.step().unwrap();
        }
        for i in 0..p0.len() {
            assert!((oracle.pipes[0].p[i] - p0[i]).abs() < 1e-6 * p0[i]);
            assert!((oracle.pipes[0].q[i] - q0[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn frictionless_right_mover_advects_one_cell_per_step() {
        let sc = single_pipe(0.0, 1e-12);
        let mut oracle = MocOracle::new(&sc, 100.0).unwrap();
        // superpose a right-going pulse: S dp = c dq keeps kappa_L constant
        let s = oracle.pipes[0].pipe.area();
        let c = oracle.props.sound_speed;
        let base_p = oracle.pipes[0].p.clone();
        for (i, bump) in [(5usize, 1000.0), (6, 2500.0), (7, 1200.0)] {
            oracle.pipes[0].p[i] += bump;
            oracle.pipes[0].q[i] += s * bump / c;
        }
        let before = oracle.pipes[0].p.clone();
        oracle.step().unwrap();
        for i in 2..oracle.pipes[0].n_cells - 1 {
            let want = before[i - 1] - base_p[i - 1] + base_p[i];
            assert!(
                (oracle.pipes[0].p[i] - want).abs() < 1e-6 * want.abs().max(1.0),
                "pulse did not advect cleanly at {i}"
            );
        }
    }

    #[test]
    fn frictionless_riemann_invariants_transport_exactly() {
        let sc = single_pipe(0.0, 1e-12);
        let mut oracle = MocOracle::new(&sc, 100.0).unwrap();
        for (i, bump) in [(8usize, 800.0), (9, 2000.0), (10, 900.0)] {
            oracle.pipes[0].p[i] += bump;
            oracle.pipes[0].q[i] += 0.3 * bump;
        }
        let s = oracle.pipes[0].pipe.area();
        let c = oracle.props.sound_speed;
        let kr: Vec<f64> = (0..=20)
            .map(|i| s * oracle.pipes[0].p[i] + c * oracle.pipes[0].q[i])
            .collect();
        let kl: Vec<f64> = (0..=20)
            .map(|i| s * oracle.pipes[0].p[i] - c * oracle.pipes[0].q[i])
            .collect();
        oracle.step().unwrap();
        for i in 1..20 {
            let kr_new = s * oracle.pipes[0].p[i] + c * oracle.pipes[0].q[i];
            let kl_new = s * oracle.pipes[0].p[i] - c * oracle.pipes[0].q[i];
            assert!((kr_new - kr[i - 1]).abs() < 1e-6 * kr[i - 1].abs());
            assert!((kl_new - kl[i + 1]).abs() < 1e-6 * kl[i + 1].abs());
        }
    }

    #[test]
    fn steady_single_pipe_trace_is_time_invariant() {
        let sc = single_pipe(14.0, 0.03);
        let mut oracle = MocOracle::new(&sc, 100.0).unwrap();
        let traj = oracle
            .run(
                20.0,
                &[
                    Channel::PipeP { pipe: 0, point: 20 },
                    Channel::PipeQ { pipe: 0, point: 0 },
                ],
            )
            .unwrap();
        let p_out = traj.channel(Channel::PipeP { pipe: 0, point: 20 }).unwrap();
        let q_in = traj.channel(Channel::PipeQ { pipe: 0, point: 0 }).unwrap();
        for v in p_out {
            assert!((v - p_out[0]).abs() < 1e-9);
        }
        for v in q_in {
            assert!((v - 14.0).abs() < 1e-9);
        }
    }
}
