//! Model construction: scenario -> spec data, runtime modes, variable and
//! equation layout, and the Jacobian plan.

use super::*;
use crate::faults::FaultKind;

pub(super) fn build(scenario: &Scenario) -> Result<SystemModel, crate::Error> {
    scenario.validate()?;
    let props = scenario.gas.properties;
    props.validate().map_err(crate::Error::Gas)?;
    let mut pipes = Vec::new();
    for ps in &scenario.gas.pipes {
        let dx = ps.dx.unwrap_or(scenario.gas.dx);
        let n_cells = (ps.pipe.length / dx).round() as usize;
        pipes.push(PipeGeom {
            pipe: ps.pipe,
            dx,
            n_cells,
        });
    }
    let incidence = IncidenceMatrix::from_pipes(
        &scenario.gas.pipes.iter().map(|p| p.pipe).collect::<Vec<_>>(),
        scenario.gas.nodes.len(),
    )
    .map_err(crate::Error::Gas)?;
    // runtime node kinds: coupling units override their junction nodes
    let mut node_kind: Vec<RuntimeKind> = scenario
        .gas
        .nodes
        .iter()
        .map(|n| match n.kind {
            NodeKind::ConstantPressure { pressure } => RuntimeKind::Pressure(pressure),
            NodeKind::ConstantMassFlow { draw } => RuntimeKind::Flow(draw),
            NodeKind::Junction => RuntimeKind::Flow(0.0),
            NodeKind::CouplingGt { unit } => RuntimeKind::GtDraw { unit },
            NodeKind::CouplingP2g { unit } => RuntimeKind::P2gPressure { unit },
        })
        .collect();
    for (u, gt) in scenario.coupling.gts.iter().enumerate() {
        node_kind[gt.gas_node] = RuntimeKind::GtDraw { unit: u };
    }
    for (u, p2g) in scenario.coupling.p2gs.iter().enumerate() {
        node_kind[p2g.gas_node] = RuntimeKind::P2gPressure { unit: u };
    }
    let nodes: Vec<GasNode> = scenario
        .gas
        .nodes
        .iter()
        .enumerate()
        .map(|(k, n)| {
            let kind = match node_kind[k] {
                RuntimeKind::GtDraw { unit } => NodeKind::CouplingGt { unit },
                RuntimeKind::P2gPressure { unit } => NodeKind::CouplingP2g { unit },
                _ => n.kind,
            };
            GasNode { id: k, kind }
        })
        .collect();
    let eps = scenario.eps.as_ref().map(|e| {
        let network = EpsNetwork::new(e.buses, e.omega_base, &e.branches, &e.loads);
        let v_set = if e.v_set.is_empty() {
            vec![1.0; e.machines.len()]
        } else {
            e.v_set.clone()
        };
        EpsBlock {
            machines: e.machines.clone(),
            gts: scenario.coupling.gts.clone(),
            p2gs: scenario.coupling.p2gs.clone(),
            network,
            v_set,
            s_base: e.s_base,
        }
    });
    let modes = Modes {
        node_kind,
        fault: vec![
            FaultState {
                active: false,
                pre_fault_pressure: 0.0,
            };
            scenario.faults.len()
        ],
        gt_tripped: vec![false; scenario.coupling.gts.len()],
        bus_fault_on: false,
    };
    let mut model = SystemModel {
        props,
        scratch: vec![PipeScratch::default(); pipes.len()],
        pipes,
        nodes,
        incidence,
        scheme: scenario.solver.scheme,
        faults: scenario.faults.clone(),
        bus_fault: scenario.bus_fault,
        eps,
        modes,
        layout: DaeLayout {
            n_diff: 0,
            n_alg: 0,
            keys: Vec::new(),
            slot_of: HashMap::new(),
            pipes: Vec::new(),
            rows: GRows::default(),
        },
        jac: Default::default(),
        gas_buf: Vec::new(),
        fd_state: Vec::new(),
        fd_plus: Vec::new(),
        fd_minus: Vec::new(),
    };
    rebuild_layout(&mut model)?;
    Ok(model)
}

/// End classification of a pipe under the current node modes: which grid
/// points carry algebraic (closure-pinned) values.
struct EndRoles {
    /// per pipe: inlet pins pressure / outlet pins pressure
    p_pinned: Vec<[bool; 2]>,
    /// per pipe: end pins flow (the node's designated balance end)
    q_pinned: Vec<[bool; 2]>,
}

fn end_roles(model: &SystemModel) -> EndRoles {
    let n_pipes = model.pipes.len();
    let mut roles = EndRoles {
        p_pinned: vec![[false; 2]; n_pipes],
        q_pinned: vec![[false; 2]; n_pipes],
    };
    for node in &model.nodes {
        let k = node.id;
        let ends = model.incidence.ends_at(k);
        if model.modes.node_kind[k].is_pressure() {
            for (pipe, end, _) in ends {
                roles.p_pinned[*pipe][end_index(*end)] = true;
            }
        } else {
            // first incident end balances the node draw; the others pin
            // pressure continuity
            for (i, (pipe, end, _)) in ends.iter().enumerate() {
                if i == 0 {
                    roles.q_pinned[*pipe][end_index(*end)] = true;
                } else {
                    roles.p_pinned[*pipe][end_index(*end)] = true;
                }
            }
        }
    }
    roles
}

fn end_index(end: PipeEnd) -> usize {
    match end {
        PipeEnd::Inlet => 0,
        PipeEnd::Outlet => 1,
    }
}

/// Rebuilds the variable/equation layout and the Jacobian plan for the
/// current modes. State migration is the caller's business.
pub(super) fn rebuild_layout(model: &mut SystemModel) -> Result<(), crate::Error> {
    let roles = end_roles(model);
    // active fault per pipe
    let mut fault_at: Vec<Option<(usize, usize)>> = vec![None; model.pipes.len()];
    for (fi, spec) in model.faults.iter().enumerate() {
        if model.modes.fault[fi].active {
            let cell = spec
                .cell_index(model.pipes[spec.pipe].dx)
                .map_err(crate::Error::Fault)?;
            fault_at[spec.pipe] = Some((fi, cell));
        }
    }
    let mut keys: Vec<VarKey> = Vec::new();
    let mut pipe_layouts: Vec<PipeLayout> = Vec::new();
    // differential slots: pipe grids, accumulators, machines, turbines
    for (pi, geom) in model.pipes.iter().enumerate() {
        let n = geom.n_points();
        let last = n - 1;
        let mut pl = PipeLayout {
            p_slot: vec![usize::MAX; n],
            q_slot: vec![usize::MAX; n],
            fault: None,
            acc_slot: usize::MAX,
            lp_runs: Vec::new(),
        };
        for i in 0..n {
            let is_fault = fault_at[pi].map_or(false, |(_, c)| c == i);
            let p_pinned = (i == 0 && roles.p_pinned[pi][0])
                || (i == last && roles.p_pinned[pi][1])
                || is_fault;
            if !p_pinned {
                pl.p_slot[i] = keys.len();
                keys.push(VarKey::CellP { pipe: pi, point: i });
            }
            let q_pinned = (i == 0 && roles.q_pinned[pi][0])
                || (i == last && roles.q_pinned[pi][1])
                || is_fault;
            if !q_pinned {
                pl.q_slot[i] = keys.len();
                keys.push(VarKey::CellQ { pipe: pi, point: i });
            }
        }
        pl.acc_slot = keys.len();
        keys.push(VarKey::Linepack { pipe: pi });
        pipe_layouts.push(pl);
    }
    if let Some(eps) = &model.eps {
        for m in 0..eps.machines.len() {
            keys.push(VarKey::MachOmega { unit: m });
            keys.push(VarKey::MachDelta { unit: m });
            if let Some(u) = eps.gts.iter().position(|g| g.machine == m) {
                for comp in 0..GtState::DIM {
                    keys.push(VarKey::GtState { unit: u, comp });
                }
            }
        }
    }
    let n_diff = keys.len();
    // algebraic slots paired with their rows
    let mut rows = GRows {
        mass: vec![usize::MAX; model.nodes.len()],
        closure: vec![usize::MAX; model.nodes.len()],
        press: HashMap::new(),
        fault_rows: vec![None; model.faults.len()],
        stator: Vec::new(),
        pe: Vec::new(),
        bus: Vec::new(),
        p2g_ix: Vec::new(),
        p2g_iy: Vec::new(),
        p2g_power: Vec::new(),
    };
    // helper: point index of a pipe end
    let end_point = |pipe: usize, end: PipeEnd| -> usize {
        match end {
            PipeEnd::Inlet => 0,
            PipeEnd::Outlet => model.pipes[pipe].n_cells,
        }
    };
    for node in &model.nodes {
        let k = node.id;
        let ends = model.incidence.ends_at(k).to_vec();
        let pressure_type = model.modes.node_kind[k].is_pressure();
        if pressure_type {
            rows.closure[k] = keys.len();
            keys.push(VarKey::NodeP { node: k });
            rows.mass[k] = keys.len();
            keys.push(VarKey::NodeQ { node: k });
            for (pipe, end, _) in &ends {
                let point = end_point(*pipe, *end);
                rows.press.insert((*pipe, *end), keys.len());
                pipe_layouts[*pipe].p_slot[point] = keys.len();
                keys.push(VarKey::CellP {
                    pipe: *pipe,
                    point,
                });
            }
        } else {
            let (p0, e0, _) = ends[0];
            rows.press.insert((p0, e0), keys.len());
            keys.push(VarKey::NodeP { node: k });
            rows.closure[k] = keys.len();
            keys.push(VarKey::NodeQ { node: k });
            let point = end_point(p0, e0);
            rows.mass[k] = keys.len();
            pipe_layouts[p0].q_slot[point] = keys.len();
            keys.push(VarKey::CellQ { pipe: p0, point });
            for (pipe, end, _) in ends.iter().skip(1) {
                let point = end_point(*pipe, *end);
                rows.press.insert((*pipe, *end), keys.len());
                pipe_layouts[*pipe].p_slot[point] = keys.len();
                keys.push(VarKey::CellP {
                    pipe: *pipe,
                    point,
                });
            }
        }
    }
    for (fi, spec) in model.faults.iter().enumerate() {
        if !model.modes.fault[fi].active {
            continue;
        }
        let (_, cell) = fault_at[spec.pipe].unwrap();
        let is_leak = spec.kind == FaultKind::Leak;
        let pin_row = keys.len();
        pipe_layouts[spec.pipe].p_slot[cell] = keys.len();
        keys.push(VarKey::CellP {
            pipe: spec.pipe,
            point: cell,
        });
        let up_row = keys.len();
        let q_up = keys.len();
        keys.push(VarKey::FaultQUp { fault: fi });
        let dn_row = keys.len();
        let q_dn = keys.len();
        keys.push(VarKey::FaultQDn { fault: fi });
        let (law_row, q_leak) = if is_leak {
            let r = keys.len();
            keys.push(VarKey::FaultQLeak { fault: fi });
            (Some(r), Some(r))
        } else {
            (None, None)
        };
        pipe_layouts[spec.pipe].q_slot[cell] = q_up;
        pipe_layouts[spec.pipe].fault = Some(PipeFaultLayout {
            cell,
            q_up,
            q_dn,
            q_leak,
        });
        rows.fault_rows[fi] = Some(FaultRows {
            up: up_row,
            dn: dn_row,
            pin: pin_row,
            law: law_row,
        });
    }
    if let Some(eps) = &model.eps {
        for m in 0..eps.machines.len() {
            let d = keys.len();
            keys.push(VarKey::MachIx { unit: m });
            let q = keys.len();
            keys.push(VarKey::MachIy { unit: m });
            rows.stator.push((d, q));
            rows.pe.push(keys.len());
            keys.push(VarKey::MachPe { unit: m });
        }
        for b in 0..eps.network.n_bus {
            let x = keys.len();
            keys.push(VarKey::BusUx { bus: b });
            let y = keys.len();
            keys.push(VarKey::BusUy { bus: b });
            rows.bus.push((x, y));
        }
        for u in 0..eps.p2gs.len() {
            rows.p2g_ix.push(keys.len());
            keys.push(VarKey::P2gIx { unit: u });
            rows.p2g_iy.push(keys.len());
            keys.push(VarKey::P2gIy { unit: u });
            rows.p2g_power.push(keys.len());
            keys.push(VarKey::P2gPower { unit: u });
        }
    }
    let n_alg = keys.len() - n_diff;
    // live-pressure runs per pipe for the accumulator rows
    for (pi, pl) in pipe_layouts.iter_mut().enumerate() {
        let n = model.pipes[pi].n_points();
        pl.lp_runs.clear();
        let mut start: Option<usize> = None;
        for i in 0..n {
            let live = pl.p_slot[i] < n_diff;
            match (live, start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    pl.lp_runs.push(LpRun { start: s, end: i - 1 });
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            pl.lp_runs.push(LpRun { start: s, end: n - 1 });
        }
    }
    let mut slot_of = HashMap::with_capacity(keys.len());
    for (slot, key) in keys.iter().enumerate() {
        slot_of.insert(*key, slot);
    }
    model.layout = DaeLayout {
        n_diff,
        n_alg,
        keys,
        slot_of,
        pipes: pipe_layouts,
        rows,
    };
    let dim = model.layout.dim();
    model.gas_buf = vec![0.0; dim];
    model.fd_state = vec![0.0; dim];
    model.fd_plus = vec![0.0; dim];
    model.fd_minus = vec![0.0; dim];
    model.jac = super::jacobian::plan(model)?;
    Ok(())
}

/// Rebuilds the layout after a mode change and migrates the state vector
/// by variable identity; new face variables inherit the replaced cell
/// values and the linepack accumulators are re-based.
pub(super) fn rebuild_and_migrate(
    model: &mut SystemModel,
    old_state: &[f64],
) -> Result<Vec<f64>, crate::Error> {
    let old_keys: Vec<VarKey> = model.layout.keys.clone();
    let mut old_value: HashMap<VarKey, f64> = HashMap::with_capacity(old_keys.len());
    for (slot, key) in old_keys.iter().enumerate() {
        old_value.insert(*key, old_state[slot]);
    }
    rebuild_layout(model)?;
    let mut state = vec![0.0; model.layout.dim()];
    for (slot, key) in model.layout.keys.iter().enumerate() {
        state[slot] = match old_value.get(key) {
            Some(v) => *v,
            None => match *key {
                VarKey::FaultQUp { fault } | VarKey::FaultQDn { fault } => {
                    let spec = &model.faults[fault];
                    let cell = spec.cell_index(model.pipes[spec.pipe].dx).unwrap();
                    *old_value
                        .get(&VarKey::CellQ {
                            pipe: spec.pipe,
                            point: cell,
                        })
                        .unwrap_or(&0.0)
                }
                VarKey::FaultQLeak { .. } => 0.0,
                _ => 0.0,
            },
        };
    }
    for pi in 0..model.pipes.len() {
        let acc = model.layout.pipes[pi].acc_slot;
        state[acc] = model.linepack(pi, &state);
    }
    Ok(state)
}
