//! Sparse Jacobian machinery: fixed pattern, analytic entries for the
//! linear rows, grouped central finite differences for the nonlinear ones,
//! and the factorization of the iteration matrix `(sigma M - J)`.

use super::*;
use crate::faults::FaultKind;
use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMat};

/// How an analytic entry is computed at refresh time.
#[derive(Debug, Clone, Copy)]
enum AEntry {
    Const(f64),
    /// bus-row entries that track the (possibly faulted) network matrices
    NetG { i: usize, j: usize, neg: bool },
    NetB { i: usize, j: usize, neg: bool },
    /// turbine fuel draw in a node closure: `-rated`, zero when tripped
    GtFuelClosure { unit: usize },
}

#[derive(Debug, Clone, Default)]
struct GasCol {
    slot: usize,
    /// (live gas row, csc slot of (row, this column))
    entries: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Default)]
struct SmallCol {
    slot: usize,
    entries: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
struct SynthEntry {
    dst: usize,
    srcs: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
struct SynthRow {
    coeff: f64,
    entries: Vec<SynthEntry>,
}

#[derive(Default)]
pub(super) struct JacobianPlan {
    dim: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    /// J values in csc order
    values: Vec<f64>,
    /// (sigma M - J) values
    iter_values: Vec<f64>,
    diag_slot: Vec<usize>,
    row_slots: Vec<Vec<usize>>,
    analytic: Vec<(usize, AEntry)>,
    gas_colors: Vec<Vec<GasCol>>,
    small_cols: Vec<SmallCol>,
    synth: Vec<SynthRow>,
    symbolic: Option<SymbolicSparseColMat<usize>>,
    symbolic_lu: Option<SymbolicLu<usize>>,
    lu: Option<Lu<usize, f64>>,
}

impl std::fmt::Debug for JacobianPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JacobianPlan")
            .field("dim", &self.dim)
            .field("nnz", &self.row_idx.len())
            .finish()
    }
}

impl JacobianPlan {
    /// `out = J v`
    pub(super) fn matvec(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for col in 0..self.dim {
            let vc = v[col];
            if vc == 0.0 {
                continue;
            }
            for k in self.col_ptr[col]..self.col_ptr[col + 1] {
                out[self.row_idx[k]] += self.values[k] * vc;
            }
        }
    }

    /// Entry lookup (tests and debugging).
    #[cfg(test)]
    pub(super) fn entry(&self, row: usize, col: usize) -> f64 {
        for k in self.col_ptr[col]..self.col_ptr[col + 1] {
            if self.row_idx[k] == row {
                return self.values[k];
            }
        }
        0.0
    }

    #[cfg(test)]
    pub(super) fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    /// Factorizes `(sigma M - J)`; rows listed in `masked` are replaced by
    /// identity rows (their residuals are treated as satisfied).
    pub(super) fn factorize(
        &mut self,
        sigma: f64,
        n_diff: usize,
        masked: &[usize],
    ) -> Result<(), String> {
        for (iv, v) in self.iter_values.iter_mut().zip(&self.values) {
            *iv = -*v;
        }
        for &r in masked {
            for &slot in &self.row_slots[r] {
                self.iter_values[slot] = 0.0;
            }
            self.iter_values[self.diag_slot[r]] = 1.0;
        }
        if sigma != 0.0 {
            if masked.is_empty() {
                for i in 0..n_diff {
                    self.iter_values[self.diag_slot[i]] += sigma;
                }
            } else {
                let mut is_masked = vec![false; self.dim];
                for &r in masked {
                    is_masked[r] = true;
                }
                for i in 0..n_diff {
                    if !is_masked[i] {
                        self.iter_values[self.diag_slot[i]] += sigma;
                    }
                }
            }
        }
        let symbolic = self.symbolic.as_ref().expect("plan built");
        let mat = SparseColMatRef::new(symbolic.as_ref(), &self.iter_values);
        let sym_lu = self.symbolic_lu.as_ref().expect("plan built").clone();
        match Lu::try_new_with_symbolic(sym_lu, mat) {
            Ok(lu) => {
                self.lu = Some(lu);
                Ok(())
            }
            Err(e) => Err(format!("{e:?}")),
        }
    }

    pub(super) fn solve_in_place(&self, rhs: &mut [f64]) {
        let lu = self.lu.as_ref().expect("factorized");
        let n = rhs.len();
        let rhs_mat = faer::MatMut::from_column_major_slice_mut(rhs, n, 1);
        lu.solve_in_place(rhs_mat);
    }
}

/// Builds the pattern and assembly programs for the current layout.
pub(super) fn plan(model: &SystemModel) -> Result<JacobianPlan, crate::Error> {
    let layout = &model.layout;
    let dim = layout.dim();
    let n_diff = layout.n_diff;
    let mut pattern: Vec<(usize, usize)> = Vec::new();
    for i in 0..dim {
        pattern.push((i, i));
    }
    let mut analytic_rc: Vec<(usize, usize, AEntry)> = Vec::new();
    // window of grid columns coupled to a live gas row in one segment;
    // the fault point's flow column is the face of whichever segment the
    // window belongs to
    let gas_window = |pl: &PipeLayout, seg_lo: usize, seg_hi: usize, point: usize| {
        let lo = point.saturating_sub(2).max(seg_lo);
        let hi = (point + 2).min(seg_hi);
        let mut cols = Vec::with_capacity(10);
        for c in lo..=hi {
            cols.push(pl.p_slot[c]);
            let q = match pl.fault {
                Some(fl) if fl.cell == c && seg_lo == fl.cell => fl.q_dn,
                _ => pl.q_slot[c],
            };
            cols.push(q);
        }
        cols
    };
    // segments of a pipe under the current fault state
    let segments = |pi: usize| -> Vec<(usize, usize)> {
        let n = model.pipes[pi].n_points();
        match layout.pipes[pi].fault {
            Some(fl) => vec![(0, fl.cell), (fl.cell, n - 1)],
            None => vec![(0, n - 1)],
        }
    };
    // gas rows: PDE stencil windows
    for (pi, pl) in layout.pipes.iter().enumerate() {
        for (lo, hi) in segments(pi) {
            for point in lo..=hi {
                if pl.fault.map_or(false, |f| f.cell == point) {
                    continue;
                }
                for (slot, live) in [
                    (pl.p_slot[point], pl.p_slot[point] < n_diff),
                    (pl.q_slot[point], pl.q_slot[point] < n_diff),
                ] {
                    if live {
                        for col in gas_window(pl, lo, hi, point) {
                            pattern.push((slot, col));
                        }
                    }
                }
            }
        }
        // accumulator rows synthesize from the live pressure rows
        for run in &pl.lp_runs {
            // segment bounds containing this run
            let (lo, hi) = segments(pi)
                .into_iter()
                .find(|(lo, hi)| *lo <= run.start && run.end <= *hi)
                .expect("run inside a segment");
            for point in run.start..=run.end {
                for col in gas_window(pl, lo, hi, point) {
                    pattern.push((pl.acc_slot, col));
                }
            }
        }
    }
    // node rows
    let node_p = |k: usize| layout.slot(VarKey::NodeP { node: k }).unwrap();
    let node_q = |k: usize| layout.slot(VarKey::NodeQ { node: k }).unwrap();
    for node in &model.nodes {
        let k = node.id;
        let mass = layout.rows.mass[k];
        analytic_rc.push((mass, node_q(k), AEntry::Const(-1.0)));
        for (pipe, end, sign) in model.incidence.ends_at(k) {
            let point = match end {
                PipeEnd::Inlet => 0,
                PipeEnd::Outlet => model.pipes[*pipe].n_cells,
            };
            let pl = &layout.pipes[*pipe];
            analytic_rc.push((mass, pl.q_slot[point], AEntry::Const(*sign)));
            let press = layout.rows.press[&(*pipe, *end)];
            analytic_rc.push((press, pl.p_slot[point], AEntry::Const(1.0)));
            analytic_rc.push((press, node_p(k), AEntry::Const(-1.0)));
        }
        let closure = layout.rows.closure[k];
        match model.modes.node_kind[k] {
            RuntimeKind::Pressure(_) | RuntimeKind::P2gPressure { .. } => {
                analytic_rc.push((closure, node_p(k), AEntry::Const(1.0)));
            }
            RuntimeKind::Flow(_) => {
                analytic_rc.push((closure, node_q(k), AEntry::Const(1.0)));
            }
            RuntimeKind::GtDraw { unit } => {
                analytic_rc.push((closure, node_q(k), AEntry::Const(1.0)));
                let fuel = layout.slot(VarKey::GtState { unit, comp: 2 }).unwrap();
                analytic_rc.push((closure, fuel, AEntry::GtFuelClosure { unit }));
            }
        }
    }
    // fault rows: characteristic closures are linear; the leak law is FD
    let mut small_rc: Vec<(usize, usize)> = Vec::new();
    for (fi, spec) in model.faults.iter().enumerate() {
        let Some(rows) = layout.rows.fault_rows[fi] else {
            continue;
        };
        let pl = &layout.pipes[spec.pipe];
        let fl = pl.fault.unwrap();
        let j = fl.cell;
        let sc = model.pipes[spec.pipe].pipe.area() / model.props.sound_speed;
        let cs = 1.0 / sc;
        let p = |i: usize| pl.p_slot[i];
        let q = |i: usize| pl.q_slot[i];
        match spec.kind {
            FaultKind::Rupture => {
                analytic_rc.extend_from_slice(&[
                    (rows.up, fl.q_up, AEntry::Const(1.0)),
                    (rows.up, p(j - 1), AEntry::Const(-2.0 * sc)),
                    (rows.up, q(j - 1), AEntry::Const(-2.0)),
                    (rows.up, p(j - 2), AEntry::Const(sc)),
                    (rows.up, q(j - 2), AEntry::Const(1.0)),
                    (rows.up, p(j), AEntry::Const(sc)),
                    (rows.dn, fl.q_dn, AEntry::Const(1.0)),
                    (rows.dn, p(j + 2), AEntry::Const(-sc)),
                    (rows.dn, q(j + 2), AEntry::Const(1.0)),
                    (rows.dn, p(j + 1), AEntry::Const(2.0 * sc)),
                    (rows.dn, q(j + 1), AEntry::Const(-2.0)),
                    (rows.dn, p(j), AEntry::Const(-sc)),
                    (rows.pin, p(j), AEntry::Const(1.0)),
                ]);
            }
            FaultKind::Leak => {
                analytic_rc.extend_from_slice(&[
                    // downstream characteristic fixes q_dn
                    (rows.dn, fl.q_dn, AEntry::Const(1.0)),
                    (rows.dn, p(j + 2), AEntry::Const(-sc)),
                    (rows.dn, q(j + 2), AEntry::Const(1.0)),
                    (rows.dn, p(j + 1), AEntry::Const(2.0 * sc)),
                    (rows.dn, q(j + 1), AEntry::Const(-2.0)),
                    (rows.dn, p(j), AEntry::Const(-sc)),
                    // upstream characteristic fixes the fault pressure
                    (rows.pin, p(j), AEntry::Const(1.0)),
                    (rows.pin, fl.q_up, AEntry::Const(cs)),
                    (rows.pin, p(j - 2), AEntry::Const(1.0)),
                    (rows.pin, q(j - 2), AEntry::Const(cs)),
                    (rows.pin, p(j - 1), AEntry::Const(-2.0)),
                    (rows.pin, q(j - 1), AEntry::Const(-2.0 * cs)),
                    // hole mass balance
                    (rows.up, fl.q_up, AEntry::Const(1.0)),
                    (rows.up, fl.q_leak.unwrap(), AEntry::Const(-1.0)),
                    (rows.up, fl.q_dn, AEntry::Const(-1.0)),
                    // hole law: unit in q_leak, FD in the fault pressure
                    (rows.law.unwrap(), fl.q_leak.unwrap(), AEntry::Const(1.0)),
                ]);
                small_rc.push((rows.law.unwrap(), p(j)));
            }
        }
    }
    // electric rows
    if let Some(eps) = &model.eps {
        let sum_t: f64 = eps.machines.iter().map(|m| m.inertia).sum();
        let omega_base = eps.network.omega_base;
        for (m, mach) in eps.machines.iter().enumerate() {
            let omega = layout.slot(VarKey::MachOmega { unit: m }).unwrap();
            let delta = layout.slot(VarKey::MachDelta { unit: m }).unwrap();
            let pe = layout.slot(VarKey::MachPe { unit: m }).unwrap();
            let ix = layout.slot(VarKey::MachIx { unit: m }).unwrap();
            let iy = layout.slot(VarKey::MachIy { unit: m }).unwrap();
            let ux = layout.slot(VarKey::BusUx { bus: mach.bus }).unwrap();
            let uy = layout.slot(VarKey::BusUy { bus: mach.bus }).unwrap();
            // swing row: analytic in P_e, FD in speed and fuel
            analytic_rc.push((omega, pe, AEntry::Const(-1.0 / mach.inertia)));
            small_rc.push((omega, omega));
            // angle row: constant center-of-inertia weights
            for (m2, other) in eps.machines.iter().enumerate() {
                let w2 = layout.slot(VarKey::MachOmega { unit: m2 }).unwrap();
                let kron = if m2 == m { 1.0 } else { 0.0 };
                analytic_rc.push((
                    delta,
                    w2,
                    AEntry::Const(omega_base * (kron - other.inertia / sum_t)),
                ));
            }
            // turbine block
            if let Some(u) = eps.gts.iter().position(|g| g.machine == m) {
                let fuel = layout.slot(VarKey::GtState { unit: u, comp: 2 }).unwrap();
                small_rc.push((omega, fuel));
                for comp in 0..GtState::DIM {
                    let row = layout.slot(VarKey::GtState { unit: u, comp }).unwrap();
                    for comp2 in 0..GtState::DIM {
                        let col = layout.slot(VarKey::GtState { unit: u, comp: comp2 }).unwrap();
                        small_rc.push((row, col));
                    }
                    small_rc.push((row, omega));
                }
            }
            // stator and power rows
            let (row_d, row_q) = layout.rows.stator[m];
            for row in [row_d, row_q] {
                for col in [delta, ux, uy, ix, iy] {
                    small_rc.push((row, col));
                }
            }
            let pe_row = layout.rows.pe[m];
            analytic_rc.push((pe_row, pe, AEntry::Const(1.0)));
            for col in [ux, uy, ix, iy] {
                small_rc.push((pe_row, col));
            }
        }
        for b in 0..eps.network.n_bus {
            let (row_x, row_y) = layout.rows.bus[b];
            for j in 0..eps.network.n_bus {
                let uxj = layout.slot(VarKey::BusUx { bus: j }).unwrap();
                let uyj = layout.slot(VarKey::BusUy { bus: j }).unwrap();
                analytic_rc.push((row_x, uxj, AEntry::NetG { i: b, j, neg: true }));
                analytic_rc.push((row_x, uyj, AEntry::NetB { i: b, j, neg: false }));
                analytic_rc.push((row_y, uxj, AEntry::NetB { i: b, j, neg: true }));
                analytic_rc.push((row_y, uyj, AEntry::NetG { i: b, j, neg: true }));
            }
            for (m, mach) in eps.machines.iter().enumerate() {
                if mach.bus == b {
                    let ix = layout.slot(VarKey::MachIx { unit: m }).unwrap();
                    let iy = layout.slot(VarKey::MachIy { unit: m }).unwrap();
                    analytic_rc.push((row_x, ix, AEntry::Const(1.0)));
                    analytic_rc.push((row_y, iy, AEntry::Const(1.0)));
                }
            }
            for (u, p2g) in eps.p2gs.iter().enumerate() {
                if p2g.bus == b {
                    let ix = layout.slot(VarKey::P2gIx { unit: u }).unwrap();
                    let iy = layout.slot(VarKey::P2gIy { unit: u }).unwrap();
                    analytic_rc.push((row_x, ix, AEntry::Const(1.0)));
                    analytic_rc.push((row_y, iy, AEntry::Const(1.0)));
                }
            }
        }
        for (u, p2g) in eps.p2gs.iter().enumerate() {
            let ux = layout.slot(VarKey::BusUx { bus: p2g.bus }).unwrap();
            let uy = layout.slot(VarKey::BusUy { bus: p2g.bus }).unwrap();
            let ix = layout.slot(VarKey::P2gIx { unit: u }).unwrap();
            let iy = layout.slot(VarKey::P2gIy { unit: u }).unwrap();
            let power = layout.slot(VarKey::P2gPower { unit: u }).unwrap();
            let np = layout.slot(VarKey::NodeP { node: p2g.gas_node }).unwrap();
            let nq = layout.slot(VarKey::NodeQ { node: p2g.gas_node }).unwrap();
            for col in [ix, ux, uy, power] {
                small_rc.push((layout.rows.p2g_ix[u], col));
            }
            for col in [iy, ux, uy, power] {
                small_rc.push((layout.rows.p2g_iy[u], col));
            }
            for col in [power, np, nq] {
                small_rc.push((layout.rows.p2g_power[u], col));
            }
        }
    }
    // assemble the csc pattern
    for (r, c, _) in &analytic_rc {
        pattern.push((*r, *c));
    }
    for (r, c) in &small_rc {
        pattern.push((*r, *c));
    }
    pattern.sort_by_key(|(r, c)| (*c, *r));
    pattern.dedup();
    let nnz = pattern.len();
    let mut col_ptr = vec![0usize; dim + 1];
    let mut row_idx = vec![0usize; nnz];
    for (k, (r, c)) in pattern.iter().enumerate() {
        col_ptr[c + 1] += 1;
        row_idx[k] = *r;
    }
    for c in 0..dim {
        col_ptr[c + 1] += col_ptr[c];
    }
    let slot_of = |row: usize, col: usize| -> usize {
        let lo = col_ptr[col];
        let hi = col_ptr[col + 1];
        lo + row_idx[lo..hi]
            .binary_search(&row)
            .unwrap_or_else(|_| panic!("missing pattern entry ({row}, {col})"))
    };
    let diag_slot: Vec<usize> = (0..dim).map(|i| slot_of(i, i)).collect();
    let mut row_slots: Vec<Vec<usize>> = vec![Vec::new(); dim];
    for c in 0..dim {
        for k in col_ptr[c]..col_ptr[c + 1] {
            row_slots[row_idx[k]].push(k);
        }
    }
    let analytic: Vec<(usize, AEntry)> = analytic_rc
        .iter()
        .map(|(r, c, e)| (slot_of(*r, *c), *e))
        .collect();
    let small_cols: Vec<SmallCol> = {
        let mut by_col: HashMap<usize, Vec<(usize, usize)>> = HashMap::new();
        for (r, c) in &small_rc {
            by_col
                .entry(*c)
                .or_default()
                .push((*r, slot_of(*r, *c)));
        }
        let mut cols: Vec<_> = by_col
            .into_iter()
            .map(|(slot, mut entries)| {
                entries.sort_unstable();
                entries.dedup();
                SmallCol { slot, entries }
            })
            .collect();
        cols.sort_by_key(|c| c.slot);
        cols
    };
    // gas colors: (point mod 5, p/q) never collides within the five-point
    // stencil; face variables inherit the fault point's color
    let mut gas_colors: Vec<Vec<GasCol>> = (0..10).map(|_| Vec::new()).collect();
    for (pi, pl) in layout.pipes.iter().enumerate() {
        let segs = segments(pi);
        let mut push_col = |color: usize, slot: usize, entries: Vec<(usize, usize)>| {
            if !entries.is_empty() {
                gas_colors[color].push(GasCol { slot, entries });
            }
        };
        let live_rows_in_window =
            |pl: &PipeLayout, lo: usize, hi: usize, point: usize| -> Vec<usize> {
                let a = point.saturating_sub(2).max(lo);
                let b = (point + 2).min(hi);
                let mut rows = Vec::new();
                for i in a..=b {
                    if pl.fault.map_or(false, |f| f.cell == i) {
                        continue;
                    }
                    if pl.p_slot[i] < n_diff {
                        rows.push(pl.p_slot[i]);
                    }
                    if pl.q_slot[i] < n_diff {
                        rows.push(pl.q_slot[i]);
                    }
                }
                rows
            };
        for (lo, hi) in &segs {
            for point in *lo..=*hi {
                let is_fault_cell = pl.fault.map_or(false, |f| f.cell == point);
                // pressure column (includes pinned-end and fault pressures)
                if !(is_fault_cell && *lo == point && *lo != 0) {
                    // emit the fault pressure column only once (from the
                    // upstream segment); regular points once per segment
                    // they belong to (interior points belong to exactly one)
                    let color = (point % 5) * 2;
                    let mut rows: Vec<usize> = Vec::new();
                    if is_fault_cell {
                        // couples into both segments
                        for (l2, h2) in &segs {
                            rows.extend(live_rows_in_window(pl, *l2, *h2, point));
                        }
                    } else {
                        rows.extend(live_rows_in_window(pl, *lo, *hi, point));
                    }
                    let entries = rows
                        .iter()
                        .map(|r| (*r, slot_of(*r, pl.p_slot[point])))
                        .collect();
                    push_col(color, pl.p_slot[point], entries);
                }
                // flow column(s)
                let color = (point % 5) * 2 + 1;
                if is_fault_cell {
                    let fl = pl.fault.unwrap();
                    if *lo == point && point != 0 {
                        // downstream segment sees the q_dn face
                        let rows = live_rows_in_window(pl, *lo, *hi, point);
                        let entries =
                            rows.iter().map(|r| (*r, slot_of(*r, fl.q_dn))).collect();
                        push_col(color, fl.q_dn, entries);
                    } else {
                        let rows = live_rows_in_window(pl, *lo, *hi, point);
                        let entries =
                            rows.iter().map(|r| (*r, slot_of(*r, fl.q_up))).collect();
                        push_col(color, fl.q_up, entries);
                    }
                } else {
                    let rows = live_rows_in_window(pl, *lo, *hi, point);
                    let entries = rows
                        .iter()
                        .map(|r| (*r, slot_of(*r, pl.q_slot[point])))
                        .collect();
                    push_col(color, pl.q_slot[point], entries);
                }
            }
        }
    }
    // accumulator rows: linear combinations of the live pressure rows
    let mut synth = Vec::new();
    for (pi, pl) in layout.pipes.iter().enumerate() {
        let geom = &model.pipes[pi];
        let coeff = geom.lp_weight(&model.props);
        let mut per_col: HashMap<usize, Vec<usize>> = HashMap::new();
        for run in &pl.lp_runs {
            let (lo, hi) = segments(pi)
                .into_iter()
                .find(|(lo, hi)| *lo <= run.start && run.end <= *hi)
                .unwrap();
            for point in run.start..=run.end {
                let row = pl.p_slot[point];
                for col in gas_window(pl, lo, hi, point) {
                    per_col.entry(col).or_default().push(slot_of(row, col));
                }
            }
        }
        let mut entries: Vec<SynthEntry> = per_col
            .into_iter()
            .map(|(col, srcs)| SynthEntry {
                dst: slot_of(pl.acc_slot, col),
                srcs,
            })
            .collect();
        entries.sort_by_key(|e| e.dst);
        synth.push(SynthRow { coeff, entries });
    }
    let symbolic = SymbolicSparseColMat::new_checked(dim, dim, col_ptr.clone(), None, row_idx.clone());
    let symbolic_lu = SymbolicLu::try_new(symbolic.as_ref())
        .map_err(|e| DaeError::Pattern(format!("{e:?}")))
        .map_err(crate::Error::Dae)?;
    let _ = n_diff;
    Ok(JacobianPlan {
        dim,
        col_ptr,
        row_idx,
        values: vec![0.0; nnz],
        iter_values: vec![0.0; nnz],
        diag_slot,
        row_slots,
        analytic,
        gas_colors,
        small_cols,
        synth,
        symbolic: Some(symbolic),
        symbolic_lu: Some(symbolic_lu),
        lu: None,
    })
}

/// Recomputes all Jacobian values at `(t, state)`.
pub(super) fn refresh(model: &mut SystemModel, t: f64, state: &[f64]) -> Result<(), EvalFailure> {
    let mut plan = std::mem::take(&mut model.jac);
    plan.values.iter_mut().for_each(|v| *v = 0.0);
    // analytic entries
    for (slot, entry) in &plan.analytic {
        let v = match entry {
            AEntry::Const(c) => *c,
            AEntry::NetG { i, j, neg } => {
                let eps = model.eps.as_ref().unwrap();
                let g = eps.network.g_at(*i, *j);
                if *neg {
                    -g
                } else {
                    g
                }
            }
            AEntry::NetB { i, j, neg } => {
                let eps = model.eps.as_ref().unwrap();
                let b = eps.network.b_at(*i, *j);
                if *neg {
                    -b
                } else {
                    b
                }
            }
            AEntry::GtFuelClosure { unit } => {
                if model.modes.gt_tripped[*unit] {
                    0.0
                } else {
                    -model.eps.as_ref().unwrap().gts[*unit].rated_fuel
                }
            }
        };
        plan.values[*slot] += v;
    }
    // grouped central differences over the gas columns
    let mut x = std::mem::take(&mut model.fd_state);
    let mut buf_p = std::mem::take(&mut model.fd_plus);
    let mut buf_m = std::mem::take(&mut model.fd_minus);
    x.clear();
    x.extend_from_slice(state);
    let mut deltas: Vec<f64> = Vec::new();
    for color in 0..plan.gas_colors.len() {
        if plan.gas_colors[color].is_empty() {
            continue;
        }
        deltas.clear();
        for gc in &plan.gas_colors[color] {
            let d = 1e-7 * (1.0 + state[gc.slot].abs());
            deltas.push(d);
            x[gc.slot] = state[gc.slot] + d;
        }
        model.gas_residual(t, &x, &mut buf_p)?;
        for (gc, d) in plan.gas_colors[color].iter().zip(&deltas) {
            x[gc.slot] = state[gc.slot] - d;
        }
        model.gas_residual(t, &x, &mut buf_m)?;
        for (gc, d) in plan.gas_colors[color].iter().zip(&deltas) {
            x[gc.slot] = state[gc.slot];
            for (row, slot) in &gc.entries {
                plan.values[*slot] = (buf_p[*row] - buf_m[*row]) / (2.0 * d);
            }
        }
    }
    // single-column differences over the small nonlinear rows
    for sc in &plan.small_cols {
        let d = 1e-7 * (1.0 + state[sc.slot].abs());
        x[sc.slot] = state[sc.slot] + d;
        model.assemble_residual(t, &x, &mut buf_p)?;
        x[sc.slot] = state[sc.slot] - d;
        model.assemble_residual(t, &x, &mut buf_m)?;
        x[sc.slot] = state[sc.slot];
        for (row, slot) in &sc.entries {
            plan.values[*slot] = (buf_p[*row] - buf_m[*row]) / (2.0 * d);
        }
    }
    // accumulator rows from the pressure rows
    for sr in &plan.synth {
        for e in &sr.entries {
            let mut acc = 0.0;
            for src in &e.srcs {
                acc += plan.values[*src];
            }
            plan.values[e.dst] = sr.coeff * acc;
        }
    }
    model.fd_state = x;
    model.fd_plus = buf_p;
    model.fd_minus = buf_m;
    model.jac = plan;
    Ok(())
}
