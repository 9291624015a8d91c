//! Consistent initial points, masked damped Newton solves, and the
//! discrete event actions that mutate the system between steps.

use super::*;
use crate::events::{EventAction, EventHit, EventKind};

/// Convergence target of the steady-state and consistency solves.
pub const STEADY_TOL: f64 = 1e-8;

impl SystemModel {
    pub(super) fn mask_acc(&self) -> Vec<usize> {
        self.layout.pipes.iter().map(|p| p.acc_slot).collect()
    }

    pub(super) fn mask_all_diff(&self) -> Vec<usize> {
        (0..self.layout.n_diff).collect()
    }

    /// Rows (and by pairing, variables) of the whole electric block.
    pub(super) fn mask_eps(&self) -> Vec<usize> {
        let mut rows = Vec::new();
        let Some(eps) = &self.eps else { return rows };
        let layout = &self.layout;
        for m in 0..eps.machines.len() {
            rows.push(layout.slot(VarKey::MachOmega { unit: m }).unwrap());
            rows.push(layout.slot(VarKey::MachDelta { unit: m }).unwrap());
            let (d, q) = layout.rows.stator[m];
            rows.push(d);
            rows.push(q);
            rows.push(layout.rows.pe[m]);
        }
        for u in 0..eps.gts.len() {
            for comp in 0..GtState::DIM {
                rows.push(layout.slot(VarKey::GtState { unit: u, comp }).unwrap());
            }
        }
        for b in 0..eps.network.n_bus {
            let (x, y) = layout.rows.bus[b];
            rows.push(x);
            rows.push(y);
        }
        for u in 0..eps.p2gs.len() {
            rows.push(layout.rows.p2g_ix[u]);
            rows.push(layout.rows.p2g_iy[u]);
            rows.push(layout.rows.p2g_power[u]);
        }
        rows
    }

    /// Damped Newton on the (row-masked) stacked residual at fixed `t`.
    /// Masked rows are treated as satisfied and their paired variables
    /// stay frozen. Returns the final residual norm.
    pub(super) fn masked_newton(
        &mut self,
        t: f64,
        state: &mut [f64],
        masked: &[usize],
        tol: f64,
        max_iter: usize,
    ) -> Result<f64, DaeError> {
        let dim = self.layout.dim();
        let mut is_masked = vec![false; dim];
        for &r in masked {
            is_masked[r] = true;
        }
        let mut residual = vec![0.0; dim];
        let mut delta = vec![0.0; dim];
        let mut trial = vec![0.0; dim];
        let mut trial_res = vec![0.0; dim];
        let inf_norm = |r: &[f64], mask: &[bool]| -> f64 {
            r.iter()
                .zip(mask)
                .filter(|(_, m)| !**m)
                .fold(0.0_f64, |acc, (v, _)| acc.max(v.abs()))
        };
        let two_norm = |r: &[f64], mask: &[bool]| -> f64 {
            r.iter()
                .zip(mask)
                .filter(|(_, m)| !**m)
                .map(|(v, _)| v * v)
                .sum::<f64>()
                .sqrt()
        };
        let mut norm = f64::INFINITY;
        // the flat start sits in the plain-Newton basin but the norm must
        // climb before it falls; allow a few full non-monotone steps
        let mut nonmonotone_budget = 8usize;
        for iter in 0..max_iter {
            self.assemble_residual(t, state, &mut residual)
                .map_err(|_| DaeError::NoConvergence {
                    iters: iter,
                    residual: f64::NAN,
                })?;
            norm = inf_norm(&residual, &is_masked);
            if norm < tol {
                return Ok(norm);
            }
            let norm2 = two_norm(&residual, &is_masked);
            if log::log_enabled!(log::Level::Debug) {
                let worst = residual
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !is_masked[*i])
                    .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                    .map(|(i, v)| (i, *v))
                    .unwrap_or((0, 0.0));
                log::debug!(
                    "newton iter {iter}: |r|_inf = {norm:.3e}, |r|_2 = {norm2:.3e}, worst row {} ({:?}) = {:.3e}",
                    worst.0,
                    self.layout.key(worst.0.min(self.layout.dim() - 1)),
                    worst.1
                );
            }
            self.refresh_jacobian(t, state)
                .map_err(|_| DaeError::NoConvergence {
                    iters: iter,
                    residual: norm,
                })?;
            self.jac
                .factorize(0.0, self.layout.n_diff, masked)
                .map_err(|_| DaeError::NoConvergence {
                    iters: iter,
                    residual: norm,
                })?;
            for i in 0..dim {
                delta[i] = if is_masked[i] { 0.0 } else { residual[i] };
            }
            self.jac.solve_in_place(&mut delta);
            let mut alpha = 1.0;
            let mut accepted = false;
            let mut full_step_finite = false;
            for k in 0..12 {
                for i in 0..dim {
                    trial[i] = state[i] + alpha * delta[i];
                }
                let ok = self.assemble_residual(t, &trial, &mut trial_res).is_ok();
                if ok {
                    let trial_norm2 = two_norm(&trial_res, &is_masked);
                    if k == 0 {
                        full_step_finite = trial_norm2.is_finite();
                    }
                    if trial_norm2 < norm2 {
                        state.copy_from_slice(&trial);
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                if full_step_finite && nonmonotone_budget > 0 {
                    nonmonotone_budget -= 1;
                    for i in 0..dim {
                        state[i] += delta[i];
                    }
                } else {
                    return Err(DaeError::NoConvergence {
                        iters: iter,
                        residual: norm,
                    });
                }
            }
        }
        // final check after the last update
        if self.assemble_residual(t, state, &mut residual).is_ok() {
            norm = inf_norm(&residual, &is_masked);
            if norm < tol {
                return Ok(norm);
            }
        }
        Err(DaeError::NoConvergence {
            iters: max_iter,
            residual: norm,
        })
    }

    /// Re-solves the algebraic subvector at `t` holding the differential
    /// states fixed (post-event restart contract).
    pub fn solve_consistency(&mut self, t: f64, state: &mut [f64]) -> Result<(), crate::Error> {
        let mask = self.mask_all_diff();
        self.masked_newton(t, state, &mask, STEADY_TOL, 50)
            .map_err(|e| {
                crate::Error::Event(crate::events::EventError::InconsistentRestart {
                    t,
                    what: e.to_string(),
                })
            })?;
        Ok(())
    }

    /// Mean pressure of the declared pressure-type nodes (flat-start level).
    fn flat_pressure(&self) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for kind in &self.modes.node_kind {
            match kind {
                RuntimeKind::Pressure(p) => {
                    sum += p;
                    count += 1;
                }
                RuntimeKind::P2gPressure { unit } => {
                    sum += self.eps.as_ref().unwrap().p2gs[*unit].pressure_set;
                    count += 1;
                }
                _ => {}
            }
        }
        if count == 0 {
            5e6
        } else {
            sum / count as f64
        }
    }

    fn node_pressure_guess(&self, node: usize, flat: f64) -> f64 {
        match self.modes.node_kind[node] {
            RuntimeKind::Pressure(p) => p,
            RuntimeKind::P2gPressure { unit } => {
                self.eps.as_ref().unwrap().p2gs[unit].pressure_set
            }
            _ => flat,
        }
    }

    /// Steady draw posted at a node before any events, at the scenario
    /// dispatch for turbine nodes.
    pub(super) fn initial_draw(&self, node: usize) -> Result<f64, crate::Error> {
        Ok(match self.modes.node_kind[node] {
            RuntimeKind::Flow(d) => d,
            RuntimeKind::GtDraw { unit } => {
                let eps = self.eps.as_ref().unwrap();
                let gt = eps.gts[unit];
                let dispatch = eps.machines[gt.machine].p_mech;
                let (st, _) = crate::powersys::gas_turbine_equilibrium(&gt, unit, dispatch)
                    .map_err(crate::Error::Power)?;
                st.fuel * gt.rated_fuel
            }
            _ => 0.0,
        })
    }

    /// Solves the algebraic pipe-flow network (square-pressure drops
    /// against node balances) that anchors the gas start: a flat zero-flow
    /// guess has no friction slope and cannot reconcile two pressure
    /// sources.
    pub(super) fn network_flow_start(&self) -> Result<(Vec<f64>, Vec<f64>), crate::Error> {
        let n_nodes = self.nodes.len();
        let n_pipes = self.pipes.len();
        let dim = n_nodes + n_pipes;
        let flat = self.flat_pressure();
        let mut x = vec![0.0; dim];
        for k in 0..n_nodes {
            x[k] = self.node_pressure_guess(k, flat);
        }
        let mut draws = vec![0.0; n_nodes];
        for k in 0..n_nodes {
            draws[k] = self.initial_draw(k)?;
        }
        let res = |x: &[f64], out: &mut [f64]| {
            for k in 0..n_nodes {
                if self.modes.node_kind[k].is_pressure() {
                    out[k] = x[k] - self.node_pressure_guess(k, flat);
                } else {
                    let mut mass = -draws[k];
                    for (pipe, _, sign) in self.incidence.ends_at(k) {
                        mass += sign * x[n_nodes + pipe];
                    }
                    out[k] = mass;
                }
            }
            for (pi, geom) in self.pipes.iter().enumerate() {
                let q = x[n_nodes + pi];
                let pf = x[geom.pipe.from_node];
                let pt = x[geom.pipe.to_node];
                let s = geom.pipe.area();
                let c2 = self.props.sound_speed * self.props.sound_speed;
                let k_drop = geom.pipe.friction * c2 * geom.pipe.length / (geom.pipe.diameter * s * s);
                out[n_nodes + pi] =
                    (pf * pf - pt * pt - k_drop * q * q.abs()) / (pf.abs() + pt.abs()).max(1.0);
            }
        };
        let mut r = vec![0.0; dim];
        for _ in 0..80 {
            res(&x, &mut r);
            let norm = r.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            if norm < 1e-9 {
                break;
            }
            let mut jac = vec![0.0; dim * dim];
            let mut rp = vec![0.0; dim];
            for c in 0..dim {
                let orig = x[c];
                let d = 1e-6 * (1.0 + orig.abs());
                x[c] = orig + d;
                res(&x, &mut rp);
                x[c] = orig;
                for row in 0..dim {
                    jac[row * dim + c] = (rp[row] - r[row]) / d;
                }
            }
            let mut step = r.clone();
            if dense_solve(&mut jac, &mut step).is_err() {
                return Err(crate::Error::Dae(DaeError::NoConvergence {
                    iters: 0,
                    residual: norm,
                }));
            }
            // keep pressures positive through the iteration
            let mut alpha: f64 = 1.0;
            for k in 0..n_nodes {
                if step[k] > 0.0 && x[k] - alpha * step[k] < 1e4 {
                    alpha = alpha.min((x[k] - 1e4) / step[k]).max(0.01);
                }
            }
            for i in 0..dim {
                x[i] -= alpha * step[i];
            }
        }
        res(&x, &mut r);
        let norm = r.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        if norm >= 1e-6 || x[..n_nodes].iter().any(|p| !(*p > 0.0)) {
            return Err(crate::Error::Dae(DaeError::NoConvergence {
                iters: 80,
                residual: norm,
            }));
        }
        Ok((x[..n_nodes].to_vec(), x[n_nodes..].to_vec()))
    }

    /// Damped-Newton steady state: network-flow start for the gas side,
    /// synchronous machines with a power-flow start, then a joint polish.
    /// Returns a consistent initial point with residual below
    /// [`STEADY_TOL`].
    pub fn steady_state(&mut self) -> Result<Vec<f64>, crate::Error> {
        let dim = self.layout.dim();
        let mut state = vec![0.0; dim];
        let (node_p, pipe_q) = self.network_flow_start()?;
        for (pi, geom) in self.pipes.iter().enumerate() {
            let pl = &self.layout.pipes[pi];
            let q = pipe_q[pi];
            let pf = node_p[geom.pipe.from_node];
            let pt = node_p[geom.pipe.to_node];
            let n = geom.n_points();
            for i in 0..n {
                let w = i as f64 / (n - 1).max(1) as f64;
                let p2 = pf * pf + w * (pt * pt - pf * pf);
                state[pl.p_slot[i]] = p2.max(1e8).sqrt();
                state[pl.q_slot[i]] = q;
            }
        }
        for node in &self.nodes {
            let k = node.id;
            state[self.layout.slot(VarKey::NodeP { node: k }).unwrap()] = node_p[k];
            let draw = if self.modes.node_kind[k].is_pressure() {
                let mut mass = 0.0;
                for (pipe, _, sign) in self.incidence.ends_at(k) {
                    mass += sign * pipe_q[*pipe];
                }
                mass
            } else {
                self.initial_draw(k)?
            };
            state[self.layout.slot(VarKey::NodeQ { node: k }).unwrap()] = draw;
        }
        if let Some(eps) = &self.eps {
            for m in 0..eps.machines.len() {
                state[self.layout.slot(VarKey::MachOmega { unit: m }).unwrap()] = 1.0;
                state[self.layout.slot(VarKey::MachDelta { unit: m }).unwrap()] = 0.0;
                state[self.layout.slot(VarKey::MachPe { unit: m }).unwrap()] =
                    eps.machines[m].p_mech;
            }
            for b in 0..eps.network.n_bus {
                state[self.layout.slot(VarKey::BusUx { bus: b }).unwrap()] = 1.0;
                state[self.layout.slot(VarKey::BusUy { bus: b }).unwrap()] = 0.0;
            }
            let gts = eps.gts.clone();
            for (u, gt) in gts.iter().enumerate() {
                let dispatch = eps.machines[gt.machine].p_mech;
                let (st, _) = crate::powersys::gas_turbine_equilibrium(gt, u, dispatch)
                    .map_err(crate::Error::Power)?;
                let base = self.layout.slot(VarKey::GtState { unit: u, comp: 0 }).unwrap();
                state[base] = st.temp_int;
                state[base + 1] = st.valve;
                state[base + 2] = st.fuel;
                state[base + 3] = st.shield;
                state[base + 4] = st.thermocouple;
            }
        }
        // gas network alone, electric block frozen
        let mut mask = self.mask_acc();
        mask.extend(self.mask_eps());
        self.masked_newton(0.0, &mut state, &mask, STEADY_TOL, 60)
            .map_err(crate::Error::Dae)?;
        // electric start from a power flow, iterated once against the gas
        // draws it implies
        if self.eps.is_some() {
            for _pass in 0..2 {
                self.power_flow_start(&mut state)?;
                let mut mask = self.mask_acc();
                mask.extend(self.mask_eps());
                self.masked_newton(0.0, &mut state, &mask, STEADY_TOL, 60)
                    .map_err(crate::Error::Dae)?;
            }
        }
        // joint polish; the rotor-angle datum must be pinned or the
        // steady jacobian is singular along the uniform-rotation orbit
        let mut mask = self.mask_acc();
        if let Some(eps) = &self.eps {
            if !eps.machines.is_empty() {
                mask.push(self.layout.slot(VarKey::MachDelta { unit: 0 }).unwrap());
            }
        }
        self.masked_newton(0.0, &mut state, &mask, STEADY_TOL, 50)
            .map_err(crate::Error::Dae)?;
        for pi in 0..self.pipes.len() {
            let acc = self.layout.pipes[pi].acc_slot;
            state[acc] = self.linepack(pi, &state);
        }
        Ok(state)
    }

    /// Power-flow-based electric initialization: solves the network with
    /// the machine dispatches, then fixes rotor angles, transient
    /// voltages, mechanical powers, governor references and turbine
    /// states so the assembled system is at equilibrium.
    pub(super) fn power_flow_start(&mut self, state: &mut [f64]) -> Result<(), crate::Error> {
        let eps = self.eps.as_ref().unwrap();
        let n_bus = eps.network.n_bus;
        let slack_bus = eps.machines[0].bus;
        // electric load of each p2g at its current gas operating point (pu)
        let mut p2g_pu = vec![0.0; eps.p2gs.len()];
        for (u, p2g) in eps.p2gs.iter().enumerate() {
            let nq = state[self.layout.slot(VarKey::NodeQ { node: p2g.gas_node }).unwrap()];
            let np = state[self.layout.slot(VarKey::NodeP { node: p2g.gas_node }).unwrap()];
            let injection = -nq;
            let watts = crate::powersys::p2g_power(injection, np, u, p2g, &self.props)
                .map_err(crate::Error::Power)?;
            p2g_pu[u] = watts / eps.s_base;
        }
        let mut p_spec = vec![0.0; n_bus];
        let mut is_pv = vec![false; n_bus];
        let mut v_spec = vec![1.0; n_bus];
        for (m, mach) in eps.machines.iter().enumerate() {
            is_pv[mach.bus] = true;
            v_spec[mach.bus] = eps.v_set[m];
            p_spec[mach.bus] += mach.p_mech;
        }
        for (u, p2g) in eps.p2gs.iter().enumerate() {
            p_spec[p2g.bus] -= p2g_pu[u];
        }
        // Newton on (Ux, Uy)
        let mut u_x = vec![1.0; n_bus];
        let mut u_y = vec![0.0; n_bus];
        for b in 0..n_bus {
            u_x[b] = state[self.layout.slot(VarKey::BusUx { bus: b }).unwrap()];
            u_y[b] = state[self.layout.slot(VarKey::BusUy { bus: b }).unwrap()];
        }
        let dim = 2 * n_bus;
        let res = |u_x: &[f64], u_y: &[f64], out: &mut [f64]| {
            for b in 0..n_bus {
                let (icx, icy) = eps.network.network_current(b, u_x, u_y);
                let p = u_x[b] * icx + u_y[b] * icy;
                let q = u_y[b] * icx - u_x[b] * icy;
                if b == slack_bus {
                    out[2 * b] = u_x[b] - v_spec[b];
                    out[2 * b + 1] = u_y[b];
                } else if is_pv[b] {
                    out[2 * b] = p - p_spec[b];
                    out[2 * b + 1] = u_x[b] * u_x[b] + u_y[b] * u_y[b] - v_spec[b] * v_spec[b];
                } else {
                    out[2 * b] = p - p_spec[b];
                    out[2 * b + 1] = q;
                }
            }
        };
        let mut r = vec![0.0; dim];
        let mut converged = false;
        for _ in 0..40 {
            res(&u_x, &u_y, &mut r);
            let norm = r.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            if norm < 1e-10 {
                converged = true;
                break;
            }
            // dense finite-difference jacobian
            let mut jac = vec![0.0; dim * dim];
            let mut rp = vec![0.0; dim];
            for c in 0..dim {
                let idx = c / 2;
                let orig = if c % 2 == 0 { u_x[idx] } else { u_y[idx] };
                let d = 1e-7 * (1.0 + orig.abs());
                if c % 2 == 0 {
                    u_x[idx] = orig + d;
                } else {
                    u_y[idx] = orig + d;
                }
                res(&u_x, &u_y, &mut rp);
                if c % 2 == 0 {
                    u_x[idx] = orig;
                } else {
                    u_y[idx] = orig;
                }
                for row in 0..dim {
                    jac[row * dim + c] = (rp[row] - r[row]) / d;
                }
            }
            let mut step = r.clone();
            dense_solve(&mut jac, &mut step).map_err(|_| {
                crate::Error::Dae(DaeError::PowerFlowFailed { residual: norm })
            })?;
            for b in 0..n_bus {
                u_x[b] -= step[2 * b];
                u_y[b] -= step[2 * b + 1];
            }
        }
        if !converged {
            res(&u_x, &u_y, &mut r);
            let norm = r.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            if norm >= 1e-8 {
                return Err(crate::Error::Dae(DaeError::PowerFlowFailed { residual: norm }));
            }
        }
        // machine and turbine parameters from the solved network
        let eps = self.eps.as_mut().unwrap();
        for m in 0..eps.machines.len() {
            let bus = eps.machines[m].bus;
            let (icx, icy) = eps.network.network_current(bus, &u_x, &u_y);
            // machine current = net bus injection minus the p2g draw
            let mut ix = icx;
            let mut iy = icy;
            for (u, p2g) in eps.p2gs.iter().enumerate() {
                if p2g.bus == bus {
                    let umag2 = u_x[bus] * u_x[bus] + u_y[bus] * u_y[bus];
                    ix += p2g_pu[u] * u_x[bus] / umag2;
                    iy += p2g_pu[u] * u_y[bus] / umag2;
                }
            }
            let (ux, uy) = (u_x[bus], u_y[bus]);
            let mach = &mut eps.machines[m];
            // rotor angle from the q-axis phasor U + (r_a + j Xq') I
            let aq = ux + mach.r_a * ix - mach.xq_prime * iy;
            let bq = uy + mach.r_a * iy + mach.xq_prime * ix;
            let delta = bq.atan2(aq);
            let ad = ux + mach.r_a * ix - mach.xd_prime * iy;
            let bd = uy + mach.r_a * iy + mach.xd_prime * ix;
            mach.e_d = delta.sin() * aq - delta.cos() * bq;
            mach.e_q = delta.cos() * ad + delta.sin() * bd;
            let pe = crate::powersys::electrical_power(ux, uy, ix, iy, mach.r_a);
            mach.p_mech = pe;
            let layout = &self.layout;
            state[layout.slot(VarKey::MachOmega { unit: m }).unwrap()] = 1.0;
            state[layout.slot(VarKey::MachDelta { unit: m }).unwrap()] = delta;
            state[layout.slot(VarKey::MachIx { unit: m }).unwrap()] = ix;
            state[layout.slot(VarKey::MachIy { unit: m }).unwrap()] = iy;
            state[layout.slot(VarKey::MachPe { unit: m }).unwrap()] = pe;
        }
        for b in 0..n_bus {
            state[self.layout.slot(VarKey::BusUx { bus: b }).unwrap()] = u_x[b];
            state[self.layout.slot(VarKey::BusUy { bus: b }).unwrap()] = u_y[b];
        }
        let machines = eps.machines.clone();
        for u in 0..eps.gts.len() {
            let dispatch = machines[eps.gts[u].machine].p_mech;
            let (st, load_ref) =
                crate::powersys::gas_turbine_equilibrium(&eps.gts[u], u, dispatch)
                    .map_err(crate::Error::Power)?;
            eps.gts[u].load_ref = load_ref;
            let base = self.layout.slot(VarKey::GtState { unit: u, comp: 0 }).unwrap();
            state[base] = st.temp_int;
            state[base + 1] = st.valve;
            state[base + 2] = st.fuel;
            state[base + 3] = st.shield;
            state[base + 4] = st.thermocouple;
            let node = eps.gts[u].gas_node;
            state[self.layout.slot(VarKey::NodeQ { node }).unwrap()] =
                st.fuel * eps.gts[u].rated_fuel;
        }
        for (u, p2g) in self.eps.as_ref().unwrap().p2gs.iter().enumerate() {
            let slot = self.layout.slot(VarKey::P2gPower { unit: u }).unwrap();
            state[slot] = p2g_pu[u];
            let bus = p2g.bus;
            let umag2 = u_x[bus] * u_x[bus] + u_y[bus] * u_y[bus];
            state[self.layout.slot(VarKey::P2gIx { unit: u }).unwrap()] =
                -p2g_pu[u] * u_x[bus] / umag2;
            state[self.layout.slot(VarKey::P2gIy { unit: u }).unwrap()] =
                -p2g_pu[u] * u_y[bus] / umag2;
        }
        Ok(())
    }

    /// Applies a located event's discrete action at `t_cr` and returns the
    /// (possibly re-laid-out) state plus whether the layout was rebuilt.
    pub fn apply_event(
        &mut self,
        hit: &EventHit,
        state: Vec<f64>,
    ) -> Result<(Vec<f64>, bool), crate::Error> {
        let t = hit.t_cr;
        let mut state = state;
        let mut rebuilt = false;
        let mut needs_consistency = true;
        match hit.spec.action {
            EventAction::RecordOnly => {
                needs_consistency = false;
            }
            EventAction::ActivateFault => {
                let f = hit.spec.fault.expect("validated event");
                if !self.modes.fault[f].active {
                    let spec = self.faults[f];
                    let cell = spec
                        .cell_index(self.pipes[spec.pipe].dx)
                        .map_err(crate::Error::Fault)?;
                    let p_slot = self.layout.pipes[spec.pipe].p_slot[cell];
                    self.modes.fault[f] = FaultState {
                        active: true,
                        pre_fault_pressure: state[p_slot],
                    };
                    state = build::rebuild_and_migrate(self, &state)?;
                    rebuilt = true;
                } else {
                    needs_consistency = false;
                }
            }
            EventAction::TripGt => {
                let u = hit.spec.unit.expect("validated event");
                if self.modes.gt_tripped[u] {
                    needs_consistency = false;
                } else {
                    self.modes.gt_tripped[u] = true;
                }
            }
            EventAction::ConvertNodeToConstFlow => {
                let node = match (hit.spec.kind, hit.spec.unit, hit.spec.node) {
                    (EventKind::P2gSaturation, Some(u), _) => {
                        self.eps.as_ref().unwrap().p2gs[u].gas_node
                    }
                    (_, _, Some(n)) => n,
                    _ => unreachable!("validated event"),
                };
                if matches!(self.modes.node_kind[node], RuntimeKind::Flow(_)) {
                    needs_consistency = false;
                } else {
                    // pin the injection at the crossed limit
                    self.modes.node_kind[node] = RuntimeKind::Flow(-hit.spec.threshold);
                    state = build::rebuild_and_migrate(self, &state)?;
                    rebuilt = true;
                }
            }
            EventAction::CutLoad => {
                let node = hit.spec.node.expect("validated event");
                let was_pressure = self.modes.node_kind[node].is_pressure();
                self.modes.node_kind[node] = RuntimeKind::Flow(0.0);
                if was_pressure {
                    state = build::rebuild_and_migrate(self, &state)?;
                    rebuilt = true;
                }
            }
            EventAction::ApplyBusFault => {
                let bf = self.bus_fault.expect("validated event");
                let eps = self.eps.as_mut().unwrap();
                eps.network = crate::powersys::apply_bus_fault(
                    &eps.network,
                    bf.bus,
                    bf.conductance,
                    bf.susceptance,
                )
                .map_err(crate::Error::Power)?;
                self.modes.bus_fault_on = true;
            }
            EventAction::ClearBusFault => {
                let eps = self.eps.as_mut().unwrap();
                eps.network = crate::powersys::clear_bus_fault(&eps.network);
                self.modes.bus_fault_on = false;
            }
        }
        if needs_consistency {
            self.solve_consistency(t, &mut state)?;
        }
        Ok((state, rebuilt))
    }
}

/// In-place dense LU solve with partial pivoting (power-flow sized).
fn dense_solve(a: &mut [f64], b: &mut [f64]) -> Result<(), ()> {
    let n = b.len();
    debug_assert_eq!(a.len(), n * n);
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
