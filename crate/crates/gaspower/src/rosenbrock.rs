//! Stiffly accurate six-stage Rosenbrock integration (Rodas4) for
//! semi-explicit index-1 DAE systems `M [y; z]' = [f; g]` with
//! `M = diag(I, 0)`.
//!
//! Each attempted step factorizes `(M - h gamma J0)` once and obtains the
//! six stage vectors by explicit recursion:
//!
//! ```text
//! (M - h gamma J0) k_i = h r(t0 + alpha_i h, u0 + sum alpha_ij k_j)
//!                        + h J0 sum gamma_ij k_j + gamma_i h^2 dr/dt
//! ```
//!
//! The last stage coincides with the solution update, so algebraic
//! variables carry the full order. The embedded third-order companion is
//! the sixth-stage predictor, giving the local error estimate for the
//! adaptive step controller, and degree-two continuous weights `b_i(theta)`
//! provide an O(h^3) interpolant used for event location.

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, Clone)]
pub enum SolveError {
    #[error("iteration matrix is singular at t = {t}, h = {h}")]
    SingularIteration { t: f64, h: f64 },
    #[error("step size underflow at t = {t} (h = {h}): {diagnostic}")]
    StepSizeUnderflow { t: f64, h: f64, diagnostic: String },
    #[error("step budget of {max_steps} exhausted at t = {t}")]
    TooManySteps { t: f64, max_steps: usize },
    #[error("dense-output coordinate {theta} outside [0, 1]")]
    ThetaOutOfRange { theta: f64 },
    #[error("model evaluation failed at t = {t}: {what}")]
    ModelBreakdown { t: f64, what: String },
    #[error("restart after event at t = {t} failed: {what}")]
    RestartFailed { t: f64, what: String },
}

/// A recoverable model-evaluation failure (for example a transiently
/// non-positive pressure probed by a trial stage).
#[derive(Debug, Clone)]
pub struct EvalFailure {
    pub what: String,
}

impl EvalFailure {
    pub fn new(what: impl Into<String>) -> Self {
        Self { what: what.into() }
    }
}

impl std::fmt::Display for EvalFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.what)
    }
}

/// The DAE system as seen by the stepper: stacked state `[y; z]`, stacked
/// residual `[f; g]`, and a sparse Jacobian the system owns together with
/// the factorization of the iteration matrix `(M/(h gamma) - J0)`.
pub trait DaeSystem {
    fn n_diff(&self) -> usize;
    fn n_alg(&self) -> usize;
    fn dim(&self) -> usize {
        self.n_diff() + self.n_alg()
    }
    /// stacked residual `[f; g]` at `(t, state)`
    fn residual(&mut self, t: f64, state: &[f64], out: &mut [f64]) -> Result<(), EvalFailure>;
    /// recompute `J0` at `(t, state)`; the sparsity pattern must not change
    fn refresh_jacobian(&mut self, t: f64, state: &[f64]) -> Result<(), EvalFailure>;
    /// factorize `(M / (h gamma) - J0)` with the current `J0`
    fn factorize(&mut self, h_gamma: f64) -> Result<(), SolveError>;
    /// back-substitute through the last factorization
    fn solve_in_place(&self, rhs: &mut [f64]);
    /// `out = J0 * v`
    fn jacobian_matvec(&self, v: &[f64], out: &mut [f64]);
}

pub const STAGES: usize = 6;

/// Rosenbrock coefficient set in the form of the stage recursion above.
#[derive(Debug, Clone)]
pub struct RosenbrockTableau {
    pub gamma: f64,
    /// strictly lower stage combination weights
    pub alpha: [[f64; STAGES]; STAGES],
    /// strictly lower Jacobian coupling weights
    pub gamma_ij: [[f64; STAGES]; STAGES],
    /// stage times `alpha_i = sum_j alpha_ij`
    pub alpha_i: [f64; STAGES],
    /// time-derivative coefficients `gamma_i = sum_j gamma_ij + gamma`
    pub gamma_i: [f64; STAGES],
    /// solution weights
    pub b: [f64; STAGES],
    /// embedded (order 3) weights: the sixth-stage predictor row
    pub b_embedded: [f64; STAGES],
    /// continuous-output correction: `b_i(theta) = theta^2 b_i + theta (1 - theta) dense[i]`
    pub dense: [f64; STAGES],
    /// classical order of the solution weights
    pub order: u32,
}

/// Full-precision Rodas4 coefficients (L-stable, order 4, embedded order
/// 3), stated in the transformed `(A, C)` form of the production codes and
/// converted here to the `(alpha, gamma_ij)` recursion form.
pub fn rodas4() -> RosenbrockTableau {
    const G: f64 = 0.25;
    let a_rows: [[f64; 4]; 4] = [
        [1.544000000000000, 0.0, 0.0, 0.0],
        [0.9466785280815826, 0.2557011698983284, 0.0, 0.0],
        [3.314825187068521, 2.896124015972201, 0.9986419139977817, 0.0],
        [
            1.221224509226641,
            6.019134481288629,
            12.53708332932087,
            -0.6878860361058950,
        ],
    ];
    let c_rows: [[f64; 5]; 5] = [
        [-5.668800000000000, 0.0, 0.0, 0.0, 0.0],
        [-2.430093356833875, -0.2063599157091915, 0.0, 0.0, 0.0],
        [-0.1073529058151375, -9.594562251023355, -20.47028614809616, 0.0, 0.0],
        [
            7.496443313967647,
            -10.24680431464352,
            -33.99990352819905,
            11.70890893206160,
            0.0,
        ],
        [
            8.083246795921522,
            -7.981132988064893,
            -31.52159432874371,
            16.31930543123136,
            -6.058818238834054,
        ],
    ];
    // Gamma = (diag(1/gamma) - C)^-1, lower triangular with diagonal gamma
    let mut dc = [[0.0_f64; STAGES]; STAGES];
    for (i, row) in dc.iter_mut().enumerate() {
        row[i] = 1.0 / G;
        for j in 0..i {
            row[j] = -c_rows[i - 1][j];
        }
    }
    let mut big_gamma = [[0.0_f64; STAGES]; STAGES];
    for col in 0..STAGES {
        for row in col..STAGES {
            let mut v = if row == col { 1.0 } else { 0.0 };
            for j in col..row {
                v -= dc[row][j] * big_gamma[j][col];
            }
            big_gamma[row][col] = v / dc[row][row];
        }
    }
    // stage combination rows of the transformed scheme; row 6 reuses row 5
    // and adds the fifth stage with unit weight (stiff accuracy)
    let mut a_hat = [[0.0_f64; STAGES]; STAGES];
    for i in 1..5 {
        a_hat[i][..4].copy_from_slice(&a_rows[i - 1]);
    }
    a_hat[5][..4].copy_from_slice(&a_rows[3]);
    a_hat[5][4] = 1.0;
    // alpha = A_hat * Gamma (strictly lower)
    let mut alpha = [[0.0_f64; STAGES]; STAGES];
    for i in 0..STAGES {
        for j in 0..i {
            let mut v = 0.0;
            for l in j..i {
                v += a_hat[i][l] * big_gamma[l][j];
            }
            alpha[i][j] = v;
        }
    }
    // b^T = m^T Gamma with m = (a51..a54, 1, 1)
    let m_vec = [
        a_rows[3][0],
        a_rows[3][1],
        a_rows[3][2],
        a_rows[3][3],
        1.0,
        1.0,
    ];
    let mut b = [0.0_f64; STAGES];
    for (j, bj) in b.iter_mut().enumerate() {
        let mut v = 0.0;
        for i in j..STAGES {
            v += m_vec[i] * big_gamma[i][j];
        }
        *bj = v;
    }
    let mut gamma_ij = [[0.0_f64; STAGES]; STAGES];
    let mut gamma_i = [0.0_f64; STAGES];
    let mut alpha_i = [0.0_f64; STAGES];
    for i in 0..STAGES {
        let mut gs = G;
        let mut asum = 0.0;
        for j in 0..i {
            gamma_ij[i][j] = big_gamma[i][j];
            gs += big_gamma[i][j];
            asum += alpha[i][j];
        }
        gamma_i[i] = gs;
        alpha_i[i] = asum;
    }
    let mut b_embedded = [0.0_f64; STAGES];
    b_embedded[..5].copy_from_slice(&alpha[5][..5]);
    // Continuous weights b_i(theta) = theta^2 b_i + theta (1-theta) d_i.
    // The conditions sum(d) = 1 and sum(d_i beta_i) = -gamma (with
    // beta_i = sum_j alpha_ij + gamma_ij) make the interpolant locally
    // third-order accurate; d is the least-norm correction of the
    // embedded weights satisfying them.
    let mut beta = [0.0_f64; STAGES];
    for i in 0..STAGES {
        for j in 0..i {
            beta[i] += alpha[i][j] + gamma_ij[i][j];
        }
    }
    let (mut r1, mut r2) = (0.0, 0.0);
    for i in 0..STAGES {
        r1 += b_embedded[i];
        r2 += b_embedded[i] * beta[i];
    }
    let target = (1.0 - r1, -G - r2);
    let s1 = STAGES as f64;
    let s2: f64 = beta.iter().sum();
    let s3: f64 = beta.iter().map(|x| x * x).sum();
    let det = s1 * s3 - s2 * s2;
    let l1 = (s3 * target.0 - s2 * target.1) / det;
    let l2 = (-s2 * target.0 + s1 * target.1) / det;
    let mut dense = [0.0_f64; STAGES];
    for i in 0..STAGES {
        dense[i] = b_embedded[i] + l1 + l2 * beta[i];
    }
    RosenbrockTableau {
        gamma: G,
        alpha,
        gamma_ij,
        alpha_i,
        gamma_i,
        b,
        b_embedded,
        dense,
        order: 4,
    }
}

impl RosenbrockTableau {
    /// Continuous weight `b_i(theta)`; `b_i(0) = 0`, `b_i(1) = b_i`.
    #[inline]
    pub fn b_theta(&self, i: usize, theta: f64) -> f64 {
        theta * (theta * self.b[i] + (1.0 - theta) * self.dense[i])
    }
}

/// Normalized local error `|| delta / (atol + rtol |u1|) ||_inf` over the
/// stacked differential and algebraic components.
pub fn error_norm(delta: &[f64], u1: &[f64], atol: f64, rtol: f64) -> f64 {
    let mut err = 0.0_f64;
    for (d, u) in delta.iter().zip(u1) {
        err = err.max((d / (atol + rtol * u.abs())).abs());
    }
    err
}

/// Step-size update `h * clamp(0.9 err^(-1/q), 0.2, 6.0)` with `q = 4`.
pub fn adapt_step(err: f64, h: f64, order: u32) -> f64 {
    let factor = if err <= 0.0 {
        6.0
    } else {
        (0.9 * err.powf(-1.0 / order as f64)).clamp(0.2, 6.0)
    };
    h * factor
}

/// Integration configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepControl {
    pub atol: f64,
    pub rtol: f64,
    pub h_init: f64,
    pub h_min: f64,
    /// largest step taken (0 disables the cap)
    pub h_max: f64,
    pub max_steps: usize,
    /// accept every step at exactly this size (reference/brute-force runs)
    pub fixed_h: Option<f64>,
}

impl Default for StepControl {
    fn default() -> Self {
        Self {
            atol: 1e-3,
            rtol: 1e-1,
            h_init: 1e-5,
            h_min: 1e-12,
            h_max: 0.0,
            max_steps: 5_000_000,
            fixed_h: None,
        }
    }
}

/// Counters over one integration run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub lu_factorizations: usize,
    pub jacobian_refreshes: usize,
    pub residual_evals: usize,
    pub restarts: usize,
}

/// One accepted step with its stage vectors, the basis of the continuous
/// extension.
pub struct AcceptedStep<'a> {
    pub t0: f64,
    pub h: f64,
    pub start: &'a [f64],
    pub end: &'a [f64],
    pub stages: &'a [Vec<f64>; STAGES],
    pub tableau: &'a RosenbrockTableau,
    pub err: f64,
}

impl AcceptedStep<'_> {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    /// Continuous solution at `t0 + theta h` into `out`.
    pub fn dense_eval(&self, theta: f64, out: &mut [f64]) -> Result<(), SolveError> {
        if !(0.0..=1.0).contains(&theta) {
            return Err(SolveError::ThetaOutOfRange { theta });
        }
        out.copy_from_slice(self.start);
        for i in 0..STAGES {
            let w = self.tableau.b_theta(i, theta);
            for (o, k) in out.iter_mut().zip(&self.stages[i]) {
                *o += w * k;
            }
        }
        Ok(())
    }

    /// Continuous value of a single component.
    pub fn dense_eval_component(&self, theta: f64, index: usize) -> Result<f64, SolveError> {
        if !(0.0..=1.0).contains(&theta) {
            return Err(SolveError::ThetaOutOfRange { theta });
        }
        let mut v = self.start[index];
        for i in 0..STAGES {
            v += self.tableau.b_theta(i, theta) * self.stages[i][index];
        }
        Ok(v)
    }
}

/// Verdict of the supervisor after an accepted step.
pub enum AfterStep {
    Continue,
    /// replace the state (possibly with a different layout) and resume
    /// from `t` with a fresh initial step size
    Restart { t: f64, state: Vec<f64> },
    Stop,
}

/// Hook called once per accepted step: trajectory recording, event
/// detection and discrete actions all live behind this.
pub trait StepSupervisor<S: DaeSystem> {
    fn inspect(&mut self, system: &mut S, step: &AcceptedStep) -> Result<AfterStep, SolveError>;
}

/// No-op supervisor.
pub struct NoSupervision;

impl<S: DaeSystem> StepSupervisor<S> for NoSupervision {
    fn inspect(&mut self, _system: &mut S, _step: &AcceptedStep) -> Result<AfterStep, SolveError> {
        Ok(AfterStep::Continue)
    }
}

struct StepWorkspace {
    stages: [Vec<f64>; STAGES],
    r_t: Vec<f64>,
    base_residual: Vec<f64>,
    stage_state: Vec<f64>,
    stage_residual: Vec<f64>,
    coupling: Vec<f64>,
    coupling_matvec: Vec<f64>,
    end: Vec<f64>,
    delta: Vec<f64>,
}

impl StepWorkspace {
    fn new(dim: usize) -> Self {
        Self {
            stages: std::array::from_fn(|_| vec![0.0; dim]),
            r_t: vec![0.0; dim],
            base_residual: vec![0.0; dim],
            stage_state: vec![0.0; dim],
            stage_residual: vec![0.0; dim],
            coupling: vec![0.0; dim],
            coupling_matvec: vec![0.0; dim],
            end: vec![0.0; dim],
            delta: vec![0.0; dim],
        }
    }
}

/// Outcome of [`integrate`].
pub struct Outcome {
    pub t_end: f64,
    pub state: Vec<f64>,
    pub stats: StepStats,
}

enum Attempt {
    Accepted { err: f64 },
    StageFailure(EvalFailure),
}

/// Single Rosenbrock step attempt; the iteration matrix must already be
/// factorized for `(h, gamma)` and `ws.base_residual` / `ws.r_t` filled at
/// the step base point.
fn attempt_step<S: DaeSystem>(
    system: &mut S,
    tableau: &RosenbrockTableau,
    t0: f64,
    state: &[f64],
    h: f64,
    control: &StepControl,
    ws: &mut StepWorkspace,
    stats: &mut StepStats,
) -> Attempt {
    let dim = state.len();
    let hg = h * tableau.gamma;
    for i in 0..STAGES {
        // stage state v_i = u0 + sum_{j<i} alpha_ij k_j
        ws.stage_state.copy_from_slice(state);
        for j in 0..i {
            let a = tableau.alpha[i][j];
            if a != 0.0 {
                let kj = &ws.stages[j];
                for (v, k) in ws.stage_state.iter_mut().zip(kj) {
                    *v += a * k;
                }
            }
        }
        if i == 0 {
            ws.stage_residual.copy_from_slice(&ws.base_residual);
        } else {
            stats.residual_evals += 1;
            if let Err(fail) = system.residual(
                t0 + tableau.alpha_i[i] * h,
                &ws.stage_state,
                &mut ws.stage_residual,
            ) {
                return Attempt::StageFailure(fail);
            }
        }
        // rhs = h r + h J0 sum gamma_ij k_j + gamma_i h^2 r_t, then the
        // mass-scaled solve of (M/(h gamma) - J0) k = rhs / (h gamma)
        ws.coupling.iter_mut().for_each(|v| *v = 0.0);
        let mut any_coupling = false;
        for j in 0..i {
            let g = tableau.gamma_ij[i][j];
            if g != 0.0 {
                any_coupling = true;
                let kj = &ws.stages[j];
                for (c, k) in ws.coupling.iter_mut().zip(kj) {
                    *c += g * k;
                }
            }
        }
        if any_coupling {
            system.jacobian_matvec(&ws.coupling, &mut ws.coupling_matvec);
        } else {
            ws.coupling_matvec.iter_mut().for_each(|v| *v = 0.0);
        }
        let gi = tableau.gamma_i[i];
        let k_i = &mut ws.stages[i];
        for idx in 0..dim {
            k_i[idx] = (h * ws.stage_residual[idx]
                + h * ws.coupling_matvec[idx]
                + gi * h * h * ws.r_t[idx])
                / hg;
        }
        system.solve_in_place(k_i);
        if k_i.iter().any(|v| !v.is_finite()) {
            return Attempt::StageFailure(EvalFailure::new("non-finite stage vector"));
        }
    }
    // solution, embedded companion, and normalized error
    ws.end.copy_from_slice(state);
    ws.delta.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..STAGES {
        let bi = tableau.b[i];
        let di = bi - tableau.b_embedded[i];
        let ki = &ws.stages[i];
        for idx in 0..dim {
            ws.end[idx] += bi * ki[idx];
            ws.delta[idx] += di * ki[idx];
        }
    }
    let err = error_norm(&ws.delta, &ws.end, control.atol, control.rtol);
    if !err.is_finite() {
        return Attempt::StageFailure(EvalFailure::new("non-finite error estimate"));
    }
    Attempt::Accepted { err }
}

/// Integrates the system over `t_span`, adapting the step size, invoking
/// the supervisor after every accepted step, and restarting on demand.
pub fn integrate<S: DaeSystem, V: StepSupervisor<S>>(
    system: &mut S,
    t_span: (f64, f64),
    initial_state: Vec<f64>,
    control: &StepControl,
    tableau: &RosenbrockTableau,
    supervisor: &mut V,
) -> Result<Outcome, SolveError> {
    let (t_start, t_end) = t_span;
    let mut t = t_start;
    let mut state = initial_state;
    let mut stats = StepStats::default();
    let mut ws = StepWorkspace::new(state.len());
    let mut h = control.fixed_h.unwrap_or(control.h_init).max(control.h_min);
    let mut need_jacobian = true;

    'outer: while t < t_end - 1e-14 * t_end.abs().max(1.0) {
        if stats.accepted + stats.rejected >= control.max_steps {
            return Err(SolveError::TooManySteps {
                t,
                max_steps: control.max_steps,
            });
        }
        if need_jacobian {
            if ws.stage_state.len() != state.len() {
                ws = StepWorkspace::new(state.len());
            }
            stats.jacobian_refreshes += 1;
            system
                .refresh_jacobian(t, &state)
                .map_err(|e| SolveError::ModelBreakdown { t, what: e.what })?;
            stats.residual_evals += 2;
            system
                .residual(t, &state, &mut ws.base_residual)
                .map_err(|e| SolveError::ModelBreakdown { t, what: e.what })?;
            // forward-difference time derivative of the residual
            let dt = 1e-7 * (1.0 + t.abs());
            system
                .residual(t + dt, &state, &mut ws.r_t)
                .map_err(|e| SolveError::ModelBreakdown { t, what: e.what })?;
            for (rt, r0) in ws.r_t.iter_mut().zip(&ws.base_residual) {
                *rt = (*rt - r0) / dt;
            }
        }
        need_jacobian = false;
        let _ = need_jacobian;
        let mut h_cap = t_end - t;
        if control.h_max > 0.0 {
            h_cap = h_cap.min(control.h_max);
        }
        if let Some(fh) = control.fixed_h {
            h = fh.min(h_cap);
        } else {
            h = h.min(h_cap);
        }

        // rejection loop: J0 is reused, the factorization tracks h
        let (err, h_taken) = loop {
            stats.lu_factorizations += 1;
            system.factorize(h * tableau.gamma).map_err(|e| match e {
                SolveError::SingularIteration { .. } => SolveError::SingularIteration { t, h },
                other => other,
            })?;
            match attempt_step(system, tableau, t, &state, h, control, &mut ws, &mut stats) {
                Attempt::Accepted { err } => {
                    if err <= 1.0 || control.fixed_h.is_some() {
                        break (err, h);
                    }
                    stats.rejected += 1;
                    h = adapt_step(err, h, tableau.order);
                }
                Attempt::StageFailure(fail) => {
                    stats.rejected += 1;
                    h *= 0.25;
                    if h < control.h_min {
                        return Err(SolveError::StepSizeUnderflow {
                            t,
                            h,
                            diagnostic: fail.what,
                        });
                    }
                    continue;
                }
            }
            if h < control.h_min {
                return Err(SolveError::StepSizeUnderflow {
                    t,
                    h,
                    diagnostic: "error control drove the step below h_min".into(),
                });
            }
        };
        stats.accepted += 1;
        let verdict = {
            let step = AcceptedStep {
                t0: t,
                h: h_taken,
                start: &state,
                end: &ws.end,
                stages: &ws.stages,
                tableau,
                err,
            };
            supervisor.inspect(system, &step)?
        };
        match verdict {
            AfterStep::Continue => {
                t += h_taken;
                state.copy_from_slice(&ws.end);
                if control.fixed_h.is_none() {
                    h = adapt_step(err, h_taken, tableau.order);
                }
                need_jacobian = true;
            }
            AfterStep::Restart {
                t: t_r,
                state: new_state,
            } => {
                t = t_r;
                state = new_state;
                h = control.fixed_h.unwrap_or(control.h_init);
                stats.restarts += 1;
                need_jacobian = true;
            }
            AfterStep::Stop => break 'outer,
        }
    }
    Ok(Outcome {
        t_end: t,
        state,
        stats,
    })
}

#[cfg(test)]
mod tests;
