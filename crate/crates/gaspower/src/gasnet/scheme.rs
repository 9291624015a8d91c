//! Interface-flux reconstruction and the semi-discrete right-hand side for
//! one contiguous run of pipe grid points.
//!
//! Both schemes work on the Lax-Friedrichs split fluxes
//! `fbar+- = (f(u) +- alpha u) / 2` with `alpha = c`, taken per equation:
//! the pressure line has flux `(c^2/S) q`, the mass-flow line `S p`. The
//! upwind interface flux is `fbar+` reconstructed from the left plus
//! `fbar-` reconstructed from the right; WENO-3 performs the one-sided
//! reconstructions at third order with smoothness-weighted stencils, while
//! the Kurganov-Tadmor variant takes the adjacent values directly, which
//! collapses to the first-order Rusanov flux
//! `(f_j + f_{j+1})/2 - alpha (u_{j+1} - u_j)/2`.

use super::{GasError, GasProperties, Pipe, SpatialScheme, WENO_EPSILON};

/// How to fill the two phantom grid points beyond each end of a segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// linear extrapolation of the two end values (pipe and fault faces);
    /// constant extrapolation would fabricate a flat profile and reflect a
    /// spurious wave of size O(dx grad u) off every boundary
    Ghost,
    /// periodic wrap, for manufactured-solution tests
    Periodic,
}

/// Interface fluxes of both equations over a segment of `n` grid points:
/// `p_flux[k]` and `q_flux[k]` sit between points `k-1` and `k`, for
/// `k = 0..=n`, so the boundary-closure fluxes are at `[0]` and `[n]`.
#[derive(Debug, Clone, Default)]
pub struct SegmentFlux {
    pub p_flux: Vec<f64>,
    pub q_flux: Vec<f64>,
}

/// Mass flow carried through the closing interfaces of a segment, in kg/s
/// (the pressure-equation flux scaled by S/c^2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentBoundaryFlow {
    pub inflow: f64,
    pub outflow: f64,
}

/// Nonlinear WENO weights from the smoothness indicators and linear
/// weights; normalized so the pair always sums to one.
#[inline]
pub fn weno_weights(beta0: f64, beta1: f64, gamma0: f64, gamma1: f64) -> (f64, f64) {
    let a0 = gamma0 / ((WENO_EPSILON + beta0) * (WENO_EPSILON + beta0));
    let a1 = gamma1 / ((WENO_EPSILON + beta1) * (WENO_EPSILON + beta1));
    let sum = a0 + a1;
    (a0 / sum, a1 / sum)
}

/// Third-order left-biased WENO value of `fbar` at the right face of point
/// j, from `[f_{j-1}, f_j, f_{j+1}]`.
#[inline]
fn weno3_left(fm1: f64, f0: f64, fp1: f64) -> f64 {
    let cand0 = 0.5 * (f0 + fp1);
    let cand1 = 0.5 * (-fm1 + 3.0 * f0);
    let (w0, w1) = weno_weights(
        (fp1 - f0) * (fp1 - f0),
        (f0 - fm1) * (f0 - fm1),
        2.0 / 3.0,
        1.0 / 3.0,
    );
    w0 * cand0 + w1 * cand1
}

/// Mirror image of [`weno3_left`]: value at the left face of point j+1,
/// from `[f_j, f_{j+1}, f_{j+2}]`.
#[inline]
fn weno3_right(f0: f64, fp1: f64, fp2: f64) -> f64 {
    let cand0 = 0.5 * (3.0 * fp1 - fp2);
    let cand1 = 0.5 * (f0 + fp1);
    let (w0, w1) = weno_weights(
        (fp2 - fp1) * (fp2 - fp1),
        (fp1 - f0) * (fp1 - f0),
        1.0 / 3.0,
        2.0 / 3.0,
    );
    w0 * cand0 + w1 * cand1
}

/// Scratch buffers reused across evaluations of one segment.
#[derive(Debug, Clone, Default)]
pub struct SchemeWorkspace {
    fp_plus: Vec<f64>,
    fp_minus: Vec<f64>,
    fq_plus: Vec<f64>,
    fq_minus: Vec<f64>,
    pub flux: SegmentFlux,
}

impl SchemeWorkspace {
    #[inline]
    fn set_point(&mut self, slot: usize, pv: f64, qv: f64, c: f64, c2_s: f64, s: f64) {
        let f_p = c2_s * qv;
        let f_q = s * pv;
        self.fp_plus[slot] = 0.5 * (f_p + c * pv);
        self.fp_minus[slot] = 0.5 * (f_p - c * pv);
        self.fq_plus[slot] = 0.5 * (f_q + c * qv);
        self.fq_minus[slot] = 0.5 * (f_q - c * qv);
    }

    fn prepare(
        &mut self,
        p: &[f64],
        q: &[f64],
        padding: Padding,
        props: &GasProperties,
        pipe: &Pipe,
    ) {
        let n = p.len();
        let padded = n + 4;
        let c = props.sound_speed;
        let s = pipe.area();
        let c2_s = c * c / s;
        for buf in [
            &mut self.fp_plus,
            &mut self.fp_minus,
            &mut self.fq_plus,
            &mut self.fq_minus,
        ] {
            buf.clear();
            buf.resize(padded, 0.0);
        }
        for i in 0..n {
            self.set_point(i + 2, p[i], q[i], c, c2_s, s);
        }
        let (gl0, gl1, gr0, gr1) = match padding {
            Padding::Ghost if n >= 2 => (
                (3.0 * p[0] - 2.0 * p[1], 3.0 * q[0] - 2.0 * q[1]),
                (2.0 * p[0] - p[1], 2.0 * q[0] - q[1]),
                (2.0 * p[n - 1] - p[n - 2], 2.0 * q[n - 1] - q[n - 2]),
                (3.0 * p[n - 1] - 2.0 * p[n - 2], 3.0 * q[n - 1] - 2.0 * q[n - 2]),
            ),
            Padding::Ghost => (
                (p[0], q[0]),
                (p[0], q[0]),
                (p[n - 1], q[n - 1]),
                (p[n - 1], q[n - 1]),
            ),
            Padding::Periodic => (
                (p[n - 2], q[n - 2]),
                (p[n - 1], q[n - 1]),
                (p[0], q[0]),
                (p[1], q[1]),
            ),
        };
        self.set_point(0, gl0.0, gl0.1, c, c2_s, s);
        self.set_point(1, gl1.0, gl1.1, c, c2_s, s);
        self.set_point(n + 2, gr0.0, gr0.1, c, c2_s, s);
        self.set_point(n + 3, gr1.0, gr1.1, c, c2_s, s);
    }

    fn reconstruct(&mut self, n: usize, scheme: SpatialScheme) {
        for buf in [&mut self.flux.p_flux, &mut self.flux.q_flux] {
            buf.clear();
            buf.resize(n + 1, 0.0);
        }
        // interface k lies between padded points k+1 and k+2
        for k in 0..=n {
            let pk = k + 1;
            let (p_hat, q_hat) = match scheme {
                SpatialScheme::Weno3 => (
                    weno3_left(self.fp_plus[pk - 1], self.fp_plus[pk], self.fp_plus[pk + 1])
                        + weno3_right(
                            self.fp_minus[pk],
                            self.fp_minus[pk + 1],
                            self.fp_minus[pk + 2],
                        ),
                    weno3_left(self.fq_plus[pk - 1], self.fq_plus[pk], self.fq_plus[pk + 1])
                        + weno3_right(
                            self.fq_minus[pk],
                            self.fq_minus[pk + 1],
                            self.fq_minus[pk + 2],
                        ),
                ),
                SpatialScheme::Kt => (
                    self.fp_plus[pk] + self.fp_minus[pk + 1],
                    self.fq_plus[pk] + self.fq_minus[pk + 1],
                ),
            };
            self.flux.p_flux[k] = p_hat;
            self.flux.q_flux[k] = q_hat;
        }
    }
}

/// WENO-3 interface fluxes for a segment, including the boundary closures.
pub fn weno3_interface_fluxes(
    p: &[f64],
    q: &[f64],
    padding: Padding,
    props: &GasProperties,
    pipe: &Pipe,
) -> SegmentFlux {
    let mut ws = SchemeWorkspace::default();
    ws.prepare(p, q, padding, props, pipe);
    ws.reconstruct(p.len(), SpatialScheme::Weno3);
    ws.flux
}

/// Kurganov-Tadmor (Rusanov) interface fluxes for a segment.
pub fn kt_interface_fluxes(
    p: &[f64],
    q: &[f64],
    padding: Padding,
    props: &GasProperties,
    pipe: &Pipe,
) -> SegmentFlux {
    let mut ws = SchemeWorkspace::default();
    ws.prepare(p, q, padding, props, pipe);
    ws.reconstruct(p.len(), SpatialScheme::Kt);
    ws.flux
}

/// Semi-discrete right-hand side `du/dt = -(f_{j+1/2} - f_{j-1/2})/dx + S(u)`
/// over one segment, with the friction source on the mass-flow line.
/// Returns the mass flow through the two closing interfaces.
#[allow(clippy::too_many_arguments)]
pub fn segment_rhs(
    p: &[f64],
    q: &[f64],
    scheme: SpatialScheme,
    padding: Padding,
    props: &GasProperties,
    pipe: &Pipe,
    dx: f64,
    ws: &mut SchemeWorkspace,
    dp_dt: &mut [f64],
    dq_dt: &mut [f64],
) -> Result<SegmentBoundaryFlow, GasError> {
    let n = p.len();
    debug_assert_eq!(q.len(), n);
    debug_assert_eq!(dp_dt.len(), n);
    debug_assert_eq!(dq_dt.len(), n);
    ws.prepare(p, q, padding, props, pipe);
    ws.reconstruct(n, scheme);
    let s = pipe.area();
    let c2 = props.sound_speed * props.sound_speed;
    let fric = pipe.friction * c2 / (2.0 * pipe.diameter * s);
    for j in 0..n {
        if p[j] <= 0.0 {
            return Err(GasError::NonPositivePressure {
                pipe: pipe.id,
                cell: j,
                value: p[j],
            });
        }
        dp_dt[j] = -(ws.flux.p_flux[j + 1] - ws.flux.p_flux[j]) / dx;
        dq_dt[j] =
            -(ws.flux.q_flux[j + 1] - ws.flux.q_flux[j]) / dx - fric * q[j] * q[j].abs() / p[j];
    }
    let to_mass = s / c2;
    Ok(SegmentBoundaryFlow {
        inflow: to_mass * ws.flux.p_flux[0],
        outflow: to_mass * ws.flux.p_flux[n],
    })
}

/// [`segment_rhs`] over a whole discretized pipe with ghost-cell closure.
pub fn pipe_rhs(
    dpipe: &super::DiscretizedPipe,
    scheme: SpatialScheme,
    props: &GasProperties,
) -> Result<(Vec<f64>, Vec<f64>), GasError> {
    let n = dpipe.n_points();
    let mut dp = vec![0.0; n];
    let mut dq = vec![0.0; n];
    let mut ws = SchemeWorkspace::default();
    segment_rhs(
        &dpipe.pressure,
        &dpipe.flow,
        scheme,
        Padding::Ghost,
        props,
        &dpipe.pipe,
        dpipe.dx,
        &mut ws,
        &mut dp,
        &mut dq,
    )?;
    Ok((dp, dq))
}
