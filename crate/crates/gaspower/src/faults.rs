//! Rupture and big-hole leakage boundary closures.
//!
//! A fault replaces the PDE equations of its grid cell with algebraic
//! relations obtained from the characteristic invariants `S p +- c q`
//! interpolated along `dx/dt = +-c` (source terms neglected in the
//! derivation). The pipe is logically split at the fault: the upstream
//! face carries mass flow `q_up`, the downstream face `q_dn`, and both
//! share the fault pressure `p_fault`.

use crate::gasnet::{GasProperties, Pipe};
use serde::{Deserialize, Serialize};

/// Discharge coefficient of the leakage hole, both flow regimes.
pub const DISCHARGE_COEFF: f64 = 0.61;

/// Smallest hole-to-pipe diameter ratio covered by the big-hole model.
pub const MIN_HOLE_RATIO: f64 = 0.2;

/// Smallest adiabatic coefficient accepted before the switching-pressure
/// exponent blows up.
pub const MIN_ADIABATIC: f64 = 1.05;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum FaultError {
    #[error("fault cell {cell} too close to a pipe end (need 2 regular cells on each side of a {n_cells}-cell pipe)")]
    StencilTooNarrow { cell: usize, n_cells: usize },
    #[error("fault position {position} m does not sit on the {dx} m grid of pipe {pipe}")]
    OffGridPosition { pipe: usize, position: f64, dx: f64 },
    #[error("pressure {pressure} Pa below atmospheric")]
    BelowAtmospheric { pressure: f64 },
    #[error("adiabatic coefficient {k} out of range (need k >= {MIN_ADIABATIC})")]
    ParameterOutOfRange { k: f64 },
    #[error("hole ratio d/D = {ratio} below the big-hole regime ({MIN_HOLE_RATIO}); small holes are not modeled")]
    SmallHole { ratio: f64 },
    #[error("leak fault needs a hole diameter")]
    MissingHoleDiameter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FaultKind {
    Rupture,
    Leak,
}

/// Location, timing and geometry of one pipe fault.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub kind: FaultKind,
    pub pipe: usize,
    /// distance of the fault from the pipe inlet (m)
    pub position: f64,
    /// onset time (s)
    pub t_start: f64,
    /// onset shaping window (s): the rupture pressure ramps to atmospheric
    /// and the leak hole opens linearly over this span
    pub ramp: f64,
    /// hole diameter d (m), leak only
    pub hole_diameter: Option<f64>,
}

impl FaultSpec {
    /// Grid index of the faulted cell.
    pub fn cell_index(&self, dx: f64) -> Result<usize, FaultError> {
        let ratio = self.position / dx;
        let idx = ratio.round();
        if (ratio - idx).abs() > 1e-9 * ratio.max(1.0) {
            return Err(FaultError::OffGridPosition {
                pipe: self.pipe,
                position: self.position,
                dx,
            });
        }
        Ok(idx as usize)
    }

    /// Hole area S_h = pi d^2 / 4 (m^2), leak only.
    pub fn hole_area(&self) -> Result<f64, FaultError> {
        let d = self.hole_diameter.ok_or(FaultError::MissingHoleDiameter)?;
        Ok(std::f64::consts::PI * d * d / 4.0)
    }

    pub fn validate(&self, pipe: &Pipe, dx: f64) -> Result<(), FaultError> {
        let cell = self.cell_index(dx)?;
        let n_cells = (pipe.length / dx).round() as usize;
        if cell < 2 || cell + 2 > n_cells {
            return Err(FaultError::StencilTooNarrow { cell, n_cells });
        }
        if self.kind == FaultKind::Leak {
            let d = self.hole_diameter.ok_or(FaultError::MissingHoleDiameter)?;
            let ratio = d / pipe.diameter;
            if ratio < MIN_HOLE_RATIO {
                return Err(FaultError::SmallHole { ratio });
            }
        }
        Ok(())
    }
}

/// Runtime bookkeeping of an installed fault closure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaultState {
    pub active: bool,
    /// fault-cell pressure captured at activation; start of the rupture ramp
    pub pre_fault_pressure: f64,
}

/// The two-cell stencil on each side of the fault.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaultWindow {
    pub p_m2: f64,
    pub p_m1: f64,
    pub p_p1: f64,
    pub p_p2: f64,
    pub q_m2: f64,
    pub q_m1: f64,
    pub q_p1: f64,
    pub q_p2: f64,
}

impl FaultWindow {
    pub fn uniform(p: f64, q: f64) -> Self {
        Self {
            p_m2: p,
            p_m1: p,
            p_p1: p,
            p_p2: p,
            q_m2: q,
            q_m1: q,
            q_p1: q,
            q_p2: q,
        }
    }
}

/// Upstream characteristic estimate of the flow arriving at the fault face:
/// `q_up = 2 (S/c p_{j-1} + q_{j-1}) - (S/c p_{j-2} + q_{j-2}) - S/c p_j`.
pub fn upstream_face_flow(win: &FaultWindow, p_fault: f64, pipe: &Pipe, props: &GasProperties) -> f64 {
    let sc = pipe.area() / props.sound_speed;
    2.0 * (sc * win.p_m1 + win.q_m1) - (sc * win.p_m2 + win.q_m2) - sc * p_fault
}

/// Downstream characteristic estimate of the flow leaving through the
/// downstream face:
/// `q_dn = (S/c p_{j+2} - q_{j+2}) - 2 (S/c p_{j+1} - q_{j+1}) + S/c p_j`.
pub fn downstream_face_flow(win: &FaultWindow, p_fault: f64, pipe: &Pipe, props: &GasProperties) -> f64 {
    let sc = pipe.area() / props.sound_speed;
    (sc * win.p_p2 - win.q_p2) - 2.0 * (sc * win.p_p1 - win.q_p1) + sc * p_fault
}

/// Residuals of the rupture closure for the unknowns
/// `(q_up, q_dn, p_fault)`; the fault pressure is pinned to `p_target`
/// (the onset ramp toward atmospheric).
pub fn rupture_boundary_residuals(
    win: &FaultWindow,
    q_up: f64,
    q_dn: f64,
    p_fault: f64,
    p_target: f64,
    pipe: &Pipe,
    props: &GasProperties,
) -> [f64; 3] {
    [
        q_up - upstream_face_flow(win, p_fault, pipe, props),
        q_dn - downstream_face_flow(win, p_fault, pipe, props),
        p_fault - p_target,
    ]
}

/// Residuals of the leakage closure for the unknowns
/// `(q_up, q_dn, p_fault, q_leak)`: the downstream characteristic fixes
/// `q_dn`, the upstream characteristic fixes `p_fault` given
/// `q_up = q_leak + q_dn`, and the hole law fixes `q_leak`.
#[allow(clippy::too_many_arguments)]
pub fn leak_boundary_residuals(
    win: &FaultWindow,
    q_up: f64,
    q_dn: f64,
    p_fault: f64,
    q_leak: f64,
    hole_area: f64,
    pipe: &Pipe,
    props: &GasProperties,
) -> [f64; 4] {
    let cs = props.sound_speed / pipe.area();
    // Upstream invariant interpolation solved for the fault pressure:
    // p_j = -c/S q_up - (p_{j-2} + c/S q_{j-2}) + 2 (p_{j-1} + c/S q_{j-1})
    let p_from_upstream =
        -cs * q_up - (win.p_m2 + cs * win.q_m2) + 2.0 * (win.p_m1 + cs * win.q_m1);
    [
        q_dn - downstream_face_flow(win, p_fault, pipe, props),
        p_fault - p_from_upstream,
        q_up - q_leak - q_dn,
        q_leak - leak_mass_flow_clamped(p_fault, hole_area, props),
    ]
}

/// Pressure separating subsonic from choked hole outflow:
/// `p_sw = (2/(k+1))^(-k/(k-1)) p_a`.
pub fn switching_pressure(props: &GasProperties) -> Result<f64, FaultError> {
    let k = props.adiabatic_index;
    if k < MIN_ADIABATIC {
        return Err(FaultError::ParameterOutOfRange { k });
    }
    Ok((2.0 / (k + 1.0)).powf(-k / (k - 1.0)) * props.atmospheric_pressure)
}

/// Subsonic hole outflow (valid for `p_a <= p <= p_sw`).
pub fn leak_flow_subsonic(p: f64, hole_area: f64, props: &GasProperties) -> f64 {
    let k = props.adiabatic_index;
    let ratio = props.atmospheric_pressure / p;
    let inner = 2.0 * props.molar_mass
        / (props.compressibility * props.gas_constant * props.temperature)
        * (k / (k - 1.0))
        * (ratio.powf(2.0 / k) - ratio.powf((k + 1.0) / k));
    DISCHARGE_COEFF * hole_area * p * inner.max(0.0).sqrt()
}

/// Choked hole outflow (valid for `p > p_sw`).
pub fn leak_flow_choked(p: f64, hole_area: f64, props: &GasProperties) -> f64 {
    let k = props.adiabatic_index;
    let inner = props.molar_mass
        / (props.compressibility * props.gas_constant * props.temperature)
        * k
        * (2.0 / (k + 1.0)).powf((k + 1.0) / (k - 1.0));
    DISCHARGE_COEFF * hole_area * p * inner.sqrt()
}

/// Leakage mass flow through a hole of the given area at fault pressure
/// `p`, switching between the subsonic and choked formulas at `p_sw`.
pub fn leak_mass_flow(p: f64, hole_area: f64, props: &GasProperties) -> Result<f64, FaultError> {
    if p < props.atmospheric_pressure {
        return Err(FaultError::BelowAtmospheric { pressure: p });
    }
    let p_sw = switching_pressure(props)?;
    if p <= p_sw {
        Ok(leak_flow_subsonic(p, hole_area, props))
    } else {
        Ok(leak_flow_choked(p, hole_area, props))
    }
}

/// Total version of [`leak_mass_flow`] used inside residual evaluations:
/// zero below atmospheric so Newton iterates stay finite.
pub fn leak_mass_flow_clamped(p: f64, hole_area: f64, props: &GasProperties) -> f64 {
    if p <= props.atmospheric_pressure {
        return 0.0;
    }
    let p_sw = switching_pressure(props).unwrap_or(f64::INFINITY);
    if p <= p_sw {
        leak_flow_subsonic(p, hole_area, props)
    } else {
        leak_flow_choked(p, hole_area, props)
    }
}

/// Rupture-cell pressure target: linear ramp from the pre-fault level to
/// atmospheric over `[t_start, t_start + ramp]`.
pub fn rupture_pressure_target(
    pre_fault: f64,
    t: f64,
    t_start: f64,
    ramp: f64,
    p_atm: f64,
) -> f64 {
    if t <= t_start {
        return pre_fault;
    }
    if ramp <= 0.0 || t >= t_start + ramp {
        return p_atm;
    }
    let theta = (t - t_start) / ramp;
    pre_fault + theta * (p_atm - pre_fault)
}

/// Leak-hole area opening: linear ramp from zero to the full area over
/// `[t_start, t_start + ramp]`.
pub fn effective_hole_area(full_area: f64, t: f64, t_start: f64, ramp: f64) -> f64 {
    if t <= t_start {
        return 0.0;
    }
    if ramp <= 0.0 || t >= t_start + ramp {
        return full_area;
    }
    full_area * (t - t_start) / ramp
}
