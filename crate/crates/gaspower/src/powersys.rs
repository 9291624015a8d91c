//! Electric power system dynamics: second-order synchronous machines on a
//! constant-admittance network, Rowen-type gas turbines with droop
//! governor and exhaust temperature limit, power-to-gas units, and bus
//! fault support.
//!
//! All electrical quantities are per-unit on a common system base; the
//! machine rotor angle is measured from the network x-axis to the q-axis,
//! so the internal EMF phasor is `(E_q' + j E_d') e^(j delta)` and a
//! positive speed deviation advances the angle.

use crate::gasnet::GasProperties;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum PowerError {
    #[error("gas turbine {unit} evaluated while tripped")]
    TurbineTripped { unit: usize },
    #[error("non-positive pressure {pressure} at p2g unit {unit}")]
    NonPositivePressure { unit: usize, pressure: f64 },
    #[error("bus {bus} out of range (network has {n_bus} buses)")]
    BusOutOfRange { bus: usize, n_bus: usize },
    #[error("gas turbine {unit} dispatch {dispatch} exceeds the exhaust temperature envelope")]
    DispatchAboveTemperatureLimit { unit: usize, dispatch: f64 },
}

/// Second-order synchronous machine constants. Rotor speed and angle are
/// integrator states; the transient voltages are set once by the
/// steady-state initializer and held constant (no exciter model).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Machine {
    pub bus: usize,
    /// inertia constant T_j (s)
    pub inertia: f64,
    /// damping coefficient D (pu)
    pub damping: f64,
    /// stator resistance (pu)
    pub r_a: f64,
    /// d-axis transient reactance (pu)
    pub xd_prime: f64,
    /// q-axis transient reactance (pu)
    pub xq_prime: f64,
    /// d-axis transient voltage (pu), set by the initializer
    #[serde(default)]
    pub e_d: f64,
    /// q-axis transient voltage (pu), set by the initializer
    #[serde(default)]
    pub e_q: f64,
    /// mechanical power for machines without a turbine model (pu); for
    /// gas-turbine-driven machines this is the dispatch target
    #[serde(default)]
    pub p_mech: f64,
}

/// Swing equation: `domega/dt = (P_m - P_e - D (omega - 1)) / T_j`,
/// `ddelta/dt = (omega - omega_COI) omega_B`.
pub fn machine_derivatives(
    m: &Machine,
    omega: f64,
    p_mech: f64,
    p_elec: f64,
    omega_coi: f64,
    omega_base: f64,
) -> (f64, f64) {
    let domega = (p_mech - p_elec - m.damping * (omega - 1.0)) / m.inertia;
    let ddelta = (omega - omega_coi) * omega_base;
    (domega, ddelta)
}

/// Inertia-weighted center-of-inertia speed.
pub fn omega_coi(machines: &[Machine], omegas: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (m, w) in machines.iter().zip(omegas) {
        num += m.inertia * w;
        den += m.inertia;
    }
    num / den
}

/// Stator residuals of the two transient-voltage equations, in the
/// rotor frame at angle `delta`:
///
/// ```text
/// E_d' = sin d (U_x + r_a I_x - X_q' I_y) - cos d (U_y + r_a I_y + X_q' I_x)
/// E_q' = cos d (U_x + r_a I_x - X_d' I_y) + sin d (U_y + r_a I_y + X_d' I_x)
/// ```
pub fn stator_residuals(
    m: &Machine,
    delta: f64,
    u_x: f64,
    u_y: f64,
    i_x: f64,
    i_y: f64,
) -> (f64, f64) {
    let (sin_d, cos_d) = delta.sin_cos();
    let aq = u_x + m.r_a * i_x - m.xq_prime * i_y;
    let bq = u_y + m.r_a * i_y + m.xq_prime * i_x;
    let ad = u_x + m.r_a * i_x - m.xd_prime * i_y;
    let bd = u_y + m.r_a * i_y + m.xd_prime * i_x;
    (
        m.e_d - (sin_d * aq - cos_d * bq),
        m.e_q - (cos_d * ad + sin_d * bd),
    )
}

/// Air-gap electrical power `P_e = U_x I_x + U_y I_y + (I_x^2 + I_y^2) r_a`.
pub fn electrical_power(u_x: f64, u_y: f64, i_x: f64, i_y: f64, r_a: f64) -> f64 {
    u_x * i_x + u_y * i_y + (i_x * i_x + i_y * i_y) * r_a
}

/// Transmission branch in series-impedance form (pu).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub resistance: f64,
    pub reactance: f64,
    /// total line charging susceptance (pu), split between the ends
    #[serde(default)]
    pub charging: f64,
}

/// Static load folded into the admittance matrix at nominal voltage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadSpec {
    pub bus: usize,
    pub p: f64,
    #[serde(default)]
    pub q: f64,
}

/// Bus admittance matrices plus the base frequency. Conductance and
/// susceptance are stored dense; co-simulation networks stay small.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsNetwork {
    pub n_bus: usize,
    pub g: Vec<f64>,
    pub b: Vec<f64>,
    pub omega_base: f64,
    /// active bus fault: (bus, saved g_kk, saved b_kk)
    fault: Option<(usize, f64, f64)>,
}

impl EpsNetwork {
    pub fn new(n_bus: usize, omega_base: f64, branches: &[Branch], loads: &[LoadSpec]) -> Self {
        let mut g = vec![0.0; n_bus * n_bus];
        let mut b = vec![0.0; n_bus * n_bus];
        for br in branches {
            let den = br.resistance * br.resistance + br.reactance * br.reactance;
            let gs = br.resistance / den;
            let bs = -br.reactance / den;
            let (i, j) = (br.from, br.to);
            g[i * n_bus + i] += gs;
            g[j * n_bus + j] += gs;
            b[i * n_bus + i] += bs + br.charging / 2.0;
            b[j * n_bus + j] += bs + br.charging / 2.0;
            g[i * n_bus + j] -= gs;
            g[j * n_bus + i] -= gs;
            b[i * n_bus + j] -= bs;
            b[j * n_bus + i] -= bs;
        }
        for load in loads {
            // constant admittance matching (P, Q) at |V| = 1
            g[load.bus * n_bus + load.bus] += load.p;
            b[load.bus * n_bus + load.bus] -= load.q;
        }
        Self {
            n_bus,
            g,
            b,
            omega_base,
            fault: None,
        }
    }

    #[inline]
    pub fn g_at(&self, i: usize, j: usize) -> f64 {
        self.g[i * self.n_bus + j]
    }

    #[inline]
    pub fn b_at(&self, i: usize, j: usize) -> f64 {
        self.b[i * self.n_bus + j]
    }

    /// Network current absorbed at bus `i` given the bus voltages:
    /// `(sum_j G_ij U_x_j - B_ij U_y_j, sum_j G_ij U_y_j + B_ij U_x_j)`.
    pub fn network_current(&self, i: usize, u_x: &[f64], u_y: &[f64]) -> (f64, f64) {
        let mut ix = 0.0;
        let mut iy = 0.0;
        for j in 0..self.n_bus {
            let g = self.g[i * self.n_bus + j];
            let b = self.b[i * self.n_bus + j];
            ix += g * u_x[j] - b * u_y[j];
            iy += g * u_y[j] + b * u_x[j];
        }
        (ix, iy)
    }

    pub fn fault_active(&self) -> bool {
        self.fault.is_some()
    }
}

/// Adds a large shunt admittance at the faulted bus (three-phase
/// short-circuit). The pre-fault diagonal entries are saved so clearing
/// restores the matrices bit-exact.
pub fn apply_bus_fault(
    net: &EpsNetwork,
    bus: usize,
    fault_conductance: f64,
    fault_susceptance: f64,
) -> Result<EpsNetwork, PowerError> {
    if bus >= net.n_bus {
        return Err(PowerError::BusOutOfRange {
            bus,
            n_bus: net.n_bus,
        });
    }
    let mut out = net.clone();
    if fault_conductance == 0.0 && fault_susceptance == 0.0 {
        return Ok(out);
    }
    let k = bus * net.n_bus + bus;
    out.fault = Some((bus, net.g[k], net.b[k]));
    out.g[k] += fault_conductance;
    out.b[k] += fault_susceptance;
    Ok(out)
}

/// Removes an active bus fault, restoring the saved diagonal entries.
pub fn clear_bus_fault(net: &EpsNetwork) -> EpsNetwork {
    let mut out = net.clone();
    if let Some((bus, g0, b0)) = out.fault.take() {
        let k = bus * out.n_bus + bus;
        out.g[k] = g0;
        out.b[k] = b0;
    }
    out
}

/// Rowen-type single-shaft gas turbine constants.
///
/// The control path is droop governor and exhaust-temperature controller
/// into a minimum gate, a valve-positioner lag, and a fuel-system lag; the
/// physical path maps fuel and speed affinely to shaft torque and exhaust
/// temperature, with the measured temperature fed back through the
/// radiation shield and thermocouple lags.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GasTurbine {
    /// machine index this turbine drives
    pub machine: usize,
    /// gas node supplying the turbine
    pub gas_node: usize,
    /// governor droop R (pu)
    pub droop: f64,
    /// valve positioner time constant (s)
    pub valve_tc: f64,
    /// fuel system time constant (s)
    pub fuel_tc: f64,
    /// no-load fuel fraction K6
    pub no_load_fuel: f64,
    /// torque gain on fuel
    pub torque_fuel_gain: f64,
    /// torque gain on speed deviation
    pub torque_speed_gain: f64,
    /// rated exhaust temperature reference (deg F)
    pub exhaust_ref: f64,
    /// exhaust temperature drop per unit fuel deficit
    pub exhaust_fuel_gain: f64,
    /// exhaust temperature rise per unit speed deficit
    pub exhaust_speed_gain: f64,
    /// radiation shield lag (s) and direct fraction
    pub shield_tc: f64,
    pub shield_direct: f64,
    /// thermocouple lag (s)
    pub thermocouple_tc: f64,
    /// temperature controller PI gains, anti-windup time and output cap
    pub temp_kp: f64,
    pub temp_ki: f64,
    pub temp_aw: f64,
    pub temp_max: f64,
    /// fuel command clamp
    pub fuel_min: f64,
    pub fuel_max: f64,
    /// fuel mass flow at rated output (kg/s)
    pub rated_fuel: f64,
    /// minimum inlet pressure before the turbine trips (Pa)
    pub p_min_inlet: f64,
    /// governor load reference (pu), set by the initializer
    pub load_ref: f64,
}

impl Default for GasTurbine {
    fn default() -> Self {
        Self {
            machine: 0,
            gas_node: 0,
            droop: 0.05,
            valve_tc: 0.4,
            fuel_tc: 1.0,
            no_load_fuel: 0.23,
            torque_fuel_gain: 1.3,
            torque_speed_gain: 0.5,
            exhaust_ref: 950.0,
            exhaust_fuel_gain: 700.0,
            exhaust_speed_gain: 550.0,
            shield_tc: 15.0,
            shield_direct: 0.8,
            thermocouple_tc: 2.5,
            temp_kp: 0.2,
            temp_ki: 0.054,
            temp_aw: 1.0,
            temp_max: 1.1,
            fuel_min: 0.0,
            fuel_max: 1.5,
            rated_fuel: 20.0,
            p_min_inlet: 2.5e6,
            load_ref: 0.5,
        }
    }
}

/// Integrator states of one turbine.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GtState {
    /// temperature controller integrator
    pub temp_int: f64,
    /// valve positioner output
    pub valve: f64,
    /// fuel system output W_f (pu)
    pub fuel: f64,
    /// radiation shield lag state
    pub shield: f64,
    /// thermocouple output (measured exhaust temperature)
    pub thermocouple: f64,
}

impl GtState {
    pub const DIM: usize = 5;
}

/// Algebraic outputs of one turbine evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtOutputs {
    /// gated fuel command V_ce
    pub fuel_command: f64,
    /// shaft torque (pu)
    pub torque: f64,
    /// mechanical power P_m = torque * omega (pu)
    pub p_mech: f64,
    /// instantaneous exhaust temperature
    pub exhaust: f64,
    /// gas demand posted at the coupling node (kg/s)
    pub fuel_demand: f64,
}

/// One evaluation of the turbine block: state derivatives plus outputs.
pub fn gas_turbine_eval(gt: &GasTurbine, st: &GtState, omega: f64) -> (GtState, GtOutputs) {
    let gov = gt.load_ref + (1.0 - omega) / gt.droop;
    let temp_err = gt.exhaust_ref - st.thermocouple;
    let u_unsat = st.temp_int + gt.temp_kp * temp_err;
    let u_temp = u_unsat.clamp(0.0, gt.temp_max);
    let fuel_command = gov.min(u_temp).clamp(gt.fuel_min, gt.fuel_max);
    let w_cmd = gt.no_load_fuel + (1.0 - gt.no_load_fuel) * fuel_command;
    let w_f = st.fuel;
    let torque = gt.torque_fuel_gain * (w_f - gt.no_load_fuel) + gt.torque_speed_gain * (1.0 - omega);
    let exhaust = gt.exhaust_ref - gt.exhaust_fuel_gain * (1.0 - w_f)
        + gt.exhaust_speed_gain * (1.0 - omega);
    let shield_out = gt.shield_direct * exhaust + (1.0 - gt.shield_direct) * st.shield;
    let deriv = GtState {
        temp_int: gt.temp_ki * temp_err + (u_temp - u_unsat) / gt.temp_aw,
        valve: (w_cmd - st.valve) / gt.valve_tc,
        fuel: (st.valve - st.fuel) / gt.fuel_tc,
        shield: (exhaust - st.shield) / gt.shield_tc,
        thermocouple: (shield_out - st.thermocouple) / gt.thermocouple_tc,
    };
    let outputs = GtOutputs {
        fuel_command,
        torque,
        p_mech: torque * omega,
        exhaust,
        fuel_demand: w_f * gt.rated_fuel,
    };
    (deriv, outputs)
}

/// Spec-facing wrapper that refuses evaluation of a tripped unit.
pub fn gas_turbine_residuals(
    gt: &GasTurbine,
    unit: usize,
    tripped: bool,
    st: &GtState,
    omega: f64,
) -> Result<(GtState, GtOutputs), PowerError> {
    if tripped {
        return Err(PowerError::TurbineTripped { unit });
    }
    Ok(gas_turbine_eval(gt, st, omega))
}

/// Equilibrium state of the turbine at speed 1 pu delivering `p_mech`.
/// Also returns the governor load reference that holds it there.
pub fn gas_turbine_equilibrium(
    gt: &GasTurbine,
    unit: usize,
    p_mech: f64,
) -> Result<(GtState, f64), PowerError> {
    let w_f = gt.no_load_fuel + p_mech / gt.torque_fuel_gain;
    let fuel_command = (w_f - gt.no_load_fuel) / (1.0 - gt.no_load_fuel);
    let exhaust = gt.exhaust_ref - gt.exhaust_fuel_gain * (1.0 - w_f);
    let temp_err = gt.exhaust_ref - exhaust;
    if temp_err < 0.0 || fuel_command >= gt.temp_max {
        return Err(PowerError::DispatchAboveTemperatureLimit {
            unit,
            dispatch: p_mech,
        });
    }
    // park the temperature controller on its anti-windup rail
    let u_unsat = gt.temp_max + gt.temp_aw * gt.temp_ki * temp_err;
    let st = GtState {
        temp_int: u_unsat - gt.temp_kp * temp_err,
        valve: w_f,
        fuel: w_f,
        shield: exhaust,
        thermocouple: exhaust,
    };
    Ok((st, fuel_command))
}

/// Power-to-gas unit: consumes electric power at its bus to inject gas at
/// its node, at constant pressure until the flow limit saturates it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct P2g {
    pub bus: usize,
    pub gas_node: usize,
    /// enthalpy coefficient of the conversion
    pub enthalpy: f64,
    /// conversion efficiency (0, 1]
    pub efficiency: f64,
    /// injection limit (kg/s); crossing it converts the node to
    /// constant-mass-flow
    pub q_max: f64,
    /// pressure set-point while unsaturated (Pa)
    pub pressure_set: f64,
}

/// Electric power drawn by a P2G unit injecting `q` at node pressure `p`:
/// `P = h c^2 q / (eta p)` (W).
pub fn p2g_power(q: f64, p: f64, unit_idx: usize, unit: &P2g, props: &GasProperties) -> Result<f64, PowerError> {
    if p <= 0.0 {
        return Err(PowerError::NonPositivePressure {
            unit: unit_idx,
            pressure: p,
        });
    }
    let c2 = props.sound_speed * props.sound_speed;
    Ok(unit.enthalpy * c2 * q / (unit.efficiency * p))
}

#[cfg(test)]
mod tests;
