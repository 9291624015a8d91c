use super::*;
use proptest::prelude::*;

fn test_machine() -> Machine {
    Machine {
        bus: 0,
        inertia: 10.0,
        damping: 2.0,
        r_a: 0.005,
        xd_prime: 0.3,
        xq_prime: 0.3,
        e_d: 0.0,
        e_q: 1.05,
        p_mech: 0.5,
    }
}

#[test]
fn machine_is_stationary_at_equilibrium() {
    let m = test_machine();
    let (domega, ddelta) = machine_derivatives(&m, 1.0, 0.5, 0.5, 1.0, 100.0 * std::f64::consts::PI);
    assert_eq!(domega, 0.0);
    assert_eq!(ddelta, 0.0);
}

#[test]
fn machine_acceleration_by_direct_substitution() {
    let m = Machine {
        damping: 0.0,
        inertia: 10.0,
        ..test_machine()
    };
    let (domega, _) = machine_derivatives(&m, 1.0, 0.6, 0.5, 1.0, 100.0 * std::f64::consts::PI);
    assert!((domega - 0.01).abs() < 1e-15);
}

#[test]
fn coi_weighted_deviations_cancel() {
    let machines: Vec<Machine> = [4.0, 7.5, 12.0]
        .iter()
        .map(|t| Machine {
            inertia: *t,
            ..test_machine()
        })
        .collect();
    let omegas = [1.002, 0.997, 1.0005];
    let coi = omega_coi(&machines, &omegas);
    let sum: f64 = machines
        .iter()
        .zip(&omegas)
        .map(|(m, w)| m.inertia * (w - coi))
        .sum();
    assert!(sum.abs() < 1e-12);
}

/// Swing trajectories against a much finer reference integration.
#[test]
fn three_machine_swing_matches_fine_reference() {
    let machines: Vec<Machine> = [(10.0, 2.0), (6.0, 1.0), (8.0, 3.0)]
        .iter()
        .map(|(t, d)| Machine {
            inertia: *t,
            damping: *d,
            ..test_machine()
        })
        .collect();
    // frozen electric power with a 0.1 pu step on machine 0
    let p_m = [0.5, 0.4, 0.6];
    let p_e = [0.4, 0.4, 0.6];
    let omega_base = 100.0 * std::f64::consts::PI;
    let rhs = |state: &[f64; 6]| -> [f64; 6] {
        let omegas = [state[0], state[2], state[4]];
        let coi = omega_coi(&machines, &omegas);
        let mut out = [0.0; 6];
        for i in 0..3 {
            let (dw, dd) =
                machine_derivatives(&machines[i], omegas[i], p_m[i], p_e[i], coi, omega_base);
            out[2 * i] = dw;
            out[2 * i + 1] = dd;
        }
        out
    };
    let rk4 = |h: f64, steps: usize| -> [f64; 6] {
        let mut y = [1.0, 0.1, 1.0, -0.2, 1.0, 0.05];
        for _ in 0..steps {
            let k1 = rhs(&y);
            let mut y2 = y;
            for i in 0..6 {
                y2[i] = y[i] + 0.5 * h * k1[i];
            }
            let k2 = rhs(&y2);
            for i in 0..6 {
                y2[i] = y[i] + 0.5 * h * k2[i];
            }
            let k3 = rhs(&y2);
            for i in 0..6 {
                y2[i] = y[i] + h * k3[i];
            }
            let k4 = rhs(&y2);
            for i in 0..6 {
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        y
    };
    let coarse = rk4(1e-3, 500);
    let fine = rk4(1e-5, 50_000);
    for i in 0..6 {
        assert!(
            (coarse[i] - fine[i]).abs() < 1e-6,
            "component {i}: {} vs {}",
            coarse[i],
            fine[i]
        );
    }
}

#[test]
fn stator_residuals_consistent_with_construction() {
    // build (E_d, E_q) from a chosen operating point; residuals must vanish
    let mut m = test_machine();
    let (delta, u_x, u_y, i_x, i_y) = (0.31_f64, 0.98, 0.12, 0.45, -0.21);
    let (sin_d, cos_d) = delta.sin_cos();
    let aq = u_x + m.r_a * i_x - m.xq_prime * i_y;
    let bq = u_y + m.r_a * i_y + m.xq_prime * i_x;
    m.e_d = sin_d * aq - cos_d * bq;
    m.e_q = cos_d * aq + sin_d * bq;
    let (r_d, r_q) = stator_residuals(&m, delta, u_x, u_y, i_x, i_y);
    assert!(r_d.abs() < 1e-14 && r_q.abs() < 1e-14);
}

#[test]
fn zero_network_with_zero_currents_balances() {
    let net = EpsNetwork::new(2, 100.0 * std::f64::consts::PI, &[], &[]);
    let (ix, iy) = net.network_current(0, &[1.0, 0.9], &[0.0, 0.1]);
    assert_eq!(ix, 0.0);
    assert_eq!(iy, 0.0);
}

#[test]
fn electrical_power_without_stator_loss() {
    let (u_x, u_y, i_x, i_y) = (0.95, 0.31, 0.6, -0.2);
    let p = electrical_power(u_x, u_y, i_x, i_y, 0.0);
    assert!((p - (u_x * i_x + u_y * i_y)).abs() < 1e-15);
}

#[test]
fn turbine_equilibrium_is_stationary_and_matches_dispatch() {
    let gt = GasTurbine::default();
    let dispatch = 0.65;
    let (st, fuel_command) = gas_turbine_equilibrium(&gt, 0, dispatch).unwrap();
    let gt = GasTurbine {
        load_ref: fuel_command,
        ..gt
    };
    let (deriv, out) = gas_turbine_eval(&gt, &st, 1.0);
    for d in [deriv.temp_int, deriv.valve, deriv.fuel, deriv.shield, deriv.thermocouple] {
        assert!(d.abs() < 1e-9, "nonzero derivative {d}");
    }
    assert!((out.p_mech - dispatch).abs() < 1e-9);
    assert!((out.fuel_demand - st.fuel * gt.rated_fuel).abs() < 1e-12);
}

#[test]
fn governor_open_loop_response_matches_two_lag_analytic() {
    let gt = GasTurbine {
        load_ref: 0.5,
        ..GasTurbine::default()
    };
    let (st0, _) = gas_turbine_equilibrium(&gt, 0, 0.5 * gt.torque_fuel_gain * (1.0 - gt.no_load_fuel) / (1.0 - gt.no_load_fuel)).unwrap();
    // equilibrium at load_ref = 0.5 exactly: fuel command = 0.5
    let w0 = gt.no_load_fuel + (1.0 - gt.no_load_fuel) * 0.5;
    let st0 = GtState {
        valve: w0,
        fuel: w0,
        ..st0
    };
    let omega = 0.99; // held constant: open governor loop
    let d_cmd = (1.0 - omega) / gt.droop; // 0.2
    let d_wf = (1.0 - gt.no_load_fuel) * d_cmd;
    let mut st = st0;
    let h = 1e-4;
    let (a, b) = (gt.valve_tc, gt.fuel_tc);
    let analytic = |t: f64| -> f64 {
        w0 + d_wf * (1.0 - (b * (-t / b).exp() - a * (-t / a).exp()) / (b - a))
    };
    let mut t = 0.0;
    let mut checked = 0;
    while t < 6.0 {
        // rk4 on the turbine states at frozen speed
        let f = |s: &GtState| gas_turbine_eval(&gt, s, omega).0;
        let k1 = f(&st);
        let add = |s: &GtState, k: &GtState, w: f64| GtState {
            temp_int: s.temp_int + w * k.temp_int,
            valve: s.valve + w * k.valve,
            fuel: s.fuel + w * k.fuel,
            shield: s.shield + w * k.shield,
            thermocouple: s.thermocouple + w * k.thermocouple,
        };
        let k2 = f(&add(&st, &k1, 0.5 * h));
        let k3 = f(&add(&st, &k2, 0.5 * h));
        let k4 = f(&add(&st, &k3, h));
        st = GtState {
            temp_int: st.temp_int + h / 6.0 * (k1.temp_int + 2.0 * k2.temp_int + 2.0 * k3.temp_int + k4.temp_int),
            valve: st.valve + h / 6.0 * (k1.valve + 2.0 * k2.valve + 2.0 * k3.valve + k4.valve),
            fuel: st.fuel + h / 6.0 * (k1.fuel + 2.0 * k2.fuel + 2.0 * k3.fuel + k4.fuel),
            shield: st.shield + h / 6.0 * (k1.shield + 2.0 * k2.shield + 2.0 * k3.shield + k4.shield),
            thermocouple: st.thermocouple
                + h / 6.0 * (k1.thermocouple + 2.0 * k2.thermocouple + 2.0 * k3.thermocouple + k4.thermocouple),
        };
        t += h;
        for probe in [1.0, 2.0, 4.0] {
            if (t - probe).abs() < h / 2.0 {
                let expect = analytic(t);
                assert!(
                    (st.fuel - expect).abs() < 1e-6,
                    "t = {t}: fuel {} vs analytic {expect}",
                    st.fuel
                );
                checked += 1;
            }
        }
    }
    assert_eq!(checked, 3);
    // after the lags settle the command increase equals d_omega / droop
    let (_, out) = gas_turbine_eval(&gt, &st, omega);
    assert!((out.fuel_command - (0.5 + d_cmd)).abs() < 1e-6);
}

#[test]
fn turbine_algebraic_maps_match_finite_differences() {
    let gt = GasTurbine::default();
    let (st, _) = gas_turbine_equilibrium(&gt, 0, 0.6).unwrap();
    let eps = 1e-7;
    let base = gas_turbine_eval(&gt, &st, 1.0).1;
    let mut st_pert = st;
    st_pert.fuel += eps;
    let d_fuel = gas_turbine_eval(&gt, &st_pert, 1.0).1;
    let dtorque_dwf = (d_fuel.torque - base.torque) / eps;
    let dexh_dwf = (d_fuel.exhaust - base.exhaust) / eps;
    assert!((dtorque_dwf - gt.torque_fuel_gain).abs() < 1e-6 * gt.torque_fuel_gain);
    assert!((dexh_dwf - gt.exhaust_fuel_gain).abs() < 1e-6 * gt.exhaust_fuel_gain);
    let speed = gas_turbine_eval(&gt, &st, 1.0 + eps).1;
    let dtorque_domega = (speed.torque - base.torque) / eps;
    assert!((dtorque_domega + gt.torque_speed_gain).abs() < 2e-5 * gt.torque_speed_gain);
}

#[test]
fn tripped_turbine_refuses_evaluation() {
    let gt = GasTurbine::default();
    let st = GtState::default();
    assert!(matches!(
        gas_turbine_residuals(&gt, 3, true, &st, 1.0),
        Err(PowerError::TurbineTripped { unit: 3 })
    ));
}

#[test]
fn p2g_power_examples() {
    let unit = P2g {
        bus: 0,
        gas_node: 0,
        enthalpy: 50e6,
        efficiency: 0.7,
        q_max: 70.0,
        pressure_set: 6e6,
    };
    let props = GasProperties::default();
    assert_eq!(p2g_power(0.0, 6e6, 0, &unit, &props).unwrap(), 0.0);
    let p1 = p2g_power(40.0, 6e6, 0, &unit, &props).unwrap();
    let p2 = p2g_power(40.0, 3e6, 0, &unit, &props).unwrap();
    assert!((p2 / p1 - 2.0).abs() < 1e-12);
    assert!(matches!(
        p2g_power(40.0, 0.0, 0, &unit, &props),
        Err(PowerError::NonPositivePressure { .. })
    ));
}

#[test]
fn bus_fault_apply_and_clear_restores_bit_exact() {
    let branches = [
        Branch { from: 0, to: 1, resistance: 0.01, reactance: 0.1, charging: 0.02 },
        Branch { from: 1, to: 2, resistance: 0.02, reactance: 0.15, charging: 0.0 },
    ];
    let loads = [LoadSpec { bus: 2, p: 0.8, q: 0.25 }];
    let net = EpsNetwork::new(3, 100.0 * std::f64::consts::PI, &branches, &loads);
    let noop = apply_bus_fault(&net, 1, 0.0, 0.0).unwrap();
    assert_eq!(noop, net);
    let faulted = apply_bus_fault(&net, 1, 1e4, -1e4).unwrap();
    assert!(faulted.fault_active());
    assert_ne!(faulted.g, net.g);
    let cleared = clear_bus_fault(&faulted);
    assert_eq!(cleared, net);
    assert!(apply_bus_fault(&net, 9, 1.0, 0.0).is_err());
}

proptest! {
    /// Shifting all rotor angles and rotating all phasors by the same
    /// angle leaves the stator residuals and electric power unchanged.
    #[test]
    fn rotor_angle_relative_invariance(
        delta in -3.0_f64..3.0,
        phi in -3.0_f64..3.0,
        u_x in 0.5_f64..1.2,
        u_y in -0.5_f64..0.5,
        i_x in -1.0_f64..1.0,
        i_y in -1.0_f64..1.0,
    ) {
        let m = test_machine();
        let (r_d0, r_q0) = stator_residuals(&m, delta, u_x, u_y, i_x, i_y);
        let (s, c) = phi.sin_cos();
        let (u_x2, u_y2) = (c * u_x - s * u_y, s * u_x + c * u_y);
        let (i_x2, i_y2) = (c * i_x - s * i_y, s * i_x + c * i_y);
        let (r_d1, r_q1) = stator_residuals(&m, delta + phi, u_x2, u_y2, i_x2, i_y2);
        prop_assert!((r_d0 - r_d1).abs() < 1e-9);
        prop_assert!((r_q0 - r_q1).abs() < 1e-9);
        let p0 = electrical_power(u_x, u_y, i_x, i_y, m.r_a);
        let p1 = electrical_power(u_x2, u_y2, i_x2, i_y2, m.r_a);
        prop_assert!((p0 - p1).abs() < 1e-9);
    }
}
