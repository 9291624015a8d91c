use super::*;
use proptest::prelude::*;
use std::f64::consts::PI;

fn paper_pipe() -> Pipe {
    Pipe {
        id: 0,
        from_node: 0,
        to_node: 1,
        length: 51_000.0,
        diameter: 0.5901,
        friction: 0.03,
    }
}

/// Unit-constant pipe for manufactured-solution tests: S = 1, c = 1.
fn unit_pipe(length: f64, friction: f64) -> (Pipe, GasProperties) {
    let pipe = Pipe {
        id: 0,
        from_node: 0,
        to_node: 1,
        length,
        diameter: (4.0 / PI).sqrt(),
        friction,
    };
    let props = GasProperties {
        sound_speed: 1.0,
        ..GasProperties::default()
    };
    (pipe, props)
}

#[test]
fn discretize_paper_grid() {
    let d = discretize_pipe(paper_pipe(), 100.0).unwrap();
    assert_eq!(d.n_cells, 510);
    assert_eq!(d.pressure.len(), 511);
    assert_eq!(d.flow.len(), 511);
}

#[test]
fn discretize_single_cell() {
    let d = discretize_pipe(paper_pipe(), 51_000.0).unwrap();
    assert_eq!(d.n_cells, 1);
}

#[test]
fn discretize_rejects_non_integral_ratio() {
    let err = discretize_pipe(paper_pipe(), 333.0).unwrap_err();
    assert!(matches!(err, GasError::NonIntegerCellCount { .. }));
}

#[test]
fn uniform_state_fluxes_are_exact() {
    let pipe = paper_pipe();
    let props = GasProperties::default();
    let n = 16;
    let p = vec![6.62e6; n];
    let q = vec![14.0; n];
    let s = pipe.area();
    let c2_s = props.sound_speed * props.sound_speed / s;
    let f_p = c2_s * 14.0;
    let f_q = s * 6.62e6;
    for flux in [
        weno3_interface_fluxes(&p, &q, Padding::Ghost, &props, &pipe),
        kt_interface_fluxes(&p, &q, Padding::Ghost, &props, &pipe),
    ] {
        for k in 0..=n {
            assert!((flux.p_flux[k] - f_p).abs() <= 1e-9 * f_p.abs());
            assert!((flux.q_flux[k] - f_q).abs() <= 1e-9 * f_q.abs());
        }
    }
}

/// Max error of the semi-discrete d/dt against the analytic flux divergence
/// for a smooth periodic profile.
fn rhs_error(n: usize, scheme: SpatialScheme) -> f64 {
    let (pipe, props) = unit_pipe(1.0, 0.0);
    let dx = 1.0 / n as f64;
    let amp = 1e-3;
    let w = 2.0 * PI;
    // grid points 0..n-1, periodic wrap (point n is point 0)
    let xs: Vec<f64> = (0..n).map(|i| i as f64 * dx).collect();
    let p: Vec<f64> = xs.iter().map(|x| 1.0 + amp * (w * x).sin()).collect();
    let q: Vec<f64> = xs.iter().map(|x| amp * (w * x).cos()).collect();
    let mut dp = vec![0.0; n];
    let mut dq = vec![0.0; n];
    let mut ws = SchemeWorkspace::default();
    segment_rhs(
        &p,
        &q,
        scheme,
        Padding::Periodic,
        &props,
        &pipe,
        dx,
        &mut ws,
        &mut dp,
        &mut dq,
    )
    .unwrap();
    let mut err = 0.0_f64;
    for (i, &x) in xs.iter().enumerate() {
        // S = c = 1: dp/dt = -q'(x), dq/dt = -p'(x)
        let dp_exact = amp * w * (w * x).sin();
        let dq_exact = -amp * w * (w * x).cos();
        err = err.max((dp[i] - dp_exact).abs());
        err = err.max((dq[i] - dq_exact).abs());
    }
    err
}

#[test]
fn weno3_is_third_order_on_smooth_data() {
    let e1 = rhs_error(32, SpatialScheme::Weno3);
    let e2 = rhs_error(64, SpatialScheme::Weno3);
    let e3 = rhs_error(128, SpatialScheme::Weno3);
    let s1 = (e1 / e2).log2();
    let s2 = (e2 / e3).log2();
    assert!(
        s1 >= 2.5 && s2 >= 2.5,
        "weno3 slopes {s1:.2}, {s2:.2} below 3rd order (errors {e1:.3e}, {e2:.3e}, {e3:.3e})"
    );
}

#[test]
fn kt_is_first_order_on_smooth_data() {
    let e1 = rhs_error(64, SpatialScheme::Kt);
    let e2 = rhs_error(128, SpatialScheme::Kt);
    let slope = (e1 / e2).log2();
    assert!(
        (0.8..=1.5).contains(&slope),
        "kt slope {slope:.2} outside [0.8, 1.5]"
    );
}

#[test]
fn weno3_step_reconstruction_is_non_oscillatory() {
    let (pipe, props) = unit_pipe(1.0, 0.0);
    let n = 40;
    let p: Vec<f64> = (0..n).map(|i| if i < n / 2 { 2.0 } else { 1.0 }).collect();
    let q = vec![0.0; n];
    let flux = weno3_interface_fluxes(&p, &q, Padding::Ghost, &props, &pipe);
    // with q = 0 the mass-flow line flux is S * (one-sided averages of p);
    // scan for values escaping the data hull
    let s = pipe.area();
    let (lo, hi) = (1.0 * s, 2.0 * s);
    let tol = 1e-9 * (hi - lo);
    for (k, &f) in flux.q_flux.iter().enumerate() {
        assert!(
            f >= lo - tol && f <= hi + tol,
            "interface {k}: reconstructed flux {f} outside [{lo}, {hi}]"
        );
    }
}

#[test]
fn kt_step_profile_is_monotone() {
    let (pipe, props) = unit_pipe(1.0, 0.0);
    let n = 40;
    let p: Vec<f64> = (0..n).map(|i| if i < n / 2 { 2.0 } else { 1.0 }).collect();
    let q = vec![0.0; n];
    let flux = kt_interface_fluxes(&p, &q, Padding::Ghost, &props, &pipe);
    for w in flux.q_flux.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "kt interface profile not monotone");
    }
}

#[test]
fn pipe_rhs_zero_flow_is_stationary() {
    let mut d = discretize_pipe(paper_pipe(), 1000.0).unwrap();
    d.pressure.fill(5.0e6);
    d.flow.fill(0.0);
    let (dp, dq) = pipe_rhs(&d, SpatialScheme::Weno3, &GasProperties::default()).unwrap();
    for v in dp.iter().chain(dq.iter()) {
        assert!(v.abs() < 1e-12, "nonzero derivative {v}");
    }
}

#[test]
fn pipe_rhs_uniform_state_reduces_to_friction() {
    // L = 51 km, D = 0.5901 m, lambda = 0.03, p = 6.62 MPa, q = 14 kg/s:
    // dq/dt = -lambda c^2 q|q| / (2 D S p) uniformly, dp/dt = 0
    let mut d = discretize_pipe(paper_pipe(), 1000.0).unwrap();
    let props = GasProperties::default();
    d.pressure.fill(6.62e6);
    d.flow.fill(14.0);
    let (dp, dq) = pipe_rhs(&d, SpatialScheme::Weno3, &props).unwrap();
    let s = PI * 0.5901_f64.powi(2) / 4.0;
    let expected = -0.03 * 340.0_f64.powi(2) * 14.0 * 14.0 / (2.0 * 0.5901 * s * 6.62e6);
    assert!((expected + 0.318).abs() < 1e-3, "sanity: |expected| ~ 0.318");
    for v in dp {
        assert!(v.abs() < 1e-9);
    }
    for v in dq {
        assert!((v - expected).abs() < 1e-12 * expected.abs().max(1.0));
    }
}

#[test]
fn pipe_rhs_rejects_non_positive_pressure() {
    let mut d = discretize_pipe(paper_pipe(), 1000.0).unwrap();
    d.pressure.fill(5.0e6);
    d.pressure[7] = 0.0;
    d.flow.fill(14.0);
    let err = pipe_rhs(&d, SpatialScheme::Weno3, &GasProperties::default()).unwrap_err();
    assert!(matches!(
        err,
        GasError::NonPositivePressure { cell: 7, .. }
    ));
}

#[test]
fn periodic_segment_conserves_both_sums() {
    let (pipe, props) = unit_pipe(1.0, 0.0);
    let n = 32;
    let dx = 1.0 / n as f64;
    let p: Vec<f64> = (0..n)
        .map(|i| 2.0 + 0.3 * (2.0 * PI * i as f64 * dx).sin())
        .collect();
    let q: Vec<f64> = (0..n)
        .map(|i| 0.5 * (4.0 * PI * i as f64 * dx).cos())
        .collect();
    for scheme in [SpatialScheme::Weno3, SpatialScheme::Kt] {
        let mut dp = vec![0.0; n];
        let mut dq = vec![0.0; n];
        let mut ws = SchemeWorkspace::default();
        segment_rhs(
            &p, &q, scheme, Padding::Periodic, &props, &pipe, dx, &mut ws, &mut dp, &mut dq,
        )
        .unwrap();
        let sum_dp: f64 = dp.iter().sum();
        let sum_dq: f64 = dq.iter().sum();
        assert!(sum_dp.abs() < 1e-10, "{scheme:?}: d/dt sum(p) = {sum_dp}");
        assert!(sum_dq.abs() < 1e-10, "{scheme:?}: d/dt sum(q) = {sum_dq}");
    }
}

#[test]
fn incidence_has_one_entry_of_each_sign_per_pipe() {
    let pipes = vec![
        Pipe { id: 0, from_node: 0, to_node: 2, length: 1e3, diameter: 0.5, friction: 0.01 },
        Pipe { id: 1, from_node: 1, to_node: 2, length: 1e3, diameter: 0.5, friction: 0.01 },
        Pipe { id: 2, from_node: 2, to_node: 3, length: 1e3, diameter: 0.5, friction: 0.01 },
    ];
    let inc = IncidenceMatrix::from_pipes(&pipes, 4).unwrap();
    for pipe in &pipes {
        let col: Vec<f64> = (0..4).map(|n| inc.entry(n, pipe.id)).collect();
        assert_eq!(col.iter().filter(|v| **v == 1.0).count(), 1);
        assert_eq!(col.iter().filter(|v| **v == -1.0).count(), 1);
    }
}

fn junction_fixture(q_out: f64) -> Vec<f64> {
    // two pipes into node 2 carrying 3 and 4 kg/s, one pipe out carrying q_out
    let pipes = vec![
        Pipe { id: 0, from_node: 0, to_node: 2, length: 1e3, diameter: 0.5, friction: 0.01 },
        Pipe { id: 1, from_node: 1, to_node: 2, length: 1e3, diameter: 0.5, friction: 0.01 },
        Pipe { id: 2, from_node: 2, to_node: 3, length: 1e3, diameter: 0.5, friction: 0.01 },
    ];
    let inc = IncidenceMatrix::from_pipes(&pipes, 4).unwrap();
    let nodes = vec![GasNode { id: 2, kind: NodeKind::Junction }];
    let mk = |q_in: f64, q_out: f64| PipeEndState {
        inlet_pressure: 5e6,
        inlet_flow: q_in,
        outlet_pressure: 5e6,
        outlet_flow: q_out,
    };
    let ends = vec![mk(3.0, 3.0), mk(4.0, 4.0), mk(q_out, q_out)];
    let mut out = Vec::new();
    node_residuals(&nodes, &inc, &ends, &[0.0, 0.0, 5e6, 0.0], &[0.0; 4], &mut out);
    out
}

#[test]
fn junction_mass_residual_balances() {
    let res = junction_fixture(7.0);
    assert_eq!(res[0], 0.0);
}

#[test]
fn junction_mass_residual_reports_defect() {
    let res = junction_fixture(6.0);
    assert_eq!(res[0], 1.0);
}

#[test]
fn steady_single_pipe_node_residuals_vanish() {
    let pipe = paper_pipe();
    let inc = IncidenceMatrix::from_pipes(&[pipe], 2).unwrap();
    let nodes = vec![
        GasNode { id: 0, kind: NodeKind::ConstantPressure { pressure: 6.62e6 } },
        GasNode { id: 1, kind: NodeKind::ConstantMassFlow { draw: 14.0 } },
    ];
    let ends = vec![PipeEndState {
        inlet_pressure: 6.62e6,
        inlet_flow: 14.0,
        outlet_pressure: 6.56e6,
        outlet_flow: 14.0,
    }];
    let mut out = Vec::new();
    node_residuals(
        &nodes,
        &inc,
        &ends,
        &[6.62e6, 6.56e6],
        &[-14.0, 14.0],
        &mut out,
    );
    for (i, r) in out.iter().enumerate() {
        assert!(r.abs() < 1e-9, "residual {i} = {r}");
    }
}

proptest! {
    #[test]
    fn weno_weights_always_normalized(
        b0 in 0.0_f64..1e12,
        b1 in 0.0_f64..1e12,
    ) {
        for (g0, g1) in [(2.0 / 3.0, 1.0 / 3.0), (1.0 / 3.0, 2.0 / 3.0)] {
            let (w0, w1) = weno_weights(b0, b1, g0, g1);
            prop_assert!((w0 + w1 - 1.0).abs() < 1e-14);
            prop_assert!(w0 >= 0.0 && w1 >= 0.0);
        }
    }

    #[test]
    fn interface_fluxes_consistent_for_any_uniform_state(
        p in 1e4_f64..1e7,
        q in -200.0_f64..200.0,
    ) {
        let pipe = paper_pipe();
        let props = GasProperties::default();
        let pv = vec![p; 9];
        let qv = vec![q; 9];
        let s = pipe.area();
        let f_p = props.sound_speed * props.sound_speed / s * q;
        let f_q = s * p;
        for flux in [
            weno3_interface_fluxes(&pv, &qv, Padding::Ghost, &props, &pipe),
            kt_interface_fluxes(&pv, &qv, Padding::Ghost, &props, &pipe),
        ] {
            for k in 0..=9 {
                prop_assert!((flux.p_flux[k] - f_p).abs() <= 1e-9 * f_p.abs().max(1.0));
                prop_assert!((flux.q_flux[k] - f_q).abs() <= 1e-9 * f_q.abs().max(1.0));
            }
        }
    }
}
