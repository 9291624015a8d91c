use gaspower::daesys::Channel;
use gaspower::sim::{simulate, SimOptions};
use gaspower::Scenario;

fn main() {

    let mut sc = Scenario::from_path("/root/crate/crates/gaspower/scenarios/single_pipe_rupture.toml").unwrap();
    sc.t_end = 600.0;
    let t0 = std::time::Instant::now();
    let out = simulate(&sc, &SimOptions { check_linepack: true, ..Default::default() }).unwrap();
    println!("wall {:.2}s steps acc={} rej={} lu={} restarts={}",
        t0.elapsed().as_secs_f64(), out.stats.accepted, out.stats.rejected,
        out.stats.lu_factorizations, out.stats.restarts);
    println!("linepack worst defect {:.3e}", out.max_linepack_defect);
    println!("hits:\n{}", out.event_log());
    let t = &out.trajectory.times;
    let p_out = out.trajectory.channel(Channel::PipeP { pipe: 0, point: 510 }).unwrap();
    let q_in = out.trajectory.channel(Channel::PipeQ { pipe: 0, point: 0 }).unwrap();
    let q_up = out.trajectory.channel(Channel::FaultQUp { fault: 0 }).unwrap();
    let q_dn = out.trajectory.channel(Channel::FaultQDn { fault: 0 }).unwrap();
    for probe_t in [0.0, 299.0, 305.0, 311.0, 330.0, 360.0, 375.0, 380.0, 400.0, 450.0, 500.0, 600.0] {
        let i = t.iter().position(|x| *x >= probe_t).unwrap_or(t.len()-1);
        println!("t={:8.1}  p_out={:.4} MPa  q_in={:9.3}  q_up={:9.1}  q_dn={:9.1}",
            t[i], p_out[i], q_in[i], q_up[i], q_dn[i]);
    }
}
