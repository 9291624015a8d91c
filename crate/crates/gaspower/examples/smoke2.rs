use gaspower::daesys::Channel;
use gaspower::sim::{simulate, SimOptions};
use gaspower::Scenario;

fn main() {
    env_logger::init();
    let sc = Scenario::from_path("/root/crate/crates/gaspower/scenarios/reduced_network.toml").unwrap();
    let t0 = std::time::Instant::now();
    let out = match simulate(&sc, &SimOptions { check_linepack: true, ..Default::default() }) {
        Ok(o) => o,
        Err(e) => { println!("SIM FAILED: {e}"); return; }
    };
    println!("wall {:.2}s acc={} rej={} lu={} restarts={}",
        t0.elapsed().as_secs_f64(), out.stats.accepted, out.stats.rejected,
        out.stats.lu_factorizations, out.stats.restarts);
    println!("linepack worst {:.3e}", out.max_linepack_defect);
    println!("hits:\n{}", out.event_log());
    let t = &out.trajectory.times;
    let get = |ch| out.trajectory.channel(ch).unwrap();
    let n3 = get(Channel::NodeP { node: 3 });
    let n0q = get(Channel::NodeQ { node: 0 });
    let om0 = get(Channel::MachOmega { unit: 0 });
    let om1 = get(Channel::MachOmega { unit: 1 });
    let pm0 = get(Channel::GtPm { unit: 0 });
    let pm1 = get(Channel::GtPm { unit: 1 });
    let v2 = get(Channel::BusVmag { bus: 2 });
    let p2g = get(Channel::P2gPower { unit: 0 });
    for probe in [0.0, 49.0, 55.0, 62.0, 70.0, 90.0, 120.0, 180.0, 250.0, 350.0, 399.0] {
        let i = t.iter().position(|x| *x >= probe).unwrap_or(t.len() - 1);
        println!("t={:7.2} n3={:7.4}MPa q_p2g={:8.2} om0={:.5} om1={:.5} pm0={:.4} pm1={:.4} V2={:.4} P2G={:7.2}MW",
            t[i], n3[i], -n0q[i], om0[i], om1[i], pm0[i], pm1[i], v2[i], p2g[i]);
    }
}
