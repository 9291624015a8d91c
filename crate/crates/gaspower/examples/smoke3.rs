use gaspower::sim::{simulate, SimOptions};
use gaspower::Scenario;

fn main() {
    let sc = Scenario::from_path(
        "/root/crate/crates/gaspower/scenarios/reduced_event_location.toml",
    )
    .unwrap();
    for (label, opts) in [
        ("adaptive", SimOptions::default()),
        ("fixed 1e-3", SimOptions { fixed_h: Some(1e-3), ..Default::default() }),
        ("fixed 4", SimOptions { fixed_h: Some(4.0), ..Default::default() }),
        ("fixed 2", SimOptions { fixed_h: Some(2.0), ..Default::default() }),
        ("fixed 1", SimOptions { fixed_h: Some(1.0), ..Default::default() }),
        ("fixed 0.5", SimOptions { fixed_h: Some(0.5), ..Default::default() }),
    ] {
        let t0 = std::time::Instant::now();
        match simulate(&sc, &opts) {
            Ok(out) => {
                let hits: Vec<String> = out
                    .hits
                    .iter()
                    .map(|h| format!("{} @ {:.6}", h.label, h.t_cr))
                    .collect();
                println!(
                    "{label:>10}: wall {:.2}s steps {}  hits: {}",
                    t0.elapsed().as_secs_f64(),
                    out.stats.accepted,
                    hits.join(", ")
                );
            }
            Err(e) => println!("{label:>10}: FAILED {e}"),
        }
    }
}
