//! Run orchestration: full co-simulations with event handling, benchmark
//! comparisons against the characteristics oracle, critical-time sweeps
//! and steady-state dumps. The command line tool is a thin shell over
//! these entry points.

use crate::daesys::{Channel, SystemModel};
use crate::events::{earliest_hit, ArmedEvent, EventHit, EventSpec};
use crate::moc::MocOracle;
use crate::rosenbrock::{
    integrate, rodas4, AcceptedStep, AfterStep, SolveError, StepStats, StepSupervisor,
};
use crate::scenario::Scenario;
use crate::trajectory::{channel_name, rmse, SampledSeries, Trajectory};

/// Extra knobs for one simulation run.
#[derive(Default, Clone)]
pub struct SimOptions {
    /// channels sampled through the dense output on this fixed grid
    pub sample_times: Vec<f64>,
    pub sample_channels: Vec<Channel>,
    /// per-pipe linepack conservation watch (worst defect reported)
    pub check_linepack: bool,
    /// stop after the armed event with this label fires
    pub stop_on_label: Option<String>,
    /// cap on the accepted step size (0 = none), overriding the scenario
    pub h_max: Option<f64>,
    /// take every step at exactly this size (brute-force reference runs)
    pub fixed_h: Option<f64>,
}

/// Everything a run produces.
pub struct RunArtifacts {
    pub trajectory: Trajectory,
    pub hits: Vec<EventHit>,
    pub stats: StepStats,
    pub samples: Option<SampledSeries>,
    pub max_linepack_defect: f64,
    pub wall_seconds: f64,
    pub final_state: Vec<f64>,
    pub final_time: f64,
}

impl RunArtifacts {
    /// Event log: one line per hit with the time offset, kind, monitored
    /// target, located critical time and action.
    pub fn event_log(&self) -> String {
        let mut out = String::new();
        for hit in &self.hits {
            let micros = (hit.t_cr * 1e6).round() as u64;
            let h = micros / 3_600_000_000;
            let m = micros / 60_000_000 % 60;
            let s = (micros % 60_000_000) as f64 / 1e6;
            out.push_str(&format!(
                "+{h:02}:{m:02}:{s:09.6} {:?} {} t_cr={:.6} action={:?}\n",
                hit.spec.kind, hit.label, hit.t_cr, hit.spec.action,
            ));
        }
        out
    }
}

/// Default trajectory channels for a scenario: pipe end (and fault-cell)
/// states, node pressures, and the electric summary channels.
pub fn default_channels(scenario: &Scenario, model: &SystemModel) -> Vec<Channel> {
    let mut out = Vec::new();
    for (pi, geom) in model.pipes.iter().enumerate() {
        let mut cells = if scenario.output.pipe_cells.is_empty() {
            let mut v = vec![0, geom.n_cells];
            for (fi, f) in scenario.faults.iter().enumerate() {
                if f.pipe == pi {
                    if let Ok(cell) = scenario.fault_cell(fi) {
                        v.push(cell);
                    }
                }
            }
            v
        } else {
            scenario
                .output
                .pipe_cells
                .iter()
                .copied()
                .filter(|c| *c <= geom.n_cells)
                .collect()
        };
        cells.sort_unstable();
        cells.dedup();
        for c in cells {
            out.push(Channel::PipeP { pipe: pi, point: c });
            out.push(Channel::PipeQ { pipe: pi, point: c });
        }
    }
    for node in 0..scenario.gas.nodes.len() {
        out.push(Channel::NodeP { node });
        out.push(Channel::NodeQ { node });
    }
    if let Some(eps) = &scenario.eps {
        for bus in 0..eps.buses {
            out.push(Channel::BusVmag { bus });
        }
        for unit in 0..eps.machines.len() {
            out.push(Channel::MachOmega { unit });
        }
    }
    for unit in 0..scenario.coupling.gts.len() {
        out.push(Channel::GtPm { unit });
        out.push(Channel::GtFuel { unit });
    }
    for unit in 0..scenario.coupling.p2gs.len() {
        out.push(Channel::P2gPower { unit });
    }
    for fault in 0..scenario.faults.len() {
        out.push(Channel::FaultQUp { fault });
        out.push(Channel::FaultQDn { fault });
    }
    out
}

/// Arms the explicit scenario events followed by the implied ones.
fn arm_events(scenario: &Scenario, model: &SystemModel) -> Result<Vec<ArmedEvent>, crate::Error> {
    let mut armed = Vec::new();
    let mut push = |spec: EventSpec, label: String| -> Result<(), crate::Error> {
        let probe = model.resolve_probe(&spec)?;
        armed.push(ArmedEvent {
            spec,
            probe,
            threshold: spec.threshold,
            fired: false,
            label,
        });
        Ok(())
    };
    for (i, ev) in scenario.events.iter().enumerate() {
        push(*ev, format!("event{i}"))?;
    }
    for (i, ev) in scenario.implied_events().iter().enumerate() {
        push(*ev, format!("auto{i}"))?;
    }
    Ok(armed)
}

struct RunSupervisor<'a> {
    scenario: &'a Scenario,
    armed: Vec<ArmedEvent>,
    channels: Vec<Channel>,
    trajectory: Trajectory,
    hits: Vec<EventHit>,
    samples: Option<SampledSeries>,
    sample_cursor: usize,
    check_linepack: bool,
    atol: f64,
    max_linepack_defect: f64,
    stop_on_label: Option<String>,
    scratch: Vec<f64>,
}

impl RunSupervisor<'_> {
    fn record_row(&mut self, model: &SystemModel, t: f64, state: &[f64]) {
        let values: Vec<f64> = self
            .channels
            .iter()
            .map(|ch| model.channel_value(*ch, t, state))
            .collect();
        self.trajectory.push_row(t, values);
    }

    fn sample_through(
        &mut self,
        model: &SystemModel,
        step: &AcceptedStep,
        t_stop: f64,
    ) -> Result<(), SolveError> {
        let Some(samples) = self.samples.as_mut() else {
            return Ok(());
        };
        while self.sample_cursor < samples.times.len() {
            let ts = samples.times[self.sample_cursor];
            if ts > t_stop + 1e-12 || ts > step.t1() + 1e-12 {
                break;
            }
            if ts < step.t0 - 1e-12 {
                self.sample_cursor += 1;
                continue;
            }
            let theta = ((ts - step.t0) / step.h).clamp(0.0, 1.0);
            for (ci, ch) in samples.channels.iter().enumerate() {
                let v = match model.channel_slot(*ch) {
                    Some(slot) => {
                        step.dense_eval_component(theta, slot)? * model.channel_scale(*ch)
                    }
                    None => {
                        step.dense_eval(theta, &mut self.scratch)?;
                        model.channel_value(*ch, ts, &self.scratch)
                    }
                };
                samples.values[ci].push(v);
            }
            self.sample_cursor += 1;
        }
        Ok(())
    }
}

impl StepSupervisor<SystemModel> for RunSupervisor<'_> {
    fn inspect(
        &mut self,
        model: &mut SystemModel,
        step: &AcceptedStep,
    ) -> Result<AfterStep, SolveError> {
        if self.scratch.len() != step.start.len() {
            self.scratch = vec![0.0; step.start.len()];
        }
        if self.check_linepack {
            for pi in 0..model.pipes.len() {
                let defect = model.linepack_defect(pi, step.end);
                self.max_linepack_defect = self.max_linepack_defect.max(defect);
                if defect > 10.0 * self.atol {
                    return Err(SolveError::ModelBreakdown {
                        t: step.t1(),
                        what: format!(
                            "linepack balance defect {defect:.3e} kg on pipe {pi} exceeds 10 atol"
                        ),
                    });
                }
            }
        }
        let hit = earliest_hit(&self.armed, step).map_err(|e| SolveError::ModelBreakdown {
            t: step.t1(),
            what: e.to_string(),
        })?;
        match hit {
            None => {
                self.sample_through(model, step, f64::INFINITY)?;
                self.record_row(model, step.t1(), step.end);
                Ok(AfterStep::Continue)
            }
            Some(hit) => {
                // sample the pre-event stretch, apply the action at the
                // located time, and resume from the modified system
                self.sample_through(model, step, hit.t_cr)?;
                step.dense_eval(hit.theta, &mut self.scratch)?;
                self.armed[hit.event_index].fired = true;
                let (new_state, rebuilt) = model
                    .apply_event(&hit, self.scratch.clone())
                    .map_err(|e| SolveError::RestartFailed {
                        t: hit.t_cr,
                        what: e.to_string(),
                    })?;
                if rebuilt {
                    for ev in self.armed.iter_mut() {
                        ev.probe =
                            model
                                .resolve_probe(&ev.spec)
                                .map_err(|e| SolveError::RestartFailed {
                                    t: hit.t_cr,
                                    what: e.to_string(),
                                })?;
                    }
                }
                log::info!(
                    "event {} ({:?}) at t_cr = {:.6} s, action {:?}",
                    hit.label,
                    hit.spec.kind,
                    hit.t_cr,
                    hit.spec.action
                );
                self.record_row(model, hit.t_cr, &new_state);
                let stop = self
                    .stop_on_label
                    .as_ref()
                    .map_or(false, |l| *l == hit.label);
                self.hits.push(hit.clone());
                if stop {
                    return Ok(AfterStep::Stop);
                }
                Ok(AfterStep::Restart {
                    t: hit.t_cr,
                    state: new_state,
                })
            }
        }
    }
}

/// Runs a scenario end to end: steady-state initialization, integration
/// with event location and discrete actions, trajectory recording.
pub fn simulate(scenario: &Scenario, opts: &SimOptions) -> Result<RunArtifacts, crate::Error> {
    let started = std::time::Instant::now();
    let mut model = SystemModel::new(scenario)?;
    let state0 = model.steady_state()?;
    let channels = default_channels(scenario, &model);
    let armed = arm_events(scenario, &model)?;
    let samples = if opts.sample_times.is_empty() {
        None
    } else {
        Some(SampledSeries {
            channels: opts.sample_channels.clone(),
            times: opts.sample_times.clone(),
            values: vec![Vec::new(); opts.sample_channels.len()],
        })
    };
    let mut control = scenario.solver.control;
    if let Some(h_max) = opts.h_max {
        control.h_max = h_max;
    }
    if opts.fixed_h.is_some() {
        control.fixed_h = opts.fixed_h;
    }
    let mut supervisor = RunSupervisor {
        scenario,
        armed,
        channels,
        trajectory: Trajectory::new(Vec::new()),
        hits: Vec::new(),
        samples,
        sample_cursor: 0,
        check_linepack: opts.check_linepack,
        atol: control.atol,
        max_linepack_defect: 0.0,
        stop_on_label: opts.stop_on_label.clone(),
        scratch: Vec::new(),
    };
    supervisor.trajectory = Trajectory::new(supervisor.channels.clone());
    supervisor.record_row(&model, 0.0, &state0);
    let outcome = integrate(
        &mut model,
        (0.0, scenario.t_end),
        state0,
        &control,
        &rodas4(),
        &mut supervisor,
    )?;
    let _ = supervisor.scenario;
    if let Some(samples) = supervisor.samples.as_mut() {
        let filled = samples.filled_len();
        samples.times.truncate(filled);
        for col in samples.values.iter_mut() {
            col.truncate(filled);
        }
    }
    Ok(RunArtifacts {
        trajectory: supervisor.trajectory,
        hits: supervisor.hits,
        stats: outcome.stats,
        samples: supervisor.samples,
        max_linepack_defect: supervisor.max_linepack_defect,
        wall_seconds: started.elapsed().as_secs_f64(),
        final_state: outcome.state,
        final_time: outcome.t_end,
    })
}

/// One row of the benchmark comparison.
pub struct CompareRow {
    pub name: String,
    /// root-mean-square difference in display units
    pub rmse: f64,
    /// rmse normalized by the benchmark channel's root-mean-square level
    /// (front misalignments make absolute flow differences scale with the
    /// signal, so cross-scheme accuracy tables live on this metric)
    pub normalized: f64,
    pub unit: &'static str,
}

pub struct CompareReport {
    pub rows: Vec<CompareRow>,
    pub solver: SampledSeries,
    pub oracle: crate::moc::MocTrajectory,
    pub solver_artifacts: RunArtifacts,
}

/// Runs the adaptive solver and the characteristics benchmark on the same
/// scenario and reports per-channel RMS differences, with the adaptive
/// trajectory resampled onto the benchmark grid through the dense output.
/// Defined for gas-only scenarios; the compared channels are the outlet
/// pressure, inlet flow, and the fault face values of the first pipe.
pub fn compare(scenario: &Scenario, oracle_dx: f64) -> Result<CompareReport, crate::Error> {
    let n_solver = (scenario.gas.pipes[0].pipe.length / scenario.pipe_dx(0)).round() as usize;
    let n_oracle = (scenario.gas.pipes[0].pipe.length / oracle_dx).round() as usize;
    let mut solver_channels = vec![
        Channel::PipeP { pipe: 0, point: n_solver },
        Channel::PipeQ { pipe: 0, point: 0 },
    ];
    let mut oracle_channels = vec![
        Channel::PipeP { pipe: 0, point: n_oracle },
        Channel::PipeQ { pipe: 0, point: 0 },
    ];
    let mut names = vec!["p_out".to_string(), "q_in".to_string()];
    let mut units = vec!["MPa", "kg/s"];
    if !scenario.faults.is_empty() {
        for (ch, name, unit) in [
            (Channel::FaultPUp { fault: 0 }, "p_leak_up", "MPa"),
            (Channel::FaultPDn { fault: 0 }, "p_leak_dn", "MPa"),
            (Channel::FaultQUp { fault: 0 }, "q_leak_up", "kg/s"),
            (Channel::FaultQDn { fault: 0 }, "q_leak_dn", "kg/s"),
        ] {
            solver_channels.push(ch);
            oracle_channels.push(ch);
            names.push(name.to_string());
            units.push(unit);
        }
    }
    let mut oracle = MocOracle::new(scenario, oracle_dx)?;
    let oracle_traj = oracle.run(scenario.t_end, &oracle_channels)?;
    let opts = SimOptions {
        sample_times: oracle_traj.times.clone(),
        sample_channels: solver_channels.clone(),
        ..SimOptions::default()
    };
    let artifacts = simulate(scenario, &opts)?;
    let solver = artifacts.samples.clone().expect("sampled run");
    let mut rows = Vec::new();
    for (i, name) in names.iter().enumerate() {
        let n = solver.values[i].len().min(oracle_traj.values[i].len());
        let r = rmse(&solver.values[i][..n], &oracle_traj.values[i][..n])?;
        let ref_rms = (oracle_traj.values[i][..n]
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            / n.max(1) as f64)
            .sqrt();
        rows.push(CompareRow {
            name: name.clone(),
            rmse: r,
            normalized: if ref_rms > 0.0 { r / ref_rms } else { r },
            unit: units[i],
        });
    }
    Ok(CompareReport {
        rows,
        solver,
        oracle: oracle_traj,
        solver_artifacts: artifacts,
    })
}

/// Which scenario knob a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    /// fault position (m from the faulted pipe's inlet), snapped to the grid
    FaultPosition,
    /// friction factor of the faulted pipe
    Friction,
    /// diameter of the faulted pipe (leak holes keep their d/D ratio)
    Diameter,
    /// hole-to-pipe diameter ratio of a leak fault
    HoleRatio,
}

impl SweepParam {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "fault-position" => Some(Self::FaultPosition),
            "friction" => Some(Self::Friction),
            "diameter" => Some(Self::Diameter),
            "hole-ratio" => Some(Self::HoleRatio),
            _ => None,
        }
    }
}

pub struct SweepPoint {
    pub requested: f64,
    /// actual applied value after grid snapping
    pub applied: f64,
    pub t_cr: Option<f64>,
    pub error: Option<String>,
}

pub struct SweepReport {
    pub param: SweepParam,
    pub points: Vec<SweepPoint>,
}

fn sweep_scenario(base: &Scenario, param: SweepParam, value: f64) -> (Scenario, f64) {
    let mut sc = base.clone();
    let fault_pipe = sc.faults.first().map(|f| f.pipe).unwrap_or(0);
    let applied = match param {
        SweepParam::FaultPosition => {
            let dx = sc.pipe_dx(fault_pipe);
            let snapped = (value / dx).round().max(2.0) * dx;
            if let Some(f) = sc.faults.first_mut() {
                f.position = snapped;
            }
            snapped
        }
        SweepParam::Friction => {
            sc.gas.pipes[fault_pipe].pipe.friction = value;
            value
        }
        SweepParam::Diameter => {
            let old = sc.gas.pipes[fault_pipe].pipe.diameter;
            sc.gas.pipes[fault_pipe].pipe.diameter = value;
            if let Some(f) = sc.faults.first_mut() {
                if let Some(d) = f.hole_diameter {
                    f.hole_diameter = Some(d / old * value);
                }
            }
            value
        }
        SweepParam::HoleRatio => {
            let dia = sc.gas.pipes[fault_pipe].pipe.diameter;
            if let Some(f) = sc.faults.first_mut() {
                f.hole_diameter = Some(value * dia);
            }
            value
        }
    };
    (sc, applied)
}

/// Runs one independent simulation per grid value, recording the critical
/// time located by the first explicit event watch; per-point failures are
/// reported in the output and do not stop the sweep.
pub fn sweep(base: &Scenario, param: SweepParam, values: &[f64]) -> SweepReport {
    let worker = |value: &f64| -> SweepPoint {
        let (sc, applied) = sweep_scenario(base, param, *value);
        if let Err(e) = sc.validate() {
            return SweepPoint {
                requested: *value,
                applied,
                t_cr: None,
                error: Some(e.to_string()),
            };
        }
        let opts = SimOptions {
            stop_on_label: Some("event0".to_string()),
            ..SimOptions::default()
        };
        match simulate(&sc, &opts) {
            Ok(artifacts) => {
                let t_cr = artifacts
                    .hits
                    .iter()
                    .find(|h| h.label == "event0")
                    .map(|h| h.t_cr);
                SweepPoint {
                    requested: *value,
                    applied,
                    t_cr,
                    error: None,
                }
            }
            Err(e) => SweepPoint {
                requested: *value,
                applied,
                t_cr: None,
                error: Some(e.to_string()),
            },
        }
    };
    let points = crate::par::map_collect(values, worker);
    SweepReport { param, points }
}

/// Steady-state dump: one (channel, value) pair per default channel.
pub fn steady(scenario: &Scenario) -> Result<Vec<(String, f64)>, crate::Error> {
    let mut model = SystemModel::new(scenario)?;
    let state = model.steady_state()?;
    let channels = default_channels(scenario, &model);
    Ok(channels
        .iter()
        .map(|ch| (channel_name(*ch), model.channel_value(*ch, 0.0, &state)))
        .collect())
}
