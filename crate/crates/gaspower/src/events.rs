//! Event functions, sign-change detection over accepted steps, and
//! critical-time location through the integrator's continuous extension.
//!
//! An event watches one scalar `phi(t) = probe(t) - threshold`. After every
//! accepted step the endpoint values are tested for a sign change; on a
//! hit, the root of `phi(theta)` is located on the step's dense output by
//! safeguarded bisection/secant iteration, and the configured discrete
//! action is applied to the system at the critical time.

use crate::rosenbrock::{AcceptedStep, SolveError};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum EventError {
    #[error("no root bracketed for event '{event}' although a sign change was detected")]
    NoRootBracketed { event: String },
    #[error("post-event consistency solve failed at t = {t}: {what}")]
    InconsistentRestart { t: f64, what: String },
    #[error("event references unknown {entity} {index}")]
    BadReference { entity: &'static str, index: usize },
}

/// What physical condition the event watches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// pressure at a regulator/load node falling to its minimum
    RegulatorMinPressure,
    LoadMinPressure,
    LoadMaxPressure,
    /// injection of a constant-pressure source reaching its maximum
    SourceMaxFlow,
    /// gas-turbine supply-node pressure falling to the trip threshold
    GtMinInletPressure,
    /// power-to-gas injection reaching its limit
    P2gSaturation,
    /// scheduled fault activation (pipe fault or bus short-circuit)
    FaultOnset,
    /// scheduled clearing of a bus fault
    FaultClear,
}

/// Discrete action taken at the critical time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventAction {
    CutLoad,
    ConvertNodeToConstFlow,
    TripGt,
    ActivateFault,
    ClearBusFault,
    ApplyBusFault,
    RecordOnly,
}

/// One event watch as written in a scenario file. Exactly one of the
/// target fields applies, depending on the kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSpec {
    pub kind: EventKind,
    /// gas node watched (pressure kinds, source flow)
    #[serde(default)]
    pub node: Option<usize>,
    /// coupling unit index (gas turbine / p2g kinds)
    #[serde(default)]
    pub unit: Option<usize>,
    /// fault index (onset/clear kinds); time events use `threshold` as the
    /// scheduled time
    #[serde(default)]
    pub fault: Option<usize>,
    pub threshold: f64,
    pub action: EventAction,
}

/// What an event function reads from the system state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Probe {
    /// a component of the stacked state vector
    State(usize),
    /// the negated component (e.g. injection = minus the node draw)
    NegState(usize),
    /// simulation time itself (scheduled events)
    Time,
}

/// An event wired to the model: probe resolved, one-shot firing.
#[derive(Debug, Clone)]
pub struct ArmedEvent {
    pub spec: EventSpec,
    pub probe: Probe,
    pub threshold: f64,
    pub fired: bool,
    pub label: String,
}

impl ArmedEvent {
    /// `phi = probe - threshold` at a step endpoint.
    pub fn phi(&self, t: f64, state: &[f64]) -> f64 {
        let v = match self.probe {
            Probe::State(i) => state[i],
            Probe::NegState(i) => -state[i],
            Probe::Time => t,
        };
        v - self.threshold
    }

    /// `phi` along the dense output of a step.
    pub fn phi_dense(&self, step: &AcceptedStep, theta: f64) -> Result<f64, SolveError> {
        Ok(match self.probe {
            Probe::State(i) => step.dense_eval_component(theta, i)? - self.threshold,
            Probe::NegState(i) => -step.dense_eval_component(theta, i)? - self.threshold,
            Probe::Time => step.t0 + theta * step.h - self.threshold,
        })
    }
}

/// Endpoint sign test: true on a strict sign change; an exact zero at the
/// right endpoint counts as a hit at `theta = 1`. A zero at the left
/// endpoint does not re-trigger (integration restarts exactly on event
/// surfaces).
pub fn detect_sign_change(phi0: f64, phi1: f64) -> bool {
    if phi1 == 0.0 {
        return phi0 != 0.0;
    }
    phi0 * phi1 < 0.0
}

/// Root of `phi(theta)` in `[0, 1]` by safeguarded bisection/secant, to an
/// interval width of 1e-10. `phi0` and `phi1` must bracket the root.
pub fn locate_theta(
    phi: impl Fn(f64) -> Result<f64, SolveError>,
    phi0: f64,
    phi1: f64,
    label: &str,
) -> Result<f64, crate::Error> {
    if phi1 == 0.0 {
        return Ok(1.0);
    }
    if phi0 == 0.0 {
        return Ok(0.0);
    }
    if phi0 * phi1 > 0.0 {
        return Err(EventError::NoRootBracketed {
            event: label.to_string(),
        }
        .into());
    }
    let (mut a, mut b) = (0.0_f64, 1.0_f64);
    let (mut fa, mut fb) = (phi0, phi1);
    for _ in 0..200 {
        if b - a <= 1e-10 {
            break;
        }
        // secant candidate, safeguarded into the middle 80% of the bracket
        let mut c = b - fb * (b - a) / (fb - fa);
        let lo = a + 0.1 * (b - a);
        let hi = b - 0.1 * (b - a);
        if !(lo..=hi).contains(&c) || !c.is_finite() {
            c = 0.5 * (a + b);
        }
        let fc = phi(c)?;
        if fc == 0.0 {
            return Ok(c);
        }
        if fa * fc < 0.0 {
            b = c;
            fb = fc;
        } else {
            a = c;
            fa = fc;
        }
    }
    Ok(0.5 * (a + b))
}

/// A located event: the critical time, its dense-output coordinate within
/// the step, and the action to take.
#[derive(Debug, Clone)]
pub struct EventHit {
    pub label: String,
    pub spec: EventSpec,
    /// index of the armed event in the engine's list
    pub event_index: usize,
    pub t_cr: f64,
    pub theta: f64,
}

/// Scans all armed events over one accepted step and returns the earliest
/// hit, if any.
pub fn earliest_hit(
    events: &[ArmedEvent],
    step: &AcceptedStep,
) -> Result<Option<EventHit>, crate::Error> {
    let mut best: Option<EventHit> = None;
    for (idx, ev) in events.iter().enumerate() {
        if ev.fired {
            continue;
        }
        let phi0 = ev.phi(step.t0, step.start);
        let phi1 = ev.phi(step.t1(), step.end);
        if !phi0.is_finite() || !phi1.is_finite() || !detect_sign_change(phi0, phi1) {
            continue;
        }
        let theta = locate_theta(|th| ev.phi_dense(step, th), phi0, phi1, &ev.label)?;
        let t_cr = step.t0 + theta * step.h;
        if best.as_ref().map_or(true, |b| theta < b.theta) {
            best = Some(EventHit {
                label: ev.label.clone(),
                spec: ev.spec,
                event_index: idx,
                t_cr,
                theta,
            });
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_change_examples() {
        assert!(detect_sign_change(-1.0, 1.0));
        assert!(!detect_sign_change(1.0, 2.0));
        // exact zero at the right endpoint is a hit at theta = 1
        assert!(detect_sign_change(1.0, 0.0));
        // a segment starting on the surface does not re-trigger
        assert!(!detect_sign_change(0.0, 0.0));
    }

    #[test]
    fn linear_crossing_located_at_midpoint() {
        let phi = |theta: f64| -> Result<f64, SolveError> { Ok(theta - 0.5) };
        let theta = locate_theta(phi, -0.5, 0.5, "linear").unwrap();
        assert!((theta - 0.5).abs() <= 1e-10);
    }

    #[test]
    fn nonlinear_root_is_bracketed_to_tolerance() {
        let phi = |theta: f64| -> Result<f64, SolveError> { Ok((theta * 1.3).cos() - 0.8) };
        let exact = 0.8_f64.acos() / 1.3;
        let theta = locate_theta(phi, phi(0.0).unwrap(), phi(1.0).unwrap(), "cos").unwrap();
        assert!((theta - exact).abs() <= 1e-9, "theta = {theta}, exact = {exact}");
    }

    #[test]
    fn unbracketed_root_is_an_error() {
        let phi = |_theta: f64| -> Result<f64, SolveError> { Ok(1.0) };
        assert!(locate_theta(phi, 1.0, 2.0, "none").is_err());
    }
}
