//! Transient co-simulation of natural-gas pipeline networks coupled to
//! electric power systems.
//!
//! The crate models isothermal gas pipe dynamics with a WENO-3 (or
//! Kurganov-Tadmor) finite-volume semi-discretization, injects rupture and
//! big-hole leakage faults through characteristic-based boundary closures,
//! couples the network to second-order synchronous machines, Rowen-type gas
//! turbines and power-to-gas units, and integrates the resulting stiff
//! differential-algebraic system with a stiffly accurate six-stage
//! Rosenbrock method (Rodas4). Critical events such as turbine trips and
//! source saturation are located to dense-output accuracy and applied as
//! discrete actions, after which integration continues on the modified
//! system.
//!
//! A method-of-characteristics reference solver ([`moc`]) is bundled for
//! accuracy benchmarks, and [`sim`] exposes the run orchestration used by
//! the `gaspower` command line tool (`simulate`, `compare`, `sweep`,
//! `steady`).

pub mod daesys;
pub mod events;
pub mod faults;
pub mod gasnet;
pub mod moc;
pub mod powersys;
pub mod rosenbrock;
pub mod scenario;
pub mod sim;
pub mod trajectory;

mod par;

pub use scenario::Scenario;

/// Crate-level error, a union of the module error types.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Gas(#[from] gasnet::GasError),
    #[error(transparent)]
    Fault(#[from] faults::FaultError),
    #[error(transparent)]
    Power(#[from] powersys::PowerError),
    #[error(transparent)]
    Dae(#[from] daesys::DaeError),
    #[error(transparent)]
    Solve(#[from] rosenbrock::SolveError),
    #[error(transparent)]
    Event(#[from] events::EventError),
    #[error(transparent)]
    Scenario(#[from] scenario::ScenarioError),
    #[error(transparent)]
    Moc(#[from] moc::MocError),
    #[error(transparent)]
    Series(#[from] trajectory::TrajectoryError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
