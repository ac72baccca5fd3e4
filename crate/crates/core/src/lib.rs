//! Trace-driven simulation of energy-aware VM lease scheduling.
//!
//! Leases ask for a number of identical VMs for a fixed duration. The
//! [`placement`] heuristics map them onto hosts, [`migration`] drains lightly
//! loaded hosts so they can sleep, and [`engine`] replays a workload while
//! integrating a linear power model over every host.
//!
//! Power and energy are generic over [`Scalar`]; the aliases below fix the
//! common choices.

pub mod domain;
pub mod engine;
pub mod migration;
pub mod oracle;
pub mod placement;
pub mod scalar;
pub mod units;
pub mod workload;

pub use domain::{
    validate_mapping, Cluster, HostId, HostSpec, HostState, Lease, LeaseId, LeaseKind, LeaseState,
    LeaseTable, Mapping, PowerModel, PowerState, Resources, Utilization, VmSpec,
};
pub use engine::{run, Engine, MigrationMode, SimConfig, SimEvent, SimOutcome, SimReport};
pub use migration::{MigrationOverhead, MigrationPlan, MigrationRates, Thresholds};
pub use placement::HostOrder;
pub use scalar::Scalar;
pub use units::{Bandwidth, Millis};

/// Exact rational used where energy sums must compare equal, not approximately.
pub type Rational = num_rational::Ratio<i128>;

pub type ExactPowerModel = PowerModel<Rational>;
pub type ExactHostSpec = HostSpec<Rational>;
pub type ExactSimConfig = SimConfig<Rational>;
pub type ExactEngine = Engine<Rational>;

pub type PowerModel32 = PowerModel<f32>;
pub type HostSpec32 = HostSpec<f32>;
pub type SimConfig32 = SimConfig<f32>;
