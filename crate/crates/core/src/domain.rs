//! Leases, hosts, the power model and the capacity rules a mapping must obey.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::integrate_energy;
use crate::migration::MigrationOverhead;
use crate::scalar::Scalar;
use crate::units::{Bandwidth, Millis};

pub type LeaseId = u64;

#[derive(
    Copy, Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct HostId(pub usize);

impl fmt::Display for HostId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "host-{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("utilization {0} outside [0, 1]")]
    UtilizationOutOfRange(f64),
    #[error("power model needs 0 <= p_idle <= p_max")]
    InvalidPowerModel,
    #[error("invalid lease {id}: {reason}")]
    InvalidLease { id: LeaseId, reason: &'static str },
    #[error("invalid host: {0}")]
    InvalidHost(&'static str),
    #[error("lease {lease}: illegal transition {from:?} -> {to:?}")]
    IllegalTransition {
        lease: LeaseId,
        from: LeaseState,
        to: LeaseState,
    },
    #[error("interval ends before it starts ({start} > {end})")]
    NegativeInterval { start: Millis, end: Millis },
    #[error("clock moved backwards from {from} to {to}")]
    ClockWentBackwards { from: Millis, to: Millis },
    #[error("lease {lease} does not fit on {host}")]
    Overcommit { host: HostId, lease: LeaseId },
    #[error("unknown host {0}")]
    UnknownHost(HostId),
    #[error("lease {0} is already placed")]
    AlreadyPlaced(LeaseId),
}

/// A four-dimensional resource amount.
///
/// CPU is in percent-points (100 = one core), memory and disk in MB.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Resources {
    pub cpu: u64,
    pub memory_mb: u64,
    pub disk_mb: u64,
    pub bandwidth: Bandwidth,
}

impl Resources {
    pub fn fits_within(&self, capacity: &Resources) -> bool {
        self.cpu <= capacity.cpu
            && self.memory_mb <= capacity.memory_mb
            && self.disk_mb <= capacity.disk_mb
            && self.bandwidth <= capacity.bandwidth
    }

    pub fn checked_sub(&self, rhs: &Resources) -> Option<Resources> {
        Some(Resources {
            cpu: self.cpu.checked_sub(rhs.cpu)?,
            memory_mb: self.memory_mb.checked_sub(rhs.memory_mb)?,
            disk_mb: self.disk_mb.checked_sub(rhs.disk_mb)?,
            bandwidth: Bandwidth(self.bandwidth.0.checked_sub(rhs.bandwidth.0)?),
        })
    }

    pub fn scaled(&self, n: u64) -> Resources {
        Resources {
            cpu: self.cpu * n,
            memory_mb: self.memory_mb * n,
            disk_mb: self.disk_mb * n,
            bandwidth: Bandwidth(self.bandwidth.0 * n),
        }
    }

    /// How many copies of `item` fit inside `self`. Zero-demand dimensions do
    /// not constrain; an all-zero item fits without bound.
    pub fn copies_of(&self, item: &Resources) -> u64 {
        [
            (self.cpu, item.cpu),
            (self.memory_mb, item.memory_mb),
            (self.disk_mb, item.disk_mb),
            (self.bandwidth.0, item.bandwidth.0),
        ]
        .into_iter()
        .filter(|&(_, need)| need > 0)
        .map(|(have, need)| have / need)
        .min()
        .unwrap_or(u64::MAX)
    }
}

impl Add for Resources {
    type Output = Resources;
    fn add(self, rhs: Resources) -> Resources {
        Resources {
            cpu: self.cpu + rhs.cpu,
            memory_mb: self.memory_mb + rhs.memory_mb,
            disk_mb: self.disk_mb + rhs.disk_mb,
            bandwidth: Bandwidth(self.bandwidth.0 + rhs.bandwidth.0),
        }
    }
}

impl Sub for Resources {
    type Output = Resources;
    fn sub(self, rhs: Resources) -> Resources {
        self.checked_sub(&rhs).expect("resource underflow")
    }
}

/// Demand of a single VM.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VmSpec {
    pub cpu_percent: u64,
    pub memory_mb: u64,
    pub disk_mb: u64,
    pub bandwidth: Bandwidth,
}

impl VmSpec {
    pub fn new(cpu_percent: u64, memory_mb: u64, disk_mb: u64, bandwidth: Bandwidth) -> Self {
        VmSpec {
            cpu_percent,
            memory_mb,
            disk_mb,
            bandwidth,
        }
    }

    /// One core, 1 GB of RAM and a 4 GB disk image.
    pub fn single_core() -> Self {
        VmSpec::new(100, 1024, 4096, Bandwidth::ZERO)
    }

    pub fn demand(&self) -> Resources {
        Resources {
            cpu: self.cpu_percent,
            memory_mb: self.memory_mb,
            disk_mb: self.disk_mb,
            bandwidth: self.bandwidth,
        }
    }
}

impl Default for VmSpec {
    fn default() -> Self {
        VmSpec::single_core()
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeaseKind {
    BestEffort,
    AdvancedReservation,
    Immediate,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeaseState {
    Pending,
    Ready,
    Running,
    Suspended,
    Completed,
}

impl LeaseState {
    pub fn can_become(self, next: LeaseState) -> bool {
        use LeaseState::*;
        matches!(
            (self, next),
            (Pending, Ready)
                | (Ready, Running)
                | (Running, Suspended)
                | (Running, Completed)
                | (Suspended, Ready)
        )
    }
}

/// A request for `vm_count` identical VMs held for `duration`.
#[derive(Clone, Debug, PartialEq)]
pub struct Lease {
    pub id: LeaseId,
    pub kind: LeaseKind,
    pub vm_count: u32,
    pub vm_spec: VmSpec,
    pub arrival: Millis,
    pub requested_start: Option<Millis>,
    pub duration: Millis,
    /// Migration overheads accrued so far.
    pub overhead: MigrationOverhead,
    state: LeaseState,
}

impl Lease {
    pub fn new(
        id: LeaseId,
        kind: LeaseKind,
        vm_count: u32,
        vm_spec: VmSpec,
        arrival: Millis,
        requested_start: Option<Millis>,
        duration: Millis,
    ) -> Result<Self, DomainError> {
        let invalid = |reason| DomainError::InvalidLease { id, reason };
        if duration == Millis::ZERO {
            return Err(invalid("duration must be positive"));
        }
        if vm_count == 0 {
            return Err(invalid("needs at least one VM"));
        }
        if vm_spec.cpu_percent == 0 {
            return Err(invalid("VM must request some CPU"));
        }
        match (kind, requested_start) {
            (LeaseKind::AdvancedReservation, None) => {
                return Err(invalid("advanced reservation needs a start time"))
            }
            (LeaseKind::BestEffort | LeaseKind::Immediate, Some(_)) => {
                return Err(invalid("only advanced reservations carry a start time"))
            }
            _ => {}
        }
        Ok(Lease {
            id,
            kind,
            vm_count,
            vm_spec,
            arrival,
            requested_start,
            duration,
            overhead: MigrationOverhead::default(),
            state: LeaseState::Pending,
        })
    }

    pub fn best_effort(
        id: LeaseId,
        arrival: Millis,
        duration: Millis,
        vm_count: u32,
        vm_spec: VmSpec,
    ) -> Result<Self, DomainError> {
        Lease::new(
            id,
            LeaseKind::BestEffort,
            vm_count,
            vm_spec,
            arrival,
            None,
            duration,
        )
    }

    pub fn state(&self) -> LeaseState {
        self.state
    }

    pub fn transition(&mut self, next: LeaseState) -> Result<(), DomainError> {
        if !self.state.can_become(next) {
            return Err(DomainError::IllegalTransition {
                lease: self.id,
                from: self.state,
                to: next,
            });
        }
        self.state = next;
        Ok(())
    }

    /// Earliest instant the lease may be started.
    pub fn eligible_at(&self) -> Millis {
        match self.requested_start {
            Some(start) => start.max(self.arrival),
            None => self.arrival,
        }
    }

    pub fn total_demand(&self) -> Resources {
        self.vm_spec.demand().scaled(self.vm_count as u64)
    }
}

pub type LeaseTable = BTreeMap<LeaseId, Lease>;

/// Linear power model: idle draw plus a share of the dynamic range.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerModel<T = f64> {
    p_idle: T,
    p_max: T,
}

impl<T: Scalar> PowerModel<T> {
    pub fn new(p_idle: T, p_max: T) -> Result<Self, DomainError> {
        if p_idle < T::zero() || p_idle > p_max {
            return Err(DomainError::InvalidPowerModel);
        }
        Ok(PowerModel { p_idle, p_max })
    }

    /// HP ProLiant DL585 G5: 299 W idle, 521 W at full load.
    pub fn dl585() -> Self {
        PowerModel {
            p_idle: T::from_count(299),
            p_max: T::from_count(521),
        }
    }

    /// HP ProLiant DL785 G5: 444 W idle, 799 W at full load.
    pub fn dl785() -> Self {
        PowerModel {
            p_idle: T::from_count(444),
            p_max: T::from_count(799),
        }
    }

    pub fn p_idle(&self) -> T {
        self.p_idle
    }

    pub fn p_max(&self) -> T {
        self.p_max
    }

    /// Watts drawn at `utilization` (a fraction in `[0, 1]`).
    pub fn power(&self, utilization: T) -> Result<T, DomainError> {
        if !(utilization >= T::zero() && utilization <= T::one()) {
            return Err(DomainError::UtilizationOutOfRange(
                utilization.to_f64_lossy(),
            ));
        }
        Ok(self.p_idle + (self.p_max - self.p_idle) * utilization)
    }
}

pub fn power<T: Scalar>(model: &PowerModel<T>, utilization: T) -> Result<T, DomainError> {
    model.power(utilization)
}

/// Capacity and power profile of one physical server.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HostSpec<T = f64> {
    pub cpu_capacity: u64,
    pub memory_mb: u64,
    pub disk_mb: u64,
    pub bandwidth: Bandwidth,
    pub power: PowerModel<T>,
}

impl<T: Scalar> HostSpec<T> {
    pub fn new(
        cpu_capacity: u64,
        memory_mb: u64,
        disk_mb: u64,
        bandwidth: Bandwidth,
        power: PowerModel<T>,
    ) -> Result<Self, DomainError> {
        if cpu_capacity == 0 || memory_mb == 0 || disk_mb == 0 || bandwidth == Bandwidth::ZERO {
            return Err(DomainError::InvalidHost("all capacities must be positive"));
        }
        Ok(HostSpec {
            cpu_capacity,
            memory_mb,
            disk_mb,
            bandwidth,
            power,
        })
    }

    /// `cores` cores with 1 GB of RAM per core, a 1 TB disk and a 1000 MB/s NIC.
    pub fn with_cores(cores: u64, power: PowerModel<T>) -> Self {
        HostSpec::new(
            cores * 100,
            cores * 1024,
            1 << 20,
            Bandwidth::from_mbs(1000),
            power,
        )
        .expect("cores must be positive")
    }

    pub fn dl585_16core() -> Self {
        HostSpec::with_cores(16, PowerModel::dl585())
    }

    pub fn dl785_32core() -> Self {
        HostSpec::with_cores(32, PowerModel::dl785())
    }

    pub fn capacity(&self) -> Resources {
        Resources {
            cpu: self.cpu_capacity,
            memory_mb: self.memory_mb,
            disk_mb: self.disk_mb,
            bandwidth: self.bandwidth,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerState {
    Active,
    Sleeping,
}

/// Exact CPU utilization `used / capacity`, ordered by cross-multiplication.
#[derive(Copy, Clone, Debug)]
pub struct Utilization {
    pub used: u64,
    pub capacity: u64,
}

impl Utilization {
    pub fn is_zero(&self) -> bool {
        self.used == 0
    }

    pub fn as_scalar<T: Scalar>(&self) -> T {
        T::ratio(self.used, self.capacity)
    }

    pub fn as_f64(&self) -> f64 {
        self.used as f64 / self.capacity as f64
    }

    /// `used / capacity <= ppm / 1e6`, exactly.
    pub fn at_most_ppm(&self, ppm: u32) -> bool {
        self.used as u128 * 1_000_000 <= ppm as u128 * self.capacity as u128
    }
}

impl PartialEq for Utilization {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == std::cmp::Ordering::Equal
    }
}

impl Eq for Utilization {}

impl PartialOrd for Utilization {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Utilization {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.used as u128 * other.capacity as u128)
            .cmp(&(other.used as u128 * self.capacity as u128))
    }
}

/// VMs of one lease sitting on one host.
#[derive(Clone, Debug, PartialEq)]
pub struct VmSlots {
    pub vm_indices: Vec<u32>,
    pub vm_spec: VmSpec,
}

impl VmSlots {
    pub fn demand(&self) -> Resources {
        self.vm_spec.demand().scaled(self.vm_indices.len() as u64)
    }
}

/// One stretch of constant utilization on one host.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct EnergyInterval<T = f64> {
    pub host: HostId,
    pub start: Millis,
    pub end: Millis,
    pub cpu_used: u64,
    pub energy_kwh: T,
}

#[derive(Clone, Debug, PartialEq)]
struct EnergyMeter<T> {
    since: Millis,
    energy_kwh: T,
    woke_at: Option<Millis>,
    active: Millis,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HostState<T = f64> {
    pub id: HostId,
    pub spec: HostSpec<T>,
    placements: BTreeMap<LeaseId, VmSlots>,
    power_state: PowerState,
    used: Resources,
    meter: EnergyMeter<T>,
}

impl<T: Scalar> HostState<T> {
    pub fn new(id: HostId, spec: HostSpec<T>) -> Self {
        HostState {
            id,
            spec,
            placements: BTreeMap::new(),
            power_state: PowerState::Sleeping,
            used: Resources::default(),
            meter: EnergyMeter {
                since: Millis::ZERO,
                energy_kwh: T::zero(),
                woke_at: None,
                active: Millis::ZERO,
            },
        }
    }

    pub fn power_state(&self) -> PowerState {
        self.power_state
    }

    pub fn is_active(&self) -> bool {
        self.power_state == PowerState::Active
    }

    pub fn placements(&self) -> &BTreeMap<LeaseId, VmSlots> {
        &self.placements
    }

    pub fn is_empty(&self) -> bool {
        self.placements.is_empty()
    }

    pub fn used(&self) -> Resources {
        self.used
    }

    pub fn residual(&self) -> Resources {
        self.spec.capacity() - self.used
    }

    pub fn utilization(&self) -> Utilization {
        Utilization {
            used: self.used.cpu,
            capacity: self.spec.cpu_capacity,
        }
    }

    pub fn cpu_utilization(&self) -> T {
        self.utilization().as_scalar()
    }

    pub fn can_fit(&self, vm: &VmSpec) -> bool {
        vm.demand().fits_within(&self.residual())
    }

    /// Number of further copies of `vm` this host can take.
    pub fn room_for(&self, vm: &VmSpec) -> u64 {
        self.residual().copies_of(&vm.demand())
    }

    /// Energy integrated so far, up to the last change on this host.
    pub fn energy_kwh(&self) -> T {
        self.meter.energy_kwh
    }

    /// Total time spent awake, counting only completed wake periods.
    pub fn active_time(&self) -> Millis {
        self.meter.active
    }

    fn settle(&mut self, now: Millis, log: Option<&mut Vec<EnergyInterval<T>>>) {
        let start = self.meter.since;
        if self.is_active() && now > start {
            let energy = integrate_energy(self, (start, now)).expect("meter interval ordered");
            self.meter.energy_kwh = self.meter.energy_kwh + energy;
            if let Some(log) = log {
                log.push(EnergyInterval {
                    host: self.id,
                    start,
                    end: now,
                    cpu_used: self.used.cpu,
                    energy_kwh: energy,
                });
            }
        }
        self.meter.since = now;
    }

    fn set_power_state(&mut self, state: PowerState, now: Millis) {
        match (self.power_state, state) {
            (PowerState::Sleeping, PowerState::Active) => self.meter.woke_at = Some(now),
            (PowerState::Active, PowerState::Sleeping) => {
                let woke = self.meter.woke_at.take().unwrap_or(now);
                self.meter.active += now - woke;
            }
            _ => {}
        }
        self.power_state = state;
    }
}

pub fn cpu_utilization<T: Scalar>(host: &HostState<T>) -> T {
    host.cpu_utilization()
}

pub fn can_fit<T: Scalar>(host: &HostState<T>, vm: &VmSpec) -> bool {
    host.can_fit(vm)
}

/// Where a lease's VMs currently sit.
#[derive(Clone, Debug, PartialEq)]
pub struct Footprint {
    pub vm_spec: VmSpec,
    pub vm_count: u32,
    pub hosts: BTreeSet<HostId>,
}

/// A set of hosts sharing one simulated clock.
///
/// Every mutation first integrates the affected host's energy up to the
/// current clock, so utilization is constant between recorded changes.
/// Hosts fall asleep as soon as their last VM leaves.
#[derive(Clone, Debug)]
pub struct Cluster<T = f64> {
    hosts: Vec<HostState<T>>,
    footprints: BTreeMap<LeaseId, Footprint>,
    clock: Millis,
    intervals: Option<Vec<EnergyInterval<T>>>,
}

impl<T: Scalar> Cluster<T> {
    pub fn homogeneous(count: usize, spec: HostSpec<T>) -> Self {
        Cluster::from_specs(std::iter::repeat_n(spec, count))
    }

    pub fn from_specs(specs: impl IntoIterator<Item = HostSpec<T>>) -> Self {
        let hosts = specs
            .into_iter()
            .enumerate()
            .map(|(i, spec)| HostState::new(HostId(i), spec))
            .collect();
        Cluster {
            hosts,
            footprints: BTreeMap::new(),
            clock: Millis::ZERO,
            intervals: None,
        }
    }

    /// Keep a log of every integrated interval.
    pub fn record_intervals(&mut self) {
        self.intervals.get_or_insert_with(Vec::new);
    }

    pub fn intervals(&self) -> &[EnergyInterval<T>] {
        self.intervals.as_deref().unwrap_or(&[])
    }

    pub fn hosts(&self) -> &[HostState<T>] {
        &self.hosts
    }

    pub fn host(&self, id: HostId) -> Option<&HostState<T>> {
        self.hosts.get(id.0)
    }

    pub fn len(&self) -> usize {
        self.hosts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hosts.is_empty()
    }

    pub fn clock(&self) -> Millis {
        self.clock
    }

    pub fn advance_to(&mut self, now: Millis) -> Result<(), DomainError> {
        if now < self.clock {
            return Err(DomainError::ClockWentBackwards {
                from: self.clock,
                to: now,
            });
        }
        self.clock = now;
        Ok(())
    }

    pub fn footprint(&self, lease: LeaseId) -> Option<&Footprint> {
        self.footprints.get(&lease)
    }

    pub fn footprints(&self) -> &BTreeMap<LeaseId, Footprint> {
        &self.footprints
    }

    pub fn active_host_count(&self) -> usize {
        self.hosts.iter().filter(|h| h.is_active()).count()
    }

    /// Puts `vm_indices` of `lease` on `host`, waking it if needed.
    pub fn assign(
        &mut self,
        lease: LeaseId,
        vm_spec: VmSpec,
        host: HostId,
        vm_indices: &[u32],
    ) -> Result<(), DomainError> {
        if vm_indices.is_empty() {
            return Ok(());
        }
        let now = self.clock;
        let state = self
            .hosts
            .get_mut(host.0)
            .ok_or(DomainError::UnknownHost(host))?;
        let demand = vm_spec.demand().scaled(vm_indices.len() as u64);
        if !demand.fits_within(&state.residual()) {
            return Err(DomainError::Overcommit { host, lease });
        }
        if let Some(fp) = self.footprints.get(&lease) {
            if fp.hosts.contains(&host) {
                return Err(DomainError::AlreadyPlaced(lease));
            }
        }
        state.settle(now, self.intervals.as_mut());
        state.set_power_state(PowerState::Active, now);
        state.used = state.used + demand;
        state.placements.insert(
            lease,
            VmSlots {
                vm_indices: vm_indices.to_vec(),
                vm_spec,
            },
        );
        let fp = self.footprints.entry(lease).or_insert_with(|| Footprint {
            vm_spec,
            vm_count: 0,
            hosts: BTreeSet::new(),
        });
        fp.vm_count += vm_indices.len() as u32;
        fp.hosts.insert(host);
        Ok(())
    }

    /// Removes every VM of `lease`. Hosts left empty go to sleep.
    pub fn evict(&mut self, lease: LeaseId) -> Option<Footprint> {
        let fp = self.footprints.remove(&lease)?;
        let now = self.clock;
        for host in &fp.hosts {
            let state = &mut self.hosts[host.0];
            state.settle(now, self.intervals.as_mut());
            if let Some(slots) = state.placements.remove(&lease) {
                state.used = state.used - slots.demand();
            }
            if state.placements.is_empty() {
                state.set_power_state(PowerState::Sleeping, now);
            }
        }
        Some(fp)
    }

    /// Forces a host's power state, used to undo a tentative wake-up.
    pub(crate) fn restore_power_state(&mut self, host: HostId, state: PowerState) {
        let now = self.clock;
        let h = &mut self.hosts[host.0];
        h.settle(now, self.intervals.as_mut());
        h.set_power_state(state, now);
    }

    /// Integrates every host up to the current clock.
    pub fn settle_all(&mut self) {
        let now = self.clock;
        for h in &mut self.hosts {
            h.settle(now, self.intervals.as_mut());
        }
    }

    pub fn total_energy_kwh(&self) -> T {
        self.hosts
            .iter()
            .fold(T::zero(), |acc, h| acc + h.energy_kwh())
    }

    pub fn mapping(&self) -> Mapping {
        let mut mapping = Mapping::default();
        for h in &self.hosts {
            for (&lease, slots) in &h.placements {
                for &vm in &slots.vm_indices {
                    mapping.insert(Assignment {
                        lease,
                        vm,
                        host: h.id,
                    });
                }
            }
        }
        mapping
    }

    /// Validates the current mapping and the per-host bookkeeping behind it.
    pub fn audit<'a>(
        &self,
        leases: impl IntoIterator<Item = &'a Lease>,
    ) -> Result<(), Vec<Violation>> {
        let mut violations = match validate_mapping(&self.mapping(), &self.hosts, leases) {
            Ok(()) => Vec::new(),
            Err(v) => v,
        };
        for h in &self.hosts {
            let sum = h
                .placements
                .values()
                .fold(Resources::default(), |acc, s| acc + s.demand());
            if sum != h.used {
                violations.push(Violation {
                    constraint: Constraint::ResidualAccounting,
                    host: Some(h.id),
                    lease: None,
                    vm: None,
                });
            }
            if h.is_active() && h.placements.is_empty() {
                violations.push(Violation {
                    constraint: Constraint::IdleHostAwake,
                    host: Some(h.id),
                    lease: None,
                    vm: None,
                });
            }
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(violations)
        }
    }
}

/// `vm`-th VM of `lease` runs on `host`.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Assignment {
    pub lease: LeaseId,
    pub vm: u32,
    pub host: HostId,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Mapping {
    assignments: BTreeSet<Assignment>,
}

impl Mapping {
    pub fn insert(&mut self, a: Assignment) -> bool {
        self.assignments.insert(a)
    }

    pub fn extend(&mut self, other: Mapping) {
        self.assignments.extend(other.assignments);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Assignment> {
        self.assignments.iter()
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn active_hosts(&self) -> BTreeSet<HostId> {
        self.assignments.iter().map(|a| a.host).collect()
    }

    pub fn leases(&self) -> BTreeSet<LeaseId> {
        self.assignments.iter().map(|a| a.lease).collect()
    }

    /// VM count per host for one lease.
    pub fn hosts_of(&self, lease: LeaseId) -> BTreeMap<HostId, u32> {
        let mut out = BTreeMap::new();
        for a in self.assignments.iter().filter(|a| a.lease == lease) {
            *out.entry(a.host).or_insert(0) += 1;
        }
        out
    }
}

impl FromIterator<Assignment> for Mapping {
    fn from_iter<I: IntoIterator<Item = Assignment>>(iter: I) -> Self {
        Mapping {
            assignments: iter.into_iter().collect(),
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum Constraint {
    CpuCapacity,
    MemoryCapacity,
    BandwidthCapacity,
    DiskCapacity,
    /// Each VM sits on exactly one host.
    SingleAssignment,
    /// A host carrying a VM must be powered on.
    ActiveHost,
    DanglingLease,
    DanglingHost,
    VmIndexOutOfRange,
    ResidualAccounting,
    IdleHostAwake,
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Constraint::CpuCapacity => "CPU capacity exceeded",
            Constraint::MemoryCapacity => "memory capacity exceeded",
            Constraint::BandwidthCapacity => "bandwidth capacity exceeded",
            Constraint::DiskCapacity => "disk capacity exceeded",
            Constraint::SingleAssignment => "VM not assigned to exactly one host",
            Constraint::ActiveHost => "VM placed on a sleeping host",
            Constraint::DanglingLease => "unknown lease",
            Constraint::DanglingHost => "unknown host",
            Constraint::VmIndexOutOfRange => "VM index beyond lease size",
            Constraint::ResidualAccounting => "residual does not match placements",
            Constraint::IdleHostAwake => "empty host left awake",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub constraint: Constraint,
    pub host: Option<HostId>,
    pub lease: Option<LeaseId>,
    pub vm: Option<u32>,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.constraint)?;
        if let Some(h) = self.host {
            write!(f, " on {h}")?;
        }
        if let Some(l) = self.lease {
            write!(f, " (lease {l}")?;
            if let Some(vm) = self.vm {
                write!(f, ", vm {vm}")?;
            }
            write!(f, ")")?;
        }
        Ok(())
    }
}

/// Audits `mapping` against host capacities and lease sizes.
///
/// Only leases that appear in the mapping are checked for completeness;
/// leases waiting in a queue are not expected to be placed.
pub fn validate_mapping<'a, T: Scalar>(
    mapping: &Mapping,
    hosts: &[HostState<T>],
    leases: impl IntoIterator<Item = &'a Lease>,
) -> Result<(), Vec<Violation>> {
    let leases: BTreeMap<LeaseId, &Lease> = leases.into_iter().map(|l| (l.id, l)).collect();
    let hosts: BTreeMap<HostId, &HostState<T>> = hosts.iter().map(|h| (h.id, h)).collect();
    let mut violations = Vec::new();
    let mut per_vm: BTreeMap<(LeaseId, u32), u32> = BTreeMap::new();
    let mut per_host: BTreeMap<HostId, Resources> = BTreeMap::new();

    let violation = |constraint, host, lease, vm| Violation {
        constraint,
        host,
        lease,
        vm,
    };

    for a in mapping.iter() {
        *per_vm.entry((a.lease, a.vm)).or_insert(0) += 1;
        let host = hosts.get(&a.host);
        let lease = leases.get(&a.lease);
        if host.is_none() {
            violations.push(violation(
                Constraint::DanglingHost,
                Some(a.host),
                Some(a.lease),
                Some(a.vm),
            ));
        }
        let Some(lease) = lease else {
            violations.push(violation(
                Constraint::DanglingLease,
                Some(a.host),
                Some(a.lease),
                Some(a.vm),
            ));
            continue;
        };
        if a.vm >= lease.vm_count {
            violations.push(violation(
                Constraint::VmIndexOutOfRange,
                Some(a.host),
                Some(a.lease),
                Some(a.vm),
            ));
        }
        if let Some(host) = host {
            if !host.is_active() {
                violations.push(violation(
                    Constraint::ActiveHost,
                    Some(a.host),
                    Some(a.lease),
                    Some(a.vm),
                ));
            }
            let sum = per_host.entry(host.id).or_default();
            *sum = *sum + lease.vm_spec.demand();
        }
    }

    for (&(lease, vm), &count) in &per_vm {
        if count != 1 {
            violations.push(violation(
                Constraint::SingleAssignment,
                None,
                Some(lease),
                Some(vm),
            ));
        }
    }
    for lease in mapping.leases() {
        if let Some(l) = leases.get(&lease) {
            for vm in 0..l.vm_count {
                if !per_vm.contains_key(&(lease, vm)) {
                    violations.push(violation(
                        Constraint::SingleAssignment,
                        None,
                        Some(lease),
                        Some(vm),
                    ));
                }
            }
        }
    }

    for (id, sum) in &per_host {
        let cap = hosts[id].spec.capacity();
        let checks = [
            (sum.cpu > cap.cpu, Constraint::CpuCapacity),
            (sum.memory_mb > cap.memory_mb, Constraint::MemoryCapacity),
            (sum.bandwidth > cap.bandwidth, Constraint::BandwidthCapacity),
            (sum.disk_mb > cap.disk_mb, Constraint::DiskCapacity),
        ];
        for (broken, constraint) in checks {
            if broken {
                violations.push(violation(constraint, Some(*id), None, None));
            }
        }
    }

    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}
