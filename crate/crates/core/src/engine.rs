//! Discrete-event replay of a lease workload.
//!
//! All events sharing a timestamp are applied together, in the order
//! completions, requeued victims, arrivals, consolidation ticks. The ready
//! queue is then scheduled once; on a tick, consolidation runs after that.
//! Utilization only changes at these instants, so each host's energy is the
//! sum of `power x length` over the stretches between them.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    Cluster, DomainError, EnergyInterval, HostSpec, HostState, Lease, LeaseId, LeaseState,
    LeaseTable,
};
use crate::migration::{
    apply_plan, build_plan_mig, build_plan_pmig, CapacityCheck, MigrationRates, Thresholds,
};
use crate::placement::{schedule_each, schedule_queue, HostOrder};
use crate::scalar::Scalar;
use crate::units::Millis;

const MS_PER_HOUR: u64 = 3_600_000;

/// Kilowatt-hours drawn by `host` over `interval` at its current load.
pub fn integrate_energy<T: Scalar>(
    host: &HostState<T>,
    interval: (Millis, Millis),
) -> Result<T, DomainError> {
    let (start, end) = interval;
    if end < start {
        return Err(DomainError::NegativeInterval { start, end });
    }
    if !host.is_active() || end == start {
        return Ok(T::zero());
    }
    let watts = host.spec.power.power(host.cpu_utilization())?;
    // W * ms -> kWh
    Ok(watts * T::from_count((end - start).0) / T::from_count(1000 * MS_PER_HOUR))
}

/// Event kinds, declared in same-instant processing order.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    LeaseEnd,
    VictimReady,
    LeaseArrival,
    LeaseStart,
    RescheduleTick,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SimEvent {
    pub time: Millis,
    pub kind: EventKind,
    pub subject: Option<LeaseId>,
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MigrationMode {
    #[default]
    None,
    Mig,
    Pmig,
}

impl FromStr for MigrationMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(MigrationMode::None),
            "mig" => Ok(MigrationMode::Mig),
            "pmig" => Ok(MigrationMode::Pmig),
            other => Err(format!("unknown migration mode `{other}`")),
        }
    }
}

impl fmt::Display for MigrationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MigrationMode::None => "none",
            MigrationMode::Mig => "mig",
            MigrationMode::Pmig => "pmig",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig<T = f64> {
    pub host_count: usize,
    pub host_spec: HostSpec<T>,
    pub order: HostOrder,
    pub migration: MigrationMode,
    pub thresholds: Thresholds,
    pub rates: MigrationRates,
    pub capacity_check: CapacityCheck,
    pub reschedule_interval: Millis,
    /// Keep every integrated interval in the outcome.
    pub record_intervals: bool,
}

impl<T: Scalar> SimConfig<T> {
    pub fn new(host_count: usize, host_spec: HostSpec<T>, order: HostOrder) -> Self {
        SimConfig {
            host_count,
            host_spec,
            order,
            migration: MigrationMode::None,
            thresholds: Thresholds::default(),
            rates: MigrationRates::default(),
            capacity_check: CapacityCheck::Aggregate,
            reschedule_interval: Millis::from_secs(3600),
            record_intervals: false,
        }
    }

    pub fn with_migration(mut self, mode: MigrationMode, thresholds: Thresholds) -> Self {
        self.migration = mode;
        self.thresholds = thresholds;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.host_count == 0 {
            return Err(SimError::InvalidConfig(
                "host_count must be positive".into(),
            ));
        }
        if self.migration != MigrationMode::None && self.reschedule_interval == Millis::ZERO {
            return Err(SimError::InvalidConfig(
                "reschedule interval must be positive when migration is enabled".into(),
            ));
        }
        Ok(())
    }

    /// Algorithm name in the style `PMIG-L40H80-FF-MAP-H2L`.
    pub fn label(&self) -> String {
        match self.migration {
            MigrationMode::None => self.order.label().to_string(),
            MigrationMode::Mig => format!("MIG-{}-{}", self.thresholds.tag(), self.order.label()),
            MigrationMode::Pmig => {
                format!("PMIG-{}-{}", self.thresholds.tag(), self.order.label())
            }
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("duplicate lease id {0}")]
    DuplicateLease(LeaseId),
    #[error("lease {0} must be pending when handed to the engine")]
    LeaseNotPending(LeaseId),
    #[error("lease {0} has not completed")]
    NotCompleted(LeaseId),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedLease {
    pub id: LeaseId,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub total_energy_kwh: f64,
    pub total_waiting_hours: f64,
    pub makespan_hours: f64,
    pub migrated_lease_count: usize,
    pub per_host_energy_kwh: Vec<f64>,
    pub skipped_jobs: usize,
    pub event_count: u64,
    pub completed_leases: usize,
    pub rejected_leases: Vec<RejectedLease>,
    /// Suspensions, counting repeat migrations of the same lease.
    pub migrations: u64,
    pub max_queue_depth: usize,
    pub peak_active_hosts: usize,
}

/// Per-lease timing kept by the engine.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LeaseRecord {
    pub first_start: Option<Millis>,
    pub started_at: Option<Millis>,
    pub remaining: Millis,
    /// When the waiting meter last started: arrival, or the latest suspension.
    pub eligible_since: Millis,
    pub waited: Millis,
    /// Time spent between suspension and the following restart.
    pub suspended_for: Millis,
    pub suspended_at: Option<Millis>,
    pub end_at: Option<Millis>,
    pub completed_at: Option<Millis>,
    pub migrations: u32,
}

/// `first start + duration + time held back by migrations`.
pub fn completion_time(lease: &Lease, record: &LeaseRecord) -> Result<Millis, SimError> {
    if lease.state() != LeaseState::Completed {
        return Err(SimError::NotCompleted(lease.id));
    }
    let start = record.first_start.ok_or(SimError::NotCompleted(lease.id))?;
    Ok(start + lease.duration + record.suspended_for)
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq)]
pub struct LeaseMetrics {
    pub total_waiting: Millis,
    pub makespan: Millis,
    pub migrated_leases: usize,
    pub completed: usize,
}

pub fn accumulate_metrics(
    leases: &LeaseTable,
    records: &BTreeMap<LeaseId, LeaseRecord>,
) -> LeaseMetrics {
    let mut m = LeaseMetrics::default();
    for (id, rec) in records {
        m.total_waiting += rec.waited;
        if rec.migrations > 0 {
            m.migrated_leases += 1;
        }
        if let Ok(done) = completion_time(&leases[id], rec) {
            m.makespan = m.makespan.max(done);
            m.completed += 1;
        }
    }
    m
}

/// Read-only view handed to observers after each batch of events.
pub struct Snapshot<'a, T> {
    pub now: Millis,
    pub cluster: &'a Cluster<T>,
    pub leases: &'a LeaseTable,
}

impl<'a, T> Snapshot<'a, T> {
    pub fn running_leases(&self) -> impl Iterator<Item = &'a Lease> {
        self.leases
            .values()
            .filter(|l| l.state() == LeaseState::Running)
    }
}

#[derive(Clone, Debug)]
pub struct SimOutcome<T = f64> {
    pub report: SimReport,
    pub host_energy_kwh: Vec<T>,
    pub host_active: Vec<Millis>,
    pub intervals: Vec<EnergyInterval<T>>,
    pub leases: LeaseTable,
    pub records: BTreeMap<LeaseId, LeaseRecord>,
}

impl<T: Scalar> SimOutcome<T> {
    pub fn total_energy_kwh(&self) -> T {
        self.host_energy_kwh
            .iter()
            .fold(T::zero(), |acc, &e| acc + e)
    }
}

pub struct Engine<T = f64> {
    config: SimConfig<T>,
    cluster: Cluster<T>,
    leases: LeaseTable,
    records: BTreeMap<LeaseId, LeaseRecord>,
    events: BinaryHeap<Reverse<SimEvent>>,
    queue: BTreeSet<LeaseId>,
    /// Non-tick events still in the heap.
    pending: usize,
    running: usize,
    unfinished: usize,
    rejected: Vec<RejectedLease>,
    event_count: u64,
    migrations: u64,
    max_queue_depth: usize,
    peak_active_hosts: usize,
}

impl<T: Scalar> Engine<T> {
    pub fn new(config: SimConfig<T>, leases: Vec<Lease>) -> Result<Self, SimError> {
        config.validate()?;
        let mut cluster = Cluster::homogeneous(config.host_count, config.host_spec);
        if config.record_intervals {
            cluster.record_intervals();
        }
        let empty = HostState::new(Default::default(), config.host_spec);
        let mut engine = Engine {
            config,
            cluster,
            leases: LeaseTable::new(),
            records: BTreeMap::new(),
            events: BinaryHeap::new(),
            queue: BTreeSet::new(),
            pending: 0,
            running: 0,
            unfinished: 0,
            rejected: Vec::new(),
            event_count: 0,
            migrations: 0,
            max_queue_depth: 0,
            peak_active_hosts: 0,
        };

        for lease in leases {
            if lease.state() != LeaseState::Pending {
                return Err(SimError::LeaseNotPending(lease.id));
            }
            if engine.leases.contains_key(&lease.id) {
                return Err(SimError::DuplicateLease(lease.id));
            }
            let per_host = empty.room_for(&lease.vm_spec);
            let capacity = per_host.saturating_mul(engine.config.host_count as u64);
            if capacity < lease.vm_count as u64 {
                engine.rejected.push(RejectedLease {
                    id: lease.id,
                    reason: format!(
                        "needs {} VMs but the cluster holds at most {capacity}",
                        lease.vm_count
                    ),
                });
                continue;
            }
            engine.push(SimEvent {
                time: lease.eligible_at(),
                kind: EventKind::LeaseArrival,
                subject: Some(lease.id),
            });
            engine.records.insert(
                lease.id,
                LeaseRecord {
                    remaining: lease.duration,
                    ..Default::default()
                },
            );
            engine.leases.insert(lease.id, lease);
            engine.unfinished += 1;
        }
        if engine.config.migration != MigrationMode::None && engine.unfinished > 0 {
            let first = engine.config.reschedule_interval;
            engine.push(SimEvent {
                time: first,
                kind: EventKind::RescheduleTick,
                subject: None,
            });
        }
        Ok(engine)
    }

    pub fn config(&self) -> &SimConfig<T> {
        &self.config
    }

    pub fn run(self) -> SimOutcome<T> {
        self.run_with(|_| {})
    }

    /// Runs to completion, calling `observe` after every batch of events.
    pub fn run_with<F>(mut self, mut observe: F) -> SimOutcome<T>
    where
        F: FnMut(&Snapshot<'_, T>),
    {
        while let Some(Reverse(first)) = self.events.pop() {
            let now = first.time;
            self.cluster
                .advance_to(now)
                .expect("event heap yields non-decreasing times");
            let mut tick = false;
            let mut next = Some(first);
            while let Some(event) = next {
                self.handle(event, &mut tick);
                next = match self.events.peek() {
                    Some(Reverse(e)) if e.time == now => self.events.pop().map(|r| r.0),
                    _ => None,
                };
            }
            self.max_queue_depth = self.max_queue_depth.max(self.queue.len());
            self.schedule(now);
            if tick {
                self.consolidate(now);
                if self.unfinished > 0 {
                    self.push(SimEvent {
                        time: now + self.config.reschedule_interval,
                        kind: EventKind::RescheduleTick,
                        subject: None,
                    });
                }
            }
            self.peak_active_hosts = self.peak_active_hosts.max(self.cluster.active_host_count());
            observe(&Snapshot {
                now,
                cluster: &self.cluster,
                leases: &self.leases,
            });
        }
        self.finish()
    }

    fn push(&mut self, event: SimEvent) {
        if event.kind != EventKind::RescheduleTick {
            self.pending += 1;
        }
        self.events.push(Reverse(event));
    }

    fn handle(&mut self, event: SimEvent, tick: &mut bool) {
        self.event_count += 1;
        if event.kind != EventKind::RescheduleTick {
            self.pending -= 1;
        }
        let now = event.time;
        match (event.kind, event.subject) {
            (EventKind::RescheduleTick, _) => *tick = true,
            (EventKind::LeaseArrival, Some(id)) => {
                let lease = self.leases.get_mut(&id).expect("known lease");
                lease
                    .transition(LeaseState::Ready)
                    .expect("arrival of pending lease");
                self.records.get_mut(&id).expect("record").eligible_since = now;
                self.queue.insert(id);
            }
            (EventKind::VictimReady, Some(id)) => {
                let lease = self.leases.get_mut(&id).expect("known lease");
                lease
                    .transition(LeaseState::Ready)
                    .expect("victim was suspended");
                self.queue.insert(id);
            }
            (EventKind::LeaseEnd, Some(id)) => {
                let rec = self.records.get_mut(&id).expect("record");
                let lease = self.leases.get_mut(&id).expect("known lease");
                if lease.state() != LeaseState::Running || rec.end_at != Some(now) {
                    return;
                }
                rec.end_at = None;
                rec.started_at = None;
                rec.remaining = Millis::ZERO;
                rec.completed_at = Some(now);
                lease
                    .transition(LeaseState::Completed)
                    .expect("running lease completes");
                self.cluster.evict(id);
                self.running -= 1;
                self.unfinished -= 1;
            }
            (EventKind::LeaseStart, _) => {}
            (kind, None) => unreachable!("{kind:?} event without subject"),
        }
    }

    fn schedule(&mut self, now: Millis) {
        if self.queue.is_empty() {
            return;
        }
        let order = self.config.order;
        let queued: Vec<&Lease> = self.queue.iter().map(|id| &self.leases[id]).collect();
        let placed: Vec<LeaseId> =
            match schedule_queue(queued.iter().copied(), &mut self.cluster, order) {
                Some(_) => self.queue.iter().copied().collect(),
                // nothing will free capacity later, so take whatever fits now
                None if self.running == 0 && self.pending == 0 => {
                    schedule_each(queued.iter().copied(), &mut self.cluster, order).1
                }
                None => return,
            };
        for id in placed {
            self.start(id, now);
        }
    }

    fn start(&mut self, id: LeaseId, now: Millis) {
        self.queue.remove(&id);
        let lease = self.leases.get_mut(&id).expect("known lease");
        lease
            .transition(LeaseState::Running)
            .expect("queued lease is ready");
        let rec = self.records.get_mut(&id).expect("record");
        rec.waited += now - rec.eligible_since;
        if let Some(suspended) = rec.suspended_at.take() {
            rec.suspended_for += now - suspended;
        }
        rec.first_start.get_or_insert(now);
        rec.started_at = Some(now);
        let end = now + rec.remaining;
        rec.end_at = Some(end);
        self.running += 1;
        self.event_count += 1;
        self.push(SimEvent {
            time: end,
            kind: EventKind::LeaseEnd,
            subject: Some(id),
        });
    }

    fn consolidate(&mut self, now: Millis) {
        let th = &self.config.thresholds;
        let rates = &self.config.rates;
        let plan = match self.config.migration {
            MigrationMode::None => return,
            MigrationMode::Mig => build_plan_mig(&self.cluster, th, rates),
            MigrationMode::Pmig => {
                match build_plan_pmig(&self.cluster, th, rates, self.config.capacity_check) {
                    Some(plan) => plan,
                    None => return,
                }
            }
        };
        if plan.is_empty() {
            return;
        }
        for v in &plan.victims {
            let rec = self.records.get_mut(&v.lease).expect("record");
            let started = rec.started_at.take().expect("victim is running");
            rec.remaining = rec.remaining - (now - started);
            rec.end_at = None;
            rec.eligible_since = now;
            rec.suspended_at = Some(now);
            rec.migrations += 1;
            self.running -= 1;
            self.migrations += 1;
        }
        let events = apply_plan(&plan, &mut self.cluster, &mut self.leases, now)
            .expect("plan built from the current state");
        for e in events {
            self.push(e);
        }
    }

    fn finish(mut self) -> SimOutcome<T> {
        self.cluster.settle_all();
        let metrics = accumulate_metrics(&self.leases, &self.records);
        let host_energy_kwh: Vec<T> = self
            .cluster
            .hosts()
            .iter()
            .map(|h| h.energy_kwh())
            .collect();
        let host_active = self
            .cluster
            .hosts()
            .iter()
            .map(|h| h.active_time())
            .collect();
        let total = host_energy_kwh.iter().fold(T::zero(), |acc, &e| acc + e);
        let report = SimReport {
            total_energy_kwh: total.to_f64_lossy(),
            total_waiting_hours: metrics.total_waiting.as_hours_f64(),
            makespan_hours: metrics.makespan.as_hours_f64(),
            migrated_lease_count: metrics.migrated_leases,
            per_host_energy_kwh: host_energy_kwh.iter().map(|e| e.to_f64_lossy()).collect(),
            skipped_jobs: 0,
            event_count: self.event_count,
            completed_leases: metrics.completed,
            rejected_leases: self.rejected,
            migrations: self.migrations,
            max_queue_depth: self.max_queue_depth,
            peak_active_hosts: self.peak_active_hosts,
        };
        SimOutcome {
            report,
            host_energy_kwh,
            host_active,
            intervals: self.cluster.intervals().to_vec(),
            leases: self.leases,
            records: self.records,
        }
    }
}

/// Builds an engine, runs it and returns the report.
pub fn run<T: Scalar>(config: &SimConfig<T>, leases: Vec<Lease>) -> Result<SimReport, SimError> {
    Ok(Engine::new(config.clone(), leases)?.run().report)
}
