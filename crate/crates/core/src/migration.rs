//! Threshold-driven consolidation.
//!
//! Hosts whose CPU load is positive but at or below the low threshold are
//! drained: every lease with a VM on them is suspended as a whole and
//! requeued once its suspend and disk-transfer time has elapsed. `MIG` does
//! this unconditionally; `PMIG` first checks that the medium-loaded hosts
//! have enough spare capacity to absorb the victims.

use std::collections::BTreeSet;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    Cluster, HostId, HostState, Lease, LeaseId, LeaseState, LeaseTable, Resources, VmSpec,
};
use crate::engine::{EventKind, SimEvent};
use crate::placement::{rank_hosts, HostOrder};
use crate::scalar::Scalar;
use crate::units::{Bandwidth, Millis};

const PPM: u32 = 1_000_000;

/// Low and high CPU-utilization thresholds, stored in parts per million.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Thresholds {
    low_ppm: u32,
    high_ppm: u32,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MigrationError {
    #[error("thresholds must satisfy 0 < low < high <= 1 (got low={low}, high={high})")]
    InvalidThresholds { low: f64, high: f64 },
    #[error("lease {0} in plan is no longer running")]
    StalePlan(LeaseId),
    #[error("migration rates must be positive")]
    ZeroRate,
}

impl Thresholds {
    pub fn new(low: f64, high: f64) -> Result<Self, MigrationError> {
        let err = MigrationError::InvalidThresholds { low, high };
        if !(low > 0.0 && low < high && high <= 1.0) {
            return Err(err);
        }
        let low_ppm = (low * PPM as f64).round() as u32;
        let high_ppm = (high * PPM as f64).round() as u32;
        if low_ppm == 0 || low_ppm >= high_ppm {
            return Err(err);
        }
        Ok(Thresholds { low_ppm, high_ppm })
    }

    pub fn from_percent(low: u32, high: u32) -> Result<Self, MigrationError> {
        Thresholds::new(low as f64 / 100.0, high as f64 / 100.0)
    }

    pub fn low(&self) -> f64 {
        self.low_ppm as f64 / PPM as f64
    }

    pub fn high(&self) -> f64 {
        self.high_ppm as f64 / PPM as f64
    }

    /// Short tag such as `L40H80`.
    pub fn tag(&self) -> String {
        format!(
            "L{}H{}",
            (self.low() * 100.0).round(),
            (self.high() * 100.0).round()
        )
    }
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            low_ppm: 400_000,
            high_ppm: 800_000,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MigrationRates {
    /// Memory snapshot rate for suspend and resume.
    pub suspend_resume: Bandwidth,
    /// Network rate for disk-image transfer.
    pub network: Bandwidth,
    /// Add resume time to the requeue delay as well.
    pub count_resume_in_delay: bool,
}

impl MigrationRates {
    pub fn new(suspend_resume: Bandwidth, network: Bandwidth) -> Result<Self, MigrationError> {
        if suspend_resume == Bandwidth::ZERO || network == Bandwidth::ZERO {
            return Err(MigrationError::ZeroRate);
        }
        Ok(MigrationRates {
            suspend_resume,
            network,
            count_resume_in_delay: false,
        })
    }
}

impl Default for MigrationRates {
    /// 32 MB/s suspend/resume over a 100 Mbps network.
    fn default() -> Self {
        MigrationRates {
            suspend_resume: Bandwidth::from_mbs(32),
            network: Bandwidth::from_mbits(100.0),
            count_resume_in_delay: false,
        }
    }
}

/// Time costs of suspending, moving and resuming a lease. `t_mig` is the
/// disk-image transfer; `lease_delay` is how long the lease is held back.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MigrationOverhead {
    pub t_sus: Millis,
    pub t_res: Millis,
    pub t_mig: Millis,
    pub lease_delay: Millis,
}

impl Add for MigrationOverhead {
    type Output = MigrationOverhead;
    fn add(self, rhs: Self) -> Self {
        MigrationOverhead {
            t_sus: self.t_sus + rhs.t_sus,
            t_res: self.t_res + rhs.t_res,
            t_mig: self.t_mig + rhs.t_mig,
            lease_delay: self.lease_delay + rhs.lease_delay,
        }
    }
}

impl AddAssign for MigrationOverhead {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

/// VMs are suspended and transferred one after another.
pub fn overhead_for(vm_count: u32, vm: &VmSpec, rates: &MigrationRates) -> MigrationOverhead {
    let n = vm_count as u64;
    let t_sus = rates.suspend_resume.transfer_time(n * vm.memory_mb);
    let t_mig = rates.network.transfer_time(n * vm.disk_mb);
    let mut lease_delay = t_sus + t_mig;
    if rates.count_resume_in_delay {
        lease_delay += t_sus;
    }
    MigrationOverhead {
        t_sus,
        t_res: t_sus,
        t_mig,
        lease_delay,
    }
}

pub fn migration_overhead(lease: &Lease, rates: &MigrationRates) -> MigrationOverhead {
    overhead_for(lease.vm_count, &lease.vm_spec, rates)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct HostClasses {
    pub low: Vec<HostId>,
    pub medium: Vec<HostId>,
    pub high: Vec<HostId>,
    /// Awake but carrying nothing.
    pub idle: Vec<HostId>,
    pub sleeping: Vec<HostId>,
}

pub fn classify_host<T: Scalar>(host: &HostState<T>, th: &Thresholds) -> HostClass {
    let u = host.utilization();
    if !host.is_active() {
        HostClass::Sleeping
    } else if u.is_zero() {
        HostClass::Idle
    } else if u.at_most_ppm(th.low_ppm) {
        HostClass::Low
    } else if u.at_most_ppm(th.high_ppm) {
        HostClass::Medium
    } else {
        HostClass::High
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum HostClass {
    Low,
    Medium,
    High,
    Idle,
    Sleeping,
}

pub fn classify_hosts<T: Scalar>(cluster: &Cluster<T>, th: &Thresholds) -> HostClasses {
    let mut out = HostClasses::default();
    for h in cluster.hosts() {
        let bucket = match classify_host(h, th) {
            HostClass::Low => &mut out.low,
            HostClass::Medium => &mut out.medium,
            HostClass::High => &mut out.high,
            HostClass::Idle => &mut out.idle,
            HostClass::Sleeping => &mut out.sleeping,
        };
        bucket.push(h.id);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Victim {
    pub lease: LeaseId,
    pub sources: BTreeSet<HostId>,
    pub overhead: MigrationOverhead,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MigrationPlan {
    pub victims: Vec<Victim>,
    pub hosts_to_sleep: BTreeSet<HostId>,
}

impl MigrationPlan {
    pub fn is_empty(&self) -> bool {
        self.victims.is_empty()
    }
}

/// How `PMIG` decides whether the medium hosts can take the victims.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapacityCheck {
    /// Sum of victim demand against sum of residual capacity.
    #[default]
    Aggregate,
    /// A first-fit trial pack of the victim VMs onto the medium hosts.
    Pack,
}

/// Every lease touching a low host, migrated whole.
pub fn build_plan_mig<T: Scalar>(
    cluster: &Cluster<T>,
    th: &Thresholds,
    rates: &MigrationRates,
) -> MigrationPlan {
    let classes = classify_hosts(cluster, th);
    let mut victims_ids = BTreeSet::new();
    for id in &classes.low {
        let host = &cluster.hosts()[id.0];
        victims_ids.extend(host.placements().keys().copied());
    }
    let victims = victims_ids
        .into_iter()
        .map(|lease| {
            let fp = cluster
                .footprint(lease)
                .expect("placed lease has a footprint");
            Victim {
                lease,
                sources: fp.hosts.clone(),
                overhead: overhead_for(fp.vm_count, &fp.vm_spec, rates),
            }
        })
        .collect();
    MigrationPlan {
        victims,
        hosts_to_sleep: classes.low.into_iter().collect(),
    }
}

/// Like [`build_plan_mig`], but returns `None` when the medium-loaded hosts
/// lack room for the victims.
pub fn build_plan_pmig<T: Scalar>(
    cluster: &Cluster<T>,
    th: &Thresholds,
    rates: &MigrationRates,
    check: CapacityCheck,
) -> Option<MigrationPlan> {
    let plan = build_plan_mig(cluster, th, rates);
    if plan.is_empty() {
        return Some(plan);
    }
    let medium = classify_hosts(cluster, th).medium;
    let fits = match check {
        CapacityCheck::Aggregate => aggregate_fits(cluster, &plan, &medium),
        CapacityCheck::Pack => pack_fits(cluster, &plan, &medium),
    };
    fits.then_some(plan)
}

fn aggregate_fits<T: Scalar>(
    cluster: &Cluster<T>,
    plan: &MigrationPlan,
    medium: &[HostId],
) -> bool {
    let demand = plan.victims.iter().fold(Resources::default(), |acc, v| {
        let fp = cluster.footprint(v.lease).expect("victim is placed");
        acc + fp.vm_spec.demand().scaled(fp.vm_count as u64)
    });
    let room = medium.iter().fold(Resources::default(), |acc, id| {
        acc + cluster.hosts()[id.0].residual()
    });
    demand.fits_within(&room)
}

fn pack_fits<T: Scalar>(cluster: &Cluster<T>, plan: &MigrationPlan, medium: &[HostId]) -> bool {
    let hosts: Vec<HostState<T>> = medium
        .iter()
        .map(|id| cluster.hosts()[id.0].clone())
        .collect();
    let mut residual: Vec<(HostId, Resources)> = rank_hosts(&hosts, HostOrder::H2L)
        .into_iter()
        .map(|h| (h.id, h.residual()))
        .collect();
    for v in &plan.victims {
        let fp = cluster.footprint(v.lease).expect("victim is placed");
        let vm = fp.vm_spec.demand();
        let mut left = fp.vm_count as u64;
        for (_, room) in residual.iter_mut() {
            let take = room.copies_of(&vm).min(left);
            *room = *room - vm.scaled(take);
            left -= take;
            if left == 0 {
                break;
            }
        }
        if left > 0 {
            return false;
        }
    }
    true
}

/// Suspends every victim, adds its overhead and returns the events that
/// requeue it once the delay has elapsed. Emptied hosts go to sleep.
pub fn apply_plan<T: Scalar>(
    plan: &MigrationPlan,
    cluster: &mut Cluster<T>,
    leases: &mut LeaseTable,
    clock: Millis,
) -> Result<Vec<SimEvent>, MigrationError> {
    for v in &plan.victims {
        let running = leases
            .get(&v.lease)
            .is_some_and(|l| l.state() == LeaseState::Running)
            && cluster.footprint(v.lease).is_some();
        if !running {
            return Err(MigrationError::StalePlan(v.lease));
        }
    }
    let mut events = Vec::with_capacity(plan.victims.len());
    for v in &plan.victims {
        cluster.evict(v.lease);
        let lease = leases.get_mut(&v.lease).expect("checked above");
        lease
            .transition(LeaseState::Suspended)
            .expect("running lease can be suspended");
        lease.overhead += v.overhead;
        events.push(SimEvent {
            time: clock + v.overhead.lease_delay,
            kind: EventKind::VictimReady,
            subject: Some(v.lease),
        });
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{HostSpec, PowerModel, PowerState};
    use proptest::prelude::*;

    fn example_rates() -> MigrationRates {
        MigrationRates::new(Bandwidth::from_mbs(32), Bandwidth::from_mbs(100)).unwrap()
    }

    fn cpu_vm(cpu: u64) -> VmSpec {
        VmSpec::new(cpu, 1024, 4096, Bandwidth::ZERO)
    }

    fn running(id: u64, vms: u32, cpu: u64) -> Lease {
        let mut l =
            Lease::best_effort(id, Millis(0), Millis::from_secs(600), vms, cpu_vm(cpu)).unwrap();
        l.transition(LeaseState::Ready).unwrap();
        l.transition(LeaseState::Running).unwrap();
        l
    }

    fn cluster(n: usize) -> Cluster {
        Cluster::homogeneous(n, HostSpec::with_cores(10, PowerModel::dl585()))
    }

    #[test]
    fn thresholds_validation() {
        assert!(Thresholds::new(0.4, 0.8).is_ok());
        assert!(Thresholds::new(0.8, 0.4).is_err());
        assert!(Thresholds::new(0.0, 0.4).is_err());
        assert!(Thresholds::new(0.4, 1.2).is_err());
        assert!(Thresholds::new(0.4, 0.4).is_err());
        assert_eq!(Thresholds::from_percent(30, 80).unwrap().tag(), "L30H80");
    }

    #[test]
    fn worked_overhead_example() {
        let l = Lease::best_effort(
            1,
            Millis(0),
            Millis(1),
            2,
            VmSpec::new(100, 1024, 4096, Bandwidth::ZERO),
        )
        .unwrap();
        let o = migration_overhead(&l, &example_rates());
        assert_eq!(o.t_sus, Millis(64_000));
        assert_eq!(o.t_res, Millis(64_000));
        assert_eq!(o.t_mig, Millis(81_920));
        assert_eq!(o.lease_delay, Millis(145_920));

        let mut with_resume = example_rates();
        with_resume.count_resume_in_delay = true;
        assert_eq!(
            migration_overhead(&l, &with_resume).lease_delay,
            Millis(209_920)
        );
    }

    #[test]
    fn overhead_edge_cases() {
        let diskless = Lease::best_effort(
            1,
            Millis(0),
            Millis(1),
            3,
            VmSpec::new(100, 1024, 0, Bandwidth::ZERO),
        )
        .unwrap();
        assert_eq!(
            migration_overhead(&diskless, &example_rates()).t_mig,
            Millis::ZERO
        );
        let big_mem = Lease::best_effort(
            1,
            Millis(0),
            Millis(1),
            1,
            VmSpec::new(100, 2048, 0, Bandwidth::ZERO),
        )
        .unwrap();
        assert_eq!(
            migration_overhead(&big_mem, &example_rates()).t_sus,
            Millis(64_000)
        );
    }

    #[test]
    fn classification_buckets() {
        let th = Thresholds::new(0.4, 0.8).unwrap();
        let mut c = cluster(5);
        c.assign(1, cpu_vm(300), HostId(0), &[0]).unwrap();
        c.assign(2, cpu_vm(600), HostId(1), &[0]).unwrap();
        c.assign(3, cpu_vm(900), HostId(2), &[0]).unwrap();
        c.assign(4, cpu_vm(400), HostId(3), &[0]).unwrap();
        let classes = classify_hosts(&c, &th);
        assert_eq!(classes.low, vec![HostId(0), HostId(3)]);
        assert_eq!(classes.medium, vec![HostId(1)]);
        assert_eq!(classes.high, vec![HostId(2)]);
        assert_eq!(classes.sleeping, vec![HostId(4)]);
        // boundary: exactly high is medium
        let mut c = cluster(1);
        c.assign(1, cpu_vm(800), HostId(0), &[0]).unwrap();
        assert_eq!(classify_hosts(&c, &th).medium, vec![HostId(0)]);
    }

    #[test]
    fn mig_plan_construction() {
        let th = Thresholds::new(0.4, 0.8).unwrap();
        let rates = example_rates();
        let mut c = cluster(3);
        assert!(build_plan_mig(&c, &th, &rates).is_empty());

        c.assign(1, cpu_vm(100), HostId(0), &[0]).unwrap();
        c.assign(2, cpu_vm(100), HostId(0), &[0]).unwrap();
        c.assign(3, cpu_vm(600), HostId(1), &[0]).unwrap();
        let plan = build_plan_mig(&c, &th, &rates);
        assert_eq!(plan.victims.len(), 2);
        assert_eq!(plan.hosts_to_sleep, BTreeSet::from([HostId(0)]));
    }

    #[test]
    fn victim_spanning_hosts_takes_all_sources() {
        let th = Thresholds::new(0.4, 0.8).unwrap();
        let mut c = cluster(2);
        c.assign(9, cpu_vm(500), HostId(1), &[0]).unwrap();
        c.assign(1, cpu_vm(100), HostId(0), &[0]).unwrap();
        c.assign(1, cpu_vm(100), HostId(1), &[1]).unwrap();
        let plan = build_plan_mig(&c, &th, &example_rates());
        assert_eq!(plan.victims.len(), 1);
        assert_eq!(
            plan.victims[0].sources,
            BTreeSet::from([HostId(0), HostId(1)])
        );

        let mut leases = LeaseTable::new();
        leases.insert(1, running(1, 2, 100));
        leases.insert(9, running(9, 1, 500));
        apply_plan(&plan, &mut c, &mut leases, Millis(0)).unwrap();
        assert!(c
            .audit(leases.values().filter(|l| l.state() == LeaseState::Running))
            .is_ok());
        assert_eq!(c.hosts()[1].placements().len(), 1);
    }

    #[test]
    fn pmig_aggregate_check() {
        let th = Thresholds::new(0.4, 0.8).unwrap();
        let rates = example_rates();
        // victims: 4 x 100% on low hosts; medium host has 300% free
        let mut c = cluster(4);
        c.assign(1, cpu_vm(100), HostId(0), &[0, 1]).unwrap();
        c.assign(2, cpu_vm(100), HostId(1), &[0, 1]).unwrap();
        c.assign(3, cpu_vm(700), HostId(2), &[0]).unwrap();
        assert!(build_plan_pmig(&c, &th, &rates, CapacityCheck::Aggregate).is_none());

        // with a second medium host the victims fit
        c.assign(4, cpu_vm(500), HostId(3), &[0]).unwrap();
        let plan = build_plan_pmig(&c, &th, &rates, CapacityCheck::Aggregate).unwrap();
        assert_eq!(plan, build_plan_mig(&c, &th, &rates));
        assert!(build_plan_pmig(&c, &th, &rates, CapacityCheck::Pack).is_some());

        // no low hosts and no medium hosts: vacuously fine
        let empty = cluster(2);
        assert!(
            build_plan_pmig(&empty, &th, &rates, CapacityCheck::Aggregate)
                .unwrap()
                .is_empty()
        );
    }

    #[test]
    fn pack_check_is_stricter_than_aggregate() {
        let th = Thresholds::new(0.4, 0.8).unwrap();
        let rates = example_rates();
        // two medium hosts with 250% free each; one victim VM of 400%
        let mut c = cluster(3);
        c.assign(1, cpu_vm(400), HostId(0), &[0]).unwrap();
        c.assign(2, cpu_vm(750), HostId(1), &[0]).unwrap();
        c.assign(3, cpu_vm(750), HostId(2), &[0]).unwrap();
        assert!(build_plan_pmig(&c, &th, &rates, CapacityCheck::Aggregate).is_some());
        assert!(build_plan_pmig(&c, &th, &rates, CapacityCheck::Pack).is_none());
    }

    #[test]
    fn apply_plan_requeues_and_sleeps() {
        let th = Thresholds::new(0.4, 0.8).unwrap();
        let rates = example_rates();
        let mut c = cluster(2);
        let mut leases = LeaseTable::new();

        let events = apply_plan(&MigrationPlan::default(), &mut c, &mut leases, Millis(5)).unwrap();
        assert!(events.is_empty());

        leases.insert(1, running(1, 2, 100));
        leases.insert(2, running(2, 1, 100));
        c.assign(1, leases[&1].vm_spec, HostId(0), &[0, 1]).unwrap();
        c.assign(2, leases[&2].vm_spec, HostId(0), &[0]).unwrap();
        let plan = build_plan_mig(&c, &th, &rates);
        let events = apply_plan(&plan, &mut c, &mut leases, Millis::from_secs(1000)).unwrap();

        assert_eq!(events.len(), 2);
        assert_eq!(events[0].time, Millis(1_145_920));
        assert_eq!(events[0].kind, EventKind::VictimReady);
        assert_eq!(c.hosts()[0].power_state(), PowerState::Sleeping);
        assert!(c.hosts()[0].is_empty());
        assert_eq!(leases[&1].state(), LeaseState::Suspended);
        assert_eq!(leases[&1].overhead.lease_delay, Millis(145_920));

        // applying the same plan again is stale
        assert_eq!(
            apply_plan(&plan, &mut c, &mut leases, Millis::from_secs(1001)),
            Err(MigrationError::StalePlan(1))
        );
    }

    proptest! {
        #[test]
        fn overhead_is_linear(n in 1u32..50, mem in 0u64..8192, disk in 0u64..65536, net in 1u64..500) {
            let vm = VmSpec::new(100, mem, disk, Bandwidth::ZERO);
            let rates = MigrationRates::new(Bandwidth::from_mbs(32), Bandwidth::from_mbs(net * 2)).unwrap();
            let halved = MigrationRates::new(Bandwidth::from_mbs(32), Bandwidth::from_mbs(net)).unwrap();
            let one = overhead_for(1, &vm, &rates);
            let many = overhead_for(n, &vm, &rates);
            // integer-exact whenever a single VM's cost is a whole number of ms
            if (mem * 100_000) % 3200 == 0 && (disk * 100_000) % (net * 200) == 0 {
                prop_assert_eq!(many.t_sus.0, one.t_sus.0 * n as u64);
                prop_assert_eq!(many.t_mig.0, one.t_mig.0 * n as u64);
                prop_assert_eq!(overhead_for(1, &vm, &halved).t_mig.0, 2 * one.t_mig.0);
            }
            prop_assert!(many.lease_delay >= many.t_mig);
        }

        #[test]
        fn pmig_victims_match_mig(cpus in proptest::collection::vec(1u64..10, 1..8)) {
            let th = Thresholds::new(0.4, 0.8).unwrap();
            let rates = example_rates();
            let mut c = cluster(cpus.len());
            for (i, &cpu) in cpus.iter().enumerate() {
                c.assign(i as u64, cpu_vm(cpu * 100), HostId(i), &[0]).unwrap();
            }
            if let Some(plan) = build_plan_pmig(&c, &th, &rates, CapacityCheck::Aggregate) {
                prop_assert_eq!(plan, build_plan_mig(&c, &th, &rates));
            }
        }
    }
}
