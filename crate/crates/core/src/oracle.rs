//! Exhaustive reference solvers for tiny instances.
//!
//! These share nothing with the heuristics beyond the data types and the
//! power formula, so tests can use them as ground truth.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::domain::{HostId, HostSpec, Lease, Mapping, Resources, VmSpec};
use crate::engine::{MigrationMode, SimConfig};
use crate::scalar::Scalar;
use crate::units::Millis;

pub const MAX_EXACT_VMS: usize = 12;
pub const MAX_SMALL_LEASES: usize = 5;
pub const MAX_SMALL_HOSTS: usize = 3;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("instance too large for exhaustive search ({size} > {limit})")]
    TooLarge { size: usize, limit: usize },
    #[error("no feasible assignment exists")]
    Infeasible,
    #[error("search budget of {0} placements exceeded")]
    BudgetExceeded(u64),
    #[error("lease {0} has more than one VM")]
    MultiVmLease(u64),
    #[error("oracle does not model migration")]
    MigrationUnsupported,
}

/// Fewest hosts that can hold all `vms`, by enumerating set partitions.
pub fn min_servers_exact<T: Scalar>(
    vms: &[VmSpec],
    host: &HostSpec<T>,
    max_hosts: usize,
) -> Result<usize, OracleError> {
    if vms.len() > MAX_EXACT_VMS {
        return Err(OracleError::TooLarge {
            size: vms.len(),
            limit: MAX_EXACT_VMS,
        });
    }
    if vms.is_empty() {
        return Ok(0);
    }
    let cap = host.capacity();
    let items: Vec<Resources> = vms.iter().map(|v| v.demand()).collect();
    if items.iter().any(|d| !d.fits_within(&cap)) {
        return Err(OracleError::Infeasible);
    }
    let mut best = usize::MAX;
    let mut bins: Vec<Resources> = Vec::new();
    partition(&items, 0, &cap, max_hosts, &mut bins, &mut best);
    if best == usize::MAX {
        Err(OracleError::Infeasible)
    } else {
        Ok(best)
    }
}

fn partition(
    items: &[Resources],
    next: usize,
    cap: &Resources,
    max_bins: usize,
    bins: &mut Vec<Resources>,
    best: &mut usize,
) {
    if bins.len() >= *best {
        return;
    }
    if next == items.len() {
        *best = bins.len();
        return;
    }
    let item = items[next];
    for i in 0..bins.len() {
        let joined = bins[i] + item;
        if joined.fits_within(cap) {
            let old = std::mem::replace(&mut bins[i], joined);
            partition(items, next + 1, cap, max_bins, bins, best);
            bins[i] = old;
        }
    }
    if bins.len() < max_bins {
        bins.push(item);
        partition(items, next + 1, cap, max_bins, bins, best);
        bins.pop();
    }
}

/// `base_rate x working time` summed over hosts that worked, plus the
/// per-lease execution energies. Only defined when every lease has one VM.
pub fn special_case_objective<T: Scalar>(
    assignment: &Mapping,
    working_time: &BTreeMap<HostId, T>,
    base_rate: T,
    per_lease_energy: &[T],
) -> Result<T, OracleError> {
    let mut seen = BTreeSet::new();
    for a in assignment.iter() {
        if a.vm > 0 || !seen.insert(a.lease) {
            return Err(OracleError::MultiVmLease(a.lease));
        }
    }
    let hosts = working_time
        .values()
        .filter(|&&t| t > T::zero())
        .fold(T::zero(), |acc, &t| acc + base_rate * t);
    let leases = per_lease_energy.iter().fold(T::zero(), |acc, &e| acc + e);
    Ok(hosts + leases)
}

/// Minimum energy (kWh) over every static placement of `leases`, each run
/// from its eligible time with no waiting.
pub fn optimal_energy_small<T: Scalar>(
    leases: &[Lease],
    config: &SimConfig<T>,
    budget: u64,
) -> Result<T, OracleError> {
    if config.migration != MigrationMode::None {
        return Err(OracleError::MigrationUnsupported);
    }
    if leases.len() > MAX_SMALL_LEASES {
        return Err(OracleError::TooLarge {
            size: leases.len(),
            limit: MAX_SMALL_LEASES,
        });
    }
    if config.host_count > MAX_SMALL_HOSTS {
        return Err(OracleError::TooLarge {
            size: config.host_count,
            limit: MAX_SMALL_HOSTS,
        });
    }
    let windows: Vec<(Millis, Millis)> = leases
        .iter()
        .map(|l| (l.eligible_at(), l.eligible_at() + l.duration))
        .collect();
    let options: Vec<Vec<Vec<u32>>> = leases
        .iter()
        .map(|l| splits(l.vm_count, config.host_count))
        .collect();
    let mut search = Search {
        leases,
        windows: &windows,
        options: &options,
        spec: &config.host_spec,
        budget,
        visited: 0,
        best: None,
    };
    let mut chosen = Vec::with_capacity(leases.len());
    search.descend(&mut chosen)?;
    search.best.ok_or(OracleError::Infeasible)
}

/// All ways to spread `n` identical VMs over `hosts` hosts.
fn splits(n: u32, hosts: usize) -> Vec<Vec<u32>> {
    if hosts == 1 {
        return vec![vec![n]];
    }
    let mut out = Vec::new();
    for first in 0..=n {
        for mut rest in splits(n - first, hosts - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

struct Search<'a, T> {
    leases: &'a [Lease],
    windows: &'a [(Millis, Millis)],
    options: &'a [Vec<Vec<u32>>],
    spec: &'a HostSpec<T>,
    budget: u64,
    visited: u64,
    best: Option<T>,
}

impl<T: Scalar> Search<'_, T> {
    fn descend(&mut self, chosen: &mut Vec<usize>) -> Result<(), OracleError> {
        let depth = chosen.len();
        if depth == self.leases.len() {
            self.visited += 1;
            if self.visited > self.budget {
                return Err(OracleError::BudgetExceeded(self.budget));
            }
            if let Some(e) = self.evaluate(chosen) {
                if self.best.is_none_or(|b| e < b) {
                    self.best = Some(e);
                }
            }
            return Ok(());
        }
        for i in 0..self.options[depth].len() {
            chosen.push(i);
            self.descend(chosen)?;
            chosen.pop();
        }
        Ok(())
    }

    fn split(&self, lease: usize, chosen: &[usize]) -> &[u32] {
        &self.options[lease][chosen[lease]]
    }

    /// Energy of one full placement, or `None` if it overfills a host.
    fn evaluate(&self, chosen: &[usize]) -> Option<T> {
        let hosts = self.split(0, chosen).len();
        let cap = self.spec.capacity();
        let mut cuts: Vec<Millis> = self.windows.iter().flat_map(|&(s, e)| [s, e]).collect();
        cuts.sort();
        cuts.dedup();
        let mut energy = T::zero();
        for w in cuts.windows(2) {
            let (from, to) = (w[0], w[1]);
            for h in 0..hosts {
                let mut load = Resources::default();
                for (i, lease) in self.leases.iter().enumerate() {
                    let (s, e) = self.windows[i];
                    if s <= from && from < e {
                        let n = self.split(i, chosen)[h] as u64;
                        load = load + lease.vm_spec.demand().scaled(n);
                    }
                }
                if !load.fits_within(&cap) {
                    return None;
                }
                if load.cpu == 0 {
                    continue;
                }
                let util = T::ratio(load.cpu, cap.cpu);
                let watts = self.spec.power.power(util).ok()?;
                energy =
                    energy + watts * T::from_count((to - from).0) / T::from_count(3_600_000_000);
            }
        }
        Some(energy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Assignment, PowerModel};
    use crate::engine::{run, SimConfig};
    use crate::placement::HostOrder;
    use crate::units::Bandwidth;
    use crate::Rational;

    fn host() -> HostSpec {
        HostSpec::new(100, 100, 100, Bandwidth::from_mbs(100), PowerModel::dl585()).unwrap()
    }

    fn half() -> VmSpec {
        VmSpec::new(50, 50, 50, Bandwidth::from_mbs(50))
    }

    #[test]
    fn min_servers_small_cases() {
        assert_eq!(min_servers_exact(&[half()], &host(), 5), Ok(1));
        assert_eq!(min_servers_exact(&[half(); 4], &host(), 5), Ok(2));
        assert_eq!(min_servers_exact(&[], &host(), 5), Ok(0));
        assert_eq!(
            min_servers_exact(&[half(); 4], &host(), 1),
            Err(OracleError::Infeasible)
        );
        assert!(matches!(
            min_servers_exact(&[half(); 13], &host(), 13),
            Err(OracleError::TooLarge { .. })
        ));
    }

    #[test]
    fn min_servers_pins_cpu_dimension() {
        let vm = VmSpec::new(60, 1, 1, Bandwidth::ZERO);
        let wide = HostSpec::<f64>::new(120, 100, 100, Bandwidth::from_mbs(1), PowerModel::dl585())
            .unwrap();
        let narrow =
            HostSpec::<f64>::new(100, 100, 100, Bandwidth::from_mbs(1), PowerModel::dl585())
                .unwrap();
        assert_eq!(min_servers_exact(&[vm; 3], &wide, 3), Ok(2));
        assert_eq!(min_servers_exact(&[vm; 3], &narrow, 3), Ok(3));
    }

    #[test]
    fn min_servers_needs_backtracking() {
        // first-fit decreasing by index order would use 3 bins; optimum is 2
        let cap = HostSpec::<f64>::new(10, 1000, 1000, Bandwidth::from_mbs(1), PowerModel::dl585())
            .unwrap();
        let cpu = |c| VmSpec::new(c, 1, 1, Bandwidth::ZERO);
        let vms = [cpu(4), cpu(3), cpu(6), cpu(7)];
        assert_eq!(min_servers_exact(&vms, &cap, 4), Ok(2));
    }

    #[test]
    fn special_case_sums() {
        let none: BTreeMap<HostId, f64> = BTreeMap::new();
        assert_eq!(
            special_case_objective(&Mapping::default(), &none, 1.0, &[]),
            Ok(0.0)
        );

        let mapping: Mapping = [
            Assignment {
                lease: 1,
                vm: 0,
                host: HostId(0),
            },
            Assignment {
                lease: 2,
                vm: 0,
                host: HostId(1),
            },
        ]
        .into_iter()
        .collect();
        let t = BTreeMap::from([(HostId(0), 100.0), (HostId(1), 100.0), (HostId(2), 0.0)]);
        assert_eq!(
            special_case_objective(&mapping, &t, 1.0, &[5.0, 7.0]),
            Ok(212.0)
        );

        // consolidating both leases on one host only changes the host term
        let packed: Mapping = [
            Assignment {
                lease: 1,
                vm: 0,
                host: HostId(0),
            },
            Assignment {
                lease: 2,
                vm: 0,
                host: HostId(0),
            },
        ]
        .into_iter()
        .collect();
        let t1 = BTreeMap::from([(HostId(0), 100.0)]);
        let a = special_case_objective(&mapping, &t, 1.0, &[5.0, 7.0]).unwrap();
        let b = special_case_objective(&packed, &t1, 1.0, &[5.0, 7.0]).unwrap();
        assert_eq!(a - 200.0, b - 100.0);

        let multi: Mapping = [
            Assignment {
                lease: 1,
                vm: 0,
                host: HostId(0),
            },
            Assignment {
                lease: 1,
                vm: 1,
                host: HostId(1),
            },
        ]
        .into_iter()
        .collect();
        assert_eq!(
            special_case_objective(&multi, &t, 1.0, &[1.0]),
            Err(OracleError::MultiVmLease(1))
        );
    }

    fn lease(id: u64, start: u64, dur: u64, vms: u32) -> Lease {
        Lease::best_effort(
            id,
            Millis::from_secs(start),
            Millis::from_secs(dur),
            vms,
            VmSpec::single_core(),
        )
        .unwrap()
    }

    #[test]
    fn optimum_matches_engine_on_single_lease() {
        let cfg = SimConfig::new(1, HostSpec::<Rational>::dl585_16core(), HostOrder::H2L);
        let leases = vec![lease(1, 0, 600, 3)];
        let best = optimal_energy_small(&leases, &cfg, 1000).unwrap();
        let engine = crate::engine::Engine::new(cfg, leases).unwrap().run();
        assert_eq!(best, engine.total_energy_kwh());
    }

    #[test]
    fn consolidation_beats_split_when_idle_power_positive() {
        let cfg = SimConfig::new(2, HostSpec::<Rational>::dl585_16core(), HostOrder::H2L);
        let leases = vec![lease(1, 0, 600, 1), lease(2, 0, 600, 1)];
        let best = optimal_energy_small(&leases, &cfg, 1000).unwrap();
        let cfg_npa = SimConfig {
            order: HostOrder::Npa,
            ..cfg.clone()
        };
        let split = crate::engine::Engine::new(cfg_npa, leases.clone())
            .unwrap()
            .run();
        let packed = crate::engine::Engine::new(cfg, leases).unwrap().run();
        assert_eq!(best, packed.total_energy_kwh());
        assert!(best < split.total_energy_kwh());
    }

    #[test]
    fn zero_idle_power_makes_placement_irrelevant() {
        let spec = HostSpec::with_cores(
            16,
            PowerModel::<Rational>::new(0.into(), 300.into()).unwrap(),
        );
        let leases = vec![lease(1, 0, 600, 1), lease(2, 100, 600, 2)];
        let mut energies = Vec::new();
        for order in [HostOrder::H2L, HostOrder::Npa, HostOrder::L2H] {
            let cfg = SimConfig::new(2, spec, order);
            energies.push(
                crate::engine::Engine::new(cfg, leases.clone())
                    .unwrap()
                    .run()
                    .total_energy_kwh(),
            );
        }
        let cfg = SimConfig::new(2, spec, HostOrder::H2L);
        energies.push(optimal_energy_small(&leases, &cfg, 1000).unwrap());
        assert!(energies.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn optimum_budget_and_limits() {
        let cfg = SimConfig::new(3, HostSpec::<f64>::dl585_16core(), HostOrder::H2L);
        let leases = vec![lease(1, 0, 60, 3), lease(2, 0, 60, 3)];
        assert_eq!(
            optimal_energy_small(&leases, &cfg, 5),
            Err(OracleError::BudgetExceeded(5))
        );
        let many: Vec<Lease> = (0..6).map(|i| lease(i, 0, 60, 1)).collect();
        assert!(matches!(
            optimal_energy_small(&many, &cfg, 1000),
            Err(OracleError::TooLarge { .. })
        ));
        let mig = cfg.with_migration(MigrationMode::Mig, Default::default());
        assert_eq!(
            optimal_energy_small(&leases, &mig, 1000),
            Err(OracleError::MigrationUnsupported)
        );
        let _ = run(
            &SimConfig::new(1, HostSpec::<f64>::dl585_16core(), HostOrder::H2L),
            vec![],
        );
    }

    #[test]
    fn splits_enumerate_compositions() {
        assert_eq!(splits(2, 2), vec![vec![0, 2], vec![1, 1], vec![2, 0]]);
        assert_eq!(splits(3, 3).len(), 10);
    }
}
