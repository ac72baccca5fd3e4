//! Loading a workload and running one engine per configuration.

use std::fs::File;
use std::io::BufReader;

use rayon::prelude::*;
use serde::Serialize;

use leasim::workload::{generate_synthetic, parse_swf, WorkloadError, WorkloadParams};
use leasim::{Lease, SimConfig, SimReport, VmSpec};

use crate::config::WorkloadSource;

/// Leases plus the number of trace jobs that could not become leases.
#[derive(Clone, Debug, Default)]
pub struct Workload {
    pub leases: Vec<Lease>,
    pub skipped_jobs: usize,
}

pub fn load_workload(source: &WorkloadSource, vm_spec: VmSpec) -> Result<Workload, WorkloadError> {
    match source {
        WorkloadSource::Trace { path, cutoff_days } => {
            let trace =
                parse_swf(BufReader::new(File::open(path)?), vm_spec)?.cutoff_days(*cutoff_days);
            Ok(Workload {
                skipped_jobs: trace.skipped,
                leases: trace.leases,
            })
        }
        WorkloadSource::Synthetic { seed, lease_count } => {
            let params = WorkloadParams {
                seed: *seed,
                lease_count: *lease_count,
                vm_spec,
                ..WorkloadParams::default()
            };
            Ok(Workload {
                leases: generate_synthetic(&params)?,
                skipped_jobs: 0,
            })
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub label: String,
    /// Present whenever the engine ran, even if some leases were rejected.
    pub report: Option<SimReport>,
    pub error: Option<String>,
}

impl SweepRow {
    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }
}

fn run_row(config: &SimConfig, workload: &Workload) -> SweepRow {
    let label = config.label();
    match leasim::run(config, workload.leases.clone()) {
        Ok(mut report) => {
            report.skipped_jobs = workload.skipped_jobs;
            let error = match report.rejected_leases.as_slice() {
                [] => None,
                [only] => Some(format!("lease {} rejected: {}", only.id, only.reason)),
                [first, ..] => Some(format!(
                    "{} leases rejected, first {}: {}",
                    report.rejected_leases.len(),
                    first.id,
                    first.reason
                )),
            };
            SweepRow {
                label,
                report: Some(report),
                error,
            }
        }
        Err(e) => SweepRow {
            label,
            report: None,
            error: Some(e.to_string()),
        },
    }
}

/// One row per config, in input order. Rows run in parallel.
pub fn run_sweep(configs: &[SimConfig], workload: &Workload) -> Vec<SweepRow> {
    configs.par_iter().map(|c| run_row(c, workload)).collect()
}
