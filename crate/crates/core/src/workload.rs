//! Workload sources: Standard Workload Format traces and seeded synthetic
//! lease streams.
//!
//! Each SWF job becomes one best-effort lease with one VM per allocated
//! processor. Submit time and run time carry over unchanged.

use std::io::BufRead;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use thiserror::Error;

use crate::domain::{DomainError, Lease, VmSpec};
use crate::units::Millis;

pub const SECONDS_PER_DAY: u64 = 86_400;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("reading trace: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid workload parameters: {0}")]
    InvalidParams(&'static str),
    #[error(transparent)]
    Lease(#[from] DomainError),
}

/// The SWF fields this crate uses.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct SwfJob {
    pub job_id: i64,
    pub submit: i64,
    pub run_time: i64,
    pub allocated_processors: i64,
    pub status: i64,
}

const SWF_MIN_FIELDS: usize = 11;

fn swf_field(fields: &[&str], column: usize, line: usize) -> Result<i64, WorkloadError> {
    let raw = fields[column - 1];
    raw.parse::<i64>()
        .or_else(|_| {
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(|v| v.round() as i64)
                .ok_or(())
        })
        .map_err(|_| WorkloadError::Malformed {
            line,
            reason: format!("column {column} is not a number: `{raw}`"),
        })
}

/// Parses one line. Comments (`;`) and blank lines yield `None`.
pub fn parse_swf_line(text: &str, line: usize) -> Result<Option<SwfJob>, WorkloadError> {
    let text = text.trim();
    if text.is_empty() || text.starts_with(';') {
        return Ok(None);
    }
    let fields: Vec<&str> = text.split_whitespace().collect();
    if fields.len() < SWF_MIN_FIELDS {
        return Err(WorkloadError::Malformed {
            line,
            reason: format!(
                "expected at least {SWF_MIN_FIELDS} fields, found {}",
                fields.len()
            ),
        });
    }
    Ok(Some(SwfJob {
        job_id: swf_field(&fields, 1, line)?,
        submit: swf_field(&fields, 2, line)?,
        run_time: swf_field(&fields, 4, line)?,
        allocated_processors: swf_field(&fields, 5, line)?,
        status: swf_field(&fields, 11, line)?,
    }))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SwfTrace {
    pub leases: Vec<Lease>,
    /// Data lines read, kept or not.
    pub jobs_read: usize,
    /// Jobs dropped for non-positive run time or processor count.
    pub skipped: usize,
    /// Submit times of the skipped jobs, so a cutoff can recount them.
    pub skipped_submits: Vec<Millis>,
    pub first_submit: Option<Millis>,
}

impl SwfTrace {
    /// Keeps jobs submitted less than `days` after the first submit.
    pub fn cutoff_days(mut self, days: u64) -> Self {
        if let Some(first) = self.first_submit {
            let limit = first + Millis::from_secs(days * SECONDS_PER_DAY);
            self.leases.retain(|l| l.arrival < limit);
            self.skipped_submits.retain(|&t| t < limit);
            self.skipped = self.skipped_submits.len();
        }
        self
    }
}

pub fn parse_swf<R: BufRead>(reader: R, vm_spec: VmSpec) -> Result<SwfTrace, WorkloadError> {
    let mut trace = SwfTrace::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let Some(job) = parse_swf_line(&line, i + 1)? else {
            continue;
        };
        trace.jobs_read += 1;
        if job.submit < 0 || job.job_id < 0 {
            return Err(WorkloadError::Malformed {
                line: i + 1,
                reason: "negative job id or submit time".into(),
            });
        }
        let submit = Millis::from_secs(job.submit as u64);
        trace.first_submit.get_or_insert(submit);
        if job.run_time <= 0 || job.allocated_processors <= 0 {
            trace.skipped += 1;
            trace.skipped_submits.push(submit);
            continue;
        }
        let vm_count =
            u32::try_from(job.allocated_processors).map_err(|_| WorkloadError::Malformed {
                line: i + 1,
                reason: "processor count out of range".into(),
            })?;
        trace.leases.push(Lease::best_effort(
            job.job_id as u64,
            submit,
            Millis::from_secs(job.run_time as u64),
            vm_count,
            vm_spec,
        )?);
    }
    Ok(trace)
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct WorkloadParams {
    pub lease_count: usize,
    /// Inclusive bounds, in seconds.
    pub duration_range: (u64, u64),
    pub vm_count_range: (u32, u32),
    /// Mean arrivals per second of a Poisson process.
    pub arrival_rate: f64,
    pub seed: u64,
    pub vm_spec: VmSpec,
}

impl Default for WorkloadParams {
    /// A month of small leases: 5108 arrivals over 30 days, 1 min to 2 h
    /// long, 1 to 32 single-core VMs each.
    fn default() -> Self {
        WorkloadParams {
            lease_count: 5108,
            duration_range: (60, 7200),
            vm_count_range: (1, 32),
            arrival_rate: 5108.0 / (30.0 * SECONDS_PER_DAY as f64),
            seed: 0,
            vm_spec: VmSpec::single_core(),
        }
    }
}

impl WorkloadParams {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        let (dmin, dmax) = self.duration_range;
        let (vmin, vmax) = self.vm_count_range;
        if dmin == 0 || dmin > dmax {
            return Err(WorkloadError::InvalidParams(
                "duration range must be positive and ordered",
            ));
        }
        if vmin == 0 || vmin > vmax {
            return Err(WorkloadError::InvalidParams(
                "VM count range must be positive and ordered",
            ));
        }
        if !(self.arrival_rate > 0.0 && self.arrival_rate.is_finite()) {
            return Err(WorkloadError::InvalidParams(
                "arrival rate must be positive",
            ));
        }
        if self.vm_spec.cpu_percent == 0 {
            return Err(WorkloadError::InvalidParams("VMs must request CPU"));
        }
        Ok(())
    }
}

/// Deterministic for a given seed. Ids run from 1.
pub fn generate_synthetic(params: &WorkloadParams) -> Result<Vec<Lease>, WorkloadError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let gaps = Exp::new(params.arrival_rate).expect("rate validated");
    let mut clock = 0.0f64;
    let mut leases = Vec::with_capacity(params.lease_count);
    for i in 0..params.lease_count {
        if i > 0 {
            clock += gaps.sample(&mut rng);
        }
        let duration = rng.random_range(params.duration_range.0..=params.duration_range.1);
        let vms = rng.random_range(params.vm_count_range.0..=params.vm_count_range.1);
        leases.push(Lease::best_effort(
            i as u64 + 1,
            Millis((clock * 1000.0).round() as u64),
            Millis::from_secs(duration),
            vms,
            params.vm_spec,
        )?);
    }
    Ok(leases)
}
