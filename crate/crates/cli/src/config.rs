//! Flag and config-file handling.
//!
//! Every setting can come from the command line or from a TOML file named by
//! `--config` / `LEASIM_CONFIG`. Keys in the file use the flag names
//! (`net-bandwidth = "100Mbps"`). Flags win.

use std::path::{Path, PathBuf};

use clap::{Args, Parser};
use serde::Deserialize;
use thiserror::Error;

use leasim::migration::{CapacityCheck, MigrationRates, Thresholds};
use leasim::units::Millis;
use leasim::{Bandwidth, HostOrder, HostSpec, MigrationMode, PowerModel, SimConfig, VmSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config file {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config file {path}: {source}")]
    Parse {
        path: PathBuf,
        source: Box<toml::de::Error>,
    },
    #[error("--{flag}: {reason}")]
    Invalid { flag: &'static str, reason: String },
    #[error("choose a workload with --trace PATH or --synthetic")]
    NoWorkload,
    #[error("--trace and --synthetic are mutually exclusive")]
    TwoWorkloads,
}

fn invalid(flag: &'static str, reason: impl ToString) -> ConfigError {
    ConfigError::Invalid {
        flag,
        reason: reason.to_string(),
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "leasim",
    version,
    about = "Replay a lease workload on a simulated cluster and report energy, waiting time and makespan"
)]
pub struct Cli {
    /// TOML file of default settings; keys are flag names.
    #[arg(long, env = "LEASIM_CONFIG", value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(flatten)]
    pub settings: Settings,
}

/// All tunables. Unset fields fall back to the config file, then to the
/// defaults shown in `--help`.
#[derive(Args, Deserialize, Debug, Default, Clone, PartialEq)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct Settings {
    /// Standard Workload Format trace to replay.
    #[arg(long, value_name = "PATH", help_heading = "Workload")]
    pub trace: Option<PathBuf>,
    /// Generate a seeded synthetic workload instead of reading a trace.
    #[arg(long, help_heading = "Workload")]
    pub synthetic: bool,
    /// Keep trace jobs submitted within this many days of the first one [default: 30].
    #[arg(long, value_name = "DAYS", help_heading = "Workload")]
    pub trace_cutoff_days: Option<u64>,
    /// Seed for --synthetic [default: 0].
    #[arg(long, value_name = "N", help_heading = "Workload")]
    pub seed: Option<u64>,
    /// Number of synthetic leases [default: 5108].
    #[arg(long, value_name = "N", help_heading = "Workload")]
    pub lease_count: Option<usize>,
    /// CPU per VM in percent of one core [default: 100].
    #[arg(long, value_name = "PERCENT", help_heading = "Workload")]
    pub vm_cpu: Option<u64>,
    /// Memory per VM in MB [default: 1024].
    #[arg(long, value_name = "MB", help_heading = "Workload")]
    pub vm_mem: Option<u64>,
    /// Disk per VM in MB [default: 4096].
    #[arg(long, value_name = "MB", help_heading = "Workload")]
    pub vm_disk: Option<u64>,
    /// Network bandwidth per VM [default: none].
    #[arg(long, value_name = "UNIT", help_heading = "Workload")]
    pub vm_bw: Option<String>,

    /// Number of hosts [default: 1000].
    #[arg(long, value_name = "N", help_heading = "Cluster")]
    pub hosts: Option<usize>,
    /// Cores per host [default: 16].
    #[arg(long, value_name = "N", help_heading = "Cluster")]
    pub cores: Option<u64>,
    /// Host memory in MB [default: 1024 per core].
    #[arg(long, value_name = "MB", help_heading = "Cluster")]
    pub mem_mb: Option<u64>,
    /// Host disk in MB [default: 1048576].
    #[arg(long, value_name = "MB", help_heading = "Cluster")]
    pub disk_mb: Option<u64>,
    /// Host NIC bandwidth, e.g. 1000MBps or 10Gbps [default: 1000MBps].
    #[arg(long, value_name = "UNIT", help_heading = "Cluster")]
    pub host_bw: Option<String>,
    /// Power preset [default: dl585].
    #[arg(long, value_parser = ["dl585", "dl785"], help_heading = "Cluster")]
    pub power: Option<String>,
    /// Idle power in watts, overriding the preset.
    #[arg(long, value_name = "W", help_heading = "Cluster")]
    pub p_idle: Option<f64>,
    /// Full-load power in watts, overriding the preset.
    #[arg(long, value_name = "W", help_heading = "Cluster")]
    pub p_max: Option<f64>,

    /// Placement heuristic [default: ff-h2l].
    #[arg(long, value_parser = ["npa", "ff-h2l", "ff-l2h"], help_heading = "Scheduling")]
    pub algo: Option<String>,
    /// Consolidation policy [default: none].
    #[arg(long, value_parser = ["none", "mig", "pmig"], help_heading = "Scheduling")]
    pub migration: Option<String>,
    /// Hosts at or below this utilization are drained [default: 0.4].
    #[arg(long, value_name = "F", help_heading = "Scheduling")]
    pub low_threshold: Option<f64>,
    /// Upper bound of the PMIG target band [default: 0.8].
    #[arg(long, value_name = "F", help_heading = "Scheduling")]
    pub high_threshold: Option<f64>,
    /// PMIG capacity pre-check [default: aggregate].
    #[arg(long, value_parser = ["aggregate", "pack"], help_heading = "Scheduling")]
    pub capacity_check: Option<String>,
    /// Suspend and resume rate, e.g. 32MBps [default: 32MBps].
    #[arg(long, value_name = "UNIT", help_heading = "Scheduling")]
    pub suspend_rate: Option<String>,
    /// Migration network bandwidth, e.g. 100Mbps [default: 100Mbps].
    #[arg(long, value_name = "UNIT", help_heading = "Scheduling")]
    pub net_bandwidth: Option<String>,
    /// Add resume time to each migrated lease's delay.
    #[arg(long, help_heading = "Scheduling")]
    pub count_resume_in_delay: bool,
    /// Seconds between consolidation rounds [default: 3600].
    #[arg(long, value_name = "SECS", help_heading = "Scheduling")]
    pub reschedule_interval: Option<u64>,
    /// Run the nine standard algorithm rows instead of a single configuration.
    #[arg(long, help_heading = "Scheduling")]
    pub sweep: bool,

    /// Output format [default: table].
    #[arg(long, value_parser = ["csv", "json", "table"], help_heading = "Output")]
    pub format: Option<String>,
    /// Write the report here instead of stdout.
    #[arg(long, value_name = "PATH", help_heading = "Output")]
    pub out: Option<PathBuf>,
}

macro_rules! overlay {
    ($top:ident, $base:ident; $($opt:ident),*; $($flag:ident),*) => {
        Settings {
            $($opt: $top.$opt.or($base.$opt),)*
            $($flag: $top.$flag || $base.$flag,)*
        }
    };
}

impl Settings {
    /// `self` wins wherever it has a value.
    pub fn over(self, base: Settings) -> Settings {
        overlay!(self, base;
            trace, trace_cutoff_days, seed, lease_count, vm_cpu, vm_mem, vm_disk, vm_bw,
            hosts, cores, mem_mb, disk_mb, host_bw, power, p_idle, p_max,
            algo, migration, low_threshold, high_threshold, capacity_check,
            suspend_rate, net_bandwidth, reschedule_interval, format, out;
            synthetic, count_resume_in_delay, sweep)
    }

    pub fn from_file(path: &Path) -> Result<Settings, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source: Box::new(source),
        })
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
    Table,
}

#[derive(Clone, Debug, PartialEq)]
pub enum WorkloadSource {
    Trace { path: PathBuf, cutoff_days: u64 },
    Synthetic { seed: u64, lease_count: usize },
}

/// A fully resolved invocation.
#[derive(Clone, Debug)]
pub struct Plan {
    pub configs: Vec<SimConfig>,
    pub workload: WorkloadSource,
    pub vm_spec: VmSpec,
    pub format: Format,
    pub out: Option<PathBuf>,
    pub warnings: Vec<String>,
}

fn bandwidth(
    flag: &'static str,
    raw: Option<&str>,
    default: Bandwidth,
) -> Result<Bandwidth, ConfigError> {
    raw.map_or(Ok(default), |s| s.parse().map_err(|e| invalid(flag, e)))
}

fn positive<T: PartialOrd + Default>(flag: &'static str, value: T) -> Result<T, ConfigError> {
    if value > T::default() {
        Ok(value)
    } else {
        Err(invalid(flag, "must be positive"))
    }
}

impl Plan {
    pub fn resolve(s: &Settings) -> Result<Plan, ConfigError> {
        let mut warnings = Vec::new();

        let workload = match (&s.trace, s.synthetic) {
            (Some(_), true) => return Err(ConfigError::TwoWorkloads),
            (None, false) => return Err(ConfigError::NoWorkload),
            (Some(path), false) => WorkloadSource::Trace {
                path: path.clone(),
                cutoff_days: positive("trace-cutoff-days", s.trace_cutoff_days.unwrap_or(30))?,
            },
            (None, true) => WorkloadSource::Synthetic {
                seed: s.seed.unwrap_or(0),
                lease_count: s.lease_count.unwrap_or(5108),
            },
        };
        if s.seed.is_some() && matches!(workload, WorkloadSource::Trace { .. }) {
            warnings.push("--seed only affects synthetic workloads".into());
        }

        let vm_spec = VmSpec::new(
            positive("vm-cpu", s.vm_cpu.unwrap_or(100))?,
            s.vm_mem.unwrap_or(1024),
            s.vm_disk.unwrap_or(4096),
            bandwidth("vm-bw", s.vm_bw.as_deref(), Bandwidth::ZERO)?,
        );

        let cores = positive("cores", s.cores.unwrap_or(16))?;
        let preset = match s.power.as_deref().unwrap_or("dl585") {
            "dl585" => PowerModel::dl585(),
            "dl785" => PowerModel::dl785(),
            other => return Err(invalid("power", format!("unknown preset `{other}`"))),
        };
        let power = PowerModel::new(
            s.p_idle.unwrap_or(preset.p_idle()),
            s.p_max.unwrap_or(preset.p_max()),
        )
        .map_err(|e| invalid("p-idle/--p-max", e))?;
        let defaults = HostSpec::with_cores(cores, power);
        let host_spec = HostSpec::new(
            cores * 100,
            s.mem_mb.unwrap_or(defaults.memory_mb),
            s.disk_mb.unwrap_or(defaults.disk_mb),
            bandwidth("host-bw", s.host_bw.as_deref(), defaults.bandwidth)?,
            power,
        )
        .map_err(|e| invalid("mem-mb/--disk-mb", e))?;

        let thresholds = Thresholds::new(
            s.low_threshold.unwrap_or(0.4),
            s.high_threshold.unwrap_or(0.8),
        )
        .map_err(|e| invalid("low-threshold/--high-threshold", e))?;
        let mut rates = MigrationRates::new(
            bandwidth(
                "suspend-rate",
                s.suspend_rate.as_deref(),
                Bandwidth::from_mbs(32),
            )?,
            bandwidth(
                "net-bandwidth",
                s.net_bandwidth.as_deref(),
                "100Mbps".parse().expect("valid"),
            )?,
        )
        .map_err(|e| invalid("suspend-rate/--net-bandwidth", e))?;
        rates.count_resume_in_delay = s.count_resume_in_delay;

        let order: HostOrder = s
            .algo
            .as_deref()
            .unwrap_or("ff-h2l")
            .parse()
            .map_err(|e| invalid("algo", e))?;
        let migration: MigrationMode = s
            .migration
            .as_deref()
            .unwrap_or("none")
            .parse()
            .map_err(|e| invalid("migration", e))?;
        let capacity_check = match s.capacity_check.as_deref().unwrap_or("aggregate") {
            "aggregate" => CapacityCheck::Aggregate,
            "pack" => CapacityCheck::Pack,
            other => {
                return Err(invalid(
                    "capacity-check",
                    format!("unknown check `{other}`"),
                ))
            }
        };
        let interval = positive("reschedule-interval", s.reschedule_interval.unwrap_or(3600))?;

        let thresholds_given = s.low_threshold.is_some() || s.high_threshold.is_some();
        if !s.sweep && migration == MigrationMode::None && thresholds_given {
            warnings.push("thresholds have no effect with --migration none".into());
        }
        if s.sweep && (s.algo.is_some() || s.migration.is_some() || thresholds_given) {
            warnings.push("--sweep uses its own algorithm rows; --algo, --migration and thresholds are ignored".into());
        }

        let mut base = SimConfig::new(
            positive("hosts", s.hosts.unwrap_or(1000))?,
            host_spec,
            order,
        );
        base.rates = rates;
        base.capacity_check = capacity_check;
        base.reschedule_interval = Millis::from_secs(interval);
        let configs = if s.sweep {
            standard_rows(&base)
        } else {
            vec![base.with_migration(migration, thresholds)]
        };

        let format = match s.format.as_deref().unwrap_or("table") {
            "csv" => Format::Csv,
            "json" => Format::Json,
            "table" => Format::Table,
            other => return Err(invalid("format", format!("unknown format `{other}`"))),
        };

        Ok(Plan {
            configs,
            workload,
            vm_spec,
            format,
            out: s.out.clone(),
            warnings,
        })
    }
}

/// The nine comparison rows: three plain heuristics, then PMIG and MIG with
/// low thresholds 0.5, 0.4 and 0.3 under a 0.8 high threshold.
pub fn standard_rows(base: &SimConfig) -> Vec<SimConfig> {
    let plain = |order| SimConfig {
        order,
        migration: MigrationMode::None,
        ..base.clone()
    };
    let mut rows = vec![
        plain(HostOrder::Npa),
        plain(HostOrder::H2L),
        plain(HostOrder::L2H),
    ];
    for mode in [MigrationMode::Pmig, MigrationMode::Mig] {
        for low in [50, 40, 30] {
            let th = Thresholds::from_percent(low, 80).expect("fixed thresholds are valid");
            rows.push(plain(HostOrder::H2L).with_migration(mode, th));
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Settings {
        let mut argv = vec!["leasim"];
        argv.extend_from_slice(args);
        Cli::try_parse_from(argv).unwrap().settings
    }

    #[test]
    fn table_two_row_two() {
        let s = parse(&[
            "--synthetic",
            "--hosts",
            "1000",
            "--cores",
            "16",
            "--power",
            "dl585",
            "--algo",
            "ff-h2l",
        ]);
        let plan = Plan::resolve(&s).unwrap();
        let cfg = &plan.configs[0];
        assert_eq!(cfg.host_count, 1000);
        assert_eq!(cfg.host_spec, HostSpec::dl585_16core());
        assert_eq!(cfg.order, HostOrder::H2L);
        assert_eq!(cfg.migration, MigrationMode::None);
        assert_eq!(cfg.label(), "FF-MAP-H2L");
    }

    #[test]
    fn inverted_thresholds_rejected() {
        let s = parse(&[
            "--synthetic",
            "--low-threshold",
            "0.8",
            "--high-threshold",
            "0.4",
        ]);
        assert!(matches!(
            Plan::resolve(&s),
            Err(ConfigError::Invalid { .. })
        ));
    }

    #[test]
    fn thresholds_without_migration_warn() {
        let s = parse(&["--synthetic", "--low-threshold", "0.3"]);
        let plan = Plan::resolve(&s).unwrap();
        assert_eq!(plan.warnings.len(), 1);
    }

    #[test]
    fn bare_bandwidth_rejected() {
        let s = parse(&["--synthetic", "--net-bandwidth", "100"]);
        assert!(Plan::resolve(&s).is_err());
        let s = parse(&["--synthetic", "--net-bandwidth", "100MBps"]);
        assert_eq!(
            Plan::resolve(&s).unwrap().configs[0].rates.network,
            Bandwidth::from_mbs(100)
        );
    }

    #[test]
    fn workload_must_be_chosen_once() {
        assert!(matches!(
            Plan::resolve(&parse(&[])),
            Err(ConfigError::NoWorkload)
        ));
        let s = parse(&["--synthetic", "--trace", "x.swf"]);
        assert!(matches!(Plan::resolve(&s), Err(ConfigError::TwoWorkloads)));
    }

    #[test]
    fn flags_override_file() {
        let file: Settings =
            toml::from_str("hosts = 20\ncores = 32\nsynthetic = true\nnet-bandwidth = \"1Gbps\"")
                .unwrap();
        let merged = parse(&["--hosts", "5"]).over(file);
        let plan = Plan::resolve(&merged).unwrap();
        assert_eq!(plan.configs[0].host_count, 5);
        assert_eq!(plan.configs[0].host_spec.cpu_capacity, 3200);
        assert_eq!(plan.configs[0].rates.network, Bandwidth::from_mbs(125));
    }

    #[test]
    fn unknown_file_key_rejected() {
        assert!(toml::from_str::<Settings>("hostz = 3").is_err());
    }

    #[test]
    fn sweep_has_nine_labelled_rows() {
        let plan = Plan::resolve(&parse(&["--synthetic", "--sweep"])).unwrap();
        let labels: Vec<String> = plan.configs.iter().map(|c| c.label()).collect();
        assert_eq!(
            labels,
            [
                "NPA Greedy",
                "FF-MAP-H2L",
                "FF-MAP-L2H",
                "PMIG-L50H80-FF-MAP-H2L",
                "PMIG-L40H80-FF-MAP-H2L",
                "PMIG-L30H80-FF-MAP-H2L",
                "MIG-L50H80-FF-MAP-H2L",
                "MIG-L40H80-FF-MAP-H2L",
                "MIG-L30H80-FF-MAP-H2L",
            ]
        );
    }

    #[test]
    fn power_overrides() {
        let s = parse(&["--synthetic", "--power", "dl785", "--p-idle", "0"]);
        let plan = Plan::resolve(&s).unwrap();
        assert_eq!(
            plan.configs[0].host_spec.power,
            PowerModel::new(0.0, 799.0).unwrap()
        );
    }
}
