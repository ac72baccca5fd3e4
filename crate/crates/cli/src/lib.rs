//! Command-line front end: settings, sweeps and report output.

pub mod config;
pub mod report;
pub mod sweep;

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};

use clap::Parser;

use config::{Cli, Plan, Settings};

/// Exit code for bad flags or settings, matching clap's own.
pub const EXIT_USAGE: i32 = 2;
/// Exit code when at least one sweep row failed.
pub const EXIT_ROW_FAILED: i32 = 1;

/// Runs the CLI against `args` (including the program name), writing the
/// report to stdout unless `--out` is given. Returns the process exit code.
pub fn main_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    if args.len() <= 1 {
        let mut cmd = <Cli as clap::CommandFactory>::command();
        let _ = write!(stderr, "{}", cmd.render_usage());
        let _ = writeln!(stderr, "\n\nFor more information, try '--help'.");
        return EXIT_USAGE;
    }
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let sink: &mut dyn Write = if e.use_stderr() { stderr } else { stdout };
            let _ = write!(sink, "{text}");
            return code;
        }
    };

    let settings = match &cli.config {
        Some(path) => match Settings::from_file(path) {
            Ok(file) => cli.settings.over(file),
            Err(e) => return usage(stderr, e),
        },
        None => cli.settings,
    };
    let plan = match Plan::resolve(&settings) {
        Ok(p) => p,
        Err(e) => return usage(stderr, e),
    };
    for w in &plan.warnings {
        let _ = writeln!(stderr, "warning: {w}");
    }

    let workload = match sweep::load_workload(&plan.workload, plan.vm_spec) {
        Ok(w) => w,
        Err(e) => return usage(stderr, e),
    };
    let rows = sweep::run_sweep(&plan.configs, &workload);

    let written = match &plan.out {
        Some(path) => File::create(path).and_then(|f| {
            let mut w = BufWriter::new(f);
            report::emit_report(&rows, plan.format, &mut w)?;
            w.flush()
        }),
        None => report::emit_report(&rows, plan.format, &mut *stdout),
    };
    if let Err(e) = written {
        let _ = writeln!(stderr, "error: writing report: {e}");
        return EXIT_ROW_FAILED;
    }

    let failed = rows.iter().filter(|r| !r.succeeded()).count();
    if failed > 0 {
        let _ = writeln!(stderr, "error: {failed} of {} rows failed", rows.len());
        return EXIT_ROW_FAILED;
    }
    0
}

fn usage(stderr: &mut dyn Write, e: impl std::fmt::Display) -> i32 {
    let _ = writeln!(stderr, "error: {e}");
    EXIT_USAGE
}

/// Entry point for the binary.
pub fn main() -> i32 {
    let stdout = io::stdout();
    let stderr = io::stderr();
    main_with(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}
