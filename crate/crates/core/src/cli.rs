//! The `cellfree` command-line front end.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{load, AxisName, Scale, SimConfig};
use crate::error::{Error, Result};
use crate::exec::with_workers;
use crate::harness::{invariant_checks, persist, run_sweep, write_atomic, RunManifest, SweepTable};

#[derive(Debug, Parser)]
#[command(
    name = "cellfree",
    version,
    about = "Robust MMSE precoding experiments for cell-free MU-MIMO"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate a single (sigma_e, snr_db) point.
    Run(Common),
    /// Sweep the SNR axis (sum-rate versus SNR).
    SweepSnr(Common),
    /// Sweep the CSIT error level (sum-rate versus sigma_e).
    SweepSigma(Common),
    /// Run the built-in invariant suite and print PASS/FAIL per check.
    Check(Common),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScaleArg {
    Desk,
    Paper,
}

impl From<ScaleArg> for Scale {
    fn from(s: ScaleArg) -> Self {
        match s {
            ScaleArg::Desk => Scale::Desk,
            ScaleArg::Paper => Scale::Paper,
        }
    }
}

#[derive(Debug, Args)]
struct Common {
    /// TOML recipe layered over the scale preset.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed; overrides the recipe.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory receiving CSV, manifest and series files.
    #[arg(long, value_name = "DIR", default_value = "results")]
    output_dir: PathBuf,
    /// Maximum number of worker threads.
    #[arg(long)]
    workers: Option<usize>,
    /// Size preset the recipe is applied to.
    #[arg(long, value_enum, default_value = "desk")]
    scale: ScaleArg,
    /// Dotted `key=value` overrides, applied last.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn resolve(&self) -> Result<SimConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("seed={seed}"));
        }
        load(self.scale.into(), self.config.as_deref(), &overrides)
    }
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code: 0 on success, 2 for usage or
/// configuration errors, 3 for numerical failures, 4 for I/O errors.
pub fn parse_and_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.category() as i32
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    let (name, common) = match &command {
        Command::Run(c) => ("run", c),
        Command::SweepSnr(c) => ("sweep-snr", c),
        Command::SweepSigma(c) => ("sweep-sigma", c),
        Command::Check(c) => ("check", c),
    };
    let cfg = common.resolve()?;
    eprintln!("# effective configuration (hash {})", cfg.hash());
    eprint!("{}", cfg.to_toml()?);

    if let Command::Check(_) = command {
        return with_workers(common.workers, || check(&cfg));
    }

    let axis = match command {
        Command::SweepSigma(_) => AxisName::SigmaE,
        Command::Run(_) => {
            if let Some(axis) = cfg.swept_axis() {
                return Err(Error::Config(format!(
                    "`run` needs scalar values, but {axis} is a list"
                )));
            }
            AxisName::SnrDb
        }
        _ => AxisName::SnrDb,
    };
    let started = Instant::now();
    let table = with_workers(common.workers, || run_sweep(&cfg, axis))?;
    let manifest = RunManifest::new(name, &cfg, table, started)?;
    let stem = name.replace('-', "_");
    std::fs::create_dir_all(&common.output_dir).map_err(|e| Error::io(&common.output_dir, e))?;
    let written = persist(&manifest, &common.output_dir, &stem)?;
    print!("{}", summary(&manifest.table));
    eprintln!("wrote {}", written.csv.display());
    eprintln!("wrote {}", written.manifest.display());
    if name != "run" {
        for path in emit_plot_data(&manifest.table, &common.output_dir, &stem)? {
            eprintln!("wrote {}", path.display());
        }
    }
    Ok(0)
}

fn check(cfg: &SimConfig) -> Result<i32> {
    let outcomes = invariant_checks(cfg)?;
    let mut failed = 0;
    for o in &outcomes {
        println!(
            "{} {} ({})",
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            o.detail
        );
        failed += usize::from(!o.passed);
    }
    println!(
        "{} of {} checks passed",
        outcomes.len() - failed,
        outcomes.len()
    );
    Ok(if failed == 0 { 0 } else { 3 })
}

fn summary(table: &SweepTable) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>10}  {:<11} {:>10} {:>9}",
        table.axis.as_str(),
        "scheme",
        "esr",
        "ci95"
    );
    for row in table.rows() {
        let _ = writeln!(
            out,
            "{:>10.4}  {:<11} {:>10.4} {:>9.4}",
            row.axis_value, row.scheme, row.esr_bits_per_hz, row.ci95_halfwidth
        );
    }
    out
}

/// Writes one whitespace-delimited series per scheme,
/// `<dir>/<stem>_<scheme>.dat`, with rows `axis_value esr ci95_halfwidth`
/// in ascending axis order.
pub fn emit_plot_data(table: &SweepTable, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    if table.points.is_empty() {
        return Err(Error::Domain(
            "cannot emit plot data for an empty table".into(),
        ));
    }
    let mut paths = Vec::new();
    for scheme in table.schemes() {
        let mut series = table.series(scheme);
        series.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut text = String::new();
        let _ = writeln!(text, "# seed={}", table.seed);
        let _ = writeln!(text, "# config_hash={}", table.config_hash);
        let _ = writeln!(text, "# scheme={scheme}");
        let _ = writeln!(
            text,
            "# {} esr_bits_per_hz ci95_halfwidth",
            table.axis.as_str()
        );
        for (x, report) in series {
            let _ = writeln!(text, "{x} {} {}", report.esr, report.ci_halfwidth);
        }
        let path = dir.join(format!("{stem}_{}.dat", scheme.label()));
        write_atomic(&path, text.as_bytes())?;
        paths.push(path);
    }
    Ok(paths)
}
