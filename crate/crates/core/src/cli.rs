//! Command-line front end. Exit status: 0 success, 1 configuration or input
//! error, 2 numerical failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::estimation::report_json;
use crate::harness::{
    analytics_table, default_params, run_point, run_scenario, setup_point, OutputFormat,
    ProbeSettings, Protocol, ScenarioConfig, SweepOptions, CSV_HEADER,
};
use crate::physics::ParameterSet;
use crate::sim::dump::{self, DumpMeta, RecordDump};
use crate::sim::moments::ground_reference;

#[derive(Debug, Parser)]
#[command(
    name = "strobe",
    version,
    about = "Stroboscopic spin-oscillator measurement: predictions, simulation, estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print closed-form quantities for a duty cycle and measurement strength.
    Analytics(AnalyticsArgs),
    /// Run one protocol at a single point.
    Simulate(SimulateArgs),
    /// Run a scenario sweep from a config file.
    Sweep(SweepArgs),
    /// Squeezing report from a record dump.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Base seed; trajectory i uses stream i of this seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of trajectories.
    #[arg(long)]
    traj: Option<usize>,
    /// Output path (directory for `sweep`, file otherwise).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<OutputFormat>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Debug, Args)]
struct AnalyticsArgs {
    #[arg(long, default_value_t = 0.15)]
    duty: f64,
    /// κ̃².
    #[arg(long, default_value_t = 3.0)]
    kappa2: f64,
    /// Physics parameter file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: OutputFormat,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Scenario file supplying parameters and probe settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_protocol)]
    protocol: Option<Protocol>,
    /// Value of the scenario's sweep variable.
    #[arg(long)]
    value: Option<f64>,
    #[arg(long)]
    duty: Option<f64>,
    /// κ̃² of the (second) pulse.
    #[arg(long)]
    kappa2: Option<f64>,
    /// Write per-cycle records to this binary dump.
    #[arg(long)]
    dump: Option<PathBuf>,
    /// Report wall-clock runtime.
    #[arg(long)]
    timing: bool,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    timing: bool,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    dump: PathBuf,
    /// Ground-state oscillator noise; taken from the dump metadata when absent.
    #[arg(long)]
    ground_ref: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 400)]
    bootstrap: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: OutputFormat,
}

fn parse_protocol(s: &str) -> std::result::Result<Protocol, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| {
        "expected one of single_pulse_noise, back_action_sweep, two_pulse_squeezing, thermal_calibration".to_string()
    })
}

/// Parse `args` (program name first), run, and return the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                1
            } else {
                2
            }
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Analytics(a) => analytics(a),
        Command::Simulate(a) => with_threads(a.common.jobs, || simulate(a)),
        Command::Sweep(a) => with_threads(a.common.jobs, || sweep(a)),
        Command::Report(a) => report(a),
    }
}

fn with_threads<F: FnOnce() -> Result<()> + Send>(jobs: usize, f: F) -> Result<()> {
    if jobs == 0 {
        return Err(Error::config("--jobs", "must be >= 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Range(e.to_string()))?
        .install(f)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn analytics(a: AnalyticsArgs) -> Result<()> {
    let params = match &a.config {
        Some(p) => ParameterSet::load(p).map_err(|e| Error::config("--config", e.to_string()))?,
        None => default_params()?,
    };
    let table = analytics_table(&params, a.duty, a.kappa2)?;
    let text = match a.format {
        OutputFormat::Csv => table
            .iter()
            .map(|(k, v)| format!("{k},{v:?}\n"))
            .collect::<String>(),
        OutputFormat::Json => {
            let map: serde_json::Map<String, serde_json::Value> = table
                .iter()
                .map(|(k, v)| (k.to_string(), serde_json::Value::from(*v)))
                .collect();
            serde_json::to_string_pretty(&map)? + "\n"
        }
    };
    emit(None, &text)
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let (protocol, base, mut probe, mut n_traj, mut seed, sweep_var) = match &a.config {
        Some(path) => {
            let cfg = ScenarioConfig::load(path)?;
            let base = cfg.base_params()?;
            (
                cfg.protocol,
                base,
                cfg.probe,
                cfg.n_traj,
                cfg.base_seed,
                Some(cfg.sweep.variable),
            )
        }
        None => (
            Protocol::TwoPulseSqueezing,
            default_params()?,
            ProbeSettings {
                kappa_tilde_sq: Some(3.0),
                ..ProbeSettings::default()
            },
            10_000,
            0,
            None,
        ),
    };
    let protocol = a.protocol.unwrap_or(protocol);
    let mut params = base.clone();
    if let Some(v) = a.value {
        let key = sweep_var.ok_or_else(|| Error::config("--value", "needs a scenario --config"))?;
        if ParameterSet::KEYS.contains(&key.as_str()) {
            params.set(&key, v)?;
        } else {
            probe.set(&key, v)?;
        }
    }
    if let Some(d) = a.duty {
        probe.duty = d;
    }
    if let Some(k) = a.kappa2 {
        probe.kappa_tilde_sq = Some(k);
    }
    n_traj = a.common.traj.unwrap_or(n_traj);
    seed = a.common.seed.unwrap_or(seed);
    if n_traj < 2 {
        return Err(Error::config("--traj", "need at least 2 trajectories"));
    }

    let setup = setup_point(protocol, &base, &params, &probe)?;
    let pr = run_point(
        protocol,
        setup,
        n_traj,
        seed,
        probe.bootstrap,
        a.dump.is_some(),
    )?;
    let mut row = pr.row;
    row.sweep_value = a.value.unwrap_or(f64::NAN);
    if !a.timing {
        row.runtime_s = 0.0;
    }

    if let Some(path) = &a.dump {
        let s = &pr.setup;
        let ref_schedule = if s.schedule.tau_b > 0.0 {
            s.schedule
        } else {
            crate::sim::PulseSchedule {
                tau_b: s.schedule.tau_a,
                ..s.schedule
            }
        };
        let ground = ground_reference(&ref_schedule, &s.coupling, &s.ensemble, s.jx0, &s.mode_b)?;
        let data = pr
            .run
            .records
            .iter()
            .flat_map(|r| r.per_cycle.clone().unwrap_or_default())
            .collect();
        let psn_b = if pr.psn_b.0.is_nan() {
            pr.psn_a.0
        } else {
            pr.psn_b.0
        };
        dump::write(
            path,
            &RecordDump {
                cycles: pr.run.cycles_a + pr.run.cycles_b,
                data,
                meta: DumpMeta {
                    split: pr.run.cycles_a,
                    psn_a: pr.psn_a.0,
                    psn_b,
                    f_d: pr.run.f_d,
                    ground_ref: ground,
                    seed,
                },
            },
        )?;
    }

    let text = match a.common.format.unwrap_or(OutputFormat::Json) {
        OutputFormat::Csv => format!("{CSV_HEADER}\n{}\n", row.csv_line()),
        OutputFormat::Json => serde_json::to_string_pretty(&row)? + "\n",
    };
    emit(a.common.out.as_deref(), &text)
}

fn sweep(a: SweepArgs) -> Result<()> {
    let mut cfg = ScenarioConfig::load(&a.config)?;
    if let Some(s) = a.common.seed {
        cfg.base_seed = s;
    }
    if let Some(t) = a.common.traj {
        cfg.n_traj = t;
    }
    if let Some(o) = a.common.out {
        cfg.outputs = o;
    }
    let opts = SweepOptions {
        jobs: a.common.jobs,
        timing: a.timing,
        format: a.common.format.unwrap_or(OutputFormat::Csv),
    };
    let rows = run_scenario(&cfg, opts)?;
    let failed = rows.iter().filter(|r| !r.is_ok()).count();
    if failed > 0 {
        return Err(Error::Range(format!(
            "{failed} of {} sweep points failed",
            rows.len()
        )));
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let d = dump::read(&a.dump)?;
    if d.n_traj() < 2 {
        return Err(Error::Format(format!(
            "{} holds {} trajectories; need at least 2",
            a.dump.display(),
            d.n_traj()
        )));
    }
    if d.meta.split == 0 || d.meta.split >= d.cycles {
        return Err(Error::Format(
            "dump has no second pulse to condition".into(),
        ));
    }
    let (qa, qb) = d.pulse_sums();
    let records =
        crate::estimation::RecordEnsemble::new(qa, qb, d.meta.psn_a, d.meta.psn_b, d.meta.f_d)?;
    let ground = a.ground_ref.unwrap_or(d.meta.ground_ref);
    let r = report_json(&records, ground, a.bootstrap, a.seed)?;
    let text = match a.format {
        OutputFormat::Json => serde_json::to_string_pretty(&r)? + "\n",
        OutputFormat::Csv => {
            let v = serde_json::to_value(r)?;
            let obj = v.as_object().expect("report serializes to an object");
            let keys: Vec<&str> = obj.keys().map(String::as_str).collect();
            let vals: Vec<String> = obj.values().map(|x| x.to_string()).collect();
            format!("{}\n{}\n", keys.join(","), vals.join(","))
        }
    };
    emit(a.out.as_deref(), &text)
}
