//! Batch front-end: simulates a system under a scenario and writes
//! trajectories or a diagnosis report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::Value;

use qssdiag::dae::{DiscreteState, HybridModel, PartitionedState, PowerModel, VariableNames};
use qssdiag::diagnose::{diagnose, AuditRecord};
use qssdiag::netmodel::{parse_scenario, parse_system, validate_scenario, ScenarioSpec};
use qssdiag::sim::{run_complete, run_qss_with_handoff, EventMarker, SimConfig, Termination, Trajectory};
use qssdiag::solvers::initialize_equilibrium;

#[derive(Debug, Parser)]
#[command(
    name = "qssdiag",
    version,
    about = "Complete and QSS power-system simulation with failure diagnosis"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the complete and/or QSS model.
    Run(RunArgs),
    /// Run both models, compare them and audit every discrete event.
    Diagnose(CommonArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelChoice {
    Complete,
    Qss,
    Both,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub system: PathBuf,
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Fixed step in seconds, replacing both default step regimes.
    #[arg(long, allow_negative_numbers = true)]
    pub step: Option<f64>,
    /// Hand-off time from the complete to the QSS model.
    #[arg(long, allow_negative_numbers = true)]
    pub qss_start: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_enum, default_value_t = ModelChoice::Both)]
    pub model: ModelChoice,
}

/// Parses arguments and dispatches; returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Diagnose(a) => cmd_diagnose(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

struct Inputs {
    model: PowerModel,
    initial: PartitionedState,
    scenario: ScenarioSpec,
    cfg: SimConfig,
}

fn load(a: &CommonArgs) -> Result<Inputs> {
    if let Some(h) = a.step {
        if !(h > 0.0 && h.is_finite()) {
            bail!("step must be positive (got {h})");
        }
    }
    let read = |p: &Path, what: &str| fs::read(p).with_context(|| format!("cannot read {what} file {}", p.display()));
    let sys_text = read(&a.system, "system")?;
    let sys = parse_system(&sys_text).with_context(|| format!("invalid system file {}", a.system.display()))?;
    let sc_text = read(&a.scenario, "scenario")?;
    let mut scenario =
        parse_scenario(&sc_text).with_context(|| format!("invalid scenario file {}", a.scenario.display()))?;
    if let Some(q) = a.qss_start {
        scenario.qss_start = Some(q);
    }
    validate_scenario(&sys, &scenario).with_context(|| format!("invalid scenario file {}", a.scenario.display()))?;
    let (model, initial) = initialize_equilibrium(&sys)
        .with_context(|| format!("cannot initialize system file {}", a.system.display()))?;
    let cfg = match a.step {
        Some(h) => SimConfig::uniform(h),
        None => SimConfig::default(),
    };
    Ok(Inputs {
        model,
        initial,
        scenario,
        cfg,
    })
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))
}

fn write(path: PathBuf, text: &str) -> Result<()> {
    fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))
}

/// Header and one row per accepted sample; floats carry 17 significant digits.
pub fn trajectory_csv(names: &VariableNames, traj: &Trajectory) -> String {
    let mut out = String::from("t");
    for n in names.continuous().iter().chain(&names.zd) {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for s in &traj.samples {
        let _ = write!(out, "{:.16e}", s.t);
        for v in s.continuous().iter().chain(s.zd.values().iter()) {
            let _ = write!(out, ",{v:.16e}");
        }
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
struct TerminationReport {
    kind: &'static str,
    t: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    newton_status: Option<String>,
}

#[derive(Serialize)]
struct EventReport {
    t: f64,
    kind: &'static str,
    description: String,
}

#[derive(Serialize)]
struct RunReport {
    termination: TerminationReport,
    t_start: f64,
    t_final: f64,
    accepted_steps: usize,
    events: Vec<EventReport>,
}

fn termination_report(traj: &Trajectory) -> TerminationReport {
    let (t, status) = match &traj.termination {
        Termination::SingularityLikely { t, status } => (*t, status.map(|s| format!("{s:?}"))),
        Termination::Diverged { t } => (*t, None),
        _ => (traj.t_final(), None),
    };
    TerminationReport {
        kind: traj.termination.label(),
        t,
        newton_status: status,
    }
}

fn levels(zd: &DiscreteState, names: &VariableNames) -> String {
    names
        .zd
        .iter()
        .zip(zd.values())
        .map(|(n, v)| format!("{n}={v}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn run_report(traj: &Trajectory, names: &VariableNames) -> RunReport {
    let events = traj
        .events
        .iter()
        .map(|e| match &e.marker {
            EventMarker::Scenario { description } => EventReport {
                t: e.t,
                kind: "Scenario",
                description: description.clone(),
            },
            EventMarker::DiscreteChange { before, after } => EventReport {
                t: e.t,
                kind: "DiscreteChange",
                description: format!("{} -> {}", levels(before, names), levels(after, names)),
            },
            EventMarker::Handoff => EventReport {
                t: e.t,
                kind: "Handoff",
                description: "complete -> qss".into(),
            },
        })
        .collect();
    RunReport {
        termination: termination_report(traj),
        t_start: traj.t_start(),
        t_final: traj.t_final(),
        accepted_steps: traj.samples.len().saturating_sub(1),
        events,
    }
}

fn config_json(cfg: &SimConfig) -> Value {
    serde_json::json!({
        "h_transient": cfg.h_transient,
        "h_long": cfg.h_long,
        "transient_window": cfg.transient_window,
        "manifold_tol": cfg.manifold_tol,
        "sep_tol": cfg.sep_tol,
        "max_state_norm": cfg.max_state_norm,
    })
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report is serializable");
    s.push('\n');
    s
}

/// Writes `complete.csv` and/or `qss.csv` plus `run.json`.
pub fn cmd_run(args: &RunArgs) -> Result<()> {
    let inp = load(&args.common)?;
    let (m, sc, cfg, x0) = (&inp.model, &inp.scenario, &inp.cfg, &inp.initial);
    let want_c = args.model != ModelChoice::Qss;
    let want_q = args.model != ModelChoice::Complete;
    let (traj_c, traj_q) = std::thread::scope(|s| {
        let c = want_c.then(|| s.spawn(|| run_complete(m, sc, cfg, x0)));
        let q = want_q.then(|| run_qss_with_handoff(m, sc, cfg, x0));
        (c.map(|h| h.join().expect("complete-model thread panicked")), q)
    });

    create_out(&args.common.out)?;
    let names = m.names();
    let mut report = BTreeMap::new();
    if let Some(t) = &traj_c {
        write(args.common.out.join("complete.csv"), &trajectory_csv(&names, t))?;
        report.insert("complete", serde_json::to_value(run_report(t, &names))?);
    }
    if let Some(t) = &traj_q {
        write(args.common.out.join("qss.csv"), &trajectory_csv(&names, t))?;
        report.insert("qss", serde_json::to_value(run_report(t, &names))?);
    }
    report.insert("config", config_json(cfg));
    write(args.common.out.join("run.json"), &to_json(&report))
}

fn named_state(names: &VariableNames, s: &PartitionedState) -> BTreeMap<String, f64> {
    names
        .continuous()
        .into_iter()
        .zip(s.continuous().iter().copied())
        .chain(names.zd.iter().cloned().zip(s.zd.values()))
        .collect()
}

#[derive(Serialize)]
struct DiagnosisJson<'a> {
    verdict: String,
    max_deviation: BTreeMap<String, f64>,
    audits: &'a [AuditRecord],
    sep_complete: Option<BTreeMap<String, f64>>,
    sep_qss: Option<BTreeMap<String, f64>>,
    complete: RunReport,
    qss: RunReport,
}

/// Writes `diagnosis.json`.
pub fn cmd_diagnose(args: &CommonArgs) -> Result<()> {
    let inp = load(args)?;
    let (rep, traj_c, traj_q) = diagnose(&inp.model, &inp.scenario, &inp.cfg, &inp.initial);
    create_out(&args.out)?;
    let names = inp.model.names();
    let out = DiagnosisJson {
        verdict: format!("{:?}", rep.verdict),
        max_deviation: names
            .continuous()
            .into_iter()
            .zip(rep.max_deviation.iter().copied())
            .collect(),
        audits: &rep.audits,
        sep_complete: rep.sep_complete.as_ref().map(|s| named_state(&names, s)),
        sep_qss: rep.sep_qss.as_ref().map(|s| named_state(&names, s)),
        complete: run_report(&traj_c, &names),
        qss: run_report(&traj_q, &names),
    };
    write(args.out.join("diagnosis.json"), &to_json(&out))
}
