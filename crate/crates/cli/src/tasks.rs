//! Task implementations. Every data file is a pure function of the config.

use std::fmt::Write as _;

use fwmeta::exit::{self, BasinOracle, Certificate, ExitConfig, ExitRecord, ScalingReport, ShapeReport};
use fwmeta::grid::{build_operator, GridSpec, OperatorDisc};
use fwmeta::model::{validate_assumptions, ValidationReport};
use fwmeta::quasipotential::{
    self, boundary_quasipotential, find_equilibria, BoundaryReport, ConstraintMode, Equilibrium, EquilibriumSearch,
    HorizonSchedule, MamProblem, QuasipotentialResult, Termination,
};
use fwmeta::sim::{integrate_flow, integrate_spde, Flow};
use fwmeta::{Field, ModelSpec, NoiseStream, SimConfig};
use serde::{Deserialize, Serialize};

use crate::config::{explicit_state, sha256_hex, ExperimentConfig, LoadedConfig, StateSpec};
use crate::output::{self, csv_header, fields_csv, path_csv, records_csv, OutputDir};
use crate::CliError;

pub const DEFAULT_DELTA: f64 = 0.5;
/// Saddles whose `V(x*, ·)` is within this relative distance of the minimum
/// all count as targets.
pub const TARGET_TOLERANCE: f64 = 0.01;

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    hash: &'a str,
    model: ModelSpec,
    grid: GridSpec,
    op: OperatorDisc,
    equilibria: Option<EquilibriumSearch>,
}

impl<'a> Context<'a> {
    fn new(loaded: &'a LoadedConfig) -> Result<Self, CliError> {
        let cfg = &loaded.config;
        let model = cfg.model_spec();
        let grid = cfg.grid_spec()?;
        let op = build_operator(&model, &grid)?;
        Ok(Self {
            cfg,
            hash: &loaded.hash,
            model,
            grid,
            op,
            equilibria: None,
        })
    }

    fn seeds(&self) -> Vec<Field> {
        let default = vec![
            StateSpec::Label("zero".into()),
            StateSpec::Sine { mode: 1, amplitude: 1.0 },
            StateSpec::Sine { mode: 1, amplitude: -1.0 },
        ];
        self.cfg
            .task
            .seeds
            .as_ref()
            .unwrap_or(&default)
            .iter()
            .map(|s| explicit_state(s, self.grid).expect("seeds validated"))
            .collect()
    }

    fn equilibria(&mut self) -> Result<&EquilibriumSearch, CliError> {
        if self.equilibria.is_none() {
            self.equilibria = Some(find_equilibria(&self.model, &self.op, &self.seeds())?);
        }
        Ok(self.equilibria.as_ref().expect("set above"))
    }

    fn equilibrium(&mut self, field: &str, label: &str) -> Result<Equilibrium, CliError> {
        let found = self.equilibria()?;
        found
            .equilibria
            .iter()
            .find(|e| e.label == label)
            .cloned()
            .ok_or_else(|| CliError::Config {
                field: field.into(),
                message: format!(
                    "no equilibrium `{label}`; found {}",
                    found.equilibria.iter().map(|e| e.label.as_str()).collect::<Vec<_>>().join(", ")
                ),
            })
    }

    fn state(&mut self, field: &str, spec: Option<&StateSpec>, default: StateSpec) -> Result<Field, CliError> {
        let spec = spec.cloned().unwrap_or(default);
        match explicit_state(&spec, self.grid) {
            Some(f) => Ok(f),
            None => match spec {
                StateSpec::Label(l) => Ok(self.equilibrium(field, &l)?.state),
                StateSpec::Sine { .. } => unreachable!("sine states are explicit"),
            },
        }
    }

    fn sim_config(&self, epsilon: f64) -> SimConfig {
        let mut c = SimConfig::new(self.cfg.dt(&self.grid), self.cfg.sim.t_max, epsilon);
        c.observer_stride = self.cfg.sim.observer_stride as usize;
        c
    }

    fn schedule(&self) -> HorizonSchedule {
        let t = &self.cfg.task;
        let d = HorizonSchedule::default();
        HorizonSchedule {
            horizons: t.horizons.clone().unwrap_or(d.horizons),
            path_points: t.path_points.map_or(d.path_points, |v| v as usize),
            penalty_weight: t.penalty_weight.unwrap_or(d.penalty_weight),
            max_iterations: t.max_iterations.map_or(d.max_iterations, |v| v as usize),
            gradient_tolerance: t.gradient_tolerance.unwrap_or(d.gradient_tolerance),
        }
    }
}

fn endpoints_hash(x: &Field, y: &Field) -> String {
    let bytes: Vec<u8> = x
        .values()
        .iter()
        .chain(y.values())
        .flat_map(|v| v.to_le_bytes())
        .collect();
    sha256_hex(&bytes)[..16].to_string()
}

pub fn run_task(loaded: &LoadedConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let name = loaded.config.task.name.as_str();
    if name == "report" {
        return report(loaded, out);
    }
    let mut ctx = Context::new(loaded)?;
    match name {
        "simulate" => simulate(&mut ctx, out),
        "flow" => flow(&mut ctx, out),
        "equilibria" => equilibria(&mut ctx, out),
        "mam" => mam(&mut ctx, out),
        "quasipotential" => quasipotential_task(&mut ctx, out),
        "exit-mc" => exit_task(&mut ctx, out, false),
        "exit-shape" => exit_task(&mut ctx, out, true),
        "validate" => validate(&mut ctx, out),
        other => unreachable!("task `{other}` passed validation"),
    }
}

#[derive(Serialize)]
struct SimulateLevel {
    epsilon: f64,
    samples: usize,
    blowups: usize,
    mean_final_sup: f64,
    max_final_sup: f64,
    mean_final_h: f64,
}

#[derive(Serialize)]
struct SimulateReport<'a> {
    config_hash: &'a str,
    dt: f64,
    t_max: f64,
    seed: u64,
    levels: Vec<SimulateLevel>,
}

fn simulate(ctx: &mut Context, out: &mut OutputDir) -> Result<(), CliError> {
    use rayon::prelude::*;
    let x0 = ctx.state("task.initial", ctx.cfg.task.initial.as_ref(), StateSpec::Label("zero".into()))?;
    let root = NoiseStream::new(ctx.cfg.sim.seed);
    let n = ctx.cfg.sim.n_samples as usize;
    let mut levels = Vec::new();
    let mut finals = csv_header(ctx.hash, &["epsilon", "trajectory", "final_sup", "final_h", "blowup"]);
    for (k, &eps) in ctx.cfg.sim.epsilon.iter().enumerate() {
        let cfg = ctx.sim_config(eps);
        let (model, op) = (&ctx.model, &ctx.op);
        let runs: Vec<Result<Option<fwmeta::path::TrajectoryPath>, CliError>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut stream = exit::trajectory_stream(&root, k, i);
                match integrate_spde(&x0, model, op, &cfg, &mut stream, |_, _| Flow::Continue) {
                    Ok(p) => Ok(Some(p)),
                    Err(fwmeta::Error::BlowUp { .. }) => Ok(None),
                    Err(e) => Err(e.into()),
                }
            })
            .collect();
        let mut sups = Vec::new();
        let mut hs = Vec::new();
        let mut blowups = 0;
        for (i, r) in runs.into_iter().enumerate() {
            match r? {
                Some(path) => {
                    let last = path.last();
                    let _ = writeln!(finals, "{eps},{i},{},{},false", last.sup_norm(), last.h_norm());
                    sups.push(last.sup_norm());
                    hs.push(last.h_norm());
                    if i == 0 {
                        out.csv(&format!("simulate_path_{k}.csv"), &path_csv(ctx.hash, &path))?;
                    }
                }
                None => {
                    blowups += 1;
                    let _ = writeln!(finals, "{eps},{i},inf,inf,true");
                }
            }
        }
        let mean = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
        levels.push(SimulateLevel {
            epsilon: eps,
            samples: n,
            blowups,
            mean_final_sup: mean(&sups),
            max_final_sup: sups.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean_final_h: mean(&hs),
        });
    }
    out.csv("plot_final_norms.csv", &finals)?;
    out.json(
        "simulate.json",
        &SimulateReport {
            config_hash: ctx.hash,
            dt: ctx.cfg.dt(&ctx.grid),
            t_max: ctx.cfg.sim.t_max,
            seed: ctx.cfg.sim.seed,
            levels,
        },
    )
}

#[derive(Serialize)]
struct FlowReport<'a> {
    config_hash: &'a str,
    dt: f64,
    t_max: f64,
    steps: usize,
    final_sup: f64,
    final_h: f64,
    initial_sup: f64,
}

fn flow(ctx: &mut Context, out: &mut OutputDir) -> Result<(), CliError> {
    let x0 = ctx.state("task.initial", ctx.cfg.task.initial.as_ref(), StateSpec::Sine { mode: 1, amplitude: 0.1 })?;
    let cfg = ctx.sim_config(0.0);
    let path = integrate_flow(&x0, &ctx.model, &ctx.op, &cfg)?;
    out.csv("flow.csv", &path_csv(ctx.hash, &path))?;
    out.json(
        "flow.json",
        &FlowReport {
            config_hash: ctx.hash,
            dt: cfg.dt,
            t_max: cfg.t_max,
            steps: cfg.steps(),
            final_sup: path.last().sup_norm(),
            final_h: path.last().h_norm(),
            initial_sup: x0.sup_norm(),
        },
    )
}

#[derive(Serialize)]
struct EquilibriaReport<'a> {
    config_hash: &'a str,
    unstable_threshold: f64,
    dedup_distance: f64,
    equilibria: Vec<EquilibriumSummary>,
    failures: &'a [quasipotential::SeedFailure],
}

#[derive(Serialize)]
struct EquilibriumSummary {
    label: String,
    residual: f64,
    unstable_count: usize,
    leading_eigenvalues: Vec<f64>,
    sup_norm: f64,
    newton_iterations: usize,
}

fn equilibria(ctx: &mut Context, out: &mut OutputDir) -> Result<(), CliError> {
    let hash = ctx.hash;
    let found = ctx.equilibria()?.clone();
    let labels: Vec<String> = found.equilibria.iter().map(|e| e.label.clone()).collect();
    let states: Vec<&Field> = found.equilibria.iter().map(|e| &e.state).collect();
    out.csv("equilibria.csv", &fields_csv(hash, &labels, &states))?;
    out.json(
        "equilibria.json",
        &EquilibriaReport {
            config_hash: hash,
            unstable_threshold: quasipotential::UNSTABLE_THRESHOLD,
            dedup_distance: quasipotential::DEDUP_DISTANCE,
            equilibria: found
                .equilibria
                .iter()
                .map(|e| EquilibriumSummary {
                    label: e.label.clone(),
                    residual: e.residual,
                    unstable_count: e.unstable_count,
                    leading_eigenvalues: e.leading_eigenvalues.clone(),
                    sup_norm: e.state.sup_norm(),
                    newton_iterations: e.iterations,
                })
                .collect(),
            failures: &found.failures,
        },
    )
}

/// One optimisation record as persisted.
#[derive(Serialize)]
struct MamRecord {
    endpoints_hash: String,
    horizon: f64,
    path_points: usize,
    value: f64,
    action: f64,
    converged: bool,
    violation: f64,
    termination: Termination,
    iterations: usize,
}

#[derive(Serialize)]
struct MamReport<'a> {
    config_hash: &'a str,
    record: MamRecord,
    gradient_norm: f64,
}

fn endpoints(ctx: &mut Context) -> Result<(Field, Field), CliError> {
    let t = &ctx.cfg.task;
    let (start, end) = (t.start.clone(), t.end.clone());
    let x = ctx.state("task.start", start.as_ref(), StateSpec::Label("eq1".into()))?;
    let y = ctx.state("task.end", end.as_ref(), StateSpec::Label("eq0".into()))?;
    Ok((x, y))
}

fn mam(ctx: &mut Context, out: &mut OutputDir) -> Result<(), CliError> {
    let (x, y) = endpoints(ctx)?;
    let sched = ctx.schedule();
    let horizon = ctx.cfg.task.horizon.unwrap_or(20.0);
    let mut problem = MamProblem::new(x.clone(), y.clone(), horizon, sched.path_points);
    problem.penalty_weight = sched.penalty_weight;
    problem.max_iterations = sched.max_iterations;
    problem.gradient_tolerance = sched.gradient_tolerance;
    let init = quasipotential::initial_path(&problem, &ctx.model, &ctx.op)?;
    let res = quasipotential::mam_minimize(&problem, &ctx.model, &ctx.op, &init)?;
    out.csv("mam_path.csv", &path_csv(ctx.hash, &res.path))?;
    out.json(
        "mam.json",
        &MamReport {
            config_hash: ctx.hash,
            record: MamRecord {
                endpoints_hash: endpoints_hash(&x, &y),
                horizon,
                path_points: sched.path_points,
                value: res.objective,
                action: res.report.total_action,
                converged: res.converged,
                violation: res.violation,
                termination: res.termination,
                iterations: res.iterations,
            },
            gradient_norm: res.gradient_norm,
        },
    )
}

#[derive(Serialize)]
struct QuasipotentialEntry {
    rho: Option<f64>,
    value: f64,
    action: f64,
    violation: f64,
    best_horizon: f64,
    runs: Vec<MamRecord>,
}

#[derive(Serialize)]
struct QuasipotentialReport<'a> {
    config_hash: &'a str,
    endpoints_hash: String,
    constraint: &'a str,
    results: Vec<QuasipotentialEntry>,
}

fn entry(rho: Option<f64>, q: &QuasipotentialResult, eh: &str) -> QuasipotentialEntry {
    QuasipotentialEntry {
        rho,
        value: q.value,
        action: q.action,
        violation: q.violation,
        best_horizon: q.best_horizon,
        runs: q
            .runs
            .iter()
            .map(|r| MamRecord {
                endpoints_hash: eh.to_string(),
                horizon: r.horizon,
                path_points: r.path_points,
                value: r.objective,
                action: r.action,
                converged: r.converged,
                violation: r.violation,
                termination: r.termination,
                iterations: r.iterations,
            })
            .collect(),
    }
}

fn quasipotential_task(ctx: &mut Context, out: &mut OutputDir) -> Result<(), CliError> {
    let (x, y) = endpoints(ctx)?;
    let sched = ctx.schedule();
    let eh = endpoints_hash(&x, &y);
    let mode = ctx.cfg.task.constraint.clone().unwrap_or_else(|| "none".into());
    let results: Vec<(Option<f64>, QuasipotentialResult)> = if mode == "none" {
        vec![(None, quasipotential::quasipotential(&x, &y, &ctx.model, &ctx.op, &sched)?)]
    } else {
        let found = ctx.equilibria()?.clone();
        let saddles: Vec<Equilibrium> = found.equilibria.iter().filter(|e| !e.is_stable()).cloned().collect();
        let domain = exit::DomainSurrogate::from_equilibria(&x, &saddles)?;
        let rhos = ctx.cfg.task.rho.clone().unwrap_or_else(|| vec![0.2, 0.1, 0.05]);
        let mode = if mode == "hat" { ConstraintMode::Hat } else { ConstraintMode::Tilde };
        quasipotential::rho_sweep(&x, &y, &domain, mode, &saddles, &rhos, &ctx.model, &ctx.op, &sched)?
            .into_iter()
            .map(|(r, q)| (Some(r), q))
            .collect()
    };
    let mut plot = csv_header(ctx.hash, &["rho", "horizon", "action", "objective", "converged"]);
    for (k, (rho, q)) in results.iter().enumerate() {
        for r in &q.runs {
            let rho = rho.map_or(String::new(), |v| v.to_string());
            let _ = writeln!(plot, "{rho},{},{},{},{}", r.horizon, r.action, r.objective, r.converged);
        }
        let name = if results.len() == 1 { "best_path.csv".to_string() } else { format!("best_path_{k}.csv") };
        out.csv(&name, &path_csv(ctx.hash, &q.best_path))?;
    }
    out.csv("plot_action_vs_horizon.csv", &plot)?;
    out.json(
        "quasipotential.json",
        &QuasipotentialReport {
            config_hash: ctx.hash,
            endpoints_hash: eh.clone(),
            constraint: &mode,
            results: results.iter().map(|(r, q)| entry(*r, q, &eh)).collect(),
        },
    )
}

/// Saddle data stored next to exit records so reports can be rebuilt.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SaddleFile {
    pub config_hash: String,
    pub grid: GridSpec,
    pub attractor: String,
    pub delta: f64,
    pub targets: Vec<String>,
    pub saddles: Vec<Equilibrium>,
}

#[derive(Serialize)]
struct ExitSummary<'a> {
    config_hash: &'a str,
    root_seed: u64,
    attractor: &'a str,
    exit: &'a ExitConfig,
    stop_radius: f64,
    flow_horizon: f64,
    band: f64,
    certificate: Certificate,
    boundary: Option<&'a BoundaryReport>,
    records: usize,
    censored: usize,
    escalated: usize,
    blowups: usize,
    note: &'a str,
}

#[derive(Serialize)]
struct ReportFile<'a, T> {
    config_hash: &'a str,
    report: Option<&'a T>,
    error: Option<String>,
}

fn exit_task(ctx: &mut Context, out: &mut OutputDir, shapes: bool) -> Result<(), CliError> {
    let t = ctx.cfg.task.clone();
    let label = t.attractor.clone().unwrap_or_else(|| "eq1".into());
    let attractor = ctx.equilibrium("task.attractor", &label)?;
    if !attractor.is_stable() {
        return Err(CliError::Config {
            field: "task.attractor".into(),
            message: format!("`{label}` is not a stable equilibrium"),
        });
    }
    let found = ctx.equilibria()?.clone();
    let saddles: Vec<Equilibrium> = found.equilibria.iter().filter(|e| !e.is_stable()).cloned().collect();
    let mut oracle = BasinOracle::new(
        &attractor,
        &found.equilibria,
        t.stop_radius.unwrap_or(0.3),
        t.flow_horizon.unwrap_or(20.0),
    )?;
    if let Some(b) = t.band {
        oracle.band = b;
    }
    let certificate = oracle.certify(&ctx.model, &ctx.op, 50, ctx.cfg.sim.seed)?;
    let d = ExitConfig::default();
    let cfg = ExitConfig {
        dt: t.exit_dt.unwrap_or(d.dt),
        max_steps: t.max_steps.map_or(d.max_steps, |v| v as u64),
        checkpoint_stride: t.checkpoint_stride.map_or(d.checkpoint_stride, |v| v as u64),
        band_stride: t.band_stride.map_or(d.band_stride, |v| v as u64),
        wall_clock_limit: t.wall_clock_limit,
        ..d
    };
    let root = NoiseStream::new(ctx.cfg.sim.seed);
    let records = exit::run_exit_mc(
        &attractor.state,
        &ctx.cfg.sim.epsilon,
        ctx.cfg.sim.n_samples as usize,
        &oracle,
        &saddles,
        &ctx.model,
        &ctx.op,
        &cfg,
        &root,
    )?;
    let delta = t.delta.unwrap_or(DEFAULT_DELTA);
    let (targets, boundary) = match (&t.targets, shapes) {
        (Some(ts), _) => (ts.clone(), None),
        (None, true) if !saddles.is_empty() => {
            let b = boundary_quasipotential(&attractor, &saddles, &ctx.model, &ctx.op, &ctx.schedule())?;
            let targets = b
                .values
                .iter()
                .filter(|(_, &v)| v <= b.minimum * (1.0 + TARGET_TOLERANCE))
                .map(|(l, _)| l.clone())
                .collect();
            (targets, Some(b))
        }
        (None, _) => (saddles.first().map(|s| vec![s.label.clone()]).unwrap_or_default(), None),
    };
    let (table, shape_rows, confirmed) = records_csv(ctx.hash, &records);
    out.csv("exit_records.csv", &table)?;
    out.csv("exit_shapes.csv", &shape_rows)?;
    out.csv("exit_confirmed.csv", &confirmed)?;
    out.json(
        "saddles.json",
        &SaddleFile {
            config_hash: ctx.hash.to_string(),
            grid: ctx.grid,
            attractor: label.clone(),
            delta,
            targets: targets.clone(),
            saddles: saddles.clone(),
        },
    )?;
    out.json(
        "exit_summary.json",
        &ExitSummary {
            config_hash: ctx.hash,
            root_seed: ctx.cfg.sim.seed,
            attractor: &label,
            exit: &cfg,
            stop_radius: oracle.stop_radius,
            flow_horizon: oracle.flow_horizon,
            band: oracle.band,
            certificate,
            boundary: boundary.as_ref(),
            records: records.len(),
            censored: records.iter().filter(|r| r.censored).count(),
            escalated: records.iter().filter(|r| r.escalated).count(),
            blowups: records.iter().filter(|r| r.blowup).count(),
            note: "exit statistics are conditional on the flow-based membership oracle",
        },
    )?;
    write_reports(ctx.hash, &records, &saddles, &targets, delta, shapes || t.targets.is_some(), out)
}

fn write_reports(
    hash: &str,
    records: &[ExitRecord],
    saddles: &[Equilibrium],
    targets: &[String],
    delta: f64,
    shapes: bool,
    out: &mut OutputDir,
) -> Result<(), CliError> {
    let scaling = exit::exit_scaling_report(records);
    let (report, error) = match &scaling {
        Ok(r) => (Some(r), None),
        Err(fwmeta::Error::InsufficientData(m)) => (None, Some(m.clone())),
        Err(e) => return Err(e.clone().into()),
    };
    out.json("scaling_report.json", &ReportFile::<ScalingReport> { config_hash: hash, report, error })?;
    out.csv("plot_exit_scaling.csv", &scaling_plot(hash, records))?;
    if shapes && !targets.is_empty() && !saddles.is_empty() {
        let shape = exit::exit_shape_histogram(records, saddles, targets, delta)?;
        out.json(
            "shape_report.json",
            &ReportFile::<ShapeReport> {
                config_hash: hash,
                report: Some(&shape),
                error: None,
            },
        )?;
        out.csv("plot_shape_histogram.csv", &shape_plot(hash, &shape))?;
    }
    Ok(())
}

/// `ε` against `ε·log mean τ`, computed straight from the records so the
/// table exists even when the level fit does not.
fn scaling_plot(hash: &str, records: &[ExitRecord]) -> String {
    let mut levels: Vec<f64> = records.iter().map(|r| r.epsilon).collect();
    levels.sort_by(|a, b| b.total_cmp(a));
    levels.dedup();
    let mut text = csv_header(hash, &["epsilon", "inv_epsilon", "mean_tau", "eps_log_mean_tau", "censor_rate"]);
    for e in levels {
        let taus: Vec<&ExitRecord> = records.iter().filter(|r| r.epsilon == e).collect();
        let mean = taus.iter().map(|r| r.tau).sum::<f64>() / taus.len() as f64;
        let censored = taus.iter().filter(|r| r.censored).count() as f64 / taus.len() as f64;
        let _ = writeln!(text, "{e},{},{mean},{},{censored}", 1.0 / e, e * mean.ln());
    }
    text
}

fn shape_plot(hash: &str, shape: &ShapeReport) -> String {
    let mut text = csv_header(hash, &["epsilon", "bin_lo", "bin_hi", "count"]);
    for row in &shape.rows {
        for (b, c) in row.histogram.iter().enumerate() {
            let lo = b as f64 * shape.bin_width;
            let _ = writeln!(text, "{},{lo},{},{c}", row.epsilon, lo + shape.bin_width);
        }
    }
    text
}

fn read(dir: &std::path::Path, name: &str) -> Result<String, CliError> {
    let p = dir.join(name);
    std::fs::read_to_string(&p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))
}

/// Rebuilds the scaling and shape reports of an exit run from its tables.
fn report(loaded: &LoadedConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let dir = loaded.config.task.input.clone().expect("validated");
    let dir = if dir.is_relative() {
        loaded.path.parent().map(|p| p.join(&dir)).unwrap_or(dir)
    } else {
        dir
    };
    let saddles: SaddleFile =
        serde_json::from_str(&read(&dir, "saddles.json")?).map_err(|e| CliError::Io(format!("saddles.json: {e}")))?;
    let table = read(&dir, "exit_records.csv")?;
    let source = output::csv_hash(&table).unwrap_or_else(|| saddles.config_hash.clone());
    let records = output::read_records(&table, &read(&dir, "exit_shapes.csv")?, &read(&dir, "exit_confirmed.csv")?, saddles.grid)?;
    let targets = loaded.config.task.targets.clone().unwrap_or(saddles.targets.clone());
    let delta = loaded.config.task.delta.unwrap_or(saddles.delta);
    // reports carry the hash of the run that produced the records
    write_reports(&source, &records, &saddles.saddles, &targets, delta, !targets.is_empty(), out)
}

#[derive(Serialize)]
struct AssumptionReport<'a> {
    config_hash: &'a str,
    model: &'a ModelSpec,
    all_passed: bool,
    report: ValidationReport,
}

fn validate(ctx: &mut Context, out: &mut OutputDir) -> Result<(), CliError> {
    let t = &ctx.cfg.task;
    let report = validate_assumptions(
        &ctx.model,
        t.sample_radius.unwrap_or(10.0),
        t.validation_samples.map_or(1000, |v| v as usize),
    );
    out.json(
        "assumptions.json",
        &AssumptionReport {
            config_hash: ctx.hash,
            model: &ctx.model,
            all_passed: report.all_passed(),
            report,
        },
    )
}
