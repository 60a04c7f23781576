//! Per-task documentation printed by `fwmeta describe`.

use crate::config::TASKS;
use crate::CliError;

const COMMON: &str = "\
common sections:
  [model]  name = allen-cahn | allen-cahn-multiplicative | coupled-cubic
           diffusivity (allen-cahn), coupling (coupled-cubic)
  [grid]   L (interval length), M (interior nodes)
  [sim]    dt, t_max, epsilon (list), seed, n_samples, observer_stride
  [output] directory, formats (csv, json)
states are `zero`, an equilibrium label (`eq0`, `eq1`, ...) or { mode = k, amplitude = a };
equilibrium labels follow the order of task.seeds (default: zero, +sin, -sin).";

fn body(task: &str) -> Option<&'static str> {
    Some(match task {
        "simulate" => "\
simulate: semi-implicit Euler-Maruyama paths of the noisy equation.
target: sample paths X^eps on [0, t_max], one independent stream per path.
options: task.initial (default zero); uses sim.epsilon, sim.n_samples, sim.seed.
outputs: simulate.json, simulate_path_<k>.csv (path 0 per level), plot_final_norms.csv",
        "flow" => "\
flow: the unperturbed flow X^0_x.
target: deterministic trajectory on [0, t_max].
options: task.initial (default 0.1 sin).
outputs: flow.json, flow.csv",
        "equilibria" => "\
equilibria: damped Newton from every seed, deduplicated and classified.
target: the equilibria standing in for the equivalence classes on the basin boundary;
eigenvalues above 1e-8 count as unstable.
options: task.seeds.
outputs: equilibria.json, equilibria.csv",
        "mam" => "\
mam: minimum action path for one fixed horizon.
target: the discrete rate functional, half the squared L2-in-time H-norm of the control.
options: task.start (default eq1), task.end (default eq0), task.horizon (default 20),
task.path_points (default 200), task.penalty_weight (default 1e3),
task.max_iterations (default 5000), task.gradient_tolerance (default 1e-6).
outputs: mam.json, mam_path.csv",
        "quasipotential" => "\
quasipotential: V(x, y) as the minimum of fixed-horizon problems over a T schedule,
each warm-started from the previous optimum.
target: the quasipotential, the infimum of the rate functional over horizons and paths;
with a constraint, the basin-constrained variants for every rho (endpoint balls for
tilde, endpoint and saddle balls for hat).
options: task.start, task.end, task.horizons (T schedule, default [5, 10, 20, 40]),
task.path_points, task.penalty_weight, task.max_iterations, task.gradient_tolerance,
task.constraint (none | tilde | hat), task.rho (default [0.2, 0.1, 0.05]).
outputs: quasipotential.json, best_path*.csv, plot_action_vs_horizon.csv",
        "exit-mc" => "\
exit-mc: Monte Carlo of exit times from the basin of task.attractor.
target: lim eps log E tau = V(x*, boundary of D), the quasipotential from the
attractor to the basin boundary; reported as a least-squares level of log mean tau
against 1/eps with a bootstrap interval.
options: task.attractor (default eq1), task.stop_radius (0.3), task.flow_horizon (20),
task.band (0.3), task.exit_dt (1e-3), task.max_steps (1e7), task.checkpoint_stride (200),
task.band_stride (10), task.wall_clock_limit; sim.epsilon, sim.n_samples, sim.seed.
outputs: exit_records.csv with exit_shapes.csv and exit_confirmed.csv sidecars,
saddles.json, exit_summary.json, scaling_report.json, plot_exit_scaling.csv",
        "exit-shape" => "\
exit-shape: the exit-mc run plus the distribution of exit shapes.
target: concentration of the exit shape X^eps(tau) on the saddles minimising
V(x*, .) as eps decreases.
options: as exit-mc, plus task.delta (default 0.5) and task.targets (default: saddles
within 1% of the minimal boundary quasipotential, computed with the T schedule options).
outputs: as exit-mc, plus shape_report.json and plot_shape_histogram.csv",
        "validate" => "\
validate: numerical checks of the dissipativity, growth and ellipticity assumptions.
target: the structural assumptions on the reaction and diffusion terms.
options: task.sample_radius (default 10), task.validation_samples (default 1000).
outputs: assumptions.json",
        "report" => "\
report: rebuilds scaling_report.json (and shape_report.json) from an exit run.
target: as exit-mc; the output is a pure function of the stored records.
options: task.input (directory of an exit-mc or exit-shape run, relative to the config),
task.targets, task.delta.
outputs: scaling_report.json, plot_exit_scaling.csv, shape_report.json, plot_shape_histogram.csv",
        _ => return None,
    })
}

pub fn describe(task: &str) -> Result<String, CliError> {
    match body(task) {
        Some(b) => Ok(format!("{b}\n\n{COMMON}\n")),
        None => Err(CliError::UnknownTask {
            name: task.to_string(),
            valid: TASKS.join(", "),
        }),
    }
}
