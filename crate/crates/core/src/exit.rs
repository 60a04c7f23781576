//! Basin membership, exit-time Monte Carlo and exit-shape statistics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{self, Field, OperatorDisc};
use crate::model::ModelSpec;
use crate::noise::{split_stream, NoiseStream};
use crate::quasipotential::Equilibrium;
use crate::sim::Stepper;

/// One face of the linear surrogate of `D`: the tangent plane through a saddle
/// with the unit normal pointing into the basin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaddlePlane {
    pub label: String,
    pub center: Field,
    pub normal: Field,
}

/// `s(x) = min_i ⟨x − c_i, n_i⟩_H`; positive values lie on the basin side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSurrogate {
    pub planes: Vec<SaddlePlane>,
}

impl DomainSurrogate {
    /// Planes through every saddle along its leading unstable direction,
    /// oriented towards `attractor`.
    pub fn from_equilibria(attractor: &Field, saddles: &[Equilibrium]) -> Result<Self> {
        let mut planes = Vec::new();
        for s in saddles.iter().filter(|s| s.unstable_count > 0) {
            let dir = s
                .unstable_direction
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument(format!("saddle {} has no unstable direction", s.label)))?;
            let mut normal = dir.scaled(1.0 / dir.h_norm());
            if grid::h_inner(&attractor.sub(&s.state), &normal) < 0.0 {
                normal.scale(-1.0);
            }
            planes.push(SaddlePlane {
                label: s.label.clone(),
                center: s.state.clone(),
                normal,
            });
        }
        if planes.is_empty() {
            return Err(Error::InvalidArgument("surrogate needs at least one saddle".into()));
        }
        Ok(Self { planes })
    }

    /// Surrogate value and the index of the active plane.
    pub fn evaluate(&self, x: &Field) -> (f64, usize) {
        let mut best = (f64::INFINITY, 0);
        for (i, p) in self.planes.iter().enumerate() {
            let h = x.grid().spacing();
            let v: f64 = h * x
                .values()
                .iter()
                .zip(p.center.values())
                .zip(p.normal.values())
                .map(|((a, c), n)| (a - c) * n)
                .sum::<f64>();
            if v < best.0 {
                best = (v, i);
            }
        }
        best
    }

    pub fn value(&self, x: &Field) -> f64 {
        self.evaluate(x).0
    }
}

/// Verdict of the flow-based membership test.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Membership {
    Inside,
    Outside,
    Undecided,
}

/// Decides membership in the basin of `attractor` by running the unperturbed
/// flow until it enters the stop ball, enters a ball around another stable
/// state, blows up, or runs out of time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasinOracle {
    pub attractor: Field,
    /// Other stable equilibria whose basins count as outside.
    pub others: Vec<Field>,
    /// `ρ_in`, in the sup norm; also used around `others`.
    pub stop_radius: f64,
    /// `T_flow`
    pub flow_horizon: f64,
    pub flow_dt: f64,
    pub blowup_threshold: f64,
    pub surrogate: Option<DomainSurrogate>,
    /// Full checks run while the surrogate is below this value.
    pub band: f64,
}

impl BasinOracle {
    pub fn new(attractor: &Equilibrium, equilibria: &[Equilibrium], stop_radius: f64, flow_horizon: f64) -> Result<Self> {
        let others = equilibria
            .iter()
            .filter(|e| e.is_stable() && e.state.sub(&attractor.state).sup_norm() > 1e-6)
            .map(|e| e.state.clone())
            .collect();
        let saddles: Vec<Equilibrium> = equilibria.iter().filter(|e| !e.is_stable()).cloned().collect();
        let surrogate = if saddles.is_empty() {
            None
        } else {
            Some(DomainSurrogate::from_equilibria(&attractor.state, &saddles)?)
        };
        Ok(Self {
            attractor: attractor.state.clone(),
            others,
            stop_radius,
            flow_horizon,
            flow_dt: 0.01,
            blowup_threshold: 1e6,
            surrogate,
            band: 0.3,
        })
    }

    fn immediate(&self, x: &Field) -> Option<Membership> {
        let norm = x.sup_norm();
        if !(norm <= self.blowup_threshold) {
            return Some(Membership::Outside);
        }
        if x.sub(&self.attractor).sup_norm() < self.stop_radius {
            return Some(Membership::Inside);
        }
        if self.others.iter().any(|o| x.sub(o).sup_norm() < self.stop_radius) {
            return Some(Membership::Outside);
        }
        None
    }

    fn verdict(&self, x: &Field, stepper: &mut Stepper, horizon: f64) -> Membership {
        if let Some(v) = self.immediate(x) {
            return v;
        }
        let steps = (horizon / self.flow_dt).ceil() as usize;
        let mut s = x.clone();
        for _ in 0..steps {
            if stepper.step_flow(&mut s).is_err() {
                return Membership::Outside;
            }
            if let Some(v) = self.immediate(&s) {
                return v;
            }
        }
        Membership::Undecided
    }

    /// Checks from `n` random points on the sphere `|h|_E = ρ_in` around the
    /// attractor that the flow contracts to a tenth of the radius.
    pub fn certify(&self, model: &ModelSpec, op: &OperatorDisc, n: usize, seed: u64) -> Result<Certificate> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut stepper = Stepper::new(model, op, self.flow_dt)?;
        let steps = (self.flow_horizon / self.flow_dt).ceil() as usize;
        let mut worst: f64 = 0.0;
        for _ in 0..n {
            let mut h = Field::zeros(*op.grid());
            h.values_mut().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
            let scale = self.stop_radius / h.sup_norm();
            let mut s = self.attractor.clone();
            s.axpy(scale, &h);
            for _ in 0..steps {
                stepper.step_flow(&mut s)?;
            }
            worst = worst.max(s.sub(&self.attractor).sup_norm());
        }
        Ok(Certificate {
            samples: n,
            worst_final_distance: worst,
            passed: worst < 0.1 * self.stop_radius,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub samples: usize,
    pub worst_final_distance: f64,
    pub passed: bool,
}

pub fn basin_membership(x: &Field, oracle: &BasinOracle, model: &ModelSpec, op: &OperatorDisc) -> Result<Membership> {
    let mut stepper = Stepper::new(model, op, oracle.flow_dt)?;
    Ok(oracle.verdict(x, &mut stepper, oracle.flow_horizon))
}

/// Controls of the exit-time Monte Carlo.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExitConfig {
    pub dt: f64,
    /// Per-trajectory step cap; trajectories reaching it are censored.
    pub max_steps: u64,
    /// Full membership check at least this often.
    pub checkpoint_stride: u64,
    /// Full check every this many steps while the surrogate is in band.
    pub band_stride: u64,
    /// Undecided verdicts are re-run with this multiple of `T_flow`.
    pub escalation_factor: f64,
    pub blowup_threshold: f64,
    /// Optional per-trajectory wall-clock cap in seconds. Outcomes then depend
    /// on machine speed, so reproducible runs leave it unset.
    pub wall_clock_limit: Option<f64>,
}

impl Default for ExitConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            max_steps: 10_000_000,
            checkpoint_stride: 200,
            band_stride: 10,
            escalation_factor: 4.0,
            blowup_threshold: 1e6,
            wall_clock_limit: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExitRecord {
    pub epsilon: f64,
    pub seed: u64,
    pub trajectory: u64,
    pub tau: f64,
    pub steps: u64,
    pub exit_shape: Field,
    pub nearest_saddle: String,
    pub saddle_distance: f64,
    pub blowup: bool,
    pub censored: bool,
    /// Whether the exit verdict needed the longer flow horizon.
    pub escalated: bool,
    /// Last step confirmed inside before the exit, and its state.
    pub confirmed_step: u64,
    pub confirmed_state: Field,
}

struct ExitRun<'a> {
    model: &'a ModelSpec,
    op: &'a OperatorDisc,
    oracle: &'a BasinOracle,
    cfg: &'a ExitConfig,
}

/// Outcome of a verdict with escalation; `true` in the second slot when
/// the longer horizon was needed.
fn confirmed(oracle: &BasinOracle, cfg: &ExitConfig, x: &Field, stepper: &mut Stepper) -> (bool, bool) {
    match oracle.verdict(x, stepper, oracle.flow_horizon) {
        Membership::Inside => (true, false),
        Membership::Outside => (false, false),
        Membership::Undecided => {
            let v = oracle.verdict(x, stepper, cfg.escalation_factor * oracle.flow_horizon);
            (v == Membership::Inside, true)
        }
    }
}

struct Crossing {
    step: u64,
    state: Field,
    escalated: bool,
    blowup: bool,
}

impl<'a> ExitRun<'a> {
    /// Steps from a confirmed-inside state, checking every step, until the
    /// first step that is not inside (or `limit` steps).
    fn replay(&self, from_step: u64, from: &Field, stream: &NoiseStream, epsilon: f64, limit: u64) -> Result<Option<Crossing>> {
        let mut sde = Stepper::new(self.model, self.op, self.cfg.dt)?;
        let mut flow = Stepper::new(self.model, self.op, self.oracle.flow_dt)?;
        let mut s = stream.at_step(from_step);
        let mut state = from.clone();
        for n in from_step..from_step + limit {
            let prev = state.clone();
            if sde.step_noisy(&mut state, epsilon, &mut s).is_err() || !(state.sup_norm() <= self.cfg.blowup_threshold) {
                return Ok(Some(Crossing {
                    step: n + 1,
                    state: prev,
                    escalated: false,
                    blowup: true,
                }));
            }
            let (inside, escalated) = confirmed(self.oracle, self.cfg, &state, &mut flow);
            if !inside {
                return Ok(Some(Crossing {
                    step: n + 1,
                    state,
                    escalated,
                    blowup: false,
                }));
            }
        }
        Ok(None)
    }

    fn trajectory(&self, x0: &Field, epsilon: f64, stream: NoiseStream, saddles: &[Equilibrium]) -> Result<ExitRecord> {
        let cfg = self.cfg;
        let started = std::time::Instant::now();
        let mut sde = Stepper::new(self.model, self.op, cfg.dt)?;
        let mut flow = Stepper::new(self.model, self.op, self.oracle.flow_dt)?;
        let mut s = stream;
        let mut state = x0.clone();
        let mut last_inside = (0u64, x0.clone());
        let mut in_band = false;
        let mut band_steps = 0u64;
        let mut crossing = None;
        let mut n = 0u64;
        while n < cfg.max_steps {
            let prev = state.clone();
            let stepped = sde.step_noisy(&mut state, epsilon, &mut s);
            n += 1;
            if stepped.is_err() || !(state.sup_norm() <= cfg.blowup_threshold) {
                // a blow-up leaves every bounded set; look for an earlier exit first
                let gap = n - 1 - last_inside.0;
                crossing = self.replay(last_inside.0, &last_inside.1, &stream, epsilon, gap)?;
                if crossing.is_none() {
                    crossing = Some(Crossing {
                        step: n,
                        state: prev,
                        escalated: false,
                        blowup: true,
                    });
                }
                break;
            }
            let mut check = n % cfg.checkpoint_stride == 0;
            if let Some(sur) = &self.oracle.surrogate {
                if sur.value(&state) < self.oracle.band {
                    band_steps = if in_band { band_steps + 1 } else { 0 };
                    in_band = true;
                    check |= band_steps % cfg.band_stride == 0;
                } else {
                    in_band = false;
                }
            }
            if !check {
                continue;
            }
            let (inside, _) = confirmed(self.oracle, cfg, &state, &mut flow);
            if inside {
                last_inside = (n, state.clone());
                if let Some(limit) = cfg.wall_clock_limit {
                    if started.elapsed().as_secs_f64() > limit {
                        break;
                    }
                }
                continue;
            }
            let gap = n - last_inside.0;
            crossing = self.replay(last_inside.0, &last_inside.1, &stream, epsilon, gap)?;
            break;
        }
        let (censored, step, shape, escalated, blowup) = match crossing {
            Some(c) => (false, c.step, c.state, c.escalated, c.blowup),
            None => (true, n, state, false, false),
        };
        let (label, dist) = nearest(&shape, saddles);
        Ok(ExitRecord {
            epsilon,
            seed: stream.root_seed,
            trajectory: stream.trajectory_index,
            tau: step as f64 * cfg.dt,
            steps: step,
            exit_shape: shape,
            nearest_saddle: label,
            saddle_distance: dist,
            blowup,
            censored,
            escalated,
            confirmed_step: last_inside.0,
            confirmed_state: last_inside.1,
        })
    }
}

fn nearest(x: &Field, saddles: &[Equilibrium]) -> (String, f64) {
    saddles
        .iter()
        .map(|s| (s.label.clone(), x.sub(&s.state).sup_norm()))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap_or_else(|| (String::new(), f64::NAN))
}

/// Stream of trajectory `i` at noise level number `k`.
pub fn trajectory_stream(root: &NoiseStream, level: usize, trajectory: usize) -> NoiseStream {
    split_stream(&split_stream(root, level as u64), trajectory as u64)
}

/// `n_samples` exits per noise level, run in parallel; records come back
/// ordered by level, then trajectory index, whatever the scheduling.
#[allow(clippy::too_many_arguments)]
pub fn run_exit_mc(
    x0: &Field,
    eps_list: &[f64],
    n_samples: usize,
    oracle: &BasinOracle,
    saddles: &[Equilibrium],
    model: &ModelSpec,
    op: &OperatorDisc,
    cfg: &ExitConfig,
    root: &NoiseStream,
) -> Result<Vec<ExitRecord>> {
    if eps_list.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::InvalidArgument("noise levels must be positive".into()));
    }
    if cfg.checkpoint_stride == 0 || cfg.band_stride == 0 || !(cfg.dt > 0.0) {
        return Err(Error::InvalidArgument("exit strides and dt must be positive".into()));
    }
    if basin_membership(x0, oracle, model, op)? != Membership::Inside {
        return Err(Error::InvalidArgument("initial state is not inside the basin".into()));
    }
    let run = ExitRun { model, op, oracle, cfg };
    let jobs: Vec<(usize, usize)> = (0..eps_list.len())
        .flat_map(|k| (0..n_samples).map(move |i| (k, i)))
        .collect();
    jobs.par_iter()
        .map(|&(k, i)| run.trajectory(x0, eps_list[k], trajectory_stream(root, k, i), saddles))
        .collect()
}

/// Re-runs the confirmation from the recorded pre-crossing state with the
/// same noise and returns the exit step it finds.
pub fn replay_exit(
    record: &ExitRecord,
    oracle: &BasinOracle,
    model: &ModelSpec,
    op: &OperatorDisc,
    cfg: &ExitConfig,
) -> Result<Option<u64>> {
    let run = ExitRun { model, op, oracle, cfg };
    let stream = NoiseStream {
        root_seed: record.seed,
        trajectory_index: record.trajectory,
        step_counter: 0,
    };
    let limit = record.steps.saturating_sub(record.confirmed_step);
    Ok(run
        .replay(record.confirmed_step, &record.confirmed_state, &stream, record.epsilon, limit)?
        .map(|c| c.step))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub epsilon: f64,
    pub samples: usize,
    pub censored: usize,
    pub censor_rate: f64,
    pub blowups: usize,
    /// Mean of recorded times; censored times enter at their cap, so with
    /// censoring this is a lower bound.
    pub mean_tau: f64,
    pub median_tau: f64,
    pub eps_log_mean_tau: f64,
    pub eps_log_median_tau: f64,
    /// Whether the row entered the level fit (uncensored majority).
    pub used_in_fit: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
    /// Least-squares slope of `log mean τ` against `1/ε`, the extrapolated
    /// level of `ε·log mean τ`.
    pub level: f64,
    /// `log` of the fitted prefactor.
    pub log_prefactor: f64,
    pub level_ci: [f64; 2],
    pub bootstrap_resamples: usize,
    pub censoring_present: bool,
    pub note: String,
}

const BOOTSTRAP_RESAMPLES: usize = 1000;
const BOOTSTRAP_SEED: u64 = 0x00b0_075e;

fn fit_line(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Groups records by noise level, ordered by decreasing `ε`.
fn by_epsilon(records: &[ExitRecord]) -> Vec<(f64, Vec<&ExitRecord>)> {
    let mut levels: Vec<f64> = records.iter().map(|r| r.epsilon).collect();
    levels.sort_by(|a, b| b.total_cmp(a));
    levels.dedup();
    levels
        .into_iter()
        .map(|e| (e, records.iter().filter(|r| r.epsilon == e).collect()))
        .collect()
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let idx = (p * (sorted.len() - 1) as f64).round() as usize;
    sorted[idx]
}

/// Table of exit-time statistics per `ε` and the level of `ε·log E τ`.
pub fn exit_scaling_report(records: &[ExitRecord]) -> Result<ScalingReport> {
    let groups = by_epsilon(records);
    let mut rows = Vec::new();
    for (eps, recs) in &groups {
        let n = recs.len();
        let censored = recs.iter().filter(|r| r.censored).count();
        let mut taus: Vec<f64> = recs.iter().map(|r| r.tau).collect();
        let mean = taus.iter().sum::<f64>() / n as f64;
        let med = median(&mut taus);
        rows.push(ScalingRow {
            epsilon: *eps,
            samples: n,
            censored,
            censor_rate: censored as f64 / n as f64,
            blowups: recs.iter().filter(|r| r.blowup).count(),
            mean_tau: mean,
            median_tau: med,
            eps_log_mean_tau: eps * mean.ln(),
            eps_log_median_tau: eps * med.ln(),
            used_in_fit: 2 * censored < n,
        });
    }
    let used: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].used_in_fit).collect();
    if used.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 noise levels with an uncensored majority, have {}",
            used.len()
        )));
    }
    let xs: Vec<f64> = used.iter().map(|&i| 1.0 / rows[i].epsilon).collect();
    let ys: Vec<f64> = used.iter().map(|&i| rows[i].mean_tau.ln()).collect();
    let (level, log_prefactor) = fit_line(&xs, &ys);

    let mut rng = ChaCha8Rng::seed_from_u64(BOOTSTRAP_SEED);
    let mut slopes = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    let samples: Vec<Vec<f64>> = used
        .iter()
        .map(|&i| groups[i].1.iter().map(|r| r.tau).collect())
        .collect();
    for _ in 0..BOOTSTRAP_RESAMPLES {
        let ys: Vec<f64> = samples
            .iter()
            .map(|s| {
                let total: f64 = (0..s.len()).map(|_| s[rng.random_range(0..s.len())]).sum();
                (total / s.len() as f64).ln()
            })
            .collect();
        slopes.push(fit_line(&xs, &ys).0);
    }
    slopes.sort_by(|a, b| a.total_cmp(b));
    let mut ci = [percentile(&slopes, 0.025), percentile(&slopes, 0.975)];
    let censoring_present = used.iter().any(|&i| rows[i].censored > 0);
    if censoring_present {
        // censored times are lower bounds: widen upwards by the shift obtained
        // when every censored time is doubled
        let ys2: Vec<f64> = used
            .iter()
            .map(|&i| {
                let recs = &groups[i].1;
                let total: f64 = recs.iter().map(|r| if r.censored { 2.0 * r.tau } else { r.tau }).sum();
                (total / recs.len() as f64).ln()
            })
            .collect();
        let shift = fit_line(&xs, &ys2).0 - level;
        ci[1] += shift.abs();
        ci[0] -= shift.abs();
    }
    Ok(ScalingReport {
        rows,
        level,
        log_prefactor,
        level_ci: ci,
        bootstrap_resamples: BOOTSTRAP_RESAMPLES,
        censoring_present,
        note: "exit times are conditional on the flow-based membership oracle".into(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaddleMass {
    pub label: String,
    pub count: usize,
    pub fraction: f64,
    pub standard_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeRow {
    pub epsilon: f64,
    /// Uncensored exits.
    pub exits: usize,
    /// Mass of the nearest saddle over all saddles.
    pub masses: Vec<SaddleMass>,
    /// Fraction of exit shapes within `delta` of the target set.
    pub fraction_within: f64,
    pub fraction_within_se: f64,
    /// Histogram of the sup distance to the target set.
    pub histogram: Vec<usize>,
    pub mean_distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeReport {
    pub delta: f64,
    /// Saddles minimising the quasipotential.
    pub targets: Vec<String>,
    pub bin_width: f64,
    pub rows: Vec<ShapeRow>,
    pub note: String,
}

pub const SHAPE_BIN_WIDTH: f64 = 0.1;
pub const SHAPE_BINS: usize = 20;

/// Per-`ε` distribution of exit shapes around the saddles. Distances are
/// recomputed from the stored shapes; `targets` names the minimising saddles.
pub fn exit_shape_histogram(
    records: &[ExitRecord],
    saddles: &[Equilibrium],
    targets: &[String],
    delta: f64,
) -> Result<ShapeReport> {
    let target_states: Vec<&Field> = saddles
        .iter()
        .filter(|s| targets.contains(&s.label))
        .map(|s| &s.state)
        .collect();
    if target_states.is_empty() {
        return Err(Error::InvalidArgument("no target saddle found among the saddles".into()));
    }
    let mut rows = Vec::new();
    for (eps, recs) in by_epsilon(records) {
        let exits: Vec<&ExitRecord> = recs.into_iter().filter(|r| !r.censored).collect();
        let n = exits.len();
        let nf = n.max(1) as f64;
        let mut counts = vec![0usize; saddles.len()];
        let mut histogram = vec![0usize; SHAPE_BINS];
        let mut within = 0;
        let mut total_dist = 0.0;
        for r in &exits {
            let (best, _) = saddles
                .iter()
                .enumerate()
                .map(|(i, s)| (i, r.exit_shape.sub(&s.state).sup_norm()))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("saddles nonempty");
            counts[best] += 1;
            let d = target_states
                .iter()
                .map(|t| r.exit_shape.sub(t).sup_norm())
                .fold(f64::INFINITY, f64::min);
            total_dist += d;
            if d < delta {
                within += 1;
            }
            let bin = ((d / SHAPE_BIN_WIDTH) as usize).min(SHAPE_BINS - 1);
            histogram[bin] += 1;
        }
        let masses = saddles
            .iter()
            .zip(&counts)
            .map(|(s, &c)| {
                let p = c as f64 / nf;
                SaddleMass {
                    label: s.label.clone(),
                    count: c,
                    fraction: p,
                    standard_error: (p * (1.0 - p) / nf).sqrt(),
                }
            })
            .collect();
        let p = within as f64 / nf;
        rows.push(ShapeRow {
            epsilon: eps,
            exits: n,
            masses,
            fraction_within: p,
            fraction_within_se: (p * (1.0 - p) / nf).sqrt(),
            histogram,
            mean_distance: total_dist / nf,
        });
    }
    Ok(ShapeReport {
        delta,
        targets: targets.to_vec(),
        bin_width: SHAPE_BIN_WIDTH,
        rows,
        note: "exit shapes are conditional on the flow-based membership oracle".into(),
    })
}
