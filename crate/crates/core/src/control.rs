//! The action functional, control recovery from a path, the feedback control
//! that merges two skeleton trajectories, and the time-reversed gradient path.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{self, Field, OperatorDisc};
use crate::model::{self, ModelSpec};
use crate::path::{ControlPath, TrajectoryPath};
use crate::sim::{self, SimConfig, Stepper};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionReport {
    pub total_action: f64,
    pub per_step: Vec<f64>,
    pub recovered_control: ControlPath,
}

impl ActionReport {
    fn from_control(control: ControlPath) -> Self {
        let dt = control.dt;
        let per_step: Vec<f64> = control
            .controls
            .iter()
            .map(|u| 0.5 * dt * grid::h_inner(u, u))
            .collect();
        Self {
            total_action: per_step.iter().sum(),
            per_step,
            recovered_control: control,
        }
    }
}

/// Where the linear part is evaluated within a step of the recovered control.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionScheme {
    /// `A φ_{m+1}`, the placement of the semi-implicit integrator.
    #[default]
    Implicit,
    /// `A φ_{m+½}`. Free of the `O(α·dt)` bias on coarse time grids; used by
    /// the minimum action method.
    Midpoint,
}

/// `r_m = (φ_{m+1} − φ_m)/dt − A φ_{m+1} − F(φ_{m+½})` (or `A φ_{m+½}`),
/// written into `out`; returns the midpoint state.
#[allow(clippy::too_many_arguments)]
pub(crate) fn step_residual(
    prev: &Field,
    next: &Field,
    dt: f64,
    model: &ModelSpec,
    op: &OperatorDisc,
    scheme: ActionScheme,
    out: &mut Field,
    scratch: &mut Field,
) -> Result<Field> {
    let mid = prev.midpoint(next);
    match scheme {
        ActionScheme::Implicit => grid::apply_a_into(op, next, out),
        ActionScheme::Midpoint => grid::apply_a_into(op, &mid, out),
    }
    model::eval_f_into(model, &mid, scratch)?;
    let inv = 1.0 / dt;
    for (((o, &a), &b), &f) in out
        .values_mut()
        .iter_mut()
        .zip(prev.values())
        .zip(next.values())
        .zip(scratch.values())
    {
        *o = (b - a) * inv - *o - f;
    }
    Ok(mid)
}

/// The control that reproduces `path` under the skeleton dynamics.
pub fn recover_control(path: &TrajectoryPath, model: &ModelSpec, op: &OperatorDisc) -> Result<ControlPath> {
    recover_control_with(path, model, op, ActionScheme::Implicit)
}

pub fn recover_control_with(
    path: &TrajectoryPath,
    model: &ModelSpec,
    op: &OperatorDisc,
    scheme: ActionScheme,
) -> Result<ControlPath> {
    let grid = *op.grid();
    let template = Field::zeros(grid);
    for s in &path.states {
        s.check_same_shape(&template)?;
    }
    if !(path.dt > 0.0) {
        return Err(Error::InvalidArgument("path time step must be positive".into()));
    }
    let mut r = Field::zeros(grid);
    let mut scratch = Field::zeros(grid);
    let mut controls = Vec::with_capacity(path.steps());
    for w in path.states.windows(2) {
        let mid = step_residual(&w[0], &w[1], path.dt, model, op, scheme, &mut r, &mut scratch)?;
        controls.push(model::apply_g_inverse(model, &mid, &r)?);
    }
    Ok(ControlPath::new(path.dt, controls))
}

/// `½∫|u|²_H dt` of the recovered control. The control is constant on each
/// step, so the per-step sum is the exact integral.
pub fn action(path: &TrajectoryPath, model: &ModelSpec, op: &OperatorDisc) -> Result<ActionReport> {
    action_with(path, model, op, ActionScheme::Implicit)
}

pub fn action_with(
    path: &TrajectoryPath,
    model: &ModelSpec,
    op: &OperatorDisc,
    scheme: ActionScheme,
) -> Result<ActionReport> {
    Ok(ActionReport::from_control(recover_control_with(path, model, op, scheme)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Connection {
    pub control: ControlPath,
    pub merged: TrajectoryPath,
    /// The reference trajectory `X^{0,u}_x`.
    pub reference: TrajectoryPath,
    pub merge_time: f64,
    /// `|x − y|_E`
    pub delta: f64,
    /// `½|v|² − ½|u|²`
    pub energy_excess: f64,
    /// Sup-distance between the two trajectories at every step.
    pub distances: Vec<f64>,
}

/// Merge tolerance in the sup norm.
pub const MERGE_TOLERANCE: f64 = 1e-8;

/// Steers the skeleton started at `y` onto the one driven by `u` from `x`.
///
/// With `z = X_v − X_u` the control is
/// `v = G⁻¹(X_v)[G(X_u)u + F(X_u) − F(X_v) − z/|z|_E]`, so `z` obeys
/// `ż = Az − z/|z|_E` and its sup norm drops at unit rate. The last step
/// before merging uses the control that lands exactly on `X_u`.
pub fn feedback_connector(
    x: &Field,
    y: &Field,
    u: &ControlPath,
    model: &ModelSpec,
    op: &OperatorDisc,
    cfg: &SimConfig,
) -> Result<Connection> {
    x.check_same_shape(y)?;
    let dt = cfg.dt;
    if (u.dt - dt).abs() > 1e-12 * dt {
        return Err(Error::InvalidArgument("control time step differs from dt".into()));
    }
    let steps = u.steps();
    let delta = x.sub(y).sup_norm();
    let horizon = dt * steps as f64;
    if horizon + 1e-12 < delta {
        return Err(Error::InvalidArgument(format!(
            "control horizon {horizon} is shorter than the initial distance {delta}"
        )));
    }
    let grid = *op.grid();
    let mut stepper = Stepper::new(model, op, dt)?;
    let mut xu = x.clone();
    let mut xv = y.clone();
    let mut reference = vec![xu.clone()];
    let mut merged = vec![xv.clone()];
    let mut controls = Vec::with_capacity(steps);
    let mut distances = vec![delta];
    let mut merge_time = if delta < MERGE_TOLERANCE { Some(0.0) } else { None };
    if merge_time.is_some() {
        xv = xu.clone();
    }
    let mut fu = Field::zeros(grid);
    let mut fv = Field::zeros(grid);
    for n in 0..steps {
        let t = (n + 1) as f64 * dt;
        let un = &u.controls[n];
        let vn = if merge_time.is_some() {
            un.clone()
        } else {
            let z = xv.sub(&xu);
            let dist = z.sup_norm();
            model::eval_f_into(model, &xu, &mut fu)?;
            model::eval_f_into(model, &xv, &mut fv)?;
            let mut rhs = model::apply_g(model, &xu, un)?;
            rhs.axpy(1.0, &fu);
            rhs.axpy(-1.0, &fv);
            // once a full unit-rate step would overshoot, land exactly on X_u
            let pull = if dist <= dt { 1.0 / dt } else { 1.0 / dist };
            rhs.axpy(-pull, &z);
            model::apply_g_inverse(model, &xv, &rhs)?
        };
        stepper.step_controlled(&mut xu, un)?;
        stepper.step_controlled(&mut xv, &vn)?;
        let dist = xv.sub(&xu).sup_norm();
        if merge_time.is_none() && dist < MERGE_TOLERANCE {
            merge_time = Some(t);
            xv = xu.clone();
        }
        distances.push(if merge_time.is_some() { 0.0 } else { dist });
        controls.push(vn);
        reference.push(xu.clone());
        merged.push(xv.clone());
        if merge_time.is_none() && t > 2.0 * delta + 0.5 * dt {
            return Err(Error::NoMerge {
                deadline: 2.0 * delta,
                distance: dist,
            });
        }
    }
    let merge_time = match merge_time {
        Some(t) => t,
        None => {
            return Err(Error::NoMerge {
                deadline: 2.0 * delta,
                distance: *distances.last().unwrap_or(&delta),
            })
        }
    };
    let control = ControlPath::new(dt, controls);
    let energy_excess = control.energy() - u.energy();
    Ok(Connection {
        control,
        merged: TrajectoryPath::new(dt, merged),
        reference: TrajectoryPath::new(dt, reference),
        merge_time,
        delta,
        energy_excess,
        distances,
    })
}

/// The two terms on the right of the reversed-path energy bound:
/// `½∫|u|² ≤ C·h1_drop + C·growth`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyBound {
    /// `|x|²_{H¹} − |S(T)x|²_{H¹}`
    pub h1_drop: f64,
    /// `T·(1 + sup_t |X⁰_x(t)|_E^{1+ρ})²`
    pub growth: f64,
}

impl EnergyBound {
    /// Smallest `C` for which the bound holds with the given energy.
    pub fn constant_for(&self, energy: f64) -> f64 {
        energy / (self.h1_drop + self.growth)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReversedPath {
    pub path: TrajectoryPath,
    pub control: ControlPath,
    pub report: ActionReport,
    pub bound: EnergyBound,
}

/// Runs the flow from `x` for `horizon`, reverses it into `Y(t) = X⁰_x(T − t)`
/// and drives it with `u = −2G⁻¹(Y)(AY + F(Y))`, evaluated at step midpoints.
pub fn reversed_path(
    x: &Field,
    horizon: f64,
    model: &ModelSpec,
    op: &OperatorDisc,
    cfg: &SimConfig,
) -> Result<ReversedPath> {
    if !op.has_eigen() {
        return Err(Error::EigenUnavailable);
    }
    let flow_cfg = SimConfig {
        t_max: horizon,
        observer_stride: 1,
        epsilon: 0.0,
        ..*cfg
    };
    let flow = sim::integrate_flow(x, model, op, &flow_cfg)?;
    let path = flow.reversed();
    let grid = *op.grid();
    let mut ay = Field::zeros(grid);
    let mut fy = Field::zeros(grid);
    let mut controls = Vec::with_capacity(path.steps());
    for w in path.states.windows(2) {
        let mid = w[0].midpoint(&w[1]);
        grid::apply_a_into(op, &mid, &mut ay);
        model::eval_f_into(model, &mid, &mut fy)?;
        ay.axpy(1.0, &fy);
        ay.scale(-2.0);
        controls.push(model::apply_g_inverse(model, &mid, &ay)?);
    }
    let control = ControlPath::new(path.dt, controls);
    let report = ActionReport::from_control(control.clone());
    let rho = model.dissipativity.rho;
    let h1 = |f: &Field| grid::sobolev_norm(f, 1.0, op).map(|v| v * v);
    let sx = grid::semigroup_apply(op, horizon, x)?;
    let peak = flow.states.iter().map(Field::sup_norm).fold(0.0, f64::max);
    let bound = EnergyBound {
        h1_drop: h1(x)? - h1(&sx)?,
        growth: horizon * (1.0 + peak.powf(1.0 + rho)).powi(2),
    };
    Ok(ReversedPath {
        path,
        control,
        report,
        bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_operator, GridSpec};
    use crate::sim::Flow;

    fn setup(points: usize) -> (ModelSpec, OperatorDisc) {
        let model = ModelSpec::allen_cahn(5.0);
        let grid = GridSpec::new(5.0, points, 1).unwrap();
        let op = build_operator(&model, &grid).unwrap();
        (model, op)
    }

    fn bump(grid: GridSpec, amp: f64) -> Field {
        Field::from_fn(grid, |_, xi| amp * (std::f64::consts::PI * xi / 5.0).sin())
    }

    #[test]
    fn flow_has_small_control() {
        let (model, op) = setup(49);
        let cfg = SimConfig::new(1e-3, 2.0, 0.0);
        let flow = sim::integrate_flow(&bump(*op.grid(), 0.3), &model, &op, &cfg).unwrap();
        let rep = action(&flow, &model, &op).unwrap();
        let worst = rep
            .recovered_control
            .controls
            .iter()
            .map(Field::h_norm)
            .fold(0.0, f64::max);
        assert!(worst < 1e-2, "{worst}");
        assert!(rep.total_action < 1e-4);
        assert!((rep.total_action - rep.per_step.iter().sum::<f64>()).abs() < 1e-15);
    }

    #[test]
    fn constant_path_control() {
        let (model, op) = setup(49);
        let x = bump(*op.grid(), 0.5);
        let path = TrajectoryPath::constant(&x, 0.1, 4);
        let u = recover_control(&path, &model, &op).unwrap();
        let mut expected = grid::apply_a(&op, &x).unwrap();
        expected.axpy(1.0, &model::eval_f(&model, &x).unwrap());
        expected.scale(-1.0);
        for um in &u.controls {
            assert!(um.sub(&expected).sup_norm() < 1e-12);
        }
    }

    #[test]
    fn action_is_quadratic_in_control() {
        let (model, op) = setup(49);
        let x = bump(*op.grid(), 0.5);
        let rep = action(&TrajectoryPath::constant(&x, 0.1, 3), &model, &op).unwrap();
        let u = &rep.recovered_control;
        assert!((u.scaled(3.0).energy() - 9.0 * u.energy()).abs() < 1e-12 * u.energy());
    }

    #[test]
    fn connector_identity_when_starts_agree() {
        let (model, op) = setup(49);
        let x = bump(*op.grid(), 0.5);
        let u = ControlPath::new(1e-3, vec![bump(*op.grid(), 0.2); 50]);
        let cfg = SimConfig::new(1e-3, 0.05, 0.0);
        let c = feedback_connector(&x, &x, &u, &model, &op, &cfg).unwrap();
        assert_eq!(c.merge_time, 0.0);
        assert_eq!(c.control, u);
        assert_eq!(c.merged, c.reference);
    }

    #[test]
    fn connector_rejects_mismatched_step() {
        let (model, op) = setup(49);
        let x = bump(*op.grid(), 0.5);
        let y = bump(*op.grid(), 0.9);
        let u = ControlPath::zeros(&x, 1e-3, 100);
        let cfg = SimConfig::new(2e-3, 0.2, 0.0);
        assert!(matches!(
            feedback_connector(&x, &y, &u, &model, &op, &cfg),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn equilibrium_reversed_path_is_free() {
        let (model, op) = setup(49);
        let zero = Field::zeros(*op.grid());
        let cfg = SimConfig::new(1e-2, 1.0, 0.0);
        let rp = reversed_path(&zero, 1.0, &model, &op, &cfg).unwrap();
        assert_eq!(rp.report.total_action, 0.0);
        assert!(rp.path.states.iter().all(|s| s.sup_norm() == 0.0));
    }

    #[test]
    fn skeleton_replays_reversed_path() {
        let (model, op) = setup(49);
        let x = bump(*op.grid(), 0.3);
        let mut errs = Vec::new();
        for dt in [2e-3, 1e-3] {
            let cfg = SimConfig::new(dt, 1.0, 0.0);
            let rp = reversed_path(&x, 1.0, &model, &op, &cfg).unwrap();
            let replay =
                sim::integrate_skeleton(rp.path.first(), &rp.control, &model, &op, &cfg, |_, _| Flow::Continue)
                    .unwrap();
            errs.push(replay.sup_distance(&rp.path));
        }
        let ratio = errs[0] / errs[1];
        // at least first order in dt
        assert!(errs[1] < 1e-3 && ratio > 1.7, "{errs:?}");
    }
}
