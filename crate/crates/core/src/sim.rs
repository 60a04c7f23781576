//! Linear-implicit Euler–Maruyama integration of the mild equation
//!
//! ```text
//! (I − dt·A) X_{n+1} = X_n + dt·F(X_n) + √ε·G(X_n)·ΔW_n
//! ```
//!
//! and of its deterministic relatives: the unperturbed flow (`ε = 0`), the
//! controlled skeleton (`√ε·G·ΔW` replaced by `dt·G(X_n)·u_n`) and the
//! stochastic convolution with a frozen diffusion argument.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, GridSpec, ImplicitSolver, OperatorDisc};
use crate::model::{self, ModelSpec};
use crate::noise::NoiseStream;
use crate::path::{ControlPath, TrajectoryPath};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub t_max: f64,
    pub epsilon: f64,
    pub blowup_threshold: f64,
    pub observer_stride: usize,
}

impl SimConfig {
    /// `dt = min(0.1·Δξ², 1e-3)`
    pub fn default_dt(grid: &GridSpec) -> f64 {
        (0.1 * grid.spacing().powi(2)).min(1e-3)
    }

    pub fn new(dt: f64, t_max: f64, epsilon: f64) -> Self {
        Self {
            dt,
            t_max,
            epsilon,
            blowup_threshold: 1e6,
            observer_stride: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt < self.t_max) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < dt < t_max, got dt = {}, t_max = {}",
                self.dt, self.t_max
            )));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::InvalidArgument("epsilon must be nonnegative".into()));
        }
        if !(self.blowup_threshold > 0.0) || self.observer_stride == 0 {
            return Err(Error::InvalidArgument(
                "blowup_threshold must be positive and observer_stride at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_max / self.dt).round() as usize
    }
}

/// What an observer wants after seeing a state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Stop,
}

/// Reusable single-step integrator with a pre-factorised implicit solve.
#[derive(Clone, Debug)]
pub struct Stepper<'a> {
    model: &'a ModelSpec,
    solver: ImplicitSolver,
    dt: f64,
    drift: Field,
    forcing: Field,
    noise: Field,
}

impl<'a> Stepper<'a> {
    pub fn new(model: &'a ModelSpec, op: &OperatorDisc, dt: f64) -> Result<Self> {
        let grid = *op.grid();
        Ok(Self {
            model,
            solver: ImplicitSolver::new(op, dt)?,
            dt,
            drift: Field::zeros(grid),
            forcing: Field::zeros(grid),
            noise: Field::zeros(grid),
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Unperturbed step `(I − dt·A) X' = X + dt·F(X)`.
    pub fn step_flow(&mut self, state: &mut Field) -> Result<()> {
        model::eval_f_into(self.model, state, &mut self.drift)?;
        let dt = self.dt;
        for (x, f) in state.values_mut().iter_mut().zip(self.drift.values()) {
            *x += dt * f;
        }
        self.solver.solve_in_place(state);
        Ok(())
    }

    /// Controlled step with drift `F(X) + G(X)u`.
    pub fn step_controlled(&mut self, state: &mut Field, control: &Field) -> Result<()> {
        model::eval_f_into(self.model, state, &mut self.drift)?;
        let gu = model::apply_g(self.model, state, control)?;
        let dt = self.dt;
        for ((x, f), g) in state.values_mut().iter_mut().zip(self.drift.values()).zip(gu.values()) {
            *x += dt * (f + g);
        }
        self.solver.solve_in_place(state);
        Ok(())
    }

    /// Stochastic step; draws `ΔW` from `stream` unless `ε = 0`.
    pub fn step_noisy(&mut self, state: &mut Field, epsilon: f64, stream: &mut NoiseStream) -> Result<()> {
        if epsilon == 0.0 {
            return self.step_flow(state);
        }
        model::eval_f_into(self.model, state, &mut self.drift)?;
        stream.fill_increment(self.dt, &mut self.noise);
        let amp = epsilon.sqrt();
        let dt = self.dt;
        if self.model.has_additive_noise() {
            for ((x, f), w) in state.values_mut().iter_mut().zip(self.drift.values()).zip(self.noise.values()) {
                *x += dt * f + amp * w;
            }
        } else {
            self.forcing = model::apply_g(self.model, state, &self.noise)?;
            for ((x, f), w) in state.values_mut().iter_mut().zip(self.drift.values()).zip(self.forcing.values()) {
                *x += dt * f + amp * w;
            }
        }
        self.solver.solve_in_place(state);
        Ok(())
    }

    /// Linear step `(I − dt·A) Y' = Y + √ε·G(frozen)·ΔW`.
    pub fn step_convolution(
        &mut self,
        state: &mut Field,
        frozen: &Field,
        epsilon: f64,
        stream: &mut NoiseStream,
    ) -> Result<()> {
        stream.fill_increment(self.dt, &mut self.noise);
        let gw = model::apply_g(self.model, frozen, &self.noise)?;
        let amp = epsilon.sqrt();
        for (x, w) in state.values_mut().iter_mut().zip(gw.values()) {
            *x += amp * w;
        }
        self.solver.solve_in_place(state);
        Ok(())
    }
}

fn check_blowup(state: &Field, threshold: f64, time: f64) -> Result<()> {
    let norm = state.sup_norm();
    if !(norm <= threshold) {
        return Err(Error::BlowUp { time, norm });
    }
    Ok(())
}

fn map_blowup(err: Error, time: f64) -> Error {
    match err {
        Error::NonFiniteOutput { .. } => Error::BlowUp {
            time,
            norm: f64::INFINITY,
        },
        e => e,
    }
}

/// One stochastic step from `state`.
pub fn step_spde(
    state: &Field,
    model: &ModelSpec,
    op: &OperatorDisc,
    cfg: &SimConfig,
    stream: &mut NoiseStream,
) -> Result<Field> {
    let mut stepper = Stepper::new(model, op, cfg.dt)?;
    let mut next = state.clone();
    stepper
        .step_noisy(&mut next, cfg.epsilon, stream)
        .map_err(|e| map_blowup(e, cfg.dt))?;
    check_blowup(&next, cfg.blowup_threshold, cfg.dt)?;
    Ok(next)
}

fn run_loop(
    x0: &Field,
    cfg: &SimConfig,
    mut observer: impl FnMut(f64, &Field) -> Flow,
    mut advance: impl FnMut(usize, &mut Field) -> Result<()>,
) -> Result<TrajectoryPath> {
    cfg.validate()?;
    let steps = cfg.steps();
    let stride = cfg.observer_stride;
    let mut state = x0.clone();
    let mut states = vec![state.clone()];
    for n in 0..steps {
        let t = (n + 1) as f64 * cfg.dt;
        advance(n, &mut state).map_err(|e| map_blowup(e, t))?;
        check_blowup(&state, cfg.blowup_threshold, t)?;
        if (n + 1) % stride == 0 {
            states.push(state.clone());
            if observer(t, &state) == Flow::Stop {
                break;
            }
        }
    }
    Ok(TrajectoryPath::new(cfg.dt * stride as f64, states))
}

/// Iterates [`step_spde`] to `t_max`, recording and observing every
/// `observer_stride` steps.
pub fn integrate_spde(
    x0: &Field,
    model: &ModelSpec,
    op: &OperatorDisc,
    cfg: &SimConfig,
    stream: &mut NoiseStream,
    observer: impl FnMut(f64, &Field) -> Flow,
) -> Result<TrajectoryPath> {
    let mut stepper = Stepper::new(model, op, cfg.dt)?;
    let eps = cfg.epsilon;
    run_loop(x0, cfg, observer, |_, s| stepper.step_noisy(s, eps, stream))
}

/// Unperturbed flow `X⁰_x` on `[0, t_max]`.
pub fn integrate_flow(x0: &Field, model: &ModelSpec, op: &OperatorDisc, cfg: &SimConfig) -> Result<TrajectoryPath> {
    let mut stepper = Stepper::new(model, op, cfg.dt)?;
    run_loop(x0, cfg, |_, _| Flow::Continue, |_, s| stepper.step_flow(s))
}

/// Controlled skeleton `X^{0,u}_x`; `u` must cover every step.
pub fn integrate_skeleton(
    x0: &Field,
    u: &ControlPath,
    model: &ModelSpec,
    op: &OperatorDisc,
    cfg: &SimConfig,
    observer: impl FnMut(f64, &Field) -> Flow,
) -> Result<TrajectoryPath> {
    if u.steps() < cfg.steps() {
        return Err(Error::InvalidArgument(format!(
            "control covers {} steps, integration needs {}",
            u.steps(),
            cfg.steps()
        )));
    }
    if (u.dt - cfg.dt).abs() > 1e-12 * cfg.dt {
        return Err(Error::InvalidArgument("control time step differs from dt".into()));
    }
    let mut stepper = Stepper::new(model, op, cfg.dt)?;
    run_loop(x0, cfg, observer, |n, s| stepper.step_controlled(s, &u.controls[n]))
}

/// Stochastic convolution with the diffusion argument frozen along `frozen`
/// (held at its last state if shorter than the run).
pub fn stochastic_convolution(
    frozen: &TrajectoryPath,
    model: &ModelSpec,
    op: &OperatorDisc,
    cfg: &SimConfig,
    stream: &mut NoiseStream,
) -> Result<TrajectoryPath> {
    if frozen.states.is_empty() {
        return Err(Error::InvalidArgument("frozen trajectory is empty".into()));
    }
    frozen.states[0].check_same_shape(&Field::zeros(*op.grid()))?;
    let zero = Field::zeros(*op.grid());
    if cfg.epsilon == 0.0 {
        cfg.validate()?;
        let recorded = cfg.steps() / cfg.observer_stride + 1;
        return Ok(TrajectoryPath::new(cfg.dt * cfg.observer_stride as f64, vec![zero; recorded]));
    }
    let mut stepper = Stepper::new(model, op, cfg.dt)?;
    let eps = cfg.epsilon;
    let last = frozen.states.len() - 1;
    run_loop(&zero, cfg, |_, _| Flow::Continue, |n, s| {
        stepper.step_convolution(s, &frozen.states[n.min(last)], eps, stream)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_operator;
    use crate::noise::split_stream;

    fn setup(m: usize) -> (ModelSpec, OperatorDisc, GridSpec) {
        let model = ModelSpec::allen_cahn(5.0);
        let grid = GridSpec::new(5.0, m, 1).unwrap();
        let op = build_operator(&model, &grid).unwrap();
        (model, op, grid)
    }

    #[test]
    fn pure_heat_step() {
        let (mut model, op, _) = setup(49);
        model.reaction = crate::model::Reaction::Polynomial {
            coefficients: vec![0.0, 0.0, 0.0, -0.0],
        };
        let e1 = op.eigenvector(0, 0).unwrap();
        let a1 = op.eigenvalues(0).unwrap()[0];
        let dt = 0.01;
        let cfg = SimConfig::new(dt, 1.0, 0.0);
        let mut stream = NoiseStream::new(0);
        let next = step_spde(&e1, &model, &op, &cfg, &mut stream).unwrap();
        assert!(next.sub(&e1.scaled(1.0 / (1.0 + dt * a1))).sup_norm() < 1e-13);
    }

    #[test]
    fn flow_equals_zero_control_skeleton_bitwise() {
        let (model, op, grid) = setup(49);
        let x0 = Field::from_fn(grid, |_, xi| 0.3 * (xi * 1.3).sin());
        let cfg = SimConfig::new(0.01, 2.0, 0.0);
        let mut stream = split_stream(&NoiseStream::new(1), 0);
        let a = integrate_spde(&x0, &model, &op, &cfg, &mut stream, |_, _| Flow::Continue).unwrap();
        let u = ControlPath::zeros(&x0, cfg.dt, cfg.steps());
        let b = integrate_skeleton(&x0, &u, &model, &op, &cfg, |_, _| Flow::Continue).unwrap();
        assert_eq!(a.states.len(), b.states.len());
        for (s, t) in a.states.iter().zip(&b.states) {
            assert!(s.values().iter().zip(t.values()).all(|(p, q)| p == q));
        }
    }

    #[test]
    fn observer_can_stop() {
        let (model, op, grid) = setup(19);
        let mut cfg = SimConfig::new(0.01, 10.0, 0.1);
        cfg.observer_stride = 10;
        let mut stream = split_stream(&NoiseStream::new(1), 0);
        let mut calls = 0;
        let path = integrate_spde(&Field::zeros(grid), &model, &op, &cfg, &mut stream, |t, _| {
            calls += 1;
            if t >= 0.5 - 1e-12 {
                Flow::Stop
            } else {
                Flow::Continue
            }
        })
        .unwrap();
        assert_eq!(calls, 5);
        assert_eq!(path.states.len(), 6);
        assert!((path.dt - 0.1).abs() < 1e-15);
    }

    #[test]
    fn blowup_is_reported() {
        let (model, op, grid) = setup(19);
        let x0 = Field::from_fn(grid, |_, _| 50.0);
        let cfg = SimConfig::new(0.1, 1.0, 0.0);
        let err = integrate_flow(&x0, &model, &op, &cfg).unwrap_err();
        assert!(matches!(err, Error::BlowUp { .. }), "{err:?}");
    }

    #[test]
    fn convolution_vanishes_without_noise() {
        let (model, op, grid) = setup(19);
        let frozen = TrajectoryPath::constant(&Field::zeros(grid), 0.01, 10);
        let cfg = SimConfig::new(0.01, 0.5, 0.0);
        let mut stream = NoiseStream::new(3);
        let y = stochastic_convolution(&frozen, &model, &op, &cfg, &mut stream).unwrap();
        assert!(y.states.iter().all(|s| s.sup_norm() == 0.0));
        assert_eq!(y.states.len(), 51);
    }

    #[test]
    fn invalid_config_rejected() {
        let (model, op, grid) = setup(19);
        let cfg = SimConfig::new(2.0, 1.0, 0.0);
        assert!(integrate_flow(&Field::zeros(grid), &model, &op, &cfg).is_err());
    }
}
