//! Equilibria, minimum-action paths and quasipotentials.
//!
//! The discrete action of a path `φ_0, …, φ_N` with step `dt` is
//! `Σ_m ½·dt·|u_m|²_H` with `u_m` the recovered control of
//! [`recover_control_with`](crate::control::recover_control_with), by default
//! with the midpoint placement of `A`. It is a smooth function
//! of the interior states; the minimiser is a preconditioned L-BFGS whose
//! preconditioner is the exact Hessian of the linear part, block diagonal in
//! the eigenbasis of `A` and tridiagonal in time.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::control::{self, ActionReport, ActionScheme};
use crate::error::{Error, Result};
use crate::exit::DomainSurrogate;
use crate::grid::{self, Field, GridSpec, OperatorDisc};
use crate::model::{self, ModelSpec};
use crate::path::TrajectoryPath;
use crate::sim::Stepper;

/// Eigenvalues above this count as unstable.
pub const UNSTABLE_THRESHOLD: f64 = 1e-8;
/// Equilibria closer than this in the sup norm are merged.
pub const DEDUP_DISTANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub label: String,
    pub state: Field,
    /// `|Ax + F(x)|_H`
    pub residual: f64,
    pub unstable_count: usize,
    /// Largest real parts of the Jacobian spectrum, descending.
    pub leading_eigenvalues: Vec<f64>,
    /// Eigenvector of the leading eigenvalue, unit in `H`, when it is unstable.
    pub unstable_direction: Option<Field>,
    pub iterations: usize,
}

impl Equilibrium {
    pub fn is_stable(&self) -> bool {
        self.unstable_count == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: usize,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSearch {
    pub equilibria: Vec<Equilibrium>,
    pub failures: Vec<SeedFailure>,
}

fn residual_field(model: &ModelSpec, op: &OperatorDisc, x: &Field) -> Result<Field> {
    let mut r = grid::apply_a(op, x)?;
    r.axpy(1.0, &model::eval_f(model, x)?);
    Ok(r)
}

/// Dense `A + DF(x)` in component-major ordering.
fn jacobian(model: &ModelSpec, op: &OperatorDisc, x: &Field) -> DMatrix<f64> {
    let (r, m) = x.shape();
    let n = r * m;
    let mut jac = DMatrix::zeros(n, n);
    for c in 0..r {
        let comp = op.component(c);
        for j in 0..m {
            let row = c * m + j;
            jac[(row, row)] += comp.diag[j];
            if j > 0 {
                jac[(row, row - 1)] += comp.lower[j];
            }
            if j + 1 < m {
                jac[(row, row + 1)] += comp.upper[j];
            }
        }
    }
    let mut xv = vec![0.0; r];
    let mut df = vec![0.0; r * r];
    for j in 0..m {
        x.at(j, &mut xv);
        model.reaction_jacobian(&xv, &mut df);
        for a in 0..r {
            for b in 0..r {
                jac[(a * m + j, b * m + j)] += df[a * r + b];
            }
        }
    }
    jac
}

fn spectrum(jac: &DMatrix<f64>) -> (Vec<f64>, bool) {
    let sym_err = (jac - jac.transpose()).amax();
    if sym_err <= 1e-12 * jac.amax().max(1.0) {
        let eig = SymmetricEigen::new(jac.clone());
        let mut v: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        v.sort_by(|a, b| b.total_cmp(a));
        (v, true)
    } else {
        let mut v: Vec<f64> = jac.complex_eigenvalues().iter().map(|z| z.re).collect();
        v.sort_by(|a, b| b.total_cmp(a));
        (v, false)
    }
}

/// Leading eigenvector by inverse iteration shifted just above `lambda`.
fn leading_vector(jac: &DMatrix<f64>, lambda: f64, grid: GridSpec) -> Option<Field> {
    let n = jac.nrows();
    let shift = lambda + 1e-7 * (1.0 + lambda.abs());
    let shifted = jac - DMatrix::identity(n, n) * shift;
    let lu = shifted.lu();
    let mut v = nalgebra::DVector::from_element(n, 1.0 / (n as f64).sqrt());
    for _ in 0..6 {
        let w = lu.solve(&v)?;
        let norm = w.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return None;
        }
        v = w / norm;
    }
    let mut f = Field::from_values(grid, v.iter().copied().collect()).ok()?;
    // fix the sign: largest entry positive
    let (_, big) = f
        .values()
        .iter()
        .fold((0.0f64, 0.0), |(m, s), &x| if x.abs() > m { (x.abs(), x) } else { (m, s) });
    let norm = f.h_norm();
    f.scale(big.signum() / norm);
    Some(f)
}

/// Classifies a state assumed to be an equilibrium.
pub fn classify(model: &ModelSpec, op: &OperatorDisc, state: Field, label: String, iterations: usize) -> Result<Equilibrium> {
    let residual = residual_field(model, op, &state)?.h_norm();
    let jac = jacobian(model, op, &state);
    let (eigs, _) = spectrum(&jac);
    let unstable_count = eigs.iter().filter(|&&v| v > UNSTABLE_THRESHOLD).count();
    let keep = (unstable_count + 3).max(5).min(eigs.len());
    let unstable_direction = if unstable_count > 0 {
        leading_vector(&jac, eigs[0], *state.grid())
    } else {
        None
    };
    Ok(Equilibrium {
        label,
        state,
        residual,
        unstable_count,
        leading_eigenvalues: eigs[..keep].to_vec(),
        unstable_direction,
        iterations,
    })
}

/// Damped Newton on `Ax + F(x) = 0`. Returns the final state, its residual
/// and the iteration count.
fn newton(model: &ModelSpec, op: &OperatorDisc, seed: &Field) -> Result<(Field, f64, usize)> {
    let grid = *op.grid();
    let mut x = seed.clone();
    let mut r = residual_field(model, op, &x)?;
    let mut norm = r.h_norm();
    let mut iterations = 0;
    for _ in 0..100 {
        if norm < 1e-12 {
            break;
        }
        let jac = jacobian(model, op, &x);
        let rhs = nalgebra::DVector::from_iterator(r.values().len(), r.values().iter().map(|v| -v));
        let Some(step) = jac.lu().solve(&rhs) else {
            break;
        };
        let step = Field::from_values(grid, step.iter().copied().collect())?;
        iterations += 1;
        let mut s = 1.0;
        let mut accepted = false;
        while s > 1e-4 {
            let mut trial = x.clone();
            trial.axpy(s, &step);
            if let Ok(tr) = residual_field(model, op, &trial) {
                let tn = tr.h_norm();
                if tn < (1.0 - 1e-4 * s) * norm {
                    x = trial;
                    r = tr;
                    norm = tn;
                    accepted = true;
                    break;
                }
            }
            s *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok((x, norm, iterations))
}

/// Newton from every seed, deduplicated and classified.
pub fn find_equilibria(model: &ModelSpec, op: &OperatorDisc, seeds: &[Field]) -> Result<EquilibriumSearch> {
    let mut equilibria: Vec<Equilibrium> = Vec::new();
    let mut failures = Vec::new();
    for (i, seed) in seeds.iter().enumerate() {
        if !seed.is_finite() {
            return Err(Error::InvalidArgument(format!("seed {i} is not finite")));
        }
        let (x, res, iterations) = newton(model, op, seed)?;
        if !(res < 1e-9) {
            failures.push(SeedFailure { seed: i, residual: res });
            continue;
        }
        if equilibria.iter().any(|e| e.state.sub(&x).sup_norm() < DEDUP_DISTANCE) {
            continue;
        }
        let label = format!("eq{}", equilibria.len());
        equilibria.push(classify(model, op, x, label, iterations)?);
    }
    Ok(EquilibriumSearch { equilibria, failures })
}

/// Region allowed to a constrained path: the basin surrogate plus sup-norm
/// balls of radius `rho` around `centers`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionConstraint {
    pub domain: DomainSurrogate,
    pub rho: f64,
    pub centers: Vec<Field>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintMode {
    /// Balls at the endpoints only.
    Tilde,
    /// Balls at the endpoints and at every saddle.
    Hat,
}

impl RegionConstraint {
    pub fn new(
        domain: DomainSurrogate,
        rho: f64,
        mode: ConstraintMode,
        start: &Field,
        end: &Field,
        saddles: &[Equilibrium],
    ) -> Self {
        let mut centers = vec![start.clone(), end.clone()];
        if mode == ConstraintMode::Hat {
            centers.extend(saddles.iter().filter(|s| !s.is_stable()).map(|s| s.state.clone()));
        }
        Self { domain, rho, centers }
    }

    /// Distance from `x` to the allowed region and its gradient direction
    /// (with respect to raw node values), or `None` when inside.
    fn distance(&self, x: &Field) -> Option<(f64, Field)> {
        let (s, plane) = self.domain.evaluate(x);
        if s >= 0.0 {
            return None;
        }
        let mut best = -s;
        let mut grad = self.domain.planes[plane].normal.scaled(-x.grid().spacing());
        let (r, _) = x.shape();
        let mut d = vec![0.0; r];
        for c in &self.centers {
            let diff = x.sub(c);
            let e = diff.sup_norm();
            let dist = e - self.rho;
            if dist <= 0.0 {
                return None;
            }
            if dist < best {
                best = dist;
                // spread the subgradient over tied maximisers so symmetric
                // states get symmetric descent directions
                let m = x.grid().points;
                let mut ties = Vec::new();
                for j in 0..m {
                    diff.at(j, &mut d);
                    if d.iter().map(|v| v * v).sum::<f64>().sqrt() >= e * (1.0 - 1e-12) {
                        ties.push(j);
                    }
                }
                grad = Field::zeros(*x.grid());
                let w = 1.0 / (ties.len() as f64 * e);
                for &j in &ties {
                    diff.at(j, &mut d);
                    let scaled: Vec<f64> = d.iter().map(|v| v * w).collect();
                    grad.set_at(j, &scaled);
                }
            }
        }
        Some((best, grad))
    }

    pub fn violation(&self, x: &Field) -> f64 {
        self.distance(x).map_or(0.0, |(d, _)| d)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MamProblem {
    pub start: Field,
    pub end: Field,
    pub horizon: f64,
    /// Number of time intervals `N_t`.
    pub path_points: usize,
    pub constraint: Option<RegionConstraint>,
    pub penalty_weight: f64,
    pub max_iterations: usize,
    /// Stop when the sup norm of the gradient falls below this.
    pub gradient_tolerance: f64,
    pub memory: usize,
    pub scheme: ActionScheme,
}

impl MamProblem {
    pub fn new(start: Field, end: Field, horizon: f64, path_points: usize) -> Self {
        Self {
            start,
            end,
            horizon,
            path_points,
            constraint: None,
            penalty_weight: 1e3,
            max_iterations: 5000,
            gradient_tolerance: 1e-6,
            memory: 10,
            scheme: ActionScheme::Midpoint,
        }
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.path_points as f64
    }

    fn validate(&self) -> Result<()> {
        self.start.check_same_shape(&self.end)?;
        if self.path_points < 8 {
            return Err(Error::InvalidArgument(format!(
                "path needs at least 8 intervals, got {}",
                self.path_points
            )));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::InvalidArgument("horizon must be positive".into()));
        }
        if let Some(c) = &self.constraint {
            if !(c.rho > 0.0) || !(self.penalty_weight > 0.0) {
                return Err(Error::InvalidArgument(
                    "constraint needs positive rho and penalty weight".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Converged,
    MaxIterations,
    LineSearchFailure,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MamResult {
    pub path: TrajectoryPath,
    pub report: ActionReport,
    /// Action plus penalty.
    pub objective: f64,
    /// Largest distance of any path state outside the allowed region.
    pub violation: f64,
    pub converged: bool,
    pub termination: Termination,
    pub iterations: usize,
    pub gradient_norm: f64,
}

/// Straight line from `start` to `end`, with each interior state pushed once
/// through the flow map to damp high-frequency content.
pub fn initial_path(problem: &MamProblem, model: &ModelSpec, op: &OperatorDisc) -> Result<TrajectoryPath> {
    let mut path = TrajectoryPath::linear(&problem.start, &problem.end, problem.horizon, problem.path_points);
    let mut stepper = Stepper::new(model, op, path.dt)?;
    let n = path.states.len();
    for s in &mut path.states[1..n - 1] {
        stepper.step_flow(s)?;
    }
    Ok(path)
}

/// Action plus penalty and its gradient over interior states.
struct Objective<'a> {
    model: &'a ModelSpec,
    op: &'a OperatorDisc,
    problem: &'a MamProblem,
    dt: f64,
    grid: GridSpec,
}

impl<'a> Objective<'a> {
    fn size(&self) -> usize {
        let (r, m) = self.grid.shape();
        (self.problem.path_points - 1) * r * m
    }

    fn states(&self, x: &[f64]) -> Vec<Field> {
        let n = self.grid.components * self.grid.points;
        let mut states = Vec::with_capacity(self.problem.path_points + 1);
        states.push(self.problem.start.clone());
        for chunk in x.chunks(n) {
            states.push(Field::from_values(self.grid, chunk.to_vec()).expect("shape"));
        }
        states.push(self.problem.end.clone());
        states
    }

    fn flatten(&self, path: &TrajectoryPath) -> Vec<f64> {
        let n = path.states.len();
        path.states[1..n - 1]
            .iter()
            .flat_map(|s| s.values().iter().copied())
            .collect()
    }

    /// Returns the objective and fills `grad` when given.
    fn eval(&self, x: &[f64], mut grad: Option<&mut [f64]>) -> Result<f64> {
        let states = self.states(x);
        let (r, m) = self.grid.shape();
        let n = r * m;
        let h = self.grid.spacing();
        let dt = self.dt;
        let w = dt * h;
        let model = self.model;
        let additive = model.has_additive_noise();
        let steps = self.problem.path_points;
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut res = Field::zeros(self.grid);
        let mut scratch = Field::zeros(self.grid);
        let mut lam = Field::zeros(self.grid);
        let mut at_lam = Field::zeros(self.grid);
        let mut total = 0.0;
        let mut xv = vec![0.0; r];
        let mut uv = vec![0.0; r];
        let mut lv = vec![0.0; r];
        let mut mat = vec![0.0; r * r];
        let mut gm = vec![0.0; r];
        for k in 0..steps {
            let mid = control::step_residual(
                &states[k],
                &states[k + 1],
                dt,
                model,
                self.op,
                self.problem.scheme,
                &mut res,
                &mut scratch,
            )?;
            let u = if additive {
                res.clone()
            } else {
                model::apply_g_inverse(model, &mid, &res)?
            };
            total += 0.5 * w * u.values().iter().map(|v| v * v).sum::<f64>();
            let Some(g) = grad.as_deref_mut() else {
                continue;
            };
            // λ = w·G⁻ᵀu; grad_mid = −DFᵀλ − (λᵀ ∂g/∂x_c u)_c
            let mut grad_mid = Field::zeros(self.grid);
            for j in 0..m {
                mid.at(j, &mut xv);
                u.at(j, &mut uv);
                if additive {
                    lv.iter_mut().zip(&uv).for_each(|(l, u)| *l = w * u);
                } else {
                    model.diffusion_matrix(&xv, &mut mat);
                    let mut t = vec![0.0; r * r];
                    for a in 0..r {
                        for b in 0..r {
                            t[a * r + b] = mat[b * r + a];
                        }
                    }
                    lv.iter_mut().zip(&uv).for_each(|(l, u)| *l = w * u);
                    model::solve_small(&mut t, &mut lv, r).map_err(|_| Error::SingularDiffusion { node: j })?;
                }
                lam.set_at(j, &lv);
                model.reaction_jacobian(&xv, &mut mat);
                for c in 0..r {
                    gm[c] = -(0..r).map(|a| mat[a * r + c] * lv[a]).sum::<f64>();
                }
                if !additive {
                    for c in 0..r {
                        model.diffusion_derivative(&xv, c, &mut mat);
                        let mut q = 0.0;
                        for a in 0..r {
                            for b in 0..r {
                                q += lv[a] * mat[a * r + b] * uv[b];
                            }
                        }
                        gm[c] -= q;
                    }
                }
                grad_mid.set_at(j, &gm);
            }
            grid::apply_a_transpose_into(self.op, &lam, &mut at_lam);
            let inv = 1.0 / dt;
            // share of Aᵀλ owed to φ_{k+1} and φ_k
            let (ca, cb) = match self.problem.scheme {
                ActionScheme::Implicit => (1.0, 0.0),
                ActionScheme::Midpoint => (0.5, 0.5),
            };
            // φ_{k+1} is interior index k, φ_k is interior index k − 1
            if k + 1 < steps {
                let dst = &mut g[k * n..(k + 1) * n];
                for (((d, &l), &al), &gmv) in dst
                    .iter_mut()
                    .zip(lam.values())
                    .zip(at_lam.values())
                    .zip(grad_mid.values())
                {
                    *d += l * inv - ca * al + 0.5 * gmv;
                }
            }
            if k > 0 {
                let dst = &mut g[(k - 1) * n..k * n];
                for (((d, &l), &gmv), &al) in dst
                    .iter_mut()
                    .zip(lam.values())
                    .zip(grad_mid.values())
                    .zip(at_lam.values())
                {
                    *d += -l * inv + 0.5 * gmv - cb * al;
                }
            }
        }
        if let Some(c) = &self.problem.constraint {
            let wt = self.problem.penalty_weight;
            for (i, s) in states[1..steps].iter().enumerate() {
                if let Some((d, dir)) = c.distance(s) {
                    total += wt * d * d;
                    if let Some(g) = grad.as_deref_mut() {
                        for (gv, dv) in g[i * n..(i + 1) * n].iter_mut().zip(dir.values()) {
                            *gv += 2.0 * wt * d * dv;
                        }
                    }
                }
            }
        }
        if !total.is_finite() {
            return Err(Error::NonFiniteOutput { node: 0 });
        }
        Ok(total)
    }
}

/// Hessian of the linear part of the action, `dt·Δξ·LᵀL` with
/// `(Lφ)_m = (φ_{m+1} − φ_m)/dt − Aφ_{m+1}` (or `Aφ_{m+½}`), inverted mode by mode.
struct Preconditioner {
    scheme: ActionScheme,
    steps: usize,
    dt: f64,
    weight: f64,
    // per component: Euclidean-orthonormal eigenvectors as columns, and α_k
    bases: Vec<(DMatrix<f64>, Vec<f64>)>,
    // fallback without eigenpairs: −diag(A) per node
    local: Option<Vec<f64>>,
    points: usize,
    components: usize,
}

impl Preconditioner {
    fn new(op: &OperatorDisc, steps: usize, dt: f64, scheme: ActionScheme) -> Self {
        let grid = *op.grid();
        let (r, m) = grid.shape();
        let h = grid.spacing();
        let mut bases = Vec::new();
        let mut local = None;
        if op.has_eigen() {
            for c in 0..r {
                let eig = op.component(c).eigen().expect("eigen");
                let sq = h.sqrt();
                let v = DMatrix::from_fn(m, m, |j, k| eig.vector(k)[j] * sq);
                bases.push((v, eig.values().to_vec()));
            }
        } else {
            local = Some((0..r).flat_map(|c| op.component(c).diag.iter().map(|d| -d)).collect());
        }
        Self {
            scheme,
            steps,
            dt,
            weight: dt * h,
            bases,
            local,
            points: m,
            components: r,
        }
    }

    /// Solves the time-tridiagonal system of one mode in place.
    fn solve_mode(&self, alpha: f64, rhs: &mut [f64]) {
        let (p, q) = match self.scheme {
            ActionScheme::Implicit => (1.0 / self.dt + alpha, 1.0 / self.dt),
            ActionScheme::Midpoint => (1.0 / self.dt + 0.5 * alpha, 1.0 / self.dt - 0.5 * alpha),
        };
        let diag = self.weight * (p * p + q * q);
        let off = -self.weight * p * q;
        let n = rhs.len();
        let mut cp = vec![0.0; n];
        let mut piv = diag;
        cp[0] = off / piv;
        rhs[0] /= piv;
        for i in 1..n {
            piv = diag - off * cp[i - 1];
            cp[i] = off / piv;
            rhs[i] = (rhs[i] - off * rhs[i - 1]) / piv;
        }
        for i in (0..n - 1).rev() {
            rhs[i] -= cp[i] * rhs[i + 1];
        }
    }

    fn apply(&self, g: &[f64]) -> Vec<f64> {
        let interior = self.steps - 1;
        let (r, m) = (self.components, self.points);
        let n = r * m;
        let mut out = vec![0.0; g.len()];
        for c in 0..r {
            // columns are time slices
            let slab = DMatrix::from_fn(m, interior, |j, t| g[t * n + c * m + j]);
            if let Some(diag) = &self.local {
                let mut q: Vec<f64> = Vec::with_capacity(interior);
                for j in 0..m {
                    q.clear();
                    q.extend((0..interior).map(|t| slab[(j, t)]));
                    self.solve_mode(diag[c * m + j], &mut q);
                    for (t, v) in q.iter().enumerate() {
                        out[t * n + c * m + j] = *v;
                    }
                }
                continue;
            }
            let (v, alphas) = &self.bases[c];
            let mut coeffs = v.tr_mul(&slab);
            let mut row = vec![0.0; interior];
            for k in 0..m {
                for t in 0..interior {
                    row[t] = coeffs[(k, t)];
                }
                self.solve_mode(alphas[k], &mut row);
                for t in 0..interior {
                    coeffs[(k, t)] = row[t];
                }
            }
            let back = v * coeffs;
            for t in 0..interior {
                for j in 0..m {
                    out[t * n + c * m + j] = back[(j, t)];
                }
            }
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sup(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Minimises the discrete action (plus penalty) over interior path states.
pub fn mam_minimize(
    problem: &MamProblem,
    model: &ModelSpec,
    op: &OperatorDisc,
    init: &TrajectoryPath,
) -> Result<MamResult> {
    problem.validate()?;
    if init.steps() != problem.path_points {
        return Err(Error::InvalidArgument(format!(
            "initial path has {} intervals, problem has {}",
            init.steps(),
            problem.path_points
        )));
    }
    if init.first().sub(&problem.start).sup_norm() > 0.0 || init.last().sub(&problem.end).sup_norm() > 0.0 {
        return Err(Error::InvalidArgument("initial path endpoints differ from the problem's".into()));
    }
    let grid = *op.grid();
    problem.start.check_same_shape(&Field::zeros(grid))?;
    let dt = problem.dt();
    let obj = Objective {
        model,
        op,
        problem,
        dt,
        grid,
    };
    let pre = Preconditioner::new(op, problem.path_points, dt, problem.scheme);
    let size = obj.size();
    let mut x = obj.flatten(init);
    let mut g = vec![0.0; size];
    let mut f = obj.eval(&x, Some(&mut g))?;
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;
    let mut g_new = vec![0.0; size];
    while iterations < problem.max_iterations {
        if sup(&g) < problem.gradient_tolerance {
            termination = Termination::Converged;
            break;
        }
        // two-loop recursion with the preconditioner as initial inverse Hessian
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(s_hist.len());
        for (s, y) in s_hist.iter().zip(&y_hist).rev() {
            let rho = 1.0 / dot(y, s);
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qv, yv)| *qv -= a * yv);
            alphas.push(a);
        }
        let mut d = pre.apply(&q);
        for ((s, y), a) in s_hist.iter().zip(&y_hist).zip(alphas.iter().rev()) {
            let rho = 1.0 / dot(y, s);
            let b = rho * dot(y, &d);
            d.iter_mut().zip(s).for_each(|(dv, sv)| *dv += (a - b) * sv);
        }
        d.iter_mut().for_each(|v| *v = -*v);
        let mut gd = dot(&g, &d);
        if !(gd < 0.0) {
            s_hist.clear();
            y_hist.clear();
            d = pre.apply(&g);
            d.iter_mut().for_each(|v| *v = -*v);
            gd = dot(&g, &d);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + step * b).collect();
            if let Ok(ft) = obj.eval(&trial, Some(&mut g_new)) {
                if ft <= f + 1e-4 * step * gd {
                    accepted = Some((trial, ft));
                    break;
                }
            }
            step *= 0.5;
        }
        iterations += 1;
        let Some((trial, ft)) = accepted else {
            termination = Termination::LineSearchFailure;
            break;
        };
        let s: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-14 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if s_hist.len() == problem.memory {
                s_hist.remove(0);
                y_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
        }
        x = trial;
        f = ft;
        std::mem::swap(&mut g, &mut g_new);
    }
    if termination == Termination::MaxIterations && sup(&g) < problem.gradient_tolerance {
        termination = Termination::Converged;
    }
    let path = TrajectoryPath::new(dt, obj.states(&x));
    let report = control::action_with(&path, model, op, problem.scheme)?;
    let violation = problem
        .constraint
        .as_ref()
        .map_or(0.0, |c| path.states.iter().map(|s| c.violation(s)).fold(0.0, f64::max));
    Ok(MamResult {
        path,
        report,
        objective: f,
        violation,
        converged: termination == Termination::Converged,
        termination,
        iterations,
        gradient_norm: sup(&g),
    })
}

/// Analytic gradient of the MAM objective, exposed for verification.
pub fn mam_gradient(problem: &MamProblem, model: &ModelSpec, op: &OperatorDisc, path: &TrajectoryPath) -> Result<(f64, Vec<f64>)> {
    let grid = *op.grid();
    let obj = Objective {
        model,
        op,
        problem,
        dt: problem.dt(),
        grid,
    };
    let x = obj.flatten(path);
    let mut g = vec![0.0; x.len()];
    let f = obj.eval(&x, Some(&mut g))?;
    Ok((f, g))
}

/// MAM objective at a path.
pub fn mam_objective(problem: &MamProblem, model: &ModelSpec, op: &OperatorDisc, path: &TrajectoryPath) -> Result<f64> {
    let grid = *op.grid();
    let obj = Objective {
        model,
        op,
        problem,
        dt: problem.dt(),
        grid,
    };
    obj.eval(&obj.flatten(path), None)
}

/// Outer search over horizons.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonSchedule {
    pub horizons: Vec<f64>,
    pub path_points: usize,
    pub penalty_weight: f64,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
}

impl Default for HorizonSchedule {
    fn default() -> Self {
        Self {
            horizons: vec![5.0, 10.0, 20.0, 40.0],
            path_points: 200,
            penalty_weight: 1e3,
            max_iterations: 5000,
            gradient_tolerance: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonRun {
    pub horizon: f64,
    pub path_points: usize,
    pub action: f64,
    pub objective: f64,
    pub violation: f64,
    pub converged: bool,
    pub termination: Termination,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuasipotentialResult {
    /// Minimum over converged horizons of the objective (the action when
    /// unconstrained). Constrained runs stopped by the line search also count.
    pub value: f64,
    pub action: f64,
    pub violation: f64,
    pub best_horizon: f64,
    pub best_path: TrajectoryPath,
    pub runs: Vec<HorizonRun>,
    /// Optimised path at every horizon, in schedule order.
    pub paths: Vec<TrajectoryPath>,
}

fn schedule_minimize(
    x: &Field,
    y: &Field,
    constraint: Option<&RegionConstraint>,
    model: &ModelSpec,
    op: &OperatorDisc,
    schedule: &HorizonSchedule,
    warm: Option<&[TrajectoryPath]>,
) -> Result<QuasipotentialResult> {
    if schedule.horizons.is_empty() {
        return Err(Error::InvalidArgument("horizon schedule is empty".into()));
    }
    if let Some(w) = warm {
        if w.len() != schedule.horizons.len() {
            return Err(Error::InvalidArgument("one warm-start path per horizon is required".into()));
        }
    }
    let mut runs = Vec::new();
    let mut paths = Vec::new();
    let mut previous: Option<TrajectoryPath> = None;
    let mut best: Option<(f64, usize)> = None;
    let mut best_parts = (f64::NAN, f64::NAN);
    for (i, &t) in schedule.horizons.iter().enumerate() {
        let mut problem = MamProblem::new(x.clone(), y.clone(), t, schedule.path_points);
        problem.constraint = constraint.cloned();
        problem.penalty_weight = schedule.penalty_weight;
        problem.max_iterations = schedule.max_iterations;
        problem.gradient_tolerance = schedule.gradient_tolerance;
        let init = match (warm, &previous) {
            (Some(w), _) => rescale(&w[i], problem.dt()),
            (None, Some(p)) => rescale(p, problem.dt()),
            (None, None) => initial_path(&problem, model, op)?,
        };
        let run = match mam_minimize(&problem, model, op, &init) {
            Ok(r) => r,
            Err(Error::NonFiniteOutput { .. }) | Err(Error::SingularDiffusion { .. }) => {
                runs.push(HorizonRun {
                    horizon: t,
                    path_points: schedule.path_points,
                    action: f64::NAN,
                    objective: f64::NAN,
                    violation: f64::NAN,
                    converged: false,
                    termination: Termination::LineSearchFailure,
                    iterations: 0,
                });
                paths.push(init.clone());
                previous = Some(init);
                continue;
            }
            Err(e) => return Err(e),
        };
        runs.push(HorizonRun {
            horizon: t,
            path_points: schedule.path_points,
            action: run.report.total_action,
            objective: run.objective,
            violation: run.violation,
            converged: run.converged,
            termination: run.termination,
            iterations: run.iterations,
        });
        // the penalty is only piecewise smooth, so constrained runs that stall
        // on a kink still bound the value from above
        let usable = run.converged || (constraint.is_some() && run.termination == Termination::LineSearchFailure);
        if usable && best.map_or(true, |(v, _)| run.objective < v) {
            best = Some((run.objective, i));
            best_parts = (run.report.total_action, run.violation);
        }
        paths.push(run.path.clone());
        previous = Some(run.path);
    }
    let (value, idx) = best.ok_or(Error::AllDiverged)?;
    Ok(QuasipotentialResult {
        value,
        action: best_parts.0,
        violation: best_parts.1,
        best_horizon: schedule.horizons[idx],
        best_path: paths[idx].clone(),
        runs,
        paths,
    })
}

fn rescale(path: &TrajectoryPath, dt: f64) -> TrajectoryPath {
    TrajectoryPath::new(dt, path.states.clone())
}

/// `V(x, y)` as the minimum of fixed-horizon problems over the schedule,
/// each warm-started from the previous optimum.
pub fn quasipotential(
    x: &Field,
    y: &Field,
    model: &ModelSpec,
    op: &OperatorDisc,
    schedule: &HorizonSchedule,
) -> Result<QuasipotentialResult> {
    schedule_minimize(x, y, None, model, op, schedule, None)
}

/// Penalised version of [`quasipotential`]. With `warm` every horizon starts
/// from the matching path, which makes results nested: warm-starting from a
/// run on a smaller allowed region can only lower the value.
pub fn constrained_quasipotential(
    x: &Field,
    y: &Field,
    constraint: &RegionConstraint,
    model: &ModelSpec,
    op: &OperatorDisc,
    schedule: &HorizonSchedule,
    warm: Option<&[TrajectoryPath]>,
) -> Result<QuasipotentialResult> {
    schedule_minimize(x, y, Some(constraint), model, op, schedule, warm)
}

/// Runs the constrained problem for every `rho`, smallest first, each warm
/// started from the previous one. Results are returned in input order.
#[allow(clippy::too_many_arguments)]
pub fn rho_sweep(
    x: &Field,
    y: &Field,
    domain: &DomainSurrogate,
    mode: ConstraintMode,
    saddles: &[Equilibrium],
    rhos: &[f64],
    model: &ModelSpec,
    op: &OperatorDisc,
    schedule: &HorizonSchedule,
) -> Result<Vec<(f64, QuasipotentialResult)>> {
    let mut order: Vec<usize> = (0..rhos.len()).collect();
    order.sort_by(|&a, &b| rhos[a].total_cmp(&rhos[b]));
    let mut results: Vec<Option<QuasipotentialResult>> = vec![None; rhos.len()];
    let mut warm: Option<Vec<TrajectoryPath>> = None;
    for i in order {
        let c = RegionConstraint::new(domain.clone(), rhos[i], mode, x, y, saddles);
        let res = constrained_quasipotential(x, y, &c, model, op, schedule, warm.as_deref())?;
        warm = Some(res.paths.clone());
        results[i] = Some(res);
    }
    Ok(rhos.iter().copied().zip(results.into_iter().map(|r| r.expect("filled"))).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryReport {
    pub values: BTreeMap<String, f64>,
    pub minimum_label: String,
    /// `V(x*, ∂D)`
    pub minimum: f64,
    /// Labels dropped because they are stable.
    pub rejected: Vec<String>,
}

/// `V(x*, K_i)` for every unstable equilibrium in `saddles`.
pub fn boundary_quasipotential(
    x_star: &Equilibrium,
    saddles: &[Equilibrium],
    model: &ModelSpec,
    op: &OperatorDisc,
    schedule: &HorizonSchedule,
) -> Result<BoundaryReport> {
    let mut values = BTreeMap::new();
    let mut rejected = Vec::new();
    for s in saddles {
        if s.is_stable() {
            rejected.push(s.label.clone());
            continue;
        }
        let q = quasipotential(&x_star.state, &s.state, model, op, schedule)?;
        values.insert(s.label.clone(), q.value);
    }
    let (label, value) = values
        .iter()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(l, v)| (l.clone(), *v))
        .ok_or_else(|| Error::InvalidArgument("no unstable equilibrium among the saddles".into()))?;
    Ok(BoundaryReport {
        values,
        minimum_label: label,
        minimum: value,
        rejected,
    })
}

/// Upper bound on `V(x, z)` from the direct search and from the concatenation
/// of the optimal paths `x → y` and `y → z`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainBound {
    pub direct: f64,
    /// Action of the concatenated path, recomputed from its two segments.
    pub concatenated: f64,
    /// `min(direct, concatenated)`, never above `V(x, y) + V(y, z)`.
    pub certified: f64,
    /// The path realising `certified`; two segments when it is the
    /// concatenation (their steps may differ).
    pub segments: Vec<TrajectoryPath>,
}

pub fn chain_bound(
    direct: &QuasipotentialResult,
    first: &QuasipotentialResult,
    second: &QuasipotentialResult,
    model: &ModelSpec,
    op: &OperatorDisc,
) -> Result<ChainBound> {
    let a = &first.best_path;
    let b = &second.best_path;
    if a.last().sub(b.first()).sup_norm() > 1e-12 || direct.best_path.first().sub(a.first()).sup_norm() > 1e-12 {
        return Err(Error::InvalidArgument("paths do not chain".into()));
    }
    let action = |p: &TrajectoryPath| control::action_with(p, model, op, ActionScheme::Midpoint).map(|r| r.total_action);
    let concatenated = action(a)? + action(b)?;
    let (certified, segments) = if concatenated < direct.value {
        (concatenated, vec![a.clone(), b.clone()])
    } else {
        (direct.value, vec![direct.best_path.clone()])
    };
    Ok(ChainBound {
        direct: direct.value,
        concatenated,
        certified,
        segments,
    })
}

/// Response of `V(x, ·)` to sup-norm perturbations of size `eta` of the end
/// state along the smoothest and the roughest grid mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemicontinuityReport {
    pub eta: f64,
    pub base: f64,
    pub smooth: f64,
    pub rough: f64,
}

pub fn semicontinuity_diagnostic(
    x: &Field,
    y: &Field,
    eta: f64,
    model: &ModelSpec,
    op: &OperatorDisc,
    schedule: &HorizonSchedule,
) -> Result<SemicontinuityReport> {
    let grid = *op.grid();
    let l = grid.length;
    let smooth = Field::from_fn(grid, |_, xi| eta * (std::f64::consts::PI * xi / l).sin());
    let rough = Field::from_fn(grid, |_, xi| {
        let j = (xi / grid.spacing()).round() as i64;
        if j % 2 == 0 { eta } else { -eta }
    });
    let value = |d: &Field| {
        let mut end = y.clone();
        end.axpy(1.0, d);
        quasipotential(x, &end, model, op, schedule).map(|q| q.value)
    };
    Ok(SemicontinuityReport {
        eta,
        base: quasipotential(x, y, model, op, schedule)?.value,
        smooth: value(&smooth)?,
        rough: value(&rough)?,
    })
}
