//! Reaction nonlinearity `f`, diffusion matrix `g`, their pointwise
//! (Nemytskii) lifts `F`, `G`, `G⁻¹`, and a sampling check of the structural
//! assumptions (dissipativity, polynomial growth, uniform ellipticity and
//! Lipschitz continuity of `g`).
//!
//! Models are declarative: a small library of named reactions and diffusion
//! matrices, parameterised by coefficient tables.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Field;

/// Spatial coefficient profile `a_i(ξ)` or `b_i(ξ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Coefficient {
    Constant { value: f64 },
    /// `base + amplitude·sin(πξ/L)`
    SineBump { base: f64, amplitude: f64 },
    /// Piecewise-linear interpolation of equally spaced samples on `[0, L]`.
    Table { values: Vec<f64> },
}

impl Coefficient {
    pub fn constant(value: f64) -> Self {
        Coefficient::Constant { value }
    }

    pub fn eval(&self, xi: f64, length: f64) -> f64 {
        match self {
            Coefficient::Constant { value } => *value,
            Coefficient::SineBump { base, amplitude } => {
                base + amplitude * (std::f64::consts::PI * xi / length).sin()
            }
            Coefficient::Table { values } => match values.len() {
                0 => 0.0,
                1 => values[0],
                n => {
                    let s = (xi / length).clamp(0.0, 1.0) * (n - 1) as f64;
                    let i = (s.floor() as usize).min(n - 2);
                    let w = s - i as f64;
                    values[i] * (1.0 - w) + values[i + 1] * w
                }
            },
        }
    }

    fn is_zero(&self) -> bool {
        match self {
            Coefficient::Constant { value } => *value == 0.0,
            Coefficient::SineBump { base, amplitude } => *base == 0.0 && *amplitude == 0.0,
            Coefficient::Table { values } => values.iter().all(|v| *v == 0.0),
        }
    }
}

/// Reaction term `f: ℝʳ → ℝʳ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Reaction {
    /// `f_i(u) = u_i − u_i³`, componentwise.
    AllenCahn,
    /// `f_i(u) = Σ_k c_k u_i^k`, componentwise; odd degree, negative leading term.
    Polynomial { coefficients: Vec<f64> },
    /// Two components: `f_i(x) = −λ_i x_i³ + μ_i x_i + κ x_j` (`j ≠ i`).
    CoupledCubic {
        lambda: [f64; 2],
        mu: [f64; 2],
        coupling: f64,
    },
}

impl Reaction {
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Reaction::AllenCahn => {
                for (o, &u) in out.iter_mut().zip(x) {
                    *o = u - u * u * u;
                }
            }
            Reaction::Polynomial { coefficients } => {
                for (o, &u) in out.iter_mut().zip(x) {
                    *o = coefficients.iter().rev().fold(0.0, |acc, c| acc * u + c);
                }
            }
            Reaction::CoupledCubic {
                lambda,
                mu,
                coupling,
            } => {
                out[0] = -lambda[0] * x[0].powi(3) + mu[0] * x[0] + coupling * x[1];
                out[1] = -lambda[1] * x[1].powi(3) + mu[1] * x[1] + coupling * x[0];
            }
        }
    }

    /// Row-major `r × r` Jacobian.
    fn jacobian(&self, x: &[f64], out: &mut [f64]) {
        let r = x.len();
        out.iter_mut().for_each(|v| *v = 0.0);
        match self {
            Reaction::AllenCahn => {
                for (i, &u) in x.iter().enumerate() {
                    out[i * r + i] = 1.0 - 3.0 * u * u;
                }
            }
            Reaction::Polynomial { coefficients } => {
                for (i, &u) in x.iter().enumerate() {
                    let d = coefficients
                        .iter()
                        .enumerate()
                        .skip(1)
                        .rev()
                        .fold(0.0, |acc, (k, c)| acc * u + k as f64 * c);
                    out[i * r + i] = d;
                }
            }
            Reaction::CoupledCubic {
                lambda,
                mu,
                coupling,
            } => {
                out[0] = -3.0 * lambda[0] * x[0] * x[0] + mu[0];
                out[1] = *coupling;
                out[2] = *coupling;
                out[3] = -3.0 * lambda[1] * x[1] * x[1] + mu[1];
            }
        }
    }

    fn components(&self) -> Option<usize> {
        match self {
            Reaction::CoupledCubic { .. } => Some(2),
            _ => None,
        }
    }
}

/// Diffusion matrix `g: ℝʳ → ℝ^{r×r}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Diffusion {
    Identity,
    /// `g(u) = diag(1 + amplitude·tanh(u_i))`
    Tanh { amplitude: f64 },
    /// Constant invertible matrix, row-major.
    ConstantMatrix { entries: Vec<f64> },
}

impl Diffusion {
    fn is_identity(&self) -> bool {
        matches!(self, Diffusion::Identity)
    }

    fn matrix(&self, x: &[f64], out: &mut [f64]) {
        let r = x.len();
        match self {
            Diffusion::Identity => {
                out.iter_mut().for_each(|v| *v = 0.0);
                for i in 0..r {
                    out[i * r + i] = 1.0;
                }
            }
            Diffusion::Tanh { amplitude } => {
                out.iter_mut().for_each(|v| *v = 0.0);
                for (i, &u) in x.iter().enumerate() {
                    out[i * r + i] = 1.0 + amplitude * u.tanh();
                }
            }
            Diffusion::ConstantMatrix { entries } => out.copy_from_slice(entries),
        }
    }

    /// `∂g/∂x_k`, row-major.
    fn derivative(&self, x: &[f64], k: usize, out: &mut [f64]) {
        let r = x.len();
        out.iter_mut().for_each(|v| *v = 0.0);
        if let Diffusion::Tanh { amplitude } = self {
            let c = x[k].cosh();
            out[k * r + k] = amplitude / (c * c);
        }
    }

    fn is_diagonal(&self) -> bool {
        !matches!(self, Diffusion::ConstantMatrix { .. })
    }
}

/// Constants of the dissipativity/growth assumption on `f`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dissipativity {
    pub lambda: f64,
    pub rho: f64,
    pub c: f64,
}

/// Bounds `κ₀|h| ≤ |g(x)h| ≤ κ₁|h|` and `|g(x) − g(y)| ≤ κ|x − y|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipticity {
    pub kappa0: f64,
    pub kappa1: f64,
    pub lipschitz: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub components: usize,
    pub length: f64,
    pub diffusivity: Vec<Coefficient>,
    pub drift: Vec<Coefficient>,
    pub reaction: Reaction,
    pub diffusion: Diffusion,
    pub dissipativity: Dissipativity,
    pub ellipticity: Ellipticity,
}

impl ModelSpec {
    /// Scalar Allen–Cahn `u_t = u_ξξ + u − u³` with additive noise.
    pub fn allen_cahn(length: f64) -> Self {
        Self::allen_cahn_with_diffusivity(length, 1.0)
    }

    pub fn allen_cahn_with_diffusivity(length: f64, a: f64) -> Self {
        Self {
            components: 1,
            length,
            diffusivity: vec![Coefficient::constant(a)],
            drift: vec![Coefficient::constant(0.0)],
            reaction: Reaction::AllenCahn,
            diffusion: Diffusion::Identity,
            dissipativity: Dissipativity {
                lambda: 0.5,
                rho: 2.0,
                c: 10.0,
            },
            ellipticity: Ellipticity {
                kappa0: 1.0 - 1e-12,
                kappa1: 1.0 + 1e-12,
                lipschitz: 1e-12,
            },
        }
    }

    /// Allen–Cahn reaction with multiplicative `g(u) = 1 + 0.25 tanh(u)`.
    pub fn allen_cahn_multiplicative(length: f64) -> Self {
        Self {
            diffusion: Diffusion::Tanh { amplitude: 0.25 },
            ellipticity: Ellipticity {
                kappa0: 0.75,
                kappa1: 1.25,
                lipschitz: 0.25,
            },
            ..Self::allen_cahn(length)
        }
    }

    /// Two-component cubic system with linear coupling.
    pub fn coupled_cubic(length: f64, coupling: f64) -> Self {
        Self {
            components: 2,
            length,
            diffusivity: vec![Coefficient::constant(1.0), Coefficient::constant(0.5)],
            drift: vec![Coefficient::constant(0.0), Coefficient::constant(0.0)],
            reaction: Reaction::CoupledCubic {
                lambda: [1.0, 1.0],
                mu: [1.0, 0.5],
                coupling,
            },
            diffusion: Diffusion::Identity,
            // the cubic is only coercive at rate 1/r along the diagonal
            dissipativity: Dissipativity {
                lambda: 0.25,
                rho: 2.0,
                c: 10.0 + 10.0 * coupling.abs(),
            },
            ellipticity: Ellipticity {
                kappa0: 1.0 - 1e-12,
                kappa1: 1.0 + 1e-12,
                lipschitz: 1e-12,
            },
        }
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn diffusivity(&self, c: usize) -> &Coefficient {
        &self.diffusivity[c]
    }

    pub fn drift(&self, c: usize) -> &Coefficient {
        &self.drift[c]
    }

    pub fn set_diffusivity(&mut self, c: usize, a: Coefficient) {
        self.diffusivity[c] = a;
    }

    pub fn has_additive_noise(&self) -> bool {
        self.diffusion.is_identity()
    }

    pub fn is_self_adjoint(&self) -> bool {
        self.drift.iter().all(Coefficient::is_zero)
    }

    /// Structural consistency of the declarative description.
    pub fn validate(&self) -> Result<()> {
        let r = self.components;
        if r == 0 {
            return Err(Error::InvalidArgument("model needs at least one component".into()));
        }
        if self.diffusivity.len() != r || self.drift.len() != r {
            return Err(Error::InvalidArgument(format!(
                "expected {r} diffusivity and drift profiles"
            )));
        }
        if let Some(req) = self.reaction.components() {
            if req != r {
                return Err(Error::InvalidArgument(format!(
                    "reaction requires {req} components, model has {r}"
                )));
            }
        }
        if let Reaction::Polynomial { coefficients } = &self.reaction {
            let deg = coefficients.len().saturating_sub(1);
            if deg % 2 == 0 || coefficients.last().is_none_or(|c| *c >= 0.0) {
                return Err(Error::InvalidArgument(
                    "polynomial reaction must have odd degree and a negative leading coefficient".into(),
                ));
            }
        }
        if let Diffusion::ConstantMatrix { entries } = &self.diffusion {
            if entries.len() != r * r {
                return Err(Error::InvalidArgument(format!(
                    "constant diffusion matrix needs {} entries",
                    r * r
                )));
            }
        }
        let d = &self.dissipativity;
        if !(d.lambda > 0.0 && d.rho > 0.0 && d.c > 0.0) {
            return Err(Error::InvalidArgument("dissipativity constants must be positive".into()));
        }
        let e = &self.ellipticity;
        if !(e.kappa0 > 0.0 && e.kappa0 < e.kappa1) {
            return Err(Error::InvalidArgument("ellipticity needs 0 < kappa0 < kappa1".into()));
        }
        if !(self.length > 0.0) {
            return Err(Error::InvalidArgument("length must be positive".into()));
        }
        Ok(())
    }

    /// Pointwise reaction `f(x)`.
    pub fn reaction(&self, x: &[f64], out: &mut [f64]) {
        self.reaction.eval(x, out);
    }

    /// Pointwise Jacobian `Df(x)`, row-major.
    pub fn reaction_jacobian(&self, x: &[f64], out: &mut [f64]) {
        self.reaction.jacobian(x, out);
    }

    /// Pointwise `g(x)`, row-major.
    pub fn diffusion_matrix(&self, x: &[f64], out: &mut [f64]) {
        self.diffusion.matrix(x, out);
    }

    pub fn diffusion_derivative(&self, x: &[f64], k: usize, out: &mut [f64]) {
        self.diffusion.derivative(x, k, out);
    }
}

/// `F(x)(ξ_j) = f(x(ξ_j))`
pub fn eval_f(model: &ModelSpec, x: &Field) -> Result<Field> {
    let mut out = Field::zeros(*x.grid());
    eval_f_into(model, x, &mut out)?;
    Ok(out)
}

pub fn eval_f_into(model: &ModelSpec, x: &Field, out: &mut Field) -> Result<()> {
    let (r, m) = x.shape();
    if r == 1 {
        let src = x.values();
        let dst = out.values_mut();
        for j in 0..m {
            let mut v = [0.0];
            model.reaction.eval(&src[j..j + 1], &mut v);
            if !v[0].is_finite() {
                return Err(Error::NonFiniteOutput { node: j });
            }
            dst[j] = v[0];
        }
        return Ok(());
    }
    let mut xv = vec![0.0; r];
    let mut fv = vec![0.0; r];
    for j in 0..m {
        x.at(j, &mut xv);
        model.reaction.eval(&xv, &mut fv);
        if fv.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteOutput { node: j });
        }
        out.set_at(j, &fv);
    }
    Ok(())
}

/// `[G(x)h](ξ) = g(x(ξ)) h(ξ)`
pub fn apply_g(model: &ModelSpec, x: &Field, h: &Field) -> Result<Field> {
    x.check_same_shape(h)?;
    let mut out = h.clone();
    if model.diffusion.is_identity() {
        return Ok(out);
    }
    let (r, m) = x.shape();
    let mut xv = vec![0.0; r];
    let mut hv = vec![0.0; r];
    let mut g = vec![0.0; r * r];
    let mut ov = vec![0.0; r];
    for j in 0..m {
        x.at(j, &mut xv);
        h.at(j, &mut hv);
        model.diffusion.matrix(&xv, &mut g);
        for i in 0..r {
            ov[i] = (0..r).map(|k| g[i * r + k] * hv[k]).sum();
        }
        out.set_at(j, &ov);
    }
    Ok(out)
}

/// `[G⁻¹(x)h](ξ) = g(x(ξ))⁻¹ h(ξ)`
pub fn apply_g_inverse(model: &ModelSpec, x: &Field, h: &Field) -> Result<Field> {
    x.check_same_shape(h)?;
    let mut out = h.clone();
    if model.diffusion.is_identity() {
        return Ok(out);
    }
    let (r, m) = x.shape();
    let mut xv = vec![0.0; r];
    let mut hv = vec![0.0; r];
    let mut g = vec![0.0; r * r];
    for j in 0..m {
        x.at(j, &mut xv);
        h.at(j, &mut hv);
        model.diffusion.matrix(&xv, &mut g);
        if model.diffusion.is_diagonal() {
            for i in 0..r {
                let d = g[i * r + i];
                if d == 0.0 || !d.is_finite() {
                    return Err(Error::SingularDiffusion { node: j });
                }
                hv[i] /= d;
            }
        } else {
            solve_small(&mut g, &mut hv, r).map_err(|_| Error::SingularDiffusion { node: j })?;
        }
        out.set_at(j, &hv);
    }
    Ok(out)
}

/// Gaussian elimination with partial pivoting on a small dense system.
pub(crate) fn solve_small(a: &mut [f64], b: &mut [f64], n: usize) -> std::result::Result<(), ()> {
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap();
        if a[piv * n + col].abs() < 1e-300 {
            return Err(());
        }
        if piv != col {
            for k in 0..n {
                a.swap(col * n + k, piv * n + k);
            }
            b.swap(col, piv);
        }
        for row in col + 1..n {
            let factor = a[row * n + col] / a[col * n + col];
            for k in col..n {
                a[row * n + k] -= factor * a[col * n + k];
            }
            b[row] -= factor * b[col];
        }
    }
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row * n + k] * b[k]).sum();
        b[row] = (b[row] - s) / a[row * n + row];
    }
    Ok(())
}

/// One sampled check: the smallest observed `rhs − lhs` of an inequality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub worst_margin: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub sample_radius: f64,
    pub n_samples: usize,
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn sample_ball(rng: &mut ChaCha8Rng, r: usize, radius: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..r).map(|_| rng.sample(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
    let s = radius * rng.random::<f64>().powf(1.0 / r as f64) / norm;
    v.iter_mut().for_each(|x| *x *= s);
    v
}

fn euclid(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn spectral_norm(m: &[f64], r: usize) -> f64 {
    if r == 1 {
        return m[0].abs();
    }
    DMatrix::from_row_slice(r, r, m).singular_values().max()
}

fn min_singular_value(m: &[f64], r: usize) -> f64 {
    if r == 1 {
        return m[0].abs();
    }
    DMatrix::from_row_slice(r, r, m).singular_values().min()
}

/// Samples `x, h` in the ball of the given radius and records the worst
/// margin of each structural inequality. Violations are reported, never thrown.
pub fn validate_assumptions(model: &ModelSpec, sample_radius: f64, n_samples: usize) -> ValidationReport {
    let r = model.components;
    let Dissipativity { lambda, rho, c } = model.dissipativity;
    let Ellipticity {
        kappa0,
        kappa1,
        lipschitz,
    } = model.ellipticity;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_a55e_u64);
    let mut dissip = f64::INFINITY;
    let mut growth = f64::INFINITY;
    let mut ellip_lo = f64::INFINITY;
    let mut ellip_hi = f64::INFINITY;
    let mut lip = f64::INFINITY;
    let mut jac = f64::INFINITY;

    let mut fx = vec![0.0; r];
    let mut fxh = vec![0.0; r];
    let mut gx = vec![0.0; r * r];
    let mut gy = vec![0.0; r * r];
    let mut jx = vec![0.0; r * r];
    for s in 0..n_samples.max(1) {
        let x = sample_ball(&mut rng, r, sample_radius);
        // alternate interior samples with samples on the sphere, where the bounds are tightest
        let h = if s % 2 == 0 {
            sample_ball(&mut rng, r, sample_radius)
        } else {
            let v = sample_ball(&mut rng, r, 1.0);
            let n = euclid(&v).max(1e-300);
            v.iter().map(|t| t * sample_radius / n).collect()
        };
        let xn = euclid(&x);
        let hn = euclid(&h);

        model.reaction(&x, &mut fx);
        if hn > 0.0 {
            let xh: Vec<f64> = x.iter().zip(&h).map(|(a, b)| a + b).collect();
            model.reaction(&xh, &mut fxh);
            let lhs: f64 = fxh.iter().zip(&fx).zip(&h).map(|((a, b), hh)| (a - b) * hh).sum::<f64>() / hn;
            let rhs = -lambda * hn.powf(1.0 + rho) + c * (1.0 + xn.powf(1.0 + rho));
            dissip = dissip.min(rhs - lhs);
        }
        growth = growth.min(c * (1.0 + xn.powf(1.0 + rho)) - euclid(&fx));

        model.diffusion_matrix(&x, &mut gx);
        ellip_lo = ellip_lo.min(min_singular_value(&gx, r) - kappa0);
        ellip_hi = ellip_hi.min(kappa1 - spectral_norm(&gx, r));
        let y = sample_ball(&mut rng, r, sample_radius);
        model.diffusion_matrix(&y, &mut gy);
        let diff: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| a - b).collect();
        let dist: f64 = euclid(&x.iter().zip(&y).map(|(a, b)| a - b).collect::<Vec<_>>());
        lip = lip.min(lipschitz * dist - spectral_norm(&diff, r) + 1e-12);

        // centred differences of f against the analytic Jacobian
        model.reaction_jacobian(&x, &mut jx);
        let step = 1e-5 * (1.0 + xn);
        let mut worst = 0.0_f64;
        for k in 0..r {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += step;
            xm[k] -= step;
            let mut fp = vec![0.0; r];
            let mut fm = vec![0.0; r];
            model.reaction(&xp, &mut fp);
            model.reaction(&xm, &mut fm);
            for i in 0..r {
                let fd = (fp[i] - fm[i]) / (2.0 * step);
                let an = jx[i * r + k];
                worst = worst.max((fd - an).abs() / an.abs().max(1.0));
            }
        }
        jac = jac.min(1e-5 - worst);
    }

    let mk = |name: &str, m: f64| CheckResult {
        name: name.to_string(),
        worst_margin: m,
        passed: m >= 0.0,
    };
    ValidationReport {
        sample_radius,
        n_samples,
        checks: vec![
            mk("dissipativity", dissip),
            mk("growth", growth),
            mk("g-lower-bound", ellip_lo + 1e-12),
            mk("g-upper-bound", ellip_hi + 1e-12),
            mk("g-lipschitz", lip),
            mk("jacobian", jac),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;

    fn field(values: Vec<f64>) -> Field {
        let grid = GridSpec::new(1.0, values.len(), 1).unwrap();
        Field::from_values(grid, values).unwrap()
    }

    #[test]
    fn allen_cahn_values() {
        let m = ModelSpec::allen_cahn(5.0);
        assert_eq!(eval_f(&m, &field(vec![0.0; 5])).unwrap().sup_norm(), 0.0);
        let f = eval_f(&m, &field(vec![2.0; 5])).unwrap();
        assert!(f.values().iter().all(|&v| v == -6.0));
    }

    #[test]
    fn non_finite_reaction_reported() {
        let m = ModelSpec::allen_cahn(5.0);
        let err = eval_f(&m, &field(vec![0.0, 1e200, 0.0])).unwrap_err();
        assert_eq!(err, Error::NonFiniteOutput { node: 1 });
    }

    #[test]
    fn growth_bound_on_random_fields() {
        let m = ModelSpec::allen_cahn(5.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let scale: f64 = rng.random_range(0.0..20.0);
            let x = field((0..17).map(|_| scale * rng.random_range(-1.0..1.0)).collect());
            let f = eval_f(&m, &x).unwrap();
            let Dissipativity { rho, c, .. } = m.dissipativity;
            assert!(f.sup_norm() <= c * (1.0 + x.sup_norm().powf(1.0 + rho)));
        }
    }

    #[test]
    fn identity_diffusion_is_identity() {
        let m = ModelSpec::allen_cahn(5.0);
        let x = field(vec![0.3, -2.0, 1.0]);
        let h = field(vec![1.0, 2.0, 3.0]);
        assert_eq!(apply_g(&m, &x, &h).unwrap(), h);
    }

    #[test]
    fn g_inverse_round_trip_and_bound() {
        let m = ModelSpec::allen_cahn_multiplicative(5.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let x = field((0..9).map(|_| rng.random_range(-5.0..5.0)).collect());
            let h = field((0..9).map(|_| rng.random_range(-1.0..1.0)).collect());
            let gh = apply_g(&m, &x, &h).unwrap();
            let back = apply_g_inverse(&m, &x, &gh).unwrap();
            assert!(back.sub(&h).sup_norm() < 1e-12);
            let inv = apply_g_inverse(&m, &x, &h).unwrap();
            assert!(inv.h_norm() <= h.h_norm() / 0.75 + 1e-15);
        }
    }

    #[test]
    fn constant_matrix_inverse() {
        let grid = GridSpec::new(1.0, 4, 2).unwrap();
        let mut m = ModelSpec::coupled_cubic(1.0, 0.1);
        m.diffusion = Diffusion::ConstantMatrix {
            entries: vec![2.0, 1.0, 0.0, 1.0],
        };
        let x = Field::zeros(grid);
        let h = Field::from_fn(grid, |c, xi| c as f64 + xi);
        let back = apply_g_inverse(&m, &x, &apply_g(&m, &x, &h).unwrap()).unwrap();
        assert!(back.sub(&h).sup_norm() < 1e-12);

        m.diffusion = Diffusion::ConstantMatrix {
            entries: vec![1.0, 1.0, 1.0, 1.0],
        };
        assert!(matches!(
            apply_g_inverse(&m, &x, &h),
            Err(Error::SingularDiffusion { .. })
        ));
    }

    #[test]
    fn validation_passes_for_allen_cahn() {
        let report = validate_assumptions(&ModelSpec::allen_cahn(5.0), 10.0, 20_000);
        assert!(report.all_passed(), "{report:?}");
    }

    #[test]
    fn validation_flags_linear_reaction() {
        let mut m = ModelSpec::allen_cahn(5.0);
        m.reaction = Reaction::Polynomial {
            coefficients: vec![0.0, 1.0],
        };
        let report = validate_assumptions(&m, 10.0, 2_000);
        assert!(report.check("dissipativity").unwrap().worst_margin < 0.0);
    }

    #[test]
    fn validation_passes_for_multiplicative_and_coupled() {
        assert!(validate_assumptions(&ModelSpec::allen_cahn_multiplicative(5.0), 10.0, 5_000).all_passed());
        let report = validate_assumptions(&ModelSpec::coupled_cubic(5.0, 0.3), 10.0, 5_000);
        assert!(report.all_passed(), "{report:?}");
    }

    #[test]
    fn polynomial_validation_rules() {
        let mut m = ModelSpec::allen_cahn(5.0);
        m.reaction = Reaction::Polynomial {
            coefficients: vec![0.0, 1.0, 0.0, 1.0],
        };
        assert!(m.validate().is_err());
        m.reaction = Reaction::Polynomial {
            coefficients: vec![0.0, -4.0, 0.0, 5.0, 0.0, -1.0],
        };
        assert!(m.validate().is_ok());
    }

    #[test]
    fn eval_f_commutes_with_permutation() {
        let m = ModelSpec::allen_cahn(5.0);
        let x = field(vec![0.1, -0.7, 1.3, 2.0, -3.0]);
        let mut perm = x.values().to_vec();
        perm.reverse();
        let fx = eval_f(&m, &x).unwrap();
        let mut fp = eval_f(&m, &field(perm)).unwrap().into_values();
        fp.reverse();
        assert_eq!(fx.values(), fp.as_slice());
    }
}
