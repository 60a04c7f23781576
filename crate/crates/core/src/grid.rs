//! Spatial discretisation of `[0, L]` with homogeneous Dirichlet data.
//!
//! Fields store only the `M` interior nodes `ξ_j = (j + 1)·Δξ`; the boundary
//! values are implicitly zero. The elliptic operator is assembled per
//! component in divergence form `(a u')' + b u'` with three-point differences,
//! and for the self-adjoint case (`b ≡ 0`) its eigenbasis is computed once at
//! construction so that the semigroup and the fractional Sobolev norms can be
//! evaluated exactly on the grid.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelSpec;

/// Largest grid for which the eigendecomposition is computed eagerly.
pub const EIGEN_LIMIT: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub length: f64,
    pub points: usize,
    pub components: usize,
}

impl GridSpec {
    pub fn new(length: f64, points: usize, components: usize) -> Result<Self> {
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "grid length must be positive, got {length}"
            )));
        }
        if points < 3 {
            return Err(Error::InvalidArgument(format!(
                "grid needs at least 3 interior points, got {points}"
            )));
        }
        if components == 0 {
            return Err(Error::InvalidArgument("grid needs at least one component".into()));
        }
        Ok(Self {
            length,
            points,
            components,
        })
    }

    pub fn spacing(&self) -> f64 {
        self.length / (self.points + 1) as f64
    }

    /// Position of interior node `j` (zero based).
    pub fn node(&self, j: usize) -> f64 {
        (j + 1) as f64 * self.spacing()
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.points).map(|j| self.node(j))
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.components, self.points)
    }
}

/// An `r × M` real field on the interior nodes, stored component-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Field {
    grid: GridSpec,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.components * grid.points],
        }
    }

    pub fn from_values(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.components * grid.points {
            return Err(Error::ShapeMismatch {
                expected: grid.shape(),
                got: (1, values.len()),
            });
        }
        Ok(Self { grid, values })
    }

    /// Builds a field from `f(component, ξ)`.
    pub fn from_fn(grid: GridSpec, mut f: impl FnMut(usize, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.components * grid.points);
        for c in 0..grid.components {
            for j in 0..grid.points {
                values.push(f(c, grid.node(j)));
            }
        }
        Self { grid, values }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn shape(&self) -> (usize, usize) {
        self.grid.shape()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn component(&self, c: usize) -> &[f64] {
        let m = self.grid.points;
        &self.values[c * m..(c + 1) * m]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [f64] {
        let m = self.grid.points;
        &mut self.values[c * m..(c + 1) * m]
    }

    /// The `ℝʳ` vector at node `j`.
    pub fn at(&self, j: usize, out: &mut [f64]) {
        let m = self.grid.points;
        for (c, o) in out.iter_mut().enumerate() {
            *o = self.values[c * m + j];
        }
    }

    pub fn set_at(&mut self, j: usize, v: &[f64]) {
        let m = self.grid.points;
        for (c, &x) in v.iter().enumerate() {
            self.values[c * m + j] = x;
        }
    }

    pub fn check_same_shape(&self, other: &Field) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape(),
                got: other.shape(),
            });
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Field) {
        debug_assert_eq!(self.values.len(), other.values.len());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.values.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn scaled(&self, alpha: f64) -> Field {
        let mut out = self.clone();
        out.scale(alpha);
        out
    }

    pub fn sub(&self, other: &Field) -> Field {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    pub fn add(&self, other: &Field) -> Field {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }

    /// Midpoint `(self + other) / 2`.
    pub fn midpoint(&self, other: &Field) -> Field {
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| 0.5 * (a + b))
            .collect();
        Field {
            grid: self.grid,
            values,
        }
    }

    /// Mirror image `ξ ↦ L − ξ`.
    pub fn reflected(&self) -> Field {
        let mut out = self.clone();
        for c in 0..self.grid.components {
            out.component_mut(c).reverse();
        }
        out
    }

    pub fn sup_norm(&self) -> f64 {
        sup_norm(self)
    }

    pub fn h_norm(&self) -> f64 {
        h_norm(self)
    }
}

/// Supremum over nodes of the Euclidean norm in `ℝʳ`.
pub fn sup_norm(x: &Field) -> f64 {
    let m = x.grid.points;
    let r = x.grid.components;
    if r == 1 {
        return x.values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    }
    (0..m)
        .map(|j| {
            (0..r)
                .map(|c| x.values[c * m + j].powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max)
}

/// Node index achieving the sup norm; ties go to the lowest index.
pub fn sup_argmax(x: &Field) -> usize {
    let m = x.grid.points;
    let r = x.grid.components;
    let mut best = 0;
    let mut best_val = -1.0;
    for j in 0..m {
        let v: f64 = (0..r).map(|c| x.values[c * m + j].powi(2)).sum();
        if v > best_val {
            best_val = v;
            best = j;
        }
    }
    best
}

/// `⟨x, y⟩_H = Δξ Σ_j x(ξ_j)·y(ξ_j)`
pub fn h_inner(x: &Field, y: &Field) -> f64 {
    let dot: f64 = x.values.iter().zip(&y.values).map(|(a, b)| a * b).sum();
    x.grid.spacing() * dot
}

pub fn h_norm(x: &Field) -> f64 {
    h_inner(x, x).sqrt()
}

/// Eigenpairs of `-A_i` for one component: `α_k` ascending, `e_k` normalised in `H`.
#[derive(Clone, Debug)]
pub struct Eigenbasis {
    values: Vec<f64>,
    // row k holds e_k
    vectors: Vec<f64>,
    points: usize,
}

impl Eigenbasis {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn vector(&self, k: usize) -> &[f64] {
        &self.vectors[k * self.points..(k + 1) * self.points]
    }

    /// Coefficients `⟨x, e_k⟩_H` of one component.
    fn project(&self, x: &[f64], spacing: f64, out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            let e = self.vector(k);
            *o = spacing * e.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    fn synthesize(&self, coeffs: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (k, &c) in coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            for (o, e) in out.iter_mut().zip(self.vector(k)) {
                *o += c * e;
            }
        }
    }
}

/// Tridiagonal discretisation of one `A_i`.
#[derive(Clone, Debug)]
pub struct ComponentOperator {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
    eigen: Option<Eigenbasis>,
}

impl ComponentOperator {
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let m = x.len();
        for j in 0..m {
            let mut v = self.diag[j] * x[j];
            if j > 0 {
                v += self.lower[j] * x[j - 1];
            }
            if j + 1 < m {
                v += self.upper[j] * x[j + 1];
            }
            out[j] = v;
        }
    }

    /// `Aᵀ x`, needed by adjoint gradients when `b ≠ 0`.
    fn apply_transpose(&self, x: &[f64], out: &mut [f64]) {
        let m = x.len();
        for j in 0..m {
            let mut v = self.diag[j] * x[j];
            if j > 0 {
                v += self.upper[j - 1] * x[j - 1];
            }
            if j + 1 < m {
                v += self.lower[j + 1] * x[j + 1];
            }
            out[j] = v;
        }
    }

    pub fn eigen(&self) -> Option<&Eigenbasis> {
        self.eigen.as_ref()
    }
}

#[derive(Clone, Debug)]
pub struct OperatorDisc {
    grid: GridSpec,
    components: Vec<ComponentOperator>,
    symmetric: bool,
}

impl OperatorDisc {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn component(&self, c: usize) -> &ComponentOperator {
        &self.components[c]
    }

    pub fn has_eigen(&self) -> bool {
        self.components.iter().all(|c| c.eigen.is_some())
    }

    fn eigen(&self, c: usize) -> Result<&Eigenbasis> {
        self.components[c].eigen.as_ref().ok_or(Error::EigenUnavailable)
    }

    /// Eigenvalues `α_k` of `-A_c`, ascending.
    pub fn eigenvalues(&self, c: usize) -> Result<&[f64]> {
        Ok(self.eigen(c)?.values())
    }

    /// `e_k` of component `c` embedded as a field (zero in the other components).
    pub fn eigenvector(&self, c: usize, k: usize) -> Result<Field> {
        let e = self.eigen(c)?;
        let mut out = Field::zeros(self.grid);
        out.component_mut(c).copy_from_slice(e.vector(k));
        Ok(out)
    }

    fn check(&self, x: &Field) -> Result<()> {
        if x.shape() != self.grid.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.grid.shape(),
                got: x.shape(),
            });
        }
        Ok(())
    }

    /// Mode coefficients `⟨x, e_k⟩_H`, one vector per component.
    pub fn project(&self, x: &Field) -> Result<Vec<Vec<f64>>> {
        self.check(x)?;
        let h = self.grid.spacing();
        (0..self.grid.components)
            .map(|c| {
                let e = self.eigen(c)?;
                let mut coeffs = vec![0.0; self.grid.points];
                e.project(x.component(c), h, &mut coeffs);
                Ok(coeffs)
            })
            .collect()
    }

    pub fn synthesize(&self, coeffs: &[Vec<f64>]) -> Result<Field> {
        let mut out = Field::zeros(self.grid);
        for (c, cc) in coeffs.iter().enumerate() {
            self.eigen(c)?.synthesize(cc, out.component_mut(c));
        }
        Ok(out)
    }
}

/// Assembles `A = diag(A_1, …, A_r)` from the model's coefficient profiles.
pub fn build_operator(model: &ModelSpec, grid: &GridSpec) -> Result<OperatorDisc> {
    if grid.components != model.components() {
        return Err(Error::ShapeMismatch {
            expected: (model.components(), grid.points),
            got: grid.shape(),
        });
    }
    let h = grid.spacing();
    let m = grid.points;
    let mut components = Vec::with_capacity(grid.components);
    let mut symmetric = true;
    for c in 0..grid.components {
        let a = model.diffusivity(c);
        let b = model.drift(c);
        // ellipticity is checked on the nodes and on the half nodes used by the stencil
        for j in 0..=(2 * m + 2) {
            let xi = 0.5 * j as f64 * h;
            let v = a.eval(xi, grid.length);
            if !(v > 0.0) {
                return Err(Error::NonElliptic {
                    component: c,
                    xi,
                    value: v,
                });
            }
        }
        let mut lower = vec![0.0; m];
        let mut diag = vec![0.0; m];
        let mut upper = vec![0.0; m];
        let mut comp_symmetric = true;
        for j in 0..m {
            let xi = grid.node(j);
            let a_minus = a.eval(xi - 0.5 * h, grid.length);
            let a_plus = a.eval(xi + 0.5 * h, grid.length);
            let bj = b.eval(xi, grid.length);
            if bj != 0.0 {
                comp_symmetric = false;
            }
            lower[j] = a_minus / (h * h) - bj / (2.0 * h);
            diag[j] = -(a_minus + a_plus) / (h * h);
            upper[j] = a_plus / (h * h) + bj / (2.0 * h);
        }
        lower[0] = 0.0;
        upper[m - 1] = 0.0;
        symmetric &= comp_symmetric;
        let eigen = if comp_symmetric && m <= EIGEN_LIMIT {
            Some(eigendecompose(&diag, &upper, h))
        } else {
            None
        };
        components.push(ComponentOperator {
            lower,
            diag,
            upper,
            eigen,
        });
    }
    Ok(OperatorDisc {
        grid: *grid,
        components,
        symmetric,
    })
}

fn eigendecompose(diag: &[f64], upper: &[f64], spacing: f64) -> Eigenbasis {
    let m = diag.len();
    // work with the symmetric positive matrix -A
    let d: Vec<f64> = diag.iter().map(|v| -v).collect();
    let e: Vec<f64> = upper.iter().map(|v| -v).collect();
    let dense = DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            d[i]
        } else if j == i + 1 {
            e[i]
        } else if i == j + 1 {
            e[j]
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(dense);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let scale = 1.0 / spacing.sqrt();
    let mut values = Vec::with_capacity(m);
    let mut vectors = Vec::with_capacity(m * m);
    for &k in &order {
        let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let lambda = refine_eigenpair(&d, &e, eig.eigenvalues[k], &mut v);
        values.push(lambda);
        // first entry of an irreducible tridiagonal eigenvector is nonzero
        let sign = if v[0] < 0.0 { -scale } else { scale };
        vectors.extend(v.iter().map(|x| x * sign));
    }
    Eigenbasis {
        values,
        vectors,
        points: m,
    }
}

/// One step of shifted inverse iteration followed by a Rayleigh quotient.
/// `v` must be unit length on entry and is unit length on exit.
fn refine_eigenpair(d: &[f64], e: &[f64], shift: f64, v: &mut [f64]) -> f64 {
    let m = d.len();
    let mut w = v.to_vec();
    let shifted: Vec<f64> = d.iter().map(|x| x - shift).collect();
    if solve_tridiagonal_pivoting(e, &shifted, e, &mut w).is_ok() {
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm.is_finite() && norm > 0.0 {
            let dot: f64 = w.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
            let sign = if dot < 0.0 { -1.0 } else { 1.0 };
            for (a, b) in v.iter_mut().zip(&w) {
                *a = sign * b / norm;
            }
        }
    }
    let mut rq = 0.0;
    for j in 0..m {
        let mut tv = d[j] * v[j];
        if j > 0 {
            tv += e[j - 1] * v[j - 1];
        }
        if j + 1 < m {
            tv += e[j] * v[j + 1];
        }
        rq += v[j] * tv;
    }
    rq
}

/// Tridiagonal solve with partial pivoting; `sub[j]` couples rows `j+1, j`,
/// `sup[j]` couples rows `j, j+1`.
fn solve_tridiagonal_pivoting(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &mut [f64]) -> Result<()> {
    let n = diag.len();
    let mut d = diag.to_vec();
    let mut du: Vec<f64> = sup[..n - 1].to_vec();
    let mut dl: Vec<f64> = sub[..n - 1].to_vec();
    let mut du2 = vec![0.0; n];
    for i in 0..n - 1 {
        if d[i].abs() >= dl[i].abs() {
            if d[i] == 0.0 {
                d[i] = f64::EPSILON * (1.0 + dl[i].abs());
            }
            let fact = dl[i] / d[i];
            dl[i] = fact;
            d[i + 1] -= fact * du[i];
            rhs[i + 1] -= fact * rhs[i];
            du2[i] = 0.0;
        } else {
            let fact = d[i] / dl[i];
            d[i] = dl[i];
            dl[i] = fact;
            let temp = du[i];
            du[i] = d[i + 1];
            d[i + 1] = temp - fact * d[i + 1];
            if i + 2 < n {
                du2[i] = du[i + 1];
                du[i + 1] = -fact * du[i + 1];
            }
            rhs.swap(i, i + 1);
            rhs[i + 1] -= fact * rhs[i];
        }
    }
    if d[n - 1] == 0.0 {
        d[n - 1] = f64::EPSILON;
    }
    rhs[n - 1] /= d[n - 1];
    if n > 1 {
        rhs[n - 2] = (rhs[n - 2] - du[n - 2] * rhs[n - 1]) / d[n - 2];
    }
    for i in (0..n.saturating_sub(2)).rev() {
        rhs[i] = (rhs[i] - du[i] * rhs[i + 1] - du2[i] * rhs[i + 2]) / d[i];
    }
    if rhs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::SingularSystem { row: n - 1 })
    }
}

pub fn apply_a(op: &OperatorDisc, x: &Field) -> Result<Field> {
    op.check(x)?;
    let mut out = Field::zeros(op.grid);
    apply_a_into(op, x, &mut out);
    Ok(out)
}

/// `out = A x` without shape checks.
pub(crate) fn apply_a_into(op: &OperatorDisc, x: &Field, out: &mut Field) {
    for (c, comp) in op.components.iter().enumerate() {
        let m = op.grid.points;
        let (src, dst) = (&x.values[c * m..(c + 1) * m], &mut out.values[c * m..(c + 1) * m]);
        comp.apply(src, dst);
    }
}

pub(crate) fn apply_a_transpose_into(op: &OperatorDisc, x: &Field, out: &mut Field) {
    for (c, comp) in op.components.iter().enumerate() {
        let m = op.grid.points;
        let (src, dst) = (&x.values[c * m..(c + 1) * m], &mut out.values[c * m..(c + 1) * m]);
        comp.apply_transpose(src, dst);
    }
}

/// Pre-factorised `(I − dt·A)` for repeated solves with a fixed step.
#[derive(Clone, Debug)]
pub struct ImplicitSolver {
    dt: f64,
    grid: GridSpec,
    // per component: sub-diagonal, modified super-diagonal and inverse pivots of the LU sweep
    factors: Vec<ThomasFactors>,
}

#[derive(Clone, Debug)]
struct ThomasFactors {
    lower: Vec<f64>,
    upper_mod: Vec<f64>,
    inv_pivot: Vec<f64>,
}

impl ImplicitSolver {
    pub fn new(op: &OperatorDisc, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        let m = op.grid.points;
        let mut factors = Vec::with_capacity(op.components.len());
        for comp in &op.components {
            let lower: Vec<f64> = comp.lower.iter().map(|v| -dt * v).collect();
            let diag: Vec<f64> = comp.diag.iter().map(|v| 1.0 - dt * v).collect();
            let upper: Vec<f64> = comp.upper.iter().map(|v| -dt * v).collect();
            let mut upper_mod = vec![0.0; m];
            let mut inv_pivot = vec![0.0; m];
            let mut prev = 0.0;
            for j in 0..m {
                let pivot = diag[j] - if j > 0 { lower[j] * prev } else { 0.0 };
                if pivot.abs() < 1e-300 || !pivot.is_finite() {
                    return Err(Error::SingularSystem { row: j });
                }
                inv_pivot[j] = 1.0 / pivot;
                upper_mod[j] = upper[j] * inv_pivot[j];
                prev = upper_mod[j];
            }
            factors.push(ThomasFactors {
                lower,
                upper_mod,
                inv_pivot,
            });
        }
        Ok(Self {
            dt,
            grid: op.grid,
            factors,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Solves `(I − dt·A) y = rhs` in place.
    pub fn solve_in_place(&self, rhs: &mut Field) {
        let m = self.grid.points;
        for (c, f) in self.factors.iter().enumerate() {
            let y = &mut rhs.values[c * m..(c + 1) * m];
            y[0] *= f.inv_pivot[0];
            for j in 1..m {
                y[j] = (y[j] - f.lower[j] * y[j - 1]) * f.inv_pivot[j];
            }
            for j in (0..m - 1).rev() {
                y[j] -= f.upper_mod[j] * y[j + 1];
            }
        }
    }

    /// Solves `(I − dt·A)ᵀ y = rhs` in place.
    pub fn solve_transpose_in_place(&self, rhs: &mut Field) {
        // (LU)ᵀ = Uᵀ Lᵀ: forward with the unit upper factor, then back with the lower one
        let m = self.grid.points;
        for (c, f) in self.factors.iter().enumerate() {
            let y = &mut rhs.values[c * m..(c + 1) * m];
            for j in 1..m {
                y[j] -= f.upper_mod[j - 1] * y[j - 1];
            }
            y[m - 1] *= f.inv_pivot[m - 1];
            for j in (0..m - 1).rev() {
                y[j] = (y[j] - f.lower[j + 1] * y[j + 1]) * f.inv_pivot[j];
            }
        }
    }
}

pub fn implicit_solve(op: &OperatorDisc, dt: f64, rhs: &Field) -> Result<Field> {
    op.check(rhs)?;
    let solver = ImplicitSolver::new(op, dt)?;
    let mut out = rhs.clone();
    solver.solve_in_place(&mut out);
    Ok(out)
}

/// `S(t)x = Σ_k e^{−α_k t} ⟨x, e_k⟩ e_k`
pub fn semigroup_apply(op: &OperatorDisc, t: f64, x: &Field) -> Result<Field> {
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("time must be nonnegative, got {t}")));
    }
    if t == 0.0 {
        op.check(x)?;
        return Ok(x.clone());
    }
    let mut coeffs = op.project(x)?;
    for (c, cc) in coeffs.iter_mut().enumerate() {
        for (v, a) in cc.iter_mut().zip(op.eigen(c)?.values()) {
            *v *= (-a * t).exp();
        }
    }
    op.synthesize(&coeffs)
}

/// `|x|_{H^δ} = (Σ_k α_k^δ ⟨x, e_k⟩²)^{1/2}`
pub fn sobolev_norm(x: &Field, delta: f64, op: &OperatorDisc) -> Result<f64> {
    let coeffs = op.project(x)?;
    let mut total = 0.0;
    for (c, cc) in coeffs.iter().enumerate() {
        for (v, a) in cc.iter().zip(op.eigen(c)?.values()) {
            total += a.powf(delta) * v * v;
        }
    }
    Ok(total.sqrt())
}

/// `∫_0^t |S(s)x|²_{H²} ds`, integrated in time exactly mode by mode.
pub fn semigroup_h2_energy(op: &OperatorDisc, x: &Field, t: f64) -> Result<f64> {
    let coeffs = op.project(x)?;
    let mut total = 0.0;
    for (c, cc) in coeffs.iter().enumerate() {
        for (v, &a) in cc.iter().zip(op.eigen(c)?.values()) {
            // α² ∫ e^{-2αs} ds = α (1 − e^{−2αt}) / 2
            total += a * (-(-2.0 * a * t).exp_m1()) * 0.5 * v * v;
        }
    }
    Ok(total)
}

/// Norms of `Λu(t) = ∫_0^t S(t−s) u(s) ds` for a control that is constant on
/// each step of length `dt`, evaluated exactly in the eigenbasis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvolutionNorms {
    /// `sup_t |Λu(t)|²_{H¹}` over the step boundaries
    pub sup_h1_sq: f64,
    /// `∫ |Λu(t)|²_{H²} dt`
    pub l2_h2_sq: f64,
    /// `∫ |u(t)|²_H dt`
    pub l2_h_sq: f64,
}

pub fn convolution_norms(op: &OperatorDisc, control: &[Field], dt: f64) -> Result<ConvolutionNorms> {
    let projected: Vec<Vec<Vec<f64>>> = control.iter().map(|u| op.project(u)).collect::<Result<_>>()?;
    let r = op.grid.components;
    let m = op.grid.points;
    let mut h1_at_step = vec![0.0; control.len() + 1];
    let mut l2_h2_sq = 0.0;
    for c in 0..r {
        let alphas = op.eigen(c)?.values();
        for k in 0..m {
            let a = alphas[k];
            let decay = (-a * dt).exp();
            let gain = -(-a * dt).exp_m1() / a;
            let mut state = 0.0;
            for (n, coeffs) in projected.iter().enumerate() {
                let u = coeffs[c][k];
                // on the step: y(s) = p + (y0 − p) e^{−αs} with p = u/α
                let p = u / a;
                let q = state - p;
                let e1 = -(-a * dt).exp_m1() / a;
                let e2 = -(-2.0 * a * dt).exp_m1() / (2.0 * a);
                let integral = p * p * dt + 2.0 * p * q * e1 + q * q * e2;
                l2_h2_sq += a * a * integral;
                state = decay * state + gain * u;
                h1_at_step[n + 1] += a * state * state;
            }
        }
    }
    let l2_h_sq = control.iter().map(|u| dt * h_inner(u, u)).sum();
    Ok(ConvolutionNorms {
        sup_h1_sq: h1_at_step.into_iter().fold(0.0, f64::max),
        l2_h2_sq,
        l2_h_sq,
    })
}
