//! Time-discrete paths and piecewise-constant controls on a uniform time grid.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::grid::Field;

/// States `φ_0, …, φ_N` at times `t_0 + m·dt`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPath {
    pub start_time: f64,
    pub dt: f64,
    pub states: Vec<Field>,
}

impl TrajectoryPath {
    pub fn new(dt: f64, states: Vec<Field>) -> Self {
        Self {
            start_time: 0.0,
            dt,
            states,
        }
    }

    /// Constant path at `x` over `steps` intervals.
    pub fn constant(x: &Field, dt: f64, steps: usize) -> Self {
        Self::new(dt, vec![x.clone(); steps + 1])
    }

    /// Straight line from `x` to `y` in state space.
    pub fn linear(x: &Field, y: &Field, horizon: f64, steps: usize) -> Self {
        let states = (0..=steps)
            .map(|m| {
                let s = m as f64 / steps as f64;
                let mut f = x.scaled(1.0 - s);
                f.axpy(s, y);
                f
            })
            .collect();
        Self::new(horizon / steps as f64, states)
    }

    pub fn steps(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.steps() as f64
    }

    pub fn time(&self, m: usize) -> f64 {
        self.start_time + self.dt * m as f64
    }

    pub fn first(&self) -> &Field {
        &self.states[0]
    }

    pub fn last(&self) -> &Field {
        self.states.last().expect("empty path")
    }

    /// Time-reversed path `ψ(t) = φ(T − t)`.
    pub fn reversed(&self) -> Self {
        let mut states = self.states.clone();
        states.reverse();
        Self::new(self.dt, states)
    }

    /// `self` followed by `other`; the junction state is kept once.
    pub fn concat(&self, other: &TrajectoryPath) -> Self {
        let mut states = self.states.clone();
        states.extend(other.states.iter().skip(1).cloned());
        Self {
            start_time: self.start_time,
            dt: self.dt,
            states,
        }
    }

    /// Maximum over time of the sup-norm distance to `other`.
    pub fn sup_distance(&self, other: &TrajectoryPath) -> f64 {
        self.states
            .iter()
            .zip(&other.states)
            .map(|(a, b)| a.sub(b).sup_norm())
            .fold(0.0, f64::max)
    }

    /// CSV matrix: one row per time, first column the time, then node values
    /// (component-major when `r > 1`).
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        if let Some(first) = self.states.first() {
            let (r, m) = first.shape();
            write!(w, "t")?;
            for c in 0..r {
                for j in 0..m {
                    if r == 1 {
                        write!(w, ",x{j}")?;
                    } else {
                        write!(w, ",x{c}_{j}")?;
                    }
                }
            }
            writeln!(w)?;
        }
        for (m, s) in self.states.iter().enumerate() {
            write!(w, "{}", self.time(m))?;
            for v in s.values() {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Controls `u_0, …, u_{N−1}`; `u_m` acts on `[t_m, t_{m+1})`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlPath {
    pub dt: f64,
    pub controls: Vec<Field>,
}

impl ControlPath {
    pub fn new(dt: f64, controls: Vec<Field>) -> Self {
        Self { dt, controls }
    }

    pub fn zeros(template: &Field, dt: f64, steps: usize) -> Self {
        let zero = Field::zeros(*template.grid());
        Self::new(dt, vec![zero; steps])
    }

    pub fn steps(&self) -> usize {
        self.controls.len()
    }

    /// `∫|u|²_H dt`
    pub fn l2_norm_sq(&self) -> f64 {
        self.controls
            .iter()
            .map(|u| self.dt * crate::grid::h_inner(u, u))
            .sum()
    }

    /// `½∫|u|²_H dt`
    pub fn energy(&self) -> f64 {
        0.5 * self.l2_norm_sq()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self::new(self.dt, self.controls.iter().map(|u| u.scaled(c)).collect())
    }

    pub fn max_h_distance(&self, other: &ControlPath) -> f64 {
        self.controls
            .iter()
            .zip(&other.controls)
            .map(|(a, b)| a.sub(b).h_norm())
            .fold(0.0, f64::max)
    }
}
