//! Reproducible discretised space-time white noise.
//!
//! Every increment is a pure function of `(root_seed, trajectory, step)`:
//! the root seed keys a ChaCha8 generator, the trajectory index selects its
//! stream, and the step counter selects a disjoint block window inside that
//! stream. Node values within a step are drawn in node order. Replaying a
//! trajectory, or running trajectories on any number of workers in any
//! order, reproduces the same numbers bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::grid::{Field, GridSpec};

/// Stream id reserved for a root stream that has not been split.
pub const ROOT_TRAJECTORY: u64 = u64::MAX;

// each step owns 2^32 words of its stream
const STEP_WINDOW_BITS: u32 = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NoiseStream {
    pub root_seed: u64,
    pub trajectory_index: u64,
    pub step_counter: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn key_from_seed(seed: u64) -> [u8; 32] {
    let mut key = [0u8; 32];
    let mut s = seed;
    for chunk in key.chunks_exact_mut(8) {
        s = splitmix64(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    key
}

impl NoiseStream {
    pub fn new(root_seed: u64) -> Self {
        Self {
            root_seed,
            trajectory_index: ROOT_TRAJECTORY,
            step_counter: 0,
        }
    }

    /// Generator positioned at the start of the current step's window.
    fn step_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(key_from_seed(self.root_seed));
        rng.set_stream(self.trajectory_index);
        rng.set_word_pos((self.step_counter as u128) << STEP_WINDOW_BITS);
        rng
    }

    /// Fills `out` with independent `N(0, dt/Δξ)` values and advances the step counter.
    pub fn fill_increment(&mut self, dt: f64, out: &mut Field) {
        let scale = (dt / out.grid().spacing()).sqrt();
        let mut rng = self.step_rng();
        for v in out.values_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = scale * z;
        }
        self.step_counter += 1;
    }

    /// Same as [`fill_increment`](Self::fill_increment) but without advancing.
    pub fn peek_increment(&self, dt: f64, out: &mut Field) {
        let mut copy = *self;
        copy.fill_increment(dt, out);
    }

    /// Stream positioned at an arbitrary step of the same trajectory.
    pub fn at_step(&self, step: u64) -> Self {
        Self {
            step_counter: step,
            ..*self
        }
    }
}

pub fn sample_increment(stream: &mut NoiseStream, grid: &GridSpec, dt: f64) -> Field {
    assert!(dt > 0.0, "noise increment needs dt > 0");
    let mut out = Field::zeros(*grid);
    stream.fill_increment(dt, &mut out);
    out
}

/// Independent child stream for trajectory `trajectory_index`. Pure: the
/// parent is not modified. Splitting a child derives a fresh root seed so
/// nested splits never share a stream with their ancestors.
pub fn split_stream(root: &NoiseStream, trajectory_index: u64) -> NoiseStream {
    assert!(
        trajectory_index != ROOT_TRAJECTORY,
        "trajectory index {ROOT_TRAJECTORY} is reserved"
    );
    let root_seed = if root.trajectory_index == ROOT_TRAJECTORY {
        root.root_seed
    } else {
        splitmix64(root.root_seed ^ splitmix64(root.trajectory_index))
    };
    NoiseStream {
        root_seed,
        trajectory_index,
        step_counter: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> GridSpec {
        // Δξ = 0.025
        GridSpec::new(5.0, 199, 1).unwrap()
    }

    #[test]
    fn determinism_of_triple() {
        let g = grid();
        let s = split_stream(&NoiseStream::new(42), 3).at_step(17);
        let mut a = s;
        let mut b = s;
        assert_eq!(sample_increment(&mut a, &g, 1e-3), sample_increment(&mut b, &g, 1e-3));
        assert_eq!(a.step_counter, 18);
    }

    #[test]
    fn replay_matches_sequential() {
        let g = grid();
        let mut s = split_stream(&NoiseStream::new(9), 0);
        let seq: Vec<Field> = (0..5).map(|_| sample_increment(&mut s, &g, 1e-3)).collect();
        let mut replay = s.at_step(3);
        assert_eq!(sample_increment(&mut replay, &g, 1e-3), seq[3]);
    }

    #[test]
    fn split_is_pure_and_repeatable() {
        let root = NoiseStream::new(7);
        let a = split_stream(&root, 5);
        let b = split_stream(&root, 5);
        assert_eq!(a, b);
        assert_eq!(root, NoiseStream::new(7));
        let nested = split_stream(&a, 5);
        assert_ne!(nested.root_seed, a.root_seed);
    }

    #[test]
    fn per_node_variance() {
        let g = grid();
        let dt = 1e-3;
        let n = 100_000;
        let mut s = split_stream(&NoiseStream::new(1), 0);
        let mut buf = Field::zeros(g);
        // node 0 and node 1 accumulators
        let (mut s0, mut s00, mut s11, mut s01) = (0.0, 0.0, 0.0, 0.0);
        let mut s1 = 0.0;
        for _ in 0..n {
            s.fill_increment(dt, &mut buf);
            let (a, b) = (buf.values()[0], buf.values()[1]);
            s0 += a;
            s1 += b;
            s00 += a * a;
            s11 += b * b;
            s01 += a * b;
        }
        let nf = n as f64;
        let var0 = s00 / nf - (s0 / nf).powi(2);
        let var1 = s11 / nf - (s1 / nf).powi(2);
        let target = dt / g.spacing();
        assert!((target - 0.04).abs() < 1e-15);
        // standard error of a Gaussian sample variance: σ²·sqrt(2/n)
        let se = target * (2.0 / nf).sqrt();
        assert!((var0 - target).abs() < 3.0 * se, "var0 {var0}");
        assert!((var1 - target).abs() < 3.0 * se, "var1 {var1}");
        let cov = s01 / nf - (s0 / nf) * (s1 / nf);
        let se_cov = target / nf.sqrt();
        assert!(cov.abs() < 4.0 * se_cov, "cov {cov}");
    }

    #[test]
    fn split_streams_uncorrelated() {
        let g = GridSpec::new(1.0, 3, 1).unwrap();
        let root = NoiseStream::new(2024);
        let mut a = split_stream(&root, 0);
        let mut b = split_stream(&root, 1);
        let n = 10_000;
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let x = sample_increment(&mut a, &g, 1.0).values()[0];
            let y = sample_increment(&mut b, &g, 1.0).values()[0];
            sab += x * y;
            saa += x * x;
            sbb += y * y;
        }
        let corr = sab / (saa * sbb).sqrt();
        assert!(corr.abs() < 0.01 * 3.0, "corr {corr}");
    }
}
