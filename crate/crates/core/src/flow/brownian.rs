use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// Grid-sampled 3D Brownian motion, stored as its increments
/// `ΔW_n = W(t_{n+1}) - W(t_n)`, each component `N(0, dt)`.
///
/// A path is regenerated bit-exactly from `(seed, dt, n_steps)`. Forward and
/// inverse flows, and all perturbed flows used for finite differences, read
/// the same increments.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    seed: Option<u64>,
    dt: f64,
    increments: Vec<Vec3>,
}

impl BrownianPath {
    pub fn sample(seed: u64, dt: f64, n_steps: usize) -> Result<Self> {
        check_grid(dt, n_steps)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = dt.sqrt();
        let mut draw = || -> f64 { rng.sample::<f64, _>(StandardNormal) * scale };
        let increments = (0..n_steps)
            .map(|_| {
                let x = draw();
                let y = draw();
                let z = draw();
                Vec3::new(x, y, z)
            })
            .collect();
        Ok(Self {
            seed: Some(seed),
            dt,
            increments,
        })
    }

    /// The trivial path `W ≡ 0`; carries the time grid for deterministic runs.
    pub fn zero(dt: f64, n_steps: usize) -> Result<Self> {
        check_grid(dt, n_steps)?;
        Ok(Self {
            seed: None,
            dt,
            increments: vec![Vec3::ZERO; n_steps],
        })
    }

    pub fn from_increments(dt: f64, increments: Vec<Vec3>) -> Result<Self> {
        check_grid(dt, increments.len())?;
        Ok(Self {
            seed: None,
            dt,
            increments,
        })
    }

    /// `T / dt` steps, failing when `T` is not a whole number of steps.
    pub fn steps_for(horizon: f64, dt: f64) -> Result<usize> {
        let n = horizon / dt;
        let rounded = n.round();
        if !(dt > 0.0) || !(horizon > 0.0) || (n - rounded).abs() > 1e-9 * rounded.max(1.0) {
            return Err(Error::OffGrid {
                t: horizon,
                dt,
                horizon,
            });
        }
        Ok(rounded as usize)
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.increments.len()
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.n_steps() as f64
    }

    pub fn increments(&self) -> &[Vec3] {
        &self.increments
    }

    #[inline]
    pub fn increment(&self, n: usize) -> Vec3 {
        self.increments[n]
    }

    /// `W(t_n)`, summed left to right.
    pub fn value_at(&self, n: usize) -> Vec3 {
        self.increments[..n]
            .iter()
            .fold(Vec3::ZERO, |acc, &d| acc + d)
    }

    /// `max_n |W(t_n)|`.
    pub fn max_excursion(&self) -> f64 {
        let mut w = Vec3::ZERO;
        let mut best = 0.0_f64;
        for &d in &self.increments {
            w += d;
            best = best.max(w.norm());
        }
        best
    }

    /// The same realization on a grid `factor` times coarser: increments are
    /// summed in consecutive blocks.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.n_steps().is_multiple_of(factor) {
            return Err(Error::InvalidParameter(format!(
                "cannot coarsen {} steps by {factor}",
                self.n_steps()
            )));
        }
        let increments = self
            .increments
            .chunks(factor)
            .map(|c| c.iter().fold(Vec3::ZERO, |a, &d| a + d))
            .collect();
        Ok(Self {
            seed: self.seed,
            dt: self.dt * factor as f64,
            increments,
        })
    }

    /// Grid index of time `t`, rejecting times off the grid or past the horizon.
    pub fn step_index(&self, t: f64) -> Result<usize> {
        let off = || Error::OffGrid {
            t,
            dt: self.dt,
            horizon: self.horizon(),
        };
        let k = t / self.dt;
        let rounded = k.round();
        if !(t >= 0.0) || (k - rounded).abs() > 1e-9 * rounded.max(1.0) {
            return Err(off());
        }
        let idx = rounded as usize;
        if idx > self.n_steps() {
            return Err(off());
        }
        Ok(idx)
    }
}

fn check_grid(dt: f64, n_steps: usize) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    if n_steps == 0 {
        return Err(Error::InvalidParameter("n_steps must be >= 1".into()));
    }
    Ok(())
}

pub fn sample_brownian(seed: u64, dt: f64, n_steps: usize) -> Result<BrownianPath> {
    BrownianPath::sample(seed, dt, n_steps)
}
