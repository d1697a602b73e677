//! Thermal drift of a fiber's excess path.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid spacing of the random walk, seconds.
pub const RANDOM_WALK_DT: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftKind {
    Sinusoid,
    RandomWalk,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftModel {
    pub kind: DriftKind,
    #[serde(default)]
    pub amplitude_um: f64,
    #[serde(default = "default_period")]
    pub period_s: f64,
    /// Random-walk diffusion, um per sqrt(second).
    #[serde(default)]
    pub step_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_period() -> f64 {
    1.0
}

impl DriftModel {
    pub fn sinusoid(amplitude_um: f64, period_s: f64) -> Self {
        Self {
            kind: DriftKind::Sinusoid,
            amplitude_um,
            period_s,
            step_sigma: 0.0,
            seed: 0,
        }
    }

    pub fn random_walk(step_sigma: f64, seed: u64) -> Self {
        Self {
            kind: DriftKind::RandomWalk,
            amplitude_um: 0.0,
            period_s: default_period(),
            step_sigma,
            seed,
        }
    }

    pub fn constant() -> Self {
        Self {
            kind: DriftKind::Constant,
            amplitude_um: 0.0,
            period_s: default_period(),
            step_sigma: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            DriftKind::Sinusoid if !(self.period_s > 0.0 && self.period_s.is_finite()) => Err(Error::Config(format!(
                "drift period must be positive, got {}",
                self.period_s
            ))),
            DriftKind::Sinusoid if !self.amplitude_um.is_finite() => {
                Err(Error::Config("drift amplitude must be finite".into()))
            }
            DriftKind::RandomWalk if !(self.step_sigma >= 0.0 && self.step_sigma.is_finite()) => Err(Error::Config(
                format!("random-walk sigma must be non-negative, got {}", self.step_sigma),
            )),
            _ => Ok(()),
        }
    }
}

/// Drift offset in micrometres at `time` seconds.
///
/// The random walk is a cumulative sum of Gaussian steps on a fixed
/// [`RANDOM_WALK_DT`] grid, regenerated from the seed on each call and
/// linearly interpolated between grid points, so the value depends only on
/// `(model, time)`.
pub fn drift_value(model: &DriftModel, time: f64) -> f64 {
    let time = time.max(0.0);
    match model.kind {
        DriftKind::Constant => 0.0,
        DriftKind::Sinusoid => model.amplitude_um * (2.0 * std::f64::consts::PI * time / model.period_s).sin(),
        DriftKind::RandomWalk => {
            if model.step_sigma == 0.0 {
                return 0.0;
            }
            let sigma = model.step_sigma * RANDOM_WALK_DT.sqrt();
            let normal = Normal::new(0.0, sigma).expect("sigma validated non-negative");
            let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
            let pos = time / RANDOM_WALK_DT;
            let whole = pos.floor() as u64;
            let mut value = 0.0;
            for _ in 0..whole {
                value += normal.sample(&mut rng);
            }
            let frac = pos - whole as f64;
            if frac > 0.0 {
                value += frac * normal.sample(&mut rng);
            }
            value
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sinusoid_quarter_period() {
        let m = DriftModel::sinusoid(1.0, 2.0);
        assert!((drift_value(&m, 0.5) - 1.0).abs() < 1e-15);
        assert_eq!(drift_value(&m, 0.0), 0.0);
    }

    #[test]
    fn constant_is_zero() {
        let m = DriftModel::constant();
        for t in [0.0, 1.0, 1e6] {
            assert_eq!(drift_value(&m, t), 0.0);
        }
    }

    #[test]
    fn random_walk_is_reproducible() {
        let m = DriftModel::random_walk(0.3, 17);
        let grid: Vec<f64> = (0..50).map(|i| i as f64 * 0.037).collect();
        let a: Vec<f64> = grid.iter().map(|&t| drift_value(&m, t)).collect();
        let b: Vec<f64> = grid.iter().map(|&t| drift_value(&m, t)).collect();
        assert_eq!(a, b);
        assert!(a.iter().any(|v| *v != 0.0));
        let other = DriftModel::random_walk(0.3, 18);
        assert_ne!(drift_value(&other, 1.0), drift_value(&m, 1.0));
    }

    #[test]
    fn random_walk_is_continuous_at_grid_points() {
        let m = DriftModel::random_walk(1.0, 3);
        let t = 0.5;
        let left = drift_value(&m, t - 1e-9);
        let right = drift_value(&m, t);
        assert!((left - right).abs() < 1e-6);
    }

    #[test]
    fn random_walk_variance_grows_linearly() {
        // Var = sigma^2 t over many seeds
        let n = 400;
        let t = 1.0;
        let vals: Vec<f64> = (0..n)
            .map(|s| drift_value(&DriftModel::random_walk(2.0, s), t))
            .collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        // expected 4.0; sampling sd of the variance ~ 4*sqrt(2/n) = 0.28
        assert!((var - 4.0).abs() < 5.0 * 0.29, "variance {var}");
    }

    #[test]
    fn invalid_period_rejected() {
        assert!(DriftModel::sinusoid(1.0, 0.0).validate().is_err());
        assert!(DriftModel::random_walk(-1.0, 0).validate().is_err());
    }
}
