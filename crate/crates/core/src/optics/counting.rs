use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::polarization::ParityDistribution;

/// Coincidence counts in one acquisition window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CountPair {
    pub n_correlated: u64,
    pub n_anticorrelated: u64,
}

impl CountPair {
    pub fn total(&self) -> u64 {
        self.n_correlated + self.n_anticorrelated
    }

    /// Correlated fraction of all coincidences; `None` for an empty window.
    pub fn correlated_fraction(&self) -> Option<f64> {
        match self.total() {
            0 => None,
            t => Some(self.n_correlated as f64 / t as f64),
        }
    }
}

fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive finite mean").sample(rng) as u64
}

/// Independent Poisson draws with means `rate * window * p`.
pub fn sample_counts<R: Rng + ?Sized>(
    parity: &ParityDistribution,
    rate: f64,
    window: f64,
    rng: &mut R,
) -> Result<CountPair> {
    if !(rate >= 0.0 && rate.is_finite()) {
        return Err(Error::InvalidArgument(format!("rate must be >= 0, got {rate}")));
    }
    if !(window > 0.0 && window.is_finite()) {
        return Err(Error::InvalidArgument(format!("window must be > 0, got {window}")));
    }
    let n = rate * window;
    Ok(CountPair {
        n_correlated: poisson(n * parity.p_correlated, rng),
        n_anticorrelated: poisson(n * parity.p_anticorrelated, rng),
    })
}
