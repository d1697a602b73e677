use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polarization::BellKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum User {
    First,
    Second,
}

/// Pair source behind the beam-splitter filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceModel {
    /// Pairs per second.
    pub pair_rate: f64,
    /// Probability that a pulse is a shared singlet, one photon per user.
    pub p_shared: f64,
    /// Probability that a pulse is a filtered Phi pair sent to one user.
    pub p_filtered: f64,
    /// +1 for Phi+, -1 for Phi-.
    pub filtered_sign: i8,
}

impl Default for SourceModel {
    fn default() -> Self {
        Self {
            pair_rate: 1.0e4,
            p_shared: 0.5,
            p_filtered: 0.5,
            filtered_sign: 1,
        }
    }
}

impl SourceModel {
    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !prob(self.p_shared) || !prob(self.p_filtered) {
            return Err(Error::Config("source probabilities must lie in [0, 1]".into()));
        }
        if self.p_shared + self.p_filtered > 1.0 + 1e-12 {
            return Err(Error::Config(format!(
                "p_shared + p_filtered = {} exceeds 1",
                self.p_shared + self.p_filtered
            )));
        }
        if !(self.pair_rate >= 0.0 && self.pair_rate.is_finite()) {
            return Err(Error::Config("pair rate must be non-negative".into()));
        }
        if self.filtered_sign != 1 && self.filtered_sign != -1 {
            return Err(Error::Config("filtered_sign must be +1 or -1".into()));
        }
        Ok(())
    }

    pub fn filtered_kind(&self) -> BellKind {
        if self.filtered_sign < 0 {
            BellKind::PhiMinus
        } else {
            BellKind::PhiPlus
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PulseEvent {
    Shared,
    Filtered(User),
    Vacuum,
}

pub fn emit_pulse<R: Rng + ?Sized>(source: &SourceModel, rng: &mut R) -> PulseEvent {
    let u: f64 = rng.random();
    if u < source.p_shared {
        PulseEvent::Shared
    } else if u < source.p_shared + source.p_filtered {
        if rng.random::<bool>() {
            PulseEvent::Filtered(User::First)
        } else {
            PulseEvent::Filtered(User::Second)
        }
    } else {
        PulseEvent::Vacuum
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn degenerate_source_always_shares() {
        let src = SourceModel {
            p_shared: 1.0,
            p_filtered: 0.0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..1000).all(|_| emit_pulse(&src, &mut rng) == PulseEvent::Shared));
    }

    #[test]
    fn category_and_user_fractions() {
        let src = SourceModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let (mut shared, mut filtered, mut first) = (0usize, 0usize, 0usize);
        for _ in 0..n {
            match emit_pulse(&src, &mut rng) {
                PulseEvent::Shared => shared += 1,
                PulseEvent::Filtered(u) => {
                    filtered += 1;
                    if u == User::First {
                        first += 1;
                    }
                }
                PulseEvent::Vacuum => panic!("no vacuum expected"),
            }
        }
        let sigma = (0.25 / n as f64).sqrt();
        assert!((shared as f64 / n as f64 - 0.5).abs() < 5.0 * sigma);
        let sigma_u = (0.25 / filtered as f64).sqrt();
        assert!((first as f64 / filtered as f64 - 0.5).abs() < 5.0 * sigma_u);
    }

    #[test]
    fn vacuum_fills_the_remainder() {
        let src = SourceModel {
            p_shared: 0.2,
            p_filtered: 0.3,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 50_000;
        let vac = (0..n)
            .filter(|_| emit_pulse(&src, &mut rng) == PulseEvent::Vacuum)
            .count();
        let sigma = (0.25 / n as f64).sqrt();
        assert!((vac as f64 / n as f64 - 0.5).abs() < 5.0 * sigma);
    }

    #[test]
    fn overfull_source_rejected() {
        let src = SourceModel {
            p_shared: 0.7,
            p_filtered: 0.5,
            ..Default::default()
        };
        assert!(src.validate().is_err());
    }
}
