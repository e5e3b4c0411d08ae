//! Direction + coverage reward and a clipped policy-gradient loop over
//! diffusion parameters.

mod policy;
mod train;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market_graph::FirmId;
use crate::propagator::{PropagatorError, ShockVector};

pub use policy::{PolicyState, Sample, PARAM_DIM, PARAM_NAMES};
pub use train::{
    align, evaluate_params, evaluate_shocks, split_months, write_trace, AlignConfig, AlignEnv,
    AlignmentTrace, TraceStep,
};

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("shock or residual vector is identically zero")]
    ZeroVector,
    #[error("vectors have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("event stream is empty")]
    EmptyStream,
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("non-finite gradient; update skipped")]
    NonFiniteGradient,
    #[error("empty update batch")]
    EmptyBatch,
    #[error(transparent)]
    Propagator(#[from] PropagatorError),
}

/// Which coverage term to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageForm {
    /// `Σ min(|Z_j|, |ε_j|) / ‖ε‖₁`.
    #[default]
    Absolute,
    /// `Σ min(Z_j, ε_j) / ‖ε‖₁`, without absolute values.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub lambda: f64,
    pub coverage: CoverageForm,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            coverage: CoverageForm::Absolute,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), AlignError> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(AlignError::BadConfig(format!("lambda {} < 0", self.lambda)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardReport {
    pub direction: f64,
    pub coverage: f64,
    pub total: f64,
    /// Events scored.
    pub events: usize,
    /// Events whose propagator refused.
    pub refusals: usize,
    /// Events dropped because `Z` or `ε` was all zero or unavailable.
    pub excluded: usize,
}

/// Reward of aligned vectors `z` and `eps`.
pub fn reward_vectors(
    z: &[f64],
    eps: &[f64],
    cfg: &RewardConfig,
) -> Result<RewardReport, AlignError> {
    if z.len() != eps.len() {
        return Err(AlignError::LengthMismatch(z.len(), eps.len()));
    }
    let nz = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    let ne = eps.iter().map(|v| v * v).sum::<f64>().sqrt();
    if nz == 0.0 || ne == 0.0 {
        return Err(AlignError::ZeroVector);
    }
    let dot: f64 = z.iter().zip(eps).map(|(a, b)| a * b).sum();
    let direction = (dot / (nz * ne)).clamp(-1.0, 1.0);
    let l1: f64 = eps.iter().map(|v| v.abs()).sum();
    let overlap: f64 = match cfg.coverage {
        CoverageForm::Absolute => z.iter().zip(eps).map(|(a, b)| a.abs().min(b.abs())).sum(),
        CoverageForm::Literal => z.iter().zip(eps).map(|(a, b)| a.min(*b)).sum(),
    };
    let coverage = overlap / l1;
    Ok(RewardReport {
        direction,
        coverage,
        total: direction + cfg.lambda * coverage,
        events: 1,
        refusals: 0,
        excluded: 0,
    })
}

/// Reward of a shock vector against one date's residual cross-section.
/// The firm set is that of `eps`; shocks on other firms are ignored.
pub fn reward(
    z: &ShockVector,
    eps: &BTreeMap<FirmId, f64>,
    cfg: &RewardConfig,
) -> Result<RewardReport, AlignError> {
    let zs: Vec<f64> = eps.keys().map(|f| z.get(f)).collect();
    let es: Vec<f64> = eps.values().copied().collect();
    reward_vectors(&zs, &es, cfg)
}

/// Averages per-event reports; counts are summed.
pub fn mean_report(reports: &[RewardReport], refusals: usize, excluded: usize) -> RewardReport {
    let n = reports.len();
    let mean = |f: fn(&RewardReport) -> f64| {
        if n == 0 {
            0.0
        } else {
            reports.iter().map(f).sum::<f64>() / n as f64
        }
    };
    RewardReport {
        direction: mean(|r| r.direction),
        coverage: mean(|r| r.coverage),
        total: mean(|r| r.total),
        events: n,
        refusals,
        excluded,
    }
}

/// Exponential-moving-average baseline for advantages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub value: Option<f64>,
    pub rho: f64,
}

impl Default for Baseline {
    fn default() -> Self {
        Self {
            value: None,
            rho: 0.1,
        }
    }
}

impl Baseline {
    /// `Â = r − V`, then `V ← (1 − ρ)V + ρr`. The first call sets `V = r`.
    pub fn advantage(&mut self, r: f64) -> f64 {
        let v = self.value.unwrap_or(r);
        let adv = r - v;
        self.value = Some((1.0 - self.rho) * v + self.rho * r);
        adv
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> RewardConfig {
        RewardConfig::default()
    }

    #[test]
    fn identical_vectors() {
        let e = [0.3, -0.1, 0.02];
        let r = reward_vectors(&e, &e, &cfg()).unwrap();
        assert!((r.total - 1.1).abs() < 1e-12);
    }

    #[test]
    fn opposite_vectors() {
        let e = [0.3, -0.1, 0.02];
        let z: Vec<f64> = e.iter().map(|v| -v).collect();
        let r = reward_vectors(&z, &e, &cfg()).unwrap();
        assert!((r.direction + 1.0).abs() < 1e-12);
        assert!((r.coverage - 1.0).abs() < 1e-12);
        assert!((r.total + 0.9).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_vectors() {
        let r = reward_vectors(&[1.0, 0.0], &[0.0, 1.0], &cfg()).unwrap();
        assert_eq!((r.direction, r.coverage, r.total), (0.0, 0.0, 0.0));
    }

    #[test]
    fn zero_vector_rejected() {
        assert!(matches!(
            reward_vectors(&[0.0, 0.0], &[1.0, 0.0], &cfg()),
            Err(AlignError::ZeroVector)
        ));
        assert!(matches!(
            reward_vectors(&[1.0], &[0.0], &cfg()),
            Err(AlignError::ZeroVector)
        ));
    }

    #[test]
    fn literal_coverage_keeps_signs() {
        let c = RewardConfig {
            coverage: CoverageForm::Literal,
            ..cfg()
        };
        let r = reward_vectors(&[-1.0, 0.0], &[1.0, 1.0], &c).unwrap();
        assert!((r.coverage + 0.5).abs() < 1e-15);
    }

    #[test]
    fn advantage_sequence() {
        let mut b = Baseline::default();
        assert_eq!(b.advantage(1.0), 0.0);
        let mut b = Baseline {
            value: Some(0.2),
            rho: 0.1,
        };
        assert!((b.advantage(0.5) - 0.3).abs() < 1e-15);
        // constant stream from a stale baseline decays geometrically
        let mut b = Baseline {
            value: Some(0.0),
            rho: 0.1,
        };
        let advs: Vec<f64> = (0..20).map(|_| b.advantage(1.0)).collect();
        assert!(advs.windows(2).all(|w| w[1].abs() < w[0].abs()));
        assert!(advs[19] < 0.15);
    }

    proptest! {
        #[test]
        fn total_is_bounded(
            z in prop::collection::vec(-5.0f64..5.0, 1..30),
            seed in prop::collection::vec(-5.0f64..5.0, 30),
            lambda in 0.0f64..2.0,
        ) {
            let eps = &seed[..z.len()];
            let c = RewardConfig { lambda, ..RewardConfig::default() };
            if let Ok(r) = reward_vectors(&z, eps, &c) {
                prop_assert!(r.total >= -1.0 - 1e-12 && r.total <= 1.0 + lambda + 1e-12);
                prop_assert!((0.0..=1.0 + 1e-12).contains(&r.coverage));
                prop_assert!((r.total - (r.direction + lambda * r.coverage)).abs() < 1e-12);
            }
        }

        #[test]
        fn direction_is_scale_invariant(
            z in prop::collection::vec(-5.0f64..5.0, 5),
            eps in prop::collection::vec(-5.0f64..5.0, 5),
            c in 0.01f64..100.0,
        ) {
            let cz: Vec<f64> = z.iter().map(|v| c * v).collect();
            if let (Ok(a), Ok(b)) = (reward_vectors(&z, &eps, &cfg()), reward_vectors(&cz, &eps, &cfg())) {
                prop_assert!((a.direction - b.direction).abs() < 1e-12);
            }
        }

        #[test]
        fn full_coverage_iff_dominating(
            z in prop::collection::vec(-5.0f64..5.0, 6),
            eps in prop::collection::vec(-5.0f64..5.0, 6),
        ) {
            if let Ok(r) = reward_vectors(&z, &eps, &cfg()) {
                let dominates = z.iter().zip(&eps).all(|(a, b)| a.abs() >= b.abs());
                prop_assert_eq!((r.coverage - 1.0).abs() < 1e-15, dominates);
            }
        }
    }
}
