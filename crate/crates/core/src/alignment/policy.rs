use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{AlignError, Baseline};
use crate::market_graph::LayerWeights;
use crate::propagator::{DiffusionParams, MAX_HOPS};

/// Policy coordinates: four layer decays, hop limit, seed scale.
pub const PARAM_DIM: usize = 6;
pub const PARAM_NAMES: [&str; PARAM_DIM] = [
    "gamma_technical",
    "gamma_supply_chain",
    "gamma_leadership",
    "gamma_fund_holding",
    "hops",
    "seed_scale",
];
const HOPS: usize = 4;
const SCALE: usize = 5;
const MIN_SEED_SCALE: f64 = 1e-3;

/// One sampled parameter vector with its update weight inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub theta: [f64; PARAM_DIM],
    /// `log π_new(θ) − log π_old(θ)`.
    pub log_ratio: f64,
    pub advantage: f64,
}

/// Diagonal Gaussian policy over continuous diffusion coordinates.
///
/// The mean stays continuous; the hop coordinate is rounded only when a
/// sample is turned into [`DiffusionParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyState {
    pub mean: [f64; PARAM_DIM],
    pub sigma: [f64; PARAM_DIM],
    pub baseline: Baseline,
    pub clip: f64,
    pub alpha: f64,
    pub step: usize,
}

impl PolicyState {
    pub fn new(
        init: &DiffusionParams,
        sigma: [f64; PARAM_DIM],
        alpha: f64,
        clip: f64,
        rho: f64,
    ) -> Result<Self, AlignError> {
        if sigma.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(AlignError::BadConfig(
                "exploration sigma must be ≥ 0".into(),
            ));
        }
        if !(clip > 0.0 && clip < 1.0) {
            return Err(AlignError::BadConfig(format!("clip {clip} outside (0, 1)")));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(AlignError::BadConfig(format!(
                "learning rate {alpha} must be > 0"
            )));
        }
        if !(0.0..=1.0).contains(&rho) {
            return Err(AlignError::BadConfig(format!(
                "baseline decay {rho} outside [0, 1]"
            )));
        }
        Ok(Self {
            mean: encode(init),
            sigma,
            baseline: Baseline { value: None, rho },
            clip,
            alpha,
            step: 0,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; PARAM_DIM] {
        let mut t = self.mean;
        for (x, s) in t.iter_mut().zip(self.sigma) {
            let z: f64 = rng.sample(StandardNormal);
            *x += s * z;
        }
        t
    }

    /// Log density of `theta` up to the constant shared by all means;
    /// zero-σ coordinates are omitted.
    pub fn log_density(&self, theta: &[f64; PARAM_DIM]) -> f64 {
        let mut lp = 0.0;
        for d in 0..PARAM_DIM {
            let s = self.sigma[d];
            if s > 0.0 {
                let u = (theta[d] - self.mean[d]) / s;
                lp -= 0.5 * u * u;
            }
        }
        lp
    }

    pub fn advantage(&mut self, r: f64) -> f64 {
        self.baseline.advantage(r)
    }

    /// Clipped, ratio-weighted score-function step on the mean:
    /// `μ ← μ + α · mean_b[clip(ρ_b) · Â_b · (θ_b − μ)/σ²]`, then projected
    /// back into the parameter domain. On a non-finite gradient the state
    /// is left untouched.
    pub fn update(&mut self, batch: &[Sample]) -> Result<(), AlignError> {
        if batch.is_empty() {
            return Err(AlignError::EmptyBatch);
        }
        let mut grad = [0.0; PARAM_DIM];
        for s in batch {
            let ratio = s.log_ratio.exp().clamp(1.0 - self.clip, 1.0 + self.clip);
            for d in 0..PARAM_DIM {
                let sd = self.sigma[d];
                if sd > 0.0 {
                    grad[d] += ratio * s.advantage * (s.theta[d] - self.mean[d]) / (sd * sd);
                }
            }
        }
        if grad.iter().any(|g| !g.is_finite()) {
            log::warn!("non-finite policy gradient at step {}", self.step);
            return Err(AlignError::NonFiniteGradient);
        }
        let n = batch.len() as f64;
        for d in 0..PARAM_DIM {
            self.mean[d] += self.alpha * grad[d] / n;
        }
        self.mean = project(self.mean);
        self.step += 1;
        Ok(())
    }

    pub fn mean_params(&self) -> DiffusionParams {
        decode(&self.mean)
    }
}

/// Parameters as policy coordinates.
pub fn encode(p: &DiffusionParams) -> [f64; PARAM_DIM] {
    let g = p.gamma.as_array();
    [g[0], g[1], g[2], g[3], p.hops as f64, p.seed_scale]
}

/// Projects coordinates into their domains without rounding the hop limit.
pub fn project(mut t: [f64; PARAM_DIM]) -> [f64; PARAM_DIM] {
    for x in &mut t[..HOPS] {
        *x = x.clamp(0.0, 1.0);
    }
    t[HOPS] = t[HOPS].clamp(0.0, MAX_HOPS as f64);
    t[SCALE] = t[SCALE].clamp(MIN_SEED_SCALE, 1.0);
    t
}

/// Valid diffusion parameters nearest to `theta`; the hop limit is rounded.
pub fn decode(theta: &[f64; PARAM_DIM]) -> DiffusionParams {
    let t = project(*theta);
    DiffusionParams {
        gamma: LayerWeights {
            technical: t[0],
            supply_chain: t[1],
            leadership: t[2],
            fund_holding: t[3],
        },
        hops: t[HOPS].round() as usize,
        seed_scale: t[SCALE],
    }
}
