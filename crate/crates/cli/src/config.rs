use std::path::{Path, PathBuf};

use ripple_core::alignment::{AlignConfig, RewardConfig};
use ripple_core::asset_pricing::{PricingModel, WindowConfig};
use ripple_core::instruction::InstructionConfig;
use ripple_core::market_graph::LayerWeights;
use ripple_core::portfolio::BacktestConfig;
use ripple_core::propagator::DiffusionParams;
use ripple_core::synth::SynthConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// The run document. Every key has a default; `--print-config` shows them.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Required by `synth gen` and `align run`.
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub data: DataPaths,
    pub graph: GraphConfig,
    pub pricing: PricingConfig,
    pub reward: RewardConfig,
    pub align: AlignConfig,
    pub eval: EvalSection,
    pub portfolio: PortfolioConfig,
    pub synth: SynthConfig,
    pub instr: InstructionConfig,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub edges: Option<PathBuf>,
    pub cpc: Option<PathBuf>,
    pub returns: Option<PathBuf>,
    pub factors: Option<PathBuf>,
    pub events: Option<PathBuf>,
    /// Ground-truth impacts, used by `--propagator oracle`.
    pub truth: Option<PathBuf>,
}

impl DataPaths {
    /// Standard file names inside a dataset directory.
    pub fn in_dir(dir: &Path) -> Self {
        let opt = |name: &str| {
            let p = dir.join(name);
            p.exists().then_some(p)
        };
        Self {
            edges: opt("edges.csv"),
            cpc: opt("cpc.csv"),
            returns: opt("returns.csv"),
            factors: opt("factors.csv"),
            events: opt("events.jsonl"),
            truth: opt("truth.csv"),
        }
    }

    fn rebase(&mut self, base: &Path) {
        for p in [
            &mut self.edges,
            &mut self.cpc,
            &mut self.returns,
            &mut self.factors,
            &mut self.events,
            &mut self.truth,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    pub weights: LayerWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PricingConfig {
    pub model: PricingModel,
    pub window: usize,
    pub min_obs: usize,
}

impl Default for PricingConfig {
    fn default() -> Self {
        let w = WindowConfig::default();
        Self {
            model: PricingModel::Capm,
            window: w.window,
            min_obs: w.min_obs,
        }
    }
}

impl PricingConfig {
    pub fn window(&self) -> WindowConfig {
        WindowConfig {
            window: self.window,
            min_obs: self.min_obs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// `diffusion`, `null`, `oracle` or `external:<command>`.
    pub propagator: String,
    pub params: DiffusionParams,
    /// Use FF5 loadings as controls; needs FF5 factor columns.
    pub controls: bool,
    pub seed_score: i32,
    pub timeout_secs: f64,
    pub edge_budget: usize,
    /// Also report one row per removed relation layer.
    pub ablate: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            propagator: "diffusion".into(),
            params: DiffusionParams::default(),
            controls: false,
            seed_score: ripple_core::propagator::DEFAULT_SEED_SCORE,
            timeout_secs: ripple_core::propagator::external::DEFAULT_TIMEOUT.as_secs_f64(),
            edge_budget: ripple_core::propagator::DEFAULT_EDGE_BUDGET,
            ablate: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PortfolioConfig {
    pub decile: f64,
    /// Trailing return window for the benchmark allocators.
    pub lookback: usize,
    pub risk_aversion: f64,
    pub backtest: BacktestConfig,
}

impl Default for PortfolioConfig {
    fn default() -> Self {
        Self {
            decile: 0.1,
            lookback: 30,
            risk_aversion: 1.0,
            backtest: BacktestConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads a config file. Relative data paths are taken relative to the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::data(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        if let Some(base) = path.parent() {
            cfg.data.rebase(base);
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::usage(format!("bad config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    pub fn require_seed(&self, command: &str) -> Result<u64, CliError> {
        self.seed.ok_or_else(|| {
            CliError::usage(format!(
                "`{command}` needs a seed (--seed or `seed` in the config)"
            ))
        })
    }

    /// Checks that every configured input path exists.
    pub fn check_paths(&self) -> Result<(), CliError> {
        let d = &self.data;
        for p in [
            &d.edges, &d.cpc, &d.returns, &d.factors, &d.events, &d.truth,
        ]
        .into_iter()
        .flatten()
        {
            if !p.exists() {
                return Err(CliError::data(format!(
                    "input {} does not exist",
                    p.display()
                )));
            }
        }
        Ok(())
    }
}

pub fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
    p.as_deref()
        .ok_or_else(|| CliError::usage(format!("missing `data.{key}` path")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig {
            seed: Some(3),
            ..RunConfig::default()
        };
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_usage_errors() {
        let e = RunConfig::parse("sede = 3").unwrap_err();
        assert_eq!(e.code(), 1);
    }

    #[test]
    fn partial_document() {
        let cfg =
            RunConfig::parse("seed = 5\n[reward]\nlambda = 0.3\n[pricing]\nmodel = \"ff5\"\n")
                .unwrap();
        assert_eq!(cfg.seed, Some(5));
        assert_eq!(cfg.reward.lambda, 0.3);
        assert_eq!(cfg.pricing.model, PricingModel::Ff5);
        assert_eq!(cfg.align, AlignConfig::default());
    }
}
