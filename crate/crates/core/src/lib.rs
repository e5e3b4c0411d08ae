//! Event-impact propagation engine over time-varying signed firm graphs.
//!
//! The crate covers graph construction ([`market_graph`]), instruction
//! dataset generation ([`instruction`]), factor-model residuals
//! ([`asset_pricing`]), propagators and their wire format ([`propagator`]),
//! reward alignment ([`alignment`]), statistical evaluation
//! ([`evaluation`]), portfolio backtesting ([`portfolio`]) and a synthetic
//! market with known ground truth ([`synth`]).

pub mod alignment;
pub mod asset_pricing;
pub mod calendar;
pub mod evaluation;
pub mod instruction;
pub mod market_graph;
pub mod portfolio;
pub mod propagator;
pub mod synth;
