use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use ripple_core::alignment::{
    align, evaluate_params, evaluate_shocks, write_trace, AlignEnv, RewardReport,
};
use ripple_core::asset_pricing::io::{read_factors_file, read_returns_file};
use ripple_core::asset_pricing::{
    residual_panel, BetaSource, PricingModel, ResidualPanel, ReturnPanel,
};
use ripple_core::calendar::Month;
use ripple_core::evaluation::{
    ablation_series, cross_sections, evaluate, write_anova_csv, write_regression_csv,
    ControlSource, EvalConfig, EvalReport,
};
use ripple_core::instruction::{self, write_jsonl};
use ripple_core::market_graph::io::{export_snapshots, read_cpc_file, read_edges_file};
use ripple_core::market_graph::{snapshot_stats, GraphSeries, LayerWeights, RelationKind};
use ripple_core::portfolio::{
    backtest, benchmark_schedule, ripple_schedule, write_equity_csv, write_report_csv,
    BacktestReport, Strategy,
};
use ripple_core::propagator::io::read_events_file;
use ripple_core::propagator::mock::{self, MockConfig, MockMode};
use ripple_core::propagator::{
    collect_shocks, DiffusionParams, DiffusionPropagator, Event, ExternalClient, NullPropagator,
    Propagator, RefusalReason, ShockLog, ShockVector,
};
use ripple_core::synth::{self, io::read_truth};
use serde::Serialize;

use crate::config::{required, DataPaths, RunConfig};
use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Jsonl,
}

pub struct Context {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub format: Format,
}

impl Context {
    fn create(&self, name: &str, outputs: &mut Vec<PathBuf>) -> Result<BufWriter<File>, CliError> {
        fs::create_dir_all(&self.out)?;
        let path = self.out.join(name);
        let f = File::create(&path)?;
        outputs.push(path);
        Ok(BufWriter::new(f))
    }
}

fn write_lines<T: Serialize>(mut w: impl Write, items: &[T]) -> Result<(), CliError> {
    for it in items {
        let line = serde_json::to_string(it).map_err(|e| CliError::runtime(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

fn load_series(cfg: &RunConfig) -> Result<GraphSeries, CliError> {
    cfg.graph.weights.validate()?;
    let edges = read_edges_file(required(&cfg.data.edges, "edges")?)?;
    let cpc = cfg.data.cpc.as_deref().map(read_cpc_file).transpose()?;
    Ok(GraphSeries::from_records(
        &edges,
        cpc.as_deref(),
        &cfg.graph.weights,
    )?)
}

fn load_events(cfg: &RunConfig) -> Result<Vec<Event>, CliError> {
    Ok(read_events_file(required(&cfg.data.events, "events")?)?)
}

fn load_returns(cfg: &RunConfig) -> Result<ReturnPanel, CliError> {
    Ok(read_returns_file(required(&cfg.data.returns, "returns")?)?)
}

fn load_residuals(cfg: &RunConfig, returns: &ReturnPanel) -> Result<ResidualPanel, CliError> {
    let factors = read_factors_file(required(&cfg.data.factors, "factors")?)?;
    if cfg.pricing.model != PricingModel::Capm && !factors.has_ff5() {
        return Err(CliError::data(format!(
            "pricing model {} needs smb/hml/rmw/cma factor columns",
            cfg.pricing.model.as_str()
        )));
    }
    let window = cfg.pricing.window();
    if window.window == 0 || window.min_obs > window.window {
        return Err(CliError::usage(
            "pricing window must be positive and at least min_obs",
        ));
    }
    Ok(residual_panel(
        returns,
        &factors,
        cfg.pricing.model,
        &BetaSource::Rolling(window),
    ))
}

fn load_truth(cfg: &RunConfig) -> Result<BTreeMap<String, ShockVector>, CliError> {
    let path = required(&cfg.data.truth, "truth")?;
    let truth = read_truth(BufReader::new(File::open(path)?))?;
    Ok(truth
        .into_iter()
        .map(|(id, m)| (id, ShockVector::from_map(m)))
        .collect())
}

pub fn kg_build(ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let series = load_series(&ctx.cfg)?;
    Ok(export_snapshots(&ctx.out.join("snapshots"), series.iter())?)
}

pub fn kg_stats(ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let series = load_series(&ctx.cfg)?;
    let stats = snapshot_stats(&series)?;
    let mut outputs = Vec::new();
    match ctx.format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(ctx.create("stats.csv", &mut outputs)?);
            w.serialize(&stats)?;
            w.flush()?;
        }
        Format::Jsonl => write_lines(ctx.create("stats.jsonl", &mut outputs)?, &[stats])?,
    }
    Ok(outputs)
}

pub fn kg_ablate(ctx: &Context, relation: &str) -> Result<Vec<PathBuf>, CliError> {
    let kind: RelationKind = relation
        .parse()
        .map_err(|_| CliError::usage(format!("unknown relation `{relation}`")))?;
    let series = ablation_series(&load_series(&ctx.cfg)?, kind);
    Ok(export_snapshots(
        &ctx.out.join(format!("snapshots_without_{kind}")),
        series.iter(),
    )?)
}

pub fn instr_gen(ctx: &mut Context) -> Result<Vec<PathBuf>, CliError> {
    if let Some(s) = ctx.cfg.seed {
        ctx.cfg.instr.seed = s;
    }
    let series = load_series(&ctx.cfg)?;
    let mut pairs = Vec::new();
    for s in series.iter() {
        pairs.extend(instruction::generate(s, &ctx.cfg.instr)?);
    }
    log::info!(
        "{} instruction pairs from {} snapshots",
        pairs.len(),
        series.len()
    );
    let mut outputs = Vec::new();
    let mut w = ctx.create("instructions.jsonl", &mut outputs)?;
    write_jsonl(&mut w, &pairs)?;
    w.flush()?;
    Ok(outputs)
}

pub fn synth_gen(ctx: &mut Context) -> Result<Vec<PathBuf>, CliError> {
    let seed = ctx.cfg.require_seed("synth gen")?;
    ctx.cfg.synth.seed = seed;
    let market = synth::generate(&ctx.cfg.synth)?;
    let mut outputs = synth::io::write_dataset(&ctx.out, &market)?;

    // A run document for the generated data: paths relative to itself and
    // the unit layer weights the generator used.
    let name = |n: &str| Some(PathBuf::from(n));
    let run = RunConfig {
        seed: Some(seed),
        output_dir: None,
        data: DataPaths {
            edges: name("edges.csv"),
            cpc: None,
            returns: name("returns.csv"),
            factors: name("factors.csv"),
            events: name("events.jsonl"),
            truth: name("truth.csv"),
        },
        graph: crate::config::GraphConfig {
            weights: LayerWeights::uniform(1.0),
        },
        ..ctx.cfg.clone()
    };
    let mut w = ctx.create("run.toml", &mut outputs)?;
    w.write_all(run.to_toml().as_bytes())?;
    w.flush()?;
    let (per_event, per_firm) = market.truth.sparsity();
    log::info!(
        "{} events over {} firms; largest event support {per_event}, largest firm support {per_firm}",
        market.events.len(),
        market.truth.betas.len()
    );
    Ok(outputs)
}

#[derive(Serialize)]
struct AlignSummary {
    scored_on: &'static str,
    months: Vec<Month>,
    init: RewardReport,
    aligned: RewardReport,
    oracle: Option<RewardReport>,
    params: DiffusionParams,
}

pub fn align_run(
    ctx: &mut Context,
    holdout: Option<usize>,
    max_updates: Option<usize>,
) -> Result<Vec<PathBuf>, CliError> {
    let seed = ctx.cfg.require_seed("align run")?;
    let cfg = &mut ctx.cfg;
    cfg.align.seed = seed;
    cfg.align.reward = cfg.reward;
    if let Some(h) = holdout {
        cfg.align.holdout_months = h;
    }
    if let Some(m) = max_updates {
        cfg.align.max_updates = m;
    }
    let series = load_series(cfg)?;
    let events = load_events(cfg)?;
    let returns = load_returns(cfg)?;
    let residuals = load_residuals(cfg, &returns)?;
    let env = AlignEnv {
        series: &series,
        events: &events,
        residuals: &residuals,
    };
    let trace = align(&env, &cfg.align)?;

    let (scored_on, months) = if trace.holdout_months.is_empty() {
        ("train", trace.train_months.clone())
    } else {
        ("holdout", trace.holdout_months.clone())
    };
    let rc = &cfg.align.reward;
    let oracle = match &cfg.data.truth {
        Some(_) => Some(evaluate_shocks(&env, &months, &load_truth(cfg)?, rc)?),
        None => None,
    };
    let summary = AlignSummary {
        scored_on,
        init: evaluate_params(&env, &months, &cfg.align.init, cfg.align.seed_score, rc)?,
        aligned: evaluate_params(&env, &months, &trace.final_params, cfg.align.seed_score, rc)?,
        oracle,
        months,
        params: trace.final_params,
    };

    let ctx = &*ctx;
    let mut outputs = Vec::new();
    let w = ctx.create("trace.csv", &mut outputs)?;
    write_trace(w, &trace)?;
    let mut w = ctx.create("theta.toml", &mut outputs)?;
    let theta = toml::to_string_pretty(&trace.final_params)
        .map_err(|e| CliError::runtime(e.to_string()))?;
    w.write_all(theta.as_bytes())?;
    w.flush()?;
    let mut w = ctx.create("summary.json", &mut outputs)?;
    serde_json::to_writer_pretty(&mut w, &summary).map_err(|e| CliError::runtime(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(outputs)
}

pub fn apply_propagator_args(
    ctx: &mut Context,
    propagator: Option<String>,
    params: Option<&Path>,
) -> Result<(), CliError> {
    if let Some(p) = propagator {
        ctx.cfg.eval.propagator = p;
    }
    if let Some(path) = params {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
        ctx.cfg.eval.params = toml::from_str(&text)
            .map_err(|e| CliError::usage(format!("bad parameter file: {e}")))?;
    }
    ctx.cfg.eval.params.validate()?;
    Ok(())
}

enum Source {
    Diffusion,
    Null,
    Oracle,
    External(String),
}

impl Source {
    fn parse(name: &str) -> Result<Self, CliError> {
        match name.trim() {
            "diffusion" => Ok(Source::Diffusion),
            "null" => Ok(Source::Null),
            "oracle" => Ok(Source::Oracle),
            s => match s.strip_prefix("external:") {
                Some(cmd) if !cmd.trim().is_empty() => Ok(Source::External(cmd.trim().to_string())),
                _ => Err(CliError::usage(format!(
                    "unknown propagator `{s}`; expected diffusion, null, oracle or external:<command>"
                ))),
            },
        }
    }

    fn label(&self) -> &'static str {
        match self {
            Source::Diffusion => "diffusion",
            Source::Null => "null",
            Source::Oracle => "oracle",
            Source::External(_) => "external",
        }
    }
}

/// Shocks of the configured propagator over `series`.
fn shock_log(
    cfg: &RunConfig,
    src: &Source,
    series: &GraphSeries,
    events: &[Event],
) -> Result<ShockLog, CliError> {
    let e = &cfg.eval;
    let mut prop: Box<dyn Propagator> = match src {
        Source::Oracle => return oracle_log(cfg, events),
        Source::Diffusion => Box::new(DiffusionPropagator {
            params: e.params,
            seed_score: e.seed_score,
        }),
        Source::Null => Box::new(NullPropagator::new(e.params, cfg.seed.unwrap_or(0))),
        Source::External(cmd) => {
            if !(e.timeout_secs.is_finite() && e.timeout_secs > 0.0) {
                return Err(CliError::usage("eval.timeout_secs must be positive"));
            }
            Box::new(
                ExternalClient::spawn(cmd)?
                    .with_timeout(Duration::from_secs_f64(e.timeout_secs))
                    .with_edge_budget(e.edge_budget),
            )
        }
    };
    let log = collect_shocks(prop.as_mut(), series, events)?;
    if log.skipped > 0 {
        log::warn!(
            "{} events skipped: no snapshot for their month",
            log.skipped
        );
    }
    Ok(log)
}

/// True impacts as if predicted, keyed like a propagator's output.
fn oracle_log(cfg: &RunConfig, events: &[Event]) -> Result<ShockLog, CliError> {
    let truth = load_truth(cfg)?;
    let mut order: Vec<&Event> = events.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    let mut log = ShockLog::default();
    for e in order {
        let z = truth.get(&e.id).cloned().unwrap_or_default();
        log.by_date.entry(e.date()).or_default().accumulate(&z);
        log.by_event.insert(e.id.clone(), z);
        log.outcomes.push((e.id.clone(), None));
    }
    Ok(log)
}

fn eval_one(
    cfg: &RunConfig,
    model: String,
    log: &ShockLog,
    residuals: &ResidualPanel,
) -> Result<EvalReport, CliError> {
    let controls = if cfg.eval.controls {
        ControlSource::Ff5Loadings(residuals)
    } else {
        ControlSource::None
    };
    let (sections, skipped) = cross_sections(&log.by_date, residuals, controls);
    let ec = EvalConfig {
        model,
        method: cfg.pricing.model.as_str().to_string(),
    };
    Ok(evaluate(&ec, &sections, skipped, log)?)
}

pub fn eval_run(ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let cfg = &ctx.cfg;
    let src = Source::parse(&cfg.eval.propagator)?;
    if cfg.eval.controls && cfg.pricing.model != PricingModel::Ff5 {
        return Err(CliError::usage(
            "eval.controls needs pricing.model = \"ff5\"",
        ));
    }
    if cfg.eval.ablate && matches!(src, Source::Oracle) {
        return Err(CliError::usage(
            "ablation does not apply to the oracle propagator",
        ));
    }
    let series = load_series(cfg)?;
    let events = load_events(cfg)?;
    let returns = load_returns(cfg)?;
    let residuals = load_residuals(cfg, &returns)?;

    let log = shock_log(cfg, &src, &series, &events)?;
    let mut reports = vec![eval_one(cfg, src.label().to_string(), &log, &residuals)?];
    if cfg.eval.ablate {
        for kind in RelationKind::ALL {
            let ablated = ablation_series(&series, kind);
            let log = shock_log(cfg, &src, &ablated, &events)?;
            reports.push(eval_one(
                cfg,
                format!("{}_without_{kind}", src.label()),
                &log,
                &residuals,
            )?);
        }
    }
    for r in &reports {
        log::info!(
            "{} {}: coef {:.4} p {:.4} over {} rows",
            r.model,
            r.method,
            r.regression.gamma1,
            r.regression.p_gamma1,
            r.regression.n
        );
    }

    let mut outputs = Vec::new();
    match ctx.format {
        Format::Csv => {
            let mut w = ctx.create("regression.csv", &mut outputs)?;
            write_regression_csv(&mut w, &reports)?;
            w.flush()?;
            let mut w = ctx.create("anova.csv", &mut outputs)?;
            write_anova_csv(&mut w, &reports)?;
            w.flush()?;
            let mut w = ctx.create("refusals.csv", &mut outputs)?;
            write_refusals_csv(&mut w, &reports)?;
            w.flush()?;
        }
        Format::Jsonl => write_lines(ctx.create("eval.jsonl", &mut outputs)?, &reports)?,
    }
    Ok(outputs)
}

fn write_refusals_csv(mut w: impl Write, reports: &[EvalReport]) -> std::io::Result<()> {
    writeln!(w, "model,method,reason,count,rate")?;
    for r in reports {
        let s = &r.refusals;
        let rate = |c: usize| {
            if s.total == 0 {
                0.0
            } else {
                c as f64 / s.total as f64
            }
        };
        for reason in RefusalReason::ALL {
            let c = s.by_reason.get(&reason).copied().unwrap_or(0);
            writeln!(w, "{},{},{},{},{}", r.model, r.method, reason, c, rate(c))?;
        }
        writeln!(w, "{},{},all,{},{}", r.model, r.method, s.refusals, s.rate)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct BacktestLine<'a> {
    strategy: &'a str,
    daily_return: f64,
    sharpe: f64,
    mdd: f64,
    win_rate: f64,
    sharpe_annualized: f64,
    days: usize,
}

pub fn backtest_run(ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let cfg = &ctx.cfg;
    let p = &cfg.portfolio;
    if !(p.decile > 0.0 && p.decile <= 0.5) {
        return Err(CliError::usage("portfolio.decile must be in (0, 0.5]"));
    }
    if p.lookback < 2 {
        return Err(CliError::usage("portfolio.lookback must be at least 2"));
    }
    if !(p.risk_aversion > 0.0 && p.risk_aversion.is_finite()) {
        return Err(CliError::usage("portfolio.risk_aversion must be positive"));
    }
    let src = Source::parse(&cfg.eval.propagator)?;
    let series = load_series(cfg)?;
    let events = load_events(cfg)?;
    let returns = load_returns(cfg)?;
    let log = shock_log(cfg, &src, &series, &events)?;

    // Every strategy rebalances on the same dates: prediction dates with a
    // full trailing window for the benchmark estimators.
    let panel_dates = returns.dates();
    let mut ripple = ripple_schedule(&log.by_date, &returns, p.decile);
    ripple.retain(|t, _| panel_dates.partition_point(|d| d <= t) >= p.lookback);
    let dates: Vec<_> = ripple.keys().copied().collect();

    let mut reports: Vec<BacktestReport> = vec![backtest(
        Strategy::Ripple.as_str(),
        &ripple,
        &returns,
        &p.backtest,
    )?];
    for s in Strategy::BENCHMARKS {
        let sched = benchmark_schedule(s, &returns, &dates, p.lookback, p.risk_aversion)?;
        reports.push(backtest(s.as_str(), &sched, &returns, &p.backtest)?);
    }
    for r in &reports {
        log::info!(
            "{}: sharpe {:.4} over {} days",
            r.strategy,
            r.sharpe,
            r.returns.len()
        );
    }

    let mut outputs = Vec::new();
    match ctx.format {
        Format::Csv => {
            let mut w = ctx.create("report.csv", &mut outputs)?;
            write_report_csv(&mut w, &reports)?;
            w.flush()?;
            let mut w = ctx.create("equity.csv", &mut outputs)?;
            write_equity_csv(&mut w, &reports)?;
            w.flush()?;
        }
        Format::Jsonl => {
            let lines: Vec<BacktestLine> = reports
                .iter()
                .map(|r| BacktestLine {
                    strategy: &r.strategy,
                    daily_return: r.mean,
                    sharpe: r.sharpe,
                    mdd: r.mdd,
                    win_rate: r.win_rate,
                    sharpe_annualized: r.sharpe_annualized,
                    days: r.returns.len(),
                })
                .collect();
            write_lines(ctx.create("report.jsonl", &mut outputs)?, &lines)?;
        }
    }
    Ok(outputs)
}

pub fn mock_client(
    mode: MockMode,
    decay: f64,
    chaos_rate: f64,
    delay_ms: u64,
    seed: u64,
    golden: Option<&Path>,
) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&chaos_rate) {
        return Err(CliError::usage("--chaos-rate must be in [0, 1]"));
    }
    if !decay.is_finite() {
        return Err(CliError::usage("--decay must be finite"));
    }
    let golden = match golden {
        Some(p) => mock::load_golden(BufReader::new(File::open(p)?))?,
        None if mode == MockMode::GoldenEcho => {
            return Err(CliError::usage("golden-echo mode needs --golden"));
        }
        None => BTreeMap::new(),
    };
    let cfg = MockConfig {
        mode,
        decay,
        chaos_rate,
        delay: Duration::from_millis(delay_ms),
        seed,
        golden,
    };
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    let served = mock::serve(stdin.lock(), stdout.lock(), &cfg)?;
    log::info!("served {served} requests");
    Ok(())
}
