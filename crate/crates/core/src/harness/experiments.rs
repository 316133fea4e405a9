//! Experiment runners. Each one validates its configuration, writes its
//! outputs through a [`RunOutput`] and returns the in-memory results.
//!
//! Random streams are keyed by `(config.seed, stream)` with fixed stream
//! numbers per stage, so a rerun with the same configuration reproduces every
//! report byte for byte.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::estimation::{
    mle_fit, read_price_csv, restrict_box, rolling_estimate, write_wide_csv, EstimationConfig, FrozenParams, PriceSeries,
    ThetaHat,
};
use crate::hedge::{
    evaluate, train, Checkpoint, ErrorMetric, FeaturePolicy, HedgeModel, HedgeReport, Summary, TrainConfig, TrainRequest,
};
use crate::payoffs::PayoffSpec;
use crate::pde::{price_bounds, solve_pde, Direction, PriceBounds};
use crate::process::{
    sample_paths, Param, ParameterBox, ParameterPoint, PathBatch, RngSpec, SampleRequest, SamplingMode, TimeGrid,
};

use super::config::{ExperimentConfig, ExperimentKind};
use super::fixture;
use super::manifest::{RunManifest, RunOutput};

// Stream numbers of the stages.
const EVAL_STREAM: u64 = 0;
const TRAIN_STREAM: u64 = 1;
const TABLE_ONE_STREAM: u64 = 100;
const FIG_FIVE_STREAM: u64 = 200;
const TABLE_TWO_STREAM: u64 = 1_000;

/// Validates `config` and runs its experiment into `out_dir`.
pub fn run(config: &ExperimentConfig, out_dir: &Path) -> Result<RunManifest, Error> {
    check(config)?;
    let mut out = RunOutput::create(out_dir, config)?;
    out.write_json("config.json", config)?;
    match config.kind {
        ExperimentKind::Simulate => {
            run_simulate(config, &mut out)?;
        }
        ExperimentKind::TrainHedge => {
            run_train(config, &mut out)?;
        }
        ExperimentKind::EvaluateHedge => {
            run_evaluate(config, &mut out)?;
        }
        ExperimentKind::PriceBounds => {
            run_price_bounds(config, &mut out)?;
        }
        ExperimentKind::Estimate => {
            run_estimate(config, &mut out)?;
        }
        ExperimentKind::TableOne => {
            run_table_one(config, &mut out)?;
        }
        ExperimentKind::TableTwo => {
            run_table_two(config, &mut out)?;
        }
        ExperimentKind::FigFive => {
            run_fig_five(config, &mut out)?;
        }
    }
    out.finish()
}

/// Field-level validation folded into one configuration error.
pub fn check(config: &ExperimentConfig) -> Result<(), Error> {
    let errs = config.validate();
    if errs.is_empty() {
        return Ok(());
    }
    let msg: Vec<String> = errs.iter().map(|e| e.to_string()).collect();
    Err(Error::Config(msg.join("; ")))
}

fn required_payoff(config: &ExperimentConfig) -> Result<PayoffSpec, Error> {
    config
        .payoff
        .ok_or_else(|| Error::Config("payoff: required for this experiment".into()))
}

fn robust_batch(
    b: &ParameterBox,
    x0: f64,
    grid: &TimeGrid,
    count: usize,
    rng: RngSpec,
    mode: SamplingMode,
) -> Result<PathBatch, Error> {
    Ok(sample_paths(&SampleRequest {
        parameter_box: b,
        x0,
        grid,
        count,
        rng,
        mode,
        record_draws: false,
    })?)
}

fn train_one(
    b: &ParameterBox,
    x0: f64,
    grid: &TimeGrid,
    payoff: &PayoffSpec,
    config: &TrainConfig,
    rng: RngSpec,
    mode: SamplingMode,
) -> Result<HedgeModel, Error> {
    let outcome = train(&TrainRequest {
        parameter_box: b,
        x0,
        grid,
        payoff,
        config,
        rng,
        mode,
    })?;
    if let Some(last) = outcome.losses.last() {
        tracing::info!(payoff = payoff_label(payoff), price = outcome.model.cash, loss = last, "trained");
    }
    Ok(outcome.model)
}

pub fn payoff_label(spec: &PayoffSpec) -> &'static str {
    match spec {
        PayoffSpec::Call { .. } => "call",
        PayoffSpec::Put { .. } => "put",
        PayoffSpec::Butterfly { .. } => "butterfly",
        PayoffSpec::LookbackCall { .. } => "lookback",
        PayoffSpec::AsianPut { .. } => "asian_put",
    }
}

fn csv_bytes<F>(header: &[&str], fill: F) -> Result<Vec<u8>, Error>
where
    F: FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> Result<(), csv::Error>,
{
    let mut buf = Vec::new();
    {
        let mut wr = csv::Writer::from_writer(&mut buf);
        wr.write_record(header)?;
        fill(&mut wr)?;
        wr.flush().map_err(|e| Error::io("<buffer>", e))?;
    }
    Ok(buf)
}

// ---------------------------------------------------------------- simulate

pub fn run_simulate(config: &ExperimentConfig, out: &mut RunOutput) -> Result<PathBatch, Error> {
    let m = &config.model;
    let grid = m.grid()?;
    let rng = RngSpec::new(config.seed, EVAL_STREAM);
    out.stage("simulate");
    out.record_seed("simulate", rng);
    let batch = sample_paths(&SampleRequest {
        parameter_box: &m.parameter_box,
        x0: m.x0,
        grid: &grid,
        count: config.simulate.paths,
        rng,
        mode: config.simulate.mode,
        record_draws: config.simulate.record_draws,
    })?;
    out.write_with("paths.csv", |buf| Ok(batch.write_csv(buf)?))?;
    out.write_with("paths.bin", |buf| batch.write_binary(buf).map_err(|e| Error::io("paths.bin", e)))?;
    if let Some(draws) = batch.draws() {
        let steps = grid.steps();
        let bytes = csv_bytes(&["path_id", "step", "dw", "b0", "b1", "a0", "a1", "gamma"], |wr| {
            for (k, d) in draws.iter().enumerate() {
                let t = d.theta;
                wr.write_record([
                    (k / steps).to_string(),
                    (k % steps).to_string(),
                    d.dw.to_string(),
                    t.b0.to_string(),
                    t.b1.to_string(),
                    t.a0.to_string(),
                    t.a1.to_string(),
                    t.gamma.to_string(),
                ])?;
            }
            Ok(())
        })?;
        out.write_bytes("draws.csv", &bytes)?;
    }
    Ok(batch)
}

// ------------------------------------------------------------- train/eval

pub fn run_train(config: &ExperimentConfig, out: &mut RunOutput) -> Result<Checkpoint, Error> {
    let m = &config.model;
    let grid = m.grid()?;
    let payoff = required_payoff(config)?;
    let rng = RngSpec::new(config.seed, TRAIN_STREAM);
    out.stage("train");
    out.record_seed("train", rng);
    let outcome = train(&TrainRequest {
        parameter_box: &m.parameter_box,
        x0: m.x0,
        grid: &grid,
        payoff: &payoff,
        config: &config.hedge,
        rng,
        mode: config.mode,
    })?;
    let bytes = csv_bytes(&["iteration", "loss"], |wr| {
        for (i, l) in outcome.losses.iter().enumerate() {
            wr.write_record([i.to_string(), l.to_string()])?;
        }
        Ok(())
    })?;
    out.write_bytes("losses.csv", &bytes)?;
    let checkpoint = Checkpoint::new(outcome.model, config.hedge.clone(), rng);
    out.write_json("checkpoint.json", &checkpoint)?;
    Ok(checkpoint)
}

pub fn run_evaluate(config: &ExperimentConfig, out: &mut RunOutput) -> Result<HedgeReport, Error> {
    let m = &config.model;
    let grid = m.grid()?;
    let payoff = required_payoff(config)?;
    let path = config
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::Config("checkpoint: required for this experiment".into()))?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let checkpoint = Checkpoint::from_json(&text)?;
    let rng = RngSpec::new(config.seed, EVAL_STREAM);
    out.stage("evaluate");
    out.record_seed("evaluate", rng);
    let batch = robust_batch(&m.parameter_box, m.x0, &grid, config.evaluation.paths, rng, config.mode)?;
    let report = evaluate(&checkpoint.model, &batch, &payoff, &config.evaluation.options)?;
    out.write_with("errors.csv", |buf| Ok(report.write_csv(buf)?))?;
    out.write_json("summary.json", &ReportSummary::from(&report))?;
    Ok(report)
}

/// A hedge report without the per-path errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub metric: ErrorMetric,
    pub price: f64,
    pub paths: usize,
    pub signed: Summary,
    pub absolute: Summary,
}

impl From<&HedgeReport> for ReportSummary {
    fn from(r: &HedgeReport) -> Self {
        Self {
            metric: r.metric,
            price: r.price,
            paths: r.errors.len(),
            signed: r.signed,
            absolute: r.absolute,
        }
    }
}

// ------------------------------------------------------------ price bounds

pub fn run_price_bounds(config: &ExperimentConfig, out: &mut RunOutput) -> Result<PriceBounds, Error> {
    let m = &config.model;
    let payoff = required_payoff(config)?;
    out.stage("pde");
    let bounds = price_bounds(&m.parameter_box, &payoff, m.x0, m.maturity, &config.pde)?;
    for (dir, name) in [(Direction::Upper, "upper_surface.csv"), (Direction::Lower, "lower_surface.csv")] {
        let sol = solve_pde(&m.parameter_box, &payoff, m.x0, m.maturity, &config.pde, dir)?;
        out.write_with(name, |buf| Ok(sol.write_csv(buf)?))?;
    }
    out.write_json("bounds.json", &bounds)?;
    Ok(bounds)
}

// ---------------------------------------------------------------- estimate

fn load_series(path: &Path, dt: f64) -> Result<Vec<PriceSeries>, Error> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let ticker = path.file_stem().and_then(|s| s.to_str()).unwrap_or("series");
    Ok(read_price_csv(BufReader::new(file), ticker, dt)?)
}

fn estimates_csv(hats: &[ThetaHat]) -> Result<Vec<u8>, Error> {
    csv_bytes(
        &["ticker", "end_index", "end_date", "b0", "b1", "a0", "a1", "gamma", "log_likelihood", "degenerate"],
        |wr| {
            for h in hats {
                for e in &h.estimates {
                    let t = e.theta;
                    wr.write_record([
                        h.ticker.clone(),
                        e.end_index.to_string(),
                        e.end_date.to_string(),
                        t.b0.to_string(),
                        t.b1.to_string(),
                        t.a0.to_string(),
                        t.a1.to_string(),
                        t.gamma.to_string(),
                        e.log_likelihood.to_string(),
                        e.degenerate.to_string(),
                    ])?;
                }
            }
            Ok(())
        },
    )
}

pub fn run_estimate(config: &ExperimentConfig, out: &mut RunOutput) -> Result<Vec<ThetaHat>, Error> {
    let path = config
        .data
        .as_ref()
        .ok_or_else(|| Error::Config("data: required for this experiment".into()))?;
    let series = load_series(path, config.estimation.dt)?;
    out.stage("estimate");
    let est = EstimationConfig {
        seed: config.seed,
        ..config.estimation.clone()
    };
    let hats = series
        .iter()
        .map(|s| rolling_estimate(s, &est))
        .collect::<Result<Vec<_>, _>>()?;
    out.write_json("theta_hat.json", &hats)?;
    let bytes = estimates_csv(&hats)?;
    out.write_bytes("estimates.csv", &bytes)?;
    Ok(hats)
}

// --------------------------------------------------------------- table one

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Trained on paths of a single parameter point.
    Fixed,
    /// Trained on robust paths with Markov features.
    Robust,
    /// Trained on robust paths with the running maximum as an extra feature.
    RobustRunningMax,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Fixed => "fixed",
            Strategy::Robust => "robust",
            Strategy::RobustRunningMax => "robust_running_max",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableOneRow {
    pub payoff: PayoffSpec,
    pub strategy: Strategy,
    pub training_stream: u64,
    pub summary: ReportSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableOneReport {
    pub fixed_theta: ParameterPoint,
    pub evaluation_paths: usize,
    pub rows: Vec<TableOneRow>,
}

impl TableOneReport {
    /// Mean relative absolute error of a row.
    pub fn mean_abs_error(&self, payoff: &str, strategy: Strategy) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| payoff_label(&r.payoff) == payoff && r.strategy == strategy)
            .map(|r| r.summary.absolute.mean)
    }

    pub fn to_csv(&self) -> Result<Vec<u8>, Error> {
        csv_bytes(
            &["payoff", "strategy", "price", "metric", "mean_abs_error", "std_abs_error", "mean_error", "std_error", "min_error", "max_error"],
            |wr| {
                for r in &self.rows {
                    let s = &r.summary;
                    wr.write_record([
                        payoff_label(&r.payoff).to_string(),
                        r.strategy.name().to_string(),
                        s.price.to_string(),
                        format!("{:?}", s.metric).to_lowercase(),
                        s.absolute.mean.to_string(),
                        s.absolute.std.to_string(),
                        s.signed.mean.to_string(),
                        s.signed.std.to_string(),
                        s.signed.min.to_string(),
                        s.signed.max.to_string(),
                    ])?;
                }
                Ok(())
            },
        )
    }
}

/// Fixed and robust strategies for the call, butterfly and lookback, plus the
/// running-maximum lookback, all evaluated on one common robust batch.
pub fn run_table_one(config: &ExperimentConfig, out: &mut RunOutput) -> Result<TableOneReport, Error> {
    let m = &config.model;
    let grid = m.grid()?;
    let t1 = &config.table_one;
    let fixed_theta = t1.fixed_theta.unwrap_or_else(|| m.parameter_box.midpoint());

    let eval_rng = RngSpec::new(config.seed, EVAL_STREAM);
    out.stage("table_one.sample");
    out.record_seed("table_one.evaluation", eval_rng);
    let eval = robust_batch(&m.parameter_box, m.x0, &grid, config.evaluation.paths, eval_rng, SamplingMode::Robust)?;

    let mut jobs = Vec::new();
    for (i, spec) in [t1.call, t1.butterfly, t1.lookback].into_iter().enumerate() {
        jobs.push((spec, Strategy::Fixed, TABLE_ONE_STREAM + 10 * i as u64));
        jobs.push((spec, Strategy::Robust, TABLE_ONE_STREAM + 10 * i as u64 + 1));
        if matches!(spec, PayoffSpec::LookbackCall { .. }) {
            jobs.push((spec, Strategy::RobustRunningMax, TABLE_ONE_STREAM + 10 * i as u64 + 2));
        }
    }

    let mut rows = Vec::new();
    for (spec, strategy, stream) in jobs {
        let label = format!("{}_{}", payoff_label(&spec), strategy.name());
        out.stage(format!("table_one.{label}"));
        let rng = RngSpec::new(config.seed, stream);
        out.record_seed(format!("table_one.{label}"), rng);
        let (mode, hedge) = match strategy {
            Strategy::Fixed => (SamplingMode::Fixed { theta: fixed_theta }, config.hedge.clone()),
            Strategy::Robust => (SamplingMode::Robust, config.hedge.clone()),
            Strategy::RobustRunningMax => (
                SamplingMode::Robust,
                config.hedge.clone().with_policy(FeaturePolicy::RunningMax),
            ),
        };
        let model = train_one(&m.parameter_box, m.x0, &grid, &spec, &hedge, rng, mode)?;
        let report = evaluate(&model, &eval, &spec, &config.evaluation.options)?;
        out.write_with(&format!("errors/{label}.csv"), |buf| Ok(report.write_csv(buf)?))?;
        rows.push(TableOneRow {
            payoff: spec,
            strategy,
            training_stream: stream,
            summary: ReportSummary::from(&report),
        });
    }
    let table = TableOneReport {
        fixed_theta,
        evaluation_paths: eval.len(),
        rows,
    };
    out.write_json("table_one.json", &table)?;
    let bytes = table.to_csv()?;
    out.write_bytes("table_one.csv", &bytes)?;
    Ok(table)
}

// ---------------------------------------------------------------- fig five

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigFivePoint {
    pub payoff: PayoffSpec,
    pub x: f64,
    pub lower: f64,
    pub hedge_price: f64,
    pub upper: f64,
}

impl FigFivePoint {
    /// Whether the learned price lies within the bounds up to `tol`.
    pub fn bracketed(&self, tol: f64) -> bool {
        self.lower - tol <= self.hedge_price && self.hedge_price <= self.upper + tol
    }
}

/// PDE price bounds against the robust hedge price on a range of initial
/// values.
pub fn run_fig_five(config: &ExperimentConfig, out: &mut RunOutput) -> Result<Vec<FigFivePoint>, Error> {
    let m = &config.model;
    let grid = m.grid()?;
    let mut points = Vec::new();
    for (i, spec) in config.fig_five.payoffs.iter().enumerate() {
        for (j, &x) in config.fig_five.initial_values.iter().enumerate() {
            let label = format!("{}_x{}", payoff_label(spec), x);
            out.stage(format!("fig_five.{label}"));
            let bounds = price_bounds(&m.parameter_box, spec, x, m.maturity, &config.pde)?;
            let rng = RngSpec::new(config.seed, FIG_FIVE_STREAM + 100 * i as u64 + j as u64);
            out.record_seed(format!("fig_five.{label}"), rng);
            let model = train_one(&m.parameter_box, x, &grid, spec, &config.hedge, rng, SamplingMode::Robust)?;
            points.push(FigFivePoint {
                payoff: *spec,
                x,
                lower: bounds.lower,
                hedge_price: model.cash,
                upper: bounds.upper,
            });
        }
    }
    let bytes = csv_bytes(&["payoff", "x", "lower", "hedge_price", "upper"], |wr| {
        for p in &points {
            wr.write_record([
                payoff_label(&p.payoff).to_string(),
                p.x.to_string(),
                p.lower.to_string(),
                p.hedge_price.to_string(),
                p.upper.to_string(),
            ])?;
        }
        Ok(())
    })?;
    out.write_bytes("fig_five.csv", &bytes)?;
    out.write_json("fig_five.json", &points)?;
    Ok(points)
}

// --------------------------------------------------------------- table two

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelOutcome {
    pub model: String,
    pub price: f64,
    pub metric: ErrorMetric,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickerOutcome {
    pub ticker: String,
    pub x0: f64,
    pub theta_hat: ParameterBox,
    pub latest: ParameterPoint,
    pub black_scholes: Option<ParameterPoint>,
    pub models: Vec<ModelOutcome>,
}

impl TickerOutcome {
    pub fn error(&self, model: &str) -> Option<f64> {
        self.models.iter().find(|m| m.model == model).map(|m| m.error)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: String,
    pub absolute: Summary,
    pub signed: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableTwoReport {
    pub tickers: Vec<TickerOutcome>,
    pub summary: Vec<ModelSummary>,
}

impl TableTwoReport {
    pub fn summary_of(&self, model: &str) -> Option<&ModelSummary> {
        self.summary.iter().find(|s| s.model == model)
    }
}

pub fn ablation_name(p: Param) -> String {
    format!("robust_fixed_{}", p.name())
}

/// Estimates a box per ticker on all but the last `test_days` observations,
/// then hedges an at-the-money Asian put over the held-out path with the
/// fixed, robust, ablated and Black-Scholes strategies.
pub fn run_table_two(config: &ExperimentConfig, out: &mut RunOutput) -> Result<TableTwoReport, Error> {
    let t2 = &config.table_two;
    out.stage("table_two.data");
    let series = match (&t2.data, &t2.synthetic) {
        (Some(path), _) => load_series(path, config.estimation.dt)?,
        (None, Some(syn)) => {
            let s = fixture::generate(syn)?;
            let mut buf = Vec::new();
            write_wide_csv(&s, &mut buf)?;
            out.write_bytes("prices.csv", &buf)?;
            s
        }
        (None, None) => return Err(Error::Config("table_two: needs `data` or `synthetic`".into())),
    };
    let est = EstimationConfig {
        seed: config.seed,
        ..config.estimation.clone()
    };
    let n_test = t2.test_days;
    let state_space = config.model.parameter_box.state_space;

    let mut tickers = Vec::new();
    let mut hats = Vec::new();
    for (k, s) in series.iter().enumerate() {
        let n = s.len();
        if n < n_test + 2 {
            return Err(Error::Data(format!("series `{}` is shorter than the test horizon", s.ticker())));
        }
        let split = n - n_test;
        out.stage(format!("table_two.{}.estimate", s.ticker()));
        let history = s.slice(0, split)?;
        let hat = rolling_estimate(&history, &est)?;
        let test_path = s.closes()[split - 1..].to_vec();
        let x0 = test_path[0];
        let grid = TimeGrid::uniform(n_test as f64 * s.dt(), n_test)?;
        let test = PathBatch::from_paths(grid.clone(), x0, &[test_path])?;
        let payoff = PayoffSpec::AsianPut {
            strike: x0,
            observations: n_test,
        };
        let theta_box = hat.to_box(state_space);
        let latest = hat.latest().theta;

        let mut jobs: Vec<(String, ParameterBox, SamplingMode)> = vec![
            ("fixed".into(), theta_box, SamplingMode::Fixed { theta: latest }),
            ("robust".into(), theta_box, SamplingMode::Robust),
        ];
        for &p in &t2.ablations {
            let b = restrict_box(&theta_box, &[(p, latest.get(p))])?;
            jobs.push((ablation_name(p), b, SamplingMode::Robust));
        }
        let mut bs_theta = None;
        if t2.black_scholes {
            let bs_cfg = EstimationConfig {
                frozen: FrozenParams::black_scholes(),
                ..est.clone()
            };
            let window = &history.closes()[split.saturating_sub(est.window)..];
            let fit = mle_fit(window, &bs_cfg, RngSpec::new(config.seed, TABLE_TWO_STREAM - 1).child(k as u64))?;
            bs_theta = Some(fit.theta);
            jobs.push((
                "black_scholes".into(),
                ParameterBox::degenerate(fit.theta, state_space),
                SamplingMode::Fixed { theta: fit.theta },
            ));
        }

        let mut models = Vec::new();
        for (j, (name, b, mode)) in jobs.into_iter().enumerate() {
            out.stage(format!("table_two.{}.{name}", s.ticker()));
            let rng = RngSpec::new(config.seed, TABLE_TWO_STREAM + 100 * k as u64 + j as u64);
            out.record_seed(format!("table_two.{}.{name}", s.ticker()), rng);
            let model = train_one(&b, x0, &grid, &payoff, &config.hedge, rng, mode)?;
            let report = evaluate(&model, &test, &payoff, &config.evaluation.options)?;
            models.push(ModelOutcome {
                model: name,
                price: model.cash,
                metric: report.metric,
                error: report.errors[0],
            });
        }
        tickers.push(TickerOutcome {
            ticker: s.ticker().to_string(),
            x0,
            theta_hat: theta_box,
            latest,
            black_scholes: bs_theta,
            models,
        });
        hats.push(hat);
    }

    let names: Vec<String> = tickers
        .first()
        .map(|t| t.models.iter().map(|m| m.model.clone()).collect())
        .unwrap_or_default();
    let summary = names
        .into_iter()
        .map(|name| {
            let errs: Vec<f64> = tickers.iter().filter_map(|t| t.error(&name)).collect();
            let abs: Vec<f64> = errs.iter().map(|e| e.abs()).collect();
            ModelSummary {
                model: name,
                absolute: Summary::of(&abs),
                signed: Summary::of(&errs),
            }
        })
        .collect();
    let report = TableTwoReport { tickers, summary };

    out.write_json("theta_hat.json", &hats)?;
    let bytes = estimates_csv(&hats)?;
    out.write_bytes("estimates.csv", &bytes)?;
    out.write_json("table_two.json", &report)?;
    let bytes = csv_bytes(&["ticker", "model", "price", "metric", "error"], |wr| {
        for t in &report.tickers {
            for m in &t.models {
                wr.write_record([
                    t.ticker.clone(),
                    m.model.clone(),
                    m.price.to_string(),
                    format!("{:?}", m.metric).to_lowercase(),
                    m.error.to_string(),
                ])?;
            }
        }
        Ok(())
    })?;
    out.write_bytes("table_two.csv", &bytes)?;
    let bytes = csv_bytes(&["model", "mean_abs_error", "std_abs_error", "min_abs_error", "max_abs_error"], |wr| {
        for s in &report.summary {
            wr.write_record([
                s.model.clone(),
                s.absolute.mean.to_string(),
                s.absolute.std.to_string(),
                s.absolute.min.to_string(),
                s.absolute.max.to_string(),
            ])?;
        }
        Ok(())
    })?;
    out.write_bytes("table_two_summary.csv", &bytes)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::Scale;
    use crate::process::Interval;

    fn tiny(kind: ExperimentKind) -> ExperimentConfig {
        let mut c = ExperimentConfig::preset(kind, Scale::Desk, 5);
        c.hedge.hidden = vec![4];
        c.hedge.iterations = 5;
        c.hedge.batch_size = 16;
        c.evaluation.paths = 50;
        c.pde.intervals = 60;
        c
    }

    #[test]
    fn table_one_is_reproducible() {
        let c = tiny(ExperimentKind::TableOne);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = run(&c, a.path()).unwrap();
        run(&c, b.path()).unwrap();
        let names: Vec<&str> = ma.outputs.iter().map(|o| o.path.as_str()).collect();
        assert!(names.contains(&"table_one.json"));
        assert!(names.contains(&"errors/lookback_robust_running_max.csv"));
        assert_eq!(ma.outputs.iter().filter(|o| o.path.starts_with("errors/")).count(), 7);
        for o in &ma.outputs {
            let x = std::fs::read(a.path().join(&o.path)).unwrap();
            let y = std::fs::read(b.path().join(&o.path)).unwrap();
            assert_eq!(x, y, "{}", o.path);
        }
        let table: TableOneReport =
            serde_json::from_str(&std::fs::read_to_string(a.path().join("table_one.json")).unwrap()).unwrap();
        assert_eq!(table.rows.len(), 7);
        assert!(table.mean_abs_error("call", Strategy::Robust).is_some());
    }

    #[test]
    fn invalid_config_fails_before_writing() {
        let mut c = tiny(ExperimentKind::TableOne);
        c.model.steps = 0;
        let dir = tempfile::tempdir().unwrap();
        let err = run(&c, &dir.path().join("out")).unwrap_err();
        assert_eq!(err.kind(), crate::ErrorKind::Config);
        assert!(!dir.path().join("out").exists());
    }

    #[test]
    fn fig_five_rows_and_bounds() {
        let mut c = tiny(ExperimentKind::FigFive);
        c.fig_five.initial_values = vec![9.0, 11.0];
        let dir = tempfile::tempdir().unwrap();
        let mut out = RunOutput::create(dir.path(), &c).unwrap();
        let pts = run_fig_five(&c, &mut out).unwrap();
        assert_eq!(pts.len(), 4);
        assert!(pts.iter().all(|p| p.lower <= p.upper));
        let csv = std::fs::read_to_string(dir.path().join("fig_five.csv")).unwrap();
        assert_eq!(csv.lines().next().unwrap(), "payoff,x,lower,hedge_price,upper");
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn table_two_on_small_fixture() {
        let mut c = tiny(ExperimentKind::TableTwo);
        let syn = c.table_two.synthetic.as_mut().unwrap();
        syn.tickers = 2;
        syn.turbulent_days = 150;
        syn.calm_days = 150;
        c.estimation.window = 100;
        c.estimation.step = 100;
        c.estimation.starts = 2;
        c.estimation.max_evaluations = 300;
        c.table_two.ablations = vec![Param::Gamma];
        let dir = tempfile::tempdir().unwrap();
        let mut out = RunOutput::create(dir.path(), &c).unwrap();
        let r = run_table_two(&c, &mut out).unwrap();
        assert_eq!(r.tickers.len(), 2);
        let names: Vec<&str> = r.summary.iter().map(|s| s.model.as_str()).collect();
        assert_eq!(names, vec!["fixed", "robust", "robust_fixed_gamma", "black_scholes"]);
        for t in &r.tickers {
            assert!(t.theta_hat.gamma.contains(t.latest.gamma));
            let bs = t.black_scholes.unwrap();
            assert_eq!((bs.b0, bs.a0, bs.gamma), (0.0, 0.0, 1.0));
            assert!(t.models.iter().all(|m| m.error.is_finite()));
        }
        // a degenerate gamma interval collapses to the latest estimate
        let b = restrict_box(&r.tickers[0].theta_hat, &[(Param::Gamma, r.tickers[0].latest.gamma)]).unwrap();
        assert_eq!(b.gamma, Interval::point(r.tickers[0].latest.gamma));
    }

    #[test]
    fn train_then_evaluate_via_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let c = tiny(ExperimentKind::TrainHedge);
        run(&c, &dir.path().join("train")).unwrap();
        let mut e = tiny(ExperimentKind::EvaluateHedge);
        e.checkpoint = Some(dir.path().join("train/checkpoint.json"));
        let m = run(&e, &dir.path().join("eval")).unwrap();
        assert!(m.outputs.iter().any(|o| o.path == "summary.json"));
        let s: ReportSummary =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("eval/summary.json")).unwrap()).unwrap();
        assert_eq!(s.paths, 50);
    }

    #[test]
    fn simulate_and_price_bounds_write_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = tiny(ExperimentKind::Simulate);
        c.simulate.paths = 3;
        c.simulate.record_draws = true;
        let m = run(&c, dir.path()).unwrap();
        let names: Vec<&str> = m.outputs.iter().map(|o| o.path.as_str()).collect();
        assert!(names.contains(&"paths.csv") && names.contains(&"paths.bin") && names.contains(&"draws.csv"));
        let p = tiny(ExperimentKind::PriceBounds);
        let dir2 = tempfile::tempdir().unwrap();
        run(&p, dir2.path()).unwrap();
        let b: PriceBounds =
            serde_json::from_str(&std::fs::read_to_string(dir2.path().join("bounds.json")).unwrap()).unwrap();
        assert!(b.lower < b.upper);
    }
}
