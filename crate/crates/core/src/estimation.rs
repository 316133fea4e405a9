//! Maximum-likelihood estimation of the model parameters from daily closes
//! and construction of the uncertainty box from rolling-window estimates.

use std::io::Read;

use chrono::NaiveDate;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::EstimationError;
use crate::process::{Interval, Param, ParameterBox, ParameterPoint, RngSpec, StateSpace};

/// Trading-day step in years.
pub const DAILY_DT: f64 = 1.0 / 250.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    ticker: String,
    dates: Vec<NaiveDate>,
    closes: Vec<f64>,
    dt: f64,
}

impl PriceSeries {
    pub fn new(ticker: impl Into<String>, dates: Vec<NaiveDate>, closes: Vec<f64>, dt: f64) -> Result<Self, EstimationError> {
        let ticker = ticker.into();
        if dates.len() != closes.len() {
            return Err(EstimationError::InvalidSeries(format!(
                "{ticker}: {} dates but {} prices",
                dates.len(),
                closes.len()
            )));
        }
        if let Some(i) = dates.windows(2).position(|w| w[0] >= w[1]) {
            return Err(EstimationError::InvalidSeries(format!(
                "{ticker}: dates not strictly increasing at {}",
                dates[i + 1]
            )));
        }
        if let Some(p) = closes.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
            return Err(EstimationError::InvalidSeries(format!("{ticker}: non-positive price {p}")));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(EstimationError::InvalidSeries(format!("{ticker}: step {dt} must be positive")));
        }
        Ok(Self {
            ticker,
            dates,
            closes,
            dt,
        })
    }

    pub fn ticker(&self) -> &str {
        &self.ticker
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn closes(&self) -> &[f64] {
        &self.closes
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.closes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.closes.is_empty()
    }

    /// Observations `[start, end)` as a new series.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self, EstimationError> {
        if start > end || end > self.len() {
            return Err(EstimationError::InvalidSeries(format!(
                "{}: slice {start}..{end} out of range",
                self.ticker
            )));
        }
        Ok(Self {
            ticker: self.ticker.clone(),
            dates: self.dates[start..end].to_vec(),
            closes: self.closes[start..end].to_vec(),
            dt: self.dt,
        })
    }
}

fn parse_date(s: &str, line: usize) -> Result<NaiveDate, EstimationError> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
        .map_err(|e| EstimationError::Data(format!("line {line}: bad date `{s}`: {e}")))
}

fn parse_price(s: &str, line: usize) -> Result<f64, EstimationError> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| EstimationError::Data(format!("line {line}: bad price `{s}`: {e}")))
}

/// Reads either `date,close` (one series named `default_ticker`) or the wide
/// form `date,TICKER1,TICKER2,...`. Empty cells in the wide form are skipped
/// for that ticker.
pub fn read_price_csv<R: Read>(reader: R, default_ticker: &str, dt: f64) -> Result<Vec<PriceSeries>, EstimationError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| EstimationError::Data(e.to_string()))?
        .clone();
    if headers.len() < 2 || !headers[0].eq_ignore_ascii_case("date") {
        return Err(EstimationError::Data("expected header `date,close` or `date,TICKER,...`".into()));
    }
    let long = headers.len() == 2 && headers[1].eq_ignore_ascii_case("close");
    let names: Vec<String> = if long {
        vec![default_ticker.to_string()]
    } else {
        headers.iter().skip(1).map(str::to_string).collect()
    };
    let mut dates = vec![Vec::new(); names.len()];
    let mut closes = vec![Vec::new(); names.len()];
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| EstimationError::Data(e.to_string()))?;
        if rec.len() != headers.len() {
            return Err(EstimationError::Data(format!(
                "line {line}: expected {} fields, found {}",
                headers.len(),
                rec.len()
            )));
        }
        let date = parse_date(&rec[0], line)?;
        for k in 0..names.len() {
            let cell = &rec[k + 1];
            if cell.is_empty() {
                continue;
            }
            dates[k].push(date);
            closes[k].push(parse_price(cell, line)?);
        }
    }
    names
        .into_iter()
        .zip(dates.into_iter().zip(closes))
        .map(|(name, (d, c))| PriceSeries::new(name, d, c, dt))
        .collect()
}

/// Writes series sharing one date axis in the wide CSV form.
pub fn write_wide_csv<W: std::io::Write>(series: &[PriceSeries], w: W) -> Result<(), EstimationError> {
    let data = |e: csv::Error| EstimationError::Data(e.to_string());
    let first = series.first().ok_or_else(|| EstimationError::Data("no series to write".into()))?;
    if series.iter().any(|s| s.dates != first.dates) {
        return Err(EstimationError::Data("wide CSV needs a common date axis".into()));
    }
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["date".to_string()];
    header.extend(series.iter().map(|s| s.ticker.clone()));
    wr.write_record(&header).map_err(data)?;
    for (i, d) in first.dates.iter().enumerate() {
        let mut row = vec![d.format("%Y-%m-%d").to_string()];
        row.extend(series.iter().map(|s| s.closes[i].to_string()));
        wr.write_record(&row).map_err(data)?;
    }
    wr.flush().map_err(|e| EstimationError::Data(e.to_string()))?;
    Ok(())
}

/// Gaussian log-likelihood of the Euler transitions of `window` under
/// `theta`. Returns `-∞` when `a0 + a1 x^+ <= 0` at any observation.
pub fn log_likelihood(theta: &ParameterPoint, window: &[f64], dt: f64) -> f64 {
    if window.iter().any(|x| !(theta.volatility_base(*x) > 0.0)) {
        return f64::NEG_INFINITY;
    }
    let log_norm = 0.5 * (2.0 * std::f64::consts::PI * dt).ln();
    window
        .windows(2)
        .map(|w| {
            let (x, y) = (w[0], w[1]);
            let base = theta.volatility_base(x);
            let sigma = base.powf(theta.gamma);
            let z = (y - x - theta.drift(x) * dt) / sigma;
            -(theta.gamma * base.ln() + log_norm) - z * z / (2.0 * dt)
        })
        .sum()
}

/// Parameters held fixed during a fit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrozenParams {
    pub b0: Option<f64>,
    pub b1: Option<f64>,
    pub a0: Option<f64>,
    pub a1: Option<f64>,
    pub gamma: Option<f64>,
}

impl FrozenParams {
    /// `a0 = 0`, `b0 = 0`, `γ = 1`.
    pub fn black_scholes() -> Self {
        Self {
            b0: Some(0.0),
            a0: Some(0.0),
            gamma: Some(1.0),
            ..Self::default()
        }
    }

    pub fn get(&self, p: Param) -> Option<f64> {
        match p {
            Param::B0 => self.b0,
            Param::B1 => self.b1,
            Param::A0 => self.a0,
            Param::A1 => self.a1,
            Param::Gamma => self.gamma,
        }
    }

    pub fn set(&mut self, p: Param, v: Option<f64>) {
        match p {
            Param::B0 => self.b0 = v,
            Param::B1 => self.b1 = v,
            Param::A0 => self.a0 = v,
            Param::A1 => self.a1 = v,
            Param::Gamma => self.gamma = v,
        }
    }

    pub fn entries(&self) -> Vec<(Param, f64)> {
        Param::ALL.iter().filter_map(|p| self.get(*p).map(|v| (*p, v))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationConfig {
    pub window: usize,
    pub step: usize,
    pub dt: f64,
    /// Optimizer bounds.
    pub search_box: ParameterBox,
    pub frozen: FrozenParams,
    /// Number of optimizer starts: a moment-matched point, the search-box
    /// midpoint, then jittered points around the midpoint.
    pub starts: usize,
    pub max_evaluations: usize,
    /// Initial trust radius in coordinates scaled to the unit cube.
    pub initial_radius: f64,
    pub ftol_rel: f64,
    pub seed: u64,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            window: 250,
            step: 100,
            dt: DAILY_DT,
            search_box: default_search_box(),
            frozen: FrozenParams::default(),
            starts: 5,
            max_evaluations: 3000,
            initial_radius: 0.1,
            ftol_rel: 1e-12,
            seed: 0,
        }
    }
}

pub fn default_search_box() -> ParameterBox {
    let iv = |lo, hi| Interval::new(lo, hi).expect("static interval");
    ParameterBox::new(
        iv(-5.0, 5.0),
        iv(-2.0, 2.0),
        iv(1e-4, 10.0),
        iv(0.0, 10.0),
        iv(0.1, 2.0),
        StateSpace::RealLine,
    )
}

impl EstimationConfig {
    pub fn validate(&self) -> Result<(), EstimationError> {
        let bad = |m: String| Err(EstimationError::InvalidConfig(m));
        if self.window < 2 {
            return bad(format!("window {} must be at least 2", self.window));
        }
        if self.step == 0 {
            return bad("step must be at least 1".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt {} must be positive", self.dt));
        }
        if self.starts == 0 {
            return bad("need at least one optimizer start".into());
        }
        if self.max_evaluations < 10 {
            return bad("max_evaluations must be at least 10".into());
        }
        if !(self.initial_radius > 0.0 && self.initial_radius <= 1.0) {
            return bad("initial_radius must lie in (0, 1]".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleFit {
    pub theta: ParameterPoint,
    pub log_likelihood: f64,
    /// Best log-likelihood among the starting points.
    pub best_start_log_likelihood: f64,
    /// The window has no price movement; `theta` is the boundary point of
    /// the search box where the likelihood diverges.
    pub degenerate: bool,
    pub evaluations: usize,
}

/// Free parameters mapped affinely onto the unit cube.
struct Coordinates {
    free: Vec<Param>,
    lo: Vec<f64>,
    width: Vec<f64>,
    frozen: FrozenParams,
}

impl Coordinates {
    fn new(config: &EstimationConfig) -> Self {
        let free: Vec<Param> = Param::ALL.iter().copied().filter(|p| config.frozen.get(*p).is_none()).collect();
        let lo = free.iter().map(|p| config.search_box.interval(*p).lo()).collect();
        let width = free.iter().map(|p| config.search_box.interval(*p).width()).collect();
        Self {
            free,
            lo,
            width,
            frozen: config.frozen,
        }
    }

    fn point(&self, u: &[f64]) -> ParameterPoint {
        let mut theta = ParameterPoint::new(0.0, 0.0, 0.0, 0.0, 0.0);
        for (p, v) in self.frozen.entries() {
            theta.set(p, v);
        }
        for (k, p) in self.free.iter().enumerate() {
            theta.set(*p, self.lo[k] + self.width[k] * u[k].clamp(0.0, 1.0));
        }
        theta
    }

    fn unit(&self, theta: &ParameterPoint) -> Vec<f64> {
        self.free
            .iter()
            .enumerate()
            .map(|(k, p)| {
                if self.width[k] > 0.0 {
                    ((theta.get(*p) - self.lo[k]) / self.width[k]).clamp(0.0, 1.0)
                } else {
                    0.0
                }
            })
            .collect()
    }
}

fn clamp_to(iv: Interval, v: f64) -> f64 {
    v.clamp(iv.lo(), iv.hi())
}

/// Start with `γ = 1`, zero drift and the diffusion level matched to the
/// realised quadratic variation.
fn moment_start(window: &[f64], config: &EstimationConfig) -> ParameterPoint {
    let sb = &config.search_box;
    let n = (window.len() - 1) as f64;
    let qv = window.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>() / (n * config.dt);
    let level = window.iter().map(|x| x.max(0.0)).sum::<f64>() / window.len() as f64;
    let sigma = qv.sqrt();
    let a0 = clamp_to(sb.a0, 0.1 * sigma);
    let a1 = if level > 0.0 { clamp_to(sb.a1, (sigma - a0).max(0.0) / level) } else { sb.a1.lo() };
    ParameterPoint::new(clamp_to(sb.b0, 0.0), clamp_to(sb.b1, 0.0), a0, a1, clamp_to(sb.gamma, 1.0))
}

/// Boundary point for a window without movement: zero drift where the box
/// allows it and the smallest attainable volatility at the window level.
fn degenerate_point(window: &[f64], config: &EstimationConfig) -> ParameterPoint {
    let sb = &config.search_box;
    let x = window[0];
    let f = &config.frozen;
    let mut best: Option<(f64, ParameterPoint)> = None;
    for a0 in f.a0.map_or(sb.a0.endpoints().to_vec(), |v| vec![v]) {
        for a1 in f.a1.map_or(sb.a1.endpoints().to_vec(), |v| vec![v]) {
            for g in f.gamma.map_or(sb.gamma.endpoints().to_vec(), |v| vec![v]) {
                let theta = ParameterPoint::new(0.0, 0.0, a0, a1, g);
                let base = theta.volatility_base(x);
                if base <= 0.0 {
                    continue;
                }
                let s = base.powf(g);
                if best.is_none_or(|(b, _)| s < b) {
                    best = Some((s, theta));
                }
            }
        }
    }
    let mut theta = best.map_or(config.search_box.midpoint(), |(_, t)| t);
    // b0 + b1 x = 0 if reachable
    let b1 = f.b1.unwrap_or_else(|| clamp_to(sb.b1, 0.0));
    let b0 = f.b0.unwrap_or_else(|| clamp_to(sb.b0, -b1 * x));
    theta.b0 = b0;
    theta.b1 = b1;
    theta
}

const INFEASIBLE_PENALTY: f64 = 1e12;

/// Multi-start COBYLA maximisation of the log-likelihood over the search box.
/// `rng` drives the jittered starts.
pub fn mle_fit(window: &[f64], config: &EstimationConfig, rng: RngSpec) -> Result<MleFit, EstimationError> {
    config.validate()?;
    if window.len() < 2 {
        return Err(EstimationError::WindowTooShort(window.len()));
    }
    if window.iter().any(|x| !x.is_finite()) {
        return Err(EstimationError::InvalidSeries("window contains non-finite values".into()));
    }
    if window.windows(2).all(|w| w[0] == w[1]) {
        let theta = degenerate_point(window, config);
        let ll = log_likelihood(&theta, window, config.dt);
        return Ok(MleFit {
            theta,
            log_likelihood: ll,
            best_start_log_likelihood: ll,
            degenerate: true,
            evaluations: 1,
        });
    }
    let coords = Coordinates::new(config);
    let ll_at = |u: &[f64]| log_likelihood(&coords.point(u), window, config.dt);
    let transitions = (window.len() - 1) as f64;

    let mut starts = vec![coords.unit(&moment_start(window, config)), vec![0.5; coords.free.len()]];
    let mut lane = rng.lane(0);
    while starts.len() < config.starts.max(2) {
        starts.push((0..coords.free.len()).map(|_| 0.5 + lane.random_range(-0.25..0.25)).collect());
    }
    starts.truncate(config.starts);

    let mut evaluations = 0;
    let mut best_start: Option<(f64, Vec<f64>)> = None;
    let mut best: Option<(f64, Vec<f64>)> = None;
    let better = |cand: &Option<(f64, Vec<f64>)>, v: f64| cand.as_ref().is_none_or(|(b, _)| v > *b);

    if coords.free.is_empty() {
        let ll = ll_at(&[]);
        if ll == f64::NEG_INFINITY {
            return Err(EstimationError::AllStartsInfeasible);
        }
        return Ok(MleFit {
            theta: coords.point(&[]),
            log_likelihood: ll,
            best_start_log_likelihood: ll,
            degenerate: false,
            evaluations: 1,
        });
    }

    let optimise = |x0: &[f64], radius: f64, evaluations: &mut usize| -> (f64, Vec<f64>) {
        let count = std::cell::Cell::new(0usize);
        let objective = |u: &[f64], _: &mut ()| {
            count.set(count.get() + 1);
            let ll = ll_at(u);
            if ll.is_finite() {
                -ll / transitions
            } else {
                INFEASIBLE_PENALTY
            }
        };
        let bounds = vec![(0.0, 1.0); x0.len()];
        let cons: Vec<&dyn cobyla::Func<()>> = Vec::new();
        let stop = cobyla::StopTols {
            ftol_rel: config.ftol_rel,
            ..Default::default()
        };
        let x = match cobyla::minimize(
            objective,
            x0,
            &bounds,
            &cons,
            (),
            config.max_evaluations,
            cobyla::RhoBeg::All(radius),
            Some(stop),
        ) {
            Ok((_, x, _)) => x,
            // round-off limited and similar exits still carry the best iterate
            Err((_, x, _)) => x,
        };
        *evaluations += count.get();
        (ll_at(&x), x)
    };

    for s in &starts {
        let ll0 = ll_at(s);
        if ll0.is_finite() && better(&best_start, ll0) {
            best_start = Some((ll0, s.clone()));
        }
        let (ll, x) = optimise(s, config.initial_radius, &mut evaluations);
        if ll.is_finite() && better(&best, ll) {
            best = Some((ll, x));
        }
    }
    // polish from the incumbent with a smaller radius
    if let Some((_, x)) = best.clone() {
        let (ll, x) = optimise(&x, 0.1 * config.initial_radius, &mut evaluations);
        if ll.is_finite() && better(&best, ll) {
            best = Some((ll, x));
        }
    }
    let (best_start_ll, start_x) = best_start.ok_or(EstimationError::AllStartsInfeasible)?;
    let (mut ll, mut x) = best.unwrap_or((best_start_ll, start_x.clone()));
    if ll < best_start_ll {
        ll = best_start_ll;
        x = start_x;
    }
    Ok(MleFit {
        theta: coords.point(&x),
        log_likelihood: ll,
        best_start_log_likelihood: best_start_ll,
        degenerate: false,
        evaluations,
    })
}

/// One rolling-window estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowEstimate {
    pub end_index: usize,
    pub end_date: NaiveDate,
    pub theta: ParameterPoint,
    pub log_likelihood: f64,
    pub degenerate: bool,
}

/// A window whose fit failed; estimation continues without it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowGap {
    pub end_index: usize,
    pub end_date: NaiveDate,
    pub reason: String,
}

/// Estimated uncertainty box: per-parameter range of the window estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaHat {
    pub ticker: String,
    pub b0: Interval,
    pub b1: Interval,
    pub a0: Interval,
    pub a1: Interval,
    pub gamma: Interval,
    pub estimates: Vec<WindowEstimate>,
    pub gaps: Vec<WindowGap>,
    pub config: EstimationConfig,
}

impl ThetaHat {
    pub fn from_estimates(
        ticker: impl Into<String>,
        estimates: Vec<WindowEstimate>,
        gaps: Vec<WindowGap>,
        config: EstimationConfig,
    ) -> Result<Self, EstimationError> {
        let first = estimates.first().ok_or(EstimationError::AllStartsInfeasible)?;
        let range = |p: Param| {
            estimates.iter().fold(Interval::point(first.theta.get(p)), |acc, e| {
                acc.hull(&Interval::point(e.theta.get(p)))
            })
        };
        Ok(Self {
            ticker: ticker.into(),
            b0: range(Param::B0),
            b1: range(Param::B1),
            a0: range(Param::A0),
            a1: range(Param::A1),
            gamma: range(Param::Gamma),
            estimates,
            gaps,
            config,
        })
    }

    pub fn interval(&self, p: Param) -> Interval {
        match p {
            Param::B0 => self.b0,
            Param::B1 => self.b1,
            Param::A0 => self.a0,
            Param::A1 => self.a1,
            Param::Gamma => self.gamma,
        }
    }

    pub fn to_box(&self, state_space: StateSpace) -> ParameterBox {
        ParameterBox::new(self.b0, self.b1, self.a0, self.a1, self.gamma, state_space)
    }

    /// Estimate of the most recent window.
    pub fn latest(&self) -> &WindowEstimate {
        self.estimates.last().expect("ThetaHat holds at least one estimate")
    }
}

/// End indices (exclusive) of the rolling windows: `W, W + S, ...`.
pub fn window_ends(len: usize, window: usize, step: usize) -> Vec<usize> {
    if len < window || step == 0 {
        return Vec::new();
    }
    (window..=len).step_by(step).collect()
}

/// Fits every window `[end - W, end)` in parallel and aggregates in window
/// order. Window `k` draws its jittered starts from `RngSpec(seed, k)`.
pub fn rolling_estimate(series: &PriceSeries, config: &EstimationConfig) -> Result<ThetaHat, EstimationError> {
    config.validate()?;
    if series.len() < config.window {
        return Err(EstimationError::SeriesTooShort {
            ticker: series.ticker.clone(),
            len: series.len(),
            window: config.window,
        });
    }
    let ends = window_ends(series.len(), config.window, config.step);
    let fits: Vec<(usize, Result<MleFit, EstimationError>)> = ends
        .par_iter()
        .enumerate()
        .map(|(k, end)| {
            let w = &series.closes[end - config.window..*end];
            (*end, mle_fit(w, config, RngSpec::new(config.seed, k as u64)))
        })
        .collect();
    let mut estimates = Vec::new();
    let mut gaps = Vec::new();
    for (end, fit) in fits {
        let end_date = series.dates[end - 1];
        match fit {
            Ok(f) => estimates.push(WindowEstimate {
                end_index: end,
                end_date,
                theta: f.theta,
                log_likelihood: f.log_likelihood,
                degenerate: f.degenerate,
            }),
            Err(e) => {
                tracing::warn!(ticker = %series.ticker, end, error = %e, "window estimate failed");
                gaps.push(WindowGap {
                    end_index: end,
                    end_date,
                    reason: e.to_string(),
                });
            }
        }
    }
    ThetaHat::from_estimates(series.ticker.clone(), estimates, gaps, config.clone())
}

/// The box with the listed parameters collapsed to the given values.
pub fn restrict_box(b: &ParameterBox, frozen: &[(Param, f64)]) -> Result<ParameterBox, EstimationError> {
    let mut out = *b;
    for (p, v) in frozen {
        let iv = b.interval(*p);
        if !iv.contains(*v) {
            return Err(EstimationError::FrozenOutsideInterval {
                param: p.name(),
                value: *v,
                interval: iv.to_string(),
            });
        }
        *out.interval_mut(*p) = Interval::point(*v);
    }
    Ok(out)
}
