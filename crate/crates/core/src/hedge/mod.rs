//! Robust quadratic deep hedging.
//!
//! A hedge is a cash position `d` plus a network `h(t, X_t[, max X])` giving
//! the holding in the underlying over `[t_i, t_{i+1})`. Training minimises
//! `Σ_b (d + Σ_i h(t_i, X_i^b) (X_{i+1}^b - X_i^b) - Φ(X^b))^2` on freshly
//! sampled batches, with Adam updating network and cash position together.

mod adam;
mod network;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use network::{Activation, Dense, ForwardCache, Mlp, MlpGradient, MlpRecord};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::HedgeError;
use crate::payoffs::PayoffSpec;
use crate::process::{sample_paths, ParameterBox, PathBatch, RngSpec, SampleRequest, SamplingMode, TimeGrid};

/// Which information the strategy sees at `t_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeaturePolicy {
    /// `(t, X_t)`
    Markov,
    /// `(t, X_t, max_{s <= t} X_s)`
    RunningMax,
}

impl FeaturePolicy {
    pub fn input_dim(&self) -> usize {
        match self {
            FeaturePolicy::Markov => 2,
            FeaturePolicy::RunningMax => 3,
        }
    }
}

/// Affine input normalisation `t / T`, `X / x0`. With `normalize = false`
/// the raw `(t, X)` values are fed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputScaling {
    pub maturity: f64,
    pub x0: f64,
    pub normalize: bool,
}

impl InputScaling {
    fn time(&self, t: f64) -> f64 {
        if self.normalize {
            t / self.maturity
        } else {
            t
        }
    }

    fn state(&self, x: f64) -> f64 {
        if self.normalize {
            x / self.x0
        } else {
            x
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossReduction {
    Sum,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HedgeModel {
    pub net: Mlp,
    /// Cash position `d`, the price of the hedging strategy.
    pub cash: f64,
    pub policy: FeaturePolicy,
    pub scaling: InputScaling,
}

/// Gradient of the hedging loss.
#[derive(Debug, Clone, PartialEq)]
pub struct HedgeGradient {
    pub net: MlpGradient,
    pub cash: f64,
}

impl HedgeModel {
    pub fn new(net: Mlp, cash: f64, policy: FeaturePolicy, scaling: InputScaling) -> Result<Self, HedgeError> {
        if net.input_dim() != policy.input_dim() {
            return Err(HedgeError::DimensionMismatch {
                expected: policy.input_dim(),
                got: net.input_dim(),
            });
        }
        if !cash.is_finite() {
            return Err(HedgeError::InvalidConfig("cash position must be finite".into()));
        }
        Ok(Self {
            net,
            cash,
            policy,
            scaling,
        })
    }

    /// Network input at step `i`; reads only `path[..=i]`.
    pub fn features_at(&self, times: &[f64], path: &[f64], i: usize) -> Vec<f64> {
        let mut f = vec![self.scaling.time(times[i]), self.scaling.state(path[i])];
        if self.policy == FeaturePolicy::RunningMax {
            let m = path[..=i].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            f.push(self.scaling.state(m));
        }
        f
    }

    /// Holding `h(t_i, ·)` on one path.
    pub fn holding(&self, times: &[f64], path: &[f64], i: usize) -> Result<f64, HedgeError> {
        self.net.forward(&self.features_at(times, path, i))
    }

    /// Feature matrix with one row per `(path, step)`, path-major.
    pub fn feature_matrix(&self, batch: &PathBatch) -> Array2<f64> {
        let n = batch.grid().steps();
        let dim = self.policy.input_dim();
        let times = batch.grid().times();
        let mut out = Array2::zeros((batch.len() * n, dim));
        for (b, path) in batch.paths().enumerate() {
            let mut running = f64::NEG_INFINITY;
            for i in 0..n {
                let row = b * n + i;
                running = running.max(path[i]);
                out[[row, 0]] = self.scaling.time(times[i]);
                out[[row, 1]] = self.scaling.state(path[i]);
                if dim == 3 {
                    out[[row, 2]] = self.scaling.state(running);
                }
            }
        }
        out
    }

    /// Holdings for every `(path, step)` in the batch, path-major.
    pub fn holdings(&self, batch: &PathBatch) -> Result<Array1<f64>, HedgeError> {
        self.net.predict_batch(self.feature_matrix(batch).view())
    }

    /// Parameter slices (network, then cash) for optimiser updates.
    pub fn parameter_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut s = self.net.parameter_slices_mut();
        s.push(std::slice::from_mut(&mut self.cash));
        s
    }

    pub fn parameter_count(&self) -> usize {
        self.net.parameter_count() + 1
    }
}

impl HedgeGradient {
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut s = self.net.slices();
        s.push(std::slice::from_ref(&self.cash));
        s
    }
}

fn payoff_vector(batch: &PathBatch, spec: &PayoffSpec) -> Result<Vec<f64>, HedgeError> {
    batch
        .paths()
        .map(|p| spec.evaluate(p).map_err(HedgeError::from))
        .collect()
}

fn increments(batch: &PathBatch) -> Vec<f64> {
    let n = batch.grid().steps();
    let mut out = Vec::with_capacity(batch.len() * n);
    for path in batch.paths() {
        out.extend(path.windows(2).map(|w| w[1] - w[0]));
    }
    out
}

/// Terminal hedging errors `d + Σ h_i ΔX_i - Φ` per path (fixed path order).
fn terminal_errors(model: &HedgeModel, holdings: &Array1<f64>, dx: &[f64], payoffs: &[f64], n: usize) -> Vec<f64> {
    payoffs
        .iter()
        .enumerate()
        .map(|(b, phi)| {
            let gains: f64 = (0..n).map(|i| holdings[b * n + i] * dx[b * n + i]).sum();
            model.cash + gains - phi
        })
        .collect()
}

fn check_batch(model: &HedgeModel, batch: &PathBatch, spec: &PayoffSpec) -> Result<(), HedgeError> {
    spec.validate()?;
    if model.net.input_dim() != model.policy.input_dim() {
        return Err(HedgeError::DimensionMismatch {
            expected: model.policy.input_dim(),
            got: model.net.input_dim(),
        });
    }
    if batch.is_empty() {
        return Err(HedgeError::InvalidConfig("empty batch".into()));
    }
    Ok(())
}

/// Batch-summed quadratic hedging loss.
pub fn hedge_loss(model: &HedgeModel, batch: &PathBatch, spec: &PayoffSpec) -> Result<f64, HedgeError> {
    hedge_loss_with(model, batch, spec, LossReduction::Sum)
}

pub fn hedge_loss_with(
    model: &HedgeModel,
    batch: &PathBatch,
    spec: &PayoffSpec,
    reduction: LossReduction,
) -> Result<f64, HedgeError> {
    check_batch(model, batch, spec)?;
    let payoffs = payoff_vector(batch, spec)?;
    let holdings = model.holdings(batch)?;
    let errs = terminal_errors(model, &holdings, &increments(batch), &payoffs, batch.grid().steps());
    Ok(reduce(errs.iter().map(|e| e * e).sum(), errs.len(), reduction))
}

fn reduce(sum: f64, count: usize, reduction: LossReduction) -> f64 {
    match reduction {
        LossReduction::Sum => sum,
        LossReduction::Mean => sum / count as f64,
    }
}

/// Loss and its exact gradient with respect to all network parameters and
/// the cash position (batch-summed).
pub fn backward(model: &HedgeModel, batch: &PathBatch, spec: &PayoffSpec) -> Result<(f64, HedgeGradient), HedgeError> {
    loss_and_gradient(model, batch, spec, LossReduction::Sum)
}

pub fn loss_and_gradient(
    model: &HedgeModel,
    batch: &PathBatch,
    spec: &PayoffSpec,
    reduction: LossReduction,
) -> Result<(f64, HedgeGradient), HedgeError> {
    check_batch(model, batch, spec)?;
    let n = batch.grid().steps();
    let payoffs = payoff_vector(batch, spec)?;
    let features = model.feature_matrix(batch);
    let (holdings, cache) = model.net.forward_batch(features.view())?;
    let dx = increments(batch);
    let errs = terminal_errors(model, &holdings, &dx, &payoffs, n);
    let scale = match reduction {
        LossReduction::Sum => 1.0,
        LossReduction::Mean => 1.0 / errs.len() as f64,
    };
    let loss = reduce(errs.iter().map(|e| e * e).sum(), errs.len(), reduction);
    // dL/dh_{b,i} = 2 e_b ΔX_{b,i}
    let upstream = Array1::from_shape_fn(holdings.len(), |r| 2.0 * scale * errs[r / n] * dx[r]);
    let net = model.net.backward_batch(&cache, upstream.view());
    let cash = 2.0 * scale * errs.iter().sum::<f64>();
    Ok((loss, HedgeGradient { net, cash }))
}

/// Hyperparameters of the training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Hidden layer widths `h_1, ..., h_l`.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub iterations: usize,
    pub reduction: LossReduction,
    pub policy: FeaturePolicy,
    pub normalize_inputs: bool,
}

impl TrainConfig {
    /// Four ReLU layers of 256 neurons, batch 256, learning rate 0.005,
    /// 10,000 iterations.
    pub fn full() -> Self {
        Self {
            hidden: vec![256; 4],
            activation: Activation::Relu,
            adam: AdamConfig::default(),
            batch_size: 256,
            iterations: 10_000,
            reduction: LossReduction::Sum,
            policy: FeaturePolicy::Markov,
            normalize_inputs: true,
        }
    }

    /// Reduced preset for a single desktop core: 2,000 iterations and
    /// four layers of 32 neurons.
    pub fn desk() -> Self {
        Self {
            hidden: vec![32; 4],
            iterations: 2_000,
            ..Self::full()
        }
    }

    pub fn with_policy(mut self, policy: FeaturePolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn validate(&self) -> Result<(), HedgeError> {
        if self.hidden.iter().any(|h| *h == 0) {
            return Err(HedgeError::InvalidConfig("hidden widths must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(HedgeError::InvalidConfig("batch size must be positive".into()));
        }
        if !(self.adam.learning_rate > 0.0) || !self.adam.learning_rate.is_finite() {
            return Err(HedgeError::InvalidConfig("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return Err(HedgeError::InvalidConfig("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.adam.epsilon > 0.0) {
            return Err(HedgeError::InvalidConfig("Adam epsilon must be positive".into()));
        }
        Ok(())
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.policy.input_dim()];
        s.extend(&self.hidden);
        s.push(1);
        s
    }
}

#[derive(Debug, Clone)]
pub struct TrainRequest<'a> {
    pub parameter_box: &'a ParameterBox,
    pub x0: f64,
    pub grid: &'a TimeGrid,
    pub payoff: &'a PayoffSpec,
    pub config: &'a TrainConfig,
    pub rng: RngSpec,
    pub mode: SamplingMode,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: HedgeModel,
    /// Loss of every iteration, under the configured reduction.
    pub losses: Vec<f64>,
}

/// Robust (or fixed-parameter) deep hedging training loop.
///
/// Weights are initialised from `rng.child(0)`; iteration `k` trains on a
/// fresh batch drawn from `rng.child(k + 1)`.
pub fn train(req: &TrainRequest<'_>) -> Result<TrainOutcome, HedgeError> {
    req.config.validate()?;
    req.payoff.validate()?;
    crate::process::validate_box(req.parameter_box)?;
    if !(req.x0.is_finite()) || (req.config.normalize_inputs && req.x0 == 0.0) {
        return Err(HedgeError::InvalidConfig(format!("initial value {} cannot be used for input scaling", req.x0)));
    }
    let scaling = InputScaling {
        maturity: req.grid.maturity(),
        x0: req.x0,
        normalize: req.config.normalize_inputs,
    };
    let mut init_rng = req.rng.child(0).lane(0);
    let net = Mlp::new(&req.config.layer_sizes(), req.config.activation, &mut init_rng)?;
    let mut model = HedgeModel::new(net, 0.0, req.config.policy, scaling)?;
    let mut adam = AdamState::new(req.config.adam, model.parameter_count());
    let mut losses = Vec::with_capacity(req.config.iterations);

    for iteration in 0..req.config.iterations {
        let batch_rng = req.rng.child(iteration as u64 + 1);
        let batch = sample_paths(&SampleRequest {
            parameter_box: req.parameter_box,
            x0: req.x0,
            grid: req.grid,
            count: req.config.batch_size,
            rng: batch_rng,
            mode: req.mode,
            record_draws: false,
        })?;
        let (loss, grad) = loss_and_gradient(&model, &batch, req.payoff, req.config.reduction)?;
        if !loss.is_finite() {
            return Err(HedgeError::NonFiniteLoss {
                iteration,
                seed: batch_rng.seed,
                stream: batch_rng.stream,
            });
        }
        adam.update(model.parameter_slices_mut().into_iter().zip(grad.slices()));
        if !model.cash.is_finite() || !model.net.is_finite() {
            return Err(HedgeError::NonFiniteLoss {
                iteration,
                seed: batch_rng.seed,
                stream: batch_rng.stream,
            });
        }
        if iteration % 500 == 0 {
            tracing::debug!(iteration, loss, cash = model.cash, "training");
        }
        losses.push(loss);
    }
    Ok(TrainOutcome { model, losses })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorMetric {
    /// `(d + Σ h ΔX - Φ) / d`
    Relative,
    /// `d + Σ h ΔX - Φ`, used when `|d|` is below the floor.
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub price_floor: f64,
    /// Fall back to absolute errors instead of failing when `|d|` is tiny.
    pub absolute_fallback: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            price_floor: 1e-6,
            absolute_fallback: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    /// Mean, sample standard deviation, min and max.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
                min: f64::NAN,
                max: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            mean,
            std: var.sqrt(),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HedgeReport {
    pub metric: ErrorMetric,
    pub price: f64,
    /// Signed per-path errors under `metric`.
    pub errors: Vec<f64>,
    pub signed: Summary,
    pub absolute: Summary,
}

impl HedgeReport {
    pub fn from_errors(metric: ErrorMetric, price: f64, errors: Vec<f64>) -> Self {
        let abs: Vec<f64> = errors.iter().map(|e| e.abs()).collect();
        Self {
            metric,
            price,
            signed: Summary::of(&errors),
            absolute: Summary::of(&abs),
            errors,
        }
    }

    /// Per-path CSV `path_id,error,abs_error`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["path_id", "error", "abs_error"])?;
        for (i, e) in self.errors.iter().enumerate() {
            wr.write_record([i.to_string(), e.to_string(), e.abs().to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Hedging errors of `model` on an independent batch.
pub fn evaluate(
    model: &HedgeModel,
    batch: &PathBatch,
    spec: &PayoffSpec,
    options: &EvalOptions,
) -> Result<HedgeReport, HedgeError> {
    check_batch(model, batch, spec)?;
    let metric = if model.cash.abs() < options.price_floor {
        if options.absolute_fallback {
            ErrorMetric::Absolute
        } else {
            return Err(HedgeError::PriceTooSmall {
                price: model.cash,
                floor: options.price_floor,
            });
        }
    } else {
        ErrorMetric::Relative
    };
    let payoffs = payoff_vector(batch, spec)?;
    let holdings = model.holdings(batch)?;
    let errs = terminal_errors(model, &holdings, &increments(batch), &payoffs, batch.grid().steps());
    let errors = match metric {
        ErrorMetric::Relative => errs.into_iter().map(|e| e / model.cash).collect(),
        ErrorMetric::Absolute => errs,
    };
    Ok(HedgeReport::from_errors(metric, model.cash, errors))
}

/// Versioned model checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub model: HedgeModel,
    pub config: TrainConfig,
    pub rng: RngSpec,
}

impl Checkpoint {
    pub const VERSION: u32 = 1;

    pub fn new(model: HedgeModel, config: TrainConfig, rng: RngSpec) -> Self {
        Self {
            version: Self::VERSION,
            model,
            config,
            rng,
        }
    }

    pub fn from_json(s: &str) -> Result<Self, crate::Error> {
        let cp: Checkpoint = serde_json::from_str(s)?;
        if cp.version != Self::VERSION {
            return Err(HedgeError::CheckpointVersion(cp.version).into());
        }
        Ok(cp)
    }
}
