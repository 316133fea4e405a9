//! Experiment configuration, presets and field-level validation.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::estimation::EstimationConfig;
use crate::hedge::{EvalOptions, TrainConfig};
use crate::payoffs::PayoffSpec;
use crate::pde::PdeConfig;
use crate::process::{validate_box, Param, ParameterBox, ParameterPoint, SamplingMode, TimeGrid};

use super::fixture::SyntheticConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Simulate,
    TrainHedge,
    EvaluateHedge,
    PriceBounds,
    Estimate,
    TableOne,
    TableTwo,
    FigFive,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 8] = [
        ExperimentKind::Simulate,
        ExperimentKind::TrainHedge,
        ExperimentKind::EvaluateHedge,
        ExperimentKind::PriceBounds,
        ExperimentKind::Estimate,
        ExperimentKind::TableOne,
        ExperimentKind::TableTwo,
        ExperimentKind::FigFive,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::TrainHedge => "train-hedge",
            ExperimentKind::EvaluateHedge => "evaluate-hedge",
            ExperimentKind::PriceBounds => "price-bounds",
            ExperimentKind::Estimate => "estimate",
            ExperimentKind::TableOne => "table-one",
            ExperimentKind::TableTwo => "table-two",
            ExperimentKind::FigFive => "fig-five",
        }
    }
}

impl std::str::FromStr for ExperimentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ExperimentKind::ALL
            .iter()
            .find(|k| k.name() == s)
            .copied()
            .ok_or_else(|| format!("unknown experiment kind `{s}`"))
    }
}

/// Scale of a named preset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    /// Full-size hyperparameters: 10,000 iterations, 4 x 256 network,
    /// 50,000 evaluation paths.
    Full,
    /// 2,000 iterations, 4 x 32 network, 20,000 evaluation paths.
    Desk,
}

/// The simulated market: uncertainty box, initial value and time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub parameter_box: ParameterBox,
    pub x0: f64,
    pub maturity: f64,
    pub steps: usize,
}

impl ModelConfig {
    /// Reference box, `x0 = 10`, 30 daily steps over 30 calendar days.
    pub fn reference() -> Self {
        Self {
            parameter_box: ParameterBox::reference(),
            x0: 10.0,
            maturity: 30.0 / 365.0,
            steps: 30,
        }
    }

    pub fn grid(&self) -> Result<TimeGrid, crate::error::ModelError> {
        TimeGrid::uniform(self.maturity, self.steps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub paths: usize,
    pub options: EvalOptions,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            paths: 20_000,
            options: EvalOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TableOneConfig {
    pub call: PayoffSpec,
    pub butterfly: PayoffSpec,
    pub lookback: PayoffSpec,
    /// Parameter point of the non-robust strategies; the box midpoint if absent.
    pub fixed_theta: Option<ParameterPoint>,
}

impl Default for TableOneConfig {
    fn default() -> Self {
        Self {
            call: PayoffSpec::Call { strike: 10.0 },
            butterfly: PayoffSpec::Butterfly { k: [8.0, 10.0, 12.0] },
            lookback: PayoffSpec::LookbackCall { strike: 12.0 },
            fixed_theta: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FigFiveConfig {
    pub payoffs: Vec<PayoffSpec>,
    pub initial_values: Vec<f64>,
}

impl Default for FigFiveConfig {
    fn default() -> Self {
        Self {
            payoffs: vec![
                PayoffSpec::Call { strike: 10.0 },
                PayoffSpec::Butterfly { k: [8.0, 10.0, 12.0] },
            ],
            initial_values: vec![8.0, 9.0, 10.0, 11.0, 12.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TableTwoConfig {
    /// Price CSV (`date,close` or wide). Mutually exclusive with `synthetic`.
    pub data: Option<PathBuf>,
    pub synthetic: Option<SyntheticConfig>,
    /// Length of the out-of-sample hedging horizon in observations.
    pub test_days: usize,
    /// Parameters frozen one at a time in the ablation columns.
    pub ablations: Vec<Param>,
    pub black_scholes: bool,
}

impl Default for TableTwoConfig {
    fn default() -> Self {
        Self {
            data: None,
            synthetic: Some(SyntheticConfig::default()),
            test_days: 30,
            ablations: Param::ALL.to_vec(),
            black_scholes: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub paths: usize,
    pub mode: SamplingMode,
    pub record_draws: bool,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            paths: 1000,
            mode: SamplingMode::Robust,
            record_draws: false,
        }
    }
}

/// A complete, reproducible run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Mandatory; there is no wall-clock seeding.
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub model: ModelConfig,
    #[serde(default)]
    pub payoff: Option<PayoffSpec>,
    #[serde(default = "default_mode")]
    pub mode: SamplingMode,
    #[serde(default = "TrainConfig::desk")]
    pub hedge: TrainConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub pde: PdeConfig,
    #[serde(default)]
    pub estimation: EstimationConfig,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub table_one: TableOneConfig,
    #[serde(default)]
    pub table_two: TableTwoConfig,
    #[serde(default)]
    pub fig_five: FigFiveConfig,
    /// Model checkpoint consumed by `evaluate-hedge`.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    /// Price data consumed by `estimate`.
    #[serde(default)]
    pub data: Option<PathBuf>,
}

fn default_mode() -> SamplingMode {
    SamplingMode::Robust
}

/// One validation failure, addressed by a dotted field path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for FieldError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl ExperimentConfig {
    /// Named preset for `kind` at the given scale.
    pub fn preset(kind: ExperimentKind, scale: Scale, seed: u64) -> Self {
        let (hedge, paths) = match scale {
            Scale::Full => (TrainConfig::full(), 50_000),
            Scale::Desk => (TrainConfig::desk(), 20_000),
        };
        let mut cfg = Self {
            kind,
            seed,
            output_dir: None,
            model: ModelConfig::reference(),
            payoff: Some(PayoffSpec::Call { strike: 10.0 }),
            mode: SamplingMode::Robust,
            hedge,
            evaluation: EvaluationConfig {
                paths,
                ..EvaluationConfig::default()
            },
            pde: PdeConfig::default(),
            estimation: EstimationConfig::default(),
            simulate: SimulateConfig::default(),
            table_one: TableOneConfig::default(),
            table_two: TableTwoConfig::default(),
            fig_five: FigFiveConfig::default(),
            checkpoint: None,
            data: None,
        };
        if kind == ExperimentKind::TableTwo {
            // 30 trading days
            cfg.model.maturity = 30.0 / 250.0;
            cfg.evaluation.options.absolute_fallback = true;
        }
        cfg
    }

    pub fn preset_by_name(name: &str, seed: u64) -> Option<Self> {
        let (scale, kind) = name.split_once(':')?;
        let scale = match scale {
            "full" => Scale::Full,
            "desk" => Scale::Desk,
            _ => return None,
        };
        Some(Self::preset(kind.parse().ok()?, scale, seed))
    }

    pub fn from_json(s: &str) -> Result<Self, crate::Error> {
        serde_json::from_str(s).map_err(|e| crate::Error::Config(format!("{e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serialises")
    }

    /// Every problem found, each tied to its field.
    pub fn validate(&self) -> Vec<FieldError> {
        let mut errs = Vec::new();
        let mut push = |field: &str, message: String| {
            errs.push(FieldError {
                field: field.to_string(),
                message,
            })
        };
        let m = &self.model;
        if let Err(e) = validate_box(&m.parameter_box) {
            push("model.parameter_box", e.to_string());
        }
        if !(m.x0.is_finite()) || m.x0 == 0.0 {
            push("model.x0", format!("must be finite and nonzero, got {}", m.x0));
        }
        if !(m.maturity > 0.0 && m.maturity.is_finite()) {
            push("model.maturity", format!("must be positive, got {}", m.maturity));
        }
        if m.steps == 0 {
            push("model.steps", "must be at least 1".into());
        }
        if let Some(p) = &self.payoff {
            if let Err(e) = p.validate() {
                push("payoff", e.to_string());
            }
        }
        if let SamplingMode::Fixed { theta } = &self.mode {
            if theta.to_array().iter().any(|v| !v.is_finite()) {
                push("mode.theta", "must be finite".into());
            }
        }
        if let Err(e) = self.hedge.validate() {
            push("hedge", e.to_string());
        }
        if self.hedge.iterations == 0 {
            push("hedge.iterations", "must be at least 1".into());
        }
        if self.evaluation.paths == 0 {
            push("evaluation.paths", "must be at least 1".into());
        }
        if !(self.evaluation.options.price_floor >= 0.0) {
            push("evaluation.options.price_floor", "must be nonnegative".into());
        }
        if self.pde.intervals < 2 {
            push("pde.intervals", "must be at least 2".into());
        }
        if !(self.pde.cfl_safety > 0.0 && self.pde.cfl_safety <= 1.0) {
            push("pde.cfl_safety", "must lie in (0, 1]".into());
        }
        if let Err(e) = self.estimation.validate() {
            push("estimation", e.to_string());
        }
        if self.simulate.paths == 0 {
            push("simulate.paths", "must be at least 1".into());
        }
        for (name, spec) in [
            ("table_one.call", &self.table_one.call),
            ("table_one.butterfly", &self.table_one.butterfly),
            ("table_one.lookback", &self.table_one.lookback),
        ] {
            if let Err(e) = spec.validate() {
                push(name, e.to_string());
            }
        }
        if self.fig_five.initial_values.iter().any(|x| !x.is_finite()) {
            push("fig_five.initial_values", "must be finite".into());
        }
        for (i, spec) in self.fig_five.payoffs.iter().enumerate() {
            if spec.terminal_function().is_none() {
                push(&format!("fig_five.payoffs[{i}]"), "must be path-independent".into());
            }
        }
        let t2 = &self.table_two;
        if t2.test_days == 0 {
            push("table_two.test_days", "must be at least 1".into());
        }
        match (&t2.data, &t2.synthetic) {
            (Some(_), Some(_)) if self.kind == ExperimentKind::TableTwo => {
                push("table_two", "set either `data` or `synthetic`, not both".into())
            }
            (None, None) if self.kind == ExperimentKind::TableTwo => {
                push("table_two", "needs `data` or `synthetic`".into())
            }
            _ => {}
        }
        if let Some(s) = &t2.synthetic {
            for e in s.validate() {
                push(&format!("table_two.synthetic.{}", e.field), e.message);
            }
        }
        let mut must_exist = |field: &str, path: &Option<PathBuf>, required: bool| match path {
            Some(p) if !p.exists() => push(field, format!("file {} does not exist", p.display())),
            None if required => push(field, "required for this experiment".into()),
            _ => {}
        };
        must_exist("table_two.data", &t2.data, false);
        must_exist("checkpoint", &self.checkpoint, self.kind == ExperimentKind::EvaluateHedge);
        must_exist("data", &self.data, self.kind == ExperimentKind::Estimate);
        let needs_payoff = matches!(
            self.kind,
            ExperimentKind::TrainHedge | ExperimentKind::EvaluateHedge | ExperimentKind::PriceBounds
        );
        if needs_payoff && self.payoff.is_none() {
            errs.push(FieldError {
                field: "payoff".into(),
                message: "required for this experiment".into(),
            });
        }
        if self.kind == ExperimentKind::PriceBounds {
            if let Some(p) = &self.payoff {
                if p.terminal_function().is_none() {
                    errs.push(FieldError {
                        field: "payoff".into(),
                        message: "price bounds need a path-independent payoff".into(),
                    });
                }
            }
        }
        errs
    }

}
