//! Generalized affine diffusions under parameter uncertainty.
//!
//! A single model follows
//!
//! ```text
//! dX_t = (b0 + b1 X_t) dt + (a0 + a1 X_t^+)^gamma dW_t
//! ```
//!
//! and uncertainty is expressed as a box of closed intervals for the five
//! parameters. Paths are generated with an Euler-Maruyama scheme in which a
//! fresh parameter point is drawn uniformly from the box at every step.

use std::fmt;
use std::io::{self, Read, Write};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Closed interval `[lo, hi]`; `lo == hi` encodes a fixed parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    lo: f64,
    hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self, ModelError> {
        if !lo.is_finite() || !hi.is_finite() {
            return Err(ModelError::InvalidInterval { lo, hi });
        }
        if lo > hi {
            return Err(ModelError::InvalidInterval { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    pub fn point(value: f64) -> Self {
        Self { lo: value, hi: value }
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn is_degenerate(&self) -> bool {
        self.lo == self.hi
    }

    pub fn contains(&self, value: f64) -> bool {
        value >= self.lo && value <= self.hi
    }

    /// Maps `u ∈ [0, 1)` affinely onto the interval.
    pub fn lerp(&self, u: f64) -> f64 {
        if self.is_degenerate() {
            self.lo
        } else {
            self.lo + u * (self.hi - self.lo)
        }
    }

    pub fn endpoints(&self) -> [f64; 2] {
        [self.lo, self.hi]
    }

    /// Smallest interval containing both.
    pub fn hull(&self, other: &Interval) -> Interval {
        Interval {
            lo: self.lo.min(other.lo),
            hi: self.hi.max(other.hi),
        }
    }
}

impl TryFrom<[f64; 2]> for Interval {
    type Error = ModelError;

    fn try_from(value: [f64; 2]) -> Result<Self, Self::Error> {
        Interval::new(value[0], value[1])
    }
}

impl From<Interval> for [f64; 2] {
    fn from(value: Interval) -> Self {
        [value.lo, value.hi]
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateSpace {
    RealLine,
    PositiveHalfLine,
}

/// The five model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Param {
    B0,
    B1,
    A0,
    A1,
    Gamma,
}

impl Param {
    pub const ALL: [Param; 5] = [Param::B0, Param::B1, Param::A0, Param::A1, Param::Gamma];

    pub fn name(&self) -> &'static str {
        match self {
            Param::B0 => "b0",
            Param::B1 => "b1",
            Param::A0 => "a0",
            Param::A1 => "a1",
            Param::Gamma => "gamma",
        }
    }
}

impl std::str::FromStr for Param {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "b0" => Ok(Param::B0),
            "b1" => Ok(Param::B1),
            "a0" => Ok(Param::A0),
            "a1" => Ok(Param::A1),
            "gamma" => Ok(Param::Gamma),
            other => Err(ModelError::UnknownParameter(other.to_string())),
        }
    }
}

/// One concrete model `(b0, b1, a0, a1, gamma)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterPoint {
    pub b0: f64,
    pub b1: f64,
    pub a0: f64,
    pub a1: f64,
    pub gamma: f64,
}

impl ParameterPoint {
    pub const fn new(b0: f64, b1: f64, a0: f64, a1: f64, gamma: f64) -> Self {
        Self {
            b0,
            b1,
            a0,
            a1,
            gamma,
        }
    }

    /// Black-Scholes as a special case: zero intercepts, unit exponent.
    pub const fn black_scholes(mu: f64, sigma: f64) -> Self {
        Self::new(0.0, mu, 0.0, sigma, 1.0)
    }

    pub fn get(&self, param: Param) -> f64 {
        match param {
            Param::B0 => self.b0,
            Param::B1 => self.b1,
            Param::A0 => self.a0,
            Param::A1 => self.a1,
            Param::Gamma => self.gamma,
        }
    }

    pub fn set(&mut self, param: Param, value: f64) {
        match param {
            Param::B0 => self.b0 = value,
            Param::B1 => self.b1 = value,
            Param::A0 => self.a0 = value,
            Param::A1 => self.a1 = value,
            Param::Gamma => self.gamma = value,
        }
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.b0, self.b1, self.a0, self.a1, self.gamma]
    }

    pub fn from_array(v: [f64; 5]) -> Self {
        Self::new(v[0], v[1], v[2], v[3], v[4])
    }

    /// `b0 + b1 x`
    #[inline]
    pub fn drift(&self, x: f64) -> f64 {
        self.b0 + self.b1 * x
    }

    /// `a0 + a1 x^+`, the base raised to `gamma` in the volatility.
    #[inline]
    pub fn volatility_base(&self, x: f64) -> f64 {
        self.a0 + self.a1 * x.max(0.0)
    }

    /// `(a0 + a1 x^+)^gamma`, the coefficient in front of `dW`.
    #[inline]
    pub fn diffusion(&self, x: f64) -> Result<f64, ModelError> {
        let base = self.volatility_base(x);
        if base < 0.0 || base.is_nan() {
            return Err(ModelError::NegativeVolatilityBase { x, base });
        }
        Ok(base.powf(self.gamma))
    }

    /// `(a0 + a1 x^+)^(2 gamma)`, the coefficient appearing in the generator.
    pub fn squared_diffusion(&self, x: f64) -> Result<f64, ModelError> {
        let base = self.volatility_base(x);
        if base < 0.0 || base.is_nan() {
            return Err(ModelError::NegativeVolatilityBase { x, base });
        }
        Ok(base.powf(2.0 * self.gamma))
    }

    /// One Euler-Maruyama step. The output state is not clamped.
    #[inline]
    pub fn euler_step(&self, x: f64, dt: f64, dw: f64) -> Result<f64, ModelError> {
        Ok(x + self.drift(x) * dt + self.diffusion(x)? * dw)
    }
}

/// Free-function forms of the coefficient maps.
pub fn drift(x: f64, theta: &ParameterPoint) -> f64 {
    theta.drift(x)
}

pub fn diffusion(x: f64, theta: &ParameterPoint) -> Result<f64, ModelError> {
    theta.diffusion(x)
}

pub fn euler_step(x: f64, theta: &ParameterPoint, dt: f64, dw: f64) -> Result<f64, ModelError> {
    theta.euler_step(x, dt, dw)
}

/// The uncertainty set: five closed intervals plus a state-space tag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterBox {
    pub b0: Interval,
    pub b1: Interval,
    pub a0: Interval,
    pub a1: Interval,
    pub gamma: Interval,
    pub state_space: StateSpace,
}

impl ParameterBox {
    pub fn new(
        b0: Interval,
        b1: Interval,
        a0: Interval,
        a1: Interval,
        gamma: Interval,
        state_space: StateSpace,
    ) -> Self {
        Self {
            b0,
            b1,
            a0,
            a1,
            gamma,
            state_space,
        }
    }

    /// The box used throughout the simulation study:
    /// `a0 ∈ [0.3, 0.7]`, `a1 ∈ [0.4, 0.6]`, `b0 ∈ [-0.2, 0.2]`,
    /// `b1 ∈ [-0.1, 0.1]`, `gamma ∈ [0.5, 1.5]` on the real line.
    pub fn reference() -> Self {
        Self {
            b0: Interval { lo: -0.2, hi: 0.2 },
            b1: Interval { lo: -0.1, hi: 0.1 },
            a0: Interval { lo: 0.3, hi: 0.7 },
            a1: Interval { lo: 0.4, hi: 0.6 },
            gamma: Interval { lo: 0.5, hi: 1.5 },
            state_space: StateSpace::RealLine,
        }
    }

    /// Singleton box at `theta`.
    pub fn degenerate(theta: ParameterPoint, state_space: StateSpace) -> Self {
        Self {
            b0: Interval::point(theta.b0),
            b1: Interval::point(theta.b1),
            a0: Interval::point(theta.a0),
            a1: Interval::point(theta.a1),
            gamma: Interval::point(theta.gamma),
            state_space,
        }
    }

    pub fn interval(&self, param: Param) -> Interval {
        match param {
            Param::B0 => self.b0,
            Param::B1 => self.b1,
            Param::A0 => self.a0,
            Param::A1 => self.a1,
            Param::Gamma => self.gamma,
        }
    }

    pub fn interval_mut(&mut self, param: Param) -> &mut Interval {
        match param {
            Param::B0 => &mut self.b0,
            Param::B1 => &mut self.b1,
            Param::A0 => &mut self.a0,
            Param::A1 => &mut self.a1,
            Param::Gamma => &mut self.gamma,
        }
    }

    pub fn midpoint(&self) -> ParameterPoint {
        ParameterPoint::new(
            self.b0.midpoint(),
            self.b1.midpoint(),
            self.a0.midpoint(),
            self.a1.midpoint(),
            self.gamma.midpoint(),
        )
    }

    pub fn is_degenerate(&self) -> bool {
        Param::ALL.iter().all(|p| self.interval(*p).is_degenerate())
    }

    pub fn contains(&self, theta: &ParameterPoint) -> bool {
        Param::ALL
            .iter()
            .all(|p| self.interval(*p).contains(theta.get(*p)))
    }

    /// All `2^5` endpoint combinations, bit `k` of the index selecting the
    /// upper endpoint of the `k`-th parameter in `(b0, b1, a0, a1, gamma)`.
    pub fn corners(&self) -> [ParameterPoint; 32] {
        let mut out = [ParameterPoint::new(0.0, 0.0, 0.0, 0.0, 0.0); 32];
        for (idx, slot) in out.iter_mut().enumerate() {
            let pick = |bit: usize, iv: Interval| if idx >> bit & 1 == 1 { iv.hi } else { iv.lo };
            *slot = ParameterPoint::new(
                pick(0, self.b0),
                pick(1, self.b1),
                pick(2, self.a0),
                pick(3, self.a1),
                pick(4, self.gamma),
            );
        }
        out
    }

    /// Range of the drift `b0 + b1 x` over the box.
    pub fn drift_range(&self, x: f64) -> (f64, f64) {
        let vals = [
            self.b0.lo + self.b1.lo * x,
            self.b0.lo + self.b1.hi * x,
            self.b0.hi + self.b1.lo * x,
            self.b0.hi + self.b1.hi * x,
        ];
        min_max(&vals)
    }

    /// Range of the squared diffusion `(a0 + a1 x^+)^(2 gamma)` over the box.
    pub fn squared_diffusion_range(&self, x: f64) -> Result<(f64, f64), ModelError> {
        let xp = x.max(0.0);
        let mut vals = [0.0; 8];
        let mut k = 0;
        for a0 in self.a0.endpoints() {
            for a1 in self.a1.endpoints() {
                let base = a0 + a1 * xp;
                if base < 0.0 {
                    return Err(ModelError::NegativeVolatilityBase { x, base });
                }
                for g in self.gamma.endpoints() {
                    vals[k] = base.powf(2.0 * g);
                    k += 1;
                }
            }
        }
        Ok(min_max(&vals))
    }

    /// Largest diffusion coefficient `(a0 + a1 x^+)^gamma` over the box.
    pub fn max_diffusion(&self, x: f64) -> Result<f64, ModelError> {
        Ok(self.squared_diffusion_range(x)?.1.sqrt())
    }

    /// Draws one parameter point, consuming five uniforms in the order
    /// `(gamma, a0, a1, b0, b1)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ParameterPoint {
        let gamma = self.gamma.lerp(rng.random::<f64>());
        let a0 = self.a0.lerp(rng.random::<f64>());
        let a1 = self.a1.lerp(rng.random::<f64>());
        let b0 = self.b0.lerp(rng.random::<f64>());
        let b1 = self.b1.lerp(rng.random::<f64>());
        ParameterPoint::new(b0, b1, a0, a1, gamma)
    }
}

fn min_max(vals: &[f64]) -> (f64, f64) {
    vals.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(*v), hi.max(*v))
        })
}

/// Which of the sufficient conditions for a proper state space holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProperCondition {
    /// Real line with a strictly positive volatility intercept.
    RealLinePositiveIntercept,
    /// Positive half-line, square-root case with Feller-type drift bound.
    SquareRootFeller,
    /// Positive half-line, `1/2 < gamma <= 1`, no intercept.
    PowerNoIntercept,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Admissibility {
    TheoryProper(ProperCondition),
    NumericallyAdmissible,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxFlag {
    /// `gamma` exceeds one somewhere in the box.
    GammaAboveOne,
    /// `gamma` drops below one half somewhere in the box.
    GammaBelowHalf,
    /// The volatility intercept may vanish on the real line.
    ZeroVolatilityIntercept,
    /// Singleton box of Black-Scholes form `(0, mu, 0, sigma, 1)`.
    BlackScholesDegenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub admissibility: Admissibility,
    pub flags: Vec<BoxFlag>,
}

impl ValidationReport {
    pub fn is_theory_proper(&self) -> bool {
        matches!(self.admissibility, Admissibility::TheoryProper(_))
    }
}

/// Classifies the box as theory-proper, numerically admissible, or invalid.
pub fn validate_box(b: &ParameterBox) -> Result<ValidationReport, ModelError> {
    let mut violations = Vec::new();
    if b.gamma.lo < 0.0 {
        violations.push(format!("gamma lower bound {} is negative", b.gamma.lo));
    }
    if b.a0.lo < 0.0 {
        violations.push(format!(
            "a0 lower bound {} allows a negative volatility base at x = 0",
            b.a0.lo
        ));
    }
    if b.a1.lo < 0.0 {
        violations.push(format!(
            "a1 lower bound {} allows a negative volatility base for large x",
            b.a1.lo
        ));
    }

    let mut flags = Vec::new();
    if b.gamma.hi > 1.0 {
        flags.push(BoxFlag::GammaAboveOne);
    }
    if b.gamma.lo < 0.5 {
        flags.push(BoxFlag::GammaBelowHalf);
    }
    let gamma_in_theory = b.gamma.lo >= 0.5 && b.gamma.hi <= 1.0;

    let admissibility = match b.state_space {
        StateSpace::RealLine => {
            if b.a0.lo > 0.0 && gamma_in_theory {
                Admissibility::TheoryProper(ProperCondition::RealLinePositiveIntercept)
            } else {
                if b.a0.lo <= 0.0 {
                    flags.push(BoxFlag::ZeroVolatilityIntercept);
                }
                if b.is_degenerate() && b.b0.lo == 0.0 && b.a0.lo == 0.0 && b.gamma.lo == 1.0 && b.a1.lo > 0.0
                {
                    flags.push(BoxFlag::BlackScholesDegenerate);
                }
                Admissibility::NumericallyAdmissible
            }
        }
        StateSpace::PositiveHalfLine => {
            if b.gamma.is_degenerate() && b.gamma.lo == 0.5 {
                if b.b0.lo <= 0.0 {
                    violations.push(format!("square-root case needs b0 lower bound > 0, got {}", b.b0.lo));
                }
                if b.a0.lo <= 0.0 {
                    violations.push(format!("square-root case needs a0 lower bound > 0, got {}", b.a0.lo));
                }
                if b.b0.lo <= b.a1.hi / 2.0 {
                    violations.push(format!(
                        "square-root case needs b0 lower bound {} > a1 upper bound / 2 = {}",
                        b.b0.lo,
                        b.a1.hi / 2.0
                    ));
                }
                Admissibility::TheoryProper(ProperCondition::SquareRootFeller)
            } else {
                if b.gamma.lo <= 0.5 {
                    violations.push(format!(
                        "power case needs gamma lower bound > 1/2, got {}",
                        b.gamma.lo
                    ));
                }
                if b.b0.lo <= 0.0 {
                    violations.push(format!("power case needs b0 lower bound > 0, got {}", b.b0.lo));
                }
                if !(b.a0.lo == 0.0 && b.a0.hi == 0.0) {
                    violations.push(format!("power case needs a0 = 0, got {}", b.a0));
                }
                if b.a1.lo <= 0.0 {
                    violations.push(format!("power case needs a1 lower bound > 0, got {}", b.a1.lo));
                }
                if b.gamma.hi <= 1.0 {
                    Admissibility::TheoryProper(ProperCondition::PowerNoIntercept)
                } else {
                    Admissibility::NumericallyAdmissible
                }
            }
        }
    };

    if !violations.is_empty() {
        return Err(ModelError::InvalidBox(violations));
    }
    if flags.contains(&BoxFlag::GammaAboveOne) {
        tracing::warn!(gamma_hi = b.gamma.hi, "gamma upper bound exceeds 1; box accepted for numerics only");
    }
    Ok(ValidationReport {
        admissibility,
        flags,
    })
}

/// Ordered time grid `0 = t_0 <= t_1 <= ... <= t_n = T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self, ModelError> {
        if times.len() < 2 {
            return Err(ModelError::InvalidGrid("grid needs at least two points".into()));
        }
        if times[0] != 0.0 {
            return Err(ModelError::InvalidGrid(format!("grid must start at 0, got {}", times[0])));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(ModelError::InvalidGrid("grid contains non-finite times".into()));
        }
        if times.windows(2).any(|w| w[1] < w[0]) {
            return Err(ModelError::InvalidGrid("grid is not nondecreasing".into()));
        }
        if !times.windows(2).any(|w| w[1] > w[0]) {
            return Err(ModelError::InvalidGrid("grid has no positive step".into()));
        }
        Ok(Self { times })
    }

    pub fn uniform(maturity: f64, steps: usize) -> Result<Self, ModelError> {
        if steps == 0 || !(maturity > 0.0) {
            return Err(ModelError::InvalidGrid(format!(
                "uniform grid needs steps >= 1 and maturity > 0, got {steps} and {maturity}"
            )));
        }
        let times = (0..=steps)
            .map(|i| if i == steps { maturity } else { maturity * i as f64 / steps as f64 })
            .collect();
        Self::new(times)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn maturity(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    pub fn dt(&self, i: usize) -> f64 {
        self.times[i + 1] - self.times[i]
    }
}

impl TryFrom<Vec<f64>> for TimeGrid {
    type Error = ModelError;

    fn try_from(value: Vec<f64>) -> Result<Self, Self::Error> {
        TimeGrid::new(value)
    }
}

impl From<TimeGrid> for Vec<f64> {
    fn from(value: TimeGrid) -> Self {
        value.times
    }
}

/// Seed plus stream identifier. Generators are ChaCha8 keyed by
/// `(seed, stream)`, and each path uses its own ChaCha stream, so draws do not
/// depend on how a batch is partitioned across threads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSpec {
    pub seed: u64,
    pub stream: u64,
}

impl RngSpec {
    pub const fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// Deterministic sub-stream, e.g. one per training iteration.
    pub fn child(&self, index: u64) -> Self {
        Self {
            seed: self.seed,
            stream: splitmix64(self.stream ^ splitmix64(index.wrapping_add(0x5851_f42d_4c95_7f2d))),
        }
    }

    /// Generator for one lane (path, window, ...) of this spec.
    pub fn lane(&self, lane: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.stream.to_le_bytes());
        key[16..24].copy_from_slice(&splitmix64(self.seed).to_le_bytes());
        key[24..].copy_from_slice(&splitmix64(self.stream).to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(lane);
        rng
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SamplingMode {
    /// Fresh uniform draw from the box at every step of every path.
    Robust,
    /// The supplied parameter point at every step.
    Fixed { theta: ParameterPoint },
}

/// Recorded randomness of one Euler step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDraw {
    pub dw: f64,
    pub theta: ParameterPoint,
}

/// Simulated trajectories, stored row-major as `count × (steps + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBatch {
    grid: TimeGrid,
    x0: f64,
    rng: RngSpec,
    count: usize,
    states: Vec<f64>,
    draws: Option<Vec<StepDraw>>,
}

impl PathBatch {
    /// Builds a batch from explicit paths (all must start at `x0`).
    pub fn from_paths(grid: TimeGrid, x0: f64, paths: &[Vec<f64>]) -> Result<Self, ModelError> {
        let width = grid.steps() + 1;
        let mut states = Vec::with_capacity(paths.len() * width);
        for p in paths {
            if p.len() != width {
                return Err(ModelError::InvalidGrid(format!(
                    "path has {} states but grid has {width} points",
                    p.len()
                )));
            }
            if p[0] != x0 {
                return Err(ModelError::InvalidGrid(format!("path starts at {} instead of {x0}", p[0])));
            }
            states.extend_from_slice(p);
        }
        Ok(Self {
            grid,
            x0,
            rng: RngSpec::new(0, 0),
            count: paths.len(),
            states,
            draws: None,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn rng(&self) -> RngSpec {
        self.rng
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn width(&self) -> usize {
        self.grid.steps() + 1
    }

    pub fn path(&self, b: usize) -> &[f64] {
        let w = self.width();
        &self.states[b * w..(b + 1) * w]
    }

    pub fn paths(&self) -> impl Iterator<Item = &[f64]> {
        self.states.chunks_exact(self.width())
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn draws(&self) -> Option<&[StepDraw]> {
        self.draws.as_deref()
    }

    pub fn path_draws(&self, b: usize) -> Option<&[StepDraw]> {
        let n = self.grid.steps();
        self.draws.as_ref().map(|d| &d[b * n..(b + 1) * n])
    }

    /// Re-runs the Euler recursion from the recorded draws.
    pub fn replay(&self) -> Option<Result<Vec<f64>, ModelError>> {
        let draws = self.draws.as_ref()?;
        let n = self.grid.steps();
        let mut out = Vec::with_capacity(self.states.len());
        for b in 0..self.count {
            let mut x = self.x0;
            out.push(x);
            for i in 0..n {
                let d = &draws[b * n + i];
                x = match d.theta.euler_step(x, self.grid.dt(i), d.dw) {
                    Ok(v) => v,
                    Err(e) => return Some(Err(e)),
                };
                out.push(x);
            }
        }
        Some(Ok(out))
    }

    /// Columnar CSV `t,path_id,x`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "path_id", "x"])?;
        for (b, path) in self.paths().enumerate() {
            for (t, x) in self.grid.times().iter().zip(path) {
                wr.write_record([t.to_string(), b.to_string(), x.to_string()])?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    /// Binary dump: little-endian header `(n: u64, B: u64, x0: f64, seed: u64)`
    /// followed by the row-major `f64` states. Recorded draws are not stored,
    /// and the time grid is restored as uniform on `[0, maturity]`.
    pub fn write_binary<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(&(self.grid.steps() as u64).to_le_bytes())?;
        w.write_all(&(self.count as u64).to_le_bytes())?;
        w.write_all(&self.x0.to_le_bytes())?;
        w.write_all(&self.rng.seed.to_le_bytes())?;
        w.write_all(&self.grid.maturity().to_le_bytes())?;
        for v in &self.states {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> io::Result<Self> {
        let mut buf = [0u8; 8];
        let mut next = |r: &mut R| -> io::Result<[u8; 8]> {
            r.read_exact(&mut buf)?;
            Ok(buf)
        };
        let n = u64::from_le_bytes(next(&mut r)?) as usize;
        let count = u64::from_le_bytes(next(&mut r)?) as usize;
        let x0 = f64::from_le_bytes(next(&mut r)?);
        let seed = u64::from_le_bytes(next(&mut r)?);
        let maturity = f64::from_le_bytes(next(&mut r)?);
        let grid = TimeGrid::uniform(maturity, n)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
        let total = count
            .checked_mul(n + 1)
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "batch size overflow"))?;
        let mut states = Vec::with_capacity(total);
        for _ in 0..total {
            states.push(f64::from_le_bytes(next(&mut r)?));
        }
        Ok(Self {
            grid,
            x0,
            rng: RngSpec::new(seed, 0),
            count,
            states,
            draws: None,
        })
    }
}

#[derive(Debug, Clone)]
pub struct SampleRequest<'a> {
    pub parameter_box: &'a ParameterBox,
    pub x0: f64,
    pub grid: &'a TimeGrid,
    pub count: usize,
    pub rng: RngSpec,
    pub mode: SamplingMode,
    pub record_draws: bool,
}

/// Euler-Maruyama sampling with per-step parameter draws.
///
/// Within a step the draw order is `(dW, gamma, a0, a1, b0, b1)`. Fixed mode
/// consumes the same uniforms and discards them, so a degenerate box in
/// robust mode and fixed mode at that point produce identical paths.
pub fn sample_paths(req: &SampleRequest<'_>) -> Result<PathBatch, ModelError> {
    validate_box(req.parameter_box)?;
    if let SamplingMode::Fixed { theta } = req.mode {
        for p in Param::ALL {
            if !theta.get(p).is_finite() {
                return Err(ModelError::InvalidParameter(format!("{} is not finite", p.name())));
            }
        }
    }
    if req.count == 0 {
        return Err(ModelError::EmptyBatch);
    }
    let n = req.grid.steps();
    let width = n + 1;
    let sqrt_dt: Vec<f64> = (0..n).map(|i| req.grid.dt(i).sqrt()).collect();
    let mut states = vec![0.0; req.count * width];
    let mut draws = if req.record_draws {
        Some(vec![StepDraw { dw: 0.0, theta: ParameterPoint::new(0.0, 0.0, 0.0, 0.0, 0.0) }; req.count * n])
    } else {
        None
    };

    let simulate = |b: usize, row: &mut [f64], mut rec: Option<&mut [StepDraw]>| -> Result<(), ModelError> {
        let mut rng = req.rng.lane(b as u64);
        let mut x = req.x0;
        row[0] = x;
        for i in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            let dw = z * sqrt_dt[i];
            let drawn = req.parameter_box.sample(&mut rng);
            let theta = match req.mode {
                SamplingMode::Robust => drawn,
                SamplingMode::Fixed { theta } => theta,
            };
            x = theta.euler_step(x, req.grid.dt(i), dw)?;
            row[i + 1] = x;
            if let Some(r) = rec.as_deref_mut() {
                r[i] = StepDraw { dw, theta };
            }
        }
        Ok(())
    };

    match draws.as_mut() {
        Some(d) => states
            .par_chunks_mut(width)
            .zip(d.par_chunks_mut(n))
            .enumerate()
            .try_for_each(|(b, (row, rec))| simulate(b, row, Some(rec)))?,
        None => states
            .par_chunks_mut(width)
            .enumerate()
            .try_for_each(|(b, row)| simulate(b, row, None))?,
    }

    Ok(PathBatch {
        grid: req.grid.clone(),
        x0: req.x0,
        rng: req.rng,
        count: req.count,
        states,
        draws,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn box_from(v: [(f64, f64); 5], ss: StateSpace) -> ParameterBox {
        let iv = |p: (f64, f64)| Interval::new(p.0, p.1).unwrap();
        ParameterBox::new(iv(v[0]), iv(v[1]), iv(v[2]), iv(v[3]), iv(v[4]), ss)
    }

    #[test]
    fn drift_examples() {
        assert_eq!(drift(10.0, &ParameterPoint::new(0.0, 0.0, 0.0, 0.0, 1.0)), 0.0);
        assert!((drift(10.0, &ParameterPoint::new(0.2, 0.1, 0.0, 0.0, 1.0)) - 1.2).abs() < 1e-15);
        assert_eq!(drift(-3.0, &ParameterPoint::new(1.0, -1.0, 0.0, 0.0, 1.0)), 4.0);
    }

    #[test]
    fn diffusion_examples() {
        let th = ParameterPoint::new(0.0, 0.0, 0.5, 0.5, 1.0);
        assert_eq!(diffusion(10.0, &th).unwrap(), 5.5);
        assert_eq!(diffusion(-4.0, &th).unwrap(), 0.5);
        let v = diffusion(10.0, &ParameterPoint::new(0.0, 0.0, 0.0, 0.36, 0.5)).unwrap();
        assert!((v * v - 3.6).abs() < 1e-12);
        assert!((v - 1.897_366_596).abs() < 1e-9);
    }

    #[test]
    fn diffusion_rejects_negative_base() {
        let th = ParameterPoint::new(0.0, 0.0, -1.0, 0.0, 1.0);
        assert!(matches!(
            diffusion(1.0, &th),
            Err(ModelError::NegativeVolatilityBase { .. })
        ));
    }

    #[test]
    fn euler_step_examples() {
        let zero = ParameterPoint::new(0.0, 0.0, 0.0, 0.0, 1.0);
        assert_eq!(euler_step(10.0, &zero, 0.1, 0.3).unwrap(), 10.0);
        let pure = ParameterPoint::new(1.0, 0.0, 0.0, 0.0, 1.0);
        assert!((euler_step(10.0, &pure, 0.1, 0.5).unwrap() - 10.1).abs() < 1e-12);
        let th = ParameterPoint::new(0.0, 0.0, 0.5, 0.5, 1.0);
        assert!((euler_step(10.0, &th, 1.0 / 365.0, 0.02).unwrap() - 10.11).abs() < 1e-12);
    }

    #[test]
    fn reference_box_is_numerically_admissible() {
        let r = validate_box(&ParameterBox::reference()).unwrap();
        assert_eq!(r.admissibility, Admissibility::NumericallyAdmissible);
        assert!(r.flags.contains(&BoxFlag::GammaAboveOne));
    }

    #[test]
    fn black_scholes_degenerate_flagged() {
        let b = ParameterBox::degenerate(ParameterPoint::black_scholes(0.05, 0.3), StateSpace::RealLine);
        let r = validate_box(&b).unwrap();
        assert_eq!(r.admissibility, Admissibility::NumericallyAdmissible);
        assert!(r.flags.contains(&BoxFlag::BlackScholesDegenerate));
        assert!(r.flags.contains(&BoxFlag::ZeroVolatilityIntercept));
    }

    #[test]
    fn square_root_feller_violation_is_invalid() {
        let b = box_from(
            [(0.1, 0.2), (0.0, 0.0), (0.1, 0.2), (0.5, 0.5), (0.5, 0.5)],
            StateSpace::PositiveHalfLine,
        );
        match validate_box(&b) {
            Err(ModelError::InvalidBox(v)) => {
                assert_eq!(v.len(), 1);
                assert!(v[0].contains("a1 upper bound"));
            }
            other => panic!("expected invalid, got {other:?}"),
        }
    }

    #[test]
    fn proper_conditions_recognised() {
        let i = box_from(
            [(-0.1, 0.1), (0.0, 0.0), (0.2, 0.3), (0.1, 0.2), (0.5, 1.0)],
            StateSpace::RealLine,
        );
        assert_eq!(
            validate_box(&i).unwrap().admissibility,
            Admissibility::TheoryProper(ProperCondition::RealLinePositiveIntercept)
        );
        let ii = box_from(
            [(0.3, 0.4), (0.0, 0.0), (0.1, 0.2), (0.5, 0.5), (0.5, 0.5)],
            StateSpace::PositiveHalfLine,
        );
        assert_eq!(
            validate_box(&ii).unwrap().admissibility,
            Admissibility::TheoryProper(ProperCondition::SquareRootFeller)
        );
        let iii = box_from(
            [(0.1, 0.2), (-0.1, 0.1), (0.0, 0.0), (0.2, 0.3), (0.6, 1.0)],
            StateSpace::PositiveHalfLine,
        );
        assert_eq!(
            validate_box(&iii).unwrap().admissibility,
            Admissibility::TheoryProper(ProperCondition::PowerNoIntercept)
        );
    }

    #[test]
    fn negative_intercept_on_half_line_is_invalid() {
        let b = box_from(
            [(0.1, 0.2), (0.0, 0.0), (-0.1, 0.0), (0.2, 0.3), (0.6, 1.0)],
            StateSpace::PositiveHalfLine,
        );
        assert!(validate_box(&b).is_err());
    }

    #[test]
    fn interval_rejects_reversed_bounds() {
        assert!(Interval::new(1.0, 0.0).is_err());
        assert!(Interval::new(f64::NAN, 0.0).is_err());
        assert!(Interval::new(1.0, 1.0).unwrap().is_degenerate());
    }

    #[test]
    fn grid_validation() {
        assert!(TimeGrid::new(vec![0.0]).is_err());
        assert!(TimeGrid::new(vec![0.0, 0.0]).is_err());
        assert!(TimeGrid::new(vec![0.0, 0.2, 0.1]).is_err());
        assert!(TimeGrid::new(vec![0.1, 0.2]).is_err());
        let g = TimeGrid::new(vec![0.0, 0.0, 0.5]).unwrap();
        assert_eq!(g.steps(), 2);
        let u = TimeGrid::uniform(30.0 / 365.0, 30).unwrap();
        assert_eq!(u.maturity(), 30.0 / 365.0);
    }

    fn request<'a>(b: &'a ParameterBox, g: &'a TimeGrid, count: usize, mode: SamplingMode) -> SampleRequest<'a> {
        SampleRequest {
            parameter_box: b,
            x0: 10.0,
            grid: g,
            count,
            rng: RngSpec::new(7, 1),
            mode,
            record_draws: true,
        }
    }

    #[test]
    fn degenerate_zero_box_gives_constant_paths() {
        let b = ParameterBox::degenerate(ParameterPoint::new(0.0, 0.0, 0.0, 0.0, 1.0), StateSpace::RealLine);
        let g = TimeGrid::uniform(1.0, 20).unwrap();
        let batch = sample_paths(&request(&b, &g, 16, SamplingMode::Robust)).unwrap();
        assert!(batch.states().iter().all(|x| *x == 10.0));
    }

    #[test]
    fn empty_batch_rejected() {
        let b = ParameterBox::reference();
        let g = TimeGrid::uniform(1.0, 4).unwrap();
        assert!(matches!(
            sample_paths(&request(&b, &g, 0, SamplingMode::Robust)),
            Err(ModelError::EmptyBatch)
        ));
    }

    #[test]
    fn replay_and_domination_hold() {
        let b = ParameterBox::reference();
        let g = TimeGrid::uniform(30.0 / 365.0, 30).unwrap();
        let batch = sample_paths(&request(&b, &g, 64, SamplingMode::Robust)).unwrap();
        assert_eq!(batch.replay().unwrap().unwrap(), batch.states());
        for bi in 0..batch.len() {
            let path = batch.path(bi);
            assert_eq!(path[0], 10.0);
            for (i, d) in batch.path_draws(bi).unwrap().iter().enumerate() {
                let x = path[i];
                let (dlo, dhi) = b.drift_range(x);
                let dr = d.theta.drift(x);
                assert!(dr >= dlo - 1e-12 && dr <= dhi + 1e-12);
                let (slo, shi) = b.squared_diffusion_range(x).unwrap();
                let s = d.theta.diffusion(x).unwrap().powi(2);
                assert!(s >= slo * (1.0 - 1e-12) && s <= shi * (1.0 + 1e-12));
                assert!(b.contains(&d.theta));
            }
        }
    }

    #[test]
    fn fixed_mode_matches_degenerate_robust_mode() {
        let theta = ParameterPoint::new(0.0, 0.05, 0.1, 0.4, 1.0);
        let b = ParameterBox::degenerate(theta, StateSpace::RealLine);
        let g = TimeGrid::uniform(0.5, 25).unwrap();
        let robust = sample_paths(&request(&b, &g, 32, SamplingMode::Robust)).unwrap();
        let wide = ParameterBox::reference();
        let fixed = sample_paths(&request(&wide, &g, 32, SamplingMode::Fixed { theta })).unwrap();
        assert_eq!(robust.states(), fixed.states());
    }

    #[test]
    fn lanes_are_independent_of_batch_size() {
        let b = ParameterBox::reference();
        let g = TimeGrid::uniform(0.1, 10).unwrap();
        let small = sample_paths(&request(&b, &g, 5, SamplingMode::Robust)).unwrap();
        let large = sample_paths(&request(&b, &g, 50, SamplingMode::Robust)).unwrap();
        assert_eq!(small.states(), &large.states()[..small.states().len()]);
    }

    #[test]
    fn binary_dump_round_trip() {
        let b = ParameterBox::reference();
        let g = TimeGrid::uniform(0.25, 12).unwrap();
        let batch = sample_paths(&request(&b, &g, 9, SamplingMode::Robust)).unwrap();
        let mut buf = Vec::new();
        batch.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 40 + 9 * 13 * 8);
        let back = PathBatch::read_binary(buf.as_slice()).unwrap();
        assert_eq!(back.states(), batch.states());
        assert_eq!(back.x0(), 10.0);
        assert_eq!(back.rng().seed, 7);
    }

    #[test]
    fn csv_layout() {
        let g = TimeGrid::uniform(1.0, 2).unwrap();
        let batch = PathBatch::from_paths(g, 1.0, &[vec![1.0, 2.0, 3.0]]).unwrap();
        let mut buf = Vec::new();
        batch.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s, "t,path_id,x\n0,0,1\n0.5,0,2\n1,0,3\n");
    }

    #[test]
    fn corners_enumerate_all_endpoints() {
        let b = ParameterBox::reference();
        let c = b.corners();
        for p in Param::ALL {
            let lo = c.iter().filter(|t| t.get(p) == b.interval(p).lo()).count();
            assert_eq!(lo, 16);
        }
    }

    proptest! {
        #[test]
        fn sampling_is_deterministic(seed in any::<u64>(), stream in any::<u64>()) {
            let b = ParameterBox::reference();
            let g = TimeGrid::uniform(0.1, 6).unwrap();
            let mut req = request(&b, &g, 4, SamplingMode::Robust);
            req.rng = RngSpec::new(seed, stream);
            let a = sample_paths(&req).unwrap();
            let c = sample_paths(&req).unwrap();
            prop_assert_eq!(a, c);
        }

        #[test]
        fn samples_stay_in_box(seed in any::<u64>()) {
            let b = ParameterBox::reference();
            let mut rng = RngSpec::new(seed, 0).lane(0);
            for _ in 0..32 {
                let th = b.sample(&mut rng);
                prop_assert!(b.contains(&th));
            }
        }
    }
}
