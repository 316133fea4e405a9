//! Robust price bounds from the nonlinear Kolmogorov equation
//! `∂_t u + G(x, ∂_x u, ∂_xx u) = 0`, `u(T, ·) = ψ`, solved backwards with an
//! explicit finite-difference scheme.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, PdeError};
use crate::payoffs::PayoffSpec;
use crate::process::{ParameterBox, StateSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Supremum over the box: upper price.
    Upper,
    /// Infimum over the box: lower price.
    Lower,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorQuery {
    pub x: f64,
    pub p: f64,
    pub q: f64,
}

impl GeneratorQuery {
    pub fn new(x: f64, p: f64, q: f64) -> Self {
        Self { x, p, q }
    }
}

/// Optimum of `(b0 + b1 x) p + ½ (a0 + a1 x^+)^(2γ) q` over the box,
/// by enumerating all 32 corners.
pub fn generator_sup(b: &ParameterBox, query: GeneratorQuery, direction: Direction) -> Result<f64, ModelError> {
    let GeneratorQuery { x, p, q } = query;
    let mut best = match direction {
        Direction::Upper => f64::NEG_INFINITY,
        Direction::Lower => f64::INFINITY,
    };
    for theta in b.corners() {
        let v = theta.drift(x) * p + 0.5 * theta.squared_diffusion(x)? * q;
        best = match direction {
            Direction::Upper => best.max(v),
            Direction::Lower => best.min(v),
        };
    }
    Ok(best)
}

/// Per-node coefficient ranges. The generator objective separates into a
/// drift part in `(b0, b1)` and a diffusion part in `(a0, a1, γ)`, so its
/// optimum is the sum of the two partial optima.
#[derive(Debug, Clone, Copy, PartialEq)]
struct NodeRanges {
    drift: (f64, f64),
    sq_diffusion: (f64, f64),
}

impl NodeRanges {
    fn new(b: &ParameterBox, x: f64) -> Result<Self, ModelError> {
        Ok(Self {
            drift: b.drift_range(x),
            sq_diffusion: b.squared_diffusion_range(x)?,
        })
    }

    #[inline]
    fn generator(&self, p: f64, q: f64, direction: Direction) -> f64 {
        let (bl, bh) = self.drift;
        let (sl, sh) = self.sq_diffusion;
        match direction {
            Direction::Upper => (bl * p).max(bh * p) + 0.5 * (sl * q).max(sh * q),
            Direction::Lower => (bl * p).min(bh * p) + 0.5 * (sl * q).min(sh * q),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryPolicy {
    /// `∂_xx u = 0` at both ends, i.e. linear extrapolation from the interior.
    Linear,
    /// Boundary values pinned to the terminal payoff.
    DirichletPayoff,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PdeConfig {
    /// Number of spatial intervals `m` (there are `m + 1` nodes).
    pub intervals: usize,
    /// Half-width of the default domain in units of `σ̄ √T`.
    pub width_sigmas: f64,
    /// Explicit `[x_lo, x_hi]`, overriding the default domain.
    pub domain: Option<[f64; 2]>,
    pub cfl_safety: f64,
    /// Requested number of time steps; the CFL bound may increase it.
    pub time_steps: Option<usize>,
    /// Refine the time step when the request violates the CFL bound instead
    /// of failing.
    pub auto_shrink: bool,
    pub boundary: BoundaryPolicy,
    /// Number of time layers kept in the returned surface (at least 2).
    pub stored_layers: usize,
}

impl Default for PdeConfig {
    fn default() -> Self {
        Self {
            intervals: 400,
            width_sigmas: 8.0,
            domain: None,
            cfl_safety: 0.9,
            time_steps: None,
            auto_shrink: true,
            boundary: BoundaryPolicy::Linear,
            stored_layers: 31,
        }
    }
}

impl PdeConfig {
    fn validate(&self) -> Result<(), PdeError> {
        if self.intervals < 2 {
            return Err(PdeError::InvalidGrid("need at least 2 spatial intervals".into()));
        }
        if !(self.width_sigmas > 0.0 && self.width_sigmas.is_finite()) {
            return Err(PdeError::InvalidGrid("width_sigmas must be positive".into()));
        }
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(PdeError::InvalidGrid("cfl_safety must lie in (0, 1]".into()));
        }
        if let Some([lo, hi]) = self.domain {
            if !(lo < hi && lo.is_finite() && hi.is_finite()) {
                return Err(PdeError::InvalidGrid(format!("domain [{lo}, {hi}] is empty")));
            }
        }
        if self.time_steps == Some(0) {
            return Err(PdeError::InvalidGrid("time_steps must be positive".into()));
        }
        if self.stored_layers < 2 {
            return Err(PdeError::InvalidGrid("stored_layers must be at least 2".into()));
        }
        Ok(())
    }
}

/// Grid actually used by a solve, echoed into every report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridEcho {
    pub x_lo: f64,
    pub x_hi: f64,
    pub intervals: usize,
    pub dx: f64,
    pub time_steps: usize,
    pub dt: f64,
    pub maturity: f64,
    pub boundary: BoundaryPolicy,
    pub direction: Direction,
}

/// Value surface on stored time layers, `values[k][j] = u(times[k], xs[j])`.
#[derive(Debug, Clone, PartialEq)]
pub struct PdeSolution {
    pub grid: GridEcho,
    pub xs: Vec<f64>,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl PdeSolution {
    /// `u(0, x)` by linear interpolation.
    pub fn value_at(&self, x: f64) -> Option<f64> {
        interpolate(&self.xs, &self.values[0], x)
    }

    /// `u(times[k], x)` by linear interpolation.
    pub fn value_at_layer(&self, k: usize, x: f64) -> Option<f64> {
        interpolate(&self.xs, self.values.get(k)?, x)
    }

    /// CSV with header `t,x,u`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "x", "u"])?;
        for (t, layer) in self.times.iter().zip(&self.values) {
            for (x, u) in self.xs.iter().zip(layer) {
                wr.write_record([t.to_string(), x.to_string(), u.to_string()])?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

fn interpolate(xs: &[f64], us: &[f64], x: f64) -> Option<f64> {
    let (lo, hi) = (xs[0], *xs.last()?);
    if !(x >= lo && x <= hi) {
        return None;
    }
    let dx = (hi - lo) / (xs.len() - 1) as f64;
    let j = (((x - lo) / dx).floor() as usize).min(xs.len() - 2);
    let w = (x - xs[j]) / dx;
    Some((1.0 - w) * us[j] + w * us[j + 1])
}

/// Default domain `x0 ± k σ̄ √T`, where `σ̄` is the largest diffusion over
/// the box at `x0`, clipped to the state space.
pub fn default_domain(b: &ParameterBox, x0: f64, maturity: f64, width_sigmas: f64) -> Result<[f64; 2], ModelError> {
    let sigma = b.max_diffusion(x0)?.max(1e-8 * x0.abs().max(1.0));
    let half = width_sigmas * sigma * maturity.sqrt();
    let mut lo = x0 - half;
    if b.state_space == StateSpace::PositiveHalfLine {
        lo = lo.max(0.0);
    }
    Ok([lo, x0 + half])
}

/// Explicit backward Euler in time with central differences in space.
pub fn solve_pde(
    b: &ParameterBox,
    spec: &PayoffSpec,
    x0: f64,
    maturity: f64,
    config: &PdeConfig,
    direction: Direction,
) -> Result<PdeSolution, PdeError> {
    config.validate()?;
    spec.validate().map_err(|e| PdeError::InvalidGrid(e.to_string()))?;
    let psi = spec.terminal_function().ok_or(PdeError::PathDependentPayoff)?;
    if !(maturity > 0.0 && maturity.is_finite()) {
        return Err(PdeError::InvalidGrid(format!("maturity {maturity} must be positive")));
    }
    let [x_lo, x_hi] = match config.domain {
        Some(d) => d,
        None => default_domain(b, x0, maturity, config.width_sigmas)?,
    };
    let m = config.intervals;
    let dx = (x_hi - x_lo) / m as f64;
    let xs: Vec<f64> = (0..=m).map(|j| x_lo + dx * j as f64).collect();
    let ranges = xs
        .iter()
        .map(|x| NodeRanges::new(b, *x))
        .collect::<Result<Vec<_>, _>>()?;

    let max_sq = ranges.iter().map(|r| r.sq_diffusion.1).fold(0.0, f64::max);
    let bound = if max_sq > 0.0 { dx * dx / max_sq } else { f64::INFINITY };
    let cfl_steps = if bound.is_finite() {
        (maturity / (config.cfl_safety * bound)).ceil() as usize
    } else {
        1
    };
    let time_steps = match config.time_steps {
        Some(n) if maturity / n as f64 <= bound => n,
        Some(n) => {
            let dt = maturity / n as f64;
            if !config.auto_shrink {
                return Err(PdeError::CflViolation { dt, bound });
            }
            tracing::warn!(dt, bound, steps = cfl_steps, "time step violates CFL bound, refining");
            cfl_steps
        }
        None => cfl_steps.max(1),
    };
    let dt = maturity / time_steps as f64;

    let stored = store_schedule(time_steps, config.stored_layers);
    let mut times = Vec::with_capacity(stored.len());
    let mut values = Vec::with_capacity(stored.len());

    let mut u: Vec<f64> = xs.iter().map(|x| psi.eval(*x)).collect();
    let mut next = vec![0.0; m + 1];
    let mut store_iter = stored.iter().rev().peekable();
    // layers are produced from maturity backwards; step index k means t = T - k dt
    let push = |k: usize, u: &[f64], times: &mut Vec<f64>, values: &mut Vec<Vec<f64>>| {
        times.push(maturity - dt * k as f64);
        values.push(u.to_vec());
    };
    let mut k = 0;
    if store_iter.peek() == Some(&&time_steps) {
        push(0, &u, &mut times, &mut values);
        store_iter.next();
    }
    let inv_2dx = 0.5 / dx;
    let inv_dx2 = 1.0 / (dx * dx);
    while k < time_steps {
        next[1..m]
            .par_iter_mut()
            .with_min_len(4096)
            .enumerate()
            .for_each(|(i, out)| {
                let j = i + 1;
                let p = (u[j + 1] - u[j - 1]) * inv_2dx;
                let q = (u[j + 1] - 2.0 * u[j] + u[j - 1]) * inv_dx2;
                *out = u[j] + dt * ranges[j].generator(p, q, direction);
            });
        match config.boundary {
            BoundaryPolicy::Linear => {
                next[0] = 2.0 * next[1] - next[2];
                next[m] = 2.0 * next[m - 1] - next[m - 2];
            }
            BoundaryPolicy::DirichletPayoff => {
                next[0] = psi.eval(xs[0]);
                next[m] = psi.eval(xs[m]);
            }
        }
        std::mem::swap(&mut u, &mut next);
        k += 1;
        if store_iter.peek() == Some(&&(time_steps - k)) {
            push(k, &u, &mut times, &mut values);
            store_iter.next();
        }
    }
    times.reverse();
    values.reverse();
    if let Some(t0) = times.first_mut() {
        *t0 = 0.0;
    }
    Ok(PdeSolution {
        grid: GridEcho {
            x_lo,
            x_hi,
            intervals: m,
            dx,
            time_steps,
            dt,
            maturity,
            boundary: config.boundary,
            direction,
        },
        xs,
        times,
        values,
    })
}

/// Time-layer indices (counted forward from 0 to `steps`) kept in the
/// surface, evenly spread and always including both ends.
fn store_schedule(steps: usize, layers: usize) -> Vec<usize> {
    let layers = layers.min(steps + 1);
    let mut out: Vec<usize> = (0..layers)
        .map(|k| ((k as f64) * steps as f64 / (layers - 1) as f64).round() as usize)
        .collect();
    out.dedup();
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceBounds {
    pub x0: f64,
    pub lower: f64,
    pub upper: f64,
    pub grid: GridEcho,
}

/// Lower and upper robust prices at `(0, x0)`.
pub fn price_bounds(
    b: &ParameterBox,
    spec: &PayoffSpec,
    x0: f64,
    maturity: f64,
    config: &PdeConfig,
) -> Result<PriceBounds, PdeError> {
    let upper = solve_pde(b, spec, x0, maturity, config, Direction::Upper)?;
    let lower = solve_pde(b, spec, x0, maturity, config, Direction::Lower)?;
    let read = |s: &PdeSolution| {
        s.value_at(x0)
            .ok_or_else(|| PdeError::InvalidGrid(format!("x0 = {x0} lies outside the domain")))
    };
    Ok(PriceBounds {
        x0,
        lower: read(&lower)?,
        upper: read(&upper)?,
        grid: upper.grid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process::{Interval, Param, ParameterPoint};
    use proptest::prelude::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn bs_box(sigma: f64) -> ParameterBox {
        ParameterBox::degenerate(ParameterPoint::black_scholes(0.0, sigma), StateSpace::RealLine)
    }

    fn bs_call(x: f64, k: f64, sigma: f64, t: f64) -> f64 {
        let n = Normal::new(0.0, 1.0).unwrap();
        let d1 = ((x / k).ln() + 0.5 * sigma * sigma * t) / (sigma * t.sqrt());
        let d2 = d1 - sigma * t.sqrt();
        x * n.cdf(d1) - k * n.cdf(d2)
    }

    const T: f64 = 30.0 / 365.0;

    #[test]
    fn generator_examples() {
        let r = ParameterBox::reference();
        for x in [-3.0, 0.0, 10.0] {
            assert_eq!(generator_sup(&r, GeneratorQuery::new(x, 0.0, 0.0), Direction::Upper).unwrap(), 0.0);
        }
        let v = generator_sup(&bs_box(0.5), GeneratorQuery::new(2.0, 1.0, 1.0), Direction::Upper).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
        let v = generator_sup(&r, GeneratorQuery::new(10.0, 1.0, 1.0), Direction::Upper).unwrap();
        assert!((v - (1.2 + 0.5 * 6.7f64.powi(3))).abs() < 1e-9);
        assert!((v - 151.58).abs() < 0.01);
        let v = generator_sup(&r, GeneratorQuery::new(0.0, 0.0, -1.0), Direction::Upper).unwrap();
        assert!((v + 0.0135).abs() < 1e-12);
    }

    #[test]
    fn separable_form_matches_corner_enumeration() {
        let r = ParameterBox::reference();
        for &x in &[-5.0, -0.1, 0.0, 0.7, 1.0, 3.0, 10.0, 40.0] {
            let ranges = NodeRanges::new(&r, x).unwrap();
            for &(p, q) in &[(1.0, 1.0), (-1.0, 2.0), (0.3, -4.0), (-2.0, -0.5), (0.0, 1.0)] {
                for d in [Direction::Upper, Direction::Lower] {
                    let full = generator_sup(&r, GeneratorQuery::new(x, p, q), d).unwrap();
                    let fast = ranges.generator(p, q, d);
                    assert!((full - fast).abs() <= 1e-12 * full.abs().max(1.0), "x={x} p={p} q={q}");
                }
            }
        }
    }

    #[test]
    fn negative_base_rejected() {
        let mut b = ParameterBox::reference();
        *b.interval_mut(Param::A0) = Interval::new(-1.0, 0.5).unwrap();
        assert!(generator_sup(&b, GeneratorQuery::new(0.0, 1.0, 1.0), Direction::Upper).is_err());
    }

    #[test]
    fn constant_payoff_stays_constant() {
        // a butterfly with a single point of support far away is identically zero on the domain
        let spec = PayoffSpec::Butterfly { k: [100.0, 101.0, 102.0] };
        let cfg = PdeConfig {
            intervals: 100,
            ..PdeConfig::default()
        };
        let s = solve_pde(&ParameterBox::reference(), &spec, 10.0, T, &cfg, Direction::Upper).unwrap();
        assert!(s.values.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn black_scholes_oracle() {
        let s = solve_pde(&bs_box(0.5), &PayoffSpec::Call { strike: 10.0 }, 10.0, T, &PdeConfig::default(), Direction::Upper)
            .unwrap();
        let exact = bs_call(10.0, 10.0, 0.5, T);
        assert!((exact - 0.5717).abs() < 1e-3);
        let fd = s.value_at(10.0).unwrap();
        assert!((fd - exact).abs() < 0.01 * exact, "fd {fd} exact {exact}");
    }

    #[test]
    fn grid_convergence_black_scholes() {
        let spec = PayoffSpec::Call { strike: 10.0 };
        let coarse = PdeConfig {
            intervals: 200,
            ..PdeConfig::default()
        };
        let fine = PdeConfig {
            intervals: 400,
            ..PdeConfig::default()
        };
        let a = price_bounds(&bs_box(0.5), &spec, 10.0, T, &coarse).unwrap();
        let b = price_bounds(&bs_box(0.5), &spec, 10.0, T, &fine).unwrap();
        assert!((a.upper - b.upper).abs() < 5e-3);
        let exact = bs_call(10.0, 10.0, 0.5, T);
        assert!((b.upper - exact).abs() <= (a.upper - exact).abs() + 1e-4);
    }

    #[test]
    fn degenerate_box_has_single_price() {
        let p = price_bounds(&bs_box(0.5), &PayoffSpec::Call { strike: 10.0 }, 10.0, T, &PdeConfig::default()).unwrap();
        assert!((p.upper - p.lower).abs() < 1e-12);
    }

    #[test]
    fn bounds_ordered_on_reference_box() {
        let r = ParameterBox::reference();
        for spec in [PayoffSpec::Call { strike: 10.0 }, PayoffSpec::Butterfly { k: [8.0, 10.0, 12.0] }] {
            let up = solve_pde(&r, &spec, 10.0, T, &PdeConfig::default(), Direction::Upper).unwrap();
            let lo = solve_pde(&r, &spec, 10.0, T, &PdeConfig::default(), Direction::Lower).unwrap();
            // linear extrapolation perturbs the outermost nodes, so check the central region
            for ((a, b), x) in up.values[0].iter().zip(&lo.values[0]).zip(&up.xs) {
                if (x - 10.0).abs() <= 10.0 {
                    assert!(a + 1e-12 >= *b, "x={x} up={a} lo={b}");
                }
            }
        }
    }

    #[test]
    fn butterfly_upper_is_strictly_subadditive() {
        let r = ParameterBox::reference();
        let cfg = PdeConfig::default();
        let c = |k: f64| price_bounds(&r, &PayoffSpec::Call { strike: k }, 10.0, T, &cfg).unwrap();
        let fly = price_bounds(&r, &PayoffSpec::Butterfly { k: [8.0, 10.0, 12.0] }, 10.0, T, &cfg).unwrap();
        let combo = c(8.0).upper + c(12.0).upper - 2.0 * c(10.0).lower;
        assert!(fly.upper < combo - 0.05, "fly {} combo {combo}", fly.upper);
    }

    #[test]
    fn widening_an_interval_widens_bounds() {
        let r = ParameterBox::reference();
        let spec = PayoffSpec::Call { strike: 10.0 };
        let cfg = PdeConfig {
            domain: Some([-40.0, 60.0]),
            ..PdeConfig::default()
        };
        let base = price_bounds(&r, &spec, 10.0, T, &cfg).unwrap();
        for param in Param::ALL {
            let mut wide = r.clone();
            let iv = r.interval(param);
            *wide.interval_mut(param) = Interval::new(iv.lo() - 0.05, iv.hi() + 0.05).unwrap();
            let w = price_bounds(&wide, &spec, 10.0, T, &cfg).unwrap();
            assert!(w.upper >= base.upper - 1e-9, "{param:?}");
            assert!(w.lower <= base.lower + 1e-9, "{param:?}");
        }
    }

    #[test]
    fn comparison_principle() {
        let r = ParameterBox::reference();
        let cfg = PdeConfig::default();
        // (x - 11)^+ <= (x - 10)^+ pointwise
        let lo = solve_pde(&r, &PayoffSpec::Call { strike: 11.0 }, 10.0, T, &cfg, Direction::Upper).unwrap();
        let hi = solve_pde(&r, &PayoffSpec::Call { strike: 10.0 }, 10.0, T, &cfg, Direction::Upper).unwrap();
        for (layer_lo, layer_hi) in lo.values.iter().zip(&hi.values) {
            for (a, b) in layer_lo.iter().zip(layer_hi) {
                assert!(a <= &(b + 1e-12));
            }
        }
    }

    #[test]
    fn cfl_violation_without_shrink() {
        let cfg = PdeConfig {
            time_steps: Some(5),
            auto_shrink: false,
            ..PdeConfig::default()
        };
        let r = solve_pde(&bs_box(0.5), &PayoffSpec::Call { strike: 10.0 }, 10.0, T, &cfg, Direction::Upper);
        assert!(matches!(r, Err(PdeError::CflViolation { .. })));
        let cfg = PdeConfig {
            auto_shrink: true,
            ..cfg
        };
        let s = solve_pde(&bs_box(0.5), &PayoffSpec::Call { strike: 10.0 }, 10.0, T, &cfg, Direction::Upper).unwrap();
        assert!(s.grid.dt <= s.grid.dx * s.grid.dx / (0.5f64 * s.grid.x_hi).powi(2));
    }

    #[test]
    fn path_dependent_rejected() {
        let r = solve_pde(
            &ParameterBox::reference(),
            &PayoffSpec::LookbackCall { strike: 12.0 },
            10.0,
            T,
            &PdeConfig::default(),
            Direction::Upper,
        );
        assert_eq!(r.unwrap_err(), PdeError::PathDependentPayoff);
    }

    #[test]
    fn surface_layers_and_csv() {
        let cfg = PdeConfig {
            intervals: 10,
            stored_layers: 3,
            ..PdeConfig::default()
        };
        let s = solve_pde(&bs_box(0.5), &PayoffSpec::Call { strike: 10.0 }, 10.0, T, &cfg, Direction::Upper).unwrap();
        assert_eq!(s.times.len(), 3);
        assert_eq!(s.times[0], 0.0);
        assert!((s.times[2] - T).abs() < 1e-15);
        let psi = PayoffSpec::Call { strike: 10.0 }.terminal_function().unwrap();
        for (x, u) in s.xs.iter().zip(&s.values[2]) {
            assert_eq!(*u, psi.eval(*x));
        }
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,x,u\n0,"));
        assert_eq!(text.lines().count(), 1 + 3 * 11);
    }

    #[test]
    fn positive_half_line_domain_clipped() {
        let b = ParameterBox::degenerate(ParameterPoint::new(0.5, 0.0, 0.0, 0.3, 0.5), StateSpace::PositiveHalfLine);
        let d = default_domain(&b, 0.1, 1.0, 8.0).unwrap();
        assert_eq!(d[0], 0.0);
    }

    #[test]
    fn schedule_keeps_ends() {
        assert_eq!(store_schedule(10, 3), vec![0, 5, 10]);
        assert_eq!(store_schedule(2, 31), vec![0, 1, 2]);
    }

    fn box_strategy() -> impl Strategy<Value = ParameterBox> {
        let iv = |lo: f64, hi: f64| (lo..hi, 0.0..(hi - lo)).prop_map(|(a, w)| Interval::new(a, a + w).unwrap());
        (iv(-0.5, 0.5), iv(-0.2, 0.2), iv(0.05, 1.0), iv(0.0, 1.0), iv(0.5, 1.5)).prop_map(|(b0, b1, a0, a1, g)| {
            let mut b = ParameterBox::reference();
            *b.interval_mut(Param::B0) = b0;
            *b.interval_mut(Param::B1) = b1;
            *b.interval_mut(Param::A0) = a0;
            *b.interval_mut(Param::A1) = a1;
            *b.interval_mut(Param::Gamma) = g;
            b
        })
    }

    proptest! {
        #[test]
        fn upper_dominates_lower(b in box_strategy(), x in -20.0f64..40.0, p in -5.0f64..5.0, q in -5.0f64..5.0) {
            let q_ = GeneratorQuery::new(x, p, q);
            prop_assert!(generator_sup(&b, q_, Direction::Upper).unwrap() >= generator_sup(&b, q_, Direction::Lower).unwrap());
        }

        #[test]
        fn positively_homogeneous(x in -20.0f64..40.0, p in -5.0f64..5.0, q in -5.0f64..5.0, lambda in 0.0f64..10.0) {
            let r = ParameterBox::reference();
            for d in [Direction::Upper, Direction::Lower] {
                let g = generator_sup(&r, GeneratorQuery::new(x, p, q), d).unwrap();
                let gl = generator_sup(&r, GeneratorQuery::new(x, lambda * p, lambda * q), d).unwrap();
                prop_assert!((gl - lambda * g).abs() <= 1e-9 * gl.abs().max(1.0));
            }
        }

        #[test]
        fn lower_is_negated_upper(b in box_strategy(), x in -20.0f64..40.0, p in -5.0f64..5.0, q in -5.0f64..5.0) {
            let lo = generator_sup(&b, GeneratorQuery::new(x, p, q), Direction::Lower).unwrap();
            let up = generator_sup(&b, GeneratorQuery::new(x, -p, -q), Direction::Upper).unwrap();
            prop_assert!((lo + up).abs() <= 1e-12 * lo.abs().max(1.0));
        }
    }
}
