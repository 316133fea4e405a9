//! Synthetic regime-switching price data standing in for market closes.
//!
//! Each ticker runs through a turbulent regime, then a calm regime that
//! covers the most recent estimation windows, and finally a stressed test
//! regime for the hedging horizon. The latest window therefore understates
//! the risk realised out of sample.

use chrono::NaiveDate;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::config::FieldError;
use crate::error::EstimationError;
use crate::estimation::{PriceSeries, DAILY_DT};
use crate::process::{ParameterPoint, RngSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub tickers: usize,
    /// Initial price range; each ticker draws uniformly from it.
    pub x0_range: [f64; 2],
    pub turbulent: ParameterPoint,
    pub calm: ParameterPoint,
    pub stress: ParameterPoint,
    pub turbulent_days: usize,
    pub calm_days: usize,
    pub test_days: usize,
    /// Relative per-ticker jitter applied to every regime parameter.
    pub jitter: f64,
    pub start_date: NaiveDate,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            tickers: 10,
            x0_range: [8.0, 12.0],
            turbulent: ParameterPoint::new(0.0, -0.3, 0.3, 0.35, 1.0),
            calm: ParameterPoint::new(0.0, 0.05, 0.1, 0.15, 1.0),
            stress: ParameterPoint::new(0.0, -1.0, 0.3, 0.4, 1.0),
            turbulent_days: 500,
            calm_days: 400,
            test_days: 30,
            jitter: 0.1,
            start_date: NaiveDate::from_ymd_opt(2018, 1, 1).expect("valid date"),
            seed: 2020,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Vec<FieldError> {
        let mut errs = Vec::new();
        let mut push = |f: &str, m: &str| {
            errs.push(FieldError {
                field: f.into(),
                message: m.into(),
            })
        };
        if self.tickers == 0 {
            push("tickers", "must be at least 1");
        }
        let [lo, hi] = self.x0_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            push("x0_range", "must be a positive, ordered range");
        }
        for (name, t) in [("turbulent", &self.turbulent), ("calm", &self.calm), ("stress", &self.stress)] {
            if t.a0 < 0.0 || t.a1 < 0.0 || t.to_array().iter().any(|v| !v.is_finite()) {
                push(name, "needs finite parameters with a0, a1 >= 0");
            }
        }
        if self.calm_days == 0 {
            push("calm_days", "must be at least 1");
        }
        if self.test_days == 0 {
            push("test_days", "must be at least 1");
        }
        if !(0.0..1.0).contains(&self.jitter) {
            push("jitter", "must lie in [0, 1)");
        }
        errs
    }

    pub fn total_days(&self) -> usize {
        self.turbulent_days + self.calm_days + self.test_days + 1
    }
}

fn jittered<R: Rng>(theta: &ParameterPoint, jitter: f64, rng: &mut R) -> ParameterPoint {
    let mut v = theta.to_array();
    for x in &mut v {
        *x *= 1.0 + jitter * (2.0 * rng.random::<f64>() - 1.0);
    }
    ParameterPoint::from_array(v)
}

/// Generates one close series per ticker on a shared business-day calendar.
/// Prices are floored at a thousandth of the initial value.
pub fn generate(config: &SyntheticConfig) -> Result<Vec<PriceSeries>, EstimationError> {
    let errs = config.validate();
    if let Some(e) = errs.first() {
        return Err(EstimationError::InvalidConfig(format!("synthetic.{e}")));
    }
    let n = config.total_days();
    let dates = business_days(config.start_date, n);
    (0..config.tickers)
        .map(|k| {
            let mut rng = RngSpec::new(config.seed, k as u64).lane(0);
            let [lo, hi] = config.x0_range;
            let x0 = lo + (hi - lo) * rng.random::<f64>();
            let regimes = [
                (jittered(&config.turbulent, config.jitter, &mut rng), config.turbulent_days),
                (jittered(&config.calm, config.jitter, &mut rng), config.calm_days),
                (jittered(&config.stress, config.jitter, &mut rng), config.test_days),
            ];
            let floor = 1e-3 * x0;
            let mut closes = Vec::with_capacity(n);
            closes.push(x0);
            let mut x = x0;
            for (theta, days) in regimes {
                for _ in 0..days {
                    let z: f64 = rng.sample(StandardNormal);
                    x = theta
                        .euler_step(x, DAILY_DT, z * DAILY_DT.sqrt())
                        .map_err(|e| EstimationError::InvalidConfig(e.to_string()))?
                        .max(floor);
                    closes.push(x);
                }
            }
            PriceSeries::new(format!("SYN{:02}", k + 1), dates.clone(), closes, DAILY_DT)
        })
        .collect()
}

fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    use chrono::Datelike;
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if d.weekday().number_from_monday() <= 5 {
            out.push(d);
        }
        d = d.succ_opt().expect("date in range");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_sized() {
        let c = SyntheticConfig::default();
        let a = generate(&c).unwrap();
        let b = generate(&c).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        assert!(a.iter().all(|s| s.len() == c.total_days()));
        assert_eq!(a[0].ticker(), "SYN01");
    }

    #[test]
    fn calendar_skips_weekends() {
        use chrono::Datelike;
        let d = business_days(NaiveDate::from_ymd_opt(2024, 1, 5).unwrap(), 3);
        assert_eq!(d[1].weekday(), chrono::Weekday::Mon);
    }

    #[test]
    fn invalid_config_rejected() {
        let c = SyntheticConfig {
            tickers: 0,
            ..SyntheticConfig::default()
        };
        assert!(generate(&c).is_err());
    }
}
