//! Payoff functionals on discretely monitored paths.

use serde::{Deserialize, Serialize};

use crate::error::PayoffError;

/// Derivative contract. Parses from JSON such as
/// `{"kind":"butterfly","k":[8,10,12]}` or `{"kind":"call","strike":10}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PayoffSpec {
    Call { strike: f64 },
    Put { strike: f64 },
    Butterfly { k: [f64; 3] },
    LookbackCall { strike: f64 },
    AsianPut { strike: f64, observations: usize },
}

impl PayoffSpec {
    pub fn validate(&self) -> Result<(), PayoffError> {
        let finite = |v: f64, name: &str| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(PayoffError::InvalidSpec(format!("{name} must be finite")))
            }
        };
        match *self {
            PayoffSpec::Call { strike } | PayoffSpec::Put { strike } | PayoffSpec::LookbackCall { strike } => {
                finite(strike, "strike")
            }
            PayoffSpec::Butterfly { k } => {
                for v in k {
                    finite(v, "butterfly strike")?;
                }
                if !(k[0] < k[1] && k[1] < k[2]) {
                    return Err(PayoffError::InvalidSpec(format!(
                        "butterfly strikes must satisfy k1 < k2 < k3, got {k:?}"
                    )));
                }
                Ok(())
            }
            PayoffSpec::AsianPut { strike, observations } => {
                finite(strike, "strike")?;
                if observations == 0 {
                    return Err(PayoffError::InvalidSpec("Asian observation count must be positive".into()));
                }
                Ok(())
            }
        }
    }

    pub fn is_path_dependent(&self) -> bool {
        matches!(self, PayoffSpec::LookbackCall { .. } | PayoffSpec::AsianPut { .. })
    }

    /// Payoff of one discretised path `X_0, ..., X_n`.
    pub fn evaluate(&self, path: &[f64]) -> Result<f64, PayoffError> {
        let last = *path.last().ok_or(PayoffError::EmptyPath)?;
        Ok(match *self {
            PayoffSpec::Call { strike } => (last - strike).max(0.0),
            PayoffSpec::Put { strike } => (strike - last).max(0.0),
            PayoffSpec::Butterfly { k } => butterfly(last, k),
            PayoffSpec::LookbackCall { strike } => {
                let max = path.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (max - strike).max(0.0)
            }
            PayoffSpec::AsianPut { strike, observations } => {
                let available = path.len() - 1;
                if available < observations {
                    return Err(PayoffError::LengthMismatch {
                        needed: observations,
                        available,
                    });
                }
                let avg = path[1..=observations].iter().sum::<f64>() / observations as f64;
                (strike - avg).max(0.0)
            }
        })
    }

    /// Terminal function for path-independent contracts; `None` otherwise.
    pub fn terminal_function(&self) -> Option<TerminalPayoff> {
        match *self {
            PayoffSpec::Call { .. } | PayoffSpec::Put { .. } | PayoffSpec::Butterfly { .. } => {
                Some(TerminalPayoff { spec: *self })
            }
            _ => None,
        }
    }
}

fn butterfly(x: f64, k: [f64; 3]) -> f64 {
    (x - k[0]).max(0.0) + (x - k[2]).max(0.0) - 2.0 * (x - k[1]).max(0.0)
}

/// `x ↦ ψ(x)` for a path-independent contract.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerminalPayoff {
    spec: PayoffSpec,
}

impl TerminalPayoff {
    pub fn spec(&self) -> &PayoffSpec {
        &self.spec
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self.spec {
            PayoffSpec::Call { strike } => (x - strike).max(0.0),
            PayoffSpec::Put { strike } => (strike - x).max(0.0),
            PayoffSpec::Butterfly { k } => butterfly(x, k),
            _ => unreachable!("terminal payoff built from a path-dependent spec"),
        }
    }

    /// Global Lipschitz constant.
    pub fn lipschitz(&self) -> f64 {
        match self.spec {
            PayoffSpec::Call { .. } | PayoffSpec::Put { .. } => 1.0,
            // slopes 0, 1, -1, 0 on a valid butterfly; 2 bounds any strike order
            PayoffSpec::Butterfly { .. } => 2.0,
            _ => unreachable!(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn evaluate_examples() {
        let fly = PayoffSpec::Butterfly { k: [8.0, 10.0, 12.0] };
        assert_eq!(fly.evaluate(&[10.0, 10.0]).unwrap(), 2.0);
        let lb = PayoffSpec::LookbackCall { strike: 12.0 };
        assert_eq!(lb.evaluate(&[10.0; 31]).unwrap(), 0.0);
        let asian = PayoffSpec::AsianPut { strike: 10.0, observations: 30 };
        assert_eq!(asian.evaluate(&[10.0; 31]).unwrap(), 0.0);
        let call = PayoffSpec::Call { strike: 10.0 };
        assert!((call.evaluate(&[10.0, 11.3]).unwrap() - 1.3).abs() < 1e-12);
    }

    #[test]
    fn lookback_includes_initial_state() {
        let lb = PayoffSpec::LookbackCall { strike: 12.0 };
        assert_eq!(lb.evaluate(&[13.0, 11.0, 10.0]).unwrap(), 1.0);
    }

    #[test]
    fn asian_excludes_initial_state() {
        let asian = PayoffSpec::AsianPut { strike: 10.0, observations: 2 };
        // X_0 = 100 would dominate the average if it were included
        assert_eq!(asian.evaluate(&[100.0, 8.0, 6.0]).unwrap(), 3.0);
    }

    #[test]
    fn asian_length_mismatch() {
        let asian = PayoffSpec::AsianPut { strike: 10.0, observations: 30 };
        assert_eq!(
            asian.evaluate(&[10.0; 10]),
            Err(PayoffError::LengthMismatch { needed: 30, available: 9 })
        );
        assert_eq!(asian.evaluate(&[]), Err(PayoffError::EmptyPath));
    }

    #[test]
    fn terminal_functions() {
        let call = PayoffSpec::Call { strike: 10.0 }.terminal_function().unwrap();
        assert_eq!(call.eval(12.0), 2.0);
        assert_eq!(call.lipschitz(), 1.0);
        let fly = PayoffSpec::Butterfly { k: [8.0, 10.0, 12.0] }.terminal_function().unwrap();
        assert_eq!(fly.eval(9.0), 1.0);
        assert_eq!(fly.lipschitz(), 2.0);
        assert!(PayoffSpec::LookbackCall { strike: 12.0 }.terminal_function().is_none());
        assert!(PayoffSpec::AsianPut { strike: 1.0, observations: 3 }.terminal_function().is_none());
    }

    #[test]
    fn json_forms() {
        let fly: PayoffSpec = serde_json::from_str(r#"{"kind":"butterfly","k":[8,10,12]}"#).unwrap();
        assert_eq!(fly, PayoffSpec::Butterfly { k: [8.0, 10.0, 12.0] });
        let a: PayoffSpec = serde_json::from_str(r#"{"kind":"asian_put","strike":10,"observations":30}"#).unwrap();
        assert_eq!(a, PayoffSpec::AsianPut { strike: 10.0, observations: 30 });
        let lb: PayoffSpec = serde_json::from_str(r#"{"kind":"lookback_call","strike":12}"#).unwrap();
        assert!(lb.is_path_dependent());
    }

    #[test]
    fn butterfly_validation() {
        assert!(PayoffSpec::Butterfly { k: [10.0, 8.0, 12.0] }.validate().is_err());
        assert!(PayoffSpec::Butterfly { k: [8.0, 9.0, 12.0] }.validate().is_ok());
        assert!(PayoffSpec::AsianPut { strike: 1.0, observations: 0 }.validate().is_err());
    }

    proptest! {
        #[test]
        fn butterfly_is_call_combination(path in prop::collection::vec(0.0f64..20.0, 1..20)) {
            let fly = PayoffSpec::Butterfly { k: [8.0, 10.0, 12.0] }.evaluate(&path).unwrap();
            let c = |k: f64| PayoffSpec::Call { strike: k }.evaluate(&path).unwrap();
            prop_assert!((fly - (c(8.0) + c(12.0) - 2.0 * c(10.0))).abs() < 1e-12);
        }

        #[test]
        fn path_independent_ignores_repeated_terminal(path in prop::collection::vec(0.0f64..20.0, 1..20), extra in 1usize..5) {
            let mut longer = path.clone();
            longer.extend(std::iter::repeat(*path.last().unwrap()).take(extra));
            for spec in [
                PayoffSpec::Call { strike: 10.0 },
                PayoffSpec::Put { strike: 10.0 },
                PayoffSpec::Butterfly { k: [8.0, 10.0, 12.0] },
            ] {
                prop_assert_eq!(spec.evaluate(&path).unwrap(), spec.evaluate(&longer).unwrap());
            }
        }

        #[test]
        fn terminal_payoffs_are_lipschitz(x in -50.0f64..50.0, y in -50.0f64..50.0) {
            for spec in [
                PayoffSpec::Call { strike: 10.0 },
                PayoffSpec::Put { strike: 10.0 },
                PayoffSpec::Butterfly { k: [8.0, 10.0, 12.0] },
            ] {
                let psi = spec.terminal_function().unwrap();
                prop_assert!((psi.eval(x) - psi.eval(y)).abs() <= psi.lipschitz() * (x - y).abs() + 1e-12);
            }
        }
    }
}
