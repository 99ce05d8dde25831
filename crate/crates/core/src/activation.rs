use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::check_finite_vec;

/// Pointwise nonlinearity of the reservoir. Every kind satisfies `σ(0) = 0`
/// and carries a trusted global Lipschitz constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
    /// Piecewise-linear unit: `x` for `x ≥ 0`, `a·x` otherwise.
    LeakySlope(f64),
}

impl Activation {
    pub fn validate(&self) -> Result<()> {
        if let Activation::LeakySlope(a) = *self {
            if !a.is_finite() || a < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "leaky slope must be finite and nonnegative, got {a}"
                )));
            }
        }
        Ok(())
    }

    /// Global Lipschitz constant `L_σ`.
    pub fn lipschitz(&self) -> f64 {
        match *self {
            Activation::Tanh | Activation::Identity => 1.0,
            Activation::LeakySlope(a) => a.max(1.0),
        }
    }

    /// `sup |σ''|`, or `None` when σ is not twice differentiable.
    pub fn second_deriv_bound(&self) -> Option<f64> {
        match *self {
            Activation::Tanh => Some(4.0 / (3.0 * 3f64.sqrt())),
            Activation::Identity => Some(0.0),
            Activation::LeakySlope(a) if a == 1.0 => Some(0.0),
            Activation::LeakySlope(_) => None,
        }
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
            Activation::LeakySlope(a) => {
                if x >= 0.0 {
                    x
                } else {
                    a * x
                }
            }
        }
    }

    /// Derivative; at the kink of `LeakySlope` the right derivative is used.
    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
            Activation::LeakySlope(a) => {
                if x >= 0.0 {
                    1.0
                } else {
                    a
                }
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
            Activation::LeakySlope(_) => "leaky_slope",
        }
    }
}

/// Componentwise `σ(x)` and `σ'(x)`.
pub fn activation_eval(a: &Activation, x: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
    check_finite_vec("activation input", x)?;
    Ok((x.map(|v| a.value(v)), x.map(|v| a.derivative(v))))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tanh_at_one_matches_series_oracle() {
        // tanh(1) = (e² − 1)/(e² + 1) with e² from its Taylor series.
        let mut e2 = 0.0;
        let mut term = 1.0;
        for k in 0..40 {
            e2 += term;
            term *= 2.0 / (k as f64 + 1.0);
        }
        let t = (e2 - 1.0) / (e2 + 1.0);
        let (v, d) = activation_eval(&Activation::Tanh, &DVector::from_vec(vec![1.0])).unwrap();
        assert!((v[0] - t).abs() < 1e-15);
        assert!((d[0] - (1.0 - t * t)).abs() < 1e-15);
        assert!((v[0] - 0.7615941560).abs() < 1e-10);
        assert!((d[0] - 0.4199743416).abs() < 1e-10);
    }

    #[test]
    fn zero_maps_to_zero() {
        for a in [Activation::Tanh, Activation::Identity, Activation::LeakySlope(0.1)] {
            assert_eq!(a.value(0.0), 0.0);
        }
        assert_eq!(Activation::Tanh.derivative(0.0), 1.0);
        assert_eq!(Activation::Identity.derivative(0.0), 1.0);
    }

    #[test]
    fn identity_pair() {
        let (v, d) = activation_eval(&Activation::Identity, &DVector::from_vec(vec![2.0, -3.0])).unwrap();
        assert_eq!(v.as_slice(), &[2.0, -3.0]);
        assert_eq!(d.as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn rejects_non_finite_with_index() {
        let err = activation_eval(&Activation::Tanh, &DVector::from_vec(vec![0.0, f64::NAN])).unwrap_err();
        assert_eq!(
            err,
            Error::NonFinite {
                what: "activation input".into(),
                index: 1
            }
        );
    }

    #[test]
    fn tanh_second_derivative_bound_matches_grid_max() {
        let mut best = 0.0_f64;
        let steps = 2_000_000;
        for i in 0..=steps {
            let x = -5.0 + 10.0 * i as f64 / steps as f64;
            let t = x.tanh();
            best = best.max((-2.0 * t * (1.0 - t * t)).abs());
        }
        let bound = Activation::Tanh.second_deriv_bound().unwrap();
        assert!(bound >= best);
        assert!(bound - best < 1e-10);
    }

    #[test]
    fn derivatives_stay_within_lipschitz() {
        for a in [Activation::Tanh, Activation::Identity, Activation::LeakySlope(0.3), Activation::LeakySlope(2.5)] {
            for i in -200..=200 {
                let x = i as f64 * 0.05;
                assert!(a.derivative(x).abs() <= a.lipschitz());
            }
        }
    }

    #[test]
    fn serde_shape() {
        assert_eq!(serde_json::to_string(&Activation::Tanh).unwrap(), "\"tanh\"");
        assert_eq!(serde_json::to_string(&Activation::LeakySlope(0.5)).unwrap(), "{\"leaky_slope\":0.5}");
        let a: Activation = serde_json::from_str("\"identity\"").unwrap();
        assert_eq!(a, Activation::Identity);
    }
}
