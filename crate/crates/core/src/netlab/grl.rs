use serde::{Deserialize, Serialize};

use super::{NetError, Real, Result, Tensor3};

/// Strength of the adversarial term. `lambda` weights the domain losses in
/// the total loss and scales the reversed gradient reaching the encoder.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrlConfig {
    pub lambda: f64,
    /// Optional ramp `2 / (1 + exp(-gamma * p)) - 1` over training progress
    /// `p` in [0, 1]. Off by default.
    #[serde(default)]
    pub warmup_gamma: Option<f64>,
}

impl Default for GrlConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            warmup_gamma: None,
        }
    }
}

impl GrlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(NetError::Config(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if let Some(g) = self.warmup_gamma {
            if !(g.is_finite() && g > 0.0) {
                return Err(NetError::Config("warmup_gamma must be positive".into()));
            }
        }
        Ok(())
    }

    /// Effective lambda at training progress `progress` in [0, 1].
    pub fn lambda_at(&self, progress: f64) -> f64 {
        match self.warmup_gamma {
            None => self.lambda,
            Some(gamma) => {
                let p = progress.clamp(0.0, 1.0);
                self.lambda * (2.0 / (1.0 + (-gamma * p).exp()) - 1.0)
            }
        }
    }
}

/// Identity on the way forward, `g -> -lambda * g` on the way back.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradientReversal<T> {
    lambda: T,
}

impl<T: Real> GradientReversal<T> {
    pub fn new(lambda: T) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= T::zero()) {
            return Err(NetError::Config(format!(
                "lambda must be finite and >= 0, got {lambda}"
            )));
        }
        Ok(Self { lambda })
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn forward(&self, x: &Tensor3<T>) -> Tensor3<T> {
        x.clone()
    }

    pub fn backward(&self, upstream: &Tensor3<T>) -> Tensor3<T> {
        let scale = -self.lambda;
        upstream.map(|g| scale * g)
    }
}

/// Functional form: returns the forward value and the reversal to apply to
/// the gradient that later flows back into it.
pub fn gradient_reverse<T: Real>(
    x: &Tensor3<T>,
    lambda: T,
) -> Result<(Tensor3<T>, GradientReversal<T>)> {
    let grl = GradientReversal::new(lambda)?;
    Ok((grl.forward(x), grl))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_is_identity_backward_negates() {
        let x = Tensor3::from_vec(1, 3, 1, vec![1.0, -2.0, 0.5]).unwrap();
        let (y, grl) = gradient_reverse(&x, 1.0).unwrap();
        assert_eq!(y, x);
        let g = Tensor3::from_vec(1, 3, 1, vec![0.1, 0.2, -0.3]).unwrap();
        assert_eq!(grl.backward(&g).data, vec![-0.1, -0.2, 0.3]);
        let half = GradientReversal::new(0.5).unwrap();
        assert_eq!(half.backward(&g).data, vec![-0.05, -0.1, 0.15]);
    }

    #[test]
    fn zero_lambda_blocks_the_gradient() {
        let g = Tensor3::from_vec(1, 2, 1, vec![3.0, -4.0]).unwrap();
        let out = GradientReversal::new(0.0).unwrap().backward(&g);
        assert!(out.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn negative_lambda_is_rejected() {
        assert!(GradientReversal::new(-1.0f64).is_err());
        assert!(GrlConfig {
            lambda: f64::NAN,
            warmup_gamma: None
        }
        .validate()
        .is_err());
    }

    #[test]
    fn warmup_ramps_from_zero_to_lambda() {
        let cfg = GrlConfig {
            lambda: 2.0,
            warmup_gamma: Some(10.0),
        };
        assert_eq!(cfg.lambda_at(0.0), 0.0);
        assert!((cfg.lambda_at(1.0) - 2.0).abs() < 1e-3);
        assert_eq!(GrlConfig::default().lambda_at(0.3), 1.0);
    }
}
