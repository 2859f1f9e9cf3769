use serde::{Deserialize, Serialize};

use super::{NamedTensor, NetError, Real, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

/// Adam over a fixed list of parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

/// Serializable optimizer state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<NamedTensor>,
    pub v: Vec<NamedTensor>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, shapes: &[usize]) -> Self {
        Self {
            config,
            step: 0,
            m: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn for_params(config: AdamConfig, params: &[&Vec<T>]) -> Self {
        let shapes: Vec<usize> = params.iter().map(|p| p.len()).collect();
        Self::new(config, &shapes)
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: Vec<&mut Vec<T>>, grads: &[Vec<T>]) {
        assert_eq!(params.len(), self.m.len(), "parameter list changed");
        assert_eq!(
            grads.len(),
            self.m.len(),
            "gradient list does not match parameters"
        );
        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let lr = T::of(c.lr);
        let eps = T::of(c.eps);
        let bc1 = T::one() - b1.powi(self.step as i32);
        let bc2 = T::one() - b2.powi(self.step as i32);
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for j in 0..p.len() {
                let gj = g[j];
                m[j] = b1 * m[j] + (T::one() - b1) * gj;
                v[j] = b2 * v[j] + (T::one() - b2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }

    pub fn to_state(&self) -> AdamState {
        let dump = |vs: &Vec<Vec<T>>| {
            vs.iter()
                .enumerate()
                .map(|(i, v)| NamedTensor {
                    name: i.to_string(),
                    values: v.iter().map(|x| x.as_f64()).collect(),
                })
                .collect()
        };
        AdamState {
            config: self.config,
            step: self.step,
            m: dump(&self.m),
            v: dump(&self.v),
        }
    }

    pub fn from_state(state: &AdamState, params: &[&Vec<T>]) -> Result<Self> {
        let load = |ts: &[NamedTensor]| -> Result<Vec<Vec<T>>> {
            if ts.len() != params.len() {
                return Err(NetError::StateMismatch("optimizer tensor count".into()));
            }
            ts.iter()
                .zip(params)
                .map(|(t, p)| {
                    if t.values.len() != p.len() {
                        Err(NetError::StateMismatch(format!(
                            "optimizer tensor {} size",
                            t.name
                        )))
                    } else {
                        Ok(t.values.iter().map(|&x| T::of(x)).collect())
                    }
                })
                .collect()
        };
        Ok(Self {
            config: state.config,
            step: state.step,
            m: load(&state.m)?,
            v: load(&state.v)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![1.0f64, -2.0];
        let mut adam = Adam::for_params(AdamConfig::with_lr(0.1), &[&p]);
        adam.step(vec![&mut p], &[vec![0.5, -3.0]]);
        // bias-corrected first step is lr * sign(g)
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 1.9).abs() < 1e-6);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = vec![3.0f64];
        let mut adam = Adam::for_params(AdamConfig::with_lr(0.05), &[&p]);
        for _ in 0..2000 {
            let g = vec![2.0 * (p[0] - 1.0)];
            adam.step(vec![&mut p], &[g]);
        }
        assert!((p[0] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn state_round_trip_continues_identically() {
        let mut a = vec![0.5f32, 0.25];
        let mut adam = Adam::for_params(AdamConfig::with_lr(1e-3), &[&a]);
        adam.step(vec![&mut a], &[vec![0.1, 0.2]]);
        let restored = Adam::<f32>::from_state(&adam.to_state(), &[&a]).unwrap();
        let mut b = a.clone();
        let mut adam2 = restored;
        adam.step(vec![&mut a], &[vec![-0.3, 0.4]]);
        adam2.step(vec![&mut b], &[vec![-0.3, 0.4]]);
        assert_eq!(a, b);
        assert_eq!(adam.steps_taken(), 2);
    }
}
