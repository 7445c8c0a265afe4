use serde::{Deserialize, Serialize};

use super::scalar::Real;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    #[serde(default = "default_clipnorm")]
    pub clipnorm: Option<f64>,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-7
}
fn default_clipnorm() -> Option<f64> {
    Some(1.0)
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            clipnorm: default_clipnorm(),
        }
    }
}

/// Adam moments for a fixed list of parameter tensors.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub t: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig, shapes: &[usize]) -> Self {
        AdamState {
            config,
            t: 0,
            m: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn for_params(config: AdamConfig, params: &[&mut Vec<T>]) -> Self {
        let shapes: Vec<usize> = params.iter().map(|p| p.len()).collect();
        Self::new(config, &shapes)
    }

    /// Clips all gradients jointly to `clipnorm` (if their global L2 norm
    /// exceeds it), then applies one bias-corrected Adam update.
    ///
    /// Returns the global norm before clipping.
    pub fn step(&mut self, params: &mut [&mut Vec<T>], grads: &[Vec<T>]) -> Result<f64> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != self.m[i].len() {
                return Err(Error::Shape(format!(
                    "adam tensor {i}: expected {} values, params {} grads {}",
                    self.m[i].len(),
                    p.len(),
                    g.len()
                )));
            }
        }
        let sq: f64 = grads
            .iter()
            .flat_map(|g| g.iter())
            .map(|v| {
                let v = v.as_f64();
                v * v
            })
            .sum();
        let norm = sq.sqrt();
        if !norm.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite gradient (global norm {norm}) at step {}",
                self.t + 1
            )));
        }
        let scale = match self.config.clipnorm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.t += 1;
        let c = &self.config;
        let b1 = T::cast(c.beta1);
        let b2 = T::cast(c.beta2);
        let one = T::one();
        let bc1 = T::cast(1.0 - c.beta1.powi(self.t as i32));
        let bc2 = T::cast(1.0 - c.beta2.powi(self.t as i32));
        let lr = T::cast(c.lr);
        let eps = T::cast(c.eps);
        let scale = T::cast(scale);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                let gj = g[j] * scale;
                m[j] = b1 * m[j] + (one - b1) * gj;
                v[j] = b2 * v[j] + (one - b2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(norm)
    }
}

/// Functional form: one clipped Adam step on `params`.
pub fn adam_step<T: Real>(
    state: &mut AdamState<T>,
    params: &mut [&mut Vec<T>],
    grads: &[Vec<T>],
) -> Result<f64> {
    state.step(params, grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![0.5f64];
        let mut st = AdamState::new(AdamConfig::with_lr(0.001), &[1]);
        st.step(&mut [&mut p], &[vec![1.0]]).unwrap();
        assert!((p[0] - (0.5 - 0.001)).abs() < 1e-9);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = vec![1.0f64, -2.0];
        let mut st = AdamState::new(AdamConfig::with_lr(0.1), &[2]);
        st.step(&mut [&mut p], &[vec![0.0, 0.0]]).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn clipping_halves_gradients() {
        // global norm 2 -> every gradient is halved; compare against an
        // unclipped optimizer fed the halved gradients.
        let g = vec![vec![1.2, -1.6], vec![0.0]];
        let half: Vec<Vec<f64>> = g.iter().map(|v| v.iter().map(|x| x / 2.0).collect()).collect();
        let mut a = (vec![0.0f64, 0.0], vec![0.0f64]);
        let mut b = a.clone();
        let mut st = AdamState::new(AdamConfig::with_lr(0.01), &[2, 1]);
        let norm = st.step(&mut [&mut a.0, &mut a.1], &g).unwrap();
        assert!((norm - 2.0).abs() < 1e-12);
        let mut st2 = AdamState::new(AdamConfig { clipnorm: None, ..AdamConfig::with_lr(0.01) }, &[2, 1]);
        st2.step(&mut [&mut b.0, &mut b.1], &half).unwrap();
        st.step(&mut [&mut a.0, &mut a.1], &g).unwrap();
        st2.step(&mut [&mut b.0, &mut b.1], &half).unwrap();
        for (x, y) in a.0.iter().zip(&b.0) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn non_finite_gradient_is_an_error() {
        let mut p = vec![0.0f64];
        let mut st = AdamState::new(AdamConfig::with_lr(0.1), &[1]);
        assert!(st.step(&mut [&mut p], &[vec![f64::NAN]]).is_err());
        assert_eq!(p, vec![0.0]);
    }
}
