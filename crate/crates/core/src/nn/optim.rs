use serde::{Deserialize, Serialize};

use super::network::Params;
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
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

impl OptimizerKind {
    pub fn sgd(lr: f64) -> Self {
        OptimizerKind::Sgd { lr }
    }

    pub fn adam(lr: f64) -> Self {
        OptimizerKind::Adam {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

/// Optimizer hyper-parameters plus Adam moments.
#[derive(Debug, Clone)]
pub struct OptimizerState<T = f32> {
    kind: OptimizerKind,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    step: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(kind: OptimizerKind) -> Self {
        OptimizerState {
            kind,
            first: Vec::new(),
            second: Vec::new(),
            step: 0,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one update to every tensor in `params` using `grads`.
    pub fn step(&mut self, params: &mut [Option<Params<T>>], grads: &[Option<Params<T>>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape(&[params.len()], &[grads.len()]));
        }
        let mut pairs: Vec<(&mut Tensor<T>, &Tensor<T>)> = Vec::new();
        for (p, g) in params.iter_mut().zip(grads) {
            match (p, g) {
                (Some(p), Some(g)) => {
                    pairs.push((&mut p.weight, &g.weight));
                    pairs.push((&mut p.bias, &g.bias));
                }
                (None, None) => {}
                _ => return Err(Error::InvalidParameter("gradient slot mismatch".into())),
            }
        }
        for (p, g) in &pairs {
            if p.shape() != g.shape() {
                return Err(Error::shape(p.shape(), g.shape()));
            }
        }
        self.step_tensors(pairs)
    }

    /// Update an explicit list of (parameter, gradient) tensors. The list
    /// order must stay the same between calls so moments line up.
    pub fn step_tensors(&mut self, pairs: Vec<(&mut Tensor<T>, &Tensor<T>)>) -> Result<()> {
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd { lr } => {
                let lr = T::from_f64(lr);
                for (p, g) in pairs {
                    if p.shape() != g.shape() {
                        return Err(Error::shape(p.shape(), g.shape()));
                    }
                    for (w, &d) in p.data_mut().iter_mut().zip(g.data()) {
                        *w = *w - lr * d;
                    }
                }
            }
            OptimizerKind::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                if self.first.is_empty() {
                    self.first = pairs.iter().map(|(p, _)| vec![T::ZERO; p.len()]).collect();
                    self.second = self.first.clone();
                }
                if self.first.len() != pairs.len() {
                    return Err(Error::InvalidParameter(
                        "optimizer reused with a different parameter set".into(),
                    ));
                }
                let t = self.step as i32;
                let c1 = T::from_f64(1.0 / (1.0 - beta1.powi(t)));
                let c2 = T::from_f64(1.0 / (1.0 - beta2.powi(t)));
                let (b1, b2) = (T::from_f64(beta1), T::from_f64(beta2));
                let (nb1, nb2) = (T::from_f64(1.0 - beta1), T::from_f64(1.0 - beta2));
                let (lr, eps) = (T::from_f64(lr), T::from_f64(eps));
                for (((p, g), m), v) in pairs
                    .into_iter()
                    .zip(self.first.iter_mut())
                    .zip(self.second.iter_mut())
                {
                    if p.shape() != g.shape() || p.len() != m.len() {
                        return Err(Error::shape(p.shape(), g.shape()));
                    }
                    for (((w, &d), m), v) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.iter_mut())
                        .zip(v.iter_mut())
                    {
                        *m = b1 * *m + nb1 * d;
                        *v = b2 * *v + nb2 * d * d;
                        let m_hat = *m * c1;
                        let v_hat = *v * c2;
                        *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(v: f64) -> (Vec<Option<Params<f64>>>, Vec<Option<Params<f64>>>) {
        let p = Params {
            weight: Tensor::from_vec(&[1], vec![v]).unwrap(),
            bias: Tensor::zeros(&[1]),
        };
        let g = Params {
            weight: Tensor::zeros(&[1]),
            bias: Tensor::zeros(&[1]),
        };
        (vec![Some(p)], vec![Some(g)])
    }

    #[test]
    fn sgd_step() {
        let (mut p, mut g) = single(1.0);
        g[0].as_mut().unwrap().weight.data_mut()[0] = 0.5;
        let mut opt = OptimizerState::new(OptimizerKind::sgd(0.1));
        opt.step(&mut p, &g).unwrap();
        assert!((p[0].as_ref().unwrap().weight.data()[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        for kind in [OptimizerKind::sgd(0.1), OptimizerKind::adam(0.001)] {
            let (mut p, g) = single(0.25);
            let mut opt = OptimizerState::new(kind);
            opt.step(&mut p, &g).unwrap();
            assert_eq!(p[0].as_ref().unwrap().weight.data()[0], 0.25);
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // m_hat = 1, v_hat = 1 -> p = 0 - 0.001 * 1 / (1 + 1e-8)
        let (mut p, mut g) = single(0.0);
        g[0].as_mut().unwrap().weight.data_mut()[0] = 1.0;
        let mut opt = OptimizerState::new(OptimizerKind::adam(0.001));
        opt.step(&mut p, &g).unwrap();
        let w = p[0].as_ref().unwrap().weight.data()[0];
        assert!((w + 0.001).abs() < 1e-9, "{w}");
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let (mut p, _) = single(0.0);
        let g = vec![Some(Params {
            weight: Tensor::zeros(&[2]),
            bias: Tensor::zeros(&[1]),
        })];
        let mut opt = OptimizerState::<f64>::new(OptimizerKind::sgd(0.1));
        assert!(matches!(opt.step(&mut p, &g), Err(Error::ShapeMismatch { .. })));
    }
}
