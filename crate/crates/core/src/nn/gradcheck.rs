use super::loss::{cross_entropy, loss_and_grad};
use super::network::Network;
use super::tensor::Tensor;
use crate::error::Result;

pub const DEFAULT_STEP: f64 = 1e-4;

fn loss_at(net: &Network<f64>, batch: &Tensor<f64>, labels: &[usize]) -> Result<f64> {
    let logits = net.forward(batch)?;
    Ok(cross_entropy(&logits, labels)?.0)
}

fn param_mut(net: &mut Network<f64>, layer: usize, which: usize, j: usize) -> &mut f64 {
    let p = net.params_mut()[layer].as_mut().expect("parameterized layer");
    let t = if which == 0 { &mut p.weight } else { &mut p.bias };
    &mut t.data_mut()[j]
}

/// Largest relative disagreement between back-propagated gradients and
/// central differences with step `h`, over every parameter.
///
/// Relative error is `|a − n| / max(|a|, |n|, 1e-8)`, and both gradients
/// being exactly zero counts as agreement.
pub fn gradcheck_with_step(
    net: &Network<f64>,
    batch: &Tensor<f64>,
    labels: &[usize],
    h: f64,
) -> Result<f64> {
    let (_, analytic) = loss_and_grad(net, batch, labels)?;
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for (li, grad) in analytic.iter().enumerate() {
        let Some(grad) = grad else { continue };
        for which in 0..2 {
            let g = if which == 0 { &grad.weight } else { &grad.bias };
            for j in 0..g.len() {
                let orig = *param_mut(&mut probe, li, which, j);
                *param_mut(&mut probe, li, which, j) = orig + h;
                let up = loss_at(&probe, batch, labels)?;
                *param_mut(&mut probe, li, which, j) = orig - h;
                let down = loss_at(&probe, batch, labels)?;
                *param_mut(&mut probe, li, which, j) = orig;
                let numeric = (up - down) / (2.0 * h);
                let a = g.data()[j];
                if a == 0.0 && numeric == 0.0 {
                    continue;
                }
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
                worst = worst.max(rel);
            }
        }
    }
    Ok(worst)
}

pub fn gradcheck(net: &Network<f64>, batch: &Tensor<f64>, labels: &[usize]) -> Result<f64> {
    gradcheck_with_step(net, batch, labels, DEFAULT_STEP)
}
