use super::network::{Gradients, Network};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Numerically stable softmax (max-subtracted).
pub fn softmax<T: Scalar>(logits: &[T]) -> Result<Vec<T>> {
    if logits.is_empty() {
        return Err(Error::Empty("softmax logits"));
    }
    if let Some(index) = logits.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            index,
            value: logits[index].to_f64(),
        });
    }
    Ok(softmax_unchecked(logits))
}

fn softmax_unchecked<T: Scalar>(logits: &[T]) -> Vec<T> {
    let mut max = logits[0];
    for &v in &logits[1..] {
        if v > max {
            max = v;
        }
    }
    let mut out: Vec<T> = logits.iter().map(|&v| (v - max).exp()).collect();
    let mut sum = T::ZERO;
    for &v in &out {
        sum += v;
    }
    for v in &mut out {
        *v = *v / sum;
    }
    out
}

/// Row-wise softmax of a `[batch, classes]` tensor.
pub fn softmax_rows<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let c = logits.shape()[1];
    let data = logits
        .data()
        .chunks_exact(c)
        .flat_map(softmax_unchecked)
        .collect();
    Tensor::from_vec(logits.shape(), data).unwrap()
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    match labels.iter().find(|&&l| l >= classes) {
        Some(&label) => Err(Error::LabelOutOfRange { label, classes }),
        None => Ok(()),
    }
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    cross_entropy_smoothed(logits, labels, 0.0)
}

/// Cross-entropy against the smoothed target `(1 − ε)·onehot(y) + ε/C`.
/// The gradient is `p − target`, averaged over the batch.
pub fn cross_entropy_smoothed<T: Scalar>(logits: &Tensor<T>, labels: &[usize], eps: f64) -> Result<(T, Tensor<T>)> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::InvalidParameter(format!("label smoothing {eps} outside [0, 1)")));
    }
    let (n, c) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != n {
        return Err(Error::shape(&[n], &[labels.len()]));
    }
    check_labels(labels, c)?;
    let inv_n = T::from_f64(1.0 / n as f64);
    let off = T::from_f64(eps / c as f64);
    let on = T::from_f64(1.0 - eps + eps / c as f64);
    let mut loss = T::ZERO;
    let mut grad = Vec::with_capacity(n * c);
    for (row, &y) in logits.data().chunks_exact(c).zip(labels) {
        // log-sum-exp form keeps the loss finite for extreme logits
        let mut max = row[0];
        for &v in &row[1..] {
            if v > max {
                max = v;
            }
        }
        let mut sum = T::ZERO;
        for &v in row {
            sum += (v - max).exp();
        }
        let lse = max + sum.ln();
        for (j, &v) in row.iter().enumerate() {
            let t = if j == y { on } else { off };
            if t != T::ZERO {
                loss += t * (lse - v);
            }
            let p = (v - lse).exp();
            grad.push((p - t) * inv_n);
        }
    }
    Ok((loss * inv_n, Tensor::from_vec(&[n, c], grad)?))
}

/// Mean cross-entropy loss of `net` on a labeled batch, with parameter gradients.
pub fn loss_and_grad<T: Scalar>(
    net: &Network<T>,
    batch: &Tensor<T>,
    labels: &[usize],
) -> Result<(T, Gradients<T>)> {
    check_labels(labels, net.output_dim())?;
    let (logits, cache) = net.forward_cached(batch)?;
    let (loss, dlogits) = cross_entropy(&logits, labels)?;
    Ok((loss, net.backward(&cache, &dlogits)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn smoothed_cross_entropy_worked_example() {
        // logits (1, 2, 3), label 0, ε = 0.3 over 3 classes: target (0.8, 0.1, 0.1)
        let e = std::f64::consts::E;
        let lse = (e + e * e + e * e * e).ln();
        let want_loss = lse - (0.8 * 1.0 + 0.1 * 2.0 + 0.1 * 3.0);
        assert!((want_loss - 2.107606).abs() < 1e-6);
        let logits = Tensor::from_vec(&[1, 3], vec![1.0f64, 2.0, 3.0]).unwrap();
        let (loss, grad) = cross_entropy_smoothed(&logits, &[0], 0.3).unwrap();
        assert!((loss - want_loss).abs() < 1e-12);
        let target = [0.8, 0.1, 0.1];
        for j in 0..3 {
            let p = (j as f64 + 1.0 - lse).exp();
            assert!((grad.data()[j] - (p - target[j])).abs() < 1e-12);
        }
        let (plain, _) = cross_entropy(&logits, &[0]).unwrap();
        let (zero, _) = cross_entropy_smoothed(&logits, &[0], 0.0).unwrap();
        assert_eq!(plain, zero);
        assert!(cross_entropy_smoothed(&logits, &[0], 1.0).is_err());
    }

    #[test]
    fn softmax_symmetric_pair() {
        assert_eq!(softmax(&[0.0f64, 0.0]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_large_logits_do_not_overflow() {
        let p = softmax(&[1000.0f32, 1000.0, 1000.0]).unwrap();
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_one_two_three() {
        // exp(k) / (e + e^2 + e^3), evaluated independently
        let e = std::f64::consts::E;
        let z = e + e * e + e * e * e;
        let want = [e / z, e * e / z, e * e * e / z];
        let got = softmax(&[1.0f32, 2.0, 3.0]).unwrap();
        for (g, w) in got.iter().zip(want) {
            assert!((*g as f64 - w).abs() < 1e-4, "{g} vs {w}");
        }
        assert!((want[0] - 0.09003).abs() < 1e-5);
        assert!((want[1] - 0.24473).abs() < 1e-5);
        assert!((want[2] - 0.66524).abs() < 1e-5);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        assert!(matches!(
            softmax(&[0.0f32, f32::NAN]),
            Err(Error::NonFinite { index: 1, .. })
        ));
        assert!(softmax::<f32>(&[]).is_err());
    }

    #[test]
    fn uniform_logits_give_ln_c() {
        let logits = Tensor::from_vec(&[2, 5], vec![0.3f64; 10]).unwrap();
        let (loss, _) = cross_entropy(&logits, &[0, 4]).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logits_give_zero_loss() {
        let logits = Tensor::from_vec(&[1, 3], vec![-200.0f64, 200.0, -200.0]).unwrap();
        let (loss, _) = cross_entropy(&logits, &[1]).unwrap();
        assert!(loss < 1e-12);
    }

    #[test]
    fn out_of_range_label_rejected() {
        let logits = Tensor::from_vec(&[1, 3], vec![0.0f32; 3]).unwrap();
        assert!(matches!(
            cross_entropy(&logits, &[3]),
            Err(Error::LabelOutOfRange { label: 3, classes: 3 })
        ));
    }

    proptest! {
        #[test]
        fn softmax_normalized_and_shift_invariant(
            v in prop::collection::vec(-30.0f64..30.0, 1..12),
            shift in -50.0f64..50.0,
        ) {
            let p = softmax(&v).unwrap();
            let sum: f64 = p.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-6);
            prop_assert!(p.iter().all(|&x| x > 0.0 && x <= 1.0));
            let shifted: Vec<f64> = v.iter().map(|x| x + shift).collect();
            let q = softmax(&shifted).unwrap();
            prop_assert_eq!(argmax(&p), argmax(&q));
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
