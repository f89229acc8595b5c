use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{inject, FusedModel};
use crate::nn::Network;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PruneScope {
    /// One magnitude ranking across both networks.
    #[default]
    Global,
    /// Each weight tensor pruned at the same rate.
    PerLayer,
}

/// Zero the `⌊rate · n⌋` smallest-magnitude entries of `weights`, breaking
/// ties by position. Returns how many entries were selected.
pub fn prune_slice(weights: &mut [&mut f32], rate: f64) -> usize {
    let k = (rate * weights.len() as f64).floor() as usize;
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        weights[a]
            .abs()
            .total_cmp(&weights[b].abs())
            .then(a.cmp(&b))
    });
    for &i in &order[..k] {
        *weights[i] = 0.0;
    }
    k
}

fn weights_of(net: &mut Network) -> Vec<Vec<&mut f32>> {
    net.params_mut()
        .iter_mut()
        .flatten()
        .map(|p| p.weight.data_mut().iter_mut().collect())
        .collect()
}

/// Magnitude pruning of every conv/dense weight in the composite; biases
/// are exempt.
pub fn prune(fm: &FusedModel, rate: f64, scope: PruneScope) -> Result<FusedModel> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidParameter(format!("pruning rate {rate} outside [0, 1]")));
    }
    if rate == 0.0 {
        return Ok(fm.clone());
    }
    let mut target = fm.target().clone();
    let mut pty = fm.ptynet().clone();
    {
        let mut tensors = weights_of(&mut target);
        tensors.extend(weights_of(&mut pty));
        match scope {
            PruneScope::Global => {
                let mut all: Vec<&mut f32> = tensors.into_iter().flatten().collect();
                prune_slice(&mut all, rate);
            }
            PruneScope::PerLayer => {
                for mut t in tensors {
                    prune_slice(&mut t, rate);
                }
            }
        }
    }
    inject(target, pty, fm.mapping(), fm.alpha())
}

/// Number of prunable weights in the composite.
pub fn prunable_count(fm: &FusedModel) -> usize {
    [fm.target(), fm.ptynet()]
        .iter()
        .flat_map(|n| n.params().iter().flatten())
        .map(|p| p.weight.len())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Layer, Network};
    use proptest::prelude::*;

    #[test]
    fn worked_example() {
        let mut v = [0.1f32, -0.5, 0.02, 0.3];
        let mut refs: Vec<&mut f32> = v.iter_mut().collect();
        assert_eq!(prune_slice(&mut refs, 0.5), 2);
        assert_eq!(v, [0.0, -0.5, 0.0, 0.3]);
    }

    #[test]
    fn ties_break_by_position() {
        let mut v = [0.2f32, -0.2, 0.2];
        let mut refs: Vec<&mut f32> = v.iter_mut().collect();
        prune_slice(&mut refs, 0.67);
        assert_eq!(v, [0.0, 0.0, 0.2]);
    }

    fn model() -> FusedModel {
        let t = Network::new(&[3, 6, 6], vec![Layer::conv(4, 3), Layer::Relu, Layer::Flatten, Layer::dense(5)], 1).unwrap();
        let p = Network::new(&[3, 6, 6], vec![Layer::Flatten, Layer::dense(3)], 2).unwrap();
        inject(t, p, &[0, 1], 1.0).unwrap()
    }

    fn nonzero(fm: &FusedModel) -> usize {
        [fm.target(), fm.ptynet()]
            .iter()
            .flat_map(|n| n.params().iter().flatten())
            .flat_map(|p| p.weight.data().iter())
            .filter(|v| **v != 0.0)
            .count()
    }

    #[test]
    fn rate_zero_and_one() {
        let fm = model();
        let same = prune(&fm, 0.0, PruneScope::Global).unwrap();
        assert_eq!(same.target().param_hash(), fm.target().param_hash());
        let all = prune(&fm, 1.0, PruneScope::Global).unwrap();
        assert_eq!(nonzero(&all), 0);
        // biases survive
        assert_eq!(
            all.ptynet().params()[1].as_ref().unwrap().bias.data(),
            fm.ptynet().params()[1].as_ref().unwrap().bias.data()
        );
        assert!(prune(&fm, 1.5, PruneScope::Global).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn exact_count_and_idempotent(rate in 0.0f64..1.0) {
            let fm = model();
            let n = prunable_count(&fm);
            let once = prune(&fm, rate, PruneScope::Global).unwrap();
            prop_assert_eq!(nonzero(&once), n - (rate * n as f64).floor() as usize);
            let twice = prune(&once, rate, PruneScope::Global).unwrap();
            prop_assert_eq!(twice.target().param_hash(), once.target().param_hash());
            prop_assert_eq!(twice.ptynet().param_hash(), once.ptynet().param_hash());
        }
    }
}
