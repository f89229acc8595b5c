//! Black-box verification: fidelity, effectiveness, and the ownership
//! decision, all from label-only queries.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fusion::LabelOracle;
use crate::image::Image;
use crate::trigger::VerificationSet;

pub const DEFAULT_THETA: f64 = 0.5;
pub const DEFAULT_P_MAX: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub accuracy_original: f64,
    pub accuracy_after: f64,
    /// `(original − after) / original`; 0 when the original accuracy is 0.
    pub decline_rate: f64,
    pub test_hash: String,
    pub n: usize,
}

pub fn decline_rate(original: f64, after: f64) -> f64 {
    if original == 0.0 {
        0.0
    } else {
        (original - after) / original
    }
}

/// Top-1 accuracy of an oracle on a labelled set.
pub fn oracle_accuracy(oracle: &dyn LabelOracle, test: &Dataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let images: Vec<&Image> = test.samples.iter().map(|s| &s.image).collect();
    let preds = oracle.query_batch(&images)?;
    let hits = preds.iter().zip(&test.samples).filter(|(p, s)| **p == s.label).count();
    Ok(hits as f64 / test.len() as f64)
}

pub fn fidelity_report(original: &dyn LabelOracle, after: &dyn LabelOracle, test: &Dataset) -> Result<FidelityReport> {
    let a = oracle_accuracy(original, test)?;
    let b = oracle_accuracy(after, test)?;
    Ok(FidelityReport {
        accuracy_original: a,
        accuracy_after: b,
        decline_rate: decline_rate(a, b),
        test_hash: test.content_hash(),
        n: test.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEffectiveness {
    pub watermark_class: usize,
    pub desired: usize,
    pub successes: usize,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectivenessReport {
    pub successes: usize,
    pub n: usize,
    pub success_rate: f64,
    pub per_class: Vec<ClassEffectiveness>,
    pub vset_hash: String,
}

/// Fraction of verification samples the oracle labels as desired. Each
/// sample is queried exactly once.
pub fn effectiveness(oracle: &dyn LabelOracle, vset: &VerificationSet) -> Result<EffectivenessReport> {
    let images = vset.images();
    effectiveness_on(oracle, vset, &images)
}

/// As [`effectiveness`], querying `images` (one per verification item, in
/// order) instead of the set's own images.
pub fn effectiveness_on(oracle: &dyn LabelOracle, vset: &VerificationSet, images: &[&Image]) -> Result<EffectivenessReport> {
    if vset.is_empty() {
        return Err(Error::Empty("verification set"));
    }
    if images.len() != vset.len() {
        return Err(Error::shape(&[vset.len()], &[images.len()]));
    }
    let preds = oracle.query_batch(images)?;
    let classes = vset.items.iter().map(|i| i.watermark_class).max().unwrap_or(0) + 1;
    let mut per_class: Vec<ClassEffectiveness> = (0..classes)
        .map(|c| ClassEffectiveness {
            watermark_class: c,
            desired: vset
                .items
                .iter()
                .find(|i| i.watermark_class == c)
                .map_or(0, |i| i.desired),
            successes: 0,
            n: 0,
        })
        .collect();
    let mut successes = 0;
    for (item, &p) in vset.items.iter().zip(&preds) {
        let hit = (p == item.desired) as usize;
        successes += hit;
        per_class[item.watermark_class].successes += hit;
        per_class[item.watermark_class].n += 1;
    }
    Ok(EffectivenessReport {
        successes,
        n: vset.len(),
        success_rate: successes as f64 / vset.len() as f64,
        per_class,
        vset_hash: vset.content_hash(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Owned,
    NotOwned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OwnershipDecision {
    pub success_rate: f64,
    pub successes: usize,
    pub n: usize,
    /// Chance of hitting the desired label under the null, `1 / C`.
    pub null_rate: f64,
    /// `log10 P[X ≥ successes]` for `X ~ Binomial(n, null_rate)`.
    pub log10_p_value: f64,
    pub theta: f64,
    pub p_max: f64,
    pub verdict: Verdict,
}

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut t = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    t.push(0.0);
    for i in 1..=n {
        acc += (i as f64).ln();
        t.push(acc);
    }
    t
}

/// `ln P[X ≥ k]` for `X ~ Binomial(n, q)`, summed in log space.
pub fn ln_binomial_tail(n: usize, k: usize, q: f64) -> f64 {
    if k == 0 {
        return 0.0;
    }
    if k > n {
        return f64::NEG_INFINITY;
    }
    let lf = ln_factorials(n);
    let (lq, lr) = (q.ln(), (1.0 - q).ln());
    let term = |j: usize| lf[n] - lf[j] - lf[n - j] + j as f64 * lq + (n - j) as f64 * lr;
    // Below the mean the upper tail is close to 1; go through the lower tail
    // so the result keeps its relative precision.
    if (k as f64) <= n as f64 * q {
        return (-log_sum_exp((0..k).map(term)).exp()).ln_1p();
    }
    log_sum_exp((k..=n).map(term))
}

fn log_sum_exp(terms: impl Iterator<Item = f64>) -> f64 {
    let terms: Vec<f64> = terms.collect();
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Owned iff the success rate reaches `theta` and the binomial p-value
/// under chance guessing among `classes` labels is below `p_max`.
pub fn ownership_decision(report: &EffectivenessReport, classes: usize, theta: f64, p_max: f64) -> Result<OwnershipDecision> {
    if report.n == 0 {
        return Err(Error::Empty("effectiveness report"));
    }
    if classes < 2 {
        return Err(Error::InvalidParameter(format!("{classes} classes")));
    }
    let q = 1.0 / classes as f64;
    let ln_p = ln_binomial_tail(report.n, report.successes, q);
    let rate = report.successes as f64 / report.n as f64;
    let owned = report.successes > 0 && rate >= theta && ln_p < p_max.ln();
    Ok(OwnershipDecision {
        success_rate: rate,
        successes: report.successes,
        n: report.n,
        null_rate: q,
        log10_p_value: ln_p / std::f64::consts::LN_10,
        theta,
        p_max,
        verdict: if owned { Verdict::Owned } else { Verdict::NotOwned },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::LabelOracle;
    use crate::trigger::VerificationItem;
    use num_bigint::BigUint;
    use std::sync::atomic::{AtomicU64, Ordering};

    struct Fixed<F: Fn(&Image) -> usize + Sync>(F, AtomicU64);

    impl<F: Fn(&Image) -> usize + Sync> LabelOracle for Fixed<F> {
        fn query_batch(&self, xs: &[&Image]) -> Result<Vec<usize>> {
            self.1.fetch_add(xs.len() as u64, Ordering::Relaxed);
            Ok(xs.iter().map(|x| (self.0)(x)).collect())
        }
        fn queries(&self) -> u64 {
            self.1.load(Ordering::Relaxed)
        }
    }

    fn report(n: usize, k: usize) -> EffectivenessReport {
        EffectivenessReport {
            successes: k,
            n,
            success_rate: k as f64 / n as f64,
            per_class: vec![],
            vset_hash: String::new(),
        }
    }

    fn ln_big(x: &BigUint) -> f64 {
        let bits = x.bits();
        let shift = bits.saturating_sub(60);
        let top: u64 = (x >> shift).try_into().unwrap();
        (top as f64).ln() + shift as f64 * std::f64::consts::LN_2
    }

    /// ln P[X ≥ k] with q = 1/c from exact integer sums.
    fn exact_tail(n: usize, k: usize, c: u32) -> f64 {
        let (mut upper, mut lower) = (BigUint::from(0u32), BigUint::from(0u32));
        let mut binom = BigUint::from(1u32);
        for j in 0..=n {
            if j > 0 {
                binom = binom * BigUint::from((n - j + 1) as u64) / BigUint::from(j as u64);
            }
            let t = &binom * BigUint::from(c - 1).pow((n - j) as u32);
            if j >= k {
                upper += t;
            } else {
                lower += t;
            }
        }
        let den = BigUint::from(c).pow(n as u32);
        if &upper * 2u32 > den {
            (-(ln_big(&lower) - ln_big(&den)).exp()).ln_1p()
        } else {
            ln_big(&upper) - ln_big(&den)
        }
    }

    #[test]
    fn tail_matches_exact_oracle() {
        for &(n, k, c) in &[(100, 100, 8), (100, 12, 8), (1000, 300, 8), (50, 20, 2), (1000, 1, 10), (7, 3, 4)] {
            let a = ln_binomial_tail(n, k, 1.0 / c as f64);
            let b = exact_tail(n, k, c);
            assert!(((a - b) / b.abs().max(1e-300)).abs() <= 1e-10, "{n} {k} {c}: {a} vs {b}");
        }
    }

    #[test]
    fn all_hits_out_of_100_with_8_classes() {
        let d = ownership_decision(&report(100, 100), 8, DEFAULT_THETA, DEFAULT_P_MAX).unwrap();
        assert!((d.log10_p_value - 100.0 * (1.0f64 / 8.0).log10()).abs() < 1e-9);
        assert_eq!(d.verdict, Verdict::Owned);
    }

    #[test]
    fn chance_level_is_not_owned() {
        let d = ownership_decision(&report(100, 12), 8, DEFAULT_THETA, DEFAULT_P_MAX).unwrap();
        assert!(d.log10_p_value > (0.2f64).log10() && d.log10_p_value < 0.0);
        assert_eq!(d.verdict, Verdict::NotOwned);
        for c in [2, 8, 1000] {
            let d = ownership_decision(&report(100, 0), c, DEFAULT_THETA, DEFAULT_P_MAX).unwrap();
            assert_eq!(d.verdict, Verdict::NotOwned);
        }
    }

    #[test]
    fn decline_rates() {
        assert!((decline_rate(0.643, 0.642) - 0.001556).abs() < 1e-6);
        assert!((decline_rate(0.563, 0.499) - 0.1137).abs() < 1e-3);
        assert_eq!(decline_rate(0.7, 0.7), 0.0);
    }

    fn vset() -> VerificationSet {
        VerificationSet {
            items: (0..9)
                .map(|i| VerificationItem {
                    image: Image::filled(4, 4, [i as f32 / 10.0; 3]),
                    desired: i % 3 + 2,
                    watermark_class: i % 3,
                    source: i,
                })
                .collect(),
            key_hash: "k".into(),
            seed: 0,
        }
    }

    #[test]
    fn effectiveness_extremes() {
        let v = vset();
        let wrong = Fixed(|_: &Image| 0, AtomicU64::new(0));
        assert_eq!(effectiveness(&wrong, &v).unwrap().success_rate, 0.0);
        assert_eq!(wrong.queries(), 9);
        let lookup = Fixed(|x: &Image| (x.data()[0] * 10.0).round() as usize % 3 + 2, AtomicU64::new(0));
        let r = effectiveness(&lookup, &v).unwrap();
        assert_eq!(r.success_rate, 1.0);
        assert_eq!(r.per_class.iter().map(|c| c.n).collect::<Vec<_>>(), vec![3, 3, 3]);
    }

    #[test]
    fn identical_oracles_no_decline() {
        use crate::data::{gen_shapescape, ShapeScapeConfig};
        let cfg = ShapeScapeConfig {
            n_train: 0,
            n_test: 16,
            ..Default::default()
        };
        let test = gen_shapescape(&cfg, 0).unwrap().1;
        let o = Fixed(|x: &Image| (x.data()[0] * 8.0) as usize % 8, AtomicU64::new(0));
        let r = fidelity_report(&o, &o, &test).unwrap();
        assert_eq!(r.decline_rate, 0.0);
    }
}
