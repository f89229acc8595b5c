use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::LabelOracle;
use crate::image::Image;
use crate::{imaging, seed};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum PreprocessOp {
    Blur { kernel: usize },
    Rotate { degrees: f64 },
    Scale { factor: f64 },
    /// Gain plus a linear luminance ramp; a parametric stand-in for
    /// optimized relighting.
    Relight { gamma: f64, amplitude: f64 },
}

impl PreprocessOp {
    pub fn is_identity(&self) -> bool {
        match *self {
            PreprocessOp::Blur { kernel } => kernel == 1,
            PreprocessOp::Rotate { degrees } => degrees.rem_euclid(360.0) == 0.0,
            PreprocessOp::Scale { factor } => factor == 1.0,
            PreprocessOp::Relight { gamma, amplitude } => gamma == 1.0 && amplitude == 0.0,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            PreprocessOp::Blur { .. } => "blur",
            PreprocessOp::Rotate { .. } => "rotate",
            PreprocessOp::Scale { .. } => "scale",
            PreprocessOp::Relight { .. } => "relight-approx",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        match *self {
            PreprocessOp::Blur { kernel } if kernel == 0 || kernel % 2 == 0 => {
                bad(format!("blur kernel must be odd and >= 1, got {kernel}"))
            }
            PreprocessOp::Rotate { degrees } if !degrees.is_finite() => bad("rotation angle".into()),
            PreprocessOp::Scale { factor } if !(factor > 0.0 && factor.is_finite()) => {
                bad(format!("scale factor must be positive, got {factor}"))
            }
            PreprocessOp::Relight { gamma, amplitude }
                if !(gamma > 0.0 && gamma.is_finite() && (0.0..=1.0).contains(&amplitude)) =>
            {
                bad(format!("relight gamma {gamma} amplitude {amplitude}"))
            }
            _ => Ok(()),
        }
    }
}

/// Apply `op` to `x`. The relight ramp orientation is drawn from `seed_value`.
pub fn preprocess_input(x: &Image, op: &PreprocessOp, seed_value: u64) -> Result<Image> {
    op.validate()?;
    match *op {
        PreprocessOp::Blur { kernel } => imaging::gaussian_blur(x, kernel),
        PreprocessOp::Rotate { degrees } => imaging::rotate(x, degrees),
        PreprocessOp::Scale { factor } => imaging::scale(x, factor),
        PreprocessOp::Relight { gamma, amplitude } => {
            if gamma == 1.0 && amplitude == 0.0 {
                return Ok(x.clone());
            }
            use rand::Rng as _;
            let angle = seed::derive_rng(seed_value, "relight", 0).gen_range(0.0..std::f64::consts::TAU);
            imaging::relight(x, gamma, amplitude, angle)
        }
    }
}

/// An oracle that preprocesses every query before forwarding it.
pub struct PreprocessedOracle<'a> {
    inner: &'a dyn LabelOracle,
    op: PreprocessOp,
    seed: u64,
}

impl<'a> PreprocessedOracle<'a> {
    pub fn new(inner: &'a dyn LabelOracle, op: PreprocessOp, seed: u64) -> Result<Self> {
        op.validate()?;
        Ok(PreprocessedOracle { inner, op, seed })
    }
}

impl LabelOracle for PreprocessedOracle<'_> {
    fn query_batch(&self, xs: &[&Image]) -> Result<Vec<usize>> {
        let processed = xs
            .iter()
            .map(|x| preprocess_input(x, &self.op, self.seed))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Image> = processed.iter().collect();
        self.inner.query_batch(&refs)
    }

    fn queries(&self) -> u64 {
        self.inner.queries()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn img(seed: u64) -> Image {
        use rand::Rng as _;
        let mut rng = seed::rng(seed);
        Image::from_fn(12, 12, |_, _| [rng.gen(), rng.gen(), rng.gen()])
    }

    #[test]
    fn identities_are_exact() {
        let x = img(1);
        for op in [
            PreprocessOp::Blur { kernel: 1 },
            PreprocessOp::Rotate { degrees: 0.0 },
            PreprocessOp::Scale { factor: 1.0 },
            PreprocessOp::Relight { gamma: 1.0, amplitude: 0.0 },
        ] {
            assert!(op.is_identity());
            assert_eq!(preprocess_input(&x, &op, 3).unwrap(), x);
        }
    }

    #[test]
    fn full_turn_is_identity() {
        let x = img(2);
        let y = preprocess_input(&x, &PreprocessOp::Rotate { degrees: 360.0 }, 0).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn blur_keeps_uniform_image() {
        let x = Image::filled(10, 10, [0.3, 0.6, 0.9]);
        assert_eq!(preprocess_input(&x, &PreprocessOp::Blur { kernel: 5 }, 0).unwrap(), x);
    }

    #[test]
    fn invalid_parameters() {
        let x = img(0);
        for op in [
            PreprocessOp::Blur { kernel: 4 },
            PreprocessOp::Scale { factor: 0.0 },
            PreprocessOp::Relight { gamma: -1.0, amplitude: 0.1 },
        ] {
            assert!(preprocess_input(&x, &op, 0).is_err());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn outputs_stay_in_unit_range(
            s in 0u64..1000,
            k in 0usize..4,
            deg in -180.0f64..180.0,
            f in 0.5f64..1.5,
            g in 0.7f64..1.3,
            b in 0.0f64..0.2,
        ) {
            let x = img(s);
            for op in [
                PreprocessOp::Blur { kernel: 2 * k + 1 },
                PreprocessOp::Rotate { degrees: deg },
                PreprocessOp::Scale { factor: f },
                PreprocessOp::Relight { gamma: g, amplitude: b },
            ] {
                let y = preprocess_input(&x, &op, s).unwrap();
                prop_assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }
}
