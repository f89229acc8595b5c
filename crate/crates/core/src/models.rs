//! Stock architectures for 3-channel square images.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::{Layer, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetArch {
    SmallCnn,
    WideCnn,
    Mlp,
}

impl TargetArch {
    pub const ALL: [TargetArch; 3] = [TargetArch::SmallCnn, TargetArch::WideCnn, TargetArch::Mlp];

    pub fn name(self) -> &'static str {
        match self {
            TargetArch::SmallCnn => "small-cnn",
            TargetArch::WideCnn => "wide-cnn",
            TargetArch::Mlp => "mlp",
        }
    }

    pub fn layers(self, classes: usize) -> Vec<Layer> {
        match self {
            TargetArch::SmallCnn => conv_stack(16, 32, 128, classes),
            TargetArch::WideCnn => conv_stack(32, 64, 128, classes),
            TargetArch::Mlp => vec![
                Layer::Flatten,
                Layer::dense(256),
                Layer::Relu,
                Layer::dense(128),
                Layer::Relu,
                Layer::dense(classes),
            ],
        }
    }

    pub fn build(self, height: usize, width: usize, classes: usize, seed: u64) -> Result<Network> {
        Network::new(&[3, height, width], self.layers(classes), seed)
    }
}

/// conv(c1)-relu-pool / conv(c2)-relu-pool / dense(hidden)-relu / dense(out)
pub fn conv_stack(c1: usize, c2: usize, hidden: usize, out: usize) -> Vec<Layer> {
    vec![
        Layer::conv(c1, 3),
        Layer::Relu,
        Layer::MaxPool { k: 2 },
        Layer::conv(c2, 3),
        Layer::Relu,
        Layer::MaxPool { k: 2 },
        Layer::Flatten,
        Layer::dense(hidden),
        Layer::Relu,
        Layer::dense(out),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_stock_models_build() {
        for arch in TargetArch::ALL {
            let net = arch.build(32, 32, 8, 0).unwrap();
            assert_eq!(net.output_dim(), 8);
        }
    }

    #[test]
    fn names_round_trip_through_serde() {
        for arch in TargetArch::ALL {
            let s = serde_json::to_string(&arch).unwrap();
            assert_eq!(s, format!("\"{}\"", arch.name()));
        }
    }
}
