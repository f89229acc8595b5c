use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One entry of a network's layer list.
///
/// Activations are laid out channel-major (`[C, H, W]`) per sample. Dense
/// layers need a flat `[D]` input, so image models put a `Flatten` (or
/// `AvgPoolGlobal`) in front of their first dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer {
    Conv2d {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Dense {
        out_dim: usize,
    },
    Relu,
    MaxPool {
        k: usize,
    },
    AvgPoolGlobal,
    Flatten,
}

impl Layer {
    pub fn conv(out_channels: usize, kernel: usize) -> Self {
        Layer::Conv2d {
            out_channels,
            kernel,
            stride: 1,
            pad: kernel / 2,
        }
    }

    pub fn dense(out_dim: usize) -> Self {
        Layer::Dense { out_dim }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, Layer::Conv2d { .. } | Layer::Dense { .. })
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |what: &str| {
            Error::InvalidNetwork(format!("{what} cannot follow activation shape {input:?}"))
        };
        match *self {
            Layer::Conv2d {
                out_channels,
                kernel,
                stride,
                pad,
            } => {
                let [_, h, w] = image_dims(input).ok_or_else(|| bad("conv2d"))?;
                if kernel == 0 || stride == 0 || out_channels == 0 {
                    return Err(Error::InvalidNetwork("conv2d with zero extent".into()));
                }
                if h + 2 * pad < kernel || w + 2 * pad < kernel {
                    return Err(bad("conv2d (kernel larger than padded input)"));
                }
                Ok(vec![
                    out_channels,
                    (h + 2 * pad - kernel) / stride + 1,
                    (w + 2 * pad - kernel) / stride + 1,
                ])
            }
            Layer::Dense { out_dim } => {
                if input.len() != 1 {
                    return Err(bad("dense"));
                }
                if out_dim == 0 {
                    return Err(Error::InvalidNetwork("dense with zero outputs".into()));
                }
                Ok(vec![out_dim])
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::MaxPool { k } => {
                let [c, h, w] = image_dims(input).ok_or_else(|| bad("maxpool"))?;
                if k == 0 || h < k || w < k {
                    return Err(bad("maxpool"));
                }
                Ok(vec![c, h / k, w / k])
            }
            Layer::AvgPoolGlobal => {
                let [c, _, _] = image_dims(input).ok_or_else(|| bad("avgpool_global"))?;
                Ok(vec![c])
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    /// Weight and bias shapes for a layer fed with `input`.
    pub fn param_shapes(&self, input: &[usize]) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            Layer::Conv2d {
                out_channels,
                kernel,
                ..
            } => Some((
                vec![out_channels, input[0], kernel, kernel],
                vec![out_channels],
            )),
            // Stored input-major so the forward pass is a plain x·W.
            Layer::Dense { out_dim } => Some((vec![input[0], out_dim], vec![out_dim])),
            _ => None,
        }
    }
}

fn image_dims(shape: &[usize]) -> Option<[usize; 3]> {
    match shape {
        &[c, h, w] => Some([c, h, w]),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_padding_conv_keeps_extent() {
        let out = Layer::conv(16, 3).output_shape(&[3, 32, 32]).unwrap();
        assert_eq!(out, vec![16, 32, 32]);
    }

    #[test]
    fn dense_rejects_image_input() {
        assert!(Layer::dense(4).output_shape(&[3, 8, 8]).is_err());
    }

    #[test]
    fn serde_tagging() {
        let json = serde_json::to_string(&Layer::MaxPool { k: 2 }).unwrap();
        assert_eq!(json, r#"{"type":"max_pool","k":2}"#);
    }
}
