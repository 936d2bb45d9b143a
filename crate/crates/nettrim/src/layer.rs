//! Layer specifications and static shape composition.
//!
//! The layer menu is fixed: 2-D convolution, non-overlapping max pooling,
//! dense, ReLU, and a terminal softmax/cross-entropy head. Per-example
//! shapes are either `[C, H, W]` feature maps or `[F]` feature vectors;
//! a dense layer flattens a map implicitly in `(channel, row, col)` order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LayerSpec {
    Conv2d {
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        #[serde(default = "default_stride")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    Maxpool2d {
        window: usize,
        stride: usize,
    },
    Dense {
        out_features: usize,
    },
    Relu,
    SoftmaxXent,
}

fn default_stride() -> usize {
    1
}

impl LayerSpec {
    pub fn conv2d(out_channels: usize, kernel: usize) -> Self {
        LayerSpec::Conv2d {
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride: 1,
            padding: 0,
        }
    }

    pub fn maxpool2d(window: usize) -> Self {
        LayerSpec::Maxpool2d {
            window,
            stride: window,
        }
    }

    pub fn dense(out_features: usize) -> Self {
        LayerSpec::Dense { out_features }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Maxpool2d { .. } => "maxpool2d",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Relu => "relu",
            LayerSpec::SoftmaxXent => "softmax-xent",
        }
    }

    pub fn is_parameterized(&self) -> bool {
        matches!(self, LayerSpec::Conv2d { .. } | LayerSpec::Dense { .. })
    }

    /// Basic field validation, independent of position in a stack.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        match *self {
            LayerSpec::Conv2d {
                out_channels,
                kernel_h,
                kernel_w,
                stride,
                ..
            } => {
                if out_channels < 1 {
                    return bad("conv2d: out_channels must be >= 1".into());
                }
                if kernel_h < 1 || kernel_w < 1 {
                    return bad("conv2d: kernel extents must be >= 1".into());
                }
                if stride < 1 {
                    return bad("conv2d: stride must be >= 1".into());
                }
            }
            LayerSpec::Maxpool2d { window, stride } => {
                if window < 1 || stride < 1 {
                    return bad("maxpool2d: window and stride must be >= 1".into());
                }
            }
            LayerSpec::Dense { out_features } => {
                if out_features < 1 {
                    return bad("dense: out_features must be >= 1".into());
                }
            }
            LayerSpec::Relu | LayerSpec::SoftmaxXent => {}
        }
        Ok(())
    }

    /// Per-example output shape given a per-example input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let fail = |detail: String| {
            Err(Error::Config(format!(
                "{} cannot consume input shape {:?}: {}",
                self.kind_name(),
                input,
                detail
            )))
        };
        match *self {
            LayerSpec::Conv2d {
                out_channels,
                kernel_h,
                kernel_w,
                stride,
                padding,
            } => {
                let [_, h, w] = *input else {
                    return fail("expected a [channels, height, width] feature map".into());
                };
                let (ph, pw) = (h + 2 * padding, w + 2 * padding);
                if ph < kernel_h || pw < kernel_w {
                    return fail(format!(
                        "kernel {kernel_h}x{kernel_w} larger than padded input {ph}x{pw}"
                    ));
                }
                let out_h = (ph - kernel_h) / stride + 1;
                let out_w = (pw - kernel_w) / stride + 1;
                Ok(vec![out_channels, out_h, out_w])
            }
            LayerSpec::Maxpool2d { window, stride } => {
                let [c, h, w] = *input else {
                    return fail("expected a [channels, height, width] feature map".into());
                };
                if h < window || w < window {
                    return fail(format!("window {window} larger than input {h}x{w}"));
                }
                if (h - window) % stride != 0 || (w - window) % stride != 0 {
                    return fail(format!(
                        "window {window}/stride {stride} does not tile {h}x{w} exactly"
                    ));
                }
                Ok(vec![c, (h - window) / stride + 1, (w - window) / stride + 1])
            }
            LayerSpec::Dense { out_features } => {
                if input.is_empty() {
                    return fail("empty input shape".into());
                }
                Ok(vec![out_features])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            // Flattens implicitly, like dense: class logits are the
            // flattened features.
            LayerSpec::SoftmaxXent => {
                if input.is_empty() {
                    return fail("empty input shape".into());
                }
                Ok(vec![input.iter().product()])
            }
        }
    }

    /// Shape of this layer's weight tensor, if parameterized.
    pub fn weight_shape(&self, input: &[usize]) -> Option<Vec<usize>> {
        match *self {
            LayerSpec::Conv2d {
                out_channels,
                kernel_h,
                kernel_w,
                ..
            } => Some(vec![out_channels, input[0], kernel_h, kernel_w]),
            LayerSpec::Dense { out_features } => {
                Some(vec![out_features, input.iter().product()])
            }
            _ => None,
        }
    }

    /// Number of output neurons (channels or features), if parameterized.
    pub fn out_units(&self) -> Option<usize> {
        match *self {
            LayerSpec::Conv2d { out_channels, .. } => Some(out_channels),
            LayerSpec::Dense { out_features } => Some(out_features),
            _ => None,
        }
    }
}

/// Human-readable names in network order: conv1, pool1, conv2, fc1, relu1...
/// Names are stable identifiers used in reports, policies and the CLI.
pub fn layer_names(layers: &[LayerSpec]) -> Vec<String> {
    let (mut conv, mut pool, mut fc, mut relu) = (0, 0, 0, 0);
    layers
        .iter()
        .map(|l| match l {
            LayerSpec::Conv2d { .. } => {
                conv += 1;
                format!("conv{conv}")
            }
            LayerSpec::Maxpool2d { .. } => {
                pool += 1;
                format!("pool{pool}")
            }
            LayerSpec::Dense { .. } => {
                fc += 1;
                format!("fc{fc}")
            }
            LayerSpec::Relu => {
                relu += 1;
                format!("relu{relu}")
            }
            LayerSpec::SoftmaxXent => "softmax".to_string(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_shape_chain() {
        let conv = LayerSpec::conv2d(20, 5);
        assert_eq!(conv.output_shape(&[1, 28, 28]).unwrap(), vec![20, 24, 24]);
        let pool = LayerSpec::maxpool2d(2);
        assert_eq!(pool.output_shape(&[20, 24, 24]).unwrap(), vec![20, 12, 12]);
    }

    #[test]
    fn pool_must_tile_exactly() {
        let pool = LayerSpec::maxpool2d(2);
        assert!(pool.output_shape(&[3, 7, 8]).is_err());
    }

    #[test]
    fn dense_flattens_maps() {
        let d = LayerSpec::dense(500);
        assert_eq!(d.output_shape(&[50, 4, 4]).unwrap(), vec![500]);
        assert_eq!(d.weight_shape(&[50, 4, 4]).unwrap(), vec![500, 800]);
    }

    #[test]
    fn names_follow_kind_order() {
        let layers = vec![
            LayerSpec::conv2d(20, 5),
            LayerSpec::Relu,
            LayerSpec::maxpool2d(2),
            LayerSpec::conv2d(50, 5),
            LayerSpec::Relu,
            LayerSpec::maxpool2d(2),
            LayerSpec::dense(500),
            LayerSpec::Relu,
            LayerSpec::dense(10),
            LayerSpec::SoftmaxXent,
        ];
        assert_eq!(
            layer_names(&layers),
            vec![
                "conv1", "relu1", "pool1", "conv2", "relu2", "pool2", "fc1", "relu3", "fc2",
                "softmax"
            ]
        );
    }

    #[test]
    fn spec_serde_kebab_case() {
        let s = serde_json::to_string(&LayerSpec::SoftmaxXent).unwrap();
        assert!(s.contains("softmax-xent"));
        let c: LayerSpec = serde_json::from_str(
            r#"{"kind":"conv2d","out_channels":20,"kernel_h":5,"kernel_w":5}"#,
        )
        .unwrap();
        assert_eq!(c, LayerSpec::conv2d(20, 5));
    }
}
