use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Valid,
    Same,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    None,
}

/// Where a layer's output is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TapPoint {
    #[serde(alias = "pre")]
    PreActivation,
    #[serde(alias = "post")]
    PostActivation,
}

impl TapPoint {
    pub fn as_str(self) -> &'static str {
        match self {
            TapPoint::PreActivation => "pre",
            TapPoint::PostActivation => "post",
        }
    }
}

impl std::str::FromStr for TapPoint {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pre" | "pre_activation" => Ok(TapPoint::PreActivation),
            "post" | "post_activation" => Ok(TapPoint::PostActivation),
            _ => Err(Error::InvalidConfig(format!("unknown tap point {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerKind {
    /// Per-sample input shape, either `[features]` or `[channels, height, width]`.
    Input {
        shape: Vec<usize>,
    },
    Dense {
        units: usize,
    },
    Conv2D {
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
    },
    MaxPool {
        kernel: usize,
        stride: usize,
    },
    Flatten,
    Dropout {
        rate: f32,
    },
    SoftmaxOutput {
        classes: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn input(shape: &[usize]) -> Self {
        Self::plain(LayerKind::Input {
            shape: shape.to_vec(),
        })
    }

    pub fn dense(units: usize, activation: Activation) -> Self {
        Self {
            kind: LayerKind::Dense { units },
            activation,
        }
    }

    pub fn conv(filters: usize, kernel: usize, stride: usize, padding: Padding) -> Self {
        Self {
            kind: LayerKind::Conv2D {
                filters,
                kernel,
                stride,
                padding,
            },
            activation: Activation::Relu,
        }
    }

    pub fn max_pool(kernel: usize, stride: usize) -> Self {
        Self::plain(LayerKind::MaxPool { kernel, stride })
    }

    pub fn flatten() -> Self {
        Self::plain(LayerKind::Flatten)
    }

    pub fn dropout(rate: f32) -> Self {
        Self::plain(LayerKind::Dropout { rate })
    }

    pub fn softmax(classes: usize) -> Self {
        Self::plain(LayerKind::SoftmaxOutput { classes })
    }

    fn plain(kind: LayerKind) -> Self {
        Self {
            kind,
            activation: Activation::None,
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(
            self.kind,
            LayerKind::Dense { .. } | LayerKind::Conv2D { .. } | LayerKind::SoftmaxOutput { .. }
        )
    }

    /// Layers whose output is a relabelling of their input.
    pub fn is_passthrough(&self) -> bool {
        matches!(self.kind, LayerKind::Flatten | LayerKind::Dropout { .. })
    }

    fn prefix(&self) -> &'static str {
        match self.kind {
            LayerKind::Input { .. } => "input",
            LayerKind::Dense { .. } => "fc",
            LayerKind::Conv2D { .. } => "conv",
            LayerKind::MaxPool { .. } => "pool",
            LayerKind::Flatten => "flatten",
            LayerKind::Dropout { .. } => "dropout",
            LayerKind::SoftmaxOutput { .. } => "softmax",
        }
    }
}

/// Output size of a convolution or pooling window along one axis.
pub fn window_out(input: usize, kernel: usize, stride: usize, padding: Padding) -> Option<usize> {
    match padding {
        Padding::Valid => {
            if input < kernel || stride == 0 {
                None
            } else {
                Some((input - kernel) / stride + 1)
            }
        }
        Padding::Same => {
            if stride == 0 {
                None
            } else {
                Some(input.div_ceil(stride))
            }
        }
    }
}

/// Leading zero padding for 'same' convolution along one axis.
pub fn same_pad_before(input: usize, kernel: usize, stride: usize) -> usize {
    let out = input.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(input);
    total / 2
}

/// Validates a layer stack and returns the per-sample output shape of every layer.
pub fn propagate_shapes(layers: &[LayerSpec]) -> Result<Vec<Vec<usize>>> {
    let first = layers
        .first()
        .ok_or_else(|| Error::InvalidLayer("empty layer list".into()))?;
    let mut cur = match &first.kind {
        LayerKind::Input { shape } if !shape.is_empty() && shape.iter().all(|&d| d > 0) => {
            if shape.len() != 1 && shape.len() != 3 {
                return Err(Error::InvalidLayer(format!(
                    "input shape must be [features] or [c, h, w], got {shape:?}"
                )));
            }
            shape.clone()
        }
        _ => return Err(Error::InvalidLayer("first layer must be a valid Input".into())),
    };
    let mut shapes = vec![cur.clone()];
    for (i, l) in layers.iter().enumerate().skip(1) {
        let bad = |msg: String| Error::InvalidLayer(format!("layer {i}: {msg}"));
        if l.activation == Activation::Relu
            && !matches!(l.kind, LayerKind::Dense { .. } | LayerKind::Conv2D { .. })
        {
            return Err(bad("ReLU is only supported on Dense and Conv2D".into()));
        }
        cur = match &l.kind {
            LayerKind::Input { .. } => return Err(bad("Input only allowed at position 0".into())),
            LayerKind::Dense { units } => {
                if cur.len() != 1 {
                    return Err(bad(format!("Dense needs flat input, got {cur:?}")));
                }
                if *units == 0 {
                    return Err(bad("Dense with zero units".into()));
                }
                vec![*units]
            }
            LayerKind::Conv2D {
                filters,
                kernel,
                stride,
                padding,
            } => {
                if cur.len() != 3 {
                    return Err(bad(format!("Conv2D needs [c,h,w] input, got {cur:?}")));
                }
                if *filters == 0 || *kernel == 0 || *stride == 0 {
                    return Err(bad("Conv2D with zero filters, kernel or stride".into()));
                }
                let h = window_out(cur[1], *kernel, *stride, *padding);
                let w = window_out(cur[2], *kernel, *stride, *padding);
                match (h, w) {
                    (Some(h), Some(w)) => vec![*filters, h, w],
                    _ => return Err(bad("kernel larger than input".into())),
                }
            }
            LayerKind::MaxPool { kernel, stride } => {
                if cur.len() != 3 {
                    return Err(bad(format!("MaxPool needs [c,h,w] input, got {cur:?}")));
                }
                if *kernel == 0 || *stride == 0 {
                    return Err(bad("MaxPool with zero kernel or stride".into()));
                }
                let h = window_out(cur[1], *kernel, *stride, Padding::Valid);
                let w = window_out(cur[2], *kernel, *stride, Padding::Valid);
                match (h, w) {
                    (Some(h), Some(w)) => vec![cur[0], h, w],
                    _ => return Err(bad("pool window larger than input".into())),
                }
            }
            LayerKind::Flatten => vec![cur.iter().product()],
            LayerKind::Dropout { rate } => {
                if !(0.0..1.0).contains(rate) {
                    return Err(bad(format!("dropout rate {rate} outside [0, 1)")));
                }
                cur
            }
            LayerKind::SoftmaxOutput { classes } => {
                if i != layers.len() - 1 {
                    return Err(bad("SoftmaxOutput must be the last layer".into()));
                }
                if cur.len() != 1 {
                    return Err(bad(format!("SoftmaxOutput needs flat input, got {cur:?}")));
                }
                if *classes < 2 {
                    return Err(bad("SoftmaxOutput needs at least 2 classes".into()));
                }
                vec![*classes]
            }
        };
        shapes.push(cur.clone());
    }
    if !matches!(
        layers.last().map(|l| &l.kind),
        Some(LayerKind::SoftmaxOutput { .. })
    ) {
        return Err(Error::InvalidLayer("last layer must be SoftmaxOutput".into()));
    }
    Ok(shapes)
}

/// Conventional names: `input`, `conv1`, `pool1`, `fc1`, `dropout1`, `flatten`, `softmax`.
pub fn layer_names(layers: &[LayerSpec]) -> Vec<String> {
    let mut counts = std::collections::HashMap::<&str, usize>::new();
    layers
        .iter()
        .map(|l| {
            let p = l.prefix();
            let c = counts.entry(p).or_insert(0);
            *c += 1;
            match l.kind {
                LayerKind::Input { .. } | LayerKind::SoftmaxOutput { .. } => p.to_string(),
                LayerKind::Flatten if *c == 1 => p.to_string(),
                _ => format!("{p}{c}"),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_padding_keeps_stride_one_dims() {
        assert_eq!(window_out(28, 3, 1, Padding::Same), Some(28));
        assert_eq!(same_pad_before(28, 3, 1), 1);
        assert_eq!(window_out(28, 3, 1, Padding::Valid), Some(26));
    }

    #[test]
    fn rejects_bad_stacks() {
        let ok = vec![
            LayerSpec::input(&[4]),
            LayerSpec::dense(3, Activation::Relu),
            LayerSpec::softmax(2),
        ];
        assert!(propagate_shapes(&ok).is_ok());
        let no_softmax = vec![LayerSpec::input(&[4]), LayerSpec::dense(3, Activation::Relu)];
        assert!(propagate_shapes(&no_softmax).is_err());
        let bad_dropout = vec![
            LayerSpec::input(&[4]),
            LayerSpec::dropout(1.0),
            LayerSpec::softmax(2),
        ];
        assert!(propagate_shapes(&bad_dropout).is_err());
        let dense_on_image = vec![
            LayerSpec::input(&[1, 4, 4]),
            LayerSpec::dense(3, Activation::Relu),
            LayerSpec::softmax(2),
        ];
        assert!(propagate_shapes(&dense_on_image).is_err());
    }

    #[test]
    fn names_follow_layer_counts() {
        let layers = vec![
            LayerSpec::input(&[1, 8, 8]),
            LayerSpec::conv(2, 3, 1, Padding::Valid),
            LayerSpec::conv(2, 3, 1, Padding::Valid),
            LayerSpec::max_pool(2, 2),
            LayerSpec::dropout(0.25),
            LayerSpec::flatten(),
            LayerSpec::dense(4, Activation::Relu),
            LayerSpec::dropout(0.5),
            LayerSpec::softmax(2),
        ];
        assert_eq!(
            layer_names(&layers),
            vec!["input", "conv1", "conv2", "pool1", "dropout1", "flatten", "fc1", "dropout2", "softmax"]
        );
    }
}
