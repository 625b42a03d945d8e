//! Architecture descriptors: ordered layers grouped into building blocks.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One layer of a feed-forward network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        out_channels: usize,
        in_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: usize,
    },
    Linear {
        in_features: usize,
        out_features: usize,
    },
    Relu,
    MaxPool2d {
        window: usize,
        stride: usize,
    },
    Flatten,
}

impl LayerSpec {
    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        LayerSpec::Conv2d {
            out_channels,
            in_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            padding,
        }
    }

    pub fn linear(in_features: usize, out_features: usize) -> Self {
        LayerSpec::Linear {
            in_features,
            out_features,
        }
    }

    pub fn max_pool(window: usize, stride: usize) -> Self {
        LayerSpec::MaxPool2d { window, stride }
    }

    /// Conv and linear layers carry weights; everything else is parameter-free.
    pub fn is_parameterized(&self) -> bool {
        matches!(self, LayerSpec::Conv2d { .. } | LayerSpec::Linear { .. })
    }

    /// Number of filters (conv) or output neurons (linear).
    pub fn width(&self) -> Option<usize> {
        match *self {
            LayerSpec::Conv2d { out_channels, .. } => Some(out_channels),
            LayerSpec::Linear { out_features, .. } => Some(out_features),
            _ => None,
        }
    }

    pub fn weight_shape(&self) -> Option<Vec<usize>> {
        match *self {
            LayerSpec::Conv2d {
                out_channels,
                in_channels,
                kernel_h,
                kernel_w,
                ..
            } => Some(vec![out_channels, in_channels, kernel_h, kernel_w]),
            LayerSpec::Linear {
                in_features,
                out_features,
            } => Some(vec![out_features, in_features]),
            _ => None,
        }
    }

    pub fn bias_shape(&self) -> Option<Vec<usize>> {
        self.width().map(|w| vec![w])
    }

    fn check_hyperparameters(&self, index: usize) -> Result<()> {
        let bad = |what: &str| Err(Error::Shape(format!("layer {index} ({self}): {what} must be >= 1")));
        match *self {
            LayerSpec::Conv2d {
                out_channels,
                in_channels,
                kernel_h,
                kernel_w,
                stride,
                ..
            } => {
                if out_channels == 0 {
                    return bad("out_channels");
                }
                if in_channels == 0 {
                    return bad("in_channels");
                }
                if kernel_h == 0 || kernel_w == 0 {
                    return bad("kernel extent");
                }
                if stride == 0 {
                    return bad("stride");
                }
            }
            LayerSpec::Linear {
                in_features,
                out_features,
            } => {
                if in_features == 0 {
                    return bad("in_features");
                }
                if out_features == 0 {
                    return bad("out_features");
                }
            }
            LayerSpec::MaxPool2d { window, stride } => {
                if window == 0 {
                    return bad("window");
                }
                if stride == 0 {
                    return bad("stride");
                }
            }
            LayerSpec::Relu | LayerSpec::Flatten => {}
        }
        Ok(())
    }

    /// Output shape of this layer for the given input shape.
    pub fn output_shape(&self, input: FeatureShape) -> Result<FeatureShape> {
        match (*self, input) {
            (
                LayerSpec::Conv2d {
                    out_channels,
                    in_channels,
                    kernel_h,
                    kernel_w,
                    stride,
                    padding,
                },
                FeatureShape::Image { c, h, w },
            ) => {
                if c != in_channels {
                    return Err(Error::Shape(format!(
                        "{self} expects {in_channels} input channels, got {c}"
                    )));
                }
                let out_h = conv_extent(h, kernel_h, stride, padding).ok_or_else(|| {
                    Error::Shape(format!("{self}: kernel height {kernel_h} exceeds padded input height {}", h + 2 * padding))
                })?;
                let out_w = conv_extent(w, kernel_w, stride, padding).ok_or_else(|| {
                    Error::Shape(format!("{self}: kernel width {kernel_w} exceeds padded input width {}", w + 2 * padding))
                })?;
                Ok(FeatureShape::Image {
                    c: out_channels,
                    h: out_h,
                    w: out_w,
                })
            }
            (
                LayerSpec::Linear {
                    in_features,
                    out_features,
                },
                FeatureShape::Vector(n),
            ) => {
                if n != in_features {
                    return Err(Error::Shape(format!(
                        "{self} expects {in_features} input features, got {n}"
                    )));
                }
                Ok(FeatureShape::Vector(out_features))
            }
            (LayerSpec::Relu, s) => Ok(s),
            (LayerSpec::MaxPool2d { window, stride }, FeatureShape::Image { c, h, w }) => {
                let out_h = conv_extent(h, window, stride, 0)
                    .ok_or_else(|| Error::Shape(format!("{self}: window exceeds input height {h}")))?;
                let out_w = conv_extent(w, window, stride, 0)
                    .ok_or_else(|| Error::Shape(format!("{self}: window exceeds input width {w}")))?;
                Ok(FeatureShape::Image { c, h: out_h, w: out_w })
            }
            (LayerSpec::Flatten, FeatureShape::Image { c, h, w }) => Ok(FeatureShape::Vector(c * h * w)),
            (layer, shape) => Err(Error::Shape(format!("{layer} cannot consume a {shape} input"))),
        }
    }
}

/// `floor((input + 2*padding - kernel) / stride) + 1`, or `None` when the kernel does not fit.
pub fn conv_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if kernel > padded || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LayerSpec::Conv2d {
                out_channels,
                in_channels,
                kernel_h,
                kernel_w,
                stride,
                padding,
            } => write!(
                f,
                "Conv2d({in_channels}->{out_channels}, {kernel_h}x{kernel_w}, stride {stride}, pad {padding})"
            ),
            LayerSpec::Linear {
                in_features,
                out_features,
            } => write!(f, "Linear({in_features}->{out_features})"),
            LayerSpec::Relu => write!(f, "ReLU"),
            LayerSpec::MaxPool2d { window, stride } => write!(f, "MaxPool2d({window}, stride {stride})"),
            LayerSpec::Flatten => write!(f, "Flatten"),
        }
    }
}

/// Shape of the activation flowing between layers, excluding the batch extent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureShape {
    Image { c: usize, h: usize, w: usize },
    Vector(usize),
}

impl FeatureShape {
    pub fn numel(&self) -> usize {
        match *self {
            FeatureShape::Image { c, h, w } => c * h * w,
            FeatureShape::Vector(n) => n,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            FeatureShape::Image { c, h, w } => vec![c, h, w],
            FeatureShape::Vector(n) => vec![n],
        }
    }

    pub fn channels(&self) -> usize {
        match *self {
            FeatureShape::Image { c, .. } => c,
            FeatureShape::Vector(n) => n,
        }
    }
}

impl fmt::Display for FeatureShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureShape::Image { c, h, w } => write!(f, "{c}x{h}x{w} image"),
            FeatureShape::Vector(n) => write!(f, "{n}-vector"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Plain,
    /// Member layers form a branch whose output is added to the block input.
    Residual,
}

/// A building block: the pruning unit.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Block {
    pub kind: BlockKind,
    pub layers: Vec<usize>,
}

impl Block {
    pub fn plain(layer: usize) -> Self {
        Self {
            kind: BlockKind::Plain,
            layers: vec![layer],
        }
    }

    pub fn residual(layers: impl IntoIterator<Item = usize>) -> Self {
        Self {
            kind: BlockKind::Residual,
            layers: layers.into_iter().collect(),
        }
    }

    pub fn is_residual(&self) -> bool {
        self.kind == BlockKind::Residual
    }

    pub fn first(&self) -> usize {
        self.layers[0]
    }

    pub fn last(&self) -> usize {
        *self.layers.last().expect("blocks are non-empty")
    }
}

/// Ordered layer list plus its partition into building blocks.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchitectureDescriptor {
    /// `(channels, height, width)` of one input sample.
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerSpec>,
    pub blocks: Vec<Block>,
}

impl ArchitectureDescriptor {
    /// Builds a descriptor in which every layer is its own plain block.
    pub fn sequential(input_shape: [usize; 3], layers: Vec<LayerSpec>) -> Result<Self> {
        let blocks = (0..layers.len()).map(Block::plain).collect();
        let arch = Self {
            input_shape,
            layers,
            blocks,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn input_feature_shape(&self) -> FeatureShape {
        let [c, h, w] = self.input_shape;
        FeatureShape::Image { c, h, w }
    }

    /// Checks every structural invariant and returns the activation shape at
    /// each layer boundary (`shapes[i]` is the input of layer `i`, the last
    /// entry is the logits shape).
    pub fn validate(&self) -> Result<Vec<FeatureShape>> {
        if self.input_shape.contains(&0) {
            return Err(Error::Shape(format!("input shape {:?} has a zero extent", self.input_shape)));
        }
        if self.layers.is_empty() {
            return Err(Error::Shape("architecture has no layers".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            layer.check_hyperparameters(i)?;
        }
        self.check_blocks()?;

        let mut shapes = Vec::with_capacity(self.layers.len() + 1);
        let mut current = self.input_feature_shape();
        shapes.push(current);
        for block in &self.blocks {
            let block_input = current;
            for &i in &block.layers {
                current = self.layers[i]
                    .output_shape(current)
                    .map_err(|e| Error::Shape(format!("layer {i}: {}", strip_prefix(&e))))?;
                shapes.push(current);
            }
            if block.is_residual() && current != block_input {
                return Err(Error::Structure {
                    upstream: format!("layer {} (residual input)", block.first()),
                    downstream: format!("layer {} (residual output)", block.last()),
                    detail: format!("branch produces {current} but the skip path carries {block_input}"),
                });
            }
        }
        match current {
            FeatureShape::Vector(_) => Ok(shapes),
            other => Err(Error::Shape(format!(
                "network must end in a vector of logits, but produces a {other}"
            ))),
        }
    }

    fn check_blocks(&self) -> Result<()> {
        let mut next = 0;
        for (b, block) in self.blocks.iter().enumerate() {
            if block.layers.is_empty() {
                return Err(Error::Shape(format!("block {b} is empty")));
            }
            if block.kind == BlockKind::Plain && block.layers.len() != 1 {
                return Err(Error::Shape(format!(
                    "plain block {b} must hold exactly one layer, holds {}",
                    block.layers.len()
                )));
            }
            for &i in &block.layers {
                if i != next {
                    return Err(Error::Shape(format!(
                        "block {b} lists layer {i} where layer {next} was expected; blocks must partition the layers in order"
                    )));
                }
                next += 1;
            }
        }
        if next != self.layers.len() {
            return Err(Error::Shape(format!(
                "blocks cover {next} of {} layers",
                self.layers.len()
            )));
        }
        Ok(())
    }

    /// Number of output classes (length of the logits vector).
    pub fn class_count(&self) -> Result<usize> {
        Ok(self.validate()?.last().expect("non-empty").numel())
    }

    /// Indices of conv and linear layers in forward order.
    pub fn prunable_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_parameterized())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn block_of(&self, layer: usize) -> Option<usize> {
        self.blocks.iter().position(|b| b.layers.contains(&layer))
    }

    /// Widths (filter counts / output neurons) of the prunable layers.
    pub fn widths(&self) -> Vec<usize> {
        self.layers.iter().filter_map(LayerSpec::width).collect()
    }

    /// Widths joined by `-`, the usual way of writing pruned architectures.
    pub fn widths_string(&self) -> String {
        self.widths().iter().map(|w| w.to_string()).collect::<Vec<_>>().join("-")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("architecture serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let arch: Self = serde_json::from_str(text)?;
        arch.validate()?;
        Ok(arch)
    }

    /// Stable 64-bit FNV-1a fingerprint of the canonical JSON form.
    pub fn fingerprint(&self) -> u64 {
        crate::util::fnv1a(self.to_json().as_bytes())
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Shape(msg) => msg.clone(),
        other => other.to_string(),
    }
}
