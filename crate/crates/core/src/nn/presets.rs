//! Desk-scale architecture presets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::arch::{ArchitectureDescriptor, Block, FeatureShape, LayerSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    /// Two 5x5 conv layers and two linear layers.
    #[serde(rename = "lenet-small")]
    LenetSmall,
    /// Six 3x3 conv layers in three stages, then two linear layers.
    #[serde(rename = "vgg-tiny")]
    VggTiny,
    /// A stem conv followed by three identity-skip residual blocks.
    #[serde(rename = "resnet-tiny")]
    ResnetTiny,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::LenetSmall, Preset::VggTiny, Preset::ResnetTiny];

    pub fn name(&self) -> &'static str {
        match self {
            Preset::LenetSmall => "lenet-small",
            Preset::VggTiny => "vgg-tiny",
            Preset::ResnetTiny => "resnet-tiny",
        }
    }

    /// Instantiates the preset for a given input shape and class count.
    pub fn build(&self, input_shape: [usize; 3], classes: usize) -> Result<ArchitectureDescriptor> {
        match self {
            Preset::LenetSmall => lenet_small(input_shape, classes),
            Preset::VggTiny => vgg_tiny(input_shape, classes),
            Preset::ResnetTiny => resnet_tiny(input_shape, classes),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown architecture preset {s:?} (expected lenet-small, vgg-tiny or resnet-tiny)")))
    }
}

/// Appends `flatten -> linear(classes)` sized from the current shape.
fn flatten_head(input_shape: [usize; 3], layers: &mut Vec<LayerSpec>, hidden: Option<usize>, classes: usize) -> Result<()> {
    let probe = ArchitectureDescriptor {
        input_shape,
        layers: layers.clone(),
        blocks: (0..layers.len()).map(Block::plain).collect(),
    };
    let mut shape = probe.input_feature_shape();
    for (i, l) in layers.iter().enumerate() {
        shape = l
            .output_shape(shape)
            .map_err(|e| Error::Shape(format!("input {input_shape:?} too small for preset at layer {i}: {e}")))?;
    }
    let FeatureShape::Image { c, h, w } = shape else {
        unreachable!("presets flatten conv features")
    };
    layers.push(LayerSpec::Flatten);
    let mut features = c * h * w;
    if let Some(hidden) = hidden {
        layers.push(LayerSpec::linear(features, hidden));
        layers.push(LayerSpec::Relu);
        features = hidden;
    }
    layers.push(LayerSpec::linear(features, classes));
    Ok(())
}

pub fn lenet_small(input_shape: [usize; 3], classes: usize) -> Result<ArchitectureDescriptor> {
    let c = input_shape[0];
    let mut layers = vec![
        LayerSpec::conv(c, 8, 5, 1, 0),
        LayerSpec::Relu,
        LayerSpec::max_pool(2, 2),
        LayerSpec::conv(8, 16, 5, 1, 0),
        LayerSpec::Relu,
        LayerSpec::max_pool(2, 2),
    ];
    flatten_head(input_shape, &mut layers, Some(64), classes)?;
    ArchitectureDescriptor::sequential(input_shape, layers)
}

pub fn vgg_tiny(input_shape: [usize; 3], classes: usize) -> Result<ArchitectureDescriptor> {
    let mut layers = Vec::new();
    let mut c = input_shape[0];
    for width in [16, 32, 64] {
        for _ in 0..2 {
            layers.push(LayerSpec::conv(c, width, 3, 1, 1));
            layers.push(LayerSpec::Relu);
            c = width;
        }
        layers.push(LayerSpec::max_pool(2, 2));
    }
    flatten_head(input_shape, &mut layers, Some(128), classes)?;
    ArchitectureDescriptor::sequential(input_shape, layers)
}

pub fn resnet_tiny(input_shape: [usize; 3], classes: usize) -> Result<ArchitectureDescriptor> {
    const WIDTH: usize = 16;
    let mut layers = vec![LayerSpec::conv(input_shape[0], WIDTH, 3, 1, 1), LayerSpec::Relu];
    let mut blocks = vec![Block::plain(0), Block::plain(1)];
    for _ in 0..3 {
        let start = layers.len();
        layers.push(LayerSpec::conv(WIDTH, WIDTH, 3, 1, 1));
        layers.push(LayerSpec::Relu);
        layers.push(LayerSpec::conv(WIDTH, WIDTH, 3, 1, 1));
        blocks.push(Block::residual(start..start + 3));
        layers.push(LayerSpec::Relu);
        layers.push(LayerSpec::max_pool(2, 2));
        blocks.push(Block::plain(start + 3));
        blocks.push(Block::plain(start + 4));
    }
    let before_head = layers.len();
    flatten_head(input_shape, &mut layers, None, classes)?;
    blocks.extend((before_head..layers.len()).map(Block::plain));
    let arch = ArchitectureDescriptor {
        input_shape,
        layers,
        blocks,
    };
    arch.validate()?;
    Ok(arch)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_build_for_mnist_cifar_and_synth() {
        for preset in Preset::ALL {
            for shape in [[1, 28, 28], [3, 32, 32], [4, 16, 16]] {
                let arch = preset.build(shape, 10).unwrap_or_else(|e| panic!("{preset} {shape:?}: {e}"));
                assert_eq!(arch.class_count().unwrap(), 10);
            }
        }
    }

    #[test]
    fn lenet_layout() {
        let arch = lenet_small([1, 28, 28], 10).unwrap();
        assert_eq!(arch.widths(), vec![8, 16, 64, 10]);
        assert_eq!(arch.layers[7], LayerSpec::linear(256, 64));
    }

    #[test]
    fn resnet_has_three_residual_blocks() {
        let arch = resnet_tiny([3, 32, 32], 10).unwrap();
        assert_eq!(arch.blocks.iter().filter(|b| b.is_residual()).count(), 3);
    }

    #[test]
    fn parse_names() {
        assert_eq!("vgg-tiny".parse::<Preset>().unwrap(), Preset::VggTiny);
        assert!("vgg16".parse::<Preset>().is_err());
    }

    #[test]
    fn too_small_input_is_rejected() {
        assert!(lenet_small([1, 8, 8], 10).is_err());
    }
}
