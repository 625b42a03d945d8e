//! Channel bookkeeping: which layer feeds which, residual width ties, and
//! repair of channel counts after widths change.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::{ArchitectureDescriptor, FeatureShape, LayerSpec};

/// Channel provenance of an architecture.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelFlow {
    /// For each layer, the prunable layer whose output channels reach its
    /// input (`None` means the network input).
    pub source: Vec<Option<usize>>,
    /// Sets of prunable layers whose output widths must stay equal because
    /// a skip connection adds their outputs. Sorted, each of size >= 2.
    pub groups: Vec<Vec<usize>>,
    /// Prunable layers whose width must equal the input channel count.
    pub pinned: Vec<usize>,
}

impl ChannelFlow {
    pub fn of(arch: &ArchitectureDescriptor) -> Self {
        let n = arch.layers.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while p[r] != r {
                r = p[r];
            }
            p[x] = r;
            r
        }
        let mut source = vec![None; n];
        let mut pinned_roots = Vec::new();
        let mut src = None;
        for block in &arch.blocks {
            let block_src = src;
            for &i in &block.layers {
                source[i] = src;
                if arch.layers[i].is_parameterized() {
                    src = Some(i);
                }
            }
            if block.is_residual() && src != block_src {
                let tail = src.expect("branch has a prunable layer");
                match block_src {
                    Some(p) => {
                        let (a, b) = (find(&mut parent, p), find(&mut parent, tail));
                        parent[a.max(b)] = a.min(b);
                    }
                    None => pinned_roots.push(tail),
                }
            }
        }
        let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in arch.prunable_layers() {
            let r = find(&mut parent, i);
            members.entry(r).or_default().push(i);
        }
        let pinned_sets: Vec<usize> = pinned_roots.iter().map(|&t| find(&mut parent, t)).collect();
        let mut pinned: Vec<usize> = pinned_sets.iter().flat_map(|r| members[r].clone()).collect();
        pinned.sort_unstable();
        pinned.dedup();
        let groups = members.into_values().filter(|g| g.len() >= 2).collect();
        Self { source, groups, pinned }
    }

    pub fn group_of(&self, layer: usize) -> Option<&[usize]> {
        self.groups.iter().find(|g| g.contains(&layer)).map(Vec::as_slice)
    }
}

pub(crate) fn set_width(layer: &mut LayerSpec, width: usize) {
    match layer {
        LayerSpec::Conv2d { out_channels, .. } => *out_channels = width,
        LayerSpec::Linear { out_features, .. } => *out_features = width,
        _ => {}
    }
}

fn describe(arch: &ArchitectureDescriptor, i: Option<usize>) -> String {
    match i {
        Some(i) => format!("layer {i} ({})", arch.layers[i]),
        None => "network input".into(),
    }
}

/// Makes channel counts consistent after output widths changed: residual
/// ties take the widest member, conv inputs follow their producer and
/// linear inputs are recomputed from the incoming feature size.
pub fn calibrate(candidate: &ArchitectureDescriptor) -> Result<ArchitectureDescriptor> {
    let mut arch = candidate.clone();
    let flow = ChannelFlow::of(&arch);
    for group in &flow.groups {
        let w = group.iter().filter_map(|&i| arch.layers[i].width()).max().expect("non-empty");
        for &i in group {
            set_width(&mut arch.layers[i], w);
        }
    }
    for &i in &flow.pinned {
        set_width(&mut arch.layers[i], arch.input_shape[0]);
    }

    let mut current = arch.input_feature_shape();
    let mut prev: Option<usize> = None;
    for b in 0..arch.blocks.len() {
        let block_input = current;
        let block_prev = prev;
        for k in 0..arch.blocks[b].layers.len() {
            let i = arch.blocks[b].layers[k];
            let (up, down) = (describe(&arch, prev), describe(&arch, Some(i)));
            let mismatch = |detail: String| Error::Structure {
                upstream: up.clone(),
                downstream: down.clone(),
                detail,
            };
            match (&mut arch.layers[i], current) {
                (LayerSpec::Conv2d { in_channels, .. }, FeatureShape::Image { c, .. }) => *in_channels = c,
                (LayerSpec::Linear { in_features, .. }, FeatureShape::Vector(n)) => *in_features = n,
                (LayerSpec::Conv2d { .. } | LayerSpec::Linear { .. }, shape) => {
                    return Err(mismatch(format!("cannot feed a {shape} into this layer")));
                }
                _ => {}
            }
            current = arch.layers[i]
                .output_shape(current)
                .map_err(|e| mismatch(e.to_string()))?;
            prev = Some(i);
        }
        if arch.blocks[b].is_residual() && current != block_input {
            return Err(Error::Structure {
                upstream: describe(&arch, block_prev),
                downstream: describe(&arch, prev),
                detail: format!("skip carries {block_input} but the branch produces {current}"),
            });
        }
    }
    arch.validate()?;
    Ok(arch)
}
