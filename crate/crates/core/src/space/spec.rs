use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One candidate operation of a searchable layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OpSpec {
    /// Inverted bottleneck: 1×1 expand (×`expansion`) → k×k depthwise →
    /// 1×1 linear projection, with a shortcut when shapes permit.
    Mbconv {
        kernel: usize,
        expansion: usize,
        #[serde(default = "one")]
        groups: usize,
    },
    /// Identity.
    Skip,
    /// Constant zero output of the layer's output shape.
    Zero,
    /// Padding entry that keeps every layer at the same candidate count.
    Disallowed,
}

fn one() -> usize {
    1
}

impl OpSpec {
    pub fn mbconv(kernel: usize, expansion: usize) -> Self {
        OpSpec::Mbconv {
            kernel,
            expansion,
            groups: 1,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            OpSpec::Mbconv {
                kernel,
                expansion,
                groups: 1,
            } => format!("mbconv_k{kernel}_e{expansion}"),
            OpSpec::Mbconv {
                kernel,
                expansion,
                groups,
            } => format!("mbconv_k{kernel}_e{expansion}_g{groups}"),
            OpSpec::Skip => "skip".into(),
            OpSpec::Zero => "zero".into(),
            OpSpec::Disallowed => "disallowed".into(),
        }
    }

    /// Why `self` cannot be placed in a layer with the given geometry, if it cannot.
    pub fn inadmissible_reason(&self, in_ch: usize, out_ch: usize, stride: usize) -> Option<String> {
        match *self {
            OpSpec::Skip if stride != 1 => Some(format!("skip needs stride 1, layer has stride {stride}")),
            OpSpec::Skip if in_ch != out_ch => {
                Some(format!("skip needs equal channels, layer maps {in_ch} -> {out_ch}"))
            }
            OpSpec::Skip | OpSpec::Zero => None,
            OpSpec::Disallowed => Some("padding entry".into()),
            OpSpec::Mbconv {
                kernel,
                expansion,
                groups,
            } => {
                let mid = in_ch * expansion;
                if kernel % 2 == 0 || kernel == 0 {
                    Some(format!("kernel {kernel} must be odd"))
                } else if expansion == 0 || groups == 0 {
                    Some("expansion and groups must be positive".into())
                } else if in_ch % groups != 0 || mid % groups != 0 || out_ch % groups != 0 {
                    Some(format!(
                        "groups {groups} must divide channels {in_ch}, {mid} and {out_ch}"
                    ))
                } else {
                    None
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StemSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    /// Input image `[H, W]`.
    pub resolution: [usize; 2],
}

/// Global average pool followed by a linear classifier.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSpec {
    #[serde(default = "yes")]
    pub bias: bool,
}

fn yes() -> bool {
    true
}

impl Default for HeadSpec {
    fn default() -> Self {
        Self { bias: true }
    }
}

/// One searchable position of the supernet.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub index: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub input_resolution: (usize, usize),
    pub candidates: Vec<OpSpec>,
    pub allowed: Vec<bool>,
}

impl LayerSpec {
    pub fn output_resolution(&self) -> (usize, usize) {
        let (h, w) = self.input_resolution;
        (h.div_ceil(self.stride), w.div_ceil(self.stride))
    }

    /// A shortcut exists when input and output shapes agree.
    pub fn is_residual(&self) -> bool {
        self.stride == 1 && self.in_channels == self.out_channels
    }

    pub fn num_ops(&self) -> usize {
        self.candidates.len()
    }
}

/// On-disk layer entry; `candidates` falls back to the file-level catalog.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerFile {
    pub in_ch: usize,
    pub out_ch: usize,
    pub stride: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<OpSpec>>,
}

/// Search-space definition file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceFile {
    pub stem: StemSpec,
    pub layers: Vec<LayerFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub catalog: Option<Vec<OpSpec>>,
    #[serde(default)]
    pub head: HeadSpec,
    pub num_classes: usize,
}

const DEFAULT_SPACE: &str = include_str!("../../assets/default_space.json");

/// Validated supernet: stem, `L` searchable layers with `O` candidates each, head.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuperNetSpec {
    pub stem: StemSpec,
    pub layers: Vec<LayerSpec>,
    pub head: HeadSpec,
    pub num_classes: usize,
}

impl SuperNetSpec {
    /// The embedded seven-layer, five-op miniature space.
    pub fn default_miniature() -> Self {
        let file: SpaceFile = serde_json::from_str(DEFAULT_SPACE).expect("embedded space parses");
        Self::from_file(file).expect("embedded space is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_file(file: SpaceFile) -> Result<Self> {
        let stem = file.stem;
        if stem.kernel % 2 == 0 || stem.stride == 0 || stem.in_ch == 0 || stem.out_ch == 0 {
            return Err(Error::Space(format!("invalid stem {stem:?}")));
        }
        let mut res = (
            stem.resolution[0].div_ceil(stem.stride),
            stem.resolution[1].div_ceil(stem.stride),
        );
        let width = file
            .layers
            .iter()
            .map(|l| l.candidates.as_ref().or(file.catalog.as_ref()).map_or(0, Vec::len))
            .max()
            .unwrap_or(0);
        let mut layers = Vec::with_capacity(file.layers.len());
        for (index, lf) in file.layers.into_iter().enumerate() {
            let mut candidates = lf
                .candidates
                .or_else(|| file.catalog.clone())
                .ok_or_else(|| {
                    Error::Space(format!("layer {index} has no candidates and no catalog is given"))
                })?;
            candidates.resize(width, OpSpec::Disallowed);
            if lf.stride != 1 && lf.stride != 2 {
                return Err(Error::Space(format!("layer {index}: stride must be 1 or 2")));
            }
            let allowed: Vec<bool> = candidates
                .iter()
                .map(|op| op.inadmissible_reason(lf.in_ch, lf.out_ch, lf.stride).is_none())
                .collect();
            if !allowed.iter().any(|&a| a) {
                return Err(Error::Space(format!("layer {index} has no admissible candidate")));
            }
            let layer = LayerSpec {
                index,
                in_channels: lf.in_ch,
                out_channels: lf.out_ch,
                stride: lf.stride,
                input_resolution: res,
                candidates,
                allowed,
            };
            res = layer.output_resolution();
            layers.push(layer);
        }
        let spec = Self {
            stem,
            layers,
            head: file.head,
            num_classes: file.num_classes,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks the channel and resolution chain and the rectangular candidate grid.
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Space("num_classes must be at least 2".into()));
        }
        let mut ch = self.stem.out_ch;
        let mut res = self.stem_output_resolution();
        let o = self.num_ops();
        for (i, l) in self.layers.iter().enumerate() {
            if l.index != i {
                return Err(Error::Space(format!("layer at position {i} carries index {}", l.index)));
            }
            if l.in_channels != ch {
                return Err(Error::Space(format!(
                    "layer {i}: in_channels {} but previous block emits {ch}",
                    l.in_channels
                )));
            }
            if l.input_resolution != res {
                return Err(Error::Space(format!(
                    "layer {i}: input resolution {:?} but previous block emits {res:?}",
                    l.input_resolution
                )));
            }
            if l.candidates.len() != o || l.allowed.len() != o {
                return Err(Error::Space(format!(
                    "layer {i} has {} candidates, expected {o}",
                    l.candidates.len()
                )));
            }
            for (k, op) in l.candidates.iter().enumerate() {
                let ok = op
                    .inadmissible_reason(l.in_channels, l.out_channels, l.stride)
                    .is_none();
                if l.allowed[k] && !ok {
                    return Err(Error::Space(format!("layer {i}: op {k} marked allowed but inadmissible")));
                }
            }
            ch = l.out_channels;
            res = l.output_resolution();
        }
        Ok(())
    }

    pub fn to_file(&self) -> SpaceFile {
        SpaceFile {
            stem: self.stem.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerFile {
                    in_ch: l.in_channels,
                    out_ch: l.out_channels,
                    stride: l.stride,
                    candidates: Some(l.candidates.clone()),
                })
                .collect(),
            catalog: None,
            head: self.head.clone(),
            num_classes: self.num_classes,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Candidate count `O` shared by every layer.
    pub fn num_ops(&self) -> usize {
        self.layers.first().map_or(0, LayerSpec::num_ops)
    }

    pub fn stem_output_resolution(&self) -> (usize, usize) {
        let [h, w] = self.stem.resolution;
        (h.div_ceil(self.stem.stride), w.div_ceil(self.stem.stride))
    }

    /// Channels entering the head.
    pub fn final_channels(&self) -> usize {
        self.layers.last().map_or(self.stem.out_ch, |l| l.out_channels)
    }

    /// Keeps only `keep` (ascending layer indices), re-indexing and re-checking the chain.
    pub fn select_layers(&self, keep: &[usize]) -> Result<Self> {
        if keep.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Space("layer selection must be strictly ascending".into()));
        }
        let mut layers = Vec::with_capacity(keep.len());
        let mut res = self.stem_output_resolution();
        for (new_ix, &old) in keep.iter().enumerate() {
            let src = self
                .layers
                .get(old)
                .ok_or_else(|| Error::Space(format!("layer {old} out of range")))?;
            let mut l = src.clone();
            l.index = new_ix;
            l.input_resolution = res;
            res = l.output_resolution();
            layers.push(l);
        }
        let spec = Self {
            stem: self.stem.clone(),
            layers,
            head: self.head.clone(),
            num_classes: self.num_classes,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `blockS_J` naming: a new stage starts at the first layer and at every
    /// layer that changes stride or width.
    pub fn block_names(&self) -> Vec<String> {
        let mut stage = 0;
        let mut pos = 0;
        self.layers
            .iter()
            .map(|l| {
                if l.index == 0 || !l.is_residual() {
                    stage += 1;
                    pos = 1;
                } else {
                    pos += 1;
                }
                format!("block{stage}_{pos}")
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_space_shape() {
        let net = SuperNetSpec::default_miniature();
        assert_eq!(net.num_layers(), 7);
        assert_eq!(net.num_ops(), 5);
        // skip admissible only where stride 1 and widths agree
        let skip_allowed: Vec<bool> = net.layers.iter().map(|l| l.allowed[4]).collect();
        assert_eq!(skip_allowed, [true, false, true, true, false, true, true]);
        assert_eq!(net.layers[6].input_resolution, (4, 4));
        assert_eq!(net.final_channels(), 24);
    }

    #[test]
    fn broken_chain_rejected() {
        let text = r#"{"stem":{"in_ch":1,"out_ch":4,"kernel":3,"stride":1,"resolution":[8,8]},
            "layers":[{"in_ch":4,"out_ch":8,"stride":2,"candidates":[{"kind":"skip"},{"kind":"mbconv","kernel":3,"expansion":1}]},
                      {"in_ch":4,"out_ch":8,"stride":1,"candidates":[{"kind":"skip"}]}],
            "num_classes":3}"#;
        let err = SuperNetSpec::from_json(text).unwrap_err().to_string();
        assert!(err.contains("layer 1"), "{err}");
    }

    #[test]
    fn ragged_candidates_are_padded() {
        let text = r#"{"stem":{"in_ch":1,"out_ch":4,"kernel":3,"stride":1,"resolution":[8,8]},
            "layers":[{"in_ch":4,"out_ch":4,"stride":1,"candidates":[{"kind":"skip"},{"kind":"mbconv","kernel":3,"expansion":1}]},
                      {"in_ch":4,"out_ch":8,"stride":2,"candidates":[{"kind":"mbconv","kernel":5,"expansion":2}]}],
            "num_classes":3}"#;
        let net = SuperNetSpec::from_json(text).unwrap();
        assert_eq!(net.layers[1].candidates[1], OpSpec::Disallowed);
        assert_eq!(net.layers[1].allowed, [true, false]);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = r#"{"stem":{"in_ch":1,"out_ch":4,"kernel":3,"stride":1,"resolution":[8,8]},
            "layers":[], "num_classes":3, "extra": 1}"#;
        assert!(SuperNetSpec::from_json(text).is_err());
    }

    #[test]
    fn block_names_follow_stages() {
        let net = SuperNetSpec::default_miniature();
        assert_eq!(
            net.block_names(),
            ["block1_1", "block2_1", "block2_2", "block2_3", "block3_1", "block3_2", "block3_3"]
        );
    }

    #[test]
    fn select_layers_rechains_resolution() {
        let net = SuperNetSpec::default_miniature();
        let sub = net.select_layers(&[1, 4]).unwrap();
        assert_eq!(sub.layers[0].input_resolution, (16, 16));
        assert_eq!(sub.layers[1].input_resolution, (8, 8));
        assert!(net.select_layers(&[2, 4]).is_err());
    }
}
