//! Declarative network descriptions.
//!
//! A spec file is TOML with a top-level table and one `[[layer]]` entry per
//! layer, in order:
//!
//! ```toml
//! name = "toy"
//! input_channels = 3
//! output_stride = 2
//!
//! [[layer]]
//! name = "conv1"
//! kind = "conv"          # conv | relu | maxpool | avgpool | softmax-head
//! kernel = 3
//! stride = 1
//! padding = 1
//! in_channels = 3
//! out_channels = 8
//! trainable = true       # optional, default true
//! lr_mult = 1.0          # optional, default 1.0
//!
//! [[layer]]
//! name = "relu1"
//! kind = "relu"
//!
//! [[layer]]
//! name = "pool1"
//! kind = "maxpool"
//! kernel = 2
//! stride = 2
//!
//! [[layer]]
//! name = "score"
//! kind = "softmax-head"  # a convolution followed by a channel softmax
//! kernel = 1
//! in_channels = 8
//! out_channels = 2
//! ```
//!
//! `output_stride` must equal the product of all layer strides. Classifier
//! specs may additionally set `input_size = [height, width]`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{conv_output_dim, pool_output_dim};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    Conv,
    Relu,
    Maxpool,
    Avgpool,
    SoftmaxHead,
}

impl LayerKind {
    pub fn has_params(self) -> bool {
        matches!(self, LayerKind::Conv | LayerKind::SoftmaxHead)
    }
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

fn unit() -> f32 {
    1.0
}

fn is_one(v: &usize) -> bool {
    *v == 1
}

fn is_zero(v: &usize) -> bool {
    *v == 0
}

fn is_true(v: &bool) -> bool {
    *v
}

fn is_unit(v: &f32) -> bool {
    *v == 1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub kernel: usize,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub stride: usize,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub padding: usize,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub in_channels: usize,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub out_channels: usize,
    #[serde(default = "yes", skip_serializing_if = "is_true")]
    pub trainable: bool,
    #[serde(default = "unit", skip_serializing_if = "is_unit")]
    pub lr_mult: f32,
}

impl LayerSpec {
    pub fn conv(name: &str, kernel: usize, stride: usize, padding: usize, in_channels: usize, out_channels: usize) -> Self {
        LayerSpec {
            name: name.into(),
            kind: LayerKind::Conv,
            kernel,
            stride,
            padding,
            in_channels,
            out_channels,
            trainable: true,
            lr_mult: 1.0,
        }
    }

    pub fn head(name: &str, kernel: usize, in_channels: usize, classes: usize) -> Self {
        LayerSpec {
            kind: LayerKind::SoftmaxHead,
            ..Self::conv(name, kernel, 1, 0, in_channels, classes)
        }
    }

    pub fn relu(name: &str) -> Self {
        LayerSpec {
            kind: LayerKind::Relu,
            ..Self::conv(name, 1, 1, 0, 0, 0)
        }
    }

    pub fn maxpool(name: &str, kernel: usize, stride: usize, padding: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Maxpool,
            ..Self::conv(name, kernel, stride, padding, 0, 0)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub name: String,
    pub input_channels: usize,
    pub output_stride: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_size: Option<[usize; 2]>,
    #[serde(rename = "layer")]
    pub layers: Vec<LayerSpec>,
}

const HFCN_CLARIFAI: &str = include_str!("../../specs/hfcn_clarifai.toml");
const TOY_STRIDE16: &str = include_str!("../../specs/toy_stride16.toml");
const TOY_STRIDE4: &str = include_str!("../../specs/toy_stride4.toml");
const TOY_LOCAL: &str = include_str!("../../specs/toy_local.toml");
const TOY_CLASSIFIER: &str = include_str!("../../specs/toy_classifier.toml");

impl NetworkSpec {
    /// The ClarifaiNet-derived actionness network (stride 16, 224 → 14).
    pub fn hfcn_clarifai() -> Self {
        Self::parse(HFCN_CLARIFAI).expect("bundled spec is valid")
    }

    /// Small five-conv network with overall stride 16.
    pub fn toy_stride16() -> Self {
        Self::parse(TOY_STRIDE16).expect("bundled spec is valid")
    }

    /// Small network with stride 4, used for the synthetic experiments.
    pub fn toy_stride4() -> Self {
        Self::parse(TOY_STRIDE4).expect("bundled spec is valid")
    }

    /// Stride-1 network with a 3x3 receptive field. Uniform regions wider
    /// than the field map to exactly equal outputs.
    pub fn toy_local() -> Self {
        Self::parse(TOY_LOCAL).expect("bundled spec is valid")
    }

    /// Crop classifier with three outputs (two actions plus background).
    pub fn toy_classifier() -> Self {
        Self::parse(TOY_CLASSIFIER).expect("bundled spec is valid")
    }

    /// Look up a bundled spec by name.
    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "hfcn-clarifai" => Some(Self::hfcn_clarifai()),
            "toy-stride16" => Some(Self::toy_stride16()),
            "toy-stride4" => Some(Self::toy_stride4()),
            "toy-local" => Some(Self::toy_local()),
            "toy-classifier" => Some(Self::toy_classifier()),
            _ => None,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let spec: NetworkSpec =
            toml::from_str(text).map_err(|e| Error::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Load a spec file, or a bundled spec when `path` is `builtin:<name>`.
    pub fn load(path: &Path) -> Result<Self> {
        if let Some(name) = path.to_str().and_then(|s| s.strip_prefix("builtin:")) {
            return Self::builtin(name)
                .ok_or_else(|| Error::format(path, format!("no bundled network spec named {name:?}")));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("network spec serialises")
    }

    /// Hex SHA-256 of the canonical serialisation; identifies the layer layout
    /// a weight file was written for.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("network spec serialises");
        Sha256::digest(canonical.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Same layers with a different number of input channels (e.g. 3 for the
    /// appearance stream, 4 for stacked flow).
    pub fn with_input_channels(&self, channels: usize) -> Self {
        let mut spec = self.clone();
        spec.input_channels = channels;
        if let Some(first) = spec.layers.iter_mut().find(|l| l.kind.has_params()) {
            first.in_channels = channels;
        }
        spec
    }

    pub fn with_name(mut self, name: &str) -> Self {
        self.name = name.into();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(format!("{}: {msg}", self.name)));
        if self.input_channels == 0 {
            return bad("input_channels must be positive".into());
        }
        if self.layers.is_empty() {
            return bad("no layers".into());
        }
        let heads = self
            .layers
            .iter()
            .filter(|l| l.kind == LayerKind::SoftmaxHead)
            .count();
        if heads != 1 {
            return bad(format!("expected exactly one softmax-head, found {heads}"));
        }
        if self.layers.last().map(|l| l.kind) != Some(LayerKind::SoftmaxHead) {
            return bad("the softmax-head must be the last layer".into());
        }
        let mut channels = self.input_channels;
        let mut stride = 1usize;
        for layer in &self.layers {
            if layer.kernel == 0 || layer.stride == 0 {
                return bad(format!("layer {}: kernel and stride must be positive", layer.name));
            }
            match layer.kind {
                LayerKind::Conv | LayerKind::SoftmaxHead => {
                    if layer.in_channels == 0 || layer.out_channels == 0 {
                        return bad(format!("layer {}: zero-channel layer", layer.name));
                    }
                    if layer.in_channels != channels {
                        return bad(format!(
                            "layer {} expects {} input channels but receives {channels}",
                            layer.name, layer.in_channels
                        ));
                    }
                    channels = layer.out_channels;
                }
                LayerKind::Maxpool | LayerKind::Avgpool => {
                    if layer.padding >= layer.kernel {
                        return bad(format!("layer {}: pool padding must be below the window", layer.name));
                    }
                }
                LayerKind::Relu => {
                    if layer.kernel != 1 || layer.stride != 1 || layer.padding != 0 {
                        return bad(format!("layer {}: relu takes no window", layer.name));
                    }
                }
            }
            if !(layer.lr_mult >= 0.0 && layer.lr_mult.is_finite()) {
                return bad(format!("layer {}: lr_mult must be non-negative", layer.name));
            }
            stride *= layer.stride;
        }
        if stride != self.output_stride {
            return bad(format!(
                "declared output_stride {} but layer strides multiply to {stride}",
                self.output_stride
            ));
        }
        Ok(())
    }

    /// Number of softmax outputs.
    pub fn classes(&self) -> usize {
        self.layers.last().map(|l| l.out_channels).unwrap_or(0)
    }

    /// Spatial output size for an input of `height × width`, composed from the
    /// per-layer size formulas; `None` if some layer would produce no output.
    pub fn output_size(&self, height: usize, width: usize) -> Option<(usize, usize)> {
        let (mut h, mut w) = (height, width);
        for layer in &self.layers {
            let f = match layer.kind {
                LayerKind::Relu => continue,
                LayerKind::Conv | LayerKind::SoftmaxHead => conv_output_dim,
                LayerKind::Maxpool | LayerKind::Avgpool => pool_output_dim,
            };
            h = f(h, layer.kernel, layer.stride, layer.padding)?;
            w = f(w, layer.kernel, layer.stride, layer.padding)?;
        }
        Some((h, w))
    }

    /// Indices (into `layers`) of layers that carry parameters.
    pub fn param_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.kind.has_params())
            .map(|(i, _)| i)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_specs_are_valid() {
        for name in ["hfcn-clarifai", "toy-stride16", "toy-stride4", "toy-local", "toy-classifier"] {
            let spec = NetworkSpec::builtin(name).unwrap();
            spec.validate().unwrap();
            assert_eq!(NetworkSpec::parse(&spec.to_toml()).unwrap(), spec);
        }
    }

    #[test]
    fn clarifai_is_224_to_14() {
        let spec = NetworkSpec::hfcn_clarifai();
        assert_eq!(spec.output_stride, 16);
        assert_eq!(spec.output_size(224, 224), Some((14, 14)));
        assert_eq!(spec.classes(), 2);
        assert_eq!(spec.input_channels, 3);
        assert_eq!(spec.with_input_channels(4).layers[0].in_channels, 4);
    }

    #[test]
    fn toy_stride16_geometry() {
        assert_eq!(NetworkSpec::toy_stride16().output_size(64, 64), Some((4, 4)));
    }

    #[test]
    fn rejects_broken_chaining() {
        let mut spec = NetworkSpec::toy_stride16();
        let li = spec.param_layers()[1];
        spec.layers[li].in_channels += 1;
        assert!(matches!(spec.validate(), Err(Error::InvalidSpec(_))));

        let mut spec = NetworkSpec::toy_stride16();
        spec.layers[0].out_channels = 0;
        assert!(spec.validate().is_err());

        let mut spec = NetworkSpec::toy_stride16();
        spec.output_stride = 8;
        assert!(spec.validate().is_err());

        let mut spec = NetworkSpec::toy_stride16();
        spec.layers.pop();
        assert!(spec.validate().is_err());
    }

    #[test]
    fn hash_tracks_layout() {
        let a = NetworkSpec::toy_stride16();
        assert_eq!(a.hash(), NetworkSpec::toy_stride16().hash());
        assert_eq!(a.hash().len(), 64);
        assert_ne!(a.hash(), a.with_input_channels(4).hash());
    }

    #[test]
    fn parse_reports_unknown_fields() {
        let text = "name='x'\ninput_channels=1\noutput_stride=1\n[[layer]]\nname='h'\nkind='softmax-head'\nin_channels=1\nout_channels=2\nbogus=3\n";
        assert!(NetworkSpec::parse(text).is_err());
        let ok = text.replace("bogus=3\n", "");
        assert_eq!(NetworkSpec::parse(&ok).unwrap().classes(), 2);
    }
}
