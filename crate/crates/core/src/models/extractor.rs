use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use super::{conv, init_layout, push_conv, Layout};
use crate::error::{arg_err, shape_err, Error, Result};
use crate::ops::Ops;
use crate::params::{Bound, ParamStore};
use crate::real::Real;

/// Where the feature extractor stops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Truncation {
    /// No layers: features are the (channel-replicated) input itself.
    Input,
    /// Output of conv `conv` (1-based) in block `block` (1-based), taken
    /// before its activation.
    Conv { block: usize, conv: usize },
}

impl fmt::Display for Truncation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Truncation::Input => f.write_str("input"),
            Truncation::Conv { block, conv } => write!(f, "conv{block}_{conv}"),
        }
    }
}

impl FromStr for Truncation {
    type Err = Error;

    /// Accepts `input` or `conv<block>_<conv>`, e.g. `conv3_4`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "input" {
            return Ok(Truncation::Input);
        }
        let parsed = s.strip_prefix("conv").and_then(|rest| {
            let (b, c) = rest.split_once('_')?;
            Some((b.parse().ok()?, c.parse().ok()?))
        });
        match parsed {
            Some((block, conv)) if block >= 1 && conv >= 1 => Ok(Truncation::Conv { block, conv }),
            _ => Err(arg_err!("truncation", "unrecognized layer tag `{}`", s)),
        }
    }
}

/// Frozen VGG-style conv stack used for perceptual and texture losses.
///
/// Blocks are separated by 2x2 max pooling; activations are ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractorConfig {
    /// Channels the stack expects; grayscale input is replicated to match.
    pub in_channels: usize,
    /// `(convs, channels)` per block.
    pub blocks: Vec<(usize, usize)>,
    pub truncation: Truncation,
}

impl Default for FeatureExtractorConfig {
    /// First three blocks of a 19-layer VGG, cut after the fourth conv of
    /// block 3 before its activation.
    fn default() -> Self {
        Self {
            in_channels: 3,
            blocks: vec![(2, 64), (2, 128), (4, 256)],
            truncation: Truncation::Conv { block: 3, conv: 4 },
        }
    }
}

impl FeatureExtractorConfig {
    /// Same topology as the default with narrow channels.
    pub fn toy() -> Self {
        Self {
            in_channels: 1,
            blocks: vec![(2, 8), (2, 16), (4, 16)],
            truncation: Truncation::Conv { block: 3, conv: 4 },
        }
    }

    pub fn identity() -> Self {
        Self {
            in_channels: 1,
            blocks: Vec::new(),
            truncation: Truncation::Input,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(arg_err!("feature extractor", "in_channels must be positive"));
        }
        if let Truncation::Conv { block, conv } = self.truncation {
            match self.blocks.get(block - 1) {
                Some(&(convs, ch)) if conv <= convs && ch > 0 => {}
                _ => {
                    return Err(arg_err!(
                        "feature extractor",
                        "truncation {} not inside blocks {:?}",
                        self.truncation,
                        self.blocks
                    ))
                }
            }
        }
        Ok(())
    }

    /// The conv layers up to and including the truncation point.
    fn convs(&self) -> Vec<(String, usize, usize)> {
        let Truncation::Conv { block, conv } = self.truncation else {
            return Vec::new();
        };
        let mut out = Vec::new();
        let mut in_c = self.in_channels;
        for (b, &(n, ch)) in self.blocks.iter().enumerate().take(block) {
            let last = if b + 1 == block { conv } else { n };
            for k in 0..last {
                out.push((format!("conv{}_{}", b + 1, k + 1), ch, in_c));
                in_c = ch;
            }
        }
        out
    }

    pub fn layout(&self) -> Layout {
        let mut l = Layout::new();
        for (name, out_c, in_c) in self.convs() {
            push_conv(&mut l, &name, out_c, in_c, 3);
        }
        l
    }

    /// Number of 2x2 pooling stages before the truncation point.
    pub fn pooling_stages(&self) -> usize {
        match self.truncation {
            Truncation::Input => 0,
            Truncation::Conv { block, .. } => block - 1,
        }
    }

    /// Seeded-random weights (MSRA for ReLU, unscaled). Never trained.
    pub fn init_random<T: Real>(&self, seed: u64) -> Result<ParamStore<T>> {
        self.validate()?;
        init_layout(&self.layout(), 0.0, 1.0, seed)
    }

    /// Checks a loaded weight set; the error lists every differing layer.
    pub fn check_weights<T: Real>(&self, store: &ParamStore<T>) -> Result<()> {
        let diff = super::layout_diff(store, &self.layout());
        if diff.is_empty() {
            Ok(())
        } else {
            Err(arg_err!(
                "feature extractor weights",
                "incompatible with architecture:\n{}",
                diff.join("\n")
            ))
        }
    }
}

/// Image batch `N x 1 x S x S` (or `N x in_channels x S x S`) to feature maps.
pub fn feature_extract<T: Real, O: Ops<T>>(
    ops: &mut O,
    params: &Bound<O::V>,
    config: &FeatureExtractorConfig,
    images: &O::V,
) -> Result<O::V> {
    let (_, c, _, _) = ops.value(images).dims4("feature_extract")?;
    let mut x = if c == config.in_channels {
        images.clone()
    } else if c == 1 {
        let parts: Vec<&O::V> = (0..config.in_channels).map(|_| images).collect();
        ops.concat_channels(&parts)?
    } else {
        return Err(shape_err!(
            "feature_extract",
            "cannot feed {} channels to an extractor expecting {}",
            c,
            config.in_channels
        ));
    };
    let Truncation::Conv { block, conv: last } = config.truncation else {
        return Ok(x);
    };
    for (b, &(n, _)) in config.blocks.iter().enumerate().take(block) {
        if b > 0 {
            x = ops.max_pool(&x, 2)?;
        }
        let stop = if b + 1 == block { last } else { n };
        for k in 0..stop {
            let y = conv(ops, params, &format!("conv{}_{}", b + 1, k + 1), &x, 1, 1)?;
            if b + 1 == block && k + 1 == stop {
                return Ok(y);
            }
            x = ops.leaky_relu(&y, 0.0)?;
        }
    }
    Err(arg_err!("feature_extract", "truncation {} unreachable", config.truncation))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use crate::ops::Eval;
    use crate::tensor::Tensor;

    #[test]
    fn default_truncation_quarters_resolution() {
        let cfg = FeatureExtractorConfig {
            blocks: vec![(2, 4), (2, 4), (4, 4)],
            ..FeatureExtractorConfig::default()
        };
        let p = cfg.init_random::<f32>(0).unwrap();
        let mut ev = Eval;
        let b = p.bind(&mut ev, false);
        let x = Tensor::from_fn([1, 1, 128, 128], |i| (i % 11) as f32 / 11.0);
        let f = feature_extract(&mut ev, &b, &cfg, &x).unwrap();
        assert_eq!(f.shape(), &[1, 4, 32, 32]);
        assert_eq!(cfg.pooling_stages(), 2);
    }

    #[test]
    fn identity_truncation_returns_input() {
        let cfg = FeatureExtractorConfig::identity();
        let p = cfg.init_random::<f64>(0).unwrap();
        assert!(p.is_empty());
        let mut ev = Eval;
        let b = p.bind(&mut ev, false);
        let x = Tensor::from_fn([2, 1, 4, 4], |i| i as f64);
        assert_eq!(feature_extract(&mut ev, &b, &cfg, &x).unwrap(), x);
    }

    #[test]
    fn truncation_tags_round_trip() {
        for tag in ["input", "conv3_4", "conv1_1"] {
            assert_eq!(tag.parse::<Truncation>().unwrap().to_string(), tag);
        }
        assert!("conv0_1".parse::<Truncation>().is_err());
        assert!("relu3_4".parse::<Truncation>().is_err());
    }

    #[test]
    fn mismatched_weights_list_every_layer() {
        let cfg = FeatureExtractorConfig::toy();
        let mut p = cfg.init_random::<f32>(1).unwrap();
        p.insert("conv1_1.weight", Tensor::zeros([3, 1, 3, 3]));
        p.insert("conv9_9.weight", Tensor::zeros([1]));
        let err = cfg.check_weights(&p).unwrap_err().to_string();
        assert!(err.contains("mismatch  conv1_1.weight"), "{err}");
        assert!(err.contains("unexpected conv9_9.weight"), "{err}");
    }

    #[test]
    fn layout_stops_at_truncation() {
        let cfg = FeatureExtractorConfig::default();
        let names: Vec<String> = cfg.layout().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names.len(), 16);
        assert_eq!(names.last().unwrap(), "conv3_4.bias");
    }
}
