use alloc::format;
use alloc::vec::Vec;

use super::{conv, init_layout, push_conv, Layout};
use crate::error::{arg_err, shape_err, Result};
use crate::ops::Ops;
use crate::params::{Bound, ParamStore};
use crate::real::Real;

/// Residual-in-residual dense block network hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub num_rrdb: usize,
    pub base_channels: usize,
    pub growth_channels: usize,
    pub convs_per_dense_block: usize,
    pub dense_blocks_per_rrdb: usize,
    /// Residual scaling applied to every dense block and RRDB branch.
    pub residual_scale: f64,
    pub leak: f64,
    pub init_scale: f64,
    pub upscale: usize,
    pub in_channels: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            num_rrdb: 23,
            base_channels: 64,
            growth_channels: 32,
            convs_per_dense_block: 5,
            dense_blocks_per_rrdb: 3,
            residual_scale: 0.2,
            leak: 0.2,
            init_scale: 0.1,
            upscale: 2,
            in_channels: 1,
        }
    }
}

impl GeneratorConfig {
    /// Two RRDBs over 16 feature channels; trains in minutes on one CPU core.
    pub fn toy() -> Self {
        Self {
            num_rrdb: 2,
            base_channels: 16,
            growth_channels: 8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let op = "generator config";
        if self.num_rrdb == 0 {
            return Err(arg_err!(op, "num_rrdb must be at least 1"));
        }
        if self.upscale != 2 {
            return Err(arg_err!(op, "only 2x upscaling is supported, got {}", self.upscale));
        }
        if !(0.0..=1.0).contains(&self.residual_scale) {
            return Err(arg_err!(op, "residual_scale {} outside [0, 1]", self.residual_scale));
        }
        if !(0.0..=1.0).contains(&self.leak) {
            return Err(arg_err!(op, "leak {} outside [0, 1]", self.leak));
        }
        if !(self.init_scale > 0.0 && self.init_scale <= 1.0) {
            return Err(arg_err!(op, "init_scale {} outside (0, 1]", self.init_scale));
        }
        if [
            self.base_channels,
            self.growth_channels,
            self.convs_per_dense_block,
            self.dense_blocks_per_rrdb,
            self.in_channels,
        ]
        .contains(&0)
        {
            return Err(arg_err!(op, "channel and block counts must be positive"));
        }
        Ok(())
    }

    /// Input channel count of each convolution inside a dense block.
    pub fn dense_block_input_channels(&self) -> Vec<usize> {
        (0..self.convs_per_dense_block)
            .map(|k| self.base_channels + k * self.growth_channels)
            .collect()
    }

    pub fn layout(&self) -> Layout {
        let mut l = Layout::new();
        let c = self.base_channels;
        push_conv(&mut l, "conv_first", c, self.in_channels, 3);
        let ins = self.dense_block_input_channels();
        for r in 0..self.num_rrdb {
            for d in 0..self.dense_blocks_per_rrdb {
                for (k, &in_c) in ins.iter().enumerate() {
                    let out_c = if k + 1 == ins.len() { c } else { self.growth_channels };
                    push_conv(&mut l, &format!("rrdb{r}.db{d}.conv{k}"), out_c, in_c, 3);
                }
            }
        }
        push_conv(&mut l, "trunk_conv", c, c, 3);
        push_conv(&mut l, "hr_conv", c, c, 3);
        push_conv(&mut l, "conv_last", self.in_channels, c, 3);
        l
    }

    pub fn param_count(&self) -> usize {
        self.layout()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }

    pub fn init<T: Real>(&self, seed: u64) -> Result<ParamStore<T>> {
        self.validate()?;
        init_layout(&self.layout(), self.leak, self.init_scale, seed)
    }

    /// How far (in input pixels) an output pixel's dependence reaches.
    /// Tiles carrying at least this much context reproduce untiled output.
    pub fn receptive_radius(&self) -> usize {
        let lr_convs = 2 + self.num_rrdb * self.dense_blocks_per_rrdb * self.convs_per_dense_block;
        // two 3x3 convs after upsampling reach one more input pixel
        lr_convs + 1
    }
}

/// One dense block: each conv sees the concatenation of the block input and
/// all previous conv outputs; returns `x + beta * last`.
pub fn dense_block_forward<T: Real, O: Ops<T>>(
    ops: &mut O,
    params: &Bound<O::V>,
    prefix: &str,
    x: &O::V,
    config: &GeneratorConfig,
) -> Result<O::V> {
    let c = ops.value(x).shape().get(1).copied().unwrap_or(0);
    if c != config.base_channels {
        return Err(shape_err!(
            "dense_block",
            "input has {} channels, block expects {}",
            c,
            config.base_channels
        ));
    }
    let n = config.convs_per_dense_block;
    let mut feats: Vec<O::V> = Vec::with_capacity(n);
    feats.push(x.clone());
    for k in 0..n {
        let input = if k == 0 {
            x.clone()
        } else {
            let refs: Vec<&O::V> = feats.iter().collect();
            ops.concat_channels(&refs)?
        };
        let out = conv(ops, params, &format!("{prefix}.conv{k}"), &input, 1, 1)?;
        if k + 1 == n {
            let scaled = ops.scale(&out, config.residual_scale);
            return ops.add(x, &scaled);
        }
        let act = ops.leaky_relu(&out, config.leak)?;
        feats.push(act);
    }
    unreachable!("convs_per_dense_block validated to be positive")
}

/// `x + beta * DB_n(...DB_1(x))`.
pub fn rrdb_forward<T: Real, O: Ops<T>>(
    ops: &mut O,
    params: &Bound<O::V>,
    prefix: &str,
    x: &O::V,
    config: &GeneratorConfig,
) -> Result<O::V> {
    let mut h = x.clone();
    for d in 0..config.dense_blocks_per_rrdb {
        h = dense_block_forward(ops, params, &format!("{prefix}.db{d}"), &h, config)?;
    }
    let scaled = ops.scale(&h, config.residual_scale);
    ops.add(x, &scaled)
}

/// LR batch `N x C x h x w` to SR batch `N x C x 2h x 2w`. Output is not clamped.
pub fn generator_forward<T: Real, O: Ops<T>>(
    ops: &mut O,
    params: &Bound<O::V>,
    config: &GeneratorConfig,
    lr: &O::V,
) -> Result<O::V> {
    config.validate()?;
    let (_, c, _, _) = ops.value(lr).dims4("generator")?;
    if c != config.in_channels {
        return Err(shape_err!(
            "generator",
            "input has {} channels, generator expects {}",
            c,
            config.in_channels
        ));
    }
    let first = conv(ops, params, "conv_first", lr, 1, 1)?;
    let mut trunk = first.clone();
    for r in 0..config.num_rrdb {
        trunk = rrdb_forward(ops, params, &format!("rrdb{r}"), &trunk, config)?;
    }
    let trunk = conv(ops, params, "trunk_conv", &trunk, 1, 1)?;
    let feat = ops.add(&first, &trunk)?;
    let up = ops.upsample_nearest(&feat, config.upscale)?;
    let hr = conv(ops, params, "hr_conv", &up, 1, 1)?;
    let hr = ops.leaky_relu(&hr, config.leak)?;
    conv(ops, params, "conv_last", &hr, 1, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use crate::ops::Eval;
    use crate::tensor::Tensor;

    fn tiny() -> GeneratorConfig {
        GeneratorConfig {
            num_rrdb: 1,
            base_channels: 4,
            growth_channels: 2,
            convs_per_dense_block: 3,
            dense_blocks_per_rrdb: 2,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn doubles_spatial_dims() {
        let cfg = tiny();
        let p = cfg.init::<f32>(1).unwrap();
        let mut ev = Eval;
        let bound = p.bind(&mut ev, false);
        let x = Tensor::from_fn([2, 1, 5, 7], |i| (i % 13) as f32 / 13.0);
        let y = generator_forward(&mut ev, &bound, &cfg, &x).unwrap();
        assert_eq!(y.shape(), &[2, 1, 10, 14]);
    }

    #[test]
    fn dense_block_conv_inputs_grow_by_growth_channels() {
        let cfg = GeneratorConfig {
            base_channels: 16,
            growth_channels: 8,
            ..GeneratorConfig::default()
        };
        assert_eq!(cfg.dense_block_input_channels(), vec![16, 24, 32, 40, 48]);
    }

    #[test]
    fn rejects_wrong_channel_count() {
        let cfg = tiny();
        let p = cfg.init::<f32>(1).unwrap();
        let mut ev = Eval;
        let bound = p.bind(&mut ev, false);
        let x = Tensor::zeros([1, 2, 4, 4]);
        assert!(generator_forward(&mut ev, &bound, &cfg, &x).is_err());
    }

    #[test]
    fn missing_parameter_is_reported() {
        let cfg = tiny();
        let mut p = cfg.init::<f32>(1).unwrap();
        let full = p.clone();
        p = full
            .iter()
            .filter(|(n, _)| *n != "trunk_conv.weight")
            .map(|(n, t)| (n.into(), t.clone()))
            .collect();
        let mut ev = Eval;
        let bound = p.bind(&mut ev, false);
        let x = Tensor::zeros([1, 1, 4, 4]);
        let err = generator_forward(&mut ev, &bound, &cfg, &x).unwrap_err();
        assert_eq!(err, crate::Error::MissingParam("trunk_conv.weight".into()));
    }
}
