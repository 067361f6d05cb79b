use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{conv, dense, init_layout, push_conv, push_dense, Layout};
use crate::error::{arg_err, shape_err, Result};
use crate::ops::Ops;
use crate::params::{Bound, ParamStore};
use crate::real::Real;

/// VGG-style discriminator: 3x3 convolutions alternating stride 1 and 2,
/// then two dense layers. Emits raw logits (no sigmoid).
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorConfig {
    pub input_size: usize,
    pub in_channels: usize,
    /// Output channels per conv; conv `i` uses stride 1 for even `i`, 2 for odd.
    pub channel_sequence: Vec<usize>,
    pub dense_units: usize,
    pub leak: f64,
    pub init_scale: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            input_size: 128,
            in_channels: 1,
            channel_sequence: vec![64, 64, 128, 128, 256, 256, 512, 512],
            dense_units: 1024,
            leak: 0.2,
            init_scale: 0.1,
        }
    }
}

impl DiscriminatorConfig {
    pub fn toy(input_size: usize) -> Self {
        Self {
            input_size,
            channel_sequence: vec![8, 8, 16, 16],
            dense_units: 32,
            ..Self::default()
        }
    }

    pub fn stride(i: usize) -> usize {
        if i % 2 == 0 {
            1
        } else {
            2
        }
    }

    /// Spatial side length after the conv stack.
    pub fn final_spatial(&self) -> usize {
        (0..self.channel_sequence.len()).fold(self.input_size, |s, i| {
            let st = Self::stride(i);
            if s + 2 < 3 {
                0
            } else {
                (s + 2 - 3) / st + 1
            }
        })
    }

    pub fn flat_features(&self) -> usize {
        let s = self.final_spatial();
        s * s * self.channel_sequence.last().copied().unwrap_or(self.in_channels)
    }

    pub fn validate(&self) -> Result<()> {
        let op = "discriminator config";
        if self.channel_sequence.is_empty() || self.channel_sequence.contains(&0) {
            return Err(arg_err!(op, "channel sequence must be non-empty and positive"));
        }
        if self.input_size == 0 || self.final_spatial() == 0 {
            return Err(arg_err!(
                op,
                "input size {} vanishes after {} convs",
                self.input_size,
                self.channel_sequence.len()
            ));
        }
        if self.dense_units == 0 || self.in_channels == 0 {
            return Err(arg_err!(op, "dense_units and in_channels must be positive"));
        }
        if !(self.init_scale > 0.0 && self.init_scale <= 1.0) {
            return Err(arg_err!(op, "init_scale {} outside (0, 1]", self.init_scale));
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        let mut l = Layout::new();
        let mut in_c = self.in_channels;
        for (i, &out_c) in self.channel_sequence.iter().enumerate() {
            push_conv(&mut l, &format!("conv{i}"), out_c, in_c, 3);
            in_c = out_c;
        }
        push_dense(&mut l, "dense0", self.flat_features(), self.dense_units);
        push_dense(&mut l, "dense1", self.dense_units, 1);
        l
    }

    pub fn init<T: Real>(&self, seed: u64) -> Result<ParamStore<T>> {
        self.validate()?;
        init_layout(&self.layout(), self.leak, self.init_scale, seed)
    }
}

/// Image batch `N x C x S x S` to logits `N x 1`.
pub fn discriminator_forward<T: Real, O: Ops<T>>(
    ops: &mut O,
    params: &Bound<O::V>,
    config: &DiscriminatorConfig,
    images: &O::V,
) -> Result<O::V> {
    let (_, c, h, w) = ops.value(images).dims4("discriminator")?;
    if h != config.input_size || w != config.input_size || c != config.in_channels {
        return Err(shape_err!(
            "discriminator",
            "expects {}x{}x{} input, got {}x{}x{}",
            config.in_channels,
            config.input_size,
            config.input_size,
            c,
            h,
            w
        ));
    }
    let mut x = images.clone();
    for i in 0..config.channel_sequence.len() {
        let y = conv(ops, params, &format!("conv{i}"), &x, DiscriminatorConfig::stride(i), 1)?;
        x = ops.leaky_relu(&y, config.leak)?;
    }
    let flat = ops.flatten(&x)?;
    let hidden = dense(ops, params, "dense0", &flat)?;
    let hidden = ops.leaky_relu(&hidden, config.leak)?;
    dense(ops, params, "dense1", &hidden)
}
