//! Randomized gradient cases covering every differentiable op, every loss
//! and the composed toy networks.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_gradients, check_gradients_against, GradCheckReport, ScalarFn};
use crate::error::Result;
use crate::init::derive_seed;
use crate::losses::{l1_loss, l2_loss, perceptual_loss, rad_losses, texture_loss, Extractor, Norm};
use crate::models::{
    discriminator_forward, generator_forward, DiscriminatorConfig, FeatureExtractorConfig, GeneratorConfig, Truncation,
};
use crate::ops::Ops;
use crate::params::{Bound, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

/// Step used for every case.
pub const EPS: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct CaseResult {
    pub name: String,
    pub report: GradCheckReport,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Magnitudes in `[0.1, 1]` with random signs, so kinks at zero stay more
/// than `EPS` away.
fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Distinct values at least 0.05 apart, shuffled, so no pooling window has
/// a near tie.
fn separated(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.05 - n as f64 * 0.025).collect();
    v.shuffle(rng);
    Tensor::new(shape, v).expect("sized from shape")
}

/// `sum(y * r)` for fixed random `r`, computed as a one-output dense layer.
/// Linear in `y`, so it adds no curvature to the finite differences.
fn project<T: Real, O: Ops<T>>(ops: &mut O, y: &O::V, r: &Tensor<f64>) -> Result<O::V> {
    let n = r.numel();
    let flat = ops.reshape(y, &[1, n])?;
    let w = ops.leaf(&r.cast::<T>().reshape([n, 1])?, false);
    let b = ops.leaf(&Tensor::zeros([1]), false);
    let out = ops.dense(&flat, &w, &b)?;
    Ok(ops.sum(&out))
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Conv { stride: usize, pad: usize },
    Dense,
    LeakyRelu(f64),
    Upsample,
    MaxPool,
    Concat,
    Add,
    Sub,
    Scale(f64),
    SubScalar,
    Abs,
    Square,
    Softplus,
    Mean,
    Sum,
    Flatten,
    Gram,
    L1,
    L2,
}

struct OpCase {
    op: Op,
    target: Option<Tensor<f64>>,
}

impl ScalarFn for OpCase {
    fn eval<T: Real, O: Ops<T>>(&self, ops: &mut O, x: &[O::V]) -> Result<O::V> {
        let y = match self.op {
            Op::Conv { stride, pad } => ops.conv2d(&x[0], &x[1], &x[2], stride, pad)?,
            Op::Dense => ops.dense(&x[0], &x[1], &x[2])?,
            Op::LeakyRelu(a) => ops.leaky_relu(&x[0], a)?,
            Op::Upsample => ops.upsample_nearest(&x[0], 2)?,
            Op::MaxPool => ops.max_pool(&x[0], 2)?,
            Op::Concat => ops.concat_channels(&[&x[0], &x[1], &x[0]])?,
            Op::Add => ops.add(&x[0], &x[1])?,
            Op::Sub => ops.sub(&x[0], &x[1])?,
            Op::Scale(f) => ops.scale(&x[0], f),
            Op::SubScalar => ops.sub_scalar(&x[0], &x[1])?,
            Op::Abs => ops.abs(&x[0]),
            Op::Square => ops.square(&x[0]),
            Op::Softplus => ops.softplus(&x[0]),
            Op::Mean => ops.mean(&x[0])?,
            Op::Sum => ops.sum(&x[0]),
            Op::Flatten => ops.flatten(&x[0])?,
            Op::Gram => ops.gram(&x[0])?,
            Op::L1 => l1_loss(ops, &x[0], &x[1])?,
            Op::L2 => l2_loss(ops, &x[0], &x[1])?,
        };
        match &self.target {
            Some(t) => project(ops, &y, t),
            None => Ok(y),
        }
    }
}

fn op_case(op: Op, rng: &mut ChaCha8Rng) -> (OpCase, Vec<Tensor<f64>>) {
    let img = [2, 3, 5, 5];
    let (inputs, out_shape): (Vec<Tensor<f64>>, Option<Vec<usize>>) = match op {
        Op::Conv { stride, pad } => {
            let k = if pad == 0 { 1 } else { 3 };
            let out = (5 + 2 * pad - k) / stride + 1;
            (
                vec![
                    uniform(rng, &img, -1.0, 1.0),
                    uniform(rng, &[4, 3, k, k], -0.5, 0.5),
                    uniform(rng, &[4], -0.5, 0.5),
                ],
                Some(vec![2, 4, out, out]),
            )
        }
        Op::Dense => (
            vec![
                uniform(rng, &[3, 6], -1.0, 1.0),
                uniform(rng, &[6, 4], -0.5, 0.5),
                uniform(rng, &[4], -0.5, 0.5),
            ],
            Some(vec![3, 4]),
        ),
        Op::LeakyRelu(_) | Op::Abs => (vec![off_zero(rng, &img)], Some(img.to_vec())),
        Op::Upsample => (vec![uniform(rng, &[1, 2, 3, 4], -1.0, 1.0)], Some(vec![1, 2, 6, 8])),
        Op::MaxPool => (vec![separated(rng, &[2, 2, 4, 6])], Some(vec![2, 2, 2, 3])),
        Op::Concat => (
            vec![uniform(rng, &[2, 1, 3, 3], -1.0, 1.0), uniform(rng, &[2, 2, 3, 3], -1.0, 1.0)],
            Some(vec![2, 4, 3, 3]),
        ),
        Op::Add | Op::Sub => (
            vec![uniform(rng, &img, -1.0, 1.0), uniform(rng, &img, -1.0, 1.0)],
            Some(img.to_vec()),
        ),
        Op::Scale(_) | Op::Square | Op::Softplus => (vec![uniform(rng, &img, -2.0, 2.0)], Some(img.to_vec())),
        Op::SubScalar => (
            vec![uniform(rng, &img, -1.0, 1.0), uniform(rng, &[1], -1.0, 1.0)],
            Some(img.to_vec()),
        ),
        Op::Mean | Op::Sum => (vec![uniform(rng, &img, -1.0, 1.0)], None),
        Op::Flatten => (vec![uniform(rng, &[2, 2, 2, 3], -1.0, 1.0)], Some(vec![2, 12])),
        Op::Gram => (vec![uniform(rng, &[2, 3, 4, 4], -1.0, 1.0)], Some(vec![2, 3, 3])),
        Op::L1 => {
            // keep every difference away from the kink at zero
            let a = uniform(rng, &[1, 1, 8, 8], -1.0, 1.0);
            let d = off_zero(rng, &[1, 1, 8, 8]);
            let b = Tensor::from_fn([1, 1, 8, 8], |i| a.data()[i] + d.data()[i]);
            (vec![a, b], None)
        }
        Op::L2 => (
            vec![uniform(rng, &[1, 1, 8, 8], -1.0, 1.0), uniform(rng, &[1, 1, 8, 8], -1.0, 1.0)],
            None,
        ),
    };
    let target = out_shape.map(|s| uniform(rng, &s, -1.0, 1.0));
    (OpCase { op, target }, inputs)
}

struct FeatureLoss {
    config: FeatureExtractorConfig,
    params: ParamStore<f64>,
    texture: bool,
    norm: Norm,
}

impl ScalarFn for FeatureLoss {
    fn eval<T: Real, O: Ops<T>>(&self, ops: &mut O, x: &[O::V]) -> Result<O::V> {
        let bound = self.params.cast::<T>().bind(ops, false);
        let ext = Extractor {
            config: &self.config,
            params: &bound,
        };
        if self.texture {
            texture_loss(ops, ext, &x[0], &x[1], self.norm)
        } else {
            perceptual_loss(ops, ext, &x[0], &x[1], self.norm)
        }
    }
}

/// Relativistic losses as computed on the tape.
struct Rad {
    generator: bool,
}

impl ScalarFn for Rad {
    fn eval<T: Real, O: Ops<T>>(&self, ops: &mut O, x: &[O::V]) -> Result<O::V> {
        let l = rad_losses(ops, &x[0], &x[1])?;
        Ok(if self.generator { l.generator } else { l.discriminator })
    }
}

/// The same losses with both class means frozen at their base values,
/// which is the function the tape differentiates.
struct FrozenRad {
    generator: bool,
    mean_real: f64,
    mean_fake: f64,
}

impl ScalarFn for FrozenRad {
    fn eval<T: Real, O: Ops<T>>(&self, ops: &mut O, x: &[O::V]) -> Result<O::V> {
        let mr = ops.leaf(&Tensor::scalar(T::from_f64(self.mean_real)), false);
        let mf = ops.leaf(&Tensor::scalar(T::from_f64(self.mean_fake)), false);
        let z_r = ops.sub_scalar(&x[0], &mf)?;
        let z_f = ops.sub_scalar(&x[1], &mr)?;
        let sign = if self.generator { 1.0 } else { -1.0 };
        let a = ops.scale(&z_r, sign);
        let b = ops.scale(&z_f, -sign);
        let a = ops.softplus(&a);
        let b = ops.softplus(&b);
        let a = ops.mean(&a)?;
        let b = ops.mean(&b)?;
        ops.add(&a, &b)
    }
}

fn mean(t: &Tensor<f64>) -> f64 {
    t.data().iter().sum::<f64>() / t.numel() as f64
}

enum Net {
    Generator(GeneratorConfig),
    Discriminator(DiscriminatorConfig),
}

/// A network as a function of its input and every parameter tensor.
struct NetCase {
    net: Net,
    names: Vec<String>,
    target: Tensor<f64>,
}

impl ScalarFn for NetCase {
    fn eval<T: Real, O: Ops<T>>(&self, ops: &mut O, x: &[O::V]) -> Result<O::V> {
        let bound: Bound<O::V> = self.names.iter().cloned().zip(x[1..].iter().cloned()).collect();
        let y = match &self.net {
            Net::Generator(c) => generator_forward(ops, &bound, c, &x[0])?,
            Net::Discriminator(c) => discriminator_forward(ops, &bound, c, &x[0])?,
        };
        project(ops, &y, &self.target)
    }
}

/// The composed generator checked by the suite: two RRDBs, 8 channels.
///
/// Weights are drawn unscaled: with the 0.1 training scale, activations
/// deep in the stack shrink to ~1e-6 and any `EPS` step straddles
/// activation kinks, which says nothing about the gradient code.
pub fn toy_generator() -> GeneratorConfig {
    GeneratorConfig {
        num_rrdb: 2,
        base_channels: 8,
        growth_channels: 4,
        init_scale: 1.0,
        ..GeneratorConfig::default()
    }
}

/// The discriminator checked by the suite: 32x32 input, unscaled weights.
pub fn toy_discriminator() -> DiscriminatorConfig {
    DiscriminatorConfig {
        init_scale: 1.0,
        ..DiscriminatorConfig::toy(32)
    }
}

fn net_case(net: Net, seed: u64, rng: &mut ChaCha8Rng) -> Result<(NetCase, Vec<Tensor<f64>>)> {
    let (params, x, out): (ParamStore<f64>, _, Vec<usize>) = match &net {
        Net::Generator(c) => (c.init(seed)?, uniform(rng, &[1, 1, 5, 5], 0.0, 1.0), vec![1, 1, 10, 10]),
        Net::Discriminator(c) => (
            c.init(seed)?,
            uniform(rng, &[2, 1, c.input_size, c.input_size], 0.0, 1.0),
            vec![2, 1],
        ),
    };
    let names: Vec<String> = params.names().map(String::from).collect();
    let mut inputs = vec![x];
    inputs.extend(params.iter().map(|(_, t)| t.clone()));
    let target = uniform(rng, &out, -1.0, 1.0);
    Ok((NetCase { net, names, target }, inputs))
}

fn cast_all<T: Real>(ts: &[Tensor<f64>]) -> Vec<Tensor<T>> {
    ts.iter().map(Tensor::cast).collect()
}

/// Runs every case `repeats` times with fresh random inputs, sampling at
/// most `max_coords` elements per input tensor.
pub fn run_suite<T: Real>(seed: u64, repeats: usize, max_coords: usize, eps: f64) -> Result<Vec<CaseResult>> {
    let ops = [
        Op::Conv { stride: 1, pad: 1 },
        Op::Conv { stride: 2, pad: 1 },
        Op::Conv { stride: 1, pad: 0 },
        Op::Dense,
        Op::LeakyRelu(0.2),
        Op::LeakyRelu(0.0),
        Op::Upsample,
        Op::MaxPool,
        Op::Concat,
        Op::Add,
        Op::Sub,
        Op::Scale(-0.7),
        Op::SubScalar,
        Op::Abs,
        Op::Square,
        Op::Softplus,
        Op::Mean,
        Op::Sum,
        Op::Flatten,
        Op::Gram,
        Op::L1,
        Op::L2,
    ];
    let mut out = Vec::new();
    let mut push = |name: String, report: GradCheckReport| out.push(CaseResult { name, report });
    for rep in 0..repeats {
        let case_seed = derive_seed(seed, rep as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(case_seed);

        for op in ops {
            let (case, inputs) = op_case(op, &mut rng);
            let r = check_gradients(&case, &cast_all::<T>(&inputs), eps, max_coords, case_seed)?;
            push(format!("{op:?} #{rep}"), r);
        }

        let ext_config = FeatureExtractorConfig {
            in_channels: 1,
            blocks: vec![(2, 4), (2, 4)],
            truncation: Truncation::Conv { block: 2, conv: 2 },
        };
        let ext_params = ext_config.init_random::<f64>(derive_seed(case_seed, 7))?;
        for texture in [false, true] {
            for norm in [Norm::L1, Norm::L2] {
                let case = FeatureLoss {
                    config: ext_config.clone(),
                    params: ext_params.clone(),
                    texture,
                    norm,
                };
                let sr = uniform(&mut rng, &[2, 1, 8, 8], 0.0, 1.0);
                let hr = uniform(&mut rng, &[2, 1, 8, 8], 0.0, 1.0);
                let r = check_gradients(&case, &cast_all::<T>(&[sr, hr]), eps, max_coords, case_seed)?;
                let kind = if texture { "texture" } else { "perceptual" };
                push(format!("{kind}_{norm} #{rep}"), r);
            }
        }

        for generator in [true, false] {
            let real = uniform(&mut rng, &[4, 1], -10.0, 10.0);
            let fake = uniform(&mut rng, &[4, 1], -10.0, 10.0);
            let inputs = cast_all::<T>(&[real, fake]);
            // means of the inputs as the precision under test sees them
            let frozen = FrozenRad {
                generator,
                mean_real: mean(&inputs[0].cast()),
                mean_fake: mean(&inputs[1].cast()),
            };
            let r = check_gradients_against(&Rad { generator }, &frozen, &inputs, eps, max_coords, case_seed)?;
            push(format!("rad_{} #{rep}", if generator { "G" } else { "D" }), r);
        }

        let (case, inputs) = net_case(Net::Generator(toy_generator()), derive_seed(case_seed, 1), &mut rng)?;
        let r = check_gradients(&case, &cast_all::<T>(&inputs), eps, max_coords, case_seed)?;
        push(format!("generator #{rep}"), r);
        let (case, inputs) = net_case(Net::Discriminator(toy_discriminator()), derive_seed(case_seed, 2), &mut rng)?;
        let r = check_gradients(&case, &cast_all::<T>(&inputs), eps, max_coords, case_seed)?;
        push(format!("discriminator #{rep}"), r);
    }
    Ok(out)
}
