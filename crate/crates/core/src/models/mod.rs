//! Generator, discriminator and frozen feature extractor.
//!
//! Every network is described by a config that knows its parameter layout
//! (names and shapes) and a forward function written against [`Ops`], so
//! the same code serves training (on a [`Graph`](crate::Graph)) and
//! inference (on [`Eval`](crate::Eval)).

mod discriminator;
mod extractor;
mod generator;

pub use discriminator::{discriminator_forward, DiscriminatorConfig};
pub use extractor::{feature_extract, FeatureExtractorConfig, Truncation};
pub use generator::{dense_block_forward, generator_forward, rrdb_forward, GeneratorConfig};

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::init::{derive_seed, msra_init};
use crate::ops::Ops;
use crate::params::{Bound, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

/// Ordered `(name, shape)` pairs describing a network's parameters.
pub type Layout = Vec<(String, Vec<usize>)>;

fn push_conv(layout: &mut Layout, name: &str, out_c: usize, in_c: usize, k: usize) {
    layout.push((format!("{name}.weight"), vec![out_c, in_c, k, k]));
    layout.push((format!("{name}.bias"), vec![out_c]));
}

fn push_dense(layout: &mut Layout, name: &str, in_f: usize, out_f: usize) {
    layout.push((format!("{name}.weight"), vec![in_f, out_f]));
    layout.push((format!("{name}.bias"), vec![out_f]));
}

fn conv<T: Real, O: Ops<T>>(
    ops: &mut O,
    params: &Bound<O::V>,
    name: &str,
    x: &O::V,
    stride: usize,
    pad: usize,
) -> Result<O::V> {
    let w = params.get(&format!("{name}.weight"))?;
    let b = params.get(&format!("{name}.bias"))?;
    ops.conv2d(x, w, b, stride, pad)
}

fn dense<T: Real, O: Ops<T>>(ops: &mut O, params: &Bound<O::V>, name: &str, x: &O::V) -> Result<O::V> {
    let w = params.get(&format!("{name}.weight"))?;
    let b = params.get(&format!("{name}.bias"))?;
    ops.dense(x, w, b)
}

/// Weights drawn from the scaled MSRA distribution, biases zero. Each
/// tensor gets its own seed stream so adding a layer does not reshuffle the
/// others.
fn init_layout<T: Real>(layout: &Layout, leak: f64, scale: f64, seed: u64) -> Result<ParamStore<T>> {
    let mut store = ParamStore::new();
    for (i, (name, shape)) in layout.iter().enumerate() {
        let t = if name.ends_with(".bias") {
            Tensor::zeros(shape.clone())
        } else {
            msra_init(shape, leak, scale, derive_seed(seed, i as u64))?
        };
        store.insert(name.clone(), t);
    }
    Ok(store)
}

/// One line per parameter that is missing, unexpected, or mis-shaped.
pub fn layout_diff<T: Real>(store: &ParamStore<T>, expected: &Layout) -> Vec<String> {
    let mut diff = Vec::new();
    for (name, shape) in expected {
        match store.get(name) {
            None => diff.push(format!("missing   {name}: expected {shape:?}")),
            Some(t) if t.shape() != shape.as_slice() => diff.push(format!(
                "mismatch  {name}: expected {shape:?}, found {:?}",
                t.shape()
            )),
            Some(_) => {}
        }
    }
    for (name, t) in store.iter() {
        if !expected.iter().any(|(n, _)| n == name) {
            diff.push(format!("unexpected {name}: {:?}", t.shape()));
        }
    }
    diff
}
