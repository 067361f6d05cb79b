//! Adam with the AMSGrad correction.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{arg_err, shape_err, Error, Result};
use crate::params::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    fn validate(&self) -> Result<()> {
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(arg_err!("adam", "{} = {} outside [0, 1)", name, b));
            }
        }
        if !(self.eps > 0.0) {
            return Err(arg_err!("adam", "eps must be positive"));
        }
        Ok(())
    }
}

/// Moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub first_moment: Vec<T>,
    pub second_moment: Vec<T>,
    /// Element-wise running maximum of `second_moment`.
    pub max_second_moment: Vec<T>,
    pub step_count: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(len: usize) -> Self {
        Self {
            first_moment: vec![T::zero(); len],
            second_moment: vec![T::zero(); len],
            max_second_moment: vec![T::zero(); len],
            step_count: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.first_moment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first_moment.is_empty()
    }
}

/// One bias-corrected AMSGrad update of `param` in place.
///
/// Non-finite gradients are rejected before anything is modified.
pub fn adam_amsgrad_step<T: Real>(
    param: &mut [T],
    grad: &[T],
    state: &mut AdamState<T>,
    lr: f64,
    config: &AdamConfig,
) -> Result<()> {
    config.validate()?;
    if param.len() != grad.len() || state.len() != param.len() {
        return Err(shape_err!(
            "adam",
            "param {} / grad {} / state {} lengths differ",
            param.len(),
            grad.len(),
            state.len()
        ));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite(String::from("gradient")));
    }
    apply(param, grad, state, lr, config);
    Ok(())
}

fn apply<T: Real>(param: &mut [T], grad: &[T], state: &mut AdamState<T>, lr: f64, config: &AdamConfig) {
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (T::from_f64(config.beta1), T::from_f64(config.beta2));
    let one = T::one();
    let bias1 = T::from_f64(1.0 - Float::powi(config.beta1, t));
    let bias2 = T::from_f64(1.0 - Float::powi(config.beta2, t));
    let lr = T::from_f64(lr);
    let eps = T::from_f64(config.eps);
    for i in 0..param.len() {
        let g = grad[i];
        let m = b1 * state.first_moment[i] + (one - b1) * g;
        let v = b2 * state.second_moment[i] + (one - b2) * g * g;
        let vmax = state.max_second_moment[i].max(v);
        state.first_moment[i] = m;
        state.second_moment[i] = v;
        state.max_second_moment[i] = vmax;
        let m_hat = m / bias1;
        let v_hat = vmax / bias2;
        param[i] = param[i] - lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Optimizer state for every tensor in a [`ParamStore`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamStates<T> {
    states: BTreeMap<String, AdamState<T>>,
}

impl<T: Real> AdamStates<T> {
    pub fn for_params(params: &ParamStore<T>) -> Self {
        Self {
            states: params
                .iter()
                .map(|(k, t)| (String::from(k), AdamState::new(t.numel())))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&AdamState<T>> {
        self.states.get(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, state: AdamState<T>) {
        self.states.insert(name.into(), state);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &AdamState<T>)> {
        self.states.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Updates every parameter that has a gradient. All gradients are
    /// validated first, so on error neither parameters nor state change.
    pub fn step(
        &mut self,
        params: &mut ParamStore<T>,
        grads: &BTreeMap<String, Tensor<T>>,
        lr: f64,
        config: &AdamConfig,
    ) -> Result<()> {
        config.validate()?;
        for (name, g) in grads {
            let p = params
                .get(name)
                .ok_or_else(|| Error::MissingParam(name.clone()))?;
            let st = self
                .states
                .get(name)
                .ok_or_else(|| Error::MissingParam(name.clone()))?;
            if p.shape() != g.shape() || st.len() != p.numel() {
                return Err(shape_err!(
                    "adam",
                    "`{}`: param {:?}, grad {:?}, state {}",
                    name,
                    p.shape(),
                    g.shape(),
                    st.len()
                ));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite(alloc::format!("gradient of `{name}`")));
            }
        }
        for (name, g) in grads {
            let p = params.get_mut(name).expect("validated");
            let st = self.states.get_mut(name).expect("validated");
            apply(p.data_mut(), g.data(), st, lr, config);
        }
        Ok(())
    }
}
