//! Named parameter tensors with gradient accumulators, plus Adam.

use rand::Rng;
use std::collections::HashMap;

use super::tensor::Tensor;
use crate::{Error, Result, Scalar};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

struct Param<S: Scalar> {
    name: String,
    value: Tensor<S>,
    grad: Tensor<S>,
}

/// Insertion-ordered collection of named parameters. Iteration order is the
/// insertion order, never hash order, so optimizer sweeps are deterministic.
pub struct ParamStore<S: Scalar> {
    params: Vec<Param<S>>,
    index: HashMap<String, usize>,
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self { params: Vec::new(), index: HashMap::new() }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<S>) -> ParamId {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        let grad = Tensor::zeros(value.shape().to_vec());
        let id = ParamId(self.params.len());
        self.index.insert(name.to_string(), id.0);
        self.params.push(Param { name: name.to_string(), value, grad });
        id
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor<S> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<S> {
        &self.params[id.0].grad
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn accumulate_grad(&mut self, id: ParamId, delta: &Tensor<S>) {
        debug_assert_eq!(self.params[id.0].grad.shape(), delta.shape());
        self.params[id.0].grad.axpy(delta, S::one());
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(S::zero());
        }
    }

    /// Total number of scalar parameters.
    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.params.iter().map(|p| (p.name.as_str(), &p.value))
    }

    /// Copy all values from `other` (matching by name and shape).
    pub fn copy_values_from(&mut self, other: &ParamStore<S>) {
        for p in &mut self.params {
            let src = &other.params[other.index[&p.name]];
            assert_eq!(p.value.shape(), src.value.shape());
            p.value.values_mut().copy_from_slice(src.value.values());
        }
    }

    /// Polyak averaging: `self ← tau * other + (1 - tau) * self`.
    pub fn soft_update_from(&mut self, other: &ParamStore<S>, tau: f64) {
        let t = S::c(tau);
        let keep = S::one() - t;
        for p in &mut self.params {
            let src = &other.params[other.index[&p.name]];
            for (a, &b) in p.value.values_mut().iter_mut().zip(src.value.values()) {
                *a = *a * keep + b * t;
            }
        }
    }
}

/// Adam configuration. The learning rate is separate (per call), the betas
/// and epsilon are the conventional defaults.
#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second-moment state, aligned with a store's parameters.
pub struct AdamState<S: Scalar> {
    m: Vec<Tensor<S>>,
    v: Vec<Tensor<S>>,
    step: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(store: &ParamStore<S>) -> Self {
        let m = store.params.iter().map(|p| Tensor::zeros(p.value.shape().to_vec())).collect();
        let v = store.params.iter().map(|p| Tensor::zeros(p.value.shape().to_vec())).collect();
        Self { m, v, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update over every parameter in the store.
/// Gradients are zeroed afterwards.
pub fn adam_step<S: Scalar>(
    store: &mut ParamStore<S>,
    state: &mut AdamState<S>,
    lr: f64,
    ap: AdamParams,
) -> Result<()> {
    if state.m.len() != store.params.len() {
        return Err(Error::Config("adam state does not match parameter store".into()));
    }
    state.step += 1;
    let b1 = S::c(ap.beta1);
    let b2 = S::c(ap.beta2);
    let eps = S::c(ap.eps);
    let lr_s = S::c(lr);
    let bc1 = S::one() - S::c(ap.beta1.powi(state.step as i32));
    let bc2 = S::one() - S::c(ap.beta2.powi(state.step as i32));
    for (i, p) in store.params.iter_mut().enumerate() {
        let m = state.m[i].values_mut();
        let v = state.v[i].values_mut();
        for ((pv, &g), (mi, vi)) in p
            .value
            .values_mut()
            .iter_mut()
            .zip(p.grad.values())
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            *mi = b1 * *mi + (S::one() - b1) * g;
            *vi = b2 * *vi + (S::one() - b2) * g * g;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *pv = *pv - lr_s * mhat / (vhat.sqrt() + eps);
        }
        p.grad.fill(S::zero());
    }
    Ok(())
}

/// Uniform fan-in init: `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` scaled by
/// `scale` (use a small scale for output layers that should start near zero).
pub fn init_uniform<S: Scalar, R: Rng>(
    shape: Vec<usize>,
    fan_in: usize,
    scale: f64,
    rng: &mut R,
) -> Tensor<S> {
    let bound = scale / (fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let values = (0..n).map(|_| S::c(rng.gen_range(-bound..bound))).collect();
    Tensor::new(shape, values).expect("finite init")
}

/// Dropout mask with survivors pre-scaled by `1/(1-rate)`; multiply
/// elementwise with the activations. `rate` must be in `[0, 1)`.
pub fn dropout_mask<S: Scalar, R: Rng>(
    shape: Vec<usize>,
    rate: f64,
    rng: &mut R,
) -> Result<Tensor<S>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    let keep = S::c(1.0 / (1.0 - rate));
    let n: usize = shape.iter().product();
    let values = (0..n)
        .map(|_| if rng.gen::<f64>() < rate { S::zero() } else { keep })
        .collect();
    Tensor::new(shape, values)
}
