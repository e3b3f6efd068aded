//! Parameter storage, layers, and the optimizer shared by every network.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet, HashMap};

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::autograd::{Gradients, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct Param<S> {
    pub name: String,
    pub group: String,
    pub value: Tensor<S>,
}

/// Named parameter tensors organized into groups that can be frozen.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<S> {
    params: Vec<Param<S>>,
    frozen: BTreeSet<String>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self { params: Vec::new(), frozen: BTreeSet::new() }
    }

    pub fn add(&mut self, group: &str, name: &str, value: Tensor<S>) -> ParamId {
        self.params.push(Param { name: format!("{group}.{name}"), group: group.to_string(), value });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.params[id.0].value
    }

    pub fn param(&self, id: ParamId) -> &Param<S> {
        &self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<S>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn groups(&self) -> BTreeSet<String> {
        self.params.iter().map(|p| p.group.clone()).collect()
    }

    pub fn freeze(&mut self, group: &str) {
        self.frozen.insert(group.to_string());
    }

    pub fn unfreeze(&mut self, group: &str) {
        self.frozen.remove(group);
    }

    pub fn is_frozen(&self, group: &str) -> bool {
        self.frozen.contains(group)
    }

    pub fn frozen_groups(&self) -> &BTreeSet<String> {
        &self.frozen
    }

    /// Number of scalar parameters, optionally restricted to one group.
    pub fn count(&self, group: Option<&str>) -> usize {
        self.params
            .iter()
            .filter(|p| group.is_none_or(|g| p.group == g))
            .map(|p| p.value.len())
            .sum()
    }

    /// SHA-256 over names, shapes, and exact bit patterns of a group.
    pub fn group_hash(&self, group: &str) -> String {
        let mut h = Sha256::new();
        for p in self.params.iter().filter(|p| p.group == group) {
            h.update(p.name.as_bytes());
            for &d in p.value.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for &v in p.value.iter() {
                h.update(v.as_f64().to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Zeroes every parameter of a group.
    pub fn zero_group(&mut self, group: &str) {
        for p in self.params.iter_mut().filter(|p| p.group == group) {
            p.value.fill(S::zero());
        }
    }

    /// All parameters in store order, flattened to `f32`.
    pub fn to_flat_f32(&self) -> Vec<f32> {
        self.params.iter().flat_map(|p| p.value.iter().map(|v| v.as_f32())).collect()
    }

    pub fn layout(&self) -> Vec<ParamLayout> {
        let mut offset = 0;
        self.params
            .iter()
            .map(|p| {
                let entry = ParamLayout { name: p.name.clone(), shape: p.value.shape().to_vec(), offset };
                offset += p.value.len();
                entry
            })
            .collect()
    }

    /// Overwrites parameters from a flat blob laid out as [`Self::layout`].
    pub fn load_flat_f32(&mut self, layout: &[ParamLayout], blob: &[f32]) -> Result<()> {
        if layout.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "layout has {} tensors, model has {}",
                layout.len(),
                self.params.len()
            )));
        }
        for (p, entry) in self.params.iter_mut().zip(layout) {
            if p.name != entry.name || p.value.shape() != entry.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}` {:?} does not match stored `{}` {:?}",
                    p.name,
                    p.value.shape(),
                    entry.name,
                    entry.shape
                )));
            }
            let end = entry.offset + p.value.len();
            let slice = blob.get(entry.offset..end).ok_or_else(|| {
                Error::Checkpoint(format!("parameter blob too short for `{}`", entry.name))
            })?;
            for (dst, &src) in p.value.iter_mut().zip(slice) {
                *dst = S::c(src as f64);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ParamLayout {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

/// Binds stored parameters to graph variables for one forward pass.
///
/// Parameters of trainable groups become gradient-tracking leaves; all
/// others enter the graph as constants.
pub struct Session<'a, S: Scalar> {
    store: &'a ParamStore<S>,
    trainable: BTreeSet<String>,
    bound: RefCell<HashMap<ParamId, Var<S>>>,
}

impl<'a, S: Scalar> Session<'a, S> {
    pub fn inference(store: &'a ParamStore<S>) -> Self {
        Self { store, trainable: BTreeSet::new(), bound: RefCell::new(HashMap::new()) }
    }

    /// Tracks gradients for `groups`; frozen groups are rejected.
    pub fn training(store: &'a ParamStore<S>, groups: &[&str]) -> Result<Self> {
        for g in groups {
            if store.is_frozen(g) {
                return Err(Error::Invariant(format!("parameter group `{g}` is frozen")));
            }
        }
        Ok(Self {
            store,
            trainable: groups.iter().map(|g| g.to_string()).collect(),
            bound: RefCell::new(HashMap::new()),
        })
    }

    pub fn store(&self) -> &ParamStore<S> {
        self.store
    }

    pub fn param(&self, id: ParamId) -> Var<S> {
        if let Some(v) = self.bound.borrow().get(&id) {
            return v.clone();
        }
        let p = self.store.param(id);
        let v = if self.trainable.contains(&p.group) {
            Var::leaf(p.value.clone())
        } else {
            Var::constant(p.value.clone())
        };
        self.bound.borrow_mut().insert(id, v.clone());
        v
    }

    /// Gradients of every trainable parameter, zeros for unused ones.
    pub fn param_grads(&self, grads: &Gradients<S>) -> ParamGrads<S> {
        let mut out = BTreeMap::new();
        for (id, p) in self.store.iter() {
            if !self.trainable.contains(&p.group) {
                continue;
            }
            let g = match self.bound.borrow().get(&id) {
                Some(v) => grads.get_or_zeros(v),
                None => ArrayD::zeros(p.value.raw_dim()),
            };
            out.insert(id, g);
        }
        ParamGrads(out)
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParamGrads<S>(pub BTreeMap<ParamId, Tensor<S>>);

impl<S: Scalar> ParamGrads<S> {
    pub fn global_norm(&self) -> S {
        self.0
            .values()
            .map(|g| g.iter().map(|&x| x * x).sum::<S>())
            .sum::<S>()
            .sqrt()
    }

    /// Rescales so the global norm is at most `max_norm`; returns the norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: S) -> S {
        let norm = self.global_norm();
        if norm > max_norm && norm > S::zero() {
            let k = max_norm / norm;
            for g in self.0.values_mut() {
                g.mapv_inplace(|x| x * k);
            }
        }
        norm
    }

    pub fn is_finite(&self) -> bool {
        self.0.values().all(|g| g.iter().all(|x| x.is_finite()))
    }
}

/// Adam optimizer with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<S> {
    pub lr: S,
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
    pub step: u64,
    moments: BTreeMap<ParamId, (Tensor<S>, Tensor<S>)>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(lr: S) -> Self {
        Self { lr, beta1: S::c(0.9), beta2: S::c(0.999), eps: S::c(1e-8), step: 0, moments: BTreeMap::new() }
    }

    pub fn step(&mut self, store: &mut ParamStore<S>, grads: &ParamGrads<S>) -> Result<()> {
        for id in grads.0.keys() {
            let group = &store.param(*id).group;
            if store.is_frozen(group) {
                return Err(Error::Invariant(format!(
                    "optimizer asked to update frozen parameter `{}`",
                    store.param(*id).name
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = S::one() - self.beta1.powi(t);
        let c2 = S::one() - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (id, g) in &grads.0 {
            let (m, v) = self
                .moments
                .entry(*id)
                .or_insert_with(|| (ArrayD::zeros(g.raw_dim()), ArrayD::zeros(g.raw_dim())));
            let p = store.get_mut(*id);
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = b1 * *m + (S::one() - b1) * g;
                *v = b2 * *v + (S::one() - b2) * g * g;
                let mh = *m / c1;
                let vh = *v / c2;
                *p -= lr * mh / (vh.sqrt() + eps);
            });
        }
        Ok(())
    }

    /// Moment buffers flattened in parameter order, for checkpointing.
    pub fn state_f32(&self) -> Vec<f32> {
        self.moments
            .values()
            .flat_map(|(m, v)| m.iter().chain(v.iter()).map(|x| x.as_f32()).collect::<Vec<_>>())
            .collect()
    }

    pub fn state_ids(&self) -> Vec<usize> {
        self.moments.keys().map(|k| k.0).collect()
    }

    pub fn restore_state(&mut self, store: &ParamStore<S>, ids: &[usize], blob: &[f32], step: u64) -> Result<()> {
        self.moments.clear();
        let mut off = 0;
        for &id in ids {
            if id >= store.len() {
                return Err(Error::Checkpoint(format!("optimizer state references parameter {id}")));
            }
            let shape = store.get(ParamId(id)).raw_dim();
            let n = ndarray::Dimension::size(&shape);
            let take = |o: usize| -> Result<Tensor<S>> {
                let s = blob
                    .get(o..o + n)
                    .ok_or_else(|| Error::Checkpoint("optimizer blob too short".into()))?;
                Ok(ArrayD::from_shape_vec(shape.clone(), s.iter().map(|&x| S::c(x as f64)).collect()).unwrap())
            };
            let m = take(off)?;
            let v = take(off + n)?;
            off += 2 * n;
            self.moments.insert(ParamId(id), (m, v));
        }
        self.step = step;
        Ok(())
    }
}

/// Uniform initialization in `[-bound, bound]` with `bound = gain * sqrt(3 / fan_in)`.
pub fn init_uniform<S: Scalar, R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize, gain: f64) -> Tensor<S> {
    let bound = gain * (3.0 / fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| S::c(rng.random_range(-bound..=bound))).collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).unwrap()
}

pub fn zeros<S: Scalar>(shape: &[usize]) -> Tensor<S> {
    ArrayD::zeros(IxDyn(shape))
}

/// Fully connected layer acting on the last axis of a 2-d input.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        rng: &mut R,
        group: &str,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        gain: f64,
    ) -> Self {
        let w = init_uniform(rng, &[in_dim, out_dim], in_dim, gain);
        let weight = store.add(group, &format!("{name}.weight"), w);
        let bias = store.add(group, &format!("{name}.bias"), zeros(&[out_dim]));
        Self { weight, bias, in_dim, out_dim }
    }

    pub fn param_count(in_dim: usize, out_dim: usize) -> usize {
        in_dim * out_dim + out_dim
    }

    pub fn forward<S: Scalar>(&self, sess: &Session<S>, x: &Var<S>) -> Var<S> {
        &x.matmul(&sess.param(self.weight)) + &sess.param(self.bias)
    }

    pub fn zero_init<S: Scalar>(&self, store: &mut ParamStore<S>) {
        store.get_mut(self.weight).fill(S::zero());
        store.get_mut(self.bias).fill(S::zero());
    }
}

/// Square-kernel convolution over NCHW inputs.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        rng: &mut R,
        group: &str,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        gain: f64,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        let w = init_uniform(rng, &[out_ch, in_ch, kernel, kernel], fan_in, gain);
        let weight = store.add(group, &format!("{name}.weight"), w);
        let bias = store.add(group, &format!("{name}.bias"), zeros(&[out_ch]));
        Self { weight, bias, stride, pad: kernel / 2 }
    }

    pub fn forward<S: Scalar>(&self, sess: &Session<S>, x: &Var<S>) -> Var<S> {
        x.conv2d(&sess.param(self.weight), Some(&sess.param(self.bias)), self.stride, self.pad)
    }

    pub fn zero_init<S: Scalar>(&self, store: &mut ParamStore<S>) {
        store.get_mut(self.weight).fill(S::zero());
        store.get_mut(self.bias).fill(S::zero());
    }
}

/// Leaky-ReLU slope used throughout the convolutional networks.
pub const LEAK: f64 = 0.2;
