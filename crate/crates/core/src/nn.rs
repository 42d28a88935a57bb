//! Named parameters and the layers built on top of the graph.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Trainable,
    /// Non-trainable state such as batch-norm running statistics.
    Buffer,
}

#[derive(Clone, Debug)]
pub struct Param {
    pub value: Tensor,
    pub kind: ParamKind,
}

/// All tensors of a model, ordered lexicographically by name.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, kind: ParamKind) {
        self.entries.insert(name.into(), Param { value, kind });
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter `{name}`")))
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Names of trainable tensors whose name starts with `prefix`.
    pub fn trainable_names(&self, prefix: &str) -> Vec<String> {
        self.entries
            .iter()
            .filter(|(n, p)| p.kind == ParamKind::Trainable && n.starts_with(prefix))
            .map(|(n, _)| n.clone())
            .collect()
    }

    /// Element count of trainable tensors under `prefix`.
    pub fn param_count(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|(n, p)| p.kind == ParamKind::Trainable && n.starts_with(prefix))
            .map(|(_, p)| p.value.len())
            .sum()
    }

    /// Sets every trainable tensor under `prefix` to zero.
    pub fn zero_params(&mut self, prefix: &str) {
        for (name, p) in &mut self.entries {
            if p.kind == ParamKind::Trainable && name.starts_with(prefix) {
                p.value.data_mut().fill(0.0);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One forward/backward evaluation of a model.
///
/// Parameters are bound into the graph on first use. Only names under one of
/// `grad_prefixes` become gradient-carrying leaves; all others are constants.
/// Running-statistic updates are collected, not applied.
pub struct Session<'s> {
    pub graph: Graph<f32>,
    store: &'s ParamStore,
    bound: HashMap<String, Var>,
    grad_prefixes: Vec<String>,
    mode: Mode,
    stat_updates: Vec<(String, Tensor)>,
}

impl<'s> Session<'s> {
    pub fn new(store: &'s ParamStore, mode: Mode, grad_prefixes: &[&str]) -> Self {
        Self {
            graph: Graph::new(),
            store,
            bound: HashMap::new(),
            grad_prefixes: grad_prefixes.iter().map(|s| s.to_string()).collect(),
            mode,
            stat_updates: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let p = self
            .store
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter `{name}`")))?;
        let requires_grad = p.kind == ParamKind::Trainable
            && self.grad_prefixes.iter().any(|pre| name.starts_with(pre.as_str()));
        let v = self.graph.leaf(p.value.clone(), requires_grad);
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.graph.constant(t)
    }

    /// Gradients of every bound, gradient-carrying parameter that was reached
    /// by the last backward pass.
    pub fn grads(&self) -> BTreeMap<String, Tensor> {
        self.bound
            .iter()
            .filter_map(|(name, &v)| self.graph.grad(v).map(|g| (name.clone(), g.clone())))
            .collect()
    }

    fn record_stat(&mut self, name: String, value: Tensor) {
        self.stat_updates.push((name, value));
    }

    /// Latest recorded value of a running statistic, else the stored one, so
    /// repeated passes through one layer chain their updates.
    fn current_stat(&self, name: &str) -> Result<&Tensor> {
        match self.stat_updates.iter().rev().find(|(n, _)| n == name) {
            Some((_, t)) => Ok(t),
            None => self.store.value(name),
        }
    }

    /// Running-statistic updates recorded under `prefix`, in recording order.
    pub fn stat_updates(&self, prefix: &str) -> impl Iterator<Item = &(String, Tensor)> + '_ {
        let prefix = prefix.to_string();
        self.stat_updates.iter().filter(move |(n, _)| n.starts_with(&prefix))
    }
}

/// Applies collected running-statistic updates.
pub fn apply_stat_updates<'a>(
    store: &mut ParamStore,
    updates: impl IntoIterator<Item = &'a (String, Tensor)>,
) -> Result<()> {
    for (name, value) in updates {
        *store.value_mut(name)? = value.clone();
    }
    Ok(())
}

fn normal_tensor(rng: &mut Rng, shape: &[usize], mean: f64, std: f64) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| (mean + std * rng.normal()) as f32)
}

/// Standard deviation of the zero-mean normal weight init.
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    pub fn new(name: impl Into<String>, in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            name: name.into(),
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) {
        let shape = [self.out_channels, self.in_channels, self.kernel, self.kernel];
        store.insert(format!("{}.weight", self.name), normal_tensor(rng, &shape, 0.0, INIT_STD), ParamKind::Trainable);
        store.insert(format!("{}.bias", self.name), Tensor::zeros([self.out_channels]), ParamKind::Trainable);
    }

    pub fn init_zero(&self, store: &mut ParamStore) {
        let shape = [self.out_channels, self.in_channels, self.kernel, self.kernel];
        store.insert(format!("{}.weight", self.name), Tensor::zeros(shape), ParamKind::Trainable);
        store.insert(format!("{}.bias", self.name), Tensor::zeros([self.out_channels]), ParamKind::Trainable);
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let w = s.param(&format!("{}.weight", self.name))?;
        let b = s.param(&format!("{}.bias", self.name))?;
        s.graph.conv2d(x, w, Some(b), self.stride, self.padding)
    }

    pub fn param_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel + self.out_channels
    }
}

#[derive(Clone, Debug)]
pub struct Deconv2d {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Deconv2d {
    pub fn new(name: impl Into<String>, in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            name: name.into(),
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) {
        let shape = [self.in_channels, self.out_channels, self.kernel, self.kernel];
        store.insert(format!("{}.weight", self.name), normal_tensor(rng, &shape, 0.0, INIT_STD), ParamKind::Trainable);
        store.insert(format!("{}.bias", self.name), Tensor::zeros([self.out_channels]), ParamKind::Trainable);
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let w = s.param(&format!("{}.weight", self.name))?;
        let b = s.param(&format!("{}.bias", self.name))?;
        s.graph.deconv2d(x, w, Some(b), self.stride, self.padding)
    }

    pub fn param_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel + self.out_channels
    }
}

#[derive(Clone, Debug)]
pub struct Dense {
    pub name: String,
    pub in_features: usize,
    pub out_features: usize,
}

impl Dense {
    pub fn new(name: impl Into<String>, in_features: usize, out_features: usize) -> Self {
        Self {
            name: name.into(),
            in_features,
            out_features,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) {
        let shape = [self.in_features, self.out_features];
        store.insert(format!("{}.weight", self.name), normal_tensor(rng, &shape, 0.0, INIT_STD), ParamKind::Trainable);
        store.insert(format!("{}.bias", self.name), Tensor::zeros([self.out_features]), ParamKind::Trainable);
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let w = s.param(&format!("{}.weight", self.name))?;
        let b = s.param(&format!("{}.bias", self.name))?;
        s.graph.dense(x, w, Some(b))
    }

    pub fn param_count(&self) -> usize {
        self.in_features * self.out_features + self.out_features
    }
}

/// Batch normalization over the channel axis with running statistics.
///
/// Running averages follow `r ← momentum·r + (1 − momentum)·batch`.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub name: String,
    pub channels: usize,
    pub eps: f32,
    pub momentum: f32,
}

impl BatchNorm {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        Self {
            name: name.into(),
            channels,
            eps: 1e-5,
            momentum: 0.9,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) {
        let c = [self.channels];
        store.insert(format!("{}.gamma", self.name), normal_tensor(rng, &c, 1.0, INIT_STD), ParamKind::Trainable);
        store.insert(format!("{}.beta", self.name), Tensor::zeros(c), ParamKind::Trainable);
        store.insert(format!("{}.running_mean", self.name), Tensor::zeros(c), ParamKind::Buffer);
        store.insert(format!("{}.running_var", self.name), Tensor::full(c, 1.0), ParamKind::Buffer);
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let gamma = s.param(&format!("{}.gamma", self.name))?;
        let beta = s.param(&format!("{}.beta", self.name))?;
        let mean_name = format!("{}.running_mean", self.name);
        let var_name = format!("{}.running_var", self.name);
        match s.mode() {
            Mode::Train => {
                let (y, stats) = s.graph.batch_norm(x, gamma, beta, self.eps)?;
                let m = self.momentum;
                let blend = |old: &Tensor, new: &[f32]| {
                    Tensor::from_fn([self.channels], |c| m * old.data()[c] + (1.0 - m) * new[c])
                };
                let mean = blend(s.current_stat(&mean_name)?, &stats.mean);
                let var = blend(s.current_stat(&var_name)?, &stats.var);
                s.record_stat(mean_name, mean);
                s.record_stat(var_name, var);
                Ok(y)
            }
            Mode::Eval => {
                let mean = s.store().value(&mean_name)?.data().to_vec();
                let var = s.store().value(&var_name)?.data().to_vec();
                s.graph.batch_norm_inference(x, gamma, beta, &mean, &var, self.eps)
            }
        }
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels
    }
}
