use std::collections::BTreeMap;

use super::ModelConfig;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Init {
    Glorot,
    Zeros,
    Ones,
}

fn block_specs(prefix: &str, d_m: usize, d_ff: usize, out: &mut Vec<(String, Vec<usize>, Init)>) {
    let mut push = |name: &str, shape: Vec<usize>, init| out.push((format!("{prefix}.{name}"), shape, init));
    push("ln1.g", vec![d_m], Init::Ones);
    push("ln1.b", vec![d_m], Init::Zeros);
    for p in ["q", "k", "v", "o"] {
        push(&format!("{p}.w"), vec![d_m, d_m], Init::Glorot);
        push(&format!("{p}.b"), vec![d_m], Init::Zeros);
    }
    push("ln2.g", vec![d_m], Init::Ones);
    push("ln2.b", vec![d_m], Init::Zeros);
    push("ff1.w", vec![d_m, d_ff], Init::Glorot);
    push("ff1.b", vec![d_ff], Init::Zeros);
    push("ff2.w", vec![d_ff, d_m], Init::Glorot);
    push("ff2.b", vec![d_m], Init::Zeros);
}

fn specs(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (d_m, d_z, d_ff) = (cfg.d_m, cfg.d_z, cfg.d_ff());
    let mut s: Vec<(String, Vec<usize>, Init)> = Vec::new();
    let push = |s: &mut Vec<_>, name: &str, shape: Vec<usize>, init| s.push((name.to_string(), shape, init));
    push(&mut s, "enc.msg.w", vec![2 * cfg.d_v_in() + cfg.d_e_in(), d_m], Init::Glorot);
    push(&mut s, "enc.msg.b", vec![d_m], Init::Zeros);
    for l in 0..cfg.l_enc {
        block_specs(&format!("enc.{l}"), d_m, d_ff, &mut s);
    }
    push(&mut s, "enc.ln.g", vec![d_m], Init::Ones);
    push(&mut s, "enc.ln.b", vec![d_m], Init::Zeros);
    push(&mut s, "enc.mu.w", vec![d_m, d_z], Init::Glorot);
    push(&mut s, "enc.mu.b", vec![d_z], Init::Zeros);
    push(&mut s, "enc.logsigma.w", vec![d_m, d_z], Init::Glorot);
    push(&mut s, "enc.logsigma.b", vec![d_z], Init::Zeros);
    push(&mut s, "perm.w", vec![d_m, 1], Init::Glorot);
    push(&mut s, "perm.b", vec![1], Init::Zeros);
    push(&mut s, "dec.in.w", vec![d_z, d_m], Init::Glorot);
    push(&mut s, "dec.in.b", vec![d_m], Init::Zeros);
    for l in 0..cfg.l_dec {
        block_specs(&format!("dec.{l}"), d_m, d_ff, &mut s);
    }
    push(&mut s, "dec.ln.g", vec![d_m], Init::Ones);
    push(&mut s, "dec.ln.b", vec![d_m], Init::Zeros);
    push(&mut s, "dec.node.w", vec![d_m, cfg.d_v_out()], Init::Glorot);
    push(&mut s, "dec.node.b", vec![cfg.d_v_out()], Init::Zeros);
    push(&mut s, "dec.edge.w", vec![d_m, 1], Init::Glorot);
    push(&mut s, "dec.edge.b", vec![1], Init::Zeros);
    push(&mut s, "count.w1", vec![d_z, d_m], Init::Glorot);
    push(&mut s, "count.b1", vec![d_m], Init::Zeros);
    push(&mut s, "count.w2", vec![d_m, cfg.count_classes()], Init::Glorot);
    push(&mut s, "count.b2", vec![cfg.count_classes()], Init::Zeros);
    s
}

/// Named parameter tensors of one model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T: Scalar> {
    config: ModelConfig,
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ModelParams<T> {
    /// Glorot-uniform weights, zero biases, unit layer-norm gains.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(seed);
        let mut tensors = BTreeMap::new();
        for (name, shape, init) in specs(config) {
            let numel = shape.iter().product();
            let data = match init {
                Init::Zeros => vec![T::zero(); numel],
                Init::Ones => vec![T::one(); numel],
                Init::Glorot => {
                    let a = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                    (0..numel).map(|_| T::from_f64_lossy((2.0 * rng.uniform() - 1.0) * a)).collect()
                }
            };
            tensors.insert(name, Tensor::new(&shape, data)?);
        }
        Ok(Self { config: config.clone(), tensors })
    }

    /// Same layout as `config` with every entry zero.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let tensors = specs(config).into_iter().map(|(name, shape, _)| (name, Tensor::zeros(&shape))).collect();
        Ok(Self { config: config.clone(), tensors })
    }

    /// Builds from explicit tensors, checking names and shapes against `config`.
    pub fn from_tensors(config: &ModelConfig, mut tensors: BTreeMap<String, Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let mut out = BTreeMap::new();
        for (name, shape, _) in specs(config) {
            let t = tensors.remove(&name).ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Config(format!("parameter `{name}` has shape {:?}, expected {shape:?}", t.shape())));
            }
            if !t.is_finite() {
                return Err(Error::Config(format!("parameter `{name}` is not finite")));
            }
            out.insert(name, t);
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::Config(format!("unexpected parameter `{extra}`")));
        }
        Ok(Self { config: config.clone(), tensors: out })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    pub fn into_tensors(self) -> BTreeMap<String, Tensor<T>> {
        self.tensors
    }

    /// Registers every tensor as a named leaf of `tape`.
    pub fn bind(&self, tape: &mut Tape<T>, requires_grad: bool) -> Result<Bound> {
        let mut vars = BTreeMap::new();
        for (name, t) in &self.tensors {
            vars.insert(name.clone(), tape.leaf(name, t.clone(), requires_grad)?);
        }
        Ok(Bound { vars })
    }
}

/// Tape variables of bound parameters.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Var {
        *self.vars.get(name).unwrap_or_else(|| panic!("parameter `{name}` is not bound"))
    }
}

impl Bound {
    /// Wraps variables that already live on a tape, e.g. leaves created by a gradient check.
    pub fn from_vars(vars: impl IntoIterator<Item = (String, Var)>) -> Self {
        Self { vars: vars.into_iter().collect() }
    }
}
