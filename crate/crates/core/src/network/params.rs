use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::layers::RunningUpdate;
use crate::tensor::Tensor;

/// What a parameter tensor is, which decides how it is initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    ConvWeight { fan_in: usize, fan_out: usize },
    FcWeight { fan_in: usize, fan_out: usize },
    Bias,
    Gamma,
    Beta,
}

impl ParamKind {
    pub fn is_weight_layer(&self) -> bool {
        matches!(self, ParamKind::ConvWeight { .. } | ParamKind::FcWeight { .. })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
}

/// Non-learnable state carried alongside the parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BufferKind {
    RunningMean,
    RunningVar,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BufferSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: BufferKind,
}

/// The learnable tensors of a network in canonical order, each paired with
/// a gradient of the same shape, plus batch-norm running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    params: IndexMap<String, Tensor>,
    kinds: IndexMap<String, ParamKind>,
    grads: IndexMap<String, Tensor>,
    buffers: IndexMap<String, Tensor>,
    pub config_hash: u64,
    pub seed: u64,
}

impl ParamSet {
    pub fn new(config_hash: u64, seed: u64) -> Self {
        ParamSet {
            params: IndexMap::new(),
            kinds: IndexMap::new(),
            grads: IndexMap::new(),
            buffers: IndexMap::new(),
            config_hash,
            seed,
        }
    }

    pub fn insert(&mut self, name: &str, kind: ParamKind, value: Tensor) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::config(format!("duplicate parameter {name}")));
        }
        self.grads.insert(name.to_string(), Tensor::zeros(value.shape()));
        self.kinds.insert(name.to_string(), kind);
        self.params.insert(name.to_string(), value);
        Ok(())
    }

    pub fn insert_buffer(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.buffers.insert(name.to_string(), value).is_some() {
            return Err(Error::config(format!("duplicate buffer {name}")));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::config(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::config(format!("missing parameter {name}")))
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor> {
        self.grads
            .get(name)
            .ok_or_else(|| Error::config(format!("missing gradient {name}")))
    }

    pub fn buffer(&self, name: &str) -> Result<&Tensor> {
        self.buffers
            .get(name)
            .ok_or_else(|| Error::config(format!("missing buffer {name}")))
    }

    pub fn buffer_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.buffers
            .get_mut(name)
            .ok_or_else(|| Error::config(format!("missing buffer {name}")))
    }

    pub fn kind(&self, name: &str) -> Option<ParamKind> {
        self.kinds.get(name).copied()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn grads(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.buffers.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Parameter values and their gradients, for optimizers.
    pub fn params_and_grads_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor, &Tensor)> {
        self.params
            .iter_mut()
            .zip(self.grads.values())
            .map(|((k, v), g)| (k.as_str(), v, g))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn conv_layer_count(&self) -> usize {
        self.kinds
            .values()
            .filter(|k| matches!(k, ParamKind::ConvWeight { .. }))
            .count()
    }

    pub fn fc_layer_count(&self) -> usize {
        self.kinds
            .values()
            .filter(|k| matches!(k, ParamKind::FcWeight { .. }))
            .count()
    }

    pub fn weight_layer_count(&self) -> usize {
        self.kinds.values().filter(|k| k.is_weight_layer()).count()
    }

    /// Replaces every gradient. Names and shapes must match the parameters.
    pub fn set_grads(&mut self, grads: IndexMap<String, Tensor>) -> Result<()> {
        for (name, g) in &grads {
            g.ensure_shape(self.get(name)?.shape(), &format!("gradient of {name}"))?;
        }
        if grads.len() != self.params.len() {
            return Err(Error::dim(format!(
                "{} gradients for {} parameters",
                grads.len(),
                self.params.len()
            )));
        }
        for (name, g) in grads {
            self.grads.insert(name, g);
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.grads.values_mut().for_each(|g| g.fill(0.0));
    }

    /// Commits batch-norm running statistics produced by a train-mode pass.
    pub fn apply_running_update(&mut self, bn_prefix: &str, update: &RunningUpdate) -> Result<()> {
        *self.buffer_mut(&format!("{bn_prefix}.running_mean"))? = update.mean.clone();
        *self.buffer_mut(&format!("{bn_prefix}.running_var"))? = update.var.clone();
        Ok(())
    }
}
