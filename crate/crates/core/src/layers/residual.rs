use super::batchnorm::{batchnorm_backward, batchnorm_forward, BatchNorm, BatchNormCache, RunningUpdate};
use super::Mode;
use crate::error::{Error, Result};
use crate::tensor::{conv2d_backward, conv2d_forward, relu_backward, relu_forward, ConvSpec, Tensor};

/// Convolution followed by batch normalization.
#[derive(Clone, Copy, Debug)]
pub struct ConvBn<'a> {
    pub weight: &'a Tensor,
    pub bias: &'a Tensor,
    pub spec: ConvSpec,
    pub bn: BatchNorm<'a>,
}

/// 1x1 convolution on the shortcut path.
#[derive(Clone, Copy, Debug)]
pub struct Projection<'a> {
    pub weight: &'a Tensor,
    pub bias: &'a Tensor,
}

impl Projection<'_> {
    pub const SPEC: ConvSpec = ConvSpec {
        kernel: (1, 1),
        stride: 1,
        padding: 0,
    };
}

/// Post-activation residual unit: `relu(F(x) + shortcut(x))`, where `F` is
/// `conv -> bn -> relu -> ... -> conv -> bn` and the shortcut is either the
/// identity or a 1x1 projection.
#[derive(Clone, Debug)]
pub struct ResidualBlock<'a> {
    pub units: Vec<ConvBn<'a>>,
    pub projection: Option<Projection<'a>>,
}

impl ResidualBlock<'_> {
    pub fn in_channels(&self) -> usize {
        self.units[0].weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.units.last().map(|u| u.weight.shape()[0]).unwrap_or(0)
    }
}

#[derive(Clone, Debug)]
pub struct ResidualCache {
    mode: Mode,
    input: Tensor,
    /// Input to each unit's convolution.
    conv_inputs: Vec<Tensor>,
    /// Batch-norm output of every unit except the last (pre-ReLU).
    inner_pre_relu: Vec<Tensor>,
    bn_caches: Vec<BatchNormCache>,
    /// `F(x) + shortcut(x)` before the output ReLU.
    pre_activation: Tensor,
}

impl ResidualCache {
    pub fn running_updates(&self) -> impl Iterator<Item = Option<&RunningUpdate>> {
        self.bn_caches.iter().map(|c| c.running_update.as_ref())
    }
}

#[derive(Clone, Debug)]
pub struct ConvBnGrads {
    pub weight: Tensor,
    pub bias: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
}

#[derive(Clone, Debug)]
pub struct ResidualGrads {
    /// Total input gradient, the sum of the two paths below.
    pub input: Tensor,
    pub input_via_residual: Tensor,
    pub input_via_shortcut: Tensor,
    pub units: Vec<ConvBnGrads>,
    /// Weight and bias gradients of the projection, if present.
    pub projection: Option<(Tensor, Tensor)>,
}

pub fn residual_block_forward(x: &Tensor, block: &ResidualBlock<'_>, mode: Mode) -> Result<(Tensor, ResidualCache)> {
    let [_, c, _, _] = x.dims4("residual block input")?;
    if block.units.is_empty() {
        return Err(Error::config("residual block has no convolutions"));
    }
    if c != block.in_channels() {
        return Err(Error::dim(format!(
            "residual block expects {} input channels, got {c}",
            block.in_channels()
        )));
    }
    if block.projection.is_none() && block.out_channels() != c {
        return Err(Error::dim(format!(
            "identity shortcut needs equal widths, block maps {c} -> {} channels",
            block.out_channels()
        )));
    }

    let last = block.units.len() - 1;
    let mut conv_inputs = Vec::with_capacity(block.units.len());
    let mut inner_pre_relu = Vec::with_capacity(last);
    let mut bn_caches = Vec::with_capacity(block.units.len());
    let mut h = x.clone();
    for (i, unit) in block.units.iter().enumerate() {
        let z = conv2d_forward(&h, unit.weight, unit.bias, &unit.spec)?;
        let (y, bc) = batchnorm_forward(&z, &unit.bn, mode)?;
        bn_caches.push(bc);
        conv_inputs.push(std::mem::replace(&mut h, Tensor::zeros(&[1])));
        if i < last {
            h = relu_forward(&y);
            inner_pre_relu.push(y);
        } else {
            h = y;
        }
    }

    let shortcut = match &block.projection {
        Some(p) => conv2d_forward(x, p.weight, p.bias, &Projection::SPEC)?,
        None => x.clone(),
    };
    let pre_activation = h.add(&shortcut)?;
    let out = relu_forward(&pre_activation);
    Ok((
        out,
        ResidualCache {
            mode,
            input: x.clone(),
            conv_inputs,
            inner_pre_relu,
            bn_caches,
            pre_activation,
        },
    ))
}

pub fn residual_block_backward(
    block: &ResidualBlock<'_>,
    cache: &ResidualCache,
    grad_out: &Tensor,
) -> Result<ResidualGrads> {
    if cache.mode != Mode::Train {
        return Err(Error::Usage("residual_block_backward needs a train-mode cache".into()));
    }
    if cache.conv_inputs.len() != block.units.len() {
        return Err(Error::Usage("cache was produced by a different block".into()));
    }
    let g_pre = relu_backward(&cache.pre_activation, grad_out)?;

    let mut units = Vec::with_capacity(block.units.len());
    let mut g = g_pre.clone();
    for (i, unit) in block.units.iter().enumerate().rev() {
        if i < block.units.len() - 1 {
            g = relu_backward(&cache.inner_pre_relu[i], &g)?;
        }
        let bn = batchnorm_backward(&cache.bn_caches[i], &g)?;
        let conv = conv2d_backward(&cache.conv_inputs[i], unit.weight, &unit.spec, &bn.input)?;
        units.push(ConvBnGrads {
            weight: conv.weight,
            bias: conv.bias,
            gamma: bn.gamma,
            beta: bn.beta,
        });
        g = conv.input;
    }
    units.reverse();
    let input_via_residual = g;

    let (input_via_shortcut, projection) = match &block.projection {
        Some(p) => {
            let pg = conv2d_backward(&cache.input, p.weight, &Projection::SPEC, &g_pre)?;
            (pg.input, Some((pg.weight, pg.bias)))
        }
        None => (g_pre, None),
    };

    Ok(ResidualGrads {
        input: input_via_residual.add(&input_via_shortcut)?,
        input_via_residual,
        input_via_shortcut,
        units,
        projection,
    })
}
