use indexmap::IndexMap;

use super::config::NetworkConfig;
use super::params::{BufferKind, BufferSpec, ParamKind, ParamSet, ParamSpec};
use crate::error::{Error, Result};
use crate::layers::{
    batchnorm_backward, batchnorm_forward, residual_block_backward, residual_block_forward, BatchNorm,
    BatchNormCache, BatchNormConfig, ConvBn, Mode, Projection, ResidualBlock, ResidualCache, RunningUpdate,
};
use crate::tensor::{
    affine_backward, affine_forward, avg_pool2d_backward, avg_pool2d_forward, conv2d_backward, conv2d_forward,
    relu_backward, relu_forward, softmax, ConvSpec, PoolSpec, Tensor,
};

const POOL: PoolSpec = PoolSpec {
    window: (2, 2),
    stride: (2, 2),
};

#[derive(Clone, Debug)]
struct BlockPlan {
    prefix: String,
    in_channels: usize,
    out_channels: usize,
    convs: usize,
    projection: bool,
}

#[derive(Clone, Debug)]
struct StagePlan {
    blocks: Vec<BlockPlan>,
    pool: bool,
}

/// The architecture derived from a [`NetworkConfig`]:
/// `stem conv -> bn -> relu [-> pool]`, then residual stages each optionally
/// followed by 2x2 average pooling, then the flattened feature map through
/// the fully connected head and a softmax.
#[derive(Clone, Debug)]
pub struct Network {
    config: NetworkConfig,
    bn: BatchNormConfig,
    stages: Vec<StagePlan>,
}

/// Everything a train-mode backward pass needs, plus the outputs.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    mode: Mode,
    input: Tensor,
    stem_bn: BatchNormCache,
    stem_pre_relu: Tensor,
    stem_pool_input: Option<Vec<usize>>,
    blocks: Vec<Vec<ResidualCache>>,
    stage_pool_inputs: Vec<Option<Vec<usize>>>,
    feature_shape: Vec<usize>,
    fc_inputs: Vec<Tensor>,
    fc_pre_relu: Vec<Tensor>,
    pub logits: Tensor,
    pub probs: Tensor,
}

impl ForwardCache {
    pub fn mode(&self) -> Mode {
        self.mode
    }
}

fn conv_spec(kernel: usize) -> ConvSpec {
    ConvSpec::same(kernel)
}

impl Network {
    pub fn new(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut width = config.stem.channels;
        let mut stages = Vec::with_capacity(config.stages.len());
        for (si, s) in config.stages.iter().enumerate() {
            let blocks = (0..s.blocks)
                .map(|bi| {
                    let plan = BlockPlan {
                        prefix: format!("stage{}.block{}", si + 1, bi + 1),
                        in_channels: if bi == 0 { width } else { s.channels },
                        out_channels: s.channels,
                        convs: s.convs_per_block,
                        projection: bi == 0 && (s.projection || width != s.channels),
                    };
                    plan
                })
                .collect();
            width = s.channels;
            stages.push(StagePlan { blocks, pool: s.pool });
        }
        Ok(Network {
            bn: config.batchnorm.into(),
            config,
            stages,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn classes(&self) -> usize {
        self.config.classes
    }

    /// Every learnable tensor in canonical order.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut specs = Vec::new();
        let conv = |specs: &mut Vec<ParamSpec>, prefix: &str, cin: usize, cout: usize, k: usize| {
            specs.push(ParamSpec {
                name: format!("{prefix}.weight"),
                shape: vec![cout, cin, k, k],
                kind: ParamKind::ConvWeight {
                    fan_in: cin * k * k,
                    fan_out: cout * k * k,
                },
            });
            specs.push(ParamSpec {
                name: format!("{prefix}.bias"),
                shape: vec![cout],
                kind: ParamKind::Bias,
            });
        };
        let bn = |specs: &mut Vec<ParamSpec>, prefix: &str, c: usize| {
            specs.push(ParamSpec {
                name: format!("{prefix}.gamma"),
                shape: vec![c],
                kind: ParamKind::Gamma,
            });
            specs.push(ParamSpec {
                name: format!("{prefix}.beta"),
                shape: vec![c],
                kind: ParamKind::Beta,
            });
        };

        let stem = &self.config.stem;
        conv(&mut specs, "stem.conv", 1, stem.channels, stem.kernel);
        bn(&mut specs, "stem.bn", stem.channels);
        for stage in &self.stages {
            for b in &stage.blocks {
                for i in 0..b.convs {
                    let cin = if i == 0 { b.in_channels } else { b.out_channels };
                    conv(&mut specs, &format!("{}.conv{}", b.prefix, i + 1), cin, b.out_channels, 3);
                    bn(&mut specs, &format!("{}.bn{}", b.prefix, i + 1), b.out_channels);
                }
                if b.projection {
                    conv(&mut specs, &format!("{}.proj", b.prefix), b.in_channels, b.out_channels, 1);
                }
            }
        }
        let mut fan_in = self.config.flattened_features();
        for (i, &width) in self.config.fc_widths.iter().enumerate() {
            specs.push(ParamSpec {
                name: format!("fc{}.weight", i + 1),
                shape: vec![fan_in, width],
                kind: ParamKind::FcWeight {
                    fan_in,
                    fan_out: width,
                },
            });
            specs.push(ParamSpec {
                name: format!("fc{}.bias", i + 1),
                shape: vec![width],
                kind: ParamKind::Bias,
            });
            fan_in = width;
        }
        specs
    }

    /// Batch-norm running statistics, one mean/var pair per BN layer.
    pub fn buffer_specs(&self) -> Vec<BufferSpec> {
        self.bn_prefixes()
            .into_iter()
            .flat_map(|(prefix, c)| {
                [
                    BufferSpec {
                        name: format!("{prefix}.running_mean"),
                        shape: vec![c],
                        kind: BufferKind::RunningMean,
                    },
                    BufferSpec {
                        name: format!("{prefix}.running_var"),
                        shape: vec![c],
                        kind: BufferKind::RunningVar,
                    },
                ]
            })
            .collect()
    }

    fn bn_prefixes(&self) -> Vec<(String, usize)> {
        let mut out = vec![("stem.bn".to_string(), self.config.stem.channels)];
        for stage in &self.stages {
            for b in &stage.blocks {
                for i in 0..b.convs {
                    out.push((format!("{}.bn{}", b.prefix, i + 1), b.out_channels));
                }
            }
        }
        out
    }

    fn batchnorm<'a>(&self, params: &'a ParamSet, prefix: &str) -> Result<BatchNorm<'a>> {
        Ok(BatchNorm {
            gamma: params.get(&format!("{prefix}.gamma"))?,
            beta: params.get(&format!("{prefix}.beta"))?,
            running_mean: params.buffer(&format!("{prefix}.running_mean"))?,
            running_var: params.buffer(&format!("{prefix}.running_var"))?,
            config: self.bn,
        })
    }

    fn block<'a>(&self, params: &'a ParamSet, plan: &BlockPlan) -> Result<ResidualBlock<'a>> {
        let units = (1..=plan.convs)
            .map(|i| {
                Ok(ConvBn {
                    weight: params.get(&format!("{}.conv{i}.weight", plan.prefix))?,
                    bias: params.get(&format!("{}.conv{i}.bias", plan.prefix))?,
                    spec: conv_spec(3),
                    bn: self.batchnorm(params, &format!("{}.bn{i}", plan.prefix))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let projection = if plan.projection {
            Some(Projection {
                weight: params.get(&format!("{}.proj.weight", plan.prefix))?,
                bias: params.get(&format!("{}.proj.bias", plan.prefix))?,
            })
        } else {
            None
        };
        Ok(ResidualBlock { units, projection })
    }

    fn check_params(&self, params: &ParamSet) -> Result<()> {
        if params.config_hash != self.config.hash() {
            return Err(Error::config(format!(
                "parameters were built for config {:016x}, network is {:016x}",
                params.config_hash,
                self.config.hash()
            )));
        }
        Ok(())
    }

    /// Runs the network on `[N, 1, H, W]` pixels in `[0, 1]` and returns
    /// class probabilities `[N, K]` with the cache for [`Network::backward`].
    /// The parameter set is not modified; see
    /// [`Network::commit_running_stats`].
    pub fn forward(&self, params: &ParamSet, batch: &Tensor, mode: Mode) -> Result<(Tensor, ForwardCache)> {
        self.check_params(params)?;
        let [_, c, h, w] = batch.dims4("network input")?;
        let [eh, ew] = self.config.input_size;
        if c != 1 || h != eh || w != ew {
            return Err(Error::dim(format!(
                "network expects [N, 1, {eh}, {ew}] input, got {:?}",
                batch.shape()
            )));
        }

        let stem = &self.config.stem;
        let z = conv2d_forward(
            batch,
            params.get("stem.conv.weight")?,
            params.get("stem.conv.bias")?,
            &conv_spec(stem.kernel),
        )?;
        let (stem_pre_relu, stem_bn) = batchnorm_forward(&z, &self.batchnorm(params, "stem.bn")?, mode)?;
        let mut x = relu_forward(&stem_pre_relu);
        let stem_pool_input = if stem.pool {
            let shape = x.shape().to_vec();
            x = avg_pool2d_forward(&x, &POOL)?;
            Some(shape)
        } else {
            None
        };

        let mut blocks = Vec::with_capacity(self.stages.len());
        let mut stage_pool_inputs = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            let mut caches = Vec::with_capacity(stage.blocks.len());
            for plan in &stage.blocks {
                let (y, cache) = residual_block_forward(&x, &self.block(params, plan)?, mode)?;
                caches.push(cache);
                x = y;
            }
            blocks.push(caches);
            stage_pool_inputs.push(if stage.pool {
                let shape = x.shape().to_vec();
                x = avg_pool2d_forward(&x, &POOL)?;
                Some(shape)
            } else {
                None
            });
        }

        let feature_shape = x.shape().to_vec();
        let n = feature_shape[0];
        let mut x = x.reshape(&[n, x.len() / n])?;
        let layers = self.config.fc_widths.len();
        let mut fc_inputs = Vec::with_capacity(layers);
        let mut fc_pre_relu = Vec::with_capacity(layers - 1);
        for i in 1..=layers {
            let z = affine_forward(
                &x,
                params.get(&format!("fc{i}.weight"))?,
                params.get(&format!("fc{i}.bias"))?,
            )?;
            fc_inputs.push(x);
            if i < layers {
                x = relu_forward(&z);
                fc_pre_relu.push(z);
            } else {
                x = z;
            }
        }
        let logits = x;
        let probs = softmax(&logits)?;
        if !probs.all_finite() {
            return Err(Error::Numeric("non-finite class probabilities".into()));
        }

        let cache = ForwardCache {
            mode,
            input: batch.clone(),
            stem_bn,
            stem_pre_relu,
            stem_pool_input,
            blocks,
            stage_pool_inputs,
            feature_shape,
            fc_inputs,
            fc_pre_relu,
            logits,
            probs: probs.clone(),
        };
        Ok((probs, cache))
    }

    /// Batch-norm running statistics recorded by a train-mode forward pass,
    /// keyed by BN layer prefix.
    pub fn running_updates<'c>(&self, cache: &'c ForwardCache) -> Vec<(String, &'c RunningUpdate)> {
        let mut caches = vec![cache.stem_bn.running_update.as_ref()];
        for stage in &cache.blocks {
            for block in stage {
                caches.extend(block.running_updates());
            }
        }
        self.bn_prefixes()
            .into_iter()
            .zip(caches)
            .filter_map(|((prefix, _), u)| u.map(|u| (prefix, u)))
            .collect()
    }

    pub fn commit_running_stats(&self, params: &mut ParamSet, cache: &ForwardCache) -> Result<()> {
        for (prefix, update) in self.running_updates(cache) {
            params.apply_running_update(&prefix, update)?;
        }
        Ok(())
    }

    /// Train-mode forward that also commits batch-norm running statistics.
    pub fn forward_train(&self, params: &mut ParamSet, batch: &Tensor) -> Result<(Tensor, ForwardCache)> {
        let (probs, cache) = self.forward(params, batch, Mode::Train)?;
        self.commit_running_stats(params, &cache)?;
        Ok((probs, cache))
    }

    /// Gradients of every parameter given the gradient of the loss with
    /// respect to the pre-softmax logits (as returned by
    /// [`crate::optim::cross_entropy`]).
    pub fn backward(
        &self,
        params: &ParamSet,
        cache: &ForwardCache,
        grad_logits: &Tensor,
    ) -> Result<IndexMap<String, Tensor>> {
        if cache.mode != Mode::Train {
            return Err(Error::Usage("backward needs a train-mode forward cache".into()));
        }
        self.check_params(params)?;
        grad_logits.ensure_shape(cache.logits.shape(), "grad_logits")?;
        let mut grads: IndexMap<String, Tensor> = IndexMap::new();

        let layers = self.config.fc_widths.len();
        let mut g = grad_logits.clone();
        for i in (1..=layers).rev() {
            if i < layers {
                g = relu_backward(&cache.fc_pre_relu[i - 1], &g)?;
            }
            let weight = params.get(&format!("fc{i}.weight"))?;
            let ag = affine_backward(&cache.fc_inputs[i - 1], weight, &g)?;
            grads.insert(format!("fc{i}.weight"), ag.weight);
            grads.insert(format!("fc{i}.bias"), ag.bias);
            g = ag.input;
        }
        let mut g = g.reshape(&cache.feature_shape)?;

        for (si, stage) in self.stages.iter().enumerate().rev() {
            if let Some(shape) = &cache.stage_pool_inputs[si] {
                g = avg_pool2d_backward(shape, &POOL, &g)?;
            }
            for (bi, plan) in stage.blocks.iter().enumerate().rev() {
                let block = self.block(params, plan)?;
                let rg = residual_block_backward(&block, &cache.blocks[si][bi], &g)?;
                for (i, u) in rg.units.into_iter().enumerate() {
                    let p = &plan.prefix;
                    grads.insert(format!("{p}.conv{}.weight", i + 1), u.weight);
                    grads.insert(format!("{p}.conv{}.bias", i + 1), u.bias);
                    grads.insert(format!("{p}.bn{}.gamma", i + 1), u.gamma);
                    grads.insert(format!("{p}.bn{}.beta", i + 1), u.beta);
                }
                if let Some((w, b)) = rg.projection {
                    grads.insert(format!("{}.proj.weight", plan.prefix), w);
                    grads.insert(format!("{}.proj.bias", plan.prefix), b);
                }
                g = rg.input;
            }
        }

        if let Some(shape) = &cache.stem_pool_input {
            g = avg_pool2d_backward(shape, &POOL, &g)?;
        }
        let g = relu_backward(&cache.stem_pre_relu, &g)?;
        let bg = batchnorm_backward(&cache.stem_bn, &g)?;
        let cg = conv2d_backward(
            &cache.input,
            params.get("stem.conv.weight")?,
            &conv_spec(self.config.stem.kernel),
            &bg.input,
        )?;
        grads.insert("stem.conv.weight".into(), cg.weight);
        grads.insert("stem.conv.bias".into(), cg.bias);
        grads.insert("stem.bn.gamma".into(), bg.gamma);
        grads.insert("stem.bn.beta".into(), bg.beta);

        // canonical parameter order
        let mut ordered = IndexMap::with_capacity(grads.len());
        for name in params.names() {
            let g = grads
                .swap_remove(name)
                .ok_or_else(|| Error::Usage(format!("no gradient produced for {name}")))?;
            ordered.insert(name.to_string(), g);
        }
        Ok(ordered)
    }

    /// Backward pass that stores the gradients in `params`.
    pub fn backward_into(&self, params: &mut ParamSet, cache: &ForwardCache, grad_logits: &Tensor) -> Result<()> {
        let grads = self.backward(params, cache, grad_logits)?;
        params.set_grads(grads)
    }

    /// Eval-mode class predictions.
    pub fn predict(&self, params: &ParamSet, batch: &Tensor) -> Result<Vec<usize>> {
        let (probs, _) = self.forward(params, batch, Mode::Eval)?;
        Ok(argmax_rows(&probs))
    }
}

/// Index of the largest entry in each row; ties go to the lowest index.
pub fn argmax_rows(probs: &Tensor) -> Vec<usize> {
    let k = *probs.shape().last().unwrap_or(&1);
    probs
        .data()
        .chunks_exact(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect()
}
