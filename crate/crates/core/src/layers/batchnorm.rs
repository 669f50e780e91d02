use super::Mode;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchNormConfig {
    pub epsilon: f64,
    /// Weight kept on the old running statistic at each update.
    pub momentum: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        BatchNormConfig {
            epsilon: 1e-5,
            momentum: 0.9,
        }
    }
}

/// Per-channel normalization over `(N, H, W)` of an `[N, C, H, W]` tensor.
#[derive(Clone, Copy, Debug)]
pub struct BatchNorm<'a> {
    pub gamma: &'a Tensor,
    pub beta: &'a Tensor,
    pub running_mean: &'a Tensor,
    pub running_var: &'a Tensor,
    pub config: BatchNormConfig,
}

/// Owned batch-norm parameters, for using the layer on its own.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub config: BatchNormConfig,
}

impl BatchNormState {
    pub fn new(channels: usize, config: BatchNormConfig) -> Self {
        BatchNormState {
            gamma: Tensor::full(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
            config,
        }
    }

    pub fn view(&self) -> BatchNorm<'_> {
        BatchNorm {
            gamma: &self.gamma,
            beta: &self.beta,
            running_mean: &self.running_mean,
            running_var: &self.running_var,
            config: self.config,
        }
    }

    /// Forward pass that also commits running statistics in train mode.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, BatchNormCache)> {
        let (y, cache) = batchnorm_forward(x, &self.view(), mode)?;
        if let Some(update) = &cache.running_update {
            self.running_mean = update.mean.clone();
            self.running_var = update.var.clone();
        }
        Ok((y, cache))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunningUpdate {
    pub mean: Tensor,
    pub var: Tensor,
}

#[derive(Clone, Debug)]
pub struct BatchNormCache {
    mode: Mode,
    shape: Vec<usize>,
    x_hat: Vec<f64>,
    inv_std: Vec<f64>,
    gamma: Vec<f64>,
    pub running_update: Option<RunningUpdate>,
}

#[derive(Clone, Debug)]
pub struct BatchNormGrads {
    pub input: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
}

fn channel_slices(shape: &[usize]) -> (usize, usize, usize) {
    let spatial: usize = shape[2..].iter().product();
    (shape[0], shape[1], spatial)
}

pub fn batchnorm_forward(x: &Tensor, bn: &BatchNorm<'_>, mode: Mode) -> Result<(Tensor, BatchNormCache)> {
    let [n, c, h, w] = x.dims4("batchnorm input")?;
    for (t, name) in [
        (bn.gamma, "gamma"),
        (bn.beta, "beta"),
        (bn.running_mean, "running_mean"),
        (bn.running_var, "running_var"),
    ] {
        t.ensure_shape(&[c], &format!("batchnorm {name}"))?;
    }
    let spatial = h * w;
    let count = n * spatial;
    let eps = bn.config.epsilon;
    let xd = x.data();
    let at = |ni: usize, ci: usize| (ni * c + ci) * spatial;

    let (mean, var) = match mode {
        Mode::Train => {
            if count < 2 {
                return Err(Error::DegenerateStatistics(format!(
                    "train-mode batch norm needs N*H*W >= 2, got {count}"
                )));
            }
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ci in 0..c {
                let mut s = 0.0;
                for ni in 0..n {
                    s += xd[at(ni, ci)..at(ni, ci) + spatial].iter().sum::<f64>();
                }
                let mu = s / count as f64;
                let mut q = 0.0;
                for ni in 0..n {
                    q += xd[at(ni, ci)..at(ni, ci) + spatial]
                        .iter()
                        .map(|v| (v - mu) * (v - mu))
                        .sum::<f64>();
                }
                mean[ci] = mu;
                var[ci] = q / count as f64;
            }
            (mean, var)
        }
        Mode::Eval => (bn.running_mean.data().to_vec(), bn.running_var.data().to_vec()),
    };

    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut x_hat = vec![0.0; xd.len()];
    let mut out = vec![0.0; xd.len()];
    for ni in 0..n {
        for ci in 0..c {
            let (g, b) = (bn.gamma.data()[ci], bn.beta.data()[ci]);
            let range = at(ni, ci)..at(ni, ci) + spatial;
            for i in range {
                let xh = (xd[i] - mean[ci]) * inv_std[ci];
                x_hat[i] = xh;
                out[i] = g * xh + b;
            }
        }
    }

    let running_update = match mode {
        Mode::Train => {
            let m = bn.config.momentum;
            let blend = |old: &Tensor, new: &[f64]| {
                Tensor::from_fn(&[c], |i| m * old.data()[i] + (1.0 - m) * new[i])
            };
            Some(RunningUpdate {
                mean: blend(bn.running_mean, &mean),
                var: blend(bn.running_var, &var),
            })
        }
        Mode::Eval => None,
    };

    let cache = BatchNormCache {
        mode,
        shape: x.shape().to_vec(),
        x_hat: if mode == Mode::Train { x_hat } else { Vec::new() },
        inv_std,
        gamma: bn.gamma.data().to_vec(),
        running_update,
    };
    Ok((Tensor::new(x.shape(), out)?, cache))
}

/// Gradients of the train-mode forward, with the batch mean and variance
/// treated as functions of the input.
pub fn batchnorm_backward(cache: &BatchNormCache, grad_out: &Tensor) -> Result<BatchNormGrads> {
    if cache.mode != Mode::Train {
        return Err(Error::Usage("batchnorm_backward needs a train-mode cache".into()));
    }
    grad_out.ensure_shape(&cache.shape, "batchnorm grad_out")?;
    let (n, c, spatial) = channel_slices(&cache.shape);
    let count = (n * spatial) as f64;
    let g = grad_out.data();
    let at = |ni: usize, ci: usize| (ni * c + ci) * spatial;

    let mut grad_gamma = vec![0.0; c];
    let mut grad_beta = vec![0.0; c];
    for ci in 0..c {
        for ni in 0..n {
            let r = at(ni, ci)..at(ni, ci) + spatial;
            grad_beta[ci] += g[r.clone()].iter().sum::<f64>();
            grad_gamma[ci] += g[r.clone()]
                .iter()
                .zip(&cache.x_hat[r])
                .map(|(a, b)| a * b)
                .sum::<f64>();
        }
    }

    let mut grad_x = vec![0.0; g.len()];
    for ci in 0..c {
        let scale = cache.gamma[ci] * cache.inv_std[ci] / count;
        for ni in 0..n {
            for i in at(ni, ci)..at(ni, ci) + spatial {
                grad_x[i] = scale * (count * g[i] - grad_beta[ci] - cache.x_hat[i] * grad_gamma[ci]);
            }
        }
    }

    Ok(BatchNormGrads {
        input: Tensor::new(&cache.shape, grad_x)?,
        gamma: Tensor::new(&[c], grad_gamma)?,
        beta: Tensor::new(&[c], grad_beta)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn channel_moments(t: &Tensor, ci: usize) -> (f64, f64) {
        let [n, c, h, w] = t.dims4("t").unwrap();
        let vals: Vec<f64> = (0..n)
            .flat_map(|ni| {
                let start = (ni * c + ci) * h * w;
                t.data()[start..start + h * w].to_vec()
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        (mean, var)
    }

    fn sample_input() -> Tensor {
        // variance well above epsilon so the normalized variance is 1 within 1e-6
        Tensor::from_fn(&[3, 2, 3, 4], |i| ((i * 7919) % 101) as f64 - 50.0)
    }

    #[test]
    fn train_mode_standardizes_channels() {
        let mut state = BatchNormState::new(2, BatchNormConfig::default());
        let (y, _) = state.forward(&sample_input(), Mode::Train).unwrap();
        for ci in 0..2 {
            let (m, v) = channel_moments(&y, ci);
            assert!(m.abs() <= 1e-9, "mean {m}");
            assert!((v - 1.0).abs() <= 1e-6, "var {v}");
        }
    }

    #[test]
    fn zero_gamma_outputs_beta() {
        let mut state = BatchNormState::new(2, BatchNormConfig::default());
        state.gamma = Tensor::zeros(&[2]);
        state.beta = Tensor::new(&[2], vec![0.5, -1.25]).unwrap();
        let (y, _) = state.forward(&sample_input(), Mode::Train).unwrap();
        for (i, v) in y.data().iter().enumerate() {
            let ci = (i / 12) % 2;
            assert_eq!(*v, state.beta.data()[ci]);
        }
    }

    #[test]
    fn running_stats_blend_with_momentum() {
        let x = sample_input();
        let mut state = BatchNormState::new(2, BatchNormConfig::default());
        state.forward(&x, Mode::Train).unwrap();
        for ci in 0..2 {
            let (m, v) = channel_moments(&x, ci);
            assert!((state.running_mean.data()[ci] - 0.1 * m).abs() < 1e-12);
            assert!((state.running_var.data()[ci] - (0.9 + 0.1 * v)).abs() < 1e-12);
        }
        // eval mode never touches the running statistics
        let before = state.clone();
        state.forward(&x, Mode::Eval).unwrap();
        assert_eq!(state, before);
    }

    #[test]
    fn degenerate_batch_is_rejected() {
        let state = BatchNormState::new(1, BatchNormConfig::default());
        let x = Tensor::full(&[1, 1, 1, 1], 2.0);
        assert!(matches!(
            batchnorm_forward(&x, &state.view(), Mode::Train),
            Err(Error::DegenerateStatistics(_))
        ));
        assert!(batchnorm_forward(&x, &state.view(), Mode::Eval).is_ok());
    }

    #[test]
    fn zero_grad_gives_zero_grads_and_eval_cache_is_refused() {
        let state = BatchNormState::new(2, BatchNormConfig::default());
        let x = sample_input();
        let (_, cache) = batchnorm_forward(&x, &state.view(), Mode::Train).unwrap();
        let grads = batchnorm_backward(&cache, &Tensor::zeros(x.shape())).unwrap();
        assert_eq!(grads.input.max_abs() + grads.gamma.max_abs() + grads.beta.max_abs(), 0.0);

        let (_, eval_cache) = batchnorm_forward(&x, &state.view(), Mode::Eval).unwrap();
        assert!(matches!(
            batchnorm_backward(&eval_cache, &Tensor::zeros(x.shape())),
            Err(Error::Usage(_))
        ));
    }
}
