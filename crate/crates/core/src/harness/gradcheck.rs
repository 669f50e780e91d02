//! Central-difference verification of every analytic gradient.
//!
//! Each layer type is checked in isolation against the scalar loss
//! `sum(output * R)` for a fixed random `R`, so the analytic gradient is the
//! layer's backward pass applied to `R`. The end-to-end check perturbs every
//! parameter tensor of a small network under the cross-entropy loss.

use std::fmt::Write as _;

use rand::distr::{Distribution, Uniform};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{
    batchnorm_backward, batchnorm_forward, residual_block_backward, residual_block_forward, BatchNorm,
    BatchNormConfig, ConvBn, Mode, Projection, ResidualBlock,
};
use crate::network::{build_network, NetworkConfig};
use crate::optim::cross_entropy;
use crate::tensor::{
    affine_backward, affine_forward, avg_pool2d_backward, avg_pool2d_forward, conv2d_backward, conv2d_forward,
    relu_backward, relu_forward, softmax, ConvGrads, ConvSpec, PoolSpec, Tensor,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    /// Network for the end-to-end check.
    pub preset: String,
    /// Square input side used for the end-to-end check.
    pub input_size: usize,
    pub batch: usize,
    pub seed: u64,
    /// Central-difference step.
    pub step: f64,
    /// Largest tolerated relative error.
    pub threshold: f64,
    /// Entries checked per tensor; smaller tensors are checked in full.
    pub max_entries: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            preset: "tiny".into(),
            input_size: 16,
            batch: 4,
            seed: 7,
            step: 1e-5,
            threshold: 1e-5,
            max_entries: 64,
        }
    }
}

type ConvBackwardFn = fn(&Tensor, &Tensor, &ConvSpec, &Tensor) -> Result<ConvGrads>;

/// Backward kernels under test. Replacing one with a faulty version lets
/// tests confirm the check catches it.
#[derive(Clone, Copy)]
pub struct Kernels {
    pub conv_backward: ConvBackwardFn,
}

impl Default for Kernels {
    fn default() -> Self {
        Kernels {
            conv_backward: conv2d_backward,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupResult {
    pub group: String,
    pub worst: f64,
    pub entries: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub threshold: f64,
    pub groups: Vec<GroupResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.worst <= self.threshold)
    }

    pub fn failures(&self) -> Vec<&GroupResult> {
        self.groups.iter().filter(|g| !(g.worst <= self.threshold)).collect()
    }

    pub fn group(&self, name: &str) -> Option<&GroupResult> {
        self.groups.iter().find(|g| g.group == name)
    }

    pub fn render(&self) -> String {
        let w = self.groups.iter().map(|g| g.group.len()).max().unwrap_or(5).max(5) + 2;
        let mut out = format!("{:<w$}{:>14}{:>10}  status\n", "group", "worst rel err", "entries");
        for g in &self.groups {
            let status = if g.worst <= self.threshold { "ok" } else { "FAIL" };
            let _ = writeln!(out, "{:<w$}{:>14.3e}{:>10}  {status}", g.group, g.worst, g.entries);
        }
        let _ = writeln!(
            out,
            "{} groups, threshold {:e}: {}",
            self.groups.len(),
            self.threshold,
            if self.passed() { "PASS" } else { "FAIL" }
        );
        out
    }
}

/// `|a - n| / max(1, |a|, |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

struct Checker {
    rng: ChaCha8Rng,
    step: f64,
    max_entries: usize,
    retry_above: f64,
}

impl Checker {
    fn tensor(&mut self, shape: &[usize]) -> Tensor {
        let d = Uniform::new(-1.0, 1.0).expect("valid range");
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| d.sample(&mut self.rng)).collect()).expect("shape matches")
    }

    /// Entries to probe: a random sample plus the largest analytic entry.
    fn entries(&mut self, analytic: &Tensor) -> Vec<usize> {
        let n = analytic.len();
        if n <= self.max_entries {
            return (0..n).collect();
        }
        let mut idx = sample(&mut self.rng, n, self.max_entries).into_vec();
        let largest = (0..n)
            .max_by(|&a, &b| analytic.data()[a].abs().total_cmp(&analytic.data()[b].abs()))
            .expect("non-empty");
        if !idx.contains(&largest) {
            idx.push(largest);
        }
        idx.sort_unstable();
        idx
    }

    /// Worst relative error between `analytic` and central differences of
    /// `f` around `x`, plus the number of entries probed.
    ///
    /// An entry that misses the threshold is retried with steps ten and a
    /// hundred times smaller and keeps its best error: a difference whose
    /// interval straddles a ReLU kink converges as the step shrinks, while a
    /// wrong analytic gradient stays wrong at every step.
    fn compare(
        &mut self,
        x: &Tensor,
        analytic: &Tensor,
        mut f: impl FnMut(&Tensor) -> Result<f64>,
    ) -> Result<(f64, usize)> {
        analytic.ensure_shape(x.shape(), "analytic gradient")?;
        let entries = self.entries(analytic);
        let mut worst: f64 = 0.0;
        let mut probe = x.clone();
        for &i in &entries {
            let orig = probe.data()[i];
            let mut best = f64::INFINITY;
            for step in [self.step, self.step / 10.0, self.step / 100.0] {
                probe.data_mut()[i] = orig + step;
                let up = f(&probe)?;
                probe.data_mut()[i] = orig - step;
                let down = f(&probe)?;
                probe.data_mut()[i] = orig;
                let err = relative_error(analytic.data()[i], (up - down) / (2.0 * step));
                if err.is_nan() {
                    best = f64::NAN;
                    break;
                }
                best = best.min(err);
                if best <= self.retry_above {
                    break;
                }
            }
            worst = if best.is_nan() || worst.is_nan() { f64::NAN } else { worst.max(best) };
        }
        Ok((worst, entries.len()))
    }
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

#[derive(Default)]
struct Tally {
    worst: f64,
    entries: usize,
}

impl Tally {
    fn add(&mut self, (worst, entries): (f64, usize)) {
        self.worst = if worst.is_nan() || self.worst.is_nan() {
            f64::NAN
        } else {
            self.worst.max(worst)
        };
        self.entries += entries;
    }

    fn finish(self, group: &str) -> GroupResult {
        GroupResult {
            group: group.to_string(),
            worst: self.worst,
            entries: self.entries,
        }
    }
}

fn check_conv(c: &mut Checker, kernels: &Kernels) -> Result<GroupResult> {
    let mut t = Tally::default();
    let specs = [
        ([2, 2, 5, 5], [3, 2, 3, 3], ConvSpec::same(3)),
        (
            [2, 3, 6, 5],
            [2, 3, 3, 2],
            ConvSpec {
                kernel: (3, 2),
                stride: 2,
                padding: 1,
            },
        ),
    ];
    for (xs, ws, spec) in specs {
        let x = c.tensor(&xs);
        let w = c.tensor(&ws);
        let b = c.tensor(&[ws[0]]);
        let out = conv2d_forward(&x, &w, &b, &spec)?;
        let r = c.tensor(out.shape());
        let g = (kernels.conv_backward)(&x, &w, &spec, &r)?;
        t.add(c.compare(&x, &g.input, |x| Ok(dot(&conv2d_forward(x, &w, &b, &spec)?, &r)))?);
        t.add(c.compare(&w, &g.weight, |w| Ok(dot(&conv2d_forward(&x, w, &b, &spec)?, &r)))?);
        t.add(c.compare(&b, &g.bias, |b| Ok(dot(&conv2d_forward(&x, &w, b, &spec)?, &r)))?);
    }
    Ok(t.finish("conv"))
}

fn check_pool(c: &mut Checker) -> Result<GroupResult> {
    let spec = PoolSpec::square(2);
    let x = c.tensor(&[2, 3, 6, 4]);
    let r = c.tensor(avg_pool2d_forward(&x, &spec)?.shape());
    let g = avg_pool2d_backward(x.shape(), &spec, &r)?;
    let mut t = Tally::default();
    t.add(c.compare(&x, &g, |x| Ok(dot(&avg_pool2d_forward(x, &spec)?, &r)))?);
    Ok(t.finish("avgpool"))
}

fn check_relu(c: &mut Checker) -> Result<GroupResult> {
    // keep inputs away from the kink so the difference quotient is exact
    let mut x = c.tensor(&[3, 7]);
    x.data_mut()
        .iter_mut()
        .for_each(|v| *v = if *v >= 0.0 { *v + 0.1 } else { *v - 0.1 });
    let r = c.tensor(x.shape());
    let g = relu_backward(&x, &r)?;
    let mut t = Tally::default();
    t.add(c.compare(&x, &g, |x| Ok(dot(&relu_forward(x), &r)))?);
    Ok(t.finish("relu"))
}

fn check_batchnorm(c: &mut Checker) -> Result<GroupResult> {
    let ch = 3;
    let x = c.tensor(&[4, ch, 3, 2]);
    let gamma = c.tensor(&[ch]);
    let beta = c.tensor(&[ch]);
    let rm = Tensor::zeros(&[ch]);
    let rv = Tensor::full(&[ch], 1.0);
    fn bn<'a>(gamma: &'a Tensor, beta: &'a Tensor, running: [&'a Tensor; 2]) -> BatchNorm<'a> {
        BatchNorm {
            gamma,
            beta,
            running_mean: running[0],
            running_var: running[1],
            config: BatchNormConfig::default(),
        }
    }
    let (out, cache) = batchnorm_forward(&x, &bn(&gamma, &beta, [&rm, &rv]), Mode::Train)?;
    let r = c.tensor(out.shape());
    let g = batchnorm_backward(&cache, &r)?;
    let loss = |x: &Tensor, gamma: &Tensor, beta: &Tensor| -> Result<f64> {
        Ok(dot(&batchnorm_forward(x, &bn(gamma, beta, [&rm, &rv]), Mode::Train)?.0, &r))
    };
    let mut t = Tally::default();
    t.add(c.compare(&x, &g.input, |x| loss(x, &gamma, &beta))?);
    t.add(c.compare(&gamma, &g.gamma, |gm| loss(&x, gm, &beta))?);
    t.add(c.compare(&beta, &g.beta, |bt| loss(&x, &gamma, bt))?);
    Ok(t.finish("batchnorm"))
}

fn check_affine(c: &mut Checker) -> Result<GroupResult> {
    let x = c.tensor(&[3, 5]);
    let w = c.tensor(&[5, 4]);
    let b = c.tensor(&[4]);
    let r = c.tensor(&[3, 4]);
    let g = affine_backward(&x, &w, &r)?;
    let mut t = Tally::default();
    t.add(c.compare(&x, &g.input, |x| Ok(dot(&affine_forward(x, &w, &b)?, &r)))?);
    t.add(c.compare(&w, &g.weight, |w| Ok(dot(&affine_forward(&x, w, &b)?, &r)))?);
    t.add(c.compare(&b, &g.bias, |b| Ok(dot(&affine_forward(&x, &w, b)?, &r)))?);
    Ok(t.finish("affine"))
}

fn check_softmax_ce(c: &mut Checker) -> Result<GroupResult> {
    let logits = c.tensor(&[3, 4]).scale(3.0);
    let labels = [2, 0, 3];
    let (_, g) = cross_entropy(&softmax(&logits)?, &labels)?;
    let mut t = Tally::default();
    t.add(c.compare(&logits, &g, |z| Ok(cross_entropy(&softmax(z)?, &labels)?.0.mean))?);
    Ok(t.finish("softmax_ce"))
}

/// Owned tensors of one residual block under test.
struct BlockParams {
    units: Vec<[Tensor; 4]>,
    projection: Option<[Tensor; 2]>,
    running: Vec<[Tensor; 2]>,
}

impl BlockParams {
    fn random(c: &mut Checker, cin: usize, cout: usize, convs: usize) -> Self {
        let mut units = Vec::new();
        let mut running = Vec::new();
        for i in 0..convs {
            let fan = if i == 0 { cin } else { cout };
            let mut gamma = c.tensor(&[cout]);
            gamma.data_mut().iter_mut().for_each(|v| *v += 1.5);
            units.push([c.tensor(&[cout, fan, 3, 3]), c.tensor(&[cout]), gamma, c.tensor(&[cout])]);
            running.push([Tensor::zeros(&[cout]), Tensor::full(&[cout], 1.0)]);
        }
        let projection = (cin != cout).then(|| [c.tensor(&[cout, cin, 1, 1]), c.tensor(&[cout])]);
        BlockParams {
            units,
            projection,
            running,
        }
    }

    fn view(&self) -> ResidualBlock<'_> {
        ResidualBlock {
            units: self
                .units
                .iter()
                .zip(&self.running)
                .map(|([w, b, g, bt], [rm, rv])| ConvBn {
                    weight: w,
                    bias: b,
                    spec: ConvSpec::same(3),
                    bn: BatchNorm {
                        gamma: g,
                        beta: bt,
                        running_mean: rm,
                        running_var: rv,
                        config: BatchNormConfig::default(),
                    },
                })
                .collect(),
            projection: self.projection.as_ref().map(|[w, b]| Projection { weight: w, bias: b }),
        }
    }
}

fn check_residual(c: &mut Checker, name: &str, cin: usize, cout: usize, convs: usize) -> Result<GroupResult> {
    let x = c.tensor(&[3, cin, 4, 4]);
    let mut p = BlockParams::random(c, cin, cout, convs);
    let (out, cache) = residual_block_forward(&x, &p.view(), Mode::Train)?;
    let r = c.tensor(out.shape());
    let g = residual_block_backward(&p.view(), &cache, &r)?;
    let mut t = Tally::default();
    t.add(c.compare(&x, &g.input, |x| Ok(dot(&residual_block_forward(x, &p.view(), Mode::Train)?.0, &r)))?);

    let mut analytic: Vec<(usize, usize, Tensor)> = Vec::new();
    for (u, ug) in g.units.into_iter().enumerate() {
        for (k, t) in [ug.weight, ug.bias, ug.gamma, ug.beta].into_iter().enumerate() {
            analytic.push((u, k, t));
        }
    }
    for (u, k, grad) in analytic {
        let base = p.units[u][k].clone();
        let res = c.compare(&base, &grad, |v| {
            p.units[u][k] = v.clone();
            Ok(dot(&residual_block_forward(&x, &p.view(), Mode::Train)?.0, &r))
        });
        p.units[u][k] = base;
        t.add(res?);
    }
    if let Some((gw, gb)) = g.projection {
        for (k, grad) in [gw, gb].into_iter().enumerate() {
            let base = p.projection.as_ref().expect("projection present")[k].clone();
            let res = c.compare(&base, &grad, |v| {
                p.projection.as_mut().expect("projection present")[k] = v.clone();
                Ok(dot(&residual_block_forward(&x, &p.view(), Mode::Train)?.0, &r))
            });
            p.projection.as_mut().expect("projection present")[k] = base;
            t.add(res?);
        }
    }
    Ok(t.finish(name))
}

/// One group per parameter tensor of the network, under the mean
/// cross-entropy of a random batch.
fn check_network(c: &mut Checker, cfg: &GradcheckConfig) -> Result<Vec<GroupResult>> {
    let config = NetworkConfig::resolve(&cfg.preset)?.with_input_size(cfg.input_size, cfg.input_size)?;
    let (network, mut params) = build_network(config, cfg.seed)?;
    let x = c.tensor(&[cfg.batch, 1, cfg.input_size, cfg.input_size]);
    let labels: Vec<usize> = (0..cfg.batch).map(|i| i % network.classes()).collect();
    let (probs, cache) = network.forward(&params, &x, Mode::Train)?;
    let (_, grad_logits) = cross_entropy(&probs, &labels)?;
    let grads = network.backward(&params, &cache, &grad_logits)?;

    let mut out = Vec::with_capacity(grads.len());
    for (name, grad) in grads {
        let base = params.get(&name)?.clone();
        let res = c.compare(&base, &grad, |v| {
            *params.get_mut(&name)? = v.clone();
            let (p, _) = network.forward(&params, &x, Mode::Train)?;
            Ok(cross_entropy(&p, &labels)?.0.mean)
        });
        *params.get_mut(&name)? = base;
        let mut t = Tally::default();
        t.add(res?);
        out.push(t.finish(&format!("network:{name}")));
    }
    Ok(out)
}

/// Runs every group with the given backward kernels.
pub fn run_gradcheck(cfg: &GradcheckConfig, kernels: &Kernels) -> Result<GradcheckReport> {
    if !(cfg.step > 0.0) || cfg.max_entries == 0 || cfg.batch == 0 {
        return Err(Error::config("gradcheck needs a positive step, batch and entry count"));
    }
    let mut c = Checker {
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        step: cfg.step,
        max_entries: cfg.max_entries,
        retry_above: cfg.threshold,
    };
    let mut groups = vec![
        check_conv(&mut c, kernels)?,
        check_pool(&mut c)?,
        check_relu(&mut c)?,
        check_batchnorm(&mut c)?,
        check_affine(&mut c)?,
        check_softmax_ce(&mut c)?,
        check_residual(&mut c, "residual_block", 3, 3, 2)?,
        check_residual(&mut c, "residual_block_projection", 2, 4, 3)?,
    ];
    groups.extend(check_network(&mut c, cfg)?);
    Ok(GradcheckReport {
        threshold: cfg.threshold,
        groups,
    })
}

pub fn cmd_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    run_gradcheck(cfg, &Kernels::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_scales_only_above_one() {
        assert_eq!(relative_error(1e-3, 0.0), 1e-3);
        assert_eq!(relative_error(200.0, 100.0), 0.5);
    }

    #[test]
    fn layer_groups_pass() {
        let mut c = Checker {
            rng: ChaCha8Rng::seed_from_u64(1),
            step: 1e-5,
            max_entries: 8,
            retry_above: 1e-5,
        };
        for g in [
            check_conv(&mut c, &Kernels::default()).unwrap(),
            check_batchnorm(&mut c).unwrap(),
            check_softmax_ce(&mut c).unwrap(),
        ] {
            assert!(g.worst <= 1e-6, "{g:?}");
        }
    }
}
