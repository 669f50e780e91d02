//! Minibatch training with Adam, metrics logging and resumable checkpoints.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, Entry};
use super::commands::ClassMode;
use super::metrics::{append_metrics, read_metrics, render_svg, truncate_metrics, MetricsRow};
use crate::data::{read_pgm, DatasetManifest, GrayImage, Split};
use crate::error::{Error, Result};
use crate::hash::{fnv1a, fnv1a_parts};
use crate::layers::Mode;
use crate::network::{build_network, Network, NetworkConfig, ParamSet};
use crate::optim::{accuracy, adam_step, cross_entropy, AdamConfig, AdamState};
use crate::tensor::Tensor;

/// Images are held in memory when the split fits in this many bytes and
/// are read from disk per batch otherwise.
const PRELOAD_BUDGET: usize = 1 << 30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRunConfig {
    /// Preset name or path to a network config file.
    pub preset: String,
    pub batch_size: usize,
    pub max_iterations: u64,
    /// Optional earlier stop once this many epochs have completed.
    pub max_epochs: Option<u64>,
    pub learning_rate: f64,
    pub seed: u64,
    pub manifest: PathBuf,
    /// Output directory for metrics, chart and checkpoints.
    pub out: PathBuf,
    pub log_interval: u64,
    /// Validation subsample size; `None` uses the whole val split.
    pub val_cap: Option<usize>,
    pub class_mode: ClassMode,
    /// When false the `wall_ms` column is written as 0 so runs compare
    /// byte for byte.
    pub record_wall_time: bool,
    /// Write `checkpoints/epoch-NNNN.rdck` at every epoch boundary.
    pub epoch_checkpoints: bool,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        TrainRunConfig {
            preset: "tiny".into(),
            batch_size: 16,
            max_iterations: 3200,
            max_epochs: None,
            learning_rate: 1e-4,
            seed: 0,
            manifest: PathBuf::new(),
            out: PathBuf::from("run"),
            log_interval: 50,
            val_cap: None,
            class_mode: ClassMode::Four,
            record_wall_time: true,
            epoch_checkpoints: true,
        }
    }
}

impl TrainRunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.max_iterations == 0 {
            return Err(Error::config("max_iterations must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.log_interval == 0 {
            return Err(Error::config("log_interval must be at least 1"));
        }
        if self.max_epochs == Some(0) {
            return Err(Error::config("max_epochs must be at least 1"));
        }
        if self.manifest.as_os_str().is_empty() {
            return Err(Error::config("no manifest given"));
        }
        Ok(())
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.out.join("metrics.csv")
    }

    pub fn chart_path(&self) -> PathBuf {
        self.out.join("metrics.svg")
    }

    pub fn final_checkpoint_path(&self) -> PathBuf {
        self.out.join("final.rdck")
    }

    pub fn epoch_checkpoint_path(&self, epoch: u64) -> PathBuf {
        self.out.join("checkpoints").join(format!("epoch-{epoch:04}.rdck"))
    }
}

/// Images and mapped labels of one split.
pub(crate) struct LabeledSet {
    paths: Vec<PathBuf>,
    pub labels: Vec<usize>,
    cache: Option<Vec<GrayImage>>,
    size: [usize; 2],
}

impl LabeledSet {
    pub fn from_manifest(
        manifest: &DatasetManifest,
        base_dir: &Path,
        split: Split,
        mode: ClassMode,
        size: [usize; 2],
    ) -> Result<Self> {
        let mut paths = Vec::new();
        let mut labels = Vec::new();
        for r in manifest.split(split) {
            paths.push(base_dir.join(&r.path));
            labels.push(mode.map_label(r.label as usize)?);
        }
        let mut set = LabeledSet {
            paths,
            labels,
            cache: None,
            size,
        };
        if set.len() * size[0] * size[1] * 8 <= PRELOAD_BUDGET {
            let images = (0..set.len()).map(|i| set.read(i)).collect::<Result<Vec<_>>>()?;
            set.cache = Some(images);
        } else if let Some(first) = set.paths.first() {
            set.check(&read_pgm(first)?, first)?;
        }
        Ok(set)
    }

    fn check(&self, img: &GrayImage, path: &Path) -> Result<()> {
        if [img.height(), img.width()] != self.size {
            return Err(Error::config(format!(
                "{} is {}x{} but the network expects {}x{} input",
                path.display(),
                img.height(),
                img.width(),
                self.size[0],
                self.size[1]
            )));
        }
        Ok(())
    }

    fn read(&self, i: usize) -> Result<GrayImage> {
        let img = read_pgm(&self.paths[i])?;
        self.check(&img, &self.paths[i])?;
        Ok(img)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[n, 1, H, W]` batch of the given samples plus their labels.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let [h, w] = self.size;
        let mut data = Vec::with_capacity(indices.len() * h * w);
        for &i in indices {
            match &self.cache {
                Some(images) => data.extend_from_slice(images[i].pixels()),
                None => data.extend_from_slice(self.read(i)?.pixels()),
            }
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((Tensor::new(&[indices.len(), 1, h, w], data)?, labels))
    }
}

/// Mean loss and accuracy of eval-mode predictions over `indices`.
pub(crate) fn evaluate_subset(
    network: &Network,
    params: &ParamSet,
    set: &LabeledSet,
    indices: &[usize],
    batch_size: usize,
) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut hits = 0.0;
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, labels) = set.batch(chunk)?;
        let (probs, _) = network.forward(params, &x, Mode::Eval)?;
        let (l, _) = cross_entropy(&probs, &labels)?;
        loss += l.per_sample.iter().sum::<f64>();
        hits += accuracy(&probs, &labels) * chunk.len() as f64;
    }
    let n = indices.len().max(1) as f64;
    Ok((loss / n, hits / n))
}

/// Order-sensitive fingerprint of every parameter and buffer bit pattern.
pub fn params_digest(params: &ParamSet) -> u64 {
    let mut parts: Vec<Vec<u8>> = Vec::new();
    for (name, t) in params.iter().chain(params.buffers()) {
        parts.push(name.as_bytes().to_vec());
        parts.push(t.data().iter().flat_map(|v| v.to_bits().to_le_bytes()).collect());
    }
    fnv1a_parts(parts.iter().map(|p| p.as_slice()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub iterations: u64,
    pub epochs: u64,
    pub final_train_loss: f64,
    pub final_train_acc: f64,
    pub final_checkpoint: PathBuf,
}

/// Loss and accuracy accumulated since the last metrics row.
#[derive(Clone, Copy, Debug, Default)]
struct Window {
    loss_sum: f64,
    acc_sum: f64,
    steps: u64,
}

/// A training run that can be advanced one iteration at a time, saved and
/// resumed.
pub struct Trainer {
    cfg: TrainRunConfig,
    network: Network,
    params: ParamSet,
    adam: AdamState,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    /// Epoch whose shuffle `order` holds.
    order_epoch: u64,
    iteration: u64,
    window: Window,
    train: LabeledSet,
    val: Option<LabeledSet>,
    val_indices: Vec<usize>,
    elapsed_offset_ms: u64,
    started: Instant,
    last_row: Option<MetricsRow>,
}

fn network_config(cfg: &TrainRunConfig) -> Result<NetworkConfig> {
    let mut config = NetworkConfig::resolve(&cfg.preset)?;
    if config.classes != cfg.class_mode.classes() {
        config = config.with_classes(cfg.class_mode.classes())?;
    }
    Ok(config)
}

fn run_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(fnv1a_parts([&b"train-order"[..], &seed.to_le_bytes()]))
}

impl Trainer {
    /// Fresh run: initializes parameters from the seed and starts a new
    /// metrics log in the output directory.
    pub fn new(cfg: TrainRunConfig) -> Result<Self> {
        let trainer = Self::build(cfg)?;
        let metrics = trainer.cfg.metrics_path();
        if metrics.exists() {
            std::fs::remove_file(&metrics).map_err(|e| Error::io(&metrics, e))?;
        }
        Ok(trainer)
    }

    fn build(cfg: TrainRunConfig) -> Result<Self> {
        cfg.validate()?;
        let (network, params) = build_network(network_config(&cfg)?, cfg.seed)?;
        let manifest = DatasetManifest::load(&cfg.manifest)?;
        let base = cfg.manifest.parent().unwrap_or(Path::new("")).to_path_buf();
        let size = network.config().input_size;
        let train = LabeledSet::from_manifest(&manifest, &base, Split::Train, cfg.class_mode, size)?;
        if train.is_empty() {
            return Err(Error::config(format!("{} has no train records", cfg.manifest.display())));
        }
        let val = LabeledSet::from_manifest(&manifest, &base, Split::Val, cfg.class_mode, size)?;
        let val = (!val.is_empty()).then_some(val);
        let val_indices = match &val {
            Some(v) => {
                let mut idx: Vec<usize> = (0..v.len()).collect();
                if let Some(cap) = cfg.val_cap.filter(|&c| c < v.len()) {
                    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(fnv1a_parts([
                        &b"val-subsample"[..],
                        &cfg.seed.to_le_bytes(),
                    ])));
                    idx.truncate(cap);
                    idx.sort_unstable();
                }
                idx
            }
            None => Vec::new(),
        };
        std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
        let adam = AdamState::new(&params, AdamConfig::with_lr(cfg.learning_rate));
        let n = train.len();
        let mut rng = run_rng(cfg.seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Ok(Trainer {
            cfg,
            network,
            params,
            adam,
            rng,
            order,
            order_epoch: 0,
            iteration: 0,
            window: Window::default(),
            train,
            val,
            val_indices,
            elapsed_offset_ms: 0,
            started: Instant::now(),
            last_row: None,
        })
    }

    /// Continues a run from a checkpoint written by [`Trainer::save`]. The
    /// metrics log is cut back to the checkpoint's iteration.
    pub fn resume(cfg: TrainRunConfig, checkpoint: &Path) -> Result<Self> {
        let ck = Checkpoint::load(checkpoint)?;
        let mut t = Self::build(cfg)?;
        t.restore(&ck)?;
        truncate_metrics(&t.cfg.metrics_path(), t.iteration)?;
        t.last_row = read_metrics(&t.cfg.metrics_path())
            .ok()
            .and_then(|rows| rows.into_iter().last());
        Ok(t)
    }

    pub fn config(&self) -> &TrainRunConfig {
        &self.cfg
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    /// Completed iterations.
    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn train_len(&self) -> usize {
        self.train.len()
    }

    /// `floor(iteration * batch_size / |train|)`.
    pub fn epoch_at(&self, iteration: u64) -> u64 {
        iteration * self.cfg.batch_size as u64 / self.train.len() as u64
    }

    pub fn finished(&self) -> bool {
        self.iteration >= self.cfg.max_iterations
            || self.cfg.max_epochs.is_some_and(|e| self.epoch_at(self.iteration) >= e)
    }

    /// Sample index at position `pos` of the epoch-concatenated stream.
    fn sample_at(&mut self, pos: u64) -> usize {
        let n = self.train.len() as u64;
        let epoch = pos / n;
        while self.order_epoch < epoch {
            self.order.sort_unstable();
            self.order.shuffle(&mut self.rng);
            self.order_epoch += 1;
        }
        self.order[(pos % n) as usize]
    }

    /// Runs one iteration: forward, loss, backward, Adam update, and any
    /// metrics row or epoch checkpoint that falls on it. Returns the row
    /// if one was logged.
    pub fn step(&mut self) -> Result<Option<MetricsRow>> {
        if self.finished() {
            return Err(Error::Usage("training run already finished".into()));
        }
        let bs = self.cfg.batch_size as u64;
        let start = self.iteration * bs;
        let indices: Vec<usize> = (start..start + bs).map(|p| self.sample_at(p)).collect();
        let (x, labels) = self.train.batch(&indices)?;
        let next = self.iteration + 1;

        let at_iteration = |e: Error| match e {
            Error::Numeric(msg) => Error::Numeric(format!("{msg} at iteration {next}")),
            other => other,
        };
        let (probs, cache) = self.network.forward(&self.params, &x, Mode::Train).map_err(at_iteration)?;
        let (loss, grad) = cross_entropy(&probs, &labels).map_err(at_iteration)?;
        if !loss.mean.is_finite() || !probs.all_finite() {
            return Err(Error::Numeric(format!("non-finite training loss at iteration {next}")));
        }
        self.network.backward_into(&mut self.params, &cache, &grad)?;
        adam_step(&mut self.params, &mut self.adam)
            .map_err(|e| Error::Numeric(format!("iteration {next}: {e}")))?;
        self.network.commit_running_stats(&mut self.params, &cache)?;
        self.iteration = next;
        self.window.loss_sum += loss.mean;
        self.window.acc_sum += accuracy(&probs, &labels);
        self.window.steps += 1;

        let mut row = None;
        if self.iteration % self.cfg.log_interval == 0 || self.finished() {
            let r = self.log_row()?;
            append_metrics(&self.cfg.metrics_path(), std::slice::from_ref(&r))?;
            self.last_row = Some(r.clone());
            row = Some(r);
        }
        let epoch = self.epoch_at(self.iteration);
        if self.cfg.epoch_checkpoints && epoch > self.epoch_at(self.iteration - 1) {
            let path = self.cfg.epoch_checkpoint_path(epoch);
            std::fs::create_dir_all(path.parent().expect("has parent")).map_err(|e| Error::io(&path, e))?;
            self.save(&path)?;
        }
        Ok(row)
    }

    fn log_row(&mut self) -> Result<MetricsRow> {
        let w = std::mem::take(&mut self.window);
        let (val_loss, val_acc) = match &self.val {
            Some(v) => {
                let (l, a) = evaluate_subset(&self.network, &self.params, v, &self.val_indices, self.cfg.batch_size)?;
                (Some(l), Some(a))
            }
            None => (None, None),
        };
        Ok(MetricsRow {
            iteration: self.iteration,
            epoch: self.epoch_at(self.iteration),
            train_loss: w.loss_sum / w.steps as f64,
            train_acc: w.acc_sum / w.steps as f64,
            val_loss,
            val_acc,
            wall_ms: self.elapsed_ms(),
        })
    }

    fn elapsed_ms(&self) -> u64 {
        if self.cfg.record_wall_time {
            self.elapsed_offset_ms + self.started.elapsed().as_millis() as u64
        } else {
            0
        }
    }

    /// Steps until the run is finished, then writes the final checkpoint
    /// and the SVG chart.
    pub fn run(&mut self) -> Result<TrainSummary> {
        while !self.finished() {
            self.step()?;
        }
        let final_checkpoint = self.cfg.final_checkpoint_path();
        self.save(&final_checkpoint)?;
        let rows = read_metrics(&self.cfg.metrics_path())?;
        let chart = self.cfg.chart_path();
        std::fs::write(&chart, render_svg(&rows)).map_err(|e| Error::io(&chart, e))?;
        let last = self.last_row.clone().or_else(|| rows.last().cloned());
        Ok(TrainSummary {
            iterations: self.iteration,
            epochs: self.epoch_at(self.iteration),
            final_train_loss: last.as_ref().map_or(f64::NAN, |r| r.train_loss),
            final_train_acc: last.as_ref().map_or(f64::NAN, |r| r.train_acc),
            final_checkpoint,
        })
    }

    /// Full training state as a checkpoint.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint {
            config_hash: self.params.config_hash,
            iteration: self.iteration,
            ..Default::default()
        };
        ck.insert(
            "meta.config",
            Entry::words(self.network.config().to_text().bytes().map(u64::from).collect()),
        );
        ck.insert(
            "meta.run",
            Entry::words(vec![
                self.params.seed,
                self.network.classes() as u64,
                self.cfg.batch_size as u64,
                self.train.len() as u64,
            ]),
        );
        for (name, t) in self.params.iter() {
            ck.insert(format!("param.{name}"), Entry::tensor(t));
        }
        for (name, t) in self.params.buffers() {
            ck.insert(format!("buffer.{name}"), Entry::tensor(t));
        }
        ck.insert("adam.t", Entry::words(vec![self.adam.t]));
        for (name, t) in &self.adam.m {
            ck.insert(format!("adam.m.{name}"), Entry::tensor(t));
        }
        for (name, t) in &self.adam.v {
            ck.insert(format!("adam.v.{name}"), Entry::tensor(t));
        }
        let seed = self.rng.get_seed();
        let mut rng_words: Vec<u64> = seed
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let pos = self.rng.get_word_pos();
        rng_words.extend([self.rng.get_stream(), pos as u64, (pos >> 64) as u64]);
        ck.insert("rng.order", Entry::words(rng_words));
        ck.insert("order", Entry::words(self.order.iter().map(|&i| i as u64).collect()));
        ck.insert("order.epoch", Entry::words(vec![self.order_epoch]));
        ck.insert(
            "window",
            Entry::F64 {
                shape: vec![2],
                data: vec![self.window.loss_sum, self.window.acc_sum],
            },
        );
        ck.insert("window.steps", Entry::words(vec![self.window.steps, self.elapsed_ms()]));
        ck
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.checkpoint().save(path)
    }

    fn restore(&mut self, ck: &Checkpoint) -> Result<()> {
        if ck.config_hash != self.params.config_hash {
            return Err(Error::Checkpoint(
                "checkpoint was written for a different network configuration".into(),
            ));
        }
        let run = ck.words("meta.run")?;
        let expect = [
            self.cfg.seed,
            self.network.classes() as u64,
            self.cfg.batch_size as u64,
            self.train.len() as u64,
        ];
        if run != expect {
            return Err(Error::Checkpoint(format!(
                "checkpoint run settings (seed, classes, batch size, train size) {run:?} differ from {expect:?}"
            )));
        }
        let names: Vec<String> = self.params.names().map(str::to_string).collect();
        for name in &names {
            let t = ck.tensor(&format!("param.{name}"))?;
            let p = self.params.get_mut(name)?;
            t.ensure_shape(p.shape(), name)?;
            *p = t;
            let m = ck.tensor(&format!("adam.m.{name}"))?;
            let v = ck.tensor(&format!("adam.v.{name}"))?;
            m.ensure_shape(p.shape(), name)?;
            v.ensure_shape(p.shape(), name)?;
            self.adam.m.insert(name.clone(), m);
            self.adam.v.insert(name.clone(), v);
        }
        let buffers: Vec<String> = self.params.buffers().map(|(n, _)| n.to_string()).collect();
        for name in &buffers {
            let t = ck.tensor(&format!("buffer.{name}"))?;
            let b = self.params.buffer_mut(name)?;
            t.ensure_shape(b.shape(), name)?;
            *b = t;
        }
        self.adam.t = single(ck.words("adam.t")?, "adam.t")?;

        let words = ck.words("rng.order")?;
        if words.len() != 7 {
            return Err(Error::Checkpoint("rng.order must hold 7 words".into()));
        }
        let mut seed = [0u8; 32];
        for (chunk, w) in seed.chunks_exact_mut(8).zip(&words[..4]) {
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(words[4]);
        rng.set_word_pos(words[5] as u128 | (words[6] as u128) << 64);
        self.rng = rng;

        let order: Vec<usize> = ck.words("order")?.iter().map(|&i| i as usize).collect();
        let mut sorted = order.clone();
        sorted.sort_unstable();
        if sorted != (0..self.train.len()).collect::<Vec<_>>() {
            return Err(Error::Checkpoint("stored sample order is not a permutation of the train set".into()));
        }
        self.order = order;
        self.order_epoch = single(ck.words("order.epoch")?, "order.epoch")?;

        let window = ck.tensor("window")?;
        let ws = ck.words("window.steps")?;
        if window.len() != 2 || ws.len() != 2 {
            return Err(Error::Checkpoint("malformed metrics window".into()));
        }
        self.window = Window {
            loss_sum: window.data()[0],
            acc_sum: window.data()[1],
            steps: ws[0],
        };
        self.elapsed_offset_ms = ws[1];
        self.started = Instant::now();
        self.iteration = ck.iteration;
        Ok(())
    }
}

fn single(words: &[u64], name: &str) -> Result<u64> {
    match words {
        [w] => Ok(*w),
        _ => Err(Error::Checkpoint(format!("{name} must hold one word"))),
    }
}

/// Rebuilds the network and trained parameters stored in a checkpoint.
pub fn load_model(ck: &Checkpoint) -> Result<(Network, ParamSet)> {
    let text: Vec<u8> = ck
        .words("meta.config")?
        .iter()
        .map(|&b| u8::try_from(b).map_err(|_| Error::Checkpoint("meta.config is not text".into())))
        .collect::<Result<_>>()?;
    let text = String::from_utf8(text).map_err(|_| Error::Checkpoint("meta.config is not utf-8".into()))?;
    let config = NetworkConfig::parse(&text)?;
    if config.hash() != ck.config_hash || fnv1a(text.as_bytes()) != ck.config_hash {
        return Err(Error::Checkpoint("stored network config does not match the header hash".into()));
    }
    let seed = ck.words("meta.run")?.first().copied().unwrap_or(0);
    let (network, mut params) = build_network(config, seed)?;
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in &names {
        let t = ck.tensor(&format!("param.{name}"))?;
        let p = params.get_mut(name)?;
        t.ensure_shape(p.shape(), name)?;
        *p = t;
    }
    let buffers: Vec<String> = params.buffers().map(|(n, _)| n.to_string()).collect();
    for name in &buffers {
        let t = ck.tensor(&format!("buffer.{name}"))?;
        let b = params.buffer_mut(name)?;
        t.ensure_shape(b.shape(), name)?;
        *b = t;
    }
    Ok((network, params))
}

/// Trains from scratch, or from `resume` when given.
pub fn cmd_train(cfg: TrainRunConfig, resume: Option<&Path>) -> Result<TrainSummary> {
    let mut trainer = match resume {
        Some(path) => Trainer::resume(cfg, path)?,
        None => Trainer::new(cfg)?,
    };
    trainer.run()
}
