//! Diffusion training loop, checkpoints and loss logs.
//!
//! Randomness comes from ChaCha8 generators seeded with `config.seed` and
//! separated by stream id:
//!
//! | stream | use |
//! |---|---|
//! | 0 | parameter initialisation |
//! | 1 | per-element time-step draws |
//! | 2 | per-element noise draws |
//! | 3 | ancestral sampling |
//! | 4 | fixed evaluation batch |
//! | 2³² + e | batch order of epoch `e` |
//!
//! Time and noise generators are checkpointed by word position, so a resumed
//! run replays the exact draws of an uninterrupted one.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::circuits::Entanglement;
use crate::data::{subset_indices, LatentDataset};
use crate::denoiser::{grad_params, predict_noise, DenoiserConfig, DenoiserParams, Variant};
use crate::diffusion::{scaled_linear_endpoints, standard_normal, DiffusionSchedule};
use crate::error::{Error, Result};
use crate::nn::{ensure_finite, AdamConfig, AdamState, EmaState};

pub const STREAM_INIT: u64 = 0;
pub const STREAM_TIME: u64 = 1;
pub const STREAM_NOISE: u64 = 2;
pub const STREAM_SAMPLE: u64 = 3;
pub const STREAM_EVAL: u64 = 4;
pub const STREAM_SHUFFLE_BASE: u64 = 1 << 32;
pub const RNG_ALGORITHM: &str = "chacha8";

pub const QDM_MAGIC: &[u8; 4] = b"QDM1";
pub const QDM_VERSION: u32 = 1;

/// Up to this many latents form the fixed batch used for EMA evaluation.
pub const EVAL_BATCH: usize = 256;
/// Smoothing factor of the logged running loss.
pub const LOSS_SMOOTHING: f64 = 0.95;

fn default_epochs() -> usize {
    40
}
fn default_batch() -> usize {
    64
}
fn default_lr() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.99
}
fn default_adam_eps() -> f64 {
    1e-8
}
fn default_steps() -> usize {
    200
}
fn default_fraction() -> f64 {
    1.0
}
fn default_dim() -> usize {
    crate::denoiser::DEFAULT_LATENT_DIM
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: Variant,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default)]
    pub entanglement: Entanglement,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
    /// Number of diffusion steps `T`.
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Defaults to the 1000-step reference endpoints rescaled by `1000 / T`.
    #[serde(default)]
    pub beta_start: Option<f64>,
    #[serde(default)]
    pub beta_end: Option<f64>,
    #[serde(default = "default_fraction")]
    pub dataset_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    /// Write a checkpoint every this many epochs; 0 writes only the final one.
    #[serde(default)]
    pub checkpoint_every: usize,
}

impl TrainConfig {
    pub fn new(variant: Variant, dim: usize) -> Self {
        Self {
            variant,
            dim,
            entanglement: Entanglement::default(),
            epochs: default_epochs(),
            batch_size: default_batch(),
            lr: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            adam_eps: default_adam_eps(),
            steps: default_steps(),
            beta_start: None,
            beta_end: None,
            dataset_fraction: default_fraction(),
            seed: 0,
            checkpoint_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.denoiser()?;
        self.schedule()?;
        let positive = [
            ("epochs", self.epochs as f64),
            ("batch_size", self.batch_size as f64),
            ("lr", self.lr),
            ("adam_eps", self.adam_eps),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| !(*v > 0.0)) {
            return Err(Error::InvalidArgument(format!("{name} must be positive")));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidArgument(format!("{name} must lie in [0, 1)")));
            }
        }
        if !(self.dataset_fraction > 0.0 && self.dataset_fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "dataset_fraction {} outside (0, 1]",
                self.dataset_fraction
            )));
        }
        Ok(())
    }

    pub fn denoiser(&self) -> Result<DenoiserConfig> {
        let cfg = DenoiserConfig {
            variant: self.variant,
            dim: self.dim,
            entanglement: self.entanglement,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn beta_range(&self) -> (f64, f64) {
        let (start, end) = scaled_linear_endpoints(self.steps);
        (self.beta_start.unwrap_or(start), self.beta_end.unwrap_or(end))
    }

    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        let (start, end) = self.beta_range();
        DiffusionSchedule::linear(self.steps, start, end)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serialises")
    }

    /// Hex SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        hex_digest(self.to_json().as_bytes())
    }

    /// Fields that may differ between a checkpoint and the run resuming it.
    fn resumable_view(&self) -> Self {
        Self {
            epochs: 0,
            checkpoint_every: 0,
            ..self.clone()
        }
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub iterations: Vec<IterationRecord>,
    /// Loss of the EMA parameters on the fixed evaluation batch, per epoch.
    pub epoch_ema_losses: Vec<f64>,
    pub epoch_seconds: Vec<f64>,
}

impl TrainLog {
    pub fn losses(&self) -> Vec<f64> {
        self.iterations.iter().map(|r| r.loss).collect()
    }

    /// Exponentially smoothed running loss, one value per iteration.
    pub fn smoothed_losses(&self) -> Vec<f64> {
        let mut acc: Option<f64> = None;
        self.iterations
            .iter()
            .map(|r| {
                let next = match acc {
                    None => r.loss,
                    Some(a) => LOSS_SMOOTHING * a + (1.0 - LOSS_SMOOTHING) * r.loss,
                };
                acc = Some(next);
                next
            })
            .collect()
    }

    /// `iteration,epoch,loss,loss_smoothed,loss_db`, 1-based iterations.
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("iteration,epoch,loss,loss_smoothed,loss_db\n");
        for (i, (r, s)) in self.iterations.iter().zip(self.smoothed_losses()).enumerate() {
            let _ = writeln!(out, "{},{},{},{},{}", i + 1, r.epoch, r.loss, s, to_db(r.loss));
        }
        out
    }

    /// `epoch,ema_loss,seconds`, 1-based epochs.
    pub fn epoch_csv(&self) -> String {
        let mut out = String::from("epoch,ema_loss,seconds\n");
        for (e, (l, s)) in self.epoch_ema_losses.iter().zip(&self.epoch_seconds).enumerate() {
            let _ = writeln!(out, "{},{},{:.3}", e + 1, l, s);
        }
        out
    }
}

/// `10 · log10(x)`.
pub fn to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// One training example: noised latent, its step and the noise that made it.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisedExample {
    pub x_t: Vec<f64>,
    pub t: usize,
    pub eps: Vec<f64>,
}

/// Mean p2 loss over a batch and the mean gradient of that loss.
pub fn batch_loss_and_grad(
    config: &DenoiserConfig,
    schedule: &DiffusionSchedule,
    params: &DenoiserParams,
    batch: &[NoisedExample],
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let per_item = batch
        .par_iter()
        .map(|ex| {
            let pred = predict_noise(config, params, &ex.x_t, ex.t)?;
            let loss = schedule.p2_loss(&pred, &ex.eps, ex.t)?;
            let scale = 2.0 * schedule.p2_weight(ex.t)? / pred.len() as f64;
            let upstream: Vec<f64> = pred.iter().zip(&ex.eps).map(|(p, e)| scale * (p - e)).collect();
            Ok((loss, grad_params(config, params, &ex.x_t, ex.t, &upstream)?.flatten()))
        })
        .collect::<Result<Vec<_>>>()?;
    let inv = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; config.count_params()];
    let mut loss = 0.0;
    for (l, g) in &per_item {
        loss += l * inv;
        for (acc, v) in grad.iter_mut().zip(g) {
            *acc += v * inv;
        }
    }
    Ok((loss, grad))
}

/// Mean p2 loss over a batch.
pub fn batch_loss(
    config: &DenoiserConfig,
    schedule: &DiffusionSchedule,
    params: &DenoiserParams,
    batch: &[NoisedExample],
) -> Result<f64> {
    let losses = batch
        .par_iter()
        .map(|ex| schedule.p2_loss(&predict_noise(config, params, &ex.x_t, ex.t)?, &ex.eps, ex.t))
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / batch.len() as f64)
}

/// A denoiser ready for sampling. Built only from EMA parameters.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub config: DenoiserConfig,
    pub schedule: DiffusionSchedule,
    pub params: DenoiserParams,
}

impl TrainedModel {
    pub fn predict(&self, x_t: &[f64], t: usize) -> Result<Vec<f64>> {
        predict_noise(&self.config, &self.params, x_t, t)
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Result<Vec<Vec<f64>>> {
        self.schedule
            .sample(|x, t| self.predict(x, t), rng, n, self.config.dim)
    }

    /// `n` latents from the sampling stream of `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        self.sample_with(&mut stream_rng(seed, STREAM_SAMPLE), n)
    }
}

pub struct Trainer {
    config: TrainConfig,
    denoiser: DenoiserConfig,
    schedule: DiffusionSchedule,
    data: Vec<Vec<f64>>,
    params: Vec<f64>,
    adam: AdamState,
    ema: EmaState,
    time_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    epoch: usize,
    batch_in_epoch: usize,
    order: Vec<usize>,
    eval_batch: Vec<NoisedExample>,
    log: TrainLog,
    epoch_started: Option<Instant>,
}

impl std::fmt::Debug for Trainer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Trainer")
            .field("variant", &self.config.variant)
            .field("epoch", &self.epoch)
            .field("iteration", &self.iteration())
            .finish_non_exhaustive()
    }
}

impl Trainer {
    /// Fresh run with randomly initialised parameters.
    pub fn new(config: TrainConfig, latents: &LatentDataset) -> Result<Self> {
        config.validate()?;
        let denoiser = config.denoiser()?;
        let params = DenoiserParams::random(&denoiser, &mut stream_rng(config.seed, STREAM_INIT));
        Self::with_params(config, latents, &params)
    }

    /// Fresh run starting from the given parameters.
    pub fn with_params(config: TrainConfig, latents: &LatentDataset, init: &DenoiserParams) -> Result<Self> {
        config.validate()?;
        let denoiser = config.denoiser()?;
        init.check(&denoiser)?;
        if latents.is_empty() {
            return Err(Error::InvalidArgument("cannot train on an empty latent dataset".into()));
        }
        if latents.dim != config.dim {
            return Err(Error::LengthMismatch {
                what: "latent dimension",
                expected: config.dim,
                got: latents.dim,
            });
        }
        let schedule = config.schedule()?;
        let rows = subset_indices(latents.len(), config.dataset_fraction, config.seed)?;
        let data: Vec<Vec<f64>> = rows.iter().map(|&i| latents.latents[i].clone()).collect();
        let params = init.flatten();
        let eval_batch = make_eval_batch(&config, &schedule, &data)?;
        let mut trainer = Self {
            adam: AdamState::new(config.adam(), params.len()),
            ema: EmaState::new(&params),
            time_rng: stream_rng(config.seed, STREAM_TIME),
            noise_rng: stream_rng(config.seed, STREAM_NOISE),
            epoch: 0,
            batch_in_epoch: 0,
            order: Vec::new(),
            eval_batch,
            log: TrainLog::default(),
            epoch_started: None,
            config,
            denoiser,
            schedule,
            data,
            params,
        };
        trainer.order = trainer.epoch_order(0);
        Ok(trainer)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn denoiser_config(&self) -> &DenoiserConfig {
        &self.denoiser
    }

    pub fn schedule(&self) -> &DiffusionSchedule {
        &self.schedule
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn iteration(&self) -> usize {
        self.log.iterations.len()
    }

    pub fn training_rows(&self) -> usize {
        self.data.len()
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.data.len().div_ceil(self.config.batch_size)
    }

    pub fn is_finished(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    pub fn live_params(&self) -> DenoiserParams {
        DenoiserParams::from_flat(&self.denoiser, &self.params).expect("shape fixed at construction")
    }

    pub fn ema(&self) -> &EmaState {
        &self.ema
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    pub fn ema_params(&self) -> DenoiserParams {
        DenoiserParams::from_flat(&self.denoiser, &self.ema.shadow).expect("shape fixed at construction")
    }

    /// Model for sampling and evaluation, always backed by the EMA shadow.
    pub fn sampling_model(&self) -> TrainedModel {
        TrainedModel {
            config: self.denoiser,
            schedule: self.schedule.clone(),
            params: self.ema_params(),
        }
    }

    fn epoch_order(&self, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.data.len()).collect();
        order.shuffle(&mut stream_rng(self.config.seed, STREAM_SHUFFLE_BASE + epoch as u64));
        order
    }

    /// Draws the next minibatch of noised examples, advancing the time and
    /// noise streams.
    fn next_batch(&mut self) -> Result<Vec<NoisedExample>> {
        let bs = self.config.batch_size;
        let start = self.batch_in_epoch * bs;
        let end = (start + bs).min(self.data.len());
        let steps = self.schedule.steps();
        let mut batch = Vec::with_capacity(end - start);
        for &row in &self.order[start..end] {
            let t = self.time_rng.random_range(1..=steps);
            let eps = standard_normal(&mut self.noise_rng, self.config.dim);
            let x_t = self.schedule.diffuse_to(&self.data[row], t, &eps)?;
            batch.push(NoisedExample { x_t, t, eps });
        }
        Ok(batch)
    }

    /// Loss of the current live parameters on a batch, without updating.
    pub fn loss_on(&self, batch: &[NoisedExample]) -> Result<f64> {
        batch_loss(&self.denoiser, &self.schedule, &self.live_params(), batch)
    }

    /// One optimiser iteration. Returns the pre-update batch loss.
    pub fn step(&mut self) -> Result<f64> {
        if self.is_finished() {
            return Err(Error::InvalidArgument("training already finished".into()));
        }
        self.epoch_started.get_or_insert_with(Instant::now);
        let batch = self.next_batch()?;
        let (loss, grad) = batch_loss_and_grad(&self.denoiser, &self.schedule, &self.live_params(), &batch)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss {loss} at iteration {} (epoch {})",
                self.iteration() + 1,
                self.epoch + 1
            )));
        }
        ensure_finite("gradient", &grad)?;
        self.adam.update(&mut self.params, &grad)?;
        self.ema.update(&self.params)?;
        self.log.iterations.push(IterationRecord {
            epoch: self.epoch + 1,
            loss,
        });
        self.batch_in_epoch += 1;
        if self.batch_in_epoch == self.batches_per_epoch() {
            self.finish_epoch()?;
        }
        Ok(loss)
    }

    fn finish_epoch(&mut self) -> Result<()> {
        let ema_loss = batch_loss(&self.denoiser, &self.schedule, &self.ema_params(), &self.eval_batch)?;
        self.log.epoch_ema_losses.push(ema_loss);
        let secs = self.epoch_started.take().map_or(0.0, |s| s.elapsed().as_secs_f64());
        self.log.epoch_seconds.push(secs);
        self.epoch += 1;
        self.batch_in_epoch = 0;
        self.order = self.epoch_order(self.epoch);
        Ok(())
    }

    /// Runs the remaining iterations of the current epoch.
    pub fn run_epoch(&mut self) -> Result<()> {
        let target = self.epoch + 1;
        while self.epoch < target {
            self.step()?;
        }
        Ok(())
    }

    /// Trains to `config.epochs`, calling `on_epoch` after each completed epoch.
    pub fn run<F>(&mut self, mut on_epoch: F) -> Result<()>
    where
        F: FnMut(&Trainer) -> Result<()>,
    {
        while !self.is_finished() {
            self.run_epoch()?;
            on_epoch(self)?;
        }
        Ok(())
    }

    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(QDM_MAGIC);
        w.u32(QDM_VERSION);
        w.string(&self.config.to_json());
        w.string(RNG_ALGORITHM);
        w.u128(self.time_rng.get_word_pos());
        w.u128(self.noise_rng.get_word_pos());
        w.u64(self.data.len() as u64);
        w.u64(self.epoch as u64);
        w.u64(self.batch_in_epoch as u64);
        w.f64s(&self.params);
        w.u64(self.adam.step);
        w.f64s(&self.adam.m);
        w.f64s(&self.adam.v);
        w.u64(self.ema.step);
        w.f64s(&self.ema.shadow);
        w.u64(self.log.iterations.len() as u64);
        for r in &self.log.iterations {
            w.u64(r.epoch as u64);
            w.f64(r.loss);
        }
        w.f64s(&self.log.epoch_ema_losses);
        w.f64s(&self.log.epoch_seconds);
        w.0
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.checkpoint_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Restores a run from `path`. `config` may differ from the stored one
    /// only in `epochs` and `checkpoint_every`; `latents` must be the data the
    /// run was started with.
    pub fn resume(path: impl AsRef<Path>, config: TrainConfig, latents: &LatentDataset) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let ck = Checkpoint::parse(path, &bytes)?;
        if ck.config.resumable_view() != config.resumable_view() {
            return Err(Error::Incompatible(format!(
                "checkpoint config {} differs from requested {}",
                ck.config.to_json(),
                config.to_json()
            )));
        }
        let init = DenoiserParams::from_flat(&config.denoiser()?, &ck.params)?;
        let mut trainer = Self::with_params(config, latents, &init)?;
        if trainer.data.len() as u64 != ck.rows {
            return Err(Error::Incompatible(format!(
                "checkpoint trained on {} rows, dataset provides {}",
                ck.rows,
                trainer.data.len()
            )));
        }
        let n = trainer.params.len();
        if ck.adam_m.len() != n || ck.adam_v.len() != n || ck.ema_shadow.len() != n {
            return Err(Error::format(path, 0, "optimiser state length mismatch"));
        }
        trainer.time_rng.set_word_pos(ck.time_word_pos);
        trainer.noise_rng.set_word_pos(ck.noise_word_pos);
        trainer.epoch = ck.epoch;
        trainer.batch_in_epoch = ck.batch_in_epoch;
        trainer.order = trainer.epoch_order(ck.epoch);
        trainer.adam.step = ck.adam_step;
        trainer.adam.m = ck.adam_m;
        trainer.adam.v = ck.adam_v;
        trainer.ema = EmaState {
            shadow: ck.ema_shadow,
            step: ck.ema_step,
        };
        trainer.log = ck.log;
        Ok(trainer)
    }
}

fn make_eval_batch(config: &TrainConfig, schedule: &DiffusionSchedule, data: &[Vec<f64>]) -> Result<Vec<NoisedExample>> {
    let mut rng = stream_rng(config.seed, STREAM_EVAL);
    let n = data.len().min(EVAL_BATCH);
    let rows = rand::seq::index::sample(&mut rng, data.len(), n);
    rows.iter()
        .map(|row| {
            let t = rng.random_range(1..=schedule.steps());
            let eps = standard_normal(&mut rng, config.dim);
            Ok(NoisedExample {
                x_t: schedule.diffuse_to(&data[row], t, &eps)?,
                t,
                eps,
            })
        })
        .collect()
}

/// Parsed QDM1 checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub time_word_pos: u128,
    pub noise_word_pos: u128,
    pub rows: u64,
    pub epoch: usize,
    pub batch_in_epoch: usize,
    pub params: Vec<f64>,
    pub adam_step: u64,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub ema_step: u64,
    pub ema_shadow: Vec<f64>,
    pub log: TrainLog,
}

impl Checkpoint {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::parse(path, &bytes)
    }

    pub fn parse(path: &Path, bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { path, bytes, pos: 0 };
        if r.take(4)? != QDM_MAGIC {
            return Err(Error::format(path, 0, "bad magic, expected \"QDM1\""));
        }
        let version = r.u32()?;
        if version != QDM_VERSION {
            return Err(Error::format(path, 4, format!("unsupported checkpoint version {version}")));
        }
        let at = r.pos;
        let config: TrainConfig = serde_json::from_str(&r.string()?)
            .map_err(|e| Error::format(path, at, format!("config: {e}")))?;
        let at = r.pos;
        let algo = r.string()?;
        if algo != RNG_ALGORITHM {
            return Err(Error::format(path, at, format!("unsupported rng {algo:?}")));
        }
        let time_word_pos = r.u128()?;
        let noise_word_pos = r.u128()?;
        let rows = r.u64()?;
        let epoch = r.u64()? as usize;
        let batch_in_epoch = r.u64()? as usize;
        let params = r.f64s()?;
        let adam_step = r.u64()?;
        let adam_m = r.f64s()?;
        let adam_v = r.f64s()?;
        let ema_step = r.u64()?;
        let ema_shadow = r.f64s()?;
        let n_iter = r.u64()? as usize;
        let mut iterations = Vec::with_capacity(n_iter.min(1 << 24));
        for _ in 0..n_iter {
            let epoch = r.u64()? as usize;
            iterations.push(IterationRecord { epoch, loss: r.f64()? });
        }
        let log = TrainLog {
            iterations,
            epoch_ema_losses: r.f64s()?,
            epoch_seconds: r.f64s()?,
        };
        if r.pos != bytes.len() {
            return Err(Error::format(path, r.pos, "trailing bytes"));
        }
        Ok(Self {
            config,
            time_word_pos,
            noise_word_pos,
            rows,
            epoch,
            batch_in_epoch,
            params,
            adam_step,
            adam_m,
            adam_v,
            ema_step,
            ema_shadow,
            log,
        })
    }

    /// Sampling model from the stored EMA shadow.
    pub fn model(&self) -> Result<TrainedModel> {
        let config = self.config.denoiser()?;
        Ok(TrainedModel {
            config,
            schedule: self.config.schedule()?,
            params: DenoiserParams::from_flat(&config, &self.ema_shadow)?,
        })
    }
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    fn u128(&mut self, v: u128) {
        self.bytes(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }
    fn string(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.bytes(s.as_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        for x in v {
            self.f64(*x);
        }
    }
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.path, self.pos, "truncated checkpoint"));
        }
        self.pos += n;
        Ok(&self.bytes[self.pos - n..self.pos])
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.array()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let at = self.pos;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::format(self.path, at, "invalid UTF-8"))
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        if n > (self.bytes.len() - self.pos) / 8 {
            return Err(Error::format(self.path, self.pos, "truncated checkpoint"));
        }
        (0..n).map(|_| self.f64()).collect()
    }
}

/// Trains `config` on `latents`, writing checkpoints and logs to `out_dir`
/// when given.
pub fn train(config: TrainConfig, latents: &LatentDataset, out_dir: Option<&Path>) -> Result<Trainer> {
    let mut trainer = Trainer::new(config, latents)?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let every = trainer.config.checkpoint_every;
    trainer.run(|t| {
        if let (Some(dir), true) = (out_dir, every > 0 && t.epoch() % every == 0) {
            t.save_checkpoint(dir.join(format!("checkpoint_e{:03}.qdm", t.epoch())))?;
        }
        Ok(())
    })?;
    if let Some(dir) = out_dir {
        trainer.save_checkpoint(dir.join("final.qdm"))?;
        write_text(&dir.join("loss.csv"), &trainer.log.loss_csv())?;
        write_text(&dir.join("epochs.csv"), &trainer.log.epoch_csv())?;
    }
    Ok(trainer)
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(n: usize, dim: usize, seed: u64) -> LatentDataset {
        let mut rng = stream_rng(seed, 99);
        let rows = (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-0.8..0.8)).collect())
            .collect();
        LatentDataset::new(rows, dim, None, "synthetic").unwrap()
    }

    fn small_config(variant: Variant, dim: usize) -> TrainConfig {
        TrainConfig {
            epochs: 1,
            batch_size: 16,
            steps: 20,
            seed: 5,
            ..TrainConfig::new(variant, dim)
        }
    }

    #[test]
    fn classical_smoke() {
        let data = synthetic(100, 10, 1);
        let t = train(small_config(Variant::Classical, 10), &data, None).unwrap();
        assert_eq!(t.iteration(), 7);
        assert!(t.log().losses().iter().all(|l| l.is_finite()));
        assert_eq!(t.log().epoch_ema_losses.len(), 1);
    }

    #[test]
    fn config_defaults_and_validation() {
        let c: TrainConfig = serde_json::from_str(r#"{"variant":"Expr4Z"}"#).unwrap();
        assert_eq!((c.epochs, c.batch_size, c.dim, c.steps), (40, 64, 10, 200));
        assert_eq!((c.lr, c.beta1, c.beta2), (1e-3, 0.9, 0.99));
        assert!(serde_json::from_str::<TrainConfig>(r#"{"variant":"Expr4Z","bogus":1}"#).is_err());
        let bad = TrainConfig {
            dataset_fraction: 0.0,
            ..c.clone()
        };
        assert!(bad.validate().is_err());
        assert_eq!(c.hash().len(), 64);
        assert_eq!(c.hash(), c.clone().hash());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let data = synthetic(10, 4, 1);
        assert!(Trainer::new(small_config(Variant::Classical, 6), &data).is_err());
        let empty = LatentDataset::new(vec![], 4, None, "e").unwrap();
        assert!(Trainer::new(small_config(Variant::Classical, 4), &empty).is_err());
    }

    #[test]
    fn db_conversion() {
        assert!((to_db(0.01) + 20.0).abs() < 1e-12);
    }

    #[test]
    fn corrupted_checkpoint() {
        let data = synthetic(20, 4, 2);
        let t = Trainer::new(small_config(Variant::Classical, 4), &data).unwrap();
        let mut bytes = t.checkpoint_bytes();
        assert!(Checkpoint::parse(Path::new("mem"), &bytes).is_ok());
        bytes[1] = b'X';
        assert!(matches!(
            Checkpoint::parse(Path::new("mem"), &bytes),
            Err(Error::Format { offset: 0, .. })
        ));
        let bytes = t.checkpoint_bytes();
        assert!(Checkpoint::parse(Path::new("mem"), &bytes[..bytes.len() - 3]).is_err());
    }
}
