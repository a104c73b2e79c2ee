//! Dense tanh autoencoder mapping 28×28 images to bounded latents.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::IMAGE_PIXELS;
use crate::error::{check_len, Error, Result};
use crate::matrix::Matrix;
use crate::nn::{ensure_finite, Activation, AdamConfig, AdamState, DenseLayer, Mlp};

pub const DEFAULT_HIDDEN: usize = 128;
pub const QAE_MAGIC: &[u8; 4] = b"QAE1";

#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    pub encoder: Mlp,
    pub decoder: Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AutoencoderTraining {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Autoencoder {
    /// `784 → hidden → dim` encoder and its mirror, all tanh, Glorot init.
    pub fn new(dim: usize, hidden: usize, seed: u64) -> Result<Self> {
        if dim == 0 || hidden == 0 {
            return Err(Error::InvalidArgument("autoencoder widths must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layer = |i, o| DenseLayer::glorot(i, o, Activation::Tanh, &mut rng);
        let encoder = Mlp::new(vec![layer(IMAGE_PIXELS, hidden), layer(hidden, dim)])?;
        let decoder = Mlp::new(vec![layer(dim, hidden), layer(hidden, IMAGE_PIXELS)])?;
        Ok(Self { encoder, decoder })
    }

    pub fn zeros(dim: usize, hidden: usize) -> Self {
        let z = |i, o| DenseLayer::zeros(i, o, Activation::Tanh);
        Self {
            encoder: Mlp {
                layers: vec![z(IMAGE_PIXELS, hidden), z(hidden, dim)],
            },
            decoder: Mlp {
                layers: vec![z(dim, hidden), z(hidden, IMAGE_PIXELS)],
            },
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.outputs()
    }

    pub fn encode(&self, image: &[f64]) -> Result<Vec<f64>> {
        check_len("image", self.encoder.inputs(), image.len())?;
        if let Some(v) = image.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("pixel value {v} outside [-1, 1]")));
        }
        self.encoder.forward(image)
    }

    pub fn decode(&self, latent: &[f64]) -> Result<Vec<f64>> {
        check_len("latent", self.decoder.inputs(), latent.len())?;
        self.decoder.forward(latent)
    }

    pub fn reconstruction_mse(&self, images: &[Vec<f64>]) -> Result<f64> {
        if images.is_empty() {
            return Err(Error::InvalidArgument("empty image set".into()));
        }
        let total: f64 = images
            .par_iter()
            .map(|x| Ok(mse(&self.decode(&self.encode(x)?)?, x)))
            .collect::<Result<Vec<f64>>>()?
            .iter()
            .sum();
        Ok(total / images.len() as f64)
    }

    fn params(&self) -> Vec<f64> {
        [self.encoder.params(), self.decoder.params()].concat()
    }

    fn set_params(&mut self, p: &[f64]) -> Result<()> {
        let n = self.encoder.param_count();
        self.encoder.set_params(&p[..n])?;
        self.decoder.set_params(&p[n..])
    }

    /// Mean over the batch of per-image reconstruction MSE and its gradient.
    fn batch_loss_grad(&self, batch: &[&Vec<f64>]) -> Result<(f64, Vec<f64>)> {
        let per_item = batch
            .par_iter()
            .map(|x| {
                let enc = self.encoder.forward_trace(x)?;
                let latent = enc.last().expect("trace");
                let dec = self.decoder.forward_trace(latent)?;
                let recon = dec.last().expect("trace");
                let scale = 2.0 / recon.len() as f64;
                let g: Vec<f64> = recon.iter().zip(x.iter()).map(|(r, t)| scale * (r - t)).collect();
                let (g_dec, g_latent) = self.decoder.backward(&dec, &g)?;
                let (g_enc, _) = self.encoder.backward(&enc, &g_latent)?;
                Ok((mse(recon, x), [g_enc, g_dec].concat()))
            })
            .collect::<Result<Vec<_>>>()?;
        let inv = 1.0 / batch.len() as f64;
        let mut grad = vec![0.0; per_item[0].1.len()];
        let mut loss = 0.0;
        for (l, g) in &per_item {
            loss += l * inv;
            for (acc, v) in grad.iter_mut().zip(g) {
                *acc += v * inv;
            }
        }
        Ok((loss, grad))
    }

    /// Adam on mean squared reconstruction error.
    ///
    /// Each log entry is the mean of the pre-update minibatch losses of that
    /// epoch, weighted by batch size.
    pub fn train(&mut self, images: &[Vec<f64>], opts: &AutoencoderTraining) -> Result<Vec<f64>> {
        if images.is_empty() {
            return Err(Error::InvalidArgument("cannot train on an empty dataset".into()));
        }
        if opts.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut params = self.params();
        let mut adam = AdamState::new(
            AdamConfig {
                lr: opts.lr,
                ..AdamConfig::default()
            },
            params.len(),
        );
        let mut order: Vec<usize> = (0..images.len()).collect();
        let mut log = Vec::with_capacity(opts.epochs);
        for epoch in 0..opts.epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for chunk in order.chunks(opts.batch_size) {
                let batch: Vec<&Vec<f64>> = chunk.iter().map(|&i| &images[i]).collect();
                let (loss, grad) = self.batch_loss_grad(&batch)?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!("autoencoder loss in epoch {epoch}")));
                }
                epoch_loss += loss * chunk.len() as f64;
                adam.update(&mut params, &grad)?;
                self.set_params(&params)?;
            }
            log.push(epoch_loss / images.len() as f64);
        }
        ensure_finite("autoencoder parameters", &params)?;
        Ok(log)
    }

    fn layers(&self) -> impl Iterator<Item = &DenseLayer> {
        self.encoder.layers.iter().chain(&self.decoder.layers)
    }

    /// QAE1: magic, u32 layer count, then per layer u32 rows, u32 cols,
    /// row-major f64 weights, f64 biases, u8 activation tag. Little-endian.
    /// The first half of the layers is the encoder.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = QAE_MAGIC.to_vec();
        let layers: Vec<_> = self.layers().collect();
        out.extend_from_slice(&(layers.len() as u32).to_le_bytes());
        for l in layers {
            out.extend_from_slice(&(l.outputs() as u32).to_le_bytes());
            out.extend_from_slice(&(l.inputs() as u32).to_le_bytes());
            for v in l.weights.as_slice().iter().chain(&l.bias) {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.push(l.activation.tag());
        }
        out
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut take = |n: usize, what: &str| -> Result<&[u8]> {
            if bytes.len() - pos < n {
                return Err(Error::format(path, pos, format!("truncated {what}")));
            }
            pos += n;
            Ok(&bytes[pos - n..pos])
        };
        if take(4, "magic")? != QAE_MAGIC {
            return Err(Error::format(path, 0, "bad magic, expected \"QAE1\""));
        }
        let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize;
        let count = u32_at(take(4, "layer count")?);
        if count == 0 || count % 2 != 0 {
            return Err(Error::format(path, 4, format!("layer count {count} is not a positive even number")));
        }
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let rows = u32_at(take(4, "row count")?);
            let cols = u32_at(take(4, "column count")?);
            let values: Vec<f64> = take((rows * cols + rows) * 8, "layer values")?
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect();
            let tag = take(1, "activation tag")?[0];
            let activation = Activation::from_tag(tag)
                .ok_or_else(|| Error::format(path, 0, format!("unknown activation tag {tag}")))?;
            let weights = Matrix::from_row_major(rows, cols, values[..rows * cols].to_vec())?;
            layers.push(DenseLayer::new(weights, values[rows * cols..].to_vec(), activation)?);
        }
        if pos != bytes.len() {
            return Err(Error::format(path, pos, "trailing bytes"));
        }
        let decoder = layers.split_off(count / 2);
        Ok(Self {
            encoder: Mlp::new(layers)?,
            decoder: Mlp::new(decoder)?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(path, &bytes)
    }
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}
