//! Noise predictor `ε_θ(x_t, t) = x_t + B3(B1(x_t) + B2(emb(t)))`.
//!
//! In the quantum variants each block is a variational circuit on `dim`
//! qubits; in the classical baseline each block is an affine `dim → dim`
//! layer. The topology is identical so the two differ only in the blocks.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::circuits::{self, AnsatzKind, CircuitSpec, Entanglement};
use crate::error::{check_len, Error, Result};
use crate::nn::{Activation, DenseLayer};
use crate::statevector::Basis;

pub const DEFAULT_LATENT_DIM: usize = 10;
pub const BASIC_DEPTH: usize = 4;

/// Serialised by its short name; parsing also accepts the Rust identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "&'static str", try_from = "String")]
pub enum Variant {
    Classical,
    BasicQ,
    Expr3Z,
    Expr3X,
    Expr4Z,
    Expr4X,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Classical,
        Variant::BasicQ,
        Variant::Expr3Z,
        Variant::Expr3X,
        Variant::Expr4Z,
        Variant::Expr4X,
    ];

    /// Short experiment name, e.g. `4zQ`.
    pub fn name(self) -> &'static str {
        match self {
            Variant::Classical => "Classical",
            Variant::BasicQ => "BasicQ",
            Variant::Expr3Z => "3zQ",
            Variant::Expr3X => "3xQ",
            Variant::Expr4Z => "4zQ",
            Variant::Expr4X => "4xQ",
        }
    }

    pub fn is_quantum(self) -> bool {
        self != Variant::Classical
    }

    /// (ansatz, depth, basis) for quantum variants.
    pub fn circuit_shape(self) -> Option<(AnsatzKind, usize, Basis)> {
        match self {
            Variant::Classical => None,
            Variant::BasicQ => Some((AnsatzKind::Basic, BASIC_DEPTH, Basis::Z)),
            Variant::Expr3Z => Some((AnsatzKind::Expressive, 3, Basis::Z)),
            Variant::Expr3X => Some((AnsatzKind::Expressive, 3, Basis::X)),
            Variant::Expr4Z => Some((AnsatzKind::Expressive, 4, Basis::Z)),
            Variant::Expr4X => Some((AnsatzKind::Expressive, 4, Basis::X)),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl From<Variant> for &'static str {
    fn from(v: Variant) -> Self {
        v.name()
    }
}

impl TryFrom<String> for Variant {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        Variant::ALL
            .into_iter()
            .find(|v| v.name().to_ascii_lowercase() == key || format!("{v:?}").to_ascii_lowercase() == key)
            .ok_or_else(|| {
                let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::InvalidArgument(format!("unknown variant {s:?}; valid names: {}", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub variant: Variant,
    /// Latent dimension, equal to the qubit count of each circuit.
    pub dim: usize,
    #[serde(default)]
    pub entanglement: Entanglement,
}

impl DenoiserConfig {
    pub fn new(variant: Variant, dim: usize) -> Result<Self> {
        let cfg = Self {
            variant,
            dim,
            entanglement: Entanglement::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "latent dimension must be a positive even number, got {}",
                self.dim
            )));
        }
        if let Some(spec) = self.circuit_spec() {
            CircuitSpec::new(spec.n_qubits, spec.ansatz, spec.depth, spec.basis, spec.entanglement)?;
        }
        Ok(())
    }

    /// Circuit shared by all three blocks of a quantum variant.
    pub fn circuit_spec(&self) -> Option<CircuitSpec> {
        self.variant.circuit_shape().map(|(ansatz, depth, basis)| CircuitSpec {
            n_qubits: self.dim,
            ansatz,
            depth,
            basis,
            entanglement: self.entanglement,
        })
    }

    pub fn block_param_count(&self) -> usize {
        match self.circuit_spec() {
            Some(spec) => spec.param_count(),
            None => self.dim * self.dim + self.dim,
        }
    }

    pub fn count_params(&self) -> usize {
        3 * self.block_param_count()
    }
}

/// Sinusoidal position encoding of the raw step index.
///
/// Slot `i < dim/2` holds `sin(t / 10000^(2i/dim))`, slot `dim/2 + i` the
/// matching cosine.
pub fn time_embedding(t: usize, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::InvalidArgument(format!("embedding dimension must be even, got {dim}")));
    }
    let half = dim / 2;
    let t = t as f64;
    let freqs = (0..half).map(|i| t / 10000f64.powf(2.0 * i as f64 / dim as f64));
    let (sin, cos): (Vec<f64>, Vec<f64>) = freqs.map(|a| (a.sin(), a.cos())).unzip();
    Ok([sin, cos].concat())
}

/// Trainable parameters of the three blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    pub blocks: [Vec<f64>; 3],
}

impl DenoiserParams {
    pub fn zeros(config: &DenoiserConfig) -> Self {
        let n = config.block_param_count();
        Self {
            blocks: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
        }
    }

    /// Random initialisation: Glorot-uniform weights with zero bias for the
    /// classical blocks, angles uniform in `[−π, π)` for circuits.
    pub fn random<R: Rng + ?Sized>(config: &DenoiserConfig, rng: &mut R) -> Self {
        let d = config.dim;
        let mut block = || match config.variant {
            Variant::Classical => DenseLayer::glorot(d, d, Activation::Identity, rng).params(),
            _ => (0..config.block_param_count())
                .map(|_| rng.random_range(-PI..PI))
                .collect(),
        };
        Self {
            blocks: [block(), block(), block()],
        }
    }

    pub fn from_flat(config: &DenoiserConfig, flat: &[f64]) -> Result<Self> {
        check_len("denoiser parameters", config.count_params(), flat.len())?;
        let n = config.block_param_count();
        Ok(Self {
            blocks: [
                flat[..n].to_vec(),
                flat[n..2 * n].to_vec(),
                flat[2 * n..].to_vec(),
            ],
        })
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.blocks.concat()
    }

    pub fn check(&self, config: &DenoiserConfig) -> Result<()> {
        self.blocks
            .iter()
            .try_for_each(|b| check_len("denoiser block parameters", config.block_param_count(), b.len()))
    }
}

fn affine(dim: usize, params: &[f64]) -> Result<DenseLayer> {
    let mut layer = DenseLayer::zeros(dim, dim, Activation::Identity);
    layer.set_params(params)?;
    Ok(layer)
}

fn check_inputs(config: &DenoiserConfig, params: &DenoiserParams, x_t: &[f64]) -> Result<()> {
    check_len("latent", config.dim, x_t.len())?;
    params.check(config)
}

/// `ε_θ(x_t, t)`.
pub fn predict_noise(config: &DenoiserConfig, params: &DenoiserParams, x_t: &[f64], t: usize) -> Result<Vec<f64>> {
    check_inputs(config, params, x_t)?;
    let emb = time_embedding(t, config.dim)?;
    let [p1, p2, p3] = &params.blocks;
    let out = match config.circuit_spec() {
        Some(spec) => {
            let h = add(&circuits::evaluate(&spec, p1, x_t)?, &circuits::evaluate(&spec, p2, &emb)?);
            circuits::evaluate(&spec, p3, &h)?
        }
        None => {
            let d = config.dim;
            let h = add(&affine(d, p1)?.forward(x_t)?, &affine(d, p2)?.forward(&emb)?);
            affine(d, p3)?.forward(&h)?
        }
    };
    Ok(add(x_t, &out))
}

/// Gradient of `upstream · ε_θ(x_t, t)` with respect to every block.
///
/// The skip path `x_t` carries no parameters, so it contributes nothing here.
pub fn grad_params(
    config: &DenoiserConfig,
    params: &DenoiserParams,
    x_t: &[f64],
    t: usize,
    upstream: &[f64],
) -> Result<DenoiserParams> {
    check_inputs(config, params, x_t)?;
    check_len("upstream gradient", config.dim, upstream.len())?;
    let emb = time_embedding(t, config.dim)?;
    let [p1, p2, p3] = &params.blocks;
    let blocks = match config.circuit_spec() {
        Some(spec) => {
            let h = add(&circuits::evaluate(&spec, p1, x_t)?, &circuits::evaluate(&spec, p2, &emb)?);
            let g3 = circuits::param_shift_grad(&spec, p3, &h)?.matvec_transposed(upstream)?;
            let dh = circuits::input_shift_grad(&spec, p3, &h)?.matvec_transposed(upstream)?;
            let g1 = circuits::param_shift_grad(&spec, p1, x_t)?.matvec_transposed(&dh)?;
            let g2 = circuits::param_shift_grad(&spec, p2, &emb)?.matvec_transposed(&dh)?;
            [g1, g2, g3]
        }
        None => {
            let d = config.dim;
            let (b1, b2, b3) = (affine(d, p1)?, affine(d, p2)?, affine(d, p3)?);
            let h = add(&b1.forward(x_t)?, &b2.forward(&emb)?);
            let g3 = b3.backward(&h, upstream)?;
            let g1 = b1.backward(x_t, &g3.input)?;
            let g2 = b2.backward(&emb, &g3.input)?;
            [g1.flat_params(), g2.flat_params(), g3.flat_params()]
        }
    };
    Ok(DenoiserParams { blocks })
}

/// Number of trainable parameters of `config`.
pub fn count_params(config: &DenoiserConfig) -> usize {
    config.count_params()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn published_parameter_counts() {
        let count = |v| count_params(&DenoiserConfig::new(v, 10).unwrap());
        assert_eq!(count(Variant::Classical), 330);
        assert_eq!(count(Variant::BasicQ), 120);
        assert_eq!(count(Variant::Expr3Z), 270);
        assert_eq!(count(Variant::Expr3X), 270);
        assert_eq!(count(Variant::Expr4Z), 360);
        assert_eq!(count(Variant::Expr4X), 360);
    }

    #[test]
    fn counts_scale_with_dimension() {
        for d in [2usize, 4, 8, 12] {
            let c = |v| count_params(&DenoiserConfig::new(v, d).unwrap());
            assert_eq!(c(Variant::Classical), 3 * (d * d + d));
            assert_eq!(c(Variant::BasicQ), 3 * d * 4);
            assert_eq!(c(Variant::Expr3Z), 9 * d * 3);
            assert_eq!(c(Variant::Expr4X), 9 * d * 4);
        }
    }

    #[test]
    fn variant_names() {
        assert_eq!("4zQ".parse::<Variant>().unwrap(), Variant::Expr4Z);
        assert_eq!("classical".parse::<Variant>().unwrap(), Variant::Classical);
        assert_eq!("Expr3X".parse::<Variant>().unwrap(), Variant::Expr3X);
        let err = "5zQ".parse::<Variant>().unwrap_err().to_string();
        assert!(err.contains("BasicQ") && err.contains("4xQ"), "{err}");
        let shape = Variant::Expr4Z.circuit_shape().unwrap();
        assert_eq!(shape, (AnsatzKind::Expressive, 4, Basis::Z));
    }

    #[test]
    fn embedding_values() {
        let e = time_embedding(0, 10).unwrap();
        assert_eq!(&e[..5], &[0.0; 5]);
        assert_eq!(&e[5..], &[1.0; 5]);
        let e = time_embedding(1, 10).unwrap();
        assert_abs_diff_eq!(e[0], 0.841_470_984_807_896_5, epsilon = 1e-15);
        assert!(time_embedding(1, 7).is_err());
        for t in [1, 17, 999] {
            assert!(time_embedding(t, 12).unwrap().iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn zero_classical_is_skip_identity() {
        let cfg = DenoiserConfig::new(Variant::Classical, 4).unwrap();
        let x = [0.3, -0.1, 0.7, 2.0];
        assert_eq!(predict_noise(&cfg, &DenoiserParams::zeros(&cfg), &x, 5).unwrap(), x.to_vec());
    }

    #[test]
    fn quantum_output_stays_near_input() {
        let cfg = DenoiserConfig::new(Variant::Expr3X, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = DenoiserParams::random(&cfg, &mut rng);
        let x = [1.5, -2.0, 0.1, 3.0];
        let eps = predict_noise(&cfg, &p, &x, 9).unwrap();
        assert!(eps.iter().zip(&x).all(|(e, x)| (e - x).abs() <= 1.0 + 1e-12));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for v in [Variant::Classical, Variant::BasicQ] {
            let cfg = DenoiserConfig::new(v, 2).unwrap();
            let p = DenoiserParams::random(&cfg, &mut rng);
            let g = grad_params(&cfg, &p, &[0.2, 0.4], 3, &[0.0, 0.0]).unwrap();
            assert!(g.flatten().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn flat_round_trip_and_shape_errors() {
        let cfg = DenoiserConfig::new(Variant::Expr3Z, 4).unwrap();
        let p = DenoiserParams::random(&cfg, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(DenoiserParams::from_flat(&cfg, &p.flatten()).unwrap(), p);
        assert!(DenoiserParams::from_flat(&cfg, &[0.0; 3]).is_err());
        assert!(predict_noise(&cfg, &p, &[0.0; 3], 1).is_err());
        assert!(DenoiserConfig::new(Variant::Classical, 3).is_err());
    }
}
