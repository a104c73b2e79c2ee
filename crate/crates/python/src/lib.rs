//! Python bindings for `qldm_core`.
//!
//! Vectors cross the boundary as lists of floats; batches as lists of lists.

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyOSError, PyValueError};
use pyo3::prelude::*;

use qldm_core::circuits::{self, AnsatzKind, CircuitSpec, Entanglement};
use qldm_core::data::{self, LatentDataset};
use qldm_core::denoiser::{self, DenoiserConfig, DenoiserParams, Variant};
use qldm_core::diffusion::DiffusionSchedule;
use qldm_core::metrics;
use qldm_core::statevector::Basis;
use qldm_core::training::{self, Checkpoint, TrainConfig};
use qldm_core::{Error, Matrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

create_exception!(qldm, QldmError, PyException);
create_exception!(qldm, IncompatibleCheckpoint, QldmError);

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    match e.category() {
        "contract" => PyValueError::new_err(msg),
        "io" => PyOSError::new_err(msg),
        "incompatible" => IncompatibleCheckpoint::new_err(msg),
        _ => QldmError::new_err(msg),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for qldm_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn parse_variant(name: &str) -> PyResult<Variant> {
    name.parse::<Variant>().map_err(to_py)
}

fn parse_ansatz(name: &str) -> PyResult<AnsatzKind> {
    match name.to_ascii_lowercase().as_str() {
        "basic" => Ok(AnsatzKind::Basic),
        "expressive" => Ok(AnsatzKind::Expressive),
        _ => Err(PyValueError::new_err(format!("unknown ansatz {name:?}; expected basic or expressive"))),
    }
}

fn parse_basis(name: &str) -> PyResult<Basis> {
    match name {
        "Z" | "z" => Ok(Basis::Z),
        "X" | "x" => Ok(Basis::X),
        _ => Err(PyValueError::new_err(format!("unknown basis {name:?}; expected Z or X"))),
    }
}

fn parse_entanglement(name: &str) -> PyResult<Entanglement> {
    match name.to_ascii_lowercase().as_str() {
        "linear" => Ok(Entanglement::Linear),
        "circular" => Ok(Entanglement::Circular),
        _ => Err(PyValueError::new_err(format!("unknown entanglement {name:?}; expected linear or circular"))),
    }
}

/// Variant names accepted by `Denoiser` and `Trainer`.
#[pyfunction]
fn variants() -> Vec<&'static str> {
    Variant::ALL.iter().map(|v| v.name()).collect()
}

#[pyfunction]
#[pyo3(signature = (variant, dim = denoiser::DEFAULT_LATENT_DIM))]
fn count_params(variant: &str, dim: usize) -> PyResult<usize> {
    let cfg = DenoiserConfig::new(parse_variant(variant)?, dim).py()?;
    Ok(cfg.count_params())
}

#[pyfunction]
fn time_embedding(t: usize, dim: usize) -> PyResult<Vec<f64>> {
    denoiser::time_embedding(t, dim).py()
}

#[pyfunction]
fn frechet_distance(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<f64> {
    metrics::frechet_distance(&a, &b).py()
}

/// Returns `(mean, std)` of the subset MMD² estimates.
#[pyfunction]
#[pyo3(signature = (a, b, subset_size = metrics::DEFAULT_KID_SUBSET_SIZE, n_subsets = metrics::DEFAULT_KID_SUBSETS, seed = 0))]
fn kid(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, subset_size: usize, n_subsets: usize, seed: u64) -> PyResult<(f64, f64)> {
    let r = metrics::kid(&a, &b, subset_size, n_subsets, seed).py()?;
    Ok((r.mean, r.std))
}

#[pyfunction]
fn subset_indices(n: usize, fraction: f64, seed: u64) -> PyResult<Vec<usize>> {
    data::subset_indices(n, fraction, seed).py()
}

/// Returns `(latents, labels)`; labels is None when the file has none.
#[pyfunction]
fn load_latents(path: &str) -> PyResult<(Vec<Vec<f64>>, Option<Vec<u8>>)> {
    let ds = data::load_latents(path).py()?;
    Ok((ds.latents, ds.labels))
}

#[pyfunction]
#[pyo3(signature = (path, latents, labels = None))]
fn save_latents(path: &str, latents: Vec<Vec<f64>>, labels: Option<Vec<u8>>) -> PyResult<()> {
    let ds = latent_dataset(latents, labels, "python")?;
    data::save_latents(path, &ds).py()
}

fn latent_dataset(latents: Vec<Vec<f64>>, labels: Option<Vec<u8>>, tag: &str) -> PyResult<LatentDataset> {
    let dim = latents
        .first()
        .map(Vec::len)
        .ok_or_else(|| PyValueError::new_err("need at least one latent"))?;
    LatentDataset::new(latents, dim, labels, tag).py()
}

#[pyclass(frozen)]
struct Circuit {
    spec: CircuitSpec,
}

#[pymethods]
impl Circuit {
    #[new]
    #[pyo3(signature = (n_qubits, ansatz = "expressive", depth = 1, basis = "Z", entanglement = "circular"))]
    fn new(n_qubits: usize, ansatz: &str, depth: usize, basis: &str, entanglement: &str) -> PyResult<Self> {
        let spec = CircuitSpec::new(
            n_qubits,
            parse_ansatz(ansatz)?,
            depth,
            parse_basis(basis)?,
            parse_entanglement(entanglement)?,
        )
        .py()?;
        Ok(Self { spec })
    }

    #[getter]
    fn n_qubits(&self) -> usize {
        self.spec.n_qubits
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.spec.param_count()
    }

    #[getter]
    fn depth(&self) -> usize {
        self.spec.report_depth()
    }

    fn evaluate(&self, params: Vec<f64>, input: Vec<f64>) -> PyResult<Vec<f64>> {
        circuits::evaluate(&self.spec, &params, &input).py()
    }

    /// Jacobian with one row per output qubit and one column per parameter.
    fn param_shift_grad(&self, params: Vec<f64>, input: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(&circuits::param_shift_grad(&self.spec, &params, &input).py()?))
    }

    fn input_shift_grad(&self, params: Vec<f64>, input: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(&circuits::input_shift_grad(&self.spec, &params, &input).py()?))
    }

    fn __repr__(&self) -> String {
        let s = &self.spec;
        format!(
            "Circuit(n_qubits={}, ansatz={:?}, depth={}, basis={:?}, entanglement={:?})",
            s.n_qubits, s.ansatz, s.depth, s.basis, s.entanglement
        )
    }
}

#[pyclass(frozen)]
struct Schedule {
    inner: DiffusionSchedule,
}

#[pymethods]
impl Schedule {
    /// Linear betas; endpoints default to the 1000-step reference rescaled by `1000 / steps`.
    #[new]
    #[pyo3(signature = (steps, beta_start = None, beta_end = None))]
    fn new(steps: usize, beta_start: Option<f64>, beta_end: Option<f64>) -> PyResult<Self> {
        let inner = match (beta_start, beta_end) {
            (None, None) => DiffusionSchedule::scaled_linear(steps),
            (Some(a), Some(b)) => DiffusionSchedule::linear(steps, a, b),
            _ => return Err(PyValueError::new_err("give both beta_start and beta_end or neither")),
        }
        .py()?;
        Ok(Self { inner })
    }

    #[getter]
    fn steps(&self) -> usize {
        self.inner.steps()
    }

    #[getter]
    fn betas(&self) -> Vec<f64> {
        self.inner.beta().to_vec()
    }

    #[getter]
    fn alpha_bar(&self) -> Vec<f64> {
        self.inner.alpha_bar().to_vec()
    }

    fn diffuse_to(&self, x0: Vec<f64>, t: usize, eps: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.diffuse_to(&x0, t, &eps).py()
    }

    fn forward_step(&self, x_prev: Vec<f64>, t: usize, eps: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.forward_step(&x_prev, t, &eps).py()
    }

    fn posterior_mean(&self, x_t: Vec<f64>, t: usize, eps_pred: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.posterior_mean(&x_t, t, &eps_pred).py()
    }

    fn p2_weight(&self, t: usize) -> PyResult<f64> {
        self.inner.p2_weight(t).py()
    }
}

#[pyclass]
struct Denoiser {
    config: DenoiserConfig,
    params: DenoiserParams,
}

#[pymethods]
impl Denoiser {
    /// Parameters start at zero unless `seed` is given.
    #[new]
    #[pyo3(signature = (variant, dim = denoiser::DEFAULT_LATENT_DIM, seed = None))]
    fn new(variant: &str, dim: usize, seed: Option<u64>) -> PyResult<Self> {
        let config = DenoiserConfig::new(parse_variant(variant)?, dim).py()?;
        let params = match seed {
            Some(s) => DenoiserParams::random(&config, &mut ChaCha8Rng::seed_from_u64(s)),
            None => DenoiserParams::zeros(&config),
        };
        Ok(Self { config, params })
    }

    #[getter]
    fn variant(&self) -> &'static str {
        self.config.variant.name()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.config.dim
    }

    #[getter]
    fn params(&self) -> Vec<f64> {
        self.params.flatten()
    }

    #[setter]
    fn set_params(&mut self, flat: Vec<f64>) -> PyResult<()> {
        self.params = DenoiserParams::from_flat(&self.config, &flat).py()?;
        Ok(())
    }

    fn count_params(&self) -> usize {
        self.config.count_params()
    }

    fn predict(&self, x_t: Vec<f64>, t: usize) -> PyResult<Vec<f64>> {
        denoiser::predict_noise(&self.config, &self.params, &x_t, t).py()
    }
}

/// Unset options keep the library defaults.
#[allow(clippy::too_many_arguments)]
fn train_config(
    variant: &str,
    dim: usize,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f64>,
    steps: Option<usize>,
    seed: u64,
    dataset_fraction: f64,
) -> PyResult<TrainConfig> {
    let mut cfg = TrainConfig::new(parse_variant(variant)?, dim);
    cfg.epochs = epochs.unwrap_or(cfg.epochs);
    cfg.batch_size = batch_size.unwrap_or(cfg.batch_size);
    cfg.lr = lr.unwrap_or(cfg.lr);
    cfg.steps = steps.unwrap_or(cfg.steps);
    cfg.seed = seed;
    cfg.dataset_fraction = dataset_fraction;
    cfg.validate().py()?;
    Ok(cfg)
}

#[pyclass]
struct Trainer {
    inner: training::Trainer,
}

#[pymethods]
impl Trainer {
    #[new]
    #[pyo3(signature = (
        latents, variant, dim = denoiser::DEFAULT_LATENT_DIM, *,
        epochs = None, batch_size = None, lr = None, steps = None, seed = 0, dataset_fraction = 1.0,
        resume_from = None,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        latents: Vec<Vec<f64>>,
        variant: &str,
        dim: usize,
        epochs: Option<usize>,
        batch_size: Option<usize>,
        lr: Option<f64>,
        steps: Option<usize>,
        seed: u64,
        dataset_fraction: f64,
        resume_from: Option<&str>,
    ) -> PyResult<Self> {
        let cfg = train_config(variant, dim, epochs, batch_size, lr, steps, seed, dataset_fraction)?;
        let ds = latent_dataset(latents, None, "python")?;
        let inner = match resume_from {
            Some(path) => training::Trainer::resume(path, cfg, &ds),
            None => training::Trainer::new(cfg, &ds),
        }
        .py()?;
        Ok(Self { inner })
    }

    #[getter]
    fn epoch(&self) -> usize {
        self.inner.epoch()
    }

    #[getter]
    fn iteration(&self) -> usize {
        self.inner.iteration()
    }

    #[getter]
    fn finished(&self) -> bool {
        self.inner.is_finished()
    }

    #[getter]
    fn training_rows(&self) -> usize {
        self.inner.training_rows()
    }

    /// One optimiser step; returns the batch loss.
    fn step(&mut self) -> PyResult<f64> {
        self.inner.step().py()
    }

    /// Trains to the configured number of epochs with the GIL released.
    fn run(&mut self, py: Python<'_>) -> PyResult<()> {
        let inner = &mut self.inner;
        py.detach(|| inner.run(|_| Ok(()))).py()
    }

    fn losses(&self) -> Vec<f64> {
        self.inner.log().losses()
    }

    fn smoothed_losses(&self) -> Vec<f64> {
        self.inner.log().smoothed_losses()
    }

    fn params(&self) -> Vec<f64> {
        self.inner.live_params().flatten()
    }

    fn ema_params(&self) -> Vec<f64> {
        self.inner.ema_params().flatten()
    }

    fn save_checkpoint(&self, path: &str) -> PyResult<()> {
        self.inner.save_checkpoint(path).py()
    }

    /// `n` latents from the EMA parameters.
    #[pyo3(signature = (n, seed = 0))]
    fn sample(&self, py: Python<'_>, n: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        let model = self.inner.sampling_model();
        py.detach(|| model.sample(n, seed)).py()
    }
}

/// `n` latents from the EMA parameters stored in a checkpoint.
#[pyfunction]
#[pyo3(signature = (path, n, seed = 0))]
fn sample_checkpoint(py: Python<'_>, path: &str, n: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let model = Checkpoint::load(path).and_then(|c| c.model()).py()?;
    py.detach(|| model.sample(n, seed)).py()
}

#[pymodule]
fn qldm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("QldmError", m.py().get_type::<QldmError>())?;
    m.add("IncompatibleCheckpoint", m.py().get_type::<IncompatibleCheckpoint>())?;
    m.add_class::<Circuit>()?;
    m.add_class::<Schedule>()?;
    m.add_class::<Denoiser>()?;
    m.add_class::<Trainer>()?;
    m.add_function(wrap_pyfunction!(variants, m)?)?;
    m.add_function(wrap_pyfunction!(count_params, m)?)?;
    m.add_function(wrap_pyfunction!(time_embedding, m)?)?;
    m.add_function(wrap_pyfunction!(frechet_distance, m)?)?;
    m.add_function(wrap_pyfunction!(kid, m)?)?;
    m.add_function(wrap_pyfunction!(subset_indices, m)?)?;
    m.add_function(wrap_pyfunction!(load_latents, m)?)?;
    m.add_function(wrap_pyfunction!(save_latents, m)?)?;
    m.add_function(wrap_pyfunction!(sample_checkpoint, m)?)?;
    Ok(())
}
