//! `qldm` command-line front end.
//!
//! Every command reads an optional JSON experiment config, applies flag
//! overrides, and writes a `<output>.meta.json` sidecar next to each artifact
//! carrying the hash of the effective config.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::autoencoder::{Autoencoder, AutoencoderTraining, DEFAULT_HIDDEN};
use crate::circuits::Entanglement;
use crate::data::{self, LatentDataset};
use crate::denoiser::{Variant, DEFAULT_LATENT_DIM};
use crate::error::Error;
use crate::metrics::{self, DEFAULT_KID_SUBSETS, DEFAULT_KID_SUBSET_SIZE};
use crate::plot::{Chart, Series};
use crate::training::{hex_digest, to_db, Checkpoint, TrainConfig, Trainer};

pub const SCHEMA_VERSION: u32 = 1;
pub const THREADS_ENV: &str = "QLDM_THREADS";

/// CLI failure: a library error or a problem with the configuration itself.
#[derive(Debug)]
pub enum CliError {
    Core(Error),
    Config(String),
}

impl CliError {
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.category(),
            CliError::Config(_) => "config",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "config" => 2,
            "contract" => 3,
            "io" => 4,
            "format" => 5,
            "incompatible" => 6,
            _ => 7,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msg = match self {
            CliError::Core(e) => e.to_string(),
            CliError::Config(m) => m.clone(),
        };
        write!(f, "error[{}]: {}", self.category(), msg.replace('\n', " "))
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}
fn default_dim() -> usize {
    DEFAULT_LATENT_DIM
}
fn default_variants() -> Vec<Variant> {
    Variant::ALL.to_vec()
}
fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default)]
    pub images: Option<PathBuf>,
    #[serde(default)]
    pub labels: Option<PathBuf>,
    /// Fraction of the image set encoded by `encode`.
    #[serde(default = "one")]
    pub fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            images: None,
            labels: None,
            fraction: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AutoencoderSection {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for AutoencoderSection {
    fn default() -> Self {
        Self {
            hidden: DEFAULT_HIDDEN,
            epochs: 15,
            batch_size: 32,
            lr: 5e-4,
            seed: 0,
        }
    }
}

/// Diffusion training settings shared by every variant of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub entanglement: Entanglement,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    #[serde(rename = "T")]
    pub steps: usize,
    pub beta_start: Option<f64>,
    pub beta_end: Option<f64>,
    pub dataset_fraction: f64,
    pub seed: u64,
    pub checkpoint_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let c = TrainConfig::new(Variant::Classical, DEFAULT_LATENT_DIM);
        Self {
            entanglement: c.entanglement,
            epochs: c.epochs,
            batch_size: c.batch_size,
            lr: c.lr,
            beta1: c.beta1,
            beta2: c.beta2,
            adam_eps: c.adam_eps,
            steps: c.steps,
            beta_start: c.beta_start,
            beta_end: c.beta_end,
            dataset_fraction: c.dataset_fraction,
            seed: c.seed,
            checkpoint_every: c.checkpoint_every,
        }
    }
}

impl TrainSection {
    pub fn for_variant(&self, variant: Variant, dim: usize) -> TrainConfig {
        TrainConfig {
            variant,
            dim,
            entanglement: self.entanglement,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            adam_eps: self.adam_eps,
            steps: self.steps,
            beta_start: self.beta_start,
            beta_end: self.beta_end,
            dataset_fraction: self.dataset_fraction,
            seed: self.seed,
            checkpoint_every: self.checkpoint_every,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleSection {
    pub n: usize,
    pub seed: u64,
}

impl Default for SampleSection {
    fn default() -> Self {
        Self { n: 500, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSection {
    pub kid_subset_size: usize,
    pub kid_subsets: usize,
    pub seed: u64,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self {
            kid_subset_size: DEFAULT_KID_SUBSET_SIZE,
            kid_subsets: DEFAULT_KID_SUBSETS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Latent dimension, which is also the qubit count of every circuit.
    #[serde(default = "default_dim")]
    pub latent_dim: usize,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub autoencoder: AutoencoderSection,
    #[serde(default = "default_variants")]
    pub variants: Vec<Variant>,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub sample: SampleSection,
    #[serde(default)]
    pub evaluate: EvaluateSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            output_dir: default_output_dir(),
            latent_dim: DEFAULT_LATENT_DIM,
            data: DataSection::default(),
            autoencoder: AutoencoderSection::default(),
            variants: default_variants(),
            train: TrainSection::default(),
            sample: SampleSection::default(),
            evaluate: EvaluateSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Core(Error::io(path, e)))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.variants.is_empty() {
            return Err(CliError::Config("variants must not be empty".into()));
        }
        for v in &self.variants {
            self.train.for_variant(*v, self.latent_dim).validate()?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serialises")
    }

    pub fn hash(&self) -> String {
        hex_digest(self.to_json().as_bytes())
    }

    pub fn variant_dir(&self, v: Variant) -> PathBuf {
        self.output_dir.join(v.name())
    }
}

#[derive(Debug, Parser)]
#[command(name = "qldm", version, about = "Latent diffusion with simulated variational-circuit denoisers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Config file and per-field overrides shared by all pipeline commands.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// JSON experiment config; defaults are used when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Variant(s) to process, e.g. `4zQ`; repeatable.
    #[arg(long)]
    pub variant: Vec<Variant>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Qubit count, equal to the latent dimension.
    #[arg(long)]
    pub qubits: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Number of diffusion steps.
    #[arg(long = "T")]
    pub steps: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the dense autoencoder on an IDX image file.
    TrainAutoencoder {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        images: Option<PathBuf>,
    },
    /// Encode images to a QLAT latent file.
    Encode {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        images: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        autoencoder: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train diffusion denoisers on a latent file.
    Train {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        latents: Option<PathBuf>,
        /// Continue from a QDM1 checkpoint (single variant only).
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Draw latents from a trained checkpoint using its EMA parameters.
    Sample {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Decode samples with this autoencoder and write PGM images.
        #[arg(long)]
        autoencoder: Option<PathBuf>,
        #[arg(long)]
        pgm_dir: Option<PathBuf>,
    },
    /// Append Fréchet and KID rows comparing two latent files.
    Evaluate {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// Epoch recorded in the CSV row; defaults to the configured epochs.
        #[arg(long)]
        epoch: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        kid_subset_size: Option<usize>,
        #[arg(long)]
        kid_subsets: Option<usize>,
    },
    /// Render CSV logs as an SVG line chart.
    Plot {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        /// Column for the y axis; defaults to `loss` or `frechet`.
        #[arg(long)]
        column: Option<String>,
        /// Column for the x axis; defaults to the first column.
        #[arg(long)]
        x: Option<String>,
        /// Plot `10·log10(y)`.
        #[arg(long)]
        db: bool,
        #[arg(long)]
        title: Option<String>,
    },
}

/// Resolves the config file and flag overrides into the effective config.
pub fn effective_config(o: &Overrides, command: &str) -> CliResult<ExperimentConfig> {
    let mut cfg = match &o.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &o.out {
        cfg.output_dir = out.clone();
    }
    if !o.variant.is_empty() {
        cfg.variants = o.variant.clone();
    }
    if let Some(q) = o.qubits {
        cfg.latent_dim = q;
    }
    if let Some(lr) = o.lr {
        cfg.train.lr = lr;
    }
    if let Some(t) = o.steps {
        cfg.train.steps = t;
    }
    match command {
        "train-autoencoder" => {
            if let Some(e) = o.epochs {
                cfg.autoencoder.epochs = e;
            }
            if let Some(s) = o.seed {
                cfg.autoencoder.seed = s;
            }
            if let Some(lr) = o.lr {
                cfg.autoencoder.lr = lr;
            }
        }
        "encode" => {
            if let Some(f) = o.fraction {
                cfg.data.fraction = f;
            }
            if let Some(s) = o.seed {
                cfg.data.seed = s;
            }
        }
        "sample" => {
            if let Some(s) = o.seed {
                cfg.sample.seed = s;
            }
        }
        "evaluate" => {
            if let Some(s) = o.seed {
                cfg.evaluate.seed = s;
            }
        }
        _ => {
            if let Some(e) = o.epochs {
                cfg.train.epochs = e;
            }
            if let Some(f) = o.fraction {
                cfg.train.dataset_fraction = f;
            }
            if let Some(s) = o.seed {
                cfg.train.seed = s;
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn io<T>(path: &Path, r: std::io::Result<T>) -> CliResult<T> {
    r.map_err(|e| CliError::Core(Error::io(path, e)))
}

fn ensure_parent(path: &Path) -> CliResult<()> {
    match path.parent().filter(|p| !p.as_os_str().is_empty()) {
        Some(dir) => io(dir, fs::create_dir_all(dir)),
        None => Ok(()),
    }
}

/// Path of the sidecar carrying the config hash of `artifact`.
pub fn sidecar_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    artifact.with_file_name(name)
}

fn write_artifact(path: &Path, bytes: &[u8], cfg: &ExperimentConfig, command: &str) -> CliResult<()> {
    ensure_parent(path)?;
    io(path, fs::write(path, bytes))?;
    write_sidecar(path, cfg, command)
}

fn write_sidecar(path: &Path, cfg: &ExperimentConfig, command: &str) -> CliResult<()> {
    let meta = serde_json::json!({
        "command": command,
        "config_hash": cfg.hash(),
        "tool_version": env!("CARGO_PKG_VERSION"),
    });
    let side = sidecar_path(path);
    io(&side, fs::write(&side, format!("{meta}\n")))
}

fn required(path: Option<PathBuf>, what: &str) -> CliResult<PathBuf> {
    path.ok_or_else(|| CliError::Config(format!("no {what} given (set it in the config or pass --{what})")))
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::TrainAutoencoder { overrides, images } => {
            let cfg = effective_config(&overrides, "train-autoencoder")?;
            let images = required(images.or(cfg.data.images.clone()), "images")?;
            let ds = data::load_image_dataset(&images, None)?;
            let a = &cfg.autoencoder;
            let mut ae = Autoencoder::new(cfg.latent_dim, a.hidden, a.seed)?;
            let log = ae.train(
                &ds.images,
                &AutoencoderTraining {
                    epochs: a.epochs,
                    batch_size: a.batch_size,
                    lr: a.lr,
                    seed: a.seed,
                },
            )?;
            let mut csv = String::from("epoch,mse\n");
            for (i, l) in log.iter().enumerate() {
                csv.push_str(&format!("{},{}\n", i + 1, l));
            }
            write_artifact(&cfg.output_dir.join("autoencoder.qae"), &ae.to_bytes(), &cfg, "train-autoencoder")?;
            write_artifact(&cfg.output_dir.join("autoencoder_mse.csv"), csv.as_bytes(), &cfg, "train-autoencoder")?;
            println!(
                "autoencoder: {} images, final epoch mse {}",
                ds.len(),
                log.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::Encode {
            overrides,
            images,
            labels,
            autoencoder,
            output,
        } => {
            let cfg = effective_config(&overrides, "encode")?;
            let images = required(images.or(cfg.data.images.clone()), "images")?;
            let labels = labels.or(cfg.data.labels.clone());
            let ae_path = autoencoder.unwrap_or_else(|| cfg.output_dir.join("autoencoder.qae"));
            let ae = Autoencoder::load(&ae_path)?;
            let ds = data::load_image_dataset(&images, labels.as_deref())?
                .subset_fraction(cfg.data.fraction, cfg.data.seed)?;
            let latents = ds
                .images
                .iter()
                .map(|x| ae.encode(x))
                .collect::<crate::Result<Vec<_>>>()?;
            let out = output.unwrap_or_else(|| cfg.output_dir.join("latents.qlat"));
            let tag = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let lat = LatentDataset::new(latents, ae.latent_dim(), ds.labels, tag)?;
            write_artifact(&out, &data::encode_latents(&lat), &cfg, "encode")?;
            println!("encoded {} latents of dimension {} to {}", lat.len(), lat.dim, out.display());
        }
        Command::Train {
            overrides,
            latents,
            resume,
        } => {
            let cfg = effective_config(&overrides, "train")?;
            let lat_path = latents.unwrap_or_else(|| cfg.output_dir.join("latents.qlat"));
            let lat = data::load_latents(&lat_path)?;
            if resume.is_some() && cfg.variants.len() != 1 {
                return Err(CliError::Config("--resume needs exactly one --variant".into()));
            }
            for &v in &cfg.variants {
                let tc = cfg.train.for_variant(v, cfg.latent_dim);
                let dir = cfg.variant_dir(v);
                io(&dir, fs::create_dir_all(&dir))?;
                let mut trainer = match &resume {
                    Some(p) => Trainer::resume(p, tc, &lat)?,
                    None => Trainer::new(tc, &lat)?,
                };
                let every = trainer.config().checkpoint_every;
                trainer.run(|t| {
                    let last = t.log().iterations.last().map_or(f64::NAN, |r| r.loss);
                    eprintln!("{v} epoch {}/{} loss {last:.6}", t.epoch(), t.config().epochs);
                    if every > 0 && t.epoch() % every == 0 {
                        t.save_checkpoint(dir.join(format!("checkpoint_e{:03}.qdm", t.epoch())))?;
                    }
                    Ok(())
                })?;
                write_artifact(&dir.join("final.qdm"), &trainer.checkpoint_bytes(), &cfg, "train")?;
                write_artifact(&dir.join("loss.csv"), trainer.log().loss_csv().as_bytes(), &cfg, "train")?;
                write_artifact(&dir.join("epochs.csv"), trainer.log().epoch_csv().as_bytes(), &cfg, "train")?;
                for e in (1..=trainer.epoch()).filter(|e| every > 0 && e % every == 0) {
                    write_sidecar(&dir.join(format!("checkpoint_e{e:03}.qdm")), &cfg, "train")?;
                }
                println!("{v}: {} iterations, checkpoint {}", trainer.iteration(), dir.join("final.qdm").display());
            }
        }
        Command::Sample {
            overrides,
            checkpoint,
            n,
            output,
            autoencoder,
            pgm_dir,
        } => {
            let cfg = effective_config(&overrides, "sample")?;
            if checkpoint.is_some() && cfg.variants.len() != 1 {
                return Err(CliError::Config("--checkpoint needs exactly one --variant".into()));
            }
            let n = n.unwrap_or(cfg.sample.n);
            let ae = autoencoder.map(|p| Autoencoder::load(&p)).transpose()?;
            for &v in &cfg.variants {
                let dir = cfg.variant_dir(v);
                let ck_path = checkpoint.clone().unwrap_or_else(|| dir.join("final.qdm"));
                let model = Checkpoint::load(&ck_path)?.model()?;
                let samples = model.sample(n, cfg.sample.seed)?;
                let out = output.clone().unwrap_or_else(|| dir.join("samples.qlat"));
                let tag = format!("{v}-samples");
                let lat = LatentDataset::new(samples, model.config.dim, None, tag)?;
                write_artifact(&out, &data::encode_latents(&lat), &cfg, "sample")?;
                if let Some(ae) = &ae {
                    let pgm = pgm_dir.clone().unwrap_or_else(|| dir.join("pgm"));
                    for (i, z) in lat.latents.iter().enumerate() {
                        let px = data::unscale_pixels(&ae.decode(z)?);
                        let bytes = data::encode_pgm(&px, data::IMAGE_SIDE, data::IMAGE_SIDE)?;
                        write_artifact(&pgm.join(format!("sample_{i:04}.pgm")), &bytes, &cfg, "sample")?;
                    }
                }
                println!("{v}: {n} samples written to {}", out.display());
            }
        }
        Command::Evaluate {
            overrides,
            generated,
            reference,
            epoch,
            output,
            kid_subset_size,
            kid_subsets,
        } => {
            let cfg = effective_config(&overrides, "evaluate")?;
            let gen = data::load_latents(&generated)?;
            let reference = data::load_latents(&reference)?;
            if gen.dim != reference.dim {
                return Err(Error::LengthMismatch {
                    what: "latent dimension of generated vs reference",
                    expected: reference.dim,
                    got: gen.dim,
                }
                .into());
            }
            let fd = metrics::frechet_distance(&gen.latents, &reference.latents)?;
            let kid = metrics::kid(
                &gen.latents,
                &reference.latents,
                kid_subset_size.unwrap_or(cfg.evaluate.kid_subset_size),
                kid_subsets.unwrap_or(cfg.evaluate.kid_subsets),
                cfg.evaluate.seed,
            )?;
            let label = match overrides.variant.as_slice() {
                [v] => v.name().to_string(),
                _ => gen.source_tag.clone(),
            };
            let out = output.unwrap_or_else(|| cfg.output_dir.join("metrics.csv"));
            ensure_parent(&out)?;
            let mut text = if out.exists() {
                io(&out, fs::read_to_string(&out))?
            } else {
                String::from("epoch,variant,frechet,kid_mean,kid_std\n")
            };
            let epoch = epoch.unwrap_or(cfg.train.epochs);
            text.push_str(&format!("{epoch},{label},{fd},{},{}\n", kid.mean, kid.std));
            write_artifact(&out, text.as_bytes(), &cfg, "evaluate")?;
            println!("{label}: frechet {fd:.6} kid {:.6} ± {:.6}", kid.mean, kid.std);
        }
        Command::Plot {
            inputs,
            output,
            column,
            x,
            db,
            title,
        } => {
            let chart = build_chart(&inputs, column.as_deref(), x.as_deref(), db, title)?;
            let svg = chart.to_svg()?;
            ensure_parent(&output)?;
            io(&output, fs::write(&output, svg))?;
            println!("wrote {}", output.display());
        }
    }
    Ok(())
}

/// Reads CSV logs into chart series. Files with a `variant` column yield one
/// series per variant; otherwise each file is one series named by its stem.
pub fn build_chart(
    inputs: &[PathBuf],
    column: Option<&str>,
    x: Option<&str>,
    db: bool,
    title: Option<String>,
) -> CliResult<Chart> {
    let mut series: Vec<Series> = Vec::new();
    let mut labels = (String::new(), String::new());
    for path in inputs {
        let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
        if headers.is_empty() {
            return Err(Error::format(path, 0, "empty CSV").into());
        }
        let find = |name: &str| headers.iter().position(|h| h == name);
        let yname = match column {
            Some(c) => c.to_string(),
            None => ["loss", "frechet"]
                .into_iter()
                .find(|c| find(c).is_some())
                .ok_or_else(|| CliError::Config(format!("{}: no loss or frechet column; pass --column", path.display())))?
                .to_string(),
        };
        let yi = find(&yname).ok_or_else(|| CliError::Config(format!("{}: no column {yname:?}", path.display())))?;
        let xi = match x {
            Some(c) => find(c).ok_or_else(|| CliError::Config(format!("{}: no column {c:?}", path.display())))?,
            None => 0,
        };
        labels = (headers[xi].to_string(), if db { format!("{yname} (dB)") } else { yname.clone() });
        let vi = find("variant");
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let before = series.len();
        for (row, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| csv_error(path, e))?;
            let num = |i: usize| -> CliResult<f64> {
                rec.get(i)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::format(path, row + 1, format!("row {}: column {i} is not a number", row + 1)).into())
            };
            let (xv, mut yv) = (num(xi)?, num(yi)?);
            if db {
                yv = to_db(yv);
            }
            let name = match vi {
                Some(i) => rec.get(i).unwrap_or_default().to_string(),
                None => stem.clone(),
            };
            match series[before..].iter_mut().find(|s| s.name == name) {
                Some(s) => s.points.push((xv, yv)),
                None => series.push(Series {
                    name,
                    points: vec![(xv, yv)],
                }),
            }
        }
        if series.len() == before {
            return Err(Error::format(path, 0, "CSV has no data rows").into());
        }
    }
    Ok(Chart {
        title: title.unwrap_or_default(),
        x_label: labels.0,
        y_label: labels.1,
        series,
    })
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(io) => CliError::Core(Error::io(path, io)),
            _ => unreachable!(),
        },
        _ => {
            let offset = e.position().map_or(0, |p| p.byte() as usize);
            CliError::Core(Error::format(path, offset, e.to_string()))
        }
    }
}

/// Sizes the global rayon pool from `QLDM_THREADS` when set.
pub fn configure_threads() -> CliResult<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Config(format!("{THREADS_ENV}={value:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("cannot size thread pool: {e}")))
}

/// Entry point used by the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let first = e.to_string().lines().next().unwrap_or_default().trim_start_matches("error: ").to_string();
            eprintln!("error[usage]: {first}");
            return 2;
        }
    };
    match configure_threads().and_then(|_| run(cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
