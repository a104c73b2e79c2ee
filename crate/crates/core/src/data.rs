//! IDX image/label ingestion and the QLAT latent file format.
//!
//! IDX files may be gzip-compressed; compression is detected from the
//! content, not the file name.

use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, Error, Result};

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;
pub const IMAGE_SIDE: usize = 28;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;

pub const QLAT_MAGIC: &[u8; 4] = b"QLAT";
pub const QLAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// `count · rows · cols` bytes, image-major.
    pub pixels: Vec<u8>,
}

impl RawImages {
    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageDataset {
    pub images: Vec<Vec<f64>>,
    pub labels: Option<Vec<u8>>,
}

impl ImageDataset {
    pub fn from_raw(raw: &RawImages, labels: Option<Vec<u8>>) -> Result<Self> {
        if let Some(l) = &labels {
            check_len("label count", raw.count, l.len())?;
        }
        Ok(Self {
            images: (0..raw.count).map(|i| scale_pixels(raw.image(i))).collect(),
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            images: rows.iter().map(|&i| self.images[i].clone()).collect(),
            labels: self.labels.as_ref().map(|l| rows.iter().map(|&i| l[i]).collect()),
        }
    }

    pub fn subset_fraction(&self, fraction: f64, seed: u64) -> Result<Self> {
        Ok(self.select(&subset_indices(self.len(), fraction, seed)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentDataset {
    pub latents: Vec<Vec<f64>>,
    pub dim: usize,
    pub labels: Option<Vec<u8>>,
    pub source_tag: String,
}

impl LatentDataset {
    pub fn new(latents: Vec<Vec<f64>>, dim: usize, labels: Option<Vec<u8>>, source_tag: impl Into<String>) -> Result<Self> {
        for row in &latents {
            check_len("latent row", dim, row.len())?;
        }
        if let Some(l) = &labels {
            check_len("label count", latents.len(), l.len())?;
        }
        Ok(Self {
            latents,
            dim,
            labels,
            source_tag: source_tag.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.latents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latents.is_empty()
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            latents: rows.iter().map(|&i| self.latents[i].clone()).collect(),
            dim: self.dim,
            labels: self.labels.as_ref().map(|l| rows.iter().map(|&i| l[i]).collect()),
            source_tag: self.source_tag.clone(),
        }
    }

    pub fn subset_fraction(&self, fraction: f64, seed: u64) -> Result<Self> {
        Ok(self.select(&subset_indices(self.len(), fraction, seed)?))
    }
}

/// `v ↦ v / 127.5 − 1`.
pub fn scale_pixels(raw: &[u8]) -> Vec<f64> {
    raw.iter().map(|&v| f64::from(v) / 127.5 - 1.0).collect()
}

/// Inverse of [`scale_pixels`], clamped and rounded to the nearest byte.
pub fn unscale_pixels(values: &[f64]) -> Vec<u8> {
    values
        .iter()
        .map(|v| ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8)
        .collect()
}

/// `⌈fraction · n⌉` distinct indices drawn uniformly without replacement.
pub fn subset_indices(n: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("fraction {fraction} outside (0, 1]")));
    }
    let k = ((fraction * n as f64).ceil() as usize).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(index::sample(&mut rng, n, k).into_vec())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    if path.as_os_str().is_empty() {
        return Err(Error::InvalidArgument("empty path".into()));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(bytes.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(bytes)
    }
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(path: &'a Path, bytes: &'a [u8]) -> Self {
        Self { path, bytes, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::format(
                self.path,
                self.pos,
                format!("truncated {what}: need {n} bytes, {} remain", self.bytes.len() - self.pos),
            )
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32_be(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u32_le(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn expect_magic(&mut self, magic: u32) -> Result<()> {
        let at = self.pos;
        let found = self.u32_be("magic")?;
        if found == magic {
            Ok(())
        } else {
            Err(Error::format(
                self.path,
                at,
                format!("bad magic 0x{found:08x}, expected 0x{magic:08x}"),
            ))
        }
    }

    fn finish(&self) -> Result<()> {
        if self.pos == self.bytes.len() {
            Ok(())
        } else {
            Err(Error::format(
                self.path,
                self.pos,
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ))
        }
    }
}

/// Reads an IDX image file. With `strict`, images must be 28×28.
pub fn load_idx_images(path: impl AsRef<Path>, strict: bool) -> Result<RawImages> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let mut cur = Cursor::new(path, &bytes);
    cur.expect_magic(IDX_IMAGE_MAGIC)?;
    let count = cur.u32_be("image count")? as usize;
    let rows = cur.u32_be("row count")? as usize;
    let cols = cur.u32_be("column count")? as usize;
    if strict && (rows, cols) != (IMAGE_SIDE, IMAGE_SIDE) {
        return Err(Error::format(path, 8, format!("images are {rows}×{cols}, expected 28×28")));
    }
    let pixels = cur.take(count * rows * cols, "pixel payload")?.to_vec();
    cur.finish()?;
    Ok(RawImages {
        count,
        rows,
        cols,
        pixels,
    })
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let mut cur = Cursor::new(path, &bytes);
    cur.expect_magic(IDX_LABEL_MAGIC)?;
    let count = cur.u32_be("label count")? as usize;
    let labels = cur.take(count, "label payload")?.to_vec();
    cur.finish()?;
    Ok(labels)
}

/// Loads images (scaled to `[−1, 1]`) and optional labels.
pub fn load_image_dataset(images: impl AsRef<Path>, labels: Option<&Path>) -> Result<ImageDataset> {
    let raw = load_idx_images(images, true)?;
    let labels = labels.map(load_idx_labels).transpose()?;
    ImageDataset::from_raw(&raw, labels)
}

pub fn encode_idx_images(raw: &RawImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + raw.pixels.len());
    for v in [IDX_IMAGE_MAGIC, raw.count as u32, raw.rows as u32, raw.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&raw.pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// QLAT: magic, u32 version, u32 N, u32 d, u8 has_labels, N·d f32 latents,
/// then N label bytes if present. Integers and floats little-endian.
pub fn encode_latents(ds: &LatentDataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(17 + ds.len() * ds.dim * 4 + ds.len());
    out.extend_from_slice(QLAT_MAGIC);
    for v in [QLAT_VERSION, ds.len() as u32, ds.dim as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.push(u8::from(ds.labels.is_some()));
    for v in ds.latents.iter().flatten() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    if let Some(l) = &ds.labels {
        out.extend_from_slice(l);
    }
    out
}

pub fn decode_latents(path: &Path, bytes: &[u8]) -> Result<LatentDataset> {
    let mut cur = Cursor::new(path, bytes);
    let magic = cur.take(4, "magic")?;
    if magic != QLAT_MAGIC {
        return Err(Error::format(path, 0, format!("bad magic {magic:?}, expected \"QLAT\"")));
    }
    let version = cur.u32_le("version")?;
    if version != QLAT_VERSION {
        return Err(Error::format(path, 4, format!("unsupported QLAT version {version}")));
    }
    let n = cur.u32_le("row count")? as usize;
    let dim = cur.u32_le("dimension")? as usize;
    let has_labels = match cur.take(1, "label flag")?[0] {
        0 => false,
        1 => true,
        other => return Err(Error::format(path, 16, format!("label flag {other} is not 0 or 1"))),
    };
    let payload = cur.take(n * dim * 4, "latent payload")?;
    let latents = if dim == 0 {
        vec![Vec::new(); n]
    } else {
        payload
            .chunks_exact(dim * 4)
            .map(|row| {
                row.chunks_exact(4)
                    .map(|b| f64::from(f32::from_le_bytes(b.try_into().expect("4 bytes"))))
                    .collect()
            })
            .collect()
    };
    let labels = if has_labels {
        Some(cur.take(n, "label payload")?.to_vec())
    } else {
        None
    };
    cur.finish()?;
    let tag = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    LatentDataset::new(latents, dim, labels, tag)
}

pub fn save_latents(path: impl AsRef<Path>, ds: &LatentDataset) -> Result<()> {
    let path = path.as_ref();
    if path.as_os_str().is_empty() {
        return Err(Error::InvalidArgument("empty path".into()));
    }
    fs::write(path, encode_latents(ds)).map_err(|e| Error::io(path, e))
}

pub fn load_latents(path: impl AsRef<Path>) -> Result<LatentDataset> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    decode_latents(path, &bytes)
}

/// Binary greyscale PGM (`P5`) with maxval 255.
pub fn encode_pgm(pixels: &[u8], rows: usize, cols: usize) -> Result<Vec<u8>> {
    check_len("pgm pixels", rows * cols, pixels.len())?;
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    Ok(out)
}
