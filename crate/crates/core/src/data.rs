//! IDX (MNIST) and CIFAR-10 binary loaders, per-channel normalization,
//! crop/flip augmentation and batching.
//!
//! Pixels are kept as raw bytes in NHWC order and normalized when a batch
//! is materialized.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::network::InputShape;
use crate::tensor::{Scalar, Tensor};

pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;
pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const CIFAR_RECORD: usize = 3073;
pub const CIFAR_PER_FILE: usize = 10_000;
pub const CIFAR_SIDE: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Per-channel statistics of pixels scaled to `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }
}

#[derive(Clone, Debug)]
pub struct DatasetHandle {
    /// Raw bytes, `count × H × W × C`.
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
    pub shape: InputShape,
    pub classes: usize,
    pub split: Split,
    pub normalization: Normalization,
    /// SHA-256 of the source files, hex encoded.
    pub checksum: String,
}

impl DatasetHandle {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn check(&self) -> Result<()> {
        if self.pixels.len() != self.labels.len() * self.shape.len() {
            return Err(Error::Format {
                offset: 0,
                msg: format!(
                    "{} pixels for {} images of {} values",
                    self.pixels.len(),
                    self.labels.len(),
                    self.shape.len()
                ),
            });
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l as usize >= self.classes) {
            return Err(Error::Format {
                offset: 0,
                msg: format!("label {bad} outside [0, {})", self.classes),
            });
        }
        Ok(())
    }

    /// Per-channel mean and std of this split's pixels in `[0, 1]`.
    pub fn channel_stats(&self) -> Normalization {
        let c = self.shape.channels;
        let mut sum = vec![0.0f64; c];
        let mut sq = vec![0.0f64; c];
        for (i, &b) in self.pixels.iter().enumerate() {
            let v = b as f64 / 255.0;
            sum[i % c] += v;
            sq[i % c] += v * v;
        }
        let n = (self.pixels.len() / c.max(1)).max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / n - m * m).max(0.0).sqrt().max(1e-12))
            .collect();
        Normalization { mean, std }
    }

    pub fn with_normalization(mut self, norm: Normalization) -> Result<Self> {
        if norm.mean.len() != self.shape.channels || norm.std.len() != self.shape.channels {
            return Err(Error::Parameter(format!(
                "normalization has {} channels, data has {}",
                norm.mean.len(),
                self.shape.channels
            )));
        }
        self.normalization = norm;
        Ok(self)
    }

    /// First `n` samples.
    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            pixels: self.pixels[..n * self.shape.len()].to_vec(),
            labels: self.labels[..n].to_vec(),
            ..self.clone()
        }
    }

    /// One normalized image as `f64` values in HWC order.
    pub fn image(&self, index: usize) -> Vec<f64> {
        let len = self.shape.len();
        let c = self.shape.channels;
        self.pixels[index * len..(index + 1) * len]
            .iter()
            .enumerate()
            .map(|(i, &b)| (b as f64 / 255.0 - self.normalization.mean[i % c]) / self.normalization.std[i % c])
            .collect()
    }

    /// Normalized batch `[B, H, W, C]` and its labels.
    pub fn batch<S: Scalar>(&self, indices: &[usize]) -> Result<(Tensor<S>, Vec<usize>)> {
        let len = self.shape.len();
        let mut data = Vec::with_capacity(indices.len() * len);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Parameter(format!("sample {i} out of range {}", self.len())));
            }
            data.extend(self.image(i).into_iter().map(S::from_f64));
            labels.push(self.labels[i] as usize);
        }
        let s = self.shape;
        Ok((Tensor::new(&[indices.len(), s.height, s.width, s.channels], data)?, labels))
    }
}

/// Statistics from the train split, applied to both splits.
pub fn normalize_pair(train: DatasetHandle, test: DatasetHandle) -> Result<(DatasetHandle, DatasetHandle)> {
    let norm = train.channel_stats();
    Ok((train.with_normalization(norm.clone())?, test.with_normalization(norm)?))
}

fn sha256_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// A parsed IDX array of unsigned bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub magic: u32,
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            offset: offset as u64,
            msg: format!("header truncated: need {} bytes, file has {}", offset + 4, bytes.len()),
        })
}

/// Parses an IDX buffer whose magic must equal `expected_magic`.
pub fn parse_idx(bytes: &[u8], expected_magic: u32) -> Result<IdxArray> {
    let magic = be_u32(bytes, 0)?;
    if magic != expected_magic {
        return Err(Error::Format {
            offset: 0,
            msg: format!("magic {magic:#010x}, expected {expected_magic:#010x}"),
        });
    }
    let ndim = (magic & 0xff) as usize;
    let dims = (0..ndim)
        .map(|i| be_u32(bytes, 4 + 4 * i).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let header = 4 + 4 * ndim;
    let expected = header + dims.iter().product::<usize>();
    if bytes.len() != expected {
        return Err(Error::Format {
            offset: bytes.len().min(expected) as u64,
            msg: format!("expected {expected} bytes, found {}", bytes.len()),
        });
    }
    Ok(IdxArray {
        magic,
        dims,
        data: bytes[header..].to_vec(),
    })
}

pub fn load_idx(path: &Path, expected_magic: u32) -> Result<IdxArray> {
    let bytes = fs::read(path)?;
    parse_idx(&bytes, expected_magic).map_err(|e| match e {
        Error::Format { offset, msg } => Error::Format {
            offset,
            msg: format!("{}: {msg}", path.display()),
        },
        e => e,
    })
}

/// MNIST-style pair of IDX files.
pub fn load_idx_dataset(images: &Path, labels: &Path, split: Split) -> Result<DatasetHandle> {
    let img_bytes = fs::read(images)?;
    let lbl_bytes = fs::read(labels)?;
    let img = parse_idx(&img_bytes, IDX_IMAGE_MAGIC)?;
    let lbl = parse_idx(&lbl_bytes, IDX_LABEL_MAGIC)?;
    if img.dims[0] != lbl.dims[0] {
        return Err(Error::Format {
            offset: 4,
            msg: format!("{} images but {} labels", img.dims[0], lbl.dims[0]),
        });
    }
    let shape = InputShape {
        height: img.dims[1],
        width: img.dims[2],
        channels: 1,
    };
    let d = DatasetHandle {
        pixels: img.data,
        labels: lbl.data,
        shape,
        classes: 10,
        split,
        normalization: Normalization::identity(1),
        checksum: sha256_hex(&[&img_bytes, &lbl_bytes]),
    };
    d.check()?;
    Ok(d)
}

pub fn load_mnist(dir: &Path, split: Split) -> Result<DatasetHandle> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    load_idx_dataset(
        &dir.join(format!("{prefix}-images-idx3-ubyte")),
        &dir.join(format!("{prefix}-labels-idx1-ubyte")),
        split,
    )
}

/// One CIFAR record (label byte then R, G, B planes) from an HWC image.
pub fn encode_cifar_record(label: u8, hwc: &[u8]) -> Vec<u8> {
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    let mut out = vec![0u8; CIFAR_RECORD];
    out[0] = label;
    for p in 0..plane {
        for c in 0..3 {
            out[1 + c * plane + p] = hwc[p * 3 + c];
        }
    }
    out
}

fn decode_cifar_file(bytes: &[u8], name: &str, pixels: &mut Vec<u8>, labels: &mut Vec<u8>) -> Result<()> {
    let want = CIFAR_PER_FILE * CIFAR_RECORD;
    if bytes.len() != want {
        return Err(Error::Format {
            offset: bytes.len().min(want) as u64,
            msg: format!(
                "{name}: {} bytes is not {CIFAR_PER_FILE} records of {CIFAR_RECORD} bytes",
                bytes.len()
            ),
        });
    }
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    for (r, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        if rec[0] > 9 {
            return Err(Error::Format {
                offset: (r * CIFAR_RECORD) as u64,
                msg: format!("{name}: label {} outside [0, 9]", rec[0]),
            });
        }
        labels.push(rec[0]);
        for p in 0..plane {
            for c in 0..3 {
                pixels.push(rec[1 + c * plane + p]);
            }
        }
    }
    Ok(())
}

/// Standard CIFAR-10 binary batches; `dir` may be the batch directory or
/// its parent.
pub fn load_cifar10_bin(dir: &Path, split: Split) -> Result<DatasetHandle> {
    let dir = cifar_dir(dir).unwrap_or_else(|| dir.to_path_buf());
    let files: Vec<String> = match split {
        Split::Train => (1..=5).map(|i| format!("data_batch_{i}.bin")).collect(),
        Split::Test => vec!["test_batch.bin".into()],
    };
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    let mut hasher = Sha256::new();
    for f in &files {
        let bytes = fs::read(dir.join(f))?;
        hasher.update(&bytes);
        decode_cifar_file(&bytes, f, &mut pixels, &mut labels)?;
    }
    let d = DatasetHandle {
        pixels,
        labels,
        shape: InputShape {
            height: CIFAR_SIDE,
            width: CIFAR_SIDE,
            channels: 3,
        },
        classes: 10,
        split,
        normalization: Normalization::identity(3),
        checksum: hasher.finalize().iter().map(|b| format!("{b:02x}")).collect(),
    };
    d.check()?;
    Ok(d)
}

fn cifar_dir(dir: &Path) -> Option<PathBuf> {
    if dir.join("data_batch_1.bin").exists() || dir.join("test_batch.bin").exists() {
        return Some(dir.to_path_buf());
    }
    let nested = dir.join("cifar-10-batches-bin");
    nested.join("test_batch.bin").exists().then_some(nested)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Mnist,
    Cifar10,
}

pub fn detect_kind(dir: &Path) -> Option<DatasetKind> {
    if dir.join("train-images-idx3-ubyte").exists() || dir.join("t10k-images-idx3-ubyte").exists() {
        Some(DatasetKind::Mnist)
    } else if cifar_dir(dir).is_some() {
        Some(DatasetKind::Cifar10)
    } else {
        None
    }
}

/// Train and test splits, normalized with train statistics.
pub fn load_dir(dir: &Path) -> Result<(DatasetHandle, DatasetHandle)> {
    let (train, test) = match detect_kind(dir) {
        Some(DatasetKind::Mnist) => (load_mnist(dir, Split::Train)?, load_mnist(dir, Split::Test)?),
        Some(DatasetKind::Cifar10) => (
            load_cifar10_bin(dir, Split::Train)?,
            load_cifar10_bin(dir, Split::Test)?,
        ),
        None => {
            return Err(Error::Config(format!(
                "{} holds neither IDX nor CIFAR-10 binary files",
                dir.display()
            )))
        }
    };
    normalize_pair(train, test)
}

/// Flat Bernoulli(`p`) inputs of dimension `d` with random labels; pixel
/// bytes are 0 or 255 so identity normalization yields values in {0, 1}.
pub fn synthetic_bernoulli<R: Rng + ?Sized>(n: usize, d: usize, p: f64, classes: usize, rng: &mut R) -> Result<DatasetHandle> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Parameter(format!("Bernoulli probability {p} outside [0, 1]")));
    }
    let pixels: Vec<u8> = (0..n * d).map(|_| if rng.random_bool(p) { 255 } else { 0 }).collect();
    let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..classes) as u8).collect();
    let checksum = sha256_hex(&[&pixels, &labels]);
    Ok(DatasetHandle {
        pixels,
        labels,
        shape: InputShape {
            height: 1,
            width: 1,
            channels: d,
        },
        classes,
        split: Split::Train,
        normalization: Normalization::identity(d),
        checksum,
    })
}

/// Random reflect-padded crops and horizontal flips; off by default.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub crop_pad: usize,
    pub hflip: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            crop_pad: 4,
            hflip: true,
        }
    }
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * n - 2 - i
    } else {
        i
    };
    r.clamp(0, n - 1) as usize
}

/// Mirrors every image of an NHWC batch left to right.
pub fn hflip<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let s = x.shape();
    let (h, w, c) = (s[1], s[2], s[3]);
    let mut out = x.clone();
    for b in 0..s[0] {
        for y in 0..h {
            for xx in 0..w {
                let src = ((b * h + y) * w + (w - 1 - xx)) * c;
                let dst = ((b * h + y) * w + xx) * c;
                out.data_mut()[dst..dst + c].copy_from_slice(&x.data()[src..src + c]);
            }
        }
    }
    out
}

/// Reflect-pad, random crop back to the original size and random flip,
/// independently per image of an NHWC batch.
pub fn augment<S: Scalar, R: Rng + ?Sized>(x: &Tensor<S>, cfg: &AugmentConfig, rng: &mut R) -> Result<Tensor<S>> {
    if !cfg.enabled {
        return Ok(x.clone());
    }
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::Dimension {
            op: "augment",
            detail: format!("needs [B,H,W,C], got {s:?}"),
        });
    }
    let (h, w, c) = (s[1], s[2], s[3]);
    let pad = cfg.crop_pad as isize;
    if cfg.crop_pad >= h.min(w) {
        return Err(Error::Parameter(format!("crop padding {pad} too large for {h}×{w}")));
    }
    let img = h * w * c;
    let mut out = vec![S::ZERO; x.len()];
    for b in 0..s[0] {
        let oy = rng.random_range(0..=2 * pad as i64) as isize - pad;
        let ox = rng.random_range(0..=2 * pad as i64) as isize - pad;
        let flip = cfg.hflip && rng.random_bool(0.5);
        let src = &x.data()[b * img..(b + 1) * img];
        let dst = &mut out[b * img..(b + 1) * img];
        for y in 0..h {
            let sy = reflect(y as isize + oy, h);
            for xx in 0..w {
                let tx = if flip { w - 1 - xx } else { xx };
                let sx = reflect(tx as isize + ox, w);
                let d = (y * w + xx) * c;
                let so = (sy * w + sx) * c;
                dst[d..d + c].copy_from_slice(&src[so..so + c]);
            }
        }
    }
    Tensor::new(s, out)
}

/// A shuffled permutation of `0..n` split into batches.
pub fn epoch_batches<R: Rng + ?Sized>(n: usize, batch: usize, shuffle: bool, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        order.shuffle(rng);
    }
    order.chunks(batch.max(1)).map(|c| c.to_vec()).collect()
}
