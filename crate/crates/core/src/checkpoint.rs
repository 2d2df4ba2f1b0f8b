//! Versioned checkpoint container.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON
//! header, then raw little-endian tensor blobs addressed by the header's
//! name/shape/offset index (offsets relative to the first blob byte).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::network::{ModelSpec, Network};
use crate::tensor::{Scalar, Tensor};
use crate::train::{EpochMetrics, Sgd, TrainConfig, Trainer};

pub const MAGIC: &[u8; 8] = b"EISNNCKP";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub len: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    /// `u128` word position, decimal.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let bad = |what: &str| Error::Format {
            offset: 0,
            msg: format!("bad rng {what} in checkpoint header"),
        };
        if self.seed.len() != 64 {
            return Err(bad("seed"));
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad("seed"))?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse::<u128>().map_err(|_| bad("word position"))?);
        Ok(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub version: u32,
    pub dtype: String,
    pub spec: ModelSpec,
    pub config: TrainConfig,
    pub config_hash: String,
    pub epoch: usize,
    pub rng: RngState,
    pub history: Vec<EpochMetrics>,
    pub tensors: Vec<TensorEntry>,
}

/// Short stable hash of the model spec and training config.
pub fn config_hash(spec: &ModelSpec, cfg: &TrainConfig) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(spec).expect("spec serializes"));
    h.update(serde_json::to_vec(cfg).expect("config serializes"));
    h.finalize().iter().take(6).map(|b| format!("{b:02x}")).collect()
}

fn named_tensors<S: Scalar>(tr: &Trainer<S>) -> Vec<(String, Option<&Tensor<S>>)> {
    let params = tr.net.params();
    let mut out: Vec<(String, Option<&Tensor<S>>)> =
        params.iter().map(|(n, p)| (n.clone(), Some(&p.value))).collect();
    for ((n, _), buf) in params.iter().zip(&tr.opt.buffers) {
        out.push((format!("momentum/{n}"), buf.as_ref()));
    }
    out
}

pub fn save<S: Scalar>(path: &Path, tr: &Trainer<S>) -> Result<()> {
    let mut entries = Vec::new();
    let mut offset = 0u64;
    for (name, t) in named_tensors(tr) {
        if let Some(t) = t {
            let len = (t.len() * S::BYTES) as u64;
            entries.push(TensorEntry {
                name,
                shape: t.shape().to_vec(),
                offset,
                len,
            });
            offset += len;
        }
    }
    let header = Header {
        version: VERSION,
        dtype: S::DTYPE.to_string(),
        spec: tr.net.spec.clone(),
        config: tr.cfg.clone(),
        config_hash: config_hash(&tr.net.spec, &tr.cfg),
        epoch: tr.epoch,
        rng: RngState::capture(&tr.rng),
        history: tr.history.clone(),
        tensors: entries,
    };
    let json = serde_json::to_vec(&header)?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        let mut buf = Vec::new();
        for (_, t) in named_tensors(tr) {
            if let Some(t) = t {
                buf.clear();
                for &v in t.data() {
                    v.write_le(&mut buf);
                }
                w.write_all(&buf)?;
            }
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_header(path: &Path) -> Result<(Header, Vec<u8>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| truncated(0))?;
    if &magic != MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: "not a checkpoint (bad magic)".into(),
        });
    }
    let mut v = [0u8; 4];
    r.read_exact(&mut v).map_err(|_| truncated(8))?;
    let version = u32::from_le_bytes(v);
    if version != VERSION {
        return Err(Error::Format {
            offset: 8,
            msg: format!("checkpoint version {version}, supported {VERSION}"),
        });
    }
    let mut l = [0u8; 8];
    r.read_exact(&mut l).map_err(|_| truncated(12))?;
    let hlen = u64::from_le_bytes(l) as usize;
    let mut json = vec![0u8; hlen];
    r.read_exact(&mut json).map_err(|_| truncated(20))?;
    let header: Header = serde_json::from_slice(&json)?;
    let mut blobs = Vec::new();
    r.read_to_end(&mut blobs)?;
    Ok((header, blobs))
}

fn truncated(offset: u64) -> Error {
    Error::Format {
        offset,
        msg: "checkpoint truncated".into(),
    }
}

fn read_tensor<S: Scalar>(e: &TensorEntry, blobs: &[u8], base: u64) -> Result<Tensor<S>> {
    let n: usize = e.shape.iter().product();
    if e.len != (n * S::BYTES) as u64 {
        return Err(Error::Format {
            offset: base + e.offset,
            msg: format!("{}: length {} does not match shape {:?}", e.name, e.len, e.shape),
        });
    }
    let start = e.offset as usize;
    let bytes = blobs.get(start..start + e.len as usize).ok_or_else(|| Error::Format {
        offset: base + e.offset,
        msg: format!("{}: blob past end of file", e.name),
    })?;
    let data = bytes.chunks_exact(S::BYTES).map(S::read_le).collect();
    Tensor::new(&e.shape, data)
}

pub fn load<S: Scalar>(path: &Path) -> Result<Trainer<S>> {
    let (header, blobs) = read_header(path)?;
    if header.dtype != S::DTYPE {
        return Err(Error::Format {
            offset: 0,
            msg: format!("checkpoint holds {} tensors, requested {}", header.dtype, S::DTYPE),
        });
    }
    let json_len = serde_json::to_vec(&header)?.len() as u64;
    let base = 20 + json_len;
    let mut rng = header.rng.restore()?;
    let mut net = Network::<S>::new(header.spec.clone(), &mut rng)?;
    net.stabilization = header.config.stabilization;
    let names = net.param_names();
    let mut opt = Sgd::new(header.config.momentum, header.config.weight_decay, names.len());
    let find = |name: &str| header.tensors.iter().find(|e| e.name == name);
    for ((name, p), buf) in names.iter().zip(net.params_mut()).zip(opt.buffers.iter_mut()) {
        let e = find(name).ok_or_else(|| Error::Format {
            offset: 0,
            msg: format!("checkpoint is missing {name}"),
        })?;
        let t = read_tensor::<S>(e, &blobs, base)?;
        if t.shape() != p.value.shape() {
            return Err(Error::Format {
                offset: base + e.offset,
                msg: format!("{name}: shape {:?}, model expects {:?}", t.shape(), p.value.shape()),
            });
        }
        p.value = t;
        if let Some(m) = find(&format!("momentum/{name}")) {
            *buf = Some(read_tensor::<S>(m, &blobs, base)?);
        }
    }
    Ok(Trainer {
        net,
        opt,
        cfg: header.config,
        rng: header.rng.restore()?,
        epoch: header.epoch,
        history: header.history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn rng_state_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..13 {
            rng.next_u32();
        }
        let mut back = RngState::capture(&rng).restore().unwrap();
        for _ in 0..100 {
            assert_eq!(rng.next_u64(), back.next_u64());
        }
    }

    #[test]
    fn bad_magic_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.ckpt");
        std::fs::write(&p, b"NOTACKPT........").unwrap();
        assert!(matches!(read_header(&p), Err(Error::Format { offset: 0, .. })));
        std::fs::write(&p, b"EISN").unwrap();
        assert!(matches!(read_header(&p), Err(Error::Format { .. })));
    }
}
