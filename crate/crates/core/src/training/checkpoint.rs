//! Versioned binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! 8 bytes   magic "GATECKPT"
//! u32       format version (1)
//! u64       manifest length M
//! M bytes   UTF-8 JSON manifest: encoder config, vocab, epoch, rng state,
//!           and the name and shape of every array in storage order
//! ...       each array's values as f64, row-major, in manifest order
//! ```

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Vocab;
use crate::encoder::{EncoderConfig, Model, ParamStore};
use crate::error::{Error, Result};
use crate::numerics::Array;
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"GATECKPT";
pub const FORMAT_VERSION: u32 = 1;

/// Serializable ChaCha8 position.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    /// Decimal, since the word position is 128 bits wide.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        let seed: String = rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
        RngState {
            seed,
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let bad = || Error::Checkpoint("malformed rng state".into());
        if self.seed.len() != 64 {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad())?);
        Ok(rng)
    }
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    encoder: EncoderConfig,
    vocab: Vocab,
    epoch: usize,
    rng: RngState,
    arrays: Vec<ArrayEntry>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint<T: Scalar> {
    pub model: Model<T>,
    /// Last completed epoch; 0 for freshly initialized parameters.
    pub epoch: usize,
    pub rng: RngState,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let params = &self.model.params;
        let manifest = Manifest {
            encoder: self.model.config.clone(),
            vocab: self.model.vocab.clone(),
            epoch: self.epoch,
            rng: self.rng.clone(),
            arrays: params
                .names()
                .iter()
                .zip(params.arrays())
                .map(|(n, a)| ArrayEntry {
                    name: n.clone(),
                    rows: a.rows(),
                    cols: a.cols(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(20 + json.len() + 8 * params.num_scalars());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for a in params.arrays() {
            for v in a.data() {
                out.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let m = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..20 + m).ok_or_else(|| bad("truncated manifest"))?;
        let manifest: Manifest = serde_json::from_slice(body)?;
        let mut offset = 20 + m;
        let mut names = Vec::with_capacity(manifest.arrays.len());
        let mut arrays = Vec::with_capacity(manifest.arrays.len());
        for e in &manifest.arrays {
            let len = e.rows * e.cols;
            let raw = bytes
                .get(offset..offset + 8 * len)
                .ok_or_else(|| bad("truncated array data"))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
                .collect();
            names.push(e.name.clone());
            arrays.push(Array::from_vec(e.rows, e.cols, data)?);
            offset += 8 * len;
        }
        if offset != bytes.len() {
            return Err(bad("trailing bytes after array data"));
        }
        let model = Model::from_params(manifest.encoder, manifest.vocab, ParamStore::from_parts(names, arrays)?)?;
        Ok(Checkpoint {
            model,
            epoch: manifest.epoch,
            rng: manifest.rng,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
