//! Binary checkpoint container.
//!
//! All integers and floats are little-endian; strings are a `u32` byte
//! length followed by UTF-8 bytes.
//!
//! ```text
//! magic        8 bytes  "CGFCKPT\0"
//! version      u32      1
//! metadata     u32 count, then (key string, value string) pairs
//! tensors      u32 count, then per tensor:
//!                name string, rows u64, cols u64, rows*cols f64
//! optimizer    u8 flag; when 1:
//!                beta1 f64, beta2 f64, eps f64, step u64,
//!                u32 count, then per tensor:
//!                name string, rows u64, cols u64, m values, v values
//! rng          u8 flag; when 1:
//!                seed 32 bytes, stream u64, word position u128
//! digest       32 bytes SHA-256 of every preceding byte
//! ```
//!
//! Floats are stored by bit pattern, so a load/save cycle is bit-exact.

use std::io::Write;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::adam::{Adam, AdamConfig, AdamState};
use super::tensor::Tensor;
use super::AutodiffError;

const MAGIC: &[u8; 8] = b"CGFCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Exact position of a ChaCha8 stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub metadata: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor)>,
    pub optimizer: Option<Adam>,
    pub rng: Option<RngState>,
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

fn put_shape(buf: &mut Vec<u8>, t: &Tensor) {
    buf.extend_from_slice(&(t.rows() as u64).to_le_bytes());
    buf.extend_from_slice(&(t.cols() as u64).to_le_bytes());
}

fn put_values(buf: &mut Vec<u8>, t: &Tensor) {
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], AutodiffError> {
        if self.pos + n > self.buf.len() {
            return Err(AutodiffError::Checkpoint("truncated file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, AutodiffError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, AutodiffError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, AutodiffError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u128(&mut self) -> Result<u128, AutodiffError> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, AutodiffError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, AutodiffError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| AutodiffError::Checkpoint("invalid UTF-8 string".into()))
    }

    fn shape(&mut self) -> Result<(usize, usize), AutodiffError> {
        let rows = self.u64()? as usize;
        let cols = self.u64()? as usize;
        let n = rows
            .checked_mul(cols)
            .filter(|n| n.saturating_mul(8) <= self.buf.len())
            .ok_or_else(|| AutodiffError::Checkpoint("implausible tensor shape".into()))?;
        let _ = n;
        Ok((rows, cols))
    }

    fn values(&mut self, rows: usize, cols: usize) -> Result<Tensor, AutodiffError> {
        let bytes = self.take(rows * cols * 8)?;
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Tensor::new(rows, cols, data)
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.metadata.len() as u32).to_le_bytes());
        for (k, v) in &self.metadata {
            put_str(&mut buf, k);
            put_str(&mut buf, v);
        }
        buf.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_str(&mut buf, name);
            put_shape(&mut buf, t);
            put_values(&mut buf, t);
        }
        match &self.optimizer {
            None => buf.push(0),
            Some(adam) => {
                buf.push(1);
                for v in [adam.config.beta1, adam.config.beta2, adam.config.eps] {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
                buf.extend_from_slice(&adam.step.to_le_bytes());
                buf.extend_from_slice(&(adam.states.len() as u32).to_le_bytes());
                for s in &adam.states {
                    put_str(&mut buf, &s.name);
                    put_shape(&mut buf, &s.m);
                    put_values(&mut buf, &s.m);
                    put_values(&mut buf, &s.v);
                }
            }
        }
        match &self.rng {
            None => buf.push(0),
            Some(r) => {
                buf.push(1);
                buf.extend_from_slice(&r.seed);
                buf.extend_from_slice(&r.stream.to_le_bytes());
                buf.extend_from_slice(&r.word_pos.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AutodiffError> {
        if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..8] != MAGIC {
            return Err(AutodiffError::Checkpoint("not a checkpoint file".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(AutodiffError::Checkpoint("digest mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: 8 };
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(AutodiffError::Checkpoint(format!("unsupported version {version}")));
        }
        let mut ck = Checkpoint::default();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            let v = r.string()?;
            ck.metadata.push((k, v));
        }
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let (rows, cols) = r.shape()?;
            ck.tensors.push((name, r.values(rows, cols)?));
        }
        if r.u8()? == 1 {
            let config = AdamConfig {
                beta1: r.f64()?,
                beta2: r.f64()?,
                eps: r.f64()?,
            };
            let step = r.u64()?;
            let mut states = Vec::new();
            for _ in 0..r.u32()? {
                let name = r.string()?;
                let (rows, cols) = r.shape()?;
                let m = r.values(rows, cols)?;
                let v = r.values(rows, cols)?;
                states.push(AdamState { name, m, v });
            }
            ck.optimizer = Some(Adam { config, step, states });
        }
        if r.u8()? == 1 {
            let seed = r.take(32)?.try_into().unwrap();
            let stream = r.u64()?;
            let word_pos = r.u128()?;
            ck.rng = Some(RngState { seed, stream, word_pos });
        }
        if r.pos != body.len() {
            return Err(AutodiffError::Checkpoint("trailing bytes".into()));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), AutodiffError> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, AutodiffError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}
