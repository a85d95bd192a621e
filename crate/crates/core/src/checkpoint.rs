//! Binary checkpoint format.
//!
//! Everything is little-endian:
//!
//! ```text
//! magic        8 bytes  "CHARRNN\0"
//! version      u32      1
//! precision    u32      32 or 64
//! scheme       u32      1..=4
//! vocab_size   u64
//! num_layers   u64
//! hidden_size  u64
//! dense_size   u64
//! leakiness    f64
//! k1, k2       u64, u64
//! vocabulary   vocab_size × u32 code points, strictly increasing
//! seed_len     u64, then seed_len × u32 token ids
//! parameters   parameter_count values in the precision above, tensors in
//!              declaration order
//! ```
//!
//! The decoder checks every length against the bytes actually present before
//! allocating, and rejects trailing bytes.

use std::path::Path;

use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Parameters, GATES};
use crate::numerics::{Precision, Real};
use crate::schemes::SchemeId;
use crate::TokenId;

pub const MAGIC: &[u8; 8] = b"CHARRNN\0";
pub const VERSION: u32 = 1;

/// A trained model plus what sampling and evaluation need to use it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub model: ModelConfig,
    pub scheme: SchemeId,
    pub k1: usize,
    pub k2: usize,
    pub vocab: Vocabulary,
    /// Default sampling seed.
    pub seed_tokens: Vec<TokenId>,
    pub params: Parameters<T>,
}

/// A decoded checkpoint in whichever precision it was written.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyCheckpoint {
    F32(Checkpoint<f32>),
    F64(Checkpoint<f64>),
}

impl AnyCheckpoint {
    pub fn precision(&self) -> Precision {
        match self {
            AnyCheckpoint::F32(_) => Precision::F32,
            AnyCheckpoint::F64(_) => Precision::F64,
        }
    }
}

impl<T: Real> Checkpoint<T> {
    pub fn encode(&self) -> Vec<u8> {
        let m = &self.model;
        let mut out = Vec::with_capacity(128 + m.parameter_count() * T::BYTES);
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        put_u32(&mut out, T::PRECISION.bits());
        put_u32(&mut out, u32::from(self.scheme.number()));
        for v in [m.vocab_size, m.num_layers, m.hidden_size, m.dense_size] {
            put_u64(&mut out, v as u64);
        }
        out.extend_from_slice(&m.leakiness.to_le_bytes());
        put_u64(&mut out, self.k1 as u64);
        put_u64(&mut out, self.k2 as u64);
        for &c in self.vocab.chars() {
            put_u32(&mut out, c as u32);
        }
        put_u64(&mut out, self.seed_tokens.len() as u64);
        for &t in &self.seed_tokens {
            put_u32(&mut out, t as u32);
        }
        for tensor in self.params.tensors() {
            for &x in tensor {
                x.write_le(&mut out);
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    fn check(&self) -> Result<()> {
        if self.vocab.len() != self.model.vocab_size {
            return Err(Error::Checkpoint(format!(
                "vocabulary has {} characters but the model expects {}",
                self.vocab.len(),
                self.model.vocab_size
            )));
        }
        if !self.params.matches(&self.model) {
            return Err(Error::Checkpoint(
                "parameter shapes do not match the model".into(),
            ));
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Checkpoint(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }

    fn usize(&mut self, what: &str) -> Result<usize> {
        usize::try_from(self.u64(what)?)
            .map_err(|_| Error::Checkpoint(format!("{what} does not fit in memory")))
    }

    /// Reads a count of `item_bytes`-sized items, refusing counts the
    /// remaining input cannot hold.
    fn count(&mut self, item_bytes: usize, what: &str) -> Result<usize> {
        let n = self.usize(what)?;
        self.ensure(n, item_bytes, what)?;
        Ok(n)
    }

    fn ensure(&self, n: usize, item_bytes: usize, what: &str) -> Result<()> {
        match n.checked_mul(item_bytes) {
            Some(total) if total <= self.remaining() => Ok(()),
            _ => Err(Error::Checkpoint(format!(
                "{what} claims {n} entries but only {} bytes remain",
                self.remaining()
            ))),
        }
    }
}

/// `ModelConfig::parameter_count` without overflow.
fn checked_parameter_count(m: &ModelConfig) -> Option<usize> {
    let g = m.hidden_size;
    let layer = |input: usize| -> Option<usize> {
        let per_gate = g
            .checked_mul(input)?
            .checked_add(g.checked_mul(g)?)?
            .checked_add(g)?;
        per_gate.checked_mul(GATES)?.checked_add(g.checked_mul(5)?)
    };
    let first = layer(m.vocab_size)?;
    let rest = layer(g)?.checked_mul(m.num_layers - 1)?;
    let dense = m.dense_size.checked_mul(g)?.checked_add(m.dense_size)?;
    let head = m
        .vocab_size
        .checked_mul(m.dense_size)?
        .checked_add(m.vocab_size)?;
    first
        .checked_add(rest)?
        .checked_add(dense)?
        .checked_add(head)
}

fn read_params<T: Real>(r: &mut Reader<'_>, model: &ModelConfig) -> Result<Parameters<T>> {
    let count = checked_parameter_count(model)
        .ok_or_else(|| Error::Checkpoint("model dimensions overflow".into()))?;
    r.ensure(count, T::BYTES, "parameters")?;
    let mut params = Parameters::<T>::zeros(model);
    for tensor in params.tensors_mut() {
        let raw = r.take(tensor.len() * T::BYTES, "parameters")?;
        for (x, chunk) in tensor.iter_mut().zip(raw.chunks_exact(T::BYTES)) {
            *x = T::read_le(chunk);
        }
    }
    Ok(params)
}

/// Parses a checkpoint. Never panics on malformed input.
pub fn decode(bytes: &[u8]) -> Result<AnyCheckpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let bits = r.u32("precision")?;
    let precision = Precision::from_bits(bits)
        .ok_or_else(|| Error::Checkpoint(format!("unknown precision {bits}")))?;
    let scheme_number = r.u32("scheme")?;
    let scheme = u8::try_from(scheme_number)
        .ok()
        .and_then(SchemeId::from_number)
        .ok_or_else(|| Error::Checkpoint(format!("unknown scheme {scheme_number}")))?;
    let vocab_size = r.usize("vocab_size")?;
    let num_layers = r.usize("num_layers")?;
    let hidden_size = r.usize("hidden_size")?;
    let dense_size = r.usize("dense_size")?;
    let leakiness = f64::from_le_bytes(r.take(8, "leakiness")?.try_into().expect("8 bytes"));
    let model = ModelConfig {
        vocab_size,
        num_layers,
        hidden_size,
        dense_size,
        leakiness,
    };
    model
        .validate()
        .map_err(|e| Error::Checkpoint(format!("bad model configuration: {e}")))?;
    let k1 = r.usize("k1")?;
    let k2 = r.usize("k2")?;
    if k1 == 0 || k1 > k2 {
        return Err(Error::Checkpoint(format!(
            "k1 = {k1}, k2 = {k2} violate 1 <= k1 <= k2"
        )));
    }

    r.ensure(vocab_size, 4, "vocabulary")?;
    let mut chars = Vec::with_capacity(vocab_size);
    for _ in 0..vocab_size {
        let code = r.u32("vocabulary")?;
        let c = char::from_u32(code)
            .ok_or_else(|| Error::Checkpoint(format!("invalid code point {code:#x}")))?;
        chars.push(c);
    }
    let vocab = Vocabulary::from_chars(chars).map_err(|e| Error::Checkpoint(e.to_string()))?;

    let seed_len = r.count(4, "seed tokens")?;
    let mut seed_tokens = Vec::with_capacity(seed_len);
    for _ in 0..seed_len {
        let t = r.u32("seed tokens")? as usize;
        if t >= vocab_size {
            return Err(Error::Checkpoint(format!(
                "seed token {t} out of range for vocabulary of size {vocab_size}"
            )));
        }
        seed_tokens.push(t);
    }

    let out = match precision {
        Precision::F32 => AnyCheckpoint::F32(Checkpoint {
            params: read_params(&mut r, &model)?,
            model,
            scheme,
            k1,
            k2,
            vocab,
            seed_tokens,
        }),
        Precision::F64 => AnyCheckpoint::F64(Checkpoint {
            params: read_params(&mut r, &model)?,
            model,
            scheme,
            k1,
            k2,
            vocab,
            seed_tokens,
        }),
    };
    if r.remaining() != 0 {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after parameters",
            r.remaining()
        )));
    }
    match &out {
        AnyCheckpoint::F32(c) => c.check()?,
        AnyCheckpoint::F64(c) => c.check()?,
    }
    Ok(out)
}

pub fn load(path: impl AsRef<Path>) -> Result<AnyCheckpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
