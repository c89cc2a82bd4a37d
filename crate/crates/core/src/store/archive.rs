//! Binary model archive.
//!
//! All integers are little-endian. Layout:
//!
//! ```text
//! offset     size        field
//! 0          4           magic, ASCII "EFD1"
//! 4          4   u32     format version (currently 1)
//! 8          1   u8      kind: 0 lm, 1 crf, 2 null_detector, 3 embeddings
//! 9          4   u32     vocabulary block length V
//! 13         V           vocabulary file text, UTF-8 (empty for embeddings)
//! .          4   u32     metadata length M
//! .          M           metadata, UTF-8 JSON object
//! .          4   u32     tensor count C
//!            C times:
//!              2 u16     name length N
//!              N         name, UTF-8, unique within the archive
//!              1 u8      dtype, 1 = f32
//!              1 u8      rank R
//!              8R u64    dimensions
//!              4P f32    payload, P = product of dimensions, row-major
//! end-8      8   u64     FNV-1a 64 of every preceding byte
//! ```
//!
//! Parameters live in memory as f64 and are narrowed to f32 on save.

use std::collections::HashSet;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::corrector::{CrfModel, NullDetectorModel};
use crate::datapipe::Embeddings;
use crate::error::{Error, Result};
use crate::lm::{LmModel, MaskedLm, TransformerConfig, Vocab};
use crate::numerics::{ParamSet, Tensor};

pub const MAGIC: &[u8; 4] = b"EFD1";
pub const FORMAT_VERSION: u32 = 1;
const DTYPE_F32: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Lm,
    Crf,
    NullDetector,
    Embeddings,
}

impl ModelKind {
    fn code(self) -> u8 {
        match self {
            ModelKind::Lm => 0,
            ModelKind::Crf => 1,
            ModelKind::NullDetector => 2,
            ModelKind::Embeddings => 3,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        Ok(match c {
            0 => ModelKind::Lm,
            1 => ModelKind::Crf,
            2 => ModelKind::NullDetector,
            3 => ModelKind::Embeddings,
            other => return Err(Error::Format(format!("unknown model kind {other}"))),
        })
    }
}

/// Decoded archive contents before conversion to a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    pub kind: ModelKind,
    pub vocab: Option<Vocab>,
    pub meta: Value,
    pub tensors: Vec<(String, Tensor)>,
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn put_block(out: &mut Vec<u8>, bytes: &[u8]) -> Result<()> {
    let n = u32::try_from(bytes.len()).map_err(|_| Error::invalid("archive block over 4 GiB"))?;
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(bytes);
    Ok(())
}

impl Archive {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(self.kind.code());
        let vocab = self.vocab.as_ref().map(Vocab::to_file_string).unwrap_or_default();
        put_block(&mut out, vocab.as_bytes())?;
        put_block(&mut out, serde_json::to_string(&self.meta).expect("json value").as_bytes())?;
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        let mut seen = HashSet::new();
        for (name, t) in &self.tensors {
            if !seen.insert(name.as_str()) {
                return Err(Error::invalid(format!("duplicate tensor name {name:?}")));
            }
            let n = u16::try_from(name.len()).map_err(|_| Error::invalid("tensor name too long"))?;
            out.extend_from_slice(&n.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DTYPE_F32);
            out.push(u8::try_from(t.shape().len()).map_err(|_| Error::invalid("tensor rank over 255"))?);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in t.data() {
                let y = x as f32;
                if !y.is_finite() {
                    return Err(Error::NumericFailure(format!("{name} holds {x}, not storable as f32")));
                }
                out.extend_from_slice(&y.to_le_bytes());
            }
        }
        let sum = fnv1a64(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() >= 4 && &bytes[..4] != MAGIC {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected \"EFD1\"",
                String::from_utf8_lossy(&bytes[..4])
            )));
        }
        if bytes.len() < 4 + 8 {
            return Err(Error::Checksum {
                stored: 0,
                computed: fnv1a64(bytes),
            });
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().unwrap());
        let computed = fnv1a64(body);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        let mut r = Reader { buf: body, at: 4 };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format version {version}")));
        }
        let kind = ModelKind::from_code(r.u8()?)?;
        let vocab_text = r.block_str()?;
        let vocab = if vocab_text.is_empty() {
            None
        } else {
            Some(Vocab::parse(vocab_text).map_err(|e| Error::Format(format!("vocabulary block: {e}")))?)
        };
        let meta: Value = serde_json::from_str(r.block_str()?).map_err(|e| Error::Format(format!("metadata: {e}")))?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1024));
        let mut seen = HashSet::new();
        for _ in 0..count {
            let n = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(n)?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
                .to_string();
            if !seen.insert(name.clone()) {
                return Err(Error::Format(format!("duplicate tensor {name:?}")));
            }
            let dtype = r.u8()?;
            if dtype != DTYPE_F32 {
                return Err(Error::Format(format!("tensor {name:?} has unknown dtype {dtype}")));
            }
            let rank = r.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            let mut numel: usize = 1;
            for _ in 0..rank {
                let d = usize::try_from(r.u64()?).map_err(|_| Error::Format("dimension overflow".into()))?;
                numel = numel.checked_mul(d).ok_or_else(|| Error::Format("dimension overflow".into()))?;
                shape.push(d);
            }
            let payload = r.take(numel.checked_mul(4).ok_or_else(|| Error::Format("size overflow".into()))?)?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        if r.at != body.len() {
            return Err(Error::Format(format!("{} trailing bytes", body.len() - r.at)));
        }
        Ok(Self {
            kind,
            vocab,
            meta,
            tensors,
        })
    }

    fn expect_kind(&self, kind: ModelKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Format(format!("archive holds {:?}, expected {kind:?}", self.kind)));
        }
        Ok(())
    }

    fn take_vocab(&mut self) -> Result<Vocab> {
        self.vocab.take().ok_or_else(|| Error::Format("archive has no vocabulary".into()))
    }

    fn meta_field<T: for<'de> Deserialize<'de>>(&self, key: &str) -> Result<T> {
        let v = self.meta.get(key).ok_or_else(|| Error::Format(format!("metadata lacks {key:?}")))?;
        serde_json::from_value(v.clone()).map_err(|e| Error::Format(format!("metadata {key:?}: {e}")))
    }

    fn params(&mut self) -> ParamSet {
        let mut p = ParamSet::new();
        for (name, t) in std::mem::take(&mut self.tensors) {
            p.insert(name, t);
        }
        p
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Format(format!("archive ends inside a field at byte {}", self.at))
        })?;
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn block_str(&mut self) -> Result<&'a str> {
        let n = self.u32()? as usize;
        std::str::from_utf8(self.take(n)?).map_err(|_| Error::Format("text block is not UTF-8".into()))
    }
}

fn named_tensors(p: &ParamSet) -> Vec<(String, Tensor)> {
    p.names().iter().cloned().zip(p.tensors().iter().cloned()).collect()
}

/// Objects that can be written to and read from an archive.
pub trait Persist: Sized {
    const KIND: ModelKind;
    fn to_archive(&self) -> Archive;
    fn from_archive(a: Archive) -> Result<Self>;
}

impl Persist for LmModel {
    const KIND: ModelKind = ModelKind::Lm;

    fn to_archive(&self) -> Archive {
        Archive {
            kind: Self::KIND,
            vocab: Some(self.vocab().clone()),
            meta: json!({ "config": self.config() }),
            tensors: named_tensors(self.params()),
        }
    }

    fn from_archive(mut a: Archive) -> Result<Self> {
        a.expect_kind(Self::KIND)?;
        let config: TransformerConfig = a.meta_field("config")?;
        let vocab = a.take_vocab()?;
        let params = a.params();
        LmModel::from_parts(vocab, config, params)
    }
}

impl Persist for CrfModel {
    const KIND: ModelKind = ModelKind::Crf;

    fn to_archive(&self) -> Archive {
        Archive {
            kind: Self::KIND,
            vocab: Some(self.vocab().clone()),
            meta: json!({ "config": self.config(), "rank": self.rank() }),
            tensors: named_tensors(self.params()),
        }
    }

    fn from_archive(mut a: Archive) -> Result<Self> {
        a.expect_kind(Self::KIND)?;
        let config: TransformerConfig = a.meta_field("config")?;
        let rank: usize = a.meta_field("rank")?;
        let vocab = a.take_vocab()?;
        let params = a.params();
        let m = CrfModel::from_parts(vocab, config, params)?;
        if m.rank() != rank {
            return Err(Error::Format(format!("metadata rank {rank} but tensors have rank {}", m.rank())));
        }
        Ok(m)
    }
}

impl Persist for NullDetectorModel {
    const KIND: ModelKind = ModelKind::NullDetector;

    fn to_archive(&self) -> Archive {
        Archive {
            kind: Self::KIND,
            vocab: Some(self.model.vocab().clone()),
            meta: json!({
                "config": self.model.config(),
                "insert_rate": self.insert_rate,
                "mask_rate": self.mask_rate,
            }),
            tensors: named_tensors(self.model.params()),
        }
    }

    fn from_archive(mut a: Archive) -> Result<Self> {
        a.expect_kind(Self::KIND)?;
        let config: TransformerConfig = a.meta_field("config")?;
        let insert_rate = a.meta_field("insert_rate")?;
        let mask_rate = a.meta_field("mask_rate")?;
        let vocab = a.take_vocab()?;
        let params = a.params();
        Ok(NullDetectorModel {
            model: MaskedLm::from_parts(vocab, config, params)?,
            insert_rate,
            mask_rate,
        })
    }
}

const VECTORS: &str = "vectors";

impl Persist for Embeddings {
    const KIND: ModelKind = ModelKind::Embeddings;

    fn to_archive(&self) -> Archive {
        let phrases: Vec<&str> = self.iter().map(|(p, _)| p).collect();
        let data: Vec<f64> = self.iter().flat_map(|(_, v)| v.iter().copied()).collect();
        Archive {
            kind: Self::KIND,
            vocab: None,
            meta: json!({ "dim": self.dim(), "phrases": phrases }),
            tensors: vec![(
                VECTORS.to_string(),
                Tensor::new(vec![phrases.len(), self.dim()], data).expect("consistent shape"),
            )],
        }
    }

    fn from_archive(a: Archive) -> Result<Self> {
        a.expect_kind(Self::KIND)?;
        let dim: usize = a.meta_field("dim")?;
        let phrases: Vec<String> = a.meta_field("phrases")?;
        let t = match a.tensors.as_slice() {
            [(name, t)] if name == VECTORS => t,
            _ => return Err(Error::Format(format!("expected a single {VECTORS:?} tensor"))),
        };
        if t.shape() != [phrases.len(), dim] {
            return Err(Error::Format(format!(
                "vectors are {:?} for {} phrases of dimension {dim}",
                t.shape(),
                phrases.len()
            )));
        }
        let mut e = Embeddings::new(dim);
        for (i, p) in phrases.into_iter().enumerate() {
            e.insert(p, t.data()[i * dim..(i + 1) * dim].to_vec())?;
        }
        Ok(e)
    }
}

pub fn to_bytes<T: Persist>(obj: &T) -> Result<Vec<u8>> {
    obj.to_archive().to_bytes()
}

pub fn from_bytes<T: Persist>(bytes: &[u8]) -> Result<T> {
    T::from_archive(Archive::from_bytes(bytes)?)
}

/// Writes through a temporary sibling file and renames it into place.
pub fn save<T: Persist>(obj: &T, path: &Path) -> Result<()> {
    let bytes = to_bytes(obj)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

pub fn load<T: Persist>(path: &Path) -> Result<T> {
    from_bytes(&fs::read(path)?)
}

/// Kind of the archive at `path`, after full validation.
pub fn peek_kind(path: &Path) -> Result<ModelKind> {
    Ok(Archive::from_bytes(&fs::read(path)?)?.kind)
}
