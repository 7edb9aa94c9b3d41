//! Minimal binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "CMIX" | u32 version | u64 step | u64 epoch
//! u32 len | run config text
//! u32 count | count × (u32 len | name | u8 kind | u32 rank | rank × u32 dim | f32 payload)
//! u8 has_optimizer | [u64 step | u32 count | count × (u64 len | m | v)]
//! ```

use std::path::Path;

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::{ConvMixerModel, TensorKind};
use crate::optim::{Moments, OptimizerState};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"CMIX";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub kind: TensorKind,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub tensors: Vec<TensorRecord>,
    pub optimizer: Option<OptimizerState>,
    /// Optimizer steps taken so far.
    pub step: u64,
    /// Completed epochs.
    pub epoch: u64,
}

impl Checkpoint {
    pub fn from_model(
        config: &RunConfig,
        model: &ConvMixerModel,
        optimizer: Option<&OptimizerState>,
        step: u64,
        epoch: u64,
    ) -> Self {
        let tensors = model
            .named_tensors()
            .into_iter()
            .map(|(name, t, kind)| TensorRecord {
                name,
                kind,
                dims: t.dims().to_vec(),
                data: t.to_vec(),
            })
            .collect();
        Self {
            config: config.clone(),
            tensors,
            optimizer: optimizer.cloned(),
            step,
            epoch,
        }
    }

    /// Rebuilds the model described by the stored config and loads every
    /// tensor into it.
    pub fn to_model(&self) -> Result<ConvMixerModel> {
        let mut model = ConvMixerModel::build(&self.config.model, 0)?;
        let expected = model.named_tensors();
        if expected.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                expected.len(),
                self.tensors.len()
            )));
        }
        for ((name, _, kind), rec) in expected.iter().zip(&self.tensors) {
            if *name != rec.name || *kind != rec.kind {
                return Err(Error::Checkpoint(format!(
                    "expected tensor {name:?}, found {:?}",
                    rec.name
                )));
            }
            model.set_tensor(&rec.name, Tensor::new(rec.data.clone(), &rec.dims)?)?;
        }
        Ok(model)
    }

    pub fn tensor(&self, name: &str) -> Option<&TensorRecord> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(MAGIC);
        put_u32(&mut w, FORMAT_VERSION);
        put_u64(&mut w, self.step);
        put_u64(&mut w, self.epoch);
        put_str(&mut w, &self.config.to_text());
        put_u32(&mut w, self.tensors.len() as u32);
        for t in &self.tensors {
            put_str(&mut w, &t.name);
            w.push(match t.kind {
                TensorKind::Parameter => 0,
                TensorKind::Buffer => 1,
            });
            put_u32(&mut w, t.dims.len() as u32);
            for &d in &t.dims {
                put_u32(&mut w, d as u32);
            }
            put_f32s(&mut w, &t.data);
        }
        match &self.optimizer {
            None => w.push(0),
            Some(opt) => {
                w.push(1);
                put_u64(&mut w, opt.step);
                put_u32(&mut w, opt.moments.len() as u32);
                for m in &opt.moments {
                    put_u64(&mut w, m.m.len() as u64);
                    put_f32s(&mut w, &m.m);
                    put_f32s(&mut w, &m.v);
                }
            }
        }
        w
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version}"
            )));
        }
        let step = r.u64()?;
        let epoch = r.u64()?;
        let config = RunConfig::from_text(&r.string()?)?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name = r.string()?;
            let kind = match r.u8()? {
                0 => TensorKind::Parameter,
                1 => TensorKind::Buffer,
                k => {
                    return Err(Error::Checkpoint(format!(
                        "bad tensor kind {k} for {name:?}"
                    )))
                }
            };
            let rank = r.u32()? as usize;
            let dims = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Checkpoint(format!("tensor {name:?} too large")))?;
            let data = r.f32s(numel)?;
            tensors.push(TensorRecord {
                name,
                kind,
                dims,
                data,
            });
        }
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let opt_step = r.u64()?;
                let n = r.u32()? as usize;
                let mut moments = Vec::with_capacity(n.min(4096));
                for _ in 0..n {
                    let len = r.u64()? as usize;
                    let m = r.f32s(len)?;
                    let v = r.f32s(len)?;
                    moments.push(Moments { m, v });
                }
                Some(OptimizerState {
                    moments,
                    step: opt_step,
                })
            }
            f => return Err(Error::Checkpoint(format!("bad optimizer flag {f}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            config,
            tensors,
            optimizer,
            step,
            epoch,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        // Write then rename so an interrupted save never leaves a torn file.
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn put_u32(w: &mut Vec<u8>, v: u32) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(w: &mut Vec<u8>, v: u64) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_str(w: &mut Vec<u8>, s: &str) {
    put_u32(w, s.len() as u32);
    w.extend_from_slice(s.as_bytes());
}

fn put_f32s(w: &mut Vec<u8>, values: &[f32]) {
    w.reserve(values.len() * 4);
    for v in values {
        w.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("invalid UTF-8 string".into()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::Checkpoint("length overflow".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}
