//! Checkpoint file, little-endian:
//!
//! ```text
//! b"DFCK" | version u32
//! config length u32 | config text (UTF-8, config-file format)
//! global step u64
//! rng: seed u64 | state 4×u64 | has spare u8 | spare normal f64
//! optimizer step u64
//! tensor count u32, then per tensor in name order:
//!   name length u16 | name | ndim u8 | ndim × u32 | f32 values
//!   has moments u8 | [first moment f32 values | second moment f32 values]
//! ```
//!
//! Writing is a pure function of the state, so save → load → save is
//! byte-identical.

use std::collections::BTreeMap;
use std::path::Path;

use pcdiff_core::numerics::adamw::Moments;
use pcdiff_core::numerics::rng::RngState;
use pcdiff_core::{AdamW, Error, ParamStore, Tensor};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 4] = b"DFCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub step: u64,
    pub params: ParamStore<f32>,
    pub optimizer: AdamW<f32>,
    pub rng: RngState,
}

fn put_f32s(out: &mut Vec<u8>, xs: &[f32]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let text = self.config.to_text();
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.rng.seed.to_le_bytes());
        for s in self.rng.state {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out.push(self.rng.spare_normal.is_some() as u8);
        out.extend_from_slice(&self.rng.spare_normal.unwrap_or(0.0).to_le_bytes());
        out.extend_from_slice(&self.optimizer.step_count().to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            put_f32s(&mut out, t.data());
            match self.optimizer.moments().get(name) {
                Some(m) => {
                    out.push(1);
                    put_f32s(&mut out, &m.m);
                    put_f32s(&mut out, &m.v);
                }
                None => out.push(0),
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> pcdiff_core::Result<Checkpoint> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(r.err_at(0, "bad magic, expected \"DFCK\""));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.err_at(4, format!("unsupported version {version}")));
        }
        let len = r.u32()? as usize;
        let at = r.pos;
        let text = std::str::from_utf8(r.take(len)?).map_err(|_| r.err_at(at, "config is not UTF-8"))?;
        let config = RunConfig::parse(text).map_err(|e| r.err_at(at, format!("embedded config: {e}")))?;
        let step = r.u64()?;
        let seed = r.u64()?;
        let state = [r.u64()?, r.u64()?, r.u64()?, r.u64()?];
        let has_spare = r.u8()? != 0;
        let spare = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
        let rng = RngState {
            seed,
            state,
            spare_normal: has_spare.then_some(spare),
        };
        let opt_step = r.u64()?;
        let count = r.u32()? as usize;
        let mut params = ParamStore::new();
        let mut moments = BTreeMap::new();
        for _ in 0..count {
            let n = r.u16()? as usize;
            let at = r.pos;
            let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| r.err_at(at, "tensor name is not UTF-8"))?;
            let ndim = r.u8()? as usize;
            let shape: Vec<usize> = (0..ndim)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<_, _>>()?;
            let numel: usize = shape.iter().product();
            let at = r.pos;
            let data = r.f32s(numel)?;
            let tensor = Tensor::new(&shape, data).map_err(|e| r.err_at(at, format!("tensor `{name}`: {e}")))?;
            if r.u8()? != 0 {
                let m = r.f32s(numel)?;
                let v = r.f32s(numel)?;
                moments.insert(name.clone(), Moments { m, v });
            }
            params
                .insert(name.clone(), tensor)
                .map_err(|e| r.err_at(at, e.to_string()))?;
        }
        if r.pos != buf.len() {
            return Err(r.err_at(r.pos, "trailing bytes"));
        }
        let expected = config.model.param_shapes();
        if expected.len() != params.len()
            || expected
                .iter()
                .any(|(n, s)| params.get(n).map(|t| t.shape() != s.as_slice()).unwrap_or(true))
        {
            return Err(r.err_at(0, "tensors do not match the embedded configuration"));
        }
        let optimizer = AdamW::from_parts(config.optimizer, opt_step, moments);
        Ok(Checkpoint {
            config,
            step,
            params,
            optimizer,
            rng,
        })
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| CliError::at(path)(e.into()))
    }

    pub fn load(path: &Path) -> CliResult<Checkpoint> {
        let bytes = std::fs::read(path).map_err(|e| CliError::at(path)(e.into()))?;
        Checkpoint::from_bytes(&bytes).map_err(CliError::at(path))
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err_at(&self, offset: usize, msg: impl Into<String>) -> Error {
        Error::Format {
            offset: offset as u64,
            record: None,
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize) -> pcdiff_core::Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.err_at(self.pos, "unexpected end of file"));
        }
        self.pos += n;
        Ok(&self.buf[self.pos - n..self.pos])
    }

    fn u8(&mut self) -> pcdiff_core::Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> pcdiff_core::Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> pcdiff_core::Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> pcdiff_core::Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> pcdiff_core::Result<Vec<f32>> {
        let bytes = self.take(n * 4)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}
