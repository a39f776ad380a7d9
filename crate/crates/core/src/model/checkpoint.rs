//! Binary checkpoint format (all integers and floats little-endian):
//!
//! ```text
//! magic        8 bytes   "CONCFCKP"
//! version      u32       1
//! num_users    u64
//! num_items    u64
//! dim          u32
//! sharing      u8        0 full, 1 embedding+one layer, 2 embedding only, 3 none
//! head_count   u8
//! heads        u8 × head_count   0 = A … 4 = E
//! tensors      u32 count, then per tensor:
//!                u32 name length, name (UTF-8), u64 rows, u64 cols,
//!                rows × cols f64 in row-major order
//! has_adam     u8        0 or 1; if 1:
//!                u64 step, f64 beta1, f64 beta2, f64 eps, f64 weight_decay,
//!                first moments then second moments, each as rows × cols f64
//!                per tensor in tensor order
//! ```
//!
//! Floats are stored by bit pattern, so save/load round-trips exactly.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::{Adam, HeadId, ModelParams, ModelShape, SharingLevel};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"CONCFCKP";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub adam: Option<Adam>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let p = &self.params;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(p.num_users() as u64).to_le_bytes());
        out.extend_from_slice(&(p.num_items() as u64).to_le_bytes());
        out.extend_from_slice(&(p.dim() as u32).to_le_bytes());
        out.push(p.sharing().code());
        out.push(p.heads().len() as u8);
        out.extend(p.heads().iter().map(|h| h.code()));
        out.extend_from_slice(&(p.tensors().len() as u32).to_le_bytes());
        for t in p.tensors() {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            let (r, c) = t.value.dim();
            out.extend_from_slice(&(r as u64).to_le_bytes());
            out.extend_from_slice(&(c as u64).to_le_bytes());
            put_floats(&mut out, &t.value);
        }
        match &self.adam {
            None => out.push(0),
            Some(adam) => {
                out.push(1);
                out.extend_from_slice(&adam.step.to_le_bytes());
                for x in [adam.beta1, adam.beta2, adam.eps, adam.weight_decay] {
                    out.extend_from_slice(&x.to_le_bytes());
                }
                for m in adam.m.iter().chain(&adam.v) {
                    put_floats(&mut out, m);
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let num_users = r.u64()? as usize;
        let num_items = r.u64()? as usize;
        let dim = r.u32()? as usize;
        let sharing = SharingLevel::from_code(r.u8()?)
            .ok_or_else(|| Error::Format("unknown sharing level code".into()))?;
        let n_heads = r.u8()? as usize;
        let heads = (0..n_heads)
            .map(|_| {
                let code = r.u8()?;
                HeadId::from_code(code).ok_or_else(|| Error::Format(format!("unknown head code {code}")))
            })
            .collect::<Result<Vec<_>>>()?;

        let mut params = ModelParams::init(
            ModelShape {
                num_users,
                num_items,
                dim,
                sharing,
                heads,
            },
            0,
        )?;
        let count = r.u32()? as usize;
        if count != params.tensors().len() {
            return Err(Error::Format(format!(
                "checkpoint holds {count} tensors, layout expects {}",
                params.tensors().len()
            )));
        }
        for t in params.tensors_mut() {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            if name != t.name || (rows, cols) != t.value.dim() {
                return Err(Error::Format(format!(
                    "tensor {name} {rows}x{cols} does not match expected {} {:?}",
                    t.name,
                    t.value.dim()
                )));
            }
            r.floats_into(&mut t.value)?;
        }

        let adam = match r.u8()? {
            0 => None,
            1 => {
                let mut adam = Adam::new(&params);
                adam.step = r.u64()?;
                adam.beta1 = r.f64()?;
                adam.beta2 = r.f64()?;
                adam.eps = r.f64()?;
                adam.weight_decay = r.f64()?;
                for m in adam.m.iter_mut().chain(adam.v.iter_mut()) {
                    r.floats_into(m)?;
                }
                Some(adam)
            }
            other => return Err(Error::Format(format!("bad optimizer flag {other}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Self { params, adam })
    }
}

fn put_floats(out: &mut Vec<u8>, a: &Array2<f64>) {
    out.reserve(a.len() * 8);
    for x in a.iter() {
        out.extend_from_slice(&x.to_le_bytes());
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
            .ok_or_else(|| Error::Format("unexpected end of data".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn floats_into(&mut self, a: &mut Array2<f64>) -> Result<()> {
        for x in a.iter_mut() {
            *x = self.f64()?;
        }
        Ok(())
    }
}

pub(crate) struct ByteReader<'a>(Reader<'a>);

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self(Reader { bytes, pos: 0 })
    }
    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        self.0.take(n)
    }
    pub(crate) fn u8(&mut self) -> Result<u8> {
        self.0.u8()
    }
    pub(crate) fn u32(&mut self) -> Result<u32> {
        self.0.u32()
    }
    pub(crate) fn u64(&mut self) -> Result<u64> {
        self.0.u64()
    }
    pub(crate) fn finished(&self) -> bool {
        self.0.pos == self.0.bytes.len()
    }
}

pub fn write_checkpoint(path: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, checkpoint.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
