//! Binary persistence.
//!
//! Weights (`FSN1`): magic, `u32` version, `u32` entry count, then per entry a
//! `u32` name length, the UTF-8 name, four `u32` dims and the values as
//! little-endian `f32`.
//!
//! Checkpoints (`FSC1`) hold everything needed to resume training exactly:
//! `f64` parameters, Adam moments and step, completed epochs, seed and the
//! log so far.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{FusionNet, Parameter};
use crate::tensor::{Shape, Tensor};
use crate::trainer::{EpochLog, OptimState};

const WEIGHTS_MAGIC: &[u8; 4] = b"FSN1";
const CHECKPOINT_MAGIC: &[u8; 4] = b"FSC1";
const VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn name(&mut self, s: &str) {
        self.u32(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }

    fn shape(&mut self, s: Shape) {
        for d in s.0 {
            self.u32(d);
        }
    }

    fn tensor_f64(&mut self, t: &Tensor) {
        for &v in t.data() {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.fail(format!("truncated at byte {}", self.pos))),
        }
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(self.fail(format!(
                "bad magic, expected {}",
                String::from_utf8_lossy(magic)
            )));
        }
        let version = self.u32()?;
        if version != VERSION as usize {
            return Err(self.fail(format!("unsupported version {version}")));
        }
        Ok(())
    }

    fn name(&mut self) -> Result<String> {
        let len = self.u32()?;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| self.fail("parameter name is not UTF-8"))
    }

    fn shape(&mut self) -> Result<Shape> {
        let mut dims = [0; 4];
        for d in dims.iter_mut() {
            *d = self.u32()?;
        }
        Ok(Shape(dims))
    }

    fn tensor_f64(&mut self, shape: Shape) -> Result<Tensor> {
        let numel = shape.numel();
        if numel > (self.buf.len() - self.pos) / 8 {
            return Err(self.fail(format!("tensor {shape} exceeds the file")));
        }
        let data = (0..numel).map(|_| self.f64()).collect::<Result<_>>()?;
        Tensor::new(shape, data)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.fail(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes through a temporary sibling so a crash never leaves a torn file.
fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn encode_weights(net: &FusionNet) -> Vec<u8> {
    let mut w = Writer(WEIGHTS_MAGIC.to_vec());
    w.u32(VERSION as usize);
    w.u32(net.parameters().len());
    for p in net.parameters() {
        w.name(&p.name);
        w.shape(p.value.shape());
        for &v in p.value.data() {
            w.0.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    w.0
}

pub fn decode_weights(bytes: &[u8], path: &Path) -> Result<FusionNet> {
    let mut r = Reader { buf: bytes, pos: 0, path };
    r.header(WEIGHTS_MAGIC)?;
    let count = r.u32()?;
    let mut params = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name = r.name()?;
        let shape = r.shape()?;
        if shape.numel() > (bytes.len() - r.pos) / 4 {
            return Err(r.fail(format!("{name} ({shape}) exceeds the file")));
        }
        let raw = r.take(4 * shape.numel())?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        params.push(Parameter {
            name,
            value: Tensor::new(shape, data)?,
        });
    }
    r.finish()?;
    FusionNet::from_parameters(params).map_err(|e| r.fail(e.to_string()))
}

pub fn save_weights(net: &FusionNet, path: &Path) -> Result<()> {
    write(path, &encode_weights(net))
}

pub fn load_weights(path: &Path) -> Result<FusionNet> {
    decode_weights(&read(path)?, path)
}

/// Training state after `epoch` completed epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub epoch: usize,
    pub seed: u64,
    pub net: FusionNet,
    pub optim: OptimState,
    pub log: Vec<EpochLog>,
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut w = Writer(CHECKPOINT_MAGIC.to_vec());
    w.u32(VERSION as usize);
    w.u32(ck.epoch);
    w.u64(ck.seed);
    w.u64(ck.optim.t);
    for v in [ck.optim.beta1, ck.optim.beta2, ck.optim.eps] {
        w.f64(v);
    }
    let params = ck.net.parameters();
    w.u32(params.len());
    for (i, p) in params.iter().enumerate() {
        w.name(&p.name);
        w.shape(p.value.shape());
        w.tensor_f64(&p.value);
        w.tensor_f64(&ck.optim.m[i]);
        w.tensor_f64(&ck.optim.v[i]);
    }
    w.u32(ck.log.len());
    for e in &ck.log {
        w.u32(e.epoch);
        for v in [e.lr, e.loss, e.heldout_loss, e.heldout_qw, e.heldout_qe] {
            w.f64(v);
        }
    }
    w.0
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0, path };
    r.header(CHECKPOINT_MAGIC)?;
    let epoch = r.u32()?;
    let seed = r.u64()?;
    let t = r.u64()?;
    let (beta1, beta2, eps) = (r.f64()?, r.f64()?, r.f64()?);
    let count = r.u32()?;
    let (mut params, mut m, mut v) = (Vec::new(), Vec::new(), Vec::new());
    let mut names = Vec::new();
    for _ in 0..count {
        let name = r.name()?;
        let shape = r.shape()?;
        names.push(name.clone());
        params.push(Parameter {
            name,
            value: r.tensor_f64(shape)?,
        });
        m.push(r.tensor_f64(shape)?);
        v.push(r.tensor_f64(shape)?);
    }
    let entries = r.u32()?;
    let mut log = Vec::with_capacity(entries.min(1 << 16));
    for _ in 0..entries {
        log.push(EpochLog {
            epoch: r.u32()?,
            lr: r.f64()?,
            loss: r.f64()?,
            heldout_loss: r.f64()?,
            heldout_qw: r.f64()?,
            heldout_qe: r.f64()?,
        });
    }
    r.finish()?;
    // Storage order is the layout order, so moments stay aligned with parameters.
    let net = FusionNet::from_parameters(params).map_err(|e| r.fail(e.to_string()))?;
    let aligned = net.parameters().iter().zip(&names).all(|(p, n)| &p.name == n);
    if !aligned {
        return Err(r.fail("optimizer moments do not match the parameters"));
    }
    Ok(Checkpoint {
        epoch,
        seed,
        net,
        optim: OptimState {
            beta1,
            beta2,
            eps,
            t,
            m,
            v,
        },
        log,
    })
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    write(path, &encode_checkpoint(ck))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&read(path)?, path)
}
