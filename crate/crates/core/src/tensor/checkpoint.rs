//! Binary checkpoint format.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic      8 bytes  "CPRFCKPT"
//! version    u32      currently 1
//! n_meta     u32
//!   key      u32 length + UTF-8 bytes
//!   value    u32 length + UTF-8 bytes
//! n_params   u32
//!   name     u32 length + UTF-8 bytes
//!   ndim     u32
//!   dims     ndim x u64
//!   values   prod(dims) x f64
//! has_opt    u8       0 or 1
//!   step     u64
//!   lr, beta1, beta2, eps   4 x f64
//!   m        per parameter, prod(dims) x f64
//!   v        per parameter, prod(dims) x f64
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{AdamConfig, OptimizerState, ParamStore, Tensor, TensorError};

pub const MAGIC: &[u8; 8] = b"CPRFCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Free-form key/value pairs (configuration, vocabulary, epoch, ...).
    pub metadata: Vec<(String, String)>,
    pub params: ParamStore,
    pub optimizer: Option<OptimizerState>,
}

fn bad(msg: impl Into<String>) -> TensorError {
    TensorError::Checkpoint(msg.into())
}

fn write_u32(w: &mut impl Write, x: u32) -> std::io::Result<()> {
    w.write_all(&x.to_le_bytes())
}

fn write_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    write_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn write_f64s(w: &mut impl Write, xs: &[f64]) -> std::io::Result<()> {
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N], TensorError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => bad("truncated file"),
        _ => TensorError::Io(e),
    })?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read) -> Result<u32, TensorError> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_u64(r: &mut impl Read) -> Result<u64, TensorError> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

fn read_f64(r: &mut impl Read) -> Result<f64, TensorError> {
    Ok(f64::from_le_bytes(read_array(r)?))
}

fn read_str(r: &mut impl Read) -> Result<String, TensorError> {
    let n = read_u32(r)? as usize;
    let mut buf = Vec::new();
    r.take(n as u64).read_to_end(&mut buf)?;
    if buf.len() != n {
        return Err(bad("truncated string"));
    }
    String::from_utf8(buf).map_err(|_| bad("string is not UTF-8"))
}

fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>, TensorError> {
    (0..n).map(|_| read_f64(r)).collect()
}

impl Checkpoint {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), TensorError> {
        w.write_all(MAGIC)?;
        write_u32(&mut w, VERSION)?;
        write_u32(&mut w, self.metadata.len() as u32)?;
        for (k, v) in &self.metadata {
            write_str(&mut w, k)?;
            write_str(&mut w, v)?;
        }
        write_u32(&mut w, self.params.len() as u32)?;
        for (_, name, t) in self.params.iter() {
            write_str(&mut w, name)?;
            write_u32(&mut w, t.shape().len() as u32)?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            write_f64s(&mut w, t.data())?;
        }
        match &self.optimizer {
            None => w.write_all(&[0])?,
            Some(opt) => {
                w.write_all(&[1])?;
                w.write_all(&opt.step.to_le_bytes())?;
                let c = opt.config;
                write_f64s(&mut w, &[c.lr, c.beta1, c.beta2, c.eps])?;
                for m in &opt.m {
                    write_f64s(&mut w, m)?;
                }
                for v in &opt.v {
                    write_f64s(&mut w, v)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, TensorError> {
        let magic: [u8; 8] = read_array(&mut r)?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let n_meta = read_u32(&mut r)?;
        let mut metadata = Vec::new();
        for _ in 0..n_meta {
            let k = read_str(&mut r)?;
            let v = read_str(&mut r)?;
            metadata.push((k, v));
        }
        let n_params = read_u32(&mut r)?;
        let mut params = ParamStore::new();
        let mut sizes = Vec::new();
        for _ in 0..n_params {
            let name = read_str(&mut r)?;
            let ndim = read_u32(&mut r)?;
            let shape = (0..ndim)
                .map(|_| read_u64(&mut r).map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let n: usize = shape.iter().product();
            let data = read_f64s(&mut r, n)?;
            if params.id_of(&name).is_some() {
                return Err(bad(format!("duplicate parameter '{name}'")));
            }
            params.add(name, Tensor::new(shape, data)?);
            sizes.push(n);
        }
        let [flag] = read_array::<1>(&mut r)?;
        let optimizer = match flag {
            0 => None,
            1 => {
                let step = read_u64(&mut r)?;
                let lr = read_f64(&mut r)?;
                let beta1 = read_f64(&mut r)?;
                let beta2 = read_f64(&mut r)?;
                let eps = read_f64(&mut r)?;
                let m = sizes
                    .iter()
                    .map(|&n| read_f64s(&mut r, n))
                    .collect::<Result<Vec<_>, _>>()?;
                let v = sizes
                    .iter()
                    .map(|&n| read_f64s(&mut r, n))
                    .collect::<Result<Vec<_>, _>>()?;
                Some(OptimizerState {
                    config: AdamConfig {
                        lr,
                        beta1,
                        beta2,
                        eps,
                    },
                    step,
                    m,
                    v,
                })
            }
            _ => return Err(bad("bad optimizer flag")),
        };
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(bad("trailing bytes"));
        }
        Ok(Checkpoint {
            metadata,
            params,
            optimizer,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory cannot fail");
        buf
    }

    pub fn save(&self, path: &Path) -> Result<(), TensorError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TensorError> {
        let r = std::io::BufReader::new(std::fs::File::open(path)?);
        Checkpoint::read_from(r)
    }
}
