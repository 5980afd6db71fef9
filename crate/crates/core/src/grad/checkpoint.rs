//! Versioned binary parameter checkpoints.
//!
//! Layout (little-endian): magic `TWMGCKPT`, `u32` version, `u8` precision
//! (0 = f32, 1 = f64), `u64` seed, `u64` epoch, `u32` network count, then
//! per network: `u32` name length, name bytes, `u64` init seed, `u32` layer
//! size count, `u64` sizes, `u8` activation per layer, `u64` parameter count
//! and the parameters as `f64`.

use std::path::Path;

use crate::config::Precision;
use crate::error::{Error, Result};
use crate::grad::net::{Activation, DenseNet};
use crate::grad::Real;

const MAGIC: &[u8; 8] = b"TWMGCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NetRecord {
    pub name: String,
    pub dims: Vec<usize>,
    pub activations: Vec<Activation>,
    pub seed: u64,
    pub params: Vec<f64>,
}

impl NetRecord {
    pub fn of<F: Real>(name: &str, net: &DenseNet<F>) -> Self {
        NetRecord {
            name: name.to_string(),
            dims: net.dims().to_vec(),
            activations: net.activations().to_vec(),
            seed: net.seed(),
            params: net.params().iter().map(|v| v.as_f64()).collect(),
        }
    }

    pub fn to_net<F: Real>(&self) -> Result<DenseNet<F>> {
        DenseNet::from_parts(
            &self.dims,
            self.activations.clone(),
            self.params.iter().map(|&v| F::of(v)).collect(),
            self.seed,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub precision: Precision,
    pub seed: u64,
    pub epoch: u64,
    pub nets: Vec<NetRecord>,
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
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
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
}

impl Checkpoint {
    pub fn net(&self, name: &str) -> Result<&NetRecord> {
        self.nets
            .iter()
            .find(|n| n.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("no network named `{name}`")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(match self.precision {
            Precision::F32 => 0,
            Precision::F64 => 1,
        });
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&(self.nets.len() as u32).to_le_bytes());
        for n in &self.nets {
            out.extend_from_slice(&(n.name.len() as u32).to_le_bytes());
            out.extend_from_slice(n.name.as_bytes());
            out.extend_from_slice(&n.seed.to_le_bytes());
            out.extend_from_slice(&(n.dims.len() as u32).to_le_bytes());
            for &d in &n.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for a in &n.activations {
                out.push(a.code());
            }
            out.extend_from_slice(&(n.params.len() as u64).to_le_bytes());
            for p in &n.params {
                out.extend_from_slice(&p.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let precision = match r.u8()? {
            0 => Precision::F32,
            1 => Precision::F64,
            other => return Err(Error::Checkpoint(format!("bad precision tag {other}"))),
        };
        let seed = r.u64()?;
        let epoch = r.u64()?;
        let count = r.u32()?;
        let mut nets = Vec::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Checkpoint("network name is not UTF-8".into()))?;
            let net_seed = r.u64()?;
            let layers = r.u32()? as usize;
            let dims = (0..layers).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let activations = (0..layers.saturating_sub(1))
                .map(|_| {
                    let code = r.u8()?;
                    Activation::from_code(code)
                        .ok_or_else(|| Error::Checkpoint(format!("bad activation tag {code}")))
                })
                .collect::<Result<Vec<_>>>()?;
            let n = r.u64()? as usize;
            if n != crate::grad::net::param_count(&dims) {
                return Err(Error::Checkpoint(format!("`{name}` has a parameter count that does not match its layers")));
            }
            let params = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            nets.push(NetRecord {
                name,
                dims,
                activations,
                seed: net_seed,
                params,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Checkpoint {
            precision,
            seed,
            epoch,
            nets,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let a = DenseNet::<f32>::new(&[3, 5, 2], Activation::Silu, Activation::Identity, 11).unwrap();
        let b = DenseNet::<f32>::new(&[2, 1], Activation::Tanh, Activation::Tanh, 12).unwrap();
        Checkpoint {
            precision: Precision::F32,
            seed: 7,
            epoch: 42,
            nets: vec![NetRecord::of("actor", &a), NetRecord::of("critic", &b)],
        }
    }

    #[test]
    fn round_trips() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
        let net: DenseNet<f32> = back.net("actor").unwrap().to_net().unwrap();
        assert_eq!(NetRecord::of("actor", &net), c.nets[0]);
        assert!(back.net("missing").is_err());
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }
}
