//! Binary container for parameter sets.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic  b"APFL"
//! u32    format version (currently 1)
//! u32    layer count
//! per layer:
//!   u32      name byte length, then UTF-8 name bytes
//!   u8       activation code (0 identity, 1 rectifier)
//!   tensor   weight
//!   tensor   bias
//! tensor:
//!   u32      rank, then rank * u32 dims, then product(dims) * f64 values
//! ```
//!
//! Round-trips are bit-exact: every f64 is stored via its raw bit pattern.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::params::{Activation, Layer, ParamSet};
use crate::numerics::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"APFL";
pub const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, t: &Tensor) {
    put_u32(out, t.shape().len() as u32);
    for &d in t.shape() {
        put_u32(out, d as u32);
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serialise a parameter set to the container format.
pub fn to_bytes(params: &ParamSet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, params.layers().len() as u32);
    for layer in params.layers() {
        put_u32(&mut out, layer.name.len() as u32);
        out.extend_from_slice(layer.name.as_bytes());
        out.push(layer.activation.code());
        put_tensor(&mut out, &layer.weight);
        put_tensor(&mut out, &layer.bias);
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Parse {
                line: 0,
                msg: format!(
                    "container truncated: wanted {n} bytes at offset {}",
                    self.pos
                ),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(Error::Parse {
                line: 0,
                msg: format!("implausible tensor rank {rank}"),
            });
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32()? as usize);
        }
        let len: usize = shape.iter().product();
        let raw = self.take(len * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| {
                f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]])
            })
            .collect();
        Tensor::new(shape, data)
    }
}

/// Parse a parameter set from container bytes.
pub fn from_bytes(buf: &[u8]) -> Result<ParamSet> {
    let mut r = Reader { buf, pos: 0 };
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::Parse {
            line: 0,
            msg: "bad magic: not a parameter container".into(),
        });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Parse {
            line: 0,
            msg: format!("unsupported container version {version}"),
        });
    }
    let n_layers = r.u32()? as usize;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Parse {
                line: 0,
                msg: "layer name is not valid UTF-8".into(),
            })?
            .to_string();
        let activation = Activation::from_code(r.u8()?)?;
        let weight = r.tensor()?;
        let bias = r.tensor()?;
        layers.push(Layer {
            name,
            activation,
            weight,
            bias,
        });
    }
    if r.pos != buf.len() {
        return Err(Error::Parse {
            line: 0,
            msg: format!("{} trailing bytes after container", buf.len() - r.pos),
        });
    }
    ParamSet::new(layers)
}

pub fn save_params(params: &ParamSet, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&to_bytes(params))?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<ParamSet> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    from_bytes(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn sample() -> ParamSet {
        let mut r = rng::stream(42, &[rng::tag("serialize-test")]);
        ParamSet::init_xavier(
            &[5, 8, 3],
            &[Activation::Relu, Activation::Identity],
            &mut r,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let params = sample();
        let bytes = to_bytes(&params);
        let back = from_bytes(&bytes).unwrap();
        assert!(params.layout_equal(&back));
        let a = params.flatten();
        let b = back.flatten();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        // Serialisation is deterministic byte-for-byte.
        assert_eq!(bytes, to_bytes(&back));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let params = sample();
        save_params(&params, &path).unwrap();
        let back = load_params(&path).unwrap();
        assert_eq!(params, back);
    }

    #[test]
    fn rejects_bad_magic() {
        let mut bytes = to_bytes(&sample());
        bytes[0] = b'X';
        assert!(from_bytes(&bytes).is_err());
    }

    #[test]
    fn rejects_unknown_version() {
        let mut bytes = to_bytes(&sample());
        bytes[4] = 99;
        assert!(from_bytes(&bytes).is_err());
    }

    #[test]
    fn rejects_truncation_and_trailing_garbage() {
        let bytes = to_bytes(&sample());
        assert!(from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut extended = bytes.clone();
        extended.push(0);
        assert!(from_bytes(&extended).is_err());
    }
}
