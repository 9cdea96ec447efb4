//! Binary checkpoint container.
//!
//! All integers are little-endian `u32`, all data little-endian `f64`:
//!
//! ```text
//! "RDMK"                   4-byte magic
//! version                  u32 (currently 1)
//! count                    u32, number of tensors
//! count × tensor:
//!     name_len             u32
//!     name                 name_len bytes of UTF-8
//!     rank                 u32
//!     dims                 rank × u32
//!     data                 prod(dims) × f64
//! ```
//!
//! A convolutional denoiser is stored as its named weight tensors plus a
//! one-element `sigma_data` tensor.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::ConvDenoiserParams;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RDMK";
pub const VERSION: u32 = 1;

/// Named tensor as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit in u32")))
}

pub fn write_tensors<W: Write>(tensors: &[Tensor], mut out: W) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&to_u32(tensors.len(), "tensor count")?.to_le_bytes())?;
    for t in tensors {
        let numel: usize = t.shape.iter().product();
        if numel != t.data.len() {
            return Err(Error::Format(format!(
                "tensor `{}` has shape {:?} but {} values",
                t.name,
                t.shape,
                t.data.len()
            )));
        }
        out.write_all(&to_u32(t.name.len(), "name length")?.to_le_bytes())?;
        out.write_all(t.name.as_bytes())?;
        out.write_all(&to_u32(t.shape.len(), "rank")?.to_le_bytes())?;
        for d in &t.shape {
            out.write_all(&to_u32(*d, "dimension")?.to_le_bytes())?;
        }
        for v in &t.data {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("checkpoint is truncated".into())
    } else {
        Error::Io(e)
    }
}

/// Upper bound on the element count of a single tensor; guards allocation.
const MAX_ELEMENTS: usize = 1 << 26;

pub fn read_tensors<R: Read>(mut input: R) -> Result<Vec<Tensor>> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::Format("not an RDMK checkpoint (bad magic)".into()));
    }
    let version = read_u32(&mut input)?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let count = read_u32(&mut input)? as usize;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let len = read_u32(&mut input)? as usize;
        if len > 4096 {
            return Err(Error::Format(format!(
                "tensor name of {len} bytes is implausible"
            )));
        }
        let mut name = vec![0u8; len];
        input.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rank = read_u32(&mut input)? as usize;
        if rank > 8 {
            return Err(Error::Format(format!(
                "tensor `{name}` has implausible rank {rank}"
            )));
        }
        let shape = (0..rank)
            .map(|_| read_u32(&mut input).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, d| acc.checked_mul(*d))
            .filter(|n| *n <= MAX_ELEMENTS)
            .ok_or_else(|| Error::Format(format!("tensor `{name}` is too large")))?;
        let mut data = Vec::with_capacity(numel);
        let mut b = [0u8; 8];
        for _ in 0..numel {
            input.read_exact(&mut b).map_err(truncated)?;
            data.push(f64::from_le_bytes(b));
        }
        tensors.push(Tensor { name, shape, data });
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after last tensor".into()));
    }
    Ok(tensors)
}

impl ConvDenoiserParams {
    pub fn to_tensors(&self) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = self
            .tensors()
            .into_iter()
            .map(|(name, shape, data)| Tensor {
                name: name.to_string(),
                shape,
                data: data.to_vec(),
            })
            .collect();
        out.push(Tensor {
            name: "sigma_data".into(),
            shape: vec![1],
            data: vec![self.sigma_data()],
        });
        out
    }

    pub fn from_checkpoint_tensors(tensors: &[Tensor]) -> Result<Self> {
        let sd = tensors
            .iter()
            .find(|t| t.name == "sigma_data")
            .filter(|t| t.data.len() == 1)
            .ok_or_else(|| Error::Format("missing tensor `sigma_data`".into()))?
            .data[0];
        let triples: Vec<(String, Vec<usize>, Vec<f64>)> = tensors
            .iter()
            .map(|t| (t.name.clone(), t.shape.clone(), t.data.clone()))
            .collect();
        Self::from_tensors(sd, &triples)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_tensors(&self.to_tensors(), BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint_tensors(&read_tensors(BufReader::new(File::open(path)?))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomSource;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = RandomSource::new(7).stream(0);
        let p = ConvDenoiserParams::init(4, 3, 0.5, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.rdmk");
        p.save(&path).unwrap();
        assert_eq!(ConvDenoiserParams::load(&path).unwrap(), p);
    }

    #[test]
    fn layout_is_as_documented() {
        let t = vec![Tensor {
            name: "ab".into(),
            shape: vec![2],
            data: vec![1.0, -2.0],
        }];
        let mut buf = Vec::new();
        write_tensors(&t, &mut buf).unwrap();
        let mut want = b"RDMK".to_vec();
        for v in [1u32, 1, 2] {
            want.extend(v.to_le_bytes());
        }
        want.extend(b"ab");
        for v in [1u32, 2] {
            want.extend(v.to_le_bytes());
        }
        want.extend(1.0f64.to_le_bytes());
        want.extend((-2.0f64).to_le_bytes());
        assert_eq!(buf, want);
        assert_eq!(read_tensors(&buf[..]).unwrap(), t);
    }

    #[test]
    fn rejects_corrupt_input() {
        let mut rng = RandomSource::new(7).stream(0);
        let mut buf = Vec::new();
        write_tensors(
            &ConvDenoiserParams::init(2, 1, 0.5, &mut rng)
                .unwrap()
                .to_tensors(),
            &mut buf,
        )
        .unwrap();
        assert!(read_tensors(&buf[..buf.len() - 3]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_tensors(&bad[..]).is_err());
        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(read_tensors(&bad[..]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(read_tensors(&extra[..]).is_err());
        let tensors = read_tensors(&buf[..]).unwrap();
        let missing: Vec<Tensor> = tensors
            .iter()
            .filter(|t| t.name != "conv2.bias")
            .cloned()
            .collect();
        assert!(ConvDenoiserParams::from_checkpoint_tensors(&missing).is_err());
    }
}
