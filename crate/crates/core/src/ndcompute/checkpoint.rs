//! Flat binary container of named tensors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "HRNCKPT\0"
//! version u32
//! meta    u32 length + UTF-8 bytes (free-form structured text)
//! count   u32
//! count x { name: u32 length + UTF-8, ndim: u32, dims: ndim x u32, values: f32 x prod(dims) }
//! ```

use std::io::{Read, Write};

use super::{NdError, Tensor};

pub const MAGIC: &[u8; 8] = b"HRNCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub meta: String,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), NdError> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        write_str(&mut w, &self.meta)?;
        write_len(&mut w, self.tensors.len())?;
        for (name, t) in &self.tensors {
            write_str(&mut w, name)?;
            write_len(&mut w, t.shape().len())?;
            for d in t.shape() {
                write_len(&mut w, *d)?;
            }
            let mut buf = Vec::with_capacity(4 * t.len());
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, NdError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(NdError::Format("not a checkpoint (bad magic)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(NdError::Format(format!("unsupported checkpoint version {version}")));
        }
        let meta = read_str(&mut r)?;
        let count = read_u32(&mut r)? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = read_str(&mut r)?;
            let ndim = read_u32(&mut r)? as usize;
            if ndim > 8 {
                return Err(NdError::Format(format!("tensor {name}: {ndim} dimensions")));
            }
            let shape = (0..ndim)
                .map(|_| read_u32(&mut r).map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let len: usize = shape.iter().product();
            let mut bytes = vec![0u8; 4 * len];
            r.read_exact(&mut bytes)?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        Ok(Self { meta, tensors })
    }
}

fn write_len<W: Write>(w: &mut W, n: usize) -> Result<(), NdError> {
    let n = u32::try_from(n).map_err(|_| NdError::Format("length exceeds u32".into()))?;
    w.write_all(&n.to_le_bytes())?;
    Ok(())
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<(), NdError> {
    write_len(w, s.len())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, NdError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_str<R: Read>(r: &mut R) -> Result<String, NdError> {
    let n = read_u32(r)? as usize;
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|_| NdError::Format("string is not UTF-8".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let ck = Checkpoint {
            meta: "{\"k\":1}".into(),
            tensors: vec![
                ("a".into(), Tensor::new(vec![2, 3], vec![1., -2., 3.5, 0., 1e-8, f32::MAX]).unwrap()),
                ("b".into(), Tensor::scalar(7.0)),
            ],
        };
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        assert_eq!(Checkpoint::read_from(&buf[..]).unwrap(), ck);
    }

    #[test]
    fn rejects_garbage_and_truncation() {
        assert!(matches!(Checkpoint::read_from(&b"NOTACKPT...."[..]), Err(NdError::Format(_))));
        let ck = Checkpoint { meta: String::new(), tensors: vec![("x".into(), Tensor::zeros(&[4]))] };
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 2);
        assert!(matches!(Checkpoint::read_from(&buf[..]), Err(NdError::Io(_))));
    }
}
