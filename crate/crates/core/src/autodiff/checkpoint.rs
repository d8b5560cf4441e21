//! Named-tensor checkpoint files.
//!
//! Layout (little-endian): magic `SPHTRCKP`, `u32` version, `u32` tensor
//! count, then per tensor `u32` name length, UTF-8 name, `u32` rank, `u32`
//! dims, and `f32` values.

use std::io::{Read, Write};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::real::Real;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SPHTRCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<T: Real, W: Write>(mut w: W, tensors: &[(&str, &Tensor<T>)]) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&(v.to_f64_lossy() as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_checkpoint<T: Real, R: Read>(mut r: R) -> Result<Vec<(String, Tensor<T>)>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a sphtr checkpoint".into()));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = read_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        if name_len > 4096 {
            return Err(Error::Format(format!("tensor name of {name_len} bytes")));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rank = read_u32(&mut r)? as usize;
        if rank > 8 {
            return Err(Error::Format(format!("tensor `{name}` has rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| read_u32(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let mut bytes = vec![0u8; len * 4];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_names_shapes_values() {
        let a = Tensor::<f32>::new(vec![2, 2], vec![1.0, -2.5, 0.125, 3.0]).unwrap();
        let b = Tensor::<f32>::scalar(7.0);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &[("a", &a), ("b.bias", &b)]).unwrap();
        let back = read_checkpoint::<f32, _>(&buf[..]).unwrap();
        assert_eq!(back[0], ("a".to_string(), a));
        assert_eq!(back[1], ("b.bias".to_string(), b));
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(matches!(
            read_checkpoint::<f32, _>(&b"NOTACKPT\x01\0\0\0\0\0\0\0"[..]),
            Err(Error::Format(_))
        ));
        let t = Tensor::<f32>::zeros(&[3]);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &[("t", &t)]).unwrap();
        buf.truncate(buf.len() - 2);
        assert!(read_checkpoint::<f32, _>(&buf[..]).is_err());
    }
}
