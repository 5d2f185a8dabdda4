//! Named-tensor checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "DIDXCKPT"
//! version  u8
//! count    u32
//! record*  name_len u32, name (UTF-8), rank u32, dims u32 × rank, values f32 × product(dims)
//! ```

use std::io::{Read, Write};

use super::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DIDXCKPT";
pub const CHECKPOINT_VERSION: u8 = 1;

pub fn write_checkpoint<W: Write>(out: &mut W, tensors: &[(&str, &Tensor)]) -> std::io::Result<()> {
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&[CHECKPOINT_VERSION])?;
    out.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in t.data() {
            out.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(input: &mut R) -> Result<Vec<(String, Tensor)>> {
    let mut magic = [0u8; 8];
    read_exact(input, &mut magic, "magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad magic header".into()));
    }
    let mut version = [0u8; 1];
    read_exact(input, &mut version, "version")?;
    if version[0] != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported version {}", version[0])));
    }
    let count = read_u32(input, "record count")?;
    let mut records = Vec::with_capacity(count.min(4096) as usize);
    for _ in 0..count {
        let name_len = read_u32(input, "name length")? as usize;
        let mut name = vec![0u8; name_len];
        read_exact(input, &mut name, "name")?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("non-UTF-8 name".into()))?;
        let rank = read_u32(input, "rank")? as usize;
        let shape = (0..rank)
            .map(|_| read_u32(input, "dimension").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 4];
        read_exact(input, &mut raw, "values")?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        records.push((name, Tensor::new(shape, data)?));
    }
    Ok(records)
}

fn read_exact<R: Read>(input: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    input
        .read_exact(buf)
        .map_err(|e| Error::Format(format!("truncated checkpoint reading {what}: {e}")))
}

fn read_u32<R: Read>(input: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(input, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_at_f32_precision() {
        let a = Tensor::new(vec![2, 2], vec![1.0, -0.5, 0.25, 3.0]).unwrap();
        let b = Tensor::new(vec![3], vec![0.1, 0.2, 0.3]).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &[("a", &a), ("layer.b", &b)]).unwrap();
        assert_eq!(&buf[..8], CHECKPOINT_MAGIC);
        assert_eq!(buf[8], CHECKPOINT_VERSION);
        let back = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(back[0].0, "a");
        assert_eq!(back[0].1, a);
        assert_eq!(back[1].0, "layer.b");
        assert_eq!(back[1].1.shape(), &[3]);
        assert!((back[1].1.data()[0] - 0.1).abs() < 1e-7);
    }

    #[test]
    fn bad_magic_and_truncation_are_format_errors() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &[("a", &Tensor::zeros(&[4]))]).unwrap();
        let mut corrupted = buf.clone();
        corrupted[0] = b'X';
        assert!(matches!(
            read_checkpoint(&mut corrupted.as_slice()),
            Err(Error::Format(m)) if m.contains("magic")
        ));
        let truncated = &buf[..buf.len() - 2];
        assert!(matches!(
            read_checkpoint(&mut &truncated[..]),
            Err(Error::Format(_))
        ));
    }
}
