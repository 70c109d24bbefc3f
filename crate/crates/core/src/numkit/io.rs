//! Flat little-endian tensor records: `u32 rank, u32 dims…, f64 payload`.

use std::io::{self, Read, Write};

use crate::error::{Error, Result};

use super::Tensor;

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    let rank = u32::try_from(t.rank()).map_err(|_| Error::Format("rank exceeds u32".into()))?;
    w.write_all(&rank.to_le_bytes())?;
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| Error::Format("dimension exceeds u32".into()))?;
        w.write_all(&d.to_le_bytes())?;
    }
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Read one record. Returns `Ok(None)` on a clean end of stream.
fn read_record<R: Read>(r: &mut R) -> Result<Option<Tensor>> {
    let mut b = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut b[got..])? {
            0 if got == 0 => return Ok(None),
            0 => return Err(Error::Format("truncated tensor header".into())),
            n => got += n,
        }
    }
    let rank = u32::from_le_bytes(b) as usize;
    if rank > 16 {
        return Err(Error::Format(format!("implausible tensor rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u32(r)? as usize);
    }
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    let mut buf = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut buf)?;
        data.push(f64::from_le_bytes(buf));
    }
    Tensor::new(shape, data).map(Some)
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor> {
    read_record(r)?.ok_or_else(|| Error::Format("empty tensor stream".into()))
}

pub fn write_tensors<W: Write>(w: &mut W, ts: &[&Tensor]) -> Result<()> {
    ts.iter().try_for_each(|t| write_tensor(w, t))
}

/// Read records until end of stream.
pub fn read_tensors<R: Read>(r: &mut R) -> Result<Vec<Tensor>> {
    let mut out = Vec::new();
    while let Some(t) = read_record(r)? {
        out.push(t);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_bit_exact() {
        let t = Tensor::new(vec![2, 1], vec![1.5, -0.25]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        let mut expected = Vec::new();
        expected.extend(2u32.to_le_bytes());
        expected.extend(2u32.to_le_bytes());
        expected.extend(1u32.to_le_bytes());
        expected.extend(1.5f64.to_le_bytes());
        expected.extend((-0.25f64).to_le_bytes());
        assert_eq!(buf, expected);
    }

    #[test]
    fn truncated_payload_is_an_error() {
        let t = Tensor::zeros(&[3]);
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_tensors(&mut buf.as_slice()).is_err());
    }
}
