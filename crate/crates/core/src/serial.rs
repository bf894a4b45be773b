//! Little-endian binary helpers shared by the bundle, model and offline file
//! formats. Matrices are a `(rows u32, cols u32)` header followed by the
//! row-major elements as `u64`.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::field::{FieldElement, FieldMatrix};

pub fn write_u16<W: Write>(w: &mut W, v: u16) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_len<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("length {v} exceeds u32")))?;
    write_u32(w, v)
}

pub fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b)?;
    Ok(u16::from_le_bytes(b))
}

pub fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_len<R: Read>(r: &mut R) -> Result<usize> {
    Ok(read_u32(r)? as usize)
}

pub fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Format("file ends early".into())
        } else {
            Error::Io(e)
        }
    })
}

pub fn write_elements<W: Write>(w: &mut W, values: &[FieldElement]) -> Result<()> {
    let mut buf = Vec::with_capacity(8 * 1024);
    for chunk in values.chunks(1024) {
        buf.clear();
        for v in chunk {
            buf.extend_from_slice(&v.value().to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_elements<R: Read>(r: &mut R, count: usize) -> Result<Vec<FieldElement>> {
    let mut out = Vec::with_capacity(count);
    let mut buf = vec![0u8; 8 * 1024];
    let mut left = count;
    while left > 0 {
        let take = left.min(1024);
        read_exact(r, &mut buf[..8 * take])?;
        for word in buf[..8 * take].chunks_exact(8) {
            let v = u64::from_le_bytes(word.try_into().unwrap());
            out.push(
                FieldElement::from_canonical(v)
                    .ok_or_else(|| Error::Format(format!("non-canonical field element {v}")))?,
            );
        }
        left -= take;
    }
    Ok(out)
}

/// Length-prefixed vector of field elements.
pub fn write_vector<W: Write>(w: &mut W, values: &[FieldElement]) -> Result<()> {
    write_u64(w, values.len() as u64)?;
    write_elements(w, values)
}

pub fn read_vector<R: Read>(r: &mut R) -> Result<Vec<FieldElement>> {
    let n = read_u64(r)? as usize;
    read_elements(r, n)
}

pub fn write_matrix<W: Write>(w: &mut W, m: &FieldMatrix) -> Result<()> {
    write_len(w, m.rows())?;
    write_len(w, m.cols())?;
    write_elements(w, m.as_slice())
}

pub fn read_matrix<R: Read>(r: &mut R) -> Result<FieldMatrix> {
    let rows = read_len(r)?;
    let cols = read_len(r)?;
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format(format!("matrix {rows}x{cols} is too large")))?;
    FieldMatrix::from_vec(rows, cols, read_elements(r, count)?)
}

pub fn write_bytes<W: Write>(w: &mut W, bytes: &[u8]) -> Result<()> {
    write_len(w, bytes.len())?;
    w.write_all(bytes)?;
    Ok(())
}

pub fn read_bytes<R: Read>(r: &mut R) -> Result<Vec<u8>> {
    let n = read_len(r)?;
    let mut out = vec![0u8; n];
    read_exact(r, &mut out)?;
    Ok(out)
}

pub fn expect_magic<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<()> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    if &b != magic {
        return Err(Error::Format(format!(
            "expected a {} file",
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prf::SeededPrf;

    #[test]
    fn matrix_roundtrip_and_layout() {
        let m = FieldMatrix::random(3, 4, &mut SeededPrf::new([2; 32], 0));
        let mut bytes = Vec::new();
        write_matrix(&mut bytes, &m).unwrap();
        assert_eq!(bytes.len(), 8 + 8 * 12);
        assert_eq!(&bytes[..4], &3u32.to_le_bytes());
        assert_eq!(&bytes[8..16], &m.get(0, 0).value().to_le_bytes());
        assert_eq!(read_matrix(&mut bytes.as_slice()).unwrap(), m);
    }

    #[test]
    fn truncated_input_is_a_format_error() {
        let m = FieldMatrix::zeros(2, 2);
        let mut bytes = Vec::new();
        write_matrix(&mut bytes, &m).unwrap();
        assert!(matches!(read_matrix(&mut &bytes[..bytes.len() - 1]), Err(Error::Format(_))));
    }
}
