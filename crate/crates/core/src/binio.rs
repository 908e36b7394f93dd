//! Little-endian framing shared by the posterior, feature and checkpoint files.

use std::io::{self, Read, Write};

use crate::error::{Result, SedError};

/// Upper bound on element counts accepted from a file header.
pub(crate) const MAX_ELEMENTS: usize = 1 << 30;

pub(crate) fn map_eof(err: io::Error) -> SedError {
    if err.kind() == io::ErrorKind::UnexpectedEof {
        SedError::UnexpectedEnd
    } else {
        SedError::Io(err)
    }
}

pub(crate) fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_f64(w: &mut impl Write, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_str(w: &mut impl Write, s: &str) -> Result<()> {
    let len = u32::try_from(s.len()).map_err(|_| SedError::Format("string too long".into()))?;
    write_u32(w, len)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

pub(crate) fn write_f32s(w: &mut impl Write, values: impl IntoIterator<Item = f32>) -> Result<()> {
    let mut buf = Vec::new();
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub(crate) fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(map_eof)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(map_eof)?;
    Ok(f64::from_le_bytes(b))
}

pub(crate) fn read_str(r: &mut impl Read) -> Result<String> {
    let len = read_u32(r)? as usize;
    if len > MAX_ELEMENTS {
        return Err(SedError::Format(format!("string length {len} too large")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(map_eof)?;
    String::from_utf8(buf).map_err(|_| SedError::Format("string is not valid UTF-8".into()))
}

pub(crate) fn read_f32s(r: &mut impl Read, n: usize) -> Result<Vec<f32>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf).map_err(map_eof)?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub(crate) fn expect_magic(r: &mut impl Read, magic: &[u8; 4], version: u32) -> Result<()> {
    let mut got = [0u8; 4];
    r.read_exact(&mut got).map_err(map_eof)?;
    if &got != magic {
        return Err(SedError::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&got),
            String::from_utf8_lossy(magic)
        )));
    }
    let v = read_u32(r)?;
    if v != version {
        return Err(SedError::Format(format!("unsupported version {v}, expected {version}")));
    }
    Ok(())
}

/// Multiplies dimensions read from a header, rejecting overflow and absurd sizes.
pub(crate) fn checked_elements(dims: &[u32]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .filter(|&n| n <= MAX_ELEMENTS)
        .ok_or_else(|| SedError::Format(format!("dimension overflow {dims:?}")))
}
