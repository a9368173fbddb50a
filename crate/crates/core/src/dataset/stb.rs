//! The stb binary signal format.
//!
//! Little-endian layout:
//!
//! ```text
//! offset 0   magic "STB1"
//! offset 4   u32 version = 1
//! offset 8   u64 entries
//! offset 16  u64 nodes
//! offset 24  u64 features
//! offset 32  u8 dtype (0 = 8-byte real, 1 = 4-byte real)
//! offset 33  7 zero bytes, padding to 8-byte alignment
//! offset 40  payload, row-major (time, node, feature)
//! ```

use super::{DataError, ElementWidth, TemporalSignal};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: [u8; 4] = *b"STB1";
const VERSION: u32 = 1;
const HEADER_LEN: u64 = 40;

pub(super) fn write(signal: &TemporalSignal, path: &Path) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(signal.entries() as u64).to_le_bytes())?;
    w.write_all(&(signal.nodes() as u64).to_le_bytes())?;
    w.write_all(&(signal.features() as u64).to_le_bytes())?;
    let dtype: u8 = match signal.element_width() {
        ElementWidth::F64 => 0,
        ElementWidth::F32 => 1,
    };
    w.write_all(&[dtype])?;
    w.write_all(&[0u8; 7])?;
    match signal.element_width() {
        ElementWidth::F64 => {
            for v in signal.values() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        ElementWidth::F32 => {
            for v in signal.values() {
                w.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub(super) fn read(path: &Path) -> Result<TemporalSignal, DataError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = [0u8; HEADER_LEN as usize];
    r.read_exact(&mut header).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            DataError::MalformedHeader {
                offset: 0,
                detail: format!("file shorter than the {HEADER_LEN}-byte header"),
            }
        } else {
            DataError::Io(e)
        }
    })?;

    if header[0..4] != MAGIC {
        return Err(DataError::MalformedHeader {
            offset: 0,
            detail: format!("bad magic {:02x?}, expected \"STB1\"", &header[0..4]),
        });
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(DataError::MalformedHeader {
            offset: 4,
            detail: format!("unsupported version {version}"),
        });
    }
    let entries = u64::from_le_bytes(header[8..16].try_into().unwrap());
    let nodes = u64::from_le_bytes(header[16..24].try_into().unwrap());
    let features = u64::from_le_bytes(header[24..32].try_into().unwrap());
    for (offset, name, v) in [(8u64, "entries", entries), (16, "nodes", nodes), (24, "features", features)] {
        if v == 0 {
            return Err(DataError::MalformedHeader {
                offset,
                detail: format!("{name} must be at least 1"),
            });
        }
    }
    let width = match header[32] {
        0 => ElementWidth::F64,
        1 => ElementWidth::F32,
        d => {
            return Err(DataError::MalformedHeader {
                offset: 32,
                detail: format!("unknown dtype {d}"),
            })
        }
    };

    let count = entries
        .checked_mul(nodes)
        .and_then(|v| v.checked_mul(features))
        .ok_or_else(|| DataError::MalformedHeader {
            offset: 8,
            detail: "entries*nodes*features overflows".to_string(),
        })?;
    let expected = count * width.bytes();
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() as u64 != expected {
        return Err(DataError::TruncatedPayload {
            offset: HEADER_LEN + payload.len() as u64 / width.bytes() * width.bytes(),
            expected,
            found: payload.len() as u64,
        });
    }

    let mut values = Vec::with_capacity(count as usize);
    match width {
        ElementWidth::F64 => {
            for (i, chunk) in payload.chunks_exact(8).enumerate() {
                let v = f64::from_le_bytes(chunk.try_into().unwrap());
                if !v.is_finite() {
                    return Err(DataError::NonFinite {
                        index: i,
                        offset: HEADER_LEN + i as u64 * 8,
                    });
                }
                values.push(v);
            }
        }
        ElementWidth::F32 => {
            for (i, chunk) in payload.chunks_exact(4).enumerate() {
                let v = f32::from_le_bytes(chunk.try_into().unwrap());
                if !v.is_finite() {
                    return Err(DataError::NonFinite {
                        index: i,
                        offset: HEADER_LEN + i as u64 * 4,
                    });
                }
                values.push(v as f64);
            }
        }
    }

    Ok(TemporalSignal::from_parts(
        entries as usize,
        nodes as usize,
        features as usize,
        width,
        values,
    ))
}
