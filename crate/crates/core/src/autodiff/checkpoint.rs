use std::io::{self, Read, Write};
use std::path::Path;

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Checkpoint files start with this magic, followed by a little-endian u32
/// record count, then per record: u32 name length, UTF-8 name, u32 rows,
/// u32 cols, and `rows * cols` f64 values in row-major order.
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ACSCKPT1";

const MAX_NAME_LEN: u32 = 1 << 16;
const MAX_DIM: u32 = 1 << 24;
const MAX_ELEMS: u64 = 1 << 28;

pub fn write_records<W: Write>(w: &mut W, records: &[(String, Matrix)]) -> io::Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(records.len() as u32).to_le_bytes())?;
    for (name, m) in records {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(m.rows() as u32).to_le_bytes())?;
        w.write_all(&(m.cols() as u32).to_le_bytes())?;
        for v in m.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_records<R: Read>(r: &mut R) -> io::Result<Vec<(String, Matrix)>> {
    let bad = |msg: String| io::Error::new(io::ErrorKind::InvalidData, msg);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad(format!("bad checkpoint magic {magic:x?}")));
    }
    let count = read_u32(r)?;
    let mut records = Vec::with_capacity(count.min(1024) as usize);
    for _ in 0..count {
        let name_len = read_u32(r)?;
        if name_len > MAX_NAME_LEN {
            return Err(bad(format!("record name length {name_len} too large")));
        }
        let mut name_bytes = vec![0u8; name_len as usize];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|e| bad(format!("record name is not UTF-8: {e}")))?;
        let rows = read_u32(r)?;
        let cols = read_u32(r)?;
        if rows > MAX_DIM || cols > MAX_DIM || rows as u64 * cols as u64 > MAX_ELEMS {
            return Err(bad(format!("record {name:?} has absurd shape {rows}x{cols}")));
        }
        let n = rows as usize * cols as usize;
        let mut data = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        let m = Matrix::from_vec(rows as usize, cols as usize, data)
            .map_err(|e| bad(e.to_string()))?;
        if records.iter().any(|(existing, _)| *existing == name) {
            return Err(bad(format!("duplicate record name {name:?}")));
        }
        records.push((name, m));
    }
    Ok(records)
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub fn save_records(path: &Path, records: &[(String, Matrix)]) -> Result<()> {
    let mut file = io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| Error::io(path, e))?,
    );
    write_records(&mut file, records).map_err(|e| Error::io(path, e))?;
    file.flush().map_err(|e| Error::io(path, e))
}

pub fn load_records(path: &Path) -> Result<Vec<(String, Matrix)>> {
    let mut file = io::BufReader::new(
        std::fs::File::open(path).map_err(|e| Error::io(path, e))?,
    );
    read_records(&mut file).map_err(|e| match e.kind() {
        io::ErrorKind::InvalidData | io::ErrorKind::UnexpectedEof => {
            Error::format(path, e.to_string())
        }
        _ => Error::io(path, e),
    })
}
