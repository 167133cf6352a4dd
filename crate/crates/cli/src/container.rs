//! Binary array container.
//!
//! Layout: magic `SMA1`, version (u32 LE), dtype code (one byte, 0x01 for
//! 64-bit floats), ndim (u8), each dimension as u64 LE, then the payload
//! row-major in little-endian order. The payload must hold exactly
//! `8 * product(dims)` bytes, and a read rejects non-finite values, so a
//! write→read round trip is a bitwise identity on valid tensors.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use stablemind_core::Tensor;

use crate::error::{CliError, CliResult};

pub const MAGIC: [u8; 4] = *b"SMA1";
pub const VERSION: u32 = 1;
pub const DTYPE_F64: u8 = 0x01;

pub fn write_array(out: &mut impl Write, tensor: &Tensor) -> std::io::Result<()> {
    out.write_all(&MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&[DTYPE_F64])?;
    let dims = tensor.shape();
    debug_assert!(dims.len() <= u8::MAX as usize);
    out.write_all(&[dims.len() as u8])?;
    for &d in dims {
        out.write_all(&(d as u64).to_le_bytes())?;
    }
    for &v in tensor.data() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_exact_or(input: &mut impl Read, buf: &mut [u8], what: &str) -> CliResult<()> {
    input
        .read_exact(buf)
        .map_err(|_| CliError::Io(format!("array container truncated in {what}")))
}

pub fn read_array(input: &mut impl Read) -> CliResult<Tensor> {
    let mut magic = [0u8; 4];
    read_exact_or(input, &mut magic, "magic")?;
    if magic != MAGIC {
        return Err(CliError::Io(format!(
            "not an array container (magic {:02x?})",
            magic
        )));
    }
    let mut version = [0u8; 4];
    read_exact_or(input, &mut version, "version")?;
    let version = u32::from_le_bytes(version);
    if version != VERSION {
        return Err(CliError::Io(format!(
            "unsupported container version {version}"
        )));
    }
    let mut byte = [0u8; 1];
    read_exact_or(input, &mut byte, "dtype")?;
    if byte[0] != DTYPE_F64 {
        return Err(CliError::Io(format!(
            "unsupported dtype code {:#04x}",
            byte[0]
        )));
    }
    read_exact_or(input, &mut byte, "ndim")?;
    let ndim = byte[0] as usize;
    let mut dims = Vec::with_capacity(ndim);
    let mut total: usize = 1;
    for _ in 0..ndim {
        let mut raw = [0u8; 8];
        read_exact_or(input, &mut raw, "dims")?;
        let d = u64::from_le_bytes(raw);
        let d = usize::try_from(d)
            .map_err(|_| CliError::Io(format!("container dimension {d} overflows")))?;
        total = total
            .checked_mul(d)
            .ok_or_else(|| CliError::Io("container element count overflows".to_string()))?;
        dims.push(d);
    }
    let mut payload = vec![0u8; total * 8];
    read_exact_or(input, &mut payload, "payload")?;
    let data: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunks_exact(8)")))
        .collect();
    // Non-finite payloads mean a corrupt or hand-built file, not a numeric
    // failure of this process.
    Tensor::new(dims, data).map_err(|e| CliError::Io(format!("array container: {e}")))
}

pub fn save(path: &Path, tensor: &Tensor) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::io_at(path, e))?;
    let mut out = BufWriter::new(file);
    write_array(&mut out, tensor).map_err(|e| CliError::io_at(path, e))?;
    out.flush().map_err(|e| CliError::io_at(path, e))
}

pub fn load(path: &Path) -> CliResult<Tensor> {
    let file = File::open(path).map_err(|e| CliError::io_at(path, e))?;
    let mut input = BufReader::new(file);
    let tensor = read_array(&mut input)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut rest = [0u8; 1];
    if input.read(&mut rest).map_err(|e| CliError::io_at(path, e))? != 0 {
        return Err(CliError::io_at(path, "trailing bytes after payload"));
    }
    Ok(tensor)
}
