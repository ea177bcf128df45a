//! Parameter checkpoints.
//!
//! Layout, all integers and reals little-endian:
//!
//! ```text
//! offset  size  field
//! 0       6     magic "SEGAL1"
//! 6       4     encoder_blocks  u32
//! 10      4     base_width      u32
//! 14      4     classes         u32
//! 18      4     input_channels  u32
//! 22      8     dropout_rate    f64
//! 30      8     seed            u64
//! 38      8     parameter count u64
//! 46      8*n   parameters      f64, flat order of `Parameters::as_slice`
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::config::NetworkConfig;
use super::params::Parameters;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"SEGAL1";

pub fn write_checkpoint<W: Write>(params: &Parameters, mut out: W) -> std::io::Result<()> {
    let cfg = params.config();
    out.write_all(CHECKPOINT_MAGIC)?;
    for v in [cfg.encoder_blocks, cfg.base_width, cfg.classes, cfg.input_channels] {
        out.write_all(&(v as u32).to_le_bytes())?;
    }
    out.write_all(&cfg.dropout_rate.to_le_bytes())?;
    out.write_all(&cfg.seed.to_le_bytes())?;
    out.write_all(&(params.len() as u64).to_le_bytes())?;
    for v in params.as_slice() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()
}

fn take<const N: usize, R: Read>(input: &mut R) -> std::io::Result<[u8; N]> {
    let mut buf = [0u8; N];
    input.read_exact(&mut buf)?;
    Ok(buf)
}

/// Reads a checkpoint; `path` is only used for error messages.
pub fn read_checkpoint<R: Read>(mut input: R, path: &Path) -> Result<Parameters> {
    let io = |e| Error::io(path, e);
    let magic: [u8; 6] = take(&mut input).map_err(io)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format {
            path: path.into(),
            message: "not a segal checkpoint (bad magic)".into(),
        });
    }
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = u32::from_le_bytes(take(&mut input).map_err(io)?) as usize;
    }
    let dropout_rate = f64::from_le_bytes(take(&mut input).map_err(io)?);
    let seed = u64::from_le_bytes(take(&mut input).map_err(io)?);
    let count = u64::from_le_bytes(take(&mut input).map_err(io)?) as usize;
    let config = NetworkConfig {
        encoder_blocks: dims[0],
        base_width: dims[1],
        classes: dims[2],
        input_channels: dims[3],
        dropout_rate,
        seed,
    };
    config.validate()?;
    if count != config.parameter_count() {
        return Err(Error::Format {
            path: path.into(),
            message: format!(
                "header declares {count} parameters, configuration implies {}",
                config.parameter_count()
            ),
        });
    }
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        values.push(f64::from_le_bytes(take(&mut input).map_err(io)?));
    }
    Parameters::from_flat(&config, values)
}

pub fn save_checkpoint(params: &Parameters, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(params, std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Parameters> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(file), path)
}
