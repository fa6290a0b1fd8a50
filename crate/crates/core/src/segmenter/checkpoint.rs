//! Binary checkpoint container.
//!
//! All integers and floats little-endian:
//!
//! ```text
//! offset  size  field
//! 0       8     magic "TSEGCKPT"
//! 8       4     u32 format version (1)
//! 12      1     u8 float width in bytes (4 or 8)
//! 13      8     u64 training seed
//! 21      4     u32 length N of the config echo
//! 25      N     UTF-8 JSON {"segmenter": {...}, "train": {...} | null}
//! ..      4     u32 tensor count
//! per tensor:
//!         2     u16 name length L
//!         L     UTF-8 name
//!         1     u8 rank R
//!         8·R   u64 dims
//!         w·Π   values, row-major, w = float width
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::net::{layout_for, ToyUNet};
use super::{SegmenterConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"TSEGCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub segmenter: SegmenterConfig,
    pub train: Option<TrainConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointInfo {
    pub version: u32,
    pub float_width: u8,
    pub seed: u64,
    pub echo: ConfigEcho,
}

pub fn save_checkpoint<T: Scalar>(net: &ToyUNet<T>, train: Option<&TrainConfig>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::write_io(path, e))?;
    let mut w = BufWriter::new(file);
    write_to(net, train, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::write_io(path, e))
}

pub fn write_to<T: Scalar, W: Write>(net: &ToyUNet<T>, train: Option<&TrainConfig>, w: &mut W) -> std::io::Result<()> {
    let echo = ConfigEcho {
        segmenter: net.config().clone(),
        train: train.cloned(),
    };
    let json = serde_json::to_vec(&echo).expect("config serializes");
    let seed = train.map_or(net.config().seed, |t| t.seed);
    w.write_all(MAGIC)?;
    w.write_u32::<LE>(VERSION)?;
    w.write_u8(T::BYTES as u8)?;
    w.write_u64::<LE>(seed)?;
    w.write_u32::<LE>(json.len() as u32)?;
    w.write_all(&json)?;
    w.write_u32::<LE>(net.layout().len() as u32)?;
    for spec in net.layout() {
        w.write_u16::<LE>(spec.name.len() as u16)?;
        w.write_all(spec.name.as_bytes())?;
        w.write_u8(spec.shape.len() as u8)?;
        for &d in &spec.shape {
            w.write_u64::<LE>(d as u64)?;
        }
        for &v in &net.params()[spec.range()] {
            if T::BYTES == 4 {
                w.write_f32::<LE>(v.to_f32().expect("f32"))?;
            } else {
                w.write_f64::<LE>(v.as_f64())?;
            }
        }
    }
    Ok(())
}

/// Loads a checkpoint, converting the stored float width to `T`.
pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<(ToyUNet<T>, CheckpointInfo)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::read_io(path, e))?;
    read_from(&mut BufReader::new(file)).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn read_from<T: Scalar, R: Read>(r: &mut R) -> Result<(ToyUNet<T>, CheckpointInfo)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    let io = |e: std::io::Error| Error::Checkpoint(format!("truncated or unreadable: {e}"));
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(bad("not a segmenter checkpoint"));
    }
    let version = r.read_u32::<LE>().map_err(io)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let width = r.read_u8().map_err(io)?;
    if width != 4 && width != 8 {
        return Err(Error::Checkpoint(format!("unsupported float width {width}")));
    }
    let seed = r.read_u64::<LE>().map_err(io)?;
    let n = r.read_u32::<LE>().map_err(io)? as usize;
    let mut json = vec![0u8; n];
    r.read_exact(&mut json).map_err(io)?;
    let echo: ConfigEcho = serde_json::from_slice(&json).map_err(|e| Error::Checkpoint(format!("config echo: {e}")))?;
    echo.segmenter.validate()?;

    let layout = layout_for(&echo.segmenter);
    let count = r.read_u32::<LE>().map_err(io)? as usize;
    if count != layout.len() {
        return Err(Error::Checkpoint(format!("expected {} tensors, found {count}", layout.len())));
    }
    let mut params = Vec::new();
    for spec in &layout {
        let len = r.read_u16::<LE>().map_err(io)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(io)?;
        let rank = r.read_u8().map_err(io)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.read_u64::<LE>().map_err(io)? as usize);
        }
        if name != spec.name.as_bytes() || shape != spec.shape {
            return Err(Error::Checkpoint(format!(
                "tensor `{}` {:?} does not match expected `{}` {:?}",
                String::from_utf8_lossy(&name),
                shape,
                spec.name,
                spec.shape
            )));
        }
        for _ in 0..spec.len() {
            let v = if width == 4 {
                r.read_f32::<LE>().map_err(io)? as f64
            } else {
                r.read_f64::<LE>().map_err(io)?
            };
            if !v.is_finite() {
                return Err(bad("non-finite parameter"));
            }
            params.push(T::of(v));
        }
    }
    let net = ToyUNet::from_parts(&echo.segmenter, params)?;
    Ok((
        net,
        CheckpointInfo {
            version,
            float_width: width,
            seed,
            echo,
        },
    ))
}
