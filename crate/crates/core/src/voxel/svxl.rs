//! Binary serialization for voxel grids.
//!
//! Layout: a fixed 32-byte header followed by the dense cell values as
//! little-endian `f32`, x-major (x slowest, z fastest). Header fields:
//!
//! | offset | size | field                          |
//! |--------|------|--------------------------------|
//! | 0      | 4    | magic `"SVXL"`                 |
//! | 4      | 4    | version, `u32` LE (currently 1)|
//! | 8      | 12   | dims x, y, z as `u32` LE       |
//! | 20     | 1    | feature mode as `u8`           |
//! | 21     | 11   | zero padding                   |

use super::{FeatureMode, VoxelError, VoxelGrid};
use std::io::{self, Read, Write};

pub const SVXL_MAGIC: &[u8; 4] = b"SVXL";
pub const SVXL_VERSION: u32 = 1;
pub const SVXL_HEADER_LEN: usize = 32;

/// Raw contents of a voxel grid file; the ROI is not stored in the format,
/// so readers recover dims, mode and values only.
#[derive(Debug, Clone, PartialEq)]
pub struct SvxlData {
    pub dims: [u32; 3],
    pub mode: FeatureMode,
    pub values: Vec<f32>,
}

/// Writes a grid in the documented layout.
pub fn write_svxl<W: Write>(grid: &VoxelGrid, mut writer: W) -> io::Result<()> {
    let mut header = [0u8; SVXL_HEADER_LEN];
    header[0..4].copy_from_slice(SVXL_MAGIC);
    header[4..8].copy_from_slice(&SVXL_VERSION.to_le_bytes());
    for (i, &d) in grid.spec.dims.iter().enumerate() {
        header[8 + 4 * i..12 + 4 * i].copy_from_slice(&(d as u32).to_le_bytes());
    }
    header[20] = grid.mode.as_u8();
    writer.write_all(&header)?;
    let mut buf = Vec::with_capacity(grid.values.len() * 4);
    for &v in &grid.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    writer.write_all(&buf)
}

/// Reads a grid written by [`write_svxl`]; malformed headers or truncated
/// payloads yield a structured error.
pub fn read_svxl<R: Read>(mut reader: R) -> Result<SvxlData, VoxelError> {
    let mut header = [0u8; SVXL_HEADER_LEN];
    reader
        .read_exact(&mut header)
        .map_err(|_| VoxelError::Format("truncated header".into()))?;
    if &header[0..4] != SVXL_MAGIC {
        return Err(VoxelError::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != SVXL_VERSION {
        return Err(VoxelError::Format(format!("unsupported version {version}")));
    }
    let mut dims = [0u32; 3];
    for (i, d) in dims.iter_mut().enumerate() {
        *d = u32::from_le_bytes(header[8 + 4 * i..12 + 4 * i].try_into().unwrap());
    }
    let mode = FeatureMode::from_u8(header[20])
        .ok_or_else(|| VoxelError::Format(format!("unknown feature mode {}", header[20])))?;
    let count = dims.iter().map(|&d| d as usize).product::<usize>();
    let mut payload = vec![0u8; count * 4];
    reader
        .read_exact(&mut payload)
        .map_err(|_| VoxelError::Format("truncated payload".into()))?;
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(SvxlData { dims, mode, values })
}
