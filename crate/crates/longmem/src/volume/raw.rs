//! Raw fallback volume format: a flat little-endian binary payload
//! (`.raw`) plus a text sidecar (`.raw.hdr`) holding the geometry.
//!
//! Sidecar syntax, one `key = value` pair per line:
//!
//! ```text
//! dims = 16 16 16 120      # nx ny nz [nt]
//! dtype = float32          # float32 | float64 | int16 | int32
//! voxel_size = 4.0 4.0 4.0 # millimeters
//! ```
//!
//! Lines starting with `#` are comments. The affine is diagonal
//! `voxel_size` with zero offset; use NIfTI when a full affine matters.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{RawVolume, VolumeGrid};
use crate::error::{Error, Result};

fn sidecar_path(payload: &Path) -> PathBuf {
    let mut os = payload.as_os_str().to_owned();
    os.push(".hdr");
    PathBuf::from(os)
}

struct Sidecar {
    dims: (usize, usize, usize),
    nt: usize,
    dtype: String,
    voxel_size: (f64, f64, f64),
}

fn parse_sidecar(path: &Path, text: &str) -> Result<Sidecar> {
    let fail = |msg: String| Error::Format(format!("{}: {msg}", path.display()));
    let mut dims: Option<Vec<usize>> = None;
    let mut dtype: Option<String> = None;
    let mut voxel: Option<Vec<f64>> = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| fail(format!("line {}: expected 'key = value'", lineno + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "dims" => {
                let parsed: std::result::Result<Vec<usize>, _> =
                    value.split_whitespace().map(str::parse).collect();
                dims = Some(parsed.map_err(|_| fail(format!("bad dims '{value}'")))?);
            }
            "dtype" => dtype = Some(value.to_string()),
            "voxel_size" => {
                let parsed: std::result::Result<Vec<f64>, _> =
                    value.split_whitespace().map(str::parse).collect();
                voxel = Some(parsed.map_err(|_| fail(format!("bad voxel_size '{value}'")))?);
            }
            other => return Err(fail(format!("unknown sidecar key '{other}'"))),
        }
    }
    let dims = dims.ok_or_else(|| fail("missing 'dims'".into()))?;
    let dtype = dtype.ok_or_else(|| fail("missing 'dtype'".into()))?;
    let voxel = voxel.ok_or_else(|| fail("missing 'voxel_size'".into()))?;
    if !(dims.len() == 3 || dims.len() == 4) {
        return Err(fail(format!("dims must have 3 or 4 entries, got {}", dims.len())));
    }
    if voxel.len() != 3 {
        return Err(fail("voxel_size must have 3 entries".into()));
    }
    Ok(Sidecar {
        dims: (dims[0], dims[1], dims[2]),
        nt: if dims.len() == 4 { dims[3] } else { 1 },
        dtype,
        voxel_size: (voxel[0], voxel[1], voxel[2]),
    })
}

pub fn read(path: &Path) -> Result<RawVolume> {
    let hdr_path = sidecar_path(path);
    let text = std::fs::read_to_string(&hdr_path).map_err(|e| Error::io(&hdr_path, e))?;
    let sc = parse_sidecar(&hdr_path, &text)?;
    let grid = VolumeGrid::new(sc.dims, sc.voxel_size)?;
    let n_values = grid.n_voxels() * sc.nt;

    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut values = Vec::with_capacity(n_values);
    let res: std::io::Result<()> = (|| {
        for _ in 0..n_values {
            let v = match sc.dtype.as_str() {
                "float32" => reader.read_f32::<LittleEndian>()? as f64,
                "float64" => reader.read_f64::<LittleEndian>()?,
                "int16" => reader.read_i16::<LittleEndian>()? as f64,
                "int32" => reader.read_i32::<LittleEndian>()? as f64,
                other => {
                    return Err(std::io::Error::new(
                        std::io::ErrorKind::InvalidData,
                        format!("unsupported dtype '{other}'"),
                    ))
                }
            };
            values.push(v);
        }
        Ok(())
    })();
    res.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data(format!("{}: non-finite values in payload", path.display())));
    }
    Ok(RawVolume { grid, nt: sc.nt, values })
}

/// Write as `float32` payload plus sidecar.
pub fn write(path: &Path, grid: &VolumeGrid, nt: usize, values: &[f64]) -> Result<()> {
    let hdr_path = sidecar_path(path);
    let dims_line = if nt > 1 {
        format!("{} {} {} {nt}", grid.dims.0, grid.dims.1, grid.dims.2)
    } else {
        format!("{} {} {}", grid.dims.0, grid.dims.1, grid.dims.2)
    };
    let sidecar = format!(
        "dims = {dims_line}\ndtype = float32\nvoxel_size = {} {} {}\n",
        grid.voxel_size.0, grid.voxel_size.1, grid.voxel_size.2
    );
    std::fs::write(&hdr_path, sidecar).map_err(|e| Error::io(&hdr_path, e))?;

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for &v in values {
        w.write_f32::<LittleEndian>(v as f32).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
