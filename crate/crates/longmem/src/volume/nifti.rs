//! Minimal NIfTI-1 codec: single-file `.nii` / `.nii.gz`, 348-byte
//! header, datatypes int16/int32/float32/float64, both endiannesses
//! (detected via the `dim[0] ∈ [1,7]` heuristic). Honored fields: `dim`,
//! `datatype`, `bitpix`, `pixdim`, `vox_offset`, `srow_*`; everything
//! else is passed over.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::{RawVolume, VolumeGrid};
use crate::error::{Error, Result};

pub const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;
const MAGIC: &[u8; 4] = b"n+1\0";

const DT_INT16: i16 = 4;
const DT_INT32: i16 = 8;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;

mod offset {
    pub const SIZEOF_HDR: usize = 0;
    pub const DIM: usize = 40;
    pub const DATATYPE: usize = 70;
    pub const BITPIX: usize = 72;
    pub const PIXDIM: usize = 76;
    pub const VOX_OFFSET: usize = 108;
    pub const SFORM_CODE: usize = 254;
    pub const SROW_X: usize = 280;
    pub const SROW_Y: usize = 296;
    pub const SROW_Z: usize = 312;
    pub const MAGIC: usize = 344;
}

fn open_bytes(path: &Path) -> Result<Vec<u8>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut bytes = Vec::new();
    if super::is_gz(path) {
        GzDecoder::new(reader)
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
    } else {
        reader.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    }
    Ok(bytes)
}

/// Read a NIfTI-1 volume into `f64` values.
pub fn read(path: &Path) -> Result<RawVolume> {
    let bytes = open_bytes(path)?;
    if bytes.len() < HEADER_SIZE {
        return Err(Error::Format(format!(
            "{}: malformed header (file shorter than {HEADER_SIZE} bytes)",
            path.display()
        )));
    }

    // Endianness heuristic: dim[0] must land in 1..=7 in exactly one byte order.
    let ndim_le = LittleEndian::read_i16(&bytes[offset::DIM..]);
    let ndim_be = BigEndian::read_i16(&bytes[offset::DIM..]);
    let little = if (1..=7).contains(&ndim_le) {
        true
    } else if (1..=7).contains(&ndim_be) {
        false
    } else {
        return Err(Error::Format(format!(
            "{}: malformed header (dim[0] = {ndim_le} LE / {ndim_be} BE, expected 1..=7)",
            path.display()
        )));
    };
    if little {
        parse::<LittleEndian>(path, &bytes)
    } else {
        parse::<BigEndian>(path, &bytes)
    }
}

fn parse<E: ByteOrder>(path: &Path, bytes: &[u8]) -> Result<RawVolume> {
    let fail = |msg: String| Error::Format(format!("{}: {msg}", path.display()));

    let sizeof_hdr = E::read_i32(&bytes[offset::SIZEOF_HDR..]);
    if sizeof_hdr != HEADER_SIZE as i32 {
        return Err(fail(format!("malformed header (sizeof_hdr = {sizeof_hdr})")));
    }
    let magic = &bytes[offset::MAGIC..offset::MAGIC + 4];
    if magic != MAGIC {
        return Err(fail(format!("malformed header (magic {magic:?}, single-file .nii required)")));
    }

    let ndim = E::read_i16(&bytes[offset::DIM..]) as usize;
    let mut dim = [1usize; 7];
    for (i, d) in dim.iter_mut().enumerate() {
        let v = E::read_i16(&bytes[offset::DIM + 2 + 2 * i..]);
        if i < ndim {
            if v < 1 {
                return Err(fail(format!("malformed header (dim[{}] = {v})", i + 1)));
            }
            *d = v as usize;
        }
    }
    if ndim > 4 && dim[4..ndim].iter().any(|&d| d > 1) {
        return Err(fail("volumes with more than 4 non-trivial dimensions are unsupported".into()));
    }
    let (nx, ny, nz) = (dim[0], dim[1], dim[2]);
    let nt = if ndim >= 4 { dim[3] } else { 1 };

    let datatype = E::read_i16(&bytes[offset::DATATYPE..]);
    let bitpix = E::read_i16(&bytes[offset::BITPIX..]);
    let elem_size = match datatype {
        DT_INT16 => 2,
        DT_INT32 => 4,
        DT_FLOAT32 => 4,
        DT_FLOAT64 => 8,
        other => {
            return Err(fail(format!(
                "unsupported datatype code {other} (supported: int16=4, int32=8, float32=16, float64=64)"
            )))
        }
    };
    if bitpix as usize != elem_size * 8 {
        return Err(fail(format!("malformed header (bitpix {bitpix} for datatype {datatype})")));
    }

    let mut pixdim = [0.0f32; 8];
    for (i, p) in pixdim.iter_mut().enumerate() {
        *p = E::read_f32(&bytes[offset::PIXDIM + 4 * i..]);
    }
    let voxel_size = (pixdim[1] as f64, pixdim[2] as f64, pixdim[3] as f64);
    if voxel_size.0 <= 0.0 || voxel_size.1 <= 0.0 || voxel_size.2 <= 0.0 {
        return Err(fail(format!("malformed header (non-positive pixdim {voxel_size:?})")));
    }

    let vox_offset = E::read_f32(&bytes[offset::VOX_OFFSET..]);
    if !vox_offset.is_finite() || vox_offset < HEADER_SIZE as f32 || vox_offset.fract() != 0.0 {
        return Err(fail(format!("malformed header (vox_offset = {vox_offset})")));
    }
    let vox_offset = vox_offset as usize;

    let sform_code = E::read_i16(&bytes[offset::SFORM_CODE..]);
    let affine = if sform_code > 0 {
        let row = |off: usize| -> [f64; 4] {
            [
                E::read_f32(&bytes[off..]) as f64,
                E::read_f32(&bytes[off + 4..]) as f64,
                E::read_f32(&bytes[off + 8..]) as f64,
                E::read_f32(&bytes[off + 12..]) as f64,
            ]
        };
        [
            row(offset::SROW_X),
            row(offset::SROW_Y),
            row(offset::SROW_Z),
            [0.0, 0.0, 0.0, 1.0],
        ]
    } else {
        [
            [voxel_size.0, 0.0, 0.0, 0.0],
            [0.0, voxel_size.1, 0.0, 0.0],
            [0.0, 0.0, voxel_size.2, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ]
    };

    let n_values = nx
        .checked_mul(ny)
        .and_then(|v| v.checked_mul(nz))
        .and_then(|v| v.checked_mul(nt))
        .ok_or_else(|| fail("dimension product overflow".into()))?;
    let need = vox_offset + n_values * elem_size;
    if bytes.len() < need {
        return Err(fail(format!(
            "payload truncated ({} bytes, need {need})",
            bytes.len()
        )));
    }

    let payload = &bytes[vox_offset..need];
    let mut values = Vec::with_capacity(n_values);
    match datatype {
        DT_INT16 => {
            for c in payload.chunks_exact(2) {
                values.push(E::read_i16(c) as f64);
            }
        }
        DT_INT32 => {
            for c in payload.chunks_exact(4) {
                values.push(E::read_i32(c) as f64);
            }
        }
        DT_FLOAT32 => {
            for c in payload.chunks_exact(4) {
                values.push(E::read_f32(c) as f64);
            }
        }
        DT_FLOAT64 => {
            for c in payload.chunks_exact(8) {
                values.push(E::read_f64(c));
            }
        }
        _ => unreachable!(),
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data(format!("{}: non-finite values in payload", path.display())));
    }

    let grid = VolumeGrid::with_affine((nx, ny, nz), voxel_size, affine)?;
    Ok(RawVolume { grid, nt, values })
}

/// Write a `float32` little-endian NIfTI-1 volume (gzipped if the path
/// ends in `.gz`).
pub fn write(path: &Path, grid: &VolumeGrid, nt: usize, values: &[f64]) -> Result<()> {
    let mut header = vec![0u8; VOX_OFFSET];
    LittleEndian::write_i32(&mut header[offset::SIZEOF_HDR..], HEADER_SIZE as i32);

    let ndim: i16 = if nt > 1 { 4 } else { 3 };
    LittleEndian::write_i16(&mut header[offset::DIM..], ndim);
    let dims = [grid.dims.0, grid.dims.1, grid.dims.2, nt, 1, 1, 1];
    for (i, &d) in dims.iter().enumerate() {
        if d > i16::MAX as usize {
            return Err(Error::Data(format!("dimension {d} exceeds the NIfTI-1 limit")));
        }
        LittleEndian::write_i16(&mut header[offset::DIM + 2 + 2 * i..], d as i16);
    }

    LittleEndian::write_i16(&mut header[offset::DATATYPE..], DT_FLOAT32);
    LittleEndian::write_i16(&mut header[offset::BITPIX..], 32);

    let pixdim = [
        1.0f32,
        grid.voxel_size.0 as f32,
        grid.voxel_size.1 as f32,
        grid.voxel_size.2 as f32,
        1.0,
        1.0,
        1.0,
        1.0,
    ];
    for (i, &p) in pixdim.iter().enumerate() {
        LittleEndian::write_f32(&mut header[offset::PIXDIM + 4 * i..], p);
    }
    LittleEndian::write_f32(&mut header[offset::VOX_OFFSET..], VOX_OFFSET as f32);
    LittleEndian::write_i16(&mut header[offset::SFORM_CODE..], 1);
    for (r, off) in [(0, offset::SROW_X), (1, offset::SROW_Y), (2, offset::SROW_Z)] {
        for c in 0..4 {
            LittleEndian::write_f32(&mut header[off + 4 * c..], grid.affine[r][c] as f32);
        }
    }
    header[offset::MAGIC..offset::MAGIC + 4].copy_from_slice(MAGIC);

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    // Level 1: volume payloads are mostly incompressible floats, so the
    // cheap level wins large time for a few percent of size. The level is
    // fixed, keeping outputs byte-reproducible.
    let mut sink: Box<dyn Write> = if super::is_gz(path) {
        Box::new(GzEncoder::new(BufWriter::new(file), Compression::new(1)))
    } else {
        Box::new(BufWriter::new(file))
    };
    sink.write_all(&header).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::with_capacity(4 << 14);
    for chunk in values.chunks(1 << 14) {
        buf.clear();
        for &v in chunk {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        sink.write_all(&buf).map_err(|e| Error::io(path, e))?;
    }
    sink.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use byteorder::{BigEndian, WriteBytesExt};
    use tempfile::tempdir;

    fn grid() -> VolumeGrid {
        VolumeGrid::new((3, 2, 2), (4.0, 4.0, 4.0)).unwrap()
    }

    /// Hand-assemble a header+payload in the given byte order.
    fn assemble<E: ByteOrder>(datatype: i16, dims: &[usize], payload_bytes: Vec<u8>) -> Vec<u8> {
        let mut h = vec![0u8; VOX_OFFSET];
        E::write_i32(&mut h[offset::SIZEOF_HDR..], 348);
        E::write_i16(&mut h[offset::DIM..], dims.len() as i16);
        for (i, &d) in dims.iter().enumerate() {
            E::write_i16(&mut h[offset::DIM + 2 + 2 * i..], d as i16);
        }
        let bitpix: i16 = match datatype {
            DT_INT16 => 16,
            DT_INT32 => 32,
            DT_FLOAT32 => 32,
            DT_FLOAT64 => 64,
            _ => 0,
        };
        E::write_i16(&mut h[offset::DATATYPE..], datatype);
        E::write_i16(&mut h[offset::BITPIX..], bitpix);
        for i in 0..4 {
            E::write_f32(&mut h[offset::PIXDIM + 4 * i..], 1.0);
        }
        E::write_f32(&mut h[offset::VOX_OFFSET..], VOX_OFFSET as f32);
        h[offset::MAGIC..offset::MAGIC + 4].copy_from_slice(MAGIC);
        h.extend(payload_bytes);
        h
    }

    #[test]
    fn float32_write_read_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("vol.nii");
        let values: Vec<f64> = (0..12).map(|i| i as f64 * 0.5 - 2.0).collect();
        write(&path, &grid(), 1, &values).unwrap();
        let vol = read(&path).unwrap();
        assert_eq!(vol.grid.dims, (3, 2, 2));
        assert_eq!(vol.nt, 1);
        // float32 payloads round-trip bit-exactly.
        for (a, b) in values.iter().zip(&vol.values) {
            assert_eq!(*a as f32, *b as f32);
            assert_eq!(*b, (*a as f32) as f64);
        }
    }

    #[test]
    fn gz_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("vol.nii.gz");
        let values: Vec<f64> = (0..24).map(|i| (i as f64).sin()).collect();
        write(&path, &grid(), 2, &values).unwrap();
        let vol = read(&path).unwrap();
        assert_eq!(vol.nt, 2);
        for (a, b) in values.iter().zip(&vol.values) {
            assert_eq!((*a as f32) as f64, *b);
        }
    }

    #[test]
    fn reads_big_endian_int16() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("be.nii");
        let mut payload = Vec::new();
        for v in [-3i16, 0, 7, 100] {
            payload.write_i16::<BigEndian>(v).unwrap();
        }
        let bytes = assemble::<BigEndian>(DT_INT16, &[4, 1, 1], payload);
        std::fs::write(&path, bytes).unwrap();
        let vol = read(&path).unwrap();
        assert_eq!(vol.values, vec![-3.0, 0.0, 7.0, 100.0]);
        assert_eq!(vol.grid.dims, (4, 1, 1));
    }

    #[test]
    fn reads_little_endian_int32_and_float64() {
        let dir = tempdir().unwrap();
        for (dt, payload, expect) in [
            (
                DT_INT32,
                {
                    let mut p = Vec::new();
                    for v in [1i32, -200000] {
                        p.write_i32::<LittleEndian>(v).unwrap();
                    }
                    p
                },
                vec![1.0, -200000.0],
            ),
            (
                DT_FLOAT64,
                {
                    let mut p = Vec::new();
                    for v in [0.125f64, -3.5] {
                        p.write_f64::<LittleEndian>(v).unwrap();
                    }
                    p
                },
                vec![0.125, -3.5],
            ),
        ] {
            let path = dir.path().join(format!("dt{dt}.nii"));
            let bytes = assemble::<LittleEndian>(dt, &[2, 1, 1], payload);
            std::fs::write(&path, bytes).unwrap();
            assert_eq!(read(&path).unwrap().values, expect);
        }
    }

    #[test]
    fn rejects_unsupported_datatype() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("u8.nii");
        let bytes = assemble::<LittleEndian>(2, &[2, 1, 1], vec![0u8; 2]); // DT_UINT8
        std::fs::write(&path, bytes).unwrap();
        let err = read(&path).unwrap_err().to_string();
        assert!(err.contains("unsupported datatype"), "{err}");
    }

    #[test]
    fn rejects_garbage_header() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("junk.nii");
        std::fs::write(&path, vec![0xABu8; 400]).unwrap();
        assert!(read(&path).is_err());
    }

    #[test]
    fn rejects_truncated_payload() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("trunc.nii");
        let mut payload = Vec::new();
        payload.write_f32::<LittleEndian>(1.0).unwrap();
        let bytes = assemble::<LittleEndian>(DT_FLOAT32, &[3, 2, 2, 1], payload);
        std::fs::write(&path, bytes).unwrap();
        let err = read(&path).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
    }

    #[test]
    fn rejects_nonfinite_payload() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("nan.nii");
        let mut payload = Vec::new();
        payload.write_f32::<LittleEndian>(f32::NAN).unwrap();
        let bytes = assemble::<LittleEndian>(DT_FLOAT32, &[1, 1, 1], payload);
        std::fs::write(&path, bytes).unwrap();
        let err = read(&path).unwrap_err().to_string();
        assert!(err.contains("non-finite"), "{err}");
    }
}
