//! On-disk basis archive: one directory holding per-ROI binary matrices,
//! a global-basis binary, and a JSON manifest with dimensions, thresholds
//! and content hashes for downstream integrity checks.
//!
//! Binary layout (all little-endian): per-ROI files hold voxel indices
//! (u64), centering (f64), singular values (f64), then eigenvectors
//! row-major (`n_voxels × k`); the global file is the same without the
//! index block.

use std::io::{BufWriter, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CompositeBasis, GlobalBasis, LocalBasis};
use crate::error::{Error, Result};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Serialize, Deserialize)]
struct RoiEntry {
    roi_id: u32,
    n_voxels: usize,
    k: usize,
    variance_kept: f64,
    file: String,
    sha256: String,
}

#[derive(Serialize, Deserialize)]
struct GlobalEntry {
    n_features: usize,
    k: usize,
    variance_kept: f64,
    file: String,
    sha256: String,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    n_voxels: usize,
    local_threshold: f64,
    global_threshold: f64,
    rois: Vec<RoiEntry>,
    global: GlobalEntry,
    /// SHA-256 over the concatenated per-file hashes, in manifest order.
    content_hash: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn encode_local(l: &LocalBasis<f64>) -> Vec<u8> {
    let mut buf = Vec::new();
    for &vi in &l.voxel_indices {
        buf.write_u64::<LittleEndian>(vi as u64).unwrap();
    }
    for &c in &l.centering {
        buf.write_f64::<LittleEndian>(c).unwrap();
    }
    for &s in &l.singular_values {
        buf.write_f64::<LittleEndian>(s).unwrap();
    }
    for r in 0..l.eigvecs.nrows() {
        for c in 0..l.eigvecs.ncols() {
            buf.write_f64::<LittleEndian>(l.eigvecs[(r, c)]).unwrap();
        }
    }
    buf
}

fn encode_global(g: &GlobalBasis<f64>) -> Vec<u8> {
    let mut buf = Vec::new();
    for &c in &g.centering {
        buf.write_f64::<LittleEndian>(c).unwrap();
    }
    for &s in &g.singular_values {
        buf.write_f64::<LittleEndian>(s).unwrap();
    }
    for r in 0..g.eigvecs.nrows() {
        for c in 0..g.eigvecs.ncols() {
            buf.write_f64::<LittleEndian>(g.eigvecs[(r, c)]).unwrap();
        }
    }
    buf
}

impl CompositeBasis<f64> {
    /// Write the basis as an archive directory (created if absent).
    pub fn save_archive(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut rois = Vec::with_capacity(self.local.len());
        let mut hash_cat = String::new();
        for l in &self.local {
            let file = format!("roi_{:05}.bin", l.roi_id);
            let bytes = encode_local(l);
            let digest = sha256_hex(&bytes);
            let path = dir.join(&file);
            let f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut w = BufWriter::new(f);
            w.write_all(&bytes).map_err(|e| Error::io(&path, e))?;
            w.flush().map_err(|e| Error::io(&path, e))?;
            hash_cat.push_str(&digest);
            rois.push(RoiEntry {
                roi_id: l.roi_id,
                n_voxels: l.n_voxels(),
                k: l.k(),
                variance_kept: l.variance_kept,
                file,
                sha256: digest,
            });
        }
        let gbytes = encode_global(&self.global);
        let gdigest = sha256_hex(&gbytes);
        let gpath = dir.join("global.bin");
        std::fs::write(&gpath, &gbytes).map_err(|e| Error::io(&gpath, e))?;
        hash_cat.push_str(&gdigest);

        let manifest = Manifest {
            format_version: 1,
            n_voxels: self.n_voxels,
            local_threshold: self.local_threshold,
            global_threshold: self.global_threshold,
            rois,
            global: GlobalEntry {
                n_features: self.global.eigvecs.nrows(),
                k: self.global.k(),
                variance_kept: self.global.variance_kept,
                file: "global.bin".into(),
                sha256: gdigest,
            },
            content_hash: sha256_hex(hash_cat.as_bytes()),
        };
        let mpath = dir.join(MANIFEST_NAME);
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::Format(format!("manifest encode: {e}")))?;
        std::fs::write(&mpath, json).map_err(|e| Error::io(&mpath, e))?;
        Ok(())
    }

    /// Load and integrity-check an archive directory.
    pub fn load_archive(dir: &Path) -> Result<Self> {
        let mpath = dir.join(MANIFEST_NAME);
        let json = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: Manifest = serde_json::from_str(&json)
            .map_err(|e| Error::Format(format!("{}: {e}", mpath.display())))?;
        if manifest.format_version != 1 {
            return Err(Error::Format(format!(
                "unsupported basis archive version {}",
                manifest.format_version
            )));
        }

        let mut hash_cat = String::new();
        let mut local = Vec::with_capacity(manifest.rois.len());
        for entry in &manifest.rois {
            let path = dir.join(&entry.file);
            let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let digest = sha256_hex(&bytes);
            if digest != entry.sha256 {
                return Err(Error::Format(format!(
                    "{} failed its integrity check (archive corrupted?)",
                    path.display()
                )));
            }
            hash_cat.push_str(&digest);

            let (n, k) = (entry.n_voxels, entry.k);
            let expect = n * 8 + n * 8 + k * 8 + n * k * 8;
            if bytes.len() != expect {
                return Err(Error::Format(format!(
                    "{}: {} bytes, expected {expect}",
                    path.display(),
                    bytes.len()
                )));
            }
            let mut r = bytes.as_slice();
            let mut voxel_indices = Vec::with_capacity(n);
            for _ in 0..n {
                voxel_indices.push(read_u64(&mut r)? as usize);
            }
            let centering = read_f64s(&mut r, n)?;
            let singular_values = read_f64s(&mut r, k)?;
            let flat = read_f64s(&mut r, n * k)?;
            let eigvecs = Array2::from_shape_vec((n, k), flat)
                .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
            local.push(LocalBasis {
                roi_id: entry.roi_id,
                voxel_indices,
                eigvecs,
                singular_values,
                variance_kept: entry.variance_kept,
                centering,
            });
        }

        let gpath = dir.join(&manifest.global.file);
        let gbytes = std::fs::read(&gpath).map_err(|e| Error::io(&gpath, e))?;
        let gdigest = sha256_hex(&gbytes);
        if gdigest != manifest.global.sha256 {
            return Err(Error::Format(format!(
                "{} failed its integrity check (archive corrupted?)",
                gpath.display()
            )));
        }
        hash_cat.push_str(&gdigest);
        if sha256_hex(hash_cat.as_bytes()) != manifest.content_hash {
            return Err(Error::Format("basis archive content hash mismatch".into()));
        }

        let (nf, k) = (manifest.global.n_features, manifest.global.k);
        let expect = nf * 8 + k * 8 + nf * k * 8;
        if gbytes.len() != expect {
            return Err(Error::Format(format!(
                "{}: {} bytes, expected {expect}",
                gpath.display(),
                gbytes.len()
            )));
        }
        let mut r = gbytes.as_slice();
        let centering = read_f64s(&mut r, nf)?;
        let singular_values = read_f64s(&mut r, k)?;
        let flat = read_f64s(&mut r, nf * k)?;
        let eigvecs = Array2::from_shape_vec((nf, k), flat)
            .map_err(|e| Error::Format(format!("{}: {e}", gpath.display())))?;

        let basis = CompositeBasis {
            local,
            global: GlobalBasis {
                eigvecs,
                singular_values,
                variance_kept: manifest.global.variance_kept,
                centering,
            },
            n_voxels: manifest.n_voxels,
            local_threshold: manifest.local_threshold,
            global_threshold: manifest.global_threshold,
        };
        if basis.n_local_features() != manifest.global.n_features {
            return Err(Error::Format(
                "basis archive inconsistent: Σ k_r does not match global feature count".into(),
            ));
        }
        Ok(basis)
    }
}

fn read_u64(r: &mut &[u8]) -> Result<u64> {
    r.read_u64::<LittleEndian>()
        .map_err(|e| Error::Format(format!("basis archive truncated: {e}")))
}

fn read_f64s(r: &mut &[u8], n: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; n];
    r.read_f64_into::<LittleEndian>(&mut out)
        .map_err(|e| Error::Format(format!("basis archive truncated: {e}")))?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;
    use crate::simulate::octant_parcellation;
    use crate::volume::{BrainMask, VolumeGrid};
    use tempfile::tempdir;

    fn fitted_basis() -> CompositeBasis<f64> {
        let grid = VolumeGrid::new((6, 6, 6), (1.0, 1.0, 1.0)).unwrap();
        let parc = octant_parcellation(&grid).unwrap();
        let mask = BrainMask::full(grid);
        let mut rng = CounterRng::new(8);
        let mut stack = Array2::<f64>::zeros((15, mask.n_masked()));
        for v in stack.iter_mut() {
            *v = 0.5 + 0.1 * rng.normal();
        }
        CompositeBasis::fit(&stack, &parc, &mask, 0.95, 0.95).unwrap()
    }

    #[test]
    fn archive_round_trip_bit_exact() {
        let basis = fitted_basis();
        let dir = tempdir().unwrap();
        basis.save_archive(dir.path()).unwrap();
        let loaded = CompositeBasis::load_archive(dir.path()).unwrap();
        assert_eq!(loaded.n_voxels, basis.n_voxels);
        assert_eq!(loaded.local.len(), basis.local.len());
        for (a, b) in basis.local.iter().zip(&loaded.local) {
            assert_eq!(a.roi_id, b.roi_id);
            assert_eq!(a.voxel_indices, b.voxel_indices);
            assert_eq!(a.centering, b.centering);
            assert_eq!(a.singular_values, b.singular_values);
            assert_eq!(a.eigvecs, b.eigvecs);
        }
        assert_eq!(basis.global.eigvecs, loaded.global.eigvecs);
        assert_eq!(basis.global.centering, loaded.global.centering);
    }

    #[test]
    fn archive_detects_corruption() {
        let basis = fitted_basis();
        let dir = tempdir().unwrap();
        basis.save_archive(dir.path()).unwrap();
        // Flip one byte in the first ROI file.
        let path = dir.path().join(format!("roi_{:05}.bin", basis.local[0].roi_id));
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[40] ^= 0xFF;
        std::fs::write(&path, bytes).unwrap();
        let err = CompositeBasis::load_archive(dir.path()).unwrap_err().to_string();
        assert!(err.contains("integrity"), "{err}");
    }
}
