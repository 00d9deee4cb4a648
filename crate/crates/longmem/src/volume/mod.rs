//! Volumetric and tabular data ingestion.
//!
//! Readers accept NIfTI-1 (`.nii`, `.nii.gz`) and a raw fallback format
//! (`.raw` payload + `.raw.hdr` text sidecar); covariates come from
//! comma-separated text. All payload datatypes are converted to `f64`
//! internally; result volumes are written as `float32`.
//!
//! Voxel linearization is NIfTI order throughout: `x` fastest, then `y`,
//! then `z` (`linear = x + nx·(y + ny·z)`).

pub mod covariates;
pub mod nifti;
pub mod raw;

use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub use covariates::{read_covariates, CovariateTable};

/// Tolerance for grid/affine agreement between volumes of one analysis.
pub const GRID_TOL: f64 = 1e-6;

/// Voxel lattice geometry shared by all volumes of an analysis.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumeGrid {
    pub dims: (usize, usize, usize),
    /// Voxel edge lengths in millimeters.
    pub voxel_size: (f64, f64, f64),
    /// Voxel-index → world-coordinate map (row-major 4×4).
    pub affine: [[f64; 4]; 4],
}

impl VolumeGrid {
    pub fn new(dims: (usize, usize, usize), voxel_size: (f64, f64, f64)) -> Result<Self> {
        let affine = [
            [voxel_size.0, 0.0, 0.0, 0.0],
            [0.0, voxel_size.1, 0.0, 0.0],
            [0.0, 0.0, voxel_size.2, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ];
        Self::with_affine(dims, voxel_size, affine)
    }

    pub fn with_affine(
        dims: (usize, usize, usize),
        voxel_size: (f64, f64, f64),
        affine: [[f64; 4]; 4],
    ) -> Result<Self> {
        if dims.0 < 1 || dims.1 < 1 || dims.2 < 1 {
            return Err(Error::Data(format!("grid dims must be >= 1, got {dims:?}")));
        }
        if voxel_size.0 <= 0.0 || voxel_size.1 <= 0.0 || voxel_size.2 <= 0.0 {
            return Err(Error::Data(format!(
                "voxel size must be positive, got {voxel_size:?}"
            )));
        }
        // Upper-left 3x3 block must be nonsingular.
        let m = &affine;
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        if det.abs() < 1e-12 {
            return Err(Error::Data("affine upper-left 3x3 block is singular".into()));
        }
        Ok(VolumeGrid { dims, voxel_size, affine })
    }

    pub fn n_voxels(&self) -> usize {
        self.dims.0 * self.dims.1 * self.dims.2
    }

    pub fn linear_index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims.0 * (y + self.dims.1 * z)
    }

    pub fn coords_of(&self, linear: usize) -> (usize, usize, usize) {
        let (nx, ny, _) = self.dims;
        (linear % nx, (linear / nx) % ny, linear / (nx * ny))
    }

    /// World coordinates of a voxel index.
    pub fn world(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        let v = [x as f64, y as f64, z as f64, 1.0];
        let mut out = [0.0; 3];
        for (i, item) in out.iter_mut().enumerate() {
            *item = (0..4).map(|j| self.affine[i][j] * v[j]).sum();
        }
        out
    }

    /// Same lattice and affine within [`GRID_TOL`].
    pub fn compatible(&self, other: &VolumeGrid) -> bool {
        if self.dims != other.dims {
            return false;
        }
        for i in 0..4 {
            for j in 0..4 {
                if (self.affine[i][j] - other.affine[i][j]).abs() > GRID_TOL {
                    return false;
                }
            }
        }
        true
    }
}

/// Require every grid to match the first; hard error otherwise.
pub fn check_grids(grids: &[(&str, &VolumeGrid)]) -> Result<()> {
    if let Some(((name0, g0), rest)) = grids.split_first() {
        for (name, g) in rest {
            if !g0.compatible(g) {
                return Err(Error::Data(format!(
                    "grid mismatch between {name0} and {name}: dims {:?} vs {:?}",
                    g0.dims, g.dims
                )));
            }
        }
    }
    Ok(())
}

/// Raw 3-D or 4-D payload read from disk, before masking.
#[derive(Clone, Debug)]
pub struct RawVolume {
    pub grid: VolumeGrid,
    /// 4th dimension length; 1 for 3-D volumes.
    pub nt: usize,
    /// Values in NIfTI order, time-major blocks: `values[t*n_voxels + linear]`.
    pub values: Vec<f64>,
}

/// Included-voxel set with a stable bijection onto `0..n_masked`.
///
/// Masked indices enumerate included voxels in ascending linear order, so
/// the bijection is identical across reads of the same file.
#[derive(Clone, Debug)]
pub struct BrainMask {
    pub grid: VolumeGrid,
    included: Vec<bool>,
    masked_to_linear: Vec<usize>,
    linear_to_masked: Vec<Option<usize>>,
}

impl BrainMask {
    pub fn from_included(grid: VolumeGrid, included: Vec<bool>) -> Result<Self> {
        if included.len() != grid.n_voxels() {
            return Err(Error::Data(format!(
                "mask has {} entries for a {}-voxel grid",
                included.len(),
                grid.n_voxels()
            )));
        }
        let masked_to_linear: Vec<usize> =
            included.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect();
        if masked_to_linear.is_empty() {
            return Err(Error::Data("mask includes no voxels".into()));
        }
        let mut linear_to_masked = vec![None; included.len()];
        for (mi, &li) in masked_to_linear.iter().enumerate() {
            linear_to_masked[li] = Some(mi);
        }
        Ok(BrainMask { grid, included, masked_to_linear, linear_to_masked })
    }

    /// Mask covering the whole grid.
    pub fn full(grid: VolumeGrid) -> Self {
        let n = grid.n_voxels();
        Self::from_included(grid, vec![true; n]).expect("full mask is nonempty")
    }

    pub fn n_masked(&self) -> usize {
        self.masked_to_linear.len()
    }

    pub fn is_included(&self, linear: usize) -> bool {
        self.included[linear]
    }

    pub fn linear_of(&self, masked: usize) -> usize {
        self.masked_to_linear[masked]
    }

    pub fn masked_of(&self, linear: usize) -> Option<usize> {
        self.linear_to_masked[linear]
    }

    pub fn masked_linears(&self) -> &[usize] {
        &self.masked_to_linear
    }
}

/// One subject's masked 4-D dataset: rows are masked voxels, columns are
/// time points.
#[derive(Clone, Debug)]
pub struct Dataset4D {
    pub grid: VolumeGrid,
    pub t: usize,
    /// `n_masked × T`.
    pub data: Array2<f64>,
    pub subject_id: String,
}

impl Dataset4D {
    pub fn new(grid: VolumeGrid, data: Array2<f64>, subject_id: impl Into<String>) -> Result<Self> {
        let t = data.ncols();
        if t < 16 {
            return Err(Error::Data(format!(
                "time series has {t} points; at least 16 are required for a usable scale fit"
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite value in dataset".into()));
        }
        Ok(Dataset4D { grid, t, data, subject_id: subject_id.into() })
    }

    pub fn n_voxels(&self) -> usize {
        self.data.nrows()
    }
}

/// Integer parcellation of the grid into regions of interest.
#[derive(Clone, Debug)]
pub struct Parcellation {
    pub grid: VolumeGrid,
    /// Per-voxel label in linear order; 0 is background.
    pub label: Vec<u32>,
    /// Sorted distinct positive labels.
    pub roi_ids: Vec<u32>,
}

impl Parcellation {
    pub fn new(grid: VolumeGrid, label: Vec<u32>) -> Result<Self> {
        if label.len() != grid.n_voxels() {
            return Err(Error::Data(format!(
                "parcellation has {} entries for a {}-voxel grid",
                label.len(),
                grid.n_voxels()
            )));
        }
        let mut roi_ids: Vec<u32> = label.iter().copied().filter(|&l| l > 0).collect();
        roi_ids.sort_unstable();
        roi_ids.dedup();
        if roi_ids.is_empty() {
            return Err(Error::Data("parcellation contains no positive labels".into()));
        }
        Ok(Parcellation { grid, label, roi_ids })
    }

    pub fn n_rois(&self) -> usize {
        self.roi_ids.len()
    }
}

/// Outcome of aligning a parcellation with a mask.
#[derive(Clone, Debug, Default)]
pub struct HarmonizeReport {
    /// Labels with no voxel inside the mask, dropped with a warning.
    pub dropped_labels: Vec<u32>,
    /// Masked voxels that carried label 0 and were reassigned.
    pub reassigned_voxels: usize,
}

/// Align a parcellation with a mask so that every masked voxel carries a
/// positive label.
///
/// Labels absent from the mask are dropped; masked label-0 voxels are
/// reassigned to the nearest labeled masked voxel (world-coordinate
/// Euclidean distance, ties broken by the smaller label).
pub fn harmonize_parcellation(
    parcellation: &Parcellation,
    mask: &BrainMask,
) -> Result<(Parcellation, HarmonizeReport)> {
    if !parcellation.grid.compatible(&mask.grid) {
        return Err(Error::Data(
            "parcellation and mask grids do not match (dims/affine)".into(),
        ));
    }
    let grid = &mask.grid;
    let mut report = HarmonizeReport::default();

    let mut labels_in_mask: Vec<u32> = mask
        .masked_linears()
        .iter()
        .map(|&li| parcellation.label[li])
        .filter(|&l| l > 0)
        .collect();
    labels_in_mask.sort_unstable();
    labels_in_mask.dedup();
    if labels_in_mask.is_empty() {
        return Err(Error::Data("no parcellation label overlaps the mask".into()));
    }
    report.dropped_labels = parcellation
        .roi_ids
        .iter()
        .copied()
        .filter(|l| labels_in_mask.binary_search(l).is_err())
        .collect();

    // Labeled masked voxels with world coordinates, for nearest lookup.
    let labeled: Vec<(u32, [f64; 3])> = mask
        .masked_linears()
        .iter()
        .filter_map(|&li| {
            let l = parcellation.label[li];
            (l > 0).then(|| {
                let (x, y, z) = grid.coords_of(li);
                (l, grid.world(x, y, z))
            })
        })
        .collect();

    let mut new_label = vec![0u32; grid.n_voxels()];
    for &li in mask.masked_linears() {
        let l = parcellation.label[li];
        if l > 0 {
            new_label[li] = l;
            continue;
        }
        let (x, y, z) = grid.coords_of(li);
        let w = grid.world(x, y, z);
        let mut best = (f64::INFINITY, u32::MAX);
        for &(cand, cw) in &labeled {
            let d2 = (w[0] - cw[0]).powi(2) + (w[1] - cw[1]).powi(2) + (w[2] - cw[2]).powi(2);
            if d2 < best.0 - 1e-12 || ((d2 - best.0).abs() <= 1e-12 && cand < best.1) {
                best = (d2, cand);
            }
        }
        new_label[li] = best.1;
        report.reassigned_voxels += 1;
    }

    Ok((Parcellation::new(grid.clone(), new_label)?, report))
}

/// Per-ROI masked-voxel index lists, in ascending ROI id and ascending
/// masked index order.
pub fn roi_members(parcellation: &Parcellation, mask: &BrainMask) -> Vec<(u32, Vec<usize>)> {
    let mut members: Vec<(u32, Vec<usize>)> =
        parcellation.roi_ids.iter().map(|&id| (id, Vec::new())).collect();
    let pos: std::collections::HashMap<u32, usize> =
        parcellation.roi_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    for (mi, &li) in mask.masked_linears().iter().enumerate() {
        let l = parcellation.label[li];
        if l > 0 {
            if let Some(&p) = pos.get(&l) {
                members[p].1.push(mi);
            }
        }
    }
    members.retain(|(_, v)| !v.is_empty());
    members
}

fn is_gz(path: &Path) -> bool {
    path.extension().map_or(false, |e| e.eq_ignore_ascii_case("gz"))
}

fn is_raw(path: &Path) -> bool {
    path.extension().map_or(false, |e| e.eq_ignore_ascii_case("raw"))
}

/// Read any supported volume file into a [`RawVolume`].
pub fn read_raw_volume(path: &Path) -> Result<RawVolume> {
    if is_raw(path) {
        raw::read(path)
    } else {
        nifti::read(path)
    }
}

/// Read a 4-D dataset, restricted to `mask` when given (a full-grid mask
/// otherwise). The subject id defaults to the file stem.
pub fn read_dataset(path: &Path, mask: Option<&BrainMask>) -> Result<Dataset4D> {
    let vol = read_raw_volume(path)?;
    if vol.nt == 1 {
        return Err(Error::Data(format!("{}: not a time series volume (4th dim is 1)", path.display())));
    }
    let full;
    let mask = match mask {
        Some(m) => {
            if !m.grid.compatible(&vol.grid) {
                return Err(Error::Data(format!(
                    "{}: dimension mismatch with mask ({:?} vs {:?})",
                    path.display(),
                    vol.grid.dims,
                    m.grid.dims
                )));
            }
            m
        }
        None => {
            full = BrainMask::full(vol.grid.clone());
            &full
        }
    };
    let n_vox = vol.grid.n_voxels();
    let nm = mask.n_masked();
    let mut data = Array2::<f64>::zeros((nm, vol.nt));
    for t in 0..vol.nt {
        let block = &vol.values[t * n_vox..(t + 1) * n_vox];
        for (mi, &li) in mask.masked_linears().iter().enumerate() {
            data[(mi, t)] = block[li];
        }
    }
    let subject_id = path
        .file_name()
        .map(|s| s.to_string_lossy().replace(".nii.gz", "").replace(".nii", "").replace(".raw", ""))
        .unwrap_or_else(|| "unknown".into());
    Dataset4D::new(vol.grid, data, subject_id)
}

/// Read a 3-D volume as a mask (nonzero ⇒ included).
pub fn read_mask(path: &Path) -> Result<BrainMask> {
    let vol = read_raw_volume(path)?;
    if vol.nt != 1 {
        return Err(Error::Data(format!("{}: mask must be 3-D", path.display())));
    }
    let included = vol.values.iter().map(|&v| v != 0.0).collect();
    BrainMask::from_included(vol.grid, included)
}

/// Read a 3-D integer label volume as a parcellation.
pub fn read_parcellation(path: &Path) -> Result<Parcellation> {
    let vol = read_raw_volume(path)?;
    if vol.nt != 1 {
        return Err(Error::Data(format!("{}: parcellation must be 3-D", path.display())));
    }
    let mut labels = Vec::with_capacity(vol.values.len());
    for &v in &vol.values {
        if v < -0.5 || (v - v.round()).abs() > 1e-6 {
            return Err(Error::Data(format!(
                "{}: parcellation value {v} is not a nonnegative integer",
                path.display()
            )));
        }
        labels.push(v.round() as u32);
    }
    Parcellation::new(vol.grid, labels)
}

/// Write one masked value per included voxel as a 3-D `float32` volume;
/// voxels outside the mask are written as 0.
pub fn write_volume(path: &Path, grid: &VolumeGrid, values: &[f64], mask: &BrainMask) -> Result<()> {
    if values.len() != mask.n_masked() {
        return Err(Error::Data(format!(
            "write_volume: {} values for {} masked voxels",
            values.len(),
            mask.n_masked()
        )));
    }
    if !grid.compatible(&mask.grid) {
        return Err(Error::Data("write_volume: grid does not match mask grid".into()));
    }
    let mut full = vec![0.0f64; grid.n_voxels()];
    for (mi, &li) in mask.masked_linears().iter().enumerate() {
        full[li] = values[mi];
    }
    write_full_volume(path, grid, 1, &full)
}

/// Write a full (unmasked) volume with `nt` time blocks as `float32`.
pub fn write_full_volume(path: &Path, grid: &VolumeGrid, nt: usize, values: &[f64]) -> Result<()> {
    if values.len() != grid.n_voxels() * nt {
        return Err(Error::Data(format!(
            "volume payload has {} values, expected {}",
            values.len(),
            grid.n_voxels() * nt
        )));
    }
    if is_raw(path) {
        raw::write(path, grid, nt, values)
    } else {
        nifti::write(path, grid, nt, values)
    }
}
