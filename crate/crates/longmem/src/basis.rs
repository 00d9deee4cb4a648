//! Two-level composite-basis reduction of stacked subject maps.
//!
//! Level one fits an orthonormal basis per ROI by thin SVD of the
//! column-centered `N × n_voxels(r)` submatrix (via the `N × N` Gram
//! matrix, since subjects are few and voxels many); level two fits a
//! global basis across the retained local features the same way. Both
//! levels keep the smallest component count whose cumulative squared
//! singular values reach the variance threshold.
//!
//! Back-projection multiplies by the transposes: the composite basis has
//! orthonormal columns, so its Moore–Penrose inverse is its transpose.
//! Centering offsets are added back only when reconstructing data;
//! covariate-effect rows are slopes and back-project without offsets.

pub mod archive;

use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::sym_eigen;
use crate::num::Real;
use crate::volume::{roi_members, BrainMask, Parcellation};

/// Relative eigenvalue cutoff below which a direction counts as null.
const RANK_TOL: f64 = 1e-12;

/// Orthonormal voxel-space basis for one ROI.
#[derive(Clone, Debug)]
pub struct LocalBasis<F> {
    pub roi_id: u32,
    /// Masked voxel indices forming this ROI (columns of the stack).
    pub voxel_indices: Vec<usize>,
    /// `n_voxels × k_r`, orthonormal columns.
    pub eigvecs: Array2<F>,
    /// Retained singular values, descending.
    pub singular_values: Vec<F>,
    pub variance_kept: F,
    /// Per-voxel means over subjects, subtracted before fitting.
    pub centering: Vec<F>,
}

impl<F: Real> LocalBasis<F> {
    pub fn k(&self) -> usize {
        self.eigvecs.ncols()
    }

    pub fn n_voxels(&self) -> usize {
        self.voxel_indices.len()
    }
}

/// Orthonormal basis over the concatenated local features.
#[derive(Clone, Debug)]
pub struct GlobalBasis<F> {
    /// `(Σ k_r) × PC_f`, orthonormal columns.
    pub eigvecs: Array2<F>,
    pub singular_values: Vec<F>,
    pub variance_kept: F,
    /// Per-feature means over subjects.
    pub centering: Vec<F>,
}

impl<F: Real> GlobalBasis<F> {
    pub fn k(&self) -> usize {
        self.eigvecs.ncols()
    }
}

/// Subject maps projected into the composite space (`N × PC_f`).
#[derive(Clone, Debug)]
pub struct ProjectedMaps<F> {
    pub matrix: Array2<F>,
}

/// The fitted two-level basis with its bookkeeping.
#[derive(Clone, Debug)]
pub struct CompositeBasis<F> {
    pub local: Vec<LocalBasis<F>>,
    pub global: GlobalBasis<F>,
    pub n_voxels: usize,
    pub local_threshold: F,
    pub global_threshold: F,
}

/// Centered SVD of one data block via its subject-space Gram matrix.
/// Returns (centering, singular values, right singular vectors) truncated
/// at the variance threshold.
fn centered_svd<F: Real>(
    block: &Array2<F>,
    threshold: F,
) -> Result<(Vec<F>, Vec<F>, Array2<F>)> {
    let n = block.nrows();
    let p = block.ncols();
    let centering: Vec<F> = block
        .axis_iter(Axis(1))
        .map(|col| col.iter().copied().sum::<F>() / F::from_usize(n).unwrap())
        .collect();
    let mut centered = block.clone();
    for (j, &m) in centering.iter().enumerate() {
        for i in 0..n {
            centered[(i, j)] -= m;
        }
    }

    let gram = centered.dot(&centered.t());
    let eig = sym_eigen(&gram)?;
    let total: F = eig.values.iter().map(|&l| l.max(F::zero())).sum();

    // Degenerate block (identical across subjects): keep one canonical
    // direction so downstream shapes stay valid.
    if total <= F::zero() {
        let mut v = Array2::<F>::zeros((p, 1));
        v[(0, 0)] = F::one();
        return Ok((centering, vec![F::zero()], v));
    }

    let rank_cut = eig.values[0] * F::from_f64_const(RANK_TOL);
    let mut k = 0;
    let mut kept = F::zero();
    for (i, &l) in eig.values.iter().enumerate() {
        if l <= rank_cut || i >= n.min(p) {
            break;
        }
        kept += l;
        k = i + 1;
        if kept >= threshold * total {
            break;
        }
    }
    let k = k.max(1);

    let mut singular = Vec::with_capacity(k);
    let mut v = Array2::<F>::zeros((p, k));
    for j in 0..k {
        let s = eig.values[j].max(F::zero()).sqrt();
        singular.push(s);
        let u = eig.vectors.column(j);
        // v_j = Xᵀ u_j / s_j.
        for c in 0..p {
            let mut acc = F::zero();
            for r in 0..n {
                acc += centered[(r, c)] * u[r];
            }
            v[(c, j)] = acc / s;
        }
    }
    // One modified Gram–Schmidt pass keeps columns orthonormal to
    // round-off even when trailing singular values sit near the cutoff.
    for j in 0..k {
        for prev in 0..j {
            let dot: F = (0..p).map(|c| v[(c, j)] * v[(c, prev)]).sum();
            for c in 0..p {
                let adj = dot * v[(c, prev)];
                v[(c, j)] -= adj;
            }
        }
        let norm: F = (0..p).map(|c| v[(c, j)] * v[(c, j)]).sum::<F>().sqrt();
        if norm > F::zero() {
            for c in 0..p {
                v[(c, j)] /= norm;
            }
        }
    }

    Ok((centering, singular, v))
}

/// Fit per-ROI local bases on a stacked `N × N_v` matrix.
pub fn fit_local_bases<F: Real>(
    stack: &Array2<F>,
    parcellation: &Parcellation,
    mask: &BrainMask,
    threshold: F,
) -> Result<Vec<LocalBasis<F>>> {
    if stack.nrows() < 2 {
        return Err(Error::Data(format!(
            "basis fitting needs at least 2 subjects, got {}",
            stack.nrows()
        )));
    }
    if !(threshold > F::zero() && threshold <= F::one()) {
        return Err(Error::Config("variance threshold must lie in (0, 1]".into()));
    }
    if stack.ncols() != mask.n_masked() {
        return Err(Error::Data(format!(
            "stack has {} voxels but mask has {}",
            stack.ncols(),
            mask.n_masked()
        )));
    }
    let members = roi_members(parcellation, mask);
    if members.len() != parcellation.n_rois() {
        return Err(Error::Data(
            "parcellation has an ROI with no masked voxels (harmonize first)".into(),
        ));
    }

    members
        .into_par_iter()
        .map(|(roi_id, voxel_indices)| {
            let mut block = Array2::<F>::zeros((stack.nrows(), voxel_indices.len()));
            for (j, &vi) in voxel_indices.iter().enumerate() {
                for i in 0..stack.nrows() {
                    block[(i, j)] = stack[(i, vi)];
                }
            }
            let (centering, singular_values, eigvecs) = centered_svd(&block, threshold)?;
            let total: F = {
                // Recompute total variance for the bookkeeping ratio.
                let mut t = F::zero();
                for j in 0..block.ncols() {
                    let m = centering[j];
                    for i in 0..block.nrows() {
                        let d = block[(i, j)] - m;
                        t += d * d;
                    }
                }
                t
            };
            let kept: F = singular_values.iter().map(|&s| s * s).sum();
            let variance_kept = if total > F::zero() { kept / total } else { F::one() };
            Ok(LocalBasis {
                roi_id,
                voxel_indices,
                eigvecs,
                singular_values,
                variance_kept,
                centering,
            })
        })
        .collect()
}

/// Fit the second-level basis on the concatenated local features.
pub fn fit_global_basis<F: Real>(
    local_features: &Array2<F>,
    threshold: F,
) -> Result<GlobalBasis<F>> {
    if local_features.ncols() == 0 {
        return Err(Error::Data("no local features to fit the global basis on".into()));
    }
    let (centering, singular_values, eigvecs) = centered_svd(local_features, threshold)?;
    let total: F = {
        let n = local_features.nrows();
        let mut t = F::zero();
        for j in 0..local_features.ncols() {
            let m = centering[j];
            for i in 0..n {
                let d = local_features[(i, j)] - m;
                t += d * d;
            }
        }
        t
    };
    let kept: F = singular_values.iter().map(|&s| s * s).sum();
    let variance_kept = if total > F::zero() { kept / total } else { F::one() };
    Ok(GlobalBasis { eigvecs, singular_values, variance_kept, centering })
}

impl<F: Real> CompositeBasis<F> {
    /// Fit both levels on a stacked `N × N_v` matrix.
    pub fn fit(
        stack: &Array2<F>,
        parcellation: &Parcellation,
        mask: &BrainMask,
        local_threshold: F,
        global_threshold: F,
    ) -> Result<Self> {
        let local = fit_local_bases(stack, parcellation, mask, local_threshold)?;
        let features = local_project(&local, stack);
        let global = fit_global_basis(&features, global_threshold)?;
        Ok(CompositeBasis {
            local,
            global,
            n_voxels: stack.ncols(),
            local_threshold,
            global_threshold,
        })
    }

    /// Total retained local features (Σ k_r).
    pub fn n_local_features(&self) -> usize {
        self.local.iter().map(|l| l.k()).sum()
    }

    /// Retained composite components (PC_f).
    pub fn n_components(&self) -> usize {
        self.global.k()
    }

    /// Project subject maps into the composite space:
    /// `α* = ((α − μ_local)Φ − μ_global)Ψ`, computed blockwise.
    pub fn project(&self, stack: &Array2<F>) -> Result<ProjectedMaps<F>> {
        if stack.ncols() != self.n_voxels {
            return Err(Error::Data(format!(
                "stack has {} voxels, basis was fitted on {}",
                stack.ncols(),
                self.n_voxels
            )));
        }
        let mut features = local_project(&self.local, stack);
        for (j, &m) in self.global.centering.iter().enumerate() {
            for i in 0..features.nrows() {
                features[(i, j)] -= m;
            }
        }
        Ok(ProjectedMaps { matrix: features.dot(&self.global.eigvecs) })
    }

    /// Back-project component-space coefficient rows (`Q × PC_f`) to voxel
    /// space (`Q × N_v`) with no centering offsets; the transform for
    /// slope coefficients.
    pub fn backproject_effects(&self, coef: &Array2<F>) -> Result<Array2<F>> {
        if coef.ncols() != self.n_components() {
            return Err(Error::Data(format!(
                "coefficients have {} components, basis has {}",
                coef.ncols(),
                self.n_components()
            )));
        }
        let features = coef.dot(&self.global.eigvecs.t());
        Ok(self.features_to_voxels(&features))
    }

    /// Reconstruct data rows from projected maps, adding both centering
    /// offsets back; the transform for data (not slopes).
    pub fn reconstruct(&self, projected: &ProjectedMaps<F>) -> Result<Array2<F>> {
        if projected.matrix.ncols() != self.n_components() {
            return Err(Error::Data("projected maps do not match basis components".into()));
        }
        let mut features = projected.matrix.dot(&self.global.eigvecs.t());
        for (j, &m) in self.global.centering.iter().enumerate() {
            for i in 0..features.nrows() {
                features[(i, j)] += m;
            }
        }
        let mut out = self.features_to_voxels(&features);
        for l in &self.local {
            for (j, &vi) in l.voxel_indices.iter().enumerate() {
                for i in 0..out.nrows() {
                    out[(i, vi)] += l.centering[j];
                }
            }
        }
        Ok(out)
    }

    fn features_to_voxels(&self, features: &Array2<F>) -> Array2<F> {
        let rows = features.nrows();
        let mut out = Array2::<F>::zeros((rows, self.n_voxels));
        let mut offset = 0;
        for l in &self.local {
            let k = l.k();
            let block = features.slice(ndarray::s![.., offset..offset + k]);
            let voxels = block.dot(&l.eigvecs.t());
            for (j, &vi) in l.voxel_indices.iter().enumerate() {
                for i in 0..rows {
                    out[(i, vi)] = voxels[(i, j)];
                }
            }
            offset += k;
        }
        out
    }

    /// One composite column (ΦΨ eₖ) as a voxel map; test/debug helper.
    pub fn composite_column(&self, component: usize) -> Array1<F> {
        let mut unit = Array2::<F>::zeros((1, self.n_components()));
        unit[(0, component)] = F::one();
        let map = self.backproject_effects(&unit).expect("component index in range");
        map.row(0).to_owned()
    }
}

/// Apply the local bases: `(α − μ_local)Φ`, concatenated over ROIs.
fn local_project<F: Real>(local: &[LocalBasis<F>], stack: &Array2<F>) -> Array2<F> {
    let n = stack.nrows();
    let total_k: usize = local.iter().map(|l| l.k()).sum();
    let mut features = Array2::<F>::zeros((n, total_k));
    let mut offset = 0;
    for l in local {
        let mut block = Array2::<F>::zeros((n, l.n_voxels()));
        for (j, &vi) in l.voxel_indices.iter().enumerate() {
            let m = l.centering[j];
            for i in 0..n {
                block[(i, j)] = stack[(i, vi)] - m;
            }
        }
        let proj = block.dot(&l.eigvecs);
        for j in 0..l.k() {
            for i in 0..n {
                features[(i, offset + j)] = proj[(i, j)];
            }
        }
        offset += l.k();
    }
    features
}
