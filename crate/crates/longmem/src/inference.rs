//! Multiplicity-corrected significance mapping.
//!
//! The Bayesian path builds joint credible bands from the maximum
//! standardized deviation across voxels per draw, bounding the
//! experimentwise error at ζ. The frequentist comparison path runs
//! per-voxel OLS on the basis-reconstructed maps with Benjamini–Hochberg
//! FDR control. Both end in 3-D cluster-size thresholding and map
//! algebra.

use ndarray::Array2;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, chol_inverse, chol_solve};
use crate::volume::VolumeGrid;

/// A replayable stream of per-draw voxel maps for one covariate.
///
/// The band construction is two-pass, so the source must be able to
/// replay its draws in the same order twice.
pub trait DrawStream {
    fn n_draws(&self) -> usize;
    fn n_voxels(&self) -> usize;
    /// Invoke the visitor once per draw, in draw order.
    fn replay(&self, visit: &mut dyn FnMut(&[f64])) -> Result<()>;
}

/// In-memory draws, one vector per draw.
impl DrawStream for Vec<Vec<f64>> {
    fn n_draws(&self) -> usize {
        self.len()
    }

    fn n_voxels(&self) -> usize {
        self.first().map_or(0, |d| d.len())
    }

    fn replay(&self, visit: &mut dyn FnMut(&[f64])) -> Result<()> {
        for d in self {
            visit(d);
        }
        Ok(())
    }
}

/// Simultaneous credible band over all voxels.
#[derive(Clone, Debug)]
pub struct JointBand {
    /// Per-voxel posterior mean.
    pub mean: Vec<f64>,
    /// Per-voxel posterior sd (sample sd over draws).
    pub sd: Vec<f64>,
    /// Global quantile of the max standardized deviation.
    pub q_zeta: f64,
    pub zeta: f64,
    /// Voxels with zero posterior sd, excluded from the max (warned).
    pub excluded: Vec<usize>,
}

impl JointBand {
    /// Band half-width per voxel: q_ζ·s_v.
    pub fn half_width(&self, v: usize) -> f64 {
        self.q_zeta * self.sd[v]
    }

    /// Voxels whose band excludes zero. Excluded (zero-sd) voxels are
    /// never flagged.
    pub fn flags(&self) -> Vec<bool> {
        self.mean
            .iter()
            .zip(&self.sd)
            .map(|(&m, &s)| s > 0.0 && m.abs() > self.q_zeta * s)
            .collect()
    }
}

/// Build the joint band at level ζ from ≥ 500 draws.
///
/// Pass 1 accumulates per-voxel mean and sd (Welford); pass 2 computes
/// the per-draw maximum standardized deviation M_t and takes its
/// empirical (1−ζ) quantile (inclusive order statistic at
/// ceil((1−ζ)·n_draws)).
pub fn joint_credible_band(stream: &dyn DrawStream, zeta: f64) -> Result<JointBand> {
    let n_draws = stream.n_draws();
    let n_vox = stream.n_voxels();
    if n_draws < 500 {
        return Err(Error::Data(format!("joint band needs at least 500 draws, got {n_draws}")));
    }
    if !(zeta > 0.0 && zeta < 0.5) {
        return Err(Error::Data(format!("zeta must lie in (0, 0.5), got {zeta}")));
    }

    // Pass 1: Welford accumulation per voxel.
    let mut mean = vec![0.0f64; n_vox];
    let mut m2 = vec![0.0f64; n_vox];
    let mut count = 0usize;
    stream.replay(&mut |draw: &[f64]| {
        count += 1;
        let k = count as f64;
        for (v, &x) in draw.iter().enumerate() {
            let d = x - mean[v];
            mean[v] += d / k;
            m2[v] += d * (x - mean[v]);
        }
    })?;
    if count != n_draws {
        return Err(Error::Data("draw stream length changed between passes".into()));
    }
    let sd: Vec<f64> = m2.iter().map(|&s| (s / (n_draws - 1) as f64).sqrt()).collect();
    let excluded: Vec<usize> =
        sd.iter().enumerate().filter(|(_, &s)| s == 0.0).map(|(v, _)| v).collect();

    // Pass 2: per-draw max standardized deviation over usable voxels.
    let mut max_dev = Vec::with_capacity(n_draws);
    stream.replay(&mut |draw: &[f64]| {
        let mut m = 0.0f64;
        for (v, &x) in draw.iter().enumerate() {
            if sd[v] > 0.0 {
                m = m.max((x - mean[v]).abs() / sd[v]);
            }
        }
        max_dev.push(m);
    })?;
    max_dev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = ((1.0 - zeta) * n_draws as f64).ceil() as usize;
    let q_zeta = max_dev[rank.clamp(1, n_draws) - 1];

    Ok(JointBand { mean, sd, q_zeta, zeta, excluded })
}

/// Per-voxel OLS of a stacked `N × N_v` matrix on the design `Z`.
/// Returns coefficient and t-statistic matrices (`Q × N_v`) and the
/// residual degrees of freedom `N − Q`.
pub fn ols_t_stats(stack: &Array2<f64>, z: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>, f64)> {
    let n = z.nrows();
    let q = z.ncols();
    if stack.nrows() != n {
        return Err(Error::Data(format!(
            "stack has {} rows, design has {n}",
            stack.nrows()
        )));
    }
    if n <= q {
        return Err(Error::Data(format!("need more subjects ({n}) than covariates ({q})")));
    }
    let ztz = z.t().dot(z);
    let chol = cholesky(&ztz).map_err(|_| Error::Numeric("design matrix is rank deficient".into()))?;
    let ztz_inv = chol_inverse(&chol);
    let df = (n - q) as f64;

    let n_vox = stack.ncols();
    let mut beta = Array2::<f64>::zeros((q, n_vox));
    let mut t = Array2::<f64>::zeros((q, n_vox));
    for v in 0..n_vox {
        let y = stack.column(v);
        let zty = z.t().dot(&y);
        let b = chol_solve(&chol, &zty);
        let fitted = z.dot(&b);
        let rss: f64 = y.iter().zip(fitted.iter()).map(|(a, f)| (a - f) * (a - f)).sum();
        let sigma2 = rss / df;
        for qi in 0..q {
            beta[(qi, v)] = b[qi];
            let se = (sigma2 * ztz_inv[(qi, qi)]).sqrt();
            t[(qi, v)] = if se > 0.0 { b[qi] / se } else { 0.0 };
        }
    }
    Ok((beta, t, df))
}

/// Two-sided p-values from t-statistics.
pub fn t_p_values(t_stats: &[f64], df: f64) -> Result<Vec<f64>> {
    if t_stats.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite t-statistic".into()));
    }
    let dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::Numeric(format!("invalid degrees of freedom {df}: {e}")))?;
    Ok(t_stats.iter().map(|&t| 2.0 * (1.0 - dist.cdf(t.abs()))).collect())
}

/// Benjamini–Hochberg step-up on two-sided p-values from t-statistics:
/// rejects the hypotheses with the `i*` smallest p-values, where `i*` is
/// the largest `i` with `p_(i) ≤ q·i/m`.
pub fn fdr_map(t_stats: &[f64], df: f64, q: f64) -> Result<Vec<bool>> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Data(format!("FDR level must lie in (0,1), got {q}")));
    }
    let p = t_p_values(t_stats, df)?;
    Ok(bh_reject(&p, q))
}

/// BH step-up on raw p-values.
pub fn bh_reject(p_values: &[f64], q: f64) -> Vec<bool> {
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| p_values[i].partial_cmp(&p_values[j]).unwrap().then(i.cmp(&j)));
    let mut cutoff_rank = None;
    for (rank, &idx) in order.iter().enumerate() {
        if p_values[idx] <= q * (rank + 1) as f64 / m as f64 {
            cutoff_rank = Some(rank);
        }
    }
    let mut reject = vec![false; m];
    if let Some(r) = cutoff_rank {
        for &idx in &order[..=r] {
            reject[idx] = true;
        }
    }
    reject
}

/// Labeled connected components of a binary 3-D map.
#[derive(Clone, Debug)]
pub struct ClusterMap {
    /// Per-voxel cluster label in linear grid order; 0 = none.
    pub labels: Vec<u32>,
    /// Cluster sizes indexed by label − 1; every retained cluster has
    /// size ≥ min_cluster.
    pub sizes: Vec<usize>,
    pub connectivity: u8,
    pub min_cluster: usize,
}

impl ClusterMap {
    pub fn n_clusters(&self) -> usize {
        self.sizes.len()
    }

    /// Binary map of voxels belonging to any retained cluster.
    pub fn retained_mask(&self) -> Vec<bool> {
        self.labels.iter().map(|&l| l > 0).collect()
    }
}

fn neighbor_offsets(connectivity: u8) -> Vec<(i64, i64, i64)> {
    let mut out = Vec::new();
    for dz in -1i64..=1 {
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                if (dx, dy, dz) == (0, 0, 0) {
                    continue;
                }
                let manhattan = dx.abs() + dy.abs() + dz.abs();
                let keep = match connectivity {
                    6 => manhattan == 1,
                    18 => manhattan <= 2,
                    26 => true,
                    _ => unreachable!(),
                };
                if keep {
                    out.push((dx, dy, dz));
                }
            }
        }
    }
    out
}

/// Connected-component labeling on the voxel lattice, dropping components
/// below `min_cluster`. Labels are assigned in ascending order of each
/// component's minimum linear voxel index, so labeling is deterministic.
pub fn cluster_threshold(
    binary: &[bool],
    grid: &VolumeGrid,
    connectivity: u8,
    min_cluster: usize,
) -> Result<ClusterMap> {
    if !matches!(connectivity, 6 | 18 | 26) {
        return Err(Error::Data(format!("connectivity must be 6, 18 or 26, got {connectivity}")));
    }
    if min_cluster < 1 {
        return Err(Error::Data("min_cluster must be at least 1".into()));
    }
    if binary.len() != grid.n_voxels() {
        return Err(Error::Data(format!(
            "binary map has {} voxels for a {}-voxel grid",
            binary.len(),
            grid.n_voxels()
        )));
    }
    let (nx, ny, nz) = grid.dims;
    let offsets = neighbor_offsets(connectivity);

    let mut component = vec![0u32; binary.len()]; // provisional, 0 = unvisited
    let mut comps: Vec<(usize, Vec<usize>)> = Vec::new(); // (min linear index, members)
    let mut queue = std::collections::VecDeque::new();
    for start in 0..binary.len() {
        if !binary[start] || component[start] != 0 {
            continue;
        }
        let provisional = comps.len() as u32 + 1;
        let mut members = Vec::new();
        component[start] = provisional;
        queue.push_back(start);
        while let Some(li) = queue.pop_front() {
            members.push(li);
            let (x, y, z) = grid.coords_of(li);
            for &(dx, dy, dz) in &offsets {
                let (xx, yy, zz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                if xx < 0 || yy < 0 || zz < 0 {
                    continue;
                }
                let (xx, yy, zz) = (xx as usize, yy as usize, zz as usize);
                if xx >= nx || yy >= ny || zz >= nz {
                    continue;
                }
                let ni = grid.linear_index(xx, yy, zz);
                if binary[ni] && component[ni] == 0 {
                    component[ni] = provisional;
                    queue.push_back(ni);
                }
            }
        }
        let min_index = *members.iter().min().expect("component is nonempty");
        comps.push((min_index, members));
    }

    comps.retain(|(_, members)| members.len() >= min_cluster);
    comps.sort_by_key(|(min_index, _)| *min_index);

    let mut labels = vec![0u32; binary.len()];
    let mut sizes = Vec::with_capacity(comps.len());
    for (new_label, (_, members)) in comps.iter().enumerate() {
        for &li in members {
            labels[li] = new_label as u32 + 1;
        }
        sizes.push(members.len());
    }
    Ok(ClusterMap { labels, sizes, connectivity, min_cluster })
}

/// Voxelwise AND of two binary maps of equal length.
pub fn intersect_maps(a: &[bool], b: &[bool]) -> Result<Vec<bool>> {
    if a.len() != b.len() {
        return Err(Error::Data(format!(
            "map sizes differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).map(|(&x, &y)| x && y).collect())
}

/// Per-cluster summary row for report tables.
#[derive(Clone, Debug)]
pub struct ClusterSummary {
    pub label: u32,
    pub size: usize,
    /// Voxel index coordinates of the peak (largest |statistic|) voxel.
    pub peak_voxel: (usize, usize, usize),
    pub peak_world: [f64; 3],
    pub peak_value: f64,
}

/// Summarize retained clusters against a per-voxel statistic map (linear
/// grid order).
pub fn summarize_clusters(
    clusters: &ClusterMap,
    stat: &[f64],
    grid: &VolumeGrid,
) -> Vec<ClusterSummary> {
    let mut out = Vec::with_capacity(clusters.n_clusters());
    for label in 1..=clusters.n_clusters() as u32 {
        let mut peak_li = usize::MAX;
        let mut peak = f64::NEG_INFINITY;
        let mut size = 0usize;
        for (li, &l) in clusters.labels.iter().enumerate() {
            if l == label {
                size += 1;
                let v = stat[li].abs();
                if v > peak {
                    peak = v;
                    peak_li = li;
                }
            }
        }
        let (x, y, z) = grid.coords_of(peak_li);
        out.push(ClusterSummary {
            label,
            size,
            peak_voxel: (x, y, z),
            peak_world: grid.world(x, y, z),
            peak_value: stat[peak_li],
        });
    }
    out
}
