//! Declarative pipeline configuration.
//!
//! One TOML file drives every stage. Unknown keys are rejected so typos
//! fail loudly; every default is echoed into the run manifest, making
//! runs self-describing. The full schema is documented in the README.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub run: RunSection,
    pub data: DataSection,
    pub simulate: SimulateSection,
    pub estimate: EstimateSection,
    pub basis: BasisSection,
    pub group: GroupSection,
    pub infer: InferSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            run: RunSection::default(),
            data: DataSection::default(),
            simulate: SimulateSection::default(),
            estimate: EstimateSection::default(),
            basis: BasisSection::default(),
            group: GroupSection::default(),
            infer: InferSection::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Every stage writes below this directory.
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Worker threads; 0 keeps the library default.
    pub threads: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection { out_dir: PathBuf::from("out"), seed: 0, threads: 0 }
    }
}

/// External inputs; when `volumes` is nonempty the simulate stage is not
/// part of the run and these paths feed the estimate stage directly.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub volumes: Vec<PathBuf>,
    pub mask: Option<PathBuf>,
    pub parcellation: Option<PathBuf>,
    pub covariates: Option<PathBuf>,
    /// Optional subject manifest (one id per line) fixing subject order;
    /// defaults to volume order.
    pub subjects: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub grid: [usize; 3],
    pub voxel_size: [f64; 3],
    pub t: usize,
    pub n_subjects: usize,
    pub baseline_alpha: f64,
    pub nu: f64,
    /// Optional external covariate table; generated when absent
    /// (intercept, age, medication, symptom index, interaction).
    pub covariates_path: Option<PathBuf>,
    pub effects: Vec<EffectSection>,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            grid: [16, 16, 16],
            voxel_size: [4.0, 4.0, 4.0],
            t: 256,
            n_subjects: 40,
            baseline_alpha: 0.5,
            nu: 1.0,
            covariates_path: None,
            effects: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EffectSection {
    pub covariate: String,
    pub roi: u32,
    pub size: f64,
    pub baseline: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateSection {
    pub wavelet: String,
    /// Decomposition depth; 0 derives the default from the series length.
    pub levels: usize,
    pub n_iter: usize,
    pub n_burn: usize,
    pub thin: usize,
    pub proposal_sd: f64,
    pub prior_a: f64,
    pub prior_b: f64,
    pub prior_p: f64,
    pub prior_s: f64,
    /// Number of sampled voxels whose chains go to the diagnostics table.
    pub diagnostic_voxels: usize,
}

impl Default for EstimateSection {
    fn default() -> Self {
        EstimateSection {
            wavelet: "db2".into(),
            levels: 0,
            n_iter: 5000,
            n_burn: 1000,
            thin: 2,
            proposal_sd: 0.05,
            prior_a: 3.0,
            prior_b: 3.0,
            prior_p: 2.0,
            prior_s: 2.0,
            diagnostic_voxels: 3,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BasisSection {
    pub local_threshold: f64,
    pub global_threshold: f64,
}

impl Default for BasisSection {
    fn default() -> Self {
        BasisSection { local_threshold: 0.99, global_threshold: 0.99 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroupSection {
    pub n_iter: usize,
    pub n_burn: usize,
    pub thin: usize,
    pub prior_k: f64,
    pub prior_l: f64,
    /// "isotropic" (Λ₀ = scale·I) or "g_prior" (Λ₀ = scale·(ZᵀZ)⁻¹).
    pub prior_form: String,
    pub prior_scale: f64,
    /// Z-score continuous covariates before fitting.
    pub standardize: bool,
}

impl Default for GroupSection {
    fn default() -> Self {
        GroupSection {
            n_iter: 4000,
            n_burn: 1000,
            thin: 1,
            prior_k: 0.1,
            prior_l: 0.5,
            prior_form: "isotropic".into(),
            prior_scale: 0.5,
            standardize: true,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferSection {
    pub zeta: f64,
    pub fdr_q: f64,
    pub min_cluster: usize,
    pub connectivity: u8,
}

impl Default for InferSection {
    fn default() -> Self {
        InferSection { zeta: 0.05, fdr_q: 0.05, min_cluster: 50, connectivity: 26 }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: PipelineConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.simulate.grid.iter().any(|&d| d == 0) {
            return Err(Error::Config("simulate.grid dimensions must be positive".into()));
        }
        if self.simulate.t < 16 {
            return Err(Error::Config("simulate.t must be at least 16".into()));
        }
        if self.simulate.n_subjects < 2 {
            return Err(Error::Config("simulate.n_subjects must be at least 2".into()));
        }
        if !(0.02..=0.98).contains(&self.simulate.baseline_alpha) {
            return Err(Error::Config("simulate.baseline_alpha must lie in (0.02, 0.98)".into()));
        }
        crate::wavelet::FilterBank::<f64>::by_name(&self.estimate.wavelet)?;
        if !matches!(self.group.prior_form.as_str(), "isotropic" | "g_prior") {
            return Err(Error::Config(format!(
                "group.prior_form must be 'isotropic' or 'g_prior', got '{}'",
                self.group.prior_form
            )));
        }
        if !(self.infer.zeta > 0.0 && self.infer.zeta < 0.5) {
            return Err(Error::Config("infer.zeta must lie in (0, 0.5)".into()));
        }
        if !matches!(self.infer.connectivity, 6 | 18 | 26) {
            return Err(Error::Config("infer.connectivity must be 6, 18 or 26".into()));
        }
        if self.infer.min_cluster == 0 {
            return Err(Error::Config("infer.min_cluster must be at least 1".into()));
        }
        Ok(())
    }

    /// Canonical serialized form, echoed into the manifest so every
    /// default is recorded.
    pub fn canonical_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        let text = c.canonical_toml();
        let back: PipelineConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.estimate.n_iter, c.estimate.n_iter);
        assert_eq!(back.infer.zeta, c.infer.zeta);
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "[estimate]\nn_itera = 100\n").unwrap();
        let err = PipelineConfig::load(&path).unwrap_err().to_string();
        assert!(err.contains("n_itera"), "{err}");
    }

    #[test]
    fn invalid_values_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "[infer]\nzeta = 0.9\n").unwrap();
        assert!(PipelineConfig::load(&path).is_err());
        std::fs::write(&path, "[estimate]\nwavelet = \"sym9\"\n").unwrap();
        assert!(PipelineConfig::load(&path).is_err());
    }
}
