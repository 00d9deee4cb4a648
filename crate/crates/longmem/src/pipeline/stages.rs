//! Stage implementations and the pipeline driver.
//!
//! Stages run in dependency order (simulate → estimate → basis → group →
//! infer → report), each writing into `<out>/<stage>.tmp/` and publishing
//! to `<out>/<stage>/` only on success; failures move the partial output
//! to `<out>/quarantine/`. The run manifest records content hashes of a
//! stage's config, inputs and outputs, and a stage whose recorded state
//! still matches the filesystem is skipped.

use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::manifest::{files_below, hash_str, RunManifest, MANIFEST_FILE};
use crate::basis::CompositeBasis;
use crate::error::{Error, Result};
use crate::estimator::{
    chain_diagnostics, estimate_subject, voxel_chain, ChainConfig, SubjectPriors,
};
use crate::inference::{
    cluster_threshold, fdr_map, intersect_maps, joint_credible_band, ols_t_stats,
    summarize_clusters, DrawStream,
};
use crate::model::{scale_variances, sufficient_stats, LongMemoryParams};
use crate::regression::{fit_group, GroupConfig, GroupPosterior, GroupPriors, Standardization};
use crate::rng::CounterRng;
use crate::simulate::{simulate_group_study, GroupEffectSpec, SyntheticSubjectSpec};
use crate::volume::{
    self, covariates::CovariateTable, harmonize_parcellation, read_covariates, read_dataset,
    read_mask, read_parcellation, write_full_volume, write_volume, BrainMask,
    VolumeGrid,
};
use crate::wavelet::{default_levels, dwt_forward, dyadic_length, FilterBank};

/// Pipeline stages in dependency order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Simulate,
    Estimate,
    Basis,
    Group,
    Infer,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Simulate,
        Stage::Estimate,
        Stage::Basis,
        Stage::Group,
        Stage::Infer,
        Stage::Report,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Estimate => "estimate",
            Stage::Basis => "basis",
            Stage::Group => "group",
            Stage::Infer => "infer",
            Stage::Report => "report",
        }
    }

    pub fn parse(s: &str) -> Result<Stage> {
        match s {
            "simulate" => Ok(Stage::Simulate),
            "estimate" | "estimate-subject" => Ok(Stage::Estimate),
            "basis" | "build-basis" => Ok(Stage::Basis),
            "group" | "group-regress" => Ok(Stage::Group),
            "infer" => Ok(Stage::Infer),
            "report" => Ok(Stage::Report),
            other => Err(Error::Config(format!("unknown stage '{other}'"))),
        }
    }
}

/// Resolved file layout of one run.
pub struct Layout {
    pub out: PathBuf,
}

impl Layout {
    pub fn new(out: &Path) -> Self {
        Layout { out: out.to_path_buf() }
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.out.join(stage.name())
    }

    fn tmp_dir(&self, stage: Stage) -> PathBuf {
        self.out.join(format!("{}.tmp", stage.name()))
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.out.join(MANIFEST_FILE)
    }
}

/// Inputs to the estimate stage: subject volumes in analysis order plus
/// the shared mask/parcellation/covariates.
struct ResolvedInputs {
    volumes: Vec<PathBuf>,
    subject_ids: Vec<String>,
    mask: PathBuf,
    parcellation: PathBuf,
    covariates: PathBuf,
}

fn resolve_inputs(config: &PipelineConfig, layout: &Layout) -> Result<ResolvedInputs> {
    if !config.data.volumes.is_empty() {
        let mask = config
            .data
            .mask
            .clone()
            .ok_or_else(|| Error::Config("data.mask is required with external volumes".into()))?;
        let parcellation = config.data.parcellation.clone().ok_or_else(|| {
            Error::Config("data.parcellation is required with external volumes".into())
        })?;
        let covariates = config.data.covariates.clone().ok_or_else(|| {
            Error::Config("data.covariates is required with external volumes".into())
        })?;
        let subject_ids = match &config.data.subjects {
            Some(path) => read_lines(path)?,
            None => config
                .data
                .volumes
                .iter()
                .map(|p| stem_of(p))
                .collect(),
        };
        if subject_ids.len() != config.data.volumes.len() {
            return Err(Error::Config(
                "subject manifest length does not match data.volumes".into(),
            ));
        }
        return Ok(ResolvedInputs {
            volumes: config.data.volumes.clone(),
            subject_ids,
            mask,
            parcellation,
            covariates,
        });
    }
    let sim = layout.stage_dir(Stage::Simulate);
    let subject_ids = read_lines(&sim.join("subjects.txt"))?;
    let volumes = subject_ids.iter().map(|id| sim.join(format!("{id}.nii.gz"))).collect();
    Ok(ResolvedInputs {
        volumes,
        subject_ids,
        mask: sim.join("mask.nii.gz"),
        parcellation: sim.join("parcellation.nii.gz"),
        covariates: sim.join("covariates.csv"),
    })
}

fn stem_of(p: &Path) -> String {
    p.file_name()
        .map(|s| {
            s.to_string_lossy()
                .replace(".nii.gz", "")
                .replace(".nii", "")
                .replace(".raw", "")
        })
        .unwrap_or_else(|| "unknown".into())
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

/// Run the requested stages in dependency order, honoring the manifest's
/// skip logic. Returns the updated manifest.
pub fn run_pipeline(config: &PipelineConfig, stages: &[Stage]) -> Result<RunManifest> {
    config.validate()?;
    let layout = Layout::new(&config.run.out_dir);
    std::fs::create_dir_all(&layout.out).map_err(|e| Error::io(&layout.out, e))?;
    let snapshot = config.canonical_toml();
    let mut manifest = RunManifest::load_or_new(&layout.manifest_path(), snapshot.clone());

    let run_stage = |stage: Stage, manifest: &mut RunManifest| -> Result<bool> {
        let section_toml = stage_config_text(config, stage);
        let config_hash = hash_str(&format!("{}::{}", env!("CARGO_PKG_VERSION"), section_toml));
        let inputs = stage_inputs(config, &layout, stage).map_err(|e| Error::Stage {
            stage: stage.name().into(),
            source: Box::new(e),
        })?;
        for input in &inputs {
            if !input.exists() {
                return Err(Error::Stage {
                    stage: stage.name().into(),
                    source: Box::new(Error::Data(format!(
                        "missing input {} (run the earlier stages first)",
                        input.display()
                    ))),
                });
            }
        }
        if manifest.stage_is_current(stage.name(), &config_hash, &layout.out) {
            return Ok(false);
        }

        let tmp = layout.tmp_dir(stage);
        if tmp.exists() {
            std::fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        }
        std::fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;

        let result = execute_stage(config, &layout, stage, &tmp);
        match result {
            Ok(()) => {
                let final_dir = layout.stage_dir(stage);
                if final_dir.exists() {
                    std::fs::remove_dir_all(&final_dir).map_err(|e| Error::io(&final_dir, e))?;
                }
                std::fs::rename(&tmp, &final_dir).map_err(|e| Error::io(&final_dir, e))?;
                let outputs = files_below(&final_dir)?;
                manifest.record_stage(stage.name(), config_hash, &layout.out, &inputs, &outputs)?;
                manifest.save(&layout.manifest_path())?;
                Ok(true)
            }
            Err(e) => {
                // Quarantine partial outputs for inspection.
                let qdir = layout.out.join("quarantine");
                let _ = std::fs::create_dir_all(&qdir);
                let stamp = std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0);
                let _ = std::fs::rename(&tmp, qdir.join(format!("{}-{stamp}", stage.name())));
                Err(Error::Stage { stage: stage.name().into(), source: Box::new(e) })
            }
        }
    };

    let mut body = || -> Result<()> {
        for &stage in &Stage::ALL {
            if stages.contains(&stage) {
                run_stage(stage, &mut manifest)?;
            }
        }
        Ok(())
    };

    if config.run.threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.run.threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(body)?;
    } else {
        body()?;
    }
    manifest.save(&layout.manifest_path())?;
    Ok(manifest)
}

fn stage_config_text(config: &PipelineConfig, stage: Stage) -> String {
    // The hash covers the stage's own section plus the run seed, so a
    // seed change re-runs everything.
    let section = match stage {
        Stage::Simulate => toml::to_string(&config.simulate).unwrap_or_default(),
        Stage::Estimate => toml::to_string(&config.estimate).unwrap_or_default(),
        Stage::Basis => toml::to_string(&config.basis).unwrap_or_default(),
        Stage::Group => toml::to_string(&config.group).unwrap_or_default(),
        Stage::Infer => toml::to_string(&config.infer).unwrap_or_default(),
        Stage::Report => String::new(),
    };
    format!("seed={}\n{section}", config.run.seed)
}

fn stage_inputs(config: &PipelineConfig, layout: &Layout, stage: Stage) -> Result<Vec<PathBuf>> {
    let mut inputs = Vec::new();
    match stage {
        Stage::Simulate => {
            if let Some(p) = &config.simulate.covariates_path {
                inputs.push(p.clone());
            }
        }
        Stage::Estimate => {
            let r = resolve_inputs(config, layout)?;
            inputs.extend(r.volumes);
            inputs.push(r.mask);
        }
        Stage::Basis => {
            let r = resolve_inputs(config, layout)?;
            let est = layout.stage_dir(Stage::Estimate);
            for id in &r.subject_ids {
                inputs.push(est.join(format!("{id}_alpha-mean.nii.gz")));
            }
            inputs.push(r.mask);
            inputs.push(r.parcellation);
        }
        Stage::Group => {
            let r = resolve_inputs(config, layout)?;
            inputs.push(layout.stage_dir(Stage::Basis).join("projected.csv"));
            inputs.push(r.covariates);
            inputs.push(layout.stage_dir(Stage::Basis).join("archive").join("manifest.json"));
        }
        Stage::Infer => {
            let r = resolve_inputs(config, layout)?;
            inputs.push(layout.stage_dir(Stage::Group).join("draws.bin"));
            inputs.push(layout.stage_dir(Stage::Group).join("draws.json"));
            inputs.push(layout.stage_dir(Stage::Basis).join("archive").join("manifest.json"));
            inputs.push(r.mask);
            inputs.push(r.covariates);
        }
        Stage::Report => {
            inputs.push(layout.stage_dir(Stage::Infer).join("clusters.csv"));
            inputs.push(layout.stage_dir(Stage::Infer).join("summary.json"));
        }
    }
    Ok(inputs)
}

fn execute_stage(
    config: &PipelineConfig,
    layout: &Layout,
    stage: Stage,
    dir: &Path,
) -> Result<()> {
    match stage {
        Stage::Simulate => simulate_stage(config, dir),
        Stage::Estimate => estimate_stage(config, layout, dir),
        Stage::Basis => basis_stage(config, layout, dir),
        Stage::Group => group_stage(config, layout, dir),
        Stage::Infer => infer_stage(config, layout, dir),
        Stage::Report => report_stage(config, layout, dir),
    }
}

// ---------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------

/// Default synthetic design mirroring a five-column developmental study:
/// intercept, age, medication indicator, symptom index, and the
/// medication × symptom interaction.
pub fn default_design(n: usize, seed: u64) -> Result<CovariateTable> {
    if n < 8 {
        return Err(Error::Config(
            "the generated design needs at least 8 subjects; supply covariates_path instead".into(),
        ));
    }
    let mut rng = CounterRng::from_parts(seed, &[crate::rng::fold_str("covariates")]);
    let ids: Vec<String> = (0..n).map(|i| format!("sub-{i:04}")).collect();
    // Age spans 7..27, the cohort range the synthetic studies mirror.
    let age: Vec<f64> = (0..n).map(|_| 7.0 + 20.0 * rng.uniform()).collect();
    // About 30% medicated, with both groups kept at size >= 2 so the
    // medication column and its interaction stay full rank.
    let scores: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
    let n_med = ((0.3 * n as f64).round() as usize).clamp(2, n - 2);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| scores[j].partial_cmp(&scores[i]).unwrap().then(i.cmp(&j)));
    let mut med = vec![0.0; n];
    for &i in order.iter().take(n_med) {
        med[i] = 1.0;
    }
    let adhd: Vec<f64> = (0..n).map(|_| 20.0 + 60.0 * rng.uniform()).collect();
    let interaction: Vec<f64> = med.iter().zip(&adhd).map(|(m, a)| m * a).collect();
    CovariateTable::from_columns(
        ids,
        vec!["age".into(), "med".into(), "adhd_index".into(), "med_x_adhd".into()],
        vec![age, med, adhd, interaction],
    )
}

fn write_covariates_csv(path: &Path, table: &CovariateTable) -> Result<()> {
    let mut text = String::from("subject_id");
    for name in table.column_names.iter().skip(1) {
        text.push(',');
        text.push_str(name);
    }
    text.push('\n');
    for i in 0..table.n_subjects() {
        text.push_str(&table.subject_ids[i]);
        for j in 1..table.n_columns() {
            text.push_str(&format!(",{}", table.z[(i, j)]));
        }
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn simulate_stage(config: &PipelineConfig, dir: &Path) -> Result<()> {
    let s = &config.simulate;
    let grid = VolumeGrid::new(
        (s.grid[0], s.grid[1], s.grid[2]),
        (s.voxel_size[0], s.voxel_size[1], s.voxel_size[2]),
    )?;
    let parcellation = crate::simulate::octant_parcellation(&grid)?;
    let covariates = match &s.covariates_path {
        Some(p) => read_covariates(p, &[], None)?,
        None => default_design(s.n_subjects, config.run.seed)?,
    };
    if covariates.n_subjects() != s.n_subjects {
        return Err(Error::Config(format!(
            "covariate table has {} subjects, simulate.n_subjects is {}",
            covariates.n_subjects(),
            s.n_subjects
        )));
    }
    let template = SyntheticSubjectSpec::uniform(
        grid.clone(),
        s.t,
        parcellation.clone(),
        s.baseline_alpha,
        s.nu,
    )?;
    let effects: Vec<GroupEffectSpec> = s
        .effects
        .iter()
        .map(|e| GroupEffectSpec {
            covariate_name: e.covariate.clone(),
            target_roi: e.roi,
            effect_size: e.size,
            baseline_alpha: e.baseline,
        })
        .collect();
    let bank = FilterBank::<f64>::by_name(&config.estimate.wavelet)?;
    let levels = effective_levels(&config.estimate.wavelet, config.estimate.levels, s.t)?;
    let study =
        simulate_group_study(&template, &effects, &covariates, &bank, levels, config.run.seed)?;

    // Mask and parcellation volumes.
    let mask = &study.mask;
    let mask_values: Vec<f64> =
        (0..grid.n_voxels()).map(|li| f64::from(mask.is_included(li))).collect();
    write_full_volume(&dir.join("mask.nii.gz"), &grid, 1, &mask_values)?;
    let parc_values: Vec<f64> = parcellation.label.iter().map(|&l| l as f64).collect();
    write_full_volume(&dir.join("parcellation.nii.gz"), &grid, 1, &parc_values)?;

    // Per-subject 4-D volumes, zero outside the mask.
    let n_vox = grid.n_voxels();
    for ds in &study.datasets {
        let mut full = vec![0.0f64; n_vox * ds.t];
        for (mi, &li) in mask.masked_linears().iter().enumerate() {
            for t in 0..ds.t {
                full[t * n_vox + li] = ds.data[(mi, t)];
            }
        }
        write_full_volume(&dir.join(format!("{}.nii.gz", ds.subject_id)), &grid, ds.t, &full)?;
    }

    write_covariates_csv(&dir.join("covariates.csv"), &covariates)?;
    let subjects: String =
        covariates.subject_ids.iter().map(|s| format!("{s}\n")).collect();
    std::fs::write(dir.join("subjects.txt"), subjects)
        .map_err(|e| Error::io(dir.join("subjects.txt"), e))?;

    // Ground-truth sidecar: voxel, covariate, true beta.
    let mut truth = String::from("masked_index,linear_index,covariate,true_beta\n");
    for (mi, &li) in mask.masked_linears().iter().enumerate() {
        for (j, name) in covariates.column_names.iter().enumerate() {
            truth.push_str(&format!("{mi},{li},{name},{}\n", study.truth.beta[(mi, j)]));
        }
    }
    std::fs::write(dir.join("truth.csv"), truth)
        .map_err(|e| Error::io(dir.join("truth.csv"), e))?;
    Ok(())
}

// ---------------------------------------------------------------------
// estimate
// ---------------------------------------------------------------------

fn effective_levels(wavelet: &str, configured: usize, t: usize) -> Result<usize> {
    let levels = if configured == 0 { default_levels(t)? } else { configured };
    // The filter must fit the dyadic length.
    let bank = FilterBank::<f64>::by_name(wavelet)?;
    if bank.len() > dyadic_length(t) {
        return Err(Error::Data(format!(
            "wavelet {wavelet} needs at least {} samples, series has {t}",
            bank.len()
        )));
    }
    Ok(levels)
}

fn estimate_stage(config: &PipelineConfig, layout: &Layout, dir: &Path) -> Result<()> {
    let inputs = resolve_inputs(config, layout)?;
    let mask = read_mask(&inputs.mask)?;
    let e = &config.estimate;
    let bank = FilterBank::<f64>::by_name(&e.wavelet)?;
    let priors = SubjectPriors { a: e.prior_a, b: e.prior_b, p: e.prior_p, s: e.prior_s };
    let chain = ChainConfig {
        n_iter: e.n_iter,
        n_burn: e.n_burn,
        thin: e.thin,
        proposal_sd: e.proposal_sd,
        seed: config.run.seed,
    };

    for (path, id) in inputs.volumes.iter().zip(&inputs.subject_ids) {
        let mut ds = read_dataset(path, Some(&mask))?;
        ds.subject_id = id.clone();
        let levels = effective_levels(&e.wavelet, e.levels, ds.t)?;
        let map = estimate_subject(&ds, &bank, levels, &priors, &chain)?;

        let clean = |v: &[f64]| -> Vec<f64> {
            v.iter().map(|&x| if x.is_finite() { x } else { 0.0 }).collect()
        };
        write_volume(&dir.join(format!("{id}_alpha-mean.nii.gz")), &ds.grid, &clean(&map.alpha_mean), &mask)?;
        write_volume(&dir.join(format!("{id}_alpha-sd.nii.gz")), &ds.grid, &clean(&map.alpha_sd), &mask)?;
        write_volume(&dir.join(format!("{id}_nu-mean.nii.gz")), &ds.grid, &clean(&map.nu_mean), &mask)?;
        write_volume(&dir.join(format!("{id}_acceptance.nii.gz")), &ds.grid, &clean(&map.acceptance), &mask)?;
        if !map.degenerate.is_empty() {
            let text: String = map.degenerate.iter().map(|v| format!("{v}\n")).collect();
            let p = dir.join(format!("{id}_degenerate.txt"));
            std::fs::write(&p, text).map_err(|er| Error::io(&p, er))?;
        }

        // Diagnostics table for a deterministic sample of voxels.
        let n_vox = map.n_voxels();
        let n_diag = e.diagnostic_voxels.min(n_vox);
        let mut csv = String::from("voxel,kind,index,value\n");
        for k in 0..n_diag {
            let v = k * n_vox / n_diag.max(1);
            if map.degenerate.contains(&v) {
                continue;
            }
            let chain_out = voxel_chain(&ds, v, &bank, levels, &priors, &chain)?;
            for (i, &x) in chain_out.alpha.iter().enumerate() {
                csv.push_str(&format!("{v},trace_alpha,{i},{x}\n"));
            }
            for (i, &x) in chain_out.nu.iter().enumerate() {
                csv.push_str(&format!("{v},trace_nu,{i},{x}\n"));
            }
            // ACF/ESS need a minimum chain length; traces are always written.
            if let Ok(diag) = chain_diagnostics(&chain_out.alpha, 50, 40) {
                for (i, &x) in diag.acf.iter().enumerate() {
                    csv.push_str(&format!("{v},acf_alpha,{i},{x}\n"));
                }
                csv.push_str(&format!("{v},ess,0,{}\n", diag.ess));
            }
            csv.push_str(&format!("{v},acceptance,0,{}\n", chain_out.acceptance));
        }
        let p = dir.join(format!("{id}_diagnostics.csv"));
        std::fs::write(&p, csv).map_err(|er| Error::io(&p, er))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------
// basis
// ---------------------------------------------------------------------

fn read_alpha_stack(
    layout: &Layout,
    inputs: &ResolvedInputs,
    mask: &BrainMask,
) -> Result<Array2<f64>> {
    let est = layout.stage_dir(Stage::Estimate);
    let n = inputs.subject_ids.len();
    let mut stack = Array2::<f64>::zeros((n, mask.n_masked()));
    for (i, id) in inputs.subject_ids.iter().enumerate() {
        let path = est.join(format!("{id}_alpha-mean.nii.gz"));
        let vol = volume::read_raw_volume(&path)?;
        if !vol.grid.compatible(&mask.grid) {
            return Err(Error::Data(format!("{}: grid mismatch with mask", path.display())));
        }
        for (mi, &li) in mask.masked_linears().iter().enumerate() {
            stack[(i, mi)] = vol.values[li];
        }
    }
    let degenerate = stack.iter().filter(|&&v| v <= 0.0).count();
    if degenerate > 0 {
        return Err(Error::Data(format!(
            "{degenerate} voxel values are non-positive (degenerate voxels); tighten the mask"
        )));
    }
    Ok(stack)
}

fn basis_stage(config: &PipelineConfig, layout: &Layout, dir: &Path) -> Result<()> {
    let inputs = resolve_inputs(config, layout)?;
    let mask = read_mask(&inputs.mask)?;
    let parcellation = read_parcellation(&inputs.parcellation)?;
    let (parcellation, report) = harmonize_parcellation(&parcellation, &mask)?;
    if !report.dropped_labels.is_empty() {
        eprintln!(
            "warning: dropped {} parcellation label(s) with no masked voxels: {:?}",
            report.dropped_labels.len(),
            report.dropped_labels
        );
    }
    if report.reassigned_voxels > 0 {
        eprintln!(
            "warning: reassigned {} unlabeled masked voxel(s) to nearest ROI",
            report.reassigned_voxels
        );
    }

    let stack = read_alpha_stack(layout, &inputs, &mask)?;
    let basis = CompositeBasis::fit(
        &stack,
        &parcellation,
        &mask,
        config.basis.local_threshold,
        config.basis.global_threshold,
    )?;
    basis.save_archive(&dir.join("archive"))?;

    let projected = basis.project(&stack)?;
    let mut csv = String::from("subject_id");
    for c in 0..projected.matrix.ncols() {
        csv.push_str(&format!(",c{:04}", c + 1));
    }
    csv.push('\n');
    for (i, id) in inputs.subject_ids.iter().enumerate() {
        csv.push_str(id);
        for c in 0..projected.matrix.ncols() {
            csv.push_str(&format!(",{:.17e}", projected.matrix[(i, c)]));
        }
        csv.push('\n');
    }
    let p = dir.join("projected.csv");
    std::fs::write(&p, csv).map_err(|e| Error::io(&p, e))?;
    Ok(())
}

// ---------------------------------------------------------------------
// group
// ---------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct DrawArchiveMeta {
    n_draws: usize,
    q: usize,
    pc: usize,
    covariates: Vec<String>,
    standardize_means: Vec<f64>,
    standardize_sds: Vec<f64>,
    standardize_scaled: Vec<bool>,
    seed: u64,
}

fn read_projected(path: &Path) -> Result<(Vec<String>, Array2<f64>)> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let n_cols = reader
        .headers()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .len()
        - 1;
    let mut ids = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        ids.push(record.get(0).unwrap_or("").to_string());
        let row: std::result::Result<Vec<f64>, _> =
            (1..record.len()).map(|j| record.get(j).unwrap_or("").parse::<f64>()).collect();
        rows.push(row.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?);
    }
    let n = rows.len();
    let mut matrix = Array2::<f64>::zeros((n, n_cols));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            matrix[(i, j)] = v;
        }
    }
    Ok((ids, matrix))
}

fn group_stage(config: &PipelineConfig, layout: &Layout, dir: &Path) -> Result<()> {
    let inputs = resolve_inputs(config, layout)?;
    let (subject_ids, projected) =
        read_projected(&layout.stage_dir(Stage::Basis).join("projected.csv"))?;
    // Explicit manifest check: covariate rows align with the stack order.
    let covariates = read_covariates(&inputs.covariates, &[], Some(&subject_ids))?;

    let g = &config.group;
    let standardization = Standardization::fit(&covariates.z);
    let z = if g.standardize { standardization.apply(&covariates.z) } else { covariates.z.clone() };
    let q = z.ncols();
    let mut priors = match g.prior_form.as_str() {
        "isotropic" => GroupPriors::isotropic(q, g.prior_scale),
        _ => GroupPriors::g_prior(&z, g.prior_scale)?,
    };
    priors.k = g.prior_k;
    priors.l = g.prior_l;
    let gc = GroupConfig { n_iter: g.n_iter, n_burn: g.n_burn, thin: g.thin, seed: config.run.seed };
    let posterior = fit_group(&crate::basis::ProjectedMaps { matrix: projected }, &z, &priors, &gc)?;

    // Draw archive: per draw, the Q × PC_f coefficient matrix row-major.
    let meta = DrawArchiveMeta {
        n_draws: posterior.n_draws,
        q,
        pc: posterior.components.len(),
        covariates: covariates.column_names.clone(),
        standardize_means: if g.standardize { standardization.means.clone() } else { vec![0.0; q] },
        standardize_sds: if g.standardize { standardization.sds.clone() } else { vec![1.0; q] },
        standardize_scaled: if g.standardize {
            standardization.scaled.clone()
        } else {
            vec![false; q]
        },
        seed: config.run.seed,
    };
    let meta_path = dir.join("draws.json");
    std::fs::write(
        &meta_path,
        serde_json::to_string_pretty(&meta).map_err(|e| Error::Format(e.to_string()))?,
    )
    .map_err(|e| Error::io(&meta_path, e))?;

    let bin_path = dir.join("draws.bin");
    let file = std::fs::File::create(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for t in 0..posterior.n_draws {
        let m = posterior.draw_matrix(t);
        for qi in 0..q {
            for r in 0..posterior.components.len() {
                w.write_all(&m[(qi, r)].to_le_bytes()).map_err(|e| Error::io(&bin_path, e))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(&bin_path, e))?;

    // Component-space posterior summary table.
    let mut csv =
        String::from("component,covariate,mean_std,sd_std,q05_std,q95_std,mean_raw,delta2_mean\n");
    for (r, comp) in posterior.components.iter().enumerate() {
        let d2_mean: f64 = comp.delta2.iter().sum::<f64>() / comp.delta2.len() as f64;
        let mean_std: Vec<f64> =
            (0..q).map(|qi| comp.beta.column(qi).sum() / posterior.n_draws as f64).collect();
        let mean_raw = if g.standardize {
            standardization.to_raw(&mean_std)
        } else {
            mean_std.clone()
        };
        for qi in 0..q {
            let col = comp.beta.column(qi);
            let mean = mean_std[qi];
            let sd = (col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / (posterior.n_draws - 1) as f64)
                .sqrt();
            let mut sorted: Vec<f64> = col.to_vec();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let q05 = sorted[(0.05 * sorted.len() as f64) as usize];
            let q95 = sorted[((0.95 * sorted.len() as f64) as usize).min(sorted.len() - 1)];
            csv.push_str(&format!(
                "{},{},{mean},{sd},{q05},{q95},{},{d2_mean}\n",
                r + 1,
                covariates.column_names[qi],
                mean_raw[qi]
            ));
        }
    }
    let p = dir.join("summary.csv");
    std::fs::write(&p, csv).map_err(|e| Error::io(&p, e))?;
    Ok(())
}

// ---------------------------------------------------------------------
// infer
// ---------------------------------------------------------------------

/// Load the draw archive back into a [`GroupPosterior`].
fn load_draws(dir: &Path) -> Result<(GroupPosterior, DrawArchiveMeta)> {
    let meta_path = dir.join("draws.json");
    let meta: DrawArchiveMeta = serde_json::from_str(
        &std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?,
    )
    .map_err(|e| Error::Format(format!("{}: {e}", meta_path.display())))?;
    let bin_path = dir.join("draws.bin");
    let bytes = std::fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let expect = meta.n_draws * meta.q * meta.pc * 8;
    if bytes.len() != expect {
        return Err(Error::Format(format!(
            "{}: {} bytes, expected {expect} (corrupted archive?)",
            bin_path.display(),
            bytes.len()
        )));
    }
    let mut components: Vec<crate::regression::ComponentDraws> = (0..meta.pc)
        .map(|_| crate::regression::ComponentDraws {
            beta: Array2::zeros((meta.n_draws, meta.q)),
            delta2: vec![0.0; meta.n_draws],
        })
        .collect();
    let mut offset = 0;
    for t in 0..meta.n_draws {
        for qi in 0..meta.q {
            for r in 0..meta.pc {
                let v = f64::from_le_bytes(bytes[offset..offset + 8].try_into().unwrap());
                components[r].beta[(t, qi)] = v;
                offset += 8;
            }
        }
    }
    Ok((
        GroupPosterior { components, q: meta.q, n_draws: meta.n_draws },
        meta,
    ))
}

/// Replayable stream over one covariate's back-projected raw-unit draws.
struct CovariateDrawStream<'a> {
    posterior: &'a GroupPosterior,
    basis: &'a CompositeBasis<f64>,
    standardization: Standardization,
    covariate: usize,
}

impl CovariateDrawStream<'_> {
    fn raw_matrix(&self, t: usize) -> Array2<f64> {
        let m = self.posterior.draw_matrix(t);
        let pc = m.ncols();
        let mut raw = Array2::<f64>::zeros(m.raw_dim());
        for r in 0..pc {
            let col: Vec<f64> = (0..m.nrows()).map(|qi| m[(qi, r)]).collect();
            for (qi, v) in self.standardization.to_raw(&col).into_iter().enumerate() {
                raw[(qi, r)] = v;
            }
        }
        raw
    }
}

impl DrawStream for CovariateDrawStream<'_> {
    fn n_draws(&self) -> usize {
        self.posterior.n_draws
    }

    fn n_voxels(&self) -> usize {
        self.basis.n_voxels
    }

    fn replay(&self, visit: &mut dyn FnMut(&[f64])) -> Result<()> {
        for t in 0..self.posterior.n_draws {
            let map = self.basis.backproject_effects(&self.raw_matrix(t))?;
            let row: Vec<f64> = map.row(self.covariate).to_vec();
            visit(&row);
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct InferSummary {
    zeta: f64,
    fdr_q: f64,
    min_cluster: usize,
    connectivity: u8,
    covariates: Vec<CovariateSummary>,
}

#[derive(Serialize, Deserialize)]
struct CovariateSummary {
    name: String,
    q_zeta: f64,
    bayes_flagged_voxels: usize,
    bayes_clusters: usize,
    fdr_flagged_voxels: usize,
    fdr_clusters: usize,
    intersection_voxels: usize,
    message: String,
}

fn infer_stage(config: &PipelineConfig, layout: &Layout, dir: &Path) -> Result<()> {
    let inputs = resolve_inputs(config, layout)?;
    let mask = read_mask(&inputs.mask)?;
    let grid = mask.grid.clone();
    let basis = CompositeBasis::load_archive(&layout.stage_dir(Stage::Basis).join("archive"))?;
    let (posterior, meta) = load_draws(&layout.stage_dir(Stage::Group))?;
    if basis.n_components() != meta.pc {
        return Err(Error::Data("draw archive does not match the basis archive".into()));
    }

    let standardization = Standardization {
        means: meta.standardize_means.clone(),
        sds: meta.standardize_sds.clone(),
        scaled: meta.standardize_scaled.clone(),
    };

    // Frequentist comparison path: per-voxel OLS on the basis-smoothed
    // reconstruction against the raw design.
    let covariates = {
        let (subject_ids, _) =
            read_projected(&layout.stage_dir(Stage::Basis).join("projected.csv"))?;
        read_covariates(&inputs.covariates, &[], Some(&subject_ids))?
    };
    let stack = read_alpha_stack(layout, &inputs, &mask)?;
    let reconstructed = basis.reconstruct(&basis.project(&stack)?)?;
    let (_, t_stats, df) = ols_t_stats(&reconstructed, &covariates.z)?;

    let inf = &config.infer;
    let mut summaries = Vec::new();
    let mut clusters_csv = String::from(
        "method,covariate,cluster,size,peak_x,peak_y,peak_z,world_x,world_y,world_z,peak_value\n",
    );

    for qi in 1..meta.q {
        let name = &meta.covariates[qi];
        let stream = CovariateDrawStream {
            posterior: &posterior,
            basis: &basis,
            standardization: standardization.clone(),
            covariate: qi,
        };
        let band = joint_credible_band(&stream, inf.zeta)?;
        if !band.excluded.is_empty() {
            eprintln!(
                "warning: {} voxel(s) had zero posterior sd for '{name}' and were excluded",
                band.excluded.len()
            );
        }
        let flags = band.flags();

        // Scatter masked-space vectors onto the full grid.
        let to_full = |masked: &dyn Fn(usize) -> f64| -> Vec<f64> {
            let mut full = vec![0.0; grid.n_voxels()];
            for (mi, &li) in mask.masked_linears().iter().enumerate() {
                full[li] = masked(mi);
            }
            full
        };
        let mean_full = to_full(&|mi| band.mean[mi]);
        let flags_full: Vec<bool> = {
            let mut full = vec![false; grid.n_voxels()];
            for (mi, &li) in mask.masked_linears().iter().enumerate() {
                full[li] = flags[mi];
            }
            full
        };

        let bayes_clusters =
            cluster_threshold(&flags_full, &grid, inf.connectivity, inf.min_cluster)?;
        let bayes_mask = bayes_clusters.retained_mask();

        // FDR path on the same covariate.
        let t_row: Vec<f64> = (0..mask.n_masked()).map(|mi| t_stats[(qi, mi)]).collect();
        let fdr_flags = fdr_map(&t_row, df, inf.fdr_q)?;
        let mut fdr_full = vec![false; grid.n_voxels()];
        for (mi, &li) in mask.masked_linears().iter().enumerate() {
            fdr_full[li] = fdr_flags[mi];
        }
        let fdr_clusters = cluster_threshold(&fdr_full, &grid, inf.connectivity, inf.min_cluster)?;
        let fdr_mask = fdr_clusters.retained_mask();

        let intersection = intersect_maps(&bayes_mask, &fdr_mask)?;

        // Volumes.
        write_volume(&dir.join(format!("{name}_mean.nii.gz")), &grid, &band.mean, &mask)?;
        let half: Vec<f64> = (0..mask.n_masked()).map(|mi| band.half_width(mi)).collect();
        write_volume(&dir.join(format!("{name}_halfwidth.nii.gz")), &grid, &half, &mask)?;
        let write_binary = |path: PathBuf, map: &[bool]| -> Result<()> {
            let values: Vec<f64> =
                mask.masked_linears().iter().map(|&li| f64::from(map[li])).collect();
            write_volume(&path, &grid, &values, &mask)
        };
        write_binary(dir.join(format!("{name}_sig.nii.gz")), &bayes_mask)?;
        write_binary(dir.join(format!("{name}_fdr_sig.nii.gz")), &fdr_mask)?;
        write_binary(dir.join(format!("{name}_intersection.nii.gz")), &intersection)?;
        let labels: Vec<f64> = mask
            .masked_linears()
            .iter()
            .map(|&li| bayes_clusters.labels[li] as f64)
            .collect();
        write_volume(&dir.join(format!("{name}_clusters.nii.gz")), &grid, &labels, &mask)?;

        // Cluster tables for both methods.
        for (method, clusters) in [("bayes", &bayes_clusters), ("fdr", &fdr_clusters)] {
            let stat_full = if method == "bayes" {
                mean_full.clone()
            } else {
                to_full(&|mi| t_stats[(qi, mi)])
            };
            for s in summarize_clusters(clusters, &stat_full, &grid) {
                clusters_csv.push_str(&format!(
                    "{method},{name},{},{},{},{},{},{},{},{},{}\n",
                    s.label,
                    s.size,
                    s.peak_voxel.0,
                    s.peak_voxel.1,
                    s.peak_voxel.2,
                    s.peak_world[0],
                    s.peak_world[1],
                    s.peak_world[2],
                    s.peak_value
                ));
            }
        }

        let bayes_n = bayes_mask.iter().filter(|&&b| b).count();
        let message = if bayes_clusters.n_clusters() == 0 {
            format!(
                "no clusters at zeta={}, min {} voxels",
                inf.zeta, inf.min_cluster
            )
        } else {
            format!("{} cluster(s) retained", bayes_clusters.n_clusters())
        };
        summaries.push(CovariateSummary {
            name: name.clone(),
            q_zeta: band.q_zeta,
            bayes_flagged_voxels: bayes_n,
            bayes_clusters: bayes_clusters.n_clusters(),
            fdr_flagged_voxels: fdr_mask.iter().filter(|&&b| b).count(),
            fdr_clusters: fdr_clusters.n_clusters(),
            intersection_voxels: intersection.iter().filter(|&&b| b).count(),
            message,
        });
    }

    let p = dir.join("clusters.csv");
    std::fs::write(&p, clusters_csv).map_err(|e| Error::io(&p, e))?;
    let summary = InferSummary {
        zeta: inf.zeta,
        fdr_q: inf.fdr_q,
        min_cluster: inf.min_cluster,
        connectivity: inf.connectivity,
        covariates: summaries,
    };
    let p = dir.join("summary.json");
    std::fs::write(
        &p,
        serde_json::to_string_pretty(&summary).map_err(|e| Error::Format(e.to_string()))?,
    )
    .map_err(|e| Error::io(&p, e))?;
    Ok(())
}

// ---------------------------------------------------------------------
// report
// ---------------------------------------------------------------------

#[derive(Serialize)]
struct Report {
    tool_version: String,
    summary: serde_json::Value,
    scores: Vec<TruthScore>,
}

#[derive(Serialize, Clone)]
struct TruthScore {
    covariate: String,
    true_positive_voxels: usize,
    flagged_voxels: usize,
    true_voxels: usize,
    sensitivity: f64,
    false_positive_voxels: usize,
}

fn report_stage(config: &PipelineConfig, layout: &Layout, dir: &Path) -> Result<()> {
    let infer_dir = layout.stage_dir(Stage::Infer);
    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(infer_dir.join("summary.json"))
            .map_err(|e| Error::io(infer_dir.join("summary.json"), e))?,
    )
    .map_err(|e| Error::Format(e.to_string()))?;

    // Copy the cluster table into the report bundle.
    std::fs::copy(infer_dir.join("clusters.csv"), dir.join("cluster_table.csv"))
        .map_err(|e| Error::io(infer_dir.join("clusters.csv"), e))?;

    // Score against the ground-truth sidecar when this was a synthetic run.
    let truth_path = layout.stage_dir(Stage::Simulate).join("truth.csv");
    let mut scores = Vec::new();
    if truth_path.exists() && config.data.volumes.is_empty() {
        let inputs = resolve_inputs(config, layout)?;
        let mask = read_mask(&inputs.mask)?;
        let truth = read_truth(&truth_path, mask.n_masked())?;
        for (name, beta_true) in &truth {
            if name == "intercept" {
                continue;
            }
            let sig_path = infer_dir.join(format!("{name}_sig.nii.gz"));
            if !sig_path.exists() {
                continue;
            }
            let vol = volume::read_raw_volume(&sig_path)?;
            let flagged: Vec<bool> = mask
                .masked_linears()
                .iter()
                .map(|&li| vol.values[li] != 0.0)
                .collect();
            let true_mask: Vec<bool> = beta_true.iter().map(|&b| b != 0.0).collect();
            let tp = flagged.iter().zip(&true_mask).filter(|(&f, &t)| f && t).count();
            let n_true = true_mask.iter().filter(|&&t| t).count();
            let fp = flagged.iter().zip(&true_mask).filter(|(&f, &t)| f && !t).count();
            scores.push(TruthScore {
                covariate: name.clone(),
                true_positive_voxels: tp,
                flagged_voxels: flagged.iter().filter(|&&f| f).count(),
                true_voxels: n_true,
                sensitivity: if n_true > 0 { tp as f64 / n_true as f64 } else { 0.0 },
                false_positive_voxels: fp,
            });
        }
        let mut csv = String::from(
            "covariate,true_positive_voxels,flagged_voxels,true_voxels,sensitivity,false_positive_voxels\n",
        );
        for s in &scores {
            csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                s.covariate,
                s.true_positive_voxels,
                s.flagged_voxels,
                s.true_voxels,
                s.sensitivity,
                s.false_positive_voxels
            ));
        }
        let p = dir.join("score_vs_truth.csv");
        std::fs::write(&p, csv).map_err(|e| Error::io(&p, e))?;
    }

    // Per-scale variance fit for the first subject's sampled voxels:
    // observed mean square per scale against the fitted progression.
    let inputs = resolve_inputs(config, layout)?;
    if let (Some(vol_path), Some(id)) =
        (inputs.volumes.first(), inputs.subject_ids.first())
    {
        let mask = read_mask(&inputs.mask)?;
        let ds = read_dataset(vol_path, Some(&mask))?;
        let est = layout.stage_dir(Stage::Estimate);
        let alpha_vol = volume::read_raw_volume(&est.join(format!("{id}_alpha-mean.nii.gz")))?;
        let nu_vol = volume::read_raw_volume(&est.join(format!("{id}_nu-mean.nii.gz")))?;
        let bank = FilterBank::<f64>::by_name(&config.estimate.wavelet)?;
        let levels = effective_levels(&config.estimate.wavelet, config.estimate.levels, ds.t)?;
        let t_dyadic = dyadic_length(ds.t);
        let n_vox = ds.n_voxels();
        let n_diag = config.estimate.diagnostic_voxels.min(n_vox);
        let mut csv = String::from("subject,voxel,scale,observed_var,fitted_var\n");
        for k in 0..n_diag {
            let v = k * n_vox / n_diag.max(1);
            let li = mask.linear_of(v);
            let alpha = alpha_vol.values[li];
            let nu = nu_vol.values[li];
            if !(alpha > 0.0 && alpha < 1.0 && nu > 0.0) {
                continue;
            }
            let series: Vec<f64> = ds.data.row(v).iter().take(t_dyadic).copied().collect();
            let mean = series.iter().sum::<f64>() / t_dyadic as f64;
            let centered: Vec<f64> = series.iter().map(|&x| x - mean).collect();
            let stats = sufficient_stats(&dwt_forward(&centered, &bank, levels)?);
            let fitted = scale_variances(&LongMemoryParams { alpha, nu }, levels);
            for m in 1..=levels {
                let observed = stats.sumsq[m - 1] / stats.count[m - 1] as f64;
                csv.push_str(&format!("{id},{v},{m},{observed},{}\n", fitted.var(m)));
            }
        }
        let p = dir.join("scale_variance_fit.csv");
        std::fs::write(&p, csv).map_err(|e| Error::io(&p, e))?;

        // Plot-ready trace/ACF table: the estimate stage already wrote it.
        let diag_src = est.join(format!("{id}_diagnostics.csv"));
        if diag_src.exists() {
            std::fs::copy(&diag_src, dir.join("trace_acf.csv"))
                .map_err(|e| Error::io(&diag_src, e))?;
        }
    }

    let report = Report {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        summary,
        scores,
    };
    let p = dir.join("report.json");
    std::fs::write(
        &p,
        serde_json::to_string_pretty(&report).map_err(|e| Error::Format(e.to_string()))?,
    )
    .map_err(|e| Error::io(&p, e))?;
    Ok(())
}

fn read_truth(path: &Path, n_masked: usize) -> Result<Vec<(String, Vec<f64>)>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut columns: Vec<(String, Vec<f64>)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let mi: usize = record
            .get(0)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("{}: bad masked_index", path.display())))?;
        let name = record.get(2).unwrap_or("").to_string();
        let beta: f64 = record
            .get(3)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("{}: bad true_beta", path.display())))?;
        let entry = match columns.iter_mut().find(|(n, _)| *n == name) {
            Some(e) => e,
            None => {
                columns.push((name.clone(), vec![0.0; n_masked]));
                columns.last_mut().unwrap()
            }
        };
        if mi < n_masked {
            entry.1[mi] = beta;
        }
    }
    Ok(columns)
}

/// Dump the explicit transform matrix as comma-separated text (debug
/// path for the wavelet's External Interface).
pub fn dump_w_matrix(t_dyadic: usize, wavelet: &str, levels: usize, out: &mut dyn Write) -> Result<()> {
    let bank = FilterBank::<f64>::by_name(wavelet)?;
    let w = crate::wavelet::build_w_matrix(t_dyadic, &bank, levels)?;
    for r in 0..w.nrows() {
        let row: Vec<String> = (0..w.ncols()).map(|c| format!("{:.17e}", w[(r, c)])).collect();
        writeln!(out, "{}", row.join(",")).map_err(|e| Error::Format(e.to_string()))?;
    }
    Ok(())
}

/// Wire the estimate stage for a single explicit volume (the standalone
/// `estimate-subject` CLI path).
pub fn estimate_single_volume(
    config: &PipelineConfig,
    volume_path: &Path,
    mask_path: &Path,
    out_dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mask = read_mask(mask_path)?;
    let ds = read_dataset(volume_path, Some(&mask))?;
    let e = &config.estimate;
    let bank = FilterBank::<f64>::by_name(&e.wavelet)?;
    let levels = effective_levels(&e.wavelet, e.levels, ds.t)?;
    let priors = SubjectPriors { a: e.prior_a, b: e.prior_b, p: e.prior_p, s: e.prior_s };
    let chain = ChainConfig {
        n_iter: e.n_iter,
        n_burn: e.n_burn,
        thin: e.thin,
        proposal_sd: e.proposal_sd,
        seed: config.run.seed,
    };
    let map = estimate_subject(&ds, &bank, levels, &priors, &chain)?;
    let id = &ds.subject_id;
    let clean =
        |v: &[f64]| -> Vec<f64> { v.iter().map(|&x| if x.is_finite() { x } else { 0.0 }).collect() };
    write_volume(&out_dir.join(format!("{id}_alpha-mean.nii.gz")), &ds.grid, &clean(&map.alpha_mean), &mask)?;
    write_volume(&out_dir.join(format!("{id}_alpha-sd.nii.gz")), &ds.grid, &clean(&map.alpha_sd), &mask)?;
    write_volume(&out_dir.join(format!("{id}_nu-mean.nii.gz")), &ds.grid, &clean(&map.nu_mean), &mask)?;
    write_volume(&out_dir.join(format!("{id}_acceptance.nii.gz")), &ds.grid, &clean(&map.acceptance), &mask)?;
    Ok(())
}
