//! End-to-end pipeline: synth → sanitize → estimate → metrics, driven by a
//! manifest that is sufficient to reproduce every output byte-identically.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimate::{
    peak, peak_excluding_delay, spectrum_for_packets, EstimateError, GridSpec, Method, PathEstimate,
};
use crate::metrics::{
    degradation_report, ecdf, quantile, Cdf, DegradationReport, ErrorUnit, MetricsError,
};
use crate::model::{ArrayGeometry, CaptureConfig, CsiSession, ModelError};
use crate::sanitize::{
    classify, conj_reference, correct, fit_shift_profile, SanitizeError, SanitizeOptions, ShiftCase,
};
use crate::synth::{gen_session, inject_fault, FaultSpec, ScenarioSpec, SensingMode, SynthError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("synth stage: {0}")]
    Synth(#[from] SynthError),
    #[error("sanitize stage: {0}")]
    Sanitize(#[from] SanitizeError),
    #[error("estimate stage: {0}")]
    Estimate(#[from] EstimateError),
    #[error("metrics stage: {0}")]
    Metrics(#[from] MetricsError),
    #[error("ingest stage: {0}")]
    Ingest(#[from] crate::ingest::IngestError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
}

/// Per-window estimation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateOptions {
    pub grid: GridSpec,
    pub method: Method,
    /// Packets per estimation window (non-overlapping).
    pub window: usize,
    /// Use every `stride`-th packet inside a window.
    pub stride: usize,
    /// Passive mode: delay cells excluded around the direct-path peak.
    pub exclusion_cells: usize,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            method: Method::Bartlett,
            window: 100,
            stride: 1,
            exclusion_cells: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapTolerance {
    pub aoa_deg: f64,
    pub tof_secs: f64,
}

impl Default for OverlapTolerance {
    fn default() -> Self {
        Self { aoa_deg: 0.2, tof_secs: 0.2e-9 }
    }
}

/// Everything needed to reproduce a run bit-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub preset: Option<String>,
    pub config: CaptureConfig,
    pub geometry: ArrayGeometry,
    pub scenario: ScenarioSpec,
    pub fault: Option<FaultSpec>,
    pub seeds: Vec<u64>,
    pub sanitize: SanitizeOptions,
    pub estimate: EstimateOptions,
    pub levels: Vec<f64>,
    pub overlap_tolerance: OverlapTolerance,
}

impl RunManifest {
    pub fn new(scenario: ScenarioSpec, preset: Option<String>) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            preset,
            config: CaptureConfig::default(),
            geometry: ArrayGeometry::default(),
            scenario,
            fault: None,
            seeds: vec![1],
            sanitize: SanitizeOptions::default(),
            estimate: EstimateOptions::default(),
            levels: crate::metrics::default_levels(),
            overlap_tolerance: OverlapTolerance::default(),
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.seeds.is_empty() {
            return Err(PipelineError::InvalidManifest("at least one seed required".into()));
        }
        if self.estimate.window == 0 || self.estimate.stride == 0 {
            return Err(PipelineError::InvalidManifest("estimate window/stride must be > 0".into()));
        }
        self.config.validate().map_err(PipelineError::Model)?;
        self.scenario.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassifySummary {
    pub clean: usize,
    pub case1: usize,
    pub case2_chaotic: usize,
    pub corrected: usize,
    pub unreliable_profiles: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantErrors {
    pub n: usize,
    pub aoa_median_deg: f64,
    pub tof_median_secs: f64,
}

/// Machine-readable run report. Byte-identical across reruns of the same
/// manifest (no wall-clock content).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub preset: Option<String>,
    pub mode: SensingMode,
    pub seeds: Vec<u64>,
    /// True when ToF values are absolute (reference-cable delay compensated).
    pub tof_absolute: bool,
    pub clean: VariantErrors,
    pub faulty: Option<VariantErrors>,
    pub corrected: Option<VariantErrors>,
    pub classify: ClassifySummary,
    pub degradation_aoa: Option<DegradationReport>,
    pub degradation_tof: Option<DegradationReport>,
}

pub struct RunOutput {
    pub report: PipelineReport,
    pub manifest: RunManifest,
    /// Pooled per-window absolute errors per variant: (aoa deg, tof secs).
    pub errors: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
    /// Stage wall-clock seconds (diagnostic only; never in the report).
    pub timings: BTreeMap<String, f64>,
}

/// Per-window path estimates of a sanitized (free-space) session.
pub fn window_estimates(
    session: &CsiSession,
    opts: &EstimateOptions,
    mode: SensingMode,
) -> Result<Vec<PathEstimate>, PipelineError> {
    let mut estimates = Vec::new();
    let n = session.n_packets();
    let mut start = 0usize;
    while start + opts.window <= n {
        let packets: Vec<usize> = (start..start + opts.window).step_by(opts.stride).collect();
        let spectrum = spectrum_for_packets(session, &packets, &opts.grid, opts.method)?;
        let est = match mode {
            SensingMode::Active => peak(&spectrum),
            SensingMode::Passive => {
                let direct = spectrum.argmax_cell();
                peak_excluding_delay(&spectrum, direct, opts.exclusion_cells)
            }
        };
        estimates.push(est);
        start += opts.window;
    }
    Ok(estimates)
}

fn pooled_errors(
    estimates: &[PathEstimate],
    truth: (f64, f64),
    ref_delay: f64,
) -> (Vec<f64>, Vec<f64>) {
    let aoa = estimates.iter().map(|e| (e.aoa_deg - truth.0).abs()).collect();
    let tof = estimates.iter().map(|e| (e.tof + ref_delay - truth.1).abs()).collect();
    (aoa, tof)
}

fn variant_stats(aoa: &[f64], tof: &[f64]) -> Result<VariantErrors, MetricsError> {
    let aoa_cdf = ecdf(aoa, ErrorUnit::Degrees)?;
    let tof_cdf = ecdf(tof, ErrorUnit::Seconds)?;
    Ok(VariantErrors {
        n: aoa.len(),
        aoa_median_deg: quantile(&aoa_cdf, 0.5)?,
        tof_median_secs: quantile(&tof_cdf, 0.5)?,
    })
}

/// Execute a manifest: for each seed, synthesize the clean session, inject the
/// fault (when configured), sanitize, estimate per window, and pool errors
/// into clean/faulty/corrected CDFs with degradation rows per level.
pub fn run_pipeline(manifest: &RunManifest) -> Result<RunOutput, PipelineError> {
    manifest.validate()?;
    let mut timings: BTreeMap<String, f64> = BTreeMap::new();
    let t_all = Instant::now();

    let mut clean_aoa = Vec::new();
    let mut clean_tof = Vec::new();
    let mut faulty_aoa = Vec::new();
    let mut faulty_tof = Vec::new();
    let mut corr_aoa = Vec::new();
    let mut corr_tof = Vec::new();
    let mut summary = ClassifySummary::default();

    let mode = manifest.scenario.mode;
    let ref_delay = manifest.scenario.ref_cable_delay;
    let has_ref = manifest.config.ref_chain.is_some();

    for &seed in &manifest.seeds {
        let t0 = Instant::now();
        let (raw, truth) = gen_session(&manifest.scenario, &manifest.config, &manifest.geometry, seed)?;
        *timings.entry("synth".into()).or_default() += t0.elapsed().as_secs_f64();

        let truth_pair = (truth.target_aoa_deg, truth.target_tof);

        let t0 = Instant::now();
        let clean = if has_ref { conj_reference(&raw)?.0 } else { raw.clone() };
        *timings.entry("sanitize".into()).or_default() += t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        let est = window_estimates(&clean, &manifest.estimate, mode)?;
        let (a, t) = pooled_errors(&est, truth_pair, ref_delay);
        clean_aoa.extend(a);
        clean_tof.extend(t);
        *timings.entry("estimate".into()).or_default() += t0.elapsed().as_secs_f64();

        let Some(fault) = &manifest.fault else { continue };

        let t0 = Instant::now();
        let (faulty_raw, _) = inject_fault(&raw, fault, seed)?;
        let faulty = if has_ref { conj_reference(&faulty_raw)?.0 } else { faulty_raw };
        *timings.entry("synth".into()).or_default() += t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        let report = classify(&faulty, &manifest.sanitize)?;
        let corrected = match report.case {
            ShiftCase::Clean => {
                summary.clean += 1;
                None
            }
            ShiftCase::Case2Chaotic => {
                summary.case2_chaotic += 1;
                None
            }
            ShiftCase::Case1 => {
                summary.case1 += 1;
                let profile = fit_shift_profile(&faulty, &report.events, &manifest.sanitize)?;
                if profile.reliable {
                    let (fixed, _) = correct(&faulty, &profile, &report.events)?;
                    summary.corrected += 1;
                    Some(fixed)
                } else {
                    summary.unreliable_profiles += 1;
                    None
                }
            }
        };
        *timings.entry("sanitize".into()).or_default() += t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        let est = window_estimates(&faulty, &manifest.estimate, mode)?;
        let (a, t) = pooled_errors(&est, truth_pair, ref_delay);
        faulty_aoa.extend(a);
        faulty_tof.extend(t);
        if let Some(fixed) = corrected {
            let est = window_estimates(&fixed, &manifest.estimate, mode)?;
            let (a, t) = pooled_errors(&est, truth_pair, ref_delay);
            corr_aoa.extend(a);
            corr_tof.extend(t);
        }
        *timings.entry("estimate".into()).or_default() += t0.elapsed().as_secs_f64();
    }

    let clean_stats = variant_stats(&clean_aoa, &clean_tof)?;
    let faulty_stats =
        if faulty_aoa.is_empty() { None } else { Some(variant_stats(&faulty_aoa, &faulty_tof)?) };
    let corr_stats = if corr_aoa.is_empty() { None } else { Some(variant_stats(&corr_aoa, &corr_tof)?) };

    let (deg_aoa, deg_tof) = if faulty_aoa.is_empty() {
        (None, None)
    } else {
        let clean_a = ecdf(&clean_aoa, ErrorUnit::Degrees)?;
        let clean_t = ecdf(&clean_tof, ErrorUnit::Seconds)?;
        let faulty_a = ecdf(&faulty_aoa, ErrorUnit::Degrees)?;
        let faulty_t = ecdf(&faulty_tof, ErrorUnit::Seconds)?;
        let corr_a = if corr_aoa.is_empty() { None } else { Some(ecdf(&corr_aoa, ErrorUnit::Degrees)?) };
        let corr_t = if corr_tof.is_empty() { None } else { Some(ecdf(&corr_tof, ErrorUnit::Seconds)?) };
        (
            Some(degradation_report(
                &clean_a,
                &faulty_a,
                corr_a.as_ref(),
                &manifest.levels,
                manifest.overlap_tolerance.aoa_deg,
            )?),
            Some(degradation_report(
                &clean_t,
                &faulty_t,
                corr_t.as_ref(),
                &manifest.levels,
                manifest.overlap_tolerance.tof_secs,
            )?),
        )
    };

    timings.insert("total".into(), t_all.elapsed().as_secs_f64());

    let report = PipelineReport {
        preset: manifest.preset.clone(),
        mode,
        seeds: manifest.seeds.clone(),
        tof_absolute: has_ref,
        clean: clean_stats,
        faulty: faulty_stats,
        corrected: corr_stats,
        classify: summary,
        degradation_aoa: deg_aoa,
        degradation_tof: deg_tof,
    };

    let mut errors = BTreeMap::new();
    errors.insert("clean".to_string(), (clean_aoa, clean_tof));
    if !faulty_aoa.is_empty() {
        errors.insert("faulty".to_string(), (faulty_aoa, faulty_tof));
    }
    if !corr_aoa.is_empty() {
        errors.insert("corrected".to_string(), (corr_aoa, corr_tof));
    }

    Ok(RunOutput { report, manifest: manifest.clone(), errors, timings })
}

/// Confidence-level quantile curves as CSV, one row per level.
fn write_curves<W: Write>(output: &RunOutput, mut w: W) -> std::io::Result<()> {
    writeln!(
        w,
        "confidence,clean_aoa_deg,faulty_aoa_deg,corrected_aoa_deg,clean_tof_ns,faulty_tof_ns,corrected_tof_ns"
    )?;
    let cdf_of = |name: &str, unit: ErrorUnit| -> Option<(Cdf, Cdf)> {
        output.errors.get(name).map(|(aoa, tof)| {
            let _ = unit;
            (
                ecdf(aoa, ErrorUnit::Degrees).expect("non-empty"),
                ecdf(tof, ErrorUnit::Seconds).expect("non-empty"),
            )
        })
    };
    let clean = cdf_of("clean", ErrorUnit::Degrees);
    let faulty = cdf_of("faulty", ErrorUnit::Degrees);
    let corrected = cdf_of("corrected", ErrorUnit::Degrees);
    for &level in &output.manifest.levels {
        let q_aoa = |c: &Option<(Cdf, Cdf)>| -> String {
            c.as_ref()
                .map(|(a, _)| format!("{:?}", quantile(a, level).expect("level valid")))
                .unwrap_or_default()
        };
        let q_tof = |c: &Option<(Cdf, Cdf)>| -> String {
            c.as_ref()
                .map(|(_, t)| format!("{:?}", quantile(t, level).expect("level valid") * 1e9))
                .unwrap_or_default()
        };
        writeln!(
            w,
            "{:?},{},{},{},{},{},{}",
            level,
            q_aoa(&clean),
            q_aoa(&faulty),
            q_aoa(&corrected),
            q_tof(&clean),
            q_tof(&faulty),
            q_tof(&corrected)
        )?;
    }
    Ok(())
}

/// File names written by `save_outputs`.
pub const REPORT_FILE: &str = "report.json";
pub const CURVES_FILE: &str = "curves.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TIMINGS_FILE: &str = "timings.json";

/// Write report.json, curves.csv, and manifest.json (all byte-stable for a
/// fixed manifest) plus timings.json (diagnostic, varies run to run).
pub fn save_outputs(output: &RunOutput, dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(REPORT_FILE), serde_json::to_vec_pretty(&output.report)?)?;
    let mut curves = Vec::new();
    write_curves(output, &mut curves)?;
    fs::write(dir.join(CURVES_FILE), curves)?;
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&output.manifest)?)?;
    fs::write(dir.join(TIMINGS_FILE), serde_json::to_vec_pretty(&output.timings)?)?;
    Ok(())
}
