//! Experiment driver: synthesize once, beamform every angle with each method,
//! then write lines, images, resolution and cost tables and a manifest.
//!
//! Output layout under the output directory:
//!
//! ```text
//! channels.bin                 synthesized channel frame
//! lines/<label>/line_NNN.bin   one container per scan line
//! image_<label>.pgm / .csv     scan-converted B-mode image
//! psf.csv                      axial and lateral resolution per method and depth
//! complexity.csv               multiplication counts per N_q and oversampling
//! manifest.tsv                 every file with the config hash and parameters
//! ```
//!
//! `<label>` is `pre`, `post` or `focus_nqN` (`focus_n1_N1_n2_N2` for an
//! asymmetric window). Everything written is independent of the worker count.

use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;

use super::config::{ExperimentConfig, Truncation};
use crate::error::{Error, Result};
use crate::fdbf::{
    build_q_table, compute_channel_spectra, core_band, focus_beamform, integrate_mf, mf_spectrum,
    reconstruct_time, BandPlan, LutCache, QTable, QTableKey, SpectrumSet,
};
use crate::imaging::{scan_convert, ScanOptions};
use crate::metrics::{
    complexity_model, measure_axial_psf, measure_lateral_psf, write_complexity_csv, write_file, write_psf_csv,
    ComplexityParams, ComplexityReport, LogBase, PsfReport,
};
use crate::scene::{synthesize_channels, uniform_linear_array, ArrayGeometry, ChannelFrame};
use crate::tdbf::{beamform_post_compression, beamform_time, BeamLine, LineTag};
use crate::waveform::{make_linear_fm, matched_filter, CodedPulse};

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: PathBuf,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
    /// Overrides the config's log base.
    pub log_base: Option<LogBase>,
    pub rebuild_luts: bool,
}

#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    /// Output files relative to the output directory, in write order.
    pub files: Vec<PathBuf>,
    pub psf: Vec<PsfReport>,
    pub complexity: Vec<ComplexityReport>,
    pub lut_hits: usize,
    pub lut_builds: usize,
    pub warnings: Vec<String>,
}

/// One weight table produced or found by [`build_luts`].
#[derive(Debug, Clone)]
pub struct LutRecord {
    pub theta: f64,
    pub n1: usize,
    pub n2: usize,
    pub path: PathBuf,
    pub hit: bool,
    pub seconds: f64,
    pub bytes: usize,
}

/// Runs `f` on a pool of `workers` threads.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(0) => Err(Error::InvalidParameter("worker count must be >= 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidParameter(format!("cannot start {n} workers: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Pulse, array and matched filter spectrum shared by all methods.
struct Setup {
    pulse: CodedPulse,
    geometry: ArrayGeometry,
    n_s: usize,
    h: Vec<Complex64>,
    core: (i64, i64),
}

impl Setup {
    fn new(cfg: &ExperimentConfig) -> Result<Setup> {
        let pulse = make_linear_fm(cfg.f0, cfg.bandwidth, cfg.pulse_duration, cfg.fs, cfg.window)?;
        let geometry = uniform_linear_array(cfg.elements, cfg.pitch, cfg.sound_speed)?;
        let n_s = (cfg.acquisition * cfg.fs).round() as usize;
        let h = mf_spectrum(&pulse, n_s)?;
        let core = core_band(&h, cfg.band_threshold_db)
            .ok_or_else(|| Error::InvalidInput("matched filter spectrum is identically zero".into()))?;
        Ok(Setup {
            pulse,
            geometry,
            n_s,
            h,
            core,
        })
    }

    fn plans(&self, cfg: &ExperimentConfig) -> Result<Vec<BandPlan>> {
        cfg.windows()
            .into_iter()
            .map(|(n1, n2)| {
                let p = BandPlan::truncated(self.core, n1, n2)?;
                p.validate(self.n_s)?;
                Ok(p)
            })
            .collect()
    }

    /// Smallest plan containing every configured window.
    fn wide_plan(&self, plans: &[BandPlan]) -> Result<BandPlan> {
        let n1 = plans.iter().map(|p| p.n1).max().unwrap_or(0);
        let n2 = plans.iter().map(|p| p.n2).max().unwrap_or(0);
        BandPlan::truncated(self.core, n1, n2)
    }

    fn key(&self, cfg: &ExperimentConfig, theta: f64, plan: BandPlan) -> QTableKey {
        QTableKey::new(&self.geometry, theta, plan, cfg.acquisition, self.n_s, Some(&self.h))
    }
}

fn label(tag: LineTag, plan: Option<&BandPlan>, truncation: Truncation) -> String {
    match (tag, plan) {
        (LineTag::Focus, Some(p)) => match truncation {
            Truncation::Symmetric => format!("focus_nq{}", p.nq()),
            Truncation::Asymmetric { .. } => format!("focus_n1_{}_n2_{}", p.n1, p.n2),
        },
        _ => tag.to_string(),
    }
}

/// Folded tables for every plan at one angle, served from the cache when
/// possible. Missing tables are cut from a single build of the wide plan,
/// which gives the same entries as building each plan directly.
fn tables_for_angle(
    cfg: &ExperimentConfig,
    setup: &Setup,
    cache: &LutCache,
    theta: f64,
    plans: &[BandPlan],
    wide: BandPlan,
    rebuild: bool,
) -> Result<Vec<(QTable, bool, f64)>> {
    let mut out: Vec<Option<(QTable, bool, f64)>> = Vec::with_capacity(plans.len());
    for &plan in plans {
        let key = setup.key(cfg, theta, plan);
        let cached = if rebuild { None } else { cache.load(&key)? };
        out.push(cached.map(|t| (t, true, 0.0)));
    }
    if out.iter().any(Option::is_none) {
        let start = Instant::now();
        let raw = build_q_table(&setup.geometry, theta, wide, cfg.acquisition, setup.n_s)?;
        let shared = start.elapsed().as_secs_f64();
        for (slot, &plan) in out.iter_mut().zip(plans) {
            if slot.is_none() {
                let start = Instant::now();
                let table = integrate_mf(raw.restrict(plan)?, &setup.h)?;
                cache.store(&table)?;
                *slot = Some((table, false, shared + start.elapsed().as_secs_f64()));
            }
        }
    }
    Ok(out.into_iter().flatten().collect())
}

/// Builds (or finds) every weight table the experiment needs.
pub fn build_luts(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<LutRecord>> {
    with_workers(opts.workers, || build_luts_inner(cfg, opts))?
}

fn build_luts_inner(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<LutRecord>> {
    let setup = Setup::new(cfg)?;
    let plans = setup.plans(cfg)?;
    if plans.is_empty() {
        return Ok(Vec::new());
    }
    let wide = setup.wide_plan(&plans)?;
    let cache = LutCache::new(opts.out.join(&cfg.lut_cache))?;
    let mut records = Vec::new();
    for &theta in &cfg.thetas {
        for (table, hit, seconds) in tables_for_angle(cfg, &setup, &cache, theta, &plans, wide, opts.rebuild_luts)? {
            let plan = table.plan();
            records.push(LutRecord {
                theta,
                n1: plan.n1,
                n2: plan.n2,
                path: cache.path_for(&table.key),
                hit,
                seconds,
                bytes: table.size_bytes(),
            });
        }
    }
    Ok(records)
}

pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunSummary> {
    with_workers(opts.workers, || run_inner(cfg, opts))?
}

struct Manifest {
    hash: String,
    rows: Vec<String>,
    files: Vec<PathBuf>,
}

impl Manifest {
    fn add(&mut self, file: PathBuf, method: &str, params: &str) {
        self.rows.push(format!("{}\t{}\t{}\t{}", file.display(), self.hash, method, params));
        self.files.push(file);
    }
}

fn run_inner(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunSummary> {
    let mut summary = RunSummary::default();
    if cfg.methods.is_empty() {
        log::warn!("no beamforming methods configured; nothing to do");
        summary.warnings.push("empty method list".into());
        return Ok(summary);
    }
    if cfg.thetas.is_empty() {
        return Err(Error::InvalidParameter("no scan angles configured".into()));
    }
    let out = &opts.out;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let log_base = opts.log_base.unwrap_or(cfg.log_base);
    let setup = Setup::new(cfg)?;
    let mut manifest = Manifest {
        hash: cfg.hash.clone(),
        rows: Vec::new(),
        files: Vec::new(),
    };

    let frame = synthesize_channels(
        &setup.geometry,
        &cfg.phantom,
        &setup.pulse,
        cfg.fs,
        cfg.acquisition,
        cfg.noise_rms,
        cfg.seed,
    )?;
    for w in &frame.warnings {
        log::warn!("{w}");
        summary.warnings.push(w.clone());
    }
    frame.write(&out.join("channels.bin"))?;
    manifest.add(
        "channels.bin".into(),
        "channels",
        &format!("M={} N_s={} fs={} T={}", frame.elements(), frame.samples(), cfg.fs, cfg.acquisition),
    );

    let plans = if cfg.methods.contains(&LineTag::Focus) {
        setup.plans(cfg)?
    } else {
        Vec::new()
    };

    let mut results: Vec<(String, Option<BandPlan>, LineTag, Vec<BeamLine>)> = Vec::new();
    for &method in &cfg.methods {
        match method {
            LineTag::PreCompression | LineTag::PostCompression => {
                let lines = time_domain_lines(&frame, &setup, &cfg.thetas, method)?;
                results.push((label(method, None, cfg.truncation), None, method, lines));
            }
            LineTag::Focus => {
                if plans.is_empty() {
                    log::warn!("frequency-domain method requested with an empty N_q list");
                    summary.warnings.push("empty N_q list".into());
                    continue;
                }
                let wide = setup.wide_plan(&plans)?;
                let (spectra, _) = compute_channel_spectra(&frame, &setup.h, cfg.band_threshold_db, wide.n1, wide.n2)?;
                if spectra.empty {
                    summary.warnings.push("all-zero channel frame".into());
                }
                let cache = LutCache::new(out.join(&cfg.lut_cache))?;
                let mut per_plan: Vec<Vec<BeamLine>> = vec![Vec::with_capacity(cfg.thetas.len()); plans.len()];
                for &theta in &cfg.thetas {
                    let tables = tables_for_angle(cfg, &setup, &cache, theta, &plans, wide, opts.rebuild_luts)?;
                    for (i, (table, hit, _)) in tables.into_iter().enumerate() {
                        if hit {
                            summary.lut_hits += 1;
                        } else {
                            summary.lut_builds += 1;
                        }
                        per_plan[i].push(focus_from_table(&spectra, &table, setup.n_s)?);
                    }
                }
                for (plan, lines) in plans.iter().zip(per_plan) {
                    results.push((label(method, Some(plan), cfg.truncation), Some(*plan), method, lines));
                }
            }
            LineTag::Uncoded => {
                return Err(Error::InvalidParameter("uncoded beamforming is not an experiment method".into()))
            }
        }
    }

    for (name, plan, method, lines) in &results {
        if lines.iter().any(|l| l.samples.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite(format!("{name} scan lines")));
        }
        let params = plan.map(|p| format!("n1={} n2={}", p.n1, p.n2)).unwrap_or_default();
        let dir = PathBuf::from("lines").join(name);
        std::fs::create_dir_all(out.join(&dir)).map_err(|e| Error::io(out.join(&dir), e))?;
        for (i, l) in lines.iter().enumerate() {
            let rel = dir.join(format!("line_{i:03}.bin"));
            l.write(&out.join(&rel))?;
            manifest.add(rel, &method.to_string(), &format!("theta={} {params}", l.theta));
        }
        if lines.len() >= 2 {
            let img = scan_convert(
                lines,
                &ScanOptions {
                    dynamic_range_db: cfg.dynamic_range_db,
                    pitch_mm: cfg.pixel_pitch_mm,
                    sound_speed: cfg.sound_speed,
                    interpolation: cfg.interpolation,
                    reference: None,
                },
            )?;
            for ext in ["pgm", "csv"] {
                let rel = PathBuf::from(format!("image_{name}.{ext}"));
                if ext == "pgm" {
                    img.write_pgm(&out.join(&rel))?;
                } else {
                    img.write_csv(&out.join(&rel))?;
                }
                manifest.add(rel, &method.to_string(), &format!("DR={} pitch_mm={} {params}", cfg.dynamic_range_db, cfg.pixel_pitch_mm));
            }
        } else {
            log::warn!("{name}: a single scan line cannot be scan-converted; image skipped");
        }
        for &depth_mm in &cfg.psf_depths_mm {
            summary.psf.push(psf_row(cfg, &setup, *method, plan.as_ref(), lines, depth_mm, &mut summary.warnings));
        }
    }
    write_psf_csv(&out.join("psf.csv"), &summary.psf)?;
    manifest.add("psf.csv".into(), "all", &format!("depths_mm={:?}", cfg.psf_depths_mm));

    for plan in &plans {
        let k = cfg.complexity_k.unwrap_or(plan.beam_len());
        for &p in &cfg.oversampling {
            let mut params = ComplexityParams::at_oversampling(
                cfg.elements,
                cfg.acquisition,
                cfg.fc,
                cfg.time_bandwidth(),
                k,
                plan.nq(),
                p,
            );
            if let Some(nh) = cfg.complexity_nh {
                params.n_h = nh;
            }
            summary.complexity.push(complexity_model(params, log_base)?);
        }
    }
    if !summary.complexity.is_empty() {
        write_complexity_csv(&out.join("complexity.csv"), &summary.complexity)?;
        let nh = match cfg.complexity_nh {
            Some(n) => format!("N_h={n} (configured)"),
            None => "N_h=round(D*P)".to_string(),
        };
        manifest.add("complexity.csv".into(), "focus", &format!("log_base={log_base} {nh}"));
    }

    let mut text = String::from("file\tconfig_sha256\tmethod\tparameters\n");
    for r in &manifest.rows {
        text.push_str(r);
        text.push('\n');
    }
    write_file(&out.join("manifest.tsv"), text.as_bytes())?;
    manifest.files.push("manifest.tsv".into());
    summary.files = manifest.files;
    Ok(summary)
}

fn time_domain_lines(frame: &ChannelFrame, setup: &Setup, thetas: &[f64], method: LineTag) -> Result<Vec<BeamLine>> {
    let h = matched_filter(&setup.pulse);
    match method {
        LineTag::PreCompression => {
            // compress the channels once, then beamform every angle
            let compressed = frame.map_channels(|x| crate::waveform::apply_matched_filter(x, &h));
            thetas
                .par_iter()
                .map(|&t| {
                    let mut l = beamform_time(&compressed, &setup.geometry, t)?;
                    l.tag = LineTag::PreCompression;
                    Ok(l)
                })
                .collect()
        }
        _ => thetas
            .par_iter()
            .map(|&t| beamform_post_compression(frame, &setup.geometry, t, &h))
            .collect(),
    }
}

fn focus_from_table(spectra: &SpectrumSet, table: &QTable, n_s: usize) -> Result<BeamLine> {
    reconstruct_time(&focus_beamform(spectra, table)?, n_s)
}

/// Resolution at one depth. The axial profile is taken on the line closest
/// to the scatterer at that depth (or broadside), in a window of four
/// main-lobe widths around the expected echo.
fn psf_row(
    cfg: &ExperimentConfig,
    setup: &Setup,
    method: LineTag,
    plan: Option<&BandPlan>,
    lines: &[BeamLine],
    depth_mm: f64,
    warnings: &mut Vec<String>,
) -> PsfReport {
    let depth = depth_mm * 1e-3;
    let target = cfg
        .phantom
        .scatterers
        .iter()
        .min_by(|a, b| (a.range - depth).abs().total_cmp(&(b.range - depth).abs()))
        .map(|s| s.theta)
        .unwrap_or(0.0);
    let line = lines
        .iter()
        .min_by(|a, b| (a.theta - target).abs().total_cmp(&(b.theta - target).abs()));
    let fs = setup.pulse.fs;
    let center = (2.0 * depth / cfg.sound_speed * fs).round() as i64;
    let half = (4.0 / cfg.bandwidth * fs).round().max(8.0) as i64;
    let mut note = |what: &str, e: Error| {
        let msg = format!("{method} {depth_mm} mm {what}: {e}");
        log::warn!("{msg}");
        warnings.push(msg);
    };
    let axial = line.and_then(|l| {
        let lo = (center - half).max(0) as usize;
        let hi = ((center + half) as usize).min(l.len().saturating_sub(1));
        measure_axial_psf(l, cfg.sound_speed, Some((lo, hi)))
            .map_err(|e| note("axial", e))
            .ok()
    });
    let lateral = if lines.len() >= 3 {
        measure_lateral_psf(lines, depth, cfg.sound_speed)
            .map_err(|e| note("lateral", e))
            .ok()
    } else {
        None
    };
    PsfReport {
        method,
        nq: plan.map(BandPlan::nq),
        depth_mm,
        axial,
        lateral,
    }
}

/// Reads a config from `path` and runs it.
pub fn run_config_file(path: &Path, opts: &RunOptions) -> Result<RunSummary> {
    let cfg = ExperimentConfig::from_file(path)?;
    run_experiment(&cfg, opts)
}
