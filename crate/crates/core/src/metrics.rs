//! Point-spread-function metrology and closed-form multiplication counts.

use std::fmt;
use std::io::Write;
use std::path::Path;

use crate::dsp::{argmax, envelope, level_crossings};
use crate::error::{Error, Result};
use crate::tdbf::{BeamLine, LineTag};

fn db(ratio: f64) -> f64 {
    20.0 * ratio.log10()
}

/// Axial point-spread measurements of one scan line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxialPsf {
    /// Half-power main-lobe width (s).
    pub width_s: f64,
    /// Same width as range, `c * width / 2` (mm).
    pub width_mm: f64,
    pub peak_index: usize,
    pub peak: f64,
    /// Highest of the two first sidelobes, dB relative to the peak.
    pub first_sidelobe_db: f64,
    /// Highest envelope value outside the first nulls, dB relative to the peak.
    pub peak_sidelobe_db: f64,
    /// First nulls (sample indices) bounding the main lobe.
    pub nulls: (usize, usize),
}

/// Walks downhill from `i` in direction `step` to the next local minimum.
fn descend(env: &[f64], mut i: usize, lo: usize, hi: usize, up: bool) -> usize {
    loop {
        let next = if up { i + 1 } else { i.wrapping_sub(1) };
        if next < lo || next >= hi || env[next] > env[i] {
            return i;
        }
        if env[next] == env[i] && env[i] > 0.0 {
            // plateau at a nonzero level: stop, it is not a null
            return i;
        }
        i = next;
        if env[i] == 0.0 {
            return i;
        }
    }
}

/// Walks uphill from `i` to the next local maximum.
fn ascend(env: &[f64], mut i: usize, lo: usize, hi: usize, up: bool) -> usize {
    loop {
        let next = if up { i + 1 } else { i.wrapping_sub(1) };
        if next < lo || next >= hi || env[next] < env[i] {
            return i;
        }
        i = next;
    }
}

/// Measures the axial PSF of the dominant reflector in `line`, optionally
/// restricted to the sample range `window` (half-open). The envelope is the
/// analytic-signal magnitude of the whole line.
pub fn measure_axial_psf(line: &BeamLine, c: f64, window: Option<(usize, usize)>) -> Result<AxialPsf> {
    let env = envelope(&line.samples);
    let (lo, hi) = window.unwrap_or((0, env.len()));
    let hi = hi.min(env.len());
    if lo >= hi {
        return Err(Error::MeasurementFailed(format!("empty window {lo}..{hi}")));
    }
    measure_axial_envelope(&env, lo, hi, line.fs, c)
}

pub(crate) fn measure_axial_envelope(env: &[f64], lo: usize, hi: usize, fs: f64, c: f64) -> Result<AxialPsf> {
    if env[lo..hi].iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("scan line envelope".into()));
    }
    let peak = lo + argmax(&env[lo..hi]).expect("non-empty window");
    let pv = env[peak];
    let mut sorted: Vec<f64> = env[lo..hi].to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    if !(pv > 0.0) || pv <= 4.0 * median {
        return Err(Error::MeasurementFailed("no peak above the noise floor".into()));
    }
    let (l, r) = level_crossings(&env[lo..hi], peak - lo, pv / std::f64::consts::SQRT_2);
    let (l, r) = match (l, r) {
        (Some(l), Some(r)) => (l, r),
        _ => return Err(Error::MeasurementFailed("main lobe runs into the window edge".into())),
    };
    let width_s = (r - l) / fs;

    let null_l = descend(env, peak, lo, hi, false);
    let null_r = descend(env, peak, lo, hi, true);
    let side_l = ascend(env, null_l, lo, hi, false);
    let side_r = ascend(env, null_r, lo, hi, true);
    let first = [side_l, side_r]
        .iter()
        .filter(|&&i| i != null_l && i != null_r)
        .map(|&i| env[i])
        .fold(0.0, f64::max);
    let outside = env[lo..null_l]
        .iter()
        .chain(&env[null_r + 1..hi])
        .cloned()
        .fold(0.0, f64::max);
    Ok(AxialPsf {
        width_s,
        width_mm: width_s * c / 2.0 * 1e3,
        peak_index: peak,
        peak: pv,
        first_sidelobe_db: db(first / pv),
        peak_sidelobe_db: db(outside / pv),
        nulls: (null_l, null_r),
    })
}

/// Lateral point-spread measurement over a fan of scan lines.
#[derive(Debug, Clone, PartialEq)]
pub struct LateralPsf {
    pub width_rad: f64,
    /// Arc length at the measured depth (mm).
    pub width_mm: f64,
    pub peak_theta: f64,
    /// Envelope across the fan at the measured depth.
    pub profile: Vec<f64>,
    /// True when the profile never drops to half power (no focusing): the
    /// width is then the whole angular span.
    pub unresolved: bool,
}

/// Lateral profile at `depth` (m): per line, the envelope maximum within one
/// sample of the round-trip sample `round(2 depth / c * fs)`; the half-power
/// width is interpolated on the angle grid.
pub fn measure_lateral_psf(lines: &[BeamLine], depth: f64, c: f64) -> Result<LateralPsf> {
    if lines.len() < 2 {
        return Err(Error::MeasurementFailed("need at least two scan lines".into()));
    }
    if lines.windows(2).any(|w| !(w[1].theta > w[0].theta)) {
        return Err(Error::InvalidInput("scan-line angles must be strictly increasing".into()));
    }
    let thetas: Vec<f64> = lines.iter().map(|l| l.theta).collect();
    let profile: Vec<f64> = lines
        .iter()
        .map(|l| {
            let env = envelope(&l.samples);
            let centre = (2.0 * depth / c * l.fs).round() as i64;
            (centre - 1..=centre + 1)
                .filter(|&i| i >= 0 && (i as usize) < env.len())
                .map(|i| env[i as usize])
                .fold(0.0, f64::max)
        })
        .collect();
    let peak = argmax(&profile).expect("non-empty");
    let pv = profile[peak];
    if !(pv > 0.0) {
        return Err(Error::MeasurementFailed("no echo at the requested depth".into()));
    }
    let to_theta = |x: f64| {
        let i = (x.floor() as usize).min(thetas.len() - 2);
        thetas[i] + (x - i as f64) * (thetas[i + 1] - thetas[i])
    };
    let (width_rad, unresolved) = match level_crossings(&profile, peak, pv / std::f64::consts::SQRT_2) {
        (Some(l), Some(r)) => (to_theta(r) - to_theta(l), false),
        (None, None) => (thetas[thetas.len() - 1] - thetas[0], true),
        _ => {
            return Err(Error::MeasurementFailed(
                "angle grid does not bracket the scatterer's main lobe".into(),
            ))
        }
    };
    Ok(LateralPsf {
        width_rad,
        width_mm: width_rad * depth * 1e3,
        peak_theta: thetas[peak],
        profile,
        unresolved,
    })
}

/// One row of a resolution report.
#[derive(Debug, Clone, PartialEq)]
pub struct PsfReport {
    pub method: LineTag,
    pub nq: Option<usize>,
    pub depth_mm: f64,
    pub axial: Option<AxialPsf>,
    pub lateral: Option<LateralPsf>,
}

pub const PSF_CSV_HEADER: &str =
    "method,nq,depth_mm,axial_width_us,axial_width_mm,first_sidelobe_db,peak_sidelobe_db,lateral_width_rad,lateral_width_mm";

impl PsfReport {
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        format!(
            "{},{},{:.3},{},{},{},{},{},{}",
            self.method,
            self.nq.map(|n| n.to_string()).unwrap_or_default(),
            self.depth_mm,
            opt(self.axial.map(|a| a.width_s * 1e6)),
            opt(self.axial.map(|a| a.width_mm)),
            opt(self.axial.map(|a| a.first_sidelobe_db)),
            opt(self.axial.map(|a| a.peak_sidelobe_db)),
            opt(self.lateral.as_ref().map(|l| l.width_rad)),
            opt(self.lateral.as_ref().map(|l| l.width_mm)),
        )
    }
}

pub fn write_psf_csv(path: &Path, rows: &[PsfReport]) -> Result<()> {
    let mut out = String::from(PSF_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(bytes))
        .map_err(|e| Error::io(path, e))
}

/// Logarithm used in the FFT cost terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LogBase {
    #[default]
    Two,
    E,
}

impl LogBase {
    pub fn log(self, x: f64) -> f64 {
        match self {
            LogBase::Two => x.log2(),
            LogBase::E => x.ln(),
        }
    }

    pub fn parse(s: &str) -> Option<LogBase> {
        match s.trim() {
            "2" => Some(LogBase::Two),
            "e" | "E" => Some(LogBase::E),
            _ => None,
        }
    }
}

impl fmt::Display for LogBase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LogBase::Two => "2",
            LogBase::E => "e",
        })
    }
}

/// Size parameters of one scan line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexityParams {
    pub elements: usize,
    pub n_s: usize,
    pub n_h: usize,
    pub k: usize,
    pub nq: usize,
    /// Oversampling factor `f_s / f_c`, when known.
    pub p: Option<f64>,
}

impl ComplexityParams {
    /// Sizes at oversampling `p`: `N_s = round(T P f_c)`, `N_h = round(D P)`.
    pub fn at_oversampling(elements: usize, duration: f64, f_c: f64, time_bandwidth: f64, k: usize, nq: usize, p: f64) -> Self {
        ComplexityParams {
            elements,
            n_s: (duration * p * f_c).round() as usize,
            n_h: (time_bandwidth * p).round() as usize,
            k,
            nq,
            p: Some(p),
        }
    }
}

/// Multiplications per scan line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexityReport {
    pub params: ComplexityParams,
    pub log_base: LogBase,
    /// Frequency-domain method: weights plus one inverse FFT.
    pub na: u64,
    /// Time-domain per-channel compression followed by interpolating beamforming.
    pub nb: u64,
    /// Saved by compressing once after beamforming instead of per channel.
    pub nsaved: u64,
    pub ratio: f64,
}

/// Closed-form counts:
///
/// ```text
/// Na = M K N_q + (N_s / 2) log N_s
/// Nb = M N_s + M (1.5 (N_s + N_h) log(N_s + N_h) + N_s + N_h)
/// N  = (M - 1) (1.5 (N_s + N_h) log(N_s + N_h) + N_s + N_h)
/// ```
pub fn complexity_model(params: ComplexityParams, base: LogBase) -> Result<ComplexityReport> {
    let ComplexityParams {
        elements,
        n_s,
        n_h,
        k,
        nq,
        ..
    } = params;
    if [elements, n_s, n_h, k, nq].contains(&0) {
        return Err(Error::InvalidParameter("complexity parameters must all be >= 1".into()));
    }
    let m = elements as f64;
    let ns = n_s as f64;
    let nl = (n_s + n_h) as f64;
    let mf = 1.5 * nl * base.log(nl) + nl;
    let na = m * k as f64 * nq as f64 + ns / 2.0 * base.log(ns);
    let nb = m * ns + m * mf;
    let nsaved = (m - 1.0) * mf;
    Ok(ComplexityReport {
        params,
        log_base: base,
        na: na.round() as u64,
        nb: nb.round() as u64,
        nsaved: nsaved.round() as u64,
        ratio: nb / na,
    })
}

pub const COMPLEXITY_CSV_HEADER: &str = "M,N_s,N_h,K,N_q,P,log_base,Na,Nb,Nsaved,ratio";

impl ComplexityReport {
    pub fn csv_row(&self) -> String {
        let p = &self.params;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{:.4}",
            p.elements,
            p.n_s,
            p.n_h,
            p.k,
            p.nq,
            p.p.map(|v| format!("{v}")).unwrap_or_default(),
            self.log_base,
            self.na,
            self.nb,
            self.nsaved,
            self.ratio
        )
    }
}

pub fn write_complexity_csv(path: &Path, rows: &[ComplexityReport]) -> Result<()> {
    let mut out = String::from(COMPLEXITY_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}

/// Whether a measured multiplication count agrees with the model within a
/// factor of two (the model ignores additions and index arithmetic).
pub fn counts_agree(measured: u64, modelled: u64) -> bool {
    let (a, b) = (measured as f64, modelled as f64);
    a <= 2.0 * b && b <= 2.0 * a
}
