//! Frequency-domain beamforming with the matched filter folded into the
//! beamforming weights.
//!
//! Channel `m` is represented by its Fourier coefficients `c_m[k]` over the
//! acquisition window `[0, T)`. Dynamic focusing becomes a short convolution
//! of those coefficients with a data-independent kernel `Q_{k,m}[n]` (the
//! Fourier coefficients of the distortion function `q_{k,m}`), and matched
//! filtering becomes a per-bin product with the filter spectrum `h[k]`. Both
//! are merged into one weight table `Q~[k,m,n] = h[k-n] Q[k,m,n]`, so a beam
//! coefficient costs `M * N_q` multiplications:
//!
//! ```text
//! c_CE[k] = 1/M sum_m sum_{n=-N1}^{N2} c_m[k-n] Q~[k,m,n]
//! ```
//!
//! Conventions: `c_m[k] = DFT(phi_m)[k] / N_s`; `h[k]` is the unnormalized DFT
//! of the matched filter periodized on `N_s` samples (so `|h[k]| = |S[k]|`),
//! and the compressed beam is `Re IDFT(c_CE) * N_s`, peaking at sample
//! `round(fs t)` for an echo at round-trip time `t`, like [`crate::tdbf`].
//! Negative indices are taken modulo `N_s`; only `k >= 0` beam coefficients
//! are computed, the rest follow from Hermitian symmetry.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use num_complex::{Complex32, Complex64};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::dsp::{fft_in_place, ifft_in_place, real_dft};
use crate::error::{Error, Result};
use crate::scene::{delay_for_gamma, ArrayGeometry, ChannelFrame};
use crate::tdbf::{BeamLine, LineTag};
use crate::waveform::CodedPulse;

pub const DEFAULT_BAND_THRESHOLD_DB: f64 = 40.0;

/// Which coefficients take part in one scan line.
///
/// * `channel` — contiguous index range of `c_m[k]` kept from each channel;
/// * `beam` — range of `c_CE[k]` computed (non-negative indices only);
/// * `n1`, `n2` — the weight window `n in [-n1, n2]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BandPlan {
    pub channel: (i64, i64),
    pub beam: (i64, i64),
    pub n1: usize,
    pub n2: usize,
}

impl BandPlan {
    /// Truncated window around a core band `[lo, hi]`: the beam band is the
    /// core widened by `n1` below and `n2` above (clipped at zero) and the
    /// channel band is the core widened by `n1 + n2` on both sides.
    pub fn truncated(core: (i64, i64), n1: usize, n2: usize) -> Result<BandPlan> {
        if core.0 < 0 || core.1 < core.0 {
            return Err(Error::InvalidParameter(format!("bad core band {core:?}")));
        }
        let w = (n1 + n2) as i64;
        Ok(BandPlan {
            channel: (core.0 - w, core.1 + w),
            beam: ((core.0 - n1 as i64).max(0), core.1 + n2 as i64),
            n1,
            n2,
        })
    }

    /// Symmetric window of odd length `nq`.
    pub fn symmetric(core: (i64, i64), nq: usize) -> Result<BandPlan> {
        if nq % 2 == 0 {
            return Err(Error::InvalidParameter(format!(
                "symmetric truncation needs an odd N_q (got {nq})"
            )));
        }
        BandPlan::truncated(core, (nq - 1) / 2, (nq - 1) / 2)
    }

    /// Window wide enough that no product `c_m[k-n] Q[k,m,n]` with a retained
    /// channel coefficient is dropped: channels keep `[-hi, hi]`, the beam
    /// keeps `[0, hi]` and `n` spans `[-hi, 2 hi]`.
    pub fn untruncated(core_hi: i64) -> BandPlan {
        let hi = core_hi.max(0);
        BandPlan {
            channel: (-hi, hi),
            beam: (0, hi),
            n1: hi as usize,
            n2: 2 * hi as usize,
        }
    }

    pub fn nq(&self) -> usize {
        self.n1 + self.n2 + 1
    }

    /// Number of beam coefficients `K`.
    pub fn beam_len(&self) -> usize {
        (self.beam.1 - self.beam.0 + 1).max(0) as usize
    }

    pub fn channel_len(&self) -> usize {
        (self.channel.1 - self.channel.0 + 1).max(0) as usize
    }

    pub fn validate(&self, n_s: usize) -> Result<()> {
        let n = n_s as i64;
        if self.beam.0 < 0 || self.beam.1 < self.beam.0 || 2 * self.beam.1 > n {
            return Err(Error::InvalidParameter(format!(
                "beam band {:?} must lie in [0, N_s/2] (N_s = {n_s})",
                self.beam
            )));
        }
        if self.channel_len() > n_s {
            return Err(Error::InvalidParameter(format!(
                "channel band {:?} is wider than N_s = {n_s}",
                self.channel
            )));
        }
        if self.nq() > n_s {
            return Err(Error::InvalidParameter(format!("N_q = {} exceeds N_s = {n_s}", self.nq())));
        }
        Ok(())
    }

    fn hash_into(&self, h: &mut Sha256) {
        for v in [self.channel.0, self.channel.1, self.beam.0, self.beam.1] {
            h.update(v.to_le_bytes());
        }
        h.update((self.n1 as u64).to_le_bytes());
        h.update((self.n2 as u64).to_le_bytes());
    }
}

/// Spectrum `h[k]` (length `N_s`) of the matched filter periodized on the
/// acquisition grid; `h[k] = conj(S[k])` for a real pulse.
pub fn mf_spectrum(pulse: &CodedPulse, n_s: usize) -> Result<Vec<Complex64>> {
    if pulse.len() > n_s {
        return Err(Error::InvalidParameter(format!(
            "pulse ({} samples) longer than the acquisition window ({n_s} samples)",
            pulse.len()
        )));
    }
    Ok(real_dft(&pulse.samples, n_s).into_iter().map(|v| v.conj()).collect())
}

/// Contiguous hull of the non-negative bins `k <= N_s/2` where the
/// compressed-echo spectrum `20 log10 |h[k]|^2` is within `threshold_db` of its
/// peak. `None` for an all-zero filter.
pub fn core_band(h: &[Complex64], threshold_db: f64) -> Option<(i64, i64)> {
    let half = h.len() / 2;
    let power: Vec<f64> = h[..=half.min(h.len().saturating_sub(1))].iter().map(|v| v.norm_sqr()).collect();
    let peak = power.iter().cloned().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return None;
    }
    // 20 log10(P) >= 20 log10(P_max) - thr  <=>  P >= P_max 10^(-thr/20)
    let floor = peak * 10f64.powf(-threshold_db / 20.0);
    let lo = power.iter().position(|&p| p >= floor)?;
    let hi = power.iter().rposition(|&p| p >= floor)?;
    Some((lo as i64, hi as i64))
}

/// Key tying weights and spectra to one acquisition geometry.
pub fn geometry_key(g: &ArrayGeometry, duration: f64, n_s: usize) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"geometry");
    h.update(g.fingerprint_bytes());
    h.update(duration.to_bits().to_le_bytes());
    h.update((n_s as u64).to_le_bytes());
    h.finalize().into()
}

fn spectrum_key(h: &[Complex64]) -> [u8; 32] {
    let mut s = Sha256::new();
    s.update(b"mf");
    for v in h {
        s.update(v.re.to_bits().to_le_bytes());
        s.update(v.im.to_bits().to_le_bytes());
    }
    s.finalize().into()
}

/// Fourier coefficients of every channel over a contiguous band.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSet {
    coeffs: Vec<Complex64>,
    pub band: (i64, i64),
    pub elements: usize,
    pub n_s: usize,
    pub duration: f64,
    pub geometry_key: [u8; 32],
    /// Set when the input frame held no signal; the band is then empty.
    pub empty: bool,
}

impl SpectrumSet {
    pub fn band_len(&self) -> usize {
        (self.band.1 - self.band.0 + 1).max(0) as usize
    }

    /// `c_m[k]`; zero outside the retained band.
    pub fn coeff(&self, m: usize, k: i64) -> Complex64 {
        if k < self.band.0 || k > self.band.1 {
            return Complex64::new(0.0, 0.0);
        }
        self.coeffs[m * self.band_len() + (k - self.band.0) as usize]
    }

    fn row(&self, m: usize) -> &[Complex64] {
        let w = self.band_len();
        &self.coeffs[m * w..(m + 1) * w]
    }
}

/// Channel coefficients `c_m[k] = DFT(phi_m)[k] / N_s` for `k` in `band`.
pub fn channel_spectra(f: &ChannelFrame, band: (i64, i64)) -> Result<SpectrumSet> {
    let n_s = f.samples();
    let width = (band.1 - band.0 + 1).max(0) as usize;
    if width > n_s {
        return Err(Error::InvalidParameter(format!("band {band:?} wider than N_s = {n_s}")));
    }
    let scale = 1.0 / n_s as f64;
    let rows: Vec<Vec<Complex64>> = (0..f.elements())
        .into_par_iter()
        .map(|m| {
            let spec = real_dft(f.channel(m), n_s);
            (band.0..band.0 + width as i64)
                .map(|k| spec[k.rem_euclid(n_s as i64) as usize] * scale)
                .collect()
        })
        .collect();
    Ok(SpectrumSet {
        coeffs: rows.concat(),
        band: (band.0, band.0 + width as i64 - 1),
        elements: f.elements(),
        n_s,
        duration: f.duration(),
        geometry_key: geometry_key(&f.geometry, f.duration(), n_s),
        empty: false,
    })
}

/// Selects the band from the matched-filter spectrum and computes the channel
/// coefficients it needs for an `(n1, n2)` window. An all-zero frame yields an
/// empty, flagged band.
pub fn compute_channel_spectra(
    f: &ChannelFrame,
    h: &[Complex64],
    threshold_db: f64,
    n1: usize,
    n2: usize,
) -> Result<(SpectrumSet, BandPlan)> {
    if f.elements() == 0 || f.samples() == 0 {
        return Err(Error::InvalidInput("empty frame".into()));
    }
    let core = core_band(h, threshold_db)
        .ok_or_else(|| Error::InvalidInput("matched filter spectrum is identically zero".into()))?;
    let plan = BandPlan::truncated(core, n1, n2)?;
    plan.validate(f.samples())?;
    if f.data().iter().all(|&v| v == 0.0) {
        log::warn!("all-zero channel frame; band is empty");
        let mut set = channel_spectra(f, (0, -1))?;
        set.empty = true;
        return Ok((set, plan));
    }
    Ok((channel_spectra(f, plan.channel)?, plan))
}

/// Sampled distortion function of element `gamma`:
/// `q_k(x) = 1[|gamma|, tau(T)) (x) * J(x) * exp(i 2 pi k / T * phase(x))`.
/// Returns `(J, phase)` on the `N_s` grid, zero outside the indicator.
fn distortion_parts(gamma: f64, theta: f64, duration: f64, n_s: usize, element: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let fs = n_s as f64 / duration;
    let mut jac = vec![0.0; n_s];
    let mut phase = vec![0.0; n_s];
    if gamma == 0.0 {
        jac.iter_mut().for_each(|v| *v = 1.0);
        return Ok((jac, phase));
    }
    let (s, c) = theta.sin_cos();
    let upper = delay_for_gamma(gamma, duration, theta);
    for j in 0..n_s {
        let x = j as f64 / fs;
        if x < gamma.abs() || x >= upper {
            continue;
        }
        let den = x - gamma * s;
        if !(den > 0.0) {
            return Err(Error::Singularity { element, time: x });
        }
        jac[j] = 1.0 + (gamma * c / den).powi(2);
        phase[j] = gamma * (gamma - x * s) / den;
    }
    Ok((jac, phase))
}

/// Full-length coefficient vector `Q_{k,m}[n]`, `n` taken modulo `N_s`.
pub fn q_coefficients(g: &ArrayGeometry, m: usize, theta: f64, k: i64, duration: f64, n_s: usize) -> Result<Vec<Complex64>> {
    check_angle(theta)?;
    let (jac, phase) = distortion_parts(g.gamma(m), theta, duration, n_s, m)?;
    Ok(q_from_parts(&jac, &phase, k, duration))
}

fn q_from_parts(jac: &[f64], phase: &[f64], k: i64, duration: f64) -> Vec<Complex64> {
    let w = 2.0 * PI * k as f64 / duration;
    let mut buf: Vec<Complex64> = jac
        .iter()
        .zip(phase)
        .map(|(&a, &p)| if a == 0.0 { Complex64::new(0.0, 0.0) } else { Complex64::from_polar(a, w * p) })
        .collect();
    fft_in_place(&mut buf);
    let scale = 1.0 / jac.len() as f64;
    buf.iter_mut().for_each(|v| *v *= scale);
    buf
}

fn check_angle(theta: f64) -> Result<()> {
    if !(theta.abs() < FRAC_PI_2) {
        return Err(Error::InvalidParameter(format!("steering angle {theta} must satisfy |theta| < pi/2")));
    }
    Ok(())
}

/// Everything a weight table depends on; equal keys mean interchangeable tables.
#[derive(Debug, Clone, PartialEq)]
pub struct QTableKey {
    pub geometry_key: [u8; 32],
    pub elements: usize,
    pub theta: f64,
    pub plan: BandPlan,
    pub duration: f64,
    pub n_s: usize,
    /// Hash of the folded-in matched filter spectrum, if any.
    pub mf_key: Option<[u8; 32]>,
}

impl QTableKey {
    pub fn new(g: &ArrayGeometry, theta: f64, plan: BandPlan, duration: f64, n_s: usize, h: Option<&[Complex64]>) -> Self {
        QTableKey {
            geometry_key: geometry_key(g, duration, n_s),
            elements: g.len(),
            theta,
            plan,
            duration,
            n_s,
            mf_key: h.map(spectrum_key),
        }
    }

    pub fn fingerprint(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"qtable-v1");
        h.update(self.geometry_key);
        h.update((self.elements as u64).to_le_bytes());
        h.update(self.theta.to_bits().to_le_bytes());
        self.plan.hash_into(&mut h);
        h.update(self.duration.to_bits().to_le_bytes());
        h.update((self.n_s as u64).to_le_bytes());
        match &self.mf_key {
            Some(k) => {
                h.update([1u8]);
                h.update(k);
            }
            None => h.update([0u8]),
        }
        h.finalize().into()
    }

    /// Differences from `other`, for collision reports.
    fn diff(&self, other: &QTableKey) -> String {
        let mut out = Vec::new();
        if self.geometry_key != other.geometry_key {
            out.push("geometry/window");
        }
        if self.elements != other.elements {
            out.push("element count");
        }
        if self.theta.to_bits() != other.theta.to_bits() {
            out.push("steering angle");
        }
        if self.plan != other.plan {
            out.push("band plan");
        }
        if self.duration.to_bits() != other.duration.to_bits() || self.n_s != other.n_s {
            out.push("acquisition window");
        }
        if self.mf_key != other.mf_key {
            out.push("matched filter");
        }
        format!("differs in {}", out.join(", "))
    }
}

/// Beamforming weights for one steering angle, stored as `complex64` in
/// `(k, m, n)` order with `k` over the beam band and `n` over `[-n1, n2]`.
///
/// The matched filter enters through `h[k - n]`, which depends on `k`, so a
/// folded table cannot be shared between bins: it takes `K * M * N_q`
/// entries, against `K * M * N_q` for `Q` plus `N_s` for `h` if kept apart.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub key: QTableKey,
    entries: Vec<Complex32>,
}

impl QTable {
    pub fn theta(&self) -> f64 {
        self.key.theta
    }

    pub fn plan(&self) -> BandPlan {
        self.key.plan
    }

    pub fn mf_integrated(&self) -> bool {
        self.key.mf_key.is_some()
    }

    pub fn fingerprint(&self) -> [u8; 32] {
        self.key.fingerprint()
    }

    pub fn entries(&self) -> &[Complex32] {
        &self.entries
    }

    pub fn entry_count(&self) -> usize {
        self.entries.len()
    }

    pub fn size_bytes(&self) -> usize {
        self.entries.len() * std::mem::size_of::<Complex32>()
    }

    fn index(&self, k: i64, m: usize, n: i64) -> usize {
        let p = &self.key.plan;
        let nq = p.nq();
        ((k - p.beam.0) as usize * self.key.elements + m) * nq + (n + p.n1 as i64) as usize
    }

    /// Weight for beam bin `k`, element `m`, offset `n in [-n1, n2]`.
    pub fn get(&self, k: i64, m: usize, n: i64) -> Complex64 {
        let v = self.entries[self.index(k, m, n)];
        Complex64::new(v.re as f64, v.im as f64)
    }

    /// Entries for one `(k, m)` pair, ordered `n = -n1 ..= n2`.
    pub fn weights(&self, k: i64, m: usize) -> &[Complex32] {
        let start = self.index(k, m, -(self.key.plan.n1 as i64));
        &self.entries[start..start + self.key.plan.nq()]
    }

    /// Sub-table for a plan whose beam band and window lie inside this one's
    /// (the channel band is taken from `plan`).
    pub fn restrict(&self, plan: BandPlan) -> Result<QTable> {
        let own = self.plan();
        if plan.beam.0 < own.beam.0 || plan.beam.1 > own.beam.1 || plan.n1 > own.n1 || plan.n2 > own.n2 {
            return Err(Error::InvalidParameter(format!(
                "plan {plan:?} is not contained in the table's plan {own:?}"
            )));
        }
        plan.validate(self.key.n_s)?;
        let mut entries = Vec::with_capacity(plan.beam_len() * self.key.elements * plan.nq());
        for k in plan.beam.0..=plan.beam.1 {
            for m in 0..self.key.elements {
                let start = self.index(k, m, -(plan.n1 as i64));
                entries.extend_from_slice(&self.entries[start..start + plan.nq()]);
            }
        }
        let mut key = self.key.clone();
        key.plan = plan;
        Ok(QTable { key, entries })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut bytes = encode_header(&self.key);
        bytes.reserve(8 * self.entries.len());
        for v in &self.entries {
            bytes.extend_from_slice(&v.re.to_le_bytes());
            bytes.extend_from_slice(&v.im.to_le_bytes());
        }
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<QTable> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let bad = |msg: String| Error::Format {
            what: "weight table",
            path: path.to_path_buf(),
            msg,
        };
        let key = decode_header(&bytes).map_err(bad)?;
        let payload = &bytes[QTABLE_HEADER_LEN..];
        let expected = key.plan.beam_len() * key.elements * key.plan.nq();
        if payload.len() != 8 * expected {
            return Err(bad(format!("expected {expected} entries, found {} bytes", payload.len())));
        }
        let entries = payload
            .chunks_exact(8)
            .map(|c| {
                Complex32::new(
                    f32::from_le_bytes(c[..4].try_into().unwrap()),
                    f32::from_le_bytes(c[4..].try_into().unwrap()),
                )
            })
            .collect();
        Ok(QTable { key, entries })
    }
}

const QTABLE_MAGIC: &[u8; 8] = b"FOCUSQT\0";
const QTABLE_VERSION: u32 = 1;

/// Weight table header, little-endian:
///
/// | offset | type | field |
/// |--------|------|-------|
/// | 0   | [u8; 8]  | magic `FOCUSQT\0` |
/// | 8   | u32      | version (1) |
/// | 12  | u32      | `M` |
/// | 16  | u32      | beam band length `K` |
/// | 20  | u32      | `N1` |
/// | 24  | u32      | `N2` |
/// | 28  | u32      | `N_s` |
/// | 32  | i64 x 4  | beam band lo, hi; channel band lo, hi |
/// | 64  | f64      | `theta` (rad) |
/// | 72  | f64      | `T` (s) |
/// | 80  | u32      | matched filter folded in (0/1) |
/// | 84  | [u8; 12] | reserved |
/// | 96  | [u8; 32] | geometry key |
/// | 128 | [u8; 32] | matched filter key (zero if not folded) |
/// | 160 | [u8; 32] | fingerprint |
pub const QTABLE_HEADER_LEN: usize = 192;

fn encode_header(key: &QTableKey) -> Vec<u8> {
    let p = &key.plan;
    let mut out = Vec::with_capacity(QTABLE_HEADER_LEN);
    out.extend_from_slice(QTABLE_MAGIC);
    for v in [
        QTABLE_VERSION,
        key.elements as u32,
        p.beam_len() as u32,
        p.n1 as u32,
        p.n2 as u32,
        key.n_s as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in [p.beam.0, p.beam.1, p.channel.0, p.channel.1] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&key.theta.to_le_bytes());
    out.extend_from_slice(&key.duration.to_le_bytes());
    out.extend_from_slice(&(key.mf_key.is_some() as u32).to_le_bytes());
    out.resize(96, 0);
    out.extend_from_slice(&key.geometry_key);
    out.extend_from_slice(&key.mf_key.unwrap_or([0; 32]));
    out.extend_from_slice(&key.fingerprint());
    out
}

fn decode_header(b: &[u8]) -> std::result::Result<QTableKey, String> {
    if b.len() < QTABLE_HEADER_LEN {
        return Err("file shorter than the header".into());
    }
    if &b[..8] != QTABLE_MAGIC {
        return Err("bad magic".into());
    }
    let u32_at = |o: usize| u32::from_le_bytes(b[o..o + 4].try_into().unwrap());
    let i64_at = |o: usize| i64::from_le_bytes(b[o..o + 8].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(b[o..o + 8].try_into().unwrap());
    let hash_at = |o: usize| -> [u8; 32] { b[o..o + 32].try_into().unwrap() };
    if u32_at(8) != QTABLE_VERSION {
        return Err(format!("unsupported version {}", u32_at(8)));
    }
    let plan = BandPlan {
        beam: (i64_at(32), i64_at(40)),
        channel: (i64_at(48), i64_at(56)),
        n1: u32_at(20) as usize,
        n2: u32_at(24) as usize,
    };
    if plan.beam_len() != u32_at(16) as usize {
        return Err("beam band length disagrees with its bounds".into());
    }
    let key = QTableKey {
        geometry_key: hash_at(96),
        elements: u32_at(12) as usize,
        theta: f64_at(64),
        plan,
        duration: f64_at(72),
        n_s: u32_at(28) as usize,
        mf_key: (u32_at(80) != 0).then(|| hash_at(128)),
    };
    if key.fingerprint() != hash_at(160) {
        return Err("stored fingerprint does not match header fields".into());
    }
    Ok(key)
}

/// Computes `Q_{k,m;theta}[n]` for every beam bin `k`, element `m` and
/// `n in [-n1, n2]` as the DFT of the distortion function sampled on the
/// `N_s`-point grid. Deterministic regardless of thread count.
pub fn build_q_table(g: &ArrayGeometry, theta: f64, plan: BandPlan, duration: f64, n_s: usize) -> Result<QTable> {
    check_angle(theta)?;
    plan.validate(n_s)?;
    if !(duration > 0.0) {
        return Err(Error::InvalidParameter("acquisition window must be > 0".into()));
    }
    let parts: Vec<(Vec<f64>, Vec<f64>)> = (0..g.len())
        .map(|m| distortion_parts(g.gamma(m), theta, duration, n_s, m))
        .collect::<Result<_>>()?;
    let nq = plan.nq();
    let ks: Vec<i64> = (plan.beam.0..=plan.beam.1).collect();
    let rows: Vec<Vec<Complex32>> = ks
        .par_iter()
        .map(|&k| {
            let mut row = Vec::with_capacity(g.len() * nq);
            for (jac, phase) in &parts {
                let full = q_from_parts(jac, phase, k, duration);
                for n in -(plan.n1 as i64)..=plan.n2 as i64 {
                    let v = full[n.rem_euclid(n_s as i64) as usize];
                    row.push(Complex32::new(v.re as f32, v.im as f32));
                }
            }
            row
        })
        .collect();
    let entries = rows.concat();
    if entries.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::NonFinite("weight table construction".into()));
    }
    Ok(QTable {
        key: QTableKey::new(g, theta, plan, duration, n_s, None),
        entries,
    })
}

/// Looks up `h[i]`: the spectrum is periodic when it has `N_s` entries,
/// otherwise only `0 <= i < len` is available.
fn h_at(h: &[Complex64], i: i64, n_s: usize) -> Result<Complex64> {
    if h.len() == n_s {
        return Ok(h[i.rem_euclid(n_s as i64) as usize]);
    }
    if i >= 0 && (i as usize) < h.len() {
        Ok(h[i as usize])
    } else {
        Err(Error::OutOfBand {
            index: i,
            context: format!("matched filter spectrum has {} of {n_s} bins", h.len()),
        })
    }
}

/// Folds the matched filter into the weights: `Q~[k,m,n] = h[k-n] Q[k,m,n]`.
pub fn integrate_mf(q: QTable, h: &[Complex64]) -> Result<QTable> {
    if q.mf_integrated() {
        return Err(Error::InvalidInput("matched filter already folded into this table".into()));
    }
    let plan = q.plan();
    let n_s = q.key.n_s;
    let nq = plan.nq();
    let per_k = q.key.elements * nq;
    let mut entries = q.entries;
    let mut hk = vec![Complex64::new(0.0, 0.0); nq];
    for (ki, chunk) in entries.chunks_mut(per_k.max(1)).enumerate() {
        let k = plan.beam.0 + ki as i64;
        for (i, n) in (-(plan.n1 as i64)..=plan.n2 as i64).enumerate() {
            hk[i] = h_at(h, k - n, n_s)?;
        }
        for (j, v) in chunk.iter_mut().enumerate() {
            let w = hk[j % nq] * Complex64::new(v.re as f64, v.im as f64);
            *v = Complex32::new(w.re as f32, w.im as f32);
        }
    }
    let mut key = q.key;
    key.mf_key = Some(spectrum_key(h));
    Ok(QTable { key, entries })
}

/// Beam coefficients over the table's beam band.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamSpectrum {
    pub coeffs: Vec<Complex64>,
    pub band: (i64, i64),
    pub theta: f64,
    pub duration: f64,
    /// Complex multiplications actually performed.
    pub multiplications: u64,
}

impl BeamSpectrum {
    /// Number of coefficients `K`.
    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }
}

/// `c_CE[k] = 1/M sum_m sum_n c_m[k-n] Q~[k,m,n]` over the beam band.
pub fn focus_beamform(s: &SpectrumSet, q: &QTable) -> Result<BeamSpectrum> {
    if !q.mf_integrated() {
        return Err(Error::InvalidInput("weight table has no matched filter folded in".into()));
    }
    if s.geometry_key != q.key.geometry_key || s.elements != q.key.elements || s.n_s != q.key.n_s {
        return Err(Error::StaleLut(format!(
            "table {} was built for a different array or acquisition window",
            hex::encode(&q.fingerprint()[..8])
        )));
    }
    let plan = q.plan();
    let elements = s.elements;
    let scale = 1.0 / elements as f64;
    let n1 = plan.n1 as i64;
    let results: Vec<(Complex64, u64)> = (plan.beam.0..=plan.beam.1)
        .into_par_iter()
        .map(|k| {
            let mut acc = Complex64::new(0.0, 0.0);
            let mut mults = 0u64;
            // c_m[k - n] is in band for n in [k - band.1, k - band.0]
            let n_lo = (k - s.band.1).max(-n1);
            let n_hi = (k - s.band.0).min(plan.n2 as i64);
            if n_lo > n_hi {
                return (acc, 0);
            }
            for m in 0..elements {
                let w = q.weights(k, m);
                let row = s.row(m);
                for n in n_lo..=n_hi {
                    let c = row[(k - n - s.band.0) as usize];
                    let wv = w[(n + n1) as usize];
                    acc += c * Complex64::new(wv.re as f64, wv.im as f64);
                }
                mults += (n_hi - n_lo + 1) as u64;
            }
            (acc * scale, mults)
        })
        .collect();
    let multiplications = results.iter().map(|r| r.1).sum();
    let coeffs: Vec<Complex64> = results.into_iter().map(|r| r.0).collect();
    if coeffs.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(Error::NonFinite("frequency-domain beamforming".into()));
    }
    Ok(BeamSpectrum {
        coeffs,
        band: plan.beam,
        theta: q.theta(),
        duration: s.duration,
        multiplications,
    })
}

/// Real scan line from non-negative beam coefficients via a Hermitian inverse
/// DFT; bins outside the band are zero.
pub fn reconstruct_time(b: &BeamSpectrum, n_s: usize) -> Result<BeamLine> {
    if b.coeffs.len() > n_s || b.band.0 < 0 || 2 * b.band.1 > n_s as i64 {
        return Err(Error::InvalidParameter(format!(
            "beam band {:?} does not fit N_s = {n_s}",
            b.band
        )));
    }
    let mut full = vec![Complex64::new(0.0, 0.0); n_s];
    for (i, c) in b.coeffs.iter().enumerate() {
        let k = (b.band.0 + i as i64) as usize;
        if k == 0 || 2 * k == n_s {
            full[k] += Complex64::new(c.re, 0.0);
        } else {
            full[k] += c;
            full[n_s - k] += c.conj();
        }
    }
    ifft_in_place(&mut full);
    let scale = n_s as f64;
    Ok(BeamLine {
        theta: b.theta,
        samples: full.iter().map(|v| v.re * scale).collect(),
        fs: n_s as f64 / b.duration,
        tag: LineTag::Focus,
    })
}

/// Builds the folded table for one angle and reconstructs the scan line.
pub fn focus_line(f: &ChannelFrame, h: &[Complex64], plan: BandPlan, theta: f64) -> Result<BeamLine> {
    let spectra = channel_spectra(f, plan.channel)?;
    let q = build_q_table(&f.geometry, theta, plan, f.duration(), f.samples())?;
    let q = integrate_mf(q, h)?;
    reconstruct_time(&focus_beamform(&spectra, &q)?, f.samples())
}

/// Share of `sum_n |Q[n]|^2` (full-length, `n` modulo `N_s`) inside `[-n1, n2]`.
pub fn window_energy_fraction(full: &[Complex64], n1: usize, n2: usize) -> f64 {
    let n = full.len() as i64;
    let total: f64 = full.iter().map(|v| v.norm_sqr()).sum();
    if total == 0.0 {
        return 1.0;
    }
    let inside: f64 = (-(n1 as i64)..=n2 as i64)
        .map(|i| full[i.rem_euclid(n) as usize].norm_sqr())
        .sum();
    inside / total
}

/// Worst-case energy retention of a truncation window over a beam band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayReport {
    pub min_fraction: f64,
    pub worst_k: i64,
    pub worst_m: usize,
    /// `(k, m)` pairs whose largest coefficient falls outside the window.
    pub peaks_outside: usize,
    pub pairs: usize,
}

/// Evaluates how much of `Q` (or `Q~` when `h` is given) lies inside the
/// plan's window for every `(k, m)` in the beam band.
pub fn q_decay(
    g: &ArrayGeometry,
    theta: f64,
    plan: BandPlan,
    duration: f64,
    n_s: usize,
    h: Option<&[Complex64]>,
) -> Result<DecayReport> {
    check_angle(theta)?;
    let parts: Vec<(Vec<f64>, Vec<f64>)> = (0..g.len())
        .map(|m| distortion_parts(g.gamma(m), theta, duration, n_s, m))
        .collect::<Result<_>>()?;
    let n1 = plan.n1 as i64;
    let n2 = plan.n2 as i64;
    let per_k: Vec<Result<Vec<(f64, bool)>>> = (plan.beam.0..=plan.beam.1)
        .into_par_iter()
        .map(|k| {
            parts
                .iter()
                .map(|(jac, phase)| {
                    let mut full = q_from_parts(jac, phase, k, duration);
                    if let Some(h) = h {
                        for (i, v) in full.iter_mut().enumerate() {
                            *v *= h_at(h, k - i as i64, n_s)?;
                        }
                    }
                    let frac = window_energy_fraction(&full, plan.n1, plan.n2);
                    let peak = crate::dsp::argmax(&full.iter().map(|v| v.norm()).collect::<Vec<_>>()).unwrap_or(0) as i64;
                    let signed = if peak > n_s as i64 / 2 { peak - n_s as i64 } else { peak };
                    Ok((frac, signed < -n1 || signed > n2))
                })
                .collect()
        })
        .collect();
    let mut report = DecayReport {
        min_fraction: 1.0,
        worst_k: plan.beam.0,
        worst_m: 0,
        peaks_outside: 0,
        pairs: 0,
    };
    for (ki, row) in per_k.into_iter().enumerate() {
        for (m, (frac, outside)) in row?.into_iter().enumerate() {
            report.pairs += 1;
            report.peaks_outside += outside as usize;
            if frac < report.min_fraction {
                report.min_fraction = frac;
                report.worst_k = plan.beam.0 + ki as i64;
                report.worst_m = m;
            }
        }
    }
    Ok(report)
}

/// On-disk cache of weight tables named by fingerprint.
#[derive(Debug, Clone)]
pub struct LutCache {
    dir: PathBuf,
}

impl LutCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<LutCache> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(LutCache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, key: &QTableKey) -> PathBuf {
        self.dir.join(format!("{}.qtab", hex::encode(key.fingerprint())))
    }

    /// Loads the table for `key` if cached. A cached file whose parameters
    /// differ from `key` is a hard error, never a silent reuse.
    pub fn load(&self, key: &QTableKey) -> Result<Option<QTable>> {
        let path = self.path_for(key);
        if !path.exists() {
            return Ok(None);
        }
        let table = QTable::read(&path)?;
        if &table.key != key {
            return Err(Error::FingerprintCollision {
                reason: table.key.diff(key),
                path,
            });
        }
        Ok(Some(table))
    }

    pub fn store(&self, table: &QTable) -> Result<PathBuf> {
        let path = self.path_for(&table.key);
        let tmp = path.with_extension("qtab.tmp");
        table.write(&tmp)?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Returns the cached table or builds and stores it; the flag tells
    /// whether the cache was hit.
    pub fn get_or_build<F>(&self, key: &QTableKey, rebuild: bool, build: F) -> Result<(QTable, bool)>
    where
        F: FnOnce() -> Result<QTable>,
    {
        if !rebuild {
            if let Some(t) = self.load(key)? {
                return Ok((t, true));
            }
        }
        let table = build()?;
        if &table.key != key {
            return Err(Error::InvalidInput("built table does not match the requested key".into()));
        }
        self.store(&table)?;
        Ok((table, false))
    }
}
