//! Array geometry, point-scatterer phantoms, propagation delays and channel
//! data synthesis.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::waveform::CodedPulse;

pub const DEFAULT_SOUND_SPEED: f64 = 1540.0;

/// Linear receive array. Offsets are signed distances from the reference
/// element along the array axis.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    offsets: Vec<f64>,
    reference: usize,
    sound_speed: f64,
}

impl ArrayGeometry {
    pub fn new(offsets: Vec<f64>, reference: usize, sound_speed: f64) -> Result<Self> {
        if offsets.is_empty() {
            return Err(Error::InvalidParameter("array needs at least one element".into()));
        }
        if reference >= offsets.len() || offsets[reference] != 0.0 {
            return Err(Error::InvalidParameter("reference element must have zero offset".into()));
        }
        if !(sound_speed > 0.0) || !sound_speed.is_finite() {
            return Err(Error::InvalidParameter(format!("speed of sound must be > 0 (got {sound_speed})")));
        }
        if offsets.iter().any(|d| !d.is_finite()) {
            return Err(Error::InvalidParameter("element offsets must be finite".into()));
        }
        let increasing = offsets.windows(2).all(|w| w[1] > w[0]);
        let decreasing = offsets.windows(2).all(|w| w[1] < w[0]);
        if !(increasing || decreasing) {
            return Err(Error::InvalidParameter("element offsets must be strictly monotone".into()));
        }
        Ok(ArrayGeometry {
            offsets,
            reference,
            sound_speed,
        })
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn offset(&self, m: usize) -> f64 {
        self.offsets[m]
    }

    /// Zero-based index of the reference element.
    pub fn reference(&self) -> usize {
        self.reference
    }

    pub fn sound_speed(&self) -> f64 {
        self.sound_speed
    }

    /// `gamma_m = delta_m / c` (s).
    pub fn gamma(&self, m: usize) -> f64 {
        self.offsets[m] / self.sound_speed
    }

    /// Stable byte encoding used for look-up-table fingerprints.
    pub fn fingerprint_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.offsets.len());
        out.extend_from_slice(&(self.offsets.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.reference as u64).to_le_bytes());
        out.extend_from_slice(&self.sound_speed.to_bits().to_le_bytes());
        for d in &self.offsets {
            out.extend_from_slice(&d.to_bits().to_le_bytes());
        }
        out
    }
}

/// Uniform linear array of `count` elements, centred so that element
/// `ceil(count / 2)` (one-based) is the reference.
pub fn uniform_linear_array(count: usize, pitch: f64, sound_speed: f64) -> Result<ArrayGeometry> {
    if count == 0 {
        return Err(Error::InvalidParameter("element count must be >= 1".into()));
    }
    if !(pitch > 0.0) {
        return Err(Error::InvalidParameter(format!("pitch must be > 0 (got {pitch})")));
    }
    let reference = count.div_ceil(2) - 1;
    let offsets = (0..count)
        .map(|i| (i as f64 - reference as f64) * pitch)
        .collect();
    ArrayGeometry::new(offsets, reference, sound_speed)
}

/// Arrival time at element `m` of the echo from the point reached at time `t`
/// by a pulse transmitted at `t = 0` in direction `theta`.
pub fn arrival_time(g: &ArrayGeometry, m: usize, t: f64, theta: f64) -> f64 {
    let c = g.sound_speed();
    let ct = c * t;
    let dx = g.offset(m) - ct * theta.sin();
    let dz = ct * theta.cos();
    t + (dz * dz + dx * dx).sqrt() / c
}

/// Dynamic receive delay `tau_m(t; theta)` that aligns element `m` with the
/// reference element, `t` being the beam (round-trip) time.
pub fn delay_curve(g: &ArrayGeometry, m: usize, t: f64, theta: f64) -> f64 {
    delay_for_gamma(g.gamma(m), t, theta)
}

pub(crate) fn delay_for_gamma(gamma: f64, t: f64, theta: f64) -> f64 {
    let disc = t * t - 4.0 * gamma * t * theta.sin() + 4.0 * gamma * gamma;
    // (t - 2 gamma sin)^2 + 4 gamma^2 cos^2 >= 0
    debug_assert!(disc >= -1e-30, "negative discriminant {disc}");
    0.5 * (t + disc.max(0.0).sqrt())
}

/// Beam time `t` at which `tau(t) = x`; valid for `x >= |gamma|`.
pub fn inverse_delay(gamma: f64, x: f64, theta: f64) -> f64 {
    (x * x - gamma * gamma) / (x - gamma * theta.sin())
}

/// A point reflector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scatterer {
    /// Distance from the array centre (m).
    pub range: f64,
    /// Direction (rad).
    pub theta: f64,
    pub amplitude: f64,
    /// Carrier downshift of the echo (Hz).
    pub downshift: f64,
}

impl Scatterer {
    pub fn new(range: f64, theta: f64, amplitude: f64) -> Self {
        Scatterer {
            range,
            theta,
            amplitude,
            downshift: 0.0,
        }
    }

    /// One-way travel time `r / c`.
    pub fn one_way_time(&self, c: f64) -> f64 {
        self.range / c
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Phantom {
    pub scatterers: Vec<Scatterer>,
}

impl Phantom {
    pub fn new(scatterers: Vec<Scatterer>) -> Self {
        Phantom { scatterers }
    }

    /// Parses one scatterer per line: `r_m theta_rad alpha f_shift_hz`.
    /// Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> std::result::Result<Phantom, (usize, String)> {
        let mut scatterers = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            scatterers.push(parse_scatterer(line).map_err(|msg| (i + 1, msg))?);
        }
        Ok(Phantom { scatterers })
    }

    pub fn from_file(path: &Path) -> Result<Phantom> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Phantom::parse(&text).map_err(|(line, msg)| Error::Format {
            what: "phantom",
            path: path.to_path_buf(),
            msg: format!("line {line}: {msg}"),
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# r_m theta_rad alpha f_shift_hz\n");
        for s in &self.scatterers {
            out.push_str(&format!("{} {} {} {}\n", s.range, s.theta, s.amplitude, s.downshift));
        }
        out
    }
}

pub(crate) fn parse_scatterer(line: &str) -> std::result::Result<Scatterer, String> {
    let vals: Vec<f64> = line
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| format!("not a number: {t:?}")))
        .collect::<std::result::Result<_, _>>()?;
    if vals.len() != 4 {
        return Err(format!("expected 4 columns (r theta alpha f_shift), got {}", vals.len()));
    }
    let s = Scatterer {
        range: vals[0],
        theta: vals[1],
        amplitude: vals[2],
        downshift: vals[3],
    };
    if !(s.range > 0.0) || !s.range.is_finite() {
        return Err(format!("range must be > 0 (got {})", s.range));
    }
    if !s.amplitude.is_finite() || !s.theta.is_finite() {
        return Err("amplitude and direction must be finite".into());
    }
    if !(s.downshift >= 0.0) {
        return Err(format!("frequency shift must be >= 0 (got {})", s.downshift));
    }
    Ok(s)
}

/// Per-element received samples, element-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelFrame {
    data: Vec<f64>,
    elements: usize,
    samples: usize,
    fs: f64,
    duration: f64,
    pub geometry: ArrayGeometry,
    pub warnings: Vec<String>,
}

impl ChannelFrame {
    /// Wraps existing data; `data.len()` must equal `geometry.len() * round(T fs)`.
    pub fn from_data(geometry: ArrayGeometry, fs: f64, duration: f64, data: Vec<f64>) -> Result<Self> {
        let samples = acquisition_samples(fs, duration)?;
        if data.len() != samples * geometry.len() {
            return Err(Error::InvalidInput(format!(
                "expected {} x {} samples, got {}",
                geometry.len(),
                samples,
                data.len()
            )));
        }
        Ok(ChannelFrame {
            data,
            elements: geometry.len(),
            samples,
            fs,
            duration,
            geometry,
            warnings: Vec::new(),
        })
    }

    pub fn zeros(geometry: ArrayGeometry, fs: f64, duration: f64) -> Result<Self> {
        let samples = acquisition_samples(fs, duration)?;
        ChannelFrame::from_data(geometry.clone(), fs, duration, vec![0.0; samples * geometry.len()])
    }

    pub fn elements(&self) -> usize {
        self.elements
    }

    /// `N_s`.
    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    /// Acquisition window `T` (s).
    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn channel(&self, m: usize) -> &[f64] {
        &self.data[m * self.samples..(m + 1) * self.samples]
    }

    pub fn channel_mut(&mut self, m: usize) -> &mut [f64] {
        &mut self.data[m * self.samples..(m + 1) * self.samples]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channels(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.samples.max(1))
    }

    /// Returns a frame whose channels are `f(channel)`.
    pub fn map_channels<F>(&self, f: F) -> ChannelFrame
    where
        F: Fn(&[f64]) -> Vec<f64> + Sync,
    {
        let rows: Vec<Vec<f64>> = (0..self.elements).into_par_iter().map(|m| f(self.channel(m))).collect();
        let mut out = self.clone();
        for (m, row) in rows.into_iter().enumerate() {
            out.channel_mut(m).copy_from_slice(&row[..self.samples]);
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        RawContainer {
            tag: 0,
            rows: self.elements,
            samples: self.samples,
            fs: self.fs,
            duration: self.duration,
            theta: 0.0,
            data: self.data.iter().map(|&v| v as f32).collect(),
        }
        .write(path)
    }

    /// Loads a frame written by [`ChannelFrame::write`]; geometry is not stored
    /// in the file and must be supplied.
    pub fn read(path: &Path, geometry: ArrayGeometry) -> Result<Self> {
        let raw = RawContainer::read(path)?;
        if raw.rows != geometry.len() {
            return Err(Error::InvalidInput(format!(
                "{} has {} channels but the geometry has {} elements",
                path.display(),
                raw.rows,
                geometry.len()
            )));
        }
        let data = raw.data.iter().map(|&v| v as f64).collect();
        ChannelFrame::from_data(geometry, raw.fs, raw.duration, data)
    }
}

fn acquisition_samples(fs: f64, duration: f64) -> Result<usize> {
    if !(fs > 0.0) || !(duration > 0.0) {
        return Err(Error::InvalidParameter("sample rate and acquisition window must be > 0".into()));
    }
    let n = (duration * fs).round() as usize;
    if n == 0 {
        return Err(Error::InvalidParameter("acquisition window shorter than one sample".into()));
    }
    Ok(n)
}

/// Synthesizes the received echoes of `phantom` plus white Gaussian noise.
///
/// Each echo is the continuous pulse (carrier lowered by the scatterer's
/// downshift) evaluated at the exact sub-sample arrival time, so onsets are
/// not quantized to the sample grid. Noise for element `m` is drawn from an
/// independent stream of a generator seeded with `seed`, which keeps the
/// output independent of the number of worker threads.
pub fn synthesize_channels(
    g: &ArrayGeometry,
    phantom: &Phantom,
    pulse: &CodedPulse,
    fs: f64,
    duration: f64,
    noise_rms: f64,
    seed: u64,
) -> Result<ChannelFrame> {
    for s in &phantom.scatterers {
        if !(s.downshift >= 0.0 && s.downshift < pulse.bandwidth) {
            return Err(Error::InvalidParameter(format!(
                "scatterer downshift {} Hz must lie in [0, B)",
                s.downshift
            )));
        }
        if !(s.range > 0.0) {
            return Err(Error::InvalidParameter("scatterer range must be > 0".into()));
        }
    }
    if !(noise_rms >= 0.0) {
        return Err(Error::InvalidParameter("noise RMS must be >= 0".into()));
    }
    let mut frame = ChannelFrame::zeros(g.clone(), fs, duration)?;
    let n = frame.samples();
    let c = g.sound_speed();

    let mut warnings = Vec::new();
    for (l, s) in phantom.scatterers.iter().enumerate() {
        let t1 = s.one_way_time(c);
        let latest = (0..g.len())
            .map(|m| arrival_time(g, m, t1, s.theta))
            .fold(0.0, f64::max);
        if latest + pulse.duration > duration {
            warnings.push(format!(
                "scatterer {l} echo ends at {:.3e} s, beyond the {:.3e} s window; truncated",
                latest + pulse.duration,
                duration
            ));
        }
    }

    let normal = if noise_rms > 0.0 {
        Some(Normal::new(0.0, noise_rms).map_err(|e| Error::InvalidParameter(e.to_string()))?)
    } else {
        None
    };

    frame
        .data
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(m, row)| {
            for s in &phantom.scatterers {
                let onset = arrival_time(g, m, s.one_way_time(c), s.theta);
                let first = (onset * fs).ceil().max(0.0) as usize;
                let last = (((onset + pulse.duration) * fs).ceil() as usize).min(n);
                for (j, v) in row.iter_mut().enumerate().take(last).skip(first) {
                    *v += s.amplitude * pulse.value_at(j as f64 / fs - onset, s.downshift);
                }
            }
            if let Some(dist) = normal {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(m as u64);
                for v in row.iter_mut() {
                    *v += dist.sample(&mut rng);
                }
            }
        });
    frame.warnings = warnings;
    Ok(frame)
}

const CONTAINER_MAGIC: &[u8; 8] = b"FOCUSRF\0";
const CONTAINER_VERSION: u32 = 1;
pub(crate) const CONTAINER_HEADER_LEN: usize = 64;

/// Flat binary container shared by channel frames and beamformed lines:
/// a 64-byte little-endian header followed by `rows * samples` `f32` values,
/// row-major.
///
/// | offset | type | field                                   |
/// |--------|------|-----------------------------------------|
/// | 0      | [u8; 8] | magic `FOCUSRF\0`                    |
/// | 8      | u32  | version (1)                             |
/// | 12     | u32  | rows (`M`, or 1 for a single line)      |
/// | 16     | u32  | samples per row (`N_s`)                 |
/// | 20     | u32  | tag (0 channel data, 1 pre, 2 post, 3 focus, 4 uncoded) |
/// | 24     | f64  | sample rate (Hz)                        |
/// | 32     | f64  | acquisition window `T` (s)              |
/// | 40     | f64  | steering direction (rad), 0 for channel data |
/// | 48     | 16 bytes | reserved, zero                      |
#[derive(Debug, Clone, PartialEq)]
pub struct RawContainer {
    pub tag: u32,
    pub rows: usize,
    pub samples: usize,
    pub fs: f64,
    pub duration: f64,
    pub theta: f64,
    pub data: Vec<f32>,
}

impl RawContainer {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(CONTAINER_HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(CONTAINER_MAGIC);
        out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.samples as u32).to_le_bytes());
        out.extend_from_slice(&self.tag.to_le_bytes());
        out.extend_from_slice(&self.fs.to_le_bytes());
        out.extend_from_slice(&self.duration.to_le_bytes());
        out.extend_from_slice(&self.theta.to_le_bytes());
        out.resize(CONTAINER_HEADER_LEN, 0);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < CONTAINER_HEADER_LEN {
            return Err("file shorter than the 64-byte header".into());
        }
        if &bytes[..8] != CONTAINER_MAGIC {
            return Err("bad magic".into());
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let version = u32_at(8);
        if version != CONTAINER_VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let rows = u32_at(12) as usize;
        let samples = u32_at(16) as usize;
        let payload = &bytes[CONTAINER_HEADER_LEN..];
        if payload.len() != rows * samples * 4 {
            return Err(format!(
                "payload holds {} bytes, header announces {} x {} floats",
                payload.len(),
                rows,
                samples
            ));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(RawContainer {
            tag: u32_at(20),
            rows,
            samples,
            fs: f64_at(24),
            duration: f64_at(32),
            theta: f64_at(40),
            data,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        RawContainer::from_bytes(&bytes).map_err(|msg| Error::Format {
            what: "sample container",
            path: path.to_path_buf(),
            msg,
        })
    }
}
