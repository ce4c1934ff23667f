//! B-mode image formation: envelope detection, log compression and
//! polar-to-Cartesian scan conversion.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::dsp;
use crate::error::{Error, Result};
use crate::metrics::write_file;
use crate::tdbf::BeamLine;

pub const DEFAULT_DYNAMIC_RANGE_DB: f64 = 60.0;

/// Magnitude of the analytic signal of a scan line.
pub fn envelope(line: &BeamLine) -> Vec<f64> {
    dsp::envelope(&line.samples)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interpolation {
    #[default]
    Bilinear,
    /// Nearest sample and nearest line; bit-exact across platforms.
    Nearest,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanOptions {
    pub dynamic_range_db: f64,
    pub pitch_mm: f64,
    pub sound_speed: f64,
    pub interpolation: Interpolation,
    /// Envelope value mapped to 0 dB; the brightest sample when `None`.
    pub reference: Option<f64>,
}

impl Default for ScanOptions {
    fn default() -> Self {
        ScanOptions {
            dynamic_range_db: DEFAULT_DYNAMIC_RANGE_DB,
            pitch_mm: 0.1,
            sound_speed: crate::scene::DEFAULT_SOUND_SPEED,
            interpolation: Interpolation::Bilinear,
            reference: None,
        }
    }
}

/// Sector image on a Cartesian grid; `x` lateral, `z` depth, both in mm.
/// Pixel `(row, col)` is centred at `(x0 + col * pitch, row * pitch)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BModeImage {
    /// Row-major dB values in `[-DR, 0]`.
    pub pixels: Vec<f64>,
    pub width: usize,
    pub height: usize,
    pub dynamic_range_db: f64,
    pub pitch_mm: f64,
    pub x0_mm: f64,
    pub depth_mm: f64,
    pub sector: (f64, f64),
}

impl BModeImage {
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn x_mm(&self, col: usize) -> f64 {
        self.x0_mm + col as f64 * self.pitch_mm
    }

    pub fn z_mm(&self, row: usize) -> f64 {
        row as f64 * self.pitch_mm
    }

    /// `(row, col)` of the brightest pixel (first in raster order).
    pub fn brightest(&self) -> (usize, usize) {
        let i = dsp::argmax(&self.pixels).unwrap_or(0);
        (i / self.width, i % self.width)
    }

    /// Row nearest depth `z_mm`, converted back to linear amplitude.
    pub fn row_amplitude(&self, z_mm: f64) -> Vec<f64> {
        let row = ((z_mm / self.pitch_mm).round() as usize).min(self.height - 1);
        self.pixels[row * self.width..(row + 1) * self.width]
            .iter()
            .map(|&d| 10f64.powf(d / 20.0))
            .collect()
    }

    /// Half-power width (mm) of the brightest feature on the row at `z_mm`.
    pub fn row_width_mm(&self, z_mm: f64) -> Option<f64> {
        dsp::half_power_width(&self.row_amplitude(z_mm)).map(|w| w * self.pitch_mm)
    }

    /// 8-bit binary graymap, `[-DR, 0]` dB mapped linearly onto `[0, 255]`.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        let dr = self.dynamic_range_db;
        out.extend(
            self.pixels
                .iter()
                .map(|&d| (((d + dr) / dr) * 255.0).round().clamp(0.0, 255.0) as u8),
        );
        out
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_pgm())
    }

    /// Raw dB values, one image row per line.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.pixels.len() * 9);
        for row in self.pixels.chunks(self.width) {
            for (j, v) in row.iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{v:.4}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_csv().as_bytes())
    }
}

/// Log-compresses a fan of scan lines and resamples it onto a Cartesian grid.
pub fn scan_convert(lines: &[BeamLine], opts: &ScanOptions) -> Result<BModeImage> {
    if lines.len() < 2 {
        return Err(Error::InvalidInput("scan conversion needs at least two lines".into()));
    }
    if lines.windows(2).any(|w| !(w[1].theta > w[0].theta)) {
        return Err(Error::InvalidInput("scan-line angles must be strictly increasing".into()));
    }
    let fs = lines[0].fs;
    let n = lines[0].len();
    if lines.iter().any(|l| l.fs != fs || l.len() != n) || n < 2 {
        return Err(Error::InvalidInput("scan lines must share sample rate and length".into()));
    }
    if !(opts.dynamic_range_db > 0.0) || !(opts.pitch_mm > 0.0) {
        return Err(Error::InvalidParameter("dynamic range and pixel pitch must be > 0".into()));
    }
    let dr = opts.dynamic_range_db;
    let envs: Vec<Vec<f64>> = lines.par_iter().map(envelope).collect();
    let reference = match opts.reference {
        Some(r) => r,
        None => envs.iter().flatten().cloned().fold(0.0, f64::max),
    };
    let logs: Vec<Vec<f64>> = envs
        .iter()
        .map(|e| {
            e.iter()
                .map(|&v| {
                    if reference > 0.0 && v > 0.0 {
                        (20.0 * (v / reference).log10()).clamp(-dr, 0.0)
                    } else {
                        -dr
                    }
                })
                .collect()
        })
        .collect();

    let thetas: Vec<f64> = lines.iter().map(|l| l.theta).collect();
    let (t0, t1) = (thetas[0], thetas[thetas.len() - 1]);
    // range (mm) of sample i: c * (i / fs) / 2
    let mm_per_sample = opts.sound_speed / (2.0 * fs) * 1e3;
    let r_max = (n - 1) as f64 * mm_per_sample;
    let x_lo = r_max * t0.sin().min(0.0);
    let x_hi = r_max * t1.sin().max(0.0);
    let p = opts.pitch_mm;
    let width = ((x_hi - x_lo) / p).floor() as usize + 1;
    let height = (r_max / p).floor() as usize + 1;

    let pixels: Vec<f64> = (0..height * width)
        .into_par_iter()
        .with_min_len(1024)
        .map(|idx| {
            let (row, col) = (idx / width, idx % width);
            let x = x_lo + col as f64 * p;
            let z = row as f64 * p;
            let r = x.hypot(z);
            let th = x.atan2(z);
            if th < t0 || th > t1 || r > r_max {
                return -dr;
            }
            let s = r / mm_per_sample;
            // bracketing lines
            let j = thetas.partition_point(|&t| t <= th).clamp(1, thetas.len() - 1) - 1;
            let u = (th - thetas[j]) / (thetas[j + 1] - thetas[j]);
            match opts.interpolation {
                Interpolation::Nearest => {
                    let line = if u < 0.5 { j } else { j + 1 };
                    logs[line][(s.round() as usize).min(n - 1)]
                }
                Interpolation::Bilinear => {
                    let i = (s.floor() as usize).min(n - 2);
                    let v = s - i as f64;
                    let a = logs[j][i] * (1.0 - v) + logs[j][i + 1] * v;
                    let b = logs[j + 1][i] * (1.0 - v) + logs[j + 1][i + 1] * v;
                    // rounding can step just outside [-DR, 0]
                    (a * (1.0 - u) + b * u).clamp(-dr, 0.0)
                }
            }
        })
        .collect();

    Ok(BModeImage {
        pixels,
        width,
        height,
        dynamic_range_db: dr,
        pitch_mm: p,
        x0_mm: x_lo,
        depth_mm: r_max,
        sector: (t0, t1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tdbf::LineTag;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn line(theta: f64, samples: Vec<f64>) -> BeamLine {
        BeamLine {
            theta,
            samples,
            fs: 20e6,
            tag: LineTag::Focus,
        }
    }

    #[test]
    fn tone_envelope_is_flat() {
        let l = line(0.0, (0..2000).map(|i| 2.5 * (2.0 * PI * 0.05 * i as f64).sin()).collect());
        let e = envelope(&l);
        for v in &e[200..1800] {
            assert_relative_eq!(*v, 2.5, max_relative = 0.01);
        }
        for (v, s) in e.iter().zip(&l.samples) {
            assert!(*v >= s.abs() - 1e-9);
        }
    }

    #[test]
    fn uniform_lines_give_uniform_sector() {
        let lines: Vec<BeamLine> = (0..9).map(|i| line(-0.4 + 0.1 * i as f64, vec![1.0; 400])).collect();
        let img = scan_convert(&lines, &ScanOptions::default()).unwrap();
        let inside: Vec<f64> = img.pixels.iter().cloned().filter(|&v| v > -60.0).collect();
        assert!(!inside.is_empty());
        // envelope of a constant is flat away from the ends
        let interior_row = img.height / 2;
        let mid = img.at(interior_row, img.width / 2);
        assert!(mid > -1.0, "{mid}");
        assert!(img.pixels.iter().all(|v| (-60.0..=0.0).contains(v)));
        assert_eq!(img.at(0, 0), -60.0);
    }

    #[test]
    fn unsorted_angles_rejected() {
        let lines = vec![line(0.1, vec![1.0; 10]), line(0.0, vec![1.0; 10])];
        assert!(matches!(scan_convert(&lines, &ScanOptions::default()), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn bright_point_lands_at_polar_position() {
        let thetas: Vec<f64> = (0..21).map(|i| -0.3 + 0.03 * i as f64).collect();
        let target = 13;
        let sample = 500;
        let lines: Vec<BeamLine> = thetas
            .iter()
            .enumerate()
            .map(|(j, &t)| {
                let mut s = vec![0.0; 1000];
                if j == target {
                    for (i, v) in s.iter_mut().enumerate() {
                        let d = i as f64 - sample as f64;
                        *v = (-d * d / 50.0).exp() * (2.0 * PI * 0.2 * d).cos();
                    }
                }
                line(t, s)
            })
            .collect();
        for interp in [Interpolation::Bilinear, Interpolation::Nearest] {
            let opts = ScanOptions {
                pitch_mm: 0.2,
                interpolation: interp,
                ..ScanOptions::default()
            };
            let img = scan_convert(&lines, &opts).unwrap();
            let (row, col) = img.brightest();
            let r = sample as f64 * 1540.0 / (2.0 * 20e6) * 1e3;
            let (x, z) = (r * thetas[target].sin(), r * thetas[target].cos());
            assert!((img.x_mm(col) - x).abs() <= 0.2 + 1e-9, "{interp:?} x {} vs {x}", img.x_mm(col));
            assert!((img.z_mm(row) - z).abs() <= 0.2 + 1e-9, "{interp:?} z {} vs {z}", img.z_mm(row));
        }
    }

    #[test]
    fn pgm_mapping() {
        let img = BModeImage {
            pixels: vec![0.0, -60.0, -30.0, -61.0],
            width: 2,
            height: 2,
            dynamic_range_db: 60.0,
            pitch_mm: 1.0,
            x0_mm: 0.0,
            depth_mm: 1.0,
            sector: (0.0, 0.1),
        };
        let pgm = img.to_pgm();
        assert_eq!(&pgm[..11], b"P5\n2 2\n255\n");
        assert_eq!(&pgm[11..], &[255, 0, 128, 0]);
        assert_eq!(img.to_csv(), "0.0000,-60.0000\n-30.0000,-61.0000\n");
    }
}
