//! Time-domain dynamic-focus delay-and-sum beamforming.

use std::fmt;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scene::{delay_curve, inverse_delay, ArrayGeometry, ChannelFrame, RawContainer};
use crate::waveform::apply_matched_filter;

/// How a scan line was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LineTag {
    PreCompression,
    PostCompression,
    Focus,
    Uncoded,
}

impl LineTag {
    pub fn code(self) -> u32 {
        match self {
            LineTag::PreCompression => 1,
            LineTag::PostCompression => 2,
            LineTag::Focus => 3,
            LineTag::Uncoded => 4,
        }
    }

    pub fn from_code(code: u32) -> Option<LineTag> {
        match code {
            1 => Some(LineTag::PreCompression),
            2 => Some(LineTag::PostCompression),
            3 => Some(LineTag::Focus),
            4 => Some(LineTag::Uncoded),
            _ => None,
        }
    }
}

impl fmt::Display for LineTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LineTag::PreCompression => "pre",
            LineTag::PostCompression => "post",
            LineTag::Focus => "focus",
            LineTag::Uncoded => "uncoded",
        })
    }
}

/// One beamformed scan line.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamLine {
    pub theta: f64,
    pub samples: Vec<f64>,
    pub fs: f64,
    pub tag: LineTag,
}

impl BeamLine {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.fs
    }

    /// Persists the line in the channel-frame container with a single row.
    pub fn write(&self, path: &Path) -> Result<()> {
        RawContainer {
            tag: self.tag.code(),
            rows: 1,
            samples: self.samples.len(),
            fs: self.fs,
            duration: self.duration(),
            theta: self.theta,
            data: self.samples.iter().map(|&v| v as f32).collect(),
        }
        .write(path)
    }

    pub fn read(path: &Path) -> Result<BeamLine> {
        let raw = RawContainer::read(path)?;
        let bad = |msg: String| Error::Format {
            what: "beam line",
            path: path.to_path_buf(),
            msg,
        };
        if raw.rows != 1 {
            return Err(bad(format!("expected one row, found {}", raw.rows)));
        }
        let tag = LineTag::from_code(raw.tag).ok_or_else(|| bad(format!("unknown tag {}", raw.tag)))?;
        Ok(BeamLine {
            theta: raw.theta,
            samples: raw.data.iter().map(|&v| v as f64).collect(),
            fs: raw.fs,
            tag,
        })
    }
}

/// End of the valid beam support, `T_B = min_m tau_m^-1(T)`.
pub fn beam_support_end(g: &ArrayGeometry, duration: f64, theta: f64) -> f64 {
    (0..g.len())
        .map(|m| inverse_delay(g.gamma(m), duration, theta))
        .fold(f64::INFINITY, f64::min)
}

fn check_frame(f: &ChannelFrame, g: &ArrayGeometry) -> Result<()> {
    if f.elements() != g.len() {
        return Err(Error::InvalidInput(format!(
            "frame has {} channels but the geometry has {} elements",
            f.elements(),
            g.len()
        )));
    }
    Ok(())
}

/// Linear interpolation of `x` at fractional sample `pos`; zero outside the
/// recorded support.
#[inline]
fn interp(x: &[f64], pos: f64) -> f64 {
    if !(pos >= 0.0) {
        return 0.0;
    }
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < x.len() {
        x[i] + frac * (x[i + 1] - x[i])
    } else if i + 1 == x.len() && frac == 0.0 {
        x[i]
    } else {
        0.0
    }
}

/// Delay-and-sum with dynamic receive focusing along direction `theta`:
/// `Phi(t) = 1/M sum_m phi_m(tau_m(t))`, zero from `T_B` on.
pub fn beamform_time(f: &ChannelFrame, g: &ArrayGeometry, theta: f64) -> Result<BeamLine> {
    check_frame(f, g)?;
    let n = f.samples();
    let fs = f.fs();
    let end = beam_support_end(g, f.duration(), theta);
    let valid = (0..n).take_while(|&j| (j as f64 / fs) < end).count();
    let scale = 1.0 / g.len() as f64;

    let samples: Vec<f64> = (0..n)
        .into_par_iter()
        .with_min_len(256)
        .map(|j| {
            if j >= valid {
                return 0.0;
            }
            let t = j as f64 / fs;
            let sum: f64 = (0..g.len())
                .map(|m| interp(f.channel(m), delay_curve(g, m, t, theta) * fs))
                .sum();
            sum * scale
        })
        .collect();
    Ok(BeamLine {
        theta,
        samples,
        fs,
        tag: LineTag::Uncoded,
    })
}

/// Matched-filters every channel, then beamforms (the reference result).
pub fn beamform_pre_compression(f: &ChannelFrame, g: &ArrayGeometry, theta: f64, h: &[f64]) -> Result<BeamLine> {
    check_frame(f, g)?;
    let compressed = f.map_channels(|ch| apply_matched_filter(ch, h));
    let mut line = beamform_time(&compressed, g, theta)?;
    line.tag = LineTag::PreCompression;
    Ok(line)
}

/// Beamforms, then applies a single matched filter to the beam.
pub fn beamform_post_compression(f: &ChannelFrame, g: &ArrayGeometry, theta: f64, h: &[f64]) -> Result<BeamLine> {
    let mut line = beamform_time(f, g, theta)?;
    line.samples = apply_matched_filter(&line.samples, h);
    line.tag = LineTag::PostCompression;
    Ok(line)
}
