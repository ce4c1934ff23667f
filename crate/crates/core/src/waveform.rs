//! Linear FM excitation pulses, their matched filters, autocorrelation and
//! ambiguity functions.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use crate::dsp;
use crate::error::{Error, Result};

/// Amplitude taper applied to the pulse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Window {
    Rectangular,
    /// Tukey window; `taper` is the fraction of the pulse spent in the two
    /// raised-cosine ramps combined.
    TaperedCosine { taper: f64 },
}

impl Default for Window {
    fn default() -> Self {
        Window::TaperedCosine { taper: 0.1 }
    }
}

impl Window {
    /// Amplitude at normalized time `u = t / Tp`, zero outside `[0, 1)`.
    pub fn amplitude(&self, u: f64) -> f64 {
        if !(0.0..1.0).contains(&u) {
            return 0.0;
        }
        match *self {
            Window::Rectangular => 1.0,
            Window::TaperedCosine { taper } => {
                let edge = taper / 2.0;
                if edge <= 0.0 {
                    1.0
                } else if u < edge {
                    0.5 * (1.0 - (PI * u / edge).cos())
                } else if u > 1.0 - edge {
                    0.5 * (1.0 - (PI * (1.0 - u) / edge).cos())
                } else {
                    1.0
                }
            }
        }
    }

    pub fn parse(s: &str) -> Option<Window> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("rectangular") || s.eq_ignore_ascii_case("rect") {
            return Some(Window::Rectangular);
        }
        let rest = s.strip_prefix("tukey")?;
        let taper = match rest.strip_prefix(':') {
            Some(v) => v.trim().parse().ok()?,
            None if rest.is_empty() => 0.1,
            None => return None,
        };
        if (0.0..=1.0).contains(&taper) {
            Some(Window::TaperedCosine { taper })
        } else {
            None
        }
    }
}

impl std::fmt::Display for Window {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Window::Rectangular => write!(f, "rectangular"),
            Window::TaperedCosine { taper } => write!(f, "tukey:{taper}"),
        }
    }
}

/// Sampled linear FM pulse together with its design parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CodedPulse {
    pub f0: f64,
    pub bandwidth: f64,
    pub duration: f64,
    pub window: Window,
    pub fs: f64,
    pub samples: Vec<f64>,
}

impl CodedPulse {
    /// Time-bandwidth product `Tp * B`.
    pub fn time_bandwidth(&self) -> f64 {
        self.duration * self.bandwidth
    }

    /// Number of samples `N_h`.
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Riemann-sum energy `sum |s|^2 / fs`.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum::<f64>() / self.fs
    }

    /// Continuous-time pulse with its carrier lowered by `downshift` Hz,
    /// `a(t) cos(2 pi ((f0 - downshift - B/2) t + B t^2 / (2 Tp)))`.
    /// Zero outside `[0, Tp)`.
    pub fn value_at(&self, t: f64, downshift: f64) -> f64 {
        let a = self.window.amplitude(t / self.duration);
        if a == 0.0 {
            return 0.0;
        }
        let phase = (self.f0 - downshift - self.bandwidth / 2.0) * t
            + self.bandwidth / (2.0 * self.duration) * t * t;
        a * (2.0 * PI * phase).cos()
    }

    /// Instantaneous frequency of the sweep at time `t` (Hz).
    pub fn instantaneous_frequency(&self, t: f64) -> f64 {
        self.f0 - self.bandwidth / 2.0 + self.bandwidth / self.duration * t
    }
}

/// Builds a sampled linear FM pulse.
pub fn make_linear_fm(f0: f64, bandwidth: f64, duration: f64, fs: f64, window: Window) -> Result<CodedPulse> {
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::InvalidParameter(format!("bandwidth must be > 0 (got {bandwidth})")));
    }
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(Error::InvalidParameter(format!("pulse duration must be > 0 (got {duration})")));
    }
    if !(f0 > 0.0) || !f0.is_finite() {
        return Err(Error::InvalidParameter(format!("carrier frequency must be > 0 (got {f0})")));
    }
    let nyquist = 2.0 * (f0 + bandwidth / 2.0);
    if !(fs > nyquist) {
        return Err(Error::InvalidParameter(format!(
            "sample rate must exceed 2(f0 + B/2) = {nyquist} Hz (got {fs})"
        )));
    }
    if let Window::TaperedCosine { taper } = window {
        if !(0.0..=1.0).contains(&taper) {
            return Err(Error::InvalidParameter(format!("taper fraction must lie in [0, 1] (got {taper})")));
        }
    }
    let n = (duration * fs).round() as usize;
    if n == 0 {
        return Err(Error::InvalidParameter("pulse shorter than one sample".into()));
    }
    let mut pulse = CodedPulse {
        f0,
        bandwidth,
        duration,
        window,
        fs,
        samples: Vec::new(),
    };
    pulse.samples = (0..n).map(|i| pulse.value_at(i as f64 / fs, 0.0)).collect();
    Ok(pulse)
}

/// Default sweep split for a requested time-bandwidth product: `B = 0.6 f0`
/// and `Tp = D / B`.
pub fn default_sweep(f0: f64, time_bandwidth: f64) -> (f64, f64) {
    let b = 0.6 * f0;
    (b, time_bandwidth / b)
}

/// Matched filter `h[n] = s*[-n]`, stored causally (time-reversed samples).
pub fn matched_filter(pulse: &CodedPulse) -> Vec<f64> {
    pulse.samples.iter().rev().copied().collect()
}

/// Filters `x` with a causal matched filter `h` and drops the filter delay,
/// so an echo whose onset is at sample `d` peaks at output sample `d`.
/// Output length equals `x.len()`.
pub fn apply_matched_filter(x: &[f64], h: &[f64]) -> Vec<f64> {
    if h.is_empty() {
        return vec![0.0; x.len()];
    }
    let full = dsp::convolve_full(x, h);
    let shift = h.len() - 1;
    (0..x.len()).map(|i| full.get(i + shift).copied().unwrap_or(0.0)).collect()
}

/// Sampled correlation function over lags `-(N-1) ..= N-1` samples.
#[derive(Debug, Clone)]
pub struct Correlation {
    pub fs: f64,
    /// `values[i]` is the lag `i - (len - 1)` in samples, scaled by `1/fs`.
    pub values: Vec<f64>,
}

impl Correlation {
    pub fn zero_index(&self) -> usize {
        self.values.len() / 2
    }

    pub fn lag_seconds(&self, index: usize) -> f64 {
        (index as f64 - self.zero_index() as f64) / self.fs
    }

    /// Value at an integer lag (samples); zero outside the support.
    pub fn at_lag(&self, lag: i64) -> f64 {
        let idx = self.zero_index() as i64 + lag;
        if idx < 0 || idx as usize >= self.values.len() {
            0.0
        } else {
            self.values[idx as usize]
        }
    }

    /// Half-power width of the envelope main lobe (s).
    pub fn mainlobe_width(&self) -> Option<f64> {
        dsp::half_power_width(&dsp::envelope(&self.values)).map(|w| w / self.fs)
    }
}

fn cross_correlate(x: &[f64], reference: &[f64], fs: f64) -> Correlation {
    // sum_j x[j] ref[j - l] over lags l in -(N-1)..=N-1, via convolution with the
    // reversed reference.
    let rev: Vec<f64> = reference.iter().rev().copied().collect();
    let values = dsp::convolve_full(x, &rev).into_iter().map(|v| v / fs).collect();
    Correlation { fs, values }
}

/// Autocorrelation `R_ss(t) = int s(tau) s*(tau - t) dtau` as a Riemann sum,
/// computed in the frequency domain.
pub fn autocorrelation(pulse: &CodedPulse) -> Correlation {
    cross_correlate(&pulse.samples, &pulse.samples, pulse.fs)
}

/// Ambiguity surface sampled on the pulse's lag grid and a list of shifts.
#[derive(Debug, Clone)]
pub struct AmbiguityMap {
    /// Delay axis (s), `2 N_h - 1` points centred on zero.
    pub delays: Vec<f64>,
    /// Carrier downshift axis (Hz).
    pub shifts: Vec<f64>,
    /// `|A(t, f)|`, one row per shift.
    pub values: Vec<Vec<f64>>,
    /// Analytic-signal envelope of each row, used for width measurements.
    pub envelopes: Vec<Vec<f64>>,
}

impl AmbiguityMap {
    /// Half-power width (s) of the envelope main lobe of row `row`.
    pub fn row_width(&self, row: usize, fs: f64) -> Option<f64> {
        dsp::half_power_width(&self.envelopes[row]).map(|w| w / fs)
    }

    /// Delay (s) of the envelope peak of row `row`.
    pub fn row_peak_delay(&self, row: usize) -> f64 {
        let i = dsp::argmax(&self.envelopes[row]).unwrap_or(0);
        self.delays[i]
    }
}

/// Matched-filter response to carrier-downshifted replicas of the pulse,
/// `A(t, f) = int s(tau, f) s*(tau - t) dtau`.
///
/// A positive shift lowers the echo's carrier; for an up-sweep the response
/// peak then moves to a positive delay of `f Tp / B`.
pub fn ambiguity(pulse: &CodedPulse, shifts: &[f64]) -> Result<AmbiguityMap> {
    if let Some(f) = shifts.iter().find(|f| f.abs() > pulse.bandwidth) {
        return Err(Error::InvalidParameter(format!(
            "frequency shift {f} Hz outside +/-B = {} Hz",
            pulse.bandwidth
        )));
    }
    let n = pulse.len();
    let mut values = Vec::with_capacity(shifts.len());
    let mut envelopes = Vec::with_capacity(shifts.len());
    for &f in shifts {
        let shifted: Vec<f64> = (0..n).map(|i| pulse.value_at(i as f64 / pulse.fs, f)).collect();
        let row = cross_correlate(&shifted, &pulse.samples, pulse.fs);
        envelopes.push(dsp::envelope(&row.values));
        values.push(row.values.iter().map(|v| v.abs()).collect());
    }
    let delays = (0..2 * n - 1)
        .map(|i| (i as f64 - (n - 1) as f64) / pulse.fs)
        .collect();
    Ok(AmbiguityMap {
        delays,
        shifts: shifts.to_vec(),
        values,
        envelopes,
    })
}

/// Writes the pulse as two whitespace-separated columns `time_s amplitude`.
pub fn write_waveform_text(path: &Path, pulse: &CodedPulse) -> Result<()> {
    let mut out = String::with_capacity(pulse.len() * 48);
    out.push_str("# time_s amplitude\n");
    for (i, v) in pulse.samples.iter().enumerate() {
        let _ = writeln!(out, "{:.17e} {:.17e}", i as f64 / pulse.fs, v);
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a two-column waveform file. Lines starting with `#` are ignored.
pub fn read_waveform_text(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut times = Vec::new();
    let mut amps = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split_whitespace().map(str::parse::<f64>);
        match (cols.next(), cols.next(), cols.next()) {
            (Some(Ok(t)), Some(Ok(a)), None) => {
                times.push(t);
                amps.push(a);
            }
            _ => {
                return Err(Error::Format {
                    what: "waveform",
                    path: path.to_path_buf(),
                    msg: format!("line {}: expected two numeric columns", lineno + 1),
                })
            }
        }
    }
    Ok((times, amps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn table_pulse() -> CodedPulse {
        make_linear_fm(3e6, 2.5e6, 24e-6, 11.6e6, Window::default()).unwrap()
    }

    #[test]
    fn rejects_bad_parameters() {
        let w = Window::default();
        assert!(matches!(make_linear_fm(3e6, 0.0, 1e-5, 40e6, w), Err(Error::InvalidParameter(_))));
        assert!(matches!(make_linear_fm(3e6, 1e6, -1e-5, 40e6, w), Err(Error::InvalidParameter(_))));
        let err = make_linear_fm(3e6, 2e6, 1e-5, 7e6, w).unwrap_err();
        assert!(err.to_string().contains("2(f0 + B/2)"));
    }

    #[test]
    fn table_setup_length_and_tbp() {
        let p = table_pulse();
        assert_eq!(p.len(), 278);
        assert_relative_eq!(p.time_bandwidth(), 60.0, epsilon = 1e-9);
        let (b, tp) = default_sweep(3e6, 60.0);
        assert_relative_eq!(b * tp, 60.0, epsilon = 1e-9);
        assert_relative_eq!(b, 1.8e6);
    }

    #[test]
    fn sweep_starts_at_lower_band_edge() {
        let p = table_pulse();
        assert_relative_eq!(p.instantaneous_frequency(0.0), 3e6 - 1.25e6);
        assert_relative_eq!(p.instantaneous_frequency(p.duration), 3e6 + 1.25e6);
    }

    #[test]
    fn matched_filter_of_real_pulse_is_reversal() {
        let p = table_pulse();
        let h = matched_filter(&p);
        assert_eq!(h.len(), p.len());
        assert_eq!(h[0], *p.samples.last().unwrap());
        assert_eq!(h[h.len() - 1], p.samples[0]);
    }

    #[test]
    fn matched_filter_peak_is_energy() {
        let p = table_pulse();
        let h = matched_filter(&p);
        let y = apply_matched_filter(&p.samples, &h);
        let energy: f64 = p.samples.iter().map(|v| v * v).sum();
        assert_relative_eq!(y[0], energy, max_relative = 1e-10);
        assert_eq!(dsp::argmax(&y), Some(0));
    }

    #[test]
    fn autocorrelation_zero_lag_is_energy_and_symmetric() {
        let p = table_pulse();
        let r = autocorrelation(&p);
        assert_eq!(r.values.len(), 2 * p.len() - 1);
        assert_relative_eq!(r.at_lag(0), p.energy(), max_relative = 1e-10);
        for lag in 1..p.len() as i64 {
            assert_relative_eq!(r.at_lag(lag), r.at_lag(-lag), epsilon = 1e-12 * p.energy());
        }
    }

    #[test]
    fn ambiguity_rejects_out_of_range_shift() {
        let p = table_pulse();
        assert!(ambiguity(&p, &[3e6]).is_err());
    }

    #[test]
    fn window_parsing() {
        assert_eq!(Window::parse("rect"), Some(Window::Rectangular));
        assert_eq!(Window::parse("tukey:0.25"), Some(Window::TaperedCosine { taper: 0.25 }));
        assert_eq!(Window::parse("tukey"), Some(Window::TaperedCosine { taper: 0.1 }));
        assert_eq!(Window::parse("tukey:2"), None);
        assert_eq!(Window::parse("hann"), None);
    }

    #[test]
    fn waveform_text_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pulse.txt");
        let p = table_pulse();
        write_waveform_text(&path, &p).unwrap();
        let (t, a) = read_waveform_text(&path).unwrap();
        assert_eq!(a, p.samples);
        assert_relative_eq!(t[10], 10.0 / p.fs);
    }
}
