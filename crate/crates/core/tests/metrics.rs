use std::f64::consts::PI;

use approx::assert_relative_eq;
use focus_core::metrics::*;
use focus_core::scene::DEFAULT_SOUND_SPEED;
use focus_core::tdbf::{BeamLine, LineTag};
use focus_core::Error;

const C: f64 = DEFAULT_SOUND_SPEED;

fn line(theta: f64, fs: f64, samples: Vec<f64>) -> BeamLine {
    BeamLine {
        theta,
        samples,
        fs,
        tag: LineTag::PreCompression,
    }
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// `sinc(B (t - t0))` on a carrier: envelope half-power width 0.886 / B,
/// first sidelobe -13.26 dB.
fn sinc_line(b: f64, amp: f64) -> BeamLine {
    let fs = 100e6;
    let t0 = 20e-6;
    let s = (0..4000)
        .map(|i| {
            let t = i as f64 / fs;
            amp * sinc(b * (t - t0)) * (2.0 * PI * 10e6 * t).cos()
        })
        .collect();
    line(0.0, fs, s)
}

#[test]
fn axial_psf_of_sinc_envelope() {
    let b = 2e6;
    let psf = measure_axial_psf(&sinc_line(b, 1.0), C, None).unwrap();
    assert_relative_eq!(psf.width_s * b, 0.8859, max_relative = 0.01);
    assert_relative_eq!(psf.width_mm, C * psf.width_s / 2.0 * 1e3, max_relative = 1e-12);
    assert!((psf.first_sidelobe_db + 13.26).abs() < 0.3, "{}", psf.first_sidelobe_db);
    assert!(psf.peak_sidelobe_db >= psf.first_sidelobe_db);
    assert_eq!(psf.peak_index, 2000);
}

#[test]
fn axial_width_is_amplitude_invariant() {
    let a = measure_axial_psf(&sinc_line(1.5e6, 1.0), C, None).unwrap();
    let b = measure_axial_psf(&sinc_line(1.5e6, 37.0), C, None).unwrap();
    assert_relative_eq!(a.width_s, b.width_s, max_relative = 1e-9);
    assert_relative_eq!(a.first_sidelobe_db, b.first_sidelobe_db, epsilon = 1e-9);
}

#[test]
fn flat_line_has_no_measurable_peak() {
    let l = line(0.0, 10e6, vec![1.0; 200]);
    assert!(matches!(measure_axial_psf(&l, C, None), Err(Error::MeasurementFailed(_))));
}

#[test]
fn lateral_psf_of_gaussian_profile() {
    let sigma = 0.03;
    let fs = 20e6;
    let depth = 15e-3;
    let centre = (2.0 * depth / C * fs).round() as usize;
    let lines: Vec<BeamLine> = (0..121)
        .map(|i| {
            let th = -0.3 + 0.005 * i as f64;
            let a = (-(th - 0.02f64).powi(2) / (2.0 * sigma * sigma)).exp();
            let mut s = vec![0.0; 600];
            for (j, v) in s.iter_mut().enumerate() {
                let d = j as f64 - centre as f64;
                *v = a * (-d * d / 50.0).exp() * (0.9 * d).cos();
            }
            line(th, fs, s)
        })
        .collect();
    let psf = measure_lateral_psf(&lines, depth, C).unwrap();
    assert!(!psf.unresolved);
    assert_relative_eq!(psf.width_rad, 2.0 * sigma * 2f64.ln().sqrt(), max_relative = 0.02);
    assert_relative_eq!(psf.width_mm, psf.width_rad * 15.0, max_relative = 1e-12);
    assert_relative_eq!(psf.peak_theta, 0.02, epsilon = 1e-9);
}

#[test]
fn single_element_lateral_width_spans_the_grid() {
    use focus_core::scene::*;
    use focus_core::tdbf::beamform_pre_compression;
    use focus_core::waveform::*;
    let fs = 20e6;
    let g = uniform_linear_array(1, 0.3e-3, C).unwrap();
    let p = make_linear_fm(3e6, 1.8e6, 5e-6, fs, Window::default()).unwrap();
    let f = synthesize_channels(&g, &Phantom::new(vec![Scatterer::new(10e-3, 0.0, 1.0)]), &p, fs, 30e-6, 0.0, 1)
        .unwrap();
    let h = matched_filter(&p);
    let lines: Vec<BeamLine> = (0..9)
        .map(|i| beamform_pre_compression(&f, &g, -0.2 + 0.05 * i as f64, &h).unwrap())
        .collect();
    let psf = measure_lateral_psf(&lines, 10e-3, C).unwrap();
    assert!(psf.unresolved);
    assert_relative_eq!(psf.width_rad, 0.4, max_relative = 1e-12);
}

#[test]
fn lateral_rejects_unsorted_angles() {
    let l = |t| line(t, 10e6, vec![0.0, 1.0, 0.0]);
    assert!(measure_lateral_psf(&[l(0.1), l(0.0)], 1e-5, C).is_err());
    assert!(measure_lateral_psf(&[l(0.0)], 1e-5, C).is_err());
}

fn params(n_s: usize, n_h: usize, nq: usize) -> ComplexityParams {
    ComplexityParams {
        elements: 64,
        n_s,
        n_h,
        k: 260,
        nq,
        p: None,
    }
}

#[test]
fn complexity_closed_form() {
    let r = complexity_model(params(1392, 274, 29), LogBase::Two).unwrap();
    let l = 1392.0 + 274.0;
    let mf = 1.5 * l * f64::log2(l) + l;
    let na = 64.0 * 260.0 * 29.0 + 696.0 * f64::log2(1392.0);
    let nb = 64.0 * 1392.0 + 64.0 * mf;
    assert_eq!(r.na, na.round() as u64);
    assert_eq!(r.nb, nb.round() as u64);
    assert_eq!(r.nsaved, (63.0 * mf).round() as u64);
    assert_relative_eq!(r.ratio, nb / na, max_relative = 1e-12);
    assert!((r.ratio - 4.0).abs() < 0.6, "{}", r.ratio);

    let e = complexity_model(params(1392, 274, 29), LogBase::E).unwrap();
    assert!(e.ratio < r.ratio);
    assert!(complexity_model(params(1392, 274, 0), LogBase::Two).is_err());
}

#[test]
fn complexity_ratio_monotone() {
    let ratio = |p: ComplexityParams| complexity_model(p, LogBase::Two).unwrap().ratio;
    let by_nq: Vec<f64> = [3, 9, 15, 21, 29].iter().map(|&n| ratio(params(1392, 274, n))).collect();
    assert!(by_nq.windows(2).all(|w| w[1] < w[0]), "{by_nq:?}");
    let by_p: Vec<f64> = [2.0, 4.0, 6.0, 8.0, 10.0]
        .iter()
        .map(|&p| ratio(ComplexityParams::at_oversampling(64, 120e-6, 2.9e6, 60.0, 260, 29, p)))
        .collect();
    assert!(by_p.windows(2).all(|w| w[1] > w[0]), "{by_p:?}");
}

#[test]
fn oversampled_sizes() {
    let p = ComplexityParams::at_oversampling(64, 120e-6, 2.9e6, 60.0, 260, 29, 4.0);
    assert_eq!((p.n_s, p.n_h, p.p), (1392, 240, Some(4.0)));
}

#[test]
fn log_base_parsing() {
    assert_eq!(LogBase::parse("2"), Some(LogBase::Two));
    assert_eq!(LogBase::parse("e"), Some(LogBase::E));
    assert_eq!(LogBase::parse("10"), None);
}
