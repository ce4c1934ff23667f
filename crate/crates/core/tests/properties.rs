use proptest::prelude::*;

use focus_core::fdbf::{build_q_table, BandPlan};
use focus_core::imaging::{scan_convert, Interpolation, ScanOptions};
use focus_core::metrics::{complexity_model, measure_axial_psf, ComplexityParams, LogBase};
use focus_core::scene::*;
use focus_core::tdbf::{beamform_time, BeamLine, LineTag};
use focus_core::waveform::{autocorrelation, make_linear_fm, Window};

const C: f64 = DEFAULT_SOUND_SPEED;
const FS: f64 = 20e6;

fn scatterer() -> impl Strategy<Value = Scatterer> {
    (3e-3..20e-3f64, -0.5..0.5f64, 0.1..2.0f64, 0.0..3e5f64).prop_map(|(r, th, a, f)| Scatterer {
        downshift: f,
        ..Scatterer::new(r, th, a)
    })
}

fn synth(g: &ArrayGeometry, s: Vec<Scatterer>) -> ChannelFrame {
    let p = make_linear_fm(3e6, 1.8e6, 4e-6, FS, Window::default()).unwrap();
    synthesize_channels(g, &Phantom::new(s), &p, FS, 30e-6, 0.0, 1).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn synthesis_superposes(a in scatterer(), b in scatterer()) {
        let g = uniform_linear_array(4, 0.3e-3, C).unwrap();
        let (fa, fb, both) = (synth(&g, vec![a]), synth(&g, vec![b]), synth(&g, vec![a, b]));
        for ((x, y), z) in fa.data().iter().zip(fb.data()).zip(both.data()) {
            prop_assert_eq!(x + y, *z);
        }
    }

    #[test]
    fn beamforming_is_linear(a in scatterer(), b in scatterer(), k in -3.0..3.0f64, theta in -0.5..0.5f64) {
        let g = uniform_linear_array(6, 0.3e-3, C).unwrap();
        let (fa, fb) = (synth(&g, vec![a]), synth(&g, vec![b]));
        let mix: Vec<f64> = fa.data().iter().zip(fb.data()).map(|(x, y)| x + k * y).collect();
        let fm = ChannelFrame::from_data(g.clone(), FS, 30e-6, mix).unwrap();
        let (la, lb, lm) = (
            beamform_time(&fa, &g, theta).unwrap(),
            beamform_time(&fb, &g, theta).unwrap(),
            beamform_time(&fm, &g, theta).unwrap(),
        );
        let scale = 1.0 + lm.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..lm.len() {
            prop_assert!((lm.samples[i] - la.samples[i] - k * lb.samples[i]).abs() < 1e-12 * scale);
        }
    }

    #[test]
    fn delay_curve_is_non_decreasing(pitch in 0.1e-3..1e-3f64, m in 0usize..16, theta in -1.2..1.2f64,
                                      t in 1e-7..100e-6f64, dt in 1e-9..10e-6f64) {
        let g = uniform_linear_array(16, pitch, C).unwrap();
        let (a, b) = (delay_curve(&g, m, t, theta), delay_curve(&g, m, t + dt, theta));
        prop_assert!(b >= a - 1e-18, "{} then {}", a, b);
        prop_assert!(a >= t / 2.0);
    }

    #[test]
    fn complexity_ratio_falls_with_window(nq in 1usize..60, n_s in 64usize..8192, n_h in 8usize..2048) {
        let p = |nq| ComplexityParams { elements: 64, n_s, n_h, k: n_s / 4, nq, p: None };
        let a = complexity_model(p(nq), LogBase::Two).unwrap().ratio;
        let b = complexity_model(p(nq + 1), LogBase::Two).unwrap().ratio;
        prop_assert!(b < a);
    }

    #[test]
    fn complexity_ratio_grows_with_oversampling(p in 1.0..12.0f64, dp in 0.5..4.0f64, nq in 1usize..40) {
        let at = |p| complexity_model(ComplexityParams::at_oversampling(64, 120e-6, 2.9e6, 60.0, 260, nq, p), LogBase::Two)
            .unwrap()
            .ratio;
        prop_assert!(at(p + dp) > at(p));
    }

    #[test]
    fn scaling_lines_shifts_fixed_reference_image(k_db in -30.0..30.0f64) {
        let lines: Vec<BeamLine> = (0..5)
            .map(|i| BeamLine {
                theta: -0.2 + 0.1 * i as f64,
                samples: (0..200).map(|j| ((j as f64 - 90.0) * 0.3).sin() * (1.0 + i as f64) / (1.0 + j as f64)).collect(),
                fs: FS,
                tag: LineTag::Focus,
            })
            .collect();
        let k = 10f64.powf(k_db / 20.0);
        let scaled: Vec<BeamLine> = lines
            .iter()
            .map(|l| BeamLine { samples: l.samples.iter().map(|v| v * k).collect(), ..l.clone() })
            .collect();
        let opts = ScanOptions {
            dynamic_range_db: 200.0,
            pitch_mm: 0.2,
            interpolation: Interpolation::Nearest,
            reference: Some(1e3),
            ..ScanOptions::default()
        };
        let (a, b) = (scan_convert(&lines, &opts).unwrap(), scan_convert(&scaled, &opts).unwrap());
        for (x, y) in a.pixels.iter().zip(&b.pixels) {
            if *x > -150.0 && *y > -150.0 {
                prop_assert!((y - x - k_db).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn axial_width_ignores_amplitude(k in 1e-3..1e3f64, b in 0.5e6..3e6f64) {
        let samples: Vec<f64> = (0..1500)
            .map(|i| {
                let t = i as f64 / 50e6 - 15e-6;
                let x = std::f64::consts::PI * b * t;
                let s = if x == 0.0 { 1.0 } else { x.sin() / x };
                s * (2.0 * std::f64::consts::PI * 8e6 * t).cos()
            })
            .collect();
        let line = |k: f64| BeamLine { theta: 0.0, samples: samples.iter().map(|v| v * k).collect(), fs: 50e6, tag: LineTag::PreCompression };
        let (a, c) = (measure_axial_psf(&line(1.0), C, None).unwrap(), measure_axial_psf(&line(k), C, None).unwrap());
        prop_assert!((a.width_s - c.width_s).abs() <= 1e-9 * a.width_s);
    }

    #[test]
    fn autocorrelation_is_symmetric(d in 5.0..120.0f64, f0 in 1e6..5e6f64) {
        let b = 0.6 * f0;
        let p = make_linear_fm(f0, b, d / b, 8.0 * f0, Window::default()).unwrap();
        let r = autocorrelation(&p);
        let n = p.len() as i64;
        for l in 1..n {
            prop_assert!((r.at_lag(l) - r.at_lag(-l)).abs() <= 1e-12 * r.at_lag(0));
            prop_assert!(r.at_lag(l).abs() <= r.at_lag(0) * (1.0 + 1e-12));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn weight_tables_are_pure(theta in -0.6..0.6f64, m in 2usize..6, nq in 1usize..4) {
        let g = uniform_linear_array(m, 0.3e-3, C).unwrap();
        let plan = BandPlan::symmetric((20, 60), 2 * nq + 1).unwrap();
        let a = build_q_table(&g, theta, plan, 12e-6, 240).unwrap();
        let b = build_q_table(&g, theta, plan, 12e-6, 240).unwrap();
        prop_assert_eq!(a, b);
    }
}
