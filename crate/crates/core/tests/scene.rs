use approx::assert_relative_eq;
use focus_core::scene::*;
use focus_core::waveform::{make_linear_fm, CodedPulse, Window};
use focus_core::Error;

const C: f64 = DEFAULT_SOUND_SPEED;

fn pulse(fs: f64) -> CodedPulse {
    make_linear_fm(3e6, 1.8e6, 5e-6, fs, Window::default()).unwrap()
}

#[test]
fn array_layouts() {
    let one = uniform_linear_array(1, 0.7e-3, C).unwrap();
    assert_eq!(one.offsets(), &[0.0]);
    assert_eq!(one.reference(), 0);

    let g = uniform_linear_array(64, 0.3e-3, C).unwrap();
    assert_eq!(g.len(), 64);
    assert_eq!(g.reference(), 31);
    assert_eq!(g.offset(g.reference()), 0.0);

    let three = uniform_linear_array(3, 1e-3, C).unwrap();
    assert_eq!(three.offsets(), &[-1e-3, 0.0, 1e-3]);
    assert_relative_eq!(three.gamma(2), 1e-3 / C);
}

#[test]
fn geometry_invariants_enforced() {
    assert!(matches!(ArrayGeometry::new(vec![-1e-3, 1e-3], 0, C), Err(Error::InvalidParameter(_))));
    assert!(ArrayGeometry::new(vec![0.0, 1e-3, 0.5e-3], 0, C).is_err());
    assert!(ArrayGeometry::new(vec![0.0], 0, -1.0).is_err());
    assert!(ArrayGeometry::new(vec![-2e-3, 0.0, 5e-3], 1, C).is_ok());
}

#[test]
fn arrival_time_special_cases() {
    let g = uniform_linear_array(5, 0.4e-3, C).unwrap();
    let single = uniform_linear_array(1, 0.4e-3, C).unwrap();
    for &t in &[1e-6, 13e-6, 50e-6] {
        for &th in &[-0.6, 0.0, 0.3] {
            assert_relative_eq!(arrival_time(&g, g.reference(), t, th), 2.0 * t, max_relative = 1e-14);
            assert_relative_eq!(arrival_time(&single, 0, t, th), 2.0 * t, max_relative = 1e-14);
        }
    }
}

#[test]
fn arrival_time_matches_euclidean_distance() {
    let g = ArrayGeometry::new(vec![0.0, 5e-3], 0, C).unwrap();
    let (t, th) = (10e-6, 0.2f64);
    // scatterer position in the imaging plane; element on the x axis at 5 mm
    let (x, z) = (C * t * th.sin(), C * t * th.cos());
    let back = ((x - 5e-3).powi(2) + z * z).sqrt();
    let expected = t + back / C;
    assert_relative_eq!(arrival_time(&g, 1, t, th), expected, max_relative = 1e-12);
}

#[test]
fn delay_curve_cases_and_consistency() {
    let g = uniform_linear_array(9, 0.5e-3, C).unwrap();
    let m0 = g.reference();
    assert_eq!(delay_curve(&g, m0, 7e-6, 0.4), 7e-6);
    let gm = g.gamma(8);
    let t = 20e-6;
    assert_relative_eq!(
        delay_curve(&g, 8, t, 0.0),
        0.5 * (t + (t * t + 4.0 * gm * gm).sqrt()),
        max_relative = 1e-14
    );
    for m in 0..g.len() {
        for i in 1..40 {
            let t = i as f64 * 1.5e-6;
            for &th in &[-1.2, -0.427, 0.0, 0.3, 1.0] {
                let a = delay_curve(&g, m, 2.0 * t, th);
                let b = arrival_time(&g, m, t, th);
                assert_relative_eq!(a, b, max_relative = 1e-10);
                assert_relative_eq!(inverse_delay(g.gamma(m), a, th), 2.0 * t, max_relative = 1e-9);
            }
        }
    }
}

#[test]
fn empty_phantom_is_silent() {
    let g = uniform_linear_array(4, 0.3e-3, C).unwrap();
    let f = synthesize_channels(&g, &Phantom::default(), &pulse(20e6), 20e6, 30e-6, 0.0, 7).unwrap();
    assert_eq!(f.samples(), 600);
    assert!(f.data().iter().all(|&v| v == 0.0));
}

#[test]
fn reference_channel_onset() {
    let fs = 20e6;
    let g = uniform_linear_array(8, 0.3e-3, C).unwrap();
    let p = pulse(fs);
    for &r in &[5e-3, 12.3e-3, 20e-3] {
        let ph = Phantom::new(vec![Scatterer::new(r, 0.1, 1.0)]);
        let f = synthesize_channels(&g, &ph, &p, fs, 40e-6, 0.0, 1).unwrap();
        let ch = f.channel(g.reference());
        let onset = ch.iter().position(|v| v.abs() > 1e-12).unwrap();
        let exact = fs * 2.0 * r / C;
        // first nonzero sample is the first grid point at or after the onset
        assert!((onset as f64 - exact).abs() <= 1.0, "r={r}: {onset} vs {exact}");
        assert!(onset as f64 >= exact - 1e-9);
    }
}

#[test]
fn amplitude_and_superposition_are_exact() {
    let fs = 20e6;
    let g = uniform_linear_array(6, 0.3e-3, C).unwrap();
    let p = pulse(fs);
    let a = Scatterer::new(8e-3, 0.05, 1.0);
    let b = Scatterer {
        downshift: 0.2e6,
        ..Scatterer::new(15e-3, -0.2, 0.7)
    };
    let synth = |s: Vec<Scatterer>| synthesize_channels(&g, &Phantom::new(s), &p, fs, 40e-6, 0.0, 3).unwrap();
    let fa = synth(vec![a]);
    let fb = synth(vec![b]);
    let both = synth(vec![a, b]);
    for ((x, y), z) in fa.data().iter().zip(fb.data()).zip(both.data()) {
        assert_eq!(x + y, *z);
    }
    let double = synth(vec![Scatterer { amplitude: 2.0, ..a }]);
    for (x, y) in fa.data().iter().zip(double.data()) {
        assert_eq!(2.0 * x, *y);
    }
}

#[test]
fn reference_channel_depends_only_on_range() {
    let fs = 20e6;
    let g = uniform_linear_array(6, 0.3e-3, C).unwrap();
    let p = pulse(fs);
    let at = |th: f64| {
        synthesize_channels(&g, &Phantom::new(vec![Scatterer::new(9e-3, th, 1.0)]), &p, fs, 30e-6, 0.0, 1).unwrap()
    };
    let (a, b) = (at(-0.3), at(0.25));
    assert_eq!(a.channel(g.reference()), b.channel(g.reference()));
    assert_ne!(a.channel(0), b.channel(0));
}

#[test]
fn noise_is_reproducible_and_seed_dependent() {
    let g = uniform_linear_array(3, 0.3e-3, C).unwrap();
    let p = pulse(20e6);
    let run = |seed| synthesize_channels(&g, &Phantom::default(), &p, 20e6, 50e-6, 0.1, seed).unwrap();
    assert_eq!(run(5).data(), run(5).data());
    assert_ne!(run(5).data(), run(6).data());
    let x = run(5);
    let rms = (x.data().iter().map(|v| v * v).sum::<f64>() / x.data().len() as f64).sqrt();
    assert!((rms - 0.1).abs() < 0.01, "{rms}");
}

#[test]
fn frame_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let g = uniform_linear_array(4, 0.3e-3, C).unwrap();
    let ph = Phantom::new(vec![Scatterer::new(6e-3, 0.0, 1.0)]);
    let f = synthesize_channels(&g, &ph, &pulse(20e6), 20e6, 20e-6, 0.0, 1).unwrap();
    let path = dir.path().join("frame.bin");
    f.write(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(bytes.len(), 64 + 4 * f.elements() * f.samples());
    let back = ChannelFrame::read(&path, g.clone()).unwrap();
    assert_eq!(back.elements(), 4);
    for (a, b) in f.data().iter().zip(back.data()) {
        assert_eq!(*a as f32, *b as f32);
    }
    let wrong = uniform_linear_array(5, 0.3e-3, C).unwrap();
    assert!(ChannelFrame::read(&path, wrong).is_err());
}

#[test]
fn phantom_file_format() {
    let ph = Phantom::parse("# header\n0.01 0 1 0\n\n0.02 -0.1 0.5 1e5 # note\n").unwrap();
    assert_eq!(ph.scatterers.len(), 2);
    assert_eq!(ph.scatterers[1].downshift, 1e5);
    assert_eq!(Phantom::parse(&ph.to_text()).unwrap(), ph);
    assert_eq!(Phantom::parse("0.01 0 1\n").unwrap_err().0, 1);
    assert_eq!(Phantom::parse("0.01 0 1 0\n-1 0 1 0\n").unwrap_err().0, 2);
}
