use attnhar_core::data::{split, standardize, ChannelStats};
use attnhar_core::synth::{synth_weak, SynthConfig};
use std::f64::consts::PI;

fn band_power(x: &[f64], rate: f64, center: f64, half_width: f64) -> f64 {
    let mut total = 0.0;
    let mut f = center - half_width;
    while f <= center + half_width + 1e-9 {
        let (mut re, mut im) = (0.0, 0.0);
        for (i, v) in x.iter().enumerate() {
            let phase = 2.0 * PI * f * i as f64 / rate;
            re += v * phase.cos();
            im -= v * phase.sin();
        }
        total += (re * re + im * im) / x.len() as f64;
        f += 0.05;
    }
    total
}

#[test]
fn foreground_segments_are_spectrally_distinct() {
    let cfg = SynthConfig {
        n: 24,
        ..SynthConfig::default()
    };
    let ds = synth_weak(&cfg, 3).unwrap();
    let l = ds.seq_len();
    for i in 0..ds.len() {
        let label = ds.labels()[i];
        let seg = ds.segments().unwrap()[i][0];
        let fg = cfg.foreground_freq_hz[label];
        let bg = cfg.background_freq_hz;
        for axis in 0..ds.channels() {
            let x = &ds.window(i)[axis * l..(axis + 1) * l];
            let inside = &x[seg.start..seg.end];
            let ratio = band_power(inside, 50.0, fg, 0.3) / band_power(inside, 50.0, bg, 0.3);
            assert!(ratio > 3.0, "window {i} axis {axis} class {label}: ratio {ratio}");
            let outside = if seg.start >= l - seg.end { &x[..seg.start] } else { &x[seg.end..] };
            if outside.len() >= 256 {
                let ratio = band_power(outside, 50.0, bg, 0.3) / band_power(outside, 50.0, fg, 0.3);
                assert!(ratio > 3.0, "window {i} axis {axis} background ratio {ratio}");
            }
        }
    }
    assert!(ds.windows().iter().all(|v| v.is_finite()));
}

#[test]
fn standardized_splits_use_training_statistics() {
    let cfg = SynthConfig {
        n: 50,
        seq_len: 256,
        segment_len_min: 32,
        segment_len_max: 128,
        ..SynthConfig::default()
    };
    let ds = synth_weak(&cfg, 7).unwrap();
    let (train, val, test) = split(&ds, [0.7, 0.1, 0.2], 7).unwrap();
    assert_eq!((train.len(), val.len(), test.len()), (35, 5, 10));
    let stats = ChannelStats::compute(&train).unwrap();
    let z = standardize(&train, &stats).unwrap();
    let zs = ChannelStats::compute(&z).unwrap();
    assert!(zs.mean.iter().all(|m| m.abs() < 1e-6));
    assert!(zs.std.iter().all(|s| (s - 1.0).abs() < 1e-6));
    assert!(standardize(&test, &stats).is_ok());
}
