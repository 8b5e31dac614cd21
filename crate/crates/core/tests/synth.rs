mod common;

use common::pearson;
use respscreen::frameio::Label;
use respscreen::roi;
use respscreen::synth::{gen_dataset, gen_sequence, gen_waveform, SceneSpec, WaveformSpec};

/// Breaths counted as upward crossings of +0.3 after the signal last went
/// below −0.3.
fn breath_count(v: &[f64]) -> usize {
    let mut armed = false;
    let mut count = 0;
    for &x in v {
        if x < -0.3 {
            armed = true;
        } else if x > 0.3 && armed {
            count += 1;
            armed = false;
        }
    }
    count
}

/// Accuracy of the best single threshold on breath count.
fn threshold_accuracy(counts: &[(usize, Label)]) -> f64 {
    let max = counts.iter().map(|c| c.0).max().unwrap();
    (0..=max + 1)
        .map(|th| {
            let correct = counts
                .iter()
                .filter(|(c, l)| (*c >= th) == (*l == Label::Abnormal))
                .count();
            correct as f64 / counts.len() as f64
        })
        .fold(0.0, f64::max)
}

#[test]
fn breath_counting_alone_is_a_partial_classifier() {
    let data = gen_dataset(500, 500, 100, 11).unwrap();
    let counts: Vec<(usize, Label)> = data
        .iter()
        .map(|t| (breath_count(t.values()), t.label.unwrap()))
        .collect();
    let acc = threshold_accuracy(&counts);
    assert!((0.70..=0.95).contains(&acc), "threshold accuracy {acc}");
}

#[test]
fn paper_shaped_dataset() {
    let data = gen_dataset(1925, 2292, 100, 1).unwrap();
    assert_eq!(data.len(), 4217);
    let abnormal = data
        .iter()
        .filter(|t| t.label == Some(Label::Abnormal))
        .count();
    assert_eq!(abnormal, 2292);
    for t in &data {
        assert_eq!(t.len(), 100);
        let n = t.len() as f64;
        let mean = t.values().iter().sum::<f64>() / n;
        let std = (t.values().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-9 && (std - 1.0).abs() < 1e-9);
    }
    assert_eq!(data, gen_dataset(1925, 2292, 100, 1).unwrap());
}

fn interval_cv(v: &[f64]) -> Option<f64> {
    let peaks: Vec<usize> = (1..v.len() - 1)
        .filter(|&i| v[i] > v[i - 1] && v[i] >= v[i + 1] && v[i] > 0.0)
        .collect();
    if peaks.len() < 3 {
        return None;
    }
    let gaps: Vec<f64> = peaks.windows(2).map(|w| (w[1] - w[0]) as f64).collect();
    let n = gaps.len() as f64;
    let m = gaps.iter().sum::<f64>() / n;
    let sd = (gaps.iter().map(|g| (g - m).powi(2)).sum::<f64>() / n).sqrt();
    Some(sd / m)
}

#[test]
fn abnormal_breathing_is_less_regular() {
    let normal = WaveformSpec {
        noise_sigma: 0.0,
        ..WaveformSpec::normal()
    };
    let abnormal = WaveformSpec {
        event_rate: 0.3,
        noise_sigma: 0.0,
        ..WaveformSpec::abnormal()
    };
    let mean_cv = |spec: &WaveformSpec| {
        let cvs: Vec<f64> = (0..100)
            .filter_map(|s| interval_cv(gen_waveform(spec, s).unwrap().values()))
            .collect();
        cvs.iter().sum::<f64>() / cvs.len() as f64
    };
    let (cn, ca) = (mean_cv(&normal), mean_cv(&abnormal));
    assert!(ca > cn, "normal cv {cn}, abnormal cv {ca}");
}

fn recovered(scene: &SceneSpec) -> f64 {
    let (seq, truth) = gen_sequence(scene, &WaveformSpec::normal()).unwrap();
    let masks = roi::mask_regions(&seq).unwrap();
    let (bw, bh, stride) = roi::default_block_params(&masks);
    let sel = roi::select_roi(&seq, bw, bh, stride).unwrap();
    let trace = roi::extract_trace(&seq, &sel).unwrap();
    pearson(trace.values(), truth.values()).abs()
}

#[test]
fn vertical_rotation_hurts_more_than_level_pose() {
    for seed in 0..3 {
        let level = SceneSpec {
            seed,
            ..SceneSpec::default()
        };
        let nodding = SceneSpec {
            vertical_angle: 45.0,
            ..level
        };
        assert!(recovered(&nodding) < recovered(&level));
    }
}

#[test]
fn rgb_boxes_are_mapped_to_thermal() {
    let scene = SceneSpec {
        rgb_scale: 4,
        pixel_noise: 0.0,
        ..SceneSpec::default()
    };
    assert!(recovered(&scene) >= 0.99);
}

#[test]
fn drifting_face_is_tracked() {
    let scene = SceneSpec {
        drift_x: 0.1,
        drift_y: -0.05,
        pixel_noise: 0.0,
        ..SceneSpec::default()
    };
    assert!(recovered(&scene) >= 0.99);
}
