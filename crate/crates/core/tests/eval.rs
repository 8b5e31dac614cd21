use respscreen::eval::{compare_models, report_csv, CompareConfig};
use respscreen::frameio::{Label, RespirationTrace};
use respscreen::net::{TrainConfig, Variant};
use respscreen::roi::normalize_trace;

/// Slow sinusoids against fast ones (cycles per sample) with shifted phase.
fn separable(n: usize) -> Vec<RespirationTrace> {
    (0..n)
        .map(|i| {
            let (label, f) = if i % 2 == 0 {
                (Label::Normal, 0.06)
            } else {
                (Label::Abnormal, 0.24)
            };
            let phase = i as f64 * 0.37;
            let v: Vec<f64> = (0..40)
                .map(|t| (std::f64::consts::TAU * f * t as f64 + phase).sin())
                .collect();
            normalize_trace(&RespirationTrace::new(v, 10.0).unwrap())
                .unwrap()
                .with_label(label)
        })
        .collect()
}

fn config() -> CompareConfig {
    CompareConfig {
        hidden_size: 8,
        attn_size: 4,
        train_fraction: 0.75,
        train: TrainConfig {
            lr: 1e-2,
            epochs: 15,
            batch_size: 8,
            seed: 1,
        },
    }
}

#[test]
fn separable_classes_are_learned() {
    let data = separable(120);
    let out = compare_models(&data, &[Variant::GruAt], &config()).unwrap();
    let r = &out[0].report;
    assert!(r.accuracy >= 0.95, "{r:?}");
    assert_eq!(r.confusion.total(), 30);
}

#[test]
fn comparison_is_reproducible() {
    let data = separable(40);
    let variants = [Variant::BiGruAt, Variant::Lstm];
    let table = |_: ()| {
        let out = compare_models(&data, &variants, &config()).unwrap();
        report_csv(&out.iter().map(|c| c.report.clone()).collect::<Vec<_>>())
    };
    let a = table(());
    assert_eq!(a, table(()));
    assert!(a.contains("\nBiGRU-AT,") && a.contains("\nLSTM,"));
}
