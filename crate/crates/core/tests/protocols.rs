use std::sync::{Mutex, MutexGuard};

use hdadapt::harness::{
    bench_scaling, evaluate_kfold, evaluate_lodo, sweep_delta, write_predictions_csv,
};
use hdadapt::*;

// Every test takes this lock so the timing checks run undisturbed.
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn small() -> PipelineConfig {
    PipelineConfig {
        dim: 2048,
        ..PipelineConfig::default()
    }
}

fn corpus(shift: f64) -> Corpus {
    generate_synthetic(&SynthSpec {
        shift,
        samples_per_class: 40,
        ..SynthSpec::default()
    })
    .unwrap()
}

#[test]
fn no_shift_means_no_adaptation_advantage() {
    let _g = serial();
    let c = corpus(0.0);
    let adaptive = evaluate_lodo(&c, &small()).unwrap().mean_accuracy;
    let pooled = evaluate_lodo(
        &c,
        &PipelineConfig {
            method: Method::Pooled,
            ..small()
        },
    )
    .unwrap()
    .mean_accuracy;
    assert!(
        (adaptive - pooled).abs() <= 0.03,
        "adaptive {adaptive} pooled {pooled}"
    );
}

#[test]
fn report_accounting_matches_records() {
    let _g = serial();
    let c = corpus(2.0);
    let report = evaluate_kfold(&c, 4, &small()).unwrap();
    let mut correct = 0;
    let mut total = 0;
    for split in &report.splits {
        let right = split.records.iter().filter(|r| r.is_correct()).count();
        assert_eq!(right, split.correct);
        assert_eq!(split.records.len(), split.n_test);
        assert_eq!(split.accuracy, split.correct as f64 / split.n_test as f64);
        correct += right;
        total += split.n_test;
    }
    assert_eq!((correct, total), (report.total_correct, report.total));
    assert_eq!(total, c.len());
    let mean = report.splits.iter().map(|s| s.accuracy).sum::<f64>() / report.splits.len() as f64;
    assert!((mean - report.mean_accuracy).abs() < 1e-12);

    let mut csv = Vec::new();
    write_predictions_csv(report.records(), &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().count(), total + 1);
}

#[test]
fn report_config_reruns_identically() {
    let _g = serial();
    let c = corpus(2.0);
    let cfg = PipelineConfig {
        dim: 1024,
        epochs: 5,
        eta: 0.1,
        delta_star: 0.5,
        seed: 11,
        ..PipelineConfig::default()
    };
    let first = evaluate_lodo(&c, &cfg).unwrap();
    let json = serde_json::to_string(&first.config).unwrap();
    let echoed: PipelineConfig = serde_json::from_str(&json).unwrap();
    assert_eq!(echoed, cfg);
    let second = evaluate_lodo(&c, &echoed).unwrap();
    assert_eq!(first.without_timings(), second.without_timings());
}

#[test]
fn sweep_point_matches_direct_evaluation() {
    let _g = serial();
    let c = corpus(2.0);
    let sweep = sweep_delta(&c, &[0.65], &small()).unwrap();
    let direct = evaluate_lodo(&c, &small()).unwrap();
    assert_eq!(sweep.rows[0].mean_accuracy, direct.mean_accuracy);
    assert_eq!(sweep.rows[0].mean_ood_rate, direct.mean_ood_rate);
    let per_split: Vec<f64> = direct.splits.iter().map(|s| s.accuracy).collect();
    assert_eq!(sweep.rows[0].split_accuracy, per_split);
}

#[test]
fn lowest_threshold_equals_full_ensemble_row() {
    let _g = serial();
    let c = corpus(2.0);
    let probe = sweep_delta(&c, &[0.65], &small()).unwrap();
    let above = (probe.max_similarity + 1e-9).min(1.0);
    assert!(above > probe.max_similarity);
    let sweep = sweep_delta(&c, &[-1.0, above], &small()).unwrap();
    assert_eq!(sweep.rows[0].mean_accuracy, sweep.rows[1].mean_accuracy);
    assert_eq!(sweep.rows[0].split_accuracy, sweep.rows[1].split_accuracy);
    assert_eq!(sweep.rows[0].mean_ood_rate, 0.0);
    assert_eq!(sweep.rows[1].mean_ood_rate, 1.0);
}

#[test]
fn sweep_rejects_bad_grids() {
    let _g = serial();
    let c = corpus(2.0);
    assert!(sweep_delta(&c, &[], &small()).is_err());
    assert!(sweep_delta(&c, &[0.5, 1.01], &small()).is_err());
}

#[test]
fn bench_rows_scale_with_data() {
    let _g = serial();
    let c = generate_synthetic(&SynthSpec::default()).unwrap();
    let rows = bench_scaling(&c, &[0.25, 0.5, 1.0], 3, &PipelineConfig::default()).unwrap();
    assert_eq!(rows.len(), 3);
    for w in rows.windows(2) {
        assert!(w[1].segments > w[0].segments);
        assert!(w[1].train_secs >= w[0].train_secs);
    }
    assert!(rows[2].train_throughput > 0.0 && rows[2].infer_throughput > 0.0);
    let ratio = rows[2].infer_secs / rows[1].infer_secs;
    assert!((1.5..=2.5).contains(&ratio), "inference time ratio {ratio}");
    assert!(bench_scaling(&c, &[0.0], 1, &small()).is_err());
}
