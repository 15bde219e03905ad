use std::sync::OnceLock;

use hdadapt::adapt::ensemble_weights;
use hdadapt::harness::{fit_system, Classifier};
use hdadapt::model::argmax;
use hdadapt::*;

struct Fixture {
    system: TrainedSystem,
    queries: Vec<Hypervector>,
    labels: Vec<usize>,
}

// Trained on domains 1..3 of the default synthetic corpus; queries are the
// held-out domain 0.
fn fixture() -> &'static Fixture {
    static CELL: OnceLock<Fixture> = OnceLock::new();
    CELL.get_or_init(|| {
        let corpus = generate_synthetic(&SynthSpec::default()).unwrap();
        let (test, train): (Vec<&Segment>, Vec<&Segment>) =
            corpus.segments.iter().partition(|s| s.domain == 0);
        let cfg = PipelineConfig {
            dim: 4096,
            ..PipelineConfig::default()
        };
        let system = fit_system(&train, corpus.classes, &cfg).unwrap();
        let encoded = system.encoder.encode_batch(&test).unwrap();
        Fixture {
            system,
            labels: encoded.iter().map(|e| e.label).collect(),
            queries: encoded.into_iter().map(|e| e.hv).collect(),
        }
    })
}

fn ensemble(f: &Fixture) -> &Ensemble {
    match &f.system.classifier {
        Classifier::Adaptive(e) => e,
        Classifier::Pooled(_) => unreachable!(),
    }
}

fn cfg(delta_star: f64) -> AdaptConfig {
    AdaptConfig::new(delta_star).unwrap()
}

#[test]
fn raising_threshold_never_shrinks_the_ood_set() {
    let f = fixture();
    let ens = ensemble(f);
    let grid: Vec<f64> = (0..=20).map(|i| -1.0 + 0.1 * i as f64).collect();
    let mut previous: Vec<bool> = vec![false; f.queries.len()];
    for &delta in &grid {
        let flags: Vec<bool> = f
            .queries
            .iter()
            .map(|q| ens.infer(q, &cfg(delta)).unwrap().ood)
            .collect();
        for (now, before) in flags.iter().zip(&previous) {
            assert!(*now || !*before, "sample left the OOD set at {delta}");
        }
        previous = flags;
    }
}

#[test]
fn branches_agree_when_every_domain_qualifies() {
    let f = fixture();
    let ens = ensemble(f);
    for q in f.queries.iter().take(40) {
        let sims = domain_similarities(q, ens.descriptors()).unwrap();
        let lowest = sims.iter().copied().fold(f64::INFINITY, f64::min);
        let c = cfg(lowest.clamp(-1.0, 1.0));
        let a = build_test_time_model(&sims, true, ens.models(), &c).unwrap();
        let b = build_test_time_model(&sims, false, ens.models(), &c).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn test_time_model_is_reconstructible_from_provenance() {
    let f = fixture();
    let ens = ensemble(f);
    let c = cfg(0.65);
    for q in f.queries.iter().take(40) {
        let sims = domain_similarities(q, ens.descriptors()).unwrap();
        let ood = detect_ood(&sims, &c);
        let tt = build_test_time_model(&sims, ood, ens.models(), &c).unwrap();
        for &(k, w) in &tt.provenance {
            assert_eq!(w, sims[k].max(0.0));
            if !ood {
                assert!(sims[k] >= c.delta_star);
            }
        }
        for (t, class) in tt.classes.iter().enumerate() {
            let mut rebuilt = Hypervector::zeros(class.dim()).unwrap();
            for &(k, w) in &tt.provenance {
                rebuilt.add_scaled(w, &ens.models()[k].classes[t]).unwrap();
            }
            for (x, y) in class.as_slice().iter().zip(rebuilt.as_slice()) {
                assert!((x - y).abs() <= 1e-6 * (1.0 + y.abs()));
            }
        }
    }
}

#[test]
fn positive_rescaling_keeps_predictions() {
    let f = fixture();
    let ens = ensemble(f);
    let c = cfg(0.65);
    for q in f.queries.iter().take(40) {
        let sims = domain_similarities(q, ens.descriptors()).unwrap();
        let ood = detect_ood(&sims, &c);
        let base = build_test_time_model(&sims, ood, ens.models(), &c).unwrap();
        let scores: Vec<f64> = base
            .classes
            .iter()
            .map(|k| similarity(q, k).unwrap())
            .collect();
        let weights = ensemble_weights(&sims, ood, &c).unwrap();
        for factor in [0.01, 3.0, 250.0] {
            let mut classes: Vec<Hypervector> =
                vec![Hypervector::zeros(q.dim()).unwrap(); ens.n_classes()];
            for &(k, w) in &weights {
                for (acc, proto) in classes.iter_mut().zip(&ens.models()[k].classes) {
                    acc.add_scaled(factor * w, proto).unwrap();
                }
            }
            let scaled: Vec<f64> = classes.iter().map(|k| similarity(q, k).unwrap()).collect();
            assert_eq!(argmax(&scaled), argmax(&scores));
        }
    }
}

#[test]
fn extreme_thresholds_share_the_full_ensemble() {
    let f = fixture();
    let ens = ensemble(f);
    for q in &f.queries {
        let low = ens.infer(q, &cfg(-1.0)).unwrap();
        let high = ens.infer(q, &cfg(1.0)).unwrap();
        if low.domain_similarities.iter().all(|&s| s >= 0.0) {
            assert!(!low.ood && high.ood);
            assert_eq!(low.prediction, high.prediction);
        }
    }
}

#[test]
fn lazy_and_materialised_inference_agree() {
    let f = fixture();
    let ens = ensemble(f);
    for delta in [0.2, 0.65, 0.9] {
        let c = cfg(delta);
        for q in f.queries.iter().take(30) {
            let lazy = ens.infer(q, &c).unwrap();
            let full = infer(q, ens.models(), ens.descriptors(), &c).unwrap();
            assert_eq!(lazy.prediction, full.prediction);
            assert_eq!(lazy.ood, full.ood);
            for (a, b) in lazy.class_scores.iter().zip(&full.class_scores) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn ensemble_beats_every_single_source_model() {
    let f = fixture();
    let ens = ensemble(f);
    let c = cfg(0.65);
    let n = f.queries.len() as f64;
    let accuracy = |pred: &dyn Fn(&Hypervector) -> usize| {
        f.queries
            .iter()
            .zip(&f.labels)
            .filter(|(q, &y)| pred(q) == y)
            .count() as f64
            / n
    };
    let adaptive = accuracy(&|q| ens.infer(q, &c).unwrap().prediction);
    for m in ens.models() {
        let single = accuracy(&|q| m.predict(q).unwrap().0);
        assert!(
            adaptive >= single,
            "adaptive {adaptive} < domain {} alone {single}",
            m.domain
        );
    }
}

#[test]
fn prediction_is_independent_of_batch_composition() {
    let corpus = generate_synthetic(&SynthSpec {
        samples_per_class: 15,
        ..SynthSpec::default()
    })
    .unwrap();
    let segs: Vec<&Segment> = corpus.segments.iter().collect();
    let cfg = PipelineConfig {
        dim: 2048,
        ..PipelineConfig::default()
    };
    let system = fit_system(&segs, corpus.classes, &cfg).unwrap();
    let all = system.predict(&segs).unwrap();
    let odd: Vec<&Segment> = segs.iter().copied().skip(1).step_by(2).collect();
    let some = system.predict(&odd).unwrap();
    let mut reversed = odd.clone();
    reversed.reverse();
    let mut back = system.predict(&reversed).unwrap();
    back.reverse();
    assert_eq!(some, back);
    for rec in &some {
        assert_eq!(
            Some(rec),
            all.iter().find(|r| r.segment_id == rec.segment_id)
        );
    }
}
