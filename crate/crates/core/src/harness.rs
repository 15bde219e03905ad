//! End-to-end training and evaluation: fit the encoder, train domain models
//! and descriptors, run adaptive inference, and report accuracy and timing
//! under leave-one-domain-out or k-fold protocols.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapt::{AdaptConfig, Ensemble, InferenceOutcome, QueryStats};
use crate::data::{make_kfold_splits, make_lodo_splits, Corpus, SplitKind, SplitPlan};
use crate::encoder::{fit_encoder, EncodedSample, Encoder, Segment, DEFAULT_NGRAM};
use crate::error::{HdError, Result};
use crate::hv::DEFAULT_DIM;
use crate::model::{
    build_descriptors, train_domain_models, train_model, DomainModel, TrainConfig, DEFAULT_EPOCHS,
    DEFAULT_ETA,
};

/// Which classifier to train.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Per-domain models, descriptors and similarity-weighted test-time
    /// ensembling.
    Adaptive,
    /// One model trained on all source domains merged.
    Pooled,
}

/// Every knob of a run. Echoed verbatim in reports so a run can be repeated
/// from its output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub dim: usize,
    pub ngram: usize,
    pub eta: f64,
    pub epochs: usize,
    pub delta_star: f64,
    pub seed: u64,
    pub allow_negative_weights: bool,
    pub method: Method,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            dim: DEFAULT_DIM,
            ngram: DEFAULT_NGRAM,
            eta: DEFAULT_ETA,
            epochs: DEFAULT_EPOCHS,
            delta_star: crate::adapt::DEFAULT_DELTA_STAR,
            seed: 0,
            allow_negative_weights: false,
            method: Method::Adaptive,
        }
    }
}

impl PipelineConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            eta: self.eta,
            epochs: self.epochs,
            seed: self.seed,
        }
    }

    pub fn adapt_config(&self) -> AdaptConfig {
        AdaptConfig {
            delta_star: self.delta_star,
            allow_negative_weights: self.allow_negative_weights,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(HdError::InvalidDimension(0));
        }
        if self.ngram == 0 {
            return Err(HdError::InvalidConfig(
                "n-gram size must be at least 1".into(),
            ));
        }
        self.train_config().validate()?;
        self.adapt_config().validate()
    }
}

#[derive(Debug, Clone)]
pub enum Classifier {
    Adaptive(Ensemble),
    Pooled(DomainModel),
}

/// A trained encoder plus classifier.
#[derive(Debug, Clone)]
pub struct TrainedSystem {
    pub config: PipelineConfig,
    pub encoder: Encoder,
    /// Original domain id of each dense domain index used by the models.
    pub domain_ids: Vec<usize>,
    pub n_classes: usize,
    pub classifier: Classifier,
}

/// Fits the full pipeline on `train`.
pub fn fit_system(
    train: &[&Segment],
    n_classes: usize,
    config: &PipelineConfig,
) -> Result<TrainedSystem> {
    config.validate()?;
    let encoder = fit_encoder(train.iter().copied(), config.dim, config.ngram, config.seed)?;
    let mut encoded = encoder.encode_batch(train)?;
    fit_encoded(encoder, &mut encoded, n_classes, config)
}

fn fit_encoded(
    encoder: Encoder,
    encoded: &mut [EncodedSample],
    n_classes: usize,
    config: &PipelineConfig,
) -> Result<TrainedSystem> {
    let mut domain_ids: Vec<usize> = encoded.iter().map(|s| s.domain).collect();
    domain_ids.sort_unstable();
    domain_ids.dedup();
    for s in encoded.iter_mut() {
        s.domain = domain_ids.binary_search(&s.domain).expect("domain present");
    }
    let tc = config.train_config();
    let classifier = match config.method {
        Method::Adaptive => {
            let models = train_domain_models(encoded, domain_ids.len(), n_classes, &tc)?;
            let descriptors = build_descriptors(encoded, domain_ids.len())?;
            Classifier::Adaptive(Ensemble::new(models, descriptors)?)
        }
        Method::Pooled => {
            let all: Vec<&EncodedSample> = encoded.iter().collect();
            Classifier::Pooled(train_model(0, &all, n_classes, &tc, 0)?)
        }
    };
    Ok(TrainedSystem {
        config: *config,
        encoder,
        domain_ids,
        n_classes,
        classifier,
    })
}

impl TrainedSystem {
    pub fn predict_encoded(
        &self,
        q: &crate::hv::Hypervector,
        adapt: &AdaptConfig,
    ) -> Result<InferenceOutcome> {
        match &self.classifier {
            Classifier::Adaptive(ens) => ens.infer(q, adapt),
            Classifier::Pooled(m) => {
                let (prediction, class_scores) = m.predict(q)?;
                Ok(InferenceOutcome {
                    prediction,
                    ood: false,
                    domain_similarities: Vec::new(),
                    class_scores,
                })
            }
        }
    }

    /// Encodes and classifies `segments` in parallel, in input order.
    pub fn predict(&self, segments: &[&Segment]) -> Result<Vec<SampleRecord>> {
        let adapt = self.config.adapt_config();
        adapt.validate()?;
        segments
            .par_iter()
            .map(|s| {
                let q = self.encoder.encode_segment(s)?;
                let out = self.predict_encoded(&q.hv, &adapt)?;
                Ok(SampleRecord::new(s, out))
            })
            .collect()
    }
}

/// One per-sample prediction line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub segment_id: u64,
    pub domain: usize,
    pub true_label: Option<usize>,
    pub prediction: usize,
    pub ood: bool,
    pub domain_similarities: Vec<f64>,
    pub class_scores: Vec<f64>,
}

impl SampleRecord {
    fn new(s: &Segment, out: InferenceOutcome) -> Self {
        Self {
            segment_id: s.id,
            domain: s.domain,
            true_label: Some(s.label),
            prediction: out.prediction,
            ood: out.ood,
            domain_similarities: out.domain_similarities,
            class_scores: out.class_scores,
        }
    }

    pub fn is_correct(&self) -> bool {
        self.true_label == Some(self.prediction)
    }
}

/// Result of one train/test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    #[serde(flatten)]
    pub kind: SplitKind,
    pub held_out: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub ood_rate: f64,
    /// Source domain ids in the order of each record's similarity list.
    pub source_domains: Vec<usize>,
    pub train_secs: f64,
    pub infer_secs: f64,
    #[serde(skip)]
    pub records: Vec<SampleRecord>,
}

/// Machine-readable summary of an evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub corpus: String,
    pub protocol: String,
    pub config: PipelineConfig,
    pub folds: Option<usize>,
    pub fold_seed: Option<u64>,
    pub splits: Vec<SplitReport>,
    pub mean_accuracy: f64,
    pub total_correct: usize,
    pub total: usize,
    pub mean_ood_rate: f64,
    pub train_secs: f64,
    pub infer_secs: f64,
    /// Test samples classified per second of inference time.
    pub throughput: f64,
}

impl RunReport {
    fn from_splits(
        corpus: &Corpus,
        protocol: &str,
        config: PipelineConfig,
        splits: Vec<SplitReport>,
    ) -> Self {
        let (folds, fold_seed) = match splits.first().map(|s| s.kind) {
            Some(SplitKind::KFold { k }) => (Some(k), Some(config.seed)),
            _ => (None, None),
        };
        let n = splits.len().max(1) as f64;
        let total: usize = splits.iter().map(|s| s.n_test).sum();
        let infer_secs: f64 = splits.iter().map(|s| s.infer_secs).sum();
        Self {
            corpus: corpus.name.clone(),
            protocol: protocol.to_string(),
            config,
            folds,
            fold_seed,
            mean_accuracy: splits.iter().map(|s| s.accuracy).sum::<f64>() / n,
            total_correct: splits.iter().map(|s| s.correct).sum(),
            total,
            mean_ood_rate: splits.iter().map(|s| s.ood_rate).sum::<f64>() / n,
            train_secs: splits.iter().map(|s| s.train_secs).sum(),
            throughput: if infer_secs > 0.0 {
                total as f64 / infer_secs
            } else {
                0.0
            },
            infer_secs,
            splits,
        }
    }

    /// Accuracy-related fields only, with timings zeroed, for comparing
    /// reruns.
    pub fn without_timings(&self) -> RunReport {
        let mut r = self.clone();
        r.train_secs = 0.0;
        r.infer_secs = 0.0;
        r.throughput = 0.0;
        for s in &mut r.splits {
            s.train_secs = 0.0;
            s.infer_secs = 0.0;
        }
        r
    }

    pub fn records(&self) -> impl Iterator<Item = (usize, &SampleRecord)> {
        self.splits
            .iter()
            .enumerate()
            .flat_map(|(i, s)| s.records.iter().map(move |r| (i, r)))
    }
}

fn split_report(
    plan: &SplitPlan,
    system: &TrainedSystem,
    records: Vec<SampleRecord>,
    train_secs: f64,
    infer_secs: f64,
) -> SplitReport {
    let correct = records.iter().filter(|r| r.is_correct()).count();
    let ood = records.iter().filter(|r| r.ood).count();
    let n_test = records.len();
    let frac = |x: usize| {
        if n_test == 0 {
            0.0
        } else {
            x as f64 / n_test as f64
        }
    };
    SplitReport {
        kind: plan.kind,
        held_out: plan.held_out,
        n_train: plan.train.len(),
        n_test,
        correct,
        accuracy: frac(correct),
        ood_rate: frac(ood),
        source_domains: system.domain_ids.clone(),
        train_secs,
        infer_secs,
        records,
    }
}

/// Trains on `plan.train` and classifies `plan.test`.
pub fn run_split(
    corpus: &Corpus,
    plan: &SplitPlan,
    config: &PipelineConfig,
) -> Result<SplitReport> {
    let train = corpus.select(&plan.train);
    let test = corpus.select(&plan.test);
    let t0 = Instant::now();
    let system = fit_system(&train, corpus.classes, config)?;
    let train_secs = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let records = system.predict(&test)?;
    let infer_secs = t1.elapsed().as_secs_f64();
    Ok(split_report(plan, &system, records, train_secs, infer_secs))
}

pub fn evaluate(
    corpus: &Corpus,
    plans: &[SplitPlan],
    protocol: &str,
    config: &PipelineConfig,
) -> Result<RunReport> {
    config.validate()?;
    let splits = plans
        .iter()
        .map(|p| run_split(corpus, p, config))
        .collect::<Result<Vec<_>>>()?;
    Ok(RunReport::from_splits(corpus, protocol, *config, splits))
}

/// Leave-one-domain-out evaluation.
pub fn evaluate_lodo(corpus: &Corpus, config: &PipelineConfig) -> Result<RunReport> {
    evaluate(corpus, &make_lodo_splits(corpus)?, "lodo", config)
}

/// k-fold evaluation; folds are seeded from `config.seed`.
pub fn evaluate_kfold(corpus: &Corpus, k: usize, config: &PipelineConfig) -> Result<RunReport> {
    evaluate(
        corpus,
        &make_kfold_splits(corpus, k, config.seed)?,
        "kfold",
        config,
    )
}

/// One row of a threshold sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub delta_star: f64,
    pub mean_accuracy: f64,
    pub split_accuracy: Vec<f64>,
    pub mean_ood_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub corpus: String,
    pub config: PipelineConfig,
    pub rows: Vec<SweepRow>,
    /// Largest domain similarity seen over all test queries.
    pub max_similarity: f64,
}

/// Leave-one-domain-out accuracy for every threshold in `grid`. Models are
/// trained once per split; only inference depends on the threshold.
pub fn sweep_delta(corpus: &Corpus, grid: &[f64], config: &PipelineConfig) -> Result<SweepReport> {
    if grid.is_empty() {
        return Err(HdError::InvalidConfig("empty delta_star grid".into()));
    }
    let mut config = *config;
    config.method = Method::Adaptive;
    config.validate()?;
    let cfgs = grid
        .iter()
        .map(|&d| {
            let c = AdaptConfig {
                delta_star: d,
                allow_negative_weights: config.allow_negative_weights,
            };
            c.validate().map(|_| c)
        })
        .collect::<Result<Vec<_>>>()?;

    let plans = make_lodo_splits(corpus)?;
    // per split, per grid point: (correct, ood, n)
    let mut tallies = vec![vec![(0usize, 0usize, 0usize); grid.len()]; plans.len()];
    let mut max_similarity = f64::NEG_INFINITY;
    for (p, plan) in plans.iter().enumerate() {
        let system = fit_system(&corpus.select(&plan.train), corpus.classes, &config)?;
        let Classifier::Adaptive(ens) = &system.classifier else {
            unreachable!("sweep always trains the adaptive method")
        };
        let test = corpus.select(&plan.test);
        let stats: Vec<(usize, QueryStats)> = test
            .par_iter()
            .map(|s| {
                let q = system.encoder.encode_segment(s)?;
                Ok((s.label, ens.stats(&q.hv)?))
            })
            .collect::<Result<_>>()?;
        for (label, st) in &stats {
            for &v in &st.domain_similarities {
                max_similarity = max_similarity.max(v);
            }
            for (g, cfg) in cfgs.iter().enumerate() {
                let out = ens.outcome(st, cfg)?;
                let t = &mut tallies[p][g];
                t.0 += usize::from(out.prediction == *label);
                t.1 += usize::from(out.ood);
                t.2 += 1;
            }
        }
    }

    let rows = grid
        .iter()
        .enumerate()
        .map(|(g, &delta_star)| {
            let acc: Vec<f64> = tallies
                .iter()
                .map(|t| {
                    if t[g].2 == 0 {
                        0.0
                    } else {
                        t[g].0 as f64 / t[g].2 as f64
                    }
                })
                .collect();
            let ood: Vec<f64> = tallies
                .iter()
                .map(|t| {
                    if t[g].2 == 0 {
                        0.0
                    } else {
                        t[g].1 as f64 / t[g].2 as f64
                    }
                })
                .collect();
            let n = acc.len() as f64;
            SweepRow {
                delta_star,
                mean_accuracy: acc.iter().sum::<f64>() / n,
                split_accuracy: acc,
                mean_ood_rate: ood.iter().sum::<f64>() / n,
            }
        })
        .collect();
    Ok(SweepReport {
        corpus: corpus.name.clone(),
        config,
        rows,
        max_similarity,
    })
}

/// One row of the scaling benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub fraction: f64,
    pub segments: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub train_secs: f64,
    pub infer_secs: f64,
    pub train_throughput: f64,
    pub infer_throughput: f64,
}

/// Train and inference wall-clock on nested seeded subsamples of the
/// corpus. Each fraction trains on all domains but the lowest-numbered one
/// and classifies that one; the best of `repeats` timings is kept.
pub fn bench_scaling(
    corpus: &Corpus,
    fractions: &[f64],
    repeats: usize,
    config: &PipelineConfig,
) -> Result<Vec<BenchRow>> {
    config.validate()?;
    if fractions.is_empty() {
        return Err(HdError::InvalidConfig("no fractions given".into()));
    }
    if let Some(f) = fractions.iter().find(|&&f| !(f > 0.0 && f <= 1.0)) {
        return Err(HdError::InvalidConfig(format!(
            "fraction must lie in (0, 1], got {f}"
        )));
    }
    let repeats = repeats.max(1);
    fractions
        .iter()
        .map(|&fraction| {
            let sub = corpus.subsample(fraction, config.seed)?;
            let plan = make_lodo_splits(&sub)?.swap_remove(0);
            let mut best = (f64::INFINITY, f64::INFINITY);
            for _ in 0..repeats {
                let r = run_split(&sub, &plan, config)?;
                best.0 = best.0.min(r.train_secs);
                best.1 = best.1.min(r.infer_secs);
            }
            let rate = |n: usize, secs: f64| if secs > 0.0 { n as f64 / secs } else { 0.0 };
            Ok(BenchRow {
                fraction,
                segments: sub.len(),
                n_train: plan.train.len(),
                n_test: plan.test.len(),
                train_secs: best.0,
                infer_secs: best.1,
                train_throughput: rate(plan.train.len(), best.0),
                infer_throughput: rate(plan.test.len(), best.1),
            })
        })
        .collect()
}

/// Writes per-sample predictions as CSV. List-valued columns are joined
/// with `;`.
pub fn write_predictions_csv<'a, W, I>(records: I, writer: W) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = (usize, &'a SampleRecord)>,
{
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "split",
        "segment_id",
        "domain",
        "true_label",
        "prediction",
        "ood",
        "domain_similarities",
        "class_scores",
    ])?;
    let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(";");
    for (split, r) in records {
        w.write_record([
            split.to_string(),
            r.segment_id.to_string(),
            r.domain.to_string(),
            r.true_label.map(|l| l.to_string()).unwrap_or_default(),
            r.prediction.to_string(),
            r.ood.to_string(),
            join(&r.domain_similarities),
            join(&r.class_scores),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes per-sample predictions as line-delimited JSON.
pub fn write_predictions_jsonl<'a, W, I>(records: I, mut writer: W) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = (usize, &'a SampleRecord)>,
{
    #[derive(Serialize)]
    struct Line<'r> {
        split: usize,
        #[serde(flatten)]
        record: &'r SampleRecord,
    }
    for (split, record) in records {
        serde_json::to_writer(&mut writer, &Line { split, record })?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}
