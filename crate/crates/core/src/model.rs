//! Domain-specific prototype models and domain descriptors.
//!
//! Every source domain gets its own set of class prototypes, trained with a
//! similarity-weighted perceptron rule: on a misprediction the true class
//! moves towards the sample by `eta * (1 - sim)` and the predicted class
//! moves away by the same kind of factor, so samples that the model already
//! represents well contribute little. A descriptor per domain is the plain
//! bundle of all of its encoded samples.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::EncodedSample;
use crate::error::{HdError, Result};
use crate::hv::{kernels, HvRng, Hypervector, Stream};

pub const DEFAULT_ETA: f64 = 0.05;
pub const DEFAULT_EPOCHS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub eta: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eta: DEFAULT_ETA,
            epochs: DEFAULT_EPOCHS,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(HdError::InvalidConfig(format!(
                "learning rate must be finite and positive, got {}",
                self.eta
            )));
        }
        if self.epochs == 0 {
            return Err(HdError::InvalidConfig("epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Class prototypes of one domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainModel {
    pub domain: usize,
    pub classes: Vec<Hypervector>,
}

/// What a single call to [`DomainModel::update_on_sample`] did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Update {
    /// Predicted correctly; nothing changed.
    None,
    /// The true class had no evidence yet and was seeded with the sample.
    Seeded,
    /// Full corrective update of the true and the mispredicted class.
    Corrected { predicted: usize },
}

impl DomainModel {
    /// `classes` all-zero prototypes of dimension `dim`.
    pub fn zeros(domain: usize, classes: usize, dim: usize) -> Result<Self> {
        if classes == 0 {
            return Err(HdError::Empty("classes"));
        }
        Ok(Self {
            domain,
            classes: (0..classes)
                .map(|_| Hypervector::zeros(dim))
                .collect::<Result<_>>()?,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn dim(&self) -> usize {
        self.classes[0].dim()
    }

    /// Cosine score of `q` against every class and the argmax (lowest
    /// index wins ties).
    pub fn predict(&self, q: &Hypervector) -> Result<(usize, Vec<f64>)> {
        let scores = self
            .classes
            .iter()
            .map(|c| crate::hv::similarity(q, c))
            .collect::<Result<Vec<_>>>()?;
        Ok((argmax(&scores), scores))
    }

    /// One step of the similarity-weighted perceptron rule.
    ///
    /// A class whose prototype is still all-zero is seeded with
    /// `eta * h` (the rule with `sim = 0`) without penalising the predicted
    /// class: with no evidence for the true class, the misprediction says
    /// nothing about the other prototype.
    pub fn update_on_sample(&mut self, h: &Hypervector, label: usize, eta: f64) -> Result<Update> {
        let n = self.n_classes();
        if label >= n {
            return Err(HdError::LabelOutOfRange { label, classes: n });
        }
        if h.dim() != self.dim() {
            return Err(HdError::DimensionMismatch {
                left: h.dim(),
                right: self.dim(),
            });
        }
        let norms: Vec<f64> = self.classes.iter().map(Hypervector::norm).collect();
        let mut trainer = Trainer { model: self, norms };
        Ok(trainer.step(h, h.norm(), label, eta))
    }
}

/// Lowest-index argmax.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Caches prototype norms while a model is being trained so each sample
/// costs one dot product per class.
struct Trainer<'a> {
    model: &'a mut DomainModel,
    norms: Vec<f64>,
}

impl Trainer<'_> {
    fn cos(&self, dot: f64, h_norm: f64, class: usize) -> f64 {
        let cn = self.norms[class];
        if cn == 0.0 || h_norm == 0.0 {
            0.0
        } else {
            (dot / (cn * h_norm)).clamp(-1.0, 1.0)
        }
    }

    fn step(&mut self, h: &Hypervector, h_norm: f64, label: usize, eta: f64) -> Update {
        let hs = h.as_slice();
        let sims: Vec<f64> = self
            .model
            .classes
            .iter()
            .enumerate()
            .map(|(t, c)| self.cos(kernels::dot(hs, c.as_slice()), h_norm, t))
            .collect();

        if self.norms[label] == 0.0 {
            let c = self.model.classes[label].as_mut_slice();
            kernels::axpy(eta, hs, c);
            self.norms[label] = kernels::dot(c, c).sqrt();
            return Update::Seeded;
        }

        let predicted = argmax(&sims);
        if predicted == label {
            return Update::None;
        }
        for (class, sign) in [(label, 1.0), (predicted, -1.0)] {
            let c = self.model.classes[class].as_mut_slice();
            kernels::axpy(sign * eta * (1.0 - sims[class]), hs, c);
            self.norms[class] = kernels::dot(c, c).sqrt();
        }
        Update::Corrected { predicted }
    }
}

/// Trains one model on `samples` (domain ids ignored). `stream_index`
/// selects the shuffle stream so different models shuffle independently.
pub fn train_model(
    domain: usize,
    samples: &[&EncodedSample],
    n_classes: usize,
    cfg: &TrainConfig,
    stream_index: u64,
) -> Result<DomainModel> {
    cfg.validate()?;
    let first = samples.first().ok_or(HdError::EmptyDomains(vec![domain]))?;
    let dim = first.hv.dim();
    for s in samples {
        if s.label >= n_classes {
            return Err(HdError::LabelOutOfRange {
                label: s.label,
                classes: n_classes,
            });
        }
        if s.hv.dim() != dim {
            return Err(HdError::DimensionMismatch {
                left: s.hv.dim(),
                right: dim,
            });
        }
    }

    let mut model = DomainModel::zeros(domain, n_classes, dim)?;
    let sample_norms: Vec<f64> = samples.iter().map(|s| s.hv.norm()).collect();
    let mut trainer = Trainer {
        norms: vec![0.0; n_classes],
        model: &mut model,
    };
    let shuffle = HvRng::new(cfg.seed, Stream::Shuffle);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = shuffle.at((stream_index << 32) | epoch as u64);
        order.shuffle(&mut rng);
        let mut changed = false;
        for &i in &order {
            let s = samples[i];
            changed |= trainer.step(&s.hv, sample_norms[i], s.label, cfg.eta) != Update::None;
        }
        // a pass without updates leaves the model fixed for every later pass
        if !changed {
            break;
        }
    }
    Ok(model)
}

fn partition(samples: &[EncodedSample], n_domains: usize) -> Result<Vec<Vec<&EncodedSample>>> {
    if n_domains == 0 {
        return Err(HdError::Empty("domains"));
    }
    let mut parts: Vec<Vec<&EncodedSample>> = vec![Vec::new(); n_domains];
    for s in samples {
        parts
            .get_mut(s.domain)
            .ok_or(HdError::DomainOutOfRange {
                domain: s.domain,
                domains: n_domains,
            })?
            .push(s);
    }
    let empty: Vec<usize> = parts
        .iter()
        .enumerate()
        .filter(|(_, p)| p.is_empty())
        .map(|(k, _)| k)
        .collect();
    if !empty.is_empty() {
        return Err(HdError::EmptyDomains(empty));
    }
    Ok(parts)
}

/// Trains one model per domain `0..n_domains`, in parallel across domains.
pub fn train_domain_models(
    samples: &[EncodedSample],
    n_domains: usize,
    n_classes: usize,
    cfg: &TrainConfig,
) -> Result<Vec<DomainModel>> {
    cfg.validate()?;
    let parts = partition(samples, n_domains)?;
    parts
        .par_iter()
        .enumerate()
        .map(|(k, part)| train_model(k, part, n_classes, cfg, k as u64))
        .collect()
}

/// Bundle of all encoded samples of one domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainDescriptor {
    pub domain: usize,
    pub u: Hypervector,
    pub count: usize,
}

/// One descriptor per domain `0..n_domains`. Each sum runs in sample order.
pub fn build_descriptors(
    samples: &[EncodedSample],
    n_domains: usize,
) -> Result<Vec<DomainDescriptor>> {
    let parts = partition(samples, n_domains)?;
    parts
        .par_iter()
        .enumerate()
        .map(|(k, part)| {
            let u = crate::hv::bundle(part.iter().map(|s| &s.hv))?;
            Ok(DomainDescriptor {
                domain: k,
                u,
                count: part.len(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hv::{similarity, HvRng, Stream};

    fn hv(v: &[f64]) -> Hypervector {
        Hypervector::from_vec(v.to_vec()).unwrap()
    }

    fn sample(v: Hypervector, domain: usize, label: usize) -> EncodedSample {
        EncodedSample {
            hv: v,
            domain,
            label,
        }
    }

    #[test]
    fn predict_identity_and_zero() {
        let q = hv(&[1.0, 0.0, 0.0]);
        let m = DomainModel {
            domain: 0,
            classes: vec![q.clone(), hv(&[0.0, 1.0, 0.0])],
        };
        let (c, s) = m.predict(&q).unwrap();
        assert_eq!(c, 0);
        assert!((s[0] - 1.0).abs() < 1e-12 && s[1].abs() < 1e-12);

        let z = DomainModel::zeros(0, 3, 3).unwrap();
        assert_eq!(z.predict(&q).unwrap(), (0, vec![0.0; 3]));
    }

    #[test]
    fn predict_small_hand_example() {
        // q = [1, 2, 0, -1]
        // C0 = [1, 0, 0, 0]   -> 1 / (sqrt6 * 1)      = 0.408
        // C1 = [0, 1, 1, 0]   -> 2 / (sqrt6 * sqrt2)  = 0.577
        // C2 = [1, 1, 0, -1]  -> 4 / (sqrt6 * sqrt3)  = 0.943
        let q = hv(&[1.0, 2.0, 0.0, -1.0]);
        let m = DomainModel {
            domain: 0,
            classes: vec![
                hv(&[1.0, 0.0, 0.0, 0.0]),
                hv(&[0.0, 1.0, 1.0, 0.0]),
                hv(&[1.0, 1.0, 0.0, -1.0]),
            ],
        };
        let (c, s) = m.predict(&q).unwrap();
        assert_eq!(c, 2);
        let s6 = 6f64.sqrt();
        let want = [1.0 / s6, 2.0 / (s6 * 2f64.sqrt()), 4.0 / (s6 * 3f64.sqrt())];
        for (a, b) in s.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn update_hand_example() {
        // true class 0 = [0,1], predicted class 1 = [1,0], h = [1,0]
        let mut m = DomainModel {
            domain: 0,
            classes: vec![hv(&[0.0, 1.0]), hv(&[1.0, 0.0])],
        };
        let up = m.update_on_sample(&hv(&[1.0, 0.0]), 0, 0.1).unwrap();
        assert_eq!(up, Update::Corrected { predicted: 1 });
        assert!((m.classes[0].as_slice()[0] - 0.1).abs() < 1e-15);
        assert_eq!(m.classes[0].as_slice()[1], 1.0);
        assert_eq!(m.classes[1], hv(&[1.0, 0.0]));
    }

    #[test]
    fn correct_prediction_is_noop() {
        let mut m = DomainModel {
            domain: 0,
            classes: vec![hv(&[1.0, 0.2]), hv(&[0.0, 1.0])],
        };
        let before = m.clone();
        assert_eq!(
            m.update_on_sample(&hv(&[1.0, 0.0]), 0, 0.5).unwrap(),
            Update::None
        );
        assert_eq!(m, before);
        assert!(matches!(
            m.update_on_sample(&hv(&[1.0, 0.0]), 2, 0.5),
            Err(HdError::LabelOutOfRange {
                label: 2,
                classes: 2
            })
        ));
    }

    #[test]
    fn empty_true_class_is_seeded() {
        let mut m = DomainModel::zeros(0, 2, 2).unwrap();
        assert_eq!(
            m.update_on_sample(&hv(&[2.0, 0.0]), 1, 0.5).unwrap(),
            Update::Seeded
        );
        assert_eq!(m.classes[1], hv(&[1.0, 0.0]));
        assert!(m.classes[0].is_zero());
    }

    #[test]
    fn one_sample_per_class_gives_proportional_prototypes() {
        let rng = HvRng::new(5, Stream::Synth);
        let samples: Vec<_> = (0..4)
            .map(|c| sample(rng.bipolar(c, 2048).unwrap(), 0, c as usize))
            .collect();
        let refs: Vec<&EncodedSample> = samples.iter().collect();
        let cfg = TrainConfig::default();
        let m = train_model(0, &refs, 4, &cfg, 0).unwrap();
        for s in &samples {
            assert_eq!(m.classes[s.label], s.hv.scaled(cfg.eta));
            assert_eq!(m.predict(&s.hv).unwrap().0, s.label);
        }
    }

    fn clusters(domains: usize, per_class: usize, dim: usize, seed: u64) -> Vec<EncodedSample> {
        use rand::Rng;
        let centers = HvRng::new(seed, Stream::Synth);
        let mut out = Vec::new();
        for k in 0..domains {
            for c in 0..2 {
                let center = centers.bipolar((k * 2 + c) as u64, dim).unwrap();
                for i in 0..per_class {
                    let mut rng = centers.at(1_000_000 + (k * 1000 + c * 100 + i) as u64);
                    let v: Vec<f64> = center
                        .as_slice()
                        .iter()
                        .map(|&x| if rng.random::<f64>() < 0.3 { -x } else { x })
                        .collect();
                    out.push(sample(Hypervector::from_vec(v).unwrap(), k, c));
                }
            }
        }
        out
    }

    #[test]
    fn separable_clusters_train_to_high_accuracy() {
        let samples = clusters(3, 40, 1024, 2);
        let cfg = TrainConfig::default();
        let models = train_domain_models(&samples, 3, 2, &cfg).unwrap();
        let correct = samples
            .iter()
            .filter(|s| models[s.domain].predict(&s.hv).unwrap().0 == s.label)
            .count();
        assert!(correct as f64 / samples.len() as f64 >= 0.95);
        assert_eq!(models, train_domain_models(&samples, 3, 2, &cfg).unwrap());
    }

    #[test]
    fn training_is_independent_of_worker_count() {
        let samples = clusters(3, 20, 512, 8);
        let cfg = TrainConfig::default();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    (
                        train_domain_models(&samples, 3, 2, &cfg).unwrap(),
                        build_descriptors(&samples, 3).unwrap(),
                    )
                })
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn empty_domain_is_reported() {
        let samples = vec![sample(hv(&[1.0]), 0, 0), sample(hv(&[1.0]), 2, 0)];
        let err = train_domain_models(&samples, 4, 1, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, HdError::EmptyDomains(ref d) if d == &vec![1, 3]));
        assert!(matches!(
            build_descriptors(&samples, 4),
            Err(HdError::EmptyDomains(_))
        ));
        assert!(matches!(
            build_descriptors(&samples, 2),
            Err(HdError::DomainOutOfRange {
                domain: 2,
                domains: 2
            })
        ));
    }

    #[test]
    fn descriptor_cases() {
        let h = hv(&[1.0, -2.0]);
        let d = build_descriptors(&[sample(h.clone(), 0, 0)], 1).unwrap();
        assert_eq!(d[0].u, h);
        assert_eq!(d[0].count, 1);

        let samples = clusters(2, 10, 256, 4);
        let doubled: Vec<_> = samples.iter().chain(samples.iter()).cloned().collect();
        let single = build_descriptors(&samples, 2).unwrap();
        let double = build_descriptors(&doubled, 2).unwrap();
        for (a, b) in single.iter().zip(&double) {
            assert_eq!(a.u.scaled(2.0), b.u);
            for s in &samples {
                let sa = similarity(&s.hv, &a.u).unwrap();
                let sb = similarity(&s.hv, &b.u).unwrap();
                assert!((sa - sb).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn invalid_train_config() {
        for cfg in [
            TrainConfig {
                eta: 0.0,
                ..Default::default()
            },
            TrainConfig {
                eta: f64::NAN,
                ..Default::default()
            },
            TrainConfig {
                epochs: 0,
                ..Default::default()
            },
        ] {
            assert!(matches!(cfg.validate(), Err(HdError::InvalidConfig(_))));
        }
    }
}
