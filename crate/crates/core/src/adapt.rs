//! Test-time adaptation.
//!
//! A query is compared against every domain descriptor. If its best
//! similarity is below the threshold `delta_star` it is treated as
//! out-of-distribution and the test-time model is the similarity-weighted
//! sum of all domain models. Otherwise only the domains whose similarity
//! reaches the threshold take part. The prediction is the class whose
//! ensembled prototype is most similar to the query.

use serde::{Deserialize, Serialize};

use crate::error::{HdError, Result};
use crate::hv::{kernels, similarity, Hypervector};
use crate::model::{argmax, DomainDescriptor, DomainModel};

pub const DEFAULT_DELTA_STAR: f64 = 0.65;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    pub delta_star: f64,
    /// Use raw (possibly negative) similarities as ensemble weights instead
    /// of clamping them at zero.
    #[serde(default)]
    pub allow_negative_weights: bool,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            delta_star: DEFAULT_DELTA_STAR,
            allow_negative_weights: false,
        }
    }
}

impl AdaptConfig {
    pub fn new(delta_star: f64) -> Result<Self> {
        let cfg = Self {
            delta_star,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.delta_star) {
            return Err(HdError::InvalidConfig(format!(
                "delta_star must lie in [-1, 1], got {}",
                self.delta_star
            )));
        }
        Ok(())
    }

    fn weight(&self, sim: f64) -> f64 {
        if self.allow_negative_weights {
            sim
        } else {
            sim.max(0.0)
        }
    }
}

/// Per-query ensembled model.
#[derive(Debug, Clone, PartialEq)]
pub struct TestTimeModel {
    pub classes: Vec<Hypervector>,
    /// `(domain, weight)` for every domain included in the sum.
    pub provenance: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceOutcome {
    pub prediction: usize,
    pub ood: bool,
    pub domain_similarities: Vec<f64>,
    pub class_scores: Vec<f64>,
}

/// Similarity of `q` to each descriptor, in descriptor order.
pub fn domain_similarities(q: &Hypervector, descriptors: &[DomainDescriptor]) -> Result<Vec<f64>> {
    if descriptors.is_empty() {
        return Err(HdError::Empty("domain descriptors"));
    }
    descriptors.iter().map(|d| similarity(q, &d.u)).collect()
}

/// Out-of-distribution iff the best similarity is strictly below the
/// threshold.
pub fn detect_ood(sims: &[f64], cfg: &AdaptConfig) -> bool {
    let best = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    best < cfg.delta_star
}

/// Domains and weights taking part in the ensemble.
pub fn ensemble_weights(sims: &[f64], ood: bool, cfg: &AdaptConfig) -> Result<Vec<(usize, f64)>> {
    let picked: Vec<(usize, f64)> = sims
        .iter()
        .enumerate()
        .filter(|(_, &s)| ood || s >= cfg.delta_star)
        .map(|(k, &s)| (k, cfg.weight(s)))
        .collect();
    if picked.is_empty() {
        return Err(HdError::NoQualifyingDomain {
            delta_star: cfg.delta_star,
        });
    }
    Ok(picked)
}

/// Materialises the test-time model as a weighted sum of domain models.
pub fn build_test_time_model(
    sims: &[f64],
    ood: bool,
    models: &[DomainModel],
    cfg: &AdaptConfig,
) -> Result<TestTimeModel> {
    let first = models.first().ok_or(HdError::Empty("domain models"))?;
    if sims.len() != models.len() {
        return Err(HdError::InvalidConfig(format!(
            "{} similarities for {} domain models",
            sims.len(),
            models.len()
        )));
    }
    let n = first.n_classes();
    let dim = first.dim();
    if let Some(m) = models.iter().find(|m| m.n_classes() != n || m.dim() != dim) {
        return Err(HdError::InvalidConfig(format!(
            "domain model {} has shape {}x{}, expected {}x{}",
            m.domain,
            m.n_classes(),
            m.dim(),
            n,
            dim
        )));
    }
    let provenance = ensemble_weights(sims, ood, cfg)?;
    let mut classes = vec![Hypervector::zeros(dim)?; n];
    for &(k, w) in &provenance {
        for (acc, c) in classes.iter_mut().zip(&models[k].classes) {
            acc.add_scaled(w, c)?;
        }
    }
    Ok(TestTimeModel {
        classes,
        provenance,
    })
}

/// Full inference through the materialised test-time model.
pub fn infer(
    q: &Hypervector,
    models: &[DomainModel],
    descriptors: &[DomainDescriptor],
    cfg: &AdaptConfig,
) -> Result<InferenceOutcome> {
    cfg.validate()?;
    let sims = domain_similarities(q, descriptors)?;
    let ood = detect_ood(&sims, cfg);
    let tt = build_test_time_model(&sims, ood, models, cfg)?;
    let class_scores = tt
        .classes
        .iter()
        .map(|c| similarity(q, c))
        .collect::<Result<Vec<_>>>()?;
    Ok(InferenceOutcome {
        prediction: argmax(&class_scores),
        ood,
        domain_similarities: sims,
        class_scores,
    })
}

/// Per-query quantities that do not depend on `delta_star`.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryStats {
    pub domain_similarities: Vec<f64>,
    /// `dots[k][t] = q . C_t^k`
    pub dots: Vec<Vec<f64>>,
    pub q_norm: f64,
}

/// Domain models and descriptors with the per-class Gram matrices of the
/// prototypes precomputed, so the score of an ensembled prototype
/// `sum_k w_k C_t^k` follows from `K` dot products per class without
/// materialising the sum.
#[derive(Debug, Clone)]
pub struct Ensemble {
    models: Vec<DomainModel>,
    descriptors: Vec<DomainDescriptor>,
    // gram[t][k][l] = C_t^k . C_t^l
    gram: Vec<Vec<Vec<f64>>>,
}

impl Ensemble {
    pub fn new(models: Vec<DomainModel>, descriptors: Vec<DomainDescriptor>) -> Result<Self> {
        let first = models.first().ok_or(HdError::Empty("domain models"))?;
        if models.len() != descriptors.len() {
            return Err(HdError::InvalidConfig(format!(
                "{} domain models but {} descriptors",
                models.len(),
                descriptors.len()
            )));
        }
        let n = first.n_classes();
        let dim = first.dim();
        for m in &models {
            if m.n_classes() != n || m.dim() != dim {
                return Err(HdError::InvalidConfig(format!(
                    "domain model {} has inconsistent shape",
                    m.domain
                )));
            }
        }
        if let Some(d) = descriptors.iter().find(|d| d.u.dim() != dim) {
            return Err(HdError::DimensionMismatch {
                left: d.u.dim(),
                right: dim,
            });
        }
        let k = models.len();
        let gram = (0..n)
            .map(|t| {
                (0..k)
                    .map(|a| {
                        (0..k)
                            .map(|b| {
                                kernels::dot(
                                    models[a].classes[t].as_slice(),
                                    models[b].classes[t].as_slice(),
                                )
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            models,
            descriptors,
            gram,
        })
    }

    pub fn models(&self) -> &[DomainModel] {
        &self.models
    }

    pub fn descriptors(&self) -> &[DomainDescriptor] {
        &self.descriptors
    }

    pub fn n_classes(&self) -> usize {
        self.models[0].n_classes()
    }

    pub fn dim(&self) -> usize {
        self.models[0].dim()
    }

    pub fn stats(&self, q: &Hypervector) -> Result<QueryStats> {
        if q.dim() != self.dim() {
            return Err(HdError::DimensionMismatch {
                left: q.dim(),
                right: self.dim(),
            });
        }
        let qs = q.as_slice();
        Ok(QueryStats {
            domain_similarities: domain_similarities(q, &self.descriptors)?,
            dots: self
                .models
                .iter()
                .map(|m| {
                    m.classes
                        .iter()
                        .map(|c| kernels::dot(qs, c.as_slice()))
                        .collect()
                })
                .collect(),
            q_norm: q.norm(),
        })
    }

    /// Inference outcome for precomputed stats under `cfg`.
    pub fn outcome(&self, stats: &QueryStats, cfg: &AdaptConfig) -> Result<InferenceOutcome> {
        let sims = &stats.domain_similarities;
        let ood = detect_ood(sims, cfg);
        let weights = ensemble_weights(sims, ood, cfg)?;
        let class_scores: Vec<f64> = (0..self.n_classes())
            .map(|t| {
                let num: f64 = weights.iter().map(|&(k, w)| w * stats.dots[k][t]).sum();
                let g = &self.gram[t];
                let mut sq = 0.0;
                for &(a, wa) in &weights {
                    for &(b, wb) in &weights {
                        sq += wa * wb * g[a][b];
                    }
                }
                let denom = sq.max(0.0).sqrt() * stats.q_norm;
                if denom == 0.0 {
                    0.0
                } else {
                    (num / denom).clamp(-1.0, 1.0)
                }
            })
            .collect();
        Ok(InferenceOutcome {
            prediction: argmax(&class_scores),
            ood,
            domain_similarities: sims.clone(),
            class_scores,
        })
    }

    pub fn infer(&self, q: &Hypervector, cfg: &AdaptConfig) -> Result<InferenceOutcome> {
        cfg.validate()?;
        self.outcome(&self.stats(q)?, cfg)
    }
}
