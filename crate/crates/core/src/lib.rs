//! Hyperdimensional domain-adaptive classification of multi-sensor time
//! series.
//!
//! The pipeline encodes each segment into a hypervector ([`encoder`]),
//! trains one prototype model and one descriptor per source domain
//! ([`model`]), and at inference time builds a per-query ensemble of the
//! domain models weighted by how similar the query is to each domain
//! ([`adapt`]). [`data`] and [`harness`] provide corpus I/O, the
//! leave-one-domain-out and k-fold protocols, a synthetic
//! distribution-shift generator and timing benchmarks.

pub mod adapt;
pub mod container;
pub mod data;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod hv;
pub mod model;

pub use adapt::{
    build_test_time_model, detect_ood, domain_similarities, infer, AdaptConfig, Ensemble,
    InferenceOutcome, TestTimeModel,
};
pub use container::ModelContainer;
pub use data::{
    generate_synthetic, load_corpus, make_kfold_splits, make_lodo_splits, Corpus, CorpusSchema,
    SplitKind, SplitPlan, SynthSpec,
};
pub use encoder::{fit_encoder, EncodedSample, Encoder, EncoderConfig, Segment};
pub use error::{HdError, Result};
pub use harness::{Method, PipelineConfig, RunReport, TrainedSystem};
pub use hv::{bind, bundle, permute, random_bipolar, similarity, HvRng, Hypervector, Stream};
pub use model::{
    build_descriptors, train_domain_models, DomainDescriptor, DomainModel, TrainConfig,
};
