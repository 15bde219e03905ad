//! Versioned JSON container for a trained system. Holds everything needed
//! to reproduce inference bit-for-bit: encoder anchors, signatures and
//! ranges, prototypes, descriptors and the full configuration including
//! seeds.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapt::Ensemble;
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{HdError, Result};
use crate::harness::{Classifier, Method, PipelineConfig, TrainedSystem};
use crate::model::{DomainDescriptor, DomainModel};

pub const FORMAT: &str = "hdadapt-model";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelContainer {
    pub format: String,
    pub version: u32,
    pub config: PipelineConfig,
    pub n_classes: usize,
    pub domain_ids: Vec<usize>,
    pub encoder: EncoderConfig,
    pub models: Vec<DomainModel>,
    pub descriptors: Vec<DomainDescriptor>,
}

impl From<&TrainedSystem> for ModelContainer {
    fn from(sys: &TrainedSystem) -> Self {
        let (models, descriptors) = match &sys.classifier {
            Classifier::Adaptive(e) => (e.models().to_vec(), e.descriptors().to_vec()),
            Classifier::Pooled(m) => (vec![m.clone()], Vec::new()),
        };
        Self {
            format: FORMAT.into(),
            version: VERSION,
            config: sys.config,
            n_classes: sys.n_classes,
            domain_ids: sys.domain_ids.clone(),
            encoder: sys.encoder.config().clone(),
            models,
            descriptors,
        }
    }
}

impl ModelContainer {
    pub fn into_system(self) -> Result<TrainedSystem> {
        if self.format != FORMAT {
            return Err(HdError::Container(format!(
                "unknown format `{}`",
                self.format
            )));
        }
        if self.version != VERSION {
            return Err(HdError::Container(format!(
                "unsupported version {} (expected {VERSION})",
                self.version
            )));
        }
        self.config.validate()?;
        let encoder = Encoder::from_config(self.encoder)?;
        if self.models.iter().any(|m| m.n_classes() != self.n_classes) {
            return Err(HdError::Container(
                "prototype count differs from n_classes".into(),
            ));
        }
        let classifier = match self.config.method {
            Method::Adaptive => {
                if self.domain_ids.len() != self.models.len() {
                    return Err(HdError::Container(
                        "domain id list does not match models".into(),
                    ));
                }
                Classifier::Adaptive(Ensemble::new(self.models, self.descriptors)?)
            }
            Method::Pooled => {
                let [model]: [DomainModel; 1] = self.models.try_into().map_err(|_| {
                    HdError::Container("pooled container needs exactly one model".into())
                })?;
                Classifier::Pooled(model)
            }
        };
        Ok(TrainedSystem {
            config: self.config,
            encoder,
            domain_ids: self.domain_ids,
            n_classes: self.n_classes,
            classifier,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| HdError::Data {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        serde_json::from_str(&text)
            .map_err(|e| HdError::Container(format!("{}: {e}", path.display())))
    }
}
