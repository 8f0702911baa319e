//! Classifiers over tweets: the hashed-feature logistic-regression baseline,
//! external model endpoints, and the uniform [`ClassifierHandle`].

mod baseline;
mod external;
mod features;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::LabelCoarse;
use crate::corpus::Tweet;

pub use baseline::{load_model, save_model, train_baseline, BaselineModel, Hyperparams, TrainingMetadata};
pub use external::{EndpointConfig, ExternalEndpoint, PredictRequest, PredictResponse, Scores, Transport};
pub use features::{featurize, featurize_text, hash_token, tokenize, FeatureConfig, SparseVector};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("feature dimension {0} is not a power of two")]
    InvalidDim(usize),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("{0} set is empty")]
    EmptySet(&'static str),
    #[error("training set contains a single class ({0}); refusing to train")]
    SingleClass(LabelCoarse),
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("endpoint timed out after {0} ms")]
    Timeout(u64),
    #[error("malformed endpoint response: {0}")]
    Malformed(String),
    #[error("response out of order: expected id `{expected}`, got `{got}`")]
    OrderViolation { expected: String, got: String },
    #[error("endpoint error: {0}")]
    Endpoint(String),
    #[error("model file: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Which parts of a tweet feed the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    TextOnly,
    HashtagsOnly,
    #[default]
    TextAndHashtags,
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FeatureMode::TextOnly => "text_only",
            FeatureMode::HashtagsOnly => "hashtags_only",
            FeatureMode::TextAndHashtags => "text_and_hashtags",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for FeatureMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text_only" | "text" => Ok(FeatureMode::TextOnly),
            "hashtags_only" | "hashtags" => Ok(FeatureMode::HashtagsOnly),
            "text_and_hashtags" | "full" => Ok(FeatureMode::TextAndHashtags),
            other => Err(format!("unknown feature mode `{other}`")),
        }
    }
}

/// Probability distribution over S, A, O (in that order).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassProbs(pub [f64; 3]);

impl ClassProbs {
    pub const UNIFORM: ClassProbs = ClassProbs([1.0 / 3.0; 3]);

    /// Numerically stable softmax of raw logits.
    pub fn from_logits(logits: [f64; 3]) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp = logits.map(|z| (z - max).exp());
        let sum: f64 = exp.iter().sum();
        ClassProbs(exp.map(|e| e / sum))
    }

    /// Highest-probability label; ties go to the earlier class (S < A < O).
    pub fn argmax(&self) -> LabelCoarse {
        let mut best = 0;
        for i in 1..3 {
            if self.0[i] > self.0[best] {
                best = i;
            }
        }
        LabelCoarse::ALL[best]
    }

    pub fn get(&self, label: LabelCoarse) -> f64 {
        self.0[label.index()]
    }

    pub fn one_hot(label: LabelCoarse) -> Self {
        let mut p = [0.0; 3];
        p[label.index()] = 1.0;
        ClassProbs(p)
    }
}

/// Anything that maps a tweet to a distribution over S, A, O.
pub trait Classifier: Send + Sync {
    fn predict(&self, tweet: &Tweet) -> Result<ClassProbs, ModelError>;
}

impl Classifier for BaselineModel {
    fn predict(&self, tweet: &Tweet) -> Result<ClassProbs, ModelError> {
        Ok(self.predict_tweet(tweet))
    }
}

impl Classifier for ExternalEndpoint {
    fn predict(&self, tweet: &Tweet) -> Result<ClassProbs, ModelError> {
        self.request(tweet)
    }
}

/// A pool member: a classifier plus its id and dev-set macro-F1.
#[derive(Clone)]
pub struct ClassifierHandle {
    pub id: String,
    pub dev_score: Option<f64>,
    classifier: Arc<dyn Classifier>,
}

impl fmt::Debug for ClassifierHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClassifierHandle")
            .field("id", &self.id)
            .field("dev_score", &self.dev_score)
            .finish_non_exhaustive()
    }
}

impl ClassifierHandle {
    pub fn new(id: impl Into<String>, classifier: Arc<dyn Classifier>) -> Self {
        ClassifierHandle {
            id: id.into(),
            dev_score: None,
            classifier,
        }
    }

    pub fn baseline(id: impl Into<String>, model: BaselineModel) -> Self {
        let score = model.metadata.dev_macro_f1;
        let mut h = ClassifierHandle::new(id, Arc::new(model));
        h.dev_score = score;
        h
    }

    pub fn external(id: impl Into<String>, endpoint: ExternalEndpoint) -> Self {
        ClassifierHandle::new(id, Arc::new(endpoint))
    }

    pub fn with_dev_score(mut self, score: f64) -> Self {
        self.dev_score = Some(score);
        self
    }

    pub fn predict(&self, tweet: &Tweet) -> Result<ClassProbs, ModelError> {
        self.classifier.predict(tweet)
    }
}
