pub mod corpus;
pub mod metrics;
pub mod ngram;
pub mod scalar;
pub mod classifier;
pub mod filters;
pub mod perturb;
pub mod generator;
pub mod synthetic;
pub mod trainer;

/// Double-precision instantiations used by the CLI.
pub type KneserNey = ngram::KneserNeyModel<f64>;
pub type Classifier = classifier::StyleClassifier<f64>;
pub type Filter = filters::PairFilter<f64>;
pub type Scores = filters::ScoreList<f64>;
