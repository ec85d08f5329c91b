//! Evaluation-based filters for pseudo-parallel pairs.
//!
//! * Style: keep a pair when the pseudo target is more formal than the
//!   unlabeled source by more than `sigma`.
//! * Source-BLEU and perplexity: keep a pair when its score ranks within the
//!   best `phi` fraction of all scores seen so far. Scores live in a
//!   [`ScoreList`] ordered best-first (decreasing BLEU, increasing
//!   perplexity), and the threshold is the element at `floor(phi * len)`.
//!
//! Dynamic filters go through three modes: a pass-through warm-up that only
//! collects scores, an update-and-filter phase for the rest of the first
//! unlabeled epoch, and a frozen phase that reuses the last threshold.

mod score_list;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use score_list::{ScoreList, ScoreOrder};

use crate::classifier::StyleClassifier;
use crate::corpus::Sentence;
use crate::scalar::Real;

#[derive(Debug, Error, PartialEq)]
pub enum FilterError {
    #[error("score {0} is not finite")]
    NonFiniteScore(f64),
    #[error("score list is empty")]
    EmptyList,
    #[error("{name} must lie in [0, 1], got {value}")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("unknown filter kind `{0}`")]
    UnknownKind(String),
    #[error("{0} filter requires a {1}")]
    MissingScorer(FilterKind, &'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Style,
    Bleu,
    Perplexity,
}

impl FilterKind {
    /// Ordering of the score list for dynamic filters.
    pub fn score_order(self) -> Option<ScoreOrder> {
        match self {
            FilterKind::Style => None,
            FilterKind::Bleu => Some(ScoreOrder::Decreasing),
            FilterKind::Perplexity => Some(ScoreOrder::Increasing),
        }
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FilterKind::Style => "style",
            FilterKind::Bleu => "bleu",
            FilterKind::Perplexity => "perplexity",
        })
    }
}

impl FromStr for FilterKind {
    type Err = FilterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "style" => Ok(FilterKind::Style),
            "bleu" => Ok(FilterKind::Bleu),
            "perplexity" | "ppl" => Ok(FilterKind::Perplexity),
            _ => Err(FilterError::UnknownKind(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig<T> {
    pub kind: FilterKind,
    pub sigma: T,
    pub phi: T,
    /// Unfiltered SSL steps at the start of the first unlabeled epoch. `None`
    /// lets the trainer derive it from the epoch length.
    pub warmup_unfiltered_steps: Option<usize>,
    pub freeze_after_one_epoch: bool,
}

impl<T: Real> FilterConfig<T> {
    pub fn new(kind: FilterKind) -> Self {
        Self {
            kind,
            sigma: T::of(0.8),
            phi: T::of(0.4),
            warmup_unfiltered_steps: None,
            freeze_after_one_epoch: true,
        }
    }

    pub fn validate(&self) -> Result<(), FilterError> {
        for (name, v) in [("sigma", self.sigma), ("phi", self.phi)] {
            if !(v >= T::zero() && v <= T::one()) {
                return Err(FilterError::OutOfRange {
                    name,
                    value: v.as_f64(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterDecision<T> {
    pub keep: bool,
    pub score: T,
    /// Dynamic threshold; absent for the style filter and during warm-up.
    pub threshold_used: Option<T>,
}

/// Style-strength filter: keep iff p(formal | y_hat) - p(formal | u) > sigma.
pub fn style_keep<T: Real>(
    u: &Sentence,
    y_hat: &Sentence,
    clf: &StyleClassifier<T>,
    sigma: T,
) -> FilterDecision<T> {
    let score = clf.predict_formal_prob(y_hat) - clf.predict_formal_prob(u);
    style_decision(score, sigma)
}

pub fn style_decision<T: Real>(score: T, sigma: T) -> FilterDecision<T> {
    FilterDecision {
        keep: score > sigma,
        score,
        threshold_used: None,
    }
}

/// Keep rule against a dynamic threshold (BLEU above, perplexity below).
/// For the style filter `threshold` is sigma.
pub fn threshold_keep<T: Real>(kind: FilterKind, score: T, threshold: T) -> bool {
    match kind {
        FilterKind::Style | FilterKind::Bleu => score > threshold,
        FilterKind::Perplexity => score < threshold,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    PassThrough,
    UpdateAndFilter,
    FrozenFilter,
}

/// Position of the training loop in the unlabeled data.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EpochState {
    /// Completed passes over the unlabeled pool.
    pub epoch: usize,
    /// SSL steps taken since consistency training started.
    pub step: usize,
}

pub fn lifecycle<T: Real>(state: EpochState, warmup_steps: usize, cfg: &FilterConfig<T>) -> FilterMode {
    if cfg.freeze_after_one_epoch && state.epoch >= 1 {
        FilterMode::FrozenFilter
    } else if state.step < warmup_steps {
        FilterMode::PassThrough
    } else {
        FilterMode::UpdateAndFilter
    }
}

/// Stateful filter for one kind: owns the score list of dynamic filters.
#[derive(Debug, Clone)]
pub struct PairFilter<T: Real> {
    cfg: FilterConfig<T>,
    scores: Option<ScoreList<T>>,
    frozen: Option<T>,
}

impl<T: Real> PairFilter<T> {
    pub fn new(cfg: FilterConfig<T>) -> Result<Self, FilterError> {
        cfg.validate()?;
        Ok(Self {
            scores: cfg.kind.score_order().map(ScoreList::new),
            cfg,
            frozen: None,
        })
    }

    pub fn config(&self) -> &FilterConfig<T> {
        &self.cfg
    }

    pub fn kind(&self) -> FilterKind {
        self.cfg.kind
    }

    pub fn score_list(&self) -> Option<&ScoreList<T>> {
        self.scores.as_ref()
    }

    pub fn frozen_threshold(&self) -> Option<T> {
        self.frozen
    }

    /// Decides a batch of scores. Dynamic filters insert the batch before
    /// reading the threshold, except in frozen mode.
    pub fn decide(&mut self, scores: &[T], mode: FilterMode) -> Result<Vec<FilterDecision<T>>, FilterError> {
        let Some(list) = self.scores.as_mut() else {
            let sigma = self.cfg.sigma;
            return Ok(scores.iter().map(|&s| style_decision(s, sigma)).collect());
        };
        let threshold = match mode {
            FilterMode::PassThrough => {
                list.insert_batch(scores)?;
                None
            }
            FilterMode::UpdateAndFilter => {
                list.insert_batch(scores)?;
                Some(list.threshold(self.cfg.phi)?)
            }
            FilterMode::FrozenFilter => {
                if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
                    return Err(FilterError::NonFiniteScore(bad.as_f64()));
                }
                match self.frozen {
                    Some(t) => Some(t),
                    None if list.is_empty() => None,
                    None => {
                        let t = list.threshold(self.cfg.phi)?;
                        self.frozen = Some(t);
                        Some(t)
                    }
                }
            }
        };
        let kind = self.cfg.kind;
        Ok(scores
            .iter()
            .map(|&score| FilterDecision {
                keep: threshold.map_or(true, |t| threshold_keep(kind, score, t)),
                score,
                threshold_used: threshold,
            })
            .collect())
    }
}

/// One filter's verdict inside an audit record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub kind: FilterKind,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    pub mode: FilterMode,
    pub keep: bool,
}

impl AuditEntry {
    pub fn from_decision<T: Real>(
        kind: FilterKind,
        decision: &FilterDecision<T>,
        sigma: T,
        mode: FilterMode,
    ) -> Self {
        Self {
            kind,
            score: decision.score.as_f64(),
            threshold: decision.threshold_used.map(Real::as_f64),
            sigma: (kind == FilterKind::Style).then(|| sigma.as_f64()),
            mode,
            keep: decision.keep,
        }
    }

    /// Re-derives the decision from the recorded score and threshold.
    pub fn recomputed_keep(&self) -> bool {
        match self.kind {
            FilterKind::Style => self.sigma.is_some_and(|s| self.score > s),
            _ => self
                .threshold
                .map_or(true, |t| threshold_keep(self.kind, self.score, t)),
        }
    }
}

/// One line of the filter audit log: a pseudo pair and every filter verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAudit {
    pub step: usize,
    pub index: usize,
    pub source: String,
    pub perturbed: String,
    pub pseudo_target: String,
    pub filters: Vec<AuditEntry>,
    pub keep: bool,
}

impl PairAudit {
    pub fn recomputed_keep(&self) -> bool {
        self.filters.iter().all(AuditEntry::recomputed_keep)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ReplaySummary {
    pub records: usize,
    pub kept: usize,
    /// Records whose logged decision differs from the recomputed one.
    pub mismatches: usize,
    /// Kept records that fail their filter predicate.
    pub kept_violations: usize,
}

/// Recomputes every decision of an audit log (one JSON object per line).
pub fn replay_audit(log: &str) -> Result<ReplaySummary, serde_json::Error> {
    let mut summary = ReplaySummary::default();
    for line in log.lines().filter(|l| !l.trim().is_empty()) {
        let rec: PairAudit = serde_json::from_str(line)?;
        let again = rec.recomputed_keep();
        summary.records += 1;
        if rec.keep {
            summary.kept += 1;
            if !again {
                summary.kept_violations += 1;
            }
        }
        if again != rec.keep {
            summary.mismatches += 1;
        }
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn style_rule_cases() {
        assert!(style_decision(0.95 - 0.10, 0.8).keep);
        assert!(!style_decision(0.85 - 0.10, 0.8).keep);
        let clf = StyleClassifier::<f64>::untrained(16);
        let u = Sentence::new("same words");
        for sigma in [0.0, 0.5, 1.0] {
            let d = style_keep(&u, &u, &clf, sigma);
            assert!(!d.keep);
            assert_eq!(d.threshold_used, None);
        }
    }

    #[test]
    fn keep_rules() {
        assert!(threshold_keep(FilterKind::Bleu, 0.7, 0.5));
        assert!(!threshold_keep(FilterKind::Perplexity, 120.0, 95.0));
        assert!(threshold_keep(FilterKind::Perplexity, 90.0, 95.0));
        assert!(!threshold_keep(FilterKind::Bleu, 0.5, 0.5));
    }

    #[test]
    fn lifecycle_boundaries() {
        let cfg = FilterConfig::<f64>::new(FilterKind::Bleu);
        let at = |epoch, step| lifecycle(EpochState { epoch, step }, 3, &cfg);
        assert_eq!(at(0, 0), FilterMode::PassThrough);
        assert_eq!(at(0, 2), FilterMode::PassThrough);
        assert_eq!(at(0, 3), FilterMode::UpdateAndFilter);
        assert_eq!(at(1, 10), FilterMode::FrozenFilter);
        let unfrozen = FilterConfig {
            freeze_after_one_epoch: false,
            ..cfg
        };
        assert_eq!(
            lifecycle(EpochState { epoch: 4, step: 99 }, 3, &unfrozen),
            FilterMode::UpdateAndFilter
        );
    }

    #[test]
    fn config_validation() {
        let mut cfg = FilterConfig::<f64>::new(FilterKind::Perplexity);
        assert!(cfg.validate().is_ok());
        cfg.phi = 1.5;
        assert!(matches!(cfg.validate(), Err(FilterError::OutOfRange { name: "phi", .. })));
        assert_eq!("ppl".parse::<FilterKind>().unwrap(), FilterKind::Perplexity);
        assert!("nope".parse::<FilterKind>().is_err());
    }

    #[test]
    fn passthrough_inserts_and_keeps_everything() {
        let mut f = PairFilter::new(FilterConfig::<f64>::new(FilterKind::Bleu)).unwrap();
        let d = f.decide(&[0.1, 0.2], FilterMode::PassThrough).unwrap();
        assert!(d.iter().all(|d| d.keep && d.threshold_used.is_none()));
        assert_eq!(f.score_list().unwrap().len(), 2);
    }

    #[test]
    fn frozen_filter_reuses_threshold_without_inserting() {
        let mut f = PairFilter::new(FilterConfig::<f64>::new(FilterKind::Bleu)).unwrap();
        f.decide(&[0.9, 0.7, 0.5, 0.3, 0.1], FilterMode::UpdateAndFilter).unwrap();
        let d = f.decide(&[0.6, 0.4, 100.0], FilterMode::FrozenFilter).unwrap();
        assert_eq!(f.score_list().unwrap().len(), 5);
        assert_eq!(f.frozen_threshold(), Some(0.5));
        assert_eq!(d.iter().map(|d| d.keep).collect::<Vec<_>>(), [true, false, true]);
        let d = f.decide(&[0.2], FilterMode::FrozenFilter).unwrap();
        assert_eq!(d[0].threshold_used, Some(0.5));
    }

    #[test]
    fn scaling_scores_scales_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let batches: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..16).map(|_| rng.gen_range(0.0..50.0)).collect())
            .collect();
        for kind in [FilterKind::Bleu, FilterKind::Perplexity] {
            let mut a = PairFilter::new(FilterConfig::<f64>::new(kind)).unwrap();
            let mut b = PairFilter::new(FilterConfig::<f64>::new(kind)).unwrap();
            for (i, batch) in batches.iter().enumerate() {
                let mode = if i < 2 {
                    FilterMode::PassThrough
                } else {
                    FilterMode::UpdateAndFilter
                };
                let scaled: Vec<f64> = batch.iter().map(|s| s * 4.0).collect();
                let da = a.decide(batch, mode).unwrap();
                let db = b.decide(&scaled, mode).unwrap();
                for (x, y) in da.iter().zip(&db) {
                    assert_eq!(x.keep, y.keep);
                    assert_eq!(x.threshold_used.map(|t| t * 4.0), y.threshold_used);
                }
            }
        }
    }

    #[test]
    fn audit_replay_detects_tampering() {
        let entry = AuditEntry {
            kind: FilterKind::Bleu,
            score: 0.3,
            threshold: Some(0.5),
            sigma: None,
            mode: FilterMode::UpdateAndFilter,
            keep: false,
        };
        let rec = PairAudit {
            step: 0,
            index: 0,
            source: "u".into(),
            perturbed: "u".into(),
            pseudo_target: "y".into(),
            filters: vec![entry],
            keep: false,
        };
        let good = serde_json::to_string(&rec).unwrap();
        let mut bad = rec.clone();
        bad.keep = true;
        let bad = serde_json::to_string(&bad).unwrap();
        let s = replay_audit(&format!("{good}\n{bad}\n")).unwrap();
        assert_eq!(s.records, 2);
        assert_eq!(s.kept, 1);
        assert_eq!(s.kept_violations, 1);
        assert_eq!(s.mismatches, 1);
    }
}
