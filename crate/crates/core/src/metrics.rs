//! BLEU, the harmonic-mean overall score and the evaluation report.
//!
//! Corpus BLEU pools clipped n-gram counts over all segments (unsmoothed by
//! default); sentence BLEU adds an epsilon to zero numerators so that the
//! source-BLEU filter sees a continuous score distribution.

use std::collections::HashMap;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("{hypotheses} hypotheses but {references} reference sets")]
    LengthMismatch { hypotheses: usize, references: usize },
    #[error("reference set {0} is empty")]
    EmptyReferenceSet(usize),
    #[error("empty input")]
    EmptyInput,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Smoothing<T> {
    None,
    /// Adds `epsilon` to the numerator of every zero n-gram precision.
    Epsilon(T),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BleuConfig<T> {
    pub max_order: usize,
    pub weights: Vec<T>,
    pub smoothing: Smoothing<T>,
}

impl<T: Real> BleuConfig<T> {
    /// Unsmoothed uniform BLEU-4 for corpus evaluation.
    pub fn corpus() -> Self {
        Self::uniform(4, Smoothing::None)
    }

    /// BLEU-4 with epsilon = 0.1 smoothing, used for source-BLEU filtering.
    pub fn sentence() -> Self {
        Self::uniform(4, Smoothing::Epsilon(T::of(0.1)))
    }

    pub fn uniform(max_order: usize, smoothing: Smoothing<T>) -> Self {
        assert!(max_order >= 1);
        let w = T::one() / T::of_usize(max_order);
        Self {
            max_order,
            weights: vec![w; max_order],
            smoothing,
        }
    }
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            let key: Vec<&str> = w.iter().map(AsRef::as_ref).collect();
            *counts.entry(key).or_insert(0) += 1;
        }
    }
    counts
}

/// Pooled sufficient statistics: clipped matches and totals per order, plus
/// hypothesis and closest-reference lengths.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct BleuStats {
    matches: Vec<usize>,
    totals: Vec<usize>,
    hyp_len: usize,
    ref_len: usize,
}

impl BleuStats {
    fn new(max_order: usize) -> Self {
        Self {
            matches: vec![0; max_order],
            totals: vec![0; max_order],
            ..Default::default()
        }
    }

    fn add<S: AsRef<str>>(&mut self, hyp: &[S], refs: &[Vec<S>]) {
        for n in 1..=self.matches.len() {
            let hyp_counts = ngram_counts(hyp, n);
            let mut max_ref: HashMap<Vec<&str>, usize> = HashMap::new();
            for r in refs {
                for (g, c) in ngram_counts(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            self.matches[n - 1] += hyp_counts
                .iter()
                .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
                .sum::<usize>();
            self.totals[n - 1] += hyp.len().saturating_sub(n - 1);
        }
        self.hyp_len += hyp.len();
        // Closest reference length, shorter one on ties.
        self.ref_len += refs
            .iter()
            .map(Vec::len)
            .min_by_key(|&l| (l.abs_diff(hyp.len()), l))
            .unwrap_or(0);
    }

    fn score<T: Real>(&self, cfg: &BleuConfig<T>) -> T {
        if self.hyp_len == 0 {
            return T::zero();
        }
        let mut log_sum = T::zero();
        for (n, (&m, &t)) in self.matches.iter().zip(&self.totals).enumerate() {
            let denom = T::of_usize(t.max(1));
            let num = if m == 0 {
                match cfg.smoothing {
                    Smoothing::None => return T::zero(),
                    Smoothing::Epsilon(eps) => eps,
                }
            } else {
                T::of_usize(m)
            };
            log_sum = log_sum + cfg.weights[n] * (num / denom).ln();
        }
        let c = T::of_usize(self.hyp_len);
        let r = T::of_usize(self.ref_len);
        let bp = if c > r {
            T::one()
        } else {
            (T::one() - r / c).exp()
        };
        T::of(100.0) * bp * log_sum.exp()
    }
}

/// Corpus-level BLEU on the 0–100 scale.
pub fn corpus_bleu<T: Real, S: AsRef<str>>(
    hypotheses: &[Vec<S>],
    references: &[Vec<Vec<S>>],
    cfg: &BleuConfig<T>,
) -> Result<T, MetricsError> {
    if hypotheses.len() != references.len() {
        return Err(MetricsError::LengthMismatch {
            hypotheses: hypotheses.len(),
            references: references.len(),
        });
    }
    let mut stats = BleuStats::new(cfg.max_order);
    for (i, (h, refs)) in hypotheses.iter().zip(references).enumerate() {
        if refs.is_empty() {
            return Err(MetricsError::EmptyReferenceSet(i));
        }
        stats.add(h, refs);
    }
    Ok(stats.score(cfg))
}

/// Single-sentence BLEU against one reference.
pub fn sentence_bleu<T: Real, S: AsRef<str>>(
    hypothesis: &[S],
    reference: &[S],
    cfg: &BleuConfig<T>,
) -> Result<T, MetricsError> {
    if hypothesis.is_empty() || reference.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut stats = BleuStats::new(cfg.max_order);
    let refs: Vec<Vec<&str>> = vec![reference.iter().map(AsRef::as_ref).collect()];
    let hyp: Vec<&str> = hypothesis.iter().map(AsRef::as_ref).collect();
    stats.add(&hyp, &refs);
    Ok(stats.score(cfg))
}

/// 2ab/(a+b), or 0 when either input is 0.
pub fn harmonic_mean<T: Real>(bleu: T, acc_percent: T) -> T {
    if bleu <= T::zero() || acc_percent <= T::zero() {
        return T::zero();
    }
    T::of(2.0) * bleu * acc_percent / (bleu + acc_percent)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalReport {
    pub bleu: f64,
    pub acc: f64,
    pub hm: f64,
}

impl EvalReport {
    pub fn new(bleu: f64, acc_percent: f64) -> Self {
        Self {
            bleu,
            acc: acc_percent,
            hm: harmonic_mean(bleu, acc_percent),
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>8} {:>8} {:>8}", "BLEU", "Acc", "HM")?;
        write!(f, "{:>8.2} {:>8.2} {:>8.2}", self.bleu, self.acc, self.hm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokenize;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn identity_is_100() {
        let h = vec![toks("the cat sat on the mat"), toks("a b c d e")];
        let r = vec![
            vec![toks("x y"), toks("the cat sat on the mat")],
            vec![toks("a b c d e")],
        ];
        let b: f64 = corpus_bleu(&h, &r, &BleuConfig::corpus()).unwrap();
        assert!((b - 100.0).abs() < 1e-9);
        let s: f64 = sentence_bleu(&h[1], &r[1][0], &BleuConfig::sentence()).unwrap();
        assert!((s - 100.0).abs() < 1e-9);
    }

    #[test]
    fn disjoint_is_zero() {
        let b: f64 = corpus_bleu(
            &[toks("a b c d")],
            &[vec![toks("e f g h")]],
            &BleuConfig::corpus(),
        )
        .unwrap();
        assert_eq!(b, 0.0);
        // epsilon floor: 100 * 0.1 * (1/4 * 1/3 * 1/2 * 1)^(1/4)
        let s: f64 = sentence_bleu(&toks("a b c d"), &toks("e f g h"), &BleuConfig::sentence()).unwrap();
        assert!((s - 10.0 * (1.0f64 / 24.0).powf(0.25)).abs() < 1e-9, "{s}");
        let long_h: Vec<String> = (0..20).map(|i| format!("h{i}")).collect();
        let long_r: Vec<String> = (0..20).map(|i| format!("r{i}")).collect();
        let s: f64 = sentence_bleu(&long_h, &long_r, &BleuConfig::sentence()).unwrap();
        assert!(s > 0.0 && s < 1.0, "{s}");
    }

    #[test]
    fn errors() {
        let r: Result<f64, _> = corpus_bleu(&[toks("a")], &[], &BleuConfig::corpus());
        assert_eq!(
            r,
            Err(MetricsError::LengthMismatch { hypotheses: 1, references: 0 })
        );
        let r: Result<f64, _> = corpus_bleu(&[toks("a")], &[vec![]], &BleuConfig::corpus());
        assert_eq!(r, Err(MetricsError::EmptyReferenceSet(0)));
        let r: Result<f64, _> = sentence_bleu(&[] as &[String], &toks("a"), &BleuConfig::sentence());
        assert_eq!(r, Err(MetricsError::EmptyInput));
    }

    #[test]
    fn harmonic_mean_identities() {
        assert_eq!(harmonic_mean(42.0, 42.0), 42.0);
        assert_eq!(harmonic_mean(0.0, 90.0), 0.0);
        assert_eq!(harmonic_mean(90.0f32, 0.0), 0.0);
        assert!((harmonic_mean(76.87, 90.04) - 82.94f64).abs() <= 0.01);
        assert!((harmonic_mean(78.75, 94.56) - 85.94f64).abs() <= 0.01);
    }

    #[test]
    fn report_hm_matches_formula() {
        let r = EvalReport::new(50.0, 100.0);
        assert!((r.hm - 2.0 * 50.0 * 100.0 / 150.0).abs() < 1e-12);
        assert!(r.to_json_line().contains("\"bleu\":50.0"));
    }

    #[test]
    fn f32_and_f64_agree() {
        let h = vec![toks("the cat is on the mat today")];
        let r = vec![vec![toks("the cat sat on the mat")]];
        let a: f64 = corpus_bleu(&h, &r, &BleuConfig::sentence()).unwrap();
        let b: f32 = corpus_bleu(&h, &r, &BleuConfig::sentence()).unwrap();
        assert!((a - b as f64).abs() < 1e-3);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn sent() -> impl Strategy<Value = Vec<String>> {
            proptest::collection::vec("[a-e]", 1..12)
        }

        proptest! {
            #[test]
            fn permutation_invariant(pairs in proptest::collection::vec((sent(), sent()), 1..8), rot in 0usize..8) {
                let h: Vec<_> = pairs.iter().map(|p| p.0.clone()).collect();
                let r: Vec<_> = pairs.iter().map(|p| vec![p.1.clone()]).collect();
                let k = rot % h.len();
                let mut h2 = h.clone();
                let mut r2 = r.clone();
                h2.rotate_left(k);
                r2.rotate_left(k);
                let a: f64 = corpus_bleu(&h, &r, &BleuConfig::corpus()).unwrap();
                let b: f64 = corpus_bleu(&h2, &r2, &BleuConfig::corpus()).unwrap();
                prop_assert!((a - b).abs() < 1e-9);
            }

            #[test]
            fn out_of_reference_token_never_helps(pairs in proptest::collection::vec((sent(), sent()), 1..6), at in 0usize..100) {
                let h: Vec<_> = pairs.iter().map(|p| p.0.clone()).collect();
                let r: Vec<_> = pairs.iter().map(|p| vec![p.1.clone()]).collect();
                let before: f64 = corpus_bleu(&h, &r, &BleuConfig::corpus()).unwrap();
                let mut h2 = h.clone();
                let i = at % h2.len();
                let j = at % h2[i].len();
                h2[i][j] = "zzz".to_string();
                let after: f64 = corpus_bleu(&h2, &r, &BleuConfig::corpus()).unwrap();
                prop_assert!(after <= before + 1e-9);
            }

            #[test]
            fn hm_between_min_and_mean(a in 0.01f64..100.0, b in 0.01f64..100.0) {
                let hm = harmonic_mean(a, b);
                prop_assert!(hm >= a.min(b) - 1e-12);
                prop_assert!(hm <= (a + b) / 2.0 + 1e-12);
                prop_assert!(hm <= 2.0 * a.min(b) + 1e-12);
            }
        }
    }
}
