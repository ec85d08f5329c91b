use std::collections::{BTreeMap, HashMap, HashSet};

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use super::PerturbError;
use crate::corpus::Sentence;

/// Per-word tf-idf scores and a unigram table for sampling replacements.
///
/// Each sentence is a document. `score(w) = mean_d tf(w, d) * idf(w)` with
/// `tf(w, d) = count(w, d) / |d|` and `idf(w) = ln((1 + N) / (1 + df(w))) + 1`.
/// Words are lowercased.
#[derive(Debug, Clone)]
pub struct TfIdfTable {
    scores: HashMap<String, f64>,
    idf: HashMap<String, f64>,
    unigram_words: Vec<String>,
    unigram_probs: Vec<f64>,
    sampler: WeightedIndex<f64>,
}

impl TfIdfTable {
    pub fn build(sentences: &[Sentence]) -> Result<Self, PerturbError> {
        let docs: Vec<&Sentence> = sentences.iter().filter(|s| !s.is_empty()).collect();
        if docs.is_empty() {
            return Err(PerturbError::EmptyPool);
        }
        let n_docs = docs.len() as f64;
        let mut tf_sum: BTreeMap<String, f64> = BTreeMap::new();
        let mut df: HashMap<String, usize> = HashMap::new();
        let mut freq: BTreeMap<String, usize> = BTreeMap::new();
        let mut total = 0usize;
        for d in &docs {
            let len = d.len() as f64;
            let mut seen = HashSet::new();
            for t in d.tokens() {
                let w = t.to_lowercase();
                *tf_sum.entry(w.clone()).or_insert(0.0) += 1.0 / len;
                *freq.entry(w.clone()).or_insert(0) += 1;
                total += 1;
                if seen.insert(w.clone()) {
                    *df.entry(w).or_insert(0) += 1;
                }
            }
        }
        let idf: HashMap<String, f64> = df
            .iter()
            .map(|(w, &d)| (w.clone(), ((1.0 + n_docs) / (1.0 + d as f64)).ln() + 1.0))
            .collect();
        let scores = tf_sum
            .iter()
            .map(|(w, s)| (w.clone(), s / n_docs * idf[w]))
            .collect();
        let unigram_words: Vec<String> = freq.keys().cloned().collect();
        let unigram_probs: Vec<f64> = freq.values().map(|&c| c as f64 / total as f64).collect();
        let sampler = WeightedIndex::new(&unigram_probs).expect("non-empty positive weights");
        Ok(Self {
            scores,
            idf,
            unigram_words,
            unigram_probs,
            sampler,
        })
    }

    /// tf-idf score; 0 for words absent from the pool.
    pub fn score(&self, word: &str) -> f64 {
        self.scores.get(&word.to_lowercase()).copied().unwrap_or(0.0)
    }

    pub fn idf(&self, word: &str) -> Option<f64> {
        self.idf.get(&word.to_lowercase()).copied()
    }

    pub fn unigram(&self) -> impl Iterator<Item = (&str, f64)> {
        self.unigram_words
            .iter()
            .map(String::as_str)
            .zip(self.unigram_probs.iter().copied())
    }

    pub fn sample_word<R: Rng + ?Sized>(&self, rng: &mut R) -> &str {
        &self.unigram_words[self.sampler.sample(rng)]
    }
}
