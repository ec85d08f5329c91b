//! Interpolated Kneser-Ney n-gram language model.
//!
//! The highest order uses raw counts, every lower order uses continuation
//! counts (number of distinct left extensions), and the unigram level is
//! interpolated with a uniform distribution over the predictable vocabulary,
//! so every token receives non-zero mass. A single absolute discount is
//! shared by all orders.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::corpus::Sentence;
use crate::scalar::Real;

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

const BOS_ID: u32 = 0;
const EOS_ID: u32 = 1;
const UNK_ID: u32 = 2;

const FORMAT_TAG: &str = "consistyle-kn-lm";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LmError {
    #[error("cannot train a language model on an empty corpus")]
    EmptyCorpus,
    #[error("discount must lie in [0, 1), got {0}")]
    InvalidDiscount(f64),
    #[error("order must be at least 1")]
    InvalidOrder,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed model file at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KneserNeyConfig<T> {
    pub order: usize,
    pub discount: T,
    /// Training tokens seen at most this many times are mapped to `<unk>`.
    pub unk_max_count: u64,
}

impl<T: Real> Default for KneserNeyConfig<T> {
    fn default() -> Self {
        Self {
            order: 4,
            discount: T::of(0.75),
            unk_max_count: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct ContextStats {
    total: u64,
    distinct: u64,
}

/// Count table for one order: raw counts at the top order, continuation
/// counts below it.
#[derive(Debug, Clone, Default, PartialEq)]
struct Level {
    counts: HashMap<Vec<u32>, u64>,
    contexts: HashMap<Vec<u32>, ContextStats>,
}

impl Level {
    fn from_counts(counts: HashMap<Vec<u32>, u64>) -> Self {
        let mut contexts: HashMap<Vec<u32>, ContextStats> = HashMap::new();
        for (gram, &c) in &counts {
            let st = contexts.entry(gram[..gram.len() - 1].to_vec()).or_default();
            st.total += c;
            st.distinct += 1;
        }
        Self { counts, contexts }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KneserNeyModel<T> {
    order: usize,
    discount: T,
    unk_max_count: u64,
    words: Vec<String>,
    ids: HashMap<String, u32>,
    /// `levels[k - 1]` holds the order-`k` table.
    levels: Vec<Level>,
}

fn reserved_vocab() -> (Vec<String>, HashMap<String, u32>) {
    let words: Vec<String> = [BOS, EOS, UNK].iter().map(|s| s.to_string()).collect();
    let ids = words
        .iter()
        .enumerate()
        .map(|(i, w)| (w.clone(), i as u32))
        .collect();
    (words, ids)
}

impl<T: Real> KneserNeyModel<T> {
    pub fn train(corpus: &[Sentence], cfg: &KneserNeyConfig<T>) -> Result<Self, LmError> {
        if corpus.is_empty() {
            return Err(LmError::EmptyCorpus);
        }
        if cfg.order == 0 {
            return Err(LmError::InvalidOrder);
        }
        let d = cfg.discount.as_f64();
        if !(0.0..1.0).contains(&d) {
            return Err(LmError::InvalidDiscount(d));
        }

        let mut freq: HashMap<&str, u64> = HashMap::new();
        for s in corpus {
            for t in s.tokens() {
                *freq.entry(t.as_str()).or_insert(0) += 1;
            }
        }
        let mut kept: Vec<&str> = freq
            .iter()
            .filter(|&(w, &c)| c > cfg.unk_max_count && ![BOS, EOS, UNK].contains(w))
            .map(|(w, _)| *w)
            .collect();
        kept.sort_unstable();
        let (mut words, mut ids) = reserved_vocab();
        for w in kept {
            ids.insert(w.to_string(), words.len() as u32);
            words.push(w.to_string());
        }

        let mut model = Self {
            order: cfg.order,
            discount: cfg.discount,
            unk_max_count: cfg.unk_max_count,
            words,
            ids,
            levels: Vec::new(),
        };
        let mut top: HashMap<Vec<u32>, u64> = HashMap::new();
        for s in corpus {
            let padded = model.padded_ids(s);
            for w in padded.windows(cfg.order) {
                *top.entry(w.to_vec()).or_insert(0) += 1;
            }
        }
        model.rebuild(top);
        Ok(model)
    }

    /// Derives every lower-order continuation table from the top-order counts.
    fn rebuild(&mut self, top: HashMap<Vec<u32>, u64>) {
        let mut levels = vec![Level::default(); self.order];
        let mut current = top;
        for k in (1..=self.order).rev() {
            let next = if k > 1 {
                let mut cont: HashMap<Vec<u32>, u64> = HashMap::new();
                for gram in current.keys() {
                    *cont.entry(gram[1..].to_vec()).or_insert(0) += 1;
                }
                Some(cont)
            } else {
                None
            };
            levels[k - 1] = Level::from_counts(current);
            match next {
                Some(n) => current = n,
                None => break,
            }
        }
        self.levels = levels;
    }

    fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNK_ID)
    }

    fn padded_ids(&self, s: &Sentence) -> Vec<u32> {
        let mut v = vec![BOS_ID; self.order - 1];
        v.extend(s.tokens().iter().map(|t| self.id(t)));
        v.push(EOS_ID);
        v
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn discount(&self) -> T {
        self.discount
    }

    /// Vocabulary including the three reserved symbols.
    pub fn vocab(&self) -> &[String] {
        &self.words
    }

    /// Symbols that can be predicted: everything except `<s>`.
    pub fn predictable(&self) -> impl Iterator<Item = &str> {
        self.words.iter().skip(1).map(String::as_str)
    }

    /// Raw count (top order) or continuation count (lower orders) of an
    /// n-gram, after `<unk>` mapping.
    pub fn count(&self, gram: &[&str]) -> u64 {
        if gram.is_empty() || gram.len() > self.order {
            return 0;
        }
        let key: Vec<u32> = gram.iter().map(|t| self.id(t)).collect();
        self.levels[gram.len() - 1]
            .counts
            .get(&key)
            .copied()
            .unwrap_or(0)
    }

    fn prob_ids(&self, context: &[u32], word: u32) -> T {
        let keep = context.len().min(self.order - 1);
        let ctx = &context[context.len() - keep..];
        self.interpolated(ctx, word)
    }

    fn interpolated(&self, ctx: &[u32], word: u32) -> T {
        let k = ctx.len() + 1;
        let lower = if k == 1 {
            T::one() / T::of_usize(self.words.len() - 1)
        } else {
            self.interpolated(&ctx[1..], word)
        };
        let level = &self.levels[k - 1];
        let Some(stats) = level.contexts.get(ctx) else {
            return lower;
        };
        let mut key = Vec::with_capacity(k);
        key.extend_from_slice(ctx);
        key.push(word);
        let c = level.counts.get(&key).copied().unwrap_or(0);
        let d = self.discount;
        let total = T::of(stats.total as f64);
        let discounted = (T::of(c as f64) - d).max(T::zero());
        (discounted + d * T::of(stats.distinct as f64) * lower) / total
    }

    /// p(word | context) where the context is given as tokens (only the last
    /// `order - 1` are used; shorter contexts are left-padded with `<s>`).
    pub fn prob(&self, context: &[&str], word: &str) -> T {
        let mut ids = vec![BOS_ID; (self.order - 1).saturating_sub(context.len())];
        ids.extend(context.iter().map(|t| self.id(t)));
        self.prob_ids(&ids, self.id(word))
    }

    /// Natural-log probability of the sentence followed by `</s>`.
    pub fn log_prob(&self, sentence: &Sentence) -> T {
        let ids = self.padded_ids(sentence);
        let start = self.order - 1;
        (start..ids.len())
            .map(|i| self.prob_ids(&ids[i - start..i], ids[i]).ln())
            .sum()
    }

    /// exp(-log_prob / (tokens + 1)).
    pub fn perplexity(&self, sentence: &Sentence) -> T {
        let n = T::of_usize(sentence.len() + 1);
        (-self.log_prob(sentence) / n).exp()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{FORMAT_TAG} {FORMAT_VERSION}");
        let _ = writeln!(out, "order {}", self.order);
        let _ = writeln!(out, "discount {}", self.discount.as_f64());
        let _ = writeln!(out, "unk_max_count {}", self.unk_max_count);
        let _ = writeln!(out, "vocab {}", self.words.len());
        for w in &self.words {
            let _ = writeln!(out, "{w}");
        }
        let top = &self.levels[self.order - 1].counts;
        let mut grams: Vec<_> = top.iter().collect();
        grams.sort();
        let _ = writeln!(out, "ngrams {}", grams.len());
        for (g, c) in grams {
            let ids: Vec<String> = g.iter().map(u32::to_string).collect();
            let _ = writeln!(out, "{}\t{c}", ids.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, LmError> {
        let mut lines = text.lines().enumerate();
        let mut next = |what: &str| -> Result<(usize, &str), LmError> {
            lines
                .next()
                .map(|(i, l)| (i + 1, l))
                .ok_or_else(|| LmError::Parse {
                    line: 0,
                    msg: format!("unexpected end of file, expected {what}"),
                })
        };
        fn field<V: std::str::FromStr>(line: (usize, &str), key: &str) -> Result<V, LmError> {
            let (no, l) = line;
            l.strip_prefix(key)
                .and_then(|r| r.trim().parse().ok())
                .ok_or_else(|| LmError::Parse {
                    line: no,
                    msg: format!("expected `{key} <value>`"),
                })
        }

        let header = next("header")?;
        if header.1 != format!("{FORMAT_TAG} {FORMAT_VERSION}") {
            return Err(LmError::Parse {
                line: header.0,
                msg: "unrecognized header".into(),
            });
        }
        let order: usize = field(next("order")?, "order")?;
        if order == 0 {
            return Err(LmError::InvalidOrder);
        }
        let discount: f64 = field(next("discount")?, "discount")?;
        let unk_max_count: u64 = field(next("unk_max_count")?, "unk_max_count")?;
        let vocab_size: usize = field(next("vocab")?, "vocab")?;
        let mut words = Vec::with_capacity(vocab_size);
        let mut ids = HashMap::new();
        for i in 0..vocab_size {
            let (_, w) = next("vocabulary entry")?;
            ids.insert(w.to_string(), i as u32);
            words.push(w.to_string());
        }
        if words.get(..3) != Some(&[BOS.to_string(), EOS.to_string(), UNK.to_string()][..]) {
            return Err(LmError::Parse {
                line: 6,
                msg: "reserved symbols missing".into(),
            });
        }
        let n_grams: usize = field(next("ngrams")?, "ngrams")?;
        let mut top = HashMap::with_capacity(n_grams);
        for _ in 0..n_grams {
            let (no, l) = next("n-gram entry")?;
            let bad = || LmError::Parse {
                line: no,
                msg: "expected `<ids>\\t<count>`".into(),
            };
            let (g, c) = l.split_once('\t').ok_or_else(bad)?;
            let gram: Vec<u32> = g
                .split(' ')
                .map(|x| x.parse::<u32>().ok().filter(|&id| (id as usize) < vocab_size))
                .collect::<Option<_>>()
                .ok_or_else(bad)?;
            if gram.len() != order {
                return Err(bad());
            }
            top.insert(gram, c.parse::<u64>().map_err(|_| bad())?);
        }
        let mut model = Self {
            order,
            discount: T::of(discount),
            unk_max_count,
            words,
            ids,
            levels: Vec::new(),
        };
        model.rebuild(top);
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), LmError> {
        fs::write(path, self.to_text()).map_err(|source| LmError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, LmError> {
        let text = fs::read_to_string(path).map_err(|source| LmError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sents(lines: &[&str]) -> Vec<Sentence> {
        lines.iter().map(|l| Sentence::new(*l)).collect()
    }

    fn memorized() -> KneserNeyModel<f64> {
        let corpus = vec![Sentence::new("a b c"); 100];
        KneserNeyModel::train(&corpus, &KneserNeyConfig::default()).unwrap()
    }

    fn small_corpus() -> Vec<Sentence> {
        let subj = ["i", "you", "we", "they", "he"];
        let verb = ["like", "see", "want", "need"];
        let obj = ["the cat", "a dog", "the music", "my friend", "that song"];
        let mut out = Vec::new();
        for (i, s) in subj.iter().enumerate() {
            for (j, v) in verb.iter().enumerate() {
                for (k, o) in obj.iter().enumerate() {
                    if (i + j + k) % 2 == 0 {
                        out.push(Sentence::new(format!("{s} really {v} {o} .")));
                    }
                }
            }
        }
        out
    }

    #[test]
    fn memorized_continuation_is_near_certain() {
        let m = memorized();
        assert!(m.prob(&["a"], "b") >= 0.99);
        assert!(m.log_prob(&Sentence::new("a b c")).abs() < 0.02);
        let ppl = m.perplexity(&Sentence::new("a b c"));
        assert!((1.0..=1.01).contains(&ppl), "{ppl}");
    }

    #[test]
    fn continuation_count_counts_distinct_predecessors() {
        let cfg = KneserNeyConfig {
            unk_max_count: 0,
            ..Default::default()
        };
        let m: KneserNeyModel<f64> = KneserNeyModel::train(&sents(&["a b", "c b"]), &cfg).unwrap();
        assert_eq!(m.count(&["b"]), 2);
        assert_eq!(m.count(&["a"]), 1);
    }

    #[test]
    fn singletons_become_unk() {
        let m: KneserNeyModel<f64> =
            KneserNeyModel::train(&sents(&["a b", "c b"]), &KneserNeyConfig::default()).unwrap();
        assert!(!m.vocab().iter().any(|w| w == "a"));
        assert!(m.vocab().iter().any(|w| w == "b"));
        // both predecessors collapse onto <unk>
        assert_eq!(m.count(&["b"]), 1);
    }

    #[test]
    fn zero_discount_is_maximum_likelihood_at_top_order() {
        let cfg = KneserNeyConfig {
            discount: 0.0,
            unk_max_count: 0,
            ..Default::default()
        };
        let m: KneserNeyModel<f64> =
            KneserNeyModel::train(&sents(&["x y z", "x y w", "x y z"]), &cfg).unwrap();
        // c(<s> x y z) = 2, c(<s> x y .) = 3
        assert!((m.prob(&["x", "y"], "z") - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.prob(&["x", "y"], "w") - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_sentence_scores_end_symbol() {
        let m = memorized();
        let lp = m.log_prob(&Sentence::new(""));
        assert!((lp - m.prob(&[], EOS).ln()).abs() < 1e-15);
        assert!(lp.is_finite());
    }

    #[test]
    fn unseen_words_are_finite_and_worse() {
        let m = memorized();
        let unseen = m.perplexity(&Sentence::new("qq rr ss"));
        assert!(unseen.is_finite());
        assert!(unseen > m.perplexity(&Sentence::new("a b c")));
    }

    #[test]
    fn errors() {
        let r = KneserNeyModel::<f64>::train(&[], &KneserNeyConfig::default());
        assert!(matches!(r, Err(LmError::EmptyCorpus)));
        let cfg = KneserNeyConfig {
            discount: 1.0,
            ..Default::default()
        };
        let r = KneserNeyModel::<f64>::train(&sents(&["a"]), &cfg);
        assert!(matches!(r, Err(LmError::InvalidDiscount(_))));
    }

    #[test]
    fn normalizes_over_random_contexts() {
        let corpus = small_corpus();
        let m: KneserNeyModel<f64> = KneserNeyModel::train(&corpus, &KneserNeyConfig::default()).unwrap();
        let vocab: Vec<&str> = m.vocab().iter().map(String::as_str).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let len = rng.gen_range(0..=3);
            let ctx: Vec<&str> = (0..len).map(|_| *vocab.choose(&mut rng).unwrap()).collect();
            let total: f64 = m.predictable().map(|w| m.prob(&ctx, w)).sum();
            assert!((total - 1.0).abs() < 1e-6, "{ctx:?} -> {total}");
        }
    }

    #[test]
    fn trained_beats_shuffled() {
        let corpus = small_corpus();
        let m: KneserNeyModel<f64> = KneserNeyModel::train(&corpus, &KneserNeyConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut trained = 0.0;
        let mut shuffled = 0.0;
        for s in &corpus {
            trained += m.perplexity(s);
            let mut t = s.tokens().to_vec();
            t.shuffle(&mut rng);
            shuffled += m.perplexity(&Sentence::from_tokens(t));
        }
        assert!(trained < shuffled);
    }

    #[test]
    fn text_round_trip_reproduces_scores() {
        let corpus = small_corpus();
        let m: KneserNeyModel<f64> = KneserNeyModel::train(&corpus, &KneserNeyConfig::default()).unwrap();
        let back: KneserNeyModel<f64> = KneserNeyModel::from_text(&m.to_text()).unwrap();
        for s in corpus.iter().chain(&sents(&["unseen words here", "the cat ."])) {
            assert!((m.log_prob(s) - back.log_prob(s)).abs() <= 1e-12);
        }
    }

    #[test]
    fn rejects_garbage_files() {
        assert!(KneserNeyModel::<f64>::from_text("hello").is_err());
        let m = memorized();
        let text = m.to_text().replace("\t100", "\tx");
        assert!(matches!(
            KneserNeyModel::<f64>::from_text(&text),
            Err(LmError::Parse { .. })
        ));
    }

    #[test]
    fn single_precision_model_works() {
        let corpus = vec![Sentence::new("a b c"); 100];
        let m: KneserNeyModel<f32> = KneserNeyModel::train(&corpus, &KneserNeyConfig::default()).unwrap();
        assert!(m.perplexity(&Sentence::new("a b c")) <= 1.01);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]
            #[test]
            fn more_copies_never_raise_perplexity(
                base in proptest::collection::vec("[a-d]( [a-d]){0,5}", 1..8),
                target in "[a-d]( [a-d]){0,5}",
                extra in 1usize..5,
            ) {
                let mut corpus: Vec<Sentence> = base.iter().map(|s| Sentence::new(s.as_str())).collect();
                let t = Sentence::new(target.as_str());
                corpus.push(t.clone());
                corpus.push(t.clone());
                let cfg = KneserNeyConfig::default();
                let before = KneserNeyModel::<f64>::train(&corpus, &cfg).unwrap().perplexity(&t);
                corpus.extend(std::iter::repeat(t.clone()).take(extra));
                let after = KneserNeyModel::<f64>::train(&corpus, &cfg).unwrap().perplexity(&t);
                prop_assert!(after <= before + 1e-9, "{before} -> {after}");
            }
        }
    }
}
