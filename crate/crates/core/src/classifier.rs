//! Formality classifier: logistic regression over hashed word unigrams and
//! character 3–5 grams.
//!
//! The model outputs p(formal | sentence). It is trained by full-batch
//! gradient descent from zero weights, which keeps training deterministic and
//! the logistic loss non-increasing: with L2-normalized features plus a bias
//! the loss gradient is 0.5-Lipschitz, so any step size up to 4 is a descent
//! step.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::Sentence;
use crate::scalar::{sigmoid, Real};

pub const DEFAULT_DIM: usize = 1 << 20;
const MAX_STEP: f64 = 4.0;
const FORMAT_TAG: &str = "consistyle-style-clf";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("training class `{0}` is empty")]
    EmptyClass(&'static str),
    #[error("empty input")]
    EmptyInput,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed classifier file at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// 64-bit FNV-1a; stable across platforms and releases.
fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in parts {
        for &b in *p {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

/// Sparse, L2-normalized feature vector sorted by index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureVector<T> {
    entries: Vec<(u32, T)>,
}

impl<T: Real> FeatureVector<T> {
    pub fn from_sentence(sentence: &Sentence, dim: usize) -> Self {
        let mut idx: Vec<u32> = Vec::new();
        let bucket = |h: u64| (h % dim as u64) as u32;
        for tok in sentence.tokens() {
            idx.push(bucket(fnv1a(&[b"w:", tok.as_bytes()])));
            let chars: Vec<char> = std::iter::once('<')
                .chain(tok.chars())
                .chain(std::iter::once('>'))
                .collect();
            for n in 3..=5 {
                for w in chars.windows(n) {
                    let g: String = w.iter().collect();
                    idx.push(bucket(fnv1a(&[b"c:", g.as_bytes()])));
                }
            }
        }
        idx.sort_unstable();
        let mut entries: Vec<(u32, T)> = Vec::new();
        for i in idx {
            match entries.last_mut() {
                Some((j, v)) if *j == i => *v = *v + T::one(),
                _ => entries.push((i, T::one())),
            }
        }
        let norm = entries.iter().map(|&(_, v)| v * v).sum::<T>().sqrt();
        if norm > T::zero() {
            for e in &mut entries {
                e.1 = e.1 / norm;
            }
        }
        Self { entries }
    }

    pub fn entries(&self) -> &[(u32, T)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn norm(&self) -> T {
        self.entries.iter().map(|&(_, v)| v * v).sum::<T>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierTraining<T> {
    pub epochs: usize,
    pub learning_rate: T,
    /// Step size at epoch t is `learning_rate / (1 + decay * t)`.
    pub decay: T,
    pub seed: u64,
    pub dim: usize,
}

impl<T: Real> Default for ClassifierTraining<T> {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: T::of(2.0),
            decay: T::of(0.01),
            seed: 0,
            dim: DEFAULT_DIM,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StyleClassifier<T> {
    weights: Vec<T>,
    bias: T,
    trained: bool,
}

impl<T: Real> StyleClassifier<T> {
    pub fn untrained(dim: usize) -> Self {
        assert!(dim > 0, "feature dimension must be positive");
        Self {
            weights: vec![T::zero(); dim],
            bias: T::zero(),
            trained: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn bias(&self) -> T {
        self.bias
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn features(&self, sentence: &Sentence) -> FeatureVector<T> {
        FeatureVector::from_sentence(sentence, self.dim())
    }

    fn score(&self, fv: &FeatureVector<T>) -> T {
        fv.entries
            .iter()
            .fold(self.bias, |acc, &(i, v)| acc + self.weights[i as usize] * v)
    }

    /// p(formal | sentence), strictly inside (0, 1) for bounded scores.
    pub fn predict_formal_prob(&self, sentence: &Sentence) -> T {
        sigmoid(self.score(&self.features(sentence)))
    }

    /// Trains on informal (label 0) and formal (label 1) sentences.
    pub fn train(
        informal: &[Sentence],
        formal: &[Sentence],
        opts: &ClassifierTraining<T>,
    ) -> Result<Self, ClassifierError> {
        Self::train_with_history(informal, formal, opts).map(|(c, _)| c)
    }

    /// Like [`train`](Self::train), also returning the mean logistic loss
    /// before the first epoch and after every epoch.
    pub fn train_with_history(
        informal: &[Sentence],
        formal: &[Sentence],
        opts: &ClassifierTraining<T>,
    ) -> Result<(Self, Vec<T>), ClassifierError> {
        if informal.is_empty() {
            return Err(ClassifierError::EmptyClass("informal"));
        }
        if formal.is_empty() {
            return Err(ClassifierError::EmptyClass("formal"));
        }
        let mut clf = Self::untrained(opts.dim);
        let mut data: Vec<(FeatureVector<T>, T)> = informal
            .iter()
            .map(|s| (clf.features(s), T::zero()))
            .chain(formal.iter().map(|s| (clf.features(s), T::one())))
            .collect();
        // Only the floating-point summation order depends on the seed.
        data.shuffle(&mut ChaCha8Rng::seed_from_u64(opts.seed));

        let n = T::of_usize(data.len());
        let mut history = vec![clf.mean_loss(&data)];
        let mut grad = vec![T::zero(); opts.dim];
        let mut touched: Vec<u32> = Vec::new();
        for epoch in 0..opts.epochs {
            let step = (opts.learning_rate / (T::one() + opts.decay * T::of_usize(epoch)))
                .min(T::of(MAX_STEP));
            let mut grad_bias = T::zero();
            for (fv, y) in &data {
                let err = sigmoid(clf.score(fv)) - *y;
                grad_bias = grad_bias + err;
                for &(i, v) in &fv.entries {
                    if grad[i as usize] == T::zero() {
                        touched.push(i);
                    }
                    grad[i as usize] = grad[i as usize] + err * v;
                }
            }
            for &i in &touched {
                let g = std::mem::replace(&mut grad[i as usize], T::zero());
                clf.weights[i as usize] = clf.weights[i as usize] - step * g / n;
            }
            touched.clear();
            clf.bias = clf.bias - step * grad_bias / n;
            clf.trained = true;
            history.push(clf.mean_loss(&data));
        }
        Ok((clf, history))
    }

    fn mean_loss(&self, data: &[(FeatureVector<T>, T)]) -> T {
        let total: T = data
            .iter()
            .map(|(fv, y)| {
                let z = self.score(fv);
                // log(1 + e^z) - y z, computed stably
                let softplus = if z > T::zero() {
                    z + (-z).exp().ln_1p()
                } else {
                    z.exp().ln_1p()
                };
                softplus - *y * z
            })
            .sum();
        total / T::of_usize(data.len())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{FORMAT_TAG} {FORMAT_VERSION}");
        let _ = writeln!(out, "dim {}", self.dim());
        let _ = writeln!(out, "trained {}", self.trained);
        let _ = writeln!(out, "bias {}", self.bias.as_f64());
        let nz: Vec<(usize, T)> = self
            .weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w != T::zero())
            .map(|(i, w)| (i, *w))
            .collect();
        let _ = writeln!(out, "nonzero {}", nz.len());
        for (i, w) in nz {
            let _ = writeln!(out, "{i}\t{}", w.as_f64());
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ClassifierError> {
        let lines: Vec<&str> = text.lines().collect();
        let bad = |line: usize, msg: &str| ClassifierError::Parse {
            line,
            msg: msg.to_string(),
        };
        let field = |line: usize, key: &str| -> Result<&str, ClassifierError> {
            lines
                .get(line - 1)
                .and_then(|l| l.strip_prefix(key))
                .map(str::trim)
                .ok_or_else(|| bad(line, &format!("expected `{key}`")))
        };
        if lines.first() != Some(&format!("{FORMAT_TAG} {FORMAT_VERSION}").as_str()) {
            return Err(bad(1, "unrecognized header"));
        }
        let dim: usize = field(2, "dim")?.parse().map_err(|_| bad(2, "bad dim"))?;
        if dim == 0 {
            return Err(bad(2, "dim must be positive"));
        }
        let trained: bool = field(3, "trained")?.parse().map_err(|_| bad(3, "bad flag"))?;
        let bias: f64 = field(4, "bias")?.parse().map_err(|_| bad(4, "bad bias"))?;
        let nnz: usize = field(5, "nonzero")?.parse().map_err(|_| bad(5, "bad count"))?;
        let mut clf = Self::untrained(dim);
        clf.bias = T::of(bias);
        clf.trained = trained;
        for k in 0..nnz {
            let no = 6 + k;
            let l = lines.get(no - 1).ok_or_else(|| bad(no, "missing weight"))?;
            let (i, w) = l.split_once('\t').ok_or_else(|| bad(no, "expected `<index>\\t<weight>`"))?;
            let i: usize = i.parse().ok().filter(|&i| i < dim).ok_or_else(|| bad(no, "bad index"))?;
            let w: f64 = w.parse().map_err(|_| bad(no, "bad weight"))?;
            clf.weights[i] = T::of(w);
        }
        Ok(clf)
    }

    pub fn save(&self, path: &Path) -> Result<(), ClassifierError> {
        fs::write(path, self.to_text()).map_err(|source| ClassifierError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ClassifierError> {
        let text = fs::read_to_string(path).map_err(|source| ClassifierError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_text(&text)
    }
}

/// Fraction of sentences classified formal (strictly p > 0.5).
pub fn style_accuracy<T: Real>(
    clf: &StyleClassifier<T>,
    sentences: &[Sentence],
) -> Result<f64, ClassifierError> {
    if sentences.is_empty() {
        return Err(ClassifierError::EmptyInput);
    }
    let half = T::of(0.5);
    let hits = sentences
        .iter()
        .filter(|s| clf.predict_formal_prob(s) > half)
        .count();
    Ok(hits as f64 / sentences.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    const DIM: usize = 1 << 12;

    fn toy(words: [&str; 2], n: usize, seed: u64) -> Vec<Sentence> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let len = rng.gen_range(1..6);
                Sentence::from_tokens((0..len).map(|_| words[rng.gen_range(0..2)]))
            })
            .collect()
    }

    fn opts(epochs: usize) -> ClassifierTraining<f64> {
        ClassifierTraining {
            epochs,
            dim: DIM,
            ..Default::default()
        }
    }

    fn toy_classifier() -> (StyleClassifier<f64>, Vec<Sentence>, Vec<Sentence>) {
        let a = toy(["aa", "ab"], 40, 1);
        let b = toy(["zz", "zy"], 40, 2);
        let clf = StyleClassifier::train(&a, &b, &opts(50)).unwrap();
        (clf, a, b)
    }

    #[test]
    fn feature_vectors_are_unit_norm() {
        let fv: FeatureVector<f64> = FeatureVector::from_sentence(&Sentence::new("hello there FRIEND"), DIM);
        assert!((fv.norm() - 1.0).abs() < 1e-9);
        assert!(fv.entries().iter().all(|e| e.1.is_finite()));
        let empty: FeatureVector<f64> = FeatureVector::from_sentence(&Sentence::new(""), DIM);
        assert!(empty.is_empty());
    }

    #[test]
    fn untrained_is_one_half() {
        let clf = StyleClassifier::<f64>::untrained(DIM);
        assert_eq!(clf.predict_formal_prob(&Sentence::new("anything")), 0.5);
        assert_eq!(style_accuracy(&clf, &[Sentence::new("x")]).unwrap(), 0.0);
        let z = StyleClassifier::train(&[Sentence::new("a")], &[Sentence::new("b")], &opts(0)).unwrap();
        assert_eq!(z.predict_formal_prob(&Sentence::new("b")), 0.5);
    }

    #[test]
    fn separable_toy_reaches_full_accuracy() {
        let (clf, a, b) = toy_classifier();
        assert_eq!(style_accuracy(&clf, &b).unwrap(), 1.0);
        assert_eq!(style_accuracy(&clf, &a).unwrap(), 0.0);
        for s in &b {
            assert!(clf.predict_formal_prob(s) > 0.9);
        }
        let mixed: Vec<Sentence> = a[..10].iter().chain(&b[..10]).cloned().collect();
        assert!((style_accuracy(&clf, &mixed).unwrap() - 0.5).abs() <= 1.0 / 20.0);
    }

    #[test]
    fn empty_sentence_scores_bias() {
        let (clf, _, _) = toy_classifier();
        let p = clf.predict_formal_prob(&Sentence::new(""));
        assert!((p - sigmoid(clf.bias())).abs() < 1e-15);
    }

    #[test]
    fn single_pair_one_epoch() {
        let clf = StyleClassifier::train(
            &[Sentence::new("gonna go lol")],
            &[Sentence::new("I am going to leave.")],
            &opts(1),
        )
        .unwrap();
        assert!(clf.predict_formal_prob(&Sentence::new("I am going to leave.")) > 0.5);
        assert!(clf.predict_formal_prob(&Sentence::new("gonna go lol")) < 0.5);
    }

    #[test]
    fn loss_is_non_increasing() {
        let a = toy(["aa", "zz"], 30, 5);
        let b = toy(["zz", "zy"], 30, 6);
        let (_, hist) = StyleClassifier::train_with_history(&a, &b, &opts(60)).unwrap();
        for w in hist.windows(2) {
            assert!(w[1] <= w[0] + 1e-6, "{} -> {}", w[0], w[1]);
        }
        assert!(hist.last().unwrap() < &hist[0]);
    }

    #[test]
    fn label_swap_is_antisymmetric() {
        let a = toy(["aa", "zz"], 25, 7);
        let b = toy(["zz", "zy"], 25, 8);
        let clf = StyleClassifier::train(&a, &b, &opts(30)).unwrap();
        let swapped = StyleClassifier::train(&b, &a, &opts(30)).unwrap();
        for s in a.iter().chain(&b).chain(&[Sentence::new("new words here")]) {
            let p = clf.predict_formal_prob(s);
            let q = swapped.predict_formal_prob(s);
            assert!((p + q - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn deterministic_and_round_trips() {
        let (clf, a, b) = toy_classifier();
        let again = StyleClassifier::train(&a, &b, &opts(50)).unwrap();
        assert_eq!(clf, again);
        let back = StyleClassifier::<f64>::from_text(&clf.to_text()).unwrap();
        assert_eq!(clf, back);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            StyleClassifier::<f64>::train(&[], &[Sentence::new("x")], &opts(1)),
            Err(ClassifierError::EmptyClass("informal"))
        ));
        assert!(matches!(
            StyleClassifier::<f64>::train(&[Sentence::new("x")], &[], &opts(1)),
            Err(ClassifierError::EmptyClass("formal"))
        ));
        let clf = StyleClassifier::<f64>::untrained(8);
        assert!(matches!(style_accuracy(&clf, &[]), Err(ClassifierError::EmptyInput)));
        assert!(StyleClassifier::<f64>::from_text("junk").is_err());
    }
}
