//! Perturbation of unlabeled source sentences.
//!
//! Word-level methods pick `k = max(1, round(ratio * n))` positions uniformly
//! without replacement (`k = 0` when `ratio == 0`). Dictionary-driven
//! methods only touch tokens found in their dictionary and perturb every
//! eligible token when fewer than `k` exist. Abbreviation replacement ignores
//! the ratio and rewrites every longest match.

mod lexicon;
mod tfidf;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use thiserror::Error;

pub use lexicon::{AbbrevDict, LexiconError, SpellingDict, SynonymLexicon, MAX_ABBREV_PHRASE};
pub use tfidf::TfIdfTable;

use crate::corpus::{Sentence, UnlabeledPool};

#[derive(Debug, Error)]
pub enum PerturbError {
    #[error("{0} perturbation needs a loaded {1}")]
    LexiconMissing(PerturbMethod, &'static str),
    #[error("external perturbation needs a paraphrase client")]
    NoExternalClient,
    #[error("external paraphraser failed: {0}")]
    External(String),
    #[error("cannot build tf-idf table from an empty pool")]
    EmptyPool,
    #[error("empty sentence")]
    EmptySentence,
    #[error("ratio must lie in [0, 1], got {0}")]
    InvalidRatio(f64),
    #[error("mask token must be non-empty and contain no whitespace")]
    InvalidMask,
    #[error("unknown perturbation method `{0}`")]
    UnknownMethod(String),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PerturbMethod {
    Drop,
    Swap,
    Mask,
    Synonym,
    TfIdf,
    Spell,
    Abbr,
    Capital,
    External,
    /// No perturbation; used for ablations.
    Identity,
}

impl PerturbMethod {
    pub const ALL: [PerturbMethod; 10] = [
        PerturbMethod::Drop,
        PerturbMethod::Swap,
        PerturbMethod::Mask,
        PerturbMethod::Synonym,
        PerturbMethod::TfIdf,
        PerturbMethod::Spell,
        PerturbMethod::Abbr,
        PerturbMethod::Capital,
        PerturbMethod::External,
        PerturbMethod::Identity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PerturbMethod::Drop => "drop",
            PerturbMethod::Swap => "swap",
            PerturbMethod::Mask => "mask",
            PerturbMethod::Synonym => "synonym",
            PerturbMethod::TfIdf => "tf-idf",
            PerturbMethod::Spell => "spell",
            PerturbMethod::Abbr => "abbr",
            PerturbMethod::Capital => "capital",
            PerturbMethod::External => "external",
            PerturbMethod::Identity => "none",
        }
    }
}

impl fmt::Display for PerturbMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PerturbMethod {
    type Err = PerturbError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        let lower = if lower == "tfidf" { "tf-idf".to_string() } else { lower };
        Self::ALL
            .into_iter()
            .find(|m| m.name() == lower)
            .ok_or_else(|| PerturbError::UnknownMethod(s.to_string()))
    }
}

/// Paraphrase-based perturbation served by an external model.
pub trait Paraphraser: Send + Sync {
    fn paraphrase(&self, texts: &[String]) -> Result<Vec<String>, String>;
}

#[derive(Clone, Default)]
pub struct Lexicons {
    pub spelling: Option<Arc<SpellingDict>>,
    pub abbrev: Option<Arc<AbbrevDict>>,
    pub synonyms: Option<Arc<SynonymLexicon>>,
    pub tfidf: Option<Arc<TfIdfTable>>,
}

impl fmt::Debug for Lexicons {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Lexicons")
            .field("spelling", &self.spelling.as_ref().map(|d| d.len()))
            .field("abbrev", &self.abbrev.as_ref().map(|d| d.len()))
            .field("synonyms", &self.synonyms.as_ref().map(|d| d.len()))
            .field("tfidf", &self.tfidf.is_some())
            .finish()
    }
}

#[derive(Debug, Clone, Default)]
pub struct LexiconPaths {
    pub spelling: Option<PathBuf>,
    pub abbrev: Option<PathBuf>,
    pub synonyms: Option<PathBuf>,
}

pub fn load_lexicons(paths: &LexiconPaths) -> Result<Lexicons, LexiconError> {
    Ok(Lexicons {
        spelling: paths.spelling.as_deref().map(SpellingDict::load).transpose()?.map(Arc::new),
        abbrev: paths.abbrev.as_deref().map(AbbrevDict::load).transpose()?.map(Arc::new),
        synonyms: paths.synonyms.as_deref().map(SynonymLexicon::load).transpose()?.map(Arc::new),
        tfidf: None,
    })
}

pub fn build_tfidf(pool: &UnlabeledPool) -> Result<TfIdfTable, PerturbError> {
    TfIdfTable::build(&pool.sentences)
}

#[derive(Clone)]
pub struct PerturbConfig {
    pub method: PerturbMethod,
    pub ratio: f64,
    pub seed: u64,
    pub mask_token: String,
    pub lexicons: Lexicons,
    pub external: Option<Arc<dyn Paraphraser>>,
}

impl fmt::Debug for PerturbConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PerturbConfig")
            .field("method", &self.method)
            .field("ratio", &self.ratio)
            .field("seed", &self.seed)
            .field("mask_token", &self.mask_token)
            .field("lexicons", &self.lexicons)
            .field("external", &self.external.is_some())
            .finish()
    }
}

impl PerturbConfig {
    pub fn new(method: PerturbMethod) -> Self {
        Self {
            method,
            ratio: 0.1,
            seed: 0,
            mask_token: "_".to_string(),
            lexicons: Lexicons::default(),
            external: None,
        }
    }

    pub fn with_ratio(mut self, ratio: f64) -> Self {
        self.ratio = ratio;
        self
    }

    pub fn with_lexicons(mut self, lexicons: Lexicons) -> Self {
        self.lexicons = lexicons;
        self
    }

    pub fn validate(&self) -> Result<(), PerturbError> {
        if !(0.0..=1.0).contains(&self.ratio) {
            return Err(PerturbError::InvalidRatio(self.ratio));
        }
        if self.mask_token.is_empty() || self.mask_token.contains(char::is_whitespace) {
            return Err(PerturbError::InvalidMask);
        }
        let m = self.method;
        let l = &self.lexicons;
        let missing = match m {
            PerturbMethod::Synonym if l.synonyms.is_none() => Some("synonym lexicon"),
            PerturbMethod::TfIdf if l.tfidf.is_none() => Some("tf-idf table"),
            PerturbMethod::Spell if l.spelling.is_none() => Some("spelling dictionary"),
            PerturbMethod::Abbr if l.abbrev.is_none() => Some("abbreviation dictionary"),
            _ => None,
        };
        if let Some(what) = missing {
            return Err(PerturbError::LexiconMissing(m, what));
        }
        if m == PerturbMethod::External && self.external.is_none() {
            return Err(PerturbError::NoExternalClient);
        }
        Ok(())
    }
}

/// Number of positions a ratio-driven method perturbs in an `n`-token sentence.
pub fn perturb_count(ratio: f64, n: usize) -> usize {
    if ratio <= 0.0 || n == 0 {
        return 0;
    }
    ((ratio * n as f64).round() as usize).clamp(1, n)
}

fn choose<R: Rng + ?Sized>(rng: &mut R, eligible: &[usize], k: usize) -> Vec<usize> {
    let k = k.min(eligible.len());
    let mut picked: Vec<usize> = index::sample(rng, eligible.len(), k)
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    picked.sort_unstable();
    picked
}

fn choose_positions<R: Rng + ?Sized>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    let all: Vec<usize> = (0..n).collect();
    choose(rng, &all, k)
}

/// Applies the configured perturbation. Identical (sentence, config, rng
/// state) always yields the identical output.
pub fn apply<R: Rng + ?Sized>(
    sentence: &Sentence,
    cfg: &PerturbConfig,
    rng: &mut R,
) -> Result<Sentence, PerturbError> {
    cfg.validate()?;
    if sentence.is_empty() {
        return Err(PerturbError::EmptySentence);
    }
    let mut toks: Vec<String> = sentence.tokens().to_vec();
    let n = toks.len();
    let k = perturb_count(cfg.ratio, n);
    let lex = &cfg.lexicons;
    match cfg.method {
        PerturbMethod::Identity => {}
        PerturbMethod::Drop => {
            let drop = choose_positions(rng, n, k);
            toks = toks
                .into_iter()
                .enumerate()
                .filter(|(i, _)| drop.binary_search(i).is_err())
                .map(|(_, t)| t)
                .collect();
        }
        PerturbMethod::Swap => {
            if n >= 2 {
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(rng);
                let mut used = vec![false; n];
                let mut done = 0;
                for p in order {
                    if done == k {
                        break;
                    }
                    let (a, b) = if p + 1 < n { (p, p + 1) } else { (p - 1, p) };
                    if used[a] || used[b] {
                        continue;
                    }
                    used[a] = true;
                    used[b] = true;
                    toks.swap(a, b);
                    done += 1;
                }
            }
        }
        PerturbMethod::Mask => {
            for i in choose_positions(rng, n, k) {
                toks[i] = cfg.mask_token.clone();
            }
        }
        PerturbMethod::Capital => {
            for i in choose_positions(rng, n, k) {
                toks[i] = toks[i].to_uppercase();
            }
        }
        PerturbMethod::Synonym => {
            let syn = lex.synonyms.as_ref().expect("validated");
            let eligible: Vec<usize> = (0..n).filter(|&i| syn.synonyms(&toks[i]).is_some()).collect();
            for i in choose(rng, &eligible, k) {
                let options = syn.synonyms(&toks[i]).expect("eligible");
                toks[i] = options.choose(rng).expect("non-empty").clone();
            }
        }
        PerturbMethod::Spell => {
            let dict = lex.spelling.as_ref().expect("validated");
            let eligible: Vec<usize> = (0..n).filter(|&i| dict.variants(&toks[i]).is_some()).collect();
            for i in choose(rng, &eligible, k) {
                let options = dict.variants(&toks[i]).expect("eligible");
                toks[i] = options.choose(rng).expect("non-empty").clone();
            }
        }
        PerturbMethod::TfIdf => {
            let table = lex.tfidf.as_ref().expect("validated");
            tfidf_replace(&mut toks, table, cfg.ratio, rng);
        }
        PerturbMethod::Abbr => {
            let dict = lex.abbrev.as_ref().expect("validated");
            toks = abbreviate(&toks, dict);
        }
        PerturbMethod::External => {
            let client = cfg.external.as_ref().expect("validated");
            let mut out = client
                .paraphrase(&[sentence.text()])
                .map_err(PerturbError::External)?;
            if out.len() != 1 {
                return Err(PerturbError::External(format!(
                    "expected 1 paraphrase, got {}",
                    out.len()
                )));
            }
            return Ok(Sentence::new(out.pop().expect("one output")));
        }
    }
    Ok(Sentence::from_tokens(toks))
}

/// Perturbs a batch. External paraphrasing goes out as a single request.
pub fn apply_batch<R: Rng + ?Sized>(
    sentences: &[Sentence],
    cfg: &PerturbConfig,
    rng: &mut R,
) -> Result<Vec<Sentence>, PerturbError> {
    if cfg.method == PerturbMethod::External {
        cfg.validate()?;
        let client = cfg.external.as_ref().expect("validated");
        let texts: Vec<String> = sentences.iter().map(Sentence::text).collect();
        let out = client.paraphrase(&texts).map_err(PerturbError::External)?;
        if out.len() != texts.len() {
            return Err(PerturbError::External(format!(
                "expected {} paraphrases, got {}",
                texts.len(),
                out.len()
            )));
        }
        return Ok(out.into_iter().map(Sentence::new).collect());
    }
    sentences.iter().map(|s| apply(s, cfg, rng)).collect()
}

/// Replaces every longest dictionary phrase, scanning left to right.
pub fn abbreviate<S: AsRef<str>>(tokens: &[S], dict: &AbbrevDict) -> Vec<String> {
    let mut out = Vec::with_capacity(tokens.len());
    let mut i = 0;
    while i < tokens.len() {
        match dict.longest_match(&tokens[i..]) {
            Some((len, abbrev)) => {
                out.extend(abbrev.iter().cloned());
                i += len;
            }
            None => {
                out.push(tokens[i].as_ref().to_string());
                i += 1;
            }
        }
    }
    out
}

/// Replaces low tf-idf tokens: token i is replaced with probability
/// `min(1, ratio * n * (max - s_i) / sum_j (max - s_j))`, so the expected
/// number of replacements is `ratio * n` before clipping.
fn tfidf_replace<R: Rng + ?Sized>(toks: &mut [String], table: &TfIdfTable, ratio: f64, rng: &mut R) {
    let n = toks.len();
    if ratio <= 0.0 {
        return;
    }
    let scores: Vec<f64> = toks.iter().map(|t| table.score(t)).collect();
    let max = scores.iter().copied().fold(f64::MIN, f64::max);
    let gaps: Vec<f64> = scores.iter().map(|s| max - s).collect();
    let total: f64 = gaps.iter().sum();
    for (i, tok) in toks.iter_mut().enumerate() {
        let p = if total > 0.0 {
            (ratio * n as f64 * gaps[i] / total).min(1.0)
        } else {
            ratio
        };
        if rng.gen::<f64>() < p {
            *tok = table.sample_word(rng).to_string();
        }
    }
}
