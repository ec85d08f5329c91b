//! Count-table generator: a small trainable stand-in for an encoder-decoder.
//!
//! Training aligns each (source, target) pair with a token-level edit
//! distance and counts which target phrase every source token maps to.
//! Generation rewrites each source token with its most frequent phrase and
//! copies tokens it has never seen.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check_batch, Decoding, Generator, GeneratorError};
use crate::corpus::{detokenize, tokenize};

/// Default notional target vocabulary for add-one smoothing of the loss.
pub const DEFAULT_SMOOTHING_VOCAB: f64 = 1000.0;

/// Aligns source tokens to target phrases with a minimum edit-distance path.
///
/// Matches and substitutions map a source token to one target token,
/// deletions map it to the empty phrase, and inserted target tokens join
/// the phrase of the preceding source token (the first one for leading
/// insertions). Ties prefer matches, then insertions, then substitutions.
pub fn align<S: AsRef<str>>(source: &[S], target: &[S]) -> Vec<(String, Vec<String>)> {
    let (n, m) = (source.len(), target.len());
    if n == 0 {
        return Vec::new();
    }
    let eq = |i: usize, j: usize| source[i].as_ref() == target[j].as_ref();
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = d[i - 1][j - 1] + usize::from(!eq(i - 1, j - 1));
            d[i][j] = diag.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }

    let mut phrases: Vec<Vec<String>> = vec![Vec::new(); n];
    let mut leading: Vec<String> = Vec::new();
    // Ops collected from the end; insertions attach to the source token at i - 1.
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && eq(i - 1, j - 1) && d[i][j] == d[i - 1][j - 1] {
            phrases[i - 1].insert(0, target[j - 1].as_ref().to_string());
            i -= 1;
            j -= 1;
        } else if j > 0 && d[i][j] == d[i][j - 1] + 1 {
            let tok = target[j - 1].as_ref().to_string();
            if i > 0 {
                phrases[i - 1].insert(0, tok);
            } else {
                leading.insert(0, tok);
            }
            j -= 1;
        } else if i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + 1 {
            phrases[i - 1].insert(0, target[j - 1].as_ref().to_string());
            i -= 1;
            j -= 1;
        } else {
            i -= 1;
        }
    }
    if !leading.is_empty() {
        leading.append(&mut phrases[0]);
        phrases[0] = leading;
    }
    source
        .iter()
        .map(|s| s.as_ref().to_string())
        .zip(phrases)
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Table {
    /// source token -> (target phrase -> weighted count)
    counts: BTreeMap<String, BTreeMap<String, f64>>,
    totals: HashMap<String, f64>,
}

impl Table {
    fn best(&self, token: &str) -> Option<&str> {
        let row = self.counts.get(token)?;
        let mut best: Option<(&str, f64)> = None;
        for (phrase, &c) in row {
            if best.map_or(true, |(_, b)| c > b) {
                best = Some((phrase.as_str(), c));
            }
        }
        best.map(|(p, _)| p)
    }

    fn translate(&self, text: &str, rng: Option<&mut ChaCha8Rng>) -> String {
        let mut rng = rng;
        let mut out: Vec<String> = Vec::new();
        for tok in tokenize(text) {
            let phrase = match (self.counts.get(&tok), rng.as_deref_mut()) {
                (Some(row), Some(r)) => {
                    let phrases: Vec<&String> = row.keys().collect();
                    let w = WeightedIndex::new(row.values().copied()).expect("positive counts");
                    phrases[w.sample(r)].clone()
                }
                (Some(_), None) => self.best(&tok).expect("row non-empty").to_string(),
                (None, _) => tok,
            };
            out.extend(tokenize(&phrase));
        }
        detokenize(&out)
    }

    fn prob(&self, token: &str, phrase: &str, vocab: f64) -> f64 {
        let c = self
            .counts
            .get(token)
            .and_then(|r| r.get(phrase))
            .copied()
            .unwrap_or(0.0);
        let total = self.totals.get(token).copied().unwrap_or(0.0);
        (c + 1.0) / (total + vocab)
    }

    fn add(&mut self, token: String, phrase: String, weight: f64) {
        *self.totals.entry(token.clone()).or_insert(0.0) += weight;
        *self.counts.entry(token).or_default().entry(phrase).or_insert(0.0) += weight;
    }

    fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (tok, row) in &self.counts {
            for (phrase, c) in row {
                let _ = writeln!(out, "{tok}\t{phrase}\t{c}");
            }
        }
        out
    }

    fn from_tsv(text: &str) -> Result<Self, GeneratorError> {
        let mut t = Table::default();
        for (i, line) in text.lines().enumerate() {
            let mut parts = line.split('\t');
            let (Some(tok), Some(phrase), Some(c), None) = (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(GeneratorError::Protocol(format!("bad table line {}", i + 1)));
            };
            let c: f64 = c
                .parse()
                .map_err(|_| GeneratorError::Protocol(format!("bad count on table line {}", i + 1)))?;
            t.add(tok.to_string(), phrase.to_string(), c);
        }
        Ok(t)
    }
}

#[derive(Debug, Clone)]
pub struct TableGenerator {
    live: Table,
    frozen: Option<Table>,
    checkpoints: HashMap<String, Table>,
    checkpoint_dir: Option<PathBuf>,
    smoothing_vocab: f64,
}

impl Default for TableGenerator {
    fn default() -> Self {
        Self::new()
    }
}

impl TableGenerator {
    pub fn new() -> Self {
        Self {
            live: Table::default(),
            frozen: None,
            checkpoints: HashMap::new(),
            checkpoint_dir: None,
            smoothing_vocab: DEFAULT_SMOOTHING_VOCAB,
        }
    }

    /// Persist checkpoints as `<dir>/<tag>` instead of keeping them in memory.
    pub fn with_checkpoint_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.checkpoint_dir = Some(dir.into());
        self
    }

    pub fn with_smoothing_vocab(mut self, vocab: f64) -> Self {
        assert!(vocab >= 1.0);
        self.smoothing_vocab = vocab;
        self
    }

    /// Number of distinct source tokens with learned mappings.
    pub fn known_tokens(&self) -> usize {
        self.live.counts.len()
    }

    /// Mean negative log-likelihood of the aligned units under the live table.
    pub fn loss(&self, sources: &[String], targets: &[String]) -> Result<f64, GeneratorError> {
        check_batch(sources, targets)?;
        let mut nll = 0.0;
        let mut units = 0usize;
        for (s, t) in sources.iter().zip(targets) {
            for (tok, phrase) in align(&tokenize(s), &tokenize(t)) {
                nll -= self.live.prob(&tok, &phrase.join(" "), self.smoothing_vocab).ln();
                units += 1;
            }
        }
        Ok(if units == 0 { 0.0 } else { nll / units as f64 })
    }

    fn active(&self) -> &Table {
        self.frozen.as_ref().unwrap_or(&self.live)
    }
}

impl Generator for TableGenerator {
    fn name(&self) -> &str {
        "table"
    }

    fn decode(&mut self, sources: &[String], decoding: Decoding) -> Result<Vec<String>, GeneratorError> {
        let table = self.active();
        Ok(match decoding {
            Decoding::Beam(_) => sources.iter().map(|s| table.translate(s, None)).collect(),
            Decoding::Sample { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                sources.iter().map(|s| table.translate(s, Some(&mut rng))).collect()
            }
        })
    }

    /// Returns the loss under the parameters before this step, then adds the
    /// aligned counts scaled by `weight`.
    fn train_weighted(&mut self, sources: &[String], targets: &[String], weight: f64) -> Result<f64, GeneratorError> {
        let loss = self.loss(sources, targets)?;
        if weight > 0.0 {
            for (s, t) in sources.iter().zip(targets) {
                for (tok, phrase) in align(&tokenize(s), &tokenize(t)) {
                    self.live.add(tok, phrase.join(" "), weight);
                }
            }
        }
        Ok(loss)
    }

    fn snapshot(&mut self) -> Result<(), GeneratorError> {
        self.frozen = Some(self.live.clone());
        Ok(())
    }

    fn restore(&mut self) -> Result<(), GeneratorError> {
        self.frozen.take().map(|_| ()).ok_or(GeneratorError::NoSnapshot)
    }

    fn save(&mut self, tag: &str) -> Result<(), GeneratorError> {
        match &self.checkpoint_dir {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                fs::write(dir.join(tag), self.live.to_tsv())?;
            }
            None => {
                self.checkpoints.insert(tag.to_string(), self.live.clone());
            }
        }
        Ok(())
    }

    fn load(&mut self, tag: &str) -> Result<(), GeneratorError> {
        self.live = match &self.checkpoint_dir {
            Some(dir) => {
                let path = dir.join(tag);
                if !path.exists() {
                    return Err(GeneratorError::UnknownCheckpoint(tag.to_string()));
                }
                Table::from_tsv(&fs::read_to_string(path)?)?
            }
            None => self
                .checkpoints
                .get(tag)
                .cloned()
                .ok_or_else(|| GeneratorError::UnknownCheckpoint(tag.to_string()))?,
        };
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    fn aligned(src: &str, tgt: &str) -> Vec<(String, String)> {
        align(&tokenize(src), &tokenize(tgt))
            .into_iter()
            .map(|(s, p)| (s, p.join(" ")))
            .collect()
    }

    #[test]
    fn alignment_shapes() {
        assert_eq!(
            aligned("r u going", "are you going"),
            [("r", "are"), ("u", "you"), ("going", "going")].map(|(a, b)| (a.to_string(), b.to_string()))
        );
        let a = aligned("i wanna go", "i want to go");
        assert_eq!(a[1], ("wanna".to_string(), "want to".to_string()));
        let a = aligned("ok lol", "ok");
        assert_eq!(a[1], ("lol".to_string(), String::new()));
        let a = aligned("thanks", "many thanks");
        assert_eq!(a[0].1, "many thanks");
    }

    #[test]
    fn learns_substitution_after_one_step() {
        let mut g = TableGenerator::new();
        g.train_step(&v(&["u"]), &v(&["you"])).unwrap();
        assert_eq!(g.generate(&v(&["u ok"]), 5).unwrap(), v(&["you ok"]));
        assert_eq!(g.generate(&v(&[""]), 5).unwrap(), v(&[""]));
    }

    #[test]
    fn repeated_batch_loss_decreases_then_plateaus() {
        let mut g = TableGenerator::new();
        let src = v(&["r u ok", "i wanna go", "thx", "c u later", "gr8 job"]);
        let tgt = v(&["are you okay", "i want to go", "thanks", "see you later", "great job"]);
        let losses: Vec<f64> = (0..10).map(|_| g.train_step(&src, &tgt).unwrap()).collect();
        for w in losses.windows(2) {
            assert!(w[1] < w[0], "{losses:?}");
        }
        assert!(losses[0] - losses[1] > losses[8] - losses[9]);
        assert!(losses.iter().all(|l| l.is_finite() && *l >= 0.0));
    }

    #[test]
    fn snapshot_isolates_generation() {
        let mut g = TableGenerator::new();
        g.snapshot().unwrap();
        g.train_step(&v(&["u"]), &v(&["you"])).unwrap();
        assert_eq!(g.generate(&v(&["u"]), 1).unwrap(), v(&["u"]));
        g.restore().unwrap();
        assert_eq!(g.generate(&v(&["u"]), 1).unwrap(), v(&["you"]));
        assert!(matches!(g.restore(), Err(GeneratorError::NoSnapshot)));
        g.snapshot().unwrap();
        g.train_step(&v(&["u"]), &v(&["yu"])).unwrap();
        g.train_step(&v(&["u"]), &v(&["yu"])).unwrap();
        g.snapshot().unwrap();
        assert_eq!(g.generate(&v(&["u"]), 1).unwrap(), v(&["yu"]));
    }

    #[test]
    fn generation_is_pure() {
        let mut g = TableGenerator::new();
        g.train_step(&v(&["u r"]), &v(&["you are"])).unwrap();
        let before = g.live.clone();
        for _ in 0..5 {
            g.generate(&v(&["u r here", "x"]), 5).unwrap();
            g.decode(&v(&["u"]), Decoding::Sample { seed: 1 }).unwrap();
        }
        assert_eq!(g.live, before);
    }

    #[test]
    fn zero_weight_leaves_table_untouched() {
        let mut g = TableGenerator::new();
        let loss = g.train_weighted(&v(&["u"]), &v(&["you"]), 0.0).unwrap();
        assert!(loss > 0.0);
        assert_eq!(g.known_tokens(), 0);
    }

    #[test]
    fn checkpoints_in_memory_and_on_disk() {
        let dir = tempfile::TempDir::new().unwrap();
        for mut g in [TableGenerator::new(), TableGenerator::new().with_checkpoint_dir(dir.path())] {
            g.train_step(&v(&["u"]), &v(&["you"])).unwrap();
            g.save("best").unwrap();
            g.train_step(&v(&["u", "u"]), &v(&["yu", "yu"])).unwrap();
            assert_eq!(g.generate(&v(&["u"]), 1).unwrap(), v(&["yu"]));
            g.load("best").unwrap();
            assert_eq!(g.generate(&v(&["u"]), 1).unwrap(), v(&["you"]));
            assert!(matches!(g.load("nope"), Err(GeneratorError::UnknownCheckpoint(_))));
        }
    }
}
