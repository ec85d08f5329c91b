//! A small formality-transfer task built from sentence templates.
//!
//! Formal sentences are sampled from templates; the informal side is the
//! composition of spelling errors, abbreviations and random capitalization.
//! Everything is deterministic in the seed.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{write_sentences, CorpusError, ParallelExample, Sentence, UnlabeledPool};
use crate::perturb::{apply, AbbrevDict, Lexicons, PerturbConfig, PerturbError, PerturbMethod, SpellingDict};

const NAMES: &[&str] = &[
    "John", "Mary", "Peter", "Susan", "David", "Linda", "James", "Karen", "Robert", "Emily", "Thomas", "Nancy",
];

const NOUNS: &[&str] = &[
    "doctor", "teacher", "computer", "movie", "restaurant", "weather", "problem", "question", "answer", "music",
    "concert", "vacation", "apartment", "neighbor", "company", "interview", "dinner", "birthday",
    "present", "letter", "message", "picture", "garden", "kitchen", "window", "bicycle", "library", "hospital",
    "airport", "project", "meeting", "office", "manager", "student", "homework", "exercise", "program", "magazine",
    "newspaper", "television", "telephone", "weekend", "holiday", "account", "business", "situation", "relationship",
    "boyfriend", "girlfriend", "husband", "daughter", "brother", "sister", "mother", "father", "friend", "family",
];

const ADJECTIVES: &[&str] = &[
    "beautiful", "wonderful", "terrible", "important", "different", "difficult", "interesting", "expensive",
    "comfortable", "dangerous", "famous", "serious", "strange", "special", "favorite", "perfect", "honest",
    "careful", "popular", "useful", "boring", "excellent", "horrible", "amazing", "pleasant", "quiet", "lovely",
    "nervous", "curious", "patient",
];

const VERBS: &[&str] = &[
    "visit", "call", "watch", "finish", "explain", "remember", "consider", "recommend", "describe", "believe",
    "understand", "forget", "change", "contact", "borrow", "return", "discuss", "compare", "prepare", "receive",
    "answer", "bring", "follow", "imagine", "mention", "organize", "practice", "celebrate", "schedule", "improve",
];

const ADVERBS: &[&str] = &[
    "definitely", "probably", "really", "honestly", "actually", "certainly", "usually", "immediately", "carefully",
    "seriously", "absolutely", "quickly", "finally", "especially", "completely",
];

const TIMES: &[&str] = &[
    "tonight", "tomorrow", "today", "before Friday", "next week", "this weekend", "after dinner", "every morning",
    "later today", "right now",
];

const OPINIONS: &[&str] = &["think", "believe", "know", "suppose", "guess", "feel"];

/// Abbreviations applied to the formal side; all informal tokens are
/// distinct from formal vocabulary.
pub const ABBREVIATIONS: &[(&str, &str)] = &[
    ("you", "u"),
    ("are", "r"),
    ("your", "ur"),
    ("going to", "gonna"),
    ("want to", "wanna"),
    ("have to", "hafta"),
    ("because", "cuz"),
    ("please", "plz"),
    ("thanks", "thx"),
    ("people", "ppl"),
    ("tonight", "tonite"),
    ("really", "rly"),
    ("before", "b4"),
    ("great", "gr8"),
    ("see", "c"),
    ("do not know", "dunno"),
    ("to be honest", "tbh"),
    ("I am", "im"),
    ("probably", "prolly"),
    ("tomorrow", "tmrw"),
];

fn pick<'a, R: Rng>(rng: &mut R, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).expect("non-empty word list")
}

fn article(word: &str) -> &'static str {
    if word.starts_with(['a', 'e', 'i', 'o', 'u']) {
        "an"
    } else {
        "a"
    }
}

/// One formal sentence, tokens separated by spaces.
pub fn formal_sentence<R: Rng>(rng: &mut R) -> String {
    let n1 = pick(rng, NOUNS);
    let n2 = pick(rng, NOUNS);
    let adj = pick(rng, ADJECTIVES);
    let verb = pick(rng, VERBS);
    let adv = pick(rng, ADVERBS);
    let time = pick(rng, TIMES);
    let name = pick(rng, NAMES);
    let op = pick(rng, OPINIONS);
    match rng.gen_range(0..12) {
        0 => format!("I {op} that your {n1} is {adj} ."),
        1 => format!("Are you going to {verb} the {n1} {time} ?"),
        2 => format!("You should {adv} {verb} your {n1} {time} ."),
        3 => format!("{name} wants to {verb} the {adj} {n1} {time} ."),
        4 => format!("Because the {n1} is {adj} , we are going to {verb} it ."),
        5 => format!("I do not know why the {n1} is so {adj} ."),
        6 => format!("To be honest , I {adv} want to {verb} {} {adj} {n1} .", article(adj)),
        7 => format!("Please {verb} the {n1} before you {verb} the {n2} ."),
        8 => format!("I am {adv} going to see my {n1} {time} ."),
        9 => format!("Thanks for the {adj} {n1} , it was great ."),
        10 => format!("People have to {verb} their {n1} because it is {adj} ."),
        _ => format!("Your {n1} and my {n2} are {adv} {adj} ."),
    }
}

/// Every lowercase word the templates can produce.
pub fn formal_vocabulary() -> BTreeSet<String> {
    let fixed = "i that your is are you going to the should wants because , we it do not know why so to be honest want \
                 a an please before am see my thanks for was great . ? people have their and";
    let lists: [&[&str]; 8] = [NAMES, NOUNS, ADJECTIVES, VERBS, ADVERBS, TIMES, OPINIONS, &[fixed]];
    lists
        .iter()
        .flat_map(|l| l.iter())
        .flat_map(|s| s.split_whitespace())
        .map(str::to_lowercase)
        .collect()
}

fn variants_of(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    let n = chars.len();
    if n < 4 || !chars.iter().all(|c| c.is_ascii_lowercase()) {
        return Vec::new();
    }
    let mid = n / 2;
    let mut out = Vec::new();
    if chars[mid - 1] != chars[mid] {
        let mut t = chars.clone();
        t.swap(mid - 1, mid);
        out.push(t.into_iter().collect());
    }
    let mut d = chars.clone();
    d.remove(mid);
    out.push(d.into_iter().collect());
    out
}

/// Misspellings for template words: an adjacent transposition and a
/// deletion near the middle. Variants that collide with a real word or with
/// another word's variant are left out.
pub fn spelling_dictionary() -> SpellingDict {
    let vocab = formal_vocabulary();
    let abbrevs: HashSet<String> = ABBREVIATIONS.iter().map(|(_, a)| a.to_lowercase()).collect();
    let mut seen: HashSet<String> = HashSet::new();
    let mut dup: HashSet<String> = HashSet::new();
    for w in &vocab {
        for v in variants_of(w) {
            if !seen.insert(v.clone()) {
                dup.insert(v);
            }
        }
    }
    SpellingDict::from_pairs(vocab.iter().map(|w| {
        let vs: Vec<String> = variants_of(w)
            .into_iter()
            .filter(|v| !vocab.contains(v) && !dup.contains(v) && !abbrevs.contains(v))
            .collect();
        (w.clone(), vs)
    }))
}

pub fn abbreviation_dictionary() -> AbbrevDict {
    AbbrevDict::from_pairs(ABBREVIATIONS.iter().copied())
}

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    /// Distinct formal sentences to generate.
    pub sentences: usize,
    pub labeled: usize,
    pub unlabeled: usize,
    pub valid: usize,
    /// Fraction of tokens misspelled on the informal side.
    pub spell_ratio: f64,
    /// Fraction of tokens uppercased on the informal side.
    pub capital_ratio: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            sentences: 3000,
            labeled: 100,
            unlabeled: 2000,
            valid: 200,
            spell_ratio: 0.3,
            capital_ratio: 0.1,
            seed: 13,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub labeled: Vec<ParallelExample>,
    /// Informal side only.
    pub unlabeled: UnlabeledPool,
    pub valid: Vec<ParallelExample>,
    pub test: Vec<ParallelExample>,
    pub spelling: Arc<SpellingDict>,
    pub abbrev: Arc<AbbrevDict>,
}

/// Spell, then abbreviate, then capitalize.
pub fn informalize<R: Rng>(
    formal: &Sentence,
    spelling: &Arc<SpellingDict>,
    abbrev: &Arc<AbbrevDict>,
    spell_ratio: f64,
    capital_ratio: f64,
    rng: &mut R,
) -> Result<Sentence, PerturbError> {
    let lexicons = Lexicons {
        spelling: Some(spelling.clone()),
        abbrev: Some(abbrev.clone()),
        ..Lexicons::default()
    };
    let steps = [
        (PerturbMethod::Spell, spell_ratio),
        (PerturbMethod::Abbr, 0.0),
        (PerturbMethod::Capital, capital_ratio),
    ];
    let mut s = formal.clone();
    for (method, ratio) in steps {
        let cfg = PerturbConfig::new(method).with_ratio(ratio).with_lexicons(lexicons.clone());
        s = apply(&s, &cfg, rng)?;
    }
    Ok(s)
}

impl SyntheticTask {
    pub fn generate(cfg: &SyntheticConfig) -> Result<Self, PerturbError> {
        assert!(cfg.labeled + cfg.unlabeled + cfg.valid < cfg.sentences, "no room for a test split");
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut seen = HashSet::new();
        let mut formal = Vec::with_capacity(cfg.sentences);
        let mut attempts = 0usize;
        while formal.len() < cfg.sentences {
            attempts += 1;
            assert!(attempts < cfg.sentences * 100, "templates cannot produce enough distinct sentences");
            let s = formal_sentence(&mut rng);
            if seen.insert(s.clone()) {
                formal.push(Sentence::new(s));
            }
        }
        let spelling = Arc::new(spelling_dictionary());
        let abbrev = Arc::new(abbreviation_dictionary());
        let mut pairs = Vec::with_capacity(formal.len());
        for f in formal {
            let informal = informalize(&f, &spelling, &abbrev, cfg.spell_ratio, cfg.capital_ratio, &mut rng)?;
            pairs.push(ParallelExample {
                source: informal,
                target: f,
            });
        }
        let mut rest = pairs.split_off(cfg.labeled);
        let labeled = pairs;
        let mut tail = rest.split_off(cfg.unlabeled);
        let unlabeled = UnlabeledPool::new(rest.into_iter().map(|p| p.source).collect(), "synthetic");
        let test = tail.split_off(cfg.valid);
        Ok(Self {
            labeled,
            unlabeled,
            valid: tail,
            test,
            spelling,
            abbrev,
        })
    }

    /// Writes the splits and dictionaries as plain text files:
    /// `train.informal`, `train.formal`, `unlabeled.informal`,
    /// `valid.{informal,formal}`, `test.informal`, `test.formal.ref0..3`,
    /// `spelling.tsv`, `abbrev.tsv`.
    pub fn write_to(&self, dir: &Path) -> Result<(), CorpusError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| CorpusError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let sides = |xs: &[ParallelExample], name: &str| -> Result<(), CorpusError> {
            write_sentences(&dir.join(format!("{name}.informal")), xs.iter().map(|p| &p.source))?;
            write_sentences(&dir.join(format!("{name}.formal")), xs.iter().map(|p| &p.target))
        };
        sides(&self.labeled, "train")?;
        sides(&self.valid, "valid")?;
        write_sentences(&dir.join("unlabeled.informal"), &self.unlabeled.sentences)?;
        write_sentences(&dir.join("test.informal"), self.test.iter().map(|p| &p.source))?;
        for i in 0..crate::corpus::EVAL_REFERENCES {
            write_sentences(&dir.join(format!("test.formal.ref{i}")), self.test.iter().map(|p| &p.target))?;
        }
        for (name, text) in [("spelling.tsv", self.spelling.to_tsv()), ("abbrev.tsv", self.abbrev.to_tsv())] {
            let path = dir.join(name);
            fs::write(&path, text).map_err(io(&path))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dictionaries_are_consistent() {
        let vocab = formal_vocabulary();
        let spelling = spelling_dictionary();
        assert!(spelling.len() > 150);
        for w in &vocab {
            for v in spelling.variants(w).unwrap_or(&[]) {
                assert!(!vocab.contains(v), "{w} -> {v}");
            }
        }
        assert_eq!(abbreviation_dictionary().len(), ABBREVIATIONS.len());
        for (_, a) in ABBREVIATIONS {
            assert!(!vocab.contains(&a.to_lowercase()), "{a}");
        }
    }

    #[test]
    fn splits_and_determinism() {
        let cfg = SyntheticConfig::default();
        let a = SyntheticTask::generate(&cfg).unwrap();
        assert_eq!(a.labeled.len(), 100);
        assert_eq!(a.unlabeled.len(), 2000);
        assert_eq!(a.valid.len(), 200);
        assert_eq!(a.test.len(), 700);
        let b = SyntheticTask::generate(&cfg).unwrap();
        assert_eq!(a.test, b.test);
        let changed = a.labeled.iter().filter(|p| p.source != p.target).count();
        assert!(changed > 90, "{changed}");
    }

    #[test]
    fn written_files_reload() {
        let dir = tempfile::TempDir::new().unwrap();
        let task = SyntheticTask::generate(&SyntheticConfig {
            sentences: 400,
            labeled: 10,
            unlabeled: 100,
            valid: 20,
            ..SyntheticConfig::default()
        })
        .unwrap();
        task.write_to(dir.path()).unwrap();
        let train = crate::corpus::load_parallel(&dir.path().join("train.informal"), &dir.path().join("train.formal")).unwrap();
        assert_eq!(train, task.labeled);
        let refs: Vec<_> = (0..4).map(|i| dir.path().join(format!("test.formal.ref{i}"))).collect();
        let eval = crate::corpus::load_eval(&dir.path().join("test.informal"), &refs).unwrap();
        assert_eq!(eval.len(), 270);
        let sp = SpellingDict::load(&dir.path().join("spelling.tsv")).unwrap();
        assert_eq!(sp.len(), task.spelling.len());
    }
}
