//! Tab-separated dictionaries used by the rule-based perturbations.
//!
//! Formats (UTF-8, `#` starts a comment line):
//! * spelling: `word<TAB>variant1,variant2,...`
//! * abbreviation: `phrase<TAB>abbrev`
//! * synonym: `word<TAB>syn1,syn2,...`

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::corpus::tokenize;

/// Longest phrase an abbreviation entry may cover, in tokens.
pub const MAX_ABBREV_PHRASE: usize = 3;

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{path}:{line}: {msg}")]
    InvariantViolation {
        path: String,
        line: usize,
        msg: String,
    },
}

fn entries<'a>(text: &'a str, origin: &'a str) -> impl Iterator<Item = Result<(usize, &'a str, &'a str), LexiconError>> + 'a {
    text.lines().enumerate().filter_map(move |(i, raw)| {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            return None;
        }
        Some(match line.split_once('\t') {
            Some((k, v)) if !k.trim().is_empty() && !v.trim().is_empty() => Ok((i + 1, k.trim(), v.trim())),
            _ => Err(LexiconError::Parse {
                path: origin.to_string(),
                line: i + 1,
                msg: "expected `key<TAB>value`".into(),
            }),
        })
    })
}

fn split_list(v: &str) -> Vec<String> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

fn read(path: &Path) -> Result<String, LexiconError> {
    fs::read_to_string(path).map_err(|source| LexiconError::Io {
        path: path.to_owned(),
        source,
    })
}

/// Word → misspelled variants. Keys are stored lowercase.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SpellingDict {
    map: HashMap<String, Vec<String>>,
}

impl SpellingDict {
    pub fn parse(text: &str, origin: &str) -> Result<Self, LexiconError> {
        let mut dict = Self::default();
        for e in entries(text, origin) {
            let (line, key, value) = e?;
            let key = key.to_lowercase();
            let variants = split_list(value);
            if variants.is_empty() {
                return Err(LexiconError::Parse {
                    path: origin.to_string(),
                    line,
                    msg: "no variants".into(),
                });
            }
            if variants.iter().any(|v| v.to_lowercase() == key) {
                return Err(LexiconError::InvariantViolation {
                    path: origin.to_string(),
                    line,
                    msg: format!("variant of `{key}` equals the word itself"),
                });
            }
            dict.extend(key, variants);
        }
        Ok(dict)
    }

    pub fn load(path: &Path) -> Result<Self, LexiconError> {
        Self::parse(&read(path)?, &path.display().to_string())
    }

    /// Builds from in-memory pairs, skipping variants equal to their word.
    pub fn from_pairs<I, K, V>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (K, Vec<V>)>,
        K: AsRef<str>,
        V: Into<String>,
    {
        let mut dict = Self::default();
        for (k, vs) in pairs {
            let key = k.as_ref().to_lowercase();
            let vs: Vec<String> = vs
                .into_iter()
                .map(Into::into)
                .filter(|v: &String| v.to_lowercase() != key)
                .collect();
            if !vs.is_empty() {
                dict.extend(key, vs);
            }
        }
        dict
    }

    fn extend(&mut self, key: String, variants: Vec<String>) {
        let slot = self.map.entry(key).or_default();
        for v in variants {
            if !slot.contains(&v) {
                slot.push(v);
            }
        }
    }

    /// Variants for a token, matched case-insensitively.
    pub fn variants(&self, token: &str) -> Option<&[String]> {
        self.map.get(&token.to_lowercase()).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn to_tsv(&self) -> String {
        let mut keys: Vec<_> = self.map.keys().collect();
        keys.sort();
        keys.into_iter()
            .map(|k| format!("{k}\t{}\n", self.map[k].join(",")))
            .collect()
    }
}

/// Phrase (1–3 lowercase tokens) → abbreviation tokens.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AbbrevDict {
    map: HashMap<Vec<String>, Vec<String>>,
    longest: usize,
}

impl AbbrevDict {
    pub fn parse(text: &str, origin: &str) -> Result<Self, LexiconError> {
        let mut dict = Self::default();
        for e in entries(text, origin) {
            let (line, phrase, abbrev) = e?;
            let violation = |msg: String| LexiconError::InvariantViolation {
                path: origin.to_string(),
                line,
                msg,
            };
            let phrase: Vec<String> = tokenize(&phrase.to_lowercase());
            let abbrev = tokenize(abbrev);
            if phrase.len() > MAX_ABBREV_PHRASE {
                return Err(violation(format!(
                    "phrase longer than {MAX_ABBREV_PHRASE} tokens"
                )));
            }
            if abbrev.iter().map(|t| t.to_lowercase()).eq(phrase.iter().cloned()) {
                return Err(violation(format!("`{}` maps to itself", phrase.join(" "))));
            }
            if dict.map.contains_key(&phrase) {
                log::warn!("{origin}:{line}: duplicate phrase `{}` ignored", phrase.join(" "));
                continue;
            }
            dict.insert(phrase, abbrev);
        }
        Ok(dict)
    }

    pub fn load(path: &Path) -> Result<Self, LexiconError> {
        Self::parse(&read(path)?, &path.display().to_string())
    }

    /// Builds from in-memory `(phrase, abbreviation)` pairs. Invalid pairs
    /// (too long, identity) are skipped.
    pub fn from_pairs<I, P, A>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (P, A)>,
        P: AsRef<str>,
        A: AsRef<str>,
    {
        let mut dict = Self::default();
        for (p, a) in pairs {
            let phrase = tokenize(&p.as_ref().to_lowercase());
            let abbrev = tokenize(a.as_ref());
            let identity = abbrev.iter().map(|t| t.to_lowercase()).eq(phrase.iter().cloned());
            if phrase.is_empty() || phrase.len() > MAX_ABBREV_PHRASE || identity {
                continue;
            }
            dict.map.entry(phrase.clone()).or_insert_with(|| abbrev);
            dict.longest = dict.longest.max(phrase.len());
        }
        dict
    }

    fn insert(&mut self, phrase: Vec<String>, abbrev: Vec<String>) {
        self.longest = self.longest.max(phrase.len());
        self.map.insert(phrase, abbrev);
    }

    /// Longest phrase starting at `tokens[0]`: returns (phrase length, abbreviation).
    pub fn longest_match<S: AsRef<str>>(&self, tokens: &[S]) -> Option<(usize, &[String])> {
        let max = self.longest.min(tokens.len());
        (1..=max).rev().find_map(|n| {
            let key: Vec<String> = tokens[..n].iter().map(|t| t.as_ref().to_lowercase()).collect();
            self.map.get(&key).map(|a| (n, a.as_slice()))
        })
    }

    pub fn get(&self, phrase: &str) -> Option<String> {
        self.map
            .get(&tokenize(&phrase.to_lowercase()))
            .map(|a| a.join(" "))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn to_tsv(&self) -> String {
        let mut rows: Vec<String> = self
            .map
            .iter()
            .map(|(p, a)| format!("{}\t{}\n", p.join(" "), a.join(" ")))
            .collect();
        rows.sort();
        rows.concat()
    }
}

/// Word → synonyms, deduplicated and excluding the headword.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SynonymLexicon {
    map: HashMap<String, Vec<String>>,
}

impl SynonymLexicon {
    pub fn parse(text: &str, origin: &str) -> Result<Self, LexiconError> {
        let mut lex = Self::default();
        for e in entries(text, origin) {
            let (_, key, value) = e?;
            lex.extend(key.to_lowercase(), split_list(value));
        }
        Ok(lex)
    }

    pub fn load(path: &Path) -> Result<Self, LexiconError> {
        Self::parse(&read(path)?, &path.display().to_string())
    }

    pub fn from_pairs<I, K, V>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (K, Vec<V>)>,
        K: AsRef<str>,
        V: Into<String>,
    {
        let mut lex = Self::default();
        for (k, vs) in pairs {
            lex.extend(k.as_ref().to_lowercase(), vs.into_iter().map(Into::into).collect());
        }
        lex
    }

    fn extend(&mut self, key: String, synonyms: Vec<String>) {
        let mut slot = self.map.remove(&key).unwrap_or_default();
        for s in synonyms {
            if s.to_lowercase() != key && !slot.contains(&s) && !s.contains(char::is_whitespace) {
                slot.push(s);
            }
        }
        if !slot.is_empty() {
            self.map.insert(key, slot);
        }
    }

    pub fn synonyms(&self, token: &str) -> Option<&[String]> {
        self.map.get(&token.to_lowercase()).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn abbrev_line_parses() {
        let d = AbbrevDict::parse("# comment\nyou\tu\nare you\tr u\n", "t").unwrap();
        assert_eq!(d.get("you").as_deref(), Some("u"));
        assert_eq!(d.get("are you").as_deref(), Some("r u"));
        let toks = ["are", "you", "going"];
        assert_eq!(d.longest_match(&toks).unwrap().0, 2);
    }

    #[test]
    fn abbrev_identity_is_rejected() {
        let e = AbbrevDict::parse("ok\tfine\nu\tu\n", "t").unwrap_err();
        assert!(matches!(e, LexiconError::InvariantViolation { line: 2, .. }));
        assert!(matches!(
            AbbrevDict::parse("a b c d\tx\n", "t"),
            Err(LexiconError::InvariantViolation { .. })
        ));
    }

    #[test]
    fn spelling_line_parses() {
        let d = SpellingDict::parse("the\tteh,hte\n", "t").unwrap();
        assert_eq!(d.variants("the").unwrap(), ["teh", "hte"]);
        assert_eq!(d.variants("The").unwrap().len(), 2);
        assert!(matches!(
            SpellingDict::parse("the\tthe\n", "t"),
            Err(LexiconError::InvariantViolation { .. })
        ));
        assert!(matches!(
            SpellingDict::parse("x\ny\tz\n", "t"),
            Err(LexiconError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn synonyms_are_deduplicated_without_headword() {
        let l = SynonymLexicon::parse("get\tobtain,get,begin,obtain\n", "t").unwrap();
        assert_eq!(l.synonyms("get").unwrap(), ["obtain", "begin"]);
    }

    #[test]
    fn tsv_round_trip() {
        let d = SpellingDict::from_pairs([("have", vec!["hav", "haev"]), ("you", vec!["yuo"])]);
        assert_eq!(SpellingDict::parse(&d.to_tsv(), "t").unwrap(), d);
        let a = AbbrevDict::from_pairs([("are you", "r u"), ("you", "u"), ("ok", "ok")]);
        assert_eq!(a.len(), 2);
        assert_eq!(AbbrevDict::parse(&a.to_tsv(), "t").unwrap(), a);
    }
}
