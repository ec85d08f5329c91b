//! Parallel, unlabeled and multi-reference corpora.
//!
//! Files are UTF-8, one sentence per line. Tokenization is plain Unicode
//! whitespace splitting; case and punctuation are kept verbatim.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Number of references attached to every evaluation sentence.
pub const EVAL_REFERENCES: usize = 4;

/// Default cap on tokens per unlabeled sentence.
pub const DEFAULT_MAX_TOKENS: usize = 50;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: invalid UTF-8")]
    Encoding { path: PathBuf },
    #[error("line count mismatch: {left} has {left_lines} lines, {right} has {right_lines}")]
    LineCountMismatch {
        left: PathBuf,
        left_lines: usize,
        right: PathBuf,
        right_lines: usize,
    },
    #[error("{path}:{line}: empty line")]
    EmptyLine { path: PathBuf, line: usize },
    #[error("expected exactly {EVAL_REFERENCES} reference files, got {0}")]
    WrongReferenceCount(usize),
}

/// Split on Unicode whitespace.
pub fn tokenize(raw: &str) -> Vec<String> {
    raw.split_whitespace().map(str::to_owned).collect()
}

pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(t.as_ref());
    }
    out
}

/// A sentence kept both as raw text and as whitespace tokens.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Sentence {
    raw: String,
    tokens: Vec<String>,
}

impl Sentence {
    pub fn new(raw: impl Into<String>) -> Self {
        let raw = raw.into();
        let tokens = tokenize(&raw);
        Self { raw, tokens }
    }

    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        debug_assert!(tokens.iter().all(|t| !t.is_empty() && !t.contains(char::is_whitespace)));
        Self {
            raw: detokenize(&tokens),
            tokens,
        }
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Whitespace-normalized text.
    pub fn text(&self) -> String {
        detokenize(&self.tokens)
    }

    pub fn truncated(&self, max_tokens: usize) -> Self {
        if self.tokens.len() <= max_tokens {
            return self.clone();
        }
        Self::from_tokens(self.tokens[..max_tokens].iter().cloned())
    }
}

impl fmt::Display for Sentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text())
    }
}

impl From<&str> for Sentence {
    fn from(s: &str) -> Self {
        Sentence::new(s)
    }
}

/// An (informal source, formal target) training pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelExample {
    pub source: Sentence,
    pub target: Sentence,
}

/// A test source with its four human references.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalExample {
    pub source: Sentence,
    pub references: [Sentence; EVAL_REFERENCES],
}

/// Source-side unlabeled sentences for consistency training.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UnlabeledPool {
    pub sentences: Vec<Sentence>,
    pub domain_tag: String,
}

impl UnlabeledPool {
    pub fn new(sentences: Vec<Sentence>, domain_tag: impl Into<String>) -> Self {
        Self {
            sentences,
            domain_tag: domain_tag.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

/// Reads a file as lines, rejecting invalid UTF-8. A single trailing newline
/// does not produce an extra line.
pub fn read_lines(path: &Path) -> Result<Vec<String>, CorpusError> {
    let bytes = fs::read(path).map_err(|source| CorpusError::Io {
        path: path.to_owned(),
        source,
    })?;
    let text = String::from_utf8(bytes).map_err(|_| CorpusError::Encoding {
        path: path.to_owned(),
    })?;
    if text.is_empty() {
        return Ok(Vec::new());
    }
    let body = text.strip_suffix('\n').unwrap_or(&text);
    Ok(body
        .split('\n')
        .map(|l| l.strip_suffix('\r').unwrap_or(l).to_owned())
        .collect())
}

fn read_sentences(path: &Path) -> Result<Vec<Sentence>, CorpusError> {
    read_lines(path)?
        .into_iter()
        .enumerate()
        .map(|(i, line)| {
            let s = Sentence::new(line);
            if s.is_empty() {
                Err(CorpusError::EmptyLine {
                    path: path.to_owned(),
                    line: i + 1,
                })
            } else {
                Ok(s)
            }
        })
        .collect()
}

fn check_same_len(
    left: &Path,
    left_lines: usize,
    right: &Path,
    right_lines: usize,
) -> Result<(), CorpusError> {
    if left_lines != right_lines {
        return Err(CorpusError::LineCountMismatch {
            left: left.to_owned(),
            left_lines,
            right: right.to_owned(),
            right_lines,
        });
    }
    Ok(())
}

pub fn load_parallel(src_path: &Path, tgt_path: &Path) -> Result<Vec<ParallelExample>, CorpusError> {
    let src = read_sentences(src_path)?;
    let tgt = read_sentences(tgt_path)?;
    check_same_len(src_path, src.len(), tgt_path, tgt.len())?;
    Ok(src
        .into_iter()
        .zip(tgt)
        .map(|(source, target)| ParallelExample { source, target })
        .collect())
}

pub fn load_eval<P: AsRef<Path>>(
    src_path: &Path,
    ref_paths: &[P],
) -> Result<Vec<EvalExample>, CorpusError> {
    if ref_paths.len() != EVAL_REFERENCES {
        return Err(CorpusError::WrongReferenceCount(ref_paths.len()));
    }
    let src = read_sentences(src_path)?;
    let mut refs = Vec::with_capacity(EVAL_REFERENCES);
    for p in ref_paths {
        let r = read_sentences(p.as_ref())?;
        check_same_len(src_path, src.len(), p.as_ref(), r.len())?;
        refs.push(r.into_iter());
    }
    Ok(src
        .into_iter()
        .map(|source| EvalExample {
            source,
            references: std::array::from_fn(|k| refs[k].next().expect("length checked")),
        })
        .collect())
}

/// Loads source-side sentences, truncating any longer than `max_tokens`.
/// Blank lines are rejected like in the parallel loader.
pub fn load_unlabeled(
    path: &Path,
    max_tokens: usize,
    domain_tag: &str,
) -> Result<UnlabeledPool, CorpusError> {
    let mut truncated = 0usize;
    let sentences = read_sentences(path)?
        .into_iter()
        .map(|s| {
            if s.len() > max_tokens {
                truncated += 1;
                s.truncated(max_tokens)
            } else {
                s
            }
        })
        .collect();
    if truncated > 0 {
        log::warn!(
            "{}: truncated {truncated} sentences to {max_tokens} tokens",
            path.display()
        );
    }
    Ok(UnlabeledPool::new(sentences, domain_tag))
}

/// Loads one sentence per line without the non-empty check (hypothesis files
/// may legitimately contain empty outputs).
pub fn load_sentences(path: &Path) -> Result<Vec<Sentence>, CorpusError> {
    Ok(read_lines(path)?.into_iter().map(Sentence::new).collect())
}

pub fn write_sentences<'a, I>(path: &Path, sentences: I) -> Result<(), CorpusError>
where
    I: IntoIterator<Item = &'a Sentence>,
{
    let io_err = |source| CorpusError::Io {
        path: path.to_owned(),
        source,
    };
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(io_err)?);
    for s in sentences {
        writeln!(f, "{}", s.text()).map_err(io_err)?;
    }
    f.flush().map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use tempfile::TempDir;

    fn write(dir: &TempDir, name: &str, body: &str) -> PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("r u ok?"), ["r", "u", "ok?"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("a  b"), ["a", "b"]);
        assert_eq!(tokenize("\tx\u{3000}y \n"), ["x", "y"]);
    }

    #[test]
    fn parallel_pairs_in_file_order() {
        let d = TempDir::new().unwrap();
        let s = write(&d, "train.informal", "r u ok\ngonna go\n");
        let t = write(&d, "train.formal", "Are you okay?\nI am going to go.\n");
        let ex = load_parallel(&s, &t).unwrap();
        assert_eq!(ex.len(), 2);
        assert_eq!(ex[0].source.text(), "r u ok");
        assert_eq!(ex[1].target.text(), "I am going to go.");
    }

    #[test]
    fn parallel_mismatch() {
        let d = TempDir::new().unwrap();
        let s = write(&d, "a", "1\n2\n3\n");
        let t = write(&d, "b", "1\n2\n");
        assert!(matches!(
            load_parallel(&s, &t),
            Err(CorpusError::LineCountMismatch { left_lines: 3, right_lines: 2, .. })
        ));
    }

    #[test]
    fn whitespace_line_names_line_number() {
        let d = TempDir::new().unwrap();
        let s = write(&d, "a", "x\n   \ny\n");
        let t = write(&d, "b", "x\ny\nz\n");
        match load_parallel(&s, &t) {
            Err(CorpusError::EmptyLine { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_utf8_is_an_encoding_error() {
        let d = TempDir::new().unwrap();
        let s = d.path().join("bad");
        fs::write(&s, [0x66, 0xff, 0x0a]).unwrap();
        let t = write(&d, "b", "x\n");
        assert!(matches!(load_parallel(&s, &t), Err(CorpusError::Encoding { .. })));
    }

    #[test]
    fn eval_loading() {
        let d = TempDir::new().unwrap();
        let body: String = (0..10).map(|i| format!("line {i}\n")).collect();
        let src = write(&d, "test.informal", &body);
        let refs: Vec<_> = (0..4)
            .map(|k| write(&d, &format!("test.ref{k}"), &body.replace("line", &format!("ref{k}"))))
            .collect();
        let ex = load_eval(&src, &refs).unwrap();
        assert_eq!(ex.len(), 10);
        assert_eq!(ex[3].references[2].text(), "ref2 3");

        assert!(matches!(
            load_eval(&src, &refs[..3]),
            Err(CorpusError::WrongReferenceCount(3))
        ));

        let short = write(&d, "short", "only\n");
        let mut bad = refs.clone();
        bad[1] = short;
        assert!(matches!(
            load_eval(&src, &bad),
            Err(CorpusError::LineCountMismatch { .. })
        ));
    }

    #[test]
    fn unlabeled_truncates_long_sentences() {
        let d = TempDir::new().unwrap();
        let long: Vec<String> = (0..60).map(|i| format!("w{i}")).collect();
        let p = write(&d, "u", &format!("short one\n{}\n", long.join(" ")));
        let pool = load_unlabeled(&p, 50, "em").unwrap();
        assert_eq!(pool.len(), 2);
        assert_eq!(pool.sentences[1].len(), 50);
        assert_eq!(pool.domain_tag, "em");
    }

    proptest! {
        #[test]
        fn detokenize_tokenize_is_idempotent(raw in "[a-zA-Z?!. \t]{0,40}") {
            let once = detokenize(&tokenize(&raw));
            prop_assert_eq!(detokenize(&tokenize(&once)), once.clone());
            prop_assert!(!once.contains("  "));
            for t in tokenize(&raw) {
                prop_assert!(!t.is_empty() && !t.contains(char::is_whitespace));
            }
        }

        #[test]
        fn write_then_reload_keeps_tokens(lines in proptest::collection::vec("[a-z]{1,5}( [a-z]{1,5}){0,6}", 1..20)) {
            let d = TempDir::new().unwrap();
            let p = d.path().join("c");
            let sents: Vec<Sentence> = lines.iter().map(|l| Sentence::new(l.as_str())).collect();
            write_sentences(&p, &sents).unwrap();
            let back = load_sentences(&p).unwrap();
            prop_assert_eq!(back.len(), sents.len());
            for (a, b) in back.iter().zip(&sents) {
                prop_assert_eq!(a.tokens(), b.tokens());
            }
        }
    }
}
