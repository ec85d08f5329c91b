//! Warm-up on parallel data, then joint supervised and consistency training.
//!
//! Each SSL step draws a supervised batch and an unlabeled batch, perturbs
//! the unlabeled sentences, pseudo-labels the *clean* sentences with a frozen
//! copy of the generator, filters the pairs and trains on the supervised
//! batch plus the retained (perturbed source, pseudo target) pairs.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::thread;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::classifier::StyleClassifier;
use crate::corpus::{EvalExample, ParallelExample, Sentence, UnlabeledPool, DEFAULT_MAX_TOKENS};
use crate::filters::{
    lifecycle, AuditEntry, EpochState, FilterConfig, FilterError, FilterKind, PairAudit, PairFilter,
};
use crate::generator::{Decoding, Generator, GeneratorError};
use crate::metrics::{corpus_bleu, sentence_bleu, BleuConfig, MetricsError};
use crate::ngram::KneserNeyModel;
use crate::perturb::{apply, PerturbConfig, PerturbError, PerturbMethod};

/// Tag of the checkpoint holding the best validation BLEU.
pub const BEST_TAG: &str = "best";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{phase} step {step}: {source}")]
    Generator {
        phase: &'static str,
        step: usize,
        source: GeneratorError,
    },
    #[error("step {step}: {source}")]
    Filter { step: usize, source: FilterError },
    #[error("step {step}: {source}")]
    Perturb { step: usize, source: PerturbError },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{0} is empty")]
    EmptyData(&'static str),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lambda: f64,
    pub sup_batch: usize,
    pub unsup_batch: usize,
    pub warmup_steps: usize,
    /// SSL steps between validations.
    pub validate_every: usize,
    /// Non-improving validations before stopping.
    pub patience: usize,
    pub beam: usize,
    pub max_src_tokens: usize,
    /// Upper bound on SSL steps when early stopping does not fire.
    pub max_ssl_steps: usize,
    /// Decode pseudo targets by sampling instead of beam search.
    pub sample_pseudo: bool,
    /// Unfiltered share of the first unlabeled epoch, used when a filter
    /// does not set its own warm-up length.
    pub filter_warmup_fraction: f64,
    /// Threads used for pair scoring.
    pub workers: usize,
    pub perturb: PerturbConfig,
    pub filters: Vec<FilterConfig<f64>>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            sup_batch: 8,
            unsup_batch: 56,
            warmup_steps: 2000,
            validate_every: 1000,
            patience: 10,
            beam: 5,
            max_src_tokens: DEFAULT_MAX_TOKENS,
            max_ssl_steps: 100_000,
            sample_pseudo: false,
            filter_warmup_fraction: 0.1,
            workers: 1,
            perturb: PerturbConfig::new(PerturbMethod::Spell),
            filters: Vec::new(),
            seed: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, TrainError> {
    value
        .trim()
        .parse()
        .map_err(|_| TrainError::Config(format!("bad value `{value}` for `{key}`")))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let counts = [
            ("sup_batch", self.sup_batch),
            ("unsup_batch", self.unsup_batch),
            ("validate_every", self.validate_every),
            ("patience", self.patience),
            ("beam", self.beam),
            ("max_src_tokens", self.max_src_tokens),
            ("workers", self.workers),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(TrainError::Config(format!("{name} must be positive")));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(TrainError::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.filter_warmup_fraction) {
            return Err(TrainError::Config("filter_warmup_fraction must lie in [0, 1]".into()));
        }
        for f in &self.filters {
            f.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Flat key-value view, as written to `config.txt`.
    pub fn to_key_values(&self) -> Vec<(String, String)> {
        let filters = if self.filters.is_empty() {
            "none".to_string()
        } else {
            self.filters.iter().map(|f| f.kind.to_string()).collect::<Vec<_>>().join(",")
        };
        let first = self.filters.first().copied().unwrap_or(FilterConfig::new(FilterKind::Bleu));
        let kv = [
            ("lambda", self.lambda.to_string()),
            ("sup_batch", self.sup_batch.to_string()),
            ("unsup_batch", self.unsup_batch.to_string()),
            ("warmup_steps", self.warmup_steps.to_string()),
            ("validate_every", self.validate_every.to_string()),
            ("patience", self.patience.to_string()),
            ("beam", self.beam.to_string()),
            ("max_src_tokens", self.max_src_tokens.to_string()),
            ("max_ssl_steps", self.max_ssl_steps.to_string()),
            ("sample_pseudo", self.sample_pseudo.to_string()),
            ("filter_warmup_fraction", self.filter_warmup_fraction.to_string()),
            ("workers", self.workers.to_string()),
            ("seed", self.seed.to_string()),
            ("perturb", self.perturb.method.to_string()),
            ("perturb_ratio", self.perturb.ratio.to_string()),
            ("perturb_seed", self.perturb.seed.to_string()),
            ("mask_token", self.perturb.mask_token.clone()),
            ("filters", filters),
            ("sigma", first.sigma.to_string()),
            ("phi", first.phi.to_string()),
            (
                "filter_warmup_steps",
                first.warmup_unfiltered_steps.map_or("auto".to_string(), |s| s.to_string()),
            ),
            ("freeze_after_one_epoch", first.freeze_after_one_epoch.to_string()),
        ];
        kv.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// Sets one key as named by [`Self::to_key_values`]. Filter parameters
    /// apply to every configured filter, so set `filters` first.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), TrainError> {
        let v = value.trim();
        match key.trim() {
            "lambda" => self.lambda = parse(key, v)?,
            "sup_batch" => self.sup_batch = parse(key, v)?,
            "unsup_batch" => self.unsup_batch = parse(key, v)?,
            "warmup_steps" => self.warmup_steps = parse(key, v)?,
            "validate_every" => self.validate_every = parse(key, v)?,
            "patience" => self.patience = parse(key, v)?,
            "beam" => self.beam = parse(key, v)?,
            "max_src_tokens" => self.max_src_tokens = parse(key, v)?,
            "max_ssl_steps" => self.max_ssl_steps = parse(key, v)?,
            "sample_pseudo" => self.sample_pseudo = parse(key, v)?,
            "filter_warmup_fraction" => self.filter_warmup_fraction = parse(key, v)?,
            "workers" => self.workers = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "perturb" => {
                self.perturb.method = v
                    .parse()
                    .map_err(|e: PerturbError| TrainError::Config(e.to_string()))?
            }
            "perturb_ratio" => self.perturb.ratio = parse(key, v)?,
            "perturb_seed" => self.perturb.seed = parse(key, v)?,
            "mask_token" => self.perturb.mask_token = v.to_string(),
            "filters" => {
                self.filters = if v.is_empty() || v == "none" {
                    Vec::new()
                } else {
                    v.split(',')
                        .map(|k| {
                            k.trim()
                                .parse::<FilterKind>()
                                .map(FilterConfig::new)
                                .map_err(|e| TrainError::Config(e.to_string()))
                        })
                        .collect::<Result<_, _>>()?
                }
            }
            "sigma" => {
                let s: f64 = parse(key, v)?;
                self.filters.iter_mut().for_each(|f| f.sigma = s);
            }
            "phi" => {
                let p: f64 = parse(key, v)?;
                self.filters.iter_mut().for_each(|f| f.phi = p);
            }
            "filter_warmup_steps" => {
                let w = if v == "auto" { None } else { Some(parse(key, v)?) };
                self.filters.iter_mut().for_each(|f| f.warmup_unfiltered_steps = w);
            }
            "freeze_after_one_epoch" => {
                let b: bool = parse(key, v)?;
                self.filters.iter_mut().for_each(|f| f.freeze_after_one_epoch = b);
            }
            other => return Err(TrainError::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.to_key_values() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

/// Sources and reference sets used for BLEU-based model selection.
#[derive(Debug, Clone, Default)]
pub struct ValidationSet {
    pub sources: Vec<String>,
    pub references: Vec<Vec<Vec<String>>>,
}

impl ValidationSet {
    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }
}

impl From<&[ParallelExample]> for ValidationSet {
    fn from(xs: &[ParallelExample]) -> Self {
        Self {
            sources: xs.iter().map(|p| p.source.text()).collect(),
            references: xs.iter().map(|p| vec![p.target.tokens().to_vec()]).collect(),
        }
    }
}

impl From<&[EvalExample]> for ValidationSet {
    fn from(xs: &[EvalExample]) -> Self {
        Self {
            sources: xs.iter().map(|e| e.source.text()).collect(),
            references: xs
                .iter()
                .map(|e| e.references.iter().map(|r| r.tokens().to_vec()).collect())
                .collect(),
        }
    }
}

/// Corpus BLEU of the generator's beam outputs.
pub fn evaluate_bleu<G: Generator + ?Sized>(
    gen: &mut G,
    data: &ValidationSet,
    beam: usize,
) -> Result<f64, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyData("validation set"));
    }
    let hyps = gen.generate(&data.sources, beam).map_err(|source| TrainError::Generator {
        phase: "validation",
        step: 0,
        source,
    })?;
    let hyps: Vec<Vec<String>> = hyps.iter().map(|h| crate::corpus::tokenize(h)).collect();
    Ok(corpus_bleu(&hyps, &data.references, &BleuConfig::corpus())?)
}

/// Models used by the filters; only the ones the configured filters need.
#[derive(Clone, Copy, Default)]
pub struct Scorers<'a> {
    pub classifier: Option<&'a StyleClassifier<f64>>,
    pub lm: Option<&'a KneserNeyModel<f64>>,
}

impl Scorers<'_> {
    fn check(&self, filters: &[FilterConfig<f64>]) -> Result<(), FilterError> {
        for f in filters {
            match f.kind {
                FilterKind::Style if self.classifier.is_none() => {
                    return Err(FilterError::MissingScorer(f.kind, "style classifier"))
                }
                FilterKind::Perplexity if self.lm.is_none() => {
                    return Err(FilterError::MissingScorer(f.kind, "language model"))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Score of a (clean source, pseudo target) pair under one filter.
    pub fn score(&self, kind: FilterKind, u: &Sentence, y_hat: &Sentence) -> f64 {
        match kind {
            FilterKind::Style => {
                let clf = self.classifier.expect("checked");
                clf.predict_formal_prob(y_hat) - clf.predict_formal_prob(u)
            }
            FilterKind::Bleu => sentence_bleu(y_hat.tokens(), u.tokens(), &BleuConfig::sentence()).unwrap_or(0.0),
            FilterKind::Perplexity => self.lm.expect("checked").perplexity(y_hat),
        }
    }
}

/// Shuffled passes over `0..n`, drawing without replacement.
#[derive(Debug, Clone)]
struct EpochSampler {
    order: Vec<usize>,
    pos: usize,
    epochs: usize,
}

impl EpochSampler {
    fn new(n: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        Self { order, pos: 0, epochs: 0 }
    }

    fn draw(&mut self, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            let take = (k - out.len()).min(self.order.len() - self.pos);
            out.extend_from_slice(&self.order[self.pos..self.pos + take]);
            self.pos += take;
            if self.pos == self.order.len() {
                self.epochs += 1;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepLoss {
    pub step: usize,
    pub loss_sup: f64,
    pub loss_unsup: f64,
    pub total: f64,
    pub drawn: usize,
    pub kept: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValidationRecord {
    /// SSL steps completed when validating.
    pub step: usize,
    pub bleu: f64,
    pub best_bleu: f64,
    pub improved: bool,
    pub since_improvement: usize,
    pub mean_loss: f64,
    pub kept: usize,
    pub drawn: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainState {
    pub warmup_losses: Vec<f64>,
    pub ssl_step: usize,
    pub epoch: EpochState,
    pub best_bleu: Option<f64>,
    pub since_improvement: usize,
    pub steps: Vec<StepLoss>,
    pub validations: Vec<ValidationRecord>,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub best_tag: String,
    pub best_bleu: f64,
    pub state: TrainState,
}

/// The data a run needs.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub parallel: Vec<ParallelExample>,
    pub unlabeled: UnlabeledPool,
    pub valid: ValidationSet,
}

/// Outputs of a pseudo-labeling step, before training.
#[derive(Debug, Clone)]
pub struct PseudoPair {
    pub source: Sentence,
    pub perturbed: Sentence,
    pub pseudo_target: Sentence,
    pub filters: Vec<AuditEntry>,
    pub keep: bool,
}

struct RunFiles {
    metrics: BufWriter<File>,
    audit: BufWriter<File>,
    metrics_path: PathBuf,
    audit_path: PathBuf,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub struct Trainer<'a, G: Generator> {
    gen: G,
    cfg: TrainConfig,
    scorers: Scorers<'a>,
    filters: Vec<PairFilter<f64>>,
    filter_warmup: Vec<usize>,
    state: TrainState,
    rng: ChaCha8Rng,
    perturb_rng: ChaCha8Rng,
    files: Option<RunFiles>,
}

impl<'a, G: Generator> Trainer<'a, G> {
    pub fn new(gen: G, cfg: TrainConfig, scorers: Scorers<'a>) -> Result<Self, TrainError> {
        cfg.validate()?;
        scorers
            .check(&cfg.filters)
            .map_err(|source| TrainError::Filter { step: 0, source })?;
        let filters = cfg
            .filters
            .iter()
            .map(|f| PairFilter::new(*f))
            .collect::<Result<_, _>>()
            .map_err(|source| TrainError::Filter { step: 0, source })?;
        Ok(Self {
            gen,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            perturb_rng: ChaCha8Rng::seed_from_u64(cfg.perturb.seed),
            filters,
            filter_warmup: Vec::new(),
            cfg,
            scorers,
            state: TrainState::default(),
            files: None,
        })
    }

    /// Writes `config.txt` and opens `metrics.log` and `filter_audit.log`
    /// under `dir`.
    pub fn with_run_dir(mut self, dir: &Path) -> Result<Self, TrainError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let config = dir.join("config.txt");
        fs::write(&config, self.cfg.to_text()).map_err(io_err(&config))?;
        let metrics_path = dir.join("metrics.log");
        let audit_path = dir.join("filter_audit.log");
        let metrics = BufWriter::new(File::create(&metrics_path).map_err(io_err(&metrics_path))?);
        let audit = BufWriter::new(File::create(&audit_path).map_err(io_err(&audit_path))?);
        self.files = Some(RunFiles {
            metrics,
            audit,
            metrics_path,
            audit_path,
        });
        Ok(self)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn generator(&mut self) -> &mut G {
        &mut self.gen
    }

    pub fn into_generator(self) -> G {
        self.gen
    }

    /// Exactly `warmup_steps` supervised steps; returns the losses.
    pub fn warmup(&mut self, parallel: &[ParallelExample]) -> Result<&[f64], TrainError> {
        if parallel.is_empty() {
            return Err(TrainError::EmptyData("parallel corpus"));
        }
        let mut sampler = EpochSampler::new(parallel.len(), &mut self.rng);
        for step in 0..self.cfg.warmup_steps {
            let idx = sampler.draw(self.cfg.sup_batch, &mut self.rng);
            let (src, tgt) = self.sup_batch(parallel, &idx);
            let loss = self
                .gen
                .train_step(&src, &tgt)
                .map_err(|source| TrainError::Generator {
                    phase: "warm-up",
                    step,
                    source,
                })?;
            self.state.warmup_losses.push(loss);
        }
        Ok(&self.state.warmup_losses)
    }

    fn sup_batch(&self, parallel: &[ParallelExample], idx: &[usize]) -> (Vec<String>, Vec<String>) {
        let max = self.cfg.max_src_tokens;
        idx.iter()
            .map(|&i| (parallel[i].source.truncated(max).text(), parallel[i].target.text()))
            .unzip()
    }

    fn score_pairs(&self, kind: FilterKind, us: &[Sentence], ys: &[Sentence]) -> Vec<f64> {
        let scorers = self.scorers;
        let workers = self.cfg.workers.min(us.len()).max(1);
        if workers == 1 {
            return us.iter().zip(ys).map(|(u, y)| scorers.score(kind, u, y)).collect();
        }
        let chunk = us.len().div_ceil(workers);
        thread::scope(|s| {
            let handles: Vec<_> = us
                .chunks(chunk)
                .zip(ys.chunks(chunk))
                .map(|(uc, yc)| s.spawn(move || uc.iter().zip(yc).map(|(u, y)| scorers.score(kind, u, y)).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("scoring worker panicked"))
                .collect()
        })
    }

    /// Perturbs, pseudo-labels, scores and filters one unlabeled batch.
    pub fn pseudo_label(&mut self, batch: &[Sentence]) -> Result<Vec<PseudoPair>, TrainError> {
        let step = self.state.ssl_step;
        let max = self.cfg.max_src_tokens;
        let clean: Vec<Sentence> = batch.iter().map(|u| u.truncated(max)).collect();
        let mut perturbed = Vec::with_capacity(clean.len());
        for u in &clean {
            perturbed.push(match apply(u, &self.cfg.perturb, &mut self.perturb_rng) {
                Ok(s) => s,
                Err(PerturbError::EmptySentence) => u.clone(),
                Err(source) => return Err(TrainError::Perturb { step, source }),
            });
        }
        let decoding = if self.cfg.sample_pseudo {
            Decoding::Sample {
                seed: self.cfg.seed ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            }
        } else {
            Decoding::Beam(self.cfg.beam)
        };
        let gen_err = |source| TrainError::Generator {
            phase: "pseudo-label",
            step,
            source,
        };
        let texts: Vec<String> = clean.iter().map(Sentence::text).collect();
        self.gen.snapshot().map_err(gen_err)?;
        let outputs = self.gen.decode(&texts, decoding);
        self.gen.restore().map_err(gen_err)?;
        let targets: Vec<Sentence> = outputs.map_err(gen_err)?.into_iter().map(Sentence::new).collect();

        let mut verdicts: Vec<Vec<AuditEntry>> = vec![Vec::with_capacity(self.filters.len()); clean.len()];
        for fi in 0..self.filters.len() {
            let kind = self.filters[fi].kind();
            let scores = self.score_pairs(kind, &clean, &targets);
            let mode = lifecycle(self.state.epoch, self.filter_warmup[fi], self.filters[fi].config());
            let sigma = self.filters[fi].config().sigma;
            let decisions = self.filters[fi]
                .decide(&scores, mode)
                .map_err(|source| TrainError::Filter { step, source })?;
            for (v, d) in verdicts.iter_mut().zip(&decisions) {
                v.push(AuditEntry::from_decision(kind, d, sigma, mode));
            }
        }
        Ok(clean
            .into_iter()
            .zip(perturbed)
            .zip(targets)
            .zip(verdicts)
            .map(|(((source, perturbed), pseudo_target), filters)| PseudoPair {
                keep: filters.iter().all(|f| f.keep),
                source,
                perturbed,
                pseudo_target,
                filters,
            })
            .collect())
    }

    /// One joint step on a supervised batch and an unlabeled batch.
    pub fn ssl_step(
        &mut self,
        sup_src: &[String],
        sup_tgt: &[String],
        unlabeled: &[Sentence],
    ) -> Result<StepLoss, TrainError> {
        let step = self.state.ssl_step;
        let pairs = self.pseudo_label(unlabeled)?;
        if let Some(files) = &mut self.files {
            for (index, p) in pairs.iter().enumerate() {
                let rec = PairAudit {
                    step,
                    index,
                    source: p.source.text(),
                    perturbed: p.perturbed.text(),
                    pseudo_target: p.pseudo_target.text(),
                    filters: p.filters.clone(),
                    keep: p.keep,
                };
                let line = serde_json::to_string(&rec).expect("audit record serializes");
                writeln!(files.audit, "{line}").map_err(io_err(&files.audit_path))?;
            }
        }
        let gen_err = |source| TrainError::Generator {
            phase: "train",
            step,
            source,
        };
        let loss_sup = self.gen.train_step(sup_src, sup_tgt).map_err(gen_err)?;
        let (u_kept, y_kept): (Vec<String>, Vec<String>) = pairs
            .iter()
            .filter(|p| p.keep)
            .map(|p| (p.perturbed.text(), p.pseudo_target.text()))
            .unzip();
        let loss_unsup = if u_kept.is_empty() || self.cfg.lambda == 0.0 {
            0.0
        } else {
            self.gen
                .train_weighted(&u_kept, &y_kept, self.cfg.lambda)
                .map_err(gen_err)?
        };
        let rec = StepLoss {
            step,
            loss_sup,
            loss_unsup,
            total: loss_sup + self.cfg.lambda * loss_unsup,
            drawn: pairs.len(),
            kept: u_kept.len(),
        };
        self.state.steps.push(rec);
        self.state.ssl_step += 1;
        Ok(rec)
    }

    fn validate(&mut self, valid: &ValidationSet) -> Result<ValidationRecord, TrainError> {
        let step = self.state.ssl_step;
        let bleu = evaluate_bleu(&mut self.gen, valid, self.cfg.beam).map_err(|e| match e {
            TrainError::Generator { phase, source, .. } => TrainError::Generator { phase, step, source },
            other => other,
        })?;
        let improved = self.state.best_bleu.map_or(true, |b| bleu > b);
        if improved {
            self.state.best_bleu = Some(bleu);
            self.state.since_improvement = 0;
            self.gen.save(BEST_TAG).map_err(|source| TrainError::Generator {
                phase: "checkpoint",
                step,
                source,
            })?;
        } else {
            self.state.since_improvement += 1;
        }
        let since_last = self
            .state
            .validations
            .last()
            .map_or(0, |v| v.step)
            .min(self.state.steps.len());
        let recent = &self.state.steps[since_last..];
        let mean_loss = if recent.is_empty() {
            self.state.warmup_losses.last().copied().unwrap_or(0.0)
        } else {
            recent.iter().map(|s| s.total).sum::<f64>() / recent.len() as f64
        };
        let rec = ValidationRecord {
            step,
            bleu,
            best_bleu: self.state.best_bleu.expect("set above"),
            improved,
            since_improvement: self.state.since_improvement,
            mean_loss,
            kept: recent.iter().map(|s| s.kept).sum(),
            drawn: recent.iter().map(|s| s.drawn).sum(),
        };
        info!(
            "step {step}: valid BLEU {bleu:.2} (best {:.2}), kept {}/{}",
            rec.best_bleu, rec.kept, rec.drawn
        );
        self.state.validations.push(rec);
        if let Some(files) = &mut self.files {
            let line = serde_json::to_string(&rec).expect("record serializes");
            writeln!(files.metrics, "{line}").map_err(io_err(&files.metrics_path))?;
            files.metrics.flush().map_err(io_err(&files.metrics_path))?;
        }
        Ok(rec)
    }

    /// Warm-up, validation at the end of warm-up, then SSL steps with
    /// validation every `validate_every` steps until early stopping or
    /// `max_ssl_steps`. Reloads the best checkpoint before returning.
    pub fn run(&mut self, data: &TrainData) -> Result<RunSummary, TrainError> {
        if data.unlabeled.is_empty() && self.cfg.max_ssl_steps > 0 {
            return Err(TrainError::EmptyData("unlabeled pool"));
        }
        self.warmup(&data.parallel)?;
        self.validate(&data.valid)?;

        let pool = &data.unlabeled.sentences;
        let steps_per_epoch = pool.len().div_ceil(self.cfg.unsup_batch).max(1);
        let auto = (self.cfg.filter_warmup_fraction * steps_per_epoch as f64).ceil() as usize;
        self.filter_warmup = self
            .cfg
            .filters
            .iter()
            .map(|f| f.warmup_unfiltered_steps.unwrap_or(auto))
            .collect();

        let mut sup = EpochSampler::new(data.parallel.len(), &mut self.rng);
        let mut unsup = EpochSampler::new(pool.len().max(1), &mut self.rng);
        while self.state.ssl_step < self.cfg.max_ssl_steps {
            self.state.epoch = EpochState {
                epoch: unsup.epochs,
                step: self.state.ssl_step,
            };
            let idx = sup.draw(self.cfg.sup_batch, &mut self.rng);
            let (src, tgt) = self.sup_batch(&data.parallel, &idx);
            let batch: Vec<Sentence> = unsup
                .draw(self.cfg.unsup_batch, &mut self.rng)
                .into_iter()
                .map(|i| pool[i].clone())
                .collect();
            self.ssl_step(&src, &tgt, &batch)?;
            if self.state.ssl_step % self.cfg.validate_every == 0 {
                self.validate(&data.valid)?;
                if self.state.since_improvement >= self.cfg.patience {
                    self.state.stopped_early = true;
                    info!("early stop at step {}", self.state.ssl_step);
                    break;
                }
            }
        }
        if let Some(files) = &mut self.files {
            files.audit.flush().map_err(io_err(&files.audit_path))?;
        }
        self.gen.load(BEST_TAG).map_err(|source| TrainError::Generator {
            phase: "checkpoint",
            step: self.state.ssl_step,
            source,
        })?;
        Ok(RunSummary {
            best_tag: BEST_TAG.to_string(),
            best_bleu: self.state.best_bleu.expect("validated at least once"),
            state: self.state.clone(),
        })
    }
}

/// Keeps informal-looking sentences (p(formal) <= 0.5) and returns the `n`
/// with the lowest perplexity under an informal-side LM, stable in input order.
pub fn collect_unlabeled(
    raw: &[Sentence],
    clf: &StyleClassifier<f64>,
    informal_lm: &KneserNeyModel<f64>,
    n: usize,
    domain_tag: &str,
) -> UnlabeledPool {
    let mut scored: Vec<(f64, &Sentence)> = raw
        .iter()
        .filter(|s| clf.predict_formal_prob(s) <= 0.5)
        .map(|s| (informal_lm.perplexity(s), s))
        .collect();
    if scored.len() < n {
        warn!("only {} sentences survive the style filter, wanted {n}", scored.len());
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    UnlabeledPool::new(scored.into_iter().take(n).map(|(_, s)| s.clone()).collect(), domain_tag)
}
