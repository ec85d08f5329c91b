use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufReader};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use consistyle::classifier::{style_accuracy, ClassifierTraining};
use consistyle::corpus::{
    load_eval, load_parallel, load_sentences, load_unlabeled, read_lines, tokenize, write_sentences, Sentence,
    DEFAULT_MAX_TOKENS,
};
use consistyle::filters::replay_audit;
use consistyle::generator::{protocol, EchoGenerator, Generator, RemoteGenerator, TableGenerator, Transport};
use consistyle::metrics::{corpus_bleu, BleuConfig, EvalReport};
use consistyle::ngram::KneserNeyConfig;
use consistyle::{Classifier, KneserNey};
use consistyle::perturb::{apply_batch, build_tfidf, load_lexicons, LexiconPaths, PerturbConfig, PerturbMethod};
use consistyle::synthetic::{SyntheticConfig, SyntheticTask};
use consistyle::trainer::{evaluate_bleu, Scorers, TrainConfig, TrainData, Trainer, ValidationSet};

#[derive(Parser)]
#[command(name = "consistyle", version, about = "Semi-supervised formality style transfer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct OutDir {
    /// Directory for every file this command writes.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Clone, Default)]
struct LexiconArgs {
    /// Spelling-error dictionary (word<TAB>variant,...).
    #[arg(long)]
    spelling: Option<PathBuf>,
    /// Abbreviation dictionary (phrase<TAB>abbrev).
    #[arg(long)]
    abbrev: Option<PathBuf>,
    /// Synonym lexicon (word<TAB>syn,...).
    #[arg(long)]
    synonyms: Option<PathBuf>,
}

impl LexiconArgs {
    fn paths(&self) -> LexiconPaths {
        LexiconPaths {
            spelling: self.spelling.clone(),
            abbrev: self.abbrev.clone(),
            synonyms: self.synonyms.clone(),
        }
    }

    fn inputs(&self) -> Vec<&Path> {
        [&self.spelling, &self.abbrev, &self.synonyms]
            .into_iter()
            .flatten()
            .map(PathBuf::as_path)
            .collect()
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the formality classifier.
    TrainClassifier {
        #[command(flatten)]
        out: OutDir,
        #[arg(long)]
        informal: PathBuf,
        #[arg(long)]
        formal: PathBuf,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = 2.0)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a Kneser-Ney n-gram language model.
    TrainLm {
        #[command(flatten)]
        out: OutDir,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 4)]
        order: usize,
        #[arg(long, default_value_t = 0.75)]
        discount: f64,
        /// Tokens seen at most this often map to <unk>.
        #[arg(long, default_value_t = 1)]
        unk_max_count: u64,
    },
    /// Select the most informal sentences from a raw corpus.
    CollectUnlabeled {
        #[command(flatten)]
        out: OutDir,
        #[arg(long)]
        raw: PathBuf,
        #[arg(long)]
        classifier: PathBuf,
        /// Language model trained on informal sentences.
        #[arg(long)]
        lm: PathBuf,
        #[arg(long, default_value_t = 200_000)]
        n: usize,
        #[arg(long, default_value_t = DEFAULT_MAX_TOKENS)]
        max_tokens: usize,
        #[arg(long, default_value = "unlabeled")]
        domain_tag: String,
    },
    /// Perturb every line of a corpus.
    Perturb {
        #[command(flatten)]
        out: OutDir,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        method: PerturbMethod,
        #[arg(long, default_value_t = 0.1)]
        ratio: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "_")]
        mask_token: String,
        #[command(flatten)]
        lexicons: LexiconArgs,
    },
    /// Warm-up plus consistency training.
    Train(Box<TrainArgs>),
    /// BLEU, style accuracy and their harmonic mean.
    Evaluate {
        #[command(flatten)]
        out: OutDir,
        #[arg(long)]
        hyp: PathBuf,
        /// Exactly four reference files.
        #[arg(long, num_args = 1.., required = true)]
        refs: Vec<PathBuf>,
        /// Style classifier for accuracy; BLEU only when absent.
        #[arg(long)]
        classifier: Option<PathBuf>,
    },
    /// Recompute every decision in a filter audit log.
    FilterReplay {
        #[command(flatten)]
        out: OutDir,
        #[arg(long)]
        audit: PathBuf,
    },
    /// Serve an in-process generator over the line protocol on stdin/stdout.
    Serve {
        #[arg(long, default_value = "table")]
        generator: String,
        /// Where `table` checkpoints go; kept in memory otherwise.
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
    },
    /// Write the synthetic formality task.
    MakeSynthetic {
        #[command(flatten)]
        out: OutDir,
        #[arg(long, default_value_t = 13)]
        seed: u64,
        #[arg(long, default_value_t = 3000)]
        sentences: usize,
        #[arg(long, default_value_t = 100)]
        labeled: usize,
        #[arg(long, default_value_t = 2000)]
        unlabeled: usize,
        #[arg(long, default_value_t = 200)]
        valid: usize,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    out: OutDir,
    #[arg(long)]
    train_src: PathBuf,
    #[arg(long)]
    train_tgt: PathBuf,
    #[arg(long)]
    unlabeled: PathBuf,
    #[arg(long)]
    valid_src: PathBuf,
    /// One or more validation reference files.
    #[arg(long, num_args = 1.., required = true)]
    valid_ref: Vec<PathBuf>,
    /// mock | table | remote:<command> | tcp:<host:port>
    #[arg(long, default_value = "table")]
    generator: String,
    /// Seconds to wait for a remote reply.
    #[arg(long, default_value_t = 600)]
    timeout_secs: u64,
    /// key = value file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` overrides, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    warmup_steps: Option<usize>,
    #[arg(long)]
    validate_every: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    max_ssl_steps: Option<usize>,
    #[arg(long)]
    perturb: Option<String>,
    #[arg(long)]
    perturb_ratio: Option<f64>,
    /// Comma-separated: style, bleu, ppl; or none.
    #[arg(long)]
    filters: Option<String>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    phi: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Threads for scoring pseudo pairs.
    #[arg(long)]
    workers: Option<usize>,
    /// Needed by the style filter.
    #[arg(long)]
    classifier: Option<PathBuf>,
    /// Formal-side LM, needed by the perplexity filter.
    #[arg(long)]
    lm: Option<PathBuf>,
    #[command(flatten)]
    lexicons: LexiconArgs,
    /// Held-out sources to translate with the best checkpoint.
    #[arg(long, requires = "test_ref")]
    test_src: Option<PathBuf>,
    #[arg(long, num_args = 1..)]
    test_ref: Vec<PathBuf>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    subcommand: &'a str,
    version: &'a str,
    seed: Option<u64>,
    config: BTreeMap<String, String>,
    inputs: Vec<String>,
    artifacts: Vec<String>,
}

fn write_manifest(
    dir: &Path,
    subcommand: &str,
    seed: Option<u64>,
    config: impl IntoIterator<Item = (String, String)>,
    inputs: &[&Path],
    artifacts: &[&str],
) -> Result<()> {
    for p in inputs {
        if !p.exists() {
            bail!("input file not found: {}", p.display());
        }
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let m = Manifest {
        subcommand,
        version: env!("CARGO_PKG_VERSION"),
        seed,
        config: config.into_iter().collect(),
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        artifacts: artifacts.iter().map(|a| dir.join(a).display().to_string()).collect(),
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&m)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn kv<const N: usize>(pairs: [(&str, String); N]) -> Vec<(String, String)> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn parse_config_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("{}:{}: expected key = value", path.display(), i + 1);
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// `filters` resets per-filter parameters, so it goes first.
fn apply_settings(cfg: &mut TrainConfig, settings: &[(String, String)]) -> Result<()> {
    let (first, rest): (Vec<_>, Vec<_>) = settings.iter().partition(|(k, _)| k == "filters");
    for (k, v) in first.into_iter().chain(rest) {
        cfg.set(k, v)?;
    }
    Ok(())
}

fn resolve_train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = &a.config {
        apply_settings(&mut cfg, &parse_config_file(path)?)?;
    }
    let mut flags: Vec<(String, String)> = Vec::new();
    let mut flag = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            flags.push((k.to_string(), v));
        }
    };
    flag("filters", a.filters.clone());
    flag("lambda", a.lambda.map(|x| x.to_string()));
    flag("warmup_steps", a.warmup_steps.map(|x| x.to_string()));
    flag("validate_every", a.validate_every.map(|x| x.to_string()));
    flag("patience", a.patience.map(|x| x.to_string()));
    flag("max_ssl_steps", a.max_ssl_steps.map(|x| x.to_string()));
    flag("perturb", a.perturb.clone());
    flag("perturb_ratio", a.perturb_ratio.map(|x| x.to_string()));
    flag("sigma", a.sigma.map(|x| x.to_string()));
    flag("phi", a.phi.map(|x| x.to_string()));
    flag("seed", a.seed.map(|x| x.to_string()));
    flag("workers", a.workers.map(|x| x.to_string()));
    for o in &a.overrides {
        let Some((k, v)) = o.split_once('=') else {
            bail!("--set expects KEY=VALUE, got `{o}`");
        };
        flags.push((k.trim().to_string(), v.trim().to_string()));
    }
    apply_settings(&mut cfg, &flags)?;
    cfg.validate()?;
    Ok(cfg)
}

fn validation_set(src: &Path, refs: &[PathBuf]) -> Result<ValidationSet> {
    let sources = read_lines(src)?;
    let ref_sets: Vec<Vec<String>> = refs.iter().map(|r| read_lines(r)).collect::<Result<_, _>>()?;
    for (r, lines) in refs.iter().zip(&ref_sets) {
        if lines.len() != sources.len() {
            bail!(
                "{} has {} lines but {} has {}",
                r.display(),
                lines.len(),
                src.display(),
                sources.len()
            );
        }
    }
    Ok(ValidationSet {
        references: (0..sources.len())
            .map(|i| ref_sets.iter().map(|r| tokenize(&r[i])).collect())
            .collect(),
        sources,
    })
}

fn build_generator(spec: &str, out_dir: &Path, timeout: Duration) -> Result<Box<dyn Generator>> {
    Ok(match spec {
        "mock" | "echo" => Box::new(EchoGenerator::new()),
        "table" => Box::new(TableGenerator::new().with_checkpoint_dir(out_dir.join("checkpoints"))),
        _ => {
            let transport = if let Some(cmd) = spec.strip_prefix("remote:") {
                Transport::command(cmd)?
            } else if let Some(addr) = spec.strip_prefix("tcp:") {
                Transport::Tcp(addr.to_string())
            } else {
                bail!("unknown generator `{spec}` (expected mock, table, remote:<cmd> or tcp:<addr>)");
            };
            Box::new(RemoteGenerator::connect(transport, timeout)?)
        }
    })
}

fn train(a: &TrainArgs) -> Result<()> {
    let cfg = resolve_train_config(a)?;
    let dir = &a.out.out_dir;
    let mut inputs: Vec<&Path> = vec![&a.train_src, &a.train_tgt, &a.unlabeled, &a.valid_src];
    inputs.extend(a.valid_ref.iter().map(PathBuf::as_path));
    inputs.extend(a.classifier.iter().map(PathBuf::as_path));
    inputs.extend(a.lm.iter().map(PathBuf::as_path));
    inputs.extend(a.lexicons.inputs());
    inputs.extend(a.test_src.iter().map(PathBuf::as_path));
    inputs.extend(a.test_ref.iter().map(PathBuf::as_path));
    let mut config = cfg.to_key_values();
    config.push(("generator".into(), a.generator.clone()));
    write_manifest(
        dir,
        "train",
        Some(cfg.seed),
        config,
        &inputs,
        &["config.txt", "metrics.log", "filter_audit.log", "checkpoints", "summary.json"],
    )?;

    let parallel = load_parallel(&a.train_src, &a.train_tgt)?;
    let unlabeled = load_unlabeled(&a.unlabeled, cfg.max_src_tokens, "unlabeled")?;
    let valid = validation_set(&a.valid_src, &a.valid_ref)?;
    let mut cfg = cfg;
    let mut lexicons = load_lexicons(&a.lexicons.paths())?;
    if cfg.perturb.method == PerturbMethod::TfIdf {
        lexicons.tfidf = Some(Arc::new(build_tfidf(&unlabeled)?));
    }
    cfg.perturb.lexicons = lexicons;
    cfg.perturb.validate()?;
    let classifier = a.classifier.as_deref().map(Classifier::load).transpose()?;
    let lm = a.lm.as_deref().map(KneserNey::load).transpose()?;
    let scorers = Scorers {
        classifier: classifier.as_ref(),
        lm: lm.as_ref(),
    };
    let gen = build_generator(&a.generator, dir, Duration::from_secs(a.timeout_secs))?;
    let mut trainer = Trainer::new(gen, cfg, scorers)?.with_run_dir(dir)?;
    let summary = trainer.run(&TrainData {
        parallel,
        unlabeled,
        valid,
    })?;
    let mut report = serde_json::json!({
        "best_tag": summary.best_tag,
        "best_valid_bleu": summary.best_bleu,
        "ssl_steps": summary.state.ssl_step,
        "stopped_early": summary.state.stopped_early,
    });
    if let Some(test_src) = &a.test_src {
        let test = validation_set(test_src, &a.test_ref)?;
        let beam = trainer.config().beam;
        let bleu = evaluate_bleu(trainer.generator(), &test, beam)?;
        report["test_bleu"] = bleu.into();
    }
    let line = report.to_string();
    println!("{line}");
    let path = dir.join("summary.json");
    fs::write(&path, line + "\n").with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::TrainClassifier {
            out,
            informal,
            formal,
            epochs,
            lr,
            seed,
        } => {
            let cfg = kv([("epochs", epochs.to_string()), ("lr", lr.to_string())]);
            write_manifest(&out.out_dir, "train-classifier", Some(seed), cfg, &[&informal, &formal], &["classifier.txt"])?;
            let inf = load_sentences(&informal)?;
            let form = load_sentences(&formal)?;
            let opts = ClassifierTraining {
                epochs,
                learning_rate: lr,
                seed,
                ..ClassifierTraining::default()
            };
            let clf = Classifier::train(&inf, &form, &opts)?;
            let acc_formal = style_accuracy(&clf, &form)?;
            let acc_informal = 1.0 - style_accuracy(&clf, &inf)?;
            info!("training accuracy: formal {acc_formal:.3}, informal {acc_informal:.3}");
            clf.save(&out.out_dir.join("classifier.txt"))?;
        }
        Command::TrainLm {
            out,
            corpus,
            order,
            discount,
            unk_max_count,
        } => {
            let cfg = kv([
                ("order", order.to_string()),
                ("discount", discount.to_string()),
                ("unk_max_count", unk_max_count.to_string()),
            ]);
            write_manifest(&out.out_dir, "train-lm", None, cfg, &[&corpus], &["lm.txt"])?;
            let sents = load_sentences(&corpus)?;
            let lm = KneserNey::train(
                &sents,
                &KneserNeyConfig {
                    order,
                    discount,
                    unk_max_count,
                },
            )?;
            lm.save(&out.out_dir.join("lm.txt"))?;
        }
        Command::CollectUnlabeled {
            out,
            raw,
            classifier,
            lm,
            n,
            max_tokens,
            domain_tag,
        } => {
            let cfg = kv([
                ("n", n.to_string()),
                ("max_tokens", max_tokens.to_string()),
                ("domain_tag", domain_tag.clone()),
            ]);
            write_manifest(&out.out_dir, "collect-unlabeled", None, cfg, &[&raw, &classifier, &lm], &["unlabeled.txt"])?;
            let pool = load_unlabeled(&raw, max_tokens, &domain_tag)?;
            let clf = Classifier::load(&classifier)?;
            let lm = KneserNey::load(&lm)?;
            let kept = consistyle::trainer::collect_unlabeled(&pool.sentences, &clf, &lm, n, &domain_tag);
            info!("kept {} of {} sentences", kept.len(), pool.len());
            write_sentences(&out.out_dir.join("unlabeled.txt"), &kept.sentences)?;
        }
        Command::Perturb {
            out,
            input,
            method,
            ratio,
            seed,
            mask_token,
            lexicons,
        } => {
            let cfg = kv([
                ("method", method.to_string()),
                ("ratio", ratio.to_string()),
                ("mask_token", mask_token.clone()),
            ]);
            let mut inputs = vec![input.as_path()];
            inputs.extend(lexicons.inputs());
            write_manifest(&out.out_dir, "perturb", Some(seed), cfg, &inputs, &["perturbed.txt"])?;
            let sents = load_sentences(&input)?;
            let mut lex = load_lexicons(&lexicons.paths())?;
            if method == PerturbMethod::TfIdf {
                lex.tfidf = Some(Arc::new(build_tfidf(&consistyle::corpus::UnlabeledPool::new(sents.clone(), "input"))?));
            }
            let mut pc = PerturbConfig::new(method).with_ratio(ratio).with_lexicons(lex);
            pc.seed = seed;
            pc.mask_token = mask_token;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let outs: Vec<Sentence> = sents
                .iter()
                .map(|s| {
                    if s.is_empty() {
                        Ok(s.clone())
                    } else {
                        apply_batch(std::slice::from_ref(s), &pc, &mut rng).map(|mut v| v.remove(0))
                    }
                })
                .collect::<Result<_, _>>()?;
            write_sentences(&out.out_dir.join("perturbed.txt"), &outs)?;
        }
        Command::Train(a) => train(&a)?,
        Command::Evaluate {
            out,
            hyp,
            refs,
            classifier,
        } => {
            let mut inputs: Vec<&Path> = vec![&hyp];
            inputs.extend(refs.iter().map(PathBuf::as_path));
            inputs.extend(classifier.iter().map(PathBuf::as_path));
            write_manifest(&out.out_dir, "evaluate", None, Vec::new(), &inputs, &["report.json"])?;
            let eval = load_eval(&hyp, &refs)?;
            let hyps: Vec<Vec<String>> = eval.iter().map(|e| e.source.tokens().to_vec()).collect();
            let rs: Vec<Vec<Vec<String>>> = eval
                .iter()
                .map(|e| e.references.iter().map(|r| r.tokens().to_vec()).collect())
                .collect();
            let bleu: f64 = corpus_bleu(&hyps, &rs, &BleuConfig::corpus())?;
            let (line, table) = match classifier {
                Some(path) => {
                    let clf = Classifier::load(&path)?;
                    let sents: Vec<Sentence> = eval.into_iter().map(|e| e.source).collect();
                    let report = EvalReport::new(bleu, 100.0 * style_accuracy(&clf, &sents)?);
                    (report.to_json_line(), report.to_string())
                }
                None => (
                    serde_json::json!({ "bleu": bleu }).to_string(),
                    format!("{:>8}\n{bleu:>8.2}", "BLEU"),
                ),
            };
            println!("{line}");
            println!("{table}");
            let path = out.out_dir.join("report.json");
            fs::write(&path, line + "\n").with_context(|| format!("writing {}", path.display()))?;
        }
        Command::FilterReplay { out, audit } => {
            write_manifest(&out.out_dir, "filter-replay", None, Vec::new(), &[&audit], &["replay.json"])?;
            let log = fs::read_to_string(&audit).with_context(|| format!("reading {}", audit.display()))?;
            let summary = replay_audit(&log).with_context(|| format!("parsing {}", audit.display()))?;
            let line = serde_json::to_string(&summary)?;
            println!("{line}");
            let path = out.out_dir.join("replay.json");
            fs::write(&path, line + "\n").with_context(|| format!("writing {}", path.display()))?;
            if summary.mismatches > 0 || summary.kept_violations > 0 {
                bail!(
                    "{} mismatched decisions, {} kept pairs violate their filter",
                    summary.mismatches,
                    summary.kept_violations
                );
            }
        }
        Command::Serve {
            generator,
            checkpoint_dir,
        } => {
            let mut gen: Box<dyn Generator> = match generator.as_str() {
                "echo" | "mock" => Box::new(EchoGenerator::new()),
                "table" => Box::new(match checkpoint_dir {
                    Some(d) => TableGenerator::new().with_checkpoint_dir(d),
                    None => TableGenerator::new(),
                }),
                other => bail!("cannot serve generator `{other}` (expected echo or table)"),
            };
            let stdin = io::stdin();
            protocol::serve(&mut gen, BufReader::new(stdin.lock()), io::stdout().lock())?;
        }
        Command::MakeSynthetic {
            out,
            seed,
            sentences,
            labeled,
            unlabeled,
            valid,
        } => {
            let cfg = SyntheticConfig {
                sentences,
                labeled,
                unlabeled,
                valid,
                seed,
                ..SyntheticConfig::default()
            };
            if labeled + unlabeled + valid >= sentences {
                bail!("--sentences must exceed labeled + unlabeled + valid");
            }
            let kvs = kv([
                ("sentences", sentences.to_string()),
                ("labeled", labeled.to_string()),
                ("unlabeled", unlabeled.to_string()),
                ("valid", valid.to_string()),
                ("spell_ratio", cfg.spell_ratio.to_string()),
                ("capital_ratio", cfg.capital_ratio.to_string()),
            ]);
            write_manifest(
                &out.out_dir,
                "make-synthetic",
                Some(seed),
                kvs,
                &[],
                &[
                    "train.informal",
                    "train.formal",
                    "unlabeled.informal",
                    "valid.informal",
                    "valid.formal",
                    "test.informal",
                    "test.formal.ref0",
                    "test.formal.ref1",
                    "test.formal.ref2",
                    "test.formal.ref3",
                    "spelling.tsv",
                    "abbrev.tsv",
                ],
            )?;
            SyntheticTask::generate(&cfg)?.write_to(&out.out_dir)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
