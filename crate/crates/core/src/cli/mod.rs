//! The `dse` command surface.
//!
//! Every configuration key in [`FIELDS`] is accepted as `--key-name VALUE` on
//! every subcommand, alongside `--config FILE` and `--preset NAME`. Each
//! command prints its resolved configuration before doing any work.

mod config;
mod study;

pub use config::{FieldSpec, Provenance, RunConfig, FIELDS, PRESETS, SEED_ENV};
pub use study::{
    evaluate_model, intent_report, oos_report, rank_report, run_epoch_study, support_set, EpochStudy, StudyRow,
    StudySets, StudySettings,
};

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::{Arg, ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

use crate::corpus::{gen_synthetic_with_pool, load_corpus, parse_corpus, save_corpus, DEFAULT_POOL_SIZE};
use crate::encoder::{EncoderModel, Embedder};
use crate::error::{DseError, Result};
use crate::eval::{
    dialogue_rank_instances, f1_report, load_labeled, load_multilabel, load_rank_pairs, load_triples,
    nli_probe, parse_embeddings, save_embeddings, sidecar_path, train_action_probe, utterance_rank_instances,
    EvalReport, LabelBits,
};
use crate::pairs::{build_pairs, load_pair_file, parse_pair_file, save_pair_file, PairStrategy, TrainPair};
use crate::trainer::{self, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};

#[derive(Parser, Debug)]
#[command(
    name = "dse",
    version,
    about = "Dialogue sentence embeddings: pair building, contrastive training and evaluation",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Checkpoint to load
    #[arg(long, required_unless_present = "untrained")]
    ckpt: Option<PathBuf>,
    /// Use a freshly initialised encoder instead of a checkpoint
    #[arg(long, conflicts_with = "ckpt")]
    untrained: bool,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Also write the report as JSON
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RankLevel {
    Utterance,
    Dialogue,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build positive pairs from a corpus (or normalize a pair file)
    BuildPairs {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an encoder and write its checkpoint
    Train {
        /// Corpus, or a pair file when strategy=file
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write a checkpoint after every epoch into this directory
        #[arg(long)]
        epoch_dir: Option<PathBuf>,
    },
    /// Embed one text per line (EVAL view)
    Embed {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Prototypical intent classification
    EvalIntent {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Out-of-scope detection; test labels unseen in training are out of scope
    EvalOos {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Response selection: top-k among sampled candidates
    EvalRank {
        #[command(flatten)]
        model: ModelArgs,
        /// query<TAB>response file
        #[arg(long, required_unless_present = "corpus", conflicts_with = "corpus")]
        pairs: Option<PathBuf>,
        /// Build instances from a corpus instead
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "utterance")]
        level: RankLevel,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Entailment-vs-contradiction cosine probe
    EvalNli {
        #[command(flatten)]
        model: ModelArgs,
        /// anchor<TAB>entailment<TAB>contradiction file
        #[arg(long = "in")]
        input: PathBuf,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Multi-label action prediction with a linear probe
    EvalActions {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Generate a synthetic topic-structured corpus
    Synth {
        #[arg(long, default_value_t = 8)]
        topics: usize,
        #[arg(long, default_value_t = 100)]
        dialogues_per_topic: usize,
        #[arg(long, default_value_t = 6)]
        turns: usize,
        #[arg(long, default_value_t = 6)]
        words: usize,
        #[arg(long, default_value_t = DEFAULT_POOL_SIZE)]
        pool_size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Describe a checkpoint, embedding, corpus or pair file
    Inspect { path: PathBuf },
    /// Train each strategy and evaluate the checkpoint of every epoch
    EpochStudy {
        /// Training corpus
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        intent_train: PathBuf,
        #[arg(long)]
        intent_test: PathBuf,
        #[arg(long)]
        oos_test: Option<PathBuf>,
        /// query<TAB>response file for ranking
        #[arg(long)]
        rank_pairs: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "consec,self")]
        strategies: Vec<String>,
        /// Write the table here as well as printing it
        #[arg(long)]
        table: Option<PathBuf>,
    },
}

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

fn command() -> clap::Command {
    let mut cmd = Cli::command();
    let names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    for name in names {
        cmd = cmd.mut_subcommand(name, |mut sub| {
            sub = sub
                .arg(
                    Arg::new("config")
                        .long("config")
                        .value_name("FILE")
                        .help("key=value configuration file")
                        .help_heading("Configuration"),
                )
                .arg(
                    Arg::new("preset")
                        .long("preset")
                        .value_name("NAME")
                        .help("named preset (paper)")
                        .help_heading("Configuration"),
                );
            for f in FIELDS {
                sub = sub.arg(
                    Arg::new(f.key)
                        .long(flag_name(f.key))
                        .value_name("VALUE")
                        .help(format!("{} [default: {}]", f.help, f.default))
                        .help_heading("Configuration"),
                );
            }
            sub
        });
    }
    cmd
}

fn config_flags(m: &ArgMatches) -> Vec<(String, String)> {
    let mut flags: Vec<(usize, String, String)> = FIELDS
        .iter()
        .filter(|f| m.value_source(f.key) == Some(ValueSource::CommandLine))
        .map(|f| {
            let v = m.get_one::<String>(f.key).cloned().unwrap_or_default();
            (m.index_of(f.key).unwrap_or(0), f.key.to_string(), v)
        })
        .collect();
    flags.sort();
    flags.into_iter().map(|(_, k, v)| (k, v)).collect()
}

/// Run `dse` with `argv` (program name first) and return the exit status.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run(argv, &mut std::io::stdout(), &mut std::io::stderr())
}

/// [`dispatch`] with explicit output streams.
pub fn run<I, T>(argv: I, out: &mut (dyn Write + Send), err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let matches = match command().try_get_matches_from(&argv) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    2
                }
            };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return 2;
        }
    };
    let (_, sub) = matches.subcommand().expect("a subcommand is required");
    let env_seed = std::env::var(SEED_ENV).ok();
    let cfg = match RunConfig::resolve(
        sub.get_one::<String>("preset").map(String::as_str),
        env_seed.as_deref(),
        sub.get_one::<String>("config").map(Path::new),
        &config_flags(sub),
    ) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return 2;
        }
    };
    let shown: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    let _ = write!(out, "# dse {}\n{}\n", shown.join(" "), cfg.render());

    let result = match cfg.threads() {
        0 => execute(cli.command, &cfg, out),
        n => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| execute(cli.command, &cfg, out)),
            Err(e) => Err(DseError::config("threads", e.to_string())),
        },
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            match e {
                DseError::Config { .. } => 2,
                _ => 1,
            }
        }
    }
}

fn stdout_err(e: std::io::Error) -> DseError {
    DseError::io("<stdout>", e)
}

macro_rules! say {
    ($out:expr, $($arg:tt)*) => {
        writeln!($out, $($arg)*).map_err(stdout_err)?
    };
}

fn load_model(args: &ModelArgs, cfg: &RunConfig, out: &mut dyn Write) -> Result<EncoderModel<f32>> {
    let model = match &args.ckpt {
        Some(path) if !args.untrained => {
            let ck = load_checkpoint(path)?;
            say!(out, "# model: {} (epoch {})", path.display(), ck.epoch);
            ck.model
        }
        _ => {
            say!(out, "# model: untrained");
            EncoderModel::init(cfg.encoder_config(), cfg.train_config().init_seed)?
        }
    };
    let c = &model.config;
    say!(
        out,
        "# model config: vocab_size={} embed_dim={} head_hidden={} head_out={} hash_seed={}",
        c.vocab_size,
        c.embed_dim,
        c.head_hidden,
        c.head_out,
        c.hash_seed
    );
    Ok(model)
}

fn emit_report(report: &EvalReport, path: Option<&PathBuf>, out: &mut dyn Write) -> Result<()> {
    write!(out, "{}", report.to_kv()).map_err(stdout_err)?;
    if let Some(p) = path {
        fs::write(p, report.to_json() + "\n").map_err(|e| DseError::io(p, e))?;
    }
    Ok(())
}

fn training_pairs(input: &Path, cfg: &RunConfig) -> Result<Vec<TrainPair>> {
    match cfg.strategy() {
        PairStrategy::File => load_pair_file(input),
        s => build_pairs(&load_corpus(input)?, s, &cfg.pair_config()),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| DseError::io(path, e))
}

fn execute(command: Command, cfg: &RunConfig, out: &mut (dyn Write + Send)) -> Result<()> {
    let seed = cfg.seed();
    match command {
        Command::Synth {
            topics,
            dialogues_per_topic,
            turns,
            words,
            pool_size,
            out: path,
        } => {
            let corpus = gen_synthetic_with_pool(topics, dialogues_per_topic, turns, words, pool_size, seed)?;
            save_corpus(&corpus, &path)?;
            say!(out, "wrote {} dialogues to {}", corpus.len(), path.display());
        }
        Command::BuildPairs { input, out: path } => {
            let pairs = training_pairs(&input, cfg)?;
            save_pair_file(&pairs, &path)?;
            say!(out, "wrote {} {} pairs to {}", pairs.len(), cfg.strategy().name(), path.display());
        }
        Command::Train {
            input,
            out: path,
            epoch_dir,
        } => {
            let pairs = training_pairs(&input, cfg)?;
            say!(out, "training on {} pairs", pairs.len());
            if let Some(dir) = &epoch_dir {
                fs::create_dir_all(dir).map_err(|e| DseError::io(dir, e))?;
            }
            let outcome = trainer::train(
                &pairs,
                &cfg.encoder_config(),
                &cfg.loss_config(),
                &cfg.train_config(),
                |ck, stats| {
                    say!(out, "epoch {} steps {} mean_loss {:.6}", stats.epoch, stats.steps, stats.mean_loss);
                    if let Some(dir) = &epoch_dir {
                        save_checkpoint(ck, dir.join(format!("epoch-{:03}.ckpt", stats.epoch)))?;
                    }
                    Ok(())
                },
            )?;
            save_checkpoint(&outcome.checkpoint, &path)?;
            say!(out, "initial_loss {:.6}", outcome.initial_loss);
            say!(out, "wrote checkpoint {}", path.display());
        }
        Command::Embed { ckpt, input, out: path } => {
            let model = load_model(
                &ModelArgs {
                    ckpt: Some(ckpt),
                    untrained: false,
                },
                cfg,
                out,
            )?;
            let content = read_text(&input)?;
            let texts: Vec<&str> = content.lines().filter(|l| !l.trim().is_empty()).collect();
            let batch = model.embed(&texts)?;
            save_embeddings(&path, &batch, &texts)?;
            say!(out, "wrote {} x {} embeddings to {}", batch.rows, batch.dim, path.display());
        }
        Command::EvalIntent {
            model,
            train,
            test,
            report,
        } => {
            let m = load_model(&model, cfg, out)?;
            let r = intent_report(
                &m,
                &load_labeled(&train)?,
                &load_labeled(&test)?,
                cfg.shots(),
                cfg.normalize_prototypes(),
                seed,
            )?;
            emit_report(&r, report.report.as_ref(), out)?;
        }
        Command::EvalOos {
            model,
            train,
            test,
            report,
        } => {
            let m = load_model(&model, cfg, out)?;
            let r = oos_report(
                &m,
                &load_labeled(&train)?,
                &load_labeled(&test)?,
                cfg.shots(),
                cfg.normalize_prototypes(),
                &cfg.oos_config(),
                seed,
            )?;
            emit_report(&r, report.report.as_ref(), out)?;
        }
        Command::EvalRank {
            model,
            pairs,
            corpus,
            level,
            report,
        } => {
            let m = load_model(&model, cfg, out)?;
            let instances = match (pairs, corpus) {
                (Some(p), _) => load_rank_pairs(&p)?,
                (None, Some(c)) => {
                    let dialogues = load_corpus(&c)?;
                    match level {
                        RankLevel::Utterance => utterance_rank_instances(&dialogues),
                        RankLevel::Dialogue => dialogue_rank_instances(&dialogues, cfg.max_history_tokens()),
                    }
                }
                (None, None) => unreachable!("clap requires --pairs or --corpus"),
            };
            let r = rank_report(&m, &instances, &cfg.top_k(), cfg.n_candidates(), seed)?;
            emit_report(&r, report.report.as_ref(), out)?;
        }
        Command::EvalNli { model, input, report } => {
            let m = load_model(&model, cfg, out)?;
            let triples = load_triples(&input)?;
            let mut r = EvalReport::new("nli");
            r.set("Accuracy", nli_probe(&triples, &m)?);
            r.support.insert("triples".into(), triples.len());
            emit_report(&r, report.report.as_ref(), out)?;
        }
        Command::EvalActions {
            model,
            train,
            test,
            report,
        } => {
            let m = load_model(&model, cfg, out)?;
            let train_set = load_multilabel(&train)?;
            let test_set = load_multilabel(&test)?;
            let n_labels = train_set.label_names.len();
            let examples: Vec<(String, LabelBits)> = train_set
                .items
                .iter()
                .map(|(t, _)| t.clone())
                .zip(train_set.bits(n_labels))
                .collect();
            let (probe, history) = train_action_probe(&examples, &m, cfg.probe_epochs(), cfg.probe_lr())?;
            if let (Some(first), Some(last)) = (history.first(), history.last()) {
                say!(out, "# probe bce: {first:.6} -> {last:.6}");
            }
            let texts: Vec<&str> = test_set.items.iter().map(|(t, _)| t.as_str()).collect();
            let predicted = probe.predict(&m.embed(&texts)?);
            let r = f1_report(&test_set.bits_in(&train_set.label_names), &predicted)?;
            emit_report(&r, report.report.as_ref(), out)?;
        }
        Command::Inspect { path } => inspect(&path, out)?,
        Command::EpochStudy {
            input,
            intent_train,
            intent_test,
            oos_test,
            rank_pairs,
            strategies,
            table,
        } => {
            let strategies = strategies
                .iter()
                .map(|s| s.parse::<PairStrategy>())
                .collect::<Result<Vec<_>>>()?;
            let sets = StudySets {
                intent_train: load_labeled(&intent_train)?,
                intent_test: load_labeled(&intent_test)?,
                oos_test: oos_test.as_deref().map(load_labeled).transpose()?,
                rank: rank_pairs.as_deref().map(load_rank_pairs).transpose()?,
            };
            let settings = StudySettings {
                encoder: cfg.encoder_config(),
                loss: cfg.loss_config(),
                train: cfg.train_config(),
                pairs: cfg.pair_config(),
                oos: cfg.oos_config(),
                shots: cfg.shots(),
                normalize_prototypes: cfg.normalize_prototypes(),
                top_k: cfg.top_k(),
                n_candidates: cfg.n_candidates(),
                eval_seed: seed,
            };
            let study = run_epoch_study(&load_corpus(&input)?, &strategies, &settings, &sets)?;
            let text = study.to_table();
            write!(out, "{text}").map_err(stdout_err)?;
            if let Some(p) = table {
                fs::write(&p, &text).map_err(|e| DseError::io(&p, e))?;
            }
        }
    }
    Ok(())
}

fn inspect(path: &Path, out: &mut dyn Write) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| DseError::io(path, e))?;
    if bytes.starts_with(CHECKPOINT_MAGIC.as_bytes()) {
        let ck = trainer::checkpoint_from_bytes(&bytes)?;
        let c = &ck.model.config;
        say!(out, "kind=checkpoint");
        say!(out, "format={CHECKPOINT_MAGIC}");
        say!(out, "epoch={}", ck.epoch);
        say!(out, "adam_step={}", ck.adam.t);
        say!(out, "vocab_size={}", c.vocab_size);
        say!(out, "embed_dim={}", c.embed_dim);
        say!(out, "head_hidden={}", c.head_hidden);
        say!(out, "head_out={}", c.head_out);
        say!(out, "parameters={}", ck.model.params.len());
        say!(out, "bytes={}", bytes.len());
        return Ok(());
    }
    let text = String::from_utf8(bytes)
        .map_err(|_| DseError::Invalid(format!("{} is neither a checkpoint nor UTF-8 text", path.display())))?;
    let file = path.display().to_string();
    if let Ok(batch) = parse_embeddings(&text, &file) {
        say!(out, "kind=embeddings");
        say!(out, "n={}", batch.rows);
        say!(out, "dim={}", batch.dim);
        say!(out, "inputs_sidecar={}", sidecar_path(path).exists());
        return Ok(());
    }
    if let Ok(dialogues) = parse_corpus(&text, &file) {
        say!(out, "kind=corpus");
        say!(out, "dialogues={}", dialogues.len());
        say!(out, "turns={}", dialogues.iter().map(|d| d.turns.len()).sum::<usize>());
        return Ok(());
    }
    if let Ok(pairs) = parse_pair_file(&text, &file) {
        say!(out, "kind=pairs");
        say!(out, "pairs={}", pairs.len());
        return Ok(());
    }
    Err(DseError::Invalid(format!("{file}: unrecognized file format")))
}
