//! Layered run configuration.
//!
//! Resolution order, lowest to highest: built-in default, preset, `DSE_SEED`
//! (seed only), config file, command-line flag. Every value remembers which
//! layer set it. The file format is flat `key=value` lines with `#`
//! comments; [`RunConfig::to_file_string`] writes one back.

use std::fmt;
use std::fs;
use std::path::Path;

use crate::encoder::EncoderConfig;
use crate::error::{DseError, Result};
use crate::eval::{OosConfig, StatsPopulation, ThresholdRule};
use crate::loss::LossConfig;
use crate::pairs::{PairBuildConfig, PairStrategy};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Default,
    Preset,
    Env,
    ConfigFile,
    Flag,
}

impl Provenance {
    pub fn name(self) -> &'static str {
        match self {
            Provenance::Default => "default",
            Provenance::Preset => "preset",
            Provenance::Env => "env",
            Provenance::ConfigFile => "config-file",
            Provenance::Flag => "flag",
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Kind {
    Count { min: usize },
    /// A count or `auto`.
    CountOrAuto,
    Seed,
    Real,
    /// A real or `none`.
    OptReal,
    Bool,
    Choice(&'static [&'static str]),
    /// Comma-separated counts, at least one.
    CountList,
}

pub struct FieldSpec {
    pub key: &'static str,
    pub default: &'static str,
    pub help: &'static str,
    kind: Kind,
}

const fn field(key: &'static str, default: &'static str, kind: Kind, help: &'static str) -> FieldSpec {
    FieldSpec { key, default, help, kind }
}

pub const FIELDS: &[FieldSpec] = &[
    field("vocab_size", "30000", Kind::Count { min: 8 }, "hashed vocabulary size"),
    field("hash_seed", "0", Kind::Seed, "tokenizer hash seed"),
    field("embed_dim", "64", Kind::Count { min: 1 }, "token embedding width d"),
    field("head_hidden", "auto", Kind::CountOrAuto, "contrastive head hidden width (auto = embed_dim)"),
    field("head_out", "32", Kind::Count { min: 1 }, "contrastive head output width"),
    field("dropout_rate", "0.1", Kind::Real, "dropout probability"),
    field("temperature", "0.05", Kind::Real, "softmax temperature"),
    field("hard_negatives", "true", Kind::Bool, "weight negatives by similarity"),
    field("eps_norm", "1e-12", Kind::Real, "norm guard in cosine similarity"),
    field("positive_in_denominator", "true", Kind::Bool, "include the positive in the loss denominator"),
    field(
        "strategy",
        "consec",
        Kind::Choice(&["consec", "k2", "k3", "combined", "self", "file"]),
        "positive pair strategy",
    ),
    field("apply_length_filter", "true", Kind::Bool, "drop turns with 3 or fewer words"),
    field("bridge_filtered", "false", Kind::Bool, "treat turns around a filtered turn as adjacent"),
    field("batch_size", "128", Kind::Count { min: 2 }, "pairs per batch"),
    field("epochs", "15", Kind::Count { min: 1 }, "training epochs"),
    field("lr_head", "0.0003", Kind::Real, "Adam learning rate of the head"),
    field("lr_backbone", "0.003", Kind::Real, "Adam learning rate of the embedding table"),
    field("beta1", "0.9", Kind::Real, "Adam beta1"),
    field("beta2", "0.999", Kind::Real, "Adam beta2"),
    field("adam_eps", "1e-8", Kind::Real, "Adam epsilon"),
    field("seed", "0", Kind::Seed, "base seed for training and evaluation sampling"),
    field("same_dialogue_exclusion", "false", Kind::Bool, "keep pairs of one dialogue out of a shared batch"),
    field("keep_partial_batches", "true", Kind::Bool, "train on the trailing partial batch"),
    field("shots", "1", Kind::Count { min: 0 }, "support items per label (0 = whole train file)"),
    field("normalize_prototypes", "false", Kind::Bool, "unit-normalize support embeddings before averaging"),
    field("threshold_rule", "mean", Kind::Choice(&["mean", "mean-std"]), "OOS threshold rule"),
    field(
        "stats_population",
        "test-all",
        Kind::Choice(&["test-all", "test-in-only"]),
        "scores used for OOS threshold statistics",
    ),
    field("threshold_override", "none", Kind::OptReal, "fixed OOS threshold"),
    field("n_candidates", "100", Kind::Count { min: 1 }, "ranking candidates per query"),
    field("top_k", "1,3,10", Kind::CountList, "ranking cutoffs"),
    field("max_history_tokens", "32", Kind::Count { min: 1 }, "dialogue history length for ranking"),
    field("probe_epochs", "200", Kind::Count { min: 0 }, "action probe gradient steps"),
    field("probe_lr", "0.5", Kind::Real, "action probe learning rate"),
    field("threads", "0", Kind::Count { min: 0 }, "worker threads (0 = all cores)"),
];

pub const PRESETS: &[(&str, &[(&str, &str)])] = &[(
    "paper",
    &[
        ("batch_size", "1024"),
        ("epochs", "15"),
        ("temperature", "0.05"),
        ("lr_head", "0.0003"),
        ("lr_backbone", "0.000003"),
        ("head_hidden", "auto"),
        ("head_out", "128"),
        ("dropout_rate", "0.1"),
        ("apply_length_filter", "true"),
    ],
)];

pub const SEED_ENV: &str = "DSE_SEED";

fn spec_index(key: &str) -> Option<usize> {
    FIELDS.iter().position(|f| f.key == key)
}

fn check_value(spec: &FieldSpec, value: &str) -> Result<()> {
    let bad = |what: &str| DseError::config(spec.key, format!("{value:?} is not {what}"));
    match spec.kind {
        Kind::Count { min } => {
            let n: usize = value.parse().map_err(|_| bad("a non-negative integer"))?;
            if n < min {
                return Err(DseError::config(spec.key, format!("must be >= {min}, got {n}")));
            }
        }
        Kind::CountOrAuto => {
            if value != "auto" {
                let n: usize = value.parse().map_err(|_| bad("a positive integer or `auto`"))?;
                if n == 0 {
                    return Err(DseError::config(spec.key, "must be >= 1"));
                }
            }
        }
        Kind::Seed => {
            value.parse::<u64>().map_err(|_| bad("an unsigned 64-bit integer"))?;
        }
        Kind::Real => {
            let x: f64 = value.parse().map_err(|_| bad("a number"))?;
            if !x.is_finite() {
                return Err(bad("a finite number"));
            }
        }
        Kind::OptReal => {
            if value != "none" {
                let x: f64 = value.parse().map_err(|_| bad("a number or `none`"))?;
                if !x.is_finite() {
                    return Err(bad("a finite number"));
                }
            }
        }
        Kind::Bool => {
            value.parse::<bool>().map_err(|_| bad("true or false"))?;
        }
        Kind::Choice(options) => {
            if !options.contains(&value) {
                return Err(bad(&format!("one of {}", options.join("|"))));
            }
        }
        Kind::CountList => {
            let parts: Vec<&str> = value.split(',').map(str::trim).collect();
            if parts.iter().any(|p| p.parse::<usize>().map_or(true, |n| n == 0)) {
                return Err(bad("a comma-separated list of positive integers"));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: Vec<(String, Provenance)>,
    preset: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: FIELDS.iter().map(|f| (f.default.to_string(), Provenance::Default)).collect(),
            preset: None,
        }
    }
}

impl RunConfig {
    /// Resolve every layer. `flags` are `(key, value)` pairs in command-line
    /// order; `env_seed` is the value of `DSE_SEED`, if any.
    pub fn resolve(
        preset: Option<&str>,
        env_seed: Option<&str>,
        config_file: Option<&Path>,
        flags: &[(String, String)],
    ) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(name) = preset {
            cfg.apply_preset(name)?;
        }
        if let Some(seed) = env_seed {
            cfg.set("seed", seed, Provenance::Env)
                .map_err(|e| DseError::config("seed", format!("from {SEED_ENV}: {e}")))?;
        }
        if let Some(path) = config_file {
            cfg.apply_file(path)?;
        }
        for (k, v) in flags {
            cfg.set(k, v, Provenance::Flag)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_preset(&mut self, name: &str) -> Result<()> {
        let (_, values) = PRESETS.iter().find(|(n, _)| *n == name).ok_or_else(|| {
            let known: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
            DseError::config("preset", format!("unknown preset {name:?}, known: {}", known.join(", ")))
        })?;
        for (k, v) in values.iter() {
            self.set(k, v, Provenance::Preset)?;
        }
        self.preset = Some(name.to_string());
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str, provenance: Provenance) -> Result<()> {
        let idx = spec_index(key).ok_or_else(|| DseError::config(key, "unknown configuration key"))?;
        let value = value.trim();
        check_value(&FIELDS[idx], value)?;
        self.values[idx] = (value.to_string(), provenance);
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let content = fs::read_to_string(path).map_err(|e| DseError::io(path, e))?;
        self.apply_file_str(&content, &path.display().to_string())
    }

    pub fn apply_file_str(&mut self, content: &str, file: &str) -> Result<()> {
        for (i, raw) in content.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| DseError::Parse {
                file: file.to_string(),
                line: i + 1,
                message: format!("expected key=value, got {line:?}"),
            })?;
            self.set(k.trim(), v, Provenance::ConfigFile)?;
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        let idx = spec_index(key).unwrap_or_else(|| panic!("unknown configuration key {key}"));
        &self.values[idx].0
    }

    pub fn provenance(&self, key: &str) -> Provenance {
        let idx = spec_index(key).unwrap_or_else(|| panic!("unknown configuration key {key}"));
        self.values[idx].1
    }

    pub fn preset(&self) -> Option<&str> {
        self.preset.as_deref()
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> T {
        self.get(key)
            .parse()
            .unwrap_or_else(|_| panic!("value of {key} was validated on set"))
    }

    fn count(&self, key: &str) -> usize {
        self.parsed(key)
    }

    fn real(&self, key: &str) -> f64 {
        self.parsed(key)
    }

    fn flag(&self, key: &str) -> bool {
        self.parsed(key)
    }

    pub fn seed(&self) -> u64 {
        self.parsed("seed")
    }

    pub fn threads(&self) -> usize {
        self.count("threads")
    }

    pub fn shots(&self) -> usize {
        self.count("shots")
    }

    pub fn normalize_prototypes(&self) -> bool {
        self.flag("normalize_prototypes")
    }

    pub fn n_candidates(&self) -> usize {
        self.count("n_candidates")
    }

    pub fn top_k(&self) -> Vec<usize> {
        self.get("top_k").split(',').map(|p| p.trim().parse().expect("validated")).collect()
    }

    pub fn max_history_tokens(&self) -> usize {
        self.count("max_history_tokens")
    }

    pub fn probe_epochs(&self) -> usize {
        self.count("probe_epochs")
    }

    pub fn probe_lr(&self) -> f64 {
        self.real("probe_lr")
    }

    pub fn strategy(&self) -> PairStrategy {
        self.get("strategy").parse().expect("validated")
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        let embed_dim = self.count("embed_dim");
        EncoderConfig {
            vocab_size: self.count("vocab_size"),
            embed_dim,
            head_hidden: match self.get("head_hidden") {
                "auto" => embed_dim,
                v => v.parse().expect("validated"),
            },
            head_out: self.count("head_out"),
            dropout_rate: self.real("dropout_rate"),
            hash_seed: self.parsed("hash_seed"),
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            temperature: self.real("temperature"),
            hard_negatives: self.flag("hard_negatives"),
            eps_norm: self.real("eps_norm"),
            positive_in_denominator: self.flag("positive_in_denominator"),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.count("batch_size"),
            epochs: self.count("epochs"),
            lr_head: self.real("lr_head"),
            lr_backbone: self.real("lr_backbone"),
            beta1: self.real("beta1"),
            beta2: self.real("beta2"),
            adam_eps: self.real("adam_eps"),
            same_dialogue_exclusion: self.flag("same_dialogue_exclusion"),
            keep_partial_batches: self.flag("keep_partial_batches"),
            ..TrainConfig::default()
        }
        .with_seed(self.seed())
    }

    pub fn pair_config(&self) -> PairBuildConfig {
        PairBuildConfig {
            apply_length_filter: self.flag("apply_length_filter"),
            bridge_filtered: self.flag("bridge_filtered"),
            ..PairBuildConfig::default()
        }
    }

    pub fn oos_config(&self) -> OosConfig {
        OosConfig {
            threshold_rule: self.get("threshold_rule").parse::<ThresholdRule>().expect("validated"),
            stats_population: self.get("stats_population").parse::<StatsPopulation>().expect("validated"),
            threshold_override: match self.get("threshold_override") {
                "none" => None,
                v => Some(v.parse().expect("validated")),
            },
        }
    }

    /// Cross-field checks, reported with the offending field name.
    pub fn validate(&self) -> Result<()> {
        self.encoder_config().validate()?;
        self.loss_config().validate()?;
        self.train_config().validate()?;
        self.pair_config().validate()?;
        if self.probe_lr() <= 0.0 {
            return Err(DseError::config("probe_lr", "must be positive"));
        }
        Ok(())
    }

    /// `key=value` lines in field order; loading them reproduces this config.
    pub fn to_file_string(&self) -> String {
        FIELDS
            .iter()
            .zip(&self.values)
            .map(|(f, (v, _))| format!("{}={v}\n", f.key))
            .collect()
    }

    /// Like [`to_file_string`](Self::to_file_string) with each line's
    /// provenance as a trailing comment.
    pub fn render(&self) -> String {
        let width = FIELDS.iter().zip(&self.values).map(|(f, (v, _))| f.key.len() + v.len() + 1).max().unwrap_or(0);
        let mut s = String::new();
        if let Some(p) = &self.preset {
            s.push_str(&format!("# preset: {p}\n"));
        }
        for (f, (v, p)) in FIELDS.iter().zip(&self.values) {
            let line = format!("{}={v}", f.key);
            s.push_str(&format!("{line:<width$}  # {}\n", p.name()));
        }
        s
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}
