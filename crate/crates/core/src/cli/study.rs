//! Task-level evaluation of one model and the per-epoch study.

use crate::corpus::Dialogue;
use crate::encoder::{EncoderConfig, EncoderModel, Embedder};
use crate::error::{DseError, Result};
use crate::eval::{
    build_prototypes, classify_protonet, detect_oos, oos_metrics, rank_topk, sample_few_shot, EvalReport,
    LabeledSet, OosConfig, RankInstance,
};
use crate::loss::LossConfig;
use crate::pairs::{build_pairs, PairBuildConfig, PairStrategy};
use crate::trainer::{train, TrainConfig};

/// Support set for prototypes: `shots` sampled items per label, or the whole
/// training set when `shots == 0`.
pub fn support_set(train_set: &LabeledSet, shots: usize, seed: u64) -> Result<LabeledSet> {
    if shots == 0 {
        Ok(train_set.clone())
    } else {
        Ok(sample_few_shot(train_set, shots, seed)?.0)
    }
}

/// Prototypical intent accuracy. Test items whose label is absent from the
/// training set are skipped and counted under `support.skipped`.
pub fn intent_report(
    model: &dyn Embedder,
    train_set: &LabeledSet,
    test_set: &LabeledSet,
    shots: usize,
    normalize: bool,
    seed: u64,
) -> Result<EvalReport> {
    let support = support_set(train_set, shots, seed)?;
    let protos = build_prototypes(&support, model, normalize)?;
    let gold = train_set.align(test_set);
    let (texts, labels): (Vec<&str>, Vec<usize>) = test_set
        .items
        .iter()
        .zip(&gold)
        .filter_map(|((t, _), g)| g.map(|l| (t.as_str(), l)))
        .unzip();
    if texts.is_empty() {
        return Err(DseError::Invalid("no test item has a label seen in training".into()));
    }
    let predicted = classify_protonet(&texts, &protos, model)?;
    let correct = predicted.iter().zip(&labels).filter(|(p, l)| p.0 == **l).count();
    let mut report = EvalReport::new("intent");
    report.seed = seed;
    report.set("Accuracy", correct as f64 / texts.len() as f64);
    report.support.insert("queries".into(), texts.len());
    report.support.insert("skipped".into(), test_set.items.len() - texts.len());
    report.support.insert("support".into(), support.items.len());
    report.support.insert("labels".into(), support.label_names.len());
    Ok(report)
}

/// Test items with labels unknown to the training set are out of scope.
pub fn oos_report(
    model: &dyn Embedder,
    train_set: &LabeledSet,
    test_set: &LabeledSet,
    shots: usize,
    normalize: bool,
    cfg: &OosConfig,
    seed: u64,
) -> Result<EvalReport> {
    let support = support_set(train_set, shots, seed)?;
    let protos = build_prototypes(&support, model, normalize)?;
    let gold = train_set.align(test_set);
    let mask: Vec<bool> = gold.iter().map(Option::is_some).collect();
    let (decisions, threshold) = detect_oos(&test_set.texts(), &protos, cfg, model, Some(&mask))?;
    let mut report = oos_metrics(&gold, &decisions)?;
    report.seed = seed;
    report.set("threshold", threshold);
    Ok(report)
}

/// Rank every gold response against distractors drawn from all responses.
pub fn rank_report(
    model: &dyn Embedder,
    instances: &[RankInstance],
    k_values: &[usize],
    n_candidates: usize,
    seed: u64,
) -> Result<EvalReport> {
    let queries: Vec<&str> = instances.iter().map(|r| r.query.as_str()).collect();
    let gold: Vec<&str> = instances.iter().map(|r| r.response.as_str()).collect();
    rank_topk(&queries, &gold, &gold, k_values, n_candidates, seed, model)
}

/// Evaluation inputs for the epoch study. Only the intent sets are required.
#[derive(Debug, Clone, Default)]
pub struct StudySets {
    pub intent_train: LabeledSet,
    pub intent_test: LabeledSet,
    pub oos_test: Option<LabeledSet>,
    pub rank: Option<Vec<RankInstance>>,
}

#[derive(Debug, Clone)]
pub struct StudySettings {
    pub encoder: EncoderConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub pairs: PairBuildConfig,
    pub oos: OosConfig,
    pub shots: usize,
    pub normalize_prototypes: bool,
    pub top_k: Vec<usize>,
    pub n_candidates: usize,
    /// Seed for few-shot and distractor sampling.
    pub eval_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub strategy: PairStrategy,
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    /// Metrics prefixed by task, e.g. `intent.Accuracy`.
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStudy {
    /// The untrained encoder every strategy starts from.
    pub baseline: EvalReport,
    pub rows: Vec<StudyRow>,
}

fn merge(into: &mut EvalReport, prefix: &str, part: &EvalReport) {
    for (k, v) in &part.metrics {
        into.metrics.insert(format!("{prefix}.{k}"), *v);
    }
    for (k, v) in &part.support {
        into.support.insert(format!("{prefix}.{k}"), *v);
    }
}

/// All configured tasks on one model, in one report.
pub fn evaluate_model(model: &dyn Embedder, settings: &StudySettings, sets: &StudySets) -> Result<EvalReport> {
    let seed = settings.eval_seed;
    let mut report = EvalReport::new("epoch-study");
    report.seed = seed;
    let intent = intent_report(
        model,
        &sets.intent_train,
        &sets.intent_test,
        settings.shots,
        settings.normalize_prototypes,
        seed,
    )?;
    merge(&mut report, "intent", &intent);
    if let Some(test) = &sets.oos_test {
        let oos = oos_report(
            model,
            &sets.intent_train,
            test,
            settings.shots,
            settings.normalize_prototypes,
            &settings.oos,
            seed,
        )?;
        merge(&mut report, "oos", &oos);
    }
    if let Some(rank) = &sets.rank {
        let r = rank_report(model, rank, &settings.top_k, settings.n_candidates, seed)?;
        merge(&mut report, "rank", &r);
    }
    Ok(report)
}

/// Train one model per strategy with identical seeds and evaluate the
/// checkpoint at the end of every epoch.
pub fn run_epoch_study(
    dialogues: &[Dialogue],
    strategies: &[PairStrategy],
    settings: &StudySettings,
    sets: &StudySets,
) -> Result<EpochStudy> {
    if strategies.is_empty() {
        return Err(DseError::config("strategy", "the epoch study needs at least one strategy"));
    }
    let untrained = EncoderModel::<f32>::init(settings.encoder.clone(), settings.train.init_seed)?;
    let baseline = evaluate_model(&untrained, settings, sets)?;
    let mut rows = Vec::with_capacity(strategies.len() * settings.train.epochs);
    for &strategy in strategies {
        let pairs = build_pairs(dialogues, strategy, &settings.pairs)?;
        train(&pairs, &settings.encoder, &settings.loss, &settings.train, |ckpt, stats| {
            rows.push(StudyRow {
                strategy,
                epoch: stats.epoch,
                train_loss: stats.mean_loss,
                report: evaluate_model(&ckpt.model, settings, sets)?,
            });
            Ok(())
        })?;
    }
    Ok(EpochStudy { baseline, rows })
}

impl EpochStudy {
    /// Tab-separated table: `strategy epoch train_loss <metrics...>`, one row
    /// per strategy and epoch, preceded by the untrained baseline as epoch 0.
    pub fn to_table(&self) -> String {
        let names: Vec<&String> = self.baseline.metrics.keys().collect();
        let mut s = format!(
            "strategy\tepoch\ttrain_loss\t{}\n",
            names.iter().map(|n| n.as_str()).collect::<Vec<_>>().join("\t")
        );
        let cells = |r: &EvalReport| -> String {
            names
                .iter()
                .map(|n| r.metrics.get(*n).map_or("-".to_string(), |v| format!("{v:.6}")))
                .collect::<Vec<_>>()
                .join("\t")
        };
        s.push_str(&format!("untrained\t0\t-\t{}\n", cells(&self.baseline)));
        for row in &self.rows {
            s.push_str(&format!(
                "{}\t{}\t{:.6}\t{}\n",
                row.strategy.name(),
                row.epoch,
                row.train_loss,
                cells(&row.report)
            ));
        }
        s
    }
}
