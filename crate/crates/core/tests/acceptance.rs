//! Acceptance run. Prints one `PASS`/`FAIL` line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::*;
use dse_core::cli::{run_epoch_study, StudySets, StudySettings};
use dse_core::corpus::{gen_synthetic, TokenSeq};
use dse_core::encoder::{EmbeddingBatch, EncoderConfig, EncoderModel, ForwardMode, View};
use dse_core::eval::{
    build_prototypes, build_prototypes_from, classify_protonet, classify_vectors, detect_oos_scores, f1_scores,
    load_embeddings, nli_probe_vectors, oos_metrics, rank_topk_detailed, sample_few_shot, save_embeddings,
    sidecar_path, LabeledSet, OosConfig, PrototypeSet,
};
use dse_core::loss::{
    anchor_loss, batch_loss, batch_loss_and_grad, compute_alpha, cosine_sim, ntxent_reference, LossConfig, TrainBatch,
};
use dse_core::pairs::{build_combined, build_consecutive, build_k_to_1, PairBuildConfig, PairStrategy};
use dse_core::trainer::{
    checkpoint_from_bytes, checkpoint_to_bytes, load_checkpoint, save_checkpoint, train, AdamState, Checkpoint,
    TrainConfig,
};
use rand::Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn train_batch(rows: Vec<Vec<f64>>, view: View) -> TrainBatch {
    TrainBatch::new(EmbeddingBatch::from_rows(&rows, view).unwrap()).unwrap()
}

fn random_batch(r: &mut impl Rng) -> TrainBatch {
    let m = r.gen_range(2..=8);
    let dim = r.gen_range(2..=8);
    train_batch((0..2 * m).map(|_| gauss_vec(r, dim)).collect(), View::Train)
}

fn frozen_loss(batch: &TrainBatch, alphas: &dse_core::loss::AlphaWeights, cfg: &LossConfig) -> f64 {
    (0..batch.rows()).map(|a| anchor_loss(a, batch, alphas, cfg).unwrap()).sum::<f64>() / batch.rows() as f64
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let cfg = LossConfig::default();
    let ec = EncoderConfig {
        vocab_size: 50,
        embed_dim: 8,
        head_hidden: 8,
        head_out: 4,
        dropout_rate: 0.1,
        hash_seed: 0,
    };
    let m = 3;
    // Fourth-order central stencil: at tau = 0.05 the loss is curved enough
    // that the two-point rule's O(h^2) error alone is about 1e-4.
    let h = 3e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    for inst in 0..20u64 {
        let mut r = rng(100 + inst);
        let model = EncoderModel::<f64>::init(ec.clone(), inst).unwrap();
        let seq = |r: &mut rand_chacha::ChaCha8Rng| {
            let ids: Vec<u32> = (0..r.gen_range(1..=5)).map(|_| r.gen_range(0..50)).collect();
            TokenSeq {
                word_count: ids.len(),
                ids,
            }
        };
        let q: Vec<TokenSeq> = (0..m).map(|_| seq(&mut r)).collect();
        let resp: Vec<TokenSeq> = (0..m).map(|_| seq(&mut r)).collect();
        let (sq, sr) = (r.gen::<u64>(), r.gen::<u64>());
        let forward = |mdl: &EncoderModel<f64>| {
            let (qo, qt) = mdl.forward(&q, ForwardMode::TrainStochastic, sq).unwrap();
            let (ro, rt) = mdl.forward(&resp, ForwardMode::TrainStochastic, sr).unwrap();
            (qo, qt, ro, rt)
        };
        let (qo, qt, ro, rt) = forward(&model);
        let (_, grads) = batch_loss_and_grad(&model, &qo, &qt, &ro, &rt, &cfg).unwrap();
        let alphas = compute_alpha(&TrainBatch::from_sides(&qo, &ro).unwrap(), &cfg);
        let loss_at = |mdl: &EncoderModel<f64>| {
            let (qo, _, ro, _) = forward(mdl);
            frozen_loss(&TrainBatch::from_sides(&qo, &ro).unwrap(), &alphas, &cfg)
        };
        let analytic: Vec<f64> = grads.groups().iter().flat_map(|(_, g)| g.to_vec()).collect();
        let mut flat = 0;
        for group in 0..5 {
            let len = model.params.groups()[group].1.len();
            for i in 0..len {
                let at = |step: f64| {
                    let mut m = model.clone();
                    m.params.groups_mut()[group].1[i] += step;
                    loss_at(&m)
                };
                let fd = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
                let a = analytic[flat];
                let scale = a.abs().max(fd.abs());
                if scale > 1e-6 {
                    worst = worst.max((a - fd).abs() / scale);
                }
                checked += 1;
                flat += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    ensure(worst < 1e-4, || format!("max relative error {worst:.3e}"))?;
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!("20 instances, {checked} coordinates, max rel err {worst:.2e}, {:.1}s", elapsed.as_secs_f64()))
}

fn alpha_identity() -> Outcome {
    let cfg = LossConfig::default();
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let b = random_batch(&mut rng(seed));
        let alphas = compute_alpha(&b, &cfg);
        for a in 0..b.rows() {
            let w: Vec<f64> = alphas.negatives(a).map(|(_, w)| w).collect();
            ensure(w.len() == b.rows() - 2, || format!("anchor {a} has {} negatives", w.len()))?;
            worst = worst.max((w.iter().sum::<f64>() / w.len() as f64 - 1.0).abs());
        }
    }
    ensure(worst < 1e-6, || format!("max deviation {worst:.3e}"))?;
    Ok(format!("100 batches, max |mean alpha - 1| = {worst:.2e}"))
}

fn reference_equivalence() -> Outcome {
    let cfg = LossConfig {
        hard_negatives: false,
        ..Default::default()
    };
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let b = random_batch(&mut rng(1000 + seed));
        let ours = batch_loss(&b, &cfg).unwrap();
        let reference = ntxent_reference(&b, cfg.temperature, cfg.eps_norm);
        worst = worst.max((ours - reference).abs());
    }
    ensure(worst < 1e-6, || format!("max difference {worst:.3e}"))?;
    Ok(format!("100 batches, max |diff| = {worst:.2e}"))
}

fn scale_invariance() -> Outcome {
    let cfg = LossConfig::default();
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let mut r = rng(2000 + seed);
        let b = random_batch(&mut r);
        let before = batch_loss(&b, &cfg).unwrap();
        let mut scaled = b.clone();
        let row = r.gen_range(0..b.rows());
        let c = r.gen_range(0.01..100.0);
        scaled.embeddings.row_mut(row).iter_mut().for_each(|x| *x *= c);
        worst = worst.max((batch_loss(&scaled, &cfg).unwrap() - before).abs());
    }
    ensure(worst < 1e-6, || format!("loss moved by {worst:.3e}"))?;

    for seed in 0..100 {
        let mut r = rng(3000 + seed);
        let (labels, dim) = (r.gen_range(2..6), r.gen_range(2..8));
        let support: Vec<Vec<f64>> = (0..labels).map(|_| gauss_vec(&mut r, dim)).collect();
        let queries: Vec<Vec<f64>> = (0..20).map(|_| gauss_vec(&mut r, dim)).collect();
        let classify = |s: &[Vec<f64>], q: &[Vec<f64>]| -> Vec<usize> {
            let sb = EmbeddingBatch::from_rows(s, View::Eval).unwrap();
            let p = build_prototypes_from(&sb, &(0..labels).collect::<Vec<_>>(), labels, false).unwrap();
            let qb = EmbeddingBatch::from_rows(q, View::Eval).unwrap();
            classify_vectors(&qb, &p).unwrap().into_iter().map(|x| x.0).collect()
        };
        let base = classify(&support, &queries);
        let scale = |rows: &[Vec<f64>], r: &mut rand_chacha::ChaCha8Rng| -> Vec<Vec<f64>> {
            rows.iter()
                .map(|v| {
                    let c = r.gen_range(0.01..100.0);
                    v.iter().map(|x| x * c).collect()
                })
                .collect()
        };
        let (s2, q2) = (scale(&support, &mut r), scale(&queries, &mut r));
        ensure(classify(&s2, &q2) == base, || format!("protonet argmax changed (seed {seed})"))?;

        let texts: Vec<String> = (0..40).map(|i| format!("t{i}")).collect();
        let vecs: Vec<Vec<f64>> = (0..40).map(|_| gauss_vec(&mut r, dim)).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let rank = |vs: &[Vec<f64>]| {
            let table = Table(texts.iter().cloned().zip(vs.iter().cloned()).collect());
            rank_topk_detailed(&refs[..10], &refs[10..20], &refs, &[1, 5], 20, seed, &table).unwrap()
        };
        let (a, b) = (rank(&vecs), rank(&scale(&vecs, &mut r)));
        ensure(a.ranks == b.ranks && a.distractors == b.distractors, || format!("rank ordering changed (seed {seed})"))?;
    }
    Ok(format!("max loss change {worst:.2e}; protonet and rank decisions unchanged on 100 instances"))
}

fn worked_value() -> Outcome {
    // Scalar evaluation: anchor 0 with positive sim 1 and two negatives of sim
    // 0, both weighted exp(0)/mean(exp(0), exp(0)) = 1, temperature 1.
    let (tau, s_pos, s_neg) = (1.0f64, 1.0f64, [0.0f64, 0.0]);
    let mean_exp = s_neg.iter().map(|s| (s / tau).exp()).sum::<f64>() / 2.0;
    let alpha: Vec<f64> = s_neg.iter().map(|s| (s / tau).exp() / mean_exp).collect();
    let denom = (s_pos / tau).exp() + alpha.iter().zip(&s_neg).map(|(a, s)| (a * s / tau).exp()).sum::<f64>();
    let scalar = -((s_pos / tau).exp() / denom).ln();
    let e = std::f64::consts::E;
    let closed = -(e / (e + 2.0)).ln();
    ensure((scalar - closed).abs() < 1e-12, || format!("scalar {scalar} vs closed form {closed}"))?;
    ensure((closed - 0.5514).abs() < 1e-4, || format!("closed form {closed}"))?;
    let b = train_batch(
        vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]],
        View::Train,
    );
    let cfg = LossConfig {
        temperature: 1.0,
        ..Default::default()
    };
    let l = batch_loss(&b, &cfg).unwrap();
    ensure((l - 0.5514).abs() < 1e-4 && (l - scalar).abs() < 1e-12, || format!("batch loss {l}"))?;
    Ok(format!("L = {l:.6}"))
}

fn oracles() -> Outcome {
    let n = 250;
    for seed in 0..n {
        let mut r = rng(4000 + seed);
        let (labels, dim) = (r.gen_range(1..5), r.gen_range(1..4));
        let mut support: Vec<(Vec<f64>, usize)> = (0..labels).map(|l| (grid_vec(&mut r, dim), l)).collect();
        for _ in 0..r.gen_range(0..4) {
            support.push((grid_vec(&mut r, dim), r.gen_range(0..labels)));
        }
        let queries: Vec<Vec<f64>> = (0..r.gen_range(2..15)).map(|_| grid_vec(&mut r, dim)).collect();
        let expected = oracle_protonet(&support, labels, &queries);

        let mut texts: Vec<(String, Vec<f64>)> = Vec::new();
        for (i, (v, _)) in support.iter().enumerate() {
            texts.push((format!("s{i}"), v.clone()));
        }
        for (i, v) in queries.iter().enumerate() {
            texts.push((format!("q{i}"), v.clone()));
        }
        let table = Table(texts.into_iter().collect());
        let set = LabeledSet {
            items: support.iter().enumerate().map(|(i, (_, l))| (format!("s{i}"), *l)).collect(),
            label_names: (0..labels).map(|l| format!("L{l}")).collect(),
        };
        let protos = build_prototypes(&set, &table, false).unwrap();
        let qnames: Vec<String> = (0..queries.len()).map(|i| format!("q{i}")).collect();
        let qrefs: Vec<&str> = qnames.iter().map(String::as_str).collect();
        let got = classify_protonet(&qrefs, &protos, &table).unwrap();
        ensure(got == expected, || format!("protonet mismatch (seed {seed}): {got:?} vs {expected:?}"))?;

        let gold: Vec<Option<usize>> = (0..got.len())
            .map(|_| if r.gen_bool(0.3) { None } else { Some(r.gen_range(0..labels)) })
            .collect();
        let (decisions, _) = detect_oos_scores(&got, &OosConfig::default(), None).unwrap();
        let report = oos_metrics(&gold, &decisions).unwrap();
        let o = oracle_oos(&expected, &gold);
        let flagged: Vec<bool> = decisions.iter().map(|d| d.out_of_scope).collect();
        let m = |k: &str| report.metrics.get(k).copied();
        ensure(
            flagged == o.flagged
                && m("Accuracy") == o.accuracy
                && m("In-Accuracy") == o.in_accuracy
                && m("OOS-Accuracy") == o.oos_accuracy
                && m("OOS-Recall") == o.oos_recall,
            || format!("OOS mismatch (seed {seed})"),
        )?;
    }

    for seed in 0..n {
        let mut r = rng(5000 + seed);
        let dim = r.gen_range(1..4);
        let pool = 30;
        let names: Vec<String> = (0..pool).map(|i| format!("p{i}")).collect();
        let vecs: Vec<Vec<f64>> = (0..pool).map(|_| grid_vec(&mut r, dim)).collect();
        let table = Table(names.iter().cloned().zip(vecs.iter().cloned()).collect());
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let nq = r.gen_range(1..8);
        let qi: Vec<usize> = (0..nq).map(|_| r.gen_range(0..pool)).collect();
        let gi: Vec<usize> = (0..nq).map(|_| r.gen_range(0..pool)).collect();
        let q: Vec<&str> = qi.iter().map(|&i| refs[i]).collect();
        let g: Vec<&str> = gi.iter().map(|&i| refs[i]).collect();
        let cands = r.gen_range(2..=20);
        let ks = [1, 3, 10];
        let out = rank_topk_detailed(&q, &g, &refs, &ks, cands, seed, &table).unwrap();
        for i in 0..nq {
            let d = &out.distractors[i];
            let distinct: HashSet<&usize> = d.iter().collect();
            ensure(d.len() == cands - 1 && distinct.len() == d.len() && !d.contains(&gi[i]), || {
                format!("bad distractor draw (seed {seed})")
            })?;
            let dv: Vec<Vec<f64>> = d.iter().map(|&j| vecs[j].clone()).collect();
            let want = oracle_rank(&vecs[qi[i]], &vecs[gi[i]], &dv);
            ensure(out.ranks[i] == want, || format!("rank {} vs oracle {want} (seed {seed})", out.ranks[i]))?;
        }
        for k in ks {
            let hits = out.ranks.iter().filter(|&&x| x <= k).count() as f64 / nq as f64;
            ensure(out.report.metrics[&format!("Top-{k}")] == hits, || format!("Top-{k} mismatch (seed {seed})"))?;
        }

        let triples: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..r.gen_range(1..20))
            .map(|_| {
                let a = grid_vec(&mut r, dim);
                let e = grid_vec(&mut r, dim);
                let c = if r.gen_bool(0.2) { e.clone() } else { grid_vec(&mut r, dim) };
                (a, e, c)
            })
            .collect();
        let col = |f: fn(&(Vec<f64>, Vec<f64>, Vec<f64>)) -> &Vec<f64>| {
            EmbeddingBatch::from_rows(&triples.iter().map(|t| f(t).clone()).collect::<Vec<_>>(), View::Eval).unwrap()
        };
        let acc = nli_probe_vectors(&col(|t| &t.0), &col(|t| &t.1), &col(|t| &t.2)).unwrap();
        ensure(acc == oracle_nli(&triples), || format!("NLI mismatch (seed {seed})"))?;

        let labels = r.gen_range(1..6);
        let rows = r.gen_range(1..15);
        let bits = |r: &mut rand_chacha::ChaCha8Rng| -> Vec<Vec<bool>> {
            (0..rows).map(|_| (0..labels).map(|_| r.gen_bool(0.3)).collect()).collect()
        };
        let (gold, pred) = (bits(&mut r), bits(&mut r));
        ensure(f1_scores(&gold, &pred).unwrap() == oracle_f1(&gold, &pred), || format!("F1 mismatch (seed {seed})"))?;
    }
    Ok(format!("{n} instances each for protonet, OOS, ranking, NLI and F1; exact match"))
}

fn pair_counts() -> Outcome {
    let mut r = rng(6000);
    let dialogues: Vec<_> = (0..500).map(|i| random_dialogue(&mut r, i)).collect();
    let cfg = PairBuildConfig::default();
    let mut totals = [0usize; 4];
    for (i, d) in dialogues.iter().enumerate() {
        let one = std::slice::from_ref(d);
        let runs = surviving_run_lengths(d);
        let built: Vec<Vec<(String, String)>> = vec![
            build_consecutive(one, &cfg).into_iter().map(|p| (p.query, p.response)).collect(),
            build_k_to_1(one, 2, &cfg).unwrap().into_iter().map(|p| (p.query, p.response)).collect(),
            build_k_to_1(one, 3, &cfg).unwrap().into_iter().map(|p| (p.query, p.response)).collect(),
        ];
        for k in 1..=3 {
            let law: usize = runs.iter().map(|&n| n.saturating_sub(k)).sum();
            let got = &built[k - 1];
            ensure(got.len() == law, || format!("dialogue {i} width {k}: {} pairs, law {law}", got.len()))?;
            ensure(*got == enumerate_pairs(d, k), || format!("dialogue {i} width {k}: pairs differ from enumeration"))?;
            totals[k - 1] += got.len();
        }
        let combined = build_combined(one, &PairBuildConfig::with_widths(&[1, 2, 3])).unwrap();
        let law: usize = runs.iter().map(|&n| if n >= 3 { 3 * n - 6 } else { n.saturating_sub(1) }).sum();
        ensure(combined.len() == law, || format!("dialogue {i}: combined {} vs law {law}", combined.len()))?;
        totals[3] += combined.len();
    }
    Ok(format!(
        "500 dialogues: {} / {} / {} pairs for widths 1/2/3, {} combined",
        totals[0], totals[1], totals[2], totals[3]
    ))
}

fn labeled_turns(dialogues: &[dse_core::corpus::Dialogue]) -> LabeledSet {
    let topics = dialogues.iter().filter_map(|d| d.synthetic_topic()).max().unwrap() + 1;
    LabeledSet {
        items: dialogues
            .iter()
            .flat_map(|d| d.turns.iter().map(move |t| (t.text.clone(), d.synthetic_topic().unwrap())))
            .collect(),
        label_names: (0..topics).map(|t| format!("topic{t}")).collect(),
    }
}

fn one_shot_accuracy(model: &EncoderModel<f32>, held: &LabeledSet, seed: u64) -> f64 {
    let (support, _) = sample_few_shot(held, 1, seed).unwrap();
    let protos: PrototypeSet = build_prototypes(&support, model, false).unwrap();
    let queries: Vec<&(String, usize)> = held.items.iter().filter(|x| !support.items.contains(x)).collect();
    let texts: Vec<&str> = queries.iter().map(|(t, _)| t.as_str()).collect();
    let pred = classify_protonet(&texts, &protos, model).unwrap();
    let right = pred.iter().zip(&queries).filter(|(p, (_, l))| p.0 == *l).count();
    right as f64 / queries.len() as f64
}

fn cosine_gap(model: &EncoderModel<f32>, held: &LabeledSet) -> f64 {
    let emb = model.embed_texts(&held.texts()).unwrap();
    let labels = held.labels();
    let (mut intra, mut ni, mut inter, mut nx) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..emb.rows {
        for j in i + 1..emb.rows {
            let s = cosine_sim(emb.row(i), emb.row(j), 1e-12);
            if labels[i] == labels[j] {
                intra += s;
                ni += 1;
            } else {
                inter += s;
                nx += 1;
            }
        }
    }
    intra / ni as f64 - inter / nx as f64
}

fn synthetic_separation() -> Outcome {
    let start = Instant::now();
    let seeds = 10u64;
    let (mut trained, mut untrained, mut gap) = (0.0, 0.0, 0.0);
    let mut loss_drops = 0;
    for seed in 0..seeds {
        let corpus = gen_synthetic(8, 100, 6, 6, seed).unwrap();
        let pairs = build_consecutive(&corpus, &PairBuildConfig::default());
        let ec = EncoderConfig::default();
        let tc = TrainConfig {
            epochs: 10,
            ..TrainConfig::default().with_seed(seed)
        };
        let out = train(&pairs, &ec, &LossConfig::default(), &tc, |_, _| Ok(())).unwrap();
        if out.epochs.last().unwrap().mean_loss < out.initial_loss {
            loss_drops += 1;
        }
        let model = &out.checkpoint.model;
        let held = labeled_turns(&gen_synthetic(8, 5, 6, 6, 1000 + seed).unwrap());
        let baseline = EncoderModel::<f32>::init(ec, tc.init_seed).unwrap();
        trained += one_shot_accuracy(model, &held, seed);
        untrained += one_shot_accuracy(&baseline, &held, seed);
        gap += cosine_gap(model, &held);
    }
    let n = seeds as f64;
    let (trained, untrained, gap) = (trained / n, untrained / n, gap / n);
    let elapsed = start.elapsed();
    let summary = format!(
        "1-shot acc {trained:.3} (untrained {untrained:.3}), cosine gap {gap:.3}, loss fell on {loss_drops}/{seeds} seeds, {:.0}s",
        elapsed.as_secs_f64()
    );
    ensure(trained >= 0.85, || summary.clone())?;
    ensure(trained - untrained >= 0.20, || summary.clone())?;
    ensure(gap >= 0.2, || summary.clone())?;
    ensure(loss_drops == seeds as usize, || summary.clone())?;
    ensure(elapsed < Duration::from_secs(180), || summary.clone())?;
    Ok(summary)
}

fn epoch_study() -> Outcome {
    let corpus = gen_synthetic(4, 20, 6, 6, 3).unwrap();
    let held = labeled_turns(&gen_synthetic(4, 3, 6, 6, 4).unwrap());
    let sets = StudySets {
        intent_train: held.clone(),
        intent_test: held,
        oos_test: None,
        rank: None,
    };
    let epochs = 3;
    let settings = StudySettings {
        encoder: EncoderConfig {
            vocab_size: 2000,
            embed_dim: 16,
            head_hidden: 16,
            head_out: 8,
            ..Default::default()
        },
        loss: LossConfig::default(),
        train: TrainConfig {
            epochs,
            batch_size: 32,
            ..TrainConfig::default().with_seed(5)
        },
        pairs: PairBuildConfig::default(),
        oos: OosConfig::default(),
        shots: 1,
        normalize_prototypes: false,
        top_k: vec![1],
        n_candidates: 10,
        eval_seed: 6,
    };
    let strategies = [PairStrategy::Consec, PairStrategy::SelfPairs];
    let a = run_epoch_study(&corpus, &strategies, &settings, &sets).unwrap();
    let b = run_epoch_study(&corpus, &strategies, &settings, &sets).unwrap();
    ensure(a.rows.len() == epochs * strategies.len(), || format!("{} rows", a.rows.len()))?;
    for (s, &strategy) in strategies.iter().enumerate() {
        for e in 0..epochs {
            let row = &a.rows[s * epochs + e];
            ensure(row.strategy == strategy && row.epoch == e + 1, || format!("row {} out of place", s * epochs + e))?;
        }
    }
    let bits = |s: &dse_core::cli::EpochStudy| -> Vec<u64> {
        s.rows
            .iter()
            .flat_map(|r| std::iter::once(r.train_loss.to_bits()).chain(r.report.metrics.values().map(|v| v.to_bits())))
            .collect()
    };
    ensure(bits(&a) == bits(&b) && a == b && a.to_table() == b.to_table(), || "reruns differ".into())?;
    Ok(format!("{} rows ({} strategies x {epochs} epochs), reruns bitwise identical", a.rows.len(), strategies.len()))
}

fn persistence() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let ec = EncoderConfig {
        vocab_size: 500,
        embed_dim: 8,
        head_hidden: 8,
        head_out: 4,
        ..Default::default()
    };
    let corpus = gen_synthetic(2, 10, 4, 5, 1).unwrap();
    let pairs = build_consecutive(&corpus, &PairBuildConfig::default());
    let tc = TrainConfig {
        epochs: 2,
        batch_size: 16,
        ..TrainConfig::default().with_seed(1)
    };
    let ck = train(&pairs, &ec, &LossConfig::default(), &tc, |_, _| Ok(())).unwrap().checkpoint;
    let p1 = dir.path().join("a.ckpt");
    let p2 = dir.path().join("b.ckpt");
    save_checkpoint(&ck, &p1).unwrap();
    let loaded = load_checkpoint(&p1).unwrap();
    save_checkpoint(&loaded, &p2).unwrap();
    let (b1, b2) = (std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    ensure(b1 == b2 && loaded == ck, || "checkpoint round-trip differs".into())?;

    let mut bad = b1.clone();
    bad[2] ^= 0x20;
    let e = checkpoint_from_bytes(&bad).unwrap_err().to_string();
    ensure(e.contains("DSECKPT1"), || format!("bad magic error: {e}"))?;
    for cut in [b1.len() - 1, b1.len() / 2, 20, 3, 0] {
        let e = checkpoint_from_bytes(&b1[..cut]).map(|_| ()).unwrap_err().to_string();
        ensure(e.contains("DSECKPT1"), || format!("truncation at {cut} gave {e}"))?;
    }
    let fresh = Checkpoint {
        model: EncoderModel::<f32>::init(ec.clone(), 2).unwrap(),
        adam: AdamState::new(&ec),
        epoch: 0,
        train_config: tc.clone(),
        loss_config: LossConfig::default(),
    };
    let fb = checkpoint_to_bytes(&fresh).unwrap();
    ensure(checkpoint_to_bytes(&checkpoint_from_bytes(&fb).unwrap()).unwrap() == fb, || {
        "fresh checkpoint round-trip differs".into()
    })?;

    let texts: Vec<&str> = corpus.iter().flat_map(|d| d.turns.iter().map(|t| t.text.as_str())).collect();
    let emb = ck.model.embed_texts(&texts).unwrap();
    let e1 = dir.path().join("a.emb");
    let e2 = dir.path().join("b.emb");
    save_embeddings(&e1, &emb, &texts).unwrap();
    let (back, inputs) = load_embeddings(&e1).unwrap();
    let inputs = inputs.unwrap();
    let refs: Vec<&str> = inputs.iter().map(String::as_str).collect();
    save_embeddings(&e2, &back, &refs).unwrap();
    let read = |p: &std::path::Path| (std::fs::read(p).unwrap(), std::fs::read(sidecar_path(p)).unwrap());
    ensure(read(&e1) == read(&e2) && back == emb, || "embedding round-trip differs".into())?;
    let content = std::fs::read_to_string(&e1).unwrap();
    let truncated = &content[..content.len() / 2];
    std::fs::write(&e2, truncated).unwrap();
    ensure(load_embeddings(&e2).is_err(), || "truncated embedding file accepted".into())?;
    Ok(format!("checkpoint ({} bytes) and embeddings byte-identical; corrupt inputs rejected", b1.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("1 gradient check", gradient_check),
        ("2 alpha identity", alpha_identity),
        ("3 reference equivalence", reference_equivalence),
        ("4 scale invariance", scale_invariance),
        ("5 worked value", worked_value),
        ("6 oracle equivalence", oracles),
        ("7 pair-count laws", pair_counts),
        ("8 synthetic separation", synthetic_separation),
        ("9 epoch study", epoch_study),
        ("10 persistence", persistence),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS  criterion {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  criterion {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
