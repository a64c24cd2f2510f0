//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL line
//! each and exits non-zero if any fails or overruns its time budget.

#[path = "../../../think-core/tests/oracle/mod.rs"]
mod oracle;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use think::checkpoint;
use think::commands;
use think::config::{ExperimentConfig, Profile};
use think::io;
use think::report;
use think_core::corpus::{tokenize, NgramVocabulary, Vocabulary};
use think_core::deform::{DeformHead, Discretizer, SeConfig};
use think_core::metrics::{distinct_n, mix_coh, q_phrase_n, ModelScores};
use think_core::model::{GeneratorPool, ModelConfig};
use think_core::probe::{run_probe, synthetic_keyword_dataset, ProbeConfig};
use think_core::{Matrix, Params, Scalar};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn worked_example() -> Outcome {
    let generated: Vec<Vec<String>> = io::read_pairs(&data("worked_generated.tsv"))
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|p| p.response)
        .collect();
    let vocab = NgramVocabulary::build(&[tokenize("I am fine")], 3).map_err(|e| e.to_string())?;
    let d = distinct_n(&generated, 3);
    let q = q_phrase_n(&generated, &vocab);
    ensure(generated.len() == 5, || format!("{} responses", generated.len()))?;
    ensure(d == 1.0 && q == 0.2, || format!("distinct-3 {d}, q_phrase-3 {q}"))?;
    Ok(format!("distinct-3 = {d}, q_phrase-3 = {q}"))
}

fn table_recompute() -> Outcome {
    let printed = [("seq2seq", 0.5781), ("cvae", 0.6082), ("transfm", 0.5888), ("cmham", 0.6044), ("think", 0.6205)];
    let reports = printed
        .iter()
        .map(|(n, _)| report::read_scores(&data(&format!("scores/{n}.json"))))
        .collect::<anyhow::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    let scores: Vec<ModelScores> = reports
        .iter()
        .map(|r| ModelScores { model: r.model.clone(), avg_b: r.avg_b, avg_e: r.avg_e, coherence: r.coherence })
        .collect();
    let rows = mix_coh(&scores);
    let mut worst: f64 = 0.0;
    for (row, (name, want)) in rows.iter().zip(printed) {
        let diff = (row.mix_coh - want).abs();
        ensure(diff <= 0.002, || format!("{name}: {:.4} vs printed {want}", row.mix_coh))?;
        worst = worst.max(diff);
    }
    Ok(format!("5 models, max |diff| {worst:.5}"))
}

fn check_head<T: Scalar>(cfg: &SeConfig, rng: &mut ChaCha8Rng, gumbel: bool) -> Result<(), String> {
    let head = DeformHead::<T>::init(cfg, rng);
    let x = Matrix::<T>::from_fn(cfg.n, cfg.m, |_, _| T::lit(rng.random_range(-3.0..3.0)));
    let mut noise = ChaCha8Rng::seed_from_u64(rng.random());
    let trace = if gumbel {
        head.forward(cfg, &x, Discretizer::Gumbel { tau: 0.5 }, Some(&mut noise))
    } else {
        head.forward(cfg, &x, Discretizer::Argmax, None)
    }
    .map_err(|e| e.to_string())?;
    let hard = trace.p_hard();
    for i in 0..cfg.n {
        let s: f64 = trace.p.row(i).iter().map(|v| v.as_f64()).sum();
        ensure((s - 1.0).abs() <= 1e-6, || format!("{cfg:?}: P row {i} sums to {s}"))?;
        let ones = hard.row(i).iter().filter(|v| v.as_f64() == 1.0).count();
        let zeros = hard.row(i).iter().filter(|v| v.as_f64() == 0.0).count();
        ensure(ones == 1 && zeros == cfg.n - 1, || format!("{cfg:?}: P_h row {i} not one-hot"))?;
        let bits = |r: &[T]| r.iter().map(|v| v.as_f64().to_bits()).collect::<Vec<_>>();
        let row = bits(trace.x_deform.row(i));
        ensure((0..cfg.n).any(|j| bits(x.row(j)) == row), || {
            format!("{cfg:?}: X_deform row {i} is not a row of X")
        })?;
    }
    Ok(())
}

fn deformation_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..1000 {
        let n = rng.random_range(1..=8);
        let cfg = SeConfig::new(
            n,
            rng.random_range(1..=6),
            rng.random_range(1..=n),
            rng.random_range(1..=3),
            rng.random_range(1..=4),
        )
        .map_err(|e| e.to_string())?;
        let gumbel = trial % 4 == 3;
        if trial % 2 == 0 {
            check_head::<f64>(&cfg, &mut rng, gumbel)?;
        } else {
            check_head::<f32>(&cfg, &mut rng, gumbel)?;
        }
    }
    Ok("1000 configurations, f32 and f64, argmax and gumbel".into())
}

fn gradient_fidelity() -> Outcome {
    const EPS: f64 = 0.1;
    let (mut checked, mut skipped, mut worst) = (0, 0, 0.0f64);
    let mut seed = 50_000;
    while checked < 50 {
        seed += 1;
        let inst = oracle::random_instance(seed);
        let frozen = oracle::freeze(&inst.pool, &inst.context, &inst.response);
        let (_, margin, gap) = oracle::surrogate_loss(&inst.pool, &inst.context, &inst.response, EPS, &frozen);
        if margin < 1e-4 || gap < 1e-6 {
            skipped += 1;
            continue;
        }
        let mut grads = inst.pool.zeros_like();
        inst.pool
            .loss_and_grad(&inst.context, &inst.response, EPS, 1.0, &mut grads, Discretizer::Argmax, None)
            .map_err(|e| e.to_string())?;
        let numeric = oracle::numeric_gradient(&inst.pool, &inst.context, &inst.response, EPS, 1e-6);
        let err = oracle::relative_error(&grads.to_flat(), &numeric);
        ensure(err < 1e-4, || format!("seed {seed}: relative error {err:e}"))?;
        worst = worst.max(err);
        checked += 1;
    }
    Ok(format!("50 instances ({skipped} near-tie skipped), max relative error {worst:.2e}"))
}

fn random_pool(rng: &mut ChaCha8Rng) -> GeneratorPool<f64> {
    let c_len = rng.random_range(1..=6);
    let cfg = ModelConfig {
        c_len,
        r_len: rng.random_range(1..=6),
        vocab_size: rng.random_range(4..=16),
        embed_dim: rng.random_range(1..=6),
        hidden: rng.random_range(1..=8),
        k: rng.random_range(1..=c_len),
        heads: rng.random_range(1..=3),
        p: rng.random_range(1..=4),
    };
    GeneratorPool::init(cfg, rng).expect("valid config")
}

fn tokens(rng: &mut ChaCha8Rng, len: usize, v: usize) -> Vec<usize> {
    (0..len).map(|_| rng.random_range(0..v)).collect()
}

fn causality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..200 {
        let pool = random_pool(&mut rng);
        let cfg = *pool.config();
        let ctx = tokens(&mut rng, cfg.c_len, cfg.vocab_size);
        let resp = tokens(&mut rng, cfg.r_len, cfg.vocab_size);
        for i in 0..cfg.r_len {
            let prefix: Vec<usize> = ctx.iter().chain(&resp[..i]).copied().collect();
            let x = pool.embed(&prefix).map_err(|e| e.to_string())?;
            let base = pool.generator_forward(i, &x).map_err(|e| e.to_string())?;
            let mut swapped = resp.clone();
            for t in &mut swapped[i..] {
                *t = rng.random_range(0..cfg.vocab_size);
            }
            let a = pool.teacher_forcing_logits(&ctx, &resp).map_err(|e| e.to_string())?;
            let b = pool.teacher_forcing_logits(&ctx, &swapped).map_err(|e| e.to_string())?;
            let bits = |r: &[f64]| r.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            ensure(bits(a.row(i)) == bits(b.row(i)) && bits(a.row(i)) == bits(&base.logits), || {
                format!("trial {trial}: generator {i} depends on tokens at or after {i}")
            })?;
        }
        let first = pool.generate(&ctx).map_err(|e| e.to_string())?;
        let again = pool.clone().generate(&ctx).map_err(|e| e.to_string())?;
        ensure(first == again, || format!("trial {trial}: greedy generation is not deterministic"))?;
    }
    Ok("200 trials".into())
}

fn teacher_forcing() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let pool = random_pool(&mut rng);
        let cfg = *pool.config();
        let ctx = tokens(&mut rng, cfg.c_len, cfg.vocab_size);
        let resp = tokens(&mut rng, cfg.r_len, cfg.vocab_size);
        let tf = pool.teacher_forcing_logits(&ctx, &resp).map_err(|e| e.to_string())?;
        for i in 0..cfg.r_len {
            let ids: Vec<usize> = ctx.iter().chain(&resp[..i]).copied().collect();
            let step = pool.generator_forward(i, &pool.embed(&ids).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
            let reference = oracle::inference_logits(&pool, &ids, i);
            for ((t, s), r) in tf.row(i).iter().zip(&step.logits).zip(&reference) {
                worst = worst.max((t - s).abs()).max((t - r).abs());
            }
        }
    }
    ensure(worst < 1e-9, || format!("max abs diff {worst:e}"))?;
    Ok(format!("50 pairs, max abs diff {worst:.1e}"))
}

fn overfit() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = ExperimentConfig::profile(Profile::Desk);
    cfg.corpus = Some(data("toy32.tsv"));
    cfg.out = dir.path().to_path_buf();
    commands::prepare(&cfg).map_err(|e| format!("{e:#}"))?;
    let summary = commands::train(&cfg, false, |_| {}).map_err(|e| format!("{e:#}"))?;
    ensure(summary.epoch <= 100, || format!("{} epochs", summary.epoch))?;
    ensure(summary.train_accuracy >= 0.95, || format!("greedy accuracy {:.4}", summary.train_accuracy))?;
    let rows = commands::generate(&cfg, &data("toy32.tsv"), &dir.path().join("responses.tsv"))
        .map_err(|e| format!("{e:#}"))?;
    let gold = io::read_pairs(&data("toy32.tsv")).map_err(|e| e.to_string())?;
    let verbatim = rows.iter().zip(&gold).filter(|((_, r), g)| tokenize(r) == g.response).count();
    ensure(verbatim == gold.len(), || format!("{verbatim}/{} responses reproduced verbatim", gold.len()))?;
    Ok(format!(
        "{} epochs, greedy accuracy {:.4}, {verbatim}/{} verbatim",
        summary.epoch,
        summary.train_accuracy,
        gold.len()
    ))
}

fn sentence(rng: &mut ChaCha8Rng, words: usize, max_len: usize) -> Vec<String> {
    let len = rng.random_range(0..=max_len);
    (0..len).map(|_| format!("w{}", rng.random_range(0..words))).collect()
}

fn grams(corpus: &[Vec<String>], n: usize) -> Vec<&[String]> {
    corpus.iter().flat_map(|s| (0..(s.len() + 1).saturating_sub(n)).map(move |i| &s[i..i + n])).collect()
}

fn brute(corpus: &[Vec<String>], refs: &[Vec<String>], n: usize) -> (f64, f64) {
    let all = grams(corpus, n);
    if all.is_empty() {
        return (0.0, 0.0);
    }
    let ref_grams = grams(refs, n);
    let mut unique: Vec<&[String]> = Vec::new();
    for g in &all {
        if !unique.contains(g) {
            unique.push(g);
        }
    }
    let hits = unique.iter().filter(|g| ref_grams.contains(g)).count();
    (unique.len() as f64 / all.len() as f64, hits as f64 / all.len() as f64)
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for trial in 0..1000 {
        let words = rng.random_range(2..=6);
        let corpus: Vec<Vec<String>> = (0..rng.random_range(0..=20)).map(|_| sentence(&mut rng, words, 8)).collect();
        let refs: Vec<Vec<String>> = (0..rng.random_range(0..=10)).map(|_| sentence(&mut rng, words, 8)).collect();
        let n = rng.random_range(1..=5);
        let vocab = NgramVocabulary::build(&refs, n).map_err(|e| e.to_string())?;
        let (d, q) = (distinct_n(&corpus, n), q_phrase_n(&corpus, &vocab));
        ensure(q <= d, || format!("trial {trial}: q_phrase {q} > distinct {d}"))?;
        ensure((d, q) == brute(&corpus, &refs, n), || {
            format!("trial {trial}: ({d}, {q}) vs enumeration {:?}", brute(&corpus, &refs, n))
        })?;
    }
    for trial in 0..1000 {
        let models: Vec<ModelScores> = (0..rng.random_range(1..=8))
            .map(|i| ModelScores {
                model: format!("m{i}"),
                avg_b: rng.random_range(0.001..1.0),
                avg_e: rng.random_range(0.001..1.0),
                coherence: rng.random_range(0.001..1.0),
            })
            .collect();
        let rows = mix_coh(&models);
        let sum = |f: fn(&think_core::metrics::ModelScoreRow) -> f64| rows.iter().map(f).sum::<f64>();
        let (b, e, c, m) = (sum(|r| r.b_score), sum(|r| r.e_score), sum(|r| r.c_score), sum(|r| r.mix_coh));
        ensure((b - 1.0).abs() <= 1e-9 && (e - 1.0).abs() <= 1e-9 && (c - 1.0).abs() <= 1e-9, || {
            format!("table {trial}: shares sum to {b}, {e}, {c}")
        })?;
        ensure((m - 3.0).abs() <= 1e-9, || format!("table {trial}: mix_coh sums to {m}"))?;
    }
    Ok("1000 corpora against enumeration, 1000 random tables".into())
}

fn probe() -> Outcome {
    let dataset = synthetic_keyword_dataset(200, 0);
    ensure(dataset.len() == 800 && dataset.num_labels() == 4, || format!("{} sentences", dataset.len()))?;
    let (real, _) = run_probe(&dataset, &ProbeConfig::default()).map_err(|e| e.to_string())?;
    let shuffled_cfg = ProbeConfig { shuffle_labels: true, ..ProbeConfig::default() };
    let (shuffled, _) = run_probe(&dataset, &shuffled_cfg).map_err(|e| e.to_string())?;
    ensure(real.accuracy >= 0.95, || format!("test accuracy {:.4}", real.accuracy))?;
    ensure((shuffled.accuracy - 0.25).abs() <= 0.1, || format!("shuffled accuracy {:.4}", shuffled.accuracy))?;
    Ok(format!("test accuracy {:.4}, shuffled {:.4}", real.accuracy, shuffled.accuracy))
}

fn checkpoint_round_trip() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let words: Vec<String> = (0..40).map(|i| format!("w{i}")).collect();
    let vocab = Vocabulary::from_tokens(words).map_err(|e| e.to_string())?;
    let mut cfg = ExperimentConfig::profile(Profile::Desk);
    let model = cfg.model(vocab.len());
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let pool = GeneratorPool::<f32>::init(model, &mut rng).map_err(|e| e.to_string())?;
    cfg.out = dir.path().to_path_buf();
    checkpoint::save(dir.path(), &pool, &vocab, &cfg, 123, 4).map_err(|e| format!("{e:#}"))?;
    let ck = checkpoint::load(dir.path()).map_err(|e| format!("{e:#}"))?;
    let bits = |p: &GeneratorPool<f32>| p.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    ensure(bits(&ck.pool) == bits(&pool), || "parameters differ after reload".into())?;
    ensure(ck.vocab == vocab, || "vocabulary differs after reload".into())?;
    for probe in 0..20 {
        let ctx = tokens(&mut rng, model.c_len, vocab.len());
        let (a, b) = (pool.generate(&ctx), ck.pool.generate(&ctx));
        ensure(a.is_ok() && a.as_ref().ok() == b.as_ref().ok(), || format!("probe {probe}: greedy outputs differ"))?;
    }
    Ok(format!("{} parameters bit-exact, 20 probes identical", pool.param_count()))
}

fn main() {
    type Criterion = (&'static str, u64, fn() -> Outcome);
    let criteria: [Criterion; 10] = [
        ("1 q_phrase worked example", 1, worked_example),
        ("2 mix_coh recomputation", 1, table_recompute),
        ("3 deformation invariants", 30, deformation_invariants),
        ("4 gradient fidelity", 120, gradient_fidelity),
        ("5 teamwork causality", 30, causality),
        ("6 teacher-forcing equivalence", 30, teacher_forcing),
        ("7 overfit sanity", 600, overfit),
        ("8 metric bounds and oracles", 60, metric_oracles),
        ("9 probe separability", 300, probe),
        ("10 checkpoint round-trip", 30, checkpoint_round_trip),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, limit, run) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let result = match result {
            Ok(_) if elapsed > Duration::from_secs(limit) => Err(format!("over the {limit} s budget")),
            r => r,
        };
        match result {
            Ok(detail) => println!("PASS  {name}  ({:.2} s)  {detail}", elapsed.as_secs_f64()),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}  ({:.2} s)  {detail}", elapsed.as_secs_f64());
            }
        }
    }
    println!("{} of 10 criteria passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
