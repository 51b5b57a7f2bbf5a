//! The ten acceptance criteria. Run with `--nocapture` to see the
//! PASS/FAIL table; the test fails if any criterion fails.

use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use traffic_rag::backend::{sample_frame_indices, UniformRandomMock};
use traffic_rag::corpus::{load_corpus, save_corpus};
use traffic_rag::embedding::{EmbeddingVector, HashEmbedder, DEFAULT_DIM};
use traffic_rag::eval::{run_ablation, run_eval, save_dataset, EvalOptions, ModeName, PipelineMode};
use traffic_rag::fixtures::{balanced_mcq_dataset, planted_fact_fixture};
use traffic_rag::kernels::selftest::{
    fusion_gradient_error, random_adapter, rmsnorm_gradient_error, swiglu_gradient_error,
};
use traffic_rag::kernels::{lora_delta, lora_param_count, rope_2d, DEFAULT_ROPE_BASE};
use traffic_rag::retrieval::Retriever;
use traffic_rag::vector_index::{
    cosine_similarity, decode_index, encode_index, load_index, save_index, top_k, IndexError, VectorDatabase,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let took = start.elapsed();
    check(took < limit, || format!("took {took:?}, limit {limit:?}"))
}

fn random_baseline() -> Outcome {
    let start = Instant::now();
    let items = balanced_mcq_dataset(10_000, 4, 2024);
    let backend = UniformRandomMock::new(99, 4).map_err(|e| e.to_string())?;
    let report = run_eval(
        &items,
        PipelineMode::base(),
        None,
        &backend,
        &EvalOptions {
            concurrency: 8,
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let acc = report.overall.accuracy;
    check((acc - 0.25).abs() <= 0.02, || format!("accuracy {acc:.4}"))?;
    within(start, Duration::from_secs(30))?;
    Ok(format!("accuracy {:.2}% in {:?}", acc * 100.0, start.elapsed()))
}

fn retrieval_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..200 {
        let m = rng.gen_range(1..=64);
        let dim = rng.gen_range(1..=32);
        // Coarse values and repeated vectors make score ties common.
        let mut pool: Vec<Vec<f64>> = Vec::new();
        let mut db = VectorDatabase::new(dim).map_err(|e| e.to_string())?;
        let mut ids: Vec<u64> = (0..m as u64 * 3).collect();
        ids.shuffle(&mut rng);
        let mut entries = Vec::new();
        for &id in ids.iter().take(m) {
            let v = if !pool.is_empty() && rng.gen_bool(0.3) {
                pool[rng.gen_range(0..pool.len())].clone()
            } else {
                let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2..=2) as f64).collect();
                if v.iter().all(|x| *x == 0.0) {
                    continue;
                }
                pool.push(v.clone());
                v
            };
            db.insert(id, EmbeddingVector::new(v.clone()).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
            entries.push((id, v));
        }
        let q: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2..=2) as f64).collect();
        let k = rng.gen_range(1..=m + 3);
        let got: Vec<(u64, f64)> = top_k(&db, &EmbeddingVector::new(q.clone()).map_err(|e| e.to_string())?, k)
            .map_err(|e| e.to_string())?
            .ranked
            .iter()
            .map(|s| (s.chunk_id, s.score))
            .collect();
        let mut want: Vec<(u64, f64)> = entries
            .iter()
            .map(|(id, v)| {
                let dot = v.iter().zip(&q).fold(0.0, |a, (x, y)| a + x * y);
                let nv = v.iter().fold(0.0, |a, x| a + x * x).sqrt();
                let nq = q.iter().fold(0.0, |a, x| a + x * x).sqrt();
                (*id, dot / (nq * nv + 1e-8))
            })
            .collect();
        want.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        want.truncate(k);
        check(got == want, || format!("case {case}: {got:?} != {want:?}"))?;
    }
    within(start, Duration::from_secs(5))?;
    Ok(format!("200 databases match in {:?}", start.elapsed()))
}

fn cosine_fidelity() -> Outcome {
    let expected = 1.0 / (1.0 + 1e-8);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let dim = rng.gen_range(1..=64);
        let raw: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        let u = EmbeddingVector::new(raw.iter().map(|x| x / n).collect()).map_err(|e| e.to_string())?;
        let s = cosine_similarity(&u, &u).map_err(|e| e.to_string())?;
        worst = worst.max((s - expected).abs());
    }
    check(worst <= 1e-12, || format!("self-similarity off by {worst:e}"))?;

    let mut db = VectorDatabase::new(4).map_err(|e| e.to_string())?;
    for id in 0..5 {
        db.insert(id, EmbeddingVector::new(vec![id as f64 + 1.0, -1.0, 0.5, 2.0]).unwrap())
            .map_err(|e| e.to_string())?;
    }
    let hits = top_k(&db, &EmbeddingVector::new(vec![0.0; 4]).unwrap(), 5).map_err(|e| e.to_string())?;
    check(hits.ranked.iter().all(|h| h.score == 0.0), || {
        format!("zero query scores {hits:?}")
    })?;
    check(hits.ids() == vec![0, 1, 2, 3, 4], || "zero query tie order".into())?;
    Ok(format!("max self-similarity error {worst:e}; zero query scores 0"))
}

fn gradient_checks() -> Outcome {
    let start = Instant::now();
    let mut worst = [0.0f64; 3];
    for seed in 0..20 {
        worst[0] = worst[0].max(rmsnorm_gradient_error(seed).map_err(|e| e.to_string())?);
        worst[1] = worst[1].max(swiglu_gradient_error(seed).map_err(|e| e.to_string())?);
        worst[2] = worst[2].max(fusion_gradient_error(seed).map_err(|e| e.to_string())?);
    }
    check(worst.iter().all(|w| *w <= 1e-4), || {
        format!("max relative errors {worst:?}")
    })?;
    within(start, Duration::from_secs(10))?;
    Ok(format!(
        "max rel err rmsnorm {:.1e}, swiglu {:.1e}, fusion {:.1e}",
        worst[0], worst[1], worst[2]
    ))
}

fn lora_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_tail: f64 = 0.0;
    for i in 0..100 {
        let d = rng.gen_range(2..=24);
        let r = rng.gen_range(1..d);
        let delta = lora_delta(&random_adapter(1000 + i, d, r).map_err(|e| e.to_string())?);
        let mut sv: Vec<f64> = DMatrix::from_row_slice(d, d, delta.data())
            .singular_values()
            .iter()
            .copied()
            .collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        let tail = sv[r..].iter().copied().fold(0.0, f64::max);
        check(tail < 1e-10, || {
            format!("adapter {i} (d={d}, r={r}): singular value {tail:e} beyond rank")
        })?;
        worst_tail = worst_tail.max(tail);
    }
    let counts = lora_param_count(64, 4).map_err(|e| e.to_string())?;
    check(counts == (512, 4096), || format!("param count {counts:?}"))?;
    Ok(format!(
        "largest tail singular value {worst_tail:.1e}; (64, 4) -> {counts:?}"
    ))
}

fn rope_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut iso, mut rel) = (0.0f64, 0.0f64);
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let rope = |x: &[f64], h: i64, w: i64| rope_2d(x, h, w, DEFAULT_ROPE_BASE).map_err(|e| e.to_string());
    for _ in 0..100 {
        let d = 4 * rng.gen_range(1..=16);
        let q: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let k: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut pos = || rng.gen_range(-256i64..=256);
        let (ph, pw, kh, kw, oh, ow) = (pos(), pos(), pos(), pos(), pos(), pos());
        iso = iso.max((norm(&rope(&q, ph, pw)?) - norm(&q)).abs());
        let before = dot(&rope(&q, ph, pw)?, &rope(&k, kh, kw)?);
        let after = dot(&rope(&q, ph + oh, pw + ow)?, &rope(&k, kh + oh, kw + ow)?);
        rel = rel.max((before - after).abs());
    }
    check(iso <= 1e-12, || format!("isometry error {iso:e}"))?;
    check(rel <= 1e-10, || format!("relative-position error {rel:e}"))?;
    Ok(format!("isometry {iso:.1e}, relative position {rel:.1e}"))
}

fn frame_sampler() -> Outcome {
    let s = |n, k| sample_frame_indices(n, k).map_err(|e| e.to_string());
    check(s(8, 8)? == (0..8).collect::<Vec<_>>(), || {
        "(8, 8) is not the identity".into()
    })?;
    check(s(15, 8)? == vec![0, 2, 4, 6, 8, 10, 12, 14], || {
        "(15, 8) mismatch".into()
    })?;
    let short = s(3, 8)?;
    check(
        short.len() == 8 && short.windows(2).all(|w| w[0] <= w[1]) && short.iter().all(|&i| i < 3),
        || format!("(3, 8) gave {short:?}"),
    )?;
    for n in 2..200 {
        let v = s(n, 8)?;
        check(v[0] == 0 && v[7] == n - 1, || {
            format!("({n}, 8) misses an endpoint: {v:?}")
        })?;
    }
    Ok(format!("(3, 8) -> {short:?}; endpoints kept for n in 2..200"))
}

fn planted_fact_ablation() -> Outcome {
    let fx = planted_fact_fixture(48, 8);
    let embedder = Arc::new(HashEmbedder::with_seed(0, DEFAULT_DIM).map_err(|e| e.to_string())?);
    let retriever = Retriever::build(fx.corpus.clone(), embedder).map_err(|e| e.to_string())?;
    let report = run_ablation(
        &fx.dataset,
        &retriever,
        &fx.knowledge_mock(),
        5,
        &EvalOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    let modes: Vec<ModeName> = report.reports.iter().map(|r| r.mode).collect();
    check(
        modes == [ModeName::Base, ModeName::WithCot, ModeName::WithCotAndRag],
        || format!("row order {modes:?}"),
    )?;
    let acc: Vec<f64> = report.reports.iter().map(|r| r.overall.accuracy).collect();
    check(acc[2] == 1.0, || format!("+RAG accuracy {}", acc[2]))?;
    check(acc[2] > acc[0], || {
        format!("+RAG {} does not beat Base {}", acc[2], acc[0])
    })?;
    let md = report.to_markdown();
    let rows: Vec<usize> = ["| Base |", "| + CoT |", "| + RAG |"]
        .iter()
        .filter_map(|r| md.find(r))
        .collect();
    check(rows.len() == 3 && rows.windows(2).all(|w| w[0] < w[1]), || {
        format!("markdown rows out of order:\n{md}")
    })?;
    Ok(format!("Base {:.2}, +CoT {:.2}, +RAG {:.2}", acc[0], acc[1], acc[2]))
}

fn eval_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dataset = dir.path().join("dataset.jsonl");
    save_dataset(&balanced_mcq_dataset(500, 4, 9), &dataset).map_err(|e| e.to_string())?;
    let config = dir.path().join("run.json");
    let cfg = serde_json::json!({
        "dataset_path": dataset, "backend": "mock:uniform:4", "mode": "base",
        "seed": 31, "concurrency": 8, "report_out": dir.path().join("report.json"),
    });
    std::fs::write(&config, cfg.to_string()).map_err(|e| e.to_string())?;
    let mut reports = Vec::new();
    for _ in 0..2 {
        let out = Command::new(env!("CARGO_BIN_EXE_traffic-rag"))
            .args(["--config", config.to_str().unwrap(), "eval"])
            .output()
            .map_err(|e| e.to_string())?;
        check(out.status.success(), || {
            String::from_utf8_lossy(&out.stderr).into_owned()
        })?;
        reports.push(std::fs::read(dir.path().join("report.json")).map_err(|e| e.to_string())?);
    }
    check(reports[0] == reports[1], || "report bytes differ between runs".into())?;
    Ok(format!(
        "two eval runs wrote identical {}-byte reports",
        reports[0].len()
    ))
}

fn round_trips() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let fx = planted_fact_fixture(10, 4);
    let corpus_path = dir.path().join("corpus.jsonl");
    save_corpus(&fx.corpus, &corpus_path).map_err(|e| e.to_string())?;
    check(
        load_corpus(&corpus_path).map_err(|e| e.to_string())? == fx.corpus,
        || "corpus differs after reload".into(),
    )?;

    let retriever = Retriever::build(fx.corpus.clone(), Arc::new(HashEmbedder::with_seed(1, 64).unwrap()))
        .map_err(|e| e.to_string())?;
    let db = retriever.database();
    let index_path = dir.path().join("corpus.idx");
    save_index(db, &index_path).map_err(|e| e.to_string())?;
    check(&load_index(&index_path).map_err(|e| e.to_string())? == db, || {
        "index differs after reload".into()
    })?;

    let bytes = encode_index(db);
    for cut in [0, 5, 17, bytes.len() / 2, bytes.len() - 1] {
        let err = decode_index(&bytes[..cut]);
        check(matches!(err, Err(IndexError::Truncated { .. })), || {
            format!("cut at {cut}: {err:?}")
        })?;
    }
    std::fs::write(&index_path, &bytes[..bytes.len() - 3]).map_err(|e| e.to_string())?;
    check(
        matches!(load_index(&index_path), Err(IndexError::Truncated { .. })),
        || "truncated file accepted".into(),
    )?;
    Ok(format!(
        "{} chunks and a {}-byte index reload identically",
        fx.corpus.len(),
        bytes.len()
    ))
}

#[test]
fn acceptance_criteria() {
    let criteria: [Criterion; 10] = [
        ("1 random baseline", random_baseline),
        ("2 retrieval oracle", retrieval_oracle),
        ("3 cosine fidelity", cosine_fidelity),
        ("4 gradient checks", gradient_checks),
        ("5 lora properties", lora_properties),
        ("6 rope invariants", rope_invariants),
        ("7 frame sampler", frame_sampler),
        ("8 planted-fact ablation", planted_fact_ablation),
        ("9 eval determinism", eval_determinism),
        ("10 round-trips", round_trips),
    ];
    let mut failed = Vec::new();
    for (name, f) in criteria {
        match f() {
            Ok(detail) => println!("PASS  {name:<24} {detail}"),
            Err(detail) => {
                println!("FAIL  {name:<24} {detail}");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
