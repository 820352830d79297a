use std::hint::black_box;

use codemix::corpus::generate_synthetic;
use codemix::model::{forward_multitask, Bound, Dropout};
use codemix::preprocess::preprocess_text;
use codemix::trainer::{finetune_multitask, multitask_loss};
use codemix::vocab::{align_tags, build_vocabulary, encode};
use codemix::{Graph, ModelConfig, ModelWeights, SyntheticSpec, Tensor, TrainConfig};
use criterion::{criterion_group, criterion_main, Criterion};

fn matmul(c: &mut Criterion) {
    let a = Tensor::new(vec![16, 64], (0..1024).map(|i| (i as f64).sin()).collect()).unwrap();
    let b = Tensor::new(vec![64, 64], (0..4096).map(|i| (i as f64).cos()).collect()).unwrap();
    c.bench_function("matmul_16x64x64_fwd_bwd", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let x = g.param(a.clone());
            let w = g.param(b.clone());
            let y = g.matmul(x, w).unwrap();
            let s = g.sum(y).unwrap();
            g.backward(s).unwrap();
            black_box(g.grad(w).map(|d| d[0]))
        })
    });
}

fn model(c: &mut Criterion) {
    let records = generate_synthetic(&SyntheticSpec::with_default_lexicons(7, 64)).unwrap();
    let vocab = build_vocabulary(&records, 64, 0.0).unwrap();
    let cfg = ModelConfig {
        max_len: 16,
        dropout_rate: 0.0,
        ..ModelConfig::desk_scale(vocab.len())
    };
    let weights = ModelWeights::init(cfg.clone()).unwrap();
    let r = &records[0];
    let e = encode(&r.tokens, &vocab, cfg.max_len);
    let tags = align_tags(&r.tags, r.tokens.len(), cfg.max_len).unwrap();
    let label = r.sentiment.map(|s| s.id());

    c.bench_function("multitask_forward_backward_one_tweet", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let bound = Bound::new(&mut g, &weights, true);
            let (s, l) = forward_multitask(&mut g, &bound, &cfg, &e.ids, &e.attention_mask, &mut Dropout::Off).unwrap();
            let loss = multitask_loss(&mut g, s, label, l, &tags, 1.0, 1.0).unwrap();
            g.backward(loss).unwrap();
            black_box(g.value(loss).data()[0])
        })
    });

    let mut group = c.benchmark_group("finetune");
    group.sample_size(10);
    group.bench_function("ten_steps_batch_16", |bench| {
        let tc = TrainConfig {
            epochs: 100,
            max_steps: Some(10),
            ..TrainConfig::default()
        };
        bench.iter(|| black_box(finetune_multitask(weights.clone(), &records, &vocab, &tc, None).unwrap().steps()))
    });
    group.finish();
}

fn preprocess(c: &mut Criterion) {
    let tweets = [
        "RT @user: Aaj ka din was AMAZING 😊🔥 https://t.co/xyz #blessed",
        "Qué día tan malo... no puedo más 😭 @amiga",
        "meeting at 5pm, report pending!!! 🙄",
    ];
    c.bench_function("preprocess_three_tweets", |bench| {
        bench.iter(|| tweets.iter().map(|t| preprocess_text(black_box(t)).len()).sum::<usize>())
    });
}

criterion_group!(benches, matmul, model, preprocess);
criterion_main!(benches);
