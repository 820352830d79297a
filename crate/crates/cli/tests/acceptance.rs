//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use codemix::corpus::{
    generate_synthetic, parse_conll_str, read_conll_file, write_conll_file, write_conll_string,
};
use codemix::metrics::{confusion, evaluate, macro_f1};
use codemix::model::{forward_mlm, forward_multitask, Bound, Dropout};
use codemix::trainer::{finetune_multitask, multitask_loss, pretrain_mlm, AdamState};
use codemix::vocab::{build_vocabulary, tfidf_score, TfidfStats, CLS, PAD, SEP};
use codemix::{
    Error, Graph, ModelConfig, ModelWeights, ParamGroup, SyntheticSpec, Tensor, TrainConfig, TweetRecord, Var,
    Vocabulary, IGNORE_INDEX,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

// ---- 1: gradients ------------------------------------------------------

const FD_EPS: f64 = 1e-5;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

type OpFn = fn(&mut Graph, &[Var]) -> codemix::Result<Var>;

fn op_scalar(f: OpFn, g: &mut Graph, vars: &[Var], proj: &Tensor) -> Var {
    let out = f(g, vars).unwrap();
    if g.value(out).rank() == 0 {
        return out;
    }
    let w = g.constant(proj.clone());
    let p = g.mul(out, w).unwrap();
    g.sum(p).unwrap()
}

fn op_error(f: OpFn, inputs: &[Tensor], rng: &mut ChaCha8Rng) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let probe = f(&mut g, &vars).unwrap();
    let shape = g.value(probe).shape().to_vec();
    let proj = if shape.is_empty() { Tensor::scalar(1.0) } else { uniform(rng, &shape) };
    let s = op_scalar(f, &mut g, &vars, &proj);
    g.backward(s).unwrap();
    let value_at = |ins: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.constant(t.clone())).collect();
        let s = op_scalar(f, &mut g, &vars, &proj);
        g.value(s).data()[0]
    };
    let mut worst: f64 = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let analytic = g.grad(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[k].numel()]);
        for i in 0..inputs[k].numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += FD_EPS;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= FD_EPS;
            let numeric = (value_at(&plus) - value_at(&minus)) / (2.0 * FD_EPS);
            worst = worst.max(rel_err(analytic[i], numeric));
        }
    }
    worst
}

fn op_cases() -> Vec<(&'static str, Vec<Vec<usize>>, OpFn)> {
    vec![
        ("matmul", vec![vec![3, 4], vec![4, 2]], |g, v| g.matmul(v[0], v[1])),
        ("add", vec![vec![3, 4], vec![3, 4]], |g, v| g.add(v[0], v[1])),
        ("add_row", vec![vec![3, 4], vec![4]], |g, v| g.add_row(v[0], v[1])),
        ("mul", vec![vec![3, 4], vec![3, 4]], |g, v| g.mul(v[0], v[1])),
        ("scale", vec![vec![2, 5]], |g, v| g.scale(v[0], 0.7)),
        ("mul_const", vec![vec![2, 2]], |g, v| g.mul_const(v[0], vec![2.0, 0.0, 2.0, 2.0])),
        ("sum", vec![vec![3, 3]], |g, v| g.sum(v[0])),
        ("transpose", vec![vec![2, 5]], |g, v| g.transpose(v[0])),
        ("slice_cols", vec![vec![3, 6]], |g, v| g.slice_cols(v[0], 1, 3)),
        ("concat_cols", vec![vec![3, 2], vec![3, 3]], |g, v| g.concat_cols(&[v[0], v[1]])),
        ("gather_rows", vec![vec![5, 3]], |g, v| g.gather_rows(v[0], &[3, 0, 3])),
        ("softmax", vec![vec![3, 4]], |g, v| g.softmax(v[0], 1)),
        ("softmax_axis0", vec![vec![3, 4]], |g, v| g.softmax(v[0], 0)),
        ("masked_softmax", vec![vec![3, 3]], |g, v| g.masked_softmax(v[0], &[true, false, true])),
        ("layer_norm", vec![vec![3, 5], vec![5], vec![5]], |g, v| g.layer_norm(v[0], v[1], v[2], 1e-12)),
        ("gelu", vec![vec![4, 4]], |g, v| g.gelu(v[0])),
        ("cross_entropy", vec![vec![4, 5]], |g, v| g.cross_entropy(v[0], &[1, IGNORE_INDEX, 4, 0])),
        ("multitask_loss", vec![vec![1, 3], vec![3, 5]], |g, v| {
            multitask_loss(g, v[0], Some(1), v[1], &[IGNORE_INDEX, 2, 4], 1.0, 1.0)
        }),
    ]
}

fn fd_model_config() -> ModelConfig {
    ModelConfig {
        vocab_size: 10,
        max_len: 8,
        d_model: 8,
        num_layers: 2,
        num_heads: 2,
        d_ff: 16,
        dropout_rate: 0.0,
        ..ModelConfig::desk_scale(10)
    }
}

struct FdInput {
    ids: Vec<usize>,
    mask: Vec<u8>,
    tags: Vec<usize>,
    label: usize,
    mlm_labels: Vec<usize>,
}

fn fd_inputs(rng: &mut ChaCha8Rng) -> Vec<FdInput> {
    (0..2)
        .map(|_| {
            let content = rng.random_range(2..=4);
            let mut ids = vec![CLS];
            ids.extend((0..content).map(|_| rng.random_range(5..10)));
            ids.push(SEP);
            let real = ids.len();
            ids.push(PAD);
            let mask = (0..ids.len()).map(|i| u8::from(i < real)).collect();
            let tags = (0..ids.len())
                .map(|i| if i == 0 || i + 1 >= real { IGNORE_INDEX } else { rng.random_range(0..5) })
                .collect();
            let mlm_labels = (0..ids.len())
                .map(|i| if i == 1 || i == 2 { rng.random_range(5..10) } else { IGNORE_INDEX })
                .collect();
            FdInput {
                ids,
                mask,
                tags,
                label: rng.random_range(0..3),
                mlm_labels,
            }
        })
        .collect()
}

fn model_loss(w: &ModelWeights, inputs: &[FdInput], mlm: bool, trainable: bool) -> (f64, Vec<Option<Vec<f64>>>) {
    let mut g = Graph::new();
    let bound = Bound::new(&mut g, w, trainable);
    let cfg = w.config();
    let mut terms = Vec::new();
    for x in inputs {
        if mlm {
            let m = forward_mlm(&mut g, &bound, cfg, &x.ids, &x.mask, &mut Dropout::Off).unwrap();
            terms.push(g.cross_entropy(m, &x.mlm_labels).unwrap());
        } else {
            let (s, l) = forward_multitask(&mut g, &bound, cfg, &x.ids, &x.mask, &mut Dropout::Off).unwrap();
            terms.push(multitask_loss(&mut g, s, Some(x.label), l, &x.tags, 1.0, 1.0).unwrap());
        }
    }
    let mut loss = terms[0];
    for &t in &terms[1..] {
        loss = g.add(loss, t).unwrap();
    }
    let value = g.value(loss).data()[0];
    if !trainable {
        return (value, Vec::new());
    }
    g.backward(loss).unwrap();
    (value, bound.vars().iter().map(|&v| g.grad(v).map(<[f64]>::to_vec)).collect())
}

fn model_error(seed: u64, mlm: bool) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = ModelWeights::zeros(fd_model_config()).unwrap();
    for p in w.params_mut() {
        p.value.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
    }
    let inputs = fd_inputs(&mut rng);
    let (_, grads) = model_loss(&w, &inputs, mlm, true);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for pi in 0..w.params().len() {
        for i in 0..w.params()[pi].value.numel() {
            let mut plus = w.clone();
            plus.params_mut()[pi].value.data_mut()[i] += FD_EPS;
            let mut minus = w.clone();
            minus.params_mut()[pi].value.data_mut()[i] -= FD_EPS;
            let numeric = (model_loss(&plus, &inputs, mlm, false).0 - model_loss(&minus, &inputs, mlm, false).0) / (2.0 * FD_EPS);
            let analytic = grads[pi].as_ref().map_or(0.0, |g| g[i]);
            worst = worst.max(rel_err(analytic, numeric));
            checked += 1;
        }
    }
    (worst, checked)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut worst_op = "";
    let cases = op_cases();
    for (name, shapes, f) in &cases {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inputs: Vec<Tensor> = shapes.iter().map(|s| uniform(&mut rng, s)).collect();
            let e = op_error(*f, &inputs, &mut rng);
            if e > worst {
                worst = e;
                worst_op = name;
            }
        }
    }
    let (mut model_worst, mut mlm_worst) = (0.0f64, 0.0f64);
    let mut checked = 0;
    for seed in 0..5 {
        let (e, n) = model_error(100 + seed, false);
        model_worst = model_worst.max(e);
        checked = n;
        mlm_worst = mlm_worst.max(model_error(100 + seed, true).0);
    }
    let elapsed = start.elapsed();
    ensure(
        worst < 1e-4 && model_worst < 1e-4 && mlm_worst < 1e-4 && elapsed < Duration::from_secs(60),
        format!(
            "{} ops x 5 seeds max rel err {worst:.2e} ({worst_op}); multi-task model ({checked} params) x 5 seeds max rel err {model_worst:.2e}; mlm model {mlm_worst:.2e}; {:.1}s",
            cases.len(),
            elapsed.as_secs_f64()
        ),
    )
}

// ---- 2: Adam -----------------------------------------------------------

fn criterion_2() -> Outcome {
    let theta0 = [1.0, -0.5, 2.0, 0.3, -1.5];
    let (lr, b1, b2, eps) = (0.1f64, 0.9f64, 0.999f64, 1e-8f64);
    let mut oracle = theta0;
    let (mut m, mut v) = ([0.0f64; 5], [0.0f64; 5]);
    let mut theta = theta0.to_vec();
    let mut state = AdamState::new(lr, &[5]);
    let mut max_dev: f64 = 0.0;
    for t in 1..=500 {
        let grad: Vec<f64> = theta.iter().map(|x| 2.0 * x).collect();
        state.step([(theta.as_mut_slice(), Some(grad.as_slice()))]).map_err(|e| e.to_string())?;
        if t <= 100 {
            for i in 0..5 {
                let g = 2.0 * oracle[i];
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let mh = m[i] / (1.0 - b1.powi(t));
                let vh = v[i] / (1.0 - b2.powi(t));
                oracle[i] -= lr * mh / (vh.sqrt() + eps);
                max_dev = max_dev.max((oracle[i] - theta[i]).abs());
            }
        }
    }
    let norm = theta.iter().map(|x| x * x).sum::<f64>().sqrt();
    ensure(
        max_dev <= 1e-10 && norm < 1e-2,
        format!("max deviation over 100 steps {max_dev:.2e}; |theta| after 500 steps {norm:.2e}"),
    )
}

// ---- 3: TF-IDF ---------------------------------------------------------

fn criterion_3() -> Outcome {
    let docs: Vec<Vec<String>> = [
        "the cat sat on the mat",
        "the dog ate the cat food",
        "the bueno dia amigo",
        "the yaar kya scene hai",
        "the cat cat cat",
        "the movie was bura",
        "the report is ready",
        "the dog the dog the dog",
        "the feliz feliz dia",
        "the end",
    ]
    .iter()
    .map(|d| d.split(' ').map(str::to_string).collect())
    .collect();
    let stats = TfidfStats::from_docs(docs.iter().map(Vec::as_slice));
    let n = docs.len() as f64;
    let mut max_dev: f64 = 0.0;
    let mut pairs = 0;
    for doc in &docs {
        for t in doc {
            let count = doc.iter().filter(|w| *w == t).count() as f64;
            let df = docs.iter().filter(|d| d.contains(t)).count() as f64;
            let want = count / doc.len() as f64 * (n / df).ln();
            let got = tfidf_score(t, doc, &stats).map_err(|e| e.to_string())?;
            max_dev = max_dev.max((got - want).abs());
            pairs += 1;
        }
    }
    let the_zero = docs.iter().all(|d| tfidf_score("the", d, &stats).is_ok_and(|s| s == 0.0));
    let records: Vec<TweetRecord> = docs
        .iter()
        .enumerate()
        .map(|(i, d)| TweetRecord::new(format!("d{i}"), d.clone(), vec![codemix::LangTag::En; d.len()], None).unwrap())
        .collect();
    let pruned = [f64::MIN_POSITIVE, 1e-9, 0.1]
        .iter()
        .all(|&floor| build_vocabulary(&records, 1024, floor).is_ok_and(|v| v.get("the").is_none()));
    ensure(
        max_dev <= 1e-12 && the_zero && pruned,
        format!("{pairs} (token, doc) pairs max deviation {max_dev:.1e}; 'the' scores 0: {the_zero}; pruned at floor > 0: {pruned}"),
    )
}

// ---- 4: metrics --------------------------------------------------------

fn criterion_4() -> Outcome {
    let hand = macro_f1(&confusion(&[0, 0, 1, 2], &[0, 1, 1, 1], 3).map_err(|e| e.to_string())?);
    let gold = [0, 1, 2, 0, 1, 2];
    let perfect = macro_f1(&confusion(&gold, &gold, 3).unwrap());
    let wrong: Vec<usize> = gold.iter().map(|g| (g + 1) % 3).collect();
    let all_wrong = macro_f1(&confusion(&gold, &wrong, 3).unwrap());
    ensure(
        (hand - 0.38889).abs() <= 1e-5 && perfect == 1.0 && all_wrong == 0.0,
        format!("hand-tallied {hand:.5}; perfect {perfect}; all wrong {all_wrong}"),
    )
}

// ---- 5: MLM pretraining ------------------------------------------------

fn desk_config(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        max_len: 16,
        dropout_rate: 0.0,
        seed: 7,
        ..ModelConfig::desk_scale(vocab_size)
    }
}

fn pretrain_cfg() -> TrainConfig {
    TrainConfig {
        epochs: 1000,
        batch_size: 16,
        seed: 7,
        mask_prob: 0.15,
        max_steps: Some(500),
        ..TrainConfig::default()
    }
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let corpus = generate_synthetic(&SyntheticSpec::with_default_lexicons(7, 500)).map_err(|e| e.to_string())?;
    let vocab = build_vocabulary(&corpus, 64, 0.0).map_err(|e| e.to_string())?;
    if vocab.len() != 64 {
        return Err(format!("vocabulary has {} entries, expected 64", vocab.len()));
    }
    let init = ModelWeights::init(desk_config(64)).map_err(|e| e.to_string())?;
    let out = pretrain_mlm(init, &corpus, &vocab, &pretrain_cfg()).map_err(|e| e.to_string())?;
    let ln_v = 64f64.ln();
    let initial = out.step_losses[0];
    let final_loss = out.history.last().map(|e| e.loss).unwrap_or(f64::NAN);
    let first_epoch = out.history[0].loss;
    let elapsed = start.elapsed();
    ensure(
        out.steps() == 500
            && (initial - ln_v).abs() <= 0.1 * ln_v
            && final_loss <= 0.6 * ln_v
            && final_loss < first_epoch
            && elapsed < Duration::from_secs(120),
        format!(
            "{} steps; initial {initial:.4} (ln 64 = {ln_v:.4}); final epoch {final_loss:.4} <= {:.4}; {:.1}s",
            out.steps(),
            0.6 * ln_v,
            elapsed.as_secs_f64()
        ),
    )
}

// ---- 6-8: fine-tuning --------------------------------------------------

struct FineTuneSetup {
    train: Vec<TweetRecord>,
    dev: Vec<TweetRecord>,
    vocab: Vocabulary,
    pretrained: ModelWeights,
}

fn finetune_setup() -> Result<FineTuneSetup, Error> {
    let all = generate_synthetic(&SyntheticSpec::with_default_lexicons(7, 1000))?;
    let (train, dev) = all.split_at(800);
    let vocab = build_vocabulary(train, 64, 0.0)?;
    let init = ModelWeights::init(desk_config(vocab.len()))?;
    let pretrained = pretrain_mlm(init, train, &vocab, &pretrain_cfg())?.weights;
    Ok(FineTuneSetup {
        train: train.to_vec(),
        dev: dev.to_vec(),
        vocab,
        pretrained,
    })
}

fn finetune_cfg(langid_weight: f64, steps: usize) -> TrainConfig {
    TrainConfig {
        epochs: 1000,
        batch_size: 16,
        seed: 7,
        langid_weight,
        max_steps: Some(steps),
        ..TrainConfig::default()
    }
}

fn criterion_6(s: &FineTuneSetup) -> Result<(Outcome, ModelWeights), String> {
    let start = Instant::now();
    let out = finetune_multitask(s.pretrained.clone(), &s.train, &s.vocab, &finetune_cfg(1.0, 300), Some(&s.dev))
        .map_err(|e| e.to_string())?;
    let report = evaluate(&out.weights, &s.dev, &s.vocab).map_err(|e| e.to_string())?;
    let lang = report.langid_accuracy.unwrap_or(0.0);
    let elapsed = start.elapsed();
    let outcome = ensure(
        out.steps() <= 300 && report.macro_f1 >= 0.95 && lang >= 0.95 && elapsed < Duration::from_secs(180),
        format!(
            "{} steps; dev macro-F1 {:.4}; token language-id accuracy {lang:.4}; {:.1}s",
            out.steps(),
            report.macro_f1,
            elapsed.as_secs_f64()
        ),
    );
    Ok((outcome, out.weights))
}

fn criterion_7(s: &FineTuneSetup, multitask: &ModelWeights) -> Outcome {
    let original = ModelWeights::init(desk_config(s.vocab.len())).map_err(|e| e.to_string())?;
    let single = finetune_multitask(s.pretrained.clone(), &s.train, &s.vocab, &finetune_cfg(0.0, 300), None)
        .map_err(|e| e.to_string())?
        .weights;
    let f1 = |w: &ModelWeights| evaluate(w, &s.dev, &s.vocab).map(|r| r.macro_f1).map_err(|e| e.to_string());
    let (a, b, c) = (f1(&original)?, f1(&single)?, f1(multitask)?);
    ensure(
        b >= a + 0.15 && c >= a + 0.15 && c >= b - 0.02,
        format!("original {a:.4}; single-task {b:.4}; multi-task {c:.4}; multi minus single {:+.4}", c - b),
    )
}

fn criterion_8(s: &FineTuneSetup) -> Outcome {
    let cfg = TrainConfig {
        freeze_groups: vec![ParamGroup::Embeddings, ParamGroup::EncoderLayers],
        ..finetune_cfg(1.0, 100)
    };
    let before = s.pretrained.clone();
    let out = finetune_multitask(before.clone(), &s.train, &s.vocab, &cfg, None).map_err(|e| e.to_string())?;
    let same = |g| before.group_bytes(g) == out.weights.group_bytes(g);
    let frozen_same = same(ParamGroup::Embeddings) && same(ParamGroup::EncoderLayers);
    let heads_differ = !same(ParamGroup::SentimentHead) && !same(ParamGroup::LangidHead);
    ensure(
        out.steps() == 100 && frozen_same && heads_differ,
        format!("{} steps; embeddings+encoder bytes identical: {frozen_same}; heads changed: {heads_differ}", out.steps()),
    )
}

// ---- 9: determinism ----------------------------------------------------

fn codemix(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_codemix"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("codemix {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
    }
}

fn pipeline(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let common = ["--seed", "7", "--max-len", "16", "--dropout", "0", "--epochs", "100"];
    codemix(dir, &["gen-synthetic", "--seed", "7", "--records", "400", "--split", "0.8,0.1,0.1", "--out", "data"])?;
    codemix(dir, &["build-vocab", "--input", "data/train.conll", "--max-size", "64", "--out", "vocab.txt"])?;
    let mut pre = vec!["pretrain", "--train", "data/train.conll", "--vocab", "vocab.txt", "--out", "pre.ckpt"];
    pre.extend(common);
    pre.extend(["--max-steps", "60", "--log", "train.log"]);
    codemix(dir, &pre)?;
    codemix(
        dir,
        &[
            "finetune", "--seed", "7", "--train", "data/train.conll", "--dev", "data/dev.conll", "--vocab", "vocab.txt",
            "--checkpoint", "pre.ckpt", "--max-steps", "60", "--log", "train.log", "--out", "ft.ckpt",
        ],
    )?;
    codemix(
        dir,
        &[
            "eval", "--data", "data/test.conll", "--vocab", "vocab.txt", "--checkpoint", "pre.ckpt", "--checkpoint",
            "ft.ckpt", "--json", "report.json", "--out", "report.txt",
        ],
    )?;
    let mut files = BTreeMap::new();
    for name in [
        "data/train.conll",
        "data/dev.conll",
        "data/test.conll",
        "vocab.txt",
        "pre.ckpt",
        "ft.ckpt",
        "train.log",
        "report.txt",
        "report.json",
    ] {
        files.insert(name.to_string(), std::fs::read(dir.join(name)).map_err(|e| format!("{name}: {e}"))?);
    }
    Ok(files)
}

fn criterion_9() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = pipeline(a.path())?;
    let second = pipeline(b.path())?;
    let differing: Vec<&String> = first.keys().filter(|k| first[*k] != second[*k]).collect();
    let bytes: usize = first.values().map(Vec::len).sum();
    ensure(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} artifacts ({bytes} bytes) byte-identical across two runs", first.len())
        } else {
            format!("artifacts differ: {differing:?}")
        },
    )
}

// ---- 10: preprocessing golden file --------------------------------------

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let raw = fixtures().join("tweets_raw.txt");
    let golden = std::fs::read(fixtures().join("tweets_golden.txt")).map_err(|e| e.to_string())?;
    let once = dir.path().join("once.txt");
    let twice = dir.path().join("twice.txt");
    codemix(dir.path(), &["preprocess", "--plain", "--input", raw.to_str().unwrap(), "--out", once.to_str().unwrap()])?;
    codemix(dir.path(), &["preprocess", "--plain", "--input", once.to_str().unwrap(), "--out", twice.to_str().unwrap()])?;
    let once = std::fs::read(once).unwrap();
    let twice = std::fs::read(twice).unwrap();
    let lines = std::fs::read_to_string(&raw).unwrap().lines().count();
    ensure(
        lines == 20 && once == golden && twice == once,
        format!("{lines}-line fixture matches golden: {}; idempotent: {}", once == golden, twice == once),
    )
}

// ---- 11: corpus round trip ----------------------------------------------

fn criterion_11() -> Outcome {
    let records = generate_synthetic(&SyntheticSpec::with_default_lexicons(11, 100)).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("corpus.conll");
    write_conll_file(&records, &path).map_err(|e| e.to_string())?;
    let parsed = read_conll_file(&path).map_err(|e| e.to_string())?;
    let rewritten = write_conll_string(&parsed).map_err(|e| e.to_string())?;
    let identity = parsed == records && rewritten.as_bytes() == std::fs::read(&path).unwrap();
    let mut lines = String::new();
    let mut all_lines = true;
    for (name, want) in [("malformed_tag.conll", 7), ("malformed_meta.conll", 5), ("malformed_arity.conll", 6)] {
        let text = std::fs::read_to_string(fixtures().join(name)).unwrap();
        let got = match parse_conll_str(&text) {
            Err(Error::Parse { line, .. }) => Some(line),
            _ => None,
        };
        all_lines &= got == Some(want);
        let _ = write!(lines, " {name}:{}", got.map_or("none".to_string(), |l| l.to_string()));
    }
    ensure(
        identity && all_lines,
        format!("100-record round trip identical: {identity}; error lines{lines}"),
    )
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut results: Vec<(usize, &str, Outcome)> = vec![
        (1, "gradient suite", criterion_1()),
        (2, "adam oracle", criterion_2()),
        (3, "tf-idf oracle", criterion_3()),
        (4, "metric oracle", criterion_4()),
        (5, "mlm pretraining", criterion_5()),
    ];
    match finetune_setup() {
        Ok(setup) => match criterion_6(&setup) {
            Ok((outcome, multitask)) => {
                results.push((6, "multi-task fine-tuning", outcome));
                results.push((7, "model ordering", criterion_7(&setup, &multitask)));
                results.push((8, "freezing contract", criterion_8(&setup)));
            }
            Err(e) => {
                for (n, name) in [(6, "multi-task fine-tuning"), (7, "model ordering"), (8, "freezing contract")] {
                    results.push((n, name, Err(e.clone())));
                }
            }
        },
        Err(e) => {
            for (n, name) in [(6, "multi-task fine-tuning"), (7, "model ordering"), (8, "freezing contract")] {
                results.push((n, name, Err(format!("setup failed: {e}"))));
            }
        }
    }
    results.push((9, "determinism", criterion_9()));
    results.push((10, "preprocessing golden file", criterion_10()));
    results.push((11, "corpus round trip", criterion_11()));

    let mut failed = 0;
    for (n, name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS [{n:>2}] {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{n:>2}] {name}: {detail}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.1}s",
        results.len() - failed,
        start.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
