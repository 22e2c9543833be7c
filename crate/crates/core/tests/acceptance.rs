//! Acceptance suite. Runs every criterion in order and prints one
//! `PASS`/`FAIL` line each; exits non-zero if a hard criterion fails.
//!
//! `cargo test -p ctxext-core --test acceptance -- 3 7` runs a subset.

use std::collections::HashMap;
use std::time::Instant;

use itertools::Itertools;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ctxext_core::chunking::plan_chunks;
use ctxext_core::dataset::Qrels;
use ctxext_core::encoder::{
    apply_rope, attention_score, encode, init_model, EmbeddingVector, Model, ModelConfig,
    PositionEmbeddingMatrix, PositionMode, RoPEFrequencies,
};
use ctxext_core::eval::{ndcg_at_10, run_benchmark, BenchmarkTask, Embedder, Metric, ModelEmbedder, Rankings};
use ctxext_core::position::{
    build_interpolated_matrix, plan_positions, resolve_ntk_lambda, resolve_se_params,
    self_extend_relpos, tabulated_extensions, ExtensionSpec, PositionPlan, Strategy, TableKind,
};
use ctxext_core::synth::{
    fact, fact_count, generate, name, name_count, training_triples, word_budget, SyntheticTaskConfig,
    TaskKind, TripleConfig,
};
use ctxext_core::tensor::Matrix;
use ctxext_core::tokenizer::{word_count, TokenSequence, Tokenizer};
use ctxext_core::tuner::{
    extend_table, grad_check, mask_gradient, train_contrastive, tune, tuning_loss_and_grad, GradCheckSample,
    TrainConfig, TrainingPair, TuneConfig, TuneMode,
};
use ctxext_core::Result;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------- 1

fn c1_self_extend_example() -> Outcome {
    let rel = |i: i64| -> Vec<i64> { (0..10).map(|j| self_extend_relpos(j, i, 2, 4)).collect() };
    let x0 = rel(0);
    let x4 = rel(4);
    let ok = x0 == [0, 1, 2, 3, 4, 4, 5, 5, 6, 6] && x4 == [-4, -3, -2, -1, 0, 1, 2, 3, 4, 4];
    outcome(ok, format!("x0={x0:?} x4={x4:?}"))
}

// ---------------------------------------------------------------- 2

fn c2_rope_relative_invariance() -> Outcome {
    // a(m, n) from absolute rotations of q and k, independent of the
    // relative-angle form used inside the encoder
    let absolute = |q: &[f64], k: &[f64], m: f64, n: f64, f: &RoPEFrequencies| -> f64 {
        let (rq, rk) = (apply_rope(q, m, f).unwrap(), apply_rope(k, n, f).unwrap());
        rq.iter().zip(&rk).map(|(a, b)| a * b).sum()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst, mut worst_form): (f64, f64) = (0.0, 0.0);
    for _ in 0..1000 {
        let d = 2 * rng.gen_range(1..=32);
        let freqs = RoPEFrequencies::new(d, 10_000.0).unwrap();
        let q: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let k: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let m = rng.gen_range(0..4096) as f64;
        let n = rng.gen_range(0..4096) as f64;
        let delta = rng.gen_range(-2048..2048) as f64;
        let a = absolute(&q, &k, m, n, &freqs);
        let b = absolute(&q, &k, m + delta, n + delta, &freqs);
        worst = worst.max((a - b).abs());
        worst_form = worst_form.max((a - attention_score(&q, &k, m, n, &freqs).unwrap()).abs());
    }
    outcome(
        worst < 1e-6 && worst_form < 1e-6,
        format!("1000 trials: max |a(m,n) - a(m+Δ,n+Δ)| = {worst:.2e}; relative form vs rotations {worst_form:.2e}"),
    )
}

// ---------------------------------------------------------------- 3

fn c3_pi_construction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut failures = Vec::new();
    for l_o in [4usize, 512] {
        let d = 16;
        let e_o = PositionEmbeddingMatrix::frozen(Matrix::uniform(l_o, d, 0.25, &mut rng));
        for s in [1usize, 2, 4, 8] {
            let e_t = build_interpolated_matrix(&e_o, s);
            if e_t.len() != l_o * s {
                failures.push(format!("L_o={l_o} s={s}: {} rows", e_t.len()));
                continue;
            }
            for i in 0..l_o {
                let anchor = e_t.row(i * s);
                if anchor.iter().zip(e_o.row(i)).any(|(a, b)| a.to_bits() != b.to_bits()) {
                    failures.push(format!("L_o={l_o} s={s}: anchor {i} not bitwise"));
                }
                for k in 1..s {
                    let t = k as f64 / s as f64;
                    let right = if i + 1 < l_o { e_o.row(i + 1) } else { e_o.row(i) };
                    for (c, &x) in e_t.row(i * s + k).iter().enumerate() {
                        let (a, b) = (e_o.row(i)[c], right[c]);
                        let expect = a + t * (b - a);
                        let inside = x >= a.min(b) - 1e-12 && x <= a.max(b) + 1e-12;
                        if (x - expect).abs() > 1e-12 || !inside {
                            failures.push(format!("L_o={l_o} s={s}: row {} col {c}", i * s + k));
                        }
                    }
                }
            }
            if s == 1 && e_t.matrix() != e_o.matrix() {
                failures.push(format!("L_o={l_o}: s=1 is not the identity"));
            }
        }
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            "anchors bitwise, intermediates convex (1e-12), s=1 identity; L_o∈{4,512}, s∈{1,2,4,8}".to_string()
        } else {
            failures.iter().take(5).join("; ")
        },
    )
}

// ---------------------------------------------------------------- 4

fn c4_table_values() -> Outcome {
    let lambdas: Vec<f64> = [2, 4, 8].iter().map(|&s| resolve_ntk_lambda(s)).collect();
    let se_a = resolve_se_params(512, 4096).unwrap();
    let se_b = resolve_se_params(4096, 32768).unwrap();
    let ok = lambdas == [3.0, 5.0, 10.0] && se_a == (9, 64) && se_b == (9, 512);
    outcome(
        ok,
        format!("λ(2,4,8)={lambdas:?}; (512,4096)→{se_a:?}; (4096,32768)→{se_b:?}"),
    )
}

// ---------------------------------------------------------------- 5

/// Checks one plan; returns a description of the first violation.
fn plan_violation(plan: &PositionPlan, l_o: usize, s: usize) -> Option<String> {
    match plan {
        PositionPlan::Absolute { table, rows } => {
            let bad = match table {
                TableKind::Original => rows.iter().find(|&&r| r >= l_o),
                TableKind::Interpolated => rows.iter().find(|&&r| r >= l_o * s),
                TableKind::Extended => None,
            };
            bad.map(|r| format!("absolute row {r} out of range"))
        }
        // NTK keeps raw phases; its range is checked on effective positions
        PositionPlan::Rotary { ntk_lambda: Some(_), .. } => None,
        PositionPlan::Rotary { phases, .. } => {
            let (lo, hi) = phases
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &p| (a.min(p), b.max(p)));
            // integer phases: span < L_o is span <= L_o - 1
            (lo < 0.0 || hi - lo >= l_o as f64).then(|| format!("rotary phases span [{lo}, {hi}]"))
        }
        PositionPlan::SelfExtend { group, window, len } => {
            let max = (-(*len as i64 - 1)..*len as i64)
                .map(|delta| self_extend_relpos(delta, 0, *group, *window).abs())
                .max()
                .unwrap_or(0);
            (max > l_o as i64 - 1).then(|| format!("SE |relpos| up to {max}"))
        }
        PositionPlan::Chunked { chunks } => chunks
            .chunks()
            .iter()
            .find(|(a, b)| b - a > l_o)
            .map(|c| format!("chunk {c:?} longer than L_o")),
    }
}

fn c5_range_safety() -> Outcome {
    let mut failures = Vec::new();
    let mut checked = 0usize;
    for (l_o, l_t) in tabulated_extensions() {
        let s = l_t.div_ceil(l_o);
        for mode in [PositionMode::Absolute, PositionMode::Rotary] {
            for st in [Strategy::Pcw, Strategy::Gp, Strategy::Rp, Strategy::Pi, Strategy::Ntk, Strategy::Se] {
                if !st.supports(mode) {
                    continue;
                }
                let spec = ExtensionSpec::new(st, l_o, l_t).unwrap();
                for len in [1, l_o, l_o + 1, l_t] {
                    let plan = plan_positions(&spec, mode, len).unwrap();
                    checked += 1;
                    if let Some(v) = plan_violation(&plan, l_o, s) {
                        failures.push(format!("{st}/{mode} ({l_o},{l_t}) len {len}: {v}"));
                    }
                }
                if st == Strategy::Ntk {
                    // lowest-frequency rotation of the farthest pair must stay
                    // within what the model saw at L_o
                    let lambda = spec.ntk_lambda().unwrap();
                    for head_dim in [64usize, 128] {
                        let ratio = lambda.powf(-((head_dim - 2) as f64) / head_dim as f64);
                        let eff = (l_t - 1) as f64 * ratio;
                        if eff > (l_o - 1) as f64 {
                            failures.push(format!("ntk ({l_o},{l_t}) d={head_dim}: effective {eff:.1}"));
                        }
                    }
                }
            }
        }
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{checked} plans over the tabulated grid, all in range")
        } else {
            failures.iter().take(5).join("; ")
        },
    )
}

// ---------------------------------------------------------------- 6

fn c6_pcw() -> Outcome {
    let mut failures = Vec::new();
    for mode in [PositionMode::Absolute, PositionMode::Rotary] {
        let cfg = ModelConfig::new(16, 2, 2, 24, mode).with_seed(6).with_vocab_size(97);
        let model = init_model(&cfg).unwrap();
        let pcw = ExtensionSpec::new(Strategy::Pcw, 24, 96).unwrap();
        let none = ExtensionSpec::none(24).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for len in 1..=24 {
            let t = TokenSequence::new((0..len).map(|_| rng.gen_range(0..97)).collect()).unwrap();
            let a = encode(&model, &t, &pcw).unwrap();
            let b = encode(&model, &t, &none).unwrap();
            if a.as_slice().iter().zip(b.as_slice()).any(|(x, y)| x.to_bits() != y.to_bits()) {
                failures.push(format!("{mode} len {len} not bitwise"));
            }
        }
    }
    for len in 513..=4096usize {
        let plan = plan_chunks(len, 512);
        let c = plan.chunks();
        let ok = c.len() == len.div_ceil(512)
            && c.iter().all(|(a, b)| b - a == 512)
            && c[..c.len() - 1].iter().enumerate().all(|(i, &(a, _))| a == i * 512)
            && c.last().unwrap().1 == len;
        if !ok {
            failures.push(format!("plan for {len}: {c:?}"));
        }
    }
    let example = plan_chunks(1000, 512);
    if example.chunks() != [(0, 512), (488, 1000)] {
        failures.push(format!("(1000,512) → {:?}", example.chunks()));
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            "bitwise single-chunk equivalence (len ≤ L_o, both modes); plans 513..=4096 ok; (1000,512) → [(0,512),(488,1000)]".to_string()
        } else {
            failures.iter().take(5).join("; ")
        },
    )
}

// ---------------------------------------------------------------- 7

fn oracle_dcg(gains: &[u32]) -> f64 {
    let mut total = 0.0;
    for (rank, &g) in gains.iter().enumerate().take(10) {
        total += (2f64.powi(g as i32) - 1.0) / (rank as f64 + 2.0).log2();
    }
    total
}

fn c7_ndcg_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    let mut rankings_checked = 0usize;
    for n in 1..=8usize {
        for _ in 0..3 {
            let rels: Vec<u32> = (0..n).map(|_| rng.gen_range(0..4)).collect();
            if rels.iter().all(|&r| r == 0) {
                continue;
            }
            let ids: Vec<String> = (0..n).map(|i| format!("d{i}")).collect();
            let mut qrels = Qrels::new();
            for (id, &r) in ids.iter().zip(&rels) {
                qrels.entry("q".into()).or_default().insert(id.clone(), r);
            }
            let perms: Vec<Vec<usize>> = (0..n).permutations(n).collect();
            let ideal = perms
                .iter()
                .map(|p| oracle_dcg(&p.iter().map(|&i| rels[i]).collect::<Vec<_>>()))
                .fold(0.0, f64::max);
            for p in &perms {
                let expect = oracle_dcg(&p.iter().map(|&i| rels[i]).collect::<Vec<_>>()) / ideal;
                let ranking = Rankings::from([("q".to_string(), p.iter().map(|&i| ids[i].clone()).collect())]);
                let got = ndcg_at_10(&ranking, &qrels).unwrap().score;
                worst = worst.max((got - expect).abs());
                rankings_checked += 1;
            }
        }
    }
    let mut qrels = Qrels::new();
    qrels.entry("q".into()).or_default().insert("x".into(), 1);
    let spot = ndcg_at_10(
        &Rankings::from([("q".to_string(), vec!["a".into(), "b".into(), "x".into()])]),
        &qrels,
    )
    .unwrap()
    .score;
    outcome(
        worst <= 1e-9 && (spot - 0.5).abs() <= 1e-12,
        format!("{rankings_checked} rankings, max deviation {worst:.1e}; rank-3 single relevant = {spot}"),
    )
}

// ---------------------------------------------------------------- 8

/// Embeds a text as the one-hot vector of the key it mentions.
struct KeyOracle {
    kind: TaskKind,
    names: HashMap<String, usize>,
}

impl KeyOracle {
    fn new(kind: TaskKind) -> Self {
        Self {
            kind,
            names: (0..name_count()).map(|i| (name(i), i)).collect(),
        }
    }

    fn key(&self, text: &str) -> Option<usize> {
        match self.kind {
            TaskKind::Passkey => {
                let at = text.find("'s passkey")?;
                let words: Vec<&str> = text[..at].split_whitespace().collect();
                let person = words[words.len().checked_sub(2)?..].join(" ");
                self.names.get(&person).copied()
            }
            TaskKind::Needle => (0..fact_count()).find(|&i| {
                let f = fact(i);
                text.contains(&f.sentence) || text == f.question
            }),
        }
    }
}

impl Embedder for KeyOracle {
    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        let dim = match self.kind {
            TaskKind::Passkey => name_count(),
            TaskKind::Needle => fact_count(),
        } + 1;
        let mut v = vec![0.0; dim];
        v[self.key(text).unwrap_or(dim - 1)] = 1.0;
        EmbeddingVector::normalized(v)
    }
}

fn c8_generator_contract() -> Outcome {
    let mut failures = Vec::new();
    let mut summary = Vec::new();
    for kind in [TaskKind::Passkey, TaskKind::Needle] {
        let buckets = generate(&SyntheticTaskConfig::new(kind, 8)).unwrap();
        let oracle = KeyOracle::new(kind);
        let mut tasks = Vec::new();
        for b in buckets {
            let budget = word_budget(b.length);
            if let Some(d) = b.task.documents.iter().find(|d| word_count(&d.text) > budget) {
                failures.push(format!("{kind} {}: {} over budget", b.length, d.id));
            }
            if b.task.queries.len() != 50 || b.task.documents.len() != 100 {
                failures.push(format!("{kind} {}: wrong counts", b.length));
            }
            tasks.push(BenchmarkTask {
                name: format!("{kind}-{}", b.length),
                metric: Metric::AccAt1,
                length: Some(b.length),
                task: b.task,
            });
        }
        let report = run_benchmark(&oracle, &tasks).unwrap();
        for t in &report.tasks {
            if t.score != 1.0 {
                failures.push(format!("{}: Acc@1 {}", t.name, t.score));
            }
        }
        summary.push(format!("{kind} {} buckets", report.tasks.len()));
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{}; budgets respected; oracle Acc@1 = 1.0 everywhere", summary.join(", "))
        } else {
            failures.iter().take(5).join("; ")
        },
    )
}

// ---------------------------------------------------------------- 9

fn random_pair(rng: &mut ChaCha8Rng, vocab: usize, max_len: usize, negatives: usize) -> TrainingPair {
    let seq = |rng: &mut ChaCha8Rng| {
        let len = rng.gen_range(2..=max_len);
        TokenSequence::new((0..len).map(|_| rng.gen_range(0..vocab)).collect()).unwrap()
    };
    TrainingPair {
        query: seq(rng),
        positive: seq(rng),
        negatives: (0..negatives).map(|_| seq(rng)).collect(),
    }
}

fn c9_tuning_preservation() -> Outcome {
    let (l_o, l_t, vocab) = (16, 64, 200);
    let cfg = ModelConfig::new(32, 2, 4, l_o, PositionMode::Absolute)
        .with_seed(9)
        .with_vocab_size(vocab);
    let base = init_model(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let pairs: Vec<TrainingPair> = (0..200).map(|_| random_pair(&mut rng, vocab, l_o, 3)).collect();
    let probes: Vec<TokenSequence> = (1..=l_o)
        .map(|len| TokenSequence::new((0..len).map(|_| rng.gen_range(0..vocab)).collect()).unwrap())
        .collect();
    let mut failures = Vec::new();
    let mut steps = Vec::new();
    for (mode, strategy) in [(TuneMode::PiAnchored, Strategy::TunedPi), (TuneMode::RpSuffix, Strategy::TunedRp)] {
        let config = TuneConfig {
            batch_size: 4,
            epochs: 1,
            warmup_steps: 5,
            learning_rate: 1e-3,
            seed: 9,
            ..TuneConfig::new(mode, l_o, l_t)
        };
        let start = extend_table(&base, mode, l_t).unwrap();
        let tuned = tune(&base, &pairs, &config).unwrap();
        steps.push(tuned.log.entries.len());
        let model = &tuned.model;
        let ext = &model.extended_table().unwrap().table;
        if tuned.log.entries.len() < 50 {
            failures.push(format!("{mode}: only {} steps", tuned.log.entries.len()));
        }
        for r in 0..ext.len() {
            let same = ext.row(r).iter().zip(start.table.row(r)).all(|(a, b)| a.to_bits() == b.to_bits());
            if ext.is_frozen(r) && !same {
                failures.push(format!("{mode}: frozen row {r} changed"));
            }
        }
        if ext.learnable_rows().all(|r| ext.row(r) == start.table.row(r)) {
            failures.push(format!("{mode}: no learnable row moved"));
        }
        for ((n1, a), (n2, b)) in base.named_tensors().iter().zip(model.named_tensors()) {
            if n1 != &n2 || a.iter().zip(b).any(|(x, y)| x.to_bits() != y.to_bits()) {
                failures.push(format!("{mode}: tensor {n1} changed"));
            }
        }
        if mode == TuneMode::PiAnchored {
            let tuned_spec = ExtensionSpec::new(strategy, l_o, l_t).unwrap();
            let none = ExtensionSpec::none(l_o).unwrap();
            for p in &probes {
                let a = encode(model, p, &tuned_spec).unwrap();
                let b = encode(&base, p, &none).unwrap();
                if a.as_slice().iter().zip(b.as_slice()).any(|(x, y)| x.to_bits() != y.to_bits()) {
                    failures.push(format!("embedding of a {}-token input changed", p.len()));
                }
            }
        }
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!(
                "steps {steps:?}; frozen rows and all non-position weights bitwise equal; inputs ≤ L_o embed identically"
            )
        } else {
            failures.iter().take(5).join("; ")
        },
    )
}

// ---------------------------------------------------------------- 10

fn c10_gradient_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for trial in 0..10u64 {
        let mode = if trial % 2 == 0 { TuneMode::PiAnchored } else { TuneMode::RpSuffix };
        let (l_o, l_t, vocab) = (8, 32, 50);
        let cfg = ModelConfig::new(16, 2, 2, l_o, PositionMode::Absolute)
            .with_seed(100 + trial)
            .with_vocab_size(vocab);
        let mut model = init_model(&cfg).unwrap();
        model.install_extended_table(extend_table(&model, mode, l_t).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let pair = random_pair(&mut rng, vocab, l_o, 3);
        let offsets: Vec<usize> = (0..4).map(|_| rng.gen_range(0..=l_t - l_o)).collect();
        for tau in [0.05, 0.1] {
            let sample = GradCheckSample {
                pair: pair.clone(),
                offsets: offsets.clone(),
                temperature: tau,
            };
            let err = grad_check(&model, &sample, 1e-4).unwrap();
            worst = worst.max(err);
            let (_, mut g) = tuning_loss_and_grad(&model, &pair, &offsets, tau).unwrap();
            let table = &model.extended_table().unwrap().table;
            mask_gradient(&mut g, table);
            if (0..table.len()).any(|r| table.is_frozen(r) && g.row(r).iter().any(|&x| x != 0.0)) {
                failures.push(format!("trial {trial}: frozen gradient not zero"));
            }
        }
    }
    if worst >= 1e-4 {
        failures.push(format!("max relative error {worst:.2e}"));
    }
    outcome(
        failures.is_empty(),
        format!("10 trials × τ∈{{0.05,0.1}}, ε=1e-4: max relative error {worst:.2e}{}", if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) }),
    )
}

// ---------------------------------------------------------------- 11, 12

const TOY_L_O: usize = 128;
const TOY_L_T: usize = 512;
const TOY_VOCAB: usize = 4096;
const SEEDS: [u64; 3] = [1, 2, 3];

fn passkey_pairs(seed: u64, count: usize) -> Vec<TrainingPair> {
    let triples = training_triples(
        &TripleConfig {
            kind: TaskKind::Passkey,
            count,
            min_words: 16,
            max_words: 120,
            negatives: 3,
            seed,
        },
        None,
    )
    .unwrap();
    let tok = Tokenizer::new(TOY_VOCAB).unwrap();
    triples.iter().map(|t| t.tokenize(&tok, TOY_L_O).unwrap()).collect()
}

/// The absolute model learns its position table from scratch and gets a
/// second epoch; the rotary one has no position weights.
fn toy_model(mode: PositionMode, seed: u64) -> Model {
    let epochs = match mode {
        PositionMode::Absolute => 2,
        PositionMode::Rotary => 1,
    };
    let cfg = ModelConfig::new(64, 2, 4, TOY_L_O, mode)
        .with_seed(seed)
        .with_vocab_size(TOY_VOCAB);
    let config = TrainConfig {
        learning_rate: 3e-4,
        batch_size: 16,
        epochs,
        warmup_steps: 10,
        temperature: 0.05,
        seed,
        max_steps: None,
        in_batch_negatives: true,
    };
    train_contrastive(&init_model(&cfg).unwrap(), &passkey_pairs(seed, 1600), &config)
        .unwrap()
        .0
}

fn toy_tune(model: &Model, mode: TuneMode, seed: u64) -> Model {
    let config = TuneConfig {
        batch_size: 16,
        epochs: 1,
        warmup_steps: 5,
        learning_rate: 1e-3,
        temperature: 0.05,
        seed,
        ..TuneConfig::new(mode, TOY_L_O, TOY_L_T)
    };
    tune(model, &passkey_pairs(seed + 7, 400), &config).unwrap().model
}

fn passkey_buckets(seed: u64) -> Vec<BenchmarkTask> {
    let cfg = SyntheticTaskConfig {
        length_grid: vec![256, 512],
        ..SyntheticTaskConfig::new(TaskKind::Passkey, seed)
    };
    generate(&cfg)
        .unwrap()
        .into_iter()
        .map(|b| BenchmarkTask {
            name: format!("passkey-{}", b.length),
            metric: Metric::AccAt1,
            length: Some(b.length),
            task: b.task,
        })
        .collect()
}

fn scores(model: &Model, spec: ExtensionSpec, truncate: bool, tasks: &[BenchmarkTask]) -> Vec<f64> {
    let mut e = ModelEmbedder::new(model, spec).unwrap();
    if truncate {
        e = e.with_truncation(TOY_L_O);
    }
    run_benchmark(&e, tasks).unwrap().tasks.iter().map(|t| t.score).collect()
}

fn fmt_scores(s: &[f64]) -> String {
    s.iter().map(|x| format!("{x:.2}")).join("/")
}

struct ToyResults {
    c11: Outcome,
    c12: Outcome,
}

fn c11_c12_toy_models() -> ToyResults {
    let mut c11_ok = true;
    let mut c11_lines = Vec::new();
    let mut c12_wins = 0;
    let mut c12_lines = Vec::new();
    for seed in SEEDS {
        let tasks = passkey_buckets(100 + seed);
        let baseline_spec = ExtensionSpec::none(TOY_L_O).unwrap();

        let ape = toy_model(PositionMode::Absolute, seed);
        let base = scores(&ape, baseline_spec.clone(), true, &tasks);
        let pi_model = toy_tune(&ape, TuneMode::PiAnchored, seed);
        let pi = scores(&pi_model, ExtensionSpec::new(Strategy::TunedPi, TOY_L_O, TOY_L_T).unwrap(), false, &tasks);
        let rp_model = toy_tune(&ape, TuneMode::RpSuffix, seed);
        let rp = scores(&rp_model, ExtensionSpec::new(Strategy::TunedRp, TOY_L_O, TOY_L_T).unwrap(), false, &tasks);

        let rope = toy_model(PositionMode::Rotary, seed);
        let rbase = scores(&rope, baseline_spec, true, &tasks);
        let ntk = scores(&rope, ExtensionSpec::new(Strategy::Ntk, TOY_L_O, TOY_L_T).unwrap(), false, &tasks);
        let se = scores(&rope, ExtensionSpec::new(Strategy::Se, TOY_L_O, TOY_L_T).unwrap(), false, &tasks);

        let beats = |ext: &[f64], b: &[f64]| ext.iter().zip(b).all(|(e, b)| e > b);
        let ok = beats(&pi, &base) && beats(&ntk, &rbase) && beats(&se, &rbase);
        c11_ok &= ok;
        c11_lines.push(format!(
            "seed {seed}: ape trunc {} < pi-tuned {}; rope trunc {} < ntk {}, se {}{}",
            fmt_scores(&base),
            fmt_scores(&pi),
            fmt_scores(&rbase),
            fmt_scores(&ntk),
            fmt_scores(&se),
            if ok { "" } else { " (NOT all greater)" }
        ));

        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        let (pm, rm) = (mean(&pi), mean(&rp));
        if pm >= rm {
            c12_wins += 1;
        }
        c12_lines.push(format!("seed {seed}: pi {pm:.3} vs rp {rm:.3}"));
    }
    ToyResults {
        c11: outcome(c11_ok, format!("buckets 256/512: {}", c11_lines.join(" | "))),
        c12: outcome(c12_wins >= 2, format!("{c12_wins}/3 seeds pi ≥ rp: {}", c12_lines.join(" | "))),
    }
}

// ---------------------------------------------------------------- harness

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let run = |id: u32| wanted.is_empty() || wanted.contains(&id);
    let mut hard_failures = Vec::new();
    let mut line = |id: u32, name: &str, soft: bool, secs: f64, o: Outcome| {
        let status = match (o.pass, soft) {
            (true, _) => "PASS",
            (false, false) => "FAIL",
            (false, true) => "FAIL (soft, reported as a finding)",
        };
        println!("criterion {id:>2} [{status}] {name} ({secs:.1}s): {}", o.detail);
        if !o.pass && !soft {
            hard_failures.push(id);
        }
    };

    type Check = fn() -> Outcome;
    let checks: [(u32, &str, Check); 10] = [
        (1, "SelfExtend worked example", c1_self_extend_example),
        (2, "RoPE relative invariance", c2_rope_relative_invariance),
        (3, "PI construction", c3_pi_construction),
        (4, "tabulated NTK/SE parameters", c4_table_values),
        (5, "range safety", c5_range_safety),
        (6, "parallel context windows", c6_pcw),
        (7, "nDCG@10 oracle", c7_ndcg_oracle),
        (8, "generator contract", c8_generator_contract),
        (9, "tuning preservation", c9_tuning_preservation),
        (10, "gradient oracle", c10_gradient_oracle),
    ];
    for (id, name, check) in checks {
        if run(id) {
            let t = Instant::now();
            let o = check();
            line(id, name, false, t.elapsed().as_secs_f64(), o);
        }
    }
    if run(11) || run(12) {
        let t = Instant::now();
        let r = c11_c12_toy_models();
        let secs = t.elapsed().as_secs_f64();
        if run(11) {
            line(11, "directional extension benefit", false, secs, r.c11);
        }
        if run(12) {
            line(12, "PI-anchored vs RP-suffix tuning", true, secs, r.c12);
        }
    }
    if !hard_failures.is_empty() {
        println!("acceptance: hard criteria failed: {hard_failures:?}");
        std::process::exit(1);
    }
    println!("acceptance: all hard criteria passed");
}
