use std::collections::{HashMap, HashSet};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::run::{expand_rows, make_batches, step_gradients, target_embeddings, Row};
use super::*;
use crate::data::{PairedExample, Task};
use crate::error::Error;
use crate::model::{MatryoshkaDims, ModelConfig, SpeechTextModel};
use crate::numeric::{grad_check, Matrix, Params};

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn unit_rows(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    crate::numeric::l2_normalize_rows(&random_matrix(rows, cols, rng)).matrix
}

fn tiny_config(seed: u64) -> ModelConfig {
    ModelConfig {
        vocab_size: 12,
        hidden: 8,
        d_max: 8,
        dims: MatryoshkaDims::new(vec![4, 8]).unwrap(),
        layers: 1,
        heads: 2,
        ff_hidden: 8,
        max_len: 8,
        frame_dim: 3,
        layer_count: 1,
        conv_kernel: 3,
        conv_stride: 2,
        conv_channels: 4,
        init_seed: seed,
    }
}

fn example(id: u64, query: Vec<u32>, frames: Matrix, document: Vec<u32>) -> PairedExample {
    PairedExample {
        id,
        topic: 0,
        transcription: query.clone(),
        query,
        frames,
        translation: None,
        document,
        doc_id: id,
        task: Task::DocumentRetrieval,
        grade: 1,
        intent: None,
        duration_s: 1.0,
        quality_score: 4.0,
    }
}

fn toy_examples(n: usize, rng: &mut ChaCha8Rng) -> Vec<PairedExample> {
    (0..n)
        .map(|i| {
            let q: Vec<u32> = (0..3).map(|_| rng.random_range(3..12)).collect();
            let d: Vec<u32> = (0..4).map(|_| rng.random_range(3..12)).collect();
            let s = rng.random_range(3..7);
            example(i as u64, q, random_matrix(s, 3, rng), d)
        })
        .collect()
}

#[test]
fn info_nce_gradients() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Params::new();
        p.insert("q", unit_rows(4, 8, &mut rng));
        p.insert("d", unit_rows(4, 8, &mut rng));
        let err = grad_check(
            |p| {
                let l = info_nce(p.require("q")?, p.require("d")?, 0.5)?;
                Ok((l.loss, [("q".to_string(), l.grad_q), ("d".to_string(), l.grad_d)].into_iter().collect()))
            },
            &p,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

fn mrl_check(normalize: bool, temperature: f64) {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut cfg = LossConfig::retrieval(MatryoshkaDims::new(vec![2, 4, 8]).unwrap());
        cfg.normalize_prefix = normalize;
        cfg.temperature = temperature;
        let mut p = Params::new();
        p.insert("q", unit_rows(5, 8, &mut rng));
        p.insert("d", unit_rows(5, 8, &mut rng));
        let err = grad_check(
            |p| {
                let l = mrl_loss(p.require("q")?, p.require("d")?, &cfg)?;
                Ok((l.loss, [("q".to_string(), l.grad_q), ("d".to_string(), l.grad_d)].into_iter().collect()))
            },
            &p,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn mrl_gradients_normalized_prefix() {
    mrl_check(true, 0.5);
}

#[test]
fn mrl_gradients_raw_prefix() {
    mrl_check(false, 0.5);
}

#[test]
fn alignment_gradients() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let mut p = Params::new();
        p.insert("s", random_matrix(4, 6, &mut rng));
        p.insert("t", random_matrix(4, 6, &mut rng));
        let err = grad_check(
            |p| {
                let l = query_alignment_loss(p.require("s")?, p.require("t")?)?;
                Ok((l.loss, [("s".to_string(), l.grad_q), ("t".to_string(), l.grad_d)].into_iter().collect()))
            },
            &p,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn mrl_terms_add_up() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let q = unit_rows(6, 64, &mut rng);
    let d = unit_rows(6, 64, &mut rng);
    let full = LossConfig::retrieval(MatryoshkaDims::new(vec![64]).unwrap());
    let single = mrl_loss(&q, &d, &full).unwrap();
    let direct = info_nce(&q, &d, 0.05).unwrap();
    assert_eq!(single.loss, direct.loss);

    let cfg = LossConfig::retrieval(MatryoshkaDims::new(vec![8, 16, 32, 64]).unwrap());
    let l = mrl_loss(&q, &d, &cfg).unwrap();
    let mut reference = 0.0;
    let mut worst: f64 = 0.0;
    for m in [8, 16, 32, 64] {
        let qn = crate::numeric::l2_normalize_rows(&q.prefix_cols(m).unwrap()).matrix;
        let dn = crate::numeric::l2_normalize_rows(&d.prefix_cols(m).unwrap()).matrix;
        let t = info_nce(&qn, &dn, 0.05).unwrap().loss;
        reference += t;
        worst = worst.max(t);
    }
    assert!((l.loss - reference).abs() < 1e-12);
    let per: f64 = l.per_dim.iter().map(|(_, v)| v).sum();
    assert!((l.loss - per).abs() < 1e-12);
    assert!(l.loss >= worst);
}

#[test]
fn end_to_end_encoder_gradients() {
    for variant in Variant::ALL {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
            let cfg = tiny_config(seed);
            let model = SpeechTextModel::new(cfg.clone()).unwrap();
            let mut params = model.params().clone();
            // start from generic weights rather than zero biases and query
            for (name, m) in params.iter_mut() {
                if name.ends_with(".b1") || name.ends_with(".b2") || name.contains("conv.b") || name.ends_with("pool.q") {
                    for v in m.data_mut() {
                        *v = rng.random_range(-0.5..0.5);
                    }
                }
            }
            let model = SpeechTextModel::from_params(cfg.clone(), params).unwrap();
            let data = toy_examples(3, &mut rng);
            let tasks = [Task::DocumentRetrieval];
            let rows: Vec<Row> = expand_rows(variant, &data, &tasks);
            let targets = if variant.is_speech() {
                target_embeddings(&model, variant, &data, &rows, 8).unwrap()
            } else {
                HashMap::new()
            };
            let mut loss = LossConfig::retrieval(cfg.dims.clone());
            loss.temperature = 0.5;
            loss.objective = variant.objective();
            let prefixes = variant.default_trainable();
            let trainable = move |n: &str| prefixes.iter().any(|p| n.starts_with(p));
            let subset = model.params().filtered(trainable);
            let err = grad_check(
                |sub: &Params| {
                    let mut all = model.params().clone();
                    for (name, v) in sub.iter() {
                        all.insert(name.clone(), v.clone());
                    }
                    let m = SpeechTextModel::from_params(cfg.clone(), all)?;
                    let (bl, g) = step_gradients(&m, variant, &data, &rows, &targets, &loss, 8, &trainable)?;
                    let mut g = g.filtered(trainable);
                    for (name, p) in sub.iter() {
                        if g.get(name).is_none() {
                            g.insert(name.clone(), Matrix::zeros(p.rows(), p.cols()));
                        }
                    }
                    Ok((bl.total, g))
                },
                &subset,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "{} seed {seed}: {err}", variant.name());
        }
    }
}

#[test]
fn sampler_keeps_targets_and_examples_unique() {
    let rows: Vec<Row> = (0..60)
        .map(|i| Row {
            example: i % 20,
            task: Task::ALL[i / 20],
            target: (i % 7) as u64,
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let batches = make_batches(&rows, 5, &mut rng);
    let mut seen = Vec::new();
    for b in &batches {
        assert!(!b.is_empty() && b.len() <= 5);
        let t: HashSet<u64> = b.iter().map(|r| r.target).collect();
        let e: HashSet<usize> = b.iter().map(|r| r.example).collect();
        assert_eq!(t.len(), b.len());
        assert_eq!(e.len(), b.len());
        seen.extend(b.iter().map(|r| (r.example, r.task)));
    }
    seen.sort_by_key(|&(e, t)| (e, t as u8));
    let mut all: Vec<_> = rows.iter().map(|r| (r.example, r.task)).collect();
    all.sort_by_key(|&(e, t)| (e, t as u8));
    assert_eq!(seen, all);
}

fn separable_data() -> Vec<PairedExample> {
    let lex = crate::data::Lexicon::new(&crate::data::WorldConfig::default()).unwrap();
    let cfg = crate::data::CorpusConfig { examples_per_topic: 4, ..Default::default() };
    crate::data::gen_corpus(&lex, &cfg, 2).unwrap().examples
}

#[test]
fn late_fusion_freezes_text_and_learns() {
    let data = separable_data();
    let mut model = SpeechTextModel::new(ModelConfig::default()).unwrap();
    let text_before = model.params().filtered(|n| n.starts_with("text.")).to_bytes();
    let dual_before = model.params().filtered(|n| n.starts_with("dual.")).to_bytes();
    let lf_before = model.params().filtered(|n| n.starts_with("lf.")).to_bytes();
    let run = TrainRunConfig { epochs: 3, tasks: vec![Task::DocumentRetrieval], ..Default::default() };
    let loss = LossConfig::retrieval(model.config().dims.clone());
    let initial = evaluate_loss(&model, Variant::LateFusion, &data, &run, &loss).unwrap();
    let curve = train(&mut model, Variant::LateFusion, &data, &run, &loss).unwrap();
    assert!(!curve.is_empty());
    let last = evaluate_loss(&model, Variant::LateFusion, &data, &run, &loss).unwrap();
    assert!(last < initial, "{initial} -> {last}");
    assert_eq!(model.params().filtered(|n| n.starts_with("text.")).to_bytes(), text_before);
    assert_eq!(model.params().filtered(|n| n.starts_with("dual.")).to_bytes(), dual_before);
    assert_ne!(model.params().filtered(|n| n.starts_with("lf.")).to_bytes(), lf_before);
}

#[test]
fn zero_learning_rate_and_determinism() {
    let data = separable_data();
    let base = SpeechTextModel::new(ModelConfig::default()).unwrap();
    let loss = LossConfig::retrieval(base.config().dims.clone());
    let mut frozen = base.clone();
    let run0 = TrainRunConfig { learning_rate: 0.0, ..Default::default() };
    train(&mut frozen, Variant::TextOnly, &data, &run0, &loss).unwrap();
    assert_eq!(frozen, base);

    let run = TrainRunConfig::default();
    let (mut a, mut b) = (base.clone(), base.clone());
    let ca = train(&mut a, Variant::DualRetrieval, &data, &run, &loss).unwrap();
    let cb = train(&mut b, Variant::DualRetrieval, &data, &run, &loss).unwrap();
    assert_eq!(ca, cb);
    assert_eq!(a, b);
    let mut buf = Vec::new();
    write_loss_curve(&mut buf, &ca).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), ca.len());
}

#[test]
fn divergence_reports_step_and_batch() {
    let data = separable_data();
    let mut model = SpeechTextModel::new(ModelConfig::default()).unwrap();
    model.params_mut().get_mut("lf.proj").unwrap().data_mut()[0] = f64::NAN;
    let loss = LossConfig::retrieval(model.config().dims.clone());
    let err = train(&mut model, Variant::LateFusion, &data, &TrainRunConfig::default(), &loss).unwrap_err();
    match err {
        Error::Divergence { step, batch } => {
            assert_eq!(step, 0);
            assert!(batch.len() >= 2);
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn config_checks() {
    let data = separable_data();
    let mut model = SpeechTextModel::new(ModelConfig::default()).unwrap();
    let loss = LossConfig::retrieval(model.config().dims.clone());
    let bad = TrainRunConfig { batch_size: 1, ..Default::default() };
    assert!(train(&mut model, Variant::TextOnly, &data, &bad, &loss).is_err());
    // alignment needs its own objective
    assert!(train(&mut model, Variant::DualAlignment, &data, &TrainRunConfig::default(), &loss).is_err());
    let wrong = LossConfig::retrieval(MatryoshkaDims::new(vec![8, 64]).unwrap());
    assert!(train(&mut model, Variant::DualRetrieval, &data, &TrainRunConfig::default(), &wrong).is_err());
    assert!(train(&mut model, Variant::TextOnly, &[], &TrainRunConfig::default(), &loss).is_err());
    assert_eq!("late-fusion".parse::<Variant>().unwrap(), Variant::LateFusion);
}

#[test]
fn pair_counts() {
    let p = setfit_pairs(&[0, 1], 2).unwrap();
    assert_eq!(p.negatives, vec![(0, 1)]);
    assert!(p.positives.is_empty());

    let labels: Vec<u32> = (0..10).flat_map(|c| [c, c]).collect();
    let p = setfit_pairs(&labels, 10).unwrap();
    // oracle: enumerate ordered cross-class pairs and halve
    let mut ordered = 0;
    for i in 0..labels.len() {
        for j in 0..labels.len() {
            if labels[i] != labels[j] {
                ordered += 1;
            }
        }
    }
    assert_eq!(p.negatives.len(), ordered / 2);
    assert_eq!(p.negatives.len(), 180);
    assert_eq!(p.positives.len(), 10);

    assert!(setfit_pairs(&[0, 0], 1).is_err());
    assert!(setfit_pairs(&[0, 0, 2], 3).is_err());
}

#[test]
fn logistic_regression_separates() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let centers = unit_rows(4, 6, &mut rng);
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for c in 0..4 {
        for _ in 0..5 {
            let r: Vec<f64> = centers.row(c).iter().map(|v| v + rng.random_range(-0.05..0.05)).collect();
            rows.push(r);
            y.push(c as u32);
        }
    }
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    let x = Matrix::from_rows(&refs).unwrap();
    let lr = LogisticRegression::fit(&x, &y, 4, 500, 2.0, 1e-4).unwrap();
    for (r, &label) in rows.iter().zip(&y) {
        assert_eq!(lr.predict(r), label);
    }
}

#[test]
fn zero_shot_is_label_argmax() {
    let labels = vec![vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]];
    let cfg = FewShotConfig { n_shot: 0, ..Default::default() };
    let clf = fit_intent_head(&[], &[], &labels, 2, &cfg).unwrap();
    assert!(matches!(clf, IntentClassifier::ZeroShot { .. }));
    assert_eq!(clf.predict(&[0.2, 0.9, 5.0, 5.0]).unwrap(), 1);
    assert_eq!(clf.predict(&[0.9, 0.2, -5.0, 5.0]).unwrap(), 0);
}

proptest! {
    #[test]
    fn temperature_keeps_argmax(seed in 0u64..1000, t1 in 0.01f64..2.0, t2 in 0.01f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = unit_rows(4, 6, &mut rng);
        let d = unit_rows(4, 6, &mut rng);
        let s = crate::numeric::similarity_matrix(&q, &d).unwrap();
        for i in 0..4 {
            let a = crate::numeric::softmax_rows(&s.scaled(1.0 / t1)).unwrap();
            let b = crate::numeric::softmax_rows(&s.scaled(1.0 / t2)).unwrap();
            let am = |m: &Matrix| (0..4).max_by(|&x, &y| m.get(i, x).total_cmp(&m.get(i, y))).unwrap();
            prop_assert_eq!(am(&a), am(&b));
        }
    }
}
