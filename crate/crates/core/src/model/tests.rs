use super::*;
use crate::autodiff::Tape;
use crate::error::Error;
use crate::numeric::{dot, norm, Matrix};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub(crate) fn tiny_config(seed: u64) -> ModelConfig {
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

pub(crate) fn random_frames(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn default_model() -> SpeechTextModel {
    SpeechTextModel::new(ModelConfig::default()).unwrap()
}

#[test]
fn text_embeddings_are_unit_and_deterministic() {
    let m = default_model();
    let a = m.encode_text(&[5, 9, 200], &[0]).unwrap();
    assert_eq!(a.len(), 64);
    assert!((norm(&a) - 1.0).abs() < 1e-9);
    assert_eq!(a, m.encode_text(&[5, 9, 200], &[0]).unwrap());
    let b = m.encode_text(&[5, 9, 200], &[1]).unwrap();
    assert!(dot(&a, &b) < 1.0 - 1e-6);
    // the prompt is prepended
    assert_eq!(m.encode_text(&[0, 5, 9, 200], &[]).unwrap(), a);
}

#[test]
fn text_input_errors() {
    let m = default_model();
    assert!(matches!(
        m.encode_text(&[3, 512], &[]),
        Err(Error::UnknownToken { id: 512, vocab: 512 })
    ));
    let long: Vec<u32> = (0..64).collect();
    assert!(m.encode_text(&long, &[]).is_ok());
    assert!(matches!(
        m.encode_text(&long, &[0]),
        Err(Error::Overlength { len: 65, max: 64, excess: 1 })
    ));
    assert!(m.encode_text(&[], &[0]).is_err());
}

#[test]
fn late_fusion_shapes() {
    let m = default_model();
    for s in [1usize, 2, 5, 6, 7, 12] {
        let f = random_frames(s, 16, s as u64);
        let out = m.frontend_output("lf", &f).unwrap();
        assert_eq!(out.shape(), ((s + 1) / 2, 64));
        let e = m.encode_speech_late_fusion(&f, &[0]).unwrap();
        assert!((norm(&e) - 1.0).abs() < 1e-9);
    }
    assert!(m.encode_speech_late_fusion(&Matrix::zeros(0, 16), &[0]).is_err());
    assert!(m.encode_speech_late_fusion(&random_frames(4, 15, 1), &[0]).is_err());
}

#[test]
fn late_fusion_gradients_reach_only_frontend() {
    let m = default_model();
    let f = random_frames(8, 16, 3);
    let mut tape = Tape::new(m.params(), |n| n.starts_with("lf."));
    let e = m.late_fusion_on_tape(&mut tape, &f, &[0]).unwrap();
    let seed = Matrix::filled(1, 64, 0.1);
    let g = tape.backward(&[(e, seed)]).unwrap();
    assert!(!g.is_empty());
    for (name, grad) in g.iter() {
        assert!(name.starts_with("lf."), "{name}");
        assert!(grad.data().iter().any(|v| *v != 0.0));
    }
    assert_eq!(g.len(), 3);
}

#[test]
fn dual_outputs_per_dim() {
    let m = default_model();
    let f = random_frames(9, 16, 4);
    let out = m.encode_speech_dual(&f).unwrap();
    let dims: Vec<usize> = out.iter().map(|(d, _)| *d).collect();
    assert_eq!(dims, vec![8, 16, 32, 64]);
    for (d, v) in &out {
        assert_eq!(v.len(), *d);
        assert!((norm(v) - 1.0).abs() < 1e-9);
    }
    assert!(m.encode_speech_dual(&Matrix::zeros(0, 16)).is_err());
}

#[test]
fn dual_pool_uniform_and_constant_rows() {
    let mut m = default_model();
    let f = random_frames(7, 16, 5);
    // q starts at zero: the pooled vector is the mean of frontend rows
    assert!(m.params().require("dual.pool.q").unwrap().data().iter().all(|v| *v == 0.0));
    let rows = m.frontend_output("dual", &f).unwrap();
    let pooled = m.dual_pooled(&f).unwrap();
    for c in 0..64 {
        let mean = (0..rows.rows()).map(|r| rows.get(r, c)).sum::<f64>() / rows.rows() as f64;
        assert!((pooled[c] - mean).abs() < 1e-12);
    }
    // zero conv weights make every frontend row equal to proj(gelu(bias))
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for name in ["dual.conv.w", "dual.conv.b", "dual.pool.q"] {
        let p = m.params_mut().get_mut(name).unwrap();
        let fill = name == "dual.conv.w";
        for v in p.data_mut() {
            *v = if fill { 0.0 } else { rng.random_range(-1.0..1.0) };
        }
    }
    let rows = m.frontend_output("dual", &f).unwrap();
    let pooled = m.dual_pooled(&f).unwrap();
    for c in 0..64 {
        assert!((pooled[c] - rows.get(0, c)).abs() < 1e-12);
    }
}

#[test]
fn dual_heads_get_independent_gradients() {
    let m = default_model();
    let f = random_frames(6, 16, 6);
    let mut tape = Tape::new(m.params(), |n| n.starts_with("dual.head"));
    let outs = m.dual_on_tape(&mut tape, &f).unwrap();
    for (k, &(d, v)) in outs.iter().enumerate() {
        let g = tape.backward(&[(v, Matrix::filled(1, d, 0.3))]).unwrap();
        for (j, &(dj, _)) in outs.iter().enumerate() {
            let name = format!("dual.head.{dj:04}");
            let has = g.get(&name).map(|m| m.data().iter().any(|x| *x != 0.0)).unwrap_or(false);
            assert_eq!(has, j == k, "term {d} gave gradient to {name}");
        }
    }
}

#[test]
fn from_params_checks_names_and_shapes() {
    let m = default_model();
    let cfg = m.config().clone();
    let ok = SpeechTextModel::from_params(cfg.clone(), m.params().clone()).unwrap();
    assert_eq!(ok, m);
    let mut missing = m.params().clone();
    missing.remove("text.out");
    assert!(SpeechTextModel::from_params(cfg.clone(), missing).is_err());
    let mut wrong = m.params().clone();
    wrong.insert("text.out", Matrix::zeros(2, 2));
    assert!(SpeechTextModel::from_params(cfg, wrong).is_err());
}

#[test]
fn init_is_seeded() {
    let a = SpeechTextModel::new(tiny_config(1)).unwrap();
    let b = SpeechTextModel::new(tiny_config(1)).unwrap();
    let c = SpeechTextModel::new(tiny_config(2)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.params().to_bytes(), c.params().to_bytes());
}

#[test]
fn checkpoint_round_trip_through_model() {
    let m = SpeechTextModel::new(tiny_config(3)).unwrap();
    let bytes = encode_checkpoint(m.params());
    let back = decode_checkpoint(&bytes).unwrap();
    let m2 = SpeechTextModel::from_params(m.config().clone(), back).unwrap();
    assert_eq!(m2.encode_text(&[1, 2], &[0]).unwrap(), m.encode_text(&[1, 2], &[0]).unwrap());
}
