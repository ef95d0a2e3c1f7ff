use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::ops;
use super::*;
use crate::error::Error;
use crate::featio::{self, Dtype};

fn frames(t: usize, d: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(t, d, |_, _| StandardNormal.sample(&mut rng))
}

fn targets(t: usize, c: usize, seed: u64) -> TargetStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    TargetStream::new((0..t).map(|_| rand::Rng::random_range(&mut rng, 0..c)).collect(), 20)
}

fn preset(name: &str) -> ModelConfig {
    ModelConfig::preset(name).unwrap()
}

fn model(cfg: ModelConfig) -> Model<f64> {
    let mut m = Model::new(cfg).unwrap();
    // biases and norms away from their init so every path carries signal
    m.params_mut().perturb(0.05, 99);
    m
}

fn every_third(t: usize) -> Vec<bool> {
    (0..t).map(|i| i % 3 == 1).collect()
}

#[test]
fn two_resolution_trace() {
    let m = model(preset("mr-base-toy"));
    let trace = m.forward(&frames(16, 16, 1), &every_third(16)).unwrap();
    let mut expected: Vec<String> = vec!["T0".into()];
    expected.extend((1..=4).map(|i| format!("T{i}")));
    expected.push("D0".into());
    expected.extend((5..=8).map(|i| format!("T{i}")));
    expected.push("U0".into());
    expected.extend((9..=12).map(|i| format!("T{i}")));
    assert_eq!(trace.layer_ids(), expected);
    assert_eq!(trace.aux_logits.len(), 1);
    assert_eq!(trace.aux_logits[0].nrows(), 8);
    assert_eq!(trace.main_logits.shape(), (16, 8));
    assert_eq!(trace.layer("D0").unwrap().frame_period_ms, 40);
}

#[test]
fn three_resolution_order_and_lengths() {
    let m = model(preset("b2-a"));
    let trace = m.forward_unmasked(&frames(33, 16, 2)).unwrap();
    let ids = trace.layer_ids();
    assert_eq!(
        ids,
        ["T0", "T1", "T2", "T3", "D0", "T4", "T5", "D1", "T6", "T7", "U1", "T8", "T9", "U0", "T10", "T11", "T12"]
    );
    let len = |id: &str| trace.layer(id).unwrap().data.nrows();
    assert_eq!(len("T3"), 33);
    assert_eq!(len("D0"), 17);
    assert_eq!(len("D1"), 9);
    assert_eq!(len("T7"), 9);
    assert_eq!(len("U1"), 17);
    assert_eq!(len("U0"), 33);
    assert_eq!(trace.aux_logits.iter().map(|a| a.nrows()).collect::<Vec<_>>(), [17, 9]);
}

#[test]
fn shape_law_for_every_preset() {
    for name in PRESETS {
        let cfg = preset(name);
        let m = model(cfg.clone());
        for t in [7, 8, 16, 33] {
            let trace = m.forward_unmasked(&frames(t, 16, t as u64)).unwrap();
            for out in &trace.layers {
                let r = (out.frame_period_ms / 20) as usize;
                assert_eq!(out.data.nrows(), t.div_ceil(r), "{name} {} T={t}", out.layer_id);
            }
        }
    }
}

#[test]
fn no_downsampling_keeps_base_rate() {
    let m = model(preset("b5-a"));
    let trace = m.forward_unmasked(&frames(16, 16, 3)).unwrap();
    assert!(trace.layers.iter().all(|l| l.data.nrows() == 16 && l.frame_period_ms == 20));
    assert!(trace.layer("D0").is_some() && trace.layer("U0").is_some());
    assert_eq!(trace.layers.iter().filter(|l| l.layer_id.starts_with('T')).count(), 13);
    assert_eq!(trace.aux_logits[0].nrows(), 16);
}

#[test]
fn baseline_has_no_sampling_modules() {
    let m = model(preset("hubert-base-toy"));
    let trace = m.forward_unmasked(&frames(9, 16, 4)).unwrap();
    assert_eq!(trace.layers.len(), 13);
    assert!(trace.aux_logits.is_empty());
    assert!(m.param_names_with_prefix("down").is_empty());
}

#[test]
fn downsample_closed_form() {
    let c = 1.5;
    let x = DMatrix::from_element(7, 4, c);
    let avg = ops::window_average(&x, 2).unwrap();
    let y = ops::linear(&avg, &DMatrix::identity(4, 4), &DMatrix::zeros(1, 4));
    for r in 0..3 {
        assert!(y.row(r).iter().all(|&v| v == c));
    }
    assert!(y.row(3).iter().all(|&v| v == c * 1.0 / 2.0));
    let x = DMatrix::from_element(10, 4, c);
    let y = ops::window_average(&x, 4).unwrap();
    assert!(y.row(2).iter().all(|&v| v == c * 2.0 / 4.0));
}

#[test]
fn down_then_up_of_constant_is_constant() {
    let c = -0.75;
    for t in [8, 7, 33] {
        let x = DMatrix::from_element(t, 3, c);
        let back = ops::repeat_frames(&ops::window_average(&x, 2).unwrap(), 2, t).unwrap();
        let full = t / 2 * 2;
        for r in 0..full {
            assert!(back.row(r).iter().all(|&v| v == c), "T={t} row {r}");
        }
    }
}

#[test]
fn aux_is_a_pure_loss_head() {
    let with = model(preset("mr-base-toy"));
    let mut cfg = preset("mr-base-toy");
    cfg.aux_loss_enabled = false;
    let mut without = Model::new(cfg).unwrap();
    let copied = without.copy_shared_from(&with);
    assert_eq!(copied, without.params().len());
    assert!(without.param_names_with_prefix("aux").is_empty());
    let x = frames(16, 16, 5);
    let mask = every_third(16);
    let a = with.forward(&x, &mask).unwrap();
    let b = without.forward(&x, &mask).unwrap();
    for (la, lb) in a.layers.iter().zip(&b.layers) {
        assert_eq!(la.layer_id, lb.layer_id);
        assert_eq!(la.data, lb.data);
    }
    assert_eq!(a.main_logits, b.main_logits);
    assert!(b.aux_logits.is_empty());
}

#[test]
fn zero_aux_weight_leaves_main_gradient() {
    let mut cfg = preset("b2-b");
    cfg.aux_loss_weight = 0.0;
    let with = model(cfg.clone());
    cfg.aux_loss_enabled = false;
    let mut without = Model::new(cfg).unwrap();
    without.copy_shared_from(&with);
    let x = frames(16, 16, 6);
    let t = targets(16, 8, 6);
    let mask = every_third(16);
    let (la, ga) = with.loss_and_grad(&x, &t, &mask).unwrap();
    let (lb, gb) = without.loss_and_grad(&x, &t, &mask).unwrap();
    assert_eq!(la.total, lb.total);
    for (name, g) in ga.iter() {
        match gb.id(name) {
            Some(id) => assert!((g - &gb.tensors()[id.0]).amax() <= 1e-12, "{name}"),
            None => assert!(name.starts_with("aux") && g.amax() == 0.0, "{name}"),
        }
    }
}

#[test]
fn residual_modes() {
    let post = model(preset("mr-base-toy"));
    let mut cfg = preset("mr-base-toy");
    cfg.residual_mode = ResidualMode::PreDecoder;
    let mut pre = Model::new(cfg).unwrap();
    pre.copy_shared_from(&post);
    let x = frames(16, 16, 7);
    let a = post.forward_unmasked(&x).unwrap();
    let b = pre.forward_unmasked(&x).unwrap();
    assert_ne!(a.layer("T12").unwrap().data, b.layer("T12").unwrap().data);
    assert_eq!(a.layer("T8").unwrap().data, b.layer("T8").unwrap().data);

    let mut post = post;
    post.zero_block_outputs(2);
    pre.zero_block_outputs(2);
    let a = post.forward_unmasked(&x).unwrap();
    let b = pre.forward_unmasked(&x).unwrap();
    let d = (&a.layer("T12").unwrap().data - &b.layer("T12").unwrap().data).amax();
    assert!(d < 1e-12, "{d}");
    assert!((&a.main_logits - &b.main_logits).amax() < 1e-12);
}

#[test]
fn loss_depends_only_on_masked_targets() {
    let m = model(preset("b2-a"));
    let x = frames(16, 16, 8);
    let mask = every_third(16);
    let t = targets(16, 8, 8);
    let mut changed = t.clone();
    for (i, u) in changed.units.iter_mut().enumerate() {
        if !mask[i] {
            *u = (*u + 3) % 8;
        }
    }
    let a = m.loss(&x, &t, &mask).unwrap();
    let b = m.loss(&x, &changed, &mask).unwrap();
    assert_eq!(a, b);
}

#[test]
fn masking_errors_and_determinism() {
    assert!(matches!(span_mask(5, 1e-9, 3, 0), Err(Error::NoMaskedFrames)));
    let a = span_mask(50, 0.2, 3, 11).unwrap();
    assert_eq!(a, span_mask(50, 0.2, 3, 11).unwrap());
    let m = model(preset("mr-base-toy"));
    assert!(matches!(
        m.loss(&frames(6, 16, 1), &targets(6, 8, 1), &[false; 6]),
        Err(Error::NoMaskedFrames)
    ));
    assert!(m.loss(&frames(6, 16, 1), &targets(5, 8, 1), &[true; 6]).is_err());
    assert!(m.forward_unmasked(&frames(6, 15, 1)).is_err());
}

#[test]
fn gradients_match_finite_differences() {
    for name in ["mr-base-toy", "b5-a"] {
        let m = model(preset(name));
        let x = frames(12, 16, 9);
        let t = targets(12, 8, 9);
        let r = grad_check(&m, &x, &t, &every_third(12), 1e-5, 200, 1).unwrap();
        assert!(r.max_rel_error < 1e-4, "{name}: {r:?}");
        assert_eq!(r.tensors, m.params().len());
        assert!(r.checked >= 200);
    }
}

#[test]
fn f32_forward_tracks_f64() {
    let m = model(preset("mr-base-toy"));
    let m32: Model<f32> = m.cast();
    let x = frames(16, 16, 10);
    let a = m.forward_unmasked(&x).unwrap();
    let b = m32.forward_unmasked(&x.map(|v| v as f32)).unwrap();
    let diff = a
        .main_logits
        .iter()
        .zip(b.main_logits.iter())
        .map(|(p, q)| (p - *q as f64).abs())
        .fold(0.0, f64::max);
    assert!(diff < 1e-3, "{diff}");
}

fn tiny_corpus() -> Vec<Example> {
    let c = Corpus::generate(CorpusOptions {
        utterances: 6,
        seed: 1,
        ..CorpusOptions::default()
    })
    .unwrap();
    c.utterances.into_iter().map(|u| (u.frames, u.targets)).collect()
}

#[test]
fn zero_steps_records_only_the_initial_loss() {
    let mut m = Model::<f64>::new(preset("mr-base-toy")).unwrap();
    let h = train_toy(&mut m, &tiny_corpus(), &TrainOptions { steps: 0, ..TrainOptions::default() }).unwrap();
    assert!(h.train.is_empty());
    assert_eq!(h.eval.len(), 1);
}

#[test]
fn training_is_bitwise_deterministic() {
    let opts = TrainOptions {
        steps: 6,
        eval_every: 3,
        ..TrainOptions::default()
    };
    let data = tiny_corpus();
    let run = || {
        let mut m = Model::<f64>::new(preset("b2-a")).unwrap();
        let h = train_toy(&mut m, &data, &opts).unwrap();
        (h, m.params().clone())
    };
    let (h1, p1) = run();
    let (h2, p2) = run();
    assert_eq!(h1, h2);
    assert_eq!(p1, p2);
    assert_eq!(h1.train.len(), 6);
    assert_eq!(h1.eval.iter().map(|e| e.0).collect::<Vec<_>>(), [0, 3, 6]);
}

#[test]
fn huge_learning_rate_diverges_with_step_index() {
    let mut m = Model::<f64>::new(preset("hubert-base-toy")).unwrap();
    let r = train_toy(
        &mut m,
        &tiny_corpus(),
        &TrainOptions {
            steps: 50,
            lr: 1e12,
            ..TrainOptions::default()
        },
    );
    assert!(matches!(r, Err(Error::Diverged { .. })), "{r:?}");
}

#[test]
fn extraction_writes_native_rates() {
    let dir = tempfile::tempdir().unwrap();
    let m = model(preset("mr-base-toy"));
    let x = frames(16, 16, 12);
    let manifest = extract(&m, "u1", &x, &dir.path().join("a"), Dtype::F32).unwrap();
    let d0 = manifest.layers.iter().find(|l| l.layer_id == "D0").unwrap();
    assert_eq!(d0.frame_period_ms, 40);
    let dump = featio::read_dump(&dir.path().join("a").join(&d0.path)).unwrap();
    assert_eq!(dump.frames(), 8);
    extract(&m, "u1", &x, &dir.path().join("b"), Dtype::F32).unwrap();
    for entry in &manifest.layers {
        let a = std::fs::read(dir.path().join("a").join(&entry.path)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(&entry.path)).unwrap();
        assert_eq!(a, b, "{}", entry.layer_id);
    }
    let loaded = featio::Manifest::load(&dir.path().join("a").join("manifest.json")).unwrap();
    assert_eq!(loaded.layers.len(), 15);

    let b5 = model(preset("b5-a"));
    let manifest = extract(&b5, "u1", &x, &dir.path().join("c"), Dtype::F64).unwrap();
    assert!(manifest.layers.iter().all(|l| l.frame_period_ms == 20));
}
