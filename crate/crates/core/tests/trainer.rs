use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stylevox_core::checkpoint::Checkpoint;
use stylevox_core::nn::{Init, ParamSet};
use stylevox_core::sar::{SarExample, SarModel};
use stylevox_core::trainer::*;
use stylevox_core::{Error, TransformerConfig};

fn tiny() -> TransformerConfig {
    TransformerConfig { layers: 1, heads: 2, d_model: 16, d_ff: 32, dropout: 0.1, acoustic_vocab: 9, max_len: 48 }
}

fn toy_examples(n: usize, seed: u64) -> Vec<SarExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| SarExample {
            style: (0..6).map(|_| rng.gen_range(4..10)).collect(),
            text: (0..3).map(|_| rng.gen_range(4..10)).collect(),
            codes: (0..rng.gen_range(4..9)).map(|_| rng.gen_range(0..8)).collect(),
        })
        .collect()
}

fn toy_config() -> TrainConfig {
    TrainConfig {
        peak_lr: 3e-3,
        warmup_steps: 5,
        total_steps: 50,
        batch_tokens: 20,
        valid_every: 0,
        checkpoint_every: 0,
        record_wall_time: false,
        ..TrainConfig::default()
    }
}

#[test]
fn schedule_endpoints() {
    let cfg = TrainConfig::default();
    assert_eq!(lr_schedule(0, &cfg), 1e-7);
    assert_eq!(lr_schedule(32_000, &cfg), 5e-4);
    let mid = (cfg.warmup_steps + cfg.total_steps) / 2;
    assert!((lr_schedule(mid, &cfg) - 2.5e-4).abs() < 1e-12);
    assert_eq!(lr_schedule(cfg.total_steps, &cfg), 0.0);
    assert_eq!(lr_schedule(cfg.total_steps + 10, &cfg), 0.0);
}

proptest! {
    #[test]
    fn schedule_is_bounded_and_continuous(step in 0u64..210_000) {
        let cfg = TrainConfig::default();
        let lr = lr_schedule(step, &cfg);
        prop_assert!((0.0..=cfg.peak_lr).contains(&lr));
        let slope = (cfg.peak_lr - cfg.init_lr) / cfg.warmup_steps as f64;
        prop_assert!((lr_schedule(step + 1, &cfg) - lr).abs() <= slope * 1.000001);
    }
}

fn scalar_params(value: f64) -> ParamSet<f64> {
    let mut p = ParamSet::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    p.add("x", &[1], Init::Zeros, &mut rng);
    p.get_mut(0).data[0] = value;
    p
}

#[test]
fn adamw_matches_hand_trace() {
    let opt = AdamW { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 };
    let lr = 0.1;
    let mut p = scalar_params(1.0);
    let mut state = AdamState::new(&p);
    let gs = [0.5, -0.3, 0.2];
    // reference arithmetic written out step by step
    let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
    for (t, g) in gs.iter().enumerate() {
        let mut grads = p.zeros_like();
        grads.get_mut(0).data[0] = *g;
        adamw_step(&mut p, &grads, &mut state, lr, &opt).unwrap();
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        let k = (t + 1) as i32;
        let m_hat = m / (1.0 - 0.9f64.powi(k));
        let v_hat = v / (1.0 - 0.999f64.powi(k));
        x = x - lr * 0.01 * x - lr * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((p.get(0).data[0] - x).abs() < 1e-10, "step {}: {} vs {x}", t + 1, p.get(0).data[0]);
    }
    assert_eq!(state.updates, 3);
}

#[test]
fn zero_gradient_without_decay_changes_nothing() {
    let opt = AdamW { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 };
    let mut p = scalar_params(0.7);
    let mut state = AdamState::new(&p);
    let grads = p.zeros_like();
    for _ in 0..5 {
        adamw_step(&mut p, &grads, &mut state, 1e-2, &opt).unwrap();
    }
    assert_eq!(p.get(0).data[0], 0.7);
}

#[test]
fn decay_shrinks_by_fixed_factor() {
    let opt = AdamW { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.1 };
    let lr = 0.01;
    let mut p = scalar_params(2.0);
    let mut state = AdamState::new(&p);
    let grads = p.zeros_like();
    let mut expected = 2.0;
    for _ in 0..3 {
        adamw_step(&mut p, &grads, &mut state, lr, &opt).unwrap();
        expected *= 1.0 - lr * 0.1;
        assert!((p.get(0).data[0] - expected).abs() < 1e-15);
    }
}

#[test]
fn non_finite_gradient_is_rejected() {
    let opt = AdamW { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 };
    let mut p = scalar_params(1.0);
    let mut state = AdamState::new(&p);
    let mut grads = p.zeros_like();
    grads.get_mut(0).data[0] = f64::NAN;
    assert!(matches!(adamw_step(&mut p, &grads, &mut state, 0.1, &opt), Err(Error::NonFiniteGradient)));
    assert_eq!(p.get(0).data[0], 1.0);
    assert_eq!(state, AdamState::new(&p));
}

#[test]
fn mismatched_shapes_are_rejected() {
    let opt = AdamW { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 };
    let mut p = scalar_params(1.0);
    let mut state = AdamState::new(&p);
    let mut other = ParamSet::<f64>::default();
    other.add("y", &[2], Init::Zeros, &mut ChaCha8Rng::seed_from_u64(0));
    assert!(matches!(adamw_step(&mut p, &other, &mut state, 0.1, &opt), Err(Error::ShapeMismatch(_))));
}

#[test]
fn token_budget_caps_batch_size() {
    let lengths = vec![101; 500];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let batches = plan_batches(&lengths, 6000, &mut rng);
    assert!(batches.iter().all(|b| b.len() <= 60));
    let mut seen: Vec<usize> = batches.concat();
    seen.sort();
    assert_eq!(seen, (0..500).collect::<Vec<_>>());
}

#[test]
fn oversized_example_gets_its_own_batch() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let batches = plan_batches(&[10, 500, 10], 100, &mut rng);
    assert!(batches.iter().any(|b| b == &vec![1]));
}

fn run(cfg: &TrainConfig, data: &[SarExample]) -> (Vec<u8>, SarModel<f32>) {
    let model = SarModel::<f32>::new(tiny(), 10, 5).unwrap();
    let mut trainer = Trainer::new(model, cfg.clone(), data).unwrap();
    let mut metrics = Vec::new();
    trainer.run(&[], &mut metrics, &mut |_, _| Ok(())).unwrap();
    (metrics, trainer.model)
}

fn losses(metrics: &[u8]) -> Vec<f64> {
    String::from_utf8(metrics.to_vec())
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<MetricsRecord>(l).unwrap())
        .filter_map(|r| r.loss)
        .collect()
}

#[test]
fn fifty_steps_reduce_the_loss() {
    let data = toy_examples(4, 1);
    let (metrics, _) = run(&toy_config(), &data);
    let l = losses(&metrics);
    assert_eq!(l.len(), 50);
    assert!(l[49] < l[0], "{} !< {}", l[49], l[0]);
}

#[test]
fn same_seed_gives_identical_metrics() {
    let data = toy_examples(6, 2);
    let cfg = TrainConfig { total_steps: 20, ..toy_config() };
    let (a, ma) = run(&cfg, &data);
    let (b, mb) = run(&cfg, &data);
    assert_eq!(a, b);
    assert_eq!(ma.params, mb.params);
    let first: serde_json::Value = serde_json::from_slice(a.split(|&c| c == b'\n').next().unwrap()).unwrap();
    for key in ["step", "loss", "lr", "wall_ms"] {
        assert!(first.get(key).is_some(), "{key} missing");
    }
}

#[test]
fn validation_and_checkpoint_events() {
    let data = toy_examples(6, 4);
    let cfg = TrainConfig { total_steps: 12, valid_every: 4, checkpoint_every: 6, ..toy_config() };
    let model = SarModel::<f32>::new(tiny(), 10, 5).unwrap();
    let mut trainer = Trainer::new(model, cfg, &data).unwrap();
    let mut metrics = Vec::new();
    let mut events = Vec::new();
    trainer
        .run(&data[..2], &mut metrics, &mut |t, e| {
            events.push((t.state.step, e));
            Ok(())
        })
        .unwrap();
    let text = String::from_utf8(metrics).unwrap();
    assert_eq!(text.lines().filter(|l| l.contains("valid_loss")).count(), 3);
    assert!(events.contains(&(6, CheckpointEvent::Periodic)));
    assert!(events.contains(&(12, CheckpointEvent::Final)));
    assert!(events.iter().any(|(_, e)| *e == CheckpointEvent::BestValid));
}

#[test]
fn resume_from_checkpoint_is_bitwise_identical() {
    let data = toy_examples(7, 5);
    let cfg = TrainConfig { total_steps: 40, ..toy_config() };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.ckpt");

    let model = SarModel::<f32>::new(tiny(), 10, 5).unwrap();
    let mut straight = Trainer::new(model, cfg.clone(), &data).unwrap();
    for _ in 0..9 {
        straight.step().unwrap();
    }
    Checkpoint::from_sar(&straight.model, None, Some(straight.state.clone())).save(&path).unwrap();
    straight.step().unwrap();

    let ck = Checkpoint::load(&path).unwrap();
    let restored = ck.sar().unwrap();
    let mut resumed = Trainer::resume(restored, cfg, &data, ck.state.unwrap()).unwrap();
    resumed.step().unwrap();
    assert_eq!(resumed.model.params, straight.model.params);
    assert_eq!(resumed.state, straight.state);
}

#[test]
fn config_invariants_are_checked() {
    let bad = TrainConfig { init_lr: 1e-3, peak_lr: 1e-4, ..TrainConfig::default() };
    assert!(bad.validate().is_err());
    let bad = TrainConfig { warmup_steps: 10, total_steps: 10, ..TrainConfig::default() };
    assert!(bad.validate().is_err());
    assert!(TrainConfig::demo().validate().is_ok());
}
