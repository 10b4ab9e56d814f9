use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stylevox_core::nn::ParamSet;
use stylevox_core::rvq::AcousticCodeMatrix;
use stylevox_core::sar::{Sampling, SarBatch, SarExample, SarModel};
use stylevox_core::snar::{SnarBatch, SnarExample, SnarModel};
use stylevox_core::text::{Segment, TokenSequence, SEP_ID};
use stylevox_core::{Error, TransformerConfig};

fn small() -> TransformerConfig {
    TransformerConfig { layers: 1, heads: 2, d_model: 8, d_ff: 16, dropout: 0.0, acoustic_vocab: 7, max_len: 32 }
}

fn seq(ids: &[usize], segment: Segment) -> TokenSequence {
    TokenSequence { ids: ids.to_vec(), segment }
}

fn perturb(p: &mut ParamSet<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in p.tensors_mut() {
        t.data.iter_mut().for_each(|v| *v += rng.gen_range(-0.4..0.4));
    }
}

// Plain row-at-a-time transformer written independently of the library.
fn tensor<'a>(p: &'a ParamSet<f64>, name: &str) -> &'a [f64] {
    &p.get(p.find(name).unwrap_or_else(|| panic!("no {name}"))).data
}

fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let inv = 1.0 / (var + 1e-5).sqrt();
    x.iter().zip(gain).zip(bias).map(|((v, g), b)| (v - mean) * inv * g + b).collect()
}

fn linear(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let out = b.len();
    (0..out).map(|j| b[j] + x.iter().enumerate().map(|(i, v)| v * w[i * out + j]).sum::<f64>()).collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

fn reference_logits(
    p: &ParamSet<f64>,
    cfg: &TransformerConfig,
    rows: &[Vec<f64>],
    causal: bool,
    prefix: &str,
) -> Vec<Vec<f64>> {
    let d = cfg.d_model;
    let dh = d / cfg.heads;
    let b = format!("{prefix}.blocks.0");
    let mut x: Vec<Vec<f64>> = rows.to_vec();
    let z: Vec<Vec<f64>> = x
        .iter()
        .map(|r| layer_norm(r, tensor(p, &format!("{b}.ln1.gain")), tensor(p, &format!("{b}.ln1.bias"))))
        .collect();
    let qkv: Vec<Vec<f64>> = z
        .iter()
        .map(|r| linear(r, tensor(p, &format!("{b}.attn.qkv.weight")), tensor(p, &format!("{b}.attn.qkv.bias"))))
        .collect();
    let n = rows.len();
    let mut ctx = vec![vec![0.0; d]; n];
    for h in 0..cfg.heads {
        for i in 0..n {
            let visible = if causal { i + 1 } else { n };
            let scores: Vec<f64> = (0..visible)
                .map(|j| (0..dh).map(|c| qkv[i][h * dh + c] * qkv[j][d + h * dh + c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let mx = scores.iter().cloned().fold(f64::MIN, f64::max);
            let w: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
            let total: f64 = w.iter().sum();
            for c in 0..dh {
                ctx[i][h * dh + c] = (0..visible).map(|j| w[j] / total * qkv[j][2 * d + h * dh + c]).sum();
            }
        }
    }
    for i in 0..n {
        let a = linear(&ctx[i], tensor(p, &format!("{b}.attn.proj.weight")), tensor(p, &format!("{b}.attn.proj.bias")));
        x[i].iter_mut().zip(&a).for_each(|(v, a)| *v += a);
        let z2 = layer_norm(&x[i], tensor(p, &format!("{b}.ln2.gain")), tensor(p, &format!("{b}.ln2.bias")));
        let u: Vec<f64> = linear(&z2, tensor(p, &format!("{b}.ff.fc1.weight")), tensor(p, &format!("{b}.ff.fc1.bias")))
            .into_iter()
            .map(gelu)
            .collect();
        let f = linear(&u, tensor(p, &format!("{b}.ff.fc2.weight")), tensor(p, &format!("{b}.ff.fc2.bias")));
        x[i].iter_mut().zip(&f).for_each(|(v, f)| *v += f);
    }
    x.iter()
        .map(|r| {
            let z = layer_norm(r, tensor(p, &format!("{prefix}.ln_f.gain")), tensor(p, &format!("{prefix}.ln_f.bias")));
            linear(&z, tensor(p, &format!("{prefix}.head.weight")), tensor(p, &format!("{prefix}.head.bias")))
        })
        .collect()
}

fn emb(p: &ParamSet<f64>, name: &str, id: usize, d: usize) -> Vec<f64> {
    tensor(p, name)[id * d..(id + 1) * d].to_vec()
}

fn sum(parts: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; parts[0].len()];
    for p in parts {
        out.iter_mut().zip(p).for_each(|(o, v)| *o += v);
    }
    out
}

#[test]
fn sar_forward_matches_reference() {
    let cfg = small();
    let d = cfg.d_model;
    let mut model = SarModel::<f64>::new(cfg.clone(), 10, 3).unwrap();
    perturb(&mut model.params, 4);
    let (style, text, codes) = (vec![4, 5, 6], vec![7, 8], vec![1, 0, 5]);
    let p = &model.params;
    let row = |table: &str, id: usize, pos: usize, seg: usize| {
        sum(&[emb(p, table, id, d), emb(p, "sar.pos_emb", pos, d), emb(p, "sar.seg_emb", seg, d)])
    };
    let mut rows = Vec::new();
    for (i, &t) in style.iter().enumerate() {
        rows.push(row("sar.token_emb", t, i, 0));
    }
    rows.push(row("sar.token_emb", SEP_ID, 0, 1));
    for (i, &t) in text.iter().enumerate() {
        rows.push(row("sar.token_emb", t, i + 1, 1));
    }
    rows.push(row("sar.token_emb", SEP_ID, 0, 2));
    for (i, &c) in codes.iter().enumerate() {
        rows.push(row("sar.code_emb", c, i + 1, 2));
    }
    let expected = reference_logits(p, &cfg, &rows, true, "sar");
    let got = model.forward(&seq(&style, Segment::Style), &seq(&text, Segment::Text), &codes).unwrap();
    let first = style.len() + text.len() + 1;
    for (k, r) in expected[first..].iter().enumerate() {
        for (j, v) in r.iter().enumerate() {
            assert!((got[k * cfg.acoustic_vocab + j] - v).abs() < 1e-5, "row {k} col {j}");
        }
    }
}

#[test]
fn snar_forward_matches_reference() {
    let cfg = small();
    let d = cfg.d_model;
    let mut model = SnarModel::<f64>::new(cfg.clone(), 10, 3, 8).unwrap();
    perturb(&mut model.params, 9);
    let text = vec![4, 9];
    let prefix = vec![vec![1, 2], vec![3, 0], vec![5, 5]];
    let layer = 3;
    let p = &model.params;
    let mut rows = Vec::new();
    for (i, &t) in text.iter().enumerate() {
        rows.push(sum(&[emb(p, "snar.token_emb", t, d), emb(p, "snar.pos_emb", i, d), emb(p, "snar.seg_emb", 1, d)]));
    }
    rows.push(sum(&[emb(p, "snar.token_emb", SEP_ID, d), emb(p, "snar.pos_emb", 0, d), emb(p, "snar.seg_emb", 2, d)]));
    for (t, codes) in prefix.iter().enumerate() {
        let mut parts = vec![
            emb(p, "snar.layer_emb", layer - 2, d),
            emb(p, "snar.pos_emb", t + 1, d),
            emb(p, "snar.seg_emb", 2, d),
        ];
        for (j, &c) in codes.iter().enumerate() {
            parts.push(emb(p, &format!("snar.code_emb.{}", j + 1), c, d));
        }
        rows.push(sum(&parts));
    }
    let expected = reference_logits(p, &cfg, &rows, false, "snar");
    let got = model.forward(&seq(&text, Segment::Text), &prefix, layer).unwrap();
    let k_size = model.codebook_size();
    for (k, r) in expected[text.len() + 1..].iter().enumerate() {
        for (j, v) in r.iter().enumerate() {
            assert!((got[k * k_size + j] - v).abs() < 1e-5, "frame {k} col {j}");
        }
    }
}

#[test]
fn sar_logits_ignore_future_codes() {
    let mut model = SarModel::<f64>::new(small(), 10, 3).unwrap();
    perturb(&mut model.params, 1);
    let (s, t) = (seq(&[4, 5], Segment::Style), seq(&[6], Segment::Text));
    let a = model.forward(&s, &t, &[1, 2, 3, 4]).unwrap();
    let b = model.forward(&s, &t, &[1, 2, 0, 0]).unwrap();
    let v = small().acoustic_vocab;
    assert_eq!(a[..3 * v], b[..3 * v]);
    assert_ne!(a[3 * v..4 * v], b[3 * v..4 * v]);
}

#[test]
fn snar_attends_both_ways() {
    let mut model = SnarModel::<f64>::new(small(), 10, 3, 2).unwrap();
    perturb(&mut model.params, 2);
    let t = seq(&[4, 5], Segment::Text);
    let a = model.forward(&t, &[vec![1], vec![2], vec![3]], 2).unwrap();
    let b = model.forward(&t, &[vec![1], vec![2], vec![0]], 2).unwrap();
    let v = model.codebook_size();
    assert_ne!(a[..v], b[..v]);
}

#[test]
fn zero_head_gives_log_vocab_loss() {
    let cfg = small();
    let mut model = SarModel::<f64>::new(cfg.clone(), 10, 3).unwrap();
    for name in ["sar.head.weight", "sar.head.bias"] {
        let id = model.params.find(name).unwrap();
        model.params.get_mut(id).data.iter_mut().for_each(|v| *v = 0.0);
    }
    let batch = SarBatch { examples: vec![SarExample { style: vec![4], text: vec![5], codes: vec![1, 2, 3] }] };
    let loss = model.loss(&batch).unwrap();
    assert!((loss - (cfg.acoustic_vocab as f64).ln()).abs() < 1e-12);
}

#[test]
fn sar_rejects_bad_input() {
    let model = SarModel::<f64>::new(small(), 10, 3).unwrap();
    let eos = model.eos();
    let bad_code = SarBatch { examples: vec![SarExample { style: vec![4], text: vec![5], codes: vec![eos] }] };
    assert!(matches!(model.loss(&bad_code), Err(Error::InvalidId { .. })));
    let long = SarBatch { examples: vec![SarExample { style: vec![4; 20], text: vec![5; 10], codes: vec![1] }] };
    assert!(matches!(model.loss(&long), Err(Error::SequenceTooLong { .. })));
    assert!(matches!(model.loss(&SarBatch { examples: vec![] }), Err(Error::EmptyBatch)));
}

#[test]
fn generation_is_seed_deterministic_and_bounded() {
    let mut model = SarModel::<f64>::new(small(), 10, 3).unwrap();
    perturb(&mut model.params, 6);
    let (s, t) = (seq(&[4, 5], Segment::Style), seq(&[6], Segment::Text));
    let sampling = Sampling { temperature: 1.0, top_k: 4, seed: 12 };
    let a = model.generate(&s, &t, sampling, 10).unwrap();
    let b = model.generate(&s, &t, sampling, 10).unwrap();
    assert_eq!(a, b);
    assert!(a.len() <= 10 && a.iter().all(|&c| c < model.eos()));
    let g1 = model.generate(&s, &t, Sampling::greedy(), 10).unwrap();
    let g2 = model.generate(&s, &t, Sampling { seed: 99, ..Sampling::greedy() }, 10).unwrap();
    assert_eq!(g1, g2);
}

#[test]
fn snar_predicts_every_layer() {
    let mut model = SnarModel::<f64>::new(small(), 10, 4, 2).unwrap();
    perturb(&mut model.params, 8);
    let k = model.codebook_size();
    let codes = model.predict_all(&seq(&[4, 5], Segment::Text), &[1, 2, 3], &[k; 4]).unwrap();
    assert_eq!((codes.frames(), codes.layers()), (3, 4));
    assert_eq!(codes.column(0), vec![1, 2, 3]);

    let example =
        SnarExample { text: vec![4], codes: AcousticCodeMatrix::from_rows(vec![k; 4], &[vec![0, 1, 2, 3]]).unwrap() };
    assert!(matches!(SnarBatch::from_example(&example, 1), Err(Error::BadLayerIndex { .. })));
    assert!(matches!(SnarBatch::from_example(&example, 5), Err(Error::BadLayerIndex { .. })));
    let b = SnarBatch::from_example(&example, 3).unwrap();
    assert_eq!((b.prefix.clone(), b.targets.clone()), (vec![vec![0, 1]], vec![2]));
}
