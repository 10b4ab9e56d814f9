//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits non-zero if any failed.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::thread;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stylevox_core::audio::{write_wav, SAMPLE_RATE};
use stylevox_core::dataset::*;
use stylevox_core::eval::*;
use stylevox_core::factors::{Emotion, Gender, Level, StyleFactors};
use stylevox_core::features::*;
use stylevox_core::filterbank::Filterbank;
use stylevox_core::lm::PackedSequence;
use stylevox_core::nn::ParamSet;
use stylevox_core::pipeline::*;
use stylevox_core::prompt::*;
use stylevox_core::rvq::*;
use stylevox_core::sar::{Sampling, SarBatch, SarExample, SarModel};
use stylevox_core::snar::{SnarBatch, SnarExample, SnarModel};
use stylevox_core::synth::Pipeline;
use stylevox_core::text::{Segment, TokenSequence};
use stylevox_core::trainer::*;
use stylevox_core::{Error, TransformerConfig};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- 1

fn random_books(rng: &mut ChaCha8Rng, layers: usize, k: usize, dim: usize) -> CodebookSet {
    let books = (0..layers)
        .map(|l| {
            let scale = 1.0 / (l + 1) as f32;
            Codebook { dim, rows: (0..k * dim).map(|_| rng.gen_range(-1.0f32..1.0) * scale).collect() }
        })
        .collect();
    CodebookSet::new(books).unwrap()
}

/// Stage-wise exhaustive search: each layer takes the row closest to what
/// is left after the previous layers.
fn brute_force_codes(books: &CodebookSet, frame: &[f32]) -> Vec<usize> {
    let mut residual: Vec<f64> = frame.iter().map(|&v| v as f64).collect();
    let mut out = Vec::new();
    for b in &books.books {
        let mut scored: Vec<(f64, usize)> = (0..b.size())
            .map(|j| (b.row(j).iter().zip(&residual).map(|(&c, r)| (r - c as f64).powi(2)).sum::<f64>(), j))
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let j = scored[0].1;
        residual.iter_mut().zip(b.row(j)).for_each(|(r, &c)| *r -= c as f64);
        out.push(j);
    }
    out
}

fn mse(a: &FrameFeatures, b: &FrameFeatures) -> f64 {
    let n = a.data.len() as f64;
    a.data.iter().zip(&b.data).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>() / n
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..200 {
        let (t, k, n, dim) = (rng.gen_range(1..=8), rng.gen_range(1..=16), rng.gen_range(1..=3), rng.gen_range(1..=6));
        let books = random_books(&mut rng, n, k, dim);
        let data: Vec<f32> = (0..t * dim).map(|_| rng.gen_range(-1.5f32..1.5)).collect();
        let feats = FrameFeatures::from_rows(dim, SAMPLE_RATE, 480, data).map_err(fail)?;
        let codes = books.encode(&feats).map_err(fail)?;
        for f in 0..t {
            let expected = brute_force_codes(&books, feats.frame(f));
            ensure(
                codes.row(f) == expected.as_slice(),
                format!("instance {case} frame {f}: {:?} vs {expected:?}", codes.row(f)),
            )?;
        }
    }
    // Prefix reconstruction on held-out generator output.
    let params = GeneratorParams::default();
    let fb = Filterbank::default();
    let groups = StyleFactors::all();
    let mut seqs = Vec::new();
    for _ in 0..300 {
        let f = groups[rng.gen_range(0..groups.len())];
        let text = params.transcript(&mut rng);
        let wave = params.render(&f, &text, &fb, &mut rng).map_err(fail)?;
        seqs.push(fb.analyze(&wave).map_err(fail)?);
    }
    let (train, held_out) = seqs.split_at(200);
    let books = fit_codebooks(train, DEFAULT_LAYERS, DEFAULT_CODEBOOK_SIZE, 3).map_err(fail)?;
    for (i, s) in held_out.iter().enumerate() {
        let codes = books.encode(s).map_err(fail)?;
        let mut prev = f64::INFINITY;
        for layers in 1..=DEFAULT_LAYERS {
            let e = mse(s, &books.decode_prefix(&codes, layers, SAMPLE_RATE, 480).map_err(fail)?);
            ensure(e <= prev, format!("held-out {i}: layer {layers} mse {e:e} > {prev:e}"))?;
            prev = e;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, format!("took {secs:.1}s"))?;
    Ok(format!("200/200 instances match; prefix MSE monotone on 100 sequences; {secs:.1}s"))
}

// ---------------------------------------------------------------- 2

fn tiny(vocab: usize, dropout: f64) -> TransformerConfig {
    TransformerConfig { layers: 1, heads: 2, d_model: 8, d_ff: 16, dropout, acoustic_vocab: vocab, max_len: 24 }
}

fn jitter(p: &mut ParamSet<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in p.tensors_mut() {
        t.data.iter_mut().for_each(|v| *v += rng.gen_range(-0.5..0.5));
    }
}

/// Worst relative error between analytic and central-difference gradients.
fn worst_gradient_error(params: &ParamSet<f64>, analytic: &ParamSet<f64>, loss: impl Fn(&ParamSet<f64>) -> f64) -> f64 {
    let h = 1e-5;
    let mut p = params.clone();
    let mut worst = 0.0f64;
    for t in 0..p.len() {
        for i in 0..p.get(t).len() {
            let orig = p.get(t).data[i];
            p.get_mut(t).data[i] = orig + h;
            let up = loss(&p);
            p.get_mut(t).data[i] = orig - h;
            let down = loss(&p);
            p.get_mut(t).data[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.get(t).data[i];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-7));
        }
    }
    worst
}

fn criterion_2() -> Outcome {
    let mut sar = SarModel::<f64>::new(tiny(6, 0.0), 9, 11).map_err(fail)?;
    jitter(&mut sar.params, 5);
    let batch = SarBatch {
        examples: vec![
            SarExample { style: vec![4, 5, 6], text: vec![7, 8], codes: vec![0, 3, 1, 4] },
            SarExample { style: vec![6, 4], text: vec![8], codes: vec![2] },
        ],
    };
    let mut g = sar.params.zeros_like();
    sar.loss_and_grad::<ChaCha8Rng>(&batch, &mut g, None).map_err(fail)?;
    let sar_err = worst_gradient_error(&sar.params, &g, |p| {
        let mut m = sar.clone();
        m.params = p.clone();
        m.loss(&batch).unwrap()
    });

    let mut snar = SnarModel::<f64>::new(tiny(6, 0.0), 9, 4, 12).map_err(fail)?;
    jitter(&mut snar.params, 6);
    let codes = AcousticCodeMatrix::from_rows(vec![5; 4], &[vec![0, 1, 2, 3], vec![4, 0, 1, 2], vec![3, 3, 0, 1]])
        .map_err(fail)?;
    let example = SnarExample { text: vec![4, 7, 5], codes };
    let batches: Vec<SnarBatch> = (2..=4).map(|i| SnarBatch::from_example(&example, i).unwrap()).collect();
    let mut g = snar.params.zeros_like();
    snar.loss_and_grad::<ChaCha8Rng>(&batches, &mut g, None).map_err(fail)?;
    let snar_err = worst_gradient_error(&snar.params, &g, |p| {
        let mut m = snar.clone();
        m.params = p.clone();
        m.loss(&batches).unwrap()
    });
    ensure(sar_err < 1e-3 && snar_err < 1e-3, format!("worst relative error sar {sar_err:e}, snar {snar_err:e}"))?;
    Ok(format!("worst relative error sar {sar_err:.2e}, snar {snar_err:.2e}"))
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = TransformerConfig { max_len: 40, acoustic_vocab: 9, ..tiny(9, 0.0) };
    let mut sar = SarModel::<f64>::new(cfg.clone(), 12, 1).map_err(fail)?;
    jitter(&mut sar.params, 2);
    let v = cfg.acoustic_vocab;
    for trial in 0..100 {
        let style: Vec<usize> = (0..rng.gen_range(1..8)).map(|_| rng.gen_range(4..12)).collect();
        let text: Vec<usize> = (0..rng.gen_range(0..6)).map(|_| rng.gen_range(4..12)).collect();
        let len = rng.gen_range(2..=12);
        let codes: Vec<usize> = (0..len).map(|_| rng.gen_range(0..v - 1)).collect();
        let t = rng.gen_range(0..len);
        let mut changed = codes.clone();
        for c in &mut changed[t + 1..] {
            *c = rng.gen_range(0..v - 1);
        }
        if t + 1 < len {
            changed[t + 1] = (codes[t + 1] + 1) % (v - 1);
        }
        let (s, x) = (
            TokenSequence { ids: style, segment: Segment::Style },
            TokenSequence { ids: text, segment: Segment::Text },
        );
        let a = sar.forward(&s, &x, &codes).map_err(fail)?;
        let b = sar.forward(&s, &x, &changed).map_err(fail)?;
        // Row r of the logits predicts code r, seeing codes before r only.
        let visible = (t + 2) * v;
        ensure(a[..visible] == b[..visible], format!("trial {trial}: logits up to position {t} changed"))?;
    }
    // Labels of rows outside the loss mask must not matter.
    let snar = SnarModel::<f64>::new(tiny(9, 0.0), 12, 3, 4).map_err(fail)?;
    for trial in 0..100 {
        let style: Vec<usize> = (0..rng.gen_range(1..6)).map(|_| rng.gen_range(4..12)).collect();
        let text: Vec<usize> = (1..rng.gen_range(2..6)).map(|_| rng.gen_range(4..12)).collect();
        let codes: Vec<usize> = (0..rng.gen_range(1..8)).map(|_| rng.gen_range(0..v - 1)).collect();
        let mut packed = sar.pack(&style, &text, &codes).map_err(fail)?;
        let base = sar.packed_loss(std::slice::from_ref(&packed)).map_err(fail)?;
        scramble_unscored(&mut packed, &mut rng);
        let after = sar.packed_loss(std::slice::from_ref(&packed)).map_err(fail)?;
        ensure(base.to_bits() == after.to_bits(), format!("sar trial {trial}: {base} -> {after}"))?;

        let prefix: Vec<Vec<usize>> = codes.iter().map(|&c| vec![c, (c + 1) % (v - 1)]).collect();
        let targets: Vec<usize> = codes.iter().map(|&c| (c + 2) % (v - 1)).collect();
        let mut packed = snar.pack(&text, &prefix, 3, Some(&targets)).map_err(fail)?;
        let base = snar.packed_loss(std::slice::from_ref(&packed)).map_err(fail)?;
        scramble_unscored(&mut packed, &mut rng);
        let after = snar.packed_loss(std::slice::from_ref(&packed)).map_err(fail)?;
        ensure(base.to_bits() == after.to_bits(), format!("snar trial {trial}: {base} -> {after}"))?;
    }
    Ok("100/100 causality perturbations exact; 200 masked-label perturbations change loss by 0".into())
}

fn scramble_unscored(seq: &mut PackedSequence, rng: &mut ChaCha8Rng) {
    for (label, scored) in seq.labels.iter_mut().zip(&seq.loss_mask) {
        if !scored {
            *label = rng.gen_range(0..1000);
        }
    }
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Outcome {
    let cfg = TrainConfig::default();
    let (at0, at_warm) = (lr_schedule(0, &cfg), lr_schedule(cfg.warmup_steps, &cfg));
    ensure(at0 == 1e-7, format!("lr(0) = {at0:e}"))?;
    ensure(at_warm == 5e-4, format!("lr({}) = {at_warm:e}", cfg.warmup_steps))?;

    let opt = AdamW { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 };
    let mut p = ParamSet::<f64>::default();
    p.add("w", &[2], stylevox_core::nn::Init::Zeros, &mut ChaCha8Rng::seed_from_u64(0));
    p.get_mut(0).data.copy_from_slice(&[1.0, -2.0]);
    let mut state = AdamState::new(&p);
    let grads = [[0.5, 0.1], [-0.3, 0.2], [0.2, -0.4]];
    let lr = 0.1;
    let mut x = [1.0f64, -2.0];
    let (mut m, mut v) = ([0.0f64; 2], [0.0f64; 2]);
    let mut worst = 0.0f64;
    for (step, g) in grads.iter().enumerate() {
        let mut gs = p.zeros_like();
        gs.get_mut(0).data.copy_from_slice(g);
        adamw_step(&mut p, &gs, &mut state, lr, &opt).map_err(fail)?;
        let k = step as i32 + 1;
        for i in 0..2 {
            m[i] = 0.9 * m[i] + 0.1 * g[i];
            v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
            let update = (m[i] / (1.0 - 0.9f64.powi(k))) / ((v[i] / (1.0 - 0.999f64.powi(k))).sqrt() + 1e-8);
            x[i] = x[i] * (1.0 - lr * 0.01) - lr * update;
            worst = worst.max((p.get(0).data[i] - x[i]).abs());
        }
    }
    ensure(worst < 1e-10, format!("AdamW trace deviates by {worst:e}"))?;
    Ok(format!("lr(0)=1e-7, lr(warmup)=5e-4 exactly; AdamW 3-step trace max deviation {worst:.1e}"))
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let params = GeneratorParams::default();
    let fb = Filterbank::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let factors = StyleFactors::new(Gender::Female, Level::High, Level::Normal, Level::Normal, Emotion::Happy);
    let mut feats = Vec::new();
    let mut texts = Vec::new();
    for f in StyleFactors::all().iter().step_by(20).chain([&factors]) {
        let text = params.transcript(&mut rng);
        feats.push(fb.analyze(&params.render(f, &text, &fb, &mut rng).map_err(fail)?).map_err(fail)?);
        texts.push(text);
    }
    let books = fit_codebooks(&feats, DEFAULT_LAYERS, DEFAULT_CODEBOOK_SIZE, 0).map_err(fail)?;
    let target = books.encode(feats.last().unwrap()).map_err(fail)?;
    let transcript = texts.last().unwrap().clone();
    let prompt = "A cheerful young woman speaks with a high pitch at a normal pace and normal volume.";
    let vocab = stylevox_core::text::Vocabulary::build([prompt, transcript.as_str()]).map_err(fail)?;
    let style = vocab.tokenize(prompt, Segment::Style).map_err(fail)?;
    let text = vocab.tokenize(&transcript, Segment::Text).map_err(fail)?;

    let cfg = TransformerConfig {
        layers: 2,
        heads: 2,
        d_model: 32,
        d_ff: 64,
        dropout: 0.0,
        acoustic_vocab: 65,
        max_len: 256,
    };
    let train = TrainConfig {
        peak_lr: 2e-3,
        warmup_steps: 50,
        total_steps: 2000,
        weight_decay: 0.0,
        batch_tokens: 10_000,
        record_wall_time: false,
        ..TrainConfig::default()
    };
    let sar_data = vec![SarExample { style: style.ids.clone(), text: text.ids.clone(), codes: target.column(0) }];
    let mut sar_trainer =
        Trainer::new(SarModel::<f32>::new(cfg.clone(), vocab.len(), 1).map_err(fail)?, train.clone(), &sar_data)
            .map_err(fail)?;
    let mut sar_loss = f64::INFINITY;
    while sar_trainer.state.step < 2000 {
        sar_trainer.step().map_err(fail)?;
        if sar_trainer.state.step % 25 == 0 {
            sar_loss = sar_trainer.valid_loss(&sar_data).map_err(fail)?;
            if sar_loss < 0.05 {
                break;
            }
        }
    }
    let snar_data = vec![SnarExample { text: text.ids.clone(), codes: target.clone() }];
    let mut snar_trainer =
        Trainer::new(SnarModel::<f32>::new(cfg, vocab.len(), DEFAULT_LAYERS, 2).map_err(fail)?, train, &snar_data)
            .map_err(fail)?;
    let mut snar_loss = f64::INFINITY;
    while snar_trainer.state.step < 2000 {
        snar_trainer.step().map_err(fail)?;
        if snar_trainer.state.step % 25 == 0 {
            snar_loss = snar_trainer.valid_loss(&snar_data).map_err(fail)?;
            if snar_loss < 0.05 {
                break;
            }
        }
    }
    let (sar_steps, snar_steps) = (sar_trainer.state.step, snar_trainer.state.step);
    ensure(
        sar_loss < 0.05 && snar_loss < 0.05,
        format!("loss after 2000 steps: sar {sar_loss:.4}, snar {snar_loss:.4}"),
    )?;
    let pipeline =
        Pipeline { sar: &sar_trainer.model, snar: &snar_trainer.model, books: &books, vocab: &vocab, filterbank: &fb };
    let out = pipeline.synthesize(prompt, &transcript, Sampling::greedy(), 400).map_err(fail)?;
    ensure(
        out.codes == target,
        format!("greedy output has {} frames, target {}; codes differ", out.codes.frames(), target.frames()),
    )?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 600.0, format!("took {secs:.0}s"))?;
    Ok(format!(
        "sar {sar_loss:.4} nats/token after {sar_steps} steps, snar {snar_loss:.4} after {snar_steps}; {}x{} codes reproduced exactly; {secs:.0}s",
        target.frames(),
        target.layers()
    ))
}

// ---------------------------------------------------------------- 6

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(fail)?;
    let opts = CorpusOptions { seed: 7, ..CorpusOptions::default() };
    let entries = make_synthetic_corpus(dir.path(), &opts).map_err(fail)?;
    let profile = Profile::demo();
    let fb = Filterbank::default();
    let feats = analyze_entries(&entries, dir.path(), &fb, 1).map_err(fail)?;
    let books = fit_codec(&entries, &feats, profile.codec_layers, profile.codebook_size, profile.seed).map_err(fail)?;
    let codes = encode_all(&books, &feats, 1).map_err(fail)?;
    let pool = read_prompt_sets(&prompt_pool_path(&dir.path().join(MANIFEST_FILE))).map_err(fail)?;
    let vocab = build_vocab_with_pool(&entries, &pool).map_err(fail)?;
    let t_corpus = start.elapsed().as_secs_f64();

    let sar_train =
        sar_train_examples(&entries, &codes, &vocab, &pool, profile.extra_prompts, profile.seed).map_err(fail)?;
    let sar_valid = sar_examples(&entries, &codes, &vocab, Split::Valid).map_err(fail)?;
    let sar = SarModel::<f32>::new(profile.model.clone(), vocab.len(), profile.seed).map_err(fail)?;
    let mut trainer = Trainer::new(sar, profile.train.clone(), &sar_train).map_err(fail)?;
    trainer.run(&sar_valid, &mut std::io::sink(), &mut |_, _| Ok(())).map_err(fail)?;
    let sar = trainer.model;
    let t_sar = start.elapsed().as_secs_f64();

    let snar_train = snar_examples(&entries, &codes, &vocab, Split::Train).map_err(fail)?;
    let snar_valid = snar_examples(&entries, &codes, &vocab, Split::Valid).map_err(fail)?;
    let snar = SnarModel::<f32>::new(profile.model.clone(), vocab.len(), profile.codec_layers, profile.seed + 1)
        .map_err(fail)?;
    let mut trainer = Trainer::new(snar, profile.train.clone(), &snar_train).map_err(fail)?;
    trainer.run(&snar_valid, &mut std::io::sink(), &mut |_, _| Ok(())).map_err(fail)?;
    let snar = trainer.model;
    let t_snar = start.elapsed().as_secs_f64();

    let meter = FactorMeter::from_manifest(&entries, opts.params.clone()).map_err(fail)?;
    let test: Vec<ManifestEntry> = entries.iter().filter(|e| e.split == Split::Test).cloned().collect();
    let pipeline = Pipeline { sar: &sar, snar: &snar, books: &books, vocab: &vocab, filterbank: &fb };
    let (report, _) = evaluate(&test, &pipeline, &meter, Sampling::greedy(), 200, 1).map_err(fail)?;
    let secs = start.elapsed().as_secs_f64();
    for line in report.table().lines() {
        println!("    {line}");
    }
    println!(
        "    timing: corpus+codec {t_corpus:.0}s, sar {:.0}s, snar {:.0}s, eval {:.0}s",
        t_sar - t_corpus,
        t_snar - t_sar,
        secs - t_snar
    );
    let acc = &report.per_factor;
    let short: Vec<String> = ["pitch", "speed", "volume", "gender"]
        .iter()
        .filter(|k| acc[**k] < 0.9)
        .map(|k| format!("{k} {:.1}%", 100.0 * acc[*k]))
        .chain((acc["emotion"] < 0.5).then(|| format!("emotion {:.1}%", 100.0 * acc["emotion"])))
        .collect();
    let summary = format!(
        "gender {:.1}% pitch {:.1}% speed {:.1}% volume {:.1}% emotion {:.1}% on {} test entries; {:.0} min",
        100.0 * acc["gender"],
        100.0 * acc["pitch"],
        100.0 * acc["speed"],
        100.0 * acc["volume"],
        100.0 * acc["emotion"],
        report.n,
        secs / 60.0
    );
    ensure(report.n == 200, format!("{} test entries", report.n))?;
    ensure(short.is_empty(), format!("below bar: {}; {summary}", short.join(", ")))?;
    if secs > 3600.0 {
        println!("    note: runtime {:.0} min exceeds the 60 min target", secs / 60.0);
    }
    Ok(summary)
}

// ---------------------------------------------------------------- 7

fn mock_server(replies: Vec<(u16, String)>) -> (String, thread::JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let handle = thread::spawn(move || {
        for (status, body) in replies {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line.trim().is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
            }
            let mut buf = vec![0; length];
            reader.read_exact(&mut buf).unwrap();
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(reply.as_bytes()).unwrap();
        }
    });
    (url, handle)
}

fn chat(content: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
}

fn criterion_7() -> Outcome {
    let rules = FilterRules::default();
    let grammar = Grammar::default_prompts();
    for (i, f) in StyleFactors::all().iter().enumerate() {
        let set = offline_generate(f, &rules, &grammar, 500, i as u64).map_err(fail)?;
        ensure(set.len() == 500, format!("{f}: {} prompts", set.len()))?;
        let distinct: HashSet<String> = set.prompts.iter().map(|p| dedupe_key(p)).collect();
        ensure(distinct.len() == 500, format!("{f}: {} distinct", distinct.len()))?;
        for p in &set.prompts {
            ensure(rules.accepts(&Candidate::offline(p.clone()), f), format!("{f}: rejected {p:?}"))?;
        }
    }

    let recipe = build_recipe(&StyleFactors::all()[0], &TemplateBank::default(), 0).map_err(fail)?;
    let config = |url: String| LlmConfig {
        endpoint: url,
        backoff_base: Duration::from_millis(5),
        timeout: Duration::from_secs(5),
        max_rounds: 1,
        ..LlmConfig::default()
    };
    let mut passed = 0;
    // 429 twice, then success, with doubling delays.
    let (url, server) = mock_server(vec![(429, "{}".into()), (429, "{}".into()), (200, chat("one\ntwo"))]);
    let r = request_prompts(&recipe, &config(url), 2).map_err(fail)?;
    server.join().unwrap();
    ensure(r.candidates == ["one", "two"] && r.retries.len() == 2, format!("rate-limit case: {r:?}"))?;
    ensure(r.retries[1].delay_ms == 2 * r.retries[0].delay_ms, "backoff does not double")?;
    passed += 1;
    // persistent 5xx exhausts attempts
    let (url, server) = mock_server(vec![(503, "{}".into()); 3]);
    let e = request_prompts(&recipe, &config(url), 2).unwrap_err();
    server.join().unwrap();
    ensure(matches!(e, Error::Llm { attempts: 3, retryable: true, .. }), format!("5xx case: {e:?}"))?;
    passed += 1;
    // auth failure is final
    let (url, server) = mock_server(vec![(401, "{}".into())]);
    let e = request_prompts(&recipe, &config(url), 2).unwrap_err();
    server.join().unwrap();
    ensure(matches!(e, Error::Llm { attempts: 1, retryable: false, .. }), format!("401 case: {e:?}"))?;
    passed += 1;
    // malformed bodies
    for body in ["\u{0}\u{1}binary", "{\"choices\": [{\"message\": {\"content\": 7}}]}", "{\"choices\": []}"] {
        let (url, server) = mock_server(vec![(200, body.into())]);
        let e = request_prompts(&recipe, &config(url), 2).unwrap_err();
        server.join().unwrap();
        ensure(matches!(e, Error::MalformedResponse(_)), format!("malformed case {body:?}: {e:?}"))?;
        passed += 1;
    }
    Ok(format!("432 groups x 500 distinct accepted prompts; {passed}/6 mocked client cases"))
}

// ---------------------------------------------------------------- 8

fn build_once(dir: &Path, rows: &[SourceRow], out: &Path) -> Result<Vec<u8>, String> {
    let opts = IngestOptions { source_dir: dir.to_path_buf(), converted_dir: dir.join("converted"), jobs: 1 };
    let mut entries = ingest(rows, &opts).map_err(fail)?;
    assign_levels(&mut entries, PitchBinning::PerGender).map_err(fail)?;
    let groups: Vec<StyleFactors> =
        entries.iter().map(|e| e.factors()).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    let sets = build_prompt_sets(&groups, 20, PromptSource::Offline, None, 8).map_err(fail)?;
    attach_prompts(&mut entries, &sets, 8).map_err(fail)?;
    split(&mut entries, 200, 200, 8).map_err(fail)?;
    write_manifest(out, &entries).map_err(fail)?;
    std::fs::read(out).map_err(fail)
}

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().map_err(fail)?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut rows = Vec::new();
    for i in 0..480 {
        let hz = if i % 2 == 0 { rng.gen_range(90.0..150.0) } else { rng.gen_range(180.0..280.0) };
        let amp = rng.gen_range(0.02..0.3);
        let secs = rng.gen_range(0.2..0.4);
        let n = (secs * SAMPLE_RATE as f64) as usize;
        let wave: Vec<f32> = (0..n)
            .map(|k| (amp * (2.0 * std::f64::consts::PI * hz * k as f64 / SAMPLE_RATE as f64).sin()) as f32)
            .collect();
        let name = format!("u{i:03}.wav");
        write_wav(&dir.path().join(&name), &wave, SAMPLE_RATE).map_err(fail)?;
        let emotion = Emotion::ALL[i % 8];
        rows.push(SourceRow {
            id: format!("u{i:03}"),
            audio: name,
            text: Some("ba da ka".into()),
            gender: None,
            emotion: Some(emotion),
            alignment: None,
        });
    }
    let first = build_once(dir.path(), &rows, &dir.path().join("a.jsonl"))?;
    let second = build_once(dir.path(), &rows, &dir.path().join("b.jsonl"))?;
    ensure(first == second, "manifests differ between runs")?;
    let entries = read_manifest(&dir.path().join("a.jsonl")).map_err(fail)?;
    let mut by_split: BTreeMap<&str, HashSet<&str>> = BTreeMap::new();
    for e in &entries {
        let s = match e.split {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        };
        by_split.entry(s).or_default().insert(e.id.as_str());
    }
    let total: usize = by_split.values().map(HashSet::len).sum();
    let ids: HashSet<&str> = entries.iter().map(|e| e.id.as_str()).collect();
    ensure(total == ids.len() && ids.len() == 480, "splits do not partition the manifest")?;
    ensure(by_split["valid"].len() == 200 && by_split["test"].len() == 200, "valid/test counts differ from 200/200")?;
    Ok(format!("byte-identical rerun ({} bytes); train/valid/test = {}/200/200", first.len(), by_split["train"].len()))
}

// ---------------------------------------------------------------- 9

/// Percentile at `num / den` by linear interpolation between closest ranks.
fn percentile(values: &[f64], num: usize, den: usize) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let i = (v.len() - 1) * num / den;
    let frac = ((v.len() - 1) * num % den) as f64 / den as f64;
    if frac == 0.0 {
        v[i]
    } else {
        v[i] * (1.0 - frac) + v[i + 1] * frac
    }
}

fn criterion_9() -> Outcome {
    let sr = SAMPLE_RATE;
    let mut worst_f0 = 0.0f64;
    for hz in (80..=400).step_by(5) {
        let hz = hz as f64;
        let wave: Vec<f32> = (0..sr as usize / 2)
            .map(|k| (0.3 * (2.0 * std::f64::consts::PI * hz * k as f64 / sr as f64).sin()) as f32)
            .collect();
        let f0 = mean_voiced(&estimate_f0(&wave, sr, DEFAULT_FRAME_MS, DEFAULT_HOP_MS).map_err(fail)?);
        let rel = (f0 - hz).abs() / hz;
        worst_f0 = worst_f0.max(rel);
        ensure(rel < 0.02, format!("{hz} Hz tone measured as {f0:.2} Hz"))?;
    }

    let n = 24_000;
    let mut worst_rms = 0.0f64;
    for amp in [0.01, 0.1, 0.5, 0.9] {
        let sine: Vec<f32> =
            (0..n).map(|k| (amp * (2.0 * std::f64::consts::PI * 100.0 * k as f64 / sr as f64).sin()) as f32).collect();
        let square: Vec<f32> = (0..n).map(|k| if (k / 120) % 2 == 0 { amp as f32 } else { -amp as f32 }).collect();
        let dc = vec![amp as f32; n];
        for (wave, expected) in [(sine, amp / 2f64.sqrt()), (square, amp), (dc, amp)] {
            let rel = (rms_energy(&wave).map_err(fail)? - expected).abs() / expected;
            worst_rms = worst_rms.max(rel);
            ensure(rel < 1e-3, format!("rms off by {rel:e} at amplitude {amp}"))?;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for set in 0..1000 {
        let len = rng.gen_range(3..200);
        let values: Vec<f64> = (0..len)
            .map(|_| if rng.gen_bool(0.2) { rng.gen_range(0..5) as f64 } else { rng.gen_range(-50.0..50.0) })
            .collect();
        let bins = LevelBins::fit(&values).map_err(fail)?;
        let (lo, hi) = (percentile(&values, 1, 3), percentile(&values, 2, 3));
        for &x in &values {
            let expected = if x < lo {
                Level::Low
            } else if x > hi {
                Level::High
            } else {
                Level::Normal
            };
            ensure(
                bins.classify(x) == expected,
                format!("set {set}: {x} -> {:?}, expected {expected:?}", bins.classify(x)),
            )?;
        }
    }
    Ok(format!(
        "f0 worst error {:.3}% over 80-400 Hz; rms worst {worst_rms:.1e}; 1000 binning sets agree",
        100.0 * worst_f0
    ))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("rvq greedy encode and prefix reconstruction", criterion_1),
        ("gradient checks", criterion_2),
        ("causality and loss masking", criterion_3),
        ("schedule and optimizer fidelity", criterion_4),
        ("overfit one example", criterion_5),
        ("end-to-end controllability", criterion_6),
        ("prompt forge", criterion_7),
        ("dataset builder", criterion_8),
        ("feature extraction", criterion_9),
    ];
    let only: Option<Vec<usize>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let number = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&number)) {
            println!("criterion {number} ({name}): SKIPPED");
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {number} ({name}): PASS [{secs:.1}s] {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {number} ({name}): FAIL [{secs:.1}s] {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
