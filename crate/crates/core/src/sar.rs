//! Style-prompted autoregressive codec language model: predicts the first
//! codec layer token by token from the style prompt and transcript, and
//! terminates by emitting `<eos>`.
//!
//! Sequence layout: `[style..., <sep>, text..., <sep>, a_1, ..., a_T]`. Logits
//! are produced from the second `<sep>` onwards, so row `t` predicts `a_{t+1}`
//! and the last row predicts `<eos>`. Positions restart at 0 in every segment.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::TransformerConfig;
use crate::lm::{Core, PackedSequence};
use crate::nn::layers::Linear;
use crate::nn::{Init, ParamId, ParamSet, Scalar, Stack};
use crate::text::{Segment, TokenSequence, SEP_ID};
use crate::{Error, Result};

/// One training example: style prompt ids, transcript ids, layer-1 codes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SarExample {
    pub style: Vec<usize>,
    pub text: Vec<usize>,
    pub codes: Vec<usize>,
}

/// Ragged batch; every example is laid out on its own, so padding never exists.
#[derive(Debug, Clone, Default)]
pub struct SarBatch {
    pub examples: Vec<SarExample>,
}

impl SarBatch {
    pub fn lengths(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.codes.len()).collect()
    }

    /// Number of scored positions: every code plus one `<eos>` per example.
    pub fn target_count(&self) -> usize {
        self.examples.iter().map(|e| e.codes.len() + 1).sum()
    }
}

/// Decoding controls. `temperature <= 0` selects greedy argmax.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub temperature: f64,
    pub top_k: usize,
    pub seed: u64,
}

impl Default for Sampling {
    fn default() -> Self {
        Self { temperature: 1.0, top_k: 16, seed: 0 }
    }
}

impl Sampling {
    pub fn greedy() -> Self {
        Self { temperature: 0.0, top_k: 1, seed: 0 }
    }
}

#[derive(Debug, Clone)]
struct Layout {
    token_emb: ParamId,
    code_emb: ParamId,
    pos_emb: ParamId,
    seg_emb: ParamId,
}

#[derive(Debug, Clone)]
pub struct SarModel<S> {
    pub config: TransformerConfig,
    pub text_vocab: usize,
    pub params: ParamSet<S>,
    layout: Layout,
    core: Core,
}

impl<S: Scalar> SarModel<S> {
    pub fn new(config: TransformerConfig, text_vocab: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if text_vocab <= SEP_ID {
            return Err(Error::InvalidConfig(format!("text vocabulary of {text_vocab} lacks specials")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::default();
        let d = config.d_model;
        let std = Init::Normal(0.02);
        let layout = Layout {
            token_emb: p.add("sar.token_emb", &[text_vocab, d], std, &mut rng),
            code_emb: p.add("sar.code_emb", &[config.codebook_size(), d], std, &mut rng),
            pos_emb: p.add("sar.pos_emb", &[config.max_len, d], std, &mut rng),
            seg_emb: p.add("sar.seg_emb", &[3, d], std, &mut rng),
        };
        let stack = Stack::new(&mut p, "sar", config.layers, d, config.heads, config.d_ff, &mut rng);
        let head = Linear::new(&mut p, "sar.head", d, config.acoustic_vocab, 0.02, &mut rng);
        Ok(Self { config, text_vocab, params: p, layout, core: Core { stack, head, causal: true } })
    }

    pub fn eos(&self) -> usize {
        self.config.eos()
    }

    fn check(&self, style: &[usize], text: &[usize], codes: &[usize]) -> Result<()> {
        for &id in style.iter().chain(text) {
            if id >= self.text_vocab {
                return Err(Error::InvalidId { id, size: self.text_vocab });
            }
        }
        let k = self.config.codebook_size();
        if let Some(&id) = codes.iter().find(|&&c| c >= k) {
            return Err(Error::InvalidId { id, size: k });
        }
        let len = style.len() + text.len() + codes.len() + 2;
        if len > self.config.max_len {
            return Err(Error::SequenceTooLong { len, max: self.config.max_len });
        }
        Ok(())
    }

    /// Lays out an example with next-token labels everywhere; only the
    /// acoustic rows (second `<sep>` onwards) are scored.
    pub fn pack(&self, style: &[usize], text: &[usize], codes: &[usize]) -> Result<PackedSequence> {
        self.check(style, text, codes)?;
        let l = &self.layout;
        let mut seq = PackedSequence::default();
        let seg = |s: Segment| (l.seg_emb, s.index());
        let mut stream: Vec<(usize, Segment, usize)> = Vec::new();
        for (i, &id) in style.iter().enumerate() {
            stream.push((id, Segment::Style, i));
        }
        stream.push((SEP_ID, Segment::Text, 0));
        for (i, &id) in text.iter().enumerate() {
            stream.push((id, Segment::Text, i + 1));
        }
        let n_text = stream.len();
        for (i, &(id, segment, pos)) in stream.iter().enumerate() {
            let label = stream.get(i + 1).map_or(SEP_ID, |next| next.0);
            seq.push(vec![(l.token_emb, id), (l.pos_emb, pos), seg(segment)], label, false);
        }
        debug_assert_eq!(n_text, seq.len());
        let eos = self.eos();
        seq.push(
            vec![(l.token_emb, SEP_ID), (l.pos_emb, 0), seg(Segment::Acoustic)],
            codes.first().copied().unwrap_or(eos),
            true,
        );
        for (t, &c) in codes.iter().enumerate() {
            seq.push(
                vec![(l.code_emb, c), (l.pos_emb, t + 1), seg(Segment::Acoustic)],
                codes.get(t + 1).copied().unwrap_or(eos),
                true,
            );
        }
        Ok(seq)
    }

    /// Logits `(prefix.len() + 1) × acoustic_vocab`, row-major. Dropout is off.
    pub fn forward(&self, style: &TokenSequence, text: &TokenSequence, prefix: &[usize]) -> Result<Vec<S>> {
        let seq = self.pack(&style.ids, &text.ids, prefix)?;
        Ok(self.core.run::<S, ChaCha8Rng>(&self.params, &seq, false, None, None).logits)
    }

    /// Mean cross-entropy per scored token of packed sequences.
    pub fn packed_loss(&self, seqs: &[PackedSequence]) -> Result<f64> {
        let count: usize = seqs.iter().map(PackedSequence::scored_rows).sum();
        if count == 0 {
            return Err(Error::EmptyBatch);
        }
        let total: f64 =
            seqs.iter().map(|s| self.core.run::<S, ChaCha8Rng>(&self.params, s, true, None, None).loss_sum).sum();
        Ok(total / count as f64)
    }

    /// Mean cross-entropy over acoustic targets and `<eos>`; no dropout.
    pub fn loss(&self, batch: &SarBatch) -> Result<f64> {
        let seqs = self.pack_batch(batch)?;
        self.packed_loss(&seqs)
    }

    fn pack_batch(&self, batch: &SarBatch) -> Result<Vec<PackedSequence>> {
        if batch.examples.is_empty() {
            return Err(Error::EmptyBatch);
        }
        batch.examples.iter().map(|e| self.pack(&e.style, &e.text, &e.codes)).collect()
    }

    /// Mean loss of the batch; accumulates its gradient into `grads`.
    pub fn loss_and_grad<R: Rng>(
        &self,
        batch: &SarBatch,
        grads: &mut ParamSet<S>,
        mut dropout_rng: Option<&mut R>,
    ) -> Result<f64> {
        let seqs = self.pack_batch(batch)?;
        let count: usize = seqs.iter().map(PackedSequence::scored_rows).sum();
        let weight = S::from_f64(1.0 / count as f64);
        let p = self.config.dropout;
        let mut total = 0.0;
        for seq in &seqs {
            let dropout = match dropout_rng.as_deref_mut() {
                Some(rng) if p > 0.0 => Some((p, rng)),
                _ => None,
            };
            total += self.core.run(&self.params, seq, true, Some((&mut *grads, weight)), dropout).loss_sum;
        }
        Ok(total / count as f64)
    }

    /// Autoregressive decoding of the first codec layer. Stops when `<eos>` is
    /// drawn (not included in the output), after `max_len` codes, or when the
    /// sequence would exceed the model's context.
    pub fn generate(
        &self,
        style: &TokenSequence,
        text: &TokenSequence,
        sampling: Sampling,
        max_len: usize,
    ) -> Result<Vec<usize>> {
        self.check(&style.ids, &text.ids, &[])?;
        let room = self.config.max_len - style.len() - text.len() - 2;
        let limit = max_len.min(room);
        let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed);
        let vocab = self.config.acoustic_vocab;
        let mut codes = Vec::new();
        while codes.len() < limit {
            let seq = self.pack(&style.ids, &text.ids, &codes)?;
            let logits = self.core.run::<S, ChaCha8Rng>(&self.params, &seq, false, None, None).logits;
            let last = &logits[logits.len() - vocab..];
            let next = sample(last, sampling, &mut rng);
            if next == self.eos() {
                break;
            }
            codes.push(next);
        }
        Ok(codes)
    }
}

/// Draws one id from a logit row under `sampling`.
pub(crate) fn sample<S: Scalar, R: Rng>(logits: &[S], sampling: Sampling, rng: &mut R) -> usize {
    if sampling.temperature <= 0.0 || sampling.top_k == 1 {
        return argmax(logits);
    }
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| logits[b].partial_cmp(&logits[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    let k = if sampling.top_k == 0 { order.len() } else { sampling.top_k.min(order.len()) };
    let top = &order[..k];
    let mx = logits[top[0]].to_f64();
    let weights: Vec<f64> = top.iter().map(|&i| ((logits[i].to_f64() - mx) / sampling.temperature).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (&i, w) in top.iter().zip(&weights) {
        if u < *w {
            return i;
        }
        u -= w;
    }
    top[k - 1]
}

/// Index of the largest value; ties resolve to the lowest index.
pub(crate) fn argmax<S: Scalar>(row: &[S]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}
