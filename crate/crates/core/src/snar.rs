//! Non-autoregressive codec language model for layers 2..n. Every frame of
//! the target layer is predicted in parallel from the transcript and the
//! codes of the layers below it; there is no style-prompt input.
//!
//! Sequence layout: `[text..., <sep>, frame_1, ..., frame_T]` with
//! bidirectional attention. A frame row is the sum of one embedding per
//! available lower layer plus an embedding of the target layer index.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::TransformerConfig;
use crate::lm::{Core, PackedSequence};
use crate::nn::layers::Linear;
use crate::nn::{Init, ParamId, ParamSet, Scalar, Stack};
use crate::rvq::AcousticCodeMatrix;
use crate::sar::argmax;
use crate::text::{Segment, TokenSequence, SEP_ID};
use crate::{Error, Result};

/// A full training example: transcript ids and the complete `T × n` codes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnarExample {
    pub text: Vec<usize>,
    pub codes: AcousticCodeMatrix,
}

/// One example specialised to a single target layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnarBatch {
    pub text: Vec<usize>,
    /// `T` rows of `layer_index - 1` codes.
    pub prefix: Vec<Vec<usize>>,
    /// Target layer, 1-based, in `2..=n`.
    pub layer_index: usize,
    pub targets: Vec<usize>,
}

impl SnarBatch {
    pub fn from_example(example: &SnarExample, layer_index: usize) -> Result<Self> {
        let n = example.codes.layers();
        if layer_index < 2 || layer_index > n {
            return Err(Error::BadLayerIndex { index: layer_index, max: n });
        }
        let prefix = (0..example.codes.frames()).map(|t| example.codes.row(t)[..layer_index - 1].to_vec()).collect();
        Ok(Self { text: example.text.clone(), prefix, layer_index, targets: example.codes.column(layer_index - 1) })
    }
}

/// Draws the target layer uniformly from `2..=n`.
pub fn sample_layer<R: Rng>(n: usize, rng: &mut R) -> Result<usize> {
    if n < 2 {
        return Err(Error::DegenerateLayers(n));
    }
    Ok(rng.gen_range(2..=n))
}

#[derive(Debug, Clone)]
struct Layout {
    token_emb: ParamId,
    /// Embedding table of layer `j + 1` codes.
    code_embs: Vec<ParamId>,
    layer_emb: ParamId,
    pos_emb: ParamId,
    seg_emb: ParamId,
}

#[derive(Debug, Clone)]
pub struct SnarModel<S> {
    pub config: TransformerConfig,
    pub text_vocab: usize,
    /// Number of codec layers `n`.
    pub codec_layers: usize,
    pub params: ParamSet<S>,
    layout: Layout,
    core: Core,
}

impl<S: Scalar> SnarModel<S> {
    pub fn new(config: TransformerConfig, text_vocab: usize, codec_layers: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if codec_layers < 2 {
            return Err(Error::DegenerateLayers(codec_layers));
        }
        if text_vocab <= SEP_ID {
            return Err(Error::InvalidConfig(format!("text vocabulary of {text_vocab} lacks specials")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::default();
        let d = config.d_model;
        let k = config.codebook_size();
        let std = Init::Normal(0.02);
        let token_emb = p.add("snar.token_emb", &[text_vocab, d], std, &mut rng);
        let code_embs =
            (1..codec_layers).map(|j| p.add(format!("snar.code_emb.{j}"), &[k, d], std, &mut rng)).collect();
        let layout = Layout {
            token_emb,
            code_embs,
            layer_emb: p.add("snar.layer_emb", &[codec_layers - 1, d], std, &mut rng),
            pos_emb: p.add("snar.pos_emb", &[config.max_len, d], std, &mut rng),
            seg_emb: p.add("snar.seg_emb", &[3, d], std, &mut rng),
        };
        let stack = Stack::new(&mut p, "snar", config.layers, d, config.heads, config.d_ff, &mut rng);
        let head = Linear::new(&mut p, "snar.head", d, k, 0.02, &mut rng);
        Ok(Self { config, text_vocab, codec_layers, params: p, layout, core: Core { stack, head, causal: false } })
    }

    pub fn codebook_size(&self) -> usize {
        self.config.codebook_size()
    }

    fn check(&self, text: &[usize], prefix: &[Vec<usize>], layer_index: usize) -> Result<()> {
        if layer_index < 2 || layer_index > self.codec_layers {
            return Err(Error::BadLayerIndex { index: layer_index, max: self.codec_layers });
        }
        if let Some(&id) = text.iter().find(|&&id| id >= self.text_vocab) {
            return Err(Error::InvalidId { id, size: self.text_vocab });
        }
        let k = self.codebook_size();
        for (t, row) in prefix.iter().enumerate() {
            if row.len() != layer_index - 1 {
                return Err(Error::ShapeMismatch(format!(
                    "frame {t} has {} prefix codes, layer {layer_index} needs {}",
                    row.len(),
                    layer_index - 1
                )));
            }
            if let Some(&id) = row.iter().find(|&&c| c >= k) {
                return Err(Error::InvalidId { id, size: k });
            }
        }
        let len = text.len() + 1 + prefix.len();
        if len > self.config.max_len {
            return Err(Error::SequenceTooLong { len, max: self.config.max_len });
        }
        Ok(())
    }

    /// Lays out one example; frame rows are scored against `targets` when given.
    pub fn pack(
        &self,
        text: &[usize],
        prefix: &[Vec<usize>],
        layer_index: usize,
        targets: Option<&[usize]>,
    ) -> Result<PackedSequence> {
        self.check(text, prefix, layer_index)?;
        if let Some(t) = targets {
            if t.len() != prefix.len() {
                return Err(Error::ShapeMismatch(format!("{} targets for {} frames", t.len(), prefix.len())));
            }
            let k = self.codebook_size();
            if let Some(&id) = t.iter().find(|&&c| c >= k) {
                return Err(Error::InvalidId { id, size: k });
            }
        }
        let l = &self.layout;
        let mut seq = PackedSequence::default();
        for (i, &id) in text.iter().enumerate() {
            seq.push(vec![(l.token_emb, id), (l.seg_emb, Segment::Text.index()), (l.pos_emb, i)], 0, false);
        }
        seq.push(vec![(l.token_emb, SEP_ID), (l.seg_emb, Segment::Acoustic.index()), (l.pos_emb, 0)], 0, false);
        for (t, codes) in prefix.iter().enumerate() {
            let mut row: Vec<(ParamId, usize)> = codes.iter().enumerate().map(|(j, &c)| (l.code_embs[j], c)).collect();
            row.push((l.layer_emb, layer_index - 2));
            row.push((l.seg_emb, Segment::Acoustic.index()));
            row.push((l.pos_emb, t + 1));
            seq.push(row, targets.map_or(0, |tg| tg[t]), true);
        }
        Ok(seq)
    }

    /// Logits `T × codebook_size` for layer `layer_index`. Dropout is off.
    pub fn forward(&self, text: &TokenSequence, prefix: &[Vec<usize>], layer_index: usize) -> Result<Vec<S>> {
        let seq = self.pack(&text.ids, prefix, layer_index, None)?;
        Ok(self.core.run::<S, ChaCha8Rng>(&self.params, &seq, false, None, None).logits)
    }

    fn pack_batches(&self, batches: &[SnarBatch]) -> Result<Vec<PackedSequence>> {
        if batches.is_empty() {
            return Err(Error::EmptyBatch);
        }
        batches.iter().map(|b| self.pack(&b.text, &b.prefix, b.layer_index, Some(&b.targets))).collect()
    }

    /// Mean per-frame cross-entropy; no dropout.
    pub fn loss(&self, batches: &[SnarBatch]) -> Result<f64> {
        let seqs = self.pack_batches(batches)?;
        self.packed_loss(&seqs)
    }

    pub fn packed_loss(&self, seqs: &[PackedSequence]) -> Result<f64> {
        let count: usize = seqs.iter().map(PackedSequence::scored_rows).sum();
        if count == 0 {
            return Err(Error::EmptyBatch);
        }
        let total: f64 =
            seqs.iter().map(|s| self.core.run::<S, ChaCha8Rng>(&self.params, s, true, None, None).loss_sum).sum();
        Ok(total / count as f64)
    }

    pub fn loss_and_grad<R: Rng>(
        &self,
        batches: &[SnarBatch],
        grads: &mut ParamSet<S>,
        mut dropout_rng: Option<&mut R>,
    ) -> Result<f64> {
        let seqs = self.pack_batches(batches)?;
        let count: usize = seqs.iter().map(PackedSequence::scored_rows).sum();
        if count == 0 {
            return Err(Error::EmptyBatch);
        }
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

    /// Draws the target layer, builds the per-layer batch and returns its
    /// mean cross-entropy over all frames.
    pub fn training_step<R: Rng>(&self, example: &SnarExample, rng: &mut R) -> Result<(usize, f64)> {
        let layer = sample_layer(example.codes.layers(), rng)?;
        let batch = SnarBatch::from_example(example, layer)?;
        Ok((layer, self.loss(std::slice::from_ref(&batch))?))
    }

    /// Fills layers `2..=n` greedily, one layer at a time.
    pub fn predict_all(
        &self,
        text: &TokenSequence,
        layer1: &[usize],
        codebook_sizes: &[usize],
    ) -> Result<AcousticCodeMatrix> {
        let k = self.codebook_size();
        let mut rows: Vec<Vec<usize>> = layer1.iter().map(|&c| vec![c]).collect();
        for layer in 2..=self.codec_layers {
            if rows.is_empty() {
                break;
            }
            let logits = self.forward(text, &rows, layer)?;
            for (t, row) in rows.iter_mut().enumerate() {
                row.push(argmax(&logits[t * k..(t + 1) * k]));
            }
        }
        let mut m = AcousticCodeMatrix::new(self.codec_layers, codebook_sizes.to_vec())?;
        for row in rows {
            m.push_frame(&row)?;
        }
        Ok(m)
    }
}
