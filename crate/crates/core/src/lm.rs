//! Shared machinery of the two codec language models: a transformer stack
//! over rows built by summing embedding-table lookups, with a linear head
//! applied to the rows that carry a loss.

use rand::Rng;

use crate::nn::layers::{add_in_place, cross_entropy, Linear};
use crate::nn::{ParamId, ParamSet, Pass, Scalar, Stack};

/// One input row: the embedding lookups `(table, row)` whose sum forms it.
pub type RowInputs = Vec<(ParamId, usize)>;

/// A fully laid-out training or inference sequence.
#[derive(Debug, Clone, Default)]
pub struct PackedSequence {
    pub rows: Vec<RowInputs>,
    /// Target id per row; only read where `loss_mask` is set.
    pub labels: Vec<usize>,
    /// Rows whose logits are produced and scored.
    pub loss_mask: Vec<bool>,
}

impl PackedSequence {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, inputs: RowInputs, label: usize, scored: bool) {
        self.rows.push(inputs);
        self.labels.push(label);
        self.loss_mask.push(scored);
    }

    pub fn scored_rows(&self) -> usize {
        self.loss_mask.iter().filter(|&&m| m).count()
    }
}

pub(crate) struct RunOutput<S> {
    /// Summed cross-entropy over scored rows (0 when labels are not scored).
    pub loss_sum: f64,
    /// `[scored_rows, vocab]` logits.
    pub logits: Vec<S>,
}

#[derive(Debug, Clone)]
pub(crate) struct Core {
    pub stack: Stack,
    pub head: Linear,
    pub causal: bool,
}

impl Core {
    pub fn d_model(&self) -> usize {
        self.stack.d_model()
    }

    pub fn vocab(&self) -> usize {
        self.head.out
    }

    /// Forward pass; with `grads` set, also backpropagates `weight * loss_sum`.
    pub fn run<S: Scalar, R: Rng>(
        &self,
        p: &ParamSet<S>,
        seq: &PackedSequence,
        score: bool,
        grads: Option<(&mut ParamSet<S>, S)>,
        dropout: Option<(f64, &mut R)>,
    ) -> RunOutput<S> {
        let d = self.d_model();
        let len = seq.len();
        let mut x = vec![S::ZERO; len * d];
        for (r, inputs) in seq.rows.iter().enumerate() {
            let row = &mut x[r * d..(r + 1) * d];
            for &(table, id) in inputs {
                add_in_place(row, &p.get(table).data[id * d..(id + 1) * d]);
            }
        }
        let mut pass = Pass { causal: self.causal, dropout };
        let (hidden, cache) = self.stack.forward(p, x, len, &mut pass);
        let scored: Vec<usize> = (0..len).filter(|&r| seq.loss_mask[r]).collect();
        let mut gathered = Vec::with_capacity(scored.len() * d);
        for &r in &scored {
            gathered.extend_from_slice(&hidden[r * d..(r + 1) * d]);
        }
        let logits = self.head.forward(p, &gathered, scored.len());
        let vocab = self.vocab();
        let targets: Vec<Option<usize>> = scored.iter().map(|&r| score.then_some(seq.labels[r])).collect();
        match grads {
            None => {
                let loss_sum = if score { cross_entropy(&logits, vocab, &targets, S::ONE, None) } else { 0.0 };
                RunOutput { loss_sum, logits }
            }
            Some((g, weight)) => {
                let mut dlogits = Vec::new();
                let loss_sum = cross_entropy(&logits, vocab, &targets, weight, Some(&mut dlogits));
                let dgathered = self.head.backward(p, g, &gathered, &dlogits, scored.len());
                let mut dhidden = vec![S::ZERO; len * d];
                for (k, &r) in scored.iter().enumerate() {
                    dhidden[r * d..(r + 1) * d].copy_from_slice(&dgathered[k * d..(k + 1) * d]);
                }
                let dx = self.stack.backward(p, g, cache, &dhidden);
                for (r, inputs) in seq.rows.iter().enumerate() {
                    let drow = &dx[r * d..(r + 1) * d];
                    for &(table, id) in inputs {
                        add_in_place(&mut g.get_mut(table).data[id * d..(id + 1) * d], drow);
                    }
                }
                RunOutput { loss_sum, logits }
            }
        }
    }
}
