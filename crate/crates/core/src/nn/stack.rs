use rand::Rng;

use super::layers::{
    add_in_place, attention_backward, attention_forward, dropout_mask, gelu, gelu_backward, mul_in_place, LayerNorm,
    LayerNormCache, Linear,
};
use super::params::ParamSet;
use super::scalar::Scalar;

#[derive(Debug, Clone)]
struct Block {
    ln1: LayerNorm,
    qkv: Linear,
    proj: Linear,
    ln2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
}

/// Pre-norm transformer stack followed by a final layer norm.
#[derive(Debug, Clone)]
pub struct Stack {
    blocks: Vec<Block>,
    ln_f: LayerNorm,
    d_model: usize,
    heads: usize,
}

struct BlockCache<S> {
    z1: Vec<S>,
    ln1: LayerNormCache<S>,
    qkv: Vec<S>,
    ctx: Vec<S>,
    probs: Vec<S>,
    drop1: Option<Vec<S>>,
    z2: Vec<S>,
    ln2: LayerNormCache<S>,
    u: Vec<S>,
    act: Vec<S>,
    drop2: Option<Vec<S>>,
}

/// Activations kept from a forward pass for the matching backward pass.
pub struct StackCache<S> {
    rows: usize,
    blocks: Vec<BlockCache<S>>,
    ln_f: LayerNormCache<S>,
}

/// Runtime options for one forward pass.
pub struct Pass<'a, R> {
    pub causal: bool,
    /// Dropout probability and the generator drawing its masks; `None` disables dropout.
    pub dropout: Option<(f64, &'a mut R)>,
}

impl Stack {
    pub fn new<S: Scalar, R: Rng>(
        p: &mut ParamSet<S>,
        prefix: &str,
        layers: usize,
        d_model: usize,
        heads: usize,
        d_ff: usize,
        rng: &mut R,
    ) -> Self {
        let std = 0.02;
        let resid_std = std / ((2 * layers.max(1)) as f64).sqrt();
        let blocks = (0..layers)
            .map(|i| {
                let n = format!("{prefix}.blocks.{i}");
                Block {
                    ln1: LayerNorm::new(p, &format!("{n}.ln1"), d_model, rng),
                    qkv: Linear::new(p, &format!("{n}.attn.qkv"), d_model, 3 * d_model, std, rng),
                    proj: Linear::new(p, &format!("{n}.attn.proj"), d_model, d_model, resid_std, rng),
                    ln2: LayerNorm::new(p, &format!("{n}.ln2"), d_model, rng),
                    ff1: Linear::new(p, &format!("{n}.ff.fc1"), d_model, d_ff, std, rng),
                    ff2: Linear::new(p, &format!("{n}.ff.fc2"), d_ff, d_model, resid_std, rng),
                }
            })
            .collect();
        let ln_f = LayerNorm::new(p, &format!("{prefix}.ln_f"), d_model, rng);
        Self { blocks, ln_f, d_model, heads }
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    pub fn forward<S: Scalar, R: Rng>(
        &self,
        p: &ParamSet<S>,
        mut x: Vec<S>,
        rows: usize,
        pass: &mut Pass<'_, R>,
    ) -> (Vec<S>, StackCache<S>) {
        let d = self.d_model;
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (z1, ln1) = b.ln1.forward(p, &x, rows);
            let qkv = b.qkv.forward(p, &z1, rows);
            let (ctx, probs) = attention_forward(&qkv, rows, d, self.heads, pass.causal);
            let mut a = b.proj.forward(p, &ctx, rows);
            let drop1 = pass.dropout.as_mut().map(|(prob, rng)| dropout_mask::<S, R>(rows * d, *prob, rng));
            if let Some(m) = &drop1 {
                mul_in_place(&mut a, m);
            }
            let mut h = x;
            add_in_place(&mut h, &a);
            let (z2, ln2) = b.ln2.forward(p, &h, rows);
            let u = b.ff1.forward(p, &z2, rows);
            let act = gelu(&u);
            let mut f = b.ff2.forward(p, &act, rows);
            let drop2 = pass.dropout.as_mut().map(|(prob, rng)| dropout_mask::<S, R>(rows * d, *prob, rng));
            if let Some(m) = &drop2 {
                mul_in_place(&mut f, m);
            }
            let mut y = h;
            add_in_place(&mut y, &f);
            caches.push(BlockCache { z1, ln1, qkv, ctx, probs, drop1, z2, ln2, u, act, drop2 });
            x = y;
        }
        let (out, ln_f) = self.ln_f.forward(p, &x, rows);
        (out, StackCache { rows, blocks: caches, ln_f })
    }

    /// Accumulates parameter gradients into `g` and returns the gradient
    /// with respect to the stack input.
    pub fn backward<S: Scalar>(&self, p: &ParamSet<S>, g: &mut ParamSet<S>, cache: StackCache<S>, dy: &[S]) -> Vec<S> {
        let rows = cache.rows;
        let d = self.d_model;
        let mut dx = self.ln_f.backward(p, g, &cache.ln_f, dy, rows);
        for (b, c) in self.blocks.iter().zip(cache.blocks).rev() {
            // y = h + drop(ff2(gelu(ff1(ln2(h)))))
            let mut df = dx.clone();
            if let Some(m) = &c.drop2 {
                mul_in_place(&mut df, m);
            }
            let dact = b.ff2.backward(p, g, &c.act, &df, rows);
            let du = gelu_backward(&c.u, &dact);
            let dz2 = b.ff1.backward(p, g, &c.z2, &du, rows);
            let mut dh = dx;
            add_in_place(&mut dh, &b.ln2.backward(p, g, &c.ln2, &dz2, rows));
            // h = x + drop(proj(attn(qkv(ln1(x)))))
            let mut da = dh.clone();
            if let Some(m) = &c.drop1 {
                mul_in_place(&mut da, m);
            }
            let dctx = b.proj.backward(p, g, &c.ctx, &da, rows);
            let dqkv = attention_backward(&c.qkv, &c.probs, &dctx, rows, d, self.heads);
            let dz1 = b.qkv.backward(p, g, &c.z1, &dqkv, rows);
            let mut dxi = dh;
            add_in_place(&mut dxi, &b.ln1.backward(p, g, &c.ln1, &dz1, rows));
            dx = dxi;
        }
        dx
    }
}
