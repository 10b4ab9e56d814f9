use rand::Rng;

use super::params::{Init, ParamId, ParamSet};
use super::scalar::Scalar;
use super::tensor::{gemm, View, ViewMut};

const LN_EPS: f64 = 1e-5;

/// Affine map `y = x W + b` with `W` stored `[in, out]`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub inp: usize,
    pub out: usize,
}

impl Linear {
    pub fn new<S: Scalar, R: Rng>(
        p: &mut ParamSet<S>,
        name: &str,
        inp: usize,
        out: usize,
        std: f64,
        rng: &mut R,
    ) -> Self {
        let w = p.add(format!("{name}.weight"), &[inp, out], Init::Normal(std), rng);
        let b = p.add(format!("{name}.bias"), &[out], Init::Zeros, rng);
        Self { w, b, inp, out }
    }

    pub fn forward<S: Scalar>(&self, p: &ParamSet<S>, x: &[S], rows: usize) -> Vec<S> {
        let bias = &p.get(self.b).data;
        let mut y = Vec::with_capacity(rows * self.out);
        for _ in 0..rows {
            y.extend_from_slice(bias);
        }
        gemm(
            S::ONE,
            View::rm(x, rows, self.inp),
            View::rm(&p.get(self.w).data, self.inp, self.out),
            S::ONE,
            ViewMut::rm(&mut y, rows, self.out),
        );
        y
    }

    /// Accumulates parameter gradients and returns `dx`.
    pub fn backward<S: Scalar>(&self, p: &ParamSet<S>, g: &mut ParamSet<S>, x: &[S], dy: &[S], rows: usize) -> Vec<S> {
        gemm(
            S::ONE,
            View::rm(x, rows, self.inp).t(),
            View::rm(dy, rows, self.out),
            S::ONE,
            ViewMut::rm(&mut g.get_mut(self.w).data, self.inp, self.out),
        );
        let db = &mut g.get_mut(self.b).data;
        for r in 0..rows {
            for (acc, v) in db.iter_mut().zip(&dy[r * self.out..(r + 1) * self.out]) {
                *acc += *v;
            }
        }
        let mut dx = vec![S::ZERO; rows * self.inp];
        gemm(
            S::ONE,
            View::rm(dy, rows, self.out),
            View::rm(&p.get(self.w).data, self.inp, self.out).t(),
            S::ZERO,
            ViewMut::rm(&mut dx, rows, self.inp),
        );
        dx
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub dim: usize,
}

#[derive(Debug, Clone, Default)]
pub struct LayerNormCache<S> {
    xhat: Vec<S>,
    rstd: Vec<S>,
}

impl LayerNorm {
    pub fn new<S: Scalar, R: Rng>(p: &mut ParamSet<S>, name: &str, dim: usize, rng: &mut R) -> Self {
        let gain = p.add(format!("{name}.gain"), &[dim], Init::Ones, rng);
        let bias = p.add(format!("{name}.bias"), &[dim], Init::Zeros, rng);
        Self { gain, bias, dim }
    }

    pub fn forward<S: Scalar>(&self, p: &ParamSet<S>, x: &[S], rows: usize) -> (Vec<S>, LayerNormCache<S>) {
        let d = self.dim;
        let g = &p.get(self.gain).data;
        let b = &p.get(self.bias).data;
        let mut y = vec![S::ZERO; rows * d];
        let mut xhat = vec![S::ZERO; rows * d];
        let mut rstd = vec![S::ZERO; rows];
        let inv_d = S::from_f64(1.0 / d as f64);
        for r in 0..rows {
            let xr = &x[r * d..(r + 1) * d];
            let mean = xr.iter().copied().sum::<S>() * inv_d;
            let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() * inv_d;
            let rs = S::ONE / (var + S::from_f64(LN_EPS)).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (xr[j] - mean) * rs;
                xhat[r * d + j] = h;
                y[r * d + j] = h * g[j] + b[j];
            }
        }
        (y, LayerNormCache { xhat, rstd })
    }

    pub fn backward<S: Scalar>(
        &self,
        p: &ParamSet<S>,
        grads: &mut ParamSet<S>,
        cache: &LayerNormCache<S>,
        dy: &[S],
        rows: usize,
    ) -> Vec<S> {
        let d = self.dim;
        let g = &p.get(self.gain).data;
        let mut dx = vec![S::ZERO; rows * d];
        let inv_d = S::from_f64(1.0 / d as f64);
        {
            let dg = &mut grads.get_mut(self.gain).data;
            for r in 0..rows {
                for j in 0..d {
                    dg[j] += dy[r * d + j] * cache.xhat[r * d + j];
                }
            }
        }
        {
            let db = &mut grads.get_mut(self.bias).data;
            for r in 0..rows {
                for j in 0..d {
                    db[j] += dy[r * d + j];
                }
            }
        }
        for r in 0..rows {
            let xh = &cache.xhat[r * d..(r + 1) * d];
            let dyr = &dy[r * d..(r + 1) * d];
            let mut mean_dxh = S::ZERO;
            let mut mean_dxh_xh = S::ZERO;
            for j in 0..d {
                let dxh = dyr[j] * g[j];
                mean_dxh += dxh;
                mean_dxh_xh += dxh * xh[j];
            }
            mean_dxh *= inv_d;
            mean_dxh_xh *= inv_d;
            let rs = cache.rstd[r];
            for j in 0..d {
                let dxh = dyr[j] * g[j];
                dx[r * d + j] = rs * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
            }
        }
        dx
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub fn gelu<S: Scalar>(x: &[S]) -> Vec<S> {
    let c = S::from_f64(GELU_C);
    let a = S::from_f64(GELU_A);
    let half = S::from_f64(0.5);
    x.iter()
        .map(|&v| {
            let t = (c * (v + a * v * v * v)).tanh();
            half * v * (S::ONE + t)
        })
        .collect()
}

pub fn gelu_backward<S: Scalar>(x: &[S], dy: &[S]) -> Vec<S> {
    let c = S::from_f64(GELU_C);
    let a = S::from_f64(GELU_A);
    let half = S::from_f64(0.5);
    let three_a = S::from_f64(3.0 * GELU_A);
    x.iter()
        .zip(dy)
        .map(|(&v, &d)| {
            let t = (c * (v + a * v * v * v)).tanh();
            let dt = (S::ONE - t * t) * c * (S::ONE + three_a * v * v);
            d * (half * (S::ONE + t) + half * v * dt)
        })
        .collect()
}

/// Multi-head scaled dot-product attention over a fused `[L, 3d]` QKV matrix.
/// Returns the `[L, d]` context and the per-head attention probabilities.
pub fn attention_forward<S: Scalar>(qkv: &[S], len: usize, d: usize, heads: usize, causal: bool) -> (Vec<S>, Vec<S>) {
    let dh = d / heads;
    let scale = S::from_f64(1.0 / (dh as f64).sqrt());
    let mut out = vec![S::ZERO; len * d];
    let mut probs = vec![S::ZERO; heads * len * len];
    for h in 0..heads {
        let pm = &mut probs[h * len * len..(h + 1) * len * len];
        gemm(
            scale,
            View::cols_of(qkv, len, 3 * d, h * dh, dh),
            View::cols_of(qkv, len, 3 * d, d + h * dh, dh).t(),
            S::ZERO,
            ViewMut::rm(pm, len, len),
        );
        for i in 0..len {
            let row = &mut pm[i * len..(i + 1) * len];
            let visible = if causal { i + 1 } else { len };
            let mx = row[..visible].iter().copied().fold(row[0], S::max);
            let mut sum = S::ZERO;
            for v in &mut row[..visible] {
                *v = (*v - mx).exp();
                sum += *v;
            }
            let inv = S::ONE / sum;
            for v in &mut row[..visible] {
                *v *= inv;
            }
            for v in &mut row[visible..] {
                *v = S::ZERO;
            }
        }
        gemm(
            S::ONE,
            View::rm(pm, len, len),
            View::cols_of(qkv, len, 3 * d, 2 * d + h * dh, dh),
            S::ZERO,
            ViewMut::cols_of(&mut out, len, d, h * dh, dh),
        );
    }
    (out, probs)
}

pub fn attention_backward<S: Scalar>(qkv: &[S], probs: &[S], dout: &[S], len: usize, d: usize, heads: usize) -> Vec<S> {
    let dh = d / heads;
    let scale = S::from_f64(1.0 / (dh as f64).sqrt());
    let mut dqkv = vec![S::ZERO; len * 3 * d];
    let mut dp = vec![S::ZERO; len * len];
    for h in 0..heads {
        let pm = &probs[h * len * len..(h + 1) * len * len];
        // dV = P^T dO
        gemm(
            S::ONE,
            View::rm(pm, len, len).t(),
            View::cols_of(dout, len, d, h * dh, dh),
            S::ZERO,
            ViewMut::cols_of(&mut dqkv, len, 3 * d, 2 * d + h * dh, dh),
        );
        // dP = dO V^T
        gemm(
            S::ONE,
            View::cols_of(dout, len, d, h * dh, dh),
            View::cols_of(qkv, len, 3 * d, 2 * d + h * dh, dh).t(),
            S::ZERO,
            ViewMut::rm(&mut dp, len, len),
        );
        // dS = P * (dP - <dP, P>_row)
        for i in 0..len {
            let pr = &pm[i * len..(i + 1) * len];
            let dr = &mut dp[i * len..(i + 1) * len];
            let dot: S = pr.iter().zip(dr.iter()).map(|(&a, &b)| a * b).sum();
            for (dv, &pv) in dr.iter_mut().zip(pr) {
                *dv = pv * (*dv - dot);
            }
        }
        gemm(
            scale,
            View::rm(&dp, len, len),
            View::cols_of(qkv, len, 3 * d, d + h * dh, dh),
            S::ZERO,
            ViewMut::cols_of(&mut dqkv, len, 3 * d, h * dh, dh),
        );
        gemm(
            scale,
            View::rm(&dp, len, len).t(),
            View::cols_of(qkv, len, 3 * d, h * dh, dh),
            S::ZERO,
            ViewMut::cols_of(&mut dqkv, len, 3 * d, d + h * dh, dh),
        );
    }
    dqkv
}

/// Sum of token cross-entropies over `rows` logit rows; rows whose target is
/// `None` are skipped. Writes `weight * (softmax - onehot)` into `dlogits`.
pub fn cross_entropy<S: Scalar>(
    logits: &[S],
    vocab: usize,
    targets: &[Option<usize>],
    weight: S,
    dlogits: Option<&mut Vec<S>>,
) -> f64 {
    let mut total = 0.0;
    let mut grad = dlogits;
    if let Some(g) = grad.as_deref_mut() {
        g.clear();
        g.resize(logits.len(), S::ZERO);
    }
    for (r, target) in targets.iter().enumerate() {
        let Some(t) = *target else { continue };
        let row = &logits[r * vocab..(r + 1) * vocab];
        let mx = row.iter().copied().fold(row[0], S::max);
        let sum: f64 = row.iter().map(|&v| (v - mx).exp().to_f64()).sum();
        let log_z = mx.to_f64() + sum.ln();
        total += log_z - row[t].to_f64();
        if let Some(g) = grad.as_deref_mut() {
            let gr = &mut g[r * vocab..(r + 1) * vocab];
            for (j, gv) in gr.iter_mut().enumerate() {
                let p = (row[j].to_f64() - log_z).exp();
                let y = if j == t { 1.0 } else { 0.0 };
                *gv = weight * S::from_f64(p - y);
            }
        }
    }
    total
}

/// Inverted dropout mask: zeros with probability `p`, else `1 / (1 - p)`.
pub fn dropout_mask<S: Scalar, R: Rng>(len: usize, p: f64, rng: &mut R) -> Vec<S> {
    let keep = S::from_f64(1.0 / (1.0 - p));
    (0..len).map(|_| if rng.gen::<f64>() < p { S::ZERO } else { keep }).collect()
}

pub fn add_in_place<S: Scalar>(a: &mut [S], b: &[S]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += *y;
    }
}

pub fn mul_in_place<S: Scalar>(a: &mut [S], b: &[S]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x *= *y;
    }
}
