//! Residual vector quantisation codec: frame features in, a `T × n` matrix
//! of integer codes out, and back.
//!
//! Layer 1 is plain k-means over the frames. Every later layer is fit on the
//! residual left by the layers before it and keeps row 0 pinned to the zero
//! vector, so greedy encoding can never increase the residual.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::debug;

use crate::{Error, Result};

pub const DEFAULT_LAYERS: usize = 8;
pub const DEFAULT_CODEBOOK_SIZE: usize = 64;
pub const KMEANS_ITERS: usize = 20;
const MAGIC: &[u8; 4] = b"RVQ1";

/// `T × d` acoustic frames with their framing parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameFeatures {
    pub dim: usize,
    pub sample_rate_hz: u32,
    pub hop_samples: usize,
    /// Row-major frame data.
    pub data: Vec<f32>,
}

impl FrameFeatures {
    pub fn new(dim: usize, sample_rate_hz: u32, hop_samples: usize) -> Self {
        Self { dim, sample_rate_hz, hop_samples, data: Vec::new() }
    }

    pub fn from_rows(dim: usize, sample_rate_hz: u32, hop_samples: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::ShapeMismatch(format!("{} values do not form rows of {dim}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch("non-finite frame value".into()));
        }
        Ok(Self { dim, sample_rate_hz, hop_samples, data })
    }

    pub fn frames(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn push(&mut self, frame: &[f32]) -> Result<()> {
        if frame.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: frame.len() });
        }
        self.data.extend_from_slice(frame);
        Ok(())
    }
}

/// `T × n` matrix of codes, one row per frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcousticCodeMatrix {
    layers: usize,
    codebook_sizes: Vec<usize>,
    codes: Vec<usize>,
}

impl AcousticCodeMatrix {
    pub fn new(layers: usize, codebook_sizes: Vec<usize>) -> Result<Self> {
        if codebook_sizes.len() != layers || codebook_sizes.contains(&0) {
            return Err(Error::ShapeMismatch(format!("{layers} layers with codebook sizes {codebook_sizes:?}")));
        }
        Ok(Self { layers, codebook_sizes, codes: Vec::new() })
    }

    pub fn from_rows(codebook_sizes: Vec<usize>, rows: &[Vec<usize>]) -> Result<Self> {
        let mut m = Self::new(codebook_sizes.len(), codebook_sizes)?;
        for r in rows {
            m.push_frame(r)?;
        }
        Ok(m)
    }

    pub fn push_frame(&mut self, row: &[usize]) -> Result<()> {
        if row.len() != self.layers {
            return Err(Error::DimensionMismatch { expected: self.layers, got: row.len() });
        }
        for (layer, (&code, &size)) in row.iter().zip(&self.codebook_sizes).enumerate() {
            if code >= size {
                return Err(Error::CodeOutOfRange { layer, code, size });
            }
        }
        self.codes.extend_from_slice(row);
        Ok(())
    }

    pub fn frames(&self) -> usize {
        self.codes.len() / self.layers
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn codebook_sizes(&self) -> &[usize] {
        &self.codebook_sizes
    }

    pub fn row(&self, t: usize) -> &[usize] {
        &self.codes[t * self.layers..(t + 1) * self.layers]
    }

    pub fn get(&self, t: usize, layer: usize) -> usize {
        self.codes[t * self.layers + layer]
    }

    /// Codes of one layer (0-based) across all frames.
    pub fn column(&self, layer: usize) -> Vec<usize> {
        (0..self.frames()).map(|t| self.get(t, layer)).collect()
    }

    pub fn rows(&self) -> Vec<Vec<usize>> {
        (0..self.frames()).map(|t| self.row(t).to_vec()).collect()
    }
}

/// `K × d` codebook.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub dim: usize,
    pub rows: Vec<f32>,
}

impl Codebook {
    pub fn size(&self) -> usize {
        self.rows.len() / self.dim
    }

    pub fn row(&self, j: usize) -> &[f32] {
        &self.rows[j * self.dim..(j + 1) * self.dim]
    }

    /// Nearest row by squared Euclidean distance; ties go to the lowest index.
    pub fn nearest(&self, x: &[f32]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for j in 0..self.size() {
            let d = sq_dist(self.row(j), x);
            if d < best_d {
                best = j;
                best_d = d;
            }
        }
        best
    }
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookSet {
    pub books: Vec<Codebook>,
    pub trained: bool,
}

impl CodebookSet {
    pub fn new(books: Vec<Codebook>) -> Result<Self> {
        let dim = books.first().map(|b| b.dim).ok_or(Error::EmptyInput("codebook set"))?;
        for b in &books {
            if b.dim != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: b.dim });
            }
            if b.size() == 0 || b.rows.len() % b.dim != 0 {
                return Err(Error::ShapeMismatch("codebook must have at least one full row".into()));
            }
            if b.rows.iter().any(|v| !v.is_finite()) {
                return Err(Error::ShapeMismatch("non-finite codebook entry".into()));
            }
        }
        Ok(Self { books, trained: false })
    }

    pub fn layers(&self) -> usize {
        self.books.len()
    }

    pub fn dim(&self) -> usize {
        self.books[0].dim
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.books.iter().map(Codebook::size).collect()
    }

    pub fn encode(&self, features: &FrameFeatures) -> Result<AcousticCodeMatrix> {
        if features.dim != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: features.dim });
        }
        let mut out = AcousticCodeMatrix::new(self.layers(), self.sizes())?;
        let mut residual = vec![0f32; self.dim()];
        let mut row = vec![0usize; self.layers()];
        for t in 0..features.frames() {
            residual.copy_from_slice(features.frame(t));
            for (i, book) in self.books.iter().enumerate() {
                let j = book.nearest(&residual);
                row[i] = j;
                for (r, c) in residual.iter_mut().zip(book.row(j)) {
                    *r -= c;
                }
            }
            out.push_frame(&row)?;
        }
        Ok(out)
    }

    /// Reconstruction from all layers.
    pub fn decode(&self, codes: &AcousticCodeMatrix, sample_rate_hz: u32, hop_samples: usize) -> Result<FrameFeatures> {
        self.decode_prefix(codes, self.layers(), sample_rate_hz, hop_samples)
    }

    /// Reconstruction from the first `layers` layers only.
    pub fn decode_prefix(
        &self,
        codes: &AcousticCodeMatrix,
        layers: usize,
        sample_rate_hz: u32,
        hop_samples: usize,
    ) -> Result<FrameFeatures> {
        if codes.layers() > self.layers() {
            return Err(Error::DimensionMismatch { expected: self.layers(), got: codes.layers() });
        }
        let layers = layers.min(codes.layers());
        let d = self.dim();
        let mut out = FrameFeatures::new(d, sample_rate_hz, hop_samples);
        let mut frame = vec![0f32; d];
        for t in 0..codes.frames() {
            frame.iter_mut().for_each(|v| *v = 0.0);
            for (i, book) in self.books.iter().enumerate().take(layers) {
                let code = codes.get(t, i);
                if code >= book.size() {
                    return Err(Error::CodeOutOfRange { layer: i, code, size: book.size() });
                }
                for (f, c) in frame.iter_mut().zip(book.row(code)) {
                    *f += c;
                }
            }
            out.push(&frame)?;
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(&self.to_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(self.layers() as u32).to_le_bytes());
        buf.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        for k in self.sizes() {
            buf.extend_from_slice(&(k as u32).to_le_bytes());
        }
        buf.push(self.trained as u8);
        for b in &self.books {
            for v in &b.rows {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes).map_err(|message| Error::Format { path: path.to_path_buf(), message })
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut cur = bytes;
        let mut take = |n: usize| -> std::result::Result<&[u8], String> {
            if cur.len() < n {
                return Err("truncated codebook file".into());
            }
            let (head, tail) = cur.split_at(n);
            cur = tail;
            Ok(head)
        };
        if take(4)? != MAGIC {
            return Err("missing RVQ1 magic".into());
        }
        let u32_of = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize;
        let n = u32_of(take(4)?);
        let d = u32_of(take(4)?);
        if n == 0 || d == 0 {
            return Err("empty codebook set".into());
        }
        let sizes = (0..n).map(|_| take(4).map(u32_of)).collect::<std::result::Result<Vec<_>, _>>()?;
        let trained = take(1)?[0] != 0;
        let mut books = Vec::with_capacity(n);
        for k in sizes {
            let raw = take(k * d * 4)?;
            let rows = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            books.push(Codebook { dim: d, rows });
        }
        if !cur.is_empty() {
            return Err("trailing bytes after codebooks".into());
        }
        let mut set = CodebookSet::new(books).map_err(|e| e.to_string())?;
        set.trained = trained;
        Ok(set)
    }
}

/// Fits `layers` codebooks of `codebook_size` rows by residual k-means.
pub fn fit_codebooks(corpus: &[FrameFeatures], layers: usize, codebook_size: usize, seed: u64) -> Result<CodebookSet> {
    if layers == 0 || codebook_size == 0 {
        return Err(Error::InvalidConfig("layers and codebook_size must be positive".into()));
    }
    let dim = corpus.first().map(|f| f.dim).ok_or(Error::TooFewFrames { needed: codebook_size, got: 0 })?;
    let mut residual = Vec::new();
    for f in corpus {
        if f.dim != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: f.dim });
        }
        residual.extend_from_slice(&f.data);
    }
    let n = residual.len() / dim;
    if n < codebook_size {
        return Err(Error::TooFewFrames { needed: codebook_size, got: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut books = Vec::with_capacity(layers);
    for layer in 0..layers {
        let book = kmeans(&residual, dim, codebook_size, layer > 0, &mut rng);
        for i in 0..n {
            let x = &mut residual[i * dim..(i + 1) * dim];
            let j = book.nearest(x);
            for (r, c) in x.iter_mut().zip(book.row(j)) {
                *r -= c;
            }
        }
        let mse = residual.iter().map(|v| (*v as f64).powi(2)).sum::<f64>() / residual.len() as f64;
        debug!(layer = layer + 1, mse, "fitted codebook");
        books.push(book);
    }
    let mut set = CodebookSet::new(books)?;
    set.trained = true;
    Ok(set)
}

/// Lloyd's k-means with k-means++ seeding. With `pin_zero`, row 0 is the
/// zero vector and never moves. Empty clusters are re-seeded at the point
/// farthest from its assigned centroid.
fn kmeans<R: Rng>(data: &[f32], dim: usize, k: usize, pin_zero: bool, rng: &mut R) -> Codebook {
    let n = data.len() / dim;
    let point = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut centroids: Vec<f32> = Vec::with_capacity(k * dim);
    let mut nearest_d = vec![f64::INFINITY; n];
    let add_centroid = |c: &[f32], centroids: &mut Vec<f32>, nearest_d: &mut [f64]| {
        centroids.extend_from_slice(c);
        for (i, nd) in nearest_d.iter_mut().enumerate() {
            let d = sq_dist(point(i), c);
            if d < *nd {
                *nd = d;
            }
        }
    };
    if pin_zero {
        add_centroid(&vec![0.0; dim], &mut centroids, &mut nearest_d);
    } else {
        let first = rng.gen_range(0..n);
        add_centroid(point(first), &mut centroids, &mut nearest_d);
    }
    while centroids.len() < k * dim {
        let total: f64 = nearest_d.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in nearest_d.iter().enumerate() {
                if u < d {
                    chosen = i;
                    break;
                }
                u -= d;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        add_centroid(point(pick), &mut centroids, &mut nearest_d);
    }
    let fixed = usize::from(pin_zero);
    let mut book = Codebook { dim, rows: centroids };
    let mut assign = vec![0usize; n];
    let mut dist = vec![0f64; n];
    for _ in 0..KMEANS_ITERS {
        for i in 0..n {
            let j = book.nearest(point(i));
            assign[i] = j;
            dist[i] = sq_dist(point(i), book.row(j));
        }
        let mut sums = vec![0f64; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[assign[i]] += 1;
            for (s, &v) in sums[assign[i] * dim..(assign[i] + 1) * dim].iter_mut().zip(point(i)) {
                *s += v as f64;
            }
        }
        let mut changed = false;
        for j in fixed..k {
            let row = &mut book.rows[j * dim..(j + 1) * dim];
            if counts[j] == 0 {
                let far = (0..n).fold(0, |best, i| if dist[i] > dist[best] { i } else { best });
                row.copy_from_slice(point(far));
                dist[far] = 0.0;
                changed = true;
                continue;
            }
            for (c, s) in row.iter_mut().zip(&sums[j * dim..(j + 1) * dim]) {
                let v = (*s / counts[j] as f64) as f32;
                if v != *c {
                    changed = true;
                }
                *c = v;
            }
        }
        if !changed {
            break;
        }
    }
    book
}
