//! Vector quantizer over a factorized cosine codebook.
//!
//! Style embeddings are projected by a learned linear map into a small
//! space and normalized onto the unit sphere. Lookup picks the entry with
//! the highest cosine similarity. Entries never receive task gradients: they
//! are initialized by spherical k-means on the first batch and afterwards
//! follow exponential moving averages of the codes assigned to them.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Bound, Graph, ParamId, ParamStore, Tensor, Var};
use crate::{Error, Result};

/// Default codebook size.
pub const CODEBOOK_SIZE: usize = 16;
/// Dimensionality of the factorized code space.
pub const CODE_DIM: usize = 8;
/// EMA decay of the codebook statistics.
pub const EMA_DECAY: f64 = 0.99;
/// Laplace smoothing of the EMA cluster sizes.
pub const LAPLACE_EPS: f64 = 1e-5;
/// Added (squared) under the norm before normalizing projected codes.
pub const NORMALIZE_EPS: f64 = 1e-8;
/// Lloyd iterations for the initial codebook.
pub const KMEANS_ITERS: usize = 10;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) {
    let norm = dot(v, v).sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Learned linear map from the style space into the code space, followed by
/// L2 normalization. No bias, so scaling the input never changes the code.
#[derive(Debug, Clone)]
pub struct CodeProjection {
    pub params: ParamStore,
    weight: ParamId,
    in_dim: usize,
    out_dim: usize,
}

impl CodeProjection {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let mut params = ParamStore::new();
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = params.add_uniform("weight", vec![out_dim, in_dim], bound, rng);
        Self {
            params,
            weight,
            in_dim,
            out_dim,
        }
    }

    /// Projection whose weights are given row-major as `[out_dim, in_dim]`.
    pub fn from_weights(in_dim: usize, out_dim: usize, weights: Vec<f64>) -> Self {
        let mut params = ParamStore::new();
        let weight = params.add("weight", Tensor::new(vec![out_dim, in_dim], weights));
        Self {
            params,
            weight,
            in_dim,
            out_dim,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// `[B, in_dim]` embeddings to `[B, out_dim]` unit vectors.
    pub fn forward<'g>(&self, p: &Bound<'g>, z: Var<'g>) -> Var<'g> {
        let g = z.graph();
        let bias = g.constant(Tensor::zeros(vec![self.out_dim]));
        z.linear(&p.var(self.weight), &bias).l2_normalize(NORMALIZE_EPS)
    }

    /// Plain evaluation of a single embedding.
    pub fn project(&self, z: &[f64]) -> Vec<f64> {
        assert_eq!(z.len(), self.in_dim);
        let g = Graph::new();
        let p = self.params.bind(&g, false);
        let x = g.constant(Tensor::new(vec![1, self.in_dim], z.to_vec()));
        self.forward(&p, x).value().data().to_vec()
    }
}

/// Outcome of a codebook lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizeResult {
    pub code_index: usize,
    pub quantized: Vec<f64>,
    /// `|z - sg(quantized)|^2`.
    pub commitment: f64,
}

/// Per-code assignment counts and sums of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignments {
    pub counts: Vec<f64>,
    /// `[N, dim]` row-major.
    pub sums: Vec<f64>,
}

impl Assignments {
    pub fn zeros(n: usize, dim: usize) -> Self {
        Self {
            counts: vec![0.0; n],
            sums: vec![0.0; n * dim],
        }
    }

    pub fn add(&mut self, index: usize, z: &[f64]) {
        let dim = z.len();
        self.counts[index] += 1.0;
        for (s, v) in self.sums[index * dim..(index + 1) * dim].iter_mut().zip(z) {
            *s += v;
        }
    }
}

/// Unit-norm codebook with EMA statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    size: usize,
    dim: usize,
    /// `[size, dim]` row-major unit vectors.
    entries: Vec<f64>,
    ema_cluster_size: Vec<f64>,
    /// `[size, dim]` row-major.
    ema_embed_sum: Vec<f64>,
    decay: f64,
    step: u64,
}

impl Codebook {
    /// Codebook from explicit entries; rows are normalized and the EMA state
    /// starts at one unit of mass per entry.
    pub fn from_entries(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if dim == 0 || entries.is_empty() || entries.len() % dim != 0 {
            return Err(Error::Shape(format!(
                "{} values do not form rows of {dim}",
                entries.len()
            )));
        }
        let size = entries.len() / dim;
        let mut entries = entries;
        for row in entries.chunks_mut(dim) {
            normalize(row);
        }
        Ok(Self {
            size,
            dim,
            ema_embed_sum: entries.clone(),
            entries,
            ema_cluster_size: vec![1.0; size],
            decay: EMA_DECAY,
            step: 0,
        })
    }

    /// Rebuilds a codebook from serialized state.
    pub fn from_state(
        dim: usize,
        entries: Vec<f64>,
        ema_cluster_size: Vec<f64>,
        ema_embed_sum: Vec<f64>,
        decay: f64,
        step: u64,
    ) -> Result<Self> {
        let size = ema_cluster_size.len();
        if entries.len() != size * dim || ema_embed_sum.len() != size * dim {
            return Err(Error::Shape("codebook state arrays disagree".into()));
        }
        Ok(Self {
            size,
            dim,
            entries,
            ema_cluster_size,
            ema_embed_sum,
            decay,
            step,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn entry(&self, i: usize) -> &[f64] {
        &self.entries[i * self.dim..(i + 1) * self.dim]
    }

    pub fn ema_cluster_size(&self) -> &[f64] {
        &self.ema_cluster_size
    }

    pub fn ema_embed_sum(&self) -> &[f64] {
        &self.ema_embed_sum
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Index of the most cosine-similar entry, lowest index on ties.
    pub fn nearest(&self, z: &[f64]) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for i in 0..self.size {
            let s = dot(z, self.entry(i));
            if s > best.1 {
                best = (i, s);
            }
        }
        best.0
    }

    pub fn quantize(&self, z: &[f64]) -> QuantizeResult {
        assert_eq!(z.len(), self.dim, "code dimension");
        let code_index = self.nearest(z);
        let quantized = self.entry(code_index).to_vec();
        let commitment = z.iter().zip(&quantized).map(|(a, b)| (a - b) * (a - b)).sum();
        QuantizeResult {
            code_index,
            quantized,
            commitment,
        }
    }

    /// One EMA step: sizes and sums decay toward the batch statistics, then
    /// every entry is re-estimated as the normalized smoothed mean.
    pub fn ema_update(&mut self, batch: &Assignments) {
        assert_eq!(batch.counts.len(), self.size);
        assert_eq!(batch.sums.len(), self.size * self.dim);
        let keep = self.decay;
        let take = 1.0 - self.decay;
        for (s, n) in self.ema_cluster_size.iter_mut().zip(&batch.counts) {
            debug_assert!(*n >= 0.0);
            *s = keep * *s + take * n;
        }
        for (s, v) in self.ema_embed_sum.iter_mut().zip(&batch.sums) {
            *s = keep * *s + take * v;
        }
        let total: f64 = self.ema_cluster_size.iter().sum();
        for i in 0..self.size {
            let smoothed = (self.ema_cluster_size[i] + LAPLACE_EPS) / (total + self.size as f64 * LAPLACE_EPS) * total;
            let mut row: Vec<f64> = self.ema_embed_sum[i * self.dim..(i + 1) * self.dim]
                .iter()
                .map(|v| v / smoothed)
                .collect();
            if dot(&row, &row) > 0.0 && smoothed > 0.0 {
                normalize(&mut row);
                self.entries[i * self.dim..(i + 1) * self.dim].copy_from_slice(&row);
            }
        }
        self.step += 1;
    }

    /// Largest deviation of any entry's norm from one.
    pub fn max_norm_deviation(&self) -> f64 {
        self.entries
            .chunks(self.dim)
            .map(|r| (dot(r, r).sqrt() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Pairwise cosine similarities, `[size, size]` row-major.
    pub fn cosine_matrix(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.size * self.size];
        for i in 0..self.size {
            for j in 0..self.size {
                out[i * self.size + j] = dot(self.entry(i), self.entry(j));
            }
        }
        out
    }
}

/// Spherical k-means over `batch` (`[B, dim]` unit rows).
///
/// Centroids start at `n` distinct random rows and are re-normalized after
/// every Lloyd step. Empty clusters are re-seeded from random rows; at
/// termination every centroid owns at least one row whenever the batch
/// holds `n` distinct points.
pub fn kmeans_init(batch: &[f64], dim: usize, n: usize, iters: usize, rng: &mut impl Rng) -> Result<Codebook> {
    if dim == 0 || batch.len() % dim != 0 {
        return Err(Error::Shape("batch is not a whole number of rows".into()));
    }
    let rows = batch.len() / dim;
    if rows < n {
        return Err(Error::Config(format!(
            "k-means needs at least {n} points, got {rows}"
        )));
    }
    let row = |i: usize| &batch[i * dim..(i + 1) * dim];
    let mut centroids: Vec<f64> = sample(rng, rows, n).iter().flat_map(|i| row(i).to_vec()).collect();

    let assign = |centroids: &[f64]| -> Vec<usize> {
        (0..rows)
            .map(|r| {
                let mut best = (0, f64::NEG_INFINITY);
                for c in 0..n {
                    let s = dot(row(r), &centroids[c * dim..(c + 1) * dim]);
                    if s > best.1 {
                        best = (c, s);
                    }
                }
                best.0
            })
            .collect()
    };

    for _ in 0..iters {
        let labels = assign(&centroids);
        let mut sums = vec![0.0; n * dim];
        let mut counts = vec![0usize; n];
        for (r, &c) in labels.iter().enumerate() {
            counts[c] += 1;
            for (s, v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(row(r)) {
                *s += v;
            }
        }
        for c in 0..n {
            let slot = &mut centroids[c * dim..(c + 1) * dim];
            if counts[c] == 0 {
                slot.copy_from_slice(row(rng.random_range(0..rows)));
            } else {
                slot.copy_from_slice(&sums[c * dim..(c + 1) * dim]);
                normalize(slot);
            }
        }
    }

    // Repair: hand every empty centroid a point taken from a shared cluster.
    let mut labels = assign(&centroids);
    for _ in 0..4 * n {
        let mut counts = vec![0usize; n];
        labels.iter().for_each(|&c| counts[c] += 1);
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            break;
        };
        let donors: Vec<usize> = (0..rows).filter(|&r| counts[labels[r]] > 1).collect();
        if donors.is_empty() {
            break;
        }
        let pick = donors[rng.random_range(0..donors.len())];
        centroids[empty * dim..(empty + 1) * dim].copy_from_slice(row(pick));
        labels = assign(&centroids);
    }

    let mut cb = Codebook::from_entries(dim, centroids)?;
    let mut stats = Assignments::zeros(n, dim);
    for (r, &c) in labels.iter().enumerate() {
        stats.add(c, row(r));
    }
    for c in 0..n {
        if stats.counts[c] > 0.0 {
            cb.ema_cluster_size[c] = stats.counts[c];
            cb.ema_embed_sum[c * dim..(c + 1) * dim].copy_from_slice(&stats.sums[c * dim..(c + 1) * dim]);
        }
    }
    Ok(cb)
}

/// `z + sg(q - z)`: the value of `quantized`, with the gradient passed to
/// `z` unchanged and none to `quantized`.
pub fn straight_through<'g>(z: Var<'g>, quantized: Var<'g>) -> Var<'g> {
    assert_eq!(z.shape(), quantized.shape(), "straight_through shapes");
    z.add(&quantized.sub(&z).detach())
}

/// Batch mean of `|z - sg(q)|^2` for `[B, dim]` codes.
pub fn commitment_loss<'g>(z: Var<'g>, quantized: Var<'g>) -> Var<'g> {
    z.sub(&quantized.detach()).square().sum_last().mean()
}

/// Quantizes every row of a `[B, dim]` code tensor.
pub fn quantize_batch(codes: &Tensor, cb: &Codebook) -> (Vec<QuantizeResult>, Tensor) {
    let dim = cb.dim();
    let results: Vec<QuantizeResult> = codes.data().chunks(dim).map(|z| cb.quantize(z)).collect();
    let quantized = results.iter().flat_map(|r| r.quantized.clone()).collect();
    (results, Tensor::new(codes.shape().to_vec(), quantized))
}

/// Code usage summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UsageStats {
    /// `exp(entropy)` of the empirical code distribution, in `[1, N]`.
    pub perplexity: f64,
    pub active_codes: usize,
}

pub fn usage_stats(codebook_size: usize, assignments: &[usize]) -> Result<UsageStats> {
    if assignments.is_empty() {
        return Err(Error::Empty("no code assignments to summarize".into()));
    }
    let mut counts = vec![0usize; codebook_size];
    for &a in assignments {
        counts[a] += 1;
    }
    let total = assignments.len() as f64;
    let entropy: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum();
    Ok(UsageStats {
        perplexity: entropy.exp(),
        active_codes: counts.iter().filter(|&&c| c > 0).count(),
    })
}
