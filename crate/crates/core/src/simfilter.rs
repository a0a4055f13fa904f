//! Similarity stage: maximum cosine similarity of each candidate against the
//! seed set, gated on `t_sim`.

use rayon::prelude::*;

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};

/// Candidates are normalized and scored in batches of this many rows.
pub const BATCH_ROWS: usize = 256;

/// Cosine similarity of two vectors, clamped to [-1, 1].
///
/// Fails on dimension mismatch or when either vector is zero.
pub fn cosine_similarity(v1: &[f32], v2: &[f32]) -> Result<f64> {
    if v1.len() != v2.len() {
        return Err(Error::invalid(format!(
            "dimension mismatch: {} vs {}",
            v1.len(),
            v2.len()
        )));
    }
    let (mut dot, mut n1, mut n2) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in v1.iter().zip(v2) {
        let (a, b) = (a as f64, b as f64);
        dot += a * b;
        n1 += a * a;
        n2 += b * b;
    }
    if n1 == 0.0 || n2 == 0.0 {
        return Err(Error::invalid("cosine similarity of a zero vector is undefined"));
    }
    Ok((dot / (n1.sqrt() * n2.sqrt())).clamp(-1.0, 1.0))
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s: f32 = acc.iter().sum();
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

fn normalized(row: &[f32]) -> Option<Vec<f32>> {
    let norm = dot(row, row).sqrt();
    (norm > 0.0 && norm.is_finite()).then(|| row.iter().map(|v| v / norm).collect())
}

/// Seed embeddings L2-normalized once, so scoring is a plain dot product.
#[derive(Debug, Clone)]
pub struct NormalizedSeeds {
    dim: usize,
    rows: Vec<f32>,
}

impl NormalizedSeeds {
    pub fn new(seeds: &EmbeddingMatrix) -> Result<Self> {
        if seeds.is_empty() {
            return Err(Error::invalid("seed matrix is empty"));
        }
        let mut rows = Vec::with_capacity(seeds.data().len());
        for (i, row) in seeds.rows().enumerate() {
            let n = normalized(row).ok_or_else(|| {
                Error::invalid(format!("seed {:?} is a zero vector", seeds.row_ids()[i]))
            })?;
            rows.extend(n);
        }
        Ok(NormalizedSeeds {
            dim: seeds.dim(),
            rows,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Max similarity of an already normalized candidate.
    fn max_dot(&self, unit: &[f32]) -> f32 {
        self.rows
            .chunks_exact(self.dim)
            .map(|s| dot(s, unit))
            .fold(f32::NEG_INFINITY, f32::max)
            .clamp(-1.0, 1.0)
    }

    pub fn max_similarity(&self, candidate: &[f32]) -> Result<f32> {
        if candidate.len() != self.dim {
            return Err(Error::invalid(format!(
                "candidate dimension {} does not match seed dimension {}",
                candidate.len(),
                self.dim
            )));
        }
        let unit = normalized(candidate)
            .ok_or_else(|| Error::invalid("candidate is a zero vector"))?;
        Ok(self.max_dot(&unit))
    }
}

/// `p_sim`: the maximum cosine similarity of `candidate` over all seed rows.
pub fn max_seed_similarity(candidate: &[f32], seeds: &EmbeddingMatrix) -> Result<f64> {
    NormalizedSeeds::new(seeds)?
        .max_similarity(candidate)
        .map(f64::from)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityOutcome {
    pub p_sim: f32,
    pub pass: bool,
}

/// Scores every candidate row and marks `pass` when `p_sim >= t_sim`.
///
/// Every candidate gets a `p_sim`, whether it passes or not. Output order
/// follows candidate rows.
pub fn filter_by_similarity(
    candidates: &EmbeddingMatrix,
    seeds: &EmbeddingMatrix,
    t_sim: f64,
) -> Result<Vec<SimilarityOutcome>> {
    let seeds = NormalizedSeeds::new(seeds)?;
    let p_sims = score_rows(candidates, &seeds)?;
    Ok(p_sims
        .into_iter()
        .map(|p_sim| SimilarityOutcome {
            p_sim,
            pass: f64::from(p_sim) >= t_sim,
        })
        .collect())
}

/// Batched `p_sim` for every candidate row.
pub fn score_rows(candidates: &EmbeddingMatrix, seeds: &NormalizedSeeds) -> Result<Vec<f32>> {
    if candidates.dim() != seeds.dim() && !candidates.is_empty() {
        return Err(Error::invalid(format!(
            "candidate dimension {} does not match seed dimension {}",
            candidates.dim(),
            seeds.dim()
        )));
    }
    let dim = candidates.dim();
    let batches: Vec<Result<Vec<f32>>> = candidates
        .data()
        .par_chunks(BATCH_ROWS * dim)
        .enumerate()
        .map(|(b, chunk)| {
            chunk
                .chunks_exact(dim)
                .enumerate()
                .map(|(i, row)| {
                    let unit = normalized(row).ok_or_else(|| {
                        let id = &candidates.row_ids()[b * BATCH_ROWS + i];
                        Error::invalid(format!("candidate {id:?} is a zero vector"))
                    })?;
                    Ok(seeds.max_dot(&unit))
                })
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(candidates.n_rows());
    for batch in batches {
        out.extend(batch?);
    }
    Ok(out)
}
