//! Multi-similarity losses over a batch similarity matrix.
//!
//! The neutral-aware variant drops pairs whose regions partially overlap
//! (the "neutral" case) from the negative sum, so those pairs contribute
//! exactly zero loss and zero gradient: they are neither pulled together
//! nor pushed apart. The negative term uses exp(+beta*(S - lambda)), the
//! convention under which raising a negative pair's similarity raises the
//! loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{cosine_similarity, Embedding};
use crate::geodesy::Relation;

/// Loss hyperparameters: `alpha` scales the positive term, `beta` the
/// negative term, `lambda` is the margin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            beta: 50.0,
            lambda: 1.0,
        }
    }
}

impl LossParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.beta > 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("alpha and beta must be positive and lambda finite"));
        }
        Ok(())
    }
}

/// Dense square matrix of pairwise similarities, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    /// Wrap raw values without the unit-embedding invariants; used by the
    /// finite-difference oracle, which perturbs single entries.
    pub fn from_raw(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::invalid("similarity matrix size mismatch"));
        }
        Ok(Self { n, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.n + j] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Pairwise cosine similarities of a batch of unit embeddings.
pub fn similarity_matrix(embeddings: &[Embedding]) -> Result<SimilarityMatrix> {
    let n = embeddings.len();
    if n == 0 {
        return Err(Error::invalid("empty batch"));
    }
    let mut values = vec![0.0f64; n * n];
    for i in 0..n {
        values[i * n + i] = 1.0;
        for j in i + 1..n {
            let s = cosine_similarity(&embeddings[i], &embeddings[j])?;
            values[i * n + j] = s;
            values[j * n + i] = s;
        }
    }
    Ok(SimilarityMatrix { n, values })
}

/// Pairwise Positive/Neutral/Negative labels for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationMatrix {
    n: usize,
    values: Vec<Relation>,
}

impl RelationMatrix {
    pub fn from_values(n: usize, values: Vec<Relation>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::invalid("relation matrix size mismatch"));
        }
        for i in 0..n {
            if values[i * n + i] != Relation::Positive {
                return Err(Error::invalid("relation diagonal must be Positive"));
            }
            for j in 0..n {
                if values[i * n + j] != values[j * n + i] {
                    return Err(Error::invalid("relation matrix must be symmetric"));
                }
            }
        }
        Ok(Self { n, values })
    }

    /// Build from per-image relations supplied by a pairwise rule (for
    /// example [`crate::geodesy::RegionGrid::relation`] over region tags).
    pub fn from_pairwise<E>(
        n: usize,
        mut rel: impl FnMut(usize, usize) -> std::result::Result<Relation, E>,
    ) -> std::result::Result<Self, E> {
        let mut values = vec![Relation::Positive; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let r = rel(i, j)?;
                values[i * n + j] = r;
                values[j * n + i] = r;
            }
        }
        Ok(Self { n, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Relation {
        self.values[i * self.n + j]
    }

    pub fn count(&self, r: Relation) -> usize {
        self.values.iter().filter(|v| **v == r).count()
    }
}

/// Neutral-aware multi-similarity loss and its exact gradient dL/dS.
///
/// ```text
/// L = (1/BS) * sum_i { (1/alpha) * ln(1 + sum_{k!=i, pos} e^{-alpha(S_ik - lambda)})
///                    + (1/beta)  * ln(1 + sum_{neg}       e^{+beta (S_ik - lambda)}) }
/// ```
///
/// Self-pairs are excluded from the positive sum; neutral pairs appear in
/// neither sum. The returned gradient has one entry per (i, k) as read by
/// row i; symmetric use of S is accounted for downstream by
/// [`chain_grad_to_embeddings`].
pub fn na_ms_loss(
    s: &SimilarityMatrix,
    relations: &RelationMatrix,
    params: &LossParams,
) -> Result<(f64, Vec<f64>)> {
    params.validate()?;
    let n = s.n();
    if relations.n() != n {
        return Err(Error::invalid("similarity and relation sizes differ"));
    }
    if s.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite similarity entry"));
    }
    let (alpha, beta, lambda) = (params.alpha, params.beta, params.lambda);
    let mut loss = 0.0f64;
    let mut grad = vec![0.0f64; n * n];
    for i in 0..n {
        let mut pos_sum = 0.0f64;
        let mut neg_sum = 0.0f64;
        for k in 0..n {
            if k == i {
                continue;
            }
            match relations.get(i, k) {
                Relation::Positive => pos_sum += (-alpha * (s.get(i, k) - lambda)).exp(),
                Relation::Negative => neg_sum += (beta * (s.get(i, k) - lambda)).exp(),
                Relation::Neutral => {}
            }
        }
        loss += (1.0 + pos_sum).ln() / alpha + (1.0 + neg_sum).ln() / beta;
        let pos_denom = 1.0 + pos_sum;
        let neg_denom = 1.0 + neg_sum;
        for k in 0..n {
            if k == i {
                continue;
            }
            match relations.get(i, k) {
                Relation::Positive => {
                    grad[i * n + k] = -(-alpha * (s.get(i, k) - lambda)).exp() / pos_denom;
                }
                Relation::Negative => {
                    grad[i * n + k] = (beta * (s.get(i, k) - lambda)).exp() / neg_denom;
                }
                Relation::Neutral => {}
            }
        }
    }
    let inv_bs = 1.0 / n as f64;
    for g in grad.iter_mut() {
        *g *= inv_bs;
    }
    Ok((loss * inv_bs, grad))
}

/// Plain multi-similarity loss over class labels: pairs with equal labels
/// are positives, everything else is a negative. Implemented standalone so
/// it stays an independent check against the neutral-aware variant.
pub fn ms_loss(
    s: &SimilarityMatrix,
    labels: &[usize],
    params: &LossParams,
) -> Result<(f64, Vec<f64>)> {
    params.validate()?;
    let n = s.n();
    if labels.len() != n {
        return Err(Error::invalid("labels length must match batch size"));
    }
    if s.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite similarity entry"));
    }
    let (alpha, beta, lambda) = (params.alpha, params.beta, params.lambda);
    let mut loss = 0.0f64;
    let mut grad = vec![0.0f64; n * n];
    for i in 0..n {
        let mut pos_sum = 0.0f64;
        let mut neg_sum = 0.0f64;
        for k in 0..n {
            if k == i {
                continue;
            }
            if labels[k] == labels[i] {
                pos_sum += (-alpha * (s.get(i, k) - lambda)).exp();
            } else {
                neg_sum += (beta * (s.get(i, k) - lambda)).exp();
            }
        }
        loss += (1.0 + pos_sum).ln() / alpha + (1.0 + neg_sum).ln() / beta;
        for k in 0..n {
            if k == i {
                continue;
            }
            if labels[k] == labels[i] {
                grad[i * n + k] = -(-alpha * (s.get(i, k) - lambda)).exp() / (1.0 + pos_sum);
            } else {
                grad[i * n + k] = (beta * (s.get(i, k) - lambda)).exp() / (1.0 + neg_sum);
            }
        }
    }
    let inv_bs = 1.0 / n as f64;
    for g in grad.iter_mut() {
        *g *= inv_bs;
    }
    Ok((loss * inv_bs, grad))
}

/// Chain a dL/dS matrix back to per-embedding gradients for S = E E^T:
/// dL/dE_i = sum_k (G_ik + G_ki) E_k.
pub fn chain_grad_to_embeddings(grad_s: &[f64], embeddings: &[Embedding]) -> Result<Vec<Vec<f64>>> {
    let n = embeddings.len();
    if grad_s.len() != n * n {
        return Err(Error::invalid("gradient matrix size mismatch"));
    }
    let dim = embeddings[0].dim();
    let mut out = vec![vec![0.0f64; dim]; n];
    for i in 0..n {
        for k in 0..n {
            let w = grad_s[i * n + k] + grad_s[k * n + i];
            if w == 0.0 {
                continue;
            }
            let ek = embeddings[k].values();
            let gi = &mut out[i];
            for d in 0..dim {
                gi[d] += w * ek[d] as f64;
            }
        }
    }
    Ok(out)
}

/// Back-propagate a gradient on y = v / |v| to v:
/// dL/dv = (g - (g . y) y) / |v|.
pub fn normalization_vjp(pre_norm: &[f64], grad_unit: &[f64]) -> Result<Vec<f64>> {
    if pre_norm.len() != grad_unit.len() {
        return Err(Error::invalid("shape mismatch in normalization VJP"));
    }
    let norm = pre_norm.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::DegenerateInput("zero-norm vector in VJP".into()));
    }
    let y: Vec<f64> = pre_norm.iter().map(|v| v / norm).collect();
    let dot: f64 = grad_unit.iter().zip(&y).map(|(g, u)| g * u).sum();
    Ok(grad_unit
        .iter()
        .zip(&y)
        .map(|(g, u)| (g - dot * u) / norm)
        .collect())
}

/// Compare an analytic gradient against central finite differences.
/// Returns the maximum entrywise relative error, with an absolute floor of
/// 1e-8 in the denominator.
pub fn grad_check(
    f: impl Fn(&[f64]) -> f64,
    analytic: &[f64],
    point: &[f64],
    eps: f64,
) -> f64 {
    assert!(eps > 0.0, "eps must be positive");
    assert_eq!(analytic.len(), point.len());
    let mut worst = 0.0f64;
    let mut x = point.to_vec();
    for j in 0..point.len() {
        let orig = x[j];
        x[j] = orig + eps;
        let fp = f(&x);
        x[j] = orig - eps;
        let fm = f(&x);
        x[j] = orig;
        let fd = (fp - fm) / (2.0 * eps);
        let denom = fd.abs().max(analytic[j].abs()).max(1e-8);
        worst = worst.max((fd - analytic[j]).abs() / denom);
    }
    worst
}
