//! Embedding extraction and similarity primitives.
//!
//! The baseline extractor is deliberately hand-rolled and deterministic:
//! per-block color means/variances plus gradient-orientation histograms,
//! concatenated and pushed through a seed-fixed random projection, then
//! L2-normalized. It is not rotation invariant, which is exactly why the
//! index stores four quarter-turn embeddings per database image. Externally
//! computed embeddings can enter the pipeline through the feature store
//! (see [`store`]) as long as they are unit-norm.

pub mod store;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::raster::Rgb8Image;

/// Stats per grid block: 3 channel means, 3 channel variances, and an
/// 8-bin gradient-orientation histogram.
const BLOCK_STATS: usize = 3 + 3 + ORIENT_BINS;
const ORIENT_BINS: usize = 8;

/// A unit-norm feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f32>,
}

impl Embedding {
    /// Wrap a vector that is already unit norm (within 1e-4). Values are
    /// stored bit-for-bit; nothing is renormalized.
    pub fn from_unit(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("empty embedding"));
        }
        let mut norm_sq = 0.0f64;
        for v in &values {
            if !v.is_finite() {
                return Err(Error::invalid("non-finite embedding component"));
            }
            norm_sq += *v as f64 * *v as f64;
        }
        if (norm_sq.sqrt() - 1.0).abs() > 1e-4 {
            return Err(Error::invalid(format!(
                "embedding norm {} is not 1",
                norm_sq.sqrt()
            )));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

/// Configuration for the baseline extractor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ExtractorConfig {
    /// Output embedding dimension.
    pub dim: usize,
    /// Blocks per image side for pooled statistics.
    pub grid: usize,
    /// Seed of the fixed random projection.
    pub seed: u64,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            dim: 256,
            grid: 8,
            seed: 0x0b5e55ed,
        }
    }
}

impl ExtractorConfig {
    pub fn source_len(&self) -> usize {
        self.grid * self.grid * BLOCK_STATS
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.grid == 0 {
            return Err(Error::invalid("dim and grid must be positive"));
        }
        if self.dim > self.source_len() {
            return Err(Error::invalid(format!(
                "dim {} exceeds the {}-component statistics vector (grid {}); increase grid",
                self.dim,
                self.source_len(),
                self.grid
            )));
        }
        Ok(())
    }

    /// Stable identity of the extractor function, recorded in index
    /// manifests so stale artifacts are rejected.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!(
            "block-stats-v1;dim={};grid={};seed={}",
            self.dim, self.grid, self.seed
        ));
        hex_lower(&h.finalize()[..16])
    }
}

fn hex_lower(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{:02x}", b));
    }
    s
}

/// The deterministic baseline extractor.
///
/// Same buffer in, bit-identical embedding out: block statistics are
/// accumulated in f64 in a fixed order, projected by a ChaCha8-seeded
/// matrix, and normalized.
pub struct Extractor {
    cfg: ExtractorConfig,
    /// dim x source_len projection, row-major.
    projection: Vec<f64>,
}

impl Extractor {
    pub fn new(cfg: ExtractorConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let n = cfg.dim * cfg.source_len();
        let scale = 1.0 / (cfg.source_len() as f64).sqrt();
        let projection = (0..n)
            .map(|_| rng.gen_range(-1.0f64..1.0) * scale)
            .collect();
        Ok(Self { cfg, projection })
    }

    pub fn config(&self) -> &ExtractorConfig {
        &self.cfg
    }

    pub fn fingerprint(&self) -> String {
        self.cfg.fingerprint()
    }

    /// Extract a unit-norm embedding from a square RGB buffer.
    pub fn extract(&self, img: &Rgb8Image) -> Result<Embedding> {
        if !img.is_square() {
            return Err(Error::invalid(format!(
                "extractor requires a square buffer, got {}x{}",
                img.width(),
                img.height()
            )));
        }
        let stats = self.block_statistics(img);
        let projected = self.project(&stats);
        l2_normalize(&projected)
    }

    /// The raw statistics vector, exposed for the analytic tests.
    pub fn block_statistics(&self, img: &Rgb8Image) -> Vec<f64> {
        let g = self.cfg.grid;
        let n = img.width() as usize;
        let mut out = vec![0.0f64; g * g * BLOCK_STATS];

        // luma plane for gradients
        let mut luma = vec![0.0f64; n * n];
        for y in 0..n {
            for x in 0..n {
                let [r, gch, b] = img.pixel(x as u32, y as u32);
                luma[y * n + x] =
                    (0.299 * r as f64 + 0.587 * gch as f64 + 0.114 * b as f64) / 255.0;
            }
        }

        for by in 0..g {
            for bx in 0..g {
                let x0 = bx * n / g;
                let x1 = ((bx + 1) * n / g).max(x0 + 1).min(n);
                let y0 = by * n / g;
                let y1 = ((by + 1) * n / g).max(y0 + 1).min(n);
                let count = ((x1 - x0) * (y1 - y0)) as f64;

                let mut sum = [0.0f64; 3];
                let mut sum_sq = [0.0f64; 3];
                let mut hist = [0.0f64; ORIENT_BINS];
                for y in y0..y1 {
                    for x in x0..x1 {
                        let px = img.pixel(x as u32, y as u32);
                        for c in 0..3 {
                            let v = px[c] as f64 / 255.0;
                            sum[c] += v;
                            sum_sq[c] += v * v;
                        }
                        if x > 0 && x + 1 < n && y > 0 && y + 1 < n {
                            let gx = luma[y * n + x + 1] - luma[y * n + x - 1];
                            let gy = luma[(y + 1) * n + x] - luma[(y - 1) * n + x];
                            let mag = (gx * gx + gy * gy).sqrt();
                            if mag > 0.0 {
                                let angle = gy.atan2(gx); // [-pi, pi]
                                let t = (angle + std::f64::consts::PI)
                                    / std::f64::consts::TAU
                                    * ORIENT_BINS as f64;
                                let bin = (t as usize).min(ORIENT_BINS - 1);
                                hist[bin] += mag;
                            }
                        }
                    }
                }

                let base = (by * g + bx) * BLOCK_STATS;
                for c in 0..3 {
                    let mean = sum[c] / count;
                    out[base + c] = mean;
                    out[base + 3 + c] = (sum_sq[c] / count - mean * mean).max(0.0);
                }
                for (k, h) in hist.iter().enumerate() {
                    out[base + 6 + k] = h / count;
                }
            }
        }
        out
    }

    fn project(&self, stats: &[f64]) -> Vec<f64> {
        let src = self.cfg.source_len();
        debug_assert_eq!(stats.len(), src);
        let mut out = vec![0.0f64; self.cfg.dim];
        for (d, o) in out.iter_mut().enumerate() {
            let row = &self.projection[d * src..(d + 1) * src];
            let mut acc = 0.0f64;
            for (w, s) in row.iter().zip(stats) {
                acc += w * s;
            }
            *o = acc;
        }
        out
    }
}

/// Normalize to unit L2 norm, preserving direction. The zero vector is a
/// degenerate input.
pub fn l2_normalize(v: &[f64]) -> Result<Embedding> {
    if v.is_empty() {
        return Err(Error::invalid("empty vector"));
    }
    let norm_sq: f64 = v.iter().map(|x| x * x).sum();
    if !norm_sq.is_finite() {
        return Err(Error::invalid("non-finite vector"));
    }
    if norm_sq == 0.0 {
        return Err(Error::DegenerateInput("cannot normalize the zero vector".into()));
    }
    let inv = 1.0 / norm_sq.sqrt();
    Ok(Embedding {
        values: v.iter().map(|x| (x * inv) as f32).collect(),
    })
}

/// Dot product of two unit embeddings, accumulated in f64.
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::invalid(format!(
            "dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(dot_f64(a.values(), b.values()))
}

pub(crate) fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        acc += *x as f64 * *y as f64;
    }
    acc
}
