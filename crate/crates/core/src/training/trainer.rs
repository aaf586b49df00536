//! Desk-scale training loop: a linear head W over the frozen extractor,
//! optimized with Adam under the neutral-aware multi-similarity loss,
//! with clustered batches refreshed on a fixed cadence and year-wise
//! augmentation. Fully deterministic under a fixed seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::database::ImageSource;
use crate::error::{Error, Result};
use crate::features::{l2_normalize, Embedding, Extractor};
use crate::geodesy::{RegionGrid, RegionId};
use crate::training::augment::{AugmentParams, AugmentRanges, AugmentationPlan};
use crate::training::batching::{BatchSampler, BatchSpec, ClusterConfig, RandomBatchSampler};
use crate::training::kmeans::kmeans;
use crate::training::loss::{
    chain_grad_to_embeddings, ms_loss, na_ms_loss, normalization_vjp, similarity_matrix,
    LossParams, RelationMatrix,
};

/// Adam settings for the linear head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub iterations: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            iterations: 2000,
        }
    }
}

/// The component toggles of the training recipe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationToggles {
    pub clustered_batches: bool,
    pub year_wise_aug: bool,
    pub neutral_aware: bool,
}

impl Default for AblationToggles {
    fn default() -> Self {
        Self {
            clustered_batches: true,
            year_wise_aug: true,
            neutral_aware: true,
        }
    }
}

/// Everything the training loop needs beyond the data itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub cluster: ClusterConfig,
    pub batch: BatchSpec,
    pub loss: LossParams,
    pub optimizer: OptimizerConfig,
    pub toggles: AblationToggles,
    pub augment: AugmentRanges,
    pub seed: u64,
    /// Output dimension of the head; equal to the extractor dimension for
    /// the identity-initialized default.
    pub head_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            cluster: ClusterConfig::default(),
            batch: BatchSpec::default(),
            loss: LossParams::default(),
            optimizer: OptimizerConfig::default(),
            toggles: AblationToggles::default(),
            augment: AugmentRanges::default(),
            seed: 0,
            head_dim: 256,
        }
    }
}

/// One JSONL line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub iteration: usize,
    pub loss: f64,
    pub cluster_id: Option<usize>,
    pub lr: f64,
}

/// A trained linear projection. Embeddings are
/// `l2_normalize(W * extract(img))`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedHead {
    dim_in: usize,
    dim_out: usize,
    /// Row-major dim_out x dim_in.
    w: Vec<f64>,
}

impl TrainedHead {
    /// Identity head (square) or truncated identity.
    pub fn identity(dim_in: usize, dim_out: usize) -> Self {
        let mut w = vec![0.0f64; dim_in * dim_out];
        for d in 0..dim_out.min(dim_in) {
            w[d * dim_in + d] = 1.0;
        }
        Self { dim_in, dim_out, w }
    }

    pub fn dim_in(&self) -> usize {
        self.dim_in
    }

    pub fn dim_out(&self) -> usize {
        self.dim_out
    }

    /// Project a base embedding through the head and renormalize.
    pub fn apply(&self, base: &Embedding) -> Result<Embedding> {
        if base.dim() != self.dim_in {
            return Err(Error::invalid(format!(
                "head expects dim {}, embedding has {}",
                self.dim_in,
                base.dim()
            )));
        }
        let u = self.forward(base);
        l2_normalize(&u)
    }

    fn forward(&self, base: &Embedding) -> Vec<f64> {
        let x = base.values();
        let mut u = vec![0.0f64; self.dim_out];
        for (o, row) in u.iter_mut().zip(self.w.chunks_exact(self.dim_in)) {
            let mut acc = 0.0f64;
            for (wv, xv) in row.iter().zip(x) {
                acc += wv * *xv as f64;
            }
            *o = acc;
        }
        u
    }

    /// Serialize: magic HED1, dims, extractor fingerprint, f64 weights LE.
    pub fn save(&self, path: &std::path::Path, extractor_fingerprint: &str) -> Result<()> {
        let mut bytes = Vec::with_capacity(16 + self.w.len() * 8);
        bytes.extend_from_slice(b"HED1");
        bytes.extend_from_slice(&(self.dim_in as u32).to_le_bytes());
        bytes.extend_from_slice(&(self.dim_out as u32).to_le_bytes());
        let fp = extractor_fingerprint.as_bytes();
        bytes.extend_from_slice(&(fp.len() as u32).to_le_bytes());
        bytes.extend_from_slice(fp);
        for v in &self.w {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        crate::database::fetch::write_atomic(path, &bytes)
    }

    /// Load and verify the recorded extractor fingerprint.
    pub fn load(path: &std::path::Path, expect_fingerprint: &str) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let fail = |m: &str| Error::Corrupt(format!("{}: {}", path.display(), m));
        if bytes.len() < 16 || &bytes[0..4] != b"HED1" {
            return Err(fail("not a head file"));
        }
        let dim_in = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let dim_out = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let fp_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let body = 16 + fp_len;
        if bytes.len() < body {
            return Err(fail("truncated fingerprint"));
        }
        let fp = std::str::from_utf8(&bytes[16..body]).map_err(|_| fail("bad fingerprint"))?;
        if fp != expect_fingerprint {
            return Err(Error::Incompatible(format!(
                "head was trained with extractor {} but the configured extractor is {}",
                fp, expect_fingerprint
            )));
        }
        let need = body + dim_in * dim_out * 8;
        if bytes.len() != need {
            return Err(fail("truncated weights"));
        }
        let w = bytes[body..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { dim_in, dim_out, w })
    }
}

/// Training output: the head plus the per-iteration log.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub head: TrainedHead,
    pub log: Vec<TrainLogEntry>,
}

enum Sampler {
    Clustered(BatchSampler),
    Random(RandomBatchSampler),
}

/// Run the full training recipe over a quadruplet dataset.
///
/// Clusters are refreshed every `cluster.refresh_every` iterations from the
/// current head's embeddings of the reference-year images. Each iteration
/// draws one batch, augments it (year-wise or per-image, per the toggles),
/// extracts base features, projects through W, evaluates the loss, and
/// takes one Adam step on W.
pub fn train_linear_head(
    source: &dyn ImageSource,
    regions: &[RegionId],
    years: &[u16],
    grid: &RegionGrid,
    extractor: &Extractor,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if regions.is_empty() {
        return Err(Error::invalid("empty region list"));
    }
    if years.is_empty() {
        return Err(Error::invalid("empty year list"));
    }
    cfg.cluster.validate()?;
    cfg.batch.validate()?;
    cfg.loss.validate()?;
    if !years.contains(&cfg.cluster.reference_year) {
        return Err(Error::invalid(format!(
            "reference year {} is not in the configured year set",
            cfg.cluster.reference_year
        )));
    }

    let dim_in = extractor.config().dim;
    let mut head = TrainedHead::identity(dim_in, cfg.head_dim);
    let mut adam = Adam::new(head.w.len(), &cfg.optimizer);

    let mut batch_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut aug_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));

    let mut sampler = None;
    let mut log = Vec::with_capacity(cfg.optimizer.iterations);

    for iteration in 0..cfg.optimizer.iterations {
        if cfg.toggles.clustered_batches {
            if iteration % cfg.cluster.refresh_every == 0 {
                sampler = Some(Sampler::Clustered(recluster(
                    source, regions, extractor, &head, cfg, iteration,
                )?));
            }
        } else if sampler.is_none() {
            sampler = Some(Sampler::Random(RandomBatchSampler::new(
                regions, &cfg.batch,
            )?));
        }

        let (cluster_id, batch_regions) = match sampler.as_mut().expect("sampler initialized") {
            Sampler::Clustered(s) => {
                let b = s.next_batch(&mut batch_rng);
                (Some(b.cluster_id), b.regions)
            }
            Sampler::Random(s) => (None, s.next_batch(&mut batch_rng)),
        };

        // assemble the batch: every region contributes one image per year
        let mut tagged: Vec<(RegionId, u16, crate::raster::Rgb8Image)> = Vec::new();
        for &r in &batch_regions {
            for &y in years {
                tagged.push((r, y, source.image(r, y)?));
            }
        }

        // augmentation
        let images: Vec<crate::raster::Rgb8Image> = if cfg.augment.is_identity() {
            tagged.iter().map(|(_, _, img)| img.clone()).collect()
        } else if cfg.toggles.year_wise_aug {
            let plan = AugmentationPlan::sample(years, &cfg.augment, &mut aug_rng)?;
            tagged
                .iter()
                .map(|(_, y, img)| plan.params(*y).expect("year configured").apply(img))
                .collect()
        } else {
            // per-image independent parameters, same families and ranges
            tagged
                .iter()
                .map(|(_, _, img)| AugmentParams::sample(&cfg.augment, &mut aug_rng).apply(img))
                .collect()
        };

        // base features and head forward pass
        let mut base = Vec::with_capacity(images.len());
        for img in &images {
            base.push(extractor.extract(img)?);
        }
        let mut pre_norm = Vec::with_capacity(base.len());
        let mut embeddings = Vec::with_capacity(base.len());
        for b in &base {
            let u = head.forward(b);
            let e = l2_normalize(&u)?;
            pre_norm.push(u);
            embeddings.push(e);
        }

        let s = similarity_matrix(&embeddings)?;
        let (loss, grad_s) = if cfg.toggles.neutral_aware {
            let rel = RelationMatrix::from_pairwise(tagged.len(), |i, j| {
                grid.relation(tagged[i].0, tagged[j].0)
            })?;
            na_ms_loss(&s, &rel, &cfg.loss)?
        } else {
            let labels: Vec<usize> = {
                // dense class index per region
                let mut map = std::collections::HashMap::new();
                tagged
                    .iter()
                    .map(|(r, _, _)| {
                        let next = map.len();
                        *map.entry(*r).or_insert(next)
                    })
                    .collect()
            };
            ms_loss(&s, &labels, &cfg.loss)?
        };

        if !loss.is_finite() {
            return Err(Error::Divergence {
                iteration,
                detail: format!("loss became {}", loss),
            });
        }

        // back-propagate to W: dL/dW = sum_i outer(dL/du_i, x_i)
        let grad_embeddings = chain_grad_to_embeddings(&grad_s, &embeddings)?;
        let mut grad_w = vec![0.0f64; head.w.len()];
        for i in 0..embeddings.len() {
            let gu = normalization_vjp(&pre_norm[i], &grad_embeddings[i])?;
            let x = base[i].values();
            for (o, gu_o) in gu.iter().enumerate() {
                if *gu_o == 0.0 {
                    continue;
                }
                let row = &mut grad_w[o * dim_in..(o + 1) * dim_in];
                for (slot, xv) in row.iter_mut().zip(x) {
                    *slot += gu_o * *xv as f64;
                }
            }
        }

        adam.step(&mut head.w, &grad_w);

        log.push(TrainLogEntry {
            iteration,
            loss,
            cluster_id,
            lr: cfg.optimizer.learning_rate,
        });
    }

    Ok(TrainOutcome { head, log })
}

fn recluster(
    source: &dyn ImageSource,
    regions: &[RegionId],
    extractor: &Extractor,
    head: &TrainedHead,
    cfg: &TrainConfig,
    iteration: usize,
) -> Result<BatchSampler> {
    let mut embeddings = Vec::with_capacity(regions.len());
    for &r in regions {
        let img = source.image(r, cfg.cluster.reference_year)?;
        let base = extractor.extract(&img)?;
        embeddings.push(head.apply(&base)?);
    }
    let c = cfg.cluster.num_clusters.min(regions.len());
    let km = kmeans(
        &embeddings,
        c,
        cfg.seed.wrapping_add(1000).wrapping_add(iteration as u64),
    )?;
    BatchSampler::new(&km, regions, &cfg.batch)
}

/// Scalar Adam over a flat parameter vector.
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    fn new(n: usize, cfg: &OptimizerConfig) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.epsilon,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::ExtractorConfig;
    use crate::raster::Rgb8Image;
    use rand::Rng;

    /// Procedural image source: distinct noise per (region, year).
    struct NoiseSource;

    impl ImageSource for NoiseSource {
        fn image(&self, region: RegionId, year: u16) -> Result<Rgb8Image> {
            let seed = region.pack() ^ ((year as u64) << 1);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = (0..32 * 32 * 3).map(|_| rng.gen()).collect();
            Rgb8Image::new(32, 32, data)
        }
    }

    fn small_setup() -> (Vec<RegionId>, Vec<u16>, RegionGrid, Extractor, TrainConfig) {
        let grid = RegionGrid::new(256).unwrap();
        let regions: Vec<RegionId> = (0..24)
            .map(|i| grid.region(6, (i * 4) % 120, (i / 8) * 4).unwrap())
            .collect();
        let years = vec![2018u16, 2019, 2020, 2021];
        let extractor = Extractor::new(ExtractorConfig {
            dim: 32,
            grid: 4,
            seed: 5,
        })
        .unwrap();
        let cfg = TrainConfig {
            cluster: ClusterConfig {
                num_clusters: 4,
                refresh_every: 10,
                reference_year: 2021,
            },
            batch: BatchSpec {
                quadruplets_per_batch: 4,
                images_per_quadruplet: 4,
            },
            optimizer: OptimizerConfig {
                iterations: 12,
                learning_rate: 1e-3,
                ..Default::default()
            },
            head_dim: 32,
            seed: 3,
            ..Default::default()
        };
        (regions, years, grid, extractor, cfg)
    }

    #[test]
    fn zero_learning_rate_keeps_w_fixed() {
        let (regions, years, grid, extractor, mut cfg) = small_setup();
        cfg.optimizer.learning_rate = 0.0;
        let out = train_linear_head(&NoiseSource, &regions, &years, &grid, &extractor, &cfg)
            .unwrap();
        let identity = TrainedHead::identity(32, 32);
        assert_eq!(out.head.w, identity.w);
        assert_eq!(out.log.len(), 12);
    }

    #[test]
    fn fixed_seed_reproduces_the_log() {
        let (regions, years, grid, extractor, cfg) = small_setup();
        let a = train_linear_head(&NoiseSource, &regions, &years, &grid, &extractor, &cfg)
            .unwrap();
        let b = train_linear_head(&NoiseSource, &regions, &years, &grid, &extractor, &cfg)
            .unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.head.w, b.head.w);
    }

    #[test]
    fn log_carries_cluster_ids_only_when_clustering() {
        let (regions, years, grid, extractor, mut cfg) = small_setup();
        let clustered =
            train_linear_head(&NoiseSource, &regions, &years, &grid, &extractor, &cfg).unwrap();
        assert!(clustered.log.iter().all(|e| e.cluster_id.is_some()));
        cfg.toggles.clustered_batches = false;
        let random =
            train_linear_head(&NoiseSource, &regions, &years, &grid, &extractor, &cfg).unwrap();
        assert!(random.log.iter().all(|e| e.cluster_id.is_none()));
    }

    #[test]
    fn head_save_load_round_trip_and_fingerprint_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("head.bin");
        let head = TrainedHead::identity(8, 8);
        head.save(&path, "fp-aaaa").unwrap();
        let back = TrainedHead::load(&path, "fp-aaaa").unwrap();
        assert_eq!(back, head);
        assert!(matches!(
            TrainedHead::load(&path, "fp-bbbb"),
            Err(Error::Incompatible(_))
        ));
    }

    #[test]
    fn identity_head_preserves_embeddings() {
        let e = crate::features::l2_normalize(&[0.5, -1.0, 2.0, 0.25]).unwrap();
        let head = TrainedHead::identity(4, 4);
        let out = head.apply(&e).unwrap();
        for (a, b) in e.values().iter().zip(out.values()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
