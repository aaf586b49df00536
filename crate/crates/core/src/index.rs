//! Immutable test-time-augmented vector index.
//!
//! Every database image contributes four entries, one per quarter-turn
//! rotation applied losslessly before extraction. Queries are embedded
//! once and searched against all rotations, so a query photographed at an
//! arbitrary orientation lands within 45 degrees of some stored rotation.
//! Search is an exact brute-force scan; ties break toward the earlier
//! entry so results are reproducible and oracle-comparable. The winning
//! entry's rotation tag doubles as the query-orientation estimate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::database::{ImageRef, ImageSource};
use crate::error::{Error, Result};
use crate::features::store::{self, FeatureRecord};
use crate::features::{Embedding, Extractor};
use crate::geodesy::RegionId;

/// One of the four stored rotations, in degrees counter-clockwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RotationTag {
    R0,
    R90,
    R180,
    R270,
}

impl RotationTag {
    pub const ALL: [RotationTag; 4] = [
        RotationTag::R0,
        RotationTag::R90,
        RotationTag::R180,
        RotationTag::R270,
    ];

    pub fn degrees(self) -> u16 {
        match self {
            RotationTag::R0 => 0,
            RotationTag::R90 => 90,
            RotationTag::R180 => 180,
            RotationTag::R270 => 270,
        }
    }

    /// Quarter turns for [`crate::raster::Rgb8Image::rotate_quarter`].
    pub fn turns(self) -> u8 {
        (self.degrees() / 90) as u8
    }

    pub fn from_degrees(deg: u16) -> Result<Self> {
        match deg {
            0 => Ok(RotationTag::R0),
            90 => Ok(RotationTag::R90),
            180 => Ok(RotationTag::R180),
            270 => Ok(RotationTag::R270),
            other => Err(Error::invalid(format!(
                "rotation {} not in {{0, 90, 180, 270}}",
                other
            ))),
        }
    }
}

/// Metadata of one index row; the embedding lives in the contiguous matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexEntry {
    pub region: RegionId,
    pub year: u16,
    pub rotation: RotationTag,
}

/// Build parameters and integrity data, persisted next to the embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexManifest {
    pub dim: usize,
    pub count: usize,
    pub rotations: Vec<u16>,
    pub years: Vec<u16>,
    pub extractor_fingerprint: String,
    pub built_at: String,
}

/// A ranked search result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub region: RegionId,
    pub year: u16,
    pub rotation_deg: u16,
    pub score: f64,
    pub rank: usize,
}

/// Estimated query orientation: the rotation stored with the matched
/// entry, modulo the 90-degree granularity of the augmentation.
pub fn predict_orientation(p: &Prediction) -> u16 {
    p.rotation_deg
}

/// The immutable searchable store.
#[derive(Debug, Clone, PartialEq)]
pub struct TtaIndex {
    dim: usize,
    entries: Vec<IndexEntry>,
    /// count x dim, row-major.
    matrix: Vec<f32>,
    manifest: IndexManifest,
}

impl TtaIndex {
    /// Extract four rotated embeddings for every image whose year passes
    /// the filter. Entry order is (input image order) x (rotation order),
    /// regardless of extraction parallelism.
    pub fn build(
        source: &dyn ImageSource,
        images: &[ImageRef],
        extractor: &Extractor,
        years_filter: &[u16],
    ) -> Result<TtaIndex> {
        let selected: Vec<&ImageRef> = images
            .iter()
            .filter(|i| years_filter.contains(&i.year))
            .collect();
        let per_image: Vec<Result<Vec<Embedding>>> = selected
            .par_iter()
            .map(|img_ref| {
                let img = source.image(img_ref.region, img_ref.year).map_err(|e| {
                    Error::invalid(format!(
                        "loading image {} year {}: {}",
                        img_ref.region, img_ref.year, e
                    ))
                })?;
                RotationTag::ALL
                    .iter()
                    .map(|rot| {
                        extractor.extract(&img.rotate_quarter(rot.turns())).map_err(|e| {
                            Error::invalid(format!(
                                "extracting image {} year {} rotation {}: {}",
                                img_ref.region,
                                img_ref.year,
                                rot.degrees(),
                                e
                            ))
                        })
                    })
                    .collect()
            })
            .collect();

        let dim = extractor.config().dim;
        let mut entries = Vec::with_capacity(selected.len() * 4);
        let mut matrix = Vec::with_capacity(selected.len() * 4 * dim);
        for (img_ref, embs) in selected.iter().zip(per_image) {
            let embs = embs?;
            for (rot, emb) in RotationTag::ALL.iter().zip(embs) {
                entries.push(IndexEntry {
                    region: img_ref.region,
                    year: img_ref.year,
                    rotation: *rot,
                });
                matrix.extend_from_slice(emb.values());
            }
        }
        let manifest = IndexManifest {
            dim,
            count: entries.len(),
            rotations: RotationTag::ALL.iter().map(|r| r.degrees()).collect(),
            years: years_filter.to_vec(),
            extractor_fingerprint: extractor.fingerprint(),
            built_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        };
        Ok(TtaIndex {
            dim,
            entries,
            matrix,
            manifest,
        })
    }

    /// Assemble an index from pre-computed feature records (for example
    /// embeddings imported from an external model).
    pub fn from_records(
        dim: usize,
        records: Vec<FeatureRecord>,
        manifest: IndexManifest,
    ) -> Result<TtaIndex> {
        if manifest.dim != dim || manifest.count != records.len() {
            return Err(Error::Corrupt(format!(
                "manifest says {} entries of dim {}, store has {} of dim {}",
                manifest.count,
                manifest.dim,
                records.len(),
                dim
            )));
        }
        let mut entries = Vec::with_capacity(records.len());
        let mut matrix = Vec::with_capacity(records.len() * dim);
        for r in records {
            let rotation = RotationTag::from_degrees(r.rotation_deg)?;
            // unit-norm gate; values are stored bit-for-bit
            Embedding::from_unit(r.values.clone())?;
            entries.push(IndexEntry {
                region: RegionId::unpack(r.id),
                year: r.year,
                rotation,
            });
            matrix.extend(r.values);
        }
        Ok(TtaIndex {
            dim,
            entries,
            matrix,
            manifest,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn manifest(&self) -> &IndexManifest {
        &self.manifest
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn embedding_row(&self, i: usize) -> &[f32] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }

    /// Exact top-N by dot product over every entry. Ties break toward the
    /// lower entry index. With `dedup` on, only the best-scoring rotation
    /// of each (region, year) survives before truncation.
    pub fn knn(&self, query: &Embedding, n: usize, dedup: bool) -> Result<Vec<Prediction>> {
        if n == 0 {
            return Err(Error::invalid("N must be at least 1"));
        }
        if query.dim() != self.dim {
            return Err(Error::invalid(format!(
                "query dim {} does not match index dim {}",
                query.dim(),
                self.dim
            )));
        }
        let q = query.values();
        let mut scored: Vec<(f64, usize)> = self
            .matrix
            .par_chunks_exact(self.dim)
            .enumerate()
            .map(|(i, row)| (crate::features::dot_f64(row, q), i))
            .collect();
        scored.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

        let mut out = Vec::with_capacity(n.min(scored.len()));
        if dedup {
            let mut seen = std::collections::HashSet::new();
            for (score, i) in scored {
                let e = self.entries[i];
                if seen.insert((e.region, e.year)) {
                    out.push((score, i));
                    if out.len() == n {
                        break;
                    }
                }
            }
        } else {
            out.extend(scored.into_iter().take(n));
        }
        Ok(out
            .into_iter()
            .enumerate()
            .map(|(rank, (score, i))| {
                let e = self.entries[i];
                Prediction {
                    region: e.region,
                    year: e.year,
                    rotation_deg: e.rotation.degrees(),
                    score,
                    rank: rank + 1,
                }
            })
            .collect())
    }

    /// Persist as a directory: `manifest.json` plus `embeddings.emb1`.
    pub fn save(&self, dir: &std::path::Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let manifest = serde_json::to_vec_pretty(&self.manifest)?;
        crate::database::fetch::write_atomic(&dir.join("manifest.json"), &manifest)?;
        let records: Vec<FeatureRecord> = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| FeatureRecord {
                id: e.region.pack(),
                rotation_deg: e.rotation.degrees(),
                year: e.year,
                values: self.embedding_row(i).to_vec(),
            })
            .collect();
        store::write_records(&dir.join("embeddings.emb1"), self.dim, &records)
    }

    /// Load a saved index, verifying the manifest against the expected
    /// extractor fingerprint.
    pub fn load(dir: &std::path::Path, expect_fingerprint: &str) -> Result<TtaIndex> {
        let manifest_path = dir.join("manifest.json");
        let bytes = std::fs::read(&manifest_path).map_err(|_| Error::MissingArtifact {
            path: manifest_path.display().to_string(),
            producer: "index".to_string(),
        })?;
        let manifest: IndexManifest = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Corrupt(format!("{}: {}", manifest_path.display(), e)))?;
        if manifest.extractor_fingerprint != expect_fingerprint {
            return Err(Error::Incompatible(format!(
                "index built with extractor {} but the configured extractor is {}",
                manifest.extractor_fingerprint, expect_fingerprint
            )));
        }
        let (dim, records) = store::read_records(&dir.join("embeddings.emb1"))?;
        Self::from_records(dim, records, manifest)
    }
}
