//! Recall@N evaluation under the non-zero-overlap success criterion.
//!
//! A prediction is correct when the predicted region's polygon overlaps
//! the query's ground-truth footprint with positive area; the predicted
//! year and rotation are irrelevant to correctness. Recall@N is the
//! percentage of queries with at least one correct prediction among the
//! top N.

pub mod plot;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::database::QueryRecord;
use crate::error::{Error, Result};
use crate::geodesy::{footprints_overlap, haversine_km, Footprint, RegionGrid, RegionId};
use crate::index::Prediction;

/// Per-query outcome row, kept for downstream binning and plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub id: String,
    /// Rank of the first correct prediction, if any (1-based).
    pub best_correct_rank: Option<usize>,
    pub distance_from_nadir_km: f64,
    pub area_sqkm: f64,
}

/// Recall percentages at the configured cutoffs plus per-query rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub set_name: String,
    pub ns: Vec<usize>,
    pub recall_pct: Vec<f64>,
    pub query_count: usize,
    pub config_fingerprint: String,
    pub per_query: Vec<QueryOutcome>,
}

impl RecallReport {
    pub fn recall_at(&self, n: usize) -> Option<f64> {
        self.ns.iter().position(|x| *x == n).map(|i| self.recall_pct[i])
    }

    fn from_outcomes(
        set_name: &str,
        ns: &[usize],
        outcomes: Vec<QueryOutcome>,
        config_fingerprint: &str,
    ) -> Self {
        let total = outcomes.len().max(1) as f64;
        let recall_pct = ns
            .iter()
            .map(|&n| {
                let hits = outcomes
                    .iter()
                    .filter(|o| o.best_correct_rank.map_or(false, |r| r <= n))
                    .count();
                100.0 * hits as f64 / total
            })
            .collect();
        Self {
            set_name: set_name.to_string(),
            ns: ns.to_vec(),
            recall_pct,
            query_count: outcomes.len(),
            config_fingerprint: config_fingerprint.to_string(),
            per_query: outcomes,
        }
    }
}

fn sorted_ns(ns: &[usize]) -> Result<Vec<usize>> {
    if ns.is_empty() || ns.contains(&0) {
        return Err(Error::invalid("recall cutoffs must be positive and non-empty"));
    }
    let mut out = ns.to_vec();
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// Score ranked predictions against ground truths. `predictions[i]` holds
/// the ranked list for `queries[i]`.
pub fn score(
    predictions: &[Vec<Prediction>],
    queries: &[QueryRecord],
    ns: &[usize],
    grid: &RegionGrid,
    set_name: &str,
    config_fingerprint: &str,
) -> Result<RecallReport> {
    let ns = sorted_ns(ns)?;
    if predictions.len() != queries.len() {
        return Err(Error::invalid(format!(
            "{} prediction lists for {} queries",
            predictions.len(),
            queries.len()
        )));
    }
    let mut outcomes = Vec::with_capacity(queries.len());
    for (q, preds) in queries.iter().zip(predictions) {
        q.footprint
            .validate()
            .map_err(|e| Error::invalid(format!("query {} has no usable ground truth: {}", q.id, e)))?;
        let mut best = None;
        for p in preds {
            let poly = grid.polygon(p.region)?;
            if footprints_overlap(&poly, &q.footprint)
                .map_err(|e| Error::invalid(format!("query {}: {}", q.id, e)))?
            {
                best = Some(p.rank);
                break;
            }
        }
        outcomes.push(QueryOutcome {
            id: q.id.clone(),
            best_correct_rank: best,
            distance_from_nadir_km: haversine_km(q.nadir, q.footprint.center_point()),
            area_sqkm: q.area_sqkm,
        });
    }
    Ok(RecallReport::from_outcomes(set_name, &ns, outcomes, config_fingerprint))
}

/// The naive baseline that predicts the query to lie directly at nadir:
/// the coarsest-zoom region whose square contains the nadir point. Returns
/// an empty list when the nadir falls outside every candidate region.
pub fn nadir_baseline(
    query: &QueryRecord,
    regions: &[RegionId],
    grid: &RegionGrid,
) -> Result<Vec<Prediction>> {
    let mut best: Option<RegionId> = None;
    for &r in regions {
        if grid.contains(r, query.nadir).unwrap_or(false) {
            let better = match best {
                None => true,
                Some(b) => (r.zoom, r.iy, r.ix) < (b.zoom, b.iy, b.ix),
            };
            if better {
                best = Some(r);
            }
        }
    }
    Ok(best
        .map(|region| {
            vec![Prediction {
                region,
                year: 0,
                rotation_deg: 0,
                score: 1.0,
                rank: 1,
            }]
        })
        .unwrap_or_default())
}

/// Monte-Carlo expectation of recall when predictions are drawn uniformly
/// without replacement from the database, averaged over `trials`.
pub fn random_baseline(
    queries: &[QueryRecord],
    db_regions: &[RegionId],
    ns: &[usize],
    grid: &RegionGrid,
    trials: usize,
    seed: u64,
) -> Result<RecallReport> {
    let ns = sorted_ns(ns)?;
    if trials == 0 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    if db_regions.is_empty() {
        return Err(Error::invalid("empty database"));
    }
    // precompute which database regions overlap each query
    let polys: Vec<Footprint> = db_regions
        .iter()
        .map(|&r| grid.polygon(r))
        .collect::<Result<_>>()?;
    let correct: Vec<Vec<bool>> = queries
        .iter()
        .map(|q| {
            polys
                .iter()
                .map(|p| footprints_overlap(p, &q.footprint))
                .collect::<Result<Vec<bool>>>()
        })
        .collect::<Result<_>>()?;

    let max_n = *ns.last().unwrap();
    let draw = max_n.min(db_regions.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..db_regions.len()).collect();
    let mut hits = vec![vec![0u64; ns.len()]; queries.len()];
    for _ in 0..trials {
        for (qi, flags) in correct.iter().enumerate() {
            indices.shuffle(&mut rng);
            let mut first_hit = None;
            for (rank, &db_i) in indices[..draw].iter().enumerate() {
                if flags[db_i] {
                    first_hit = Some(rank + 1);
                    break;
                }
            }
            if let Some(rank) = first_hit {
                for (ni, &n) in ns.iter().enumerate() {
                    if rank <= n {
                        hits[qi][ni] += 1;
                    }
                }
            }
        }
    }
    let denom = (trials * queries.len().max(1)) as f64;
    let recall_pct = (0..ns.len())
        .map(|ni| 100.0 * hits.iter().map(|h| h[ni]).sum::<u64>() as f64 / denom)
        .collect();
    Ok(RecallReport {
        set_name: "random-baseline".to_string(),
        ns,
        recall_pct,
        query_count: queries.len(),
        config_fingerprint: format!("random:trials={}:seed={}", trials, seed),
        per_query: Vec::new(),
    })
}

/// Diagnostic key for binned recall.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinKey {
    DistanceFromNadirKm,
    AreaSqkm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinStat {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// None marks an empty bin (recall undefined).
    pub recall_at_1_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedReport {
    pub set_name: String,
    pub key: BinKey,
    pub bins: Vec<BinStat>,
}

/// Per-bin Recall@1 over the keyed attribute. `edges` are the full bin
/// boundaries (at least two, strictly increasing); values outside the
/// range are clamped into the end bins so every query is counted.
pub fn binned_recall(report: &RecallReport, key: BinKey, edges: &[f64]) -> Result<BinnedReport> {
    if edges.len() < 2 || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("bin edges must be strictly increasing, length >= 2"));
    }
    let nbins = edges.len() - 1;
    let mut counts = vec![0usize; nbins];
    let mut hits = vec![0usize; nbins];
    for o in &report.per_query {
        let v = match key {
            BinKey::DistanceFromNadirKm => o.distance_from_nadir_km,
            BinKey::AreaSqkm => o.area_sqkm,
        };
        let mut bin = nbins - 1;
        for i in 0..nbins {
            if v < edges[i + 1] || i == nbins - 1 {
                bin = i;
                break;
            }
        }
        counts[bin] += 1;
        if o.best_correct_rank == Some(1) {
            hits[bin] += 1;
        }
    }
    let bins = (0..nbins)
        .map(|i| BinStat {
            lo: edges[i],
            hi: edges[i + 1],
            count: counts[i],
            recall_at_1_pct: if counts[i] == 0 {
                None
            } else {
                Some(100.0 * hits[i] as f64 / counts[i] as f64)
            },
        })
        .collect();
    Ok(BinnedReport {
        set_name: report.set_name.clone(),
        key,
        bins,
    })
}

/// Log-spaced bin edges over the query-area filter range.
pub fn default_area_edges() -> Vec<f64> {
    let (lo, hi) = (5000.0f64, 900_000.0f64);
    let n = 8;
    (0..=n)
        .map(|i| lo * (hi / lo).powf(i as f64 / n as f64))
        .collect()
}

/// Linear distance bins out to the operational search radius.
pub fn default_distance_edges() -> Vec<f64> {
    (0..=10).map(|i| i as f64 * 250.0).collect()
}

/// Human-readable report table.
pub fn render_text(report: &RecallReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "evaluation set: {} ({} queries)\n",
        report.set_name, report.query_count
    ));
    out.push_str(&format!("config: {}\n", report.config_fingerprint));
    out.push_str(":-------:+---------:\n");
    out.push_str("     N  |  Recall%\n");
    out.push_str(":-------:+---------:\n");
    for (n, r) in report.ns.iter().zip(&report.recall_pct) {
        out.push_str(&format!("{:>7} | {:>8.1}\n", n, r));
    }
    out
}

/// Human-readable binned table.
pub fn render_binned_text(binned: &BinnedReport) -> String {
    let key = match binned.key {
        BinKey::DistanceFromNadirKm => "distance from nadir (km)",
        BinKey::AreaSqkm => "area (sq. km)",
    };
    let mut out = format!("{} — R@1 by {}\n", binned.set_name, key);
    for b in &binned.bins {
        match b.recall_at_1_pct {
            Some(r) => out.push_str(&format!(
                "[{:>10.0}, {:>10.0})  n={:<6} R@1={:>5.1}\n",
                b.lo, b.hi, b.count, r
            )),
            None => out.push_str(&format!(
                "[{:>10.0}, {:>10.0})  n={:<6} R@1=  n/a\n",
                b.lo, b.hi, b.count
            )),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesy::GeoPoint;

    fn grid() -> RegionGrid {
        RegionGrid::new(256).unwrap()
    }

    fn query_over(region: RegionId, g: &RegionGrid, id: &str) -> QueryRecord {
        let poly = g.polygon(region).unwrap();
        QueryRecord {
            id: id.to_string(),
            nadir: poly.center.unwrap(),
            timestamp: chrono::DateTime::parse_from_rfc3339("2021-06-01T12:00:00Z")
                .unwrap()
                .with_timezone(&chrono::Utc),
            footprint: poly,
            area_sqkm: 9000.0,
            focal_length_mm: None,
        }
    }

    fn pred(region: RegionId, rank: usize) -> Prediction {
        Prediction {
            region,
            year: 2021,
            rotation_deg: 0,
            score: 1.0 / rank as f64,
            rank,
        }
    }

    #[test]
    fn half_correct_top1_scores_fifty() {
        let g = grid();
        let a = g.region(6, 10, 10).unwrap();
        let far = g.region(6, 80, 40).unwrap();
        let queries: Vec<QueryRecord> =
            (0..10).map(|i| query_over(a, &g, &format!("q{}", i))).collect();
        // half the queries get the right region at rank 1, half a disjoint one
        let predictions: Vec<Vec<Prediction>> = (0..10)
            .map(|i| vec![pred(if i % 2 == 0 { a } else { far }, 1)])
            .collect();
        let report = score(&predictions, &queries, &[1, 10], &g, "fixture", "cfg").unwrap();
        assert_eq!(report.recall_at(1), Some(50.0));
        assert_eq!(report.recall_at(10), Some(50.0));
        assert_eq!(report.query_count, 10);
    }

    #[test]
    fn disjoint_predictions_score_zero_and_monotone() {
        let g = grid();
        let a = g.region(6, 10, 10).unwrap();
        let near = g.region(6, 11, 10).unwrap(); // half-stride neighbor: overlaps
        let far = g.region(6, 80, 40).unwrap();
        let queries = vec![query_over(a, &g, "q0"), query_over(a, &g, "q1")];
        let predictions = vec![
            vec![pred(far, 1), pred(near, 2)], // correct at rank 2
            vec![pred(far, 1), pred(far, 2)],  // never correct
        ];
        let report = score(&predictions, &queries, &[1, 2, 10], &g, "s", "c").unwrap();
        assert_eq!(report.recall_at(1), Some(0.0));
        assert_eq!(report.recall_at(2), Some(50.0));
        assert_eq!(report.recall_at(10), Some(50.0));
        // non-decreasing in N
        for w in report.recall_pct.windows(2) {
            assert!(w[0] <= w[1]);
        }
    }

    #[test]
    fn score_is_invariant_to_query_order() {
        let g = grid();
        let a = g.region(6, 10, 10).unwrap();
        let far = g.region(6, 80, 40).unwrap();
        let queries: Vec<QueryRecord> =
            (0..6).map(|i| query_over(a, &g, &format!("q{}", i))).collect();
        let predictions: Vec<Vec<Prediction>> = (0..6)
            .map(|i| vec![pred(if i < 2 { a } else { far }, 1)])
            .collect();
        let fwd = score(&predictions, &queries, &[1], &g, "s", "c").unwrap();
        let rev_p: Vec<_> = predictions.iter().rev().cloned().collect();
        let rev_q: Vec<_> = queries.iter().rev().cloned().collect();
        let rev = score(&rev_p, &rev_q, &[1], &g, "s", "c").unwrap();
        assert_eq!(fwd.recall_pct, rev.recall_pct);
    }

    #[test]
    fn mismatched_lengths_error() {
        let g = grid();
        let a = g.region(6, 10, 10).unwrap();
        let queries = vec![query_over(a, &g, "q0")];
        assert!(score(&[], &queries, &[1], &g, "s", "c").is_err());
        assert!(score(&[vec![]], &queries, &[], &g, "s", "c").is_err());
    }

    #[test]
    fn nadir_baseline_cases() {
        let g = grid();
        let cfg = crate::database::TilingConfig {
            zooms: vec![5, 6],
            lat_limit_deg: 66.0,
            years: vec![2021],
            image_px: 256,
        };
        let regions = crate::database::enumerate_regions(&cfg, &crate::database::AcceptAll).unwrap();

        // query whose footprint contains its nadir: the baseline is correct
        // (iy 63 centers the region on the equator, inside the band)
        let a = g.region(6, 20, 63).unwrap();
        let q = query_over(a, &g, "centered");
        let preds = nadir_baseline(&q, &regions, &g).unwrap();
        assert_eq!(preds.len(), 1);
        assert_eq!(preds[0].region.zoom, 5, "coarsest zoom wins");
        let report = score(&[preds], &[q], &[1], &g, "s", "c").unwrap();
        assert_eq!(report.recall_at(1), Some(100.0));

        // oblique query: nadir far away from the footprint
        let mut oblique = query_over(a, &g, "oblique");
        oblique.nadir = GeoPoint::new(-40.0, -120.0).unwrap();
        let preds = nadir_baseline(&oblique, &regions, &g).unwrap();
        let report = score(&[preds], &[oblique], &[1], &g, "s", "c").unwrap();
        assert_eq!(report.recall_at(1), Some(0.0));

        // nadir outside the latitude band: no prediction
        let mut polar = query_over(a, &g, "polar");
        polar.nadir = GeoPoint::new(80.0, 0.0).unwrap();
        assert!(nadir_baseline(&polar, &regions, &g).unwrap().is_empty());
    }

    #[test]
    fn random_baseline_matches_hypergeometric_expectation() {
        let g = grid();
        // database of 10 disjoint regions (stride-2 spacing avoids overlap)
        let regions: Vec<RegionId> = (0..10).map(|i| g.region(6, 20 + 4 * i, 20).unwrap()).collect();
        // each query overlaps exactly its own region
        let queries: Vec<QueryRecord> = (0..20)
            .map(|i| query_over(regions[i % 10], &g, &format!("q{}", i)))
            .collect();
        let trials = 10_000;
        let report =
            random_baseline(&queries, &regions, &[5], &g, trials, 12345).unwrap();
        let got = report.recall_at(5).unwrap();
        // analytic: 1 - C(9,5)/C(10,5) = 0.5; binomial 3-sigma bound
        let sigma_pct = 100.0 * (0.25f64 / (trials * queries.len()) as f64).sqrt();
        assert!(
            (got - 50.0).abs() <= 3.0 * sigma_pct,
            "got {} expected 50 +/- {}",
            got,
            3.0 * sigma_pct
        );

        // N = |DB| guarantees a hit
        let all = random_baseline(&queries, &regions, &[10], &g, 50, 1).unwrap();
        assert_eq!(all.recall_at(10), Some(100.0));
    }

    #[test]
    fn binned_recall_partitions_queries() {
        let g = grid();
        let a = g.region(6, 10, 10).unwrap();
        let queries: Vec<QueryRecord> =
            (0..8).map(|i| query_over(a, &g, &format!("q{}", i))).collect();
        let predictions: Vec<Vec<Prediction>> = (0..8)
            .map(|i| {
                vec![pred(
                    if i < 4 { a } else { g.region(6, 80, 40).unwrap() },
                    1,
                )]
            })
            .collect();
        let report = score(&predictions, &queries, &[1], &g, "s", "c").unwrap();

        // all queries land in one bin: bin recall equals overall R@1
        let edges = vec![0.0, 1e9];
        let binned = binned_recall(&report, BinKey::AreaSqkm, &edges).unwrap();
        assert_eq!(binned.bins.len(), 1);
        assert_eq!(binned.bins[0].count, 8);
        assert_eq!(binned.bins[0].recall_at_1_pct, report.recall_at(1));

        // counts sum to the query total even with empty bins
        let edges = default_area_edges();
        let binned = binned_recall(&report, BinKey::AreaSqkm, &edges).unwrap();
        let total: usize = binned.bins.iter().map(|b| b.count).sum();
        assert_eq!(total, 8);
        assert!(binned.bins.iter().any(|b| b.count == 0 && b.recall_at_1_pct.is_none()));

        assert!(binned_recall(&report, BinKey::AreaSqkm, &[1.0]).is_err());
    }

    #[test]
    fn text_rendering_contains_the_numbers() {
        let g = grid();
        let a = g.region(6, 10, 10).unwrap();
        let queries = vec![query_over(a, &g, "q0")];
        let predictions = vec![vec![pred(a, 1)]];
        let report = score(&predictions, &queries, &[1, 10], &g, "demo", "cfg-1").unwrap();
        let text = render_text(&report);
        assert!(text.contains("demo") && text.contains("100.0"), "{}", text);
        let binned = binned_recall(&report, BinKey::DistanceFromNadirKm, &default_distance_edges())
            .unwrap();
        let btext = render_binned_text(&binned);
        assert!(btext.contains("distance from nadir"), "{}", btext);
    }
}
