//! Procedural desk-scale worlds.
//!
//! Appearance comes from one global multi-octave value-noise field sampled
//! in Mercator coordinates, so tiles of overlapping regions agree on the
//! shared ground (including across zoom levels), exactly like composited
//! satellite imagery. Year layers add a global tint plus a low-frequency
//! "weather" modulation. Queries are crops of region extents re-rendered
//! from the field, then rotated, color-jittered and perspective-warped.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::database::{ImageSource, QueryRecord};
use crate::error::{Error, Result};
use crate::geodesy::{
    mercator_inverse, mercator_rect_area_sqkm, Footprint, GeoPoint, RegionGrid, RegionId,
};
use crate::raster::Rgb8Image;
use crate::training::{AugmentParams, AugmentRanges};

/// Parameters of a synthetic world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub num_regions: usize,
    /// Rendered tile resolution (independent of the geometric convention).
    pub tile_px: u32,
    /// Geometric pixel convention fixing region sizes.
    pub image_px: u32,
    pub zooms: Vec<u8>,
    pub years: Vec<u16>,
    pub lat_limit_deg: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_regions: 500,
            tile_px: 64,
            image_px: 1024,
            zooms: vec![9, 10, 11],
            years: vec![2018, 2019, 2020, 2021],
            lat_limit_deg: 60.0,
            seed: 7,
        }
    }
}

/// Per-year global appearance shift.
#[derive(Debug, Clone, Copy)]
struct YearEffect {
    brightness: f64,
    hue_turns: f64,
    weather_amp: f64,
    weather_salt: u64,
}

/// A deterministic procedural world implementing [`ImageSource`].
pub struct SyntheticWorld {
    cfg: SyntheticConfig,
    grid: RegionGrid,
    regions: Vec<RegionId>,
    year_effects: std::collections::BTreeMap<u16, YearEffect>,
}

impl SyntheticWorld {
    pub fn new(cfg: SyntheticConfig) -> Result<Self> {
        if cfg.num_regions < 2 {
            return Err(Error::invalid("a synthetic world needs at least two regions"));
        }
        if cfg.zooms.is_empty() || cfg.years.is_empty() {
            return Err(Error::invalid("zooms and years must be non-empty"));
        }
        let grid = RegionGrid::new(cfg.image_px)?;
        let regions = sample_regions(&cfg, &grid)?;
        let mut year_effects = std::collections::BTreeMap::new();
        for &y in &cfg.years {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ ((y as u64) << 17));
            year_effects.insert(
                y,
                YearEffect {
                    brightness: rng.gen_range(-0.12..0.12),
                    hue_turns: rng.gen_range(-0.05..0.05),
                    weather_amp: rng.gen_range(0.05..0.18),
                    weather_salt: rng.gen(),
                },
            );
        }
        Ok(Self {
            cfg,
            grid,
            regions,
            year_effects,
        })
    }

    pub fn config(&self) -> &SyntheticConfig {
        &self.cfg
    }

    pub fn grid(&self) -> &RegionGrid {
        &self.grid
    }

    pub fn regions(&self) -> &[RegionId] {
        &self.regions
    }

    pub fn years(&self) -> &[u16] {
        &self.cfg.years
    }

    /// Render an arbitrary Mercator rectangle at `px` resolution, with an
    /// optional year layer applied.
    pub fn render_rect(&self, x0: f64, y0: f64, x1: f64, y1: f64, px: u32, year: Option<u16>) -> Rgb8Image {
        let effect = year.and_then(|y| self.year_effects.get(&y));
        let mut data = Vec::with_capacity(px as usize * px as usize * 3);
        for j in 0..px {
            let v = (j as f64 + 0.5) / px as f64;
            let y = y0 + v * (y1 - y0);
            for i in 0..px {
                let u = (i as f64 + 0.5) / px as f64;
                let x = x0 + u * (x1 - x0);
                let mut rgb = self.field_rgb(x, y);
                if let Some(e) = effect {
                    rgb = apply_year_effect(rgb, e, x, y, self.cfg.seed);
                }
                for c in rgb {
                    data.push((c.clamp(0.0, 1.0) * 255.0).round() as u8);
                }
            }
        }
        Rgb8Image::new(px, px, data).expect("sized correctly")
    }

    /// Base color of the global field at a Mercator point.
    fn field_rgb(&self, x: f64, y: f64) -> [f64; 3] {
        // octaves sized so that structure is visible at every region zoom
        let mut channels = [0.0f64; 3];
        for (ci, channel) in channels.iter_mut().enumerate() {
            let salt = self.cfg.seed ^ (ci as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
            let mut amp = 0.5;
            let mut freq = 48.0;
            let mut acc = 0.0;
            for octave in 0..6u64 {
                acc += amp * value_noise(x * freq, y * freq, salt ^ (octave << 8));
                amp *= 0.55;
                freq *= 2.0;
            }
            *channel = acc;
        }
        // palette: mix the channels so regions get varied, natural-ish color
        let a = channels[0];
        let b = channels[1];
        let c = channels[2];
        [
            0.15 + 0.75 * a,
            0.15 + 0.60 * b + 0.15 * a,
            0.10 + 0.70 * c,
        ]
    }
}

fn apply_year_effect(rgb: [f64; 3], e: &YearEffect, x: f64, y: f64, seed: u64) -> [f64; 3] {
    // low-frequency multiplicative "weather" layer
    let w = value_noise(x * 24.0, y * 24.0, seed ^ e.weather_salt) - 0.5;
    let gain = 1.0 + e.brightness + e.weather_amp * 2.0 * w;
    let [mut r, mut g, mut b] = rgb.map(|v| v * gain);
    if e.hue_turns != 0.0 {
        let angle = e.hue_turns * std::f64::consts::TAU;
        let (hc, hs) = (angle.cos(), angle.sin());
        let i = 0.595716 * r - 0.274453 * g - 0.321263 * b;
        let q = 0.211456 * r - 0.522591 * g + 0.311135 * b;
        let (i2, q2) = (hc * i - hs * q, hs * i + hc * q);
        let yl = 0.299 * r + 0.587 * g + 0.114 * b;
        r = yl + 0.9563 * i2 + 0.6210 * q2;
        g = yl - 0.2721 * i2 - 0.6474 * q2;
        b = yl - 1.1070 * i2 + 1.7046 * q2;
    }
    [r, g, b]
}

impl ImageSource for SyntheticWorld {
    fn image(&self, region: RegionId, year: u16) -> Result<Rgb8Image> {
        if !self.year_effects.contains_key(&year) {
            return Err(Error::invalid(format!("year {} not in the synthetic world", year)));
        }
        let (x0, y0, x1, y1) = self.grid.rect_f64(region)?;
        Ok(self.render_rect(x0, y0, x1, y1, self.cfg.tile_px, Some(year)))
    }
}

/// Pick a clumped sample of regions: anchors across the band plus some
/// half-stride neighbors and next-zoom children, so batches naturally
/// contain overlapping (neutral) pairs.
fn sample_regions(cfg: &SyntheticConfig, grid: &RegionGrid) -> Result<Vec<RegionId>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut zooms = cfg.zooms.clone();
    zooms.sort_unstable();
    zooms.dedup();
    let mut chosen = std::collections::BTreeSet::new();
    let mut guard = 0;
    while chosen.len() < cfg.num_regions {
        guard += 1;
        if guard > cfg.num_regions * 100 {
            return Err(Error::invalid(
                "could not sample enough distinct regions; grid too small for num_regions",
            ));
        }
        let zoom = zooms[rng.gen_range(0..zooms.len())];
        let n = grid.cells_per_axis(zoom)?;
        let (lo, hi) = band_rows(grid, zoom, cfg.lat_limit_deg)?;
        if lo > hi {
            continue;
        }
        let anchor = RegionId::new(zoom, rng.gen_range(0..n), rng.gen_range(lo..=hi));
        chosen.insert(anchor);
        // a third of anchors bring an overlapping companion
        if chosen.len() < cfg.num_regions && rng.gen_bool(0.34) {
            let companion = if rng.gen_bool(0.5) && anchor.ix + 1 < n {
                // half-stride axis neighbor (50% overlap)
                Some(RegionId::new(zoom, anchor.ix + 1, anchor.iy))
            } else if zooms.contains(&(zoom + 1)) {
                // next-zoom child fully inside the anchor square
                Some(RegionId::new(zoom + 1, anchor.ix * 2 + 1, anchor.iy * 2 + 1))
            } else {
                None
            };
            if let Some(c) = companion {
                let cn = grid.cells_per_axis(c.zoom)?;
                if c.ix < cn && c.iy < cn {
                    chosen.insert(c);
                }
            }
        }
    }
    let mut regions: Vec<RegionId> = chosen.into_iter().collect();
    regions.sort_by_key(|r| (r.zoom, r.iy, r.ix));
    regions.truncate(cfg.num_regions);
    Ok(regions)
}

/// Inclusive iy range whose region centers stay inside the latitude band.
fn band_rows(grid: &RegionGrid, zoom: u8, lat_limit: f64) -> Result<(u32, u32)> {
    let n = grid.cells_per_axis(zoom)?;
    let mut lo = n;
    let mut hi = 0;
    for iy in 0..n {
        let lat = grid.center(RegionId::new(zoom, 0, iy))?.lat_deg();
        if lat.abs() <= lat_limit {
            lo = lo.min(iy);
            hi = hi.max(iy);
        }
    }
    Ok((lo, hi))
}

/// A generated query: the photo-like buffer plus its catalog record.
pub struct SyntheticQuery {
    pub record: QueryRecord,
    pub image: Rgb8Image,
    /// The region the crop was taken from (always overlaps the footprint).
    pub source_region: RegionId,
    pub applied_rotation_deg: f32,
}

/// Transformation ranges applied to query renders.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryTransforms {
    /// Crop side as a fraction of the region side.
    pub crop_min: f64,
    pub crop_max: f64,
    pub ranges: AugmentRanges,
    /// Max nadir offset from the footprint center, degrees.
    pub nadir_offset_deg: f64,
}

impl Default for QueryTransforms {
    fn default() -> Self {
        Self {
            crop_min: 0.75,
            crop_max: 1.0,
            ranges: AugmentRanges {
                brightness: 0.2,
                contrast: 0.2,
                saturation: 0.2,
                hue: 0.04,
                rotation_deg: 180.0,
                perspective: 0.08,
            },
            nadir_offset_deg: 3.0,
        }
    }
}

impl SyntheticWorld {
    /// Generate `n` queries by cropping region extents and distorting the
    /// renders. Ground truth footprints are the crop rectangles.
    pub fn make_queries(&self, n: usize, seed: u64, t: &QueryTransforms) -> Result<Vec<SyntheticQuery>> {
        if !(t.crop_min > 0.0 && t.crop_min <= t.crop_max && t.crop_max <= 1.0) {
            return Err(Error::invalid("crop fractions must satisfy 0 < min <= max <= 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n);
        let base_ts = chrono::DateTime::parse_from_rfc3339("2022-03-01T00:00:00Z")
            .expect("valid")
            .with_timezone(&chrono::Utc);
        for i in 0..n {
            let region = self.regions[rng.gen_range(0..self.regions.len())];
            let (rx0, ry0, rx1, ry1) = self.grid.rect_f64(region)?;
            let side = rx1 - rx0;
            let crop = side * rng.gen_range(t.crop_min..=t.crop_max);
            let ox = rng.gen_range(0.0..=(side - crop));
            let oy = rng.gen_range(0.0..=(side - crop));
            let (x0, y0) = (rx0 + ox, ry0 + oy);
            let (x1, y1) = (x0 + crop, y0 + crop);

            let rendered = self.render_rect(x0, y0, x1, y1, self.cfg.tile_px, None);
            let params = AugmentParams::sample(&t.ranges, &mut rng);
            let image = params.apply(&rendered);

            let corners = [
                mercator_inverse(x0, y0)?,
                mercator_inverse(x1, y0)?,
                mercator_inverse(x1, y1)?,
                mercator_inverse(x0, y1)?,
            ];
            let center = mercator_inverse((x0 + x1) / 2.0, (y0 + y1) / 2.0)?;
            let footprint = Footprint {
                corners,
                center: Some(center),
            };
            let nadir = offset_point(center, t.nadir_offset_deg, &mut rng);
            out.push(SyntheticQuery {
                record: QueryRecord {
                    id: format!("synth-{:05}", i),
                    nadir,
                    timestamp: base_ts + chrono::Duration::seconds(i as i64),
                    footprint,
                    area_sqkm: mercator_rect_area_sqkm(x0, y0, x1, y1)?,
                    focal_length_mm: None,
                },
                image,
                source_region: region,
                applied_rotation_deg: params.rotation_deg,
            });
        }
        Ok(out)
    }
}

fn offset_point(p: GeoPoint, max_deg: f64, rng: &mut ChaCha8Rng) -> GeoPoint {
    if max_deg == 0.0 {
        return p;
    }
    let dlat = rng.gen_range(-max_deg..max_deg);
    let dlon = rng.gen_range(-max_deg..max_deg);
    let lat = (p.lat_deg() + dlat).clamp(-84.0, 84.0);
    GeoPoint::new(lat, p.lon_deg() + dlon).expect("offset point in range")
}

/// Deterministic lattice value noise in [0, 1] with smoothstep blending.
fn value_noise(x: f64, y: f64, salt: u64) -> f64 {
    let xi = x.floor() as i64;
    let yi = y.floor() as i64;
    let fx = x - xi as f64;
    let fy = y - yi as f64;
    let sx = fx * fx * (3.0 - 2.0 * fx);
    let sy = fy * fy * (3.0 - 2.0 * fy);
    let v00 = lattice(xi, yi, salt);
    let v10 = lattice(xi + 1, yi, salt);
    let v01 = lattice(xi, yi + 1, salt);
    let v11 = lattice(xi + 1, yi + 1, salt);
    let top = v00 + sx * (v10 - v00);
    let bot = v01 + sx * (v11 - v01);
    top + sy * (bot - top)
}

/// splitmix64-style point hash to [0, 1).
fn lattice(x: i64, y: i64, salt: u64) -> f64 {
    let mut z = (x as u64)
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add((y as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9))
        .wrapping_add(salt);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesy::footprints_overlap;

    fn small_world() -> SyntheticWorld {
        SyntheticWorld::new(SyntheticConfig {
            num_regions: 40,
            tile_px: 32,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn world_is_deterministic() {
        let a = small_world();
        let b = small_world();
        assert_eq!(a.regions(), b.regions());
        let r = a.regions()[0];
        assert_eq!(a.image(r, 2019).unwrap(), b.image(r, 2019).unwrap());
    }

    #[test]
    fn regions_are_distinct_and_in_band() {
        let w = small_world();
        assert_eq!(w.regions().len(), 40);
        let mut sorted = w.regions().to_vec();
        sorted.dedup();
        assert_eq!(sorted.len(), 40);
        for &r in w.regions() {
            assert!(w.grid().center(r).unwrap().lat_deg().abs() <= 60.0);
        }
    }

    #[test]
    fn world_contains_overlapping_pairs() {
        let w = SyntheticWorld::new(SyntheticConfig {
            num_regions: 120,
            tile_px: 16,
            ..Default::default()
        })
        .unwrap();
        let mut neutral = 0;
        let rs = w.regions();
        for i in 0..rs.len() {
            for j in i + 1..rs.len() {
                if w.grid().relation(rs[i], rs[j]).unwrap() == crate::geodesy::Relation::Neutral {
                    neutral += 1;
                }
            }
        }
        assert!(neutral > 0, "clumped sampling must produce neutral pairs");
    }

    #[test]
    fn overlapping_regions_share_ground_content() {
        // an axis neighbor overlaps 50%: the shared half must render
        // identically (before year effects are identical too)
        let w = small_world();
        let g = w.grid();
        let r = g.region(9, 40, 130).unwrap();
        let neighbor = g.region(9, 41, 130).unwrap();
        let (x0, y0, x1, y1) = g.rect_f64(r).unwrap();
        let (nx0, ny0, nx1, ny1) = g.rect_f64(neighbor).unwrap();
        // the overlap strip: right half of r = left half of neighbor
        let px = 32;
        let a = w.render_rect((x0 + x1) / 2.0, y0, x1, y1, px, None);
        let b = w.render_rect(nx0, ny0, (nx0 + nx1) / 2.0, ny1, px, None);
        assert_eq!((x0 + x1) / 2.0, nx0);
        assert_eq!((y0, y1), (ny0, ny1));
        assert_eq!(a, b);
    }

    #[test]
    fn different_regions_render_differently() {
        let w = small_world();
        let imgs: Vec<_> = w
            .regions()
            .iter()
            .take(10)
            .map(|&r| w.image(r, 2021).unwrap())
            .collect();
        for i in 0..imgs.len() {
            for j in i + 1..imgs.len() {
                assert_ne!(imgs[i], imgs[j]);
            }
        }
    }

    #[test]
    fn year_layers_differ_but_share_structure() {
        let w = small_world();
        let r = w.regions()[3];
        let a = w.image(r, 2018).unwrap();
        let b = w.image(r, 2021).unwrap();
        assert_ne!(a, b, "year layers must differ");
        assert!(w.image(r, 1999).is_err());
    }

    #[test]
    fn queries_overlap_their_source_region() {
        let w = small_world();
        let queries = w.make_queries(50, 11, &QueryTransforms::default()).unwrap();
        assert_eq!(queries.len(), 50);
        for q in &queries {
            let poly = w.grid().polygon(q.source_region).unwrap();
            assert!(
                footprints_overlap(&poly, &q.record.footprint).unwrap(),
                "query {} must overlap its source region",
                q.record.id
            );
            assert!(q.record.area_sqkm > 0.0);
            assert_eq!(
                (q.image.width(), q.image.height()),
                (w.config().tile_px, w.config().tile_px)
            );
        }
        // determinism
        let again = w.make_queries(50, 11, &QueryTransforms::default()).unwrap();
        for (a, b) in queries.iter().zip(&again) {
            assert_eq!(a.record, b.record);
            assert_eq!(a.image, b.image);
        }
    }

    #[test]
    fn value_noise_is_smooth_and_bounded() {
        for i in 0..200 {
            let x = i as f64 * 0.31;
            let v = value_noise(x, x * 0.7, 42);
            assert!((0.0..=1.0).contains(&v));
            let v2 = value_noise(x + 1e-6, x * 0.7, 42);
            assert!((v - v2).abs() < 1e-4, "noise must be continuous");
        }
    }
}
