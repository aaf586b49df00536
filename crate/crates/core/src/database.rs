//! Database construction: the worldwide region grid, year quadruplets,
//! query catalogs, and POI-centered evaluation sets.

pub mod fetch;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodesy::{
    haversine_km_on, Footprint, GeoPoint, RegionGrid, RegionId, VisibilityParams,
};

/// Tiling parameters for the region grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TilingConfig {
    /// Zoom levels included in the database.
    pub zooms: Vec<u8>,
    /// Regions are kept when their center latitude is within this band.
    pub lat_limit_deg: f64,
    /// Year layers, one image per region per year.
    pub years: Vec<u16>,
    /// Pixels per region image side; also fixes the region side on the
    /// Mercator plane (see [`RegionGrid`]).
    pub image_px: u32,
}

impl Default for TilingConfig {
    fn default() -> Self {
        Self {
            zooms: vec![9, 10, 11],
            lat_limit_deg: 60.0,
            years: vec![2018, 2019, 2020, 2021],
            image_px: 1024,
        }
    }
}

impl TilingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.zooms.is_empty() {
            return Err(Error::invalid("zoom set must not be empty"));
        }
        if self.years.is_empty() {
            return Err(Error::invalid("year list must not be empty"));
        }
        let mut seen = std::collections::HashSet::new();
        for y in &self.years {
            if !seen.insert(y) {
                return Err(Error::invalid(format!("duplicate year {}", y)));
            }
        }
        if !(0.0..=90.0).contains(&self.lat_limit_deg) {
            return Err(Error::invalid("lat_limit_deg must be in [0, 90]"));
        }
        RegionGrid::new(self.image_px)?;
        Ok(())
    }

    pub fn grid(&self) -> Result<RegionGrid> {
        RegionGrid::new(self.image_px)
    }
}

/// Reference to one database image: a region at one year layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageRef {
    pub region: RegionId,
    pub year: u16,
}

/// The year-stack of images for one region; all entries are mutual
/// positives in training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quadruplet {
    pub region: RegionId,
    pub images: Vec<ImageRef>,
}

/// Anything that can hand the pipeline a region image for a given year:
/// a tile cache, a procedural world, or a test fixture.
pub trait ImageSource: Sync {
    fn image(&self, region: RegionId, year: u16) -> Result<crate::raster::Rgb8Image>;
}

/// Land/water predicate for region enumeration. The data source is
/// deliberately pluggable; the default accepts everything.
pub trait LandMask: Sync {
    fn contains(&self, p: GeoPoint) -> bool;
}

/// Mask accepting every point (ocean included).
pub struct AcceptAll;

impl LandMask for AcceptAll {
    fn contains(&self, _p: GeoPoint) -> bool {
        true
    }
}

/// Mask rejecting every point; useful in tests.
pub struct RejectAll;

impl LandMask for RejectAll {
    fn contains(&self, _p: GeoPoint) -> bool {
        false
    }
}

/// Enumerate every half-stride region whose center passes the mask and
/// lies within the latitude band, ordered by (zoom, iy, ix).
pub fn enumerate_regions(cfg: &TilingConfig, mask: &dyn LandMask) -> Result<Vec<RegionId>> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let mut zooms = cfg.zooms.clone();
    zooms.sort_unstable();
    zooms.dedup();
    let mut out = Vec::new();
    for &zoom in &zooms {
        let n = grid.cells_per_axis(zoom)?;
        for iy in 0..n {
            // row latitude depends only on iy
            let probe = grid.center(RegionId::new(zoom, 0, iy))?;
            if probe.lat_deg().abs() > cfg.lat_limit_deg {
                continue;
            }
            for ix in 0..n {
                let r = RegionId::new(zoom, ix, iy);
                let center = grid.center(r)?;
                if mask.contains(center) {
                    out.push(r);
                }
            }
        }
    }
    Ok(out)
}

/// One quadruplet per region, one image reference per configured year.
pub fn build_quadruplets(regions: &[RegionId], cfg: &TilingConfig) -> Result<Vec<Quadruplet>> {
    if regions.is_empty() {
        return Err(Error::invalid("region list must not be empty"));
    }
    cfg.validate()?;
    Ok(regions
        .iter()
        .map(|&region| Quadruplet {
            region,
            images: cfg
                .years
                .iter()
                .map(|&year| ImageRef { region, year })
                .collect(),
        })
        .collect())
}

/// A query with its localization ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord {
    pub id: String,
    pub nadir: GeoPoint,
    pub timestamp: chrono::DateTime<chrono::Utc>,
    pub footprint: Footprint,
    pub area_sqkm: f64,
    pub focal_length_mm: Option<f64>,
}

/// Wire format of one catalog line.
#[derive(Debug, Serialize, Deserialize)]
struct RawQueryRecord {
    id: String,
    nadir_lat: f64,
    nadir_lon: f64,
    timestamp: String,
    corners: [f64; 8],
    center_lat: f64,
    center_lon: f64,
    area_sqkm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    focal_length_mm: Option<f64>,
}

impl QueryRecord {
    fn from_raw(raw: RawQueryRecord) -> Result<Self> {
        let nadir = GeoPoint::new(raw.nadir_lat, raw.nadir_lon)?;
        let mut corners = [nadir; 4];
        for (i, c) in corners.iter_mut().enumerate() {
            *c = GeoPoint::new(raw.corners[2 * i], raw.corners[2 * i + 1])?;
        }
        let center = GeoPoint::new(raw.center_lat, raw.center_lon)?;
        let footprint = Footprint {
            corners,
            center: Some(center),
        };
        footprint.validate()?;
        if !(raw.area_sqkm > 0.0) {
            return Err(Error::invalid(format!(
                "query {}: area_sqkm must be positive",
                raw.id
            )));
        }
        let timestamp = chrono::DateTime::parse_from_rfc3339(&raw.timestamp)
            .map_err(|e| Error::Format(format!("query {}: bad timestamp: {}", raw.id, e)))?
            .with_timezone(&chrono::Utc);
        Ok(Self {
            id: raw.id,
            nadir,
            timestamp,
            footprint,
            area_sqkm: raw.area_sqkm,
            focal_length_mm: raw.focal_length_mm,
        })
    }

    fn to_raw(&self) -> RawQueryRecord {
        let mut corners = [0.0f64; 8];
        for (i, c) in self.footprint.corners.iter().enumerate() {
            corners[2 * i] = c.lat_deg();
            corners[2 * i + 1] = c.lon_deg();
        }
        let center = self.footprint.center_point();
        RawQueryRecord {
            id: self.id.clone(),
            nadir_lat: self.nadir.lat_deg(),
            nadir_lon: self.nadir.lon_deg(),
            timestamp: self.timestamp.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            corners,
            center_lat: center.lat_deg(),
            center_lon: center.lon_deg(),
            area_sqkm: self.area_sqkm,
            focal_length_mm: self.focal_length_mm,
        }
    }
}

/// Parse a UTF-8 JSONL query catalog. Malformed lines are reported with
/// their line number; blank lines are skipped.
pub fn ingest_query_catalog(path: &std::path::Path) -> Result<Vec<QueryRecord>> {
    let text = std::fs::read_to_string(path)?;
    parse_query_catalog(&text)
}

pub fn parse_query_catalog(text: &str) -> Result<Vec<QueryRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawQueryRecord = serde_json::from_str(line).map_err(|e| {
            Error::Format(format!("catalog line {}: {}", lineno + 1, e))
        })?;
        out.push(QueryRecord::from_raw(raw).map_err(|e| {
            Error::Format(format!("catalog line {}: {}", lineno + 1, e))
        })?);
    }
    Ok(out)
}

/// Serialize records back to the JSONL wire format.
pub fn serialize_query_catalog(records: &[QueryRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(&r.to_raw())?);
        out.push('\n');
    }
    Ok(out)
}

/// Keep records with `min_sqkm <= area <= max_sqkm`.
pub fn filter_queries_by_area(
    records: Vec<QueryRecord>,
    min_sqkm: f64,
    max_sqkm: f64,
) -> Vec<QueryRecord> {
    records
        .into_iter()
        .filter(|r| r.area_sqkm >= min_sqkm && r.area_sqkm <= max_sqkm)
        .collect()
}

/// A POI-centered evaluation set: queries whose nadir falls within the
/// search radius, and the database regions within twice the visibility
/// distance so every reachable photo extent is covered.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSet {
    pub name: String,
    pub poi: GeoPoint,
    pub queries: Vec<QueryRecord>,
    pub db_regions: Vec<RegionId>,
}

pub fn build_eval_set(
    name: &str,
    poi: GeoPoint,
    records: &[QueryRecord],
    regions: &[RegionId],
    grid: &RegionGrid,
    vis: &VisibilityParams,
) -> Result<EvalSet> {
    vis.validate()?;
    let queries: Vec<QueryRecord> = records
        .iter()
        .filter(|r| haversine_km_on(vis.earth_radius_km, r.nadir, poi) <= vis.search_radius_km)
        .cloned()
        .collect();
    let db_radius = 2.0 * vis.visible_distance_km();
    let mut db_regions = Vec::new();
    for &r in regions {
        let center = grid.center(r)?;
        if haversine_km_on(vis.earth_radius_km, center, poi) <= db_radius {
            db_regions.push(r);
        }
    }
    Ok(EvalSet {
        name: name.to_string(),
        poi,
        queries,
        db_regions,
    })
}

impl EvalSet {
    /// Check the two radius invariants for every member.
    pub fn validate(&self, grid: &RegionGrid, vis: &VisibilityParams) -> Result<()> {
        for q in &self.queries {
            let d = haversine_km_on(vis.earth_radius_km, q.nadir, self.poi);
            if d > vis.search_radius_km {
                return Err(Error::invalid(format!(
                    "query {} nadir {}km from the POI exceeds the {}km search radius",
                    q.id, d, vis.search_radius_km
                )));
            }
        }
        let db_radius = 2.0 * vis.visible_distance_km();
        for &r in &self.db_regions {
            let d = haversine_km_on(vis.earth_radius_km, grid.center(r)?, self.poi);
            if d > db_radius {
                return Err(Error::invalid(format!(
                    "db region {} center {}km from the POI exceeds 2*d_visible = {}km",
                    r, d, db_radius
                )));
            }
        }
        Ok(())
    }
}
