//! Spherical-earth geometry and Web Mercator region math.
//!
//! Regions live on a half-stride grid in normalized Mercator coordinates:
//! at a given zoom each region is a square of one tile side, and grid
//! positions advance by half a side, so axis neighbors share exactly 50%
//! of their Mercator-plane area and diagonal neighbors 25%. Region squares
//! are compared in fixed-point integer coordinates so cross-zoom
//! intersection tests are exact.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean spherical Earth radius in kilometers.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Latitude bound of the square Web Mercator projection, in degrees.
pub const MERCATOR_MAX_LAT_DEG: f64 = 85.05112877980659;

/// A point on the sphere. Latitude in [-90, 90], longitude normalized
/// to [-180, 180).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    lat_deg: f64,
    lon_deg: f64,
}

impl GeoPoint {
    pub fn new(lat_deg: f64, lon_deg: f64) -> Result<Self> {
        if !lat_deg.is_finite() || !lon_deg.is_finite() {
            return Err(Error::invalid("non-finite coordinate"));
        }
        if !(-90.0..=90.0).contains(&lat_deg) {
            return Err(Error::OutOfRange(format!("latitude {} out of [-90, 90]", lat_deg)));
        }
        Ok(Self {
            lat_deg,
            lon_deg: normalize_lon(lon_deg),
        })
    }

    pub fn lat_deg(&self) -> f64 {
        self.lat_deg
    }

    pub fn lon_deg(&self) -> f64 {
        self.lon_deg
    }
}

/// Wrap a longitude into [-180, 180).
pub fn normalize_lon(lon_deg: f64) -> f64 {
    let mut l = (lon_deg + 180.0) % 360.0;
    if l < 0.0 {
        l += 360.0;
    }
    l - 180.0
}

/// Orbit visibility parameters. `search_radius_km` is the rounded
/// operational radius used when gathering queries around a point of
/// interest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisibilityParams {
    pub earth_radius_km: f64,
    pub orbit_altitude_km: f64,
    pub search_radius_km: f64,
}

impl Default for VisibilityParams {
    fn default() -> Self {
        Self {
            earth_radius_km: EARTH_RADIUS_KM,
            orbit_altitude_km: 450.0,
            search_radius_km: 2500.0,
        }
    }
}

impl VisibilityParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.earth_radius_km > 0.0) || !self.earth_radius_km.is_finite() {
            return Err(Error::invalid("earth_radius_km must be positive"));
        }
        if !(self.orbit_altitude_km >= 0.0) || !self.orbit_altitude_km.is_finite() {
            return Err(Error::invalid("orbit_altitude_km must be nonnegative"));
        }
        if !(self.search_radius_km > 0.0) || !self.search_radius_km.is_finite() {
            return Err(Error::invalid("search_radius_km must be positive"));
        }
        let visible = visible_distance_km(self.earth_radius_km, self.orbit_altitude_km)?;
        if self.search_radius_km < visible - 100.0 {
            return Err(Error::invalid(format!(
                "search_radius_km {} is more than 100 km below the visible distance {:.1}",
                self.search_radius_km, visible
            )));
        }
        Ok(())
    }

    pub fn visible_distance_km(&self) -> f64 {
        // validated params cannot fail here
        visible_distance_km(self.earth_radius_km, self.orbit_altitude_km).unwrap_or(0.0)
    }
}

/// Maximum ground distance visible from `altitude_km` above a sphere of
/// `radius_km`: sqrt(2*R*h + h^2).
pub fn visible_distance_km(radius_km: f64, altitude_km: f64) -> Result<f64> {
    if !radius_km.is_finite() || !altitude_km.is_finite() {
        return Err(Error::invalid("non-finite visibility input"));
    }
    if radius_km <= 0.0 {
        return Err(Error::invalid("radius must be positive"));
    }
    if altitude_km < 0.0 {
        return Err(Error::invalid("altitude must be nonnegative"));
    }
    Ok((2.0 * radius_km * altitude_km + altitude_km * altitude_km).sqrt())
}

/// Great-circle distance on a sphere of radius `radius_km`.
pub fn haversine_km_on(radius_km: f64, a: GeoPoint, b: GeoPoint) -> f64 {
    let phi1 = a.lat_deg.to_radians();
    let phi2 = b.lat_deg.to_radians();
    let dphi = (b.lat_deg - a.lat_deg).to_radians();
    let dlambda = (b.lon_deg - a.lon_deg).to_radians();
    let s = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * radius_km * s.sqrt().min(1.0).asin()
}

/// Great-circle distance on the default Earth sphere.
pub fn haversine_km(a: GeoPoint, b: GeoPoint) -> f64 {
    haversine_km_on(EARTH_RADIUS_KM, a, b)
}

/// Forward spherical Web Mercator into normalized [0,1] x [0,1]
/// coordinates, x growing east from lon -180, y growing south.
pub fn mercator_forward(p: GeoPoint) -> Result<(f64, f64)> {
    if p.lat_deg.abs() > MERCATOR_MAX_LAT_DEG {
        return Err(Error::OutOfRange(format!(
            "latitude {} beyond the Mercator cap {}",
            p.lat_deg, MERCATOR_MAX_LAT_DEG
        )));
    }
    let x = (p.lon_deg + 180.0) / 360.0;
    let y = 0.5 - p.lat_deg.to_radians().tan().asinh() / std::f64::consts::TAU;
    Ok((x, y))
}

/// Inverse of [`mercator_forward`]. `x` outside [0,1] wraps in longitude.
pub fn mercator_inverse(x: f64, y: f64) -> Result<GeoPoint> {
    if !(0.0..=1.0).contains(&y) {
        return Err(Error::OutOfRange(format!("mercator y {} out of [0, 1]", y)));
    }
    let lat = (std::f64::consts::PI * (1.0 - 2.0 * y)).sinh().atan().to_degrees();
    let lon = x * 360.0 - 180.0;
    GeoPoint::new(lat, lon)
}

/// Pairwise relation between two regions in a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Relation {
    /// Same region.
    Positive,
    /// Region squares intersect with positive area but are not equal.
    Neutral,
    /// Disjoint regions.
    Negative,
}

/// A region on the half-stride grid: a square of one tile side at `zoom`,
/// whose top-left corner sits at (ix, iy) half-strides from the Mercator
/// origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RegionId {
    pub zoom: u8,
    pub ix: u32,
    pub iy: u32,
}

impl RegionId {
    pub fn new(zoom: u8, ix: u32, iy: u32) -> Self {
        Self { zoom, ix, iy }
    }

    /// Pack into 64 bits for the embedding store: zoom in the top 6 bits,
    /// then ix and iy in 29 bits each.
    pub fn pack(&self) -> u64 {
        debug_assert!(self.ix < (1 << 29) && self.iy < (1 << 29) && self.zoom < 64);
        ((self.zoom as u64) << 58) | ((self.ix as u64) << 29) | self.iy as u64
    }

    pub fn unpack(v: u64) -> Self {
        Self {
            zoom: (v >> 58) as u8,
            ix: ((v >> 29) & ((1 << 29) - 1)) as u32,
            iy: (v & ((1 << 29) - 1)) as u32,
        }
    }
}

impl std::fmt::Display for RegionId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "z{}/{}/{}", self.zoom, self.ix, self.iy)
    }
}

/// Axis-aligned rectangle in fixed-point Mercator coordinates
/// (unit = 1 / 2^32 of the world side). Exact across zoom levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MercRect {
    pub x0: u64,
    pub y0: u64,
    pub x1: u64,
    pub y1: u64,
}

impl MercRect {
    fn intersection_area(&self, other: &MercRect) -> u128 {
        let w = self.x1.min(other.x1).saturating_sub(self.x0.max(other.x0));
        let h = self.y1.min(other.y1).saturating_sub(self.y0.max(other.y0));
        w as u128 * h as u128
    }

    fn area(&self) -> u128 {
        (self.x1 - self.x0) as u128 * (self.y1 - self.y0) as u128
    }
}

/// Pixel convention fixing the geographic size of a region: a region image
/// of `image_px` pixels rendered from 256-px base tiles spans
/// `image_px / 256` tile sides, so the region side in normalized Mercator
/// coordinates is `2^-(zoom + 8 - log2(image_px))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionGrid {
    image_px: u32,
}

impl RegionGrid {
    pub fn new(image_px: u32) -> Result<Self> {
        if image_px == 0 || !image_px.is_power_of_two() {
            return Err(Error::invalid(format!(
                "image_px {} must be a positive power of two",
                image_px
            )));
        }
        Ok(Self { image_px })
    }

    pub fn image_px(&self) -> u32 {
        self.image_px
    }

    /// log2 of the inverse region side at `zoom`; 0 means the region covers
    /// the whole Mercator square.
    fn side_exp(&self, zoom: u8) -> Result<u32> {
        let log_px = self.image_px.trailing_zeros() as i32;
        let exp = zoom as i32 + 8 - log_px;
        if exp < 0 {
            return Err(Error::invalid(format!(
                "zoom {} too coarse for image_px {}",
                zoom, self.image_px
            )));
        }
        if exp > 31 {
            return Err(Error::invalid(format!("zoom {} too deep", zoom)));
        }
        Ok(exp as u32)
    }

    /// Region side length in normalized Mercator coordinates.
    pub fn side(&self, zoom: u8) -> Result<f64> {
        Ok(0.5f64.powi(self.side_exp(zoom)? as i32))
    }

    /// Half-stride grid positions per axis at `zoom`.
    pub fn cells_per_axis(&self, zoom: u8) -> Result<u32> {
        let exp = self.side_exp(zoom)?;
        Ok((1u32 << (exp + 1)) - 1)
    }

    /// Validated region constructor.
    pub fn region(&self, zoom: u8, ix: u32, iy: u32) -> Result<RegionId> {
        let n = self.cells_per_axis(zoom)?;
        if ix >= n || iy >= n {
            return Err(Error::OutOfRange(format!(
                "region index ({}, {}) outside the {}-cell grid at zoom {}",
                ix, iy, n, zoom
            )));
        }
        Ok(RegionId::new(zoom, ix, iy))
    }

    /// Region square in exact fixed-point Mercator coordinates.
    pub fn rect(&self, r: RegionId) -> Result<MercRect> {
        let exp = self.side_exp(r.zoom)?;
        let shift = 32 - (exp + 1); // one unit = one half-stride at this zoom
        let x0 = (r.ix as u64) << shift;
        let y0 = (r.iy as u64) << shift;
        let side = 2u64 << shift;
        Ok(MercRect {
            x0,
            y0,
            x1: x0 + side,
            y1: y0 + side,
        })
    }

    /// Region square in normalized Mercator coordinates (x0, y0, x1, y1).
    pub fn rect_f64(&self, r: RegionId) -> Result<(f64, f64, f64, f64)> {
        let rect = self.rect(r)?;
        let s = 0.5f64.powi(32);
        Ok((
            rect.x0 as f64 * s,
            rect.y0 as f64 * s,
            rect.x1 as f64 * s,
            rect.y1 as f64 * s,
        ))
    }

    /// Geographic center of the region square.
    pub fn center(&self, r: RegionId) -> Result<GeoPoint> {
        let (x0, y0, x1, y1) = self.rect_f64(r)?;
        mercator_inverse((x0 + x1) / 2.0, (y0 + y1) / 2.0)
    }

    /// The region square projected onto the sphere: four corners in
    /// NW, NE, SE, SW order plus the center point.
    pub fn polygon(&self, r: RegionId) -> Result<Footprint> {
        let (x0, y0, x1, y1) = self.rect_f64(r)?;
        let corners = [
            mercator_inverse(x0, y0)?,
            mercator_inverse(x1, y0)?,
            mercator_inverse(x1, y1)?,
            mercator_inverse(x0, y1)?,
        ];
        Ok(Footprint {
            corners,
            center: Some(self.center(r)?),
        })
    }

    /// True spherical area of the projected square in km^2, from the closed
    /// form R^2 * dlon * (sin lat_top - sin lat_bottom).
    pub fn area_sqkm(&self, r: RegionId) -> Result<f64> {
        let (x0, y0, x1, y1) = self.rect_f64(r)?;
        mercator_rect_area_sqkm(x0, y0, x1, y1)
    }

    /// Positive / Neutral / Negative relation between two region squares.
    /// Exact: computed on integer rectangles.
    pub fn relation(&self, a: RegionId, b: RegionId) -> Result<Relation> {
        if a == b {
            return Ok(Relation::Positive);
        }
        let ra = self.rect(a)?;
        let rb = self.rect(b)?;
        if ra.intersection_area(&rb) > 0 {
            Ok(Relation::Neutral)
        } else {
            Ok(Relation::Negative)
        }
    }

    /// Mercator-plane overlap as a fraction of region `a`'s area. Exact for
    /// the half-stride construction (0.5 axis neighbors, 0.25 diagonal).
    pub fn overlap_fraction(&self, a: RegionId, b: RegionId) -> Result<f64> {
        let ra = self.rect(a)?;
        let rb = self.rect(b)?;
        Ok(ra.intersection_area(&rb) as f64 / ra.area() as f64)
    }

    /// Whether the region square contains the point (in the Mercator plane,
    /// boundary inclusive).
    pub fn contains(&self, r: RegionId, p: GeoPoint) -> Result<bool> {
        let (x0, y0, x1, y1) = self.rect_f64(r)?;
        let (x, y) = mercator_forward(p)?;
        Ok(x >= x0 && x <= x1 && y >= y0 && y <= y1)
    }
}

impl Default for RegionGrid {
    fn default() -> Self {
        Self { image_px: 1024 }
    }
}

/// True spherical area (km^2) of an axis-aligned rectangle given in
/// normalized Mercator coordinates.
pub fn mercator_rect_area_sqkm(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<f64> {
    let lat_top = mercator_inverse(x0, y0)?.lat_deg().to_radians();
    let lat_bottom = mercator_inverse(x0, y1)?.lat_deg().to_radians();
    let dlon = (x1 - x0) * std::f64::consts::TAU;
    Ok(EARTH_RADIUS_KM * EARTH_RADIUS_KM * dlon * (lat_top.sin() - lat_bottom.sin()))
}

/// A quadrilateral footprint on the sphere, used both for region extents
/// and query ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub corners: [GeoPoint; 4],
    pub center: Option<GeoPoint>,
}

impl Footprint {
    pub fn new(corners: [GeoPoint; 4]) -> Self {
        Self {
            corners,
            center: None,
        }
    }

    /// Representative point: the stored center if present, otherwise the
    /// Mercator centroid of the corners.
    pub fn center_point(&self) -> GeoPoint {
        if let Some(c) = self.center {
            return c;
        }
        let parts = self.mercator_parts();
        // centroid of the first (largest) part is representative enough
        let poly = &parts[0];
        let n = poly.len() as f64;
        let (sx, sy) = poly
            .iter()
            .fold((0.0, 0.0), |(ax, ay), p| (ax + p[0], ay + p[1]));
        let x = (sx / n).rem_euclid(1.0);
        mercator_inverse(x, (sy / n).clamp(0.0, 1.0)).unwrap_or(self.corners[0])
    }

    /// Project to the Mercator plane, unwrap across the antimeridian, and
    /// split into parts that each lie within one world copy.
    fn mercator_parts(&self) -> Vec<Vec<[f64; 2]>> {
        let mut pts: Vec<[f64; 2]> = self
            .corners
            .iter()
            .map(|p| {
                let (x, y) = mercator_forward(clamp_to_mercator(*p)).expect("clamped");
                [x, y]
            })
            .collect();
        let min_x = pts.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
        let max_x = pts.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
        if max_x - min_x > 0.5 {
            // crosses the antimeridian: unwrap the western corners one world east
            for p in pts.iter_mut() {
                if p[0] < 0.5 {
                    p[0] += 1.0;
                }
            }
            let left = clip_half_plane(&pts, |p| 1.0 - p[0]); // x <= 1
            let right = clip_half_plane(&pts, |p| p[0] - 1.0); // x >= 1
            let mut parts = Vec::new();
            if polygon_area(&left).abs() > 0.0 {
                parts.push(left);
            }
            if polygon_area(&right).abs() > 0.0 {
                let shifted: Vec<[f64; 2]> = right.iter().map(|p| [p[0] - 1.0, p[1]]).collect();
                parts.push(shifted);
            }
            if parts.is_empty() {
                parts.push(pts);
            }
            parts
        } else {
            vec![pts]
        }
    }

    /// Validates non-degeneracy: positive area and no self-intersection in
    /// the Mercator plane.
    pub fn validate(&self) -> Result<()> {
        let parts = self.mercator_parts();
        let total: f64 = parts.iter().map(|p| polygon_area(p).abs()).sum();
        if total < 1e-18 {
            return Err(Error::invalid("degenerate zero-area footprint"));
        }
        if parts.len() == 1 && parts[0].len() == 4 {
            let p = &parts[0];
            if segments_cross(p[0], p[1], p[2], p[3]) || segments_cross(p[1], p[2], p[3], p[0]) {
                return Err(Error::invalid("self-intersecting footprint"));
            }
        }
        Ok(())
    }

    /// Whether the point lies inside the footprint (Mercator plane,
    /// boundary inclusive up to floating-point rounding).
    pub fn contains(&self, p: GeoPoint) -> bool {
        let (x, y) = match mercator_forward(p) {
            Ok(v) => v,
            Err(_) => return false,
        };
        self.mercator_parts()
            .iter()
            .any(|part| point_in_polygon([x, y], part))
    }
}

fn clamp_to_mercator(p: GeoPoint) -> GeoPoint {
    let lat = p.lat_deg().clamp(-MERCATOR_MAX_LAT_DEG, MERCATOR_MAX_LAT_DEG);
    GeoPoint::new(lat, p.lon_deg()).expect("clamped point valid")
}

/// Do two footprints intersect with positive area in the Mercator plane?
pub fn footprints_overlap(a: &Footprint, b: &Footprint) -> Result<bool> {
    a.validate()?;
    b.validate()?;
    let pa = a.mercator_parts();
    let pb = b.mercator_parts();
    for qa in &pa {
        for qb in &pb {
            if polygons_overlap(qa, qb) {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

/// Signed area (shoelace). Positive for counter-clockwise in a y-up frame;
/// we only use magnitudes and sign consistency.
fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        let j = (i + 1) % n;
        s += poly[i][0] * poly[j][1] - poly[j][0] * poly[i][1];
    }
    s / 2.0
}

/// Clip a polygon to the half-plane where `inside(p) >= 0`
/// (Sutherland-Hodgman).
fn clip_half_plane(poly: &[[f64; 2]], inside: impl Fn(&[f64; 2]) -> f64) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(poly.len() + 2);
    let n = poly.len();
    for i in 0..n {
        let cur = poly[i];
        let next = poly[(i + 1) % n];
        let dc = inside(&cur);
        let dn = inside(&next);
        if dc >= 0.0 {
            out.push(cur);
        }
        if (dc > 0.0 && dn < 0.0) || (dc < 0.0 && dn > 0.0) {
            let t = dc / (dc - dn);
            out.push([
                cur[0] + t * (next[0] - cur[0]),
                cur[1] + t * (next[1] - cur[1]),
            ]);
        }
    }
    out
}

/// Positive-area intersection test for two simple quadrilaterals: each is
/// fanned into triangles about a diagonal interior to the quad, and the
/// triangle pairs are tested with the separating-axis theorem.
fn polygons_overlap(a: &[[f64; 2]], b: &[[f64; 2]]) -> bool {
    let ta = triangulate(a);
    let tb = triangulate(b);
    for t1 in &ta {
        for t2 in &tb {
            if convex_overlap(t1, t2) {
                return true;
            }
        }
    }
    false
}

/// Split a simple polygon (3..=4 vertices here) into triangles. For a
/// concave quad the split runs through the reflex vertex so both triangles
/// stay inside the outline.
fn triangulate(poly: &[[f64; 2]]) -> Vec<[[f64; 2]; 3]> {
    if poly.len() < 3 {
        return Vec::new();
    }
    if poly.len() == 3 {
        return vec![[poly[0], poly[1], poly[2]]];
    }
    let orient = polygon_area(poly).signum();
    let reflex = (0..poly.len()).find(|&i| {
        let prev = poly[(i + poly.len() - 1) % poly.len()];
        let cur = poly[i];
        let next = poly[(i + 1) % poly.len()];
        let cross = (cur[0] - prev[0]) * (next[1] - cur[1]) - (cur[1] - prev[1]) * (next[0] - cur[0]);
        cross.signum() == -orient && cross != 0.0
    });
    // fan from the reflex vertex if any, else from vertex 0
    let k = reflex.unwrap_or(0);
    let mut tris = Vec::with_capacity(poly.len() - 2);
    for i in 1..poly.len() - 1 {
        tris.push([
            poly[k],
            poly[(k + i) % poly.len()],
            poly[(k + i + 1) % poly.len()],
        ]);
    }
    tris
}

/// Separating-axis test for convex polygons, requiring positive-area
/// overlap (touching edges or points do not count).
fn convex_overlap(a: &[[f64; 2]], b: &[[f64; 2]]) -> bool {
    const EPS: f64 = 1e-15;
    for (p, q) in [(a, b), (b, a)] {
        let n = p.len();
        for i in 0..n {
            let e = [
                p[(i + 1) % n][0] - p[i][0],
                p[(i + 1) % n][1] - p[i][1],
            ];
            let axis = [-e[1], e[0]];
            if axis[0] == 0.0 && axis[1] == 0.0 {
                continue;
            }
            let (mut amin, mut amax) = (f64::INFINITY, f64::NEG_INFINITY);
            for v in p {
                let d = v[0] * axis[0] + v[1] * axis[1];
                amin = amin.min(d);
                amax = amax.max(d);
            }
            let (mut bmin, mut bmax) = (f64::INFINITY, f64::NEG_INFINITY);
            for v in q {
                let d = v[0] * axis[0] + v[1] * axis[1];
                bmin = bmin.min(d);
                bmax = bmax.max(d);
            }
            let scale = (amax - amin).max(bmax - bmin).max(1e-300);
            if amax.min(bmax) - amin.max(bmin) <= EPS * scale {
                return false;
            }
        }
    }
    true
}

fn point_in_polygon(p: [f64; 2], poly: &[[f64; 2]]) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = (poly[i][0], poly[i][1]);
        let (xj, yj) = (poly[j][0], poly[j][1]);
        if ((yi > p[1]) != (yj > p[1]))
            && p[0] < (xj - xi) * (p[1] - yi) / (yj - yi) + xi
        {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn segments_cross(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let cross = |o: [f64; 2], p: [f64; 2], q: [f64; 2]| {
        (p[0] - o[0]) * (q[1] - o[1]) - (p[1] - o[1]) * (q[0] - o[0])
    };
    let d1 = cross(a, b, c);
    let d2 = cross(a, b, d);
    let d3 = cross(c, d, a);
    let d4 = cross(c, d, b);
    (d1 * d2 < 0.0) && (d3 * d4 < 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn visible_distance_matches_hand_values() {
        // sqrt(2*6371*450 + 450^2) = sqrt(5_936_400)
        let d = visible_distance_km(6371.0, 450.0).unwrap();
        assert!((d - 2436.47).abs() < 0.5, "got {}", d);
        assert_eq!(visible_distance_km(6371.0, 0.0).unwrap(), 0.0);
        let d400 = visible_distance_km(6371.0, 400.0).unwrap();
        assert!((d400 - 2292.8).abs() < 0.5, "got {}", d400);
        assert!(visible_distance_km(-1.0, 10.0).is_err());
        assert!(visible_distance_km(6371.0, f64::NAN).is_err());
        assert!(visible_distance_km(6371.0, -5.0).is_err());
    }

    #[test]
    fn visible_distance_square_identity_and_monotone() {
        for (r, h) in [(6371.0, 450.0), (6371.0, 1.0), (7000.0, 800.0), (1.0, 0.25)] {
            let d = visible_distance_km(r, h).unwrap();
            assert!((d * d - (2.0 * r * h + h * h)).abs() < 1e-6 * (d * d).max(1.0));
        }
        let base = visible_distance_km(6371.0, 450.0).unwrap();
        assert!(visible_distance_km(6371.0, 451.0).unwrap() > base);
        assert!(visible_distance_km(6372.0, 450.0).unwrap() > base);
    }

    #[test]
    fn haversine_quarter_and_half_circumference() {
        let o = GeoPoint::new(0.0, 0.0).unwrap();
        let q = GeoPoint::new(0.0, 90.0).unwrap();
        let h = GeoPoint::new(0.0, 180.0).unwrap();
        assert_eq!(haversine_km(o, o), 0.0);
        assert!((haversine_km(o, q) - 10_007.5).abs() < 1.0);
        // lon 180 normalizes to -180; the distance is still half the circumference
        assert!((haversine_km(o, h) - 20_015.1).abs() < 1.0);
        assert!((haversine_km(o, q) - haversine_km(q, o)).abs() < 1e-9);
    }

    #[test]
    fn mercator_forward_known_points() {
        let (x, y) = mercator_forward(GeoPoint::new(0.0, 0.0).unwrap()).unwrap();
        assert!((x - 0.5).abs() < 1e-12 && (y - 0.5).abs() < 1e-12);
        let (x, _) = mercator_forward(GeoPoint::new(33.0, -180.0).unwrap()).unwrap();
        assert!(x.abs() < 1e-12);
        let (_, y) = mercator_forward(GeoPoint::new(MERCATOR_MAX_LAT_DEG, 0.0).unwrap()).unwrap();
        assert!(y.abs() < 1e-9, "top edge maps to y ~ 0, got {}", y);
        assert!(mercator_forward(GeoPoint::new(86.0, 0.0).unwrap()).is_err());
    }

    #[test]
    fn geopoint_validation_and_normalization() {
        assert!(GeoPoint::new(90.5, 0.0).is_err());
        assert!(GeoPoint::new(f64::NAN, 0.0).is_err());
        assert_eq!(GeoPoint::new(0.0, 180.0).unwrap().lon_deg(), -180.0);
        assert_eq!(GeoPoint::new(0.0, 540.0).unwrap().lon_deg(), -180.0);
        assert_eq!(GeoPoint::new(0.0, -200.0).unwrap().lon_deg(), 160.0);
    }

    #[test]
    fn region_grid_origin_polygon_is_the_tile_square() {
        // 256-px convention: the zoom-9 tile side is exactly 2^-9
        let grid = RegionGrid::new(256).unwrap();
        let r = grid.region(9, 0, 0).unwrap();
        let (x0, y0, x1, y1) = grid.rect_f64(r).unwrap();
        let s = 0.5f64.powi(9);
        assert_eq!((x0, y0), (0.0, 0.0));
        assert_eq!((x1, y1), (s, s));
        let poly = grid.polygon(r).unwrap();
        let c = poly.center.unwrap();
        let (cx, cy) = mercator_forward(c).unwrap();
        assert!((cx - s / 2.0).abs() < 1e-12 && (cy - s / 2.0).abs() < 1e-12);
    }

    #[test]
    fn half_stride_neighbors_share_half_and_quarter_area() {
        let grid = RegionGrid::default();
        let a = grid.region(9, 40, 120).unwrap();
        let axis = grid.region(9, 41, 120).unwrap();
        let diag = grid.region(9, 41, 121).unwrap();
        assert_eq!(grid.overlap_fraction(a, axis).unwrap(), 0.5);
        assert_eq!(grid.overlap_fraction(a, diag).unwrap(), 0.25);
        assert_eq!(grid.relation(a, axis).unwrap(), Relation::Neutral);
    }

    #[test]
    fn zoom_step_quarters_mercator_area() {
        let grid = RegionGrid::default();
        // same top-left corner: region at zoom z+1 has exactly 1/4 the
        // Mercator-plane area (half the side)
        let a = grid.rect(grid.region(9, 8, 8).unwrap()).unwrap();
        let b = grid.rect(grid.region(10, 16, 16).unwrap()).unwrap();
        assert_eq!(a.x0, b.x0);
        assert_eq!(a.y0, b.y0);
        assert_eq!(a.area(), 4 * b.area());
    }

    #[test]
    fn equator_region_area_matches_closed_form() {
        // 1024-px convention at zoom 9: a 1/128-of-the-world Mercator square.
        // Independent closed form evaluated by hand:
        //   R^2 * (2*pi/128) * 2*sin(atan(sinh(pi/128))) ~ 9.78e4 km^2
        let grid = RegionGrid::default();
        let n = grid.cells_per_axis(9).unwrap(); // 255
        let mid = (n - 1) / 2; // region straddling the equator
        let r = grid.region(9, mid, mid).unwrap();
        let area = grid.area_sqkm(r).unwrap();
        let half = (std::f64::consts::PI / 128.0).sinh().atan();
        let expect = EARTH_RADIUS_KM * EARTH_RADIUS_KM * (std::f64::consts::TAU / 128.0)
            * 2.0
            * half.sin();
        assert!((area - expect).abs() < 1e-6 * expect, "{} vs {}", area, expect);
        assert!((area - 9.8e4).abs() < 0.2e4, "{}", area);
    }

    #[test]
    fn high_latitude_region_is_smaller() {
        let grid = RegionGrid::default();
        let n = grid.cells_per_axis(9).unwrap();
        let mid = (n - 1) / 2;
        let eq = grid.area_sqkm(grid.region(9, mid, mid).unwrap()).unwrap();
        // walk toward the pole until the center latitude passes 55 degrees
        let mut iy = mid;
        loop {
            let r = grid.region(9, mid, iy).unwrap();
            if grid.center(r).unwrap().lat_deg() > 55.0 {
                assert!(grid.area_sqkm(r).unwrap() < eq);
                break;
            }
            iy -= 1;
        }
    }

    #[test]
    fn region_relation_cases() {
        let grid = RegionGrid::default();
        let a = grid.region(9, 10, 10).unwrap();
        assert_eq!(grid.relation(a, a).unwrap(), Relation::Positive);
        let far = grid.region(9, 100, 100).unwrap();
        assert_eq!(grid.relation(a, far).unwrap(), Relation::Negative);
        // zoom-10 region inside the zoom-9 square
        let child = grid.region(10, 21, 21).unwrap();
        assert_eq!(grid.relation(a, child).unwrap(), Relation::Neutral);
        assert_eq!(grid.relation(child, a).unwrap(), Relation::Neutral);
        // regions that merely share an edge are negatives (no positive area)
        let edge = grid.region(9, 12, 10).unwrap();
        assert_eq!(grid.overlap_fraction(a, edge).unwrap(), 0.0);
        assert_eq!(grid.relation(a, edge).unwrap(), Relation::Negative);
    }

    #[test]
    fn footprints_overlap_basics() {
        let grid = RegionGrid::default();
        let a = grid.polygon(grid.region(9, 40, 120).unwrap()).unwrap();
        let b = grid.polygon(grid.region(9, 41, 120).unwrap()).unwrap();
        assert!(footprints_overlap(&a, &a).unwrap());
        assert!(footprints_overlap(&a, &b).unwrap());
        let far = grid.polygon(grid.region(9, 150, 40).unwrap()).unwrap();
        assert!(!footprints_overlap(&a, &far).unwrap());
        // opposite hemispheres
        let north = quad(30.0, 31.0, 10.0, 11.0);
        let south = quad(-31.0, -30.0, 10.0, 11.0);
        assert!(!footprints_overlap(&north, &south).unwrap());
    }

    #[test]
    fn degenerate_footprint_rejected() {
        let p = GeoPoint::new(10.0, 10.0).unwrap();
        let f = Footprint::new([p, p, p, p]);
        assert!(matches!(
            footprints_overlap(&f, &f),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn antimeridian_footprints() {
        // footprint straddling the antimeridian overlaps one just east of it
        let straddle = quad(-5.0, 5.0, 175.0, -175.0);
        let east = quad(-4.0, 4.0, 176.0, 179.0);
        let west = quad(-4.0, 4.0, -179.0, -176.0);
        let away = quad(-4.0, 4.0, 150.0, 160.0);
        assert!(footprints_overlap(&straddle, &east).unwrap());
        assert!(footprints_overlap(&straddle, &west).unwrap());
        assert!(!footprints_overlap(&straddle, &away).unwrap());
        assert!(straddle.contains(GeoPoint::new(0.0, 180.0).unwrap()));
        assert!(straddle.contains(GeoPoint::new(0.0, 179.0).unwrap()));
        assert!(!straddle.contains(GeoPoint::new(0.0, 170.0).unwrap()));
    }

    #[test]
    fn edge_sharing_is_not_overlap() {
        let a = quad(0.0, 10.0, 0.0, 10.0);
        let b = quad(0.0, 10.0, 10.0, 20.0);
        assert!(!footprints_overlap(&a, &b).unwrap());
    }

    #[test]
    fn concave_quad_overlap() {
        // dart-shaped quad: reflex vertex pulls the lower edge inward, so a
        // small square sitting in the notch does not overlap it
        let dart = Footprint::new([
            gp(0.0, 0.0),
            gp(4.0, 2.0),
            gp(0.0, 8.0),
            gp(1.0, 2.0), // reflex
        ]);
        let notch = Footprint::new([gp(0.2, 2.6), gp(0.6, 2.6), gp(0.6, 3.4), gp(0.2, 3.4)]);
        assert!(!footprints_overlap(&dart, &notch).unwrap());
        let tip = Footprint::new([gp(3.0, 1.6), gp(3.8, 1.6), gp(3.8, 2.4), gp(3.0, 2.4)]);
        assert!(footprints_overlap(&dart, &tip).unwrap());
    }

    fn gp(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    fn quad(lat0: f64, lat1: f64, lon0: f64, lon1: f64) -> Footprint {
        Footprint::new([
            gp(lat1, lon0),
            gp(lat1, lon1),
            gp(lat0, lon1),
            gp(lat0, lon0),
        ])
    }

    #[test]
    fn pack_unpack_round_trip() {
        let r = RegionId::new(11, 4093, 2047);
        assert_eq!(RegionId::unpack(r.pack()), r);
    }

    #[test]
    fn visibility_params_sanity_bound() {
        assert!(VisibilityParams::default().validate().is_ok());
        let bad = VisibilityParams {
            search_radius_km: 2000.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
