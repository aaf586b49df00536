//! XYZ tile fetching with an on-disk cache.
//!
//! The endpoint template carries `{year}`, `{z}`, `{x}`, `{y}` placeholders
//! filled from the region's half-stride indices. Payloads are cached as
//! raw bytes under `<cache_dir>/<year>/<z>/<x>/<y>.img` (written to a temp
//! file and renamed, so concurrent fetchers of the same key settle
//! last-wins on a complete file). Network failures retry with exponential
//! backoff before surfacing an error that names the region and year.

use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::error::{Error, Result};
use crate::geodesy::RegionId;
use crate::raster::Rgb8Image;

/// Validated endpoint template.
#[derive(Debug, Clone)]
pub struct TileEndpoint {
    template: String,
}

impl TileEndpoint {
    pub fn new(template: impl Into<String>) -> Result<Self> {
        let template = template.into();
        for placeholder in ["{z}", "{x}", "{y}", "{year}"] {
            if !template.contains(placeholder) {
                return Err(Error::invalid(format!(
                    "endpoint template is missing the {} placeholder",
                    placeholder
                )));
            }
        }
        Ok(Self { template })
    }

    pub fn url(&self, region: RegionId, year: u16) -> String {
        self.template
            .replace("{year}", &year.to_string())
            .replace("{z}", &region.zoom.to_string())
            .replace("{x}", &region.ix.to_string())
            .replace("{y}", &region.iy.to_string())
    }
}

/// Tile fetcher configuration.
#[derive(Debug, Clone)]
pub struct FetchConfig {
    pub cache_dir: PathBuf,
    /// Expected region image side in pixels; decoded payloads of another
    /// size are resized.
    pub image_px: u32,
    pub retries: u32,
    pub initial_backoff: Duration,
    /// Bounded fan-out for batch fetches.
    pub parallelism: usize,
}

impl FetchConfig {
    pub fn new(cache_dir: impl Into<PathBuf>, image_px: u32) -> Self {
        Self {
            cache_dir: cache_dir.into(),
            image_px,
            retries: 3,
            initial_backoff: Duration::from_millis(100),
            parallelism: 8,
        }
    }
}

pub struct TileFetcher {
    endpoint: TileEndpoint,
    cfg: FetchConfig,
    agent: ureq::Agent,
}

impl TileFetcher {
    pub fn new(endpoint: TileEndpoint, cfg: FetchConfig) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(30))
            .build();
        Self {
            endpoint,
            cfg,
            agent,
        }
    }

    pub fn cache_path(&self, region: RegionId, year: u16) -> PathBuf {
        self.cfg
            .cache_dir
            .join(year.to_string())
            .join(region.zoom.to_string())
            .join(region.ix.to_string())
            .join(format!("{}.img", region.iy))
    }

    /// Fetch one tile, consulting the cache first. Returns the decoded RGB
    /// buffer at the configured size.
    pub fn fetch_tile(&self, region: RegionId, year: u16) -> Result<Rgb8Image> {
        let path = self.cache_path(region, year);
        if let Ok(bytes) = std::fs::read(&path) {
            return self.decode(&bytes, region, year);
        }
        let bytes = self.download(region, year)?;
        let img = self.decode(&bytes, region, year)?;
        write_atomic(&path, &bytes)?;
        Ok(img)
    }

    /// True if the tile is already cached (no network touched).
    pub fn is_cached(&self, region: RegionId, year: u16) -> bool {
        self.cache_path(region, year).exists()
    }

    /// Fetch a set of tiles with bounded parallelism. Results come back in
    /// input order; the first error is reported after the wave completes.
    pub fn fetch_many(&self, items: &[(RegionId, u16)]) -> Vec<Result<Rgb8Image>> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.cfg.parallelism.max(1))
            .build();
        match pool {
            Ok(pool) => pool.install(|| {
                use rayon::prelude::*;
                items
                    .par_iter()
                    .map(|&(r, y)| self.fetch_tile(r, y))
                    .collect()
            }),
            Err(_) => items.iter().map(|&(r, y)| self.fetch_tile(r, y)).collect(),
        }
    }

    fn download(&self, region: RegionId, year: u16) -> Result<Vec<u8>> {
        let url = self.endpoint.url(region, year);
        let mut backoff = self.cfg.initial_backoff;
        let mut last_err: Option<Box<dyn std::error::Error + Send + Sync>> = None;
        for attempt in 0..=self.cfg.retries {
            if attempt > 0 {
                std::thread::sleep(backoff);
                backoff *= 2;
            }
            match self.agent.get(&url).call() {
                Ok(resp) => {
                    let mut bytes = Vec::new();
                    use std::io::Read;
                    match resp.into_reader().read_to_end(&mut bytes) {
                        Ok(_) => return Ok(bytes),
                        Err(e) => last_err = Some(Box::new(e)),
                    }
                }
                Err(e) => last_err = Some(Box::new(e)),
            }
        }
        Err(Error::Network {
            what: format!("tile {} year {}", region, year),
            source: last_err.unwrap_or_else(|| "no attempts made".into()),
        })
    }

    fn decode(&self, bytes: &[u8], region: RegionId, year: u16) -> Result<Rgb8Image> {
        let img = image::load_from_memory(bytes).map_err(|e| {
            Error::Format(format!(
                "tile {} year {}: payload is not a decodable image: {}",
                region, year, e
            ))
        })?;
        let rgb = img.to_rgb8();
        let out = Rgb8Image::new(rgb.width(), rgb.height(), rgb.into_raw())?;
        if out.width() != self.cfg.image_px || out.height() != self.cfg.image_px {
            return Ok(out.resize_bilinear(self.cfg.image_px, self.cfg.image_px));
        }
        Ok(out)
    }
}

/// Write bytes to a temp file in the target directory, then rename into
/// place. Readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    static SEQ: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);
    let dir = path.parent().ok_or_else(|| Error::invalid("path has no parent"))?;
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".tmp-{}-{}",
        std::process::id(),
        SEQ.fetch_add(1, std::sync::atomic::Ordering::Relaxed)
    ));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
