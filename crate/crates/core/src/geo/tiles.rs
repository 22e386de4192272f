//! Slippy-map tile math, tile download and mosaicking.
//!
//! Tiles follow the XYZ Web Mercator scheme: `2^z x 2^z` tiles of 256 px,
//! `x` growing east from -180°, `y` growing south from the northern
//! Mercator limit.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use image::RgbaImage;
use serde::{Deserialize, Serialize};

use super::{status_error, BBox, GeoError};
use crate::http::{HttpRequest, HttpTransport};

pub const TILE_SIZE: u32 = 256;
/// Northern/southern limit of the Web Mercator square, in degrees.
pub const MAX_LATITUDE: f64 = 85.051_128_779_806_59;
pub const EARTH_RADIUS_M: f64 = 6_378_137.0;
/// Half the width of the Web Mercator square, in meters.
pub const ORIGIN_SHIFT_M: f64 = PI * EARTH_RADIUS_M;
pub const DEFAULT_MAX_ZOOM: u8 = 19;
pub const DEFAULT_GRID_CAP: u64 = 1024;
pub const DEFAULT_PARALLELISM: usize = 4;
pub const ESRI_WORLD_IMAGERY: &str =
    "https://server.arcgisonline.com/ArcGIS/rest/services/World_Imagery/MapServer/tile/{z}/{y}/{x}";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TileCoord {
    pub z: u8,
    pub x: u32,
    pub y: u32,
}

impl TileCoord {
    pub fn new(z: u8, x: u32, y: u32) -> Option<Self> {
        let n = tiles_per_side(z)?;
        (u64::from(x) < n && u64::from(y) < n).then_some(Self { z, x, y })
    }
}

fn tiles_per_side(z: u8) -> Option<u64> {
    (z < 32).then(|| 1u64 << z)
}

fn check_lonlat(lon: f64, lat: f64) -> Result<(), GeoError> {
    if !lat.is_finite() || lat.abs() > MAX_LATITUDE {
        return Err(GeoError::LatitudeOutOfRange(lat));
    }
    if !lon.is_finite() || !(-180.0..=180.0).contains(&lon) {
        return Err(GeoError::LongitudeOutOfRange(lon));
    }
    Ok(())
}

/// Fractional tile position of a point.
fn tile_fraction(lon: f64, lat: f64, n: f64) -> (f64, f64) {
    let phi = lat.to_radians();
    let fx = (lon + 180.0) / 360.0 * n;
    let fy = (1.0 - (phi.tan() + 1.0 / phi.cos()).ln() / PI) / 2.0 * n;
    (fx, fy)
}

pub fn lonlat_to_tile(lon: f64, lat: f64, z: u8) -> Result<TileCoord, GeoError> {
    check_lonlat(lon, lat)?;
    let n = tiles_per_side(z).ok_or(GeoError::ZoomTooLarge { zoom: z, max: 31 })?;
    let (fx, fy) = tile_fraction(lon, lat, n as f64);
    let clamp = |v: f64| v.floor().clamp(0.0, (n - 1) as f64) as u32;
    Ok(TileCoord {
        z,
        x: clamp(fx),
        y: clamp(fy),
    })
}

fn tile_lat(y: f64, n: f64) -> f64 {
    (PI * (1.0 - 2.0 * y / n)).sinh().atan().to_degrees()
}

pub fn tile_bbox(t: TileCoord) -> BBox {
    let n = (1u64 << t.z) as f64;
    let (x, y) = (f64::from(t.x), f64::from(t.y));
    BBox {
        south: tile_lat(y + 1.0, n),
        west: x / n * 360.0 - 180.0,
        north: tile_lat(y, n),
        east: (x + 1.0) / n * 360.0 - 180.0,
    }
}

/// A rectangular block of tiles at one zoom level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileGrid {
    pub z: u8,
    pub x_min: u32,
    pub x_max: u32,
    pub y_min: u32,
    pub y_max: u32,
}

impl TileGrid {
    pub fn cols(&self) -> u32 {
        self.x_max - self.x_min + 1
    }

    pub fn rows(&self) -> u32 {
        self.y_max - self.y_min + 1
    }

    pub fn len(&self) -> usize {
        self.cols() as usize * self.rows() as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Tiles in row-major order (north row first, west to east).
    pub fn tiles(&self) -> Vec<TileCoord> {
        (self.y_min..=self.y_max)
            .flat_map(|y| (self.x_min..=self.x_max).map(move |x| TileCoord { z: self.z, x, y }))
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GridLimits {
    pub max_zoom: u8,
    pub max_tiles: u64,
}

impl Default for GridLimits {
    fn default() -> Self {
        Self {
            max_zoom: DEFAULT_MAX_ZOOM,
            max_tiles: DEFAULT_GRID_CAP,
        }
    }
}

// Index of the last tile a span ending at `f` reaches: a span ending
// exactly on a tile edge does not enter the next tile.
fn last_index(f: f64, first: u32, n: u64) -> u32 {
    let i = if f.fract() == 0.0 && f > f64::from(first) {
        f - 1.0
    } else {
        f.floor()
    };
    i.clamp(0.0, (n - 1) as f64) as u32
}

/// Smallest tile rectangle at zoom `z` whose tiles cover `bbox`. Latitudes
/// beyond the Mercator limit are clamped to it.
pub fn tiles_covering(bbox: &BBox, z: u8, limits: GridLimits) -> Result<TileGrid, GeoError> {
    if z > limits.max_zoom {
        return Err(GeoError::ZoomTooLarge {
            zoom: z,
            max: limits.max_zoom,
        });
    }
    let n = tiles_per_side(z).expect("zoom within cap");
    let north = bbox.north.min(MAX_LATITUDE);
    let south = bbox.south.max(-MAX_LATITUDE);
    if south >= north {
        return Err(GeoError::InvalidBBox(
            "box lies outside the Mercator range".into(),
        ));
    }
    let (fx_w, fy_n) = tile_fraction(bbox.west, north, n as f64);
    let (fx_e, fy_s) = tile_fraction(bbox.east, south, n as f64);
    let clamp = |v: f64| v.floor().clamp(0.0, (n - 1) as f64) as u32;
    let x_min = clamp(fx_w);
    let y_min = clamp(fy_n);
    let grid = TileGrid {
        z,
        x_min,
        x_max: last_index(fx_e, x_min, n).max(x_min),
        y_min,
        y_max: last_index(fy_s, y_min, n).max(y_min),
    };
    let count = grid.len() as u64;
    if count > limits.max_tiles {
        return Err(GeoError::GridTooLarge {
            tiles: count,
            cap: limits.max_tiles,
        });
    }
    Ok(grid)
}

pub fn tile_url(t: TileCoord, template: &str) -> Result<String, GeoError> {
    if !["{z}", "{x}", "{y}"].iter().all(|m| template.contains(m)) {
        return Err(GeoError::BadTemplate(template.to_string()));
    }
    Ok(template
        .replace("{z}", &t.z.to_string())
        .replace("{x}", &t.x.to_string())
        .replace("{y}", &t.y.to_string()))
}

/// Recognizes PNG, JPEG, GIF, WebP and TIFF by their leading bytes.
pub fn is_raster(bytes: &[u8]) -> bool {
    bytes.starts_with(b"\x89PNG\r\n\x1a\n")
        || bytes.starts_with(&[0xFF, 0xD8, 0xFF])
        || bytes.starts_with(b"GIF87a")
        || bytes.starts_with(b"GIF89a")
        || (bytes.len() >= 12 && &bytes[..4] == b"RIFF" && &bytes[8..12] == b"WEBP")
        || bytes.starts_with(b"II*\0")
        || bytes.starts_with(b"MM\0*")
}

pub fn fetch_tile(
    t: TileCoord,
    url_template: &str,
    http: &dyn HttpTransport,
) -> Result<Vec<u8>, GeoError> {
    let url = tile_url(t, url_template)?;
    let resp = http.send(&HttpRequest::get(url))?;
    if resp.status != 200 {
        return Err(status_error(resp.status, &resp.body));
    }
    if !is_raster(&resp.body) {
        return Err(GeoError::NotAnImage);
    }
    Ok(resp.body)
}

type TileBytes = Result<Vec<u8>, GeoError>;

/// Downloads every tile of `grid` with at most `parallelism` requests in
/// flight. The result is in grid order regardless of completion order.
pub fn fetch_grid(
    grid: &TileGrid,
    url_template: &str,
    http: &dyn HttpTransport,
    parallelism: usize,
) -> Result<Vec<Vec<u8>>, GeoError> {
    let tiles = grid.tiles();
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<TileBytes>>> = Mutex::new((0..tiles.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..parallelism.clamp(1, tiles.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(t) = tiles.get(i) else { break };
                let r = fetch_tile(*t, url_template, http);
                slots.lock().expect("slot lock")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("slot lock")
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

pub fn decode_tile(bytes: &[u8]) -> Result<RgbaImage, GeoError> {
    if !is_raster(bytes) {
        return Err(GeoError::NotAnImage);
    }
    image::load_from_memory(bytes)
        .map(|img| img.to_rgba8())
        .map_err(|e| GeoError::Image(e.to_string()))
}

/// Affine georeference of a mosaic in Web Mercator meters. The origin is
/// the outer corner of the top-left pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoTransform {
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_size_x: f64,
    pub pixel_size_y: f64,
}

impl GeoTransform {
    pub fn for_grid(grid: &TileGrid) -> Self {
        let n = (1u64 << grid.z) as f64;
        let pixel = 2.0 * ORIGIN_SHIFT_M / (f64::from(TILE_SIZE) * n);
        let tile_m = pixel * f64::from(TILE_SIZE);
        Self {
            origin_x: -ORIGIN_SHIFT_M + f64::from(grid.x_min) * tile_m,
            origin_y: ORIGIN_SHIFT_M - f64::from(grid.y_min) * tile_m,
            pixel_size_x: pixel,
            pixel_size_y: pixel,
        }
    }

    /// Six-line world file; the reference point is the center of the
    /// top-left pixel.
    pub fn world_file(&self) -> String {
        format!(
            "{:.10}\n{:.10}\n{:.10}\n{:.10}\n{:.10}\n{:.10}\n",
            self.pixel_size_x,
            0.0,
            0.0,
            -self.pixel_size_y,
            self.origin_x + self.pixel_size_x / 2.0,
            self.origin_y - self.pixel_size_y / 2.0,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MosaicImage {
    pub width: u32,
    pub height: u32,
    /// Row-major RGBA.
    pub pixels: Vec<u8>,
    pub geotransform: GeoTransform,
}

impl MosaicImage {
    pub fn write_png(&self, path: &Path) -> Result<(), GeoError> {
        let img = RgbaImage::from_raw(self.width, self.height, self.pixels.clone())
            .expect("buffer matches dimensions");
        img.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| GeoError::Image(e.to_string()))
    }

    /// Writes the image and its world-file sidecar (`.pgw`).
    pub fn write_with_world_file(&self, path: &Path) -> Result<(), GeoError> {
        self.write_png(path)?;
        std::fs::write(path.with_extension("pgw"), self.geotransform.world_file())
            .map_err(|e| GeoError::Image(e.to_string()))
    }
}

pub fn mosaic(grid: &TileGrid, images: &[RgbaImage]) -> Result<MosaicImage, GeoError> {
    if images.len() != grid.len() {
        return Err(GeoError::IncompleteGrid {
            expected: grid.len(),
            got: images.len(),
        });
    }
    for (index, img) in images.iter().enumerate() {
        if img.width() != TILE_SIZE || img.height() != TILE_SIZE {
            return Err(GeoError::DimensionMismatch {
                index,
                width: img.width(),
                height: img.height(),
            });
        }
    }
    let width = grid.cols() * TILE_SIZE;
    let height = grid.rows() * TILE_SIZE;
    let row_bytes = width as usize * 4;
    let tile_row_bytes = TILE_SIZE as usize * 4;
    let mut pixels = vec![0u8; row_bytes * height as usize];
    for (i, img) in images.iter().enumerate() {
        let col = i % grid.cols() as usize;
        let row = i / grid.cols() as usize;
        let raw = img.as_raw();
        for py in 0..TILE_SIZE as usize {
            let dst = (row * TILE_SIZE as usize + py) * row_bytes + col * tile_row_bytes;
            let src = py * tile_row_bytes;
            pixels[dst..dst + tile_row_bytes].copy_from_slice(&raw[src..src + tile_row_bytes]);
        }
    }
    Ok(MosaicImage {
        width,
        height,
        pixels,
        geotransform: GeoTransform::for_grid(grid),
    })
}
