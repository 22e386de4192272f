//! Request builders, validators and clients for the concrete data sources.
//!
//! Builders are pure functions; clients take an [`HttpTransport`] so tests
//! can answer them from recorded fixtures.
//!
//! [`HttpTransport`]: crate::http::HttpTransport

pub mod census;
pub mod covid;
pub mod dem;
pub mod geocode;
pub mod overpass;
pub mod tiles;
pub mod weather;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::http::HttpError;

#[derive(Debug, Error, PartialEq)]
pub enum GeoError {
    #[error("invalid bounding box: {0}")]
    InvalidBBox(String),
    #[error("latitude {0} is outside the Web Mercator range")]
    LatitudeOutOfRange(f64),
    #[error("longitude {0} is outside [-180, 180]")]
    LongitudeOutOfRange(f64),
    #[error("zoom {zoom} exceeds the maximum {max}")]
    ZoomTooLarge { zoom: u8, max: u8 },
    #[error("tile grid of {tiles} tiles exceeds the cap of {cap}")]
    GridTooLarge { tiles: u64, cap: u64 },
    #[error("tile URL template must contain {{z}}, {{x}} and {{y}}: {0}")]
    BadTemplate(String),
    #[error("HTTP {status:?}: {message}")]
    HttpError {
        status: Option<u16>,
        message: String,
    },
    #[error("response is not a raster image")]
    NotAnImage,
    #[error("tile {index} is {width}x{height}, expected 256x256")]
    DimensionMismatch {
        index: usize,
        width: u32,
        height: u32,
    },
    #[error("grid needs {expected} tiles, got {got}")]
    IncompleteGrid { expected: usize, got: usize },
    #[error("Overpass remark: {0}")]
    OverpassRemark(String),
    #[error("no geocoding match for {0:?}")]
    NoMatch(String),
    #[error("layer {0} needs a state FIPS scope")]
    ScopeRequired(&'static str),
    #[error("bad state FIPS code {0:?}")]
    BadFips(String),
    #[error("bad ACS variable code {0:?}")]
    BadVariableCode(String),
    #[error("no ACS variables requested")]
    EmptyVariables,
    #[error("forecast span of {requested_hours} h exceeds the {limit_days}-day limit")]
    ForecastTooLong {
        requested_hours: i64,
        limit_days: i64,
    },
    #[error("historical data starts at 2023-08-01")]
    HistoricalTooEarly,
    #[error("time range is empty")]
    EmptyRange,
    #[error("date range outside the available span: {0}")]
    RangeError(String),
    #[error("malformed CSV: {0}")]
    MalformedCsv(String),
    #[error("unknown DEM type {0:?}")]
    UnknownDemType(String),
    #[error("{0} must not be empty")]
    EmptyInput(&'static str),
    #[error("image error: {0}")]
    Image(String),
}

impl From<HttpError> for GeoError {
    fn from(e: HttpError) -> Self {
        GeoError::HttpError {
            status: None,
            message: e.to_string(),
        }
    }
}

pub(crate) fn status_error(status: u16, body: &[u8]) -> GeoError {
    let excerpt: String = String::from_utf8_lossy(body).chars().take(200).collect();
    GeoError::HttpError {
        status: Some(status),
        message: excerpt,
    }
}

/// Geographic extent in WGS84 degrees. Boxes crossing the antimeridian are
/// not representable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub south: f64,
    pub west: f64,
    pub north: f64,
    pub east: f64,
}

impl BBox {
    pub fn new(south: f64, west: f64, north: f64, east: f64) -> Result<Self, GeoError> {
        let all_finite = [south, west, north, east].iter().all(|v| v.is_finite());
        if !all_finite {
            return Err(GeoError::InvalidBBox("non-finite coordinate".into()));
        }
        if !(-90.0..=90.0).contains(&south) || !(-90.0..=90.0).contains(&north) || south >= north {
            return Err(GeoError::InvalidBBox(format!(
                "need -90 <= south < north <= 90, got south={south} north={north}"
            )));
        }
        if !(-180.0..=180.0).contains(&west) || !(-180.0..=180.0).contains(&east) || west >= east {
            return Err(GeoError::InvalidBBox(format!(
                "need -180 <= west < east <= 180, got west={west} east={east}"
            )));
        }
        Ok(Self {
            south,
            west,
            north,
            east,
        })
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.west + self.east) / 2.0,
            (self.south + self.north) / 2.0,
        )
    }

    pub fn contains(&self, lon: f64, lat: f64) -> bool {
        (self.west..=self.east).contains(&lon) && (self.south..=self.north).contains(&lat)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bbox_invariants() {
        assert!(BBox::new(27.82, 86.73, 28.17, 87.13).is_ok());
        assert!(BBox::new(28.0, 86.0, 27.0, 87.0).is_err());
        assert!(BBox::new(0.0, 170.0, 1.0, -170.0).is_err());
        assert!(BBox::new(-91.0, 0.0, 0.0, 1.0).is_err());
        assert!(BBox::new(0.0, 0.0, 0.0, 1.0).is_err());
    }
}
