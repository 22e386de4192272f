//! Weather query validation against the provider's published limits.
//!
//! Models cannot read a clock, so every limit is measured from an explicit
//! `reference_now` supplied by the caller.

use chrono::{DateTime, Duration, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use super::{BBox, GeoError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeatherKind {
    Historical,
    Current,
    Forecast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Hourly,
    ThreeHour,
    Daily,
}

impl Granularity {
    /// Longest forecast horizon, in days, the provider serves.
    pub fn forecast_limit_days(self) -> i64 {
        match self {
            Self::Hourly => 4,
            Self::ThreeHour => 5,
            Self::Daily => 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Location {
    Point { lat: f64, lon: f64 },
    BBoxCenter(BBox),
}

impl Location {
    /// `(lat, lon)`.
    pub fn lat_lon(&self) -> (f64, f64) {
        match *self {
            Self::Point { lat, lon } => (lat, lon),
            Self::BBoxCenter(b) => {
                let (lon, lat) = b.center();
                (lat, lon)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherQuerySpec {
    pub kind: WeatherKind,
    pub granularity: Granularity,
    pub location: Location,
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    pub reference_now: DateTime<Utc>,
}

pub fn historical_floor() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2023, 8, 1, 0, 0, 0).unwrap()
}

/// Returns the query unchanged when it is within the provider limits.
pub fn validate_weather_request(spec: WeatherQuerySpec) -> Result<WeatherQuerySpec, GeoError> {
    if spec.end <= spec.start {
        return Err(GeoError::EmptyRange);
    }
    match spec.kind {
        WeatherKind::Historical if spec.start < historical_floor() => {
            Err(GeoError::HistoricalTooEarly)
        }
        WeatherKind::Forecast => {
            let limit_days = spec.granularity.forecast_limit_days();
            let span = spec.end - spec.reference_now;
            if span > Duration::days(limit_days) {
                return Err(GeoError::ForecastTooLong {
                    requested_hours: span.num_hours(),
                    limit_days,
                });
            }
            Ok(spec)
        }
        _ => Ok(spec),
    }
}

/// Endpoint table. The provider does not document one endpoint per
/// combination, so this is configuration rather than a contract.
pub fn endpoint_for(kind: WeatherKind, granularity: Granularity) -> Option<&'static str> {
    use Granularity::*;
    use WeatherKind::*;
    Some(match (kind, granularity) {
        (Historical, Hourly) => "https://history.openweathermap.org/data/2.5/history/city",
        (Historical, Daily) => "https://history.openweathermap.org/data/2.5/aggregated/day",
        (Current, _) => "https://api.openweathermap.org/data/2.5/weather",
        (Forecast, Hourly) => "https://pro.openweathermap.org/data/2.5/forecast/hourly",
        (Forecast, ThreeHour) => "https://api.openweathermap.org/data/2.5/forecast",
        (Forecast, Daily) => "https://api.openweathermap.org/data/2.5/forecast/daily",
        (Historical, ThreeHour) => return None,
    })
}
