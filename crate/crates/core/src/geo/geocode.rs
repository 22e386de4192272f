//! Place-name geocoding against a Nominatim-compatible search endpoint.

use serde::Deserialize;

use super::{status_error, BBox, GeoError};
use crate::http::{HttpRequest, HttpTransport};

pub const NOMINATIM_SEARCH: &str = "https://nominatim.openstreetmap.org/search";

#[derive(Debug, Clone, PartialEq)]
pub struct GeocodeResult {
    pub bbox: BBox,
    pub display_name: String,
}

#[derive(Deserialize)]
struct Hit {
    // Nominatim order: [south, north, west, east], as strings.
    boundingbox: [String; 4],
    display_name: String,
}

pub fn geocode_url(endpoint: &str, place_name: &str) -> String {
    let query = url::form_urlencoded::Serializer::new(String::new())
        .append_pair("q", place_name)
        .append_pair("format", "json")
        .append_pair("limit", "1")
        .append_pair("structured", "false")
        .finish();
    format!("{endpoint}?{query}")
}

fn parse_bound(s: &str) -> Result<f64, GeoError> {
    s.trim()
        .parse()
        .map_err(|_| GeoError::InvalidBBox(format!("bad bound {s:?}")))
}

pub fn geocode(
    place_name: &str,
    endpoint: &str,
    http: &dyn HttpTransport,
) -> Result<GeocodeResult, GeoError> {
    if place_name.trim().is_empty() {
        return Err(GeoError::EmptyInput("place name"));
    }
    let resp = http.send(&HttpRequest::get(geocode_url(endpoint, place_name)))?;
    if resp.status != 200 {
        return Err(status_error(resp.status, &resp.body));
    }
    let hits: Vec<Hit> = serde_json::from_slice(&resp.body).map_err(|e| GeoError::HttpError {
        status: Some(resp.status),
        message: format!("unexpected geocoder payload: {e}"),
    })?;
    let hit = hits
        .into_iter()
        .next()
        .ok_or_else(|| GeoError::NoMatch(place_name.to_string()))?;
    let [south, north, west, east] = &hit.boundingbox;
    let bbox = BBox::new(
        parse_bound(south)?,
        parse_bound(west)?,
        parse_bound(north)?,
        parse_bound(east)?,
    )?;
    Ok(GeocodeResult {
        bbox,
        display_name: hit.display_name,
    })
}
