//! Overpass QL builders and the interpreter client.

use serde_json::Value;

use super::{status_error, GeoError};
use crate::http::{HttpRequest, HttpTransport};

pub const OVERPASS_ENDPOINT: &str = "https://overpass-api.de/api/interpreter";

/// Country-level area, then every relation one step down the admin
/// hierarchy inside it, with inline geometry.
///
/// ```
/// let q = geodata::geo::overpass::build_admin_boundary_query("CU", 4).unwrap();
/// assert!(q.ends_with("out geom;"));
/// ```
pub fn build_admin_boundary_query(
    country_code: &str,
    child_admin_level: u8,
) -> Result<String, GeoError> {
    if !(1..=11).contains(&child_admin_level) {
        return Err(GeoError::EmptyInput("admin level in 1..11"));
    }
    let code = country_code.trim();
    if code.len() != 2 || !code.chars().all(|c| c.is_ascii_alphabetic()) {
        return Err(GeoError::EmptyInput("two-letter country code"));
    }
    let code = code.to_ascii_uppercase();
    let set = code.to_ascii_lowercase();
    Ok(format!(
        "[out:json];\narea[\"ISO3166-1\"=\"{code}\"][admin_level=2]->.{set};\n\
         relation(area.{set})[\"admin_level\"=\"{child_admin_level}\"];\nout geom;"
    ))
}

/// How the search area of a POI query is selected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RegionKey {
    /// Any tag equality, e.g. `ISO3166-2` = `US-PA`.
    Tag { key: String, value: String },
    /// English place name, matched on `name:en`.
    EnglishName(String),
}

fn quote(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\'', "\\'")
}

pub fn build_poi_query(region: &RegionKey, amenity: &str) -> Result<String, GeoError> {
    if amenity.trim().is_empty() {
        return Err(GeoError::EmptyInput("amenity"));
    }
    let area = match region {
        RegionKey::Tag { key, value } => format!("area['{}'='{}']", quote(key), quote(value)),
        RegionKey::EnglishName(name) => format!("area[name:en='{}']", quote(name)),
    };
    Ok(format!(
        "[out:json];\n{area}->.searchArea;(nwr[amenity='{}'](area.searchArea));out center;",
        quote(amenity)
    ))
}

/// POSTs `query` in the `data` form field and returns the body text.
pub fn execute_overpass(
    query: &str,
    endpoint: &str,
    http: &dyn HttpTransport,
) -> Result<String, GeoError> {
    if query.trim().is_empty() {
        return Err(GeoError::EmptyInput("query"));
    }
    let resp = http.send(&HttpRequest::post_form(endpoint, &[("data", query)]))?;
    if resp.status != 200 {
        return Err(status_error(resp.status, &resp.body));
    }
    let text = resp.text();
    if let Ok(Value::Object(obj)) = serde_json::from_str::<Value>(&text) {
        if let Some(remark) = obj.get("remark").and_then(Value::as_str) {
            return Err(GeoError::OverpassRemark(remark.to_string()));
        }
    }
    Ok(text)
}
