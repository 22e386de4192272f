//! OpenStreetMap data from the Overpass interpreter.
//!
//! Parses `[out:json]` responses produced with `out geom;`, assembles
//! boundary relations into multipolygons with holes and writes GeoJSON.

mod assemble;
mod geojson;

use std::collections::BTreeMap;

use serde_json::Value;
use thiserror::Error;

pub use assemble::{
    assemble_relation, merge_lines, polygonize, ring_area, signed_area, MultiPolygonGeom,
    PathChain, PolygonGeom, Ring,
};
pub use geojson::{write_geojson, FeatureGeometry, FeatureRecord};

/// `(lon, lat)` in WGS84 degrees.
pub type Point = (f64, f64);

#[derive(Debug, Error)]
pub enum OsmError {
    #[error("cannot parse Overpass response: {0}")]
    ParseError(String),
    #[error("relation {0} has no outer ring")]
    EmptyRelation(i64),
    #[error("element {0} is not a relation")]
    NotARelation(i64),
    #[error("no features to write")]
    NoFeatures,
    #[error("cannot write {path}: {reason}")]
    IoError { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementKind {
    Node,
    Way,
    Relation,
}

impl ElementKind {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "node" => Some(Self::Node),
            "way" => Some(Self::Way),
            "relation" => Some(Self::Relation),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Node => "node",
            Self::Way => "way",
            Self::Relation => "relation",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TagValue {
    Scalar(String),
    List(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Member {
    pub kind: ElementKind,
    pub ref_id: i64,
    pub role: String,
    pub geometry: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OsmElement {
    pub id: i64,
    pub kind: ElementKind,
    pub tags: BTreeMap<String, TagValue>,
    pub geometry: Option<Vec<Point>>,
    pub members: Option<Vec<Member>>,
}

fn scalar_string(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn tag_value(v: &Value) -> TagValue {
    match v {
        Value::Array(items) => TagValue::List(items.iter().map(scalar_string).collect()),
        other => TagValue::Scalar(scalar_string(other)),
    }
}

fn point(v: &Value) -> Option<Point> {
    Some((v.get("lon")?.as_f64()?, v.get("lat")?.as_f64()?))
}

/// Point list from a `geometry` array, or the `lat`/`lon` of a node.
/// Null entries (nodes outside a clipping bbox) are skipped.
fn geometry_of(v: &Value) -> Option<Vec<Point>> {
    match v.get("geometry") {
        Some(Value::Array(points)) => Some(points.iter().filter_map(point).collect()),
        _ => point(v).map(|p| vec![p]),
    }
}

fn parse_element(v: &Value) -> Result<OsmElement, String> {
    let kind = v
        .get("type")
        .and_then(Value::as_str)
        .and_then(ElementKind::parse)
        .ok_or("element without a known type")?;
    let id = v
        .get("id")
        .and_then(Value::as_i64)
        .ok_or("element without an id")?;
    let tags = match v.get("tags") {
        Some(Value::Object(map)) => map.iter().map(|(k, v)| (k.clone(), tag_value(v))).collect(),
        Some(_) => return Err(format!("{} {id}: tags is not an object", kind.as_str())),
        None => BTreeMap::new(),
    };
    let geometry = match kind {
        ElementKind::Relation => None,
        _ => geometry_of(v),
    };
    match (&kind, &geometry) {
        (ElementKind::Node, Some(g)) if g.len() != 1 => {
            return Err(format!("node {id} has {} points", g.len()))
        }
        (ElementKind::Way, Some(g)) if g.len() < 2 => {
            return Err(format!("way {id} has fewer than 2 points"))
        }
        _ => {}
    }
    let members = match v.get("members") {
        Some(Value::Array(ms)) => Some(
            ms.iter()
                .map(|m| {
                    let kind = m
                        .get("type")
                        .and_then(Value::as_str)
                        .and_then(ElementKind::parse)
                        .ok_or_else(|| format!("relation {id}: member without a known type"))?;
                    Ok(Member {
                        kind,
                        ref_id: m.get("ref").and_then(Value::as_i64).unwrap_or(0),
                        role: m
                            .get("role")
                            .and_then(Value::as_str)
                            .unwrap_or("")
                            .to_string(),
                        geometry: geometry_of(m).unwrap_or_default(),
                    })
                })
                .collect::<Result<Vec<_>, String>>()?,
        ),
        Some(_) => return Err(format!("relation {id}: members is not an array")),
        None => None,
    };
    Ok(OsmElement {
        id,
        kind,
        tags,
        geometry,
        members,
    })
}

pub fn parse_overpass_json(text: &str) -> Result<Vec<OsmElement>, OsmError> {
    let doc: Value = serde_json::from_str(text).map_err(|e| OsmError::ParseError(e.to_string()))?;
    let elements = doc
        .get("elements")
        .and_then(Value::as_array)
        .ok_or_else(|| OsmError::ParseError("missing \"elements\" array".into()))?;
    elements
        .iter()
        .map(|e| parse_element(e).map_err(OsmError::ParseError))
        .collect()
}

/// Flattens tag values to strings: lists are joined with `", "`, and the
/// `geometry` and `members` keys are dropped.
pub fn flatten_tags(element: &OsmElement) -> BTreeMap<String, String> {
    element
        .tags
        .iter()
        .filter(|(k, _)| k.as_str() != "geometry" && k.as_str() != "members")
        .map(|(k, v)| {
            let s = match v {
                TagValue::Scalar(s) => s.clone(),
                TagValue::List(items) => items.join(", "),
            };
            (k.clone(), s)
        })
        .collect()
}
