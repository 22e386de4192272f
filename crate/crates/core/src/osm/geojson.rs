use std::collections::BTreeMap;
use std::path::Path;

use serde_json::{json, Map, Value};

use super::assemble::{signed_area, MultiPolygonGeom};
use super::{OsmError, Point};

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureGeometry {
    Point(Point),
    LineString(Vec<Point>),
    MultiPolygon(MultiPolygonGeom),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub geometry: FeatureGeometry,
    pub properties: BTreeMap<String, String>,
}

fn coord(p: Point) -> Value {
    json!([p.0, p.1])
}

// RFC 7946: exterior rings counter-clockwise, holes clockwise.
fn ring_json(ring: &[Point], ccw: bool) -> Value {
    let mut pts: Vec<Point> = ring.to_vec();
    if (signed_area(&pts) > 0.0) != ccw {
        pts.reverse();
    }
    Value::Array(pts.into_iter().map(coord).collect())
}

fn geometry_json(g: &FeatureGeometry) -> Value {
    match g {
        FeatureGeometry::Point(p) => json!({"type": "Point", "coordinates": coord(*p)}),
        FeatureGeometry::LineString(pts) => json!({
            "type": "LineString",
            "coordinates": pts.iter().copied().map(coord).collect::<Vec<_>>(),
        }),
        FeatureGeometry::MultiPolygon(mp) => {
            let polys: Vec<Value> = mp
                .polygons
                .iter()
                .map(|p| {
                    let mut rings = vec![ring_json(&p.outer, true)];
                    rings.extend(p.holes.iter().map(|h| ring_json(h, false)));
                    Value::Array(rings)
                })
                .collect();
            json!({"type": "MultiPolygon", "coordinates": polys})
        }
    }
}

pub fn feature_collection(features: &[FeatureRecord]) -> Value {
    let feats: Vec<Value> = features
        .iter()
        .map(|f| {
            let props: Map<String, Value> = f
                .properties
                .iter()
                .map(|(k, v)| (k.clone(), Value::String(v.clone())))
                .collect();
            json!({"type": "Feature", "geometry": geometry_json(&f.geometry), "properties": props})
        })
        .collect();
    json!({"type": "FeatureCollection", "features": feats})
}

pub fn write_geojson(features: &[FeatureRecord], path: &Path) -> Result<(), OsmError> {
    if features.is_empty() {
        return Err(OsmError::NoFeatures);
    }
    let text = serde_json::to_string(&feature_collection(features)).expect("serializable");
    std::fs::write(path, text).map_err(|e| OsmError::IoError {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}
