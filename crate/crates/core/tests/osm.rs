mod common;

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use common::*;
use geodata::osm::{
    assemble_relation, flatten_tags, parse_overpass_json, write_geojson, ElementKind,
    FeatureGeometry, FeatureRecord, Member, OsmError, Point,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A star-shaped simple ring around `center`, closed, in random orientation.
/// With at least 8 vertices the ring contains the disk of radius
/// `0.76 * r_min` around `center` (largest angular gap is 1.8 * TAU / n).
fn star_ring(
    rng: &mut ChaCha8Rng,
    center: Point,
    r_min: f64,
    r_max: f64,
    min_vertices: usize,
) -> Vec<Point> {
    let n = rng.gen_range(min_vertices..24);
    let mut angles: Vec<f64> = (0..n)
        .map(|i| (i as f64 + rng.gen_range(0.1..0.9)) * TAU / n as f64)
        .collect();
    if rng.gen_bool(0.5) {
        angles.reverse();
    }
    let mut ring: Vec<Point> = angles
        .iter()
        .map(|a| {
            let r = rng.gen_range(r_min..r_max);
            (center.0 + r * a.cos(), center.1 + r * a.sin())
        })
        .collect();
    ring.push(ring[0]);
    ring
}

/// Cuts a closed ring into 1..=n ways at random vertices, reverses some
/// and shuffles their order.
fn cut_into_ways(rng: &mut ChaCha8Rng, ring: &[Point], role: &str) -> Vec<Member> {
    let n = ring.len() - 1;
    let start = rng.gen_range(0..n);
    let rotated: Vec<Point> = (0..=n).map(|i| ring[(start + i) % n]).collect();
    let mut cuts: Vec<usize> = (1..n).filter(|_| rng.gen_bool(0.4)).collect();
    cuts.insert(0, 0);
    cuts.push(n);
    let mut ways: Vec<Member> = cuts
        .windows(2)
        .map(|w| {
            let mut pts = rotated[w[0]..=w[1]].to_vec();
            if rng.gen_bool(0.5) {
                pts.reverse();
            }
            Member {
                kind: ElementKind::Way,
                ref_id: 0,
                role: role.into(),
                geometry: pts,
            }
        })
        .collect();
    for i in (1..ways.len()).rev() {
        ways.swap(i, rng.gen_range(0..=i));
    }
    ways
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn single_ring_from_shuffled_ways(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ring = star_ring(&mut rng, (10.0, 20.0), 1.0, 2.0, 3);
        let mp = assemble_relation(&relation(cut_into_ways(&mut rng, &ring, "outer"))).unwrap();
        prop_assert_eq!(mp.polygons.len(), 1);
        prop_assert!(!mp.self_intersecting);
        let expected = polygon_area(&ring).abs();
        prop_assert!((mp.area() - expected).abs() < 1e-9 * expected.max(1.0));
        for _ in 0..50 {
            let p = (rng.gen_range(7.5..12.5), rng.gen_range(17.5..22.5));
            if distance_to_ring(&ring, p) < 1e-7 {
                continue;
            }
            prop_assert_eq!(mp.contains(p), even_odd_inside(&[&ring], p), "{:?}", p);
        }
    }

    #[test]
    fn hole_is_attached_and_excluded(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let outer = star_ring(&mut rng, (0.0, 0.0), 1.0, 2.0, 8);
        let inner = star_ring(&mut rng, (0.1, -0.1), 0.2, 0.5, 3);
        let mut members = cut_into_ways(&mut rng, &outer, "outer");
        members.extend(cut_into_ways(&mut rng, &inner, "inner"));
        let mp = assemble_relation(&relation(members)).unwrap();
        prop_assert_eq!(mp.polygons.len(), 1);
        prop_assert_eq!(mp.polygons[0].holes.len(), 1);
        let expected = polygon_area(&outer).abs() - polygon_area(&inner).abs();
        prop_assert!((mp.area() - expected).abs() < 1e-9);
        for _ in 0..50 {
            let p = (rng.gen_range(-2.5..2.5), rng.gen_range(-2.5..2.5));
            if distance_to_ring(&outer, p) < 1e-7 || distance_to_ring(&inner, p) < 1e-7 {
                continue;
            }
            let oracle = even_odd_inside(&[&outer, &inner], p);
            prop_assert_eq!(mp.contains(p), oracle, "{:?}", p);
        }
    }

    #[test]
    fn disjoint_outers_become_separate_polygons(seed in any::<u64>(), k in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rings: Vec<Vec<Point>> = (0..k).map(|i| star_ring(&mut rng, (i as f64 * 10.0, 0.0), 1.0, 2.0, 3)).collect();
        let mut members: Vec<Member> = rings.iter().flat_map(|r| cut_into_ways(&mut rng, r, "outer")).collect();
        for i in (1..members.len()).rev() {
            members.swap(i, rng.gen_range(0..=i));
        }
        let mp = assemble_relation(&relation(members)).unwrap();
        prop_assert_eq!(mp.polygons.len(), k);
        let expected: f64 = rings.iter().map(|r| polygon_area(r).abs()).sum();
        prop_assert!((mp.area() - expected).abs() < 1e-9 * expected);
    }

    #[test]
    fn geojson_rings_follow_right_hand_rule(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let outer = star_ring(&mut rng, (0.0, 0.0), 1.0, 2.0, 8);
        let inner = star_ring(&mut rng, (0.0, 0.0), 0.2, 0.5, 3);
        let mut members = cut_into_ways(&mut rng, &outer, "outer");
        members.extend(cut_into_ways(&mut rng, &inner, "inner"));
        let mp = assemble_relation(&relation(members)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.geojson");
        let record = FeatureRecord { geometry: FeatureGeometry::MultiPolygon(mp), properties: BTreeMap::new() };
        write_geojson(&[record], &path).unwrap();
        let doc: serde_json::Value = serde_json::from_str(&read(&path)).unwrap();
        let rings = &doc["features"][0]["geometry"]["coordinates"][0];
        let as_points = |v: &serde_json::Value| -> Vec<Point> {
            v.as_array().unwrap().iter().map(|c| (c[0].as_f64().unwrap(), c[1].as_f64().unwrap())).collect()
        };
        let outer_json = as_points(&rings[0]);
        prop_assert!(polygon_area(&outer_json) > 0.0);
        prop_assert_eq!(outer_json.first(), outer_json.last());
        prop_assert!(polygon_area(&as_points(&rings[1])) < 0.0);
    }
}

#[test]
fn rectilinear_configurations_match_oracles() {
    for seed in 0..200u64 {
        let case = rectilinear_case(seed);
        let mp = assemble_relation(&relation(case.members.clone())).unwrap();
        if let Err(e) = case.check(&mp, seed, 1000) {
            panic!("seed {seed}: {e}");
        }
    }
}

#[test]
fn open_outer_chain_yields_empty_relation() {
    let m = Member {
        kind: ElementKind::Way,
        ref_id: 1,
        role: "outer".into(),
        geometry: vec![(0.0, 0.0), (1.0, 0.0), (1.0, 1.0)],
    };
    assert!(matches!(
        assemble_relation(&relation(vec![m])),
        Err(OsmError::EmptyRelation(7))
    ));
}

#[test]
fn bow_tie_is_flagged_but_kept() {
    let m = Member {
        kind: ElementKind::Way,
        ref_id: 1,
        role: "outer".into(),
        geometry: vec![(0.0, 0.0), (4.0, 2.0), (4.0, 0.0), (0.0, 3.0), (0.0, 0.0)],
    };
    let mp = assemble_relation(&relation(vec![m])).unwrap();
    assert!(mp.self_intersecting);
    assert_eq!(mp.polygons.len(), 1);
}

#[test]
fn cuba_fixture_assembles_four_provinces() {
    let elements =
        parse_overpass_json(&read(http_fixtures().join("overpass_cuba_post.body"))).unwrap();
    assert_eq!(elements.len(), 4);
    let shapes: Vec<(String, usize, usize)> = elements
        .iter()
        .map(|e| {
            let mp = assemble_relation(e).unwrap();
            let holes = mp.polygons.iter().map(|p| p.holes.len()).sum();
            (
                flatten_tags(e)["ISO3166-2"].clone(),
                mp.polygons.len(),
                holes,
            )
        })
        .collect();
    assert_eq!(
        shapes,
        [
            ("CU-01".to_string(), 1, 0),
            ("CU-15".to_string(), 1, 0),
            ("CU-03".to_string(), 1, 1),
            ("CU-99".to_string(), 2, 0),
        ]
    );
}

#[test]
fn parse_rejects_malformed_documents() {
    assert!(matches!(
        parse_overpass_json("{}"),
        Err(OsmError::ParseError(_))
    ));
    assert!(matches!(
        parse_overpass_json("not json"),
        Err(OsmError::ParseError(_))
    ));
    let bad_node =
        r#"{"elements": [{"type": "way", "id": 1, "geometry": [{"lat": 1, "lon": 2}]}]}"#;
    assert!(matches!(
        parse_overpass_json(bad_node),
        Err(OsmError::ParseError(_))
    ));
    assert!(parse_overpass_json(r#"{"elements": []}"#)
        .unwrap()
        .is_empty());
}

#[test]
fn list_tags_flatten_with_comma() {
    let doc = r#"{"elements": [{"type": "node", "id": 5, "lat": 1.0, "lon": 2.0,
        "tags": {"name": "A", "cuisine": ["pizza", "kebab"], "geometry": "x"}}]}"#;
    let el = &parse_overpass_json(doc).unwrap()[0];
    assert_eq!(el.geometry, Some(vec![(2.0, 1.0)]));
    let tags = flatten_tags(el);
    assert_eq!(tags["cuisine"], "pizza, kebab");
    assert!(!tags.contains_key("geometry"));
    assert!(matches!(
        write_geojson(&[], std::path::Path::new("/tmp/x")),
        Err(OsmError::NoFeatures)
    ));
}
