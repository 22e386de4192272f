//! Ring building from relation members.
//!
//! Boundary relations describe each ring as a sequence of ways that share
//! endpoints. Ways are merged at endpoints touched by exactly two ways,
//! closed chains become rings, and inner rings are attached as holes to
//! the outer ring that contains them.

use std::collections::HashMap;

use super::{ElementKind, OsmElement, OsmError, Point};

/// Rings with more vertices than this skip the self-intersection check.
const SIMPLICITY_CHECK_LIMIT: usize = 4000;

/// An ordered point list with at least two points.
#[derive(Debug, Clone, PartialEq)]
pub struct PathChain {
    pub points: Vec<Point>,
}

impl PathChain {
    pub fn new(points: Vec<Point>) -> Option<Self> {
        (points.len() >= 2).then_some(Self { points })
    }

    pub fn is_closed(&self) -> bool {
        self.points.first() == self.points.last()
    }

    fn start(&self) -> NodeKey {
        key(self.points[0])
    }

    fn end(&self) -> NodeKey {
        key(*self.points.last().expect("non-empty"))
    }
}

/// Closed point list, first point repeated at the end.
pub type Ring = Vec<Point>;

#[derive(Debug, Clone, PartialEq)]
pub struct PolygonGeom {
    pub outer: Ring,
    pub holes: Vec<Ring>,
}

impl PolygonGeom {
    pub fn area(&self) -> f64 {
        ring_area(&self.outer) - self.holes.iter().map(|h| ring_area(h)).sum::<f64>()
    }

    pub fn contains(&self, p: Point) -> bool {
        winding_number(&self.outer, p) != 0 && self.holes.iter().all(|h| winding_number(h, p) == 0)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MultiPolygonGeom {
    pub polygons: Vec<PolygonGeom>,
    /// Set when some ring crosses itself; the geometry is kept anyway.
    pub self_intersecting: bool,
}

impl MultiPolygonGeom {
    pub fn area(&self) -> f64 {
        self.polygons.iter().map(PolygonGeom::area).sum()
    }

    pub fn contains(&self, p: Point) -> bool {
        self.polygons.iter().any(|poly| poly.contains(p))
    }
}

type NodeKey = (u64, u64);

// Adding 0.0 folds -0.0 into 0.0 so both compare equal as bits.
fn key(p: Point) -> NodeKey {
    ((p.0 + 0.0).to_bits(), (p.1 + 0.0).to_bits())
}

/// Shoelace area with sign: positive for counter-clockwise rings.
pub fn signed_area(ring: &[Point]) -> f64 {
    if ring.len() < 3 {
        return 0.0;
    }
    let (x0, y0) = ring[0];
    let twice: f64 = ring
        .windows(2)
        .map(|w| (w[0].0 - x0) * (w[1].1 - y0) - (w[1].0 - x0) * (w[0].1 - y0))
        .sum();
    twice / 2.0
}

pub fn ring_area(ring: &[Point]) -> f64 {
    signed_area(ring).abs()
}

fn winding_number(ring: &[Point], p: Point) -> i32 {
    let mut wn = 0;
    for w in ring.windows(2) {
        let (a, b) = (w[0], w[1]);
        let cross = (b.0 - a.0) * (p.1 - a.1) - (p.0 - a.0) * (b.1 - a.1);
        if a.1 <= p.1 {
            if b.1 > p.1 && cross > 0.0 {
                wn += 1;
            }
        } else if b.1 <= p.1 && cross < 0.0 {
            wn -= 1;
        }
    }
    wn
}

/// Joins segments into maximal chains through endpoints shared by exactly
/// two segments. Closed input chains are returned as they are.
pub fn merge_lines(segments: Vec<PathChain>) -> Vec<PathChain> {
    let (closed, open): (Vec<_>, Vec<_>) = segments.into_iter().partition(PathChain::is_closed);
    let mut incident: HashMap<NodeKey, Vec<usize>> = HashMap::new();
    for (i, s) in open.iter().enumerate() {
        incident.entry(s.start()).or_default().push(i);
        incident.entry(s.end()).or_default().push(i);
    }
    let next_through = |node: NodeKey, from: usize, used: &[bool]| -> Option<usize> {
        let inc = &incident[&node];
        if inc.len() != 2 {
            return None;
        }
        let other = if inc[0] == from { inc[1] } else { inc[0] };
        (other != from && !used[other]).then_some(other)
    };

    let mut used = vec![false; open.len()];
    let mut merged = closed;
    for seed in 0..open.len() {
        if used[seed] {
            continue;
        }
        used[seed] = true;
        let mut points = open[seed].points.clone();

        let mut last = seed;
        while let Some(n) = next_through(key(*points.last().unwrap()), last, &used) {
            used[n] = true;
            let seg = &open[n].points;
            if key(seg[0]) == key(*points.last().unwrap()) {
                points.extend_from_slice(&seg[1..]);
            } else {
                points.extend(seg.iter().rev().skip(1));
            }
            last = n;
        }

        let mut first = seed;
        while let Some(n) = next_through(key(points[0]), first, &used) {
            used[n] = true;
            let seg = &open[n].points;
            let mut prefix: Vec<Point> = if key(*seg.last().unwrap()) == key(points[0]) {
                seg[..seg.len() - 1].to_vec()
            } else {
                seg.iter().rev().take(seg.len() - 1).copied().collect()
            };
            prefix.extend(points);
            points = prefix;
            first = n;
        }
        merged.push(PathChain { points });
    }
    merged
}

/// Turns closed chains into rings. Open chains are linked end to end where
/// that closes a cycle; chains that never close are dropped.
pub fn polygonize(chains: Vec<PathChain>) -> Vec<Ring> {
    let mut rings = Vec::new();
    let mut open = Vec::new();
    for c in chains {
        if c.is_closed() {
            rings.push(c.points);
        } else {
            open.push(c);
        }
    }

    let mut incident: HashMap<NodeKey, Vec<usize>> = HashMap::new();
    for (i, c) in open.iter().enumerate() {
        incident.entry(c.start()).or_default().push(i);
        incident.entry(c.end()).or_default().push(i);
    }
    let mut used = vec![false; open.len()];
    for seed in 0..open.len() {
        if used[seed] {
            continue;
        }
        used[seed] = true;
        let target = open[seed].start();
        let mut points = open[seed].points.clone();
        let mut path = vec![seed];
        loop {
            let end = key(*points.last().unwrap());
            if end == target {
                rings.push(points);
                break;
            }
            let candidates: Vec<usize> = incident[&end]
                .iter()
                .copied()
                .filter(|&i| !used[i])
                .collect();
            let closing = candidates.iter().copied().find(|&i| {
                let c = &open[i];
                (c.start() == end && c.end() == target) || (c.end() == end && c.start() == target)
            });
            let Some(n) = closing.or_else(|| candidates.first().copied()) else {
                // Dead end: release everything but the seed for later cycles.
                for &i in &path[1..] {
                    used[i] = false;
                }
                break;
            };
            used[n] = true;
            path.push(n);
            let seg = &open[n].points;
            if key(seg[0]) == end {
                points.extend_from_slice(&seg[1..]);
            } else {
                points.extend(seg.iter().rev().skip(1));
            }
        }
    }
    rings.retain(|r| r.len() >= 4 && signed_area(r) != 0.0);
    rings
}

fn oriented(mut ring: Ring, ccw: bool) -> Ring {
    if (signed_area(&ring) > 0.0) != ccw {
        ring.reverse();
    }
    ring
}

/// A point strictly inside `ring`: the midpoint of the widest interior span
/// on a horizontal line between two vertex heights.
pub(crate) fn interior_point(ring: &[Point]) -> Option<Point> {
    let mut ys: Vec<f64> = ring.iter().map(|p| p.1).collect();
    ys.sort_by(f64::total_cmp);
    ys.dedup();
    if ys.len() < 2 {
        return None;
    }
    let mid = ys.len() / 2;
    let y = (ys[mid - 1] + ys[mid]) / 2.0;
    let mut xs: Vec<f64> = ring
        .windows(2)
        .filter(|w| (w[0].1 > y) != (w[1].1 > y))
        .map(|w| w[0].0 + (y - w[0].1) * (w[1].0 - w[0].0) / (w[1].1 - w[0].1))
        .collect();
    xs.sort_by(f64::total_cmp);
    xs.chunks_exact(2)
        .max_by(|a, b| (a[1] - a[0]).total_cmp(&(b[1] - b[0])))
        .map(|pair| ((pair[0] + pair[1]) / 2.0, y))
}

fn segments_cross(a: Point, b: Point, c: Point, d: Point) -> bool {
    let orient =
        |p: Point, q: Point, r: Point| (q.0 - p.0) * (r.1 - p.1) - (q.1 - p.1) * (r.0 - p.0);
    let (d1, d2) = (orient(c, d, a), orient(c, d, b));
    let (d3, d4) = (orient(a, b, c), orient(a, b, d));
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

fn is_simple(ring: &[Point]) -> bool {
    let n = ring.len() - 1;
    if n > SIMPLICITY_CHECK_LIMIT {
        return true;
    }
    for i in 0..n {
        for j in i + 2..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            if segments_cross(ring[i], ring[i + 1], ring[j], ring[j + 1]) {
                return false;
            }
        }
    }
    true
}

fn rings_for_role(element: &OsmElement, role: &str) -> Vec<Ring> {
    let segments = element
        .members
        .iter()
        .flatten()
        .filter(|m| m.kind == ElementKind::Way && m.role == role)
        .filter_map(|m| PathChain::new(m.geometry.clone()))
        .collect();
    polygonize(merge_lines(segments))
}

/// Builds the multipolygon of a boundary relation from its `outer` and
/// `inner` way members. Each inner ring becomes a hole of the smallest
/// outer ring containing one of its interior points; inner rings inside no
/// outer ring are discarded.
pub fn assemble_relation(element: &OsmElement) -> Result<MultiPolygonGeom, OsmError> {
    if element.kind != ElementKind::Relation {
        return Err(OsmError::NotARelation(element.id));
    }
    let outers = rings_for_role(element, "outer");
    if outers.is_empty() {
        return Err(OsmError::EmptyRelation(element.id));
    }
    let inners = rings_for_role(element, "inner");

    let mut polygons: Vec<PolygonGeom> = outers
        .into_iter()
        .map(|r| PolygonGeom {
            outer: oriented(r, true),
            holes: Vec::new(),
        })
        .collect();
    for inner in inners {
        let Some(probe) = interior_point(&inner) else {
            continue;
        };
        let host = polygons
            .iter_mut()
            .filter(|p| winding_number(&p.outer, probe) != 0)
            .min_by(|a, b| ring_area(&a.outer).total_cmp(&ring_area(&b.outer)));
        match host {
            Some(p) => p.holes.push(oriented(inner, false)),
            None => log::debug!(
                "relation {}: inner ring outside every outer ring",
                element.id
            ),
        }
    }
    let self_intersecting = polygons
        .iter()
        .flat_map(|p| std::iter::once(&p.outer).chain(&p.holes))
        .any(|r| !is_simple(r));
    if self_intersecting {
        log::warn!("relation {} has a self-intersecting ring", element.id);
    }
    Ok(MultiPolygonGeom {
        polygons,
        self_intersecting,
    })
}
