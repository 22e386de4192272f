#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use geodata::llm::{Cassette, ChatModel, LlmError};
use geodata::osm::{ElementKind, Member, OsmElement, Point};
use geodata::prompting::{build_fetch_prompt, build_selection_prompt, RenderedPrompt};
use geodata::registry::Registry;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CUBA_REQUEST: &str = "1. Download all province boundaries of Cuba.\n\
2. Save the downloaded data as polygons in GeoJSON format at: cuba_provinces.geojson";
pub const CUBA_OUTPUT: &str = "cuba_provinces.geojson";

pub const CHINA_SELECTION_REQUEST: &str = "1. Download all province boundaries of China mainland.\n\
2. Save the downloaded data as polygons in GeoPackage format at: E:\\China_mainland_Province_boundary.gpkg";
pub const CHINA_FETCH_REQUEST: &str = "1. Download all province boundaries of China mainland.\n\
2. Save the downloaded data as polygons in GeoPackage format at: E:\\dwnloaded_data.gpkg";

pub fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn registry_root() -> PathBuf {
    crate_dir().join("../../registry")
}

pub fn fixtures() -> PathBuf {
    crate_dir().join("tests/fixtures")
}

pub fn http_fixtures() -> PathBuf {
    fixtures().join("http")
}

pub fn cuba_cassette() -> PathBuf {
    fixtures().join("cassettes/cuba_provinces.cassette")
}

pub fn read(path: impl AsRef<Path>) -> String {
    let path = path.as_ref();
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Copies a directory tree.
pub fn copy_tree(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_tree(&entry.path(), &target);
        } else {
            std::fs::copy(entry.path(), target).unwrap();
        }
    }
}

/// Golden sections stored as `NN-label.txt`, in file-name order.
pub fn golden_sections(dir: &Path) -> Vec<(String, String)> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    files.sort();
    files
        .iter()
        .map(|p| {
            let stem = p.file_stem().unwrap().to_str().unwrap();
            let label = stem.split_once('-').unwrap().1.to_string();
            (label, read(p))
        })
        .collect()
}

/// Replies from a fixed script, in order; every prompt is kept.
pub struct ScriptedModel {
    replies: Mutex<Vec<Result<String, LlmError>>>,
    pub prompts: Mutex<Vec<RenderedPrompt>>,
    fallback: Option<String>,
}

impl ScriptedModel {
    pub fn new(replies: Vec<&str>) -> Self {
        Self {
            replies: Mutex::new(
                replies
                    .into_iter()
                    .rev()
                    .map(|s| Ok(s.to_string()))
                    .collect(),
            ),
            prompts: Mutex::new(Vec::new()),
            fallback: None,
        }
    }

    /// After the script runs out, every further call gets `reply`.
    pub fn then_always(mut self, reply: &str) -> Self {
        self.fallback = Some(reply.to_string());
        self
    }

    pub fn with_results(replies: Vec<Result<String, LlmError>>) -> Self {
        Self {
            replies: Mutex::new(replies.into_iter().rev().collect()),
            prompts: Mutex::new(Vec::new()),
            fallback: None,
        }
    }

    pub fn prompts(&self) -> Vec<RenderedPrompt> {
        self.prompts.lock().unwrap().clone()
    }
}

impl ChatModel for ScriptedModel {
    fn complete(&self, prompt: &RenderedPrompt) -> Result<String, LlmError> {
        self.prompts.lock().unwrap().push(prompt.clone());
        match self.replies.lock().unwrap().pop() {
            Some(r) => r,
            None => self
                .fallback
                .clone()
                .ok_or_else(|| LlmError::TransportError("script exhausted".into())),
        }
    }
}

pub fn selection_reply(display_name: &str) -> String {
    format!("{{'Explanation': \"scripted\", \"Selected data source\": '{display_name}'}}")
}

pub fn fenced(program: &str) -> String {
    format!("```python\n{program}```\n")
}

pub fn python_available() -> bool {
    std::process::Command::new("python3")
        .arg("-c")
        .arg("import requests, shapely")
        .output()
        .is_ok_and(|o| o.status.success())
}

/// Builds the Cuba cassette: the selection exchange and the fetch exchange
/// whose reply carries the reference program adapted to write GeoJSON.
pub fn build_cuba_cassette(registry: &Registry) -> Cassette {
    let replies = fixtures().join("replies");
    let selection =
        build_selection_prompt(CUBA_REQUEST, &registry.render_index().unwrap()).unwrap();
    let fetch = build_fetch_prompt(
        CUBA_REQUEST,
        "OpenStreetMap",
        registry.resolve_handbook("OpenStreetMap").unwrap(),
    )
    .unwrap();
    let mut cassette = Cassette::default();
    cassette.push(
        selection.full_text(),
        &read(replies.join("cuba_selection.txt")),
        1.8,
    );
    cassette.push(
        fetch.full_text(),
        &read(replies.join("cuba_fetch.md")),
        21.4,
    );
    cassette
}

// Geometry oracles, written from the textbook definitions and independent
// of the library's winding-number and shoelace code.

/// Even-odd ray casting over any number of closed rings.
pub fn even_odd_inside(rings: &[&[Point]], (px, py): Point) -> bool {
    let mut inside = false;
    for ring in rings {
        let n = ring.len() - 1;
        let mut j = n - 1;
        for i in 0..n {
            let (xi, yi) = ring[i];
            let (xj, yj) = ring[j];
            if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
                inside = !inside;
            }
            j = i;
        }
    }
    inside
}

/// Signed shoelace area of a closed ring.
pub fn polygon_area(ring: &[Point]) -> f64 {
    let mut s = 0.0;
    for i in 0..ring.len() - 1 {
        s += ring[i].0 * ring[i + 1].1 - ring[i + 1].0 * ring[i].1;
    }
    s / 2.0
}

pub fn distance_to_ring(ring: &[Point], (px, py): Point) -> f64 {
    ring.windows(2)
        .map(|w| {
            let ((ax, ay), (bx, by)) = (w[0], w[1]);
            let (dx, dy) = (bx - ax, by - ay);
            let t = (((px - ax) * dx + (py - ay) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
            ((ax + t * dx - px).powi(2) + (ay + t * dy - py).powi(2)).sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn relation(members: Vec<Member>) -> OsmElement {
    OsmElement {
        id: 7,
        kind: ElementKind::Relation,
        tags: std::collections::BTreeMap::new(),
        geometry: None,
        members: Some(members),
    }
}

/// Cuts a closed ring into `ways` open ways (2..=5) at distinct vertices,
/// inserting edge midpoints first when the ring has too few vertices.
/// Ways are randomly reversed.
pub fn split_ring(rng: &mut ChaCha8Rng, ring: &[Point], ways: usize, role: &str) -> Vec<Member> {
    let mut pts: Vec<Point> = ring[..ring.len() - 1].to_vec();
    while pts.len() < ways {
        let i = rng.gen_range(0..pts.len());
        let (a, b) = (pts[i], pts[(i + 1) % pts.len()]);
        pts.insert(i + 1, ((a.0 + b.0) / 2.0, (a.1 + b.1) / 2.0));
    }
    let n = pts.len();
    let mut cuts: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        cuts.swap(i, rng.gen_range(0..=i));
    }
    cuts.truncate(ways);
    cuts.sort_unstable();
    (0..ways)
        .map(|k| {
            let (from, to) = (
                cuts[k],
                if k + 1 < ways {
                    cuts[k + 1]
                } else {
                    cuts[0] + n
                },
            );
            let mut geometry: Vec<Point> = (from..=to).map(|i| pts[i % n]).collect();
            if rng.gen_bool(0.5) {
                geometry.reverse();
            }
            Member {
                kind: ElementKind::Way,
                ref_id: 0,
                role: role.into(),
                geometry,
            }
        })
        .collect()
}

/// A randomized rectilinear configuration: one to three disjoint staircase
/// outer rings, each with zero or more rectangular holes, every ring split
/// into 2..=5 ways, all ways shuffled together.
pub struct RectilinearCase {
    pub outers: Vec<Vec<Point>>,
    pub holes: Vec<Vec<Point>>,
    pub members: Vec<Member>,
    pub extent: (f64, f64, f64, f64),
}

pub fn rectilinear_case(seed: u64) -> RectilinearCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut outers = Vec::new();
    let mut holes = Vec::new();
    let mut members = Vec::new();
    let mut x_end = 0.0;
    for k in 0..rng.gen_range(1..=3) {
        let x0 = k as f64 * 40.0;
        let cols = rng.gen_range(1..=4);
        let mut xs = vec![x0];
        let mut hs: Vec<f64> = Vec::new();
        for c in 0..cols {
            xs.push(xs[c] + rng.gen_range(2..=6) as f64);
            let mut h = rng.gen_range(4..=10) as f64;
            while hs.last() == Some(&h) {
                h = rng.gen_range(4..=10) as f64;
            }
            hs.push(h);
        }
        // Counter-clockwise: along the bottom, then the stairs right to left.
        let mut ring = vec![(xs[0], 0.0), (xs[cols], 0.0)];
        for c in (0..cols).rev() {
            ring.push((xs[c + 1], hs[c]));
            ring.push((xs[c], hs[c]));
        }
        ring.push(ring[0]);
        if rng.gen_bool(0.5) {
            ring.reverse();
        }
        let ways = rng.gen_range(2..=5);
        members.extend(split_ring(&mut rng, &ring, ways, "outer"));
        for c in 0..cols {
            if !rng.gen_bool(0.6) {
                continue;
            }
            let (l, r) = (
                xs[c] + rng.gen_range(0.3..0.9),
                xs[c + 1] - rng.gen_range(0.3..0.9),
            );
            let (b, t) = (rng.gen_range(0.3..1.5), hs[c] - rng.gen_range(0.3..1.5));
            let mut hole = vec![(l, b), (l, t), (r, t), (r, b), (l, b)];
            if rng.gen_bool(0.5) {
                hole.reverse();
            }
            let ways = rng.gen_range(2..=5);
            members.extend(split_ring(&mut rng, &hole, ways, "inner"));
            holes.push(hole);
        }
        x_end = xs[cols];
        outers.push(ring);
    }
    for i in (1..members.len()).rev() {
        members.swap(i, rng.gen_range(0..=i));
    }
    RectilinearCase {
        outers,
        holes,
        members,
        extent: (-1.0, -1.0, x_end + 1.0, 11.0),
    }
}

impl RectilinearCase {
    pub fn expected_area(&self) -> f64 {
        self.outers
            .iter()
            .map(|r| polygon_area(r).abs())
            .sum::<f64>()
            - self
                .holes
                .iter()
                .map(|r| polygon_area(r).abs())
                .sum::<f64>()
    }

    pub fn oracle_contains(&self, p: Point) -> bool {
        let rings: Vec<&[Point]> = self
            .outers
            .iter()
            .chain(&self.holes)
            .map(Vec::as_slice)
            .collect();
        even_odd_inside(&rings, p)
    }

    pub fn near_boundary(&self, p: Point) -> bool {
        self.outers
            .iter()
            .chain(&self.holes)
            .any(|r| distance_to_ring(r, p) < 1e-9)
    }

    /// Checks area additivity and `points` membership samples against the
    /// oracles. Returns a description of the first disagreement.
    pub fn check(
        &self,
        mp: &geodata::osm::MultiPolygonGeom,
        seed: u64,
        points: usize,
    ) -> Result<(), String> {
        if mp.polygons.len() != self.outers.len() {
            return Err(format!(
                "{} polygons, expected {}",
                mp.polygons.len(),
                self.outers.len()
            ));
        }
        let holes: usize = mp.polygons.iter().map(|p| p.holes.len()).sum();
        if holes != self.holes.len() {
            return Err(format!("{holes} holes, expected {}", self.holes.len()));
        }
        let expected = self.expected_area();
        if ((mp.area() - expected) / expected).abs() > 1e-9 {
            return Err(format!("area {} vs {expected}", mp.area()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let (x0, y0, x1, y1) = self.extent;
        let mut checked = 0;
        while checked < points {
            let p = (rng.gen_range(x0..x1), rng.gen_range(y0..y1));
            if self.near_boundary(p) {
                continue;
            }
            if mp.contains(p) != self.oracle_contains(p) {
                return Err(format!("membership disagrees at {p:?}"));
            }
            checked += 1;
        }
        Ok(())
    }
}

/// A local chat-completions endpoint answering every prompt with
/// `reply(prompt)`. Each prompt it receives is kept, in order.
pub struct ChatServer {
    pub url: String,
    pub prompts: std::sync::Arc<Mutex<Vec<String>>>,
}

pub fn chat_server(reply: impl Fn(&str) -> String + Send + 'static) -> ChatServer {
    use std::io::{BufRead, BufReader, Read, Write};
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!(
        "http://{}/v1/chat/completions",
        listener.local_addr().unwrap()
    );
    let prompts = std::sync::Arc::new(Mutex::new(Vec::new()));
    let seen = prompts.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap_or(0);
                }
            }
            let mut body = vec![0; len];
            if reader.read_exact(&mut body).is_err() {
                continue;
            }
            let req: serde_json::Value = serde_json::from_slice(&body).unwrap_or_default();
            let prompt = req["messages"][0]["content"]
                .as_str()
                .unwrap_or_default()
                .to_string();
            let content = reply(&prompt);
            seen.lock().unwrap().push(prompt);
            let payload = serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string();
            let _ = write!(
                stream,
                "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{payload}",
                payload.len()
            );
        }
    });
    ChatServer { url, prompts }
}

pub fn geodata_cli() -> std::process::Command {
    std::process::Command::new(env!("CARGO_BIN_EXE_geodata"))
}
