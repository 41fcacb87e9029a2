//! Synthetic navigation worlds: viewpoints on a plane, navigability edges,
//! panoramic view features, candidate actions and shortest paths.

use std::collections::BinaryHeap;
use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lang::{self, Instruction, LangConfig, Vocabulary};

pub const WORLD_MAGIC: &[u8; 6] = b"ASKW1\n";
/// 12 headings x 3 elevation bands.
pub const VIEW_SLOTS: usize = 36;
pub const HEADINGS: usize = 12;
/// Elevation at the centre of each band, bottom to top.
pub const BAND_ELEVATIONS: [f64; 3] = [-PI / 6.0, 0.0, PI / 6.0];
/// The planar worlds only populate the middle band.
pub const GROUND_BAND: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// Jittered square grid, edges sampled among nearby pairs.
    Grid,
    /// Points on the x axis `spacing` apart, each joined to the next.
    Line,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub num_viewpoints: usize,
    pub layout: Layout,
    /// Grid pitch in meters; also fixes the area extent.
    pub spacing: f64,
    /// Uniform positional jitter in meters, per axis.
    pub jitter: f64,
    /// Only pairs closer than this may be joined.
    pub connect_radius: f64,
    pub mean_degree: f64,
    pub landmark_classes: usize,
    /// Probability a viewpoint reuses a landmark already present within
    /// two hops, which makes sibling moves visually ambiguous.
    pub duplicate_rate: f64,
    pub vis_dim: usize,
    /// Seed of the landmark prototypes shared by all worlds.
    pub prototype_seed: u64,
    /// Per-world perturbation of the prototypes, so unseen houses look
    /// somewhat different from training houses.
    pub appearance_noise: f64,
    pub max_retries: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            num_viewpoints: 100,
            layout: Layout::Grid,
            spacing: 3.0,
            jitter: 0.6,
            connect_radius: 4.6,
            mean_degree: 3.4,
            landmark_classes: 24,
            duplicate_rate: 0.3,
            vis_dim: 32,
            prototype_seed: 0x5eed,
            appearance_noise: 0.5,
            max_retries: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Viewpoint {
    pub id: usize,
    pub position: [f64; 3],
    pub landmark: usize,
}

/// Immutable once generated.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldGraph {
    pub seed: u64,
    pub config: WorldConfig,
    viewpoints: Vec<Viewpoint>,
    /// Sorted by neighbour id; (neighbour, length in meters).
    adjacency: Vec<Vec<(usize, f64)>>,
    landmark_embeddings: Vec<Vec<f32>>,
    /// `hop_dist[t][v]`: shortest-path length from `v` to `t`.
    hop_dist: Vec<Vec<f64>>,
}

/// Panoramic observation: one row per view slot, `vis ++ [sinθ, cosθ, sinφ, cosφ]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewFeature {
    pub rows: Vec<Vec<f32>>,
    pub headings: Vec<f64>,
    pub elevations: Vec<f64>,
    /// Viewpoint shown in each slot, if any.
    pub occupant: Vec<Option<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Move {
    pub dest: usize,
    pub heading: f64,
    pub feature: Vec<f32>,
}

/// Candidate moves ordered by heading then id; stop is implicitly last.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionSet {
    pub moves: Vec<Move>,
    pub feature_dim: usize,
}

impl ActionSet {
    /// Number of actions including stop.
    pub fn len(&self) -> usize {
        self.moves.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn stop_index(&self) -> usize {
        self.moves.len()
    }

    /// Feature of action `k`; the stop action is all zeros.
    pub fn feature(&self, k: usize) -> Vec<f32> {
        match self.moves.get(k) {
            Some(m) => m.feature.clone(),
            None => vec![0.0; self.feature_dim],
        }
    }

    /// Index of the move leading to `dest`.
    pub fn index_of(&self, dest: usize) -> Option<usize> {
        self.moves.iter().position(|m| m.dest == dest)
    }
}

/// One instruction-following task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub world_seed: u64,
    pub start: usize,
    pub target: usize,
    pub gt_trajectory: Vec<usize>,
    pub instruction: Instruction,
    pub episode_seed: u64,
}

impl Episode {
    pub fn path_edges(&self) -> usize {
        self.gt_trajectory.len().saturating_sub(1)
    }
}

fn wrap_angle(a: f64) -> f64 {
    a.rem_euclid(2.0 * PI)
}

pub(crate) fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; avoids pulling in a distributions crate for one draw.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut y = x;
        while self.0[y] != r {
            let next = self.0[y];
            self.0[y] = r;
            y = next;
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.0[ra.max(rb)] = ra.min(rb);
        true
    }
}

#[derive(PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        other
            .0
            .total_cmp(&self.0)
            .then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

fn dijkstra(adjacency: &[Vec<(usize, f64)>], source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; adjacency.len()];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(HeapItem(0.0, source));
    while let Some(HeapItem(d, v)) = heap.pop() {
        if d > dist[v] {
            continue;
        }
        for &(u, w) in &adjacency[v] {
            let nd = d + w;
            if nd < dist[u] {
                dist[u] = nd;
                heap.push(HeapItem(nd, u));
            }
        }
    }
    dist
}

/// Landmark prototypes shared by every world built with `config`.
fn prototypes(config: &WorldConfig) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.prototype_seed);
    (0..config.landmark_classes)
        .map(|_| (0..config.vis_dim).map(|_| standard_normal(&mut rng)).collect())
        .collect()
}

fn normalize(v: &[f64]) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.iter().map(|x| (x / n) as f32).collect()
}

/// Builds a connected world deterministically from `(config, seed)`.
pub fn generate_world(config: &WorldConfig, seed: u64) -> Result<WorldGraph> {
    let n = config.num_viewpoints;
    if n < 4 {
        return Err(Error::Config(format!("world needs at least 4 viewpoints, got {n}")));
    }
    if config.landmark_classes == 0 || config.vis_dim == 0 {
        return Err(Error::Config("landmark_classes and vis_dim must be positive".into()));
    }
    if !(0.0..=1.0).contains(&config.duplicate_rate) {
        return Err(Error::Config("duplicate_rate must lie in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    for _attempt in 0..config.max_retries.max(1) {
        let positions: Vec<[f64; 3]> = match config.layout {
            Layout::Line => (0..n)
                .map(|i| [i as f64 * config.spacing, 0.0, 0.0])
                .collect(),
            Layout::Grid => {
                let cols = (n as f64).sqrt().ceil() as usize;
                (0..n)
                    .map(|i| {
                        let (r, c) = (i / cols, i % cols);
                        let jx = rng.gen_range(-1.0..=1.0) * config.jitter;
                        let jy = rng.gen_range(-1.0..=1.0) * config.jitter;
                        [c as f64 * config.spacing + jx, r as f64 * config.spacing + jy, 0.0]
                    })
                    .collect()
            }
        };
        let dist = |a: usize, b: usize| -> f64 {
            let (p, q) = (positions[a], positions[b]);
            ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
        };

        let mut candidates: Vec<(usize, usize)> = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                let near = match config.layout {
                    Layout::Line => b == a + 1,
                    Layout::Grid => dist(a, b) <= config.connect_radius,
                };
                if near {
                    candidates.push((a, b));
                }
            }
        }
        candidates.shuffle(&mut rng);

        let mut uf = UnionFind((0..n).collect());
        let mut chosen = vec![false; candidates.len()];
        let mut edges = 0usize;
        for (k, &(a, b)) in candidates.iter().enumerate() {
            if uf.union(a, b) {
                chosen[k] = true;
                edges += 1;
            }
        }
        if edges != n - 1 {
            continue;
        }
        let wanted = ((config.mean_degree * n as f64) / 2.0).round() as usize;
        for c in chosen.iter_mut() {
            if edges >= wanted {
                break;
            }
            if !*c {
                *c = true;
                edges += 1;
            }
        }

        let mut adjacency: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (k, &(a, b)) in candidates.iter().enumerate() {
            if chosen[k] {
                let d = dist(a, b);
                adjacency[a].push((b, d));
                adjacency[b].push((a, d));
            }
        }
        for adj in &mut adjacency {
            adj.sort_by_key(|&(u, _)| u);
        }

        let landmarks = assign_landmarks(&adjacency, config, &mut rng);
        let protos = prototypes(config);
        let scale = config.appearance_noise / (config.vis_dim as f64).sqrt();
        let landmark_embeddings = protos
            .iter()
            .map(|p| {
                let v: Vec<f64> = p
                    .iter()
                    .map(|x| x / (config.vis_dim as f64).sqrt() + scale * standard_normal(&mut rng))
                    .collect();
                normalize(&v)
            })
            .collect();

        let viewpoints = positions
            .into_iter()
            .zip(landmarks)
            .enumerate()
            .map(|(id, (position, landmark))| Viewpoint {
                id,
                position,
                landmark,
            })
            .collect();
        return WorldGraph::assemble(seed, config.clone(), viewpoints, adjacency, landmark_embeddings);
    }
    Err(Error::Data(format!(
        "could not build a connected world after {} attempts",
        config.max_retries
    )))
}

fn assign_landmarks(
    adjacency: &[Vec<(usize, f64)>],
    config: &WorldConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let n = adjacency.len();
    let mut out: Vec<Option<usize>> = vec![None; n];
    for v in 0..n {
        let mut near: Vec<usize> = Vec::new();
        for &(u, _) in &adjacency[v] {
            near.push(u);
            near.extend(adjacency[u].iter().map(|&(w, _)| w));
        }
        let mut used: Vec<usize> = near.iter().filter_map(|&u| out[u]).collect();
        used.sort_unstable();
        used.dedup();
        let free: Vec<usize> = (0..config.landmark_classes)
            .filter(|c| used.binary_search(c).is_err())
            .collect();
        let dup = rng.gen::<f64>() < config.duplicate_rate;
        let pick = if dup && !used.is_empty() {
            used[rng.gen_range(0..used.len())]
        } else if !free.is_empty() {
            free[rng.gen_range(0..free.len())]
        } else {
            rng.gen_range(0..config.landmark_classes)
        };
        out[v] = Some(pick);
    }
    out.into_iter().map(|c| c.expect("assigned")).collect()
}

#[derive(Serialize, Deserialize)]
struct WorldFile {
    version: u32,
    seed: u64,
    config: WorldConfig,
    positions: Vec<[f64; 3]>,
    landmarks: Vec<usize>,
    edges: Vec<(usize, usize, f64)>,
    landmark_embeddings: Vec<Vec<f32>>,
}

impl WorldGraph {
    fn assemble(
        seed: u64,
        config: WorldConfig,
        viewpoints: Vec<Viewpoint>,
        adjacency: Vec<Vec<(usize, f64)>>,
        landmark_embeddings: Vec<Vec<f32>>,
    ) -> Result<Self> {
        let hop_dist: Vec<Vec<f64>> = (0..viewpoints.len())
            .map(|t| dijkstra(&adjacency, t))
            .collect();
        Ok(Self {
            seed,
            config,
            viewpoints,
            adjacency,
            landmark_embeddings,
            hop_dist,
        })
    }

    pub fn len(&self) -> usize {
        self.viewpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.viewpoints.is_empty()
    }

    pub fn viewpoints(&self) -> &[Viewpoint] {
        &self.viewpoints
    }

    pub fn viewpoint(&self, id: usize) -> Result<&Viewpoint> {
        self.viewpoints.get(id).ok_or(Error::Index {
            op: "viewpoint",
            index: id,
            len: self.viewpoints.len(),
        })
    }

    pub fn neighbors(&self, id: usize) -> &[(usize, f64)] {
        &self.adjacency[id]
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn landmark_embedding(&self, class: usize) -> &[f32] {
        &self.landmark_embeddings[class]
    }

    pub fn landmark_embeddings(&self) -> &[Vec<f32>] {
        &self.landmark_embeddings
    }

    pub fn vis_dim(&self) -> usize {
        self.config.vis_dim
    }

    /// Width of a view-slot or action feature.
    pub fn feature_dim(&self) -> usize {
        self.config.vis_dim + 4
    }

    /// Euclidean distance between two viewpoints, in meters.
    pub fn distance(&self, a: usize, b: usize) -> Result<f64> {
        let (p, q) = (self.viewpoint(a)?.position, self.viewpoint(b)?.position);
        Ok(((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt())
    }

    /// Bearing from `a` to `b` in `[0, 2π)`, counter-clockwise from +x.
    pub fn heading(&self, a: usize, b: usize) -> f64 {
        let (p, q) = (self.viewpoints[a].position, self.viewpoints[b].position);
        wrap_angle((q[1] - p[1]).atan2(q[0] - p[0]))
    }

    fn elevation(&self, a: usize, b: usize) -> f64 {
        let (p, q) = (self.viewpoints[a].position, self.viewpoints[b].position);
        let flat = ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt();
        (q[2] - p[2]).atan2(flat)
    }

    /// Length of the shortest path from `from` to `to`.
    pub fn path_distance(&self, from: usize, to: usize) -> Result<f64> {
        self.viewpoint(from)?;
        self.viewpoint(to)?;
        let d = self.hop_dist[to][from];
        if d.is_finite() {
            Ok(d)
        } else {
            Err(Error::Unreachable { from, to })
        }
    }

    /// First hop of the shortest path; ties go to the smallest id.
    pub fn next_hop(&self, from: usize, to: usize) -> Result<usize> {
        let dist = &self.hop_dist[to];
        if !dist[from].is_finite() {
            return Err(Error::Unreachable { from, to });
        }
        self.adjacency[from]
            .iter()
            .find(|&&(u, w)| (w + dist[u] - dist[from]).abs() <= 1e-9)
            .map(|&(u, _)| u)
            .ok_or(Error::Unreachable { from, to })
    }

    /// Minimum-length path, lexicographically smallest among ties.
    pub fn shortest_path(&self, from: usize, to: usize) -> Result<Vec<usize>> {
        self.viewpoint(from)?;
        self.viewpoint(to)?;
        let mut path = vec![from];
        let mut cur = from;
        while cur != to {
            cur = self.next_hop(cur, to)?;
            path.push(cur);
            if path.len() > self.len() {
                return Err(Error::Unreachable { from, to });
            }
        }
        Ok(path)
    }

    pub fn path_length(&self, path: &[usize]) -> Result<f64> {
        path.windows(2)
            .map(|w| {
                self.adjacency[w[0]]
                    .iter()
                    .find(|&&(u, _)| u == w[1])
                    .map(|&(_, d)| d)
                    .ok_or_else(|| Error::Data(format!("{} and {} are not adjacent", w[0], w[1])))
            })
            .sum()
    }

    fn slot_heading(h: usize) -> f64 {
        h as f64 * 2.0 * PI / HEADINGS as f64
    }

    fn sector_of(heading: f64) -> usize {
        let step = 2.0 * PI / HEADINGS as f64;
        ((wrap_angle(heading) / step).round() as usize) % HEADINGS
    }

    /// 36-slot panoramic feature at `at`.
    pub fn view_features(&self, at: usize) -> Result<ViewFeature> {
        self.viewpoint(at)?;
        let d = self.vis_dim();
        let mut nearest: [Option<(f64, usize)>; HEADINGS] = [None; HEADINGS];
        for &(u, len) in &self.adjacency[at] {
            let s = Self::sector_of(self.heading(at, u));
            let better = match nearest[s] {
                None => true,
                Some((bd, bu)) => len < bd || (len == bd && u < bu),
            };
            if better {
                nearest[s] = Some((len, u));
            }
        }
        let mut view = ViewFeature {
            rows: Vec::with_capacity(VIEW_SLOTS),
            headings: Vec::with_capacity(VIEW_SLOTS),
            elevations: Vec::with_capacity(VIEW_SLOTS),
            occupant: Vec::with_capacity(VIEW_SLOTS),
        };
        for (band, &phi) in BAND_ELEVATIONS.iter().enumerate() {
            for h in 0..HEADINGS {
                let theta = Self::slot_heading(h);
                let occupant = if band == GROUND_BAND {
                    nearest[h].map(|(_, u)| u)
                } else {
                    None
                };
                let mut row = match occupant {
                    Some(u) => self.landmark_embeddings[self.viewpoints[u].landmark].clone(),
                    None => vec![0.0; d],
                };
                row.extend([
                    theta.sin() as f32,
                    theta.cos() as f32,
                    phi.sin() as f32,
                    phi.cos() as f32,
                ]);
                view.rows.push(row);
                view.headings.push(theta);
                view.elevations.push(phi);
                view.occupant.push(occupant);
            }
        }
        Ok(view)
    }

    /// One move per neighbour sorted by heading then id; stop is implied last.
    pub fn navigable_actions(&self, at: usize) -> Result<ActionSet> {
        self.viewpoint(at)?;
        let mut moves: Vec<Move> = self.adjacency[at]
            .iter()
            .map(|&(u, _)| {
                let theta = self.heading(at, u);
                let phi = self.elevation(at, u);
                let mut feature = self.landmark_embeddings[self.viewpoints[u].landmark].clone();
                feature.extend([
                    theta.sin() as f32,
                    theta.cos() as f32,
                    phi.sin() as f32,
                    phi.cos() as f32,
                ]);
                Move {
                    dest: u,
                    heading: theta,
                    feature,
                }
            })
            .collect();
        moves.sort_by(|a, b| a.heading.total_cmp(&b.heading).then(a.dest.cmp(&b.dest)));
        Ok(ActionSet {
            moves,
            feature_dim: self.feature_dim(),
        })
    }

    /// Serialises to the `ASKW1` format.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut edges = Vec::with_capacity(self.edge_count());
        for (a, adj) in self.adjacency.iter().enumerate() {
            for &(b, d) in adj {
                if a < b {
                    edges.push((a, b, d));
                }
            }
        }
        let file = WorldFile {
            version: 1,
            seed: self.seed,
            config: self.config.clone(),
            positions: self.viewpoints.iter().map(|v| v.position).collect(),
            landmarks: self.viewpoints.iter().map(|v| v.landmark).collect(),
            edges,
            landmark_embeddings: self.landmark_embeddings.clone(),
        };
        let mut out = WORLD_MAGIC.to_vec();
        out.extend(serde_json::to_vec(&file)?);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let corrupt = |reason: String| Error::Corrupt {
            kind: "world",
            path: path.to_path_buf(),
            reason,
        };
        let body = bytes
            .strip_prefix(WORLD_MAGIC.as_slice())
            .ok_or_else(|| corrupt("missing ASKW1 header".into()))?;
        let file: WorldFile =
            serde_json::from_slice(body).map_err(|e| corrupt(format!("bad body: {e}")))?;
        let n = file.positions.len();
        if file.landmarks.len() != n {
            return Err(corrupt("landmark count differs from viewpoint count".into()));
        }
        let mut adjacency = vec![Vec::new(); n];
        for &(a, b, d) in &file.edges {
            if a >= n || b >= n || a == b {
                return Err(corrupt(format!("bad edge ({a}, {b})")));
            }
            adjacency[a].push((b, d));
            adjacency[b].push((a, d));
        }
        for adj in &mut adjacency {
            adj.sort_by_key(|&(u, _)| u);
        }
        if file.landmarks.iter().any(|&l| l >= file.landmark_embeddings.len()) {
            return Err(corrupt("landmark id outside embedding table".into()));
        }
        let viewpoints = file
            .positions
            .into_iter()
            .zip(file.landmarks)
            .enumerate()
            .map(|(id, (position, landmark))| Viewpoint {
                id,
                position,
                landmark,
            })
            .collect();
        Self::assemble(
            file.seed,
            file.config,
            viewpoints,
            adjacency,
            file.landmark_embeddings,
        )
    }

    /// Hand-built world: explicit positions, landmark classes and undirected
    /// edges (lengths are Euclidean). Landmark appearance follows `config`.
    pub fn from_layout(
        config: &WorldConfig,
        seed: u64,
        positions: Vec<[f64; 3]>,
        landmarks: Vec<usize>,
        edges: &[(usize, usize)],
    ) -> Result<Self> {
        let n = positions.len();
        if landmarks.len() != n {
            return Err(Error::Config("one landmark per viewpoint required".into()));
        }
        if landmarks.iter().any(|&l| l >= config.landmark_classes) {
            return Err(Error::Config("landmark class out of range".into()));
        }
        let mut adjacency = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n || a == b {
                return Err(Error::Config(format!("bad edge ({a}, {b})")));
            }
            let (p, q) = (positions[a], positions[b]);
            let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
            adjacency[a].push((b, d));
            adjacency[b].push((a, d));
        }
        for adj in &mut adjacency {
            adj.sort_by_key(|&(u, _)| u);
            adj.dedup_by_key(|e| e.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = config.appearance_noise / (config.vis_dim as f64).sqrt();
        let landmark_embeddings = prototypes(config)
            .iter()
            .map(|p| {
                let v: Vec<f64> = p
                    .iter()
                    .map(|x| x / (config.vis_dim as f64).sqrt() + scale * standard_normal(&mut rng))
                    .collect();
                normalize(&v)
            })
            .collect();
        let viewpoints = positions
            .into_iter()
            .zip(landmarks)
            .enumerate()
            .map(|(id, (position, landmark))| Viewpoint {
                id,
                position,
                landmark,
            })
            .collect();
        let w = Self::assemble(seed, config.clone(), viewpoints, adjacency, landmark_embeddings)?;
        if !w.is_connected() {
            return Err(Error::Config("hand-built world is not connected".into()));
        }
        Ok(w)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// True when every viewpoint can reach every other.
    pub fn is_connected(&self) -> bool {
        self.hop_dist[0].iter().all(|d| d.is_finite())
    }

    /// Number of edges on the shortest path.
    pub fn hop_count(&self, from: usize, to: usize) -> Result<usize> {
        Ok(self.shortest_path(from, to)?.len() - 1)
    }
}

/// Samples a start uniformly and a target whose shortest path has an edge
/// count in `len_range` (inclusive), then writes its instruction.
pub fn sample_episode(
    world: &WorldGraph,
    vocab: &Vocabulary,
    lang: &LangConfig,
    seed: u64,
    len_range: (usize, usize),
) -> Result<Episode> {
    let (lo, hi) = len_range;
    if lo == 0 || lo > hi || hi > 10 {
        return Err(Error::Config(format!(
            "episode length range [{lo}, {hi}] must lie within [1, 10]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..100 {
        let start = rng.gen_range(0..world.len());
        let mut admissible = Vec::new();
        for t in 0..world.len() {
            let h = world.hop_count(start, t)?;
            if (lo..=hi).contains(&h) {
                admissible.push(t);
            }
        }
        if admissible.is_empty() {
            continue;
        }
        let target = admissible[rng.gen_range(0..admissible.len())];
        let gt = world.shortest_path(start, target)?;
        let instruction = lang::generate_instruction(world, vocab, &gt, lang, rng.gen())?;
        return Ok(Episode {
            world_seed: world.seed,
            start,
            target,
            gt_trajectory: gt,
            instruction,
            episode_seed: seed,
        });
    }
    Err(Error::Data(format!(
        "no start/target pair with path length in [{lo}, {hi}] after 100 draws"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize) -> WorldGraph {
        let cfg = WorldConfig {
            num_viewpoints: n,
            layout: Layout::Line,
            ..WorldConfig::default()
        };
        generate_world(&cfg, 7).unwrap()
    }

    #[test]
    fn line_world_has_unit_spacing_edges() {
        let w = line(4);
        assert_eq!(w.len(), 4);
        assert_eq!(w.edge_count(), 3);
        for v in 0..3 {
            assert_eq!(w.neighbors(v).iter().find(|e| e.0 == v + 1).unwrap().1, 3.0);
        }
    }

    #[test]
    fn rejects_tiny_worlds() {
        let cfg = WorldConfig {
            num_viewpoints: 3,
            ..WorldConfig::default()
        };
        assert!(matches!(generate_world(&cfg, 1), Err(Error::Config(_))));
    }

    #[test]
    fn fails_when_connectivity_impossible() {
        let cfg = WorldConfig {
            connect_radius: 1.0,
            max_retries: 3,
            ..WorldConfig::default()
        };
        assert!(matches!(generate_world(&cfg, 1), Err(Error::Data(_))));
    }

    #[test]
    fn distance_basics() {
        let mut w = line(4);
        assert_eq!(w.distance(2, 2).unwrap(), 0.0);
        w.viewpoints[0].position = [0.0, 0.0, 0.0];
        w.viewpoints[1].position = [3.0, 4.0, 0.0];
        assert_eq!(w.distance(0, 1).unwrap(), 5.0);
        assert!(w.distance(0, 9).is_err());
    }

    #[test]
    fn shortest_path_trivial_cases() {
        let w = line(4);
        assert_eq!(w.shortest_path(1, 1).unwrap(), vec![1]);
        assert_eq!(w.shortest_path(0, 2).unwrap(), vec![0, 1, 2]);
        assert!(w.shortest_path(0, 5).is_err());
    }

    #[test]
    fn empty_sector_keeps_angles() {
        let w = line(4);
        let v = w.view_features(0).unwrap();
        assert_eq!(v.rows.len(), VIEW_SLOTS);
        // slot 12 + 0 is heading 0, middle band: neighbour 1 lies due east.
        let east = &v.rows[GROUND_BAND * HEADINGS];
        assert_eq!(&east[32..], &[0.0, 1.0, 0.0, 1.0]);
        assert!(east[..32].iter().any(|&x| x != 0.0));
        // heading π has nothing at viewpoint 0
        let west = &v.rows[GROUND_BAND * HEADINGS + 6];
        assert!(west[..32].iter().all(|&x| x == 0.0));
        assert!((west[33] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn action_counts_follow_degree() {
        let w = line(4);
        assert_eq!(w.navigable_actions(0).unwrap().len(), 2);
        assert_eq!(w.navigable_actions(1).unwrap().len(), 3);
        let a = w.navigable_actions(1).unwrap();
        assert_eq!(a.feature(a.stop_index()), vec![0.0; 36]);
    }

    #[test]
    fn episode_on_line_with_unit_range_is_adjacent() {
        let w = line(5);
        let vocab = Vocabulary::new(w.config.landmark_classes);
        let e = sample_episode(&w, &vocab, &LangConfig::default(), 3, (1, 1)).unwrap();
        assert_eq!(e.gt_trajectory.len(), 2);
        assert!(w.neighbors(e.start).iter().any(|n| n.0 == e.target));
        let again = sample_episode(&w, &vocab, &LangConfig::default(), 3, (1, 1)).unwrap();
        assert_eq!(e, again);
    }

    #[test]
    fn serialization_round_trip() {
        let w = generate_world(&WorldConfig::default(), 9).unwrap();
        let bytes = w.to_bytes().unwrap();
        let back = WorldGraph::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(w, back);
        assert!(WorldGraph::from_bytes(b"ASKW0\n{}", Path::new("mem")).is_err());
    }
}
