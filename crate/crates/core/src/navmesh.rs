//! Walkable triangle meshes, point location, and corridor pathfinding.
//!
//! Paths are found in two passes: A* over the triangle adjacency graph picks a
//! corridor, then the funnel algorithm pulls the corridor taut into corner
//! waypoints. The midpoint heuristic can pick a corridor that misses the
//! shortest route, so a final pass joins waypoints that see each other.
//! Costs use XZ distance only; heights are carried through.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::path::Path as FsPath;

use glam::{DVec2, DVec3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{cross2, xz, xz_distance};

/// Distance tolerance, in meters, for containment tests.
const CONTAIN_EPS: f64 = 1e-9;
/// Twice-area below which a triangle counts as degenerate.
const AREA_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum NavMeshError {
    #[error("mesh has no triangles")]
    Empty,
    #[error("triangle {triangle} references vertex {index}, but only {count} vertices exist")]
    InvalidIndex {
        triangle: usize,
        index: usize,
        count: usize,
    },
    #[error("triangle {0} has zero area in the ground plane")]
    DegenerateTriangle(usize),
    #[error("edge ({0}, {1}) is shared by more than two triangles")]
    NonManifoldEdge(usize, usize),
    #[error("vertex {0} is not finite")]
    NonFiniteVertex(usize),
    #[error("no path between triangles {from} and {to}")]
    NoPath { from: usize, to: usize },
    #[error("point ({}, {}, {}) is not on the mesh", .0.x, .0.y, .0.z)]
    OffMesh(DVec3),
    #[error("failed to read mesh file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed mesh file: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Edge-shared neighbor of a triangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Neighbor {
    pub triangle: usize,
    /// The shared edge as vertex indices, in the owning triangle's winding order.
    pub edge: [usize; 2],
}

/// On-disk mesh layout: `{"vertices": [[x,y,z],...], "triangles": [[i,j,k],...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeshFile {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[usize; 3]>,
}

/// An immutable walkable surface.
///
/// Triangles are stored clockwise when viewed from above so that every face
/// normal points up; [`NavMesh::build`] rewinds input triangles as needed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeshFile", into = "MeshFile")]
pub struct NavMesh {
    vertices: Vec<DVec3>,
    triangles: Vec<[usize; 3]>,
    adjacency: Vec<Vec<Neighbor>>,
    /// Edges owned by a single triangle.
    boundary: Vec<[usize; 2]>,
}

impl TryFrom<MeshFile> for NavMesh {
    type Error = NavMeshError;

    fn try_from(file: MeshFile) -> Result<Self, Self::Error> {
        let vertices = file.vertices.into_iter().map(DVec3::from_array).collect();
        NavMesh::build(vertices, file.triangles)
    }
}

impl From<NavMesh> for MeshFile {
    fn from(mesh: NavMesh) -> Self {
        MeshFile {
            vertices: mesh.vertices.iter().map(|v| v.to_array()).collect(),
            triangles: mesh.triangles,
        }
    }
}

/// Result of a path query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    /// Triangles visited from start to goal.
    pub corridor: Vec<usize>,
    /// Corner points from start to goal, inclusive.
    pub waypoints: Vec<DVec3>,
    /// Sum of XZ distances between consecutive waypoints.
    pub total_length: f64,
}

impl Path {
    pub fn from_waypoints(corridor: Vec<usize>, waypoints: Vec<DVec3>) -> Self {
        let total_length = waypoints.windows(2).map(|w| xz_distance(w[0], w[1])).sum();
        Self {
            corridor,
            waypoints,
            total_length,
        }
    }

    pub fn start(&self) -> DVec3 {
        self.waypoints[0]
    }

    pub fn goal(&self) -> DVec3 {
        *self.waypoints.last().expect("path has waypoints")
    }

    /// Point at arc length `s` from the start, clamped to the path.
    pub fn position_at(&self, s: f64) -> DVec3 {
        let mut remaining = s.max(0.0);
        for w in self.waypoints.windows(2) {
            let len = xz_distance(w[0], w[1]);
            if remaining <= len {
                if len == 0.0 {
                    return w[1];
                }
                return w[0].lerp(w[1], remaining / len);
            }
            remaining -= len;
        }
        self.goal()
    }

    /// Planar direction of travel at arc length `s`; zero for a zero-length path.
    pub fn direction_at(&self, s: f64) -> DVec3 {
        let mut remaining = s.max(0.0);
        let mut last = DVec3::ZERO;
        for w in self.waypoints.windows(2) {
            let d = DVec3::new(w[1].x - w[0].x, 0.0, w[1].z - w[0].z);
            let len = d.length();
            if len > 0.0 {
                last = d / len;
                if remaining < len {
                    return last;
                }
            }
            remaining -= len;
        }
        last
    }
}

impl NavMesh {
    /// Validates the triangles, orients them upward, and derives adjacency.
    pub fn build(vertices: Vec<DVec3>, triangles: Vec<[usize; 3]>) -> Result<Self, NavMeshError> {
        if triangles.is_empty() {
            return Err(NavMeshError::Empty);
        }
        if let Some(i) = vertices.iter().position(|v| !v.is_finite()) {
            return Err(NavMeshError::NonFiniteVertex(i));
        }
        let mut oriented = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            for &index in tri {
                if index >= vertices.len() {
                    return Err(NavMeshError::InvalidIndex {
                        triangle: t,
                        index,
                        count: vertices.len(),
                    });
                }
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(NavMeshError::DegenerateTriangle(t));
            }
            let [a, b, c] = tri.map(|i| xz(vertices[i]));
            let area2 = cross2(a, b, c);
            if area2.abs() <= AREA_EPS {
                return Err(NavMeshError::DegenerateTriangle(t));
            }
            // counter-clockwise in (x, z) means a downward normal
            oriented.push(if area2 > 0.0 { [tri[0], tri[2], tri[1]] } else { *tri });
        }

        let mut edges: BTreeMap<(usize, usize), Vec<(usize, [usize; 2])>> = BTreeMap::new();
        for (t, tri) in oriented.iter().enumerate() {
            for k in 0..3 {
                let (u, v) = (tri[k], tri[(k + 1) % 3]);
                edges.entry((u.min(v), u.max(v))).or_default().push((t, [u, v]));
            }
        }
        let mut adjacency = vec![Vec::new(); oriented.len()];
        let mut boundary = Vec::new();
        for (&(u, v), owners) in &edges {
            match owners.as_slice() {
                [(_, edge)] => boundary.push(*edge),
                [(t0, e0), (t1, e1)] => {
                    adjacency[*t0].push(Neighbor { triangle: *t1, edge: *e0 });
                    adjacency[*t1].push(Neighbor { triangle: *t0, edge: *e1 });
                }
                _ => return Err(NavMeshError::NonManifoldEdge(u, v)),
            }
        }
        for list in &mut adjacency {
            list.sort_by_key(|n| n.triangle);
        }
        Ok(Self {
            vertices,
            triangles: oriented,
            adjacency,
            boundary,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self, NavMeshError> {
        let file: MeshFile = serde_json::from_str(text)?;
        Self::try_from(file)
    }

    pub fn load(path: impl AsRef<FsPath>) -> Result<Self, NavMeshError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&MeshFile::from(self.clone())).expect("mesh serializes")
    }

    /// Flat mesh made of axis-aligned square cells at height 0. Each cell
    /// `(i, j)` covers `[i, i+1] x [j, j+1]` times `size`; shared corners are
    /// merged so neighboring cells become adjacent.
    pub fn from_cells(cells: &[(i32, i32)], size: f64) -> Result<Self, NavMeshError> {
        let mut index: BTreeMap<(i32, i32), usize> = BTreeMap::new();
        let mut vertices = Vec::new();
        let mut vertex = |i: i32, j: i32| {
            *index.entry((i, j)).or_insert_with(|| {
                vertices.push(DVec3::new(i as f64 * size, 0.0, j as f64 * size));
                vertices.len() - 1
            })
        };
        let mut triangles = Vec::with_capacity(cells.len() * 2);
        for &(i, j) in cells {
            let a = vertex(i, j);
            let b = vertex(i + 1, j);
            let c = vertex(i + 1, j + 1);
            let d = vertex(i, j + 1);
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
        Self::build(vertices, triangles)
    }

    /// Axis-aligned rectangle `[min_x, max_x] x [min_z, max_z]` split into
    /// `nx * nz` cells.
    pub fn rectangle(min: DVec2, max: DVec2, nx: usize, nz: usize) -> Result<Self, NavMeshError> {
        let (nx, nz) = (nx.max(1), nz.max(1));
        let step = DVec2::new((max.x - min.x) / nx as f64, (max.y - min.y) / nz as f64);
        let mut vertices = Vec::with_capacity((nx + 1) * (nz + 1));
        for j in 0..=nz {
            for i in 0..=nx {
                vertices.push(DVec3::new(min.x + step.x * i as f64, 0.0, min.y + step.y * j as f64));
            }
        }
        let at = |i: usize, j: usize| j * (nx + 1) + i;
        let mut triangles = Vec::with_capacity(nx * nz * 2);
        for j in 0..nz {
            for i in 0..nx {
                triangles.push([at(i, j), at(i + 1, j), at(i + 1, j + 1)]);
                triangles.push([at(i, j), at(i + 1, j + 1), at(i, j + 1)]);
            }
        }
        Self::build(vertices, triangles)
    }

    pub fn vertices(&self) -> &[DVec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn adjacency(&self) -> &[Vec<Neighbor>] {
        &self.adjacency
    }

    pub fn neighbors(&self, triangle: usize) -> &[Neighbor] {
        &self.adjacency[triangle]
    }

    pub fn triangle_points(&self, triangle: usize) -> [DVec3; 3] {
        self.triangles[triangle].map(|i| self.vertices[i])
    }

    pub fn centroid(&self, triangle: usize) -> DVec3 {
        let [a, b, c] = self.triangle_points(triangle);
        (a + b + c) / 3.0
    }

    /// Upward normal (unnormalized) of a triangle.
    pub fn normal(&self, triangle: usize) -> DVec3 {
        let [a, b, c] = self.triangle_points(triangle);
        (b - a).cross(c - a)
    }

    /// Min and max corners of the XZ bounding box.
    pub fn bounds(&self) -> (DVec2, DVec2) {
        self.vertices.iter().fold(
            (DVec2::splat(f64::INFINITY), DVec2::splat(f64::NEG_INFINITY)),
            |(lo, hi), v| (lo.min(xz(*v)), hi.max(xz(*v))),
        )
    }

    fn contains_xz(&self, triangle: usize, p: DVec2) -> bool {
        let [a, b, c] = self.triangle_points(triangle).map(xz);
        // clockwise winding: interior lies to the right of each edge
        [(a, b), (b, c), (c, a)].iter().all(|&(u, v)| {
            let len = u.distance(v);
            cross2(u, v, p) / len <= CONTAIN_EPS
        })
    }

    /// Lowest-index triangle whose XZ projection contains `p`.
    pub fn locate(&self, p: DVec3) -> Option<usize> {
        let q = xz(p);
        (0..self.triangles.len()).find(|&t| self.contains_xz(t, q))
    }

    /// Height of the triangle's plane at `p`'s XZ coordinates.
    pub fn height_at(&self, triangle: usize, p: DVec2) -> f64 {
        let [a, b, c] = self.triangle_points(triangle);
        let (pa, pb, pc) = (xz(a), xz(b), xz(c));
        let area = cross2(pa, pb, pc);
        let wa = cross2(pb, pc, p) / area;
        let wb = cross2(pc, pa, p) / area;
        let wc = 1.0 - wa - wb;
        wa * a.y + wb * b.y + wc * c.y
    }

    /// Closest point on the mesh by XZ distance. Points already on the mesh
    /// are returned unchanged.
    pub fn project_to_mesh(&self, p: DVec3) -> DVec3 {
        if self.locate(p).is_some() {
            return p;
        }
        let q = xz(p);
        let mut best: Option<(f64, usize, DVec2)> = None;
        for t in 0..self.triangles.len() {
            let [a, b, c] = self.triangle_points(t).map(xz);
            for (u, v) in [(a, b), (b, c), (c, a)] {
                let candidate = closest_on_segment(q, u, v);
                let d = candidate.distance_squared(q);
                if best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, t, candidate));
                }
            }
        }
        let (_, t, point) = best.expect("mesh has triangles");
        DVec3::new(point.x, self.height_at(t, point), point.y)
    }

    /// Shortest path between two on-mesh points.
    pub fn find_path(&self, start: DVec3, goal: DVec3) -> Result<Path, NavMeshError> {
        let from = self.locate(start).ok_or(NavMeshError::OffMesh(start))?;
        let to = self.locate(goal).ok_or(NavMeshError::OffMesh(goal))?;
        if from == to {
            return Ok(Path::from_waypoints(vec![from], vec![start, goal]));
        }
        let mut corridor = self.corridor(from, to, start, goal)?;
        // An endpoint on a shared edge or vertex also lies in the next
        // triangle; a portal through the apex would bend the funnel.
        let (s, g) = (xz(start), xz(goal));
        while corridor.len() > 1 && self.contains_xz(corridor[1], s) {
            corridor.remove(0);
        }
        while corridor.len() > 1 && self.contains_xz(corridor[corridor.len() - 2], g) {
            corridor.pop();
        }
        if corridor.len() == 1 {
            return Ok(Path::from_waypoints(corridor, vec![start, goal]));
        }
        let portals = self.portals(&corridor, start, goal);
        let waypoints = self.shortcut(string_pull(&portals));
        Ok(Path::from_waypoints(corridor, waypoints))
    }

    /// Whether the XZ segment `a`-`b` stays on the mesh. The segment can only
    /// leave by crossing a boundary edge or passing through a boundary
    /// vertex; between boundary contacts it is entirely on or off the mesh.
    pub fn segment_walkable(&self, a: DVec2, b: DVec2) -> bool {
        let len = a.distance(b);
        if len <= CONTAIN_EPS {
            return self.locate(DVec3::new(a.x, 0.0, a.y)).is_some();
        }
        let side = |p: DVec2, q: DVec2, r: DVec2, scale: f64| {
            let d = cross2(p, q, r) / scale;
            if d > CONTAIN_EPS {
                1
            } else if d < -CONTAIN_EPS {
                -1
            } else {
                0
            }
        };
        let mut cuts = vec![0.0, 1.0];
        for &[u, v] in &self.boundary {
            let (p, q) = (xz(self.vertices[u]), xz(self.vertices[v]));
            let edge_len = p.distance(q);
            let (sp, sq) = (side(a, b, p, len), side(a, b, q, len));
            if sp * sq < 0 && side(p, q, a, edge_len) * side(p, q, b, edge_len) < 0 {
                return false;
            }
            for (w, s) in [(p, sp), (q, sq)] {
                if s == 0 {
                    let t = (w - a).dot(b - a) / (len * len);
                    if t > 0.0 && t < 1.0 {
                        cuts.push(t);
                    }
                }
            }
        }
        cuts.sort_by(f64::total_cmp);
        cuts.windows(2).all(|w| {
            let m = a.lerp(b, (w[0] + w[1]) / 2.0);
            w[1] - w[0] <= 1e-12 || (0..self.triangles.len()).any(|t| self.contains_xz(t, m))
        })
    }

    /// Greedily joins each waypoint to the farthest later one it can see.
    fn shortcut(&self, points: Vec<DVec3>) -> Vec<DVec3> {
        if points.len() <= 2 {
            return points;
        }
        let mut out = vec![points[0]];
        let mut i = 0;
        while i + 1 < points.len() {
            let mut j = points.len() - 1;
            while j > i + 1 && !self.segment_walkable(xz(points[i]), xz(points[j])) {
                j -= 1;
            }
            out.push(points[j]);
            i = j;
        }
        out
    }

    /// A* over triangles. A node's position is the midpoint of the edge it was
    /// entered through (the start point for the first triangle).
    fn corridor(&self, from: usize, to: usize, start: DVec3, goal: DVec3) -> Result<Vec<usize>, NavMeshError> {
        let n = self.triangles.len();
        let goal2 = xz(goal);
        let mut cost = vec![f64::INFINITY; n];
        let mut entry = vec![DVec2::ZERO; n];
        let mut parent: Vec<Option<usize>> = vec![None; n];
        let mut open = BinaryHeap::new();
        cost[from] = 0.0;
        entry[from] = xz(start);
        open.push(OpenNode {
            f: entry[from].distance(goal2),
            g: 0.0,
            triangle: from,
        });
        while let Some(node) = open.pop() {
            if node.g > cost[node.triangle] {
                continue;
            }
            if node.triangle == to {
                let mut corridor = vec![to];
                let mut cur = to;
                while let Some(p) = parent[cur] {
                    corridor.push(p);
                    cur = p;
                }
                corridor.reverse();
                return Ok(corridor);
            }
            for nb in &self.adjacency[node.triangle] {
                let mid = (xz(self.vertices[nb.edge[0]]) + xz(self.vertices[nb.edge[1]])) * 0.5;
                let mut g = node.g + entry[node.triangle].distance(mid);
                let h = if nb.triangle == to {
                    g += mid.distance(goal2);
                    0.0
                } else {
                    mid.distance(goal2)
                };
                if g < cost[nb.triangle] {
                    cost[nb.triangle] = g;
                    entry[nb.triangle] = mid;
                    parent[nb.triangle] = Some(node.triangle);
                    open.push(OpenNode {
                        f: g + h,
                        g,
                        triangle: nb.triangle,
                    });
                }
            }
        }
        Err(NavMeshError::NoPath { from, to })
    }

    /// Portal edges as (left, right) pairs seen while walking the corridor,
    /// framed by degenerate portals at the start and goal.
    fn portals(&self, corridor: &[usize], start: DVec3, goal: DVec3) -> Vec<(DVec3, DVec3)> {
        let mut portals = Vec::with_capacity(corridor.len() + 1);
        portals.push((start, start));
        for pair in corridor.windows(2) {
            let nb = self.adjacency[pair[0]]
                .iter()
                .find(|n| n.triangle == pair[1])
                .expect("corridor follows adjacency");
            // exiting a clockwise triangle, the first edge vertex is on the left
            portals.push((self.vertices[nb.edge[0]], self.vertices[nb.edge[1]]));
        }
        portals.push((goal, goal));
        portals
    }
}

#[derive(Debug, Clone, Copy)]
struct OpenNode {
    f: f64,
    g: f64,
    triangle: usize,
}

impl PartialEq for OpenNode {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for OpenNode {}

impl PartialOrd for OpenNode {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OpenNode {
    // max-heap: smaller f, then smaller index, pops first
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| other.triangle.cmp(&self.triangle))
    }
}

fn closest_on_segment(p: DVec2, a: DVec2, b: DVec2) -> DVec2 {
    let ab = b - a;
    let t = ((p - a).dot(ab) / ab.length_squared()).clamp(0.0, 1.0);
    a + ab * t
}

/// Simple stupid funnel over (left, right) portals; the first and last
/// portals are the degenerate start and goal.
fn string_pull(portals: &[(DVec3, DVec3)]) -> Vec<DVec3> {
    let start = portals[0].0;
    let goal = portals[portals.len() - 1].0;
    let mut points = vec![start];
    let mut apex = start;
    let (mut left, mut right) = (start, start);
    let (mut left_index, mut right_index) = (0usize, 0usize);

    let mut i = 1;
    while i < portals.len() {
        let (l, r) = portals[i];
        let (a2, l2, r2) = (xz(apex), xz(left), xz(right));

        if cross2(a2, r2, xz(r)) >= 0.0 {
            if apex == right || cross2(a2, l2, xz(r)) < 0.0 {
                right = r;
                right_index = i;
            } else {
                apex = left;
                let apex_index = left_index;
                points.push(apex);
                left = apex;
                right = apex;
                left_index = apex_index;
                right_index = apex_index;
                i = apex_index + 1;
                continue;
            }
        }

        let (a2, l2, r2) = (xz(apex), xz(left), xz(right));
        if cross2(a2, l2, xz(l)) <= 0.0 {
            if apex == left || cross2(a2, r2, xz(l)) > 0.0 {
                left = l;
                left_index = i;
            } else {
                apex = right;
                let apex_index = right_index;
                points.push(apex);
                left = apex;
                right = apex;
                left_index = apex_index;
                right_index = apex_index;
                i = apex_index + 1;
                continue;
            }
        }
        i += 1;
    }
    points.push(goal);
    points.dedup();
    if points.len() == 1 {
        points.push(goal);
    }
    points
}
