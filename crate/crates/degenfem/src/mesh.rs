//! Conforming triangular meshes of the unit square with a tagged conductor
//! subdomain.
//!
//! Meshes are structured: `n`×`n` grid cells, each split along its SW-NE
//! diagonal, all triangles counterclockwise. Every triangle lies entirely in
//! the conductor or entirely in the dielectric; the generator enforces this by
//! requiring the conductor rectangle to sit on grid lines, and refinement
//! preserves it because children inherit the parent tag.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Material tag of one triangle. The conductor carries `sigma > 0`; the
/// dielectric has `sigma = 0`, which is what makes the evolution degenerate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Region {
    Conductor,
    Dielectric,
}

/// Axis-aligned rectangle, used for the conductor subdomain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Rect { x0, y0, x1, y1 }
    }

    /// Strict interior membership.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x > self.x0 && x < self.x1 && y > self.y0 && y < self.y1
    }
}

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("grid resolution must be at least 1")]
    InvalidResolution,
    #[error("conductor rectangle must satisfy 0 <= x0 < x1 <= 1 and 0 <= y0 < y1 <= 1")]
    InvalidConductor,
    #[error("conductor corner coordinate {coord} does not lie on the {n}x{n} grid")]
    MisalignedConductor { coord: f64, n: usize },
    #[error("mesh has no triangles")]
    EmptyMesh,
    #[error("triangle {index} has non-positive signed area {area:e} (vertices must be counterclockwise)")]
    Orientation { index: usize, area: f64 },
    #[error("triangle {index} references node {node} but the mesh has {n_nodes} nodes")]
    NodeIndexOutOfRange { index: usize, node: usize, n_nodes: usize },
    #[error("triangle {index} repeats a vertex")]
    RepeatedVertex { index: usize },
    #[error("edge ({a}, {b}) is shared by more than two triangles")]
    NonConforming { a: usize, b: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Parse { path: PathBuf, line: usize, reason: String },
}

/// Conforming triangulation with per-triangle region tags. Immutable after
/// construction; all constructors validate orientation and conformity and
/// derive the boundary node set from edge incidence.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    nodes: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    tri_region: Vec<Region>,
    /// boundary[i] ⇔ node i touches an edge with exactly one incident triangle.
    boundary: Vec<bool>,
}

impl TriMesh {
    /// Validating constructor; every other constructor funnels through here.
    pub fn new(
        nodes: Vec<[f64; 2]>,
        triangles: Vec<[usize; 3]>,
        tri_region: Vec<Region>,
    ) -> Result<TriMesh, MeshError> {
        assert_eq!(triangles.len(), tri_region.len(), "one region tag per triangle");
        if triangles.is_empty() {
            return Err(MeshError::EmptyMesh);
        }
        for (index, tri) in triangles.iter().enumerate() {
            for &node in tri {
                if node >= nodes.len() {
                    return Err(MeshError::NodeIndexOutOfRange {
                        index,
                        node,
                        n_nodes: nodes.len(),
                    });
                }
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(MeshError::RepeatedVertex { index });
            }
            let area = signed_area(&triangle_coords_of(&nodes, tri));
            if area <= 0.0 {
                return Err(MeshError::Orientation { index, area });
            }
        }

        // Conformity and boundary detection share one edge census. With all
        // triangles CCW, an interior edge is traversed once per direction; a
        // directed edge seen twice means two triangles overlap on one side.
        let mut edge_count: HashMap<(usize, usize), u32> = HashMap::new();
        for tri in &triangles {
            for e in 0..3 {
                let a = tri[e];
                let b = tri[(e + 1) % 3];
                let directed = edge_count.entry((a, b)).or_insert(0);
                *directed += 1;
                if *directed > 1 {
                    return Err(MeshError::NonConforming { a, b });
                }
            }
        }
        let mut boundary = vec![false; nodes.len()];
        for &(a, b) in edge_count.keys() {
            if !edge_count.contains_key(&(b, a)) {
                boundary[a] = true;
                boundary[b] = true;
            }
        }

        Ok(TriMesh { nodes, triangles, tri_region, boundary })
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn node(&self, i: usize) -> [f64; 2] {
        self.nodes[i]
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn triangle(&self, k: usize) -> [usize; 3] {
        self.triangles[k]
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn region(&self, k: usize) -> Region {
        self.tri_region[k]
    }

    pub fn triangle_coords(&self, k: usize) -> [[f64; 2]; 3] {
        triangle_coords_of(&self.nodes, &self.triangles[k])
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary[node]
    }

    pub fn boundary_node_count(&self) -> usize {
        self.boundary.iter().filter(|&&b| b).count()
    }

    /// Largest edge length over all triangles (the mesh parameter h).
    pub fn mesh_size(&self) -> f64 {
        let mut max_sq: f64 = 0.0;
        for tri in &self.triangles {
            for e in 0..3 {
                let [ax, ay] = self.nodes[tri[e]];
                let [bx, by] = self.nodes[tri[(e + 1) % 3]];
                let d = (bx - ax) * (bx - ax) + (by - ay) * (by - ay);
                max_sq = max_sq.max(d);
            }
        }
        max_sq.sqrt()
    }

    /// Splits every triangle into four similar triangles through the edge
    /// midpoints. Region tags are inherited, so element containment in the
    /// conductor or dielectric is preserved, and the mesh size halves.
    pub fn refine_uniform(&self) -> TriMesh {
        let mut nodes = self.nodes.clone();
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, nodes: &mut Vec<[f64; 2]>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoint.entry(key).or_insert_with(|| {
                let [ax, ay] = nodes[a];
                let [bx, by] = nodes[b];
                nodes.push([0.5 * (ax + bx), 0.5 * (ay + by)]);
                nodes.len() - 1
            })
        };

        let mut triangles = Vec::with_capacity(4 * self.triangles.len());
        let mut tri_region = Vec::with_capacity(4 * self.triangles.len());
        for (k, &[a, b, c]) in self.triangles.iter().enumerate() {
            let mab = mid(a, b, &mut nodes);
            let mbc = mid(b, c, &mut nodes);
            let mca = mid(c, a, &mut nodes);
            // Three corner children plus the medial triangle, all CCW when the
            // parent is CCW.
            triangles.push([a, mab, mca]);
            triangles.push([mab, b, mbc]);
            triangles.push([mca, mbc, c]);
            triangles.push([mab, mbc, mca]);
            for _ in 0..4 {
                tri_region.push(self.tri_region[k]);
            }
        }

        TriMesh::new(nodes, triangles, tri_region)
            .expect("refinement of a valid mesh is valid")
    }

    /// Writes the line-based text format: `trimesh 1`, node count and
    /// coordinates, triangle count and `i j k region` rows with region `c`
    /// or `d`. Coordinates round-trip exactly.
    pub fn save(&self, path: &Path) -> Result<(), MeshError> {
        let mut out = String::new();
        out.push_str("trimesh 1\n");
        let _ = writeln!(out, "nodes {}", self.nodes.len());
        for [x, y] in &self.nodes {
            let _ = writeln!(out, "{x} {y}");
        }
        let _ = writeln!(out, "triangles {}", self.triangles.len());
        for (tri, region) in self.triangles.iter().zip(&self.tri_region) {
            let tag = match region {
                Region::Conductor => 'c',
                Region::Dielectric => 'd',
            };
            let _ = writeln!(out, "{} {} {} {tag}", tri[0], tri[1], tri[2]);
        }
        std::fs::write(path, out).map_err(|source| MeshError::Io { path: path.into(), source })
    }

    pub fn load(path: &Path) -> Result<TriMesh, MeshError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| MeshError::Io { path: path.into(), source })?;
        parse_mesh(&text, path)
    }
}

fn triangle_coords_of(nodes: &[[f64; 2]], tri: &[usize; 3]) -> [[f64; 2]; 3] {
    [nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]]
}

/// Signed area of a triangle; positive for counterclockwise vertices.
pub fn signed_area(coords: &[[f64; 2]; 3]) -> f64 {
    let [[x0, y0], [x1, y1], [x2, y2]] = *coords;
    0.5 * ((x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0))
}

/// Structured mesh of (0,1)²: (n+1)² nodes, 2n² triangles, each cell split
/// along its SW-NE diagonal. `conductor` must sit on grid lines so that no
/// triangle straddles the conductor boundary; `None` tags everything
/// dielectric. Region membership is decided by the triangle barycenter.
pub fn generate_unit_square(n: usize, conductor: Option<Rect>) -> Result<TriMesh, MeshError> {
    if n < 1 {
        return Err(MeshError::InvalidResolution);
    }
    if let Some(r) = conductor {
        // The range check also rejects NaN corners, so the emptiness check
        // below only ever sees ordered values.
        let in_range = r.x0 >= 0.0 && r.y0 >= 0.0 && r.x1 <= 1.0 && r.y1 <= 1.0;
        if !in_range || r.x0 >= r.x1 || r.y0 >= r.y1 {
            return Err(MeshError::InvalidConductor);
        }
        for coord in [r.x0, r.y0, r.x1, r.y1] {
            let scaled = coord * n as f64;
            if (scaled - scaled.round()).abs() > 1e-9 {
                return Err(MeshError::MisalignedConductor { coord, n });
            }
        }
    }

    let mut nodes = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            nodes.push([i as f64 / n as f64, j as f64 / n as f64]);
        }
    }

    let node_at = |i: usize, j: usize| j * (n + 1) + i;
    let mut triangles = Vec::with_capacity(2 * n * n);
    let mut tri_region = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let a = node_at(i, j);
            let b = node_at(i + 1, j);
            let c = node_at(i + 1, j + 1);
            let d = node_at(i, j + 1);
            for tri in [[a, b, c], [a, c, d]] {
                let coords = triangle_coords_of(&nodes, &tri);
                let bx = (coords[0][0] + coords[1][0] + coords[2][0]) / 3.0;
                let by = (coords[0][1] + coords[1][1] + coords[2][1]) / 3.0;
                let region = match conductor {
                    Some(r) if r.contains(bx, by) => Region::Conductor,
                    _ => Region::Dielectric,
                };
                triangles.push(tri);
                tri_region.push(region);
            }
        }
    }

    TriMesh::new(nodes, triangles, tri_region)
}

fn parse_mesh(text: &str, path: &Path) -> Result<TriMesh, MeshError> {
    let err = |line: usize, reason: String| MeshError::Parse { path: path.into(), line, reason };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));

    let (line_no, header) =
        lines.next().ok_or_else(|| err(1, "empty file, expected `trimesh 1`".into()))?;
    if header.trim() != "trimesh 1" {
        return Err(err(line_no, format!("expected `trimesh 1`, found `{header}`")));
    }

    let parse_count = |tag: &str,
                       item: Option<(usize, &str)>|
     -> Result<(usize, usize), MeshError> {
        let (line_no, line) =
            item.ok_or_else(|| err(0, format!("unexpected end of file, expected `{tag} <count>`")))?;
        let mut tokens = line.split_whitespace();
        match (tokens.next(), tokens.next(), tokens.next()) {
            (Some(word), Some(count), None) if word == tag => count
                .parse::<usize>()
                .map(|c| (line_no, c))
                .map_err(|_| err(line_no, format!("invalid {tag} count `{count}`"))),
            _ => Err(err(line_no, format!("expected `{tag} <count>`, found `{line}`"))),
        }
    };

    let (_, n_nodes) = parse_count("nodes", lines.next())?;
    let mut nodes = Vec::with_capacity(n_nodes);
    for _ in 0..n_nodes {
        let (line_no, line) = lines
            .next()
            .ok_or_else(|| err(0, "unexpected end of file in node list".into()))?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 2 {
            return Err(err(line_no, format!("expected `x y`, found `{line}`")));
        }
        let mut coord = [0.0f64; 2];
        for (slot, token) in coord.iter_mut().zip(&tokens) {
            *slot = token
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(line_no, format!("invalid coordinate `{token}`")))?;
        }
        nodes.push(coord);
    }

    let (_, n_triangles) = parse_count("triangles", lines.next())?;
    let mut triangles = Vec::with_capacity(n_triangles);
    let mut tri_region = Vec::with_capacity(n_triangles);
    for _ in 0..n_triangles {
        let (line_no, line) = lines
            .next()
            .ok_or_else(|| err(0, "unexpected end of file in triangle list".into()))?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 4 {
            return Err(err(line_no, format!("expected `i j k region`, found `{line}`")));
        }
        let mut tri = [0usize; 3];
        for (slot, token) in tri.iter_mut().zip(&tokens) {
            *slot = token
                .parse::<usize>()
                .map_err(|_| err(line_no, format!("invalid node index `{token}`")))?;
        }
        let region = match tokens[3] {
            "c" => Region::Conductor,
            "d" => Region::Dielectric,
            other => return Err(err(line_no, format!("invalid region tag `{other}`"))),
        };
        triangles.push(tri);
        tri_region.push(region);
    }

    if let Some((line_no, line)) = lines.find(|(_, l)| !l.trim().is_empty()) {
        return Err(err(line_no, format!("unexpected trailing content `{line}`")));
    }

    TriMesh::new(nodes, triangles, tri_region)
}
