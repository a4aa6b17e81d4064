//! Structured triangulations of rectangles, uniform refinement, periodic
//! vertex identification and the coarse-cell partition used by the
//! observation operator.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{invalid, Error, Result};

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        let r = Self { x0, y0, x1, y1 };
        if !(r.width() > 0.0 && r.height() > 0.0) || !r.width().is_finite() || !r.height().is_finite() {
            return Err(invalid(format!("degenerate rectangle {r:?}")));
        }
        Ok(r)
    }

    pub fn unit_square() -> Self {
        Self { x0: 0.0, y0: 0.0, x1: 1.0, y1: 1.0 }
    }

    /// The `2π`-periodic box.
    pub fn periodic_box() -> Self {
        let l = 2.0 * std::f64::consts::PI;
        Self { x0: 0.0, y0: 0.0, x1: l, y1: l }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Maps a point into `[x0, x1) x [y0, y1)` by periodic translation.
    pub fn wrap(&self, p: [f64; 2]) -> [f64; 2] {
        let wrap1 = |v: f64, lo: f64, len: f64| {
            let mut s = (v - lo).rem_euclid(len);
            if len - s < 1e-12 * len {
                s = 0.0;
            }
            lo + s
        };
        [wrap1(p[0], self.x0, self.width()), wrap1(p[1], self.y0, self.height())]
    }

    fn quantize(&self, p: [f64; 2]) -> (i64, i64) {
        let scale = (1u64 << 32) as f64;
        (
            ((p[0] - self.x0) / self.width() * scale).round() as i64,
            ((p[1] - self.y0) / self.height() * scale).round() as i64,
        )
    }
}

/// Edge connectivity with periodic identification applied.
#[derive(Clone, Debug)]
pub struct EdgeTable {
    /// Global edge index of local edge `e` (opposite local vertex `e`) of each triangle.
    pub triangle_edges: Vec<[usize; 3]>,
    /// Midpoint of each global edge (taken from the first triangle that sees it).
    pub midpoints: Vec<[f64; 2]>,
    /// Number of triangles sharing each edge.
    pub multiplicity: Vec<u8>,
}

impl EdgeTable {
    pub fn len(&self) -> usize {
        self.midpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.midpoints.is_empty()
    }
}

/// Conforming triangulation of a rectangle.
#[derive(Clone, Debug)]
pub struct Mesh {
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    boundary_edges: Vec<(usize, u8)>,
    periodic_map: Option<BTreeMap<usize, usize>>,
    h: f64,
    domain: Rect,
    edges: EdgeTable,
}

/// Local edge `e` joins the two vertices other than `e`.
pub const LOCAL_EDGES: [[usize; 2]; 3] = [[1, 2], [2, 0], [0, 1]];

fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

impl Mesh {
    /// Builds a mesh from raw parts, validating orientation and connectivity.
    pub fn new(
        vertices: Vec<[f64; 2]>,
        triangles: Vec<[usize; 3]>,
        domain: Rect,
        periodic_map: Option<BTreeMap<usize, usize>>,
    ) -> Result<Self> {
        if triangles.is_empty() {
            return Err(invalid("mesh has no triangles"));
        }
        let mut h: f64 = 0.0;
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= vertices.len()) {
                return Err(invalid(format!("triangle {t} references a missing vertex")));
            }
            let [a, b, c] = tri.map(|v| vertices[v]);
            let area = signed_area(a, b, c);
            if !(area > 0.0) {
                return Err(Error::Geometry(format!(
                    "triangle {t} has non-positive signed area {area:e}"
                )));
            }
            h = h.max(dist(a, b)).max(dist(b, c)).max(dist(c, a));
        }
        if let Some(map) = &periodic_map {
            for (&s, &m) in map {
                if s >= vertices.len() || m >= vertices.len() || map.contains_key(&m) {
                    return Err(invalid(format!("bad periodic pair {s} -> {m}")));
                }
            }
        }
        let mut mesh = Self {
            vertices,
            triangles,
            boundary_edges: Vec::new(),
            periodic_map,
            h,
            domain,
            edges: EdgeTable {
                triangle_edges: Vec::new(),
                midpoints: Vec::new(),
                multiplicity: Vec::new(),
            },
        };
        mesh.edges = mesh.build_edges();
        if mesh.edges.multiplicity.iter().any(|&m| m > 2) {
            return Err(Error::Geometry("non-conforming mesh: edge shared by more than two triangles".into()));
        }
        mesh.boundary_edges = mesh
            .triangles
            .iter()
            .enumerate()
            .flat_map(|(t, _)| (0..3u8).map(move |e| (t, e)))
            .filter(|&(t, e)| mesh.edges.multiplicity[mesh.edges.triangle_edges[t][e as usize]] == 1)
            .collect();
        Ok(mesh)
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_edges(&self) -> &[(usize, u8)] {
        &self.boundary_edges
    }

    pub fn periodic_map(&self) -> Option<&BTreeMap<usize, usize>> {
        self.periodic_map.as_ref()
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic_map.is_some()
    }

    /// Longest edge over all triangles.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn domain(&self) -> Rect {
        self.domain
    }

    pub fn edges(&self) -> &EdgeTable {
        &self.edges
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// Representative of a vertex after periodic identification.
    pub fn master(&self, v: usize) -> usize {
        match &self.periodic_map {
            Some(map) => *map.get(&v).unwrap_or(&v),
            None => v,
        }
    }

    /// Number of vertices after periodic identification.
    pub fn num_distinct_vertices(&self) -> usize {
        self.vertices.len() - self.periodic_map.as_ref().map_or(0, |m| m.len())
    }

    pub fn triangle_coords(&self, t: usize) -> [[f64; 2]; 3] {
        self.triangles[t].map(|v| self.vertices[v])
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle_coords(t);
        signed_area(a, b, c)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    pub fn barycenter(&self, t: usize) -> [f64; 2] {
        let [a, b, c] = self.triangle_coords(t);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    /// Barycentric coordinates of `p` with respect to triangle `t`.
    pub fn barycentric(&self, t: usize, p: [f64; 2]) -> [f64; 3] {
        let [a, b, c] = self.triangle_coords(t);
        let area = signed_area(a, b, c);
        [
            signed_area(p, b, c) / area,
            signed_area(a, p, c) / area,
            signed_area(a, b, p) / area,
        ]
    }

    /// Finds a triangle containing `p` (wrapped into the box for periodic meshes).
    pub fn locate(&self, p: [f64; 2]) -> Option<(usize, [f64; 3])> {
        let p = if self.is_periodic() { self.domain.wrap(p) } else { p };
        let tol = -1e-12;
        (0..self.triangles.len()).find_map(|t| {
            let l = self.barycentric(t, p);
            (l.iter().all(|&x| x >= tol)).then_some((t, l))
        })
    }

    fn edge_key(&self, a: usize, b: usize) -> (i64, i64, i64, i64) {
        if self.is_periodic() {
            let (pa, pb) = (self.vertices[a], self.vertices[b]);
            let mid = self.domain.wrap([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
            let (qx, qy) = self.domain.quantize(mid);
            (qx, qy, 0, 0)
        } else {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            (lo as i64, hi as i64, 1, 0)
        }
    }

    fn build_edges(&self) -> EdgeTable {
        let mut index: HashMap<(i64, i64, i64, i64), usize> = HashMap::new();
        let mut triangle_edges = Vec::with_capacity(self.triangles.len());
        let mut midpoints = Vec::new();
        let mut multiplicity = Vec::new();
        for tri in &self.triangles {
            let mut ids = [0usize; 3];
            for (e, [i, j]) in LOCAL_EDGES.iter().enumerate() {
                let (a, b) = (tri[*i], tri[*j]);
                let key = self.edge_key(a, b);
                let id = *index.entry(key).or_insert_with(|| {
                    let (pa, pb) = (self.vertices[a], self.vertices[b]);
                    midpoints.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
                    multiplicity.push(0);
                    midpoints.len() - 1
                });
                multiplicity[id] += 1;
                ids[e] = id;
            }
            triangle_edges.push(ids);
        }
        EdgeTable { triangle_edges, midpoints, multiplicity }
    }

    /// Identifies vertices on the right/top sides with their translates on the
    /// left/bottom sides. Fails if some boundary vertex has no partner.
    fn detect_periodic_map(vertices: &[[f64; 2]], domain: Rect) -> Result<BTreeMap<usize, usize>> {
        let mut at: HashMap<(i64, i64), usize> = HashMap::new();
        for (i, &p) in vertices.iter().enumerate() {
            at.insert(domain.quantize(p), i);
        }
        let tol = 1e-10 * domain.width().max(domain.height());
        let mut map = BTreeMap::new();
        for (i, &p) in vertices.iter().enumerate() {
            let on_right = (p[0] - domain.x1).abs() < tol;
            let on_top = (p[1] - domain.y1).abs() < tol;
            if !on_right && !on_top {
                continue;
            }
            let target = [
                if on_right { domain.x0 } else { p[0] },
                if on_top { domain.y0 } else { p[1] },
            ];
            let m = *at.get(&domain.quantize(target)).ok_or_else(|| {
                Error::Geometry(format!("vertex {i} at {p:?} has no periodic partner"))
            })?;
            map.insert(i, m);
        }
        Ok(map)
    }
}

/// Uniform right-triangle mesh with `n` subdivisions per side; each cell is
/// split along its lower-left to upper-right diagonal.
pub fn generate_structured(n: usize, domain: Rect, periodic: bool) -> Result<Mesh> {
    if n == 0 {
        return Err(invalid("number of subdivisions must be at least 1"));
    }
    let domain = Rect::new(domain.x0, domain.y0, domain.x1, domain.y1)?;
    let (dx, dy) = (domain.width() / n as f64, domain.height() / n as f64);
    let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            let x = if i == n { domain.x1 } else { domain.x0 + i as f64 * dx };
            let y = if j == n { domain.y1 } else { domain.y0 + j as f64 * dy };
            vertices.push([x, y]);
        }
    }
    let id = |i: usize, j: usize| j * (n + 1) + i;
    let mut triangles = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    let periodic_map = if periodic {
        Some(Mesh::detect_periodic_map(&vertices, domain)?)
    } else {
        None
    };
    Mesh::new(vertices, triangles, domain, periodic_map)
}

/// Splits every triangle into four congruent children through its edge midpoints.
pub fn refine_uniform(mesh: &Mesh) -> Result<Mesh> {
    let mut vertices = mesh.vertices.clone();
    let mut midpoint_of: HashMap<(usize, usize), usize> = HashMap::new();
    let mut mid = |a: usize, b: usize, vertices: &mut Vec<[f64; 2]>| {
        let key = if a < b { (a, b) } else { (b, a) };
        *midpoint_of.entry(key).or_insert_with(|| {
            let (pa, pb) = (vertices[a], vertices[b]);
            vertices.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
            vertices.len() - 1
        })
    };
    let mut triangles = Vec::with_capacity(4 * mesh.triangles.len());
    for &[v0, v1, v2] in &mesh.triangles {
        let m01 = mid(v0, v1, &mut vertices);
        let m12 = mid(v1, v2, &mut vertices);
        let m20 = mid(v2, v0, &mut vertices);
        triangles.push([v0, m01, m20]);
        triangles.push([m01, v1, m12]);
        triangles.push([m20, m12, v2]);
        triangles.push([m01, m12, m20]);
    }
    let periodic_map = if mesh.is_periodic() {
        Some(Mesh::detect_periodic_map(&vertices, mesh.domain)?)
    } else {
        None
    };
    Mesh::new(vertices, triangles, mesh.domain, periodic_map)
}

/// Reads the plain-text mesh format:
///
/// ```text
/// vertices N
/// x y            (N lines)
/// triangles M
/// i j k          (M lines, 0-based)
/// periodic_pairs P   (optional)
/// slave master   (P lines)
/// ```
///
/// The domain is taken as the bounding box of the vertices.
pub fn parse_mesh_text(text: &str) -> Result<Mesh> {
    let mut tokens = text.split_whitespace();
    let mut next = |what: &str| tokens.next().ok_or_else(|| Error::Parse(format!("unexpected end of input, expected {what}")));
    fn num<T: std::str::FromStr>(s: &str) -> Result<T> {
        s.parse().map_err(|_| Error::Parse(format!("bad number '{s}'")))
    }
    let tag = next("'vertices'")?;
    if tag != "vertices" {
        return Err(Error::Parse(format!("expected 'vertices', found '{tag}'")));
    }
    let nv: usize = num(next("vertex count")?)?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let x: f64 = num(next("x")?)?;
        let y: f64 = num(next("y")?)?;
        vertices.push([x, y]);
    }
    let tag = next("'triangles'")?;
    if tag != "triangles" {
        return Err(Error::Parse(format!("expected 'triangles', found '{tag}'")));
    }
    let nt: usize = num(next("triangle count")?)?;
    let mut triangles = Vec::with_capacity(nt);
    for _ in 0..nt {
        triangles.push([num(next("i")?)?, num(next("j")?)?, num(next("k")?)?]);
    }
    let mut periodic_map = None;
    if let Some(tag) = tokens.next() {
        if tag != "periodic_pairs" {
            return Err(Error::Parse(format!("expected 'periodic_pairs', found '{tag}'")));
        }
        let np: usize = num(tokens.next().ok_or_else(|| Error::Parse("missing pair count".into()))?)?;
        let mut map = BTreeMap::new();
        for _ in 0..np {
            let s: usize = num(tokens.next().ok_or_else(|| Error::Parse("missing slave".into()))?)?;
            let m: usize = num(tokens.next().ok_or_else(|| Error::Parse("missing master".into()))?)?;
            map.insert(s, m);
        }
        periodic_map = Some(map);
    }
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in &vertices {
        x0 = x0.min(p[0]);
        y0 = y0.min(p[1]);
        x1 = x1.max(p[0]);
        y1 = y1.max(p[1]);
    }
    Mesh::new(vertices, triangles, Rect::new(x0, y0, x1, y1)?, periodic_map)
}

pub fn format_mesh_text(mesh: &Mesh) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "vertices {}", mesh.vertices.len());
    for p in &mesh.vertices {
        let _ = writeln!(s, "{:e} {:e}", p[0], p[1]);
    }
    let _ = writeln!(s, "triangles {}", mesh.triangles.len());
    for t in &mesh.triangles {
        let _ = writeln!(s, "{} {} {}", t[0], t[1], t[2]);
    }
    if let Some(map) = &mesh.periodic_map {
        let _ = writeln!(s, "periodic_pairs {}", map.len());
        for (a, b) in map {
            let _ = writeln!(s, "{a} {b}");
        }
    }
    s
}

pub fn read_mesh(path: impl AsRef<Path>) -> Result<Mesh> {
    parse_mesh_text(&fs::read_to_string(path)?)
}

pub fn write_mesh(mesh: &Mesh, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, format_mesh_text(mesh))?;
    Ok(())
}

/// Assignment of fine triangles to coarse observation cells.
#[derive(Clone, Debug, PartialEq)]
pub struct CoarsePartition {
    cell_of: Vec<usize>,
    cell_area: Vec<f64>,
    coarse_h: f64,
}

/// Coarse mesh choice for [`coarse_partition`].
#[derive(Clone, Copy, Debug)]
pub enum Coarse<'a> {
    /// Coarse cells are the fine triangles themselves.
    Same,
    /// A nested ancestor of the fine mesh under [`refine_uniform`].
    Mesh(&'a Mesh),
}

impl CoarsePartition {
    /// Arbitrary grouping of fine triangles into cells `0..k`; every cell must be non-empty.
    pub fn from_assignment(fine: &Mesh, cell_of: Vec<usize>, coarse_h: f64) -> Result<Self> {
        if cell_of.len() != fine.num_triangles() {
            return Err(invalid("assignment length differs from triangle count"));
        }
        let k = cell_of.iter().max().map_or(0, |m| m + 1);
        let mut cell_area = vec![0.0; k];
        for (t, &c) in cell_of.iter().enumerate() {
            cell_area[c] += fine.triangle_area(t);
        }
        if cell_area.iter().any(|&a| a == 0.0) {
            return Err(invalid("empty coarse cell in assignment"));
        }
        Ok(Self { cell_of, cell_area, coarse_h })
    }

    pub fn cell_of(&self) -> &[usize] {
        &self.cell_of
    }

    pub fn cell_area(&self) -> &[f64] {
        &self.cell_area
    }

    pub fn num_cells(&self) -> usize {
        self.cell_area.len()
    }

    /// Coarse mesh size `H`.
    pub fn coarse_h(&self) -> f64 {
        self.coarse_h
    }

    /// Fine triangles grouped by coarse cell.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_cells()];
        for (t, &c) in self.cell_of.iter().enumerate() {
            out[c].push(t);
        }
        out
    }
}

pub fn coarse_partition(fine: &Mesh, coarse: Coarse<'_>) -> Result<CoarsePartition> {
    match coarse {
        Coarse::Same => Ok(CoarsePartition {
            cell_of: (0..fine.num_triangles()).collect(),
            cell_area: (0..fine.num_triangles()).map(|t| fine.triangle_area(t)).collect(),
            coarse_h: fine.h(),
        }),
        Coarse::Mesh(cm) => {
            let (fd, cd) = (fine.domain(), cm.domain());
            let tol = 1e-12 * fd.width().max(fd.height());
            if (fd.x0 - cd.x0).abs() > tol
                || (fd.x1 - cd.x1).abs() > tol
                || (fd.y0 - cd.y0).abs() > tol
                || (fd.y1 - cd.y1).abs() > tol
            {
                return Err(Error::Unsupported("coarse and fine meshes cover different domains".into()));
            }
            let mut cell_of = Vec::with_capacity(fine.num_triangles());
            let mut cell_area = vec![0.0; cm.num_triangles()];
            for t in 0..fine.num_triangles() {
                let bc = fine.barycenter(t);
                let (k, _) = (0..cm.num_triangles())
                    .map(|k| (k, cm.barycentric(k, bc)))
                    .find(|(_, l)| l.iter().all(|&x| x >= -1e-12))
                    .ok_or_else(|| Error::Unsupported(format!("fine triangle {t} lies outside the coarse mesh")))?;
                let nested = fine
                    .triangle_coords(t)
                    .iter()
                    .all(|&p| cm.barycentric(k, p).iter().all(|&x| x >= -1e-10));
                if !nested {
                    return Err(Error::Unsupported(format!(
                        "fine triangle {t} straddles coarse cells; coarse mesh must be a nested ancestor"
                    )));
                }
                cell_of.push(k);
                cell_area[k] += fine.triangle_area(t);
            }
            if let Some(k) = cell_area.iter().position(|&a| a == 0.0) {
                return Err(Error::Unsupported(format!("coarse cell {k} contains no fine triangle")));
            }
            Ok(CoarsePartition { cell_of, cell_area, coarse_h: cm.h() })
        }
    }
}
