//! Zero level-set extraction by marching cubes, mesh I/O and statistics.

mod tables;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::field::ScalarField;
use crate::{Error, Point3, Result};
use tables::TRI_TABLE;

pub const MIN_RESOLUTION: usize = 8;
pub const MAX_RESOLUTION: usize = 512;

/// Interpolation parameters this close to an edge end snap to the grid node.
const SNAP: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub min: Point3,
    pub max: Point3,
}

impl Default for Bounds {
    fn default() -> Self {
        Self {
            min: [-0.6; 3],
            max: [0.6; 3],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeshingConfig {
    /// Cells per axis.
    pub resolution: usize,
    pub bounds: Bounds,
}

impl Default for MeshingConfig {
    fn default() -> Self {
        Self {
            resolution: 128,
            bounds: Bounds::default(),
        }
    }
}

impl MeshingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(MIN_RESOLUTION..=MAX_RESOLUTION).contains(&self.resolution) {
            return Err(Error::Config(format!(
                "meshing resolution must be in {MIN_RESOLUTION}..={MAX_RESOLUTION}, got {}",
                self.resolution
            )));
        }
        let b = self.bounds;
        if (0..3).any(|a| !(b.max[a] > b.min[a]) || !b.min[a].is_finite() || !b.max[a].is_finite()) {
            return Err(Error::Config(format!("degenerate meshing bounds {:?}..{:?}", b.min, b.max)));
        }
        Ok(())
    }

    pub fn cell_size(&self) -> Point3 {
        let b = self.bounds;
        [0, 1, 2].map(|a| (b.max[a] - b.min[a]) / self.resolution as f64)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Point3>,
    pub triangles: Vec<[usize; 3]>,
}

fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: Point3, b: Point3) -> Point3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn norm(a: Point3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn corners(&self, t: usize) -> [Point3; 3] {
        self.triangles[t].map(|i| self.vertices[i])
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        0.5 * norm(cross(sub(b, a), sub(c, a)))
    }

    /// Signed enclosed volume; positive when normals point outward.
    pub fn signed_volume(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.corners(t);
                let x = cross(b, c);
                (a[0] * x[0] + a[1] * x[1] + a[2] * x[2]) / 6.0
            })
            .sum()
    }

    /// Applies `f` to every vertex.
    pub fn map_vertices(&self, f: impl Fn(Point3) -> Point3) -> Self {
        Self {
            vertices: self.vertices.iter().map(|&v| f(v)).collect(),
            triangles: self.triangles.clone(),
        }
    }

    fn check_indices(&self) -> Result<()> {
        let n = self.vertices.len();
        match self.triangles.iter().position(|t| t.iter().any(|&i| i >= n)) {
            Some(t) => Err(Error::Dimension(format!("triangle {t} indexes past {n} vertices"))),
            None => Ok(()),
        }
    }

    /// Drops unreferenced vertices, keeping first-use order.
    fn compact(&mut self) {
        let mut remap = vec![usize::MAX; self.vertices.len()];
        let mut vertices = Vec::new();
        for t in &mut self.triangles {
            for i in t.iter_mut() {
                if remap[*i] == usize::MAX {
                    remap[*i] = vertices.len();
                    vertices.push(self.vertices[*i]);
                }
                *i = remap[*i];
            }
        }
        self.vertices = vertices;
    }
}

/// Corner offsets in the table's numbering.
const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

/// Corner pairs of the twelve cube edges.
const EDGES: [(usize, usize); 12] = [
    (0, 1),
    (1, 2),
    (2, 3),
    (3, 0),
    (4, 5),
    (5, 6),
    (6, 7),
    (7, 4),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

struct Grid {
    n: usize,
    min: Point3,
    max: Point3,
}

impl Grid {
    fn coord(&self, axis: usize, i: usize) -> f64 {
        let t = i as f64 / (self.n - 1) as f64;
        if i == self.n - 1 {
            self.max[axis]
        } else {
            self.min[axis] + (self.max[axis] - self.min[axis]) * t
        }
    }

    fn point(&self, c: [usize; 3]) -> Point3 {
        [self.coord(0, c[0]), self.coord(1, c[1]), self.coord(2, c[2])]
    }

    fn node(&self, c: [usize; 3]) -> u64 {
        ((c[2] * self.n + c[1]) * self.n + c[0]) as u64
    }

    fn layer(&self, k: usize) -> Vec<Point3> {
        let mut pts = Vec::with_capacity(self.n * self.n);
        for j in 0..self.n {
            for i in 0..self.n {
                pts.push(self.point([i, j, k]));
            }
        }
        pts
    }
}

/// Extracts `{f < 0}`'s boundary. Inside is `f < 0`; triangles wind
/// counter-clockwise seen from outside.
///
/// Vertices are shared by grid-edge identity, and by grid node when the
/// crossing falls on a node. Values are requested one z-layer at a time, so
/// the field's batched evaluation sees `(resolution + 1)²` points per call.
pub fn marching_cubes<F: ScalarField<f64> + ?Sized>(field: &F, cfg: &MeshingConfig) -> Result<TriangleMesh> {
    cfg.validate()?;
    let grid = Grid {
        n: cfg.resolution + 1,
        min: cfg.bounds.min,
        max: cfg.bounds.max,
    };
    let n = grid.n;
    let h = cfg.cell_size();
    let min_area = 1e-12 * h[0].min(h[1]).min(h[2]).powi(2);
    let mut mesh = TriangleMesh::default();
    let mut ids: HashMap<u64, usize> = HashMap::new();
    let eval = |k: usize| -> Result<Vec<f64>> {
        let v = field.values(&grid.layer(k));
        match v.iter().position(|x| !x.is_finite()) {
            Some(i) => Err(Error::Degenerate(format!(
                "field is not finite at grid point {:?}",
                grid.point([i % n, i / n, k])
            ))),
            None => Ok(v),
        }
    };
    let mut below = eval(0)?;
    for k in 0..n - 1 {
        let above = eval(k + 1)?;
        let value = |c: [usize; 3]| {
            let layer = if c[2] == k { &below } else { &above };
            layer[c[1] * n + c[0]]
        };
        for j in 0..n - 1 {
            for i in 0..n - 1 {
                let corner = |q: usize| [i + CORNERS[q][0], j + CORNERS[q][1], k + CORNERS[q][2]];
                let vals: [f64; 8] = std::array::from_fn(|q| value(corner(q)));
                let case = (0..8).fold(0usize, |acc, q| acc | (((vals[q] < 0.0) as usize) << q));
                if case == 0 || case == 255 {
                    continue;
                }
                let mut vertex = |e: usize| -> usize {
                    let (a, b) = EDGES[e];
                    let (ca, cb) = (corner(a), corner(b));
                    let (fa, fb) = (vals[a], vals[b]);
                    let t = fa / (fa - fb);
                    let (key, p) = if t <= SNAP {
                        (grid.node(ca) * 4 + 3, grid.point(ca))
                    } else if t >= 1.0 - SNAP {
                        (grid.node(cb) * 4 + 3, grid.point(cb))
                    } else {
                        let (lo, hi) = if grid.node(ca) < grid.node(cb) { (ca, cb) } else { (cb, ca) };
                        let axis = (0..3).find(|&x| lo[x] != hi[x]).expect("edge spans one axis");
                        let (pa, pb) = (grid.point(ca), grid.point(cb));
                        let p = [0, 1, 2].map(|x| if x == axis { pa[x] + t * (pb[x] - pa[x]) } else { pa[x] });
                        (grid.node(lo) * 4 + axis as u64, p)
                    };
                    *ids.entry(key).or_insert_with(|| {
                        mesh.vertices.push(p);
                        mesh.vertices.len() - 1
                    })
                };
                let mut tris = [[0usize; 3]; 5];
                let mut count = 0;
                for tri in TRI_TABLE[case].chunks(3).take_while(|t| t[0] >= 0) {
                    tris[count] = [0, 2, 1].map(|q| vertex(tri[q] as usize));
                    count += 1;
                }
                for &[a, b, c] in &tris[..count] {
                    if a == b || b == c || a == c {
                        continue;
                    }
                    mesh.triangles.push([a, b, c]);
                    if mesh.triangle_area(mesh.triangles.len() - 1) <= min_area {
                        mesh.triangles.pop();
                    }
                }
            }
        }
        below = above;
    }
    mesh.compact();
    Ok(mesh)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshStats {
    pub vertices: usize,
    pub faces: usize,
    pub edges: usize,
    pub euler: i64,
    pub boundary_edges: usize,
    /// Edges shared by more than two triangles.
    pub nonmanifold_edges: usize,
    pub total_area: f64,
}

/// Undirected edge → incident triangle count, in first-seen order.
pub(crate) fn edge_counts(mesh: &TriangleMesh) -> Vec<((usize, usize), usize)> {
    let mut index: HashMap<(usize, usize), usize> = HashMap::new();
    let mut out: Vec<((usize, usize), usize)> = Vec::new();
    for t in &mesh.triangles {
        for e in 0..3 {
            let (a, b) = (t[e], t[(e + 1) % 3]);
            let key = (a.min(b), a.max(b));
            match index.get(&key) {
                Some(&i) => out[i].1 += 1,
                None => {
                    index.insert(key, out.len());
                    out.push((key, 1));
                }
            }
        }
    }
    out
}

pub fn mesh_stats(mesh: &TriangleMesh) -> MeshStats {
    let edges = edge_counts(mesh);
    let v = mesh.vertices.len();
    let f = mesh.triangles.len();
    MeshStats {
        vertices: v,
        faces: f,
        edges: edges.len(),
        euler: v as i64 - edges.len() as i64 + f as i64,
        boundary_edges: edges.iter().filter(|(_, c)| *c == 1).count(),
        nonmanifold_edges: edges.iter().filter(|(_, c)| *c > 2).count(),
        total_area: (0..f).map(|t| mesh.triangle_area(t)).sum(),
    }
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}

/// Writes OBJ (`v`/`f`, 1-based) or ASCII PLY, by extension.
pub fn save_mesh(mesh: &TriangleMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    mesh.check_indices()?;
    let mut out = String::new();
    match extension(path).as_str() {
        "obj" => {
            for v in &mesh.vertices {
                let _ = writeln!(out, "v {} {} {}", v[0], v[1], v[2]);
            }
            for t in &mesh.triangles {
                let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
            }
        }
        "ply" => {
            let _ = write!(
                out,
                "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n\
                 element face {}\nproperty list uchar int vertex_indices\nend_header\n",
                mesh.vertices.len(),
                mesh.triangles.len()
            );
            for v in &mesh.vertices {
                let _ = writeln!(out, "{} {} {}", v[0], v[1], v[2]);
            }
            for t in &mesh.triangles {
                let _ = writeln!(out, "3 {} {} {}", t[0], t[1], t[2]);
            }
        }
        other => {
            return Err(Error::Config(format!(
                "{}: unsupported mesh extension `{other}` (expected obj or ply)",
                path.display()
            )))
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse_f64(path: &Path, line: usize, s: &str) -> Result<f64> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(parse_err(path, line, format!("`{s}` is not a finite number"))),
    }
}

/// Reads an OBJ (`v` and `f` records; polygons are fanned) or ASCII PLY mesh.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mesh = match extension(path).as_str() {
        "obj" => parse_obj(path, &text)?,
        "ply" => parse_ply(path, &text)?,
        other => {
            return Err(Error::Config(format!(
                "{}: unsupported mesh extension `{other}` (expected obj or ply)",
                path.display()
            )))
        }
    };
    mesh.check_indices()?;
    Ok(mesh)
}

fn fan(poly: &[usize], out: &mut Vec<[usize; 3]>) {
    for w in 1..poly.len().saturating_sub(1) {
        out.push([poly[0], poly[w], poly[w + 1]]);
    }
}

fn parse_obj(path: &Path, text: &str) -> Result<TriangleMesh> {
    let mut mesh = TriangleMesh::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let mut f = raw.split_whitespace();
        match f.next() {
            Some("v") => {
                let c: Vec<&str> = f.collect();
                if c.len() < 3 {
                    return Err(parse_err(path, line, "vertex needs 3 coordinates"));
                }
                mesh.vertices.push([
                    parse_f64(path, line, c[0])?,
                    parse_f64(path, line, c[1])?,
                    parse_f64(path, line, c[2])?,
                ]);
            }
            Some("f") => {
                let nv = mesh.vertices.len() as i64;
                let poly = f
                    .map(|tok| {
                        let idx = tok.split('/').next().unwrap_or("");
                        let k: i64 = idx
                            .parse()
                            .map_err(|_| parse_err(path, line, format!("bad face index `{tok}`")))?;
                        let r = if k < 0 { nv + k } else { k - 1 };
                        if r < 0 || r >= nv {
                            return Err(parse_err(path, line, format!("face index {k} out of range")));
                        }
                        Ok(r as usize)
                    })
                    .collect::<Result<Vec<_>>>()?;
                if poly.len() < 3 {
                    return Err(parse_err(path, line, "face needs at least 3 vertices"));
                }
                fan(&poly, &mut mesh.triangles);
            }
            _ => {}
        }
    }
    Ok(mesh)
}

fn parse_ply(path: &Path, text: &str) -> Result<TriangleMesh> {
    let mut lines = text.lines().enumerate();
    if lines.next().map(|(_, l)| l.trim()) != Some("ply") {
        return Err(parse_err(path, 1, "missing `ply` magic"));
    }
    let mut elements: Vec<(String, usize, Vec<String>)> = Vec::new();
    let mut header_end = None;
    for (i, raw) in lines.by_ref() {
        let f: Vec<&str> = raw.split_whitespace().collect();
        match f.as_slice() {
            ["format", "ascii", _] | ["comment", ..] | ["obj_info", ..] | [] => {}
            ["format", other, ..] => return Err(parse_err(path, i + 1, format!("unsupported PLY format `{other}`"))),
            ["element", name, count] => {
                let c = count.parse().map_err(|_| parse_err(path, i + 1, "bad element count"))?;
                elements.push((name.to_string(), c, Vec::new()));
            }
            ["property", .., name] => match elements.last_mut() {
                Some((_, _, props)) => props.push(name.to_string()),
                None => return Err(parse_err(path, i + 1, "property before any element")),
            },
            ["end_header"] => {
                header_end = Some(i + 1);
                break;
            }
            _ => return Err(parse_err(path, i + 1, format!("unrecognized header line `{}`", raw.trim()))),
        }
    }
    let header_end = header_end.ok_or_else(|| parse_err(path, 0, "missing `end_header`"))?;
    let mut mesh = TriangleMesh::default();
    let mut body = lines.filter(|(_, l)| !l.trim().is_empty());
    for (name, count, props) in &elements {
        for _ in 0..*count {
            let (i, raw) = body
                .next()
                .ok_or_else(|| parse_err(path, header_end, format!("truncated `{name}` element")))?;
            let f: Vec<&str> = raw.split_whitespace().collect();
            match name.as_str() {
                "vertex" => {
                    let col = |p: &str| props.iter().position(|q| q == p);
                    let mut v = [0.0; 3];
                    for (a, axis) in ["x", "y", "z"].iter().enumerate() {
                        let c = col(axis).ok_or_else(|| parse_err(path, header_end, "vertex lacks x, y or z"))?;
                        let s = f.get(c).ok_or_else(|| parse_err(path, i + 1, "short vertex line"))?;
                        v[a] = parse_f64(path, i + 1, s)?;
                    }
                    mesh.vertices.push(v);
                }
                "face" => {
                    let k: usize = f
                        .first()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| parse_err(path, i + 1, "bad face line"))?;
                    if f.len() < k + 1 || k < 3 {
                        return Err(parse_err(path, i + 1, "bad face line"));
                    }
                    let poly = f[1..=k]
                        .iter()
                        .map(|s| s.parse::<usize>().map_err(|_| parse_err(path, i + 1, format!("bad index `{s}`"))))
                        .collect::<Result<Vec<_>>>()?;
                    fan(&poly, &mut mesh.triangles);
                }
                _ => {}
            }
        }
    }
    Ok(mesh)
}
