//! Oriented point clouds: loading, unit-box normalization, SDF sample
//! generation along normals, and positional noise.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Point3, Result};

/// Points with unit normals, one per point.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub normals: Vec<Point3>,
}

impl PointCloud {
    /// Pairs points with normals, renormalizing the normals.
    pub fn new(points: Vec<Point3>, normals: Vec<Point3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Degenerate("point cloud is empty".into()));
        }
        if points.len() != normals.len() {
            return Err(Error::Dimension(format!(
                "{} points with {} normals",
                points.len(),
                normals.len()
            )));
        }
        let mut normals = normals;
        for (i, n) in normals.iter_mut().enumerate() {
            *n = unit(*n).ok_or_else(|| Error::Degenerate(format!("normal {i} has zero length")))?;
        }
        Ok(Self { points, normals })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bounds(&self) -> (Point3, Point3) {
        bounds(&self.points)
    }
}

pub(crate) fn bounds(points: &[Point3]) -> (Point3, Point3) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    (lo, hi)
}

/// Leaves already-unit vectors bit-identical so save/load round-trips exactly.
fn unit(n: Point3) -> Option<Point3> {
    let sq = n[0] * n[0] + n[1] * n[1] + n[2] * n[2];
    if !(sq > 0.0) || !sq.is_finite() {
        return None;
    }
    if (sq - 1.0).abs() <= 1e-12 {
        return Some(n);
    }
    let inv = 1.0 / sq.sqrt();
    Some(n.map(|c| c * inv))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse_floats(path: &Path, line: usize, fields: &[&str]) -> Result<Vec<f64>> {
    fields
        .iter()
        .map(|f| {
            let v: f64 = f
                .parse()
                .map_err(|_| parse_err(path, line, format!("`{f}` is not a number")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(parse_err(path, line, format!("non-finite coordinate `{f}`")))
            }
        })
        .collect()
}

fn triple(v: &[f64]) -> Point3 {
    [v[0], v[1], v[2]]
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}

/// Reads `.xyz` (`x y z nx ny nz` per line), `.obj` (`v`/`vn` records, paired
/// by order) or ASCII `.ply` with `nx ny nz` vertex properties.
pub fn load_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (points, normals) = match extension(path).as_str() {
        "xyz" | "txt" => parse_xyz(path, &text)?,
        "obj" => parse_obj(path, &text)?,
        "ply" => parse_ply(path, &text)?,
        other => {
            return Err(Error::Config(format!(
                "{}: unsupported point cloud extension `{other}` (expected xyz, obj or ply)",
                path.display()
            )))
        }
    };
    if points.is_empty() {
        return Err(parse_err(path, 0, "no points"));
    }
    for (i, n) in normals.iter().enumerate() {
        if unit(*n).is_none() {
            return Err(parse_err(path, 0, format!("normal {i} has zero length")));
        }
    }
    PointCloud::new(points, normals)
}

type Columns = (Vec<Point3>, Vec<Point3>);

fn parse_xyz(path: &Path, text: &str) -> Result<Columns> {
    let (mut pts, mut nrm) = (Vec::new(), Vec::new());
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(|c: char| c.is_whitespace() || c == ',').filter(|f| !f.is_empty()).collect();
        match fields.len() {
            6 => {
                let v = parse_floats(path, i + 1, &fields)?;
                pts.push(triple(&v));
                nrm.push(triple(&v[3..]));
            }
            3 => {
                return Err(Error::MissingNormals {
                    path: path.to_path_buf(),
                })
            }
            n => return Err(parse_err(path, i + 1, format!("expected 6 values, found {n}"))),
        }
    }
    Ok((pts, nrm))
}

fn parse_obj(path: &Path, text: &str) -> Result<Columns> {
    let (mut pts, mut nrm) = (Vec::new(), Vec::new());
    let mut last = 0;
    for (i, raw) in text.lines().enumerate() {
        let mut fields = raw.split_whitespace();
        let target = match fields.next() {
            Some("v") => &mut pts,
            Some("vn") => &mut nrm,
            _ => continue,
        };
        let rest: Vec<&str> = fields.collect();
        // `v` may carry an optional w or vertex colors after xyz
        if rest.len() < 3 {
            return Err(parse_err(path, i + 1, format!("expected 3 coordinates, found {}", rest.len())));
        }
        let v = parse_floats(path, i + 1, &rest[..3])?;
        target.push(triple(&v));
        last = i + 1;
    }
    if nrm.is_empty() && !pts.is_empty() {
        return Err(Error::MissingNormals {
            path: path.to_path_buf(),
        });
    }
    if nrm.len() != pts.len() {
        return Err(parse_err(
            path,
            last,
            format!("{} `v` records but {} `vn` records", pts.len(), nrm.len()),
        ));
    }
    Ok((pts, nrm))
}

fn parse_ply(path: &Path, text: &str) -> Result<Columns> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(parse_err(path, 1, "missing `ply` magic")),
    }
    // (name, count, property names)
    let mut elements: Vec<(String, usize, Vec<String>)> = Vec::new();
    let mut header_end = None;
    for (i, raw) in lines.by_ref() {
        let f: Vec<&str> = raw.split_whitespace().collect();
        match f.as_slice() {
            ["format", "ascii", _] => {}
            ["format", other, ..] => {
                return Err(parse_err(path, i + 1, format!("unsupported PLY format `{other}`; only ascii is read")))
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                let n = count
                    .parse()
                    .map_err(|_| parse_err(path, i + 1, format!("bad element count `{count}`")))?;
                elements.push((name.to_string(), n, Vec::new()));
            }
            ["property", "list", .., name] => match elements.last_mut() {
                Some((el, _, _)) if el == "vertex" => {
                    return Err(parse_err(path, i + 1, format!("list property `{name}` on vertices")))
                }
                Some((_, _, props)) => props.push(name.to_string()),
                None => return Err(parse_err(path, i + 1, "property before any element")),
            },
            ["property", _, name] => match elements.last_mut() {
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
    let (mut pts, mut nrm) = (Vec::new(), Vec::new());
    let mut body = lines.filter(|(_, l)| !l.trim().is_empty());
    for (name, count, props) in &elements {
        if name != "vertex" {
            for _ in 0..*count {
                body.next()
                    .ok_or_else(|| parse_err(path, header_end, format!("truncated `{name}` element")))?;
            }
            continue;
        }
        let col = |p: &str| props.iter().position(|q| q == p);
        let xyz = [col("x"), col("y"), col("z")];
        let nxyz = [col("nx"), col("ny"), col("nz")];
        if xyz.iter().any(Option::is_none) {
            return Err(parse_err(path, header_end, "vertex element lacks x, y or z"));
        }
        if nxyz.iter().any(Option::is_none) {
            return Err(Error::MissingNormals {
                path: path.to_path_buf(),
            });
        }
        for _ in 0..*count {
            let (i, raw) = body
                .next()
                .ok_or_else(|| parse_err(path, header_end, "fewer vertex lines than declared"))?;
            let fields: Vec<&str> = raw.split_whitespace().collect();
            if fields.len() != props.len() {
                return Err(parse_err(
                    path,
                    i + 1,
                    format!("expected {} values, found {}", props.len(), fields.len()),
                ));
            }
            let pick = |cols: &[Option<usize>; 3]| -> Result<Point3> {
                let f: Vec<&str> = cols.iter().map(|c| fields[c.unwrap()]).collect();
                Ok(triple(&parse_floats(path, i + 1, &f)?))
            };
            pts.push(pick(&xyz)?);
            nrm.push(pick(&nxyz)?);
        }
    }
    if !elements.iter().any(|(n, _, _)| n == "vertex") {
        return Err(parse_err(path, header_end, "no vertex element"));
    }
    Ok((pts, nrm))
}

/// Writes the cloud in the format named by the extension. Values use the
/// shortest round-trip representation, so loading returns identical bits.
pub fn save_cloud(pc: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    let pairs = pc.points.iter().zip(&pc.normals);
    match extension(path).as_str() {
        "xyz" | "txt" => {
            for (p, n) in pairs {
                let _ = writeln!(out, "{} {} {} {} {} {}", p[0], p[1], p[2], n[0], n[1], n[2]);
            }
        }
        "obj" => {
            for (p, n) in pairs {
                let _ = writeln!(out, "v {} {} {}\nvn {} {} {}", p[0], p[1], p[2], n[0], n[1], n[2]);
            }
        }
        "ply" => {
            let _ = write!(
                out,
                "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n\
                 property double nx\nproperty double ny\nproperty double nz\nend_header\n",
                pc.len()
            );
            for (p, n) in pairs {
                let _ = writeln!(out, "{} {} {} {} {} {}", p[0], p[1], p[2], n[0], n[1], n[2]);
            }
        }
        other => {
            return Err(Error::Config(format!(
                "{}: unsupported point cloud extension `{other}`",
                path.display()
            )))
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// `normalized = (p − center) · scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizationTransform {
    pub center: Point3,
    pub scale: f64,
}

impl Default for NormalizationTransform {
    fn default() -> Self {
        Self {
            center: [0.0; 3],
            scale: 1.0,
        }
    }
}

impl NormalizationTransform {
    pub fn apply(&self, p: Point3) -> Point3 {
        [
            (p[0] - self.center[0]) * self.scale,
            (p[1] - self.center[1]) * self.scale,
            (p[2] - self.center[2]) * self.scale,
        ]
    }

    pub fn invert(&self, q: Point3) -> Point3 {
        [
            q[0] / self.scale + self.center[0],
            q[1] / self.scale + self.center[1],
            q[2] / self.scale + self.center[2],
        ]
    }
}

/// Centers the bounding box at the origin and scales its largest extent to 1.
pub fn normalize_unit_box(pc: &PointCloud) -> Result<(PointCloud, NormalizationTransform)> {
    let (lo, hi) = pc.bounds();
    let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
    if !(extent > 0.0) || !extent.is_finite() {
        return Err(Error::Degenerate("point cloud has zero extent on every axis".into()));
    }
    let t = NormalizationTransform {
        center: [0, 1, 2].map(|a| 0.5 * (lo[a] + hi[a])),
        scale: 1.0 / extent,
    };
    let points = pc.points.iter().map(|&p| t.apply(p)).collect();
    Ok((
        PointCloud {
            points,
            normals: pc.normals.clone(),
        },
        t,
    ))
}

/// How offsets along the normal are drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum EpsilonSchedule {
    /// Uniform choice from the given signed values.
    List(Vec<f64>),
    /// Magnitude uniform in `[min, max]`, sign uniform.
    SymmetricUniform { min: f64, max: f64 },
}

impl EpsilonSchedule {
    fn validate(&self) -> Result<()> {
        let ok = |e: f64| e != 0.0 && e.abs() <= 0.1 && e.is_finite();
        match self {
            EpsilonSchedule::List(v) if v.is_empty() => Err(Error::Config("epsilon list is empty".into())),
            EpsilonSchedule::List(v) => match v.iter().find(|e| !ok(**e)) {
                Some(e) => Err(Error::Config(format!("epsilon {e} must be nonzero with |ε| <= 0.1"))),
                None => Ok(()),
            },
            &EpsilonSchedule::SymmetricUniform { min, max } => {
                if ok(min) && ok(max) && 0.0 < min && min <= max {
                    Ok(())
                } else {
                    Err(Error::Config(format!(
                        "epsilon range [{min}, {max}] must satisfy 0 < min <= max <= 0.1"
                    )))
                }
            }
        }
    }

    fn max_abs(&self) -> f64 {
        match self {
            EpsilonSchedule::List(v) => v.iter().fold(0.0, |m, e| m.max(e.abs())),
            EpsilonSchedule::SymmetricUniform { max, .. } => *max,
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            EpsilonSchedule::List(v) => *v.choose(rng).expect("validated non-empty"),
            &EpsilonSchedule::SymmetricUniform { min, max } => {
                let m = if min == max { min } else { rng.random_range(min..=max) };
                if rng.random::<bool>() {
                    m
                } else {
                    -m
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub epsilons: EpsilonSchedule,
    pub per_point_offsets: usize,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            epsilons: EpsilonSchedule::SymmetricUniform { min: 0.002, max: 0.02 },
            per_point_offsets: 4,
            seed: 0,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        self.epsilons.validate()
    }

    pub fn max_epsilon(&self) -> f64 {
        self.epsilons.max_abs()
    }
}

/// Positions with signed-distance targets. The first `N` entries are the
/// cloud points themselves with target 0.
#[derive(Clone, Debug, PartialEq)]
pub struct SdfSampleSet {
    pub positions: Vec<Point3>,
    pub targets: Vec<f64>,
}

impl SdfSampleSet {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// CSV with header `x,y,z,s`.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("x,y,z,s\n");
        for (p, s) in self.positions.iter().zip(&self.targets) {
            let _ = writeln!(out, "{},{},{},{}", p[0], p[1], p[2], s);
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// On-surface samples plus `per_point_offsets` samples `p + ε n` per point
/// with target `ε`.
pub fn make_samples(pc: &PointCloud, cfg: &SamplingConfig) -> Result<SdfSampleSet> {
    cfg.validate()?;
    let n = pc.len();
    let k = n * (1 + cfg.per_point_offsets);
    let mut positions = Vec::with_capacity(k);
    let mut targets = Vec::with_capacity(k);
    positions.extend_from_slice(&pc.points);
    targets.resize(n, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for (p, nrm) in pc.points.iter().zip(&pc.normals) {
        for _ in 0..cfg.per_point_offsets {
            let e = cfg.epsilons.draw(&mut rng);
            positions.push([p[0] + e * nrm[0], p[1] + e * nrm[1], p[2] + e * nrm[2]]);
            targets.push(e);
        }
    }
    Ok(SdfSampleSet { positions, targets })
}

/// Adds isotropic Gaussian noise with `σ = fraction ·` bounding-box diagonal
/// to every position. Normals are kept.
pub fn add_noise(pc: &PointCloud, fraction: f64, seed: u64) -> Result<PointCloud> {
    if !(fraction >= 0.0) || !fraction.is_finite() {
        return Err(Error::Config(format!("noise fraction must be >= 0, got {fraction}")));
    }
    if fraction == 0.0 {
        return Ok(pc.clone());
    }
    let (lo, hi) = pc.bounds();
    let diag = ((0..3).map(|a| (hi[a] - lo[a]).powi(2)).sum::<f64>()).sqrt();
    let normal = Normal::new(0.0, fraction * diag)
        .map_err(|e| Error::Config(format!("noise distribution: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = pc
        .points
        .iter()
        .map(|p| {
            let d: [f64; 3] = std::array::from_fn(|_| normal.sample(&mut rng));
            [p[0] + d[0], p[1] + d[1], p[2] + d[2]]
        })
        .collect();
    Ok(PointCloud {
        points,
        normals: pc.normals.clone(),
    })
}
