//! Reconstruction metrics: surface sampling, ICP, Chamfer distance,
//! implicit-curvature statistics, angle deficits and histograms.

mod deficit;
mod icp;
mod kdtree;

pub use deficit::angle_deficit;
pub use icp::{best_rigid, icp_align, IcpResult, RigidTransform};
pub use kdtree::KdTree;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curvature::{principal, GRADIENT_FLOOR};
use crate::field::JetField;
use crate::mesher::TriangleMesh;
use crate::sampling::NormalizationTransform;
use crate::{Error, Point3, Real, Result};

/// `n` area-uniform random points on the mesh, deterministic in `seed`.
pub fn sample_surface(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<Vec<Point3>> {
    let mut cdf = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for t in 0..mesh.triangles.len() {
        total += mesh.triangle_area(t);
        cdf.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::Degenerate("cannot sample a mesh with no area".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let u = rng.random_range(0.0..total);
            let t = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
            let [a, b, c] = mesh.corners(t);
            let r1: f64 = rng.random::<f64>().sqrt();
            let r2: f64 = rng.random();
            let (wa, wb, wc) = (1.0 - r1, r1 * (1.0 - r2), r1 * r2);
            std::array::from_fn(|k| wa * a[k] + wb * b[k] + wc * c[k])
        })
        .collect())
}

fn one_sided(from: &[Point3], to: &KdTree) -> f64 {
    let d: Vec<f64> = from
        .par_iter()
        .map(|p| to.nearest(p).expect("non-empty").1)
        .collect();
    d.iter().sum()
}

/// Bidirectional squared Chamfer distance: `(Σ_A d²(a,B) + Σ_B d²(b,A),
/// same / (|A| + |B|))`.
pub fn chamfer(a: &[Point3], b: &[Point3]) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Degenerate("chamfer distance of an empty point set".into()));
    }
    let (ta, tb) = (KdTree::new(a), KdTree::new(b));
    let sum = one_sided(a, &tb) + one_sided(b, &ta);
    Ok((sum, sum / (a.len() + b.len()) as f64))
}

/// Curvature statistics of a field at given surface points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvatureStats {
    /// Median of `|K|`.
    pub median_k: f64,
    /// Mean of `|K|`.
    pub mean_k: f64,
    pub median_k_min: f64,
    /// Percentage of points skipped for a gradient below the floor.
    pub pct_skipped: f64,
    pub sample_count: usize,
    pub valid: usize,
    /// Points where the principal-curvature discriminant was clamped.
    pub clamped: usize,
    /// Signed `K` per valid point.
    #[serde(skip)]
    pub k: Vec<f64>,
    #[serde(skip)]
    pub k_min: Vec<f64>,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

/// Evaluates jets and Goldman curvature at every point and aggregates over
/// the non-singular ones.
pub fn implicit_curvature_stats<T: Real, F: JetField<T> + ?Sized>(
    field: &F,
    points: &[Point3],
) -> Result<CurvatureStats> {
    let pts: Vec<[T; 3]> = points.iter().map(|p| p.map(T::lit)).collect();
    let jets = field.jets(&pts);
    let (mut k, mut k_min, mut clamped) = (Vec::new(), Vec::new(), 0);
    let floor = T::lit(GRADIENT_FLOOR);
    for j in &jets {
        if !j.is_finite() || j.gradient_norm() <= floor {
            continue;
        }
        let c = principal(j)?;
        k.push(c.k.as_f64());
        k_min.push(c.k_min.as_f64());
        clamped += c.clamped as usize;
    }
    let valid = k.len();
    if valid == 0 {
        return Err(Error::EmptyBatch { skipped: points.len() });
    }
    let abs: Vec<f64> = k.iter().map(|x| x.abs()).collect();
    Ok(CurvatureStats {
        median_k: median(&abs).expect("non-empty"),
        mean_k: abs.iter().sum::<f64>() / valid as f64,
        median_k_min: median(&k_min).expect("non-empty"),
        pct_skipped: 100.0 * (points.len() - valid) as f64 / points.len() as f64,
        sample_count: points.len(),
        valid,
        clamped,
        k,
        k_min,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistogramScale {
    #[default]
    Linear,
    /// Geometric bins over `|v|`; exact zeros fall in the first bin.
    Log,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    /// `counts.len() + 1` increasing edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(values: &[f64], bins: usize, scale: HistogramScale) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Degenerate("histogram of no values".into()));
        }
        if bins == 0 {
            return Err(Error::Config("histogram needs at least one bin".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("histogram values must be finite".into()));
        }
        let mags: Vec<f64>;
        let (vals, log) = match scale {
            HistogramScale::Linear => (values, false),
            HistogramScale::Log => {
                mags = values.iter().map(|v| v.abs()).collect();
                let any_pos = mags.iter().any(|&v| v > 0.0);
                (&mags[..], any_pos)
            }
        };
        let edges: Vec<f64> = if log {
            let lo = vals.iter().copied().filter(|&v| v > 0.0).fold(f64::INFINITY, f64::min);
            let hi = vals.iter().copied().fold(0.0, f64::max);
            let (lo, hi) = if lo == hi { (lo / 2.0, hi * 2.0) } else { (lo, hi) };
            let (l0, l1) = (lo.ln(), hi.ln());
            (0..=bins).map(|i| (l0 + (l1 - l0) * i as f64 / bins as f64).exp()).collect()
        } else {
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let (lo, hi) = if lo == hi { (lo - 0.5, hi + 0.5) } else { (lo, hi) };
            (0..=bins).map(|i| lo + (hi - lo) * i as f64 / bins as f64).collect()
        };
        let mut counts = vec![0; bins];
        for &v in vals {
            // last edge is inclusive
            let b = edges[1..].partition_point(|&e| e <= v).min(bins - 1);
            counts[b] += 1;
        }
        Ok(Self { edges, counts })
    }

    /// CSV with header `lower,upper,count`.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("lower,upper,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", self.edges[i], self.edges[i + 1], c);
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

pub fn export_histogram(values: &[f64], bins: usize, scale: HistogramScale, path: impl AsRef<Path>) -> Result<Histogram> {
    let h = Histogram::new(values, bins, scale)?;
    h.save_csv(path)?;
    Ok(h)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Points sampled on each surface for Chamfer distance.
    pub samples: usize,
    /// Surface points at which implicit curvature is evaluated.
    pub curvature_samples: usize,
    /// ICP iterations; 0 skips alignment.
    pub icp_iters: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            samples: 250_000,
            curvature_samples: 250_000,
            icp_iters: 50,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Sum of squared nearest-neighbor distances, both directions.
    pub chamfer_sum_sq: f64,
    /// `chamfer_sum_sq / (|A| + |B|)`.
    pub chamfer_mean: f64,
    pub median_k: f64,
    pub mean_k: f64,
    pub median_k_min: f64,
    pub pct_skipped: f64,
    pub sample_count: usize,
    pub icp_residual: f64,
    pub icp: RigidTransform,
}

impl EvalReport {
    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Scores a reconstruction.
///
/// `mesh` is the field's extracted zero set in the field's (normalized)
/// frame. Curvature is measured there; for Chamfer the mesh samples are
/// mapped to the reference frame through `transform`, ICP-aligned onto
/// `reference`, and compared.
pub fn evaluate<T: Real, F: JetField<T> + ?Sized>(
    field: &F,
    mesh: &TriangleMesh,
    reference: &[Point3],
    transform: Option<&NormalizationTransform>,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    evaluate_detailed(field, mesh, reference, transform, cfg).map(|(r, _)| r)
}

/// [`evaluate`], also returning the per-point curvature statistics.
pub fn evaluate_detailed<T: Real, F: JetField<T> + ?Sized>(
    field: &F,
    mesh: &TriangleMesh,
    reference: &[Point3],
    transform: Option<&NormalizationTransform>,
    cfg: &EvalConfig,
) -> Result<(EvalReport, CurvatureStats)> {
    if cfg.samples == 0 || cfg.curvature_samples == 0 {
        return Err(Error::Config("evaluation sample counts must be positive".into()));
    }
    let curv_pts = sample_surface(mesh, cfg.curvature_samples, cfg.seed)?;
    let stats = implicit_curvature_stats(field, &curv_pts)?;
    let mut recon = sample_surface(mesh, cfg.samples, cfg.seed.wrapping_add(1))?;
    if let Some(t) = transform {
        recon.iter_mut().for_each(|p| *p = t.invert(*p));
    }
    let (icp, icp_residual) = if cfg.icp_iters > 0 {
        let r = icp_align(&recon, reference, cfg.icp_iters)?;
        let res = *r.residuals.last().expect("at least the initial residual");
        (r.transform, res)
    } else {
        (RigidTransform::identity(), f64::NAN)
    };
    let aligned: Vec<Point3> = recon.iter().map(|&p| icp.apply(p)).collect();
    let (sum, mean) = chamfer(&aligned, reference)?;
    let report = EvalReport {
        chamfer_sum_sq: sum,
        chamfer_mean: mean,
        median_k: stats.median_k,
        mean_k: stats.mean_k,
        median_k_min: stats.median_k_min,
        pct_skipped: stats.pct_skipped,
        sample_count: stats.sample_count,
        icp_residual: if icp_residual.is_nan() { 0.0 } else { icp_residual },
        icp,
    };
    Ok((report, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes::{Cylinder, Plane, Sphere};

    #[test]
    fn chamfer_examples() {
        assert_eq!(chamfer(&[[0.0; 3]], &[[1.0, 0.0, 0.0]]).unwrap(), (2.0, 1.0));
        let a = vec![[0.1, 0.2, 0.3], [0.5, -1.0, 2.0], [3.0, 0.0, 0.0]];
        assert_eq!(chamfer(&a, &a).unwrap(), (0.0, 0.0));
        assert!(chamfer(&a, &[]).is_err());
    }

    #[test]
    fn analytic_curvature_statistics() {
        let pts: Vec<Point3> = (0..101).map(|i| {
            let t = i as f64 * 0.0621;
            [t.cos(), t.sin(), 0.0]
        }).collect();
        let s = implicit_curvature_stats::<f64, _>(&Sphere::new(1.0), &pts).unwrap();
        assert!((s.median_k - 1.0).abs() < 1e-12 && (s.median_k_min - 1.0).abs() < 1e-12);
        let cyl = Cylinder { radius: 1.0, half_height: 1.0 };
        let s = implicit_curvature_stats::<f64, _>(&cyl, &pts).unwrap();
        assert!(s.median_k_min.abs() < 1e-9 && s.median_k.abs() < 1e-9);
        let plane = Plane { normal: [0.0, 0.0, 1.0], offset: 0.0, half_size: 1.0 };
        let s = implicit_curvature_stats::<f64, _>(&plane, &pts).unwrap();
        assert_eq!((s.median_k, s.mean_k, s.median_k_min, s.pct_skipped), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn all_singular_is_an_error() {
        let s = implicit_curvature_stats::<f64, _>(&Sphere::new(1.0), &[[0.0; 3]]);
        assert!(matches!(s, Err(Error::EmptyBatch { skipped: 1 })));
    }

    #[test]
    fn single_triangle_sampling() {
        let m = TriangleMesh {
            vertices: vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            triangles: vec![[0, 1, 2]],
        };
        let s = sample_surface(&m, 1000, 3).unwrap();
        assert!(s.iter().all(|p| p[0] >= 0.0 && p[1] >= 0.0 && p[0] + p[1] <= 1.0 + 1e-15 && p[2] == 0.0));
        assert_eq!(s, sample_surface(&m, 1000, 3).unwrap());
        assert!(sample_surface(&TriangleMesh::default(), 1, 0).is_err());
    }

    #[test]
    fn histogram_contracts() {
        let h = Histogram::new(&[2.5; 7], 10, HistogramScale::Linear).unwrap();
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(h.counts.iter().sum::<usize>(), 7);
        let v: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 - 50.0).collect();
        for scale in [HistogramScale::Linear, HistogramScale::Log] {
            let h = Histogram::new(&v, 13, scale).unwrap();
            assert_eq!(h.counts.iter().sum::<usize>(), v.len());
            assert!(h.edges.windows(2).all(|w| w[0] < w[1]));
            assert_eq!(h, Histogram::new(&v, 13, scale).unwrap());
        }
        let h = Histogram::new(&[3.0; 4], 5, HistogramScale::Log).unwrap();
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
    }
}
