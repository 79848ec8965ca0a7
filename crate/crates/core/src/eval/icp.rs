//! Point-to-point ICP with Horn's closed-form rotation per iteration.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kdtree::KdTree;
use crate::spectral::jacobi_eigen;
use crate::{Error, Point3, Result};

/// `x ↦ R x + t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: [[f64; 3]; 3],
    pub translation: Point3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    /// Rotation by `angle` radians about the unit `axis`.
    pub fn from_axis_angle(axis: Point3, angle: f64, translation: Point3) -> Self {
        let (s, c) = angle.sin_cos();
        let u = axis;
        let mut r = [[0.0; 3]; 3];
        let k = [[0.0, -u[2], u[1]], [u[2], 0.0, -u[0]], [-u[1], u[0], 0.0]];
        for i in 0..3 {
            for j in 0..3 {
                r[i][j] = (i == j) as u8 as f64 * c + s * k[i][j] + (1.0 - c) * u[i] * u[j];
            }
        }
        Self {
            rotation: r,
            translation,
        }
    }

    pub fn apply(&self, p: Point3) -> Point3 {
        let r = &self.rotation;
        std::array::from_fn(|i| r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2] + self.translation[i])
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Self) -> Self {
        let mut r = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                r[i][j] = (0..3).map(|k| self.rotation[i][k] * other.rotation[k][j]).sum();
            }
        }
        let t = self.apply(other.translation);
        Self {
            rotation: r,
            translation: t,
        }
    }

    pub fn inverse(&self) -> Self {
        let r = &self.rotation;
        let rt = std::array::from_fn(|i| std::array::from_fn(|j| r[j][i]));
        let t = self.translation;
        let ti = std::array::from_fn(|i| -(0..3).map(|k| rt[i][k] * t[k]).sum::<f64>());
        Self {
            rotation: rt,
            translation: ti,
        }
    }

    /// Frobenius norm of the rotation difference.
    pub fn rotation_error(&self, other: &Self) -> f64 {
        (0..3)
            .flat_map(|i| (0..3).map(move |j| (i, j)))
            .map(|(i, j)| (self.rotation[i][j] - other.rotation[i][j]).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

fn centroid(p: &[Point3]) -> Point3 {
    let n = p.len() as f64;
    let mut c = [0.0; 3];
    for q in p {
        for a in 0..3 {
            c[a] += q[a];
        }
    }
    c.map(|x| x / n)
}

/// Fails unless the points span at least a plane.
fn check_spread(p: &[Point3], what: &str) -> Result<()> {
    if p.len() < 3 {
        return Err(Error::Degenerate(format!("{what} has {} points; ICP needs 3", p.len())));
    }
    let c = centroid(p);
    let mut cov = [[0.0; 3]; 3];
    for q in p {
        let d = [q[0] - c[0], q[1] - c[1], q[2] - c[2]];
        for i in 0..3 {
            for j in 0..3 {
                cov[i][j] += d[i] * d[j];
            }
        }
    }
    let (mut ev, _) = jacobi_eigen(cov);
    ev.sort_by(|a, b| b.total_cmp(a));
    if !(ev[1] > 1e-12 * ev[0].max(f64::MIN_POSITIVE)) {
        return Err(Error::Degenerate(format!("{what} points are collinear or coincident")));
    }
    Ok(())
}

/// Least-squares rigid motion taking `a[i]` onto `b[i]` (Horn's unit
/// quaternion method).
pub fn best_rigid(a: &[Point3], b: &[Point3]) -> RigidTransform {
    let (ca, cb) = (centroid(a), centroid(b));
    let mut s = [[0.0; 3]; 3];
    for (p, q) in a.iter().zip(b) {
        for i in 0..3 {
            for j in 0..3 {
                s[i][j] += (p[i] - ca[i]) * (q[j] - cb[j]);
            }
        }
    }
    let [[sxx, sxy, sxz], [syx, syy, syz], [szx, szy, szz]] = s;
    let n = [
        [sxx + syy + szz, syz - szy, szx - sxz, sxy - syx],
        [syz - szy, sxx - syy - szz, sxy + syx, szx + sxz],
        [szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy],
        [sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz],
    ];
    let (vals, vecs) = jacobi_eigen(n);
    let k = (0..4).fold(0, |m, i| if vals[i] > vals[m] { i } else { m });
    let q = [vecs[0][k], vecs[1][k], vecs[2][k], vecs[3][k]];
    let len = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|c| c / len);
    let rotation = [
        [w * w + x * x - y * y - z * z, 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), w * w - x * x + y * y - z * z, 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), w * w - x * x - y * y + z * z],
    ];
    let mut t = RigidTransform {
        rotation,
        translation: [0.0; 3],
    };
    let rc = t.apply(ca);
    t.translation = [cb[0] - rc[0], cb[1] - rc[1], cb[2] - rc[2]];
    t
}

#[derive(Clone, Debug, PartialEq)]
pub struct IcpResult {
    pub transform: RigidTransform,
    /// Mean squared closest-point distance before the first and after every
    /// accepted iteration; non-increasing.
    pub residuals: Vec<f64>,
}

fn matches(tree: &KdTree, dst: &[Point3], moved: &[Point3]) -> (Vec<Point3>, f64) {
    let found: Vec<(usize, f64)> = moved
        .par_iter()
        .map(|p| tree.nearest(p).expect("non-empty target"))
        .collect();
    let mse = found.iter().map(|m| m.1).sum::<f64>() / moved.len() as f64;
    (found.iter().map(|m| dst[m.0]).collect(), mse)
}

/// Rigid motion moving `src` onto `dst`, from the identity, for at most
/// `iters` iterations. Stops early when the residual stops decreasing.
pub fn icp_align(src: &[Point3], dst: &[Point3], iters: usize) -> Result<IcpResult> {
    check_spread(src, "source")?;
    check_spread(dst, "target")?;
    let tree = KdTree::new(dst);
    let mut transform = RigidTransform::identity();
    let moved: Vec<Point3> = src.to_vec();
    let (mut target, mut residual) = matches(&tree, dst, &moved);
    let mut residuals = vec![residual];
    for _ in 0..iters {
        let candidate = best_rigid(src, &target);
        let moved: Vec<Point3> = src.iter().map(|&p| candidate.apply(p)).collect();
        let (next_target, next) = matches(&tree, dst, &moved);
        if !(next <= residual) {
            break;
        }
        let converged = residual - next <= 1e-15 * residual.max(1e-300) && candidate.rotation_error(&transform) < 1e-14;
        transform = candidate;
        target = next_target;
        residual = next;
        residuals.push(residual);
        if converged || residual == 0.0 {
            break;
        }
    }
    Ok(IcpResult { transform, residuals })
}
