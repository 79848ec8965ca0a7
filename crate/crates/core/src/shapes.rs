//! Analytic signed-distance shapes with exact jets and oriented surface
//! sampling. Used as fixtures, curvature oracles and ground truth.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::field::{JetField, ScalarField};
use crate::jet::Jet2;
use crate::sampling::PointCloud;
use crate::{Point3, Result};

pub trait AnalyticShape: JetField<f64> {
    /// Total surface area.
    fn area(&self) -> f64;

    /// One area-uniform surface point with its outward normal.
    fn sample_surface_point(&self, rng: &mut ChaCha8Rng) -> (Point3, Point3);

    /// `n` area-uniform oriented surface samples, deterministic in `seed`.
    fn sample_cloud(&self, n: usize, seed: u64) -> Result<PointCloud> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (points, normals) = (0..n).map(|_| self.sample_surface_point(&mut rng)).unzip();
        PointCloud::new(points, normals)
    }
}

fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(a: Point3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

fn random_direction(rng: &mut ChaCha8Rng) -> Point3 {
    loop {
        let d: Point3 = std::array::from_fn(|_| rng.sample(StandardNormal));
        let n = norm(d);
        if n > 1e-12 {
            return d.map(|c| c / n);
        }
    }
}

/// Jet of `|d| − r` where `d` is `p` minus a point that only moves along the
/// axes masked out by `active`: gradient `u`, Hessian `(I − uuᵀ)/|d|` on the
/// active block.
fn distance_jet(d: Point3, active: [bool; 3], r: f64) -> Jet2<f64> {
    let d = [0, 1, 2].map(|a| if active[a] { d[a] } else { 0.0 });
    let len = norm(d);
    let u = d.map(|c| c / len);
    let mut h = [[0.0; 3]; 3];
    for i in 0..3 {
        for k in 0..3 {
            if active[i] && active[k] {
                h[i][k] = ((i == k) as u8 as f64 - u[i] * u[k]) / len;
            }
        }
    }
    Jet2::new(len - r, u, h)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sphere {
    pub center: Point3,
    pub radius: f64,
}

impl Sphere {
    pub fn new(radius: f64) -> Self {
        Self {
            center: [0.0; 3],
            radius,
        }
    }
}

impl ScalarField<f64> for Sphere {
    fn value(&self, p: Point3) -> f64 {
        norm(sub(p, self.center)) - self.radius
    }
}

impl JetField<f64> for Sphere {
    fn jet(&self, p: Point3) -> Jet2<f64> {
        distance_jet(sub(p, self.center), [true; 3], self.radius)
    }
}

impl AnalyticShape for Sphere {
    fn area(&self) -> f64 {
        4.0 * PI * self.radius * self.radius
    }

    fn sample_surface_point(&self, rng: &mut ChaCha8Rng) -> (Point3, Point3) {
        let n = random_direction(rng);
        let c = self.center;
        ([0, 1, 2].map(|a| c[a] + self.radius * n[a]), n)
    }
}

/// Infinite cylinder about the z axis; sampling covers `|z| ≤ half_height`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cylinder {
    pub radius: f64,
    pub half_height: f64,
}

impl ScalarField<f64> for Cylinder {
    fn value(&self, p: Point3) -> f64 {
        p[0].hypot(p[1]) - self.radius
    }
}

impl JetField<f64> for Cylinder {
    fn jet(&self, p: Point3) -> Jet2<f64> {
        distance_jet(p, [true, true, false], self.radius)
    }
}

impl AnalyticShape for Cylinder {
    fn area(&self) -> f64 {
        2.0 * PI * self.radius * 2.0 * self.half_height
    }

    fn sample_surface_point(&self, rng: &mut ChaCha8Rng) -> (Point3, Point3) {
        let t = rng.random_range(0.0..2.0 * PI);
        let z = rng.random_range(-self.half_height..=self.half_height);
        let (s, c) = t.sin_cos();
        ([self.radius * c, self.radius * s, z], [c, s, 0.0])
    }
}

/// `n · p = offset` with unit `n`; sampling covers a square patch of the given
/// half size around the foot point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Plane {
    pub normal: Point3,
    pub offset: f64,
    pub half_size: f64,
}

impl Plane {
    fn basis(&self) -> (Point3, Point3) {
        let n = self.normal;
        let helper = if n[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
        let t = cross(n, helper);
        let t = t.map(|c| c / norm(t));
        (t, cross(n, t))
    }
}

fn cross(a: Point3, b: Point3) -> Point3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

impl ScalarField<f64> for Plane {
    fn value(&self, p: Point3) -> f64 {
        let n = self.normal;
        n[0] * p[0] + n[1] * p[1] + n[2] * p[2] - self.offset
    }
}

impl JetField<f64> for Plane {
    fn jet(&self, p: Point3) -> Jet2<f64> {
        Jet2::new(self.value(p), self.normal, [[0.0; 3]; 3])
    }
}

impl AnalyticShape for Plane {
    fn area(&self) -> f64 {
        4.0 * self.half_size * self.half_size
    }

    fn sample_surface_point(&self, rng: &mut ChaCha8Rng) -> (Point3, Point3) {
        let (t, b) = self.basis();
        let (u, v) = (
            rng.random_range(-self.half_size..=self.half_size),
            rng.random_range(-self.half_size..=self.half_size),
        );
        let n = self.normal;
        let p = [0, 1, 2].map(|a| self.offset * n[a] + u * t[a] + v * b[a]);
        (p, n)
    }
}

/// Segment from `(0, 0, −half_length)` to `(0, 0, half_length)` swept by a
/// ball: a cylinder closed by two hemispheres.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Capsule {
    pub radius: f64,
    pub half_length: f64,
}

impl Capsule {
    fn closest_on_axis(&self, p: Point3) -> (f64, bool) {
        let z = p[2].clamp(-self.half_length, self.half_length);
        (z, p[2].abs() < self.half_length)
    }
}

impl ScalarField<f64> for Capsule {
    fn value(&self, p: Point3) -> f64 {
        let (z, _) = self.closest_on_axis(p);
        norm([p[0], p[1], p[2] - z]) - self.radius
    }
}

impl JetField<f64> for Capsule {
    fn jet(&self, p: Point3) -> Jet2<f64> {
        let (z, side) = self.closest_on_axis(p);
        distance_jet([p[0], p[1], p[2] - z], [true, true, !side], self.radius)
    }
}

impl AnalyticShape for Capsule {
    fn area(&self) -> f64 {
        4.0 * PI * self.radius * (self.radius + self.half_length)
    }

    fn sample_surface_point(&self, rng: &mut ChaCha8Rng) -> (Point3, Point3) {
        let side = 4.0 * PI * self.radius * self.half_length;
        if rng.random_range(0.0..self.area()) < side {
            let t = rng.random_range(0.0..2.0 * PI);
            let z = rng.random_range(-self.half_length..=self.half_length);
            let (s, c) = t.sin_cos();
            ([self.radius * c, self.radius * s, z], [c, s, 0.0])
        } else {
            let n = random_direction(rng);
            let cz = self.half_length.copysign(n[2]);
            ([self.radius * n[0], self.radius * n[1], cz + self.radius * n[2]], n)
        }
    }
}

/// Box with half extents `half_extents` inflated by `radius`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoundedBox {
    pub half_extents: Point3,
    pub radius: f64,
}

impl RoundedBox {
    pub fn cube(half_extent: f64, radius: f64) -> Self {
        Self {
            half_extents: [half_extent; 3],
            radius,
        }
    }

    fn q(&self, p: Point3) -> Point3 {
        [0, 1, 2].map(|a| p[a].abs() - self.half_extents[a])
    }

    fn pieces(&self) -> [f64; 3] {
        let [bx, by, bz] = self.half_extents;
        let r = self.radius;
        let faces = 8.0 * (bx * by + by * bz + bx * bz);
        let edges = 4.0 * (bx + by + bz) * 2.0 * PI * r / 4.0 * 2.0;
        let corners = 4.0 * PI * r * r;
        [faces, edges, corners]
    }
}

impl ScalarField<f64> for RoundedBox {
    fn value(&self, p: Point3) -> f64 {
        let q = self.q(p);
        let outside = norm(q.map(|c| c.max(0.0)));
        let inside = q[0].max(q[1]).max(q[2]).min(0.0);
        outside + inside - self.radius
    }
}

impl JetField<f64> for RoundedBox {
    fn jet(&self, p: Point3) -> Jet2<f64> {
        let q = self.q(p);
        let active = q.map(|c| c > 0.0);
        if active.iter().any(|&a| a) {
            let d = [0, 1, 2].map(|a| q[a].copysign(p[a]));
            return distance_jet(d, active, self.radius);
        }
        let a = (0..3).fold(0, |m, i| if q[i] > q[m] { i } else { m });
        let mut g = [0.0; 3];
        g[a] = 1.0f64.copysign(p[a]);
        Jet2::new(q[a] - self.radius, g, [[0.0; 3]; 3])
    }
}

impl AnalyticShape for RoundedBox {
    fn area(&self) -> f64 {
        self.pieces().iter().sum()
    }

    fn sample_surface_point(&self, rng: &mut ChaCha8Rng) -> (Point3, Point3) {
        let b = self.half_extents;
        let r = self.radius;
        let [faces, edges, _] = self.pieces();
        let pick = rng.random_range(0.0..self.area());
        let sign = |rng: &mut ChaCha8Rng| if rng.random::<bool>() { 1.0 } else { -1.0 };
        let span = |rng: &mut ChaCha8Rng, h: f64| if h > 0.0 { rng.random_range(-h..=h) } else { 0.0 };
        if pick < faces {
            // face areas are proportional to the product of the other two extents
            let w = [b[1] * b[2], b[0] * b[2], b[0] * b[1]];
            let t = rng.random_range(0.0..w.iter().sum::<f64>());
            let a = if t < w[0] { 0 } else if t < w[0] + w[1] { 1 } else { 2 };
            let s = sign(rng);
            let mut p = [0, 1, 2].map(|k| span(rng, b[k]));
            p[a] = s * (b[a] + r);
            let mut n = [0.0; 3];
            n[a] = s;
            (p, n)
        } else if pick < faces + edges {
            let t = rng.random_range(0.0..b.iter().sum::<f64>());
            let a = if t < b[0] { 0 } else if t < b[0] + b[1] { 1 } else { 2 };
            let (c, d) = ((a + 1) % 3, (a + 2) % 3);
            let (sc, sd) = (sign(rng), sign(rng));
            let (sn, cs) = rng.random_range(0.0..=PI / 2.0).sin_cos();
            let mut p = [0.0; 3];
            let mut n = [0.0; 3];
            p[a] = span(rng, b[a]);
            p[c] = sc * (b[c] + r * cs);
            p[d] = sd * (b[d] + r * sn);
            n[c] = sc * cs;
            n[d] = sd * sn;
            (p, n)
        } else {
            let u = random_direction(rng);
            let n = [0, 1, 2].map(|k| u[k].abs() * sign(rng));
            let p = [0, 1, 2].map(|k| (b[k] + r * n[k].abs()).copysign(n[k]));
            (p, n)
        }
    }
}
