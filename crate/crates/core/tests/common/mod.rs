//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use devimplicit::jet::Activation;
use devimplicit::mlp::{Init, MlpParams, NetworkConfig, Normalization};
use devimplicit::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_point(rng: &mut ChaCha8Rng, r: f64) -> Point3 {
    [rng.random_range(-r..r), rng.random_range(-r..r), rng.random_range(-r..r)]
}

pub fn net(depth: usize, width: usize, activation: Activation, normalization: Normalization, seed: u64) -> MlpParams<f64> {
    MlpParams::init(&NetworkConfig {
        depth,
        width,
        activation,
        normalization,
        init: Init::Uniform,
        seed,
    })
    .unwrap()
}

/// Norm-wise relative error `‖a − b‖ / max(‖b‖, floor)`.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let n: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    d / n.max(floor)
}

/// Central-difference gradient of a scalar function of a point.
pub fn fd_gradient(f: impl Fn(Point3) -> f64, p: Point3, h: f64) -> [f64; 3] {
    std::array::from_fn(|a| {
        let (mut pp, mut pm) = (p, p);
        pp[a] += h;
        pm[a] -= h;
        (f(pp) - f(pm)) / (2.0 * h)
    })
}

/// Second central differences of values only.
pub fn fd_hessian(f: impl Fn(Point3) -> f64, p: Point3, h: f64) -> [[f64; 3]; 3] {
    let at = |d: [f64; 3]| f([p[0] + d[0], p[1] + d[1], p[2] + d[2]]);
    let f0 = f(p);
    let mut out = [[0.0; 3]; 3];
    for a in 0..3 {
        let mut e = [0.0; 3];
        e[a] = h;
        out[a][a] = (at(e) - 2.0 * f0 + at(e.map(|x| -x))) / (h * h);
        for b in a + 1..3 {
            let mut pp = [0.0; 3];
            pp[a] = h;
            pp[b] = h;
            let mut pm = pp;
            pm[b] = -h;
            let mp = pm.map(|x| -x);
            let mm = pp.map(|x| -x);
            let v = (at(pp) - at(pm) - at(mp) + at(mm)) / (4.0 * h * h);
            out[a][b] = v;
            out[b][a] = v;
        }
    }
    out
}

/// Central differences of `loss` over every network parameter.
pub fn fd_params(params: &MlpParams<f64>, loss: impl Fn(&MlpParams<f64>) -> f64, h: f64) -> Vec<f64> {
    let mut p = params.clone();
    (0..params.num_params())
        .map(|k| {
            let orig = *p.param_mut(k);
            *p.param_mut(k) = orig + h;
            let up = loss(&p);
            *p.param_mut(k) = orig - h;
            let down = loss(&p);
            *p.param_mut(k) = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Eigenvalues of a symmetric 3×3 matrix from the characteristic cubic,
/// independent of the crate's solver.
pub fn sym_eigenvalues(m: &[[f64; 3]; 3]) -> [f64; 3] {
    let p1 = m[0][1].powi(2) + m[0][2].powi(2) + m[1][2].powi(2);
    let q = (m[0][0] + m[1][1] + m[2][2]) / 3.0;
    let p2 = (m[0][0] - q).powi(2) + (m[1][1] - q).powi(2) + (m[2][2] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    if p == 0.0 {
        return [q; 3];
    }
    let b: [[f64; 3]; 3] =
        std::array::from_fn(|i| std::array::from_fn(|j| (m[i][j] - if i == j { q } else { 0.0 }) / p));
    let det = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1]) - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
        + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
    let phi = (det / 2.0).clamp(-1.0, 1.0).acos() / 3.0;
    let e1 = q + 2.0 * p * phi.cos();
    let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
    [e1, 3.0 * q - e1 - e3, e3]
}

/// Smallest gap between sorted singular values, or the smallest singular
/// value if that is smaller.
pub fn spectral_margin(m: &[[f64; 3]; 3]) -> f64 {
    let mut s = sym_eigenvalues(m).map(f64::abs);
    s.sort_by(|a, b| b.total_cmp(a));
    (s[0] - s[1]).min(s[1] - s[2]).min(s[2])
}

/// 4×4 determinant by cofactor expansion along the last row.
pub fn det4(m: [[f64; 4]; 4]) -> f64 {
    let minor = |skip_c: usize| -> f64 {
        let cols: Vec<usize> = (0..4).filter(|&c| c != skip_c).collect();
        let a = |i: usize, j: usize| m[i][cols[j]];
        a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1)) - a(0, 1) * (a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0))
            + a(0, 2) * (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0))
    };
    (0..4)
        .map(|c| if (3 + c) % 2 == 0 { 1.0 } else { -1.0 } * m[3][c] * minor(c))
        .sum()
}

/// Bidirectional squared Chamfer sum by exhaustive search.
pub fn brute_chamfer(a: &[Point3], b: &[Point3]) -> f64 {
    let side = |x: &[Point3], y: &[Point3]| -> f64 {
        x.iter()
            .map(|p| {
                y.iter()
                    .map(|q| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2))
                    .fold(f64::INFINITY, f64::min)
            })
            .sum()
    };
    side(a, b) + side(b, a)
}
