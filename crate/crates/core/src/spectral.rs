//! Eigendecomposition of small symmetric matrices.
//!
//! 3×3 matrices use the trigonometric closed form with cross-product
//! eigenvectors; when that result fails its own orthonormality and
//! reconstruction checks (clustered eigenvalues, mostly) the cyclic Jacobi
//! method takes over. Jacobi is also used directly for other sizes.

use crate::Real;

/// Singular values of a symmetric 3×3 matrix with its eigenbasis.
///
/// `sigma[i] = |eigenvalues[i]|`, sorted descending; `vectors[i]` is the unit
/// eigenvector of `eigenvalues[i]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SingularSpectrum<T> {
    pub sigma: [T; 3],
    pub eigenvalues: [T; 3],
    pub vectors: [[T; 3]; 3],
}

impl<T: Real> SingularSpectrum<T> {
    /// `Σ w_i v_i v_iᵀ`.
    pub fn weighted_projector(&self, w: [T; 3]) -> [[T; 3]; 3] {
        let mut out = [[T::zero(); 3]; 3];
        for (v, wi) in self.vectors.iter().zip(w) {
            for r in 0..3 {
                for c in 0..3 {
                    out[r][c] += wi * v[r] * v[c];
                }
            }
        }
        out
    }

    /// `V·diag(λ)·Vᵀ`.
    pub fn reconstruct(&self) -> [[T; 3]; 3] {
        self.weighted_projector(self.eigenvalues)
    }
}

pub fn spectrum<T: Real>(h: &[[T; 3]; 3]) -> SingularSpectrum<T> {
    let (values, vectors) = match closed_form(h) {
        Some(ev) => ev,
        None => {
            let (vals, v) = jacobi_eigen(*h);
            // columns of v are eigenvectors
            let vecs = std::array::from_fn(|i| [v[0][i], v[1][i], v[2][i]]);
            (vals, vecs)
        }
    };
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| values[b].abs().partial_cmp(&values[a].abs()).unwrap_or(std::cmp::Ordering::Equal));
    SingularSpectrum {
        sigma: order.map(|i| values[i].abs()),
        eigenvalues: order.map(|i| values[i]),
        vectors: order.map(|i| vectors[i]),
    }
}

fn cross<T: Real>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot<T: Real>(a: [T; 3], b: [T; 3]) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn closed_form<T: Real>(a: &[[T; 3]; 3]) -> Option<([T; 3], [[T; 3]; 3])> {
    let zero = T::zero();
    let one = T::one();
    let scale = a.iter().flatten().fold(zero, |m, x| m.max(x.abs()));
    if scale == zero {
        return Some(([zero; 3], [[one, zero, zero], [zero, one, zero], [zero, zero, one]]));
    }
    let off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
    if off == zero {
        let vals = [a[0][0], a[1][1], a[2][2]];
        return Some((vals, [[one, zero, zero], [zero, one, zero], [zero, zero, one]]));
    }
    let three = T::lit(3.0);
    let q = (a[0][0] + a[1][1] + a[2][2]) / three;
    let d = [a[0][0] - q, a[1][1] - q, a[2][2] - q];
    let p2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2] + T::lit(2.0) * off;
    let p = (p2 / T::lit(6.0)).sqrt();
    let b = [
        [d[0] / p, a[0][1] / p, a[0][2] / p],
        [a[1][0] / p, d[1] / p, a[1][2] / p],
        [a[2][0] / p, a[2][1] / p, d[2] / p],
    ];
    let det_b = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1])
        - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
        + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
    let r = (det_b / T::lit(2.0)).max(-one).min(one);
    let phi = r.acos() / three;
    let two_p = T::lit(2.0) * p;
    let l1 = q + two_p * phi.cos();
    let l3 = q + two_p * (phi + T::lit(2.0) * T::PI() / three).cos();
    let l2 = three * q - l1 - l3;
    let vals = [l1, l2, l3];

    let mut vecs = [[zero; 3]; 3];
    for (v, &l) in vecs.iter_mut().zip(&vals) {
        let rows = [
            [a[0][0] - l, a[0][1], a[0][2]],
            [a[1][0], a[1][1] - l, a[1][2]],
            [a[2][0], a[2][1], a[2][2] - l],
        ];
        let cands = [cross(rows[0], rows[1]), cross(rows[0], rows[2]), cross(rows[1], rows[2])];
        let best = cands
            .iter()
            .copied()
            .max_by(|x, y| dot(*x, *x).partial_cmp(&dot(*y, *y)).unwrap_or(std::cmp::Ordering::Equal))?;
        let n = dot(best, best).sqrt();
        if !(n > zero) || !n.is_finite() {
            return None;
        }
        *v = best.map(|x| x / n);
    }

    // accept only if orthonormal and reconstructing to near machine precision
    let tol = T::epsilon() * T::lit(64.0);
    for i in 0..3 {
        for k in 0..3 {
            let target = if i == k { one } else { zero };
            if (dot(vecs[i], vecs[k]) - target).abs() > tol {
                return None;
            }
        }
    }
    for r in 0..3 {
        for c in 0..3 {
            let rec: T = (0..3).map(|i| vals[i] * vecs[i][r] * vecs[i][c]).sum();
            if (rec - a[r][c]).abs() > tol * scale {
                return None;
            }
        }
    }
    Some((vals, vecs))
}

/// Cyclic Jacobi eigendecomposition of a symmetric `N×N` matrix.
///
/// Returns eigenvalues (unsorted) and the matrix whose columns are the
/// corresponding orthonormal eigenvectors.
pub fn jacobi_eigen<T: Real, const N: usize>(mut a: [[T; N]; N]) -> ([T; N], [[T; N]; N]) {
    let mut v = [[T::zero(); N]; N];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = T::one();
    }
    for _sweep in 0..64 {
        let off: T = (0..N)
            .flat_map(|i| (0..N).filter(move |&k| k != i).map(move |k| (i, k)))
            .map(|(i, k)| a[i][k] * a[i][k])
            .sum();
        let diag: T = (0..N).map(|i| a[i][i] * a[i][i]).sum();
        if off <= T::epsilon() * T::epsilon() * diag || off == T::zero() {
            break;
        }
        for p in 0..N {
            for q in p + 1..N {
                if a[p][q] == T::zero() {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (T::lit(2.0) * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..N {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..N {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vkp = row[p];
                    let vkq = row[q];
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    (std::array::from_fn(|i| a[i][i]), v)
}
