//! Closed-form curvature of an implicit surface from a point's 2-jet.
//!
//! `K = −det(Ĥ) / |∇f|⁴` with `Ĥ = [[H, ∇fᵀ], [∇f, 0]]` and
//! `det(Ĥ) = −∇f · Cof(H) · ∇fᵀ`; `M = (∇f·H·∇fᵀ − |∇f|²·tr H) / (2|∇f|³)`;
//! principal curvatures `M ± √(M² − K)`.

use crate::jet::Jet2;
use crate::{Error, Real, Result};

/// Gradient norms at or below this are treated as singular points.
pub const GRADIENT_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvatureSample<T> {
    /// Gaussian curvature.
    pub k: T,
    /// Mean curvature.
    pub m: T,
    pub k1: T,
    pub k2: T,
    /// `min(|k1|, |k2|)`.
    pub k_min: T,
    /// The discriminant `M² − K` was negative and clamped to zero.
    pub clamped: bool,
}

/// The 4×4 bordered Hessian `[[H, ∇fᵀ], [∇f, 0]]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BorderedHessian<T>(pub [[T; 4]; 4]);

impl<T: Real> BorderedHessian<T> {
    pub fn from_jet(j: &Jet2<T>) -> Self {
        let mut m = [[T::zero(); 4]; 4];
        for i in 0..3 {
            for k in 0..3 {
                m[i][k] = j.hessian[i][k];
            }
            m[i][3] = j.gradient[i];
            m[3][i] = j.gradient[i];
        }
        Self(m)
    }

    /// Determinant by Gaussian elimination with partial pivoting.
    pub fn determinant(&self) -> T {
        let mut a = self.0;
        let mut det = T::one();
        for col in 0..4 {
            let pivot = (col..4)
                .max_by(|&r, &s| a[r][col].abs().partial_cmp(&a[s][col].abs()).unwrap())
                .unwrap();
            if a[pivot][col] == T::zero() {
                return T::zero();
            }
            if pivot != col {
                a.swap(pivot, col);
                det = -det;
            }
            det *= a[col][col];
            for r in col + 1..4 {
                let f = a[r][col] / a[col][col];
                for c in col..4 {
                    let v = a[col][c];
                    a[r][c] -= f * v;
                }
            }
        }
        det
    }
}

/// Cofactor matrix of a symmetric 3×3 matrix (symmetric itself).
pub fn cofactor3<T: Real>(h: &[[T; 3]; 3]) -> [[T; 3]; 3] {
    let (a, b, c) = (h[0][0], h[1][1], h[2][2]);
    let (d, e, f) = (h[0][1], h[0][2], h[1][2]);
    let xy = e * f - c * d;
    let xz = d * f - b * e;
    let yz = d * e - a * f;
    [
        [b * c - f * f, xy, xz],
        [xy, a * c - e * e, yz],
        [xz, yz, a * b - d * d],
    ]
}

/// `det(Ĥ)` through the cofactor identity.
pub fn bordered_det<T: Real>(j: &Jet2<T>) -> T {
    let c = cofactor3(&j.hessian);
    let g = j.gradient;
    let mut q = T::zero();
    for i in 0..3 {
        for k in 0..3 {
            q += g[i] * c[i][k] * g[k];
        }
    }
    -q
}

fn checked_norm<T: Real>(j: &Jet2<T>) -> Result<T> {
    let n = j.gradient_norm();
    if !(n > T::lit(GRADIENT_FLOOR)) {
        return Err(Error::SingularPoint {
            norm: n.as_f64(),
            floor: GRADIENT_FLOOR,
        });
    }
    Ok(n)
}

pub fn gauss_k<T: Real>(j: &Jet2<T>) -> Result<T> {
    let n = checked_norm(j)?;
    let n2 = n * n;
    Ok(-bordered_det(j) / (n2 * n2))
}

pub fn mean_m<T: Real>(j: &Jet2<T>) -> Result<T> {
    let n = checked_norm(j)?;
    Ok(mean_unchecked(j, n))
}

fn mean_unchecked<T: Real>(j: &Jet2<T>, n: T) -> T {
    let (g, h) = (j.gradient, j.hessian);
    let mut ghg = T::zero();
    for i in 0..3 {
        for k in 0..3 {
            ghg += g[i] * h[i][k] * g[k];
        }
    }
    let trace = h[0][0] + h[1][1] + h[2][2];
    (ghg - n * n * trace) / (T::lit(2.0) * n * n * n)
}

/// `|k1 − k2| / 2`, the square root of `M² − K`, taken from the Hessian
/// restricted to the tangent plane. Forming `M² − K` directly loses half the
/// significant digits near umbilic points.
fn half_spread<T: Real>(j: &Jet2<T>, n: T) -> T {
    let u = j.gradient.map(|g| g / n);
    // Frisvad-style tangent frame, branch-free except for the pole flip
    let s = if u[2] < T::zero() { -T::one() } else { T::one() };
    let a = -T::one() / (s + u[2]);
    let b = u[0] * u[1] * a;
    let t1 = [T::one() + s * u[0] * u[0] * a, s * b, -s * u[0]];
    let t2 = [b, s + u[1] * u[1] * a, -u[1]];
    let form = |x: [T; 3], y: [T; 3]| -> T {
        let mut acc = T::zero();
        for r in 0..3 {
            for c in 0..3 {
                acc += x[r] * j.hessian[r][c] * y[c];
            }
        }
        acc / n
    };
    let (h11, h12, h22) = (form(t1, t1), form(t1, t2), form(t2, t2));
    ((h11 - h22) / T::lit(2.0)).hypot(h12)
}

pub fn principal<T: Real>(j: &Jet2<T>) -> Result<CurvatureSample<T>> {
    let n = checked_norm(j)?;
    let n2 = n * n;
    let k = -bordered_det(j) / (n2 * n2);
    let m = mean_unchecked(j, n);
    let clamped = m * m - k < T::zero();
    let root = half_spread(j, n);
    let (k1, k2) = (m + root, m - root);
    Ok(CurvatureSample {
        k,
        m,
        k1,
        k2,
        k_min: k1.abs().min(k2.abs()),
        clamped,
    })
}
