//! Jet arithmetic on packed `[value, grad(3), hess upper triangle(6)]` arrays,
//! with the matching reverse-mode adjoints.

use crate::Real;

pub type PackedJet<T> = [T; 10];

/// Index pairs of the packed Hessian entries, in storage order.
pub const HESS_PAIRS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)];

#[inline]
pub(crate) fn add<T: Real>(a: &PackedJet<T>, b: &PackedJet<T>) -> PackedJet<T> {
    let mut c = *a;
    for (x, y) in c.iter_mut().zip(b) {
        *x += *y;
    }
    c
}

#[inline]
pub(crate) fn scale<T: Real>(a: &PackedJet<T>, s: T) -> PackedJet<T> {
    let mut c = *a;
    for x in &mut c {
        *x *= s;
    }
    c
}

#[inline]
pub(crate) fn add_assign<T: Real>(acc: &mut PackedJet<T>, a: &PackedJet<T>) {
    for (x, y) in acc.iter_mut().zip(a) {
        *x += *y;
    }
}

/// Product rule up to second order.
#[inline]
pub(crate) fn mul<T: Real>(a: &PackedJet<T>, b: &PackedJet<T>) -> PackedJet<T> {
    let mut c = [T::zero(); 10];
    c[0] = a[0] * b[0];
    for k in 1..4 {
        c[k] = a[k] * b[0] + a[0] * b[k];
    }
    for (q, &(i, j)) in HESS_PAIRS.iter().enumerate() {
        c[4 + q] =
            a[4 + q] * b[0] + a[1 + i] * b[1 + j] + b[1 + i] * a[1 + j] + a[0] * b[4 + q];
    }
    c
}

/// Adjoint of `mul` with respect to its first argument.
#[inline]
pub(crate) fn mul_adjoint_lhs<T: Real>(
    cbar: &PackedJet<T>,
    b: &PackedJet<T>,
) -> PackedJet<T> {
    let mut abar = [T::zero(); 10];
    abar[0] = cbar[0] * b[0];
    for k in 1..4 {
        abar[0] += cbar[k] * b[k];
        abar[k] = cbar[k] * b[0];
    }
    for (q, &(i, j)) in HESS_PAIRS.iter().enumerate() {
        let hb = cbar[4 + q];
        abar[0] += hb * b[4 + q];
        abar[4 + q] = hb * b[0];
        abar[1 + i] += hb * b[1 + j];
        abar[1 + j] += hb * b[1 + i];
    }
    abar
}

/// Scalar function applied to a jet; `d = (σ, σ', σ'', σ''')` at `a[0]`.
#[inline]
pub(crate) fn unary<T: Real>(a: &PackedJet<T>, d: [T; 4]) -> PackedJet<T> {
    let mut c = [T::zero(); 10];
    c[0] = d[0];
    for k in 1..4 {
        c[k] = d[1] * a[k];
    }
    for (q, &(i, j)) in HESS_PAIRS.iter().enumerate() {
        c[4 + q] = d[2] * a[1 + i] * a[1 + j] + d[1] * a[4 + q];
    }
    c
}

#[inline]
pub(crate) fn unary_adjoint<T: Real>(
    cbar: &PackedJet<T>,
    a: &PackedJet<T>,
    d: [T; 4],
) -> PackedJet<T> {
    let mut abar = [T::zero(); 10];
    abar[0] = d[1] * cbar[0];
    for k in 1..4 {
        abar[k] = d[1] * cbar[k];
        abar[0] += d[2] * cbar[k] * a[k];
    }
    for (q, &(i, j)) in HESS_PAIRS.iter().enumerate() {
        let hb = cbar[4 + q];
        abar[4 + q] = d[1] * hb;
        abar[0] += d[3] * hb * a[1 + i] * a[1 + j] + d[2] * hb * a[4 + q];
        abar[1 + i] += d[2] * hb * a[1 + j];
        abar[1 + j] += d[2] * hb * a[1 + i];
    }
    abar
}
