//! Second-order forward jets through the network with reverse-mode parameter gradients.
//!
//! A jet carries a scalar field value together with its gradient and Hessian with
//! respect to the 3D input point. Forward propagation pushes whole batches of jets
//! through affine layers and activations; [`Tape`] records that pass so parameter
//! gradients of any loss built from (value, gradient, Hessian) can be pulled back
//! exactly, including the mixed third-order terms.

mod activation;
mod layer;
mod norm;
mod packed;
mod tape;

pub use activation::{activation_derivs, activation_derivs3, Activation};
pub use layer::{jet_activate, jet_affine, JetOrder, LayerJets};
pub use norm::group_norm_jets;
pub use packed::{PackedJet, HESS_PAIRS};
pub use tape::{GradAccumulator, Tape};

use crate::Real;

/// Value, input gradient and input Hessian of a scalar field at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet2<T> {
    pub value: T,
    pub gradient: [T; 3],
    pub hessian: [[T; 3]; 3],
}

impl<T: Real> Jet2<T> {
    pub fn new(value: T, gradient: [T; 3], hessian: [[T; 3]; 3]) -> Self {
        Self {
            value,
            gradient,
            hessian,
        }
    }

    pub fn constant(value: T) -> Self {
        Self::new(value, [T::zero(); 3], [[T::zero(); 3]; 3])
    }

    pub fn gradient_norm(&self) -> T {
        let g = self.gradient;
        (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
            && self.gradient.iter().all(|x| x.is_finite())
            && self.hessian.iter().flatten().all(|x| x.is_finite())
    }

    /// Packs into `[value, gx, gy, gz, hxx, hyy, hzz, hxy, hxz, hyz]`.
    /// Only the upper triangle of the Hessian is read.
    pub fn to_packed(&self) -> PackedJet<T> {
        let mut p = [T::zero(); 10];
        p[0] = self.value;
        p[1..4].copy_from_slice(&self.gradient);
        for (q, &(i, j)) in HESS_PAIRS.iter().enumerate() {
            p[4 + q] = self.hessian[i][j];
        }
        p
    }

    pub fn from_packed(p: &PackedJet<T>) -> Self {
        let mut h = [[T::zero(); 3]; 3];
        for (q, &(i, j)) in HESS_PAIRS.iter().enumerate() {
            h[i][j] = p[4 + q];
            h[j][i] = p[4 + q];
        }
        Self::new(p[0], [p[1], p[2], p[3]], h)
    }
}

/// Sensitivity of a scalar loss to one jet.
///
/// `hessian` is the symmetric matrix `G` with `dL = <G, dH>` for symmetric
/// perturbations `dH`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JetAdjoint<T> {
    pub value: T,
    pub gradient: [T; 3],
    pub hessian: [[T; 3]; 3],
}

impl<T: Real> JetAdjoint<T> {
    pub fn zero() -> Self {
        Self {
            value: T::zero(),
            gradient: [T::zero(); 3],
            hessian: [[T::zero(); 3]; 3],
        }
    }

    pub fn scaled(mut self, s: T) -> Self {
        self.value *= s;
        for g in &mut self.gradient {
            *g *= s;
        }
        for h in self.hessian.iter_mut().flatten() {
            *h *= s;
        }
        self
    }

    /// Adjoint with respect to the packed upper-triangle coordinates: the
    /// off-diagonal entries occur twice in the full matrix.
    pub fn to_packed(&self) -> PackedJet<T> {
        let mut p = [T::zero(); 10];
        p[0] = self.value;
        p[1..4].copy_from_slice(&self.gradient);
        for (q, &(i, j)) in HESS_PAIRS.iter().enumerate() {
            p[4 + q] = if i == j {
                self.hessian[i][i]
            } else {
                self.hessian[i][j] + self.hessian[j][i]
            };
        }
        p
    }
}
