//! Point evaluators shared by the mesher, the evaluator and the analytic test shapes.

use crate::jet::Jet2;
use crate::Real;

/// A scalar field over 3D space.
pub trait ScalarField<T: Real>: Sync {
    fn value(&self, p: [T; 3]) -> T;

    /// Batched evaluation; implementations may vectorize.
    fn values(&self, points: &[[T; 3]]) -> Vec<T> {
        points.iter().map(|&p| self.value(p)).collect()
    }
}

/// A field that also exposes its input gradient and Hessian.
pub trait JetField<T: Real>: ScalarField<T> {
    fn jet(&self, p: [T; 3]) -> Jet2<T>;

    fn jets(&self, points: &[[T; 3]]) -> Vec<Jet2<T>> {
        points.iter().map(|&p| self.jet(p)).collect()
    }
}

/// Wraps a closure as a [`ScalarField`].
pub struct FnField<F>(pub F);

impl<T: Real, F: Fn([T; 3]) -> T + Sync> ScalarField<T> for FnField<F> {
    fn value(&self, p: [T; 3]) -> T {
        (self.0)(p)
    }
}

/// Wraps a jet-valued closure as a [`JetField`].
pub struct FnJetField<F>(pub F);

impl<T: Real, F: Fn([T; 3]) -> Jet2<T> + Sync> ScalarField<T> for FnJetField<F> {
    fn value(&self, p: [T; 3]) -> T {
        (self.0)(p).value
    }
}

impl<T: Real, F: Fn([T; 3]) -> Jet2<T> + Sync> JetField<T> for FnJetField<F> {
    fn jet(&self, p: [T; 3]) -> Jet2<T> {
        (self.0)(p)
    }
}
