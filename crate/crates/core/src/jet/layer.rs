use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::activation::{activation_derivs3, Activation};
use super::packed::HESS_PAIRS;
use super::Jet2;
use crate::{Error, Real, Result};

/// How many derivative channels a forward pass carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum JetOrder {
    /// Value only.
    Value,
    /// Value and input gradient.
    Gradient,
    /// Value, gradient and Hessian.
    Hessian,
}

impl JetOrder {
    pub const fn channels(self) -> usize {
        match self {
            JetOrder::Value => 1,
            JetOrder::Gradient => 4,
            JetOrder::Hessian => 10,
        }
    }
}

/// Jets of every unit of one layer for a batch of points.
///
/// Stored as a `units × (channels·batch)` matrix: channel `c` of sample `s`
/// lives in column `c·batch + s`, with channels ordered as in
/// [`PackedJet`](super::PackedJet). Affine maps therefore act on all channels
/// with a single matrix product.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerJets<T> {
    pub(crate) order: JetOrder,
    pub(crate) batch: usize,
    pub(crate) data: Array2<T>,
}

impl<T: Real> LayerJets<T> {
    pub fn zeros(units: usize, batch: usize, order: JetOrder) -> Self {
        Self {
            order,
            batch,
            data: Array2::zeros((units, order.channels() * batch)),
        }
    }

    /// Raw coordinates as jets: value `p`, gradient rows of the identity, zero Hessian.
    pub fn from_points(points: &[[T; 3]], order: JetOrder) -> Self {
        let b = points.len();
        let mut out = Self::zeros(3, b, order);
        for (s, p) in points.iter().enumerate() {
            for a in 0..3 {
                out.data[[a, s]] = p[a];
                if order >= JetOrder::Gradient {
                    out.data[[a, (1 + a) * b + s]] = T::one();
                }
            }
        }
        out
    }

    pub fn units(&self) -> usize {
        self.data.nrows()
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn order(&self) -> JetOrder {
        self.order
    }

    pub fn data(&self) -> ArrayView2<'_, T> {
        self.data.view()
    }

    /// Values of one unit across the batch.
    pub fn values(&self, unit: usize) -> ArrayView1<'_, T> {
        self.data.slice(s![unit, 0..self.batch])
    }

    pub fn channel(&self, unit: usize, channel: usize, sample: usize) -> T {
        self.data[[unit, channel * self.batch + sample]]
    }

    pub fn set_channel(&mut self, unit: usize, channel: usize, sample: usize, v: T) {
        let b = self.batch;
        self.data[[unit, channel * b + sample]] = v;
    }

    /// Jet of one unit at one sample; channels above `order` read as zero.
    pub fn jet(&self, unit: usize, sample: usize) -> Jet2<T> {
        let mut p = [T::zero(); 10];
        for (c, v) in p.iter_mut().enumerate().take(self.order.channels()) {
            *v = self.channel(unit, c, sample);
        }
        Jet2::from_packed(&p)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// `z = W·x + b` on every channel; the bias only shifts values.
pub fn jet_affine<T: Real>(
    weight: &Array2<T>,
    bias: &Array1<T>,
    input: &LayerJets<T>,
) -> Result<LayerJets<T>> {
    if weight.ncols() != input.units() || weight.nrows() != bias.len() {
        return Err(Error::Dimension(format!(
            "affine {}x{} with bias {} applied to {} units",
            weight.nrows(),
            weight.ncols(),
            bias.len(),
            input.units()
        )));
    }
    let b = input.batch;
    let mut data = Array2::zeros((weight.nrows(), input.data.ncols()));
    general_mat_mul(T::one(), weight, &input.data, T::zero(), &mut data);
    for (mut row, &bk) in data.rows_mut().into_iter().zip(bias.iter()) {
        for v in row.slice_mut(s![0..b]) {
            *v += bk;
        }
    }
    Ok(LayerJets {
        order: input.order,
        batch: b,
        data,
    })
}

/// Elementwise activation with the second-order chain rule
/// `H' = σ''·g gᵀ + σ'·H`.
pub fn jet_activate<T: Real>(kind: Activation, input: &LayerJets<T>) -> LayerJets<T> {
    let b = input.batch;
    let ch = input.order.channels();
    let mut data = Array2::zeros(input.data.raw_dim());
    for (src, mut dst) in input.data.rows().into_iter().zip(data.rows_mut()) {
        let src = src.as_slice().expect("row-major layer jets");
        let dst = dst.as_slice_mut().expect("row-major layer jets");
        for s in 0..b {
            let [v, d1, d2, _] = activation_derivs3(kind, src[s]);
            dst[s] = v;
            if ch >= 4 {
                let g = [src[b + s], src[2 * b + s], src[3 * b + s]];
                for a in 0..3 {
                    dst[(1 + a) * b + s] = d1 * g[a];
                }
                if ch == 10 {
                    for (q, &(i, j)) in HESS_PAIRS.iter().enumerate() {
                        let at = (4 + q) * b + s;
                        dst[at] = d2 * g[i] * g[j] + d1 * src[at];
                    }
                }
            }
        }
    }
    LayerJets {
        order: input.order,
        batch: b,
        data,
    }
}

/// Pulls an adjoint back through [`jet_activate`]; `pre` is the activation input.
pub(crate) fn activate_backward<T: Real>(
    kind: Activation,
    pre: &LayerJets<T>,
    adj_out: &Array2<T>,
) -> Array2<T> {
    let b = pre.batch;
    let ch = pre.order.channels();
    let mut adj_in = Array2::zeros(pre.data.raw_dim());
    let rows = pre.data.rows().into_iter().zip(adj_out.rows()).zip(adj_in.rows_mut());
    for ((src, abar), mut out) in rows {
        let src = src.as_slice().expect("row-major layer jets");
        let abar = abar.as_slice().expect("row-major adjoint");
        let out = out.as_slice_mut().expect("row-major adjoint");
        for s in 0..b {
            let [_, d1, d2, d3] = activation_derivs3(kind, src[s]);
            let mut vbar = d1 * abar[s];
            if ch >= 4 {
                let g = [src[b + s], src[2 * b + s], src[3 * b + s]];
                let mut gbar = [T::zero(); 3];
                for a in 0..3 {
                    let gb = abar[(1 + a) * b + s];
                    gbar[a] = d1 * gb;
                    vbar += d2 * gb * g[a];
                }
                if ch == 10 {
                    for (q, &(i, j)) in HESS_PAIRS.iter().enumerate() {
                        let at = (4 + q) * b + s;
                        let hb = abar[at];
                        out[at] = d1 * hb;
                        vbar += d3 * hb * g[i] * g[j] + d2 * hb * src[at];
                        gbar[i] += d2 * hb * g[j];
                        gbar[j] += d2 * hb * g[i];
                    }
                }
                for a in 0..3 {
                    out[(1 + a) * b + s] = gbar[a];
                }
            }
            out[s] = vbar;
        }
    }
    adj_in
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identity_affine_preserves_jets() {
        let pts = [[0.1, -0.2, 0.3], [1.0, 2.0, 3.0]];
        let x = LayerJets::from_points(&pts, JetOrder::Hessian);
        let y = jet_affine(&Array2::eye(3), &Array1::zeros(3), &x).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn linear_first_layer_has_weight_gradient_and_zero_hessian() {
        let x = LayerJets::<f64>::from_points(&[[0.5, 0.25, -1.0]], JetOrder::Hessian);
        let w = array![[0.3, -0.7, 2.0]];
        let y = jet_affine(&w, &array![0.1], &x).unwrap();
        let j = y.jet(0, 0);
        assert!((j.value - (0.15 - 0.175 - 2.0 + 0.1)).abs() < 1e-15);
        assert_eq!(j.gradient, [0.3, -0.7, 2.0]);
        assert_eq!(j.hessian, [[0.0; 3]; 3]);
    }

    #[test]
    fn affine_rejects_shape_mismatch() {
        let x = LayerJets::<f64>::from_points(&[[0.0; 3]], JetOrder::Value);
        let err = jet_affine(&Array2::zeros((2, 4)), &Array1::zeros(2), &x).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn tanh_at_origin_along_x() {
        let x = LayerJets::from_points(&[[0.0, 0.7, 0.2]], JetOrder::Hessian);
        let y = jet_activate(Activation::Tanh, &x);
        let j = y.jet(0, 0);
        assert_eq!(j.value, 0.0);
        assert_eq!(j.gradient, [1.0, 0.0, 0.0]);
        assert_eq!(j.hessian, [[0.0; 3]; 3]);
    }

    #[test]
    fn tanh_second_derivative_closed_form() {
        let x = LayerJets::from_points(&[[0.5, 0.0, 0.0]], JetOrder::Hessian);
        let j = jet_activate(Activation::Tanh, &x).jet(0, 0);
        let t = 0.5f64.tanh();
        let expected = -2.0 * t * (1.0 - t * t);
        assert!((j.hessian[0][0] - expected).abs() < 1e-10);
    }

    #[test]
    fn zero_gradient_leaves_scaled_hessian() {
        let mut x = LayerJets::<f64>::zeros(1, 1, JetOrder::Hessian);
        x.set_channel(0, 0, 0, 0.3);
        for q in 0..6 {
            x.set_channel(0, 4 + q, 0, 0.1 * (q as f64 + 1.0));
        }
        for kind in Activation::ALL_DEFAULT {
            let y = jet_activate(kind, &x);
            let (_, d1, _) = super::super::activation_derivs(kind, 0.3);
            for q in 0..6 {
                assert_eq!(y.channel(0, 4 + q, 0), d1 * x.channel(0, 4 + q, 0));
            }
        }
    }
}
