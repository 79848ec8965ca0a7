//! Parameter-free group normalization over hidden units, propagated on jets.
//!
//! Per sample and group of `m` units: `y_j = (x_j − μ) / sqrt(var + ε)` with
//! `μ` and `var` the group mean and (biased) variance. Built from packed jet
//! products so the Hessian channels and their adjoints stay exact.

use ndarray::Array2;

use super::layer::LayerJets;
use super::packed::{self, PackedJet};
use crate::{Error, Real, Result};

pub(crate) const GROUP_NORM_EPS: f64 = 1e-5;

fn rsqrt_derivs<T: Real>(u: T) -> [T; 4] {
    // u^(-1/2) and its first three derivatives
    let r = u.sqrt().recip();
    let r3 = r * r * r;
    let r5 = r3 * r * r;
    let r7 = r5 * r * r;
    [r, T::lit(-0.5) * r3, T::lit(0.75) * r5, T::lit(-1.875) * r7]
}

fn gather<T: Real>(x: &LayerJets<T>, unit: usize, s: usize) -> PackedJet<T> {
    let mut p = [T::zero(); 10];
    for (c, v) in p.iter_mut().enumerate().take(x.order.channels()) {
        *v = x.data[[unit, c * x.batch + s]];
    }
    p
}

fn scatter<T: Real>(out: &mut Array2<T>, batch: usize, channels: usize, unit: usize, s: usize, p: &PackedJet<T>) {
    for (c, &v) in p.iter().enumerate().take(channels) {
        out[[unit, c * batch + s]] = v;
    }
}

struct GroupForward<T> {
    centered: Vec<PackedJet<T>>,
    var_eps: PackedJet<T>,
    inv_std: PackedJet<T>,
}

fn group_forward<T: Real>(xs: &[PackedJet<T>]) -> GroupForward<T> {
    let inv_m = T::one() / T::from_usize_lossy(xs.len());
    let mut mean = [T::zero(); 10];
    for x in xs {
        packed::add_assign(&mut mean, x);
    }
    let mean = packed::scale(&mean, inv_m);
    let neg_mean = packed::scale(&mean, -T::one());
    let centered: Vec<_> = xs.iter().map(|x| packed::add(x, &neg_mean)).collect();
    let mut var = [T::zero(); 10];
    for d in &centered {
        packed::add_assign(&mut var, &packed::mul(d, d));
    }
    let mut var_eps = packed::scale(&var, inv_m);
    var_eps[0] += T::lit(GROUP_NORM_EPS);
    let inv_std = packed::unary(&var_eps, rsqrt_derivs(var_eps[0]));
    GroupForward {
        centered,
        var_eps,
        inv_std,
    }
}

fn check_groups<T: Real>(groups: usize, x: &LayerJets<T>) -> Result<usize> {
    let units = x.units();
    if groups == 0 || units % groups != 0 {
        return Err(Error::Config(format!(
            "{groups} normalization groups do not divide {units} units"
        )));
    }
    Ok(units / groups)
}

/// Group-normalizes every sample of `input`.
pub fn group_norm_jets<T: Real>(groups: usize, input: &LayerJets<T>) -> Result<LayerJets<T>> {
    let m = check_groups(groups, input)?;
    let (b, ch) = (input.batch, input.order.channels());
    let mut data = Array2::zeros(input.data.raw_dim());
    let mut xs = vec![[T::zero(); 10]; m];
    for s in 0..b {
        for g in 0..groups {
            for (j, x) in xs.iter_mut().enumerate() {
                *x = gather(input, g * m + j, s);
            }
            let fwd = group_forward(&xs);
            for (j, d) in fwd.centered.iter().enumerate() {
                let y = packed::mul(d, &fwd.inv_std);
                scatter(&mut data, b, ch, g * m + j, s, &y);
            }
        }
    }
    Ok(LayerJets {
        order: input.order,
        batch: b,
        data,
    })
}

pub(crate) fn group_norm_backward<T: Real>(
    groups: usize,
    pre: &LayerJets<T>,
    adj_out: &Array2<T>,
) -> Result<Array2<T>> {
    let m = check_groups(groups, pre)?;
    let (b, ch) = (pre.batch, pre.order.channels());
    let inv_m = T::one() / T::from_usize_lossy(m);
    let mut adj_in = Array2::zeros(pre.data.raw_dim());
    let mut xs = vec![[T::zero(); 10]; m];
    let mut dbar = vec![[T::zero(); 10]; m];
    for s in 0..b {
        for g in 0..groups {
            for (j, x) in xs.iter_mut().enumerate() {
                *x = gather(pre, g * m + j, s);
            }
            let fwd = group_forward(&xs);
            // y_j = d_j · r
            let mut rbar = [T::zero(); 10];
            for j in 0..m {
                let mut ybar = [T::zero(); 10];
                for (c, v) in ybar.iter_mut().enumerate().take(ch) {
                    *v = adj_out[[g * m + j, c * b + s]];
                }
                dbar[j] = packed::mul_adjoint_lhs(&ybar, &fwd.inv_std);
                packed::add_assign(&mut rbar, &packed::mul_adjoint_lhs(&ybar, &fwd.centered[j]));
            }
            // r = (var + ε)^(-1/2), var = (1/m) Σ d_j²
            let ubar = packed::unary_adjoint(&rbar, &fwd.var_eps, rsqrt_derivs(fwd.var_eps[0]));
            let sq_bar = packed::scale(&ubar, inv_m);
            let mut mean_bar = [T::zero(); 10];
            for (j, d) in fwd.centered.iter().enumerate() {
                let half = packed::mul_adjoint_lhs(&sq_bar, d);
                packed::add_assign(&mut dbar[j], &packed::scale(&half, T::lit(2.0)));
                packed::add_assign(&mut mean_bar, &dbar[j]);
            }
            // d_j = x_j − μ, μ = (1/m) Σ x_j
            let shift = packed::scale(&mean_bar, -inv_m);
            for (j, d) in dbar.iter().enumerate() {
                let xbar = packed::add(d, &shift);
                scatter(&mut adj_in, b, ch, g * m + j, s, &xbar);
            }
        }
    }
    Ok(adj_in)
}
