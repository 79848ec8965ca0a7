//! Jets and parameter gradients against finite differences.

mod common;

use common::*;
use devimplicit::jet::{Activation, JetAdjoint, JetOrder};
use devimplicit::mlp::{MlpParams, Normalization};
use devimplicit::regularizers::{loss_with_adjoint, reg_loss, RegularizerConfig, RegularizerKind};
use devimplicit::sampling::SdfSampleSet;
use devimplicit::trainer::{data_loss, data_loss_grad, reg_loss_grad, total_loss, total_loss_grad, TrainingConfig};
use devimplicit::Point3;
use rand::Rng;

fn activations() -> Vec<Activation> {
    let mut a = Activation::ALL_DEFAULT.to_vec();
    a.push(Activation::Sine(3.0));
    a
}

fn check_jets(net: &MlpParams<f64>, points: &[Point3]) {
    for &p in points {
        let j = net.eval_jet(p);
        let f = |q: Point3| net.eval(q);
        let g = fd_gradient(f, p, 1e-5);
        let h = fd_hessian(f, p, 1e-4);
        assert!(rel_err(&j.gradient, &g, 1e-8) < 1e-4, "gradient {:?} vs {:?}", j.gradient, g);
        let hj: Vec<f64> = j.hessian.iter().flatten().copied().collect();
        let hf: Vec<f64> = h.iter().flatten().copied().collect();
        // second differences carry ~1e-8 rounding noise, so piecewise-linear nets need a floor
        assert!(rel_err(&hj, &hf, 1e-4) < 1e-3, "hessian {hj:?} vs {hf:?}");
    }
}

#[test]
fn jets_match_finite_differences() {
    let mut r = rng(11);
    for (i, act) in activations().into_iter().enumerate() {
        for depth in 1..=4 {
            let net = net(depth, 16 + 8 * depth, act, Normalization::None, (i * 10 + depth) as u64);
            let pts: Vec<Point3> = (0..4).map(|_| random_point(&mut r, 0.6)).collect();
            check_jets(&net, &pts);
        }
    }
}

#[test]
fn group_norm_jets_match_finite_differences() {
    let mut r = rng(12);
    for act in [Activation::Gelu, Activation::Tanh] {
        let net = net(3, 8, act, Normalization::Group { groups: 2 }, 3);
        let pts: Vec<Point3> = (0..4).map(|_| random_point(&mut r, 0.6)).collect();
        check_jets(&net, &pts);
    }
}

fn random_samples(r: &mut rand_chacha::ChaCha8Rng, n: usize) -> SdfSampleSet {
    SdfSampleSet {
        positions: (0..n).map(|_| random_point(r, 0.5)).collect(),
        targets: (0..n).map(|_| r.random_range(-0.02..0.02)).collect(),
    }
}

#[test]
fn data_loss_gradient_matches_finite_differences() {
    let mut r = rng(13);
    for (i, act) in activations().into_iter().enumerate() {
        let net = net(3, 6, act, Normalization::None, i as u64);
        let batch = random_samples(&mut r, 40);
        let idx: Vec<usize> = (0..batch.len()).collect();
        let (loss, grad) = data_loss_grad(&net, &batch, &idx, 0.01).unwrap();
        assert!((loss - data_loss(&net, &batch, 0.01).unwrap()).abs() < 1e-14);
        let fd = fd_params(&net, |p| data_loss(p, &batch, 0.01).unwrap(), 1e-7);
        let e = rel_err(&grad.to_flat(), &fd, 1e-8);
        assert!(e < 1e-3, "{act}: rel err {e}");
    }
}

/// Quantities built from all jet channels, differentiated through the tape.
#[test]
fn tape_pulls_back_arbitrary_jet_functionals() {
    let mut r = rng(14);
    for (i, act) in activations().into_iter().enumerate() {
        for norm in [Normalization::None, Normalization::Group { groups: 2 }] {
            let net = net(3, 6, act, norm, 40 + i as u64);
            let pts: Vec<Point3> = (0..7).map(|_| random_point(&mut r, 0.5)).collect();
            // Σ |∇f|² + Σ_ij H_ij + 0.3 f
            let functional = |p: &MlpParams<f64>| -> f64 {
                pts.iter()
                    .map(|&q| {
                        let j = p.eval_jet(q);
                        j.gradient.iter().map(|g| g * g).sum::<f64>()
                            + j.hessian.iter().flatten().sum::<f64>()
                            + 0.3 * j.value
                    })
                    .sum()
            };
            let tape = net.forward_tape(&pts, JetOrder::Hessian).unwrap();
            let adj: Vec<JetAdjoint<f64>> = (0..pts.len())
                .map(|s| {
                    let j = tape.output().unwrap().jet(0, s);
                    JetAdjoint {
                        value: 0.3,
                        gradient: j.gradient.map(|g| 2.0 * g),
                        hessian: [[1.0; 3]; 3],
                    }
                })
                .collect();
            let mut acc = net.zero_grads();
            tape.backward_params(&net.weights, &tape.jet_adjoint(&adj).unwrap(), &mut acc).unwrap();
            let fd = fd_params(&net, functional, 1e-6);
            let e = rel_err(&acc.to_flat(), &fd, 1e-8);
            assert!(e < 1e-3, "{act} {norm:?}: rel err {e}");
        }
    }
}

#[test]
fn regularizer_gradients_match_finite_differences() {
    let mut r = rng(15);
    let mut checked = 0;
    for (i, act) in activations().into_iter().enumerate() {
        let net = net(3, 8, act, Normalization::None, 60 + i as u64);
        let pts: Vec<Point3> = (0..40)
            .map(|_| random_point(&mut r, 0.5))
            .filter(|&p| {
                let j = net.eval_jet(p);
                spectral_margin(&j.hessian) > 1e-3 * j.hessian.iter().flatten().map(|x| x.abs()).fold(0.0, f64::max)
                    && j.gradient_norm() > 1e-3
            })
            .take(8)
            .collect();
        assert!(pts.len() >= 4);
        for kind in RegularizerKind::ALL {
            let cfg = RegularizerConfig::new(kind, 1.0);
            let rg = reg_loss_grad(&net, &pts, &cfg).unwrap();
            let eval = |p: &MlpParams<f64>| reg_loss(&cfg, &p.eval_jet_batch(&pts)).unwrap().value;
            assert!((rg.loss - eval(&net)).abs() <= 1e-12 * rg.loss.abs().max(1.0));
            let fd = fd_params(&net, eval, 1e-6);
            let e = rel_err(&rg.grad.to_flat(), &fd, 1e-8);
            assert!(e < 1e-3, "{act} {kind}: rel err {e}");
            checked += 1;
        }
    }
    assert_eq!(checked, 24);
}

#[test]
fn total_gradient_is_data_plus_weighted_regularizer() {
    let mut r = rng(16);
    let net = net(2, 8, Activation::Silu, Normalization::None, 5);
    let batch = random_samples(&mut r, 30);
    let surface: Vec<Point3> = (0..6).map(|_| random_point(&mut r, 0.5)).collect();
    for kind in RegularizerKind::ALL {
        let cfg = TrainingConfig { reg: Some(RegularizerConfig::new(kind, 2.5)), ..Default::default() };
        let (report, grad) = total_loss_grad(&net, &batch, &surface, &cfg).unwrap();
        let jets = net.eval_jet_batch(&surface);
        let (total, rep2) = total_loss(&net, &batch, &jets, &cfg).unwrap();
        assert!((report.total - total).abs() < 1e-12);
        assert!((rep2.total - (rep2.data_loss + 2.5 * rep2.reg_loss)).abs() < 1e-10);
        let fd = fd_params(&net, |p| total_loss(p, &batch, &p.eval_jet_batch(&surface), &cfg).unwrap().0, 1e-6);
        let e = rel_err(&grad.to_flat(), &fd, 1e-8);
        assert!(e < 1e-3, "{kind}: rel err {e}");
    }
}

#[test]
fn gradient_is_invariant_to_batch_order() {
    let mut r = rng(17);
    let net = net(3, 16, Activation::Gelu, Normalization::None, 9);
    let batch = random_samples(&mut r, 3000);
    let idx: Vec<usize> = (0..batch.len()).collect();
    let rev: Vec<usize> = idx.iter().rev().copied().collect();
    let (la, ga) = data_loss_grad(&net, &batch, &idx, 0.01).unwrap();
    let (lb, gb) = data_loss_grad(&net, &batch, &rev, 0.01).unwrap();
    assert!((la - lb).abs() < 1e-14);
    assert!(rel_err(&ga.to_flat(), &gb.to_flat(), 1e-12) < 1e-12);
}

#[test]
fn loss_adjoints_are_consistent_with_values() {
    let net = net(2, 8, Activation::Tanh, Normalization::None, 2);
    let j = net.eval_jet([0.1, 0.2, -0.3]);
    for kind in RegularizerKind::ALL {
        let (v, _) = loss_with_adjoint(kind, 2, &j).unwrap();
        let cfg = RegularizerConfig::new(kind, 1.0);
        assert_eq!(v, reg_loss(&cfg, &[j]).unwrap().value);
    }
}
