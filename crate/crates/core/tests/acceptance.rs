//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Pass criterion numbers as arguments to run a subset.

mod common;

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use devimplicit::curvature::{bordered_det, gauss_k, mean_m, principal, BorderedHessian};
use devimplicit::eval::{angle_deficit, chamfer, icp_align, implicit_curvature_stats, sample_surface, RigidTransform};
use devimplicit::field::JetField;
use devimplicit::jet::{Activation, Jet2};
use devimplicit::mesher::{marching_cubes, mesh_stats, MeshStats, MeshingConfig};
use devimplicit::mlp::{MlpParams, NetworkConfig, Normalization};
use devimplicit::regularizers::{
    loss_logdet, loss_nn, loss_pnn, reg_loss, RegularizerConfig, RegularizerKind,
};
use devimplicit::sampling::{
    add_noise, make_samples, normalize_unit_box, NormalizationTransform, PointCloud, SamplingConfig, SdfSampleSet,
};
use devimplicit::shapes::{AnalyticShape, Capsule, RoundedBox, Sphere};
use devimplicit::spectral::spectrum;
use devimplicit::trainer::{data_loss, data_loss_grad, finetune_stage, fit_stage, reg_loss_grad, TrainingConfig};
use devimplicit::Point3;
use rand::Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(t: Instant, limit: Duration, detail: String) -> Outcome {
    let e = t.elapsed();
    check(e <= limit, format!("{detail}; {:.1}s of {}s", e.as_secs_f64(), limit.as_secs()))
}

// ---------------------------------------------------------------- 1

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let mut r = rng(100);
    let (mut worst_g, mut worst_h, mut nets) = (0.0f64, 0.0f64, 0);
    let mut worst_h_act = Activation::Gelu;
    let (mut points, mut kinks) = (0, 0);
    for (i, act) in Activation::ALL_DEFAULT.into_iter().enumerate() {
        for k in 0..11 {
            let depth = 1 + k % 4;
            let width = [8, 16, 32, 64][(k / 4 + i) % 4];
            let norm = if k % 5 == 4 && width % 4 == 0 { Normalization::Group { groups: 4 } } else { Normalization::None };
            let net = net(depth, width, act, norm, (i * 100 + k) as u64);
            nets += 1;
            for _ in 0..8 {
                points += 1;
                let p = random_point(&mut r, 0.6);
                let j = net.eval_jet(p);
                let f = |q: Point3| net.eval(q);
                let g = fd_gradient(f, p, 1e-5);
                let h = fd_hessian(f, p, 1e-4);
                worst_g = worst_g.max(rel_err(&j.gradient, &g, 1e-8));
                // a stencil straddling an elu kink sees a blend of both sides
                if rel_err(&fd_hessian(f, p, 5e-5).concat(), &h.concat(), 1e-4) > 1e-2 {
                    kinks += 1;
                    continue;
                }
                let e = rel_err(&j.hessian.concat(), &h.concat(), 1e-4);
                if e > worst_h {
                    (worst_h, worst_h_act) = (e, act);
                }
            }
        }
    }

    let mut worst_p = 0.0f64;
    let mut checked = 0;
    for (i, act) in Activation::ALL_DEFAULT.into_iter().enumerate() {
        let net = net(3, 10, act, Normalization::None, 500 + i as u64);
        let batch = SdfSampleSet {
            positions: (0..32).map(|_| random_point(&mut r, 0.5)).collect(),
            targets: (0..32).map(|_| r.random_range(-0.02..0.02)).collect(),
        };
        let idx: Vec<usize> = (0..32).collect();
        let (_, g) = data_loss_grad(&net, &batch, &idx, 0.01).unwrap();
        let fd = fd_params(&net, |p| data_loss(p, &batch, 0.01).unwrap(), 1e-7);
        worst_p = worst_p.max(rel_err(&g.to_flat(), &fd, 1e-8));
        checked += 1;
        let pts: Vec<Point3> = (0..60)
            .map(|_| random_point(&mut r, 0.5))
            .filter(|&p| {
                let j = net.eval_jet(p);
                let scale = j.hessian.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
                spectral_margin(&j.hessian) > 1e-3 * scale && j.gradient_norm() > 1e-3
            })
            .take(6)
            .collect();
        for kind in RegularizerKind::ALL {
            let cfg = RegularizerConfig::new(kind, 1.0);
            let rg = reg_loss_grad(&net, &pts, &cfg).unwrap();
            let fd = fd_params(&net, |p| reg_loss(&cfg, &p.eval_jet_batch(&pts)).unwrap().value, 1e-6);
            worst_p = worst_p.max(rel_err(&rg.grad.to_flat(), &fd, 1e-8));
            checked += 1;
        }
    }
    let ok = nets >= 50 && 20 * kinks <= points && worst_g < 1e-4 && worst_h < 1e-3 && worst_p < 1e-3;
    let detail = format!(
        "{nets} nets: gradient rel {worst_g:.1e}, Hessian rel {worst_h:.1e} ({worst_h_act}), {kinks}/{points} points skipped at kinks; {checked} loss gradients: rel {worst_p:.1e}"
    );
    if !ok {
        return Err(detail);
    }
    within(t, Duration::from_secs(120), detail)
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    let mut r = rng(200);
    let mut worst = 0.0f64;
    for radius in [0.1, 0.5, 1.0, 2.5] {
        for _ in 0..50 {
            let d = random_point(&mut r, 1.0);
            let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            let u = d.map(|x| x / n);
            // f = |p| − r at a surface point
            let hs = std::array::from_fn(|i| std::array::from_fn(|k| ((i == k) as u8 as f64 - u[i] * u[k]) / radius));
            let s = Jet2::new(0.0, u, hs);
            let c = principal(&s).unwrap();
            worst = worst.max((c.k - 1.0 / (radius * radius)).abs()).max((c.k_min - 1.0 / radius).abs());
            worst = worst.max((mean_m(&s).unwrap().abs() - 1.0 / radius).abs());
            // cylinder about the axis e ⟂ u: Hessian projects out u and e
            let helper = if u[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
            let e = {
                let c = [u[1] * helper[2] - u[2] * helper[1], u[2] * helper[0] - u[0] * helper[2], u[0] * helper[1] - u[1] * helper[0]];
                let m = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
                c.map(|x| x / m)
            };
            let hc = std::array::from_fn(|i| {
                std::array::from_fn(|k| ((i == k) as u8 as f64 - u[i] * u[k] - e[i] * e[k]) / radius)
            });
            let cy = Jet2::new(0.0, u, hc);
            let cc = principal(&cy).unwrap();
            worst = worst.max(cc.k.abs()).max(cc.k_min.abs()).max((cc.m.abs() - 0.5 / radius).abs());
            let pl = Jet2::new(0.0, u, [[0.0; 3]; 3]);
            let pc = principal(&pl).unwrap();
            worst = worst.max(pc.k.abs()).max(pc.m.abs()).max(pc.k_min.abs());
            worst = worst.max(gauss_k(&pl).unwrap().abs());
        }
    }
    check(worst < 1e-9, format!("600 analytic jets, max error {worst:.1e}"))
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Outcome {
    let mut r = rng(300);
    let mut recon = 0.0f64;
    for _ in 0..2000 {
        let e = random_point(&mut r, 5.0);
        let o = random_point(&mut r, 5.0);
        let h = [[e[0], o[0], o[1]], [o[0], e[1], o[2]], [o[1], o[2], e[2]]];
        let rec = spectrum(&h).reconstruct();
        recon = recon.max(rel_err(&rec.concat(), &h.concat(), 1e-12));
    }
    let diag = |a: f64, b: f64, c: f64| Jet2::new(0.0, [1.0, 0.0, 0.0], [[a, 0.0, 0.0], [0.0, b, 0.0], [0.0, 0.0, c]]);
    let nn = loss_nn(&diag(3.0, -2.0, 1.0));
    let ld = loss_logdet(&diag(1.0, 0.0, 0.0));
    let pnn = loss_pnn(&diag(3.0, 2.0, 1.0), 2).unwrap();
    let mut pnn0 = 0.0f64;
    let mut cof = 0.0f64;
    for _ in 0..2000 {
        let g = random_point(&mut r, 2.0);
        let e = random_point(&mut r, 3.0);
        let o = random_point(&mut r, 3.0);
        let j = Jet2::new(0.0, g, [[e[0], o[0], o[1]], [o[0], e[1], o[2]], [o[1], o[2], e[2]]]);
        pnn0 = pnn0.max((loss_pnn(&j, 0).unwrap() - loss_nn(&j)).abs());
        let direct = det4(BorderedHessian::from_jet(&j).0);
        if direct.abs() > 1e-6 {
            cof = cof.max(((bordered_det(&j) - direct) / direct).abs());
        }
    }
    let ok = recon < 1e-9 && nn == 6.0 && (ld - 2f64.ln()).abs() < 1e-15 && pnn == 1.0 && pnn0 < 1e-12 && cof < 1e-10;
    check(
        ok,
        format!(
            "reconstruction {recon:.1e}; nn {nn}, logdet {ld:.15}, pnn {pnn}; pnn(r=0)−nn {pnn0:.1e}; cofactor rel {cof:.1e}"
        ),
    )
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Outcome {
    let radius = 0.4;
    let cfg = MeshingConfig { resolution: 64, ..Default::default() };
    let mesh = marching_cubes(&Sphere::new(radius), &cfg).map_err(|e| e.to_string())?;
    let st = mesh_stats(&mesh);
    let area_err = (st.total_area / (4.0 * PI * radius * radius) - 1.0).abs();
    let h = cfg.cell_size()[0];
    let radial = mesh
        .vertices
        .iter()
        .map(|v| ((v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt() - radius).abs())
        .fold(0.0, f64::max);
    let gb: f64 = angle_deficit(&mesh, false).map_err(|e| e.to_string())?.iter().sum();
    let ok = st.euler == 2 && st.boundary_edges == 0 && area_err < 0.05 && radial < 2.0 * h && (gb - 4.0 * PI).abs() < 1e-6;
    check(
        ok,
        format!(
            "χ {}, boundary {}, area err {:.2}%, radial err {:.3} cells, Σ deficit − 4π = {:.1e}",
            st.euler,
            st.boundary_edges,
            100.0 * area_err,
            radial / h,
            gb - 4.0 * PI
        ),
    )
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Outcome {
    let mut r = rng(500);
    let a: Vec<Point3> = (0..500).map(|_| random_point(&mut r, 1.0)).collect();
    let b: Vec<Point3> = (0..500).map(|_| random_point(&mut r, 1.0)).collect();
    let (fast, _) = chamfer(&a, &b).unwrap();
    let brute = brute_chamfer(&a, &b);
    let self_dist = chamfer(&a, &a).unwrap().0;

    let src = Capsule { radius: 0.15, half_length: 0.3 }.sample_cloud(2000, 5).unwrap().points;
    let src: Vec<Point3> = src.into_iter().filter(|p| p[0] - 0.4 * p[2] < 0.1).collect();
    let mut worst = 0.0f64;
    for (axis, deg, t) in [
        ([0.0, 0.0, 1.0], 10.0, [0.01, 0.0, 0.0]),
        ([1.0, 1.0, 0.0], -8.0, [0.0, 0.02, -0.01]),
        ([0.3, -0.5, 0.8], 5.0, [0.03, 0.01, 0.02]),
    ] {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2] as f64).sqrt();
        let m = RigidTransform::from_axis_angle(axis.map(|x: f64| x / n), deg * PI / 180.0, t);
        let moved: Vec<Point3> = src.iter().map(|&p| m.apply(p)).collect();
        let res = icp_align(&moved, &src, 100).unwrap();
        let net = res.transform.compose(&m);
        worst = worst.max(net.rotation_error(&RigidTransform::identity()));
        worst = worst.max(net.translation.iter().fold(0.0f64, |a, x| a.max(x.abs())));
    }
    let diff = (fast - brute).abs() / brute;
    check(
        diff < 1e-12 && worst < 1e-6 && self_dist == 0.0,
        format!("k-d vs brute rel {diff:.1e}; ICP residual motion {worst:.1e}; chamfer(A,A) = {self_dist}"),
    )
}

// ---------------------------------------------------------------- shared pipeline

struct Problem {
    cloud: PointCloud,
    samples: SdfSampleSet,
    tf: NormalizationTransform,
}

fn problem(shape: &dyn AnalyticShape, n: usize, noise: f64, seed: u64) -> Problem {
    let raw = shape.sample_cloud(n, seed).unwrap();
    let raw = add_noise(&raw, noise, seed ^ 0x5eed).unwrap();
    let (cloud, tf) = normalize_unit_box(&raw).unwrap();
    let samples = make_samples(&cloud, &SamplingConfig { seed, ..Default::default() }).unwrap();
    Problem { cloud, samples, tf }
}

const FIT_EPOCHS: usize = 30;
const FIT_BATCH: usize = 256;
const FINETUNE_EPOCHS: usize = 20;
const FINETUNE_BATCH: usize = 512;
const FINETUNE_LR: f64 = 1e-5;
const MESH_RES: usize = 64;
const MEASURE_SAMPLES: usize = 20_000;
/// The normalized sphere has K = 4, so λ = 1 lets hdet outweigh the data
/// term a thousandfold and the fine-tune flattens the field.
const HDET_NOISE_LAMBDA: f64 = 0.01;
/// The capsule's end caps have K = 25 in the normalized frame; every kind
/// breaks the surface at λ = 1, so the shared weight sits well below it.
const PRESERVE_LAMBDA: f64 = 1e-3;
const PRESERVE_FIT_EPOCHS: usize = 150;

fn fit_net(p: &Problem, epochs: usize, seed: u64) -> MlpParams<f64> {
    let net = MlpParams::<f64>::init(&NetworkConfig { seed, ..Default::default() }).unwrap();
    let cfg = TrainingConfig { max_epochs_fit: epochs, batch_size: FIT_BATCH, seed, ..Default::default() };
    fit_stage(&net, &p.samples, &cfg).unwrap().0
}

fn finetune(base: &MlpParams<f64>, p: &Problem, kind: RegularizerKind, lambda: f64, seed: u64) -> MlpParams<f64> {
    let cfg = TrainingConfig {
        lr_finetune: FINETUNE_LR,
        batch_size: FINETUNE_BATCH,
        max_epochs_finetune: FINETUNE_EPOCHS,
        reg: Some(RegularizerConfig::new(kind, lambda)),
        seed,
        ..Default::default()
    };
    finetune_stage(base, &p.samples, &p.cloud, &cfg).unwrap().0
}

#[derive(Debug)]
struct Measure {
    median_k_min: f64,
    median_k: f64,
    chamfer: f64,
    mesh: MeshStats,
}

/// Curvature at mesh samples in the normalized frame, and Chamfer mean to
/// `truth` after mapping the samples back to the input frame. A vanished
/// surface scores NaN curvature and infinite distance, so every comparison
/// against it fails.
fn measure(net: &MlpParams<f64>, p: &Problem, truth: &[Point3]) -> Measure {
    let mesh = marching_cubes(net, &MeshingConfig { resolution: MESH_RES, ..Default::default() }).unwrap();
    let Ok(pts) = sample_surface(&mesh, MEASURE_SAMPLES, 5) else {
        return Measure { median_k_min: f64::NAN, median_k: f64::NAN, chamfer: f64::INFINITY, mesh: mesh_stats(&mesh) };
    };
    let s = implicit_curvature_stats::<f64, _>(net, &pts).unwrap();
    let raw: Vec<Point3> = pts.iter().map(|&q| p.tf.invert(q)).collect();
    let (_, c) = chamfer(&raw, truth).unwrap();
    Measure { median_k_min: s.median_k_min, median_k: s.median_k, chamfer: c, mesh: mesh_stats(&mesh) }
}

/// Dense clean samples of the analytic surface in the input frame.
fn truth(shape: &dyn AnalyticShape) -> Vec<Point3> {
    shape.sample_cloud(MEASURE_SAMPLES, 7777).unwrap().points
}

// ---------------------------------------------------------------- 6

fn criterion_6() -> Outcome {
    let t = Instant::now();
    let sphere = Sphere::new(0.4);
    let raw = sphere.sample_cloud(10_000, 1).unwrap();
    let (cloud, tf) = normalize_unit_box(&raw).unwrap();
    let samples = make_samples(&cloud, &SamplingConfig::default()).unwrap();
    let held: Vec<Point3> = sphere.sample_cloud(2000, 99).unwrap().points.iter().map(|&p| tf.apply(p)).collect();
    let mut net = MlpParams::<f64>::init(&NetworkConfig::default()).unwrap();
    let cfg = TrainingConfig { batch_size: 512, max_epochs_fit: 25, ..Default::default() };
    let mut epochs = 0;
    let mut held_out = f64::INFINITY;
    while epochs < 2000 {
        let (next, h) = fit_stage(&net, &samples, &cfg).unwrap();
        net = next;
        epochs += h.len();
        held_out = net.eval_batch(&held).iter().map(|v| v.abs()).sum::<f64>() / held.len() as f64;
        if held_out < 0.01 && epochs >= 25 {
            break;
        }
    }
    let gnorm = net.jets(&held[..500]).iter().map(|j| j.gradient_norm()).sum::<f64>() / 500.0;
    let detail = format!("held-out mean |f| {held_out:.2e} after {epochs} epochs, mean |∇f| {gnorm:.3}");
    if held_out >= 0.01 {
        return Err(detail);
    }
    within(t, Duration::from_secs(15 * 60), detail)
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Outcome {
    let t = Instant::now();
    let shape = RoundedBox::cube(0.3, 0.1);
    let mut passes = 0;
    let mut lines = Vec::new();
    for seed in 0..3u64 {
        let p = problem(&shape, 10_000, 0.0, seed);
        let gt = truth(&shape);
        let base = fit_net(&p, FIT_EPOCHS, seed);
        let m: Vec<Measure> = [0.0, 1.0, 10.0]
            .iter()
            .map(|&l| measure(&finetune(&base, &p, RegularizerKind::Hdet, l, seed), &p, &gt))
            .collect();
        let kmin_ok = m[1].median_k_min <= m[0].median_k_min && m[2].median_k_min <= m[1].median_k_min;
        let halved = m[2].median_k_min <= 0.5 * m[0].median_k_min;
        let chamfer_ok = m[1].chamfer >= m[0].chamfer && m[2].chamfer >= m[1].chamfer;
        let ok = kmin_ok && halved && chamfer_ok;
        passes += ok as usize;
        lines.push(format!(
            "seed {seed}: Kmin {:.4}/{:.4}/{:.4}, K {:.4}/{:.4}/{:.4}, chamfer {:.2e}/{:.2e}/{:.2e}{}",
            m[0].median_k_min,
            m[1].median_k_min,
            m[2].median_k_min,
            m[0].median_k,
            m[1].median_k,
            m[2].median_k,
            m[0].chamfer,
            m[1].chamfer,
            m[2].chamfer,
            if ok { "" } else { " (miss)" }
        ));
    }
    let detail = format!("{passes}/3 seeds; {}", lines.join("; "));
    if passes < 2 {
        return Err(detail);
    }
    within(t, Duration::from_secs(45 * 60), detail)
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Outcome {
    let shape = Capsule { radius: 0.2, half_length: 0.3 };
    let seed = 3;
    let p = problem(&shape, 10_000, 0.0, seed);
    let gt = truth(&shape);
    let base = fit_net(&p, PRESERVE_FIT_EPOCHS, seed);
    let b = measure(&base, &p, &gt);
    let mut worst = 0.0f64;
    let mut parts = vec![format!("λ {PRESERVE_LAMBDA}; fit Kmin {:.4}", b.median_k_min)];
    for kind in RegularizerKind::ALL {
        let m = measure(&finetune(&base, &p, kind, PRESERVE_LAMBDA, seed), &p, &gt);
        let ratio = m.median_k_min / b.median_k_min;
        worst = if ratio.is_nan() { f64::INFINITY } else { worst.max(ratio) };
        parts.push(format!("{kind} {:.4}", m.median_k_min));
    }
    check(worst <= 1.1, format!("{}; worst ratio {worst:.3}", parts.join(", ")))
}

// ---------------------------------------------------------------- 9

fn criterion_9() -> Outcome {
    let sphere = Sphere::new(0.4);
    let seed = 9;
    let gt = truth(&sphere);
    let run = |noise: f64| -> Measure {
        let p = problem(&sphere, 10_000, noise, seed);
        let base = fit_net(&p, FIT_EPOCHS, seed);
        measure(&finetune(&base, &p, RegularizerKind::Hdet, HDET_NOISE_LAMBDA, seed), &p, &gt)
    };
    let clean = run(0.0);
    let noisy = run(0.01);
    check(
        clean.chamfer.is_finite() && noisy.chamfer <= 3.0 * clean.chamfer,
        format!(
            "hdet λ {HDET_NOISE_LAMBDA}: chamfer clean {:.3e}, 1% noise {:.3e} (ratio {:.2}); noisy mesh χ {}",
            clean.chamfer,
            noisy.chamfer,
            noisy.chamfer / clean.chamfer,
            noisy.mesh.euler
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, fn() -> Outcome); 9] = [
        (1, "derivative exactness", criterion_1),
        (2, "analytic curvature", criterion_2),
        (3, "spectral and surrogate units", criterion_3),
        (4, "meshing", criterion_4),
        (5, "metrics", criterion_5),
        (6, "end-to-end fit", criterion_6),
        (7, "regularizer weight trend", criterion_7),
        (8, "developability preservation", criterion_8),
        (9, "noise robustness", criterion_9),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, name, f) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS {n} {name} ({secs:.1}s): {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL {n} {name} ({secs:.1}s): {d}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
