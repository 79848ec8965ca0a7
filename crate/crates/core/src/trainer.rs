//! The objective `L = L_data + λ·L_reg` and the two-stage Adam schedule.
//!
//! Gradients are computed over fixed-size chunks on the worker pool, each
//! into a private buffer; buffers are summed in chunk order so results do not
//! depend on the number of workers.

use std::fmt::Write as _;
use std::fs;
use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curvature::GRADIENT_FLOOR;
use crate::jet::{GradAccumulator, Jet2, JetAdjoint, JetOrder};
use crate::mlp::{MlpParams, EVAL_CHUNK};
use crate::regularizers::{loss_with_adjoint, reg_loss, RegularizerConfig};
use crate::sampling::{PointCloud, SdfSampleSet};
use crate::{Error, Point3, Real, Result};

/// Points per chunk for second-order passes, whose tapes are ten times wider.
const JET_CHUNK: usize = EVAL_CHUNK / 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub lr_fit: f64,
    pub lr_finetune: f64,
    /// Clamp half-width applied to SDF targets.
    pub delta: f64,
    /// Regularizer and its weight; required by the fine-tuning stage.
    pub reg: Option<RegularizerConfig>,
    pub batch_size: usize,
    pub max_epochs_fit: usize,
    pub max_epochs_finetune: usize,
    /// Stop once the best loss improved by less than this fraction over the
    /// last `plateau_window` epochs.
    pub plateau_rel_tol: f64,
    pub plateau_window: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            lr_fit: 1e-4,
            lr_finetune: 1e-5,
            delta: 0.01,
            reg: None,
            batch_size: 4096,
            max_epochs_fit: 2000,
            max_epochs_finetune: 1000,
            plateau_rel_tol: 1e-4,
            plateau_window: 50,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        pos("lr_fit", self.lr_fit)?;
        pos("lr_finetune", self.lr_finetune)?;
        pos("delta", self.delta)?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.plateau_rel_tol >= 0.0) {
            return Err(Error::Config(format!(
                "plateau_rel_tol must be >= 0, got {}",
                self.plateau_rel_tol
            )));
        }
        if let Some(r) = &self.reg {
            r.validate()?;
        }
        Ok(())
    }

    pub fn lambda(&self) -> f64 {
        self.reg.map_or(0.0, |r| r.lambda)
    }
}

/// Per-epoch means. `total = data_loss + λ·reg_loss`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub epoch: usize,
    pub data_loss: f64,
    pub reg_loss: f64,
    pub total: f64,
    pub skipped_singular: usize,
}

pub fn clamp<T: Real>(s: T, delta: T) -> T {
    delta.min((-delta).max(s))
}

fn to_t<T: Real>(p: &Point3) -> [T; 3] {
    p.map(T::lit)
}

fn chunks(n: usize, size: usize) -> Vec<Range<usize>> {
    (0..n).step_by(size).map(|s| s..(s + size).min(n)).collect()
}

fn sum_in_order<T: Real>(params: &MlpParams<T>, parts: impl IntoIterator<Item = GradAccumulator<T>>) -> GradAccumulator<T> {
    let mut acc = params.zero_grads();
    for g in parts {
        acc.add_scaled(&g, T::one());
    }
    acc
}

/// `mean_j |f(p_j) − cl(s_j, δ)|`. Only the target is clamped.
pub fn data_loss<T: Real>(params: &MlpParams<T>, batch: &SdfSampleSet, delta: f64) -> Result<T> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch { skipped: 0 });
    }
    let pts: Vec<[T; 3]> = batch.positions.iter().map(to_t).collect();
    let f = params.eval_batch(&pts);
    let d = T::lit(delta);
    let sum: T = f
        .iter()
        .zip(&batch.targets)
        .map(|(&v, &s)| (v - clamp(T::lit(s), d)).abs())
        .sum();
    Ok(sum / T::from_usize_lossy(batch.len()))
}

/// Data loss over `idx` of `batch` and its parameter gradient.
pub fn data_loss_grad<T: Real>(
    params: &MlpParams<T>,
    batch: &SdfSampleSet,
    idx: &[usize],
    delta: f64,
) -> Result<(T, GradAccumulator<T>)> {
    if idx.is_empty() {
        return Err(Error::EmptyBatch { skipped: 0 });
    }
    let d = T::lit(delta);
    let parts = chunks(idx.len(), EVAL_CHUNK)
        .into_par_iter()
        .map(|r| {
            let ids = &idx[r];
            let pts: Vec<[T; 3]> = ids.iter().map(|&j| to_t(&batch.positions[j])).collect();
            let tape = params.forward_tape(&pts, JetOrder::Value)?;
            let out = tape.output().expect("forward completed");
            let mut sum = T::zero();
            let dv: Vec<T> = ids
                .iter()
                .zip(out.values(0))
                .map(|(&j, &v)| {
                    let r = v - clamp(T::lit(batch.targets[j]), d);
                    sum += r.abs();
                    crate::sign0(r)
                })
                .collect();
            let mut acc = params.zero_grads();
            tape.backward_params(&params.weights, &tape.value_adjoint(&dv)?, &mut acc)?;
            Ok((sum, acc))
        })
        .collect::<Result<Vec<_>>>()?;
    let inv = T::one() / T::from_usize_lossy(idx.len());
    let mut loss = T::zero();
    let mut accs = Vec::with_capacity(parts.len());
    for (s, a) in parts {
        loss += s;
        accs.push(a);
    }
    let mut acc = sum_in_order(params, accs);
    acc.scale(inv);
    Ok((loss * inv, acc))
}

/// Unweighted regularizer sums over a set of surface points.
#[derive(Clone, Debug)]
pub struct RegGrad<T> {
    /// Mean over valid samples.
    pub loss: T,
    pub valid: usize,
    pub skipped: usize,
    /// Gradient of `loss`.
    pub grad: GradAccumulator<T>,
}

/// Mean regularizer at `points` and its parameter gradient (λ not applied).
pub fn reg_loss_grad<T: Real>(
    params: &MlpParams<T>,
    points: &[Point3],
    reg: &RegularizerConfig,
) -> Result<RegGrad<T>> {
    reg.validate()?;
    let floor = T::lit(GRADIENT_FLOOR);
    let parts = chunks(points.len(), JET_CHUNK)
        .into_par_iter()
        .map(|r| {
            let pts: Vec<[T; 3]> = points[r].iter().map(to_t).collect();
            let tape = params.forward_tape(&pts, JetOrder::Hessian)?;
            let out = tape.output().expect("forward completed");
            let (mut sum, mut valid) = (T::zero(), 0usize);
            let mut adj = Vec::with_capacity(pts.len());
            for s in 0..pts.len() {
                let j = out.jet(0, s);
                if j.is_finite() && j.gradient_norm() > floor {
                    let (v, a) = loss_with_adjoint(reg.kind, reg.r, &j)?;
                    sum += v;
                    valid += 1;
                    adj.push(a);
                } else {
                    adj.push(JetAdjoint::zero());
                }
            }
            let mut acc = params.zero_grads();
            if valid > 0 {
                tape.backward_params(&params.weights, &tape.jet_adjoint(&adj)?, &mut acc)?;
            }
            Ok((sum, valid, acc))
        })
        .collect::<Result<Vec<_>>>()?;
    let (mut sum, mut valid) = (T::zero(), 0);
    let mut accs = Vec::with_capacity(parts.len());
    for (s, v, a) in parts {
        sum += s;
        valid += v;
        accs.push(a);
    }
    let skipped = points.len() - valid;
    if valid == 0 {
        return Err(Error::EmptyBatch { skipped });
    }
    let inv = T::one() / T::from_usize_lossy(valid);
    let mut grad = sum_in_order(params, accs);
    grad.scale(inv);
    Ok(RegGrad {
        loss: sum * inv,
        valid,
        skipped,
        grad,
    })
}

/// `data_loss + λ·reg_loss(jets)` for jets already evaluated at surface points.
pub fn total_loss<T: Real>(
    params: &MlpParams<T>,
    batch: &SdfSampleSet,
    jets: &[Jet2<T>],
    cfg: &TrainingConfig,
) -> Result<(T, LossReport)> {
    cfg.validate()?;
    let data = data_loss(params, batch, cfg.delta)?;
    let (reg, skipped) = match &cfg.reg {
        Some(r) if !jets.is_empty() => {
            let l = reg_loss(r, jets)?;
            (l.value, l.skipped)
        }
        _ => (T::zero(), 0),
    };
    let lambda = T::lit(cfg.lambda());
    let total = data + lambda * reg;
    Ok((
        total,
        LossReport {
            epoch: 0,
            data_loss: data.as_f64(),
            reg_loss: reg.as_f64(),
            total: total.as_f64(),
            skipped_singular: skipped,
        },
    ))
}

/// Gradient of [`total_loss`] with the regularizer evaluated at `surface`.
pub fn total_loss_grad<T: Real>(
    params: &MlpParams<T>,
    batch: &SdfSampleSet,
    surface: &[Point3],
    cfg: &TrainingConfig,
) -> Result<(LossReport, GradAccumulator<T>)> {
    cfg.validate()?;
    let idx: Vec<usize> = (0..batch.len()).collect();
    let (data, mut grad) = data_loss_grad(params, batch, &idx, cfg.delta)?;
    let mut report = LossReport {
        epoch: 0,
        data_loss: data.as_f64(),
        reg_loss: 0.0,
        total: data.as_f64(),
        skipped_singular: 0,
    };
    if let Some(r) = &cfg.reg {
        let rg = reg_loss_grad(params, surface, r)?;
        grad.add_scaled(&rg.grad, T::lit(r.lambda));
        report.reg_loss = rg.loss.as_f64();
        report.skipped_singular = rg.skipped;
        report.total = (data + T::lit(r.lambda) * rg.loss).as_f64();
    }
    Ok((report, grad))
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: GradAccumulator<T>,
    pub v: GradAccumulator<T>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &MlpParams<T>) -> Self {
        Self {
            m: params.zero_grads(),
            v: params.zero_grads(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step<T: Real>(
    params: &mut MlpParams<T>,
    grads: &GradAccumulator<T>,
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    if grads.weights.len() != params.weights.len()
        || grads.weights.iter().zip(&params.weights).any(|(g, w)| g.dim() != w.dim())
        || grads.biases.iter().zip(&params.biases).any(|(g, b)| g.dim() != b.dim())
    {
        return Err(Error::Dimension("gradient does not match parameters".into()));
    }
    state.step += 1;
    let (b1, b2) = (T::lit(ADAM_BETA1), T::lit(ADAM_BETA2));
    let c1 = T::one() - b1.powi(state.step.min(i32::MAX as u64) as i32);
    let c2 = T::one() - b2.powi(state.step.min(i32::MAX as u64) as i32);
    let (lr, eps, one) = (T::lit(lr), T::lit(ADAM_EPS), T::one());
    let update = |theta: &mut T, g: T, m: &mut T, v: &mut T| {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let mh = *m / c1;
        let vh = *v / c2;
        *theta -= lr * mh / (vh.sqrt() + eps);
    };
    for l in 0..params.weights.len() {
        ndarray::Zip::from(&mut params.weights[l])
            .and(&grads.weights[l])
            .and(&mut state.m.weights[l])
            .and(&mut state.v.weights[l])
            .for_each(|t, &g, m, v| update(t, g, m, v));
        ndarray::Zip::from(&mut params.biases[l])
            .and(&grads.biases[l])
            .and(&mut state.m.biases[l])
            .and(&mut state.v.biases[l])
            .for_each(|t, &g, m, v| update(t, g, m, v));
    }
    Ok(())
}

/// Running-best plateau detector.
struct Plateau {
    best: Vec<f64>,
    window: usize,
    tol: f64,
}

impl Plateau {
    fn new(window: usize, tol: f64) -> Self {
        Self {
            best: Vec::new(),
            window,
            tol,
        }
    }

    /// Records an epoch loss; true once the run should stop.
    fn push(&mut self, loss: f64) -> bool {
        let best = self.best.last().map_or(loss, |b| b.min(loss));
        self.best.push(best);
        let n = self.best.len();
        if self.window == 0 || n <= self.window {
            return false;
        }
        let before = self.best[n - 1 - self.window];
        before - best < self.tol * before.abs()
    }
}

fn diverged(stage: &'static str, epoch: usize, loss: f64) -> Error {
    Error::Divergence { stage, epoch, loss }
}

/// Minibatch Adam on the data term at `lr_fit`.
pub fn fit_stage<T: Real>(
    params: &MlpParams<T>,
    samples: &SdfSampleSet,
    cfg: &TrainingConfig,
) -> Result<(MlpParams<T>, Vec<LossReport>)> {
    fit_stage_with(params, samples, cfg, |_| {})
}

/// [`fit_stage`] calling `on_epoch` after every epoch.
pub fn fit_stage_with<T: Real>(
    params: &MlpParams<T>,
    samples: &SdfSampleSet,
    cfg: &TrainingConfig,
    mut on_epoch: impl FnMut(&LossReport),
) -> Result<(MlpParams<T>, Vec<LossReport>)> {
    cfg.validate()?;
    let mut params = params.clone();
    let mut history = Vec::new();
    if cfg.max_epochs_fit == 0 {
        return Ok((params, history));
    }
    if samples.is_empty() {
        return Err(Error::EmptyBatch { skipped: 0 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(&params);
    let mut plateau = Plateau::new(cfg.plateau_window, cfg.plateau_rel_tol);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..cfg.max_epochs_fit {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let (loss, grad) = data_loss_grad(&params, samples, idx, cfg.delta)?;
            let loss = loss.as_f64();
            if !loss.is_finite() {
                return Err(diverged("fit", epoch, loss));
            }
            sum += loss * idx.len() as f64;
            adam_step(&mut params, &grad, &mut adam, cfg.lr_fit)?;
        }
        let data = sum / samples.len() as f64;
        if !params.is_finite() {
            return Err(diverged("fit", epoch, f64::NAN));
        }
        let report = LossReport {
            epoch,
            data_loss: data,
            reg_loss: 0.0,
            total: data,
            skipped_singular: 0,
        };
        on_epoch(&report);
        history.push(report);
        if plateau.push(data) {
            break;
        }
    }
    Ok((params, history))
}

/// Adam on `L_data + λ·L_reg` at `lr_finetune`.
///
/// Each epoch walks the reshuffled cloud in minibatches of `batch_size`; every
/// step pairs one cloud minibatch (regularizer jets) with an equal share of the
/// reshuffled SDF samples (data term).
pub fn finetune_stage<T: Real>(
    params: &MlpParams<T>,
    samples: &SdfSampleSet,
    cloud: &PointCloud,
    cfg: &TrainingConfig,
) -> Result<(MlpParams<T>, Vec<LossReport>)> {
    finetune_stage_with(params, samples, cloud, cfg, |_| {})
}

pub fn finetune_stage_with<T: Real>(
    params: &MlpParams<T>,
    samples: &SdfSampleSet,
    cloud: &PointCloud,
    cfg: &TrainingConfig,
    mut on_epoch: impl FnMut(&LossReport),
) -> Result<(MlpParams<T>, Vec<LossReport>)> {
    cfg.validate()?;
    let reg = cfg
        .reg
        .ok_or_else(|| Error::Config("fine-tuning requires a regularizer with an explicit lambda".into()))?;
    let mut params = params.clone();
    let mut history = Vec::new();
    if cfg.max_epochs_finetune == 0 {
        return Ok((params, history));
    }
    if samples.is_empty() || cloud.is_empty() {
        return Err(Error::EmptyBatch { skipped: 0 });
    }
    let lambda = T::lit(reg.lambda);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut adam = AdamState::new(&params);
    let mut plateau = Plateau::new(cfg.plateau_window, cfg.plateau_rel_tol);
    let mut cloud_order: Vec<usize> = (0..cloud.len()).collect();
    let mut sample_order: Vec<usize> = (0..samples.len()).collect();
    let steps = cloud.len().div_ceil(cfg.batch_size);
    let data_bs = samples.len().div_ceil(steps);
    for epoch in 0..cfg.max_epochs_finetune {
        cloud_order.shuffle(&mut rng);
        sample_order.shuffle(&mut rng);
        let (mut data_sum, mut data_n) = (0.0, 0usize);
        let (mut reg_sum, mut reg_n, mut skipped) = (0.0, 0usize, 0usize);
        for (step, cidx) in cloud_order.chunks(cfg.batch_size).enumerate() {
            let lo = (step * data_bs).min(samples.len());
            let sidx = &sample_order[lo..(lo + data_bs).min(samples.len())];
            let mut grad = params.zero_grads();
            if !sidx.is_empty() {
                let (d, g) = data_loss_grad(&params, samples, sidx, cfg.delta)?;
                data_sum += d.as_f64() * sidx.len() as f64;
                data_n += sidx.len();
                grad = g;
            }
            if reg.lambda > 0.0 {
                let pts: Vec<Point3> = cidx.iter().map(|&i| cloud.points[i]).collect();
                match reg_loss_grad(&params, &pts, &reg) {
                    Ok(rg) => {
                        reg_sum += rg.loss.as_f64() * rg.valid as f64;
                        reg_n += rg.valid;
                        skipped += rg.skipped;
                        grad.add_scaled(&rg.grad, lambda);
                    }
                    Err(Error::EmptyBatch { skipped: s }) => skipped += s,
                    Err(e) => return Err(e),
                }
            }
            adam_step(&mut params, &grad, &mut adam, cfg.lr_finetune)?;
        }
        let data = if data_n > 0 { data_sum / data_n as f64 } else { 0.0 };
        let reg_mean = if reg_n > 0 { reg_sum / reg_n as f64 } else { 0.0 };
        let total = data + reg.lambda * reg_mean;
        if !total.is_finite() || !params.is_finite() {
            return Err(diverged("finetune", epoch, total));
        }
        let report = LossReport {
            epoch,
            data_loss: data,
            reg_loss: reg_mean,
            total,
            skipped_singular: skipped,
        };
        on_epoch(&report);
        history.push(report);
        if plateau.push(total) {
            break;
        }
    }
    Ok((params, history))
}

/// CSV with header `epoch,data,reg,total,skipped_singular`.
pub fn save_history(history: &[LossReport], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("epoch,data,reg,total,skipped_singular\n");
    for r in history {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.epoch, r.data_loss, r.reg_loss, r.total, r.skipped_singular
        );
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::{NetworkConfig, Normalization};
    use crate::jet::Activation;
    use ndarray::{arr1, arr2};

    fn zero_net() -> MlpParams<f64> {
        MlpParams::from_parts(
            vec![arr2(&[[0.0, 0.0, 0.0]])],
            vec![arr1(&[0.0])],
            Activation::Gelu,
            Normalization::None,
        )
        .unwrap()
    }

    fn set(positions: Vec<Point3>, targets: Vec<f64>) -> SdfSampleSet {
        SdfSampleSet { positions, targets }
    }

    #[test]
    fn clamp_examples() {
        assert_eq!(clamp(0.5, 0.01), 0.01);
        assert_eq!(clamp(-0.02, 0.01), -0.01);
        assert_eq!(clamp(0.005, 0.01), 0.005);
    }

    #[test]
    fn data_loss_examples() {
        let net = zero_net();
        let b = set(vec![[0.1, 0.2, 0.3]; 3], vec![0.0; 3]);
        assert_eq!(data_loss(&net, &b, 0.01).unwrap(), 0.0);
        let b = set(vec![[0.0; 3]], vec![0.5]);
        assert_eq!(data_loss(&net, &b, 0.01).unwrap(), 0.01);
    }

    #[test]
    fn adam_first_step_and_zero_gradient() {
        let mut net = zero_net();
        let mut g = net.zero_grads();
        g.weights[0][[0, 0]] = 0.3;
        g.weights[0][[0, 1]] = -2.0;
        let mut st = AdamState::new(&net);
        adam_step(&mut net, &g, &mut st, 1e-4).unwrap();
        let expect = |g: f64| -1e-4 * g / (g.abs() + ADAM_EPS);
        assert!((net.weights[0][[0, 0]] - expect(0.3)).abs() < 1e-18);
        assert!((net.weights[0][[0, 1]] - expect(-2.0)).abs() < 1e-18);
        assert_eq!(net.weights[0][[0, 2]], 0.0);
        assert_eq!(net.biases[0][0], 0.0);

        let before = net.clone();
        let mut st = AdamState::new(&net);
        let zero = net.zero_grads();
        adam_step(&mut net, &zero, &mut st, 1e-4).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn zero_epochs_is_identity() {
        let net = MlpParams::<f64>::init(&NetworkConfig { depth: 2, width: 8, ..Default::default() }).unwrap();
        let b = set(vec![[0.1, 0.0, 0.0]], vec![0.0]);
        let cfg = TrainingConfig { max_epochs_fit: 0, ..Default::default() };
        let (out, hist) = fit_stage(&net, &b, &cfg).unwrap();
        assert_eq!(out, net);
        assert!(hist.is_empty());
    }

    #[test]
    fn plateau_stops_on_flat_history() {
        let mut p = Plateau::new(3, 1e-4);
        assert!(!p.push(1.0));
        assert!(!p.push(0.5));
        assert!(!p.push(0.4));
        assert!(!p.push(0.3));
        assert!(!p.push(0.3));
        assert!(!p.push(0.3));
        assert!(p.push(0.3));
    }

    #[test]
    fn finetune_requires_regularizer() {
        let net = zero_net();
        let b = set(vec![[0.1, 0.0, 0.0]], vec![0.0]);
        let pc = PointCloud::new(vec![[0.1, 0.0, 0.0]], vec![[1.0, 0.0, 0.0]]).unwrap();
        let err = finetune_stage(&net, &b, &pc, &TrainingConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
