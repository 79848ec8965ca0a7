//! Developability losses on the implicit Hessian `H` and bordered Hessian `Ĥ`.
//!
//! Each per-point loss comes with its adjoint with respect to the jet so the
//! trainer can pull it back to the network parameters.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::curvature::{bordered_det, cofactor3, GRADIENT_FLOOR};
use crate::jet::{Jet2, JetAdjoint};
use crate::spectral::spectrum;
use crate::{sign0, Error, Real, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RegularizerKind {
    /// Nuclear norm `σ1 + σ2 + σ3` of `H`.
    Nn,
    /// `log det(HᵀH + I)`.
    Logdet,
    /// `|det Ĥ|`.
    Hdet,
    /// Partial sum `Σ_{o>r} σ_o` of `H`.
    Pnn,
}

impl RegularizerKind {
    pub const ALL: [RegularizerKind; 4] = [
        RegularizerKind::Nn,
        RegularizerKind::Logdet,
        RegularizerKind::Hdet,
        RegularizerKind::Pnn,
    ];
}

impl fmt::Display for RegularizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RegularizerKind::Nn => "nn",
            RegularizerKind::Logdet => "logdet",
            RegularizerKind::Hdet => "hdet",
            RegularizerKind::Pnn => "pnn",
        })
    }
}

impl FromStr for RegularizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "nn" => Ok(RegularizerKind::Nn),
            "logdet" => Ok(RegularizerKind::Logdet),
            "hdet" => Ok(RegularizerKind::Hdet),
            "pnn" => Ok(RegularizerKind::Pnn),
            _ => Err(Error::Config(format!(
                "unknown regularizer `{s}` (expected nn, logdet, hdet or pnn)"
            ))),
        }
    }
}

impl Serialize for RegularizerKind {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RegularizerKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

fn default_rank() -> usize {
    2
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizerConfig {
    pub kind: RegularizerKind,
    /// Weight of the regularizer in the total loss.
    pub lambda: f64,
    /// Number of leading singular values excluded by `pnn`.
    #[serde(default = "default_rank")]
    pub r: usize,
}

impl RegularizerConfig {
    pub fn new(kind: RegularizerKind, lambda: f64) -> Self {
        Self { kind, lambda, r: 2 }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::Config(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if self.r > 2 {
            return Err(Error::Config(format!("pnn rank r must be 0, 1 or 2, got {}", self.r)));
        }
        Ok(())
    }
}

pub fn loss_nn<T: Real>(j: &Jet2<T>) -> T {
    let s = spectrum(&j.hessian).sigma;
    s[0] + s[1] + s[2]
}

pub fn loss_logdet<T: Real>(j: &Jet2<T>) -> T {
    spectrum(&j.hessian).sigma.iter().map(|&s| (s * s).ln_1p()).sum()
}

pub fn loss_hdet<T: Real>(j: &Jet2<T>) -> T {
    bordered_det(j).abs()
}

pub fn loss_pnn<T: Real>(j: &Jet2<T>, r: usize) -> Result<T> {
    if r > 2 {
        return Err(Error::Config(format!("pnn rank r must be 0, 1 or 2, got {r}")));
    }
    Ok(spectrum(&j.hessian).sigma[r..].iter().copied().sum())
}

/// Per-point loss and its (sub)gradient with respect to the jet.
///
/// Spectral losses use the returned eigenbasis, so ties pick one valid
/// subgradient; `sign(0) = 0` for the absolute values.
pub fn loss_with_adjoint<T: Real>(
    kind: RegularizerKind,
    r: usize,
    j: &Jet2<T>,
) -> Result<(T, JetAdjoint<T>)> {
    let mut adj = JetAdjoint::zero();
    let value = match kind {
        RegularizerKind::Nn | RegularizerKind::Pnn | RegularizerKind::Logdet => {
            let first = match kind {
                RegularizerKind::Pnn if r > 2 => {
                    return Err(Error::Config(format!("pnn rank r must be 0, 1 or 2, got {r}")))
                }
                RegularizerKind::Pnn => r,
                _ => 0,
            };
            let sp = spectrum(&j.hessian);
            let mut w = [T::zero(); 3];
            let mut value = T::zero();
            for i in first..3 {
                let l = sp.eigenvalues[i];
                if kind == RegularizerKind::Logdet {
                    value += (l * l).ln_1p();
                    w[i] = T::lit(2.0) * l / (T::one() + l * l);
                } else {
                    value += sp.sigma[i];
                    w[i] = sign0(l);
                }
            }
            adj.hessian = sp.weighted_projector(w);
            value
        }
        RegularizerKind::Hdet => {
            let d = bordered_det(j);
            let s = -sign0(d);
            let (g, h) = (j.gradient, j.hessian);
            let (a, b, c) = (h[0][0], h[1][1], h[2][2]);
            let (dd, e, f) = (h[0][1], h[0][2], h[1][2]);
            let two = T::lit(2.0);
            // ∂q/∂(packed entry) for q = g·Cof(H)·g, d = −q
            let qa = g[1] * g[1] * c + g[2] * g[2] * b - two * g[1] * g[2] * f;
            let qb = g[0] * g[0] * c + g[2] * g[2] * a - two * g[0] * g[2] * e;
            let qc = g[0] * g[0] * b + g[1] * g[1] * a - two * g[0] * g[1] * dd;
            let qd = -two * g[2] * g[2] * dd - two * g[0] * g[1] * c
                + two * g[0] * g[2] * f
                + two * g[1] * g[2] * e;
            let qe = -two * g[1] * g[1] * e + two * g[0] * g[1] * f - two * g[0] * g[2] * b
                + two * g[1] * g[2] * dd;
            let qf = -two * g[0] * g[0] * f + two * g[0] * g[1] * e + two * g[0] * g[2] * dd
                - two * g[1] * g[2] * a;
            let half = T::lit(0.5);
            adj.hessian = [
                [s * qa, s * half * qd, s * half * qe],
                [s * half * qd, s * qb, s * half * qf],
                [s * half * qe, s * half * qf, s * qc],
            ];
            let cof = cofactor3(&h);
            for i in 0..3 {
                let cg: T = (0..3).map(|k| cof[i][k] * g[k]).sum();
                adj.gradient[i] = s * two * cg;
            }
            d.abs()
        }
    };
    Ok((value, adj))
}

/// Mean regularizer over a batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegLoss<T> {
    pub value: T,
    pub valid: usize,
    pub skipped: usize,
}

fn is_valid<T: Real>(j: &Jet2<T>) -> bool {
    j.gradient_norm() > T::lit(GRADIENT_FLOOR) && j.is_finite()
}

/// Mean of the selected per-point loss over samples whose gradient clears
/// [`GRADIENT_FLOOR`]. `lambda` is not applied here.
pub fn reg_loss<T: Real>(cfg: &RegularizerConfig, jets: &[Jet2<T>]) -> Result<RegLoss<T>> {
    reg_loss_with_adjoints(cfg, jets).map(|(l, _)| l)
}

/// [`reg_loss`] plus per-sample adjoints of the mean (zero for skipped samples).
pub fn reg_loss_with_adjoints<T: Real>(
    cfg: &RegularizerConfig,
    jets: &[Jet2<T>],
) -> Result<(RegLoss<T>, Vec<JetAdjoint<T>>)> {
    cfg.validate()?;
    let valid = jets.iter().filter(|j| is_valid(*j)).count();
    let skipped = jets.len() - valid;
    if valid == 0 {
        return Err(Error::EmptyBatch { skipped });
    }
    let inv = T::one() / T::from_usize_lossy(valid);
    let mut sum = T::zero();
    let mut adjoints = Vec::with_capacity(jets.len());
    for j in jets {
        if is_valid(j) {
            let (v, a) = loss_with_adjoint(cfg.kind, cfg.r, j)?;
            sum += v;
            adjoints.push(a.scaled(inv));
        } else {
            adjoints.push(JetAdjoint::zero());
        }
    }
    Ok((
        RegLoss {
            value: sum * inv,
            valid,
            skipped,
        },
        adjoints,
    ))
}
