use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::{Error, Real};

/// Twice-differentiable activation functions.
///
/// `Sine(ω)` is `sin(ω·x)`. `Elu` uses `α = 1`; its second derivative jumps at 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Gelu,
    Silu,
    Tanh,
    Elu,
    Sine(f64),
}

impl Activation {
    pub const ALL_DEFAULT: [Activation; 5] = [
        Activation::Gelu,
        Activation::Silu,
        Activation::Tanh,
        Activation::Elu,
        Activation::Sine(1.0),
    ];
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Gelu => f.write_str("gelu"),
            Activation::Silu => f.write_str("silu"),
            Activation::Tanh => f.write_str("tanh"),
            Activation::Elu => f.write_str("elu"),
            Activation::Sine(w) if *w == 1.0 => f.write_str("sine"),
            Activation::Sine(w) => write!(f, "sine:{w}"),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    /// Accepts `gelu`, `silu`, `tanh`, `elu`, `sine` and `sine:<omega>`.
    fn from_str(s: &str) -> Result<Self, Error> {
        let lower = s.trim().to_ascii_lowercase();
        let act = match lower.as_str() {
            "gelu" => Activation::Gelu,
            "silu" => Activation::Silu,
            "tanh" => Activation::Tanh,
            "elu" => Activation::Elu,
            "sine" | "sin" => Activation::Sine(1.0),
            other => match other.strip_prefix("sine:") {
                Some(w) => {
                    let omega: f64 = w
                        .parse()
                        .map_err(|_| Error::Config(format!("bad sine frequency `{w}`")))?;
                    if !omega.is_finite() || omega == 0.0 {
                        return Err(Error::Config(format!("bad sine frequency `{w}`")));
                    }
                    Activation::Sine(omega)
                }
                None => {
                    return Err(Error::Config(format!(
                        "unknown activation `{s}` (expected gelu, silu, tanh, elu or sine)"
                    )))
                }
            },
        };
        Ok(act)
    }
}

impl Serialize for Activation {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Activation {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// `(σ(x), σ'(x), σ''(x))`.
#[inline]
pub fn activation_derivs<T: Real>(kind: Activation, x: T) -> (T, T, T) {
    let [v, d1, d2, _] = activation_derivs3(kind, x);
    (v, d1, d2)
}

/// `[σ, σ', σ'', σ''']`. The third derivative feeds the parameter gradient of
/// Hessian-dependent losses.
#[inline]
pub fn activation_derivs3<T: Real>(kind: Activation, x: T) -> [T; 4] {
    let one = T::one();
    let two = T::lit(2.0);
    match kind {
        Activation::Gelu => {
            // x·Φ(x) with the exact normal CDF
            let cdf = T::lit(0.5) * (one + (x * T::FRAC_1_SQRT_2()).erf());
            let pdf = (-T::lit(0.5) * x * x).exp() * T::lit(0.398_942_280_401_432_7);
            let x2 = x * x;
            [x * cdf, cdf + x * pdf, pdf * (two - x2), pdf * x * (x2 - T::lit(4.0))]
        }
        Activation::Silu => {
            let s = one / (one + (-x).exp());
            let q = s * (one - s);
            let u = one - two * s;
            let d2 = q * (two + x * u);
            let d3 = q * u * (two + x * u) + q * (u - two * x * q);
            [x * s, s + x * q, d2, d3]
        }
        Activation::Tanh => {
            let t = x.tanh();
            let s = one - t * t;
            [t, s, -two * t * s, s * (T::lit(6.0) * t * t - two)]
        }
        Activation::Elu => {
            if x > T::zero() {
                [x, one, T::zero(), T::zero()]
            } else {
                let e = x.exp();
                [e - one, e, e, e]
            }
        }
        Activation::Sine(omega) => {
            let w = T::lit(omega);
            let (s, c) = (w * x).sin_cos();
            [s, w * c, -w * w * s, -w * w * w * c]
        }
    }
}
