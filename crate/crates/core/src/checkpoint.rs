//! JSON checkpoints of network parameters. Floats are written in shortest
//! round-trip form, so `f64` parameters reload bit-identically.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::jet::Activation;
use crate::mlp::{MlpParams, Normalization};
use crate::sampling::NormalizationTransform;
use crate::{Error, Real, Result};

const FORMAT: &str = "devimplicit-checkpoint";
const VERSION: u32 = 1;

/// Trained parameters plus the transform that mapped the input cloud into
/// the unit box, if any.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub params: MlpParams<T>,
    pub transform: Option<NormalizationTransform>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Stored {
    format: String,
    version: u32,
    scalar: String,
    layer_dims: Vec<usize>,
    activation: Activation,
    normalization: Normalization,
    /// Row-major, one entry per layer.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    transform: Option<NormalizationTransform>,
}

fn scalar_name<T: Real>() -> &'static str {
    if std::mem::size_of::<T>() == 4 {
        "f32"
    } else {
        "f64"
    }
}

impl<T: Real> Checkpoint<T> {
    pub fn new(params: MlpParams<T>, transform: Option<NormalizationTransform>) -> Self {
        Self { params, transform }
    }

    pub fn to_json(&self) -> Result<String> {
        if !self.params.is_finite() {
            return Err(Error::State("refusing to save non-finite parameters".into()));
        }
        let p = &self.params;
        let stored = Stored {
            format: FORMAT.into(),
            version: VERSION,
            scalar: scalar_name::<T>().into(),
            layer_dims: p.layer_dims.clone(),
            activation: p.activation,
            normalization: p.normalization,
            weights: p.weights.iter().map(|w| w.iter().map(|x| x.as_f64()).collect()).collect(),
            biases: p.biases.iter().map(|b| b.iter().map(|x| x.as_f64()).collect()).collect(),
            transform: self.transform,
        };
        serde_json::to_string(&stored).map_err(|e| Error::State(format!("serializing checkpoint: {e}")))
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let s: Stored = serde_json::from_str(text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        if s.format != FORMAT || s.version != VERSION {
            return Err(Error::Config(format!(
                "{}: not a version {VERSION} checkpoint (format `{}`, version {})",
                path.display(),
                s.format,
                s.version
            )));
        }
        let dims = &s.layer_dims;
        if dims.len() < 2 || s.weights.len() != dims.len() - 1 || s.biases.len() != dims.len() - 1 {
            return Err(Error::Dimension(format!(
                "{}: {} layer dims with {} weight and {} bias blocks",
                path.display(),
                dims.len(),
                s.weights.len(),
                s.biases.len()
            )));
        }
        let mut weights = Vec::with_capacity(s.weights.len());
        let mut biases = Vec::with_capacity(s.biases.len());
        for (l, (w, b)) in s.weights.into_iter().zip(s.biases).enumerate() {
            let shape = (dims[l + 1], dims[l]);
            let w = Array2::from_shape_vec(shape, w.into_iter().map(T::lit).collect()).map_err(|e| {
                Error::Dimension(format!("{}: layer {l} weights: {e}", path.display()))
            })?;
            if b.len() != dims[l + 1] {
                return Err(Error::Dimension(format!(
                    "{}: layer {l} has {} biases for {} units",
                    path.display(),
                    b.len(),
                    dims[l + 1]
                )));
            }
            weights.push(w);
            biases.push(Array1::from_iter(b.into_iter().map(T::lit)));
        }
        let params = MlpParams::from_parts(weights, biases, s.activation, s.normalization)?;
        Ok(Self {
            params,
            transform: s.transform,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::{Init, NetworkConfig};

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = NetworkConfig {
            depth: 3,
            width: 16,
            activation: Activation::Sine(30.0),
            normalization: Normalization::Group { groups: 4 },
            init: Init::Uniform,
            seed: 5,
        };
        let ck = Checkpoint::new(
            MlpParams::<f64>::init(&cfg).unwrap(),
            Some(NormalizationTransform { center: [0.1, -2.0, 1.0 / 3.0], scale: 0.7 }),
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::<f64>::load(&path).unwrap();
        assert_eq!(back, ck);
        for (a, b) in back.params.weights.iter().zip(&ck.params.weights) {
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        ck.save(dir.path().join("again.json")).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(dir.path().join("again.json")).unwrap());
    }

    #[test]
    fn rejects_foreign_documents() {
        let p = Path::new("x.json");
        assert!(matches!(Checkpoint::<f64>::from_json("{}", p), Err(Error::Json { .. })));
        let ck = Checkpoint::new(MlpParams::<f64>::init(&NetworkConfig { depth: 1, width: 1, ..Default::default() }).unwrap(), None);
        let text = ck.to_json().unwrap().replace(FORMAT, "other");
        assert!(matches!(Checkpoint::<f64>::from_json(&text, p), Err(Error::Config(_))));
    }
}
