//! The implicit network `f(p; θ)`: fully connected layers from 3D points to a
//! scalar signed distance.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::field::{JetField, ScalarField};
use crate::jet::{
    group_norm_jets, jet_activate, jet_affine, Activation, GradAccumulator, Jet2, JetOrder,
    LayerJets, Tape,
};
use crate::{Error, Real, Result};

/// Points per chunk for batched evaluation. Fixed so reductions over chunks
/// do not depend on the worker count.
pub const EVAL_CHUNK: usize = 1024;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    None,
    /// Parameter-free group normalization after every hidden affine layer.
    Group { groups: usize },
}

/// Weight initialization scheme.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// `U(−1/√fan_in, 1/√fan_in)` for weights and biases.
    Uniform,
    /// Starts near the signed distance of a sphere of the given radius.
    /// First-layer weights are `N(0, 1/radius²)`, later hidden weights
    /// `N(0, 2/fan_out)`, hidden biases zero. The output layer is a constant
    /// weight and bias chosen so that, averaged over a Fibonacci sphere of
    /// that radius, `f = 0` and `∂f/∂r = 1`.
    Geometric { radius: f64 },
}

impl Default for Init {
    fn default() -> Self {
        Init::Geometric { radius: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    /// Number of affine layers.
    pub depth: usize,
    pub width: usize,
    pub activation: Activation,
    pub normalization: Normalization,
    pub init: Init,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            depth: 4,
            width: 128,
            activation: Activation::Gelu,
            normalization: Normalization::None,
            init: Init::default(),
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.width == 0 {
            return Err(Error::Config(format!(
                "network depth and width must be positive (got {}x{})",
                self.depth, self.width
            )));
        }
        if let Init::Geometric { radius } = self.init {
            if !(radius > 0.0) || !radius.is_finite() {
                return Err(Error::Config(format!("geometric init radius must be positive, got {radius}")));
            }
            if matches!(self.activation, Activation::Tanh | Activation::Sine(_)) {
                return Err(Error::Config(format!(
                    "geometric init needs a ReLU-like activation (gelu, silu, elu), not {}; use \"init\": \"uniform\"",
                    self.activation
                )));
            }
        }
        if let Normalization::Group { groups } = self.normalization {
            if groups == 0 || self.width % groups != 0 {
                return Err(Error::Config(format!(
                    "{groups} normalization groups do not divide width {}",
                    self.width
                )));
            }
        }
        Ok(())
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![3];
        dims.extend(std::iter::repeat_n(self.width, self.depth - 1));
        dims.push(1);
        dims
    }
}

/// Weights and biases of the implicit network.
///
/// `weights[l]` maps `layer_dims[l]` units to `layer_dims[l + 1]`. Hidden
/// layers apply the optional normalization and then the activation; the final
/// layer is affine.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams<T> {
    pub layer_dims: Vec<usize>,
    pub weights: Vec<Array2<T>>,
    pub biases: Vec<Array1<T>>,
    pub activation: Activation,
    pub normalization: Normalization,
}

impl<T: Real> MlpParams<T> {
    /// Seeded initialization per [`Init`]; deterministic in `cfg.seed`.
    pub fn init(cfg: &NetworkConfig) -> Result<Self> {
        cfg.validate()?;
        let dims = cfg.layer_dims();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut weights = Vec::with_capacity(dims.len() - 1);
        let mut biases = Vec::with_capacity(dims.len() - 1);
        let last = dims.len() - 2;
        for (l, pair) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let (w, b) = match cfg.init {
                Init::Uniform => {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    let w = Array2::from_shape_fn((fan_out, fan_in), |_| T::lit(rng.random_range(-bound..bound)));
                    let b = Array1::from_shape_fn(fan_out, |_| T::lit(rng.random_range(-bound..bound)));
                    (w, b)
                }
                Init::Geometric { .. } if l == last => (Array2::ones((fan_out, fan_in)), Array1::zeros(fan_out)),
                Init::Geometric { radius } => {
                    let std = if l == 0 { 1.0 / radius } else { (2.0 / fan_out as f64).sqrt() };
                    let normal = Normal::new(0.0, std).expect("positive std");
                    let w = Array2::from_shape_fn((fan_out, fan_in), |_| T::lit(normal.sample(&mut rng)));
                    (w, Array1::zeros(fan_out))
                }
            };
            weights.push(w);
            biases.push(b);
        }
        let mut params = Self {
            layer_dims: dims,
            weights,
            biases,
            activation: cfg.activation,
            normalization: cfg.normalization,
        };
        if let Init::Geometric { radius } = cfg.init {
            params.calibrate_sphere(radius)?;
        }
        Ok(params)
    }

    fn calibrate_sphere(&mut self, radius: f64) -> Result<()> {
        const N: usize = 64;
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let pts: Vec<[T; 3]> = (0..N)
            .map(|i| {
                let z = 1.0 - (2 * i + 1) as f64 / N as f64;
                let rho = (1.0 - z * z).sqrt();
                let t = i as f64 * golden;
                [rho * t.cos(), rho * t.sin(), z].map(|c| T::lit(radius * c))
            })
            .collect();
        let jets = self.eval_jet_batch(&pts);
        let n = T::from_usize_lossy(N);
        let mean_value = jets.iter().map(|j| j.value).sum::<T>() / n;
        let mean_radial = jets
            .iter()
            .zip(&pts)
            .map(|(j, p)| (0..3).map(|a| j.gradient[a] * p[a]).sum::<T>())
            .sum::<T>()
            / (n * T::lit(radius));
        let c = T::one() / mean_radial;
        if !(mean_radial > T::zero()) || !c.is_finite() || !mean_value.is_finite() {
            return Err(Error::Config(format!(
                "geometric init does not produce an outward field with {} activations",
                self.activation
            )));
        }
        let last = self.weights.len() - 1;
        self.weights[last].fill(c);
        self.biases[last].fill(-c * mean_value);
        Ok(())
    }

    /// Builds parameters from explicit tensors, checking shapes.
    pub fn from_parts(
        weights: Vec<Array2<T>>,
        biases: Vec<Array1<T>>,
        activation: Activation,
        normalization: Normalization,
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::Dimension(format!(
                "{} weight matrices with {} bias vectors",
                weights.len(),
                biases.len()
            )));
        }
        let mut dims = vec![weights[0].ncols()];
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.ncols() != *dims.last().unwrap() || w.nrows() != b.len() {
                return Err(Error::Dimension(format!(
                    "layer {l}: weight {:?} and bias {} do not chain",
                    w.shape(),
                    b.len()
                )));
            }
            dims.push(w.nrows());
        }
        if dims[0] != 3 || *dims.last().unwrap() != 1 {
            return Err(Error::Dimension(format!(
                "network must map 3 inputs to 1 output, got {dims:?}"
            )));
        }
        if let Normalization::Group { groups } = normalization {
            if dims[1..dims.len() - 1].iter().any(|&u| groups == 0 || u % groups != 0) {
                return Err(Error::Config(format!(
                    "{groups} normalization groups do not divide hidden widths {dims:?}"
                )));
            }
        }
        Ok(Self {
            layer_dims: dims,
            weights,
            biases,
            activation,
            normalization,
        })
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn zero_grads(&self) -> GradAccumulator<T> {
        GradAccumulator::zeros_like(&self.weights, &self.biases)
    }

    /// Parameter `k` in the flattening order of [`GradAccumulator::to_flat`].
    pub fn param_mut(&mut self, mut k: usize) -> &mut T {
        for w in &mut self.weights {
            if k < w.len() {
                return w.as_slice_mut().expect("standard layout")
                    .get_mut(k)
                    .expect("in range");
            }
            k -= w.len();
        }
        for b in &mut self.biases {
            if k < b.len() {
                return &mut b[k];
            }
            k -= b.len();
        }
        panic!("parameter index out of range")
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|x| x.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|x| x.is_finite()))
    }

    fn run(&self, points: &[[T; 3]], order: JetOrder, mut tape: Option<&mut Tape<T>>) -> Result<LayerJets<T>> {
        let last = self.weights.len() - 1;
        let mut x = LayerJets::from_points(points, order);
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = jet_affine(w, b, &x)?;
            if let Some(t) = tape.as_deref_mut() {
                t.push_affine(l, x);
            }
            if l == last {
                return Ok(z);
            }
            if let Normalization::Group { groups } = self.normalization {
                let n = group_norm_jets(groups, &z)?;
                if let Some(t) = tape.as_deref_mut() {
                    t.push_group_norm(groups, z);
                }
                z = n;
            }
            x = jet_activate(self.activation, &z);
            if let Some(t) = tape.as_deref_mut() {
                t.push_activation(self.activation, z);
            }
        }
        unreachable!("network has at least one layer")
    }

    /// Forward pass on one batch without recording.
    pub fn forward(&self, points: &[[T; 3]], order: JetOrder) -> Result<LayerJets<T>> {
        self.run(points, order, None)
    }

    /// Forward pass on one batch, recording everything needed by
    /// [`Tape::backward_params`].
    pub fn forward_tape(&self, points: &[[T; 3]], order: JetOrder) -> Result<Tape<T>> {
        let mut tape = Tape::new();
        let out = self.run(points, order, Some(&mut tape))?;
        tape.finish(out);
        Ok(tape)
    }

    pub fn eval(&self, p: [T; 3]) -> T {
        self.forward(&[p], JetOrder::Value)
            .expect("parameters are shape-checked")
            .channel(0, 0, 0)
    }

    pub fn eval_jet(&self, p: [T; 3]) -> Jet2<T> {
        self.forward(&[p], JetOrder::Hessian)
            .expect("parameters are shape-checked")
            .jet(0, 0)
    }

    /// Values at many points, evaluated in fixed-size chunks across workers.
    pub fn eval_batch(&self, points: &[[T; 3]]) -> Vec<T> {
        points
            .par_chunks(EVAL_CHUNK)
            .flat_map_iter(|chunk| {
                let out = self.forward(chunk, JetOrder::Value).expect("parameters are shape-checked");
                out.values(0).to_vec()
            })
            .collect()
    }

    pub fn eval_jet_batch(&self, points: &[[T; 3]]) -> Vec<Jet2<T>> {
        points
            .par_chunks(EVAL_CHUNK / 4)
            .flat_map_iter(|chunk| {
                let out = self.forward(chunk, JetOrder::Hessian).expect("parameters are shape-checked");
                (0..chunk.len()).map(move |s| out.jet(0, s))
            })
            .collect()
    }
}

impl<T: Real> ScalarField<T> for MlpParams<T> {
    fn value(&self, p: [T; 3]) -> T {
        self.eval(p)
    }

    fn values(&self, points: &[[T; 3]]) -> Vec<T> {
        self.eval_batch(points)
    }
}

impl<T: Real> JetField<T> for MlpParams<T> {
    fn jet(&self, p: [T; 3]) -> Jet2<T> {
        self.eval_jet(p)
    }

    fn jets(&self, points: &[[T; 3]]) -> Vec<Jet2<T>> {
        self.eval_jet_batch(points)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn affine(w: [f64; 3], b: f64) -> MlpParams<f64> {
        MlpParams::from_parts(
            vec![array![[w[0], w[1], w[2]]]],
            vec![array![b]],
            Activation::Gelu,
            Normalization::None,
        )
        .unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = NetworkConfig { seed: 7, ..Default::default() };
        let a = MlpParams::<f64>::init(&cfg).unwrap();
        let b = MlpParams::<f64>::init(&cfg).unwrap();
        assert_eq!(a, b);
        let c = MlpParams::<f64>::init(&NetworkConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn geometric_init_approximates_a_sphere() {
        for activation in [Activation::Gelu, Activation::Silu, Activation::Elu] {
            let cfg = NetworkConfig { activation, init: Init::Geometric { radius: 0.4 }, ..Default::default() };
            let net = MlpParams::<f64>::init(&cfg).unwrap();
            assert!(net.eval([0.0; 3]) < 0.0);
            assert!(net.eval([0.0, 0.0, 0.9]) > 0.0);
            let j = net.eval_jet([0.4, 0.0, 0.0]);
            assert!(j.value.abs() < 0.15, "{activation}: {}", j.value);
            assert!(j.gradient[0] > 0.5, "{activation}: {:?}", j.gradient);
        }
        for activation in [Activation::Tanh, Activation::Sine(30.0)] {
            let cfg = NetworkConfig { activation, ..Default::default() };
            assert!(matches!(MlpParams::<f64>::init(&cfg), Err(Error::Config(_))));
            assert!(MlpParams::<f64>::init(&NetworkConfig { init: Init::Uniform, ..cfg }).is_ok());
        }
    }

    #[test]
    fn large_architecture_shapes() {
        let cfg = NetworkConfig { depth: 8, width: 512, ..Default::default() };
        let p = MlpParams::<f32>::init(&cfg).unwrap();
        assert_eq!(p.weights.len(), 8);
        assert_eq!(p.layer_dims, vec![3, 512, 512, 512, 512, 512, 512, 512, 1]);
        assert_eq!(p.weights[0].shape(), &[512, 3]);
        assert_eq!(p.weights[7].shape(), &[1, 512]);
    }

    #[test]
    fn single_layer_network_is_affine() {
        let cfg = NetworkConfig { depth: 1, width: 1, ..Default::default() };
        let p = MlpParams::<f64>::init(&cfg).unwrap();
        assert_eq!(p.weights.len(), 1);
        assert_eq!(p.weights[0].shape(), &[1, 3]);
        let j = p.eval_jet([0.3, -0.1, 0.9]);
        assert_eq!(j.hessian, [[0.0; 3]; 3]);
        assert_eq!(j.gradient, [p.weights[0][[0, 0]], p.weights[0][[0, 1]], p.weights[0][[0, 2]]]);
    }

    #[test]
    fn affine_net_evaluates_coordinate() {
        let p = affine([1.0, 0.0, 0.0], 0.0);
        assert_eq!(p.eval([0.25, 4.0, -3.0]), 0.25);
        let j = p.eval_jet([0.25, 4.0, -3.0]);
        assert_eq!(j.gradient, [1.0, 0.0, 0.0]);
        assert_eq!(j.hessian, [[0.0; 3]; 3]);
    }

    #[test]
    fn affine_net_translation_consistency() {
        let p = affine([0.3, -1.2, 0.5], 0.1);
        let x = [0.2, 0.4, -0.6];
        let t = [0.05, -0.3, 0.7];
        let moved = [x[0] + t[0], x[1] + t[1], x[2] + t[2]];
        let expected = 0.3 * t[0] - 1.2 * t[1] + 0.5 * t[2];
        assert!((p.eval(moved) - p.eval(x) - expected).abs() < 1e-12);
    }

    #[test]
    fn value_and_jet_paths_agree() {
        for act in Activation::ALL_DEFAULT {
            let cfg = NetworkConfig { depth: 3, width: 16, activation: act, init: Init::Uniform, ..Default::default() };
            let p = MlpParams::<f64>::init(&cfg).unwrap();
            let pts: Vec<[f64; 3]> = (0..40).map(|i| {
                let t = i as f64 * 0.37;
                [t.sin(), (1.3 * t).cos(), (0.7 * t).sin() * 0.5]
            }).collect();
            let values = p.eval_batch(&pts);
            let jets = p.eval_jet_batch(&pts);
            for ((v, j), &q) in values.iter().zip(&jets).zip(&pts) {
                assert!((v - j.value).abs() < 1e-12);
                assert!((p.eval(q) - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn from_parts_rejects_bad_shapes() {
        let bad = MlpParams::<f64>::from_parts(
            vec![Array2::zeros((4, 3)), Array2::zeros((1, 5))],
            vec![Array1::zeros(4), Array1::zeros(1)],
            Activation::Tanh,
            Normalization::None,
        );
        assert!(matches!(bad, Err(Error::Dimension(_))));
    }

    #[test]
    fn rejects_invalid_config() {
        let cfg = NetworkConfig { depth: 0, ..Default::default() };
        assert!(MlpParams::<f64>::init(&cfg).is_err());
        let cfg = NetworkConfig { normalization: Normalization::Group { groups: 3 }, width: 16, ..Default::default() };
        assert!(MlpParams::<f64>::init(&cfg).is_err());
    }

    #[test]
    fn backward_before_forward_is_a_state_error() {
        let p = MlpParams::<f64>::init(&NetworkConfig { depth: 2, width: 4, ..Default::default() }).unwrap();
        let tape = Tape::<f64>::new();
        let mut acc = p.zero_grads();
        let err = tape.backward_params(&p.weights, &Array2::zeros((1, 1)), &mut acc).unwrap_err();
        assert!(matches!(err, Error::State(_)));
    }
}
