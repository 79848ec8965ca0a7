use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Axis};

use super::activation::Activation;
use super::layer::{activate_backward, JetOrder, LayerJets};
use super::norm::group_norm_backward;
use super::JetAdjoint;
use crate::{Error, Real, Result};

/// One gradient buffer per parameter tensor of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct GradAccumulator<T> {
    pub weights: Vec<Array2<T>>,
    pub biases: Vec<Array1<T>>,
}

impl<T: Real> GradAccumulator<T> {
    pub fn zeros_like(weights: &[Array2<T>], biases: &[Array1<T>]) -> Self {
        Self {
            weights: weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    pub fn zero(&mut self) {
        self.weights.iter_mut().for_each(|w| w.fill(T::zero()));
        self.biases.iter_mut().for_each(|b| b.fill(T::zero()));
    }

    /// `self += a · other`. Shapes must match.
    pub fn add_scaled(&mut self, other: &Self, a: T) {
        for (w, o) in self.weights.iter_mut().zip(&other.weights) {
            w.scaled_add(a, o);
        }
        for (b, o) in self.biases.iter_mut().zip(&other.biases) {
            b.scaled_add(a, o);
        }
    }

    pub fn scale(&mut self, a: T) {
        self.weights.iter_mut().for_each(|w| *w *= a);
        self.biases.iter_mut().for_each(|b| *b *= a);
    }

    pub fn len(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Weights layer by layer (row-major), then biases.
    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.len());
        for w in &self.weights {
            out.extend(w.iter().copied());
        }
        for b in &self.biases {
            out.extend(b.iter().copied());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|x| x.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|x| x.is_finite()))
    }
}

#[derive(Clone, Debug)]
enum TapeOp<T> {
    Affine { layer: usize, input: LayerJets<T> },
    Activate { kind: Activation, pre: LayerJets<T> },
    GroupNorm { groups: usize, pre: LayerJets<T> },
}

/// Record of one forward jet pass, replayed in reverse for parameter gradients.
#[derive(Clone, Debug, Default)]
pub struct Tape<T> {
    ops: Vec<TapeOp<T>>,
    output: Option<LayerJets<T>>,
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            ops: Vec::new(),
            output: None,
        }
    }

    pub(crate) fn push_affine(&mut self, layer: usize, input: LayerJets<T>) {
        self.ops.push(TapeOp::Affine { layer, input });
    }

    pub(crate) fn push_activation(&mut self, kind: Activation, pre: LayerJets<T>) {
        self.ops.push(TapeOp::Activate { kind, pre });
    }

    pub(crate) fn push_group_norm(&mut self, groups: usize, pre: LayerJets<T>) {
        self.ops.push(TapeOp::GroupNorm { groups, pre });
    }

    pub(crate) fn finish(&mut self, output: LayerJets<T>) {
        self.output = Some(output);
    }

    /// Network output jets, once the forward pass completed.
    pub fn output(&self) -> Option<&LayerJets<T>> {
        self.output.as_ref()
    }

    pub fn order(&self) -> Option<JetOrder> {
        self.output.as_ref().map(|o| o.order)
    }

    pub fn batch(&self) -> Option<usize> {
        self.output.as_ref().map(|o| o.batch)
    }

    /// Output adjoint from per-sample sensitivities to the value only.
    pub fn value_adjoint(&self, dvalue: &[T]) -> Result<Array2<T>> {
        let out = self.completed()?;
        if dvalue.len() != out.batch {
            return Err(Error::Dimension(format!(
                "{} value adjoints for batch of {}",
                dvalue.len(),
                out.batch
            )));
        }
        let mut adj = Array2::zeros(out.data.raw_dim());
        for (s, &d) in dvalue.iter().enumerate() {
            adj[[0, s]] = d;
        }
        Ok(adj)
    }

    /// Output adjoint from per-sample jet sensitivities; derivative channels
    /// beyond the recorded order must be zero and are dropped.
    pub fn jet_adjoint(&self, adjoints: &[JetAdjoint<T>]) -> Result<Array2<T>> {
        let out = self.completed()?;
        if adjoints.len() != out.batch {
            return Err(Error::Dimension(format!(
                "{} jet adjoints for batch of {}",
                adjoints.len(),
                out.batch
            )));
        }
        let b = out.batch;
        let ch = out.order.channels();
        let mut adj = Array2::zeros(out.data.raw_dim());
        for (s, a) in adjoints.iter().enumerate() {
            let p = a.to_packed();
            for c in 0..ch {
                adj[[0, c * b + s]] = p[c];
            }
        }
        Ok(adj)
    }

    fn completed(&self) -> Result<&LayerJets<T>> {
        self.output
            .as_ref()
            .ok_or_else(|| Error::State("backward requested before a completed forward pass".into()))
    }

    /// Accumulates `∂L/∂θ` into `acc` given `∂L/∂(output jets)`.
    pub fn backward_params(
        &self,
        weights: &[Array2<T>],
        output_adjoint: &Array2<T>,
        acc: &mut GradAccumulator<T>,
    ) -> Result<()> {
        let out = self.completed()?;
        if output_adjoint.raw_dim() != out.data.raw_dim() {
            return Err(Error::Dimension(format!(
                "output adjoint {:?} does not match output {:?}",
                output_adjoint.shape(),
                out.data.shape()
            )));
        }
        if acc.weights.len() != weights.len() {
            return Err(Error::Dimension("accumulator does not match network".into()));
        }
        let mut adj = output_adjoint.clone();
        for op in self.ops.iter().rev() {
            match op {
                TapeOp::Activate { kind, pre } => {
                    adj = activate_backward(*kind, pre, &adj);
                }
                TapeOp::GroupNorm { groups, pre } => {
                    adj = group_norm_backward(*groups, pre, &adj)?;
                }
                TapeOp::Affine { layer, input } => {
                    let w = &weights[*layer];
                    general_mat_mul(
                        T::one(),
                        &adj,
                        &input.data.t(),
                        T::one(),
                        &mut acc.weights[*layer],
                    );
                    let db = adj.slice(s![.., 0..input.batch]).sum_axis(Axis(1));
                    acc.biases[*layer] += &db;
                    if *layer > 0 {
                        let mut next = Array2::zeros((w.ncols(), adj.ncols()));
                        general_mat_mul(T::one(), &w.t(), &adj, T::zero(), &mut next);
                        adj = next;
                    }
                }
            }
        }
        Ok(())
    }
}
