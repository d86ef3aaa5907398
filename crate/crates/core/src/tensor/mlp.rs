use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Module, Tape, Tensor, TensorError, Var};
use crate::real::{gemm, MatView, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Linear,
}

impl Activation {
    fn apply<F: Real>(self, x: F) -> F {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(F::zero()),
            Activation::Linear => x,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Layer<F = f32> {
    /// `[in, out]`
    pub weight: Tensor<F>,
    /// `[out]`
    pub bias: Tensor<F>,
    pub activation: Activation,
}

impl<F: Real> Layer<F> {
    fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }
}

#[derive(Debug, Clone)]
pub struct Mlp<F = f32> {
    layers: Vec<Layer<F>>,
}

impl<F: Real> Mlp<F> {
    /// Fully connected stack `input -> hidden... -> output`, `hidden_act` on
    /// hidden layers and a linear head. Weights and biases are drawn from
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: &[usize], output: usize, hidden_act: Activation, rng: &mut R) -> Self {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(input);
        dims.extend_from_slice(hidden);
        dims.push(output);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i + 2 == dims.len() { Activation::Linear } else { hidden_act };
                let bound = 1.0 / libm::sqrt(w[0] as f64);
                let mut draw = |n: usize| -> Vec<F> { (0..n).map(|_| F::lit(rng.random_range(-bound..bound))).collect() };
                let weight = Tensor::new(alloc::vec![w[0], w[1]], draw(w[0] * w[1])).unwrap().trainable();
                let bias = Tensor::new(alloc::vec![w[1]], draw(w[1])).unwrap().trainable();
                Layer { weight, bias, activation: act }
            })
            .collect();
        Self { layers }
    }

    pub fn from_layers(layers: Vec<Layer<F>>) -> Result<Self, TensorError> {
        if layers.is_empty() {
            return Err(TensorError::Contract("an MLP needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weight.shape().len() != 2 || l.bias.len() != l.out_dim() {
                return Err(TensorError::Contract(format!("layer {i} has inconsistent weight/bias shapes")));
            }
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(TensorError::Dimension {
                    op: "mlp chain",
                    expected: pair[0].out_dim(),
                    found: pair[1].in_dim(),
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer<F>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<F>] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    /// Records the forward pass. Parameters are tracked for gradients.
    pub fn forward(&self, tape: &mut Tape<F>, x: Var) -> Result<Var, TensorError> {
        self.forward_impl(tape, x, true)
    }

    /// Records the forward pass with parameters as constants; gradient still
    /// flows to `x`.
    pub fn forward_frozen(&self, tape: &mut Tape<F>, x: Var) -> Result<Var, TensorError> {
        self.forward_impl(tape, x, false)
    }

    fn forward_impl(&self, tape: &mut Tape<F>, x: Var, track: bool) -> Result<Var, TensorError> {
        let (_, cols) = tape.shape(x);
        if cols != self.input_dim() {
            return Err(TensorError::Dimension { op: "mlp forward", expected: self.input_dim(), found: cols });
        }
        let mut h = x;
        for layer in &self.layers {
            let w = tape.param(&layer.weight, track);
            let b = tape.param(&layer.bias, track);
            let z = tape.matmul(h, w);
            let z = tape.add_row(z, b);
            h = match layer.activation {
                Activation::Tanh => tape.tanh(z),
                Activation::Relu => tape.relu(z),
                Activation::Linear => z,
            };
        }
        Ok(h)
    }

    /// Tape-free forward pass over `rows` stacked inputs.
    pub fn infer(&self, x: &[F], rows: usize) -> Result<Vec<F>, TensorError> {
        if x.len() != rows * self.input_dim() {
            return Err(TensorError::Dimension { op: "mlp infer", expected: rows * self.input_dim(), found: x.len() });
        }
        let mut h: Vec<F> = x.to_vec();
        for layer in &self.layers {
            let (k, n) = (layer.in_dim(), layer.out_dim());
            let mut out: Vec<F> = Vec::with_capacity(rows * n);
            for _ in 0..rows {
                out.extend_from_slice(layer.bias.data());
            }
            gemm(rows, k, n, MatView::rows(&h, k), MatView::rows(layer.weight.data(), n), F::one(), &mut out);
            for v in out.iter_mut() {
                *v = layer.activation.apply(*v);
            }
            h = out;
        }
        Ok(h)
    }

    /// `self <- tau * other + (1 - tau) * self`, parameter by parameter.
    pub fn soft_update_from(&mut self, other: &Mlp<F>, tau: F) {
        for (dst, src) in self.params_mut().into_iter().zip(other.params()) {
            for (d, &s) in dst.data_mut().iter_mut().zip(src.data()) {
                *d = tau * s + (F::one() - tau) * *d;
            }
        }
    }

    pub fn cast<G: Real>(&self) -> Mlp<G> {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Layer { weight: l.weight.cast(), bias: l.bias.cast(), activation: l.activation })
                .collect(),
        }
    }
}

crate::persist_via_module!(Mlp);

impl<F: Real> Module<F> for Mlp<F> {
    fn params(&self) -> Vec<&Tensor<F>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<F>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }

    fn param_names(&self) -> Vec<String> {
        (0..self.layers.len()).flat_map(|i| [format!("layer{i}.weight"), format!("layer{i}.bias")]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single(weight: Vec<f64>, bias: Vec<f64>, n_in: usize, act: Activation) -> Mlp<f64> {
        let n_out = bias.len();
        Mlp::from_layers(vec![Layer {
            weight: Tensor::new(vec![n_in, n_out], weight).unwrap().trainable(),
            bias: Tensor::new(vec![n_out], bias).unwrap().trainable(),
            activation: act,
        }])
        .unwrap()
    }

    #[test]
    fn zero_linear_map_outputs_zero() {
        let m = single(vec![0.0; 6], vec![0.0; 2], 3, Activation::Linear);
        assert_eq!(m.infer(&[1.0, -2.0, 5.0], 1).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_input() {
        let m = single(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], vec![0.0; 3], 3, Activation::Linear);
        let mut tape = Tape::new();
        let x = tape.constant(1, 3, vec![1.0, 2.0, 3.0]);
        let y = m.forward(&mut tape, x).unwrap();
        assert_eq!(tape.value(y), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn tanh_unit_matches_hand_value() {
        let m = single(vec![1.0], vec![0.0], 1, Activation::Tanh);
        let y = m.infer(&[0.5], 1).unwrap();
        assert_abs_diff_eq!(y[0], 0.5f64.tanh(), epsilon = 1e-15);
        assert_abs_diff_eq!(y[0], 0.4621, epsilon = 1e-4);
    }

    #[test]
    fn wrong_input_width_is_a_dimension_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = Mlp::<f32>::new(4, &[8], 2, Activation::Relu, &mut rng);
        let mut tape = Tape::new();
        let x = tape.constant(1, 3, vec![0.0; 3]);
        assert!(matches!(m.forward(&mut tape, x), Err(TensorError::Dimension { .. })));
        assert!(m.infer(&[0.0; 3], 1).is_err());
    }

    #[test]
    fn taped_and_tape_free_forward_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = Mlp::<f32>::new(5, &[16, 16], 3, Activation::Tanh, &mut rng);
        let x: Vec<f32> = (0..10).map(|i| (i as f32 * 0.3).sin()).collect();
        let mut tape = Tape::new();
        let xv = tape.constant(2, 5, x.clone());
        let y = m.forward(&mut tape, xv).unwrap();
        assert_eq!(tape.value(y), m.infer(&x, 2).unwrap().as_slice());
    }

    #[test]
    fn rejects_broken_chain() {
        let l0 = Layer {
            weight: Tensor::<f32>::zeros(&[2, 3]),
            bias: Tensor::zeros(&[3]),
            activation: Activation::Relu,
        };
        let l1 = Layer { weight: Tensor::zeros(&[4, 1]), bias: Tensor::zeros(&[1]), activation: Activation::Linear };
        assert!(Mlp::from_layers(vec![l0, l1]).is_err());
    }
}
