use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{LoatError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Logistic,
}

impl Activation {
    fn apply(self, tape: &mut Tape, v: Var) -> Var {
        match self {
            Activation::Identity => v,
            Activation::Relu => tape.relu(v),
            Activation::Logistic => tape.logistic(v),
        }
    }
}

/// Uniform(±√(6/(fan_in+fan_out))) initialization.
pub fn glorot(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("positive shape")
}

/// Anything holding trainable tensors in a fixed order.
pub trait Module {
    /// Parameters with stable names, in binding order.
    fn named_params(&self) -> Vec<(String, &Tensor)>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    /// Registers every parameter as a tape leaf, in `named_params` order.
    fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.named_params().into_iter().map(|(_, t)| tape.leaf(t.clone())).collect()
    }

    fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `[out, in]`
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        Self {
            weight: glorot(&[outputs, inputs], inputs, outputs, rng),
            bias: Tensor::zeros(&[outputs]),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    fn apply(&self, tape: &mut Tape, w: Var, b: Var, x: Var) -> Result<Var> {
        let y = tape.matvec(w, x)?;
        let y = tape.add(y, b)?;
        Ok(self.activation.apply(tape, y))
    }
}

/// Chain of dense layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// `sizes = [in, h1, ..., out]`; hidden layers use `hidden`, the last uses `output`.
    pub fn new(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut impl Rng) -> Self {
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| Dense::new(sizes[i], sizes[i + 1], if i + 1 == n { output } else { hidden }, rng))
            .collect();
        Self { layers }
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        for pair in layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(LoatError::DimensionMismatch {
                    expected: pair[0].outputs(),
                    found: pair[1].inputs(),
                    context: "consecutive mlp layers".into(),
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(Dense::outputs).unwrap_or(0)
    }

    /// Forward on a tape using vars from [`Module::bind`].
    pub fn apply(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        if tape.shape(x) != [self.input_dim()] {
            return Err(LoatError::ShapeMismatch {
                expected: vec![self.input_dim()],
                found: tape.shape(x).to_vec(),
                context: "mlp input".into(),
            });
        }
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(tape, vars[2 * i], vars[2 * i + 1], h)?;
        }
        Ok(h)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let xv = tape.leaf(x.clone());
        let y = self.apply(&mut tape, &vars, xv)?;
        Ok(tape.value(y).clone())
    }
}

impl Module for Mlp {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| [(format!("{i}.weight"), &l.weight), (format!("{i}.bias"), &l.bias)])
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    /// `[out, in, kh, kw]`
    pub kernel: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
    pub activation: Activation,
}

impl Conv2d {
    pub fn new(
        inputs: usize,
        outputs: usize,
        size: usize,
        stride: usize,
        padding: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let area = size * size;
        Self {
            kernel: glorot(&[outputs, inputs, size, size], inputs * area, outputs * area, rng),
            bias: Tensor::zeros(&[outputs]),
            stride,
            padding,
            activation,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[0]
    }
}

/// Stack of 2-D convolutions followed by flatten.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvEncoder {
    pub layers: Vec<Conv2d>,
}

impl ConvEncoder {
    pub fn new(layers: Vec<Conv2d>) -> Result<Self> {
        for pair in layers.windows(2) {
            if pair[0].out_channels() != pair[1].in_channels() {
                return Err(LoatError::DimensionMismatch {
                    expected: pair[0].out_channels(),
                    found: pair[1].in_channels(),
                    context: "consecutive conv layers".into(),
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn in_channels(&self) -> usize {
        self.layers[0].in_channels()
    }

    /// Output feature-map shape `[C, H, W]` for an input of `h × w`, before flatten.
    pub fn output_shape(&self, h: usize, w: usize) -> Option<[usize; 3]> {
        let (mut h, mut w, mut c) = (h, w, self.in_channels());
        for l in &self.layers {
            let k = l.kernel.shape();
            h = super::kernels::conv_out_len(h, k[2], l.stride, l.padding)?;
            w = super::kernels::conv_out_len(w, k[3], l.stride, l.padding)?;
            c = l.out_channels();
        }
        Some([c, h, w])
    }

    /// Convolution stack without the final flatten.
    pub fn apply_spatial(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        let xs = tape.shape(x);
        if xs.len() != 3 || xs[0] != self.in_channels() {
            return Err(LoatError::ShapeMismatch {
                expected: vec![self.in_channels(), 0, 0],
                found: xs.to_vec(),
                context: "conv encoder input".into(),
            });
        }
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = tape.conv2d(h, vars[2 * i], vars[2 * i + 1], layer.stride, layer.padding)?;
            h = layer.activation.apply(tape, h);
        }
        Ok(h)
    }

    pub fn apply(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        let h = self.apply_spatial(tape, vars, x)?;
        Ok(tape.flatten(h))
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let xv = tape.leaf(x.clone());
        let y = self.apply(&mut tape, &vars, xv)?;
        Ok(tape.value(y).clone())
    }
}

impl Module for ConvEncoder {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| [(format!("{i}.kernel"), &l.kernel), (format!("{i}.bias"), &l.bias)])
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.kernel, &mut l.bias]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dense(w: Vec<f64>, shape: [usize; 2], b: Vec<f64>, act: Activation) -> Dense {
        Dense {
            weight: Tensor::new(shape.to_vec(), w).unwrap(),
            bias: Tensor::from_vec(b),
            activation: act,
        }
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mlp = Mlp::from_layers(vec![dense(vec![1., 0., 0., 1.], [2, 2], vec![0., 0.], Activation::Identity)]).unwrap();
        let x = Tensor::from_vec(vec![1.5, -2.0]);
        assert_eq!(mlp.forward(&x).unwrap(), x);
    }

    #[test]
    fn zero_weights_yield_bias() {
        let mlp = Mlp::from_layers(vec![dense(vec![0.; 6], [2, 3], vec![0.25, -1.0], Activation::Identity)]).unwrap();
        let y = mlp.forward(&Tensor::from_vec(vec![3., 4., 5.])).unwrap();
        assert_eq!(y.data(), &[0.25, -1.0]);
    }

    #[test]
    fn two_layer_relu_by_hand() {
        // layer1: W = [[2, -1], [1, 1]], b = [0, 0.5]: pre = [3, 0.5] -> relu = [3, 0.5]
        // layer2: W = [[1, -2]], b = [0.25]: 3 - 1 + 0.25 = 2.25
        let mlp = Mlp::from_layers(vec![
            dense(vec![2., -1., 1., 1.], [2, 2], vec![0., 0.5], Activation::Relu),
            dense(vec![1., -2.], [1, 2], vec![0.25], Activation::Identity),
        ])
        .unwrap();
        let y = mlp.forward(&Tensor::from_vec(vec![1., -1.])).unwrap();
        assert_eq!(y.data(), &[2.25]);
        let y = mlp.forward(&Tensor::from_vec(vec![-1., 1.])).unwrap();
        // pre = [-3, 0.5] -> [0, 0.5] -> 0 - 1 + 0.25
        assert_eq!(y.data(), &[-0.75]);
    }

    #[test]
    fn mlp_rejects_bad_chain_and_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = Dense::new(3, 4, Activation::Relu, &mut rng);
        let b = Dense::new(5, 1, Activation::Identity, &mut rng);
        assert!(Mlp::from_layers(vec![a.clone(), b]).is_err());
        let mlp = Mlp::from_layers(vec![a]).unwrap();
        assert!(mlp.forward(&Tensor::from_vec(vec![1.0, 2.0])).is_err());
    }

    fn conv(k: Vec<f64>, shape: [usize; 4], b: Vec<f64>) -> Conv2d {
        Conv2d {
            kernel: Tensor::new(shape.to_vec(), k).unwrap(),
            bias: Tensor::from_vec(b),
            stride: 1,
            padding: 0,
            activation: Activation::Identity,
        }
    }

    #[test]
    fn one_by_one_unit_kernel_is_identity() {
        let enc = ConvEncoder::new(vec![conv(vec![1.0], [1, 1, 1, 1], vec![0.0])]).unwrap();
        let x = Tensor::new(vec![1, 2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(enc.forward(&x).unwrap().data(), x.data());
    }

    #[test]
    fn zero_input_broadcasts_bias() {
        let enc = ConvEncoder::new(vec![conv(vec![0.3; 8], [2, 1, 2, 2], vec![0.5, -0.5])]).unwrap();
        let y = enc.forward(&Tensor::zeros(&[1, 3, 3])).unwrap();
        assert_eq!(y.shape(), &[8]);
        assert_eq!(&y.data()[..4], &[0.5; 4]);
        assert_eq!(&y.data()[4..], &[-0.5; 4]);
    }

    #[test]
    fn two_by_two_dot_product() {
        let enc = ConvEncoder::new(vec![conv(vec![1., 2., 3., 4.], [1, 1, 2, 2], vec![0.5])]).unwrap();
        let x = Tensor::new(vec![1, 2, 2], vec![0.5, -1., 2., 0.25]).unwrap();
        // 0.5 - 2 + 6 + 1 + 0.5
        assert_eq!(enc.forward(&x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn input_smaller_than_kernel_errors() {
        let enc = ConvEncoder::new(vec![conv(vec![1.; 9], [1, 1, 3, 3], vec![0.])]).unwrap();
        assert!(enc.forward(&Tensor::zeros(&[1, 2, 2])).is_err());
    }

    #[test]
    fn glorot_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = glorot(&[10, 20], 20, 10, &mut rng);
        let b = (6.0f64 / 30.0).sqrt();
        assert!(t.data().iter().all(|v| v.abs() <= b));
    }
}
