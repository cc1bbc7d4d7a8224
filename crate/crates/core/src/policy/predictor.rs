use rand::Rng;

use crate::error::{LoatError, Result};
use crate::maps::MetricMap;
use crate::nn::kernels;
use crate::nn::{Activation, Conv2d, ConvEncoder, Module, Tape, Tensor, Var};

/// Downsampling factor of the coarse branch.
pub const COARSE_FACTOR: usize = 4;

/// Fixed row/column planes appended to the input inside the predictor.
pub const COORD_CHANNELS: usize = 2;

/// Row and column coordinates scaled to [-1, 1], as `[2, n, n]`.
pub fn coordinate_planes(n: usize) -> Tensor {
    let scale = |i: usize| if n > 1 { 2.0 * i as f64 / (n - 1) as f64 - 1.0 } else { 0.0 };
    let mut data = Vec::with_capacity(2 * n * n);
    data.extend((0..n * n).map(|i| scale(i / n)));
    data.extend((0..n * n).map(|i| scale(i % n)));
    Tensor::new(vec![2, n, n], data).expect("shape matches")
}

/// Per-cell target logits from an activated map plus the observed mask.
///
/// Two coordinate planes are appended to the input so logits can depend on
/// absolute position. A 1x1 stem feeds a coarse branch working at `1/COARSE_FACTOR` resolution;
/// its upsampled features are stacked with the stem features and a 7x7 head
/// produces full-resolution logits.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetPredictor {
    pub stem: ConvEncoder,
    pub coarse: ConvEncoder,
    pub head: ConvEncoder,
}

impl TargetPredictor {
    /// `map_channels` excludes the observed-mask channel.
    pub fn new(map_channels: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let f = hidden.max(1);
        let single = |c: Conv2d| ConvEncoder::new(vec![c]).expect("single layer");
        let stem = single(Conv2d::new(map_channels + 1 + COORD_CHANNELS, f, 1, 1, 0, Activation::Relu, rng));
        let coarse = ConvEncoder::new(vec![
            Conv2d::new(f, f, COARSE_FACTOR, COARSE_FACTOR, 0, Activation::Relu, rng),
            Conv2d::new(f, f, 5, 1, 2, Activation::Relu, rng),
            Conv2d::new(f, f, 5, 1, 2, Activation::Relu, rng),
        ])
        .expect("chained layers");
        let head = single(Conv2d::new(2 * f, 1, 7, 1, 3, Activation::Identity, rng));
        Self { stem, coarse, head }
    }

    /// Number of input channels including the observed mask.
    pub fn in_channels(&self) -> usize {
        self.stem.in_channels() - COORD_CHANNELS
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 3 || shape[0] != self.in_channels() || shape[1] != shape[2] || shape[1] % COARSE_FACTOR != 0 {
            return Err(LoatError::ShapeMismatch {
                expected: vec![self.in_channels(), shape.get(1).copied().unwrap_or(0), shape.get(1).copied().unwrap_or(0)],
                found: shape.to_vec(),
                context: format!("predictor input (square, side divisible by {COARSE_FACTOR})"),
            });
        }
        Ok(())
    }

    /// Flat `[R*R]` logits for `input [M+1, R, R]`; `vars` come from [`Module::bind`].
    pub fn apply(&self, tape: &mut Tape, vars: &[Var], input: Var) -> Result<Var> {
        self.check_input(tape.shape(input))?;
        let ns = self.stem.named_params().len();
        let nc = self.coarse.named_params().len();
        // map channels are gained by M so uniform scores give unit activations
        let m = self.in_channels() - 1;
        let mut gains = vec![m as f64; m];
        gains.push(1.0);
        let gains = tape.leaf(Tensor::from_vec(gains));
        let gained = tape.channel_scale(input, gains)?;
        let coords = tape.leaf(coordinate_planes(tape.shape(input)[1]));
        let full = tape.concat(&[gained, coords])?;
        let h = self.stem.apply_spatial(tape, &vars[..ns], full)?;
        let coarse = self.coarse.apply_spatial(tape, &vars[ns..ns + nc], h)?;
        let up = tape.upsample(coarse, COARSE_FACTOR)?;
        let both = tape.concat(&[h, up])?;
        let out = self.head.apply_spatial(tape, &vars[ns + nc..], both)?;
        Ok(tape.flatten(out))
    }

    pub fn logits(&self, input: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let x = tape.leaf(input.clone());
        let y = self.apply(&mut tape, &vars, x)?;
        Ok(tape.value(y).data().to_vec())
    }
}

impl Module for TargetPredictor {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (prefix, m) in [("stem", &self.stem), ("coarse", &self.coarse), ("head", &self.head)] {
            out.extend(m.named_params().into_iter().map(|(n, t)| (format!("{prefix}.{n}"), t)));
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.stem.params_mut();
        out.extend(self.coarse.params_mut());
        out.extend(self.head.params_mut());
        out
    }
}

/// Stacks map channels and the observed mask into `[M+1, R, R]`.
pub fn predictor_input(map: &MetricMap, observed_mask: &[f64]) -> Result<Tensor> {
    let plane = map.height() * map.width();
    if observed_mask.len() != plane {
        return Err(LoatError::DimensionMismatch {
            expected: plane,
            found: observed_mask.len(),
            context: "observed mask".into(),
        });
    }
    let m = map.channels().len();
    let mut data = Vec::with_capacity((m + 1) * plane);
    data.extend_from_slice(map.grid().data());
    data.extend_from_slice(observed_mask);
    Tensor::new(vec![m + 1, map.height(), map.width()], data)
}

/// Softmax over all cells of the predictor logits for an activated map.
pub fn predict_target(map: &MetricMap, observed_mask: &[f64], predictor: &TargetPredictor) -> Result<Vec<f64>> {
    let input = predictor_input(map, observed_mask)?;
    Ok(kernels::softmax(&predictor.logits(&input)?))
}
