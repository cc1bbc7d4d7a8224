use rand::Rng;

use crate::error::{LoatError, Result};
use crate::nn::{Activation, Conv2d, ConvEncoder, Mlp, Module, Tape, Tensor, Var};
use crate::sim::agent::TEMPORAL_DIM;
use crate::sim::FusionContext;

/// Produces the guidance ratio from trajectory statistics and the explored layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionNet {
    pub temporal_mlp: Mlp,
    pub env_encoder: ConvEncoder,
    /// Ends in a logistic unit.
    pub head: Mlp,
    grid_size: usize,
}

pub const TEMPORAL_HIDDEN: usize = 16;
pub const TEMPORAL_OUT: usize = 8;
pub const ENV_CHANNELS: usize = 4;
pub const HEAD_HIDDEN: usize = 16;

impl FusionNet {
    /// `grid_size` must be divisible by 16.
    pub fn new(grid_size: usize, rng: &mut impl Rng) -> Result<Self> {
        if grid_size < 16 || grid_size % 16 != 0 {
            return Err(LoatError::config("grid_size", "fusion net needs a multiple of 16"));
        }
        let temporal_mlp = Mlp::new(
            &[TEMPORAL_DIM, TEMPORAL_HIDDEN, TEMPORAL_OUT],
            Activation::Relu,
            Activation::Relu,
            rng,
        );
        let env_encoder = ConvEncoder::new(vec![
            Conv2d::new(2, ENV_CHANNELS, 4, 4, 0, Activation::Relu, rng),
            Conv2d::new(ENV_CHANNELS, ENV_CHANNELS, 4, 4, 0, Activation::Relu, rng),
        ])?;
        let env_out = ENV_CHANNELS * (grid_size / 16) * (grid_size / 16);
        let head = Mlp::new(
            &[TEMPORAL_OUT + env_out, HEAD_HIDDEN, 1],
            Activation::Relu,
            Activation::Logistic,
            rng,
        );
        Ok(Self {
            temporal_mlp,
            env_encoder,
            head,
            grid_size,
        })
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    /// Final dense layer of the head, e.g. to pin its bias.
    pub fn head_output_mut(&mut self) -> &mut crate::nn::Dense {
        self.head.layers.last_mut().expect("head has layers")
    }

    fn split_vars<'a>(&self, vars: &'a [Var]) -> (&'a [Var], &'a [Var], &'a [Var]) {
        let a = self.temporal_mlp.named_params().len();
        let b = a + self.env_encoder.named_params().len();
        (&vars[..a], &vars[a..b], &vars[b..])
    }

    /// Scalar `[1]` guidance ratio on the tape.
    pub fn apply(&self, tape: &mut Tape, vars: &[Var], temporal: Var, env: Var) -> Result<Var> {
        let (tv, ev, hv) = self.split_vars(vars);
        let t = self.temporal_mlp.apply(tape, tv, temporal)?;
        let e = self.env_encoder.apply(tape, ev, env)?;
        let joint = tape.concat(&[t, e])?;
        self.head.apply(tape, hv, joint)
    }

    pub fn check_context(&self, ctx: &FusionContext) -> Result<()> {
        if ctx.temporal.len() != TEMPORAL_DIM {
            return Err(LoatError::DimensionMismatch {
                expected: TEMPORAL_DIM,
                found: ctx.temporal.len(),
                context: "fusion temporal features".into(),
            });
        }
        ctx.environmental
            .expect_shape(&[2, self.grid_size, self.grid_size], "fusion environmental features")
    }
}

impl Module for FusionNet {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (n, t) in self.temporal_mlp.named_params() {
            out.push((format!("temporal.{n}"), t));
        }
        for (n, t) in self.env_encoder.named_params() {
            out.push((format!("env.{n}"), t));
        }
        for (n, t) in self.head.named_params() {
            out.push((format!("head.{n}"), t));
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.temporal_mlp.params_mut();
        out.extend(self.env_encoder.params_mut());
        out.extend(self.head.params_mut());
        out
    }
}

/// Dynamic guidance ratio in (0, 1) for one decision step.
pub fn guidance_ratio(net: &FusionNet, ctx: &FusionContext) -> Result<f64> {
    net.check_context(ctx)?;
    let mut tape = Tape::new();
    let vars = net.bind(&mut tape);
    let t = tape.leaf(Tensor::from_vec(ctx.temporal.clone()));
    let e = tape.leaf(ctx.environmental.clone());
    let g = net.apply(&mut tape, &vars, t, e)?;
    Ok(tape.value(g).item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ctx(n: usize) -> FusionContext {
        let mut temporal = vec![0.0; TEMPORAL_DIM];
        temporal[0] = 0.3;
        temporal[1] = 0.1;
        temporal[2] = 1.0;
        let env = (0..2 * n * n).map(|i| ((i * 7) % 3 == 0) as u8 as f64).collect();
        FusionContext {
            temporal,
            environmental: Tensor::new(vec![2, n, n], env).unwrap(),
        }
    }

    #[test]
    fn zero_head_gives_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut net = FusionNet::new(32, &mut rng).unwrap();
        let last = net.head_output_mut();
        last.weight.data_mut().iter_mut().for_each(|v| *v = 0.0);
        last.bias.data_mut()[0] = 0.0;
        assert_eq!(guidance_ratio(&net, &ctx(32)).unwrap(), 0.5);
    }

    #[test]
    fn large_bias_saturates() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut net = FusionNet::new(32, &mut rng).unwrap();
        let last = net.head_output_mut();
        last.weight.data_mut().iter_mut().for_each(|v| *v = 0.0);
        last.bias.data_mut()[0] = 20.0;
        let g = guidance_ratio(&net, &ctx(32)).unwrap();
        assert!((1.0 - g) < 1e-6);
    }

    #[test]
    fn deterministic_and_shape_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = FusionNet::new(32, &mut rng).unwrap();
        let a = guidance_ratio(&net, &ctx(32)).unwrap();
        assert_eq!(a, guidance_ratio(&net, &ctx(32)).unwrap());
        assert!(a > 0.0 && a < 1.0);
        assert!(guidance_ratio(&net, &ctx(64)).is_err());
    }
}
