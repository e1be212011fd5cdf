use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::tape::{Tape, Var};
use super::tensor::Tensor2;
use super::{ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Softplus,
    Relu,
}

#[derive(Debug, Clone, Copy)]
pub enum WeightInit {
    /// Uniform on ±sqrt(6 / (fan_in + fan_out)).
    Xavier,
    /// Normal(0, std²).
    Normal { std: f64 },
}

impl WeightInit {
    fn sample<R: Rng>(&self, rng: &mut R, fan_in: usize, fan_out: usize) -> f64 {
        match *self {
            WeightInit::Xavier => {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Uniform::new_inclusive(-bound, bound).sample(rng)
            }
            WeightInit::Normal { std } => Normal::new(0.0, std).unwrap().sample(rng),
        }
    }
}

/// Fully connected layer computing `act(x·W + b)`, with W of shape in×out.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        activation: Activation,
        init: WeightInit,
        rng: &mut R,
    ) -> Self {
        let w = Tensor2::from_fn(fan_in, fan_out, |_, _| init.sample(rng, fan_in, fan_out));
        let b = Tensor2::zeros(1, fan_out);
        DenseLayer {
            weight: store.register(&format!("{name}.weight"), w),
            bias: store.register(&format!("{name}.bias"), b),
            activation,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let xw = tape.matmul(x, w);
        let pre = tape.add_row(xw, b);
        match self.activation {
            Activation::Linear => pre,
            Activation::Softplus => tape.softplus(pre),
            Activation::Relu => tape.relu(pre),
        }
    }
}
