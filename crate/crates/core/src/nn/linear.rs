use rand::Rng;

use super::{ParamStore, Session};
use crate::autodiff::Var;
use crate::error::{shape_err, Result};
use crate::tensor::DenseTensor;

/// `x W + b` on a `B x d_in` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    name: String,
    pub d_in: usize,
    pub d_out: usize,
    bias: bool,
}

impl Linear {
    pub fn new(name: impl Into<String>, d_in: usize, d_out: usize, bias: bool) -> Self {
        Self {
            name: name.into(),
            d_in,
            d_out,
            bias,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    /// Uniform in `±1/sqrt(d_in)`; zero bias.
    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        let bound = 1.0 / (self.d_in.max(1) as f64).sqrt();
        store.insert(
            self.weight_name(),
            DenseTensor::from_fn(&[self.d_in, self.d_out], |_| rng.random_range(-bound..=bound)),
        );
        if self.bias {
            store.insert(self.bias_name(), DenseTensor::zeros(&[self.d_out]));
        }
    }

    pub fn forward(&self, sess: &mut Session<'_>, x: Var) -> Result<Var> {
        let shape = sess.tape.shape(x);
        if shape.len() != 2 || shape[1] != self.d_in {
            return Err(shape_err!("{} expects width {}, got {:?}", self.name, self.d_in, shape));
        }
        let w = sess.param(&self.weight_name())?;
        let y = sess.tape.matmul(x, w)?;
        if self.bias {
            let b = sess.param(&self.bias_name())?;
            sess.tape.add_broadcast(y, b)
        } else {
            Ok(y)
        }
    }
}
