use super::{Mode, ParamStore, Session};
use crate::autodiff::Var;
use crate::error::{shape_err, Result};
use crate::tensor::DenseTensor;

/// Per-feature batch normalization over the rows of a matrix.
///
/// Training mode normalizes with batch statistics and records updated
/// running statistics in the session; evaluation mode applies the stored
/// running statistics as a fixed affine map.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    name: String,
    pub width: usize,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm {
    pub fn new(name: impl Into<String>, width: usize) -> Self {
        Self {
            name: name.into(),
            width,
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    fn key(&self, part: &str) -> String {
        format!("{}.{part}", self.name)
    }

    pub fn running_mean_name(&self) -> String {
        self.key("running_mean")
    }

    pub fn running_var_name(&self) -> String {
        self.key("running_var")
    }

    pub fn init(&self, store: &mut ParamStore) {
        store.insert(self.key("gamma"), DenseTensor::filled(&[self.width], 1.0));
        store.insert(self.key("beta"), DenseTensor::zeros(&[self.width]));
        store.insert_buffer(self.running_mean_name(), DenseTensor::zeros(&[self.width]));
        store.insert_buffer(self.running_var_name(), DenseTensor::filled(&[self.width], 1.0));
    }

    pub fn forward(&self, sess: &mut Session<'_>, x: Var) -> Result<Var> {
        let shape = sess.tape.shape(x).to_vec();
        if shape.len() != 2 || shape[1] != self.width {
            return Err(shape_err!("{} expects width {}, got {:?}", self.name, self.width, shape));
        }
        let gamma = sess.param(&self.key("gamma"))?;
        let beta = sess.param(&self.key("beta"))?;
        match sess.mode() {
            Mode::Train => {
                let (y, mean, var) = sess.tape.batch_norm_train(x, gamma, beta, self.eps)?;
                let n = shape[0] as f64;
                let unbias = if shape[0] > 1 { n / (n - 1.0) } else { 1.0 };
                let m = self.momentum;
                let old_mean = sess.buffer(&self.running_mean_name())?.clone();
                let old_var = sess.buffer(&self.running_var_name())?.clone();
                let new_mean = old_mean.data().iter().zip(&mean).map(|(o, b)| (1.0 - m) * o + m * b).collect();
                let new_var = old_var
                    .data()
                    .iter()
                    .zip(&var)
                    .map(|(o, b)| (1.0 - m) * o + m * b * unbias)
                    .collect();
                sess.set_buffer(&self.running_mean_name(), DenseTensor::vector(new_mean));
                sess.set_buffer(&self.running_var_name(), DenseTensor::vector(new_var));
                Ok(y)
            }
            Mode::Eval => {
                let mean = sess.buffer(&self.running_mean_name())?.clone();
                let var = sess.buffer(&self.running_var_name())?.clone();
                let shift = sess.constant(mean.scale(-1.0));
                let inv = sess.constant(var.map(|v| 1.0 / (v + self.eps).sqrt()));
                let centered = sess.tape.add_broadcast(x, shift)?;
                let xhat = sess.tape.mul_broadcast(centered, inv)?;
                let scaled = sess.tape.mul_broadcast(xhat, gamma)?;
                sess.tape.add_broadcast(scaled, beta)
            }
        }
    }
}
