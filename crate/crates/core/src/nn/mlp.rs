use rand::Rng;

use super::{Linear, ParamStore, Session};
use crate::autodiff::Var;
use crate::error::Result;

/// Classifier head: linear, ReLU, dropout, linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub hidden: Linear,
    pub output: Linear,
    pub dropout: f64,
}

impl Mlp {
    pub fn new(name: &str, d_in: usize, hidden: usize, classes: usize, dropout: f64) -> Self {
        Self {
            hidden: Linear::new(format!("{name}.hidden"), d_in, hidden, true),
            output: Linear::new(format!("{name}.out"), hidden, classes, true),
            dropout,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        self.hidden.init(store, rng);
        self.output.init(store, rng);
    }

    /// `B x classes` logits.
    pub fn forward(&self, sess: &mut Session<'_>, x: Var) -> Result<Var> {
        let h = self.hidden.forward(sess, x)?;
        let h = sess.tape.relu(h);
        let h = sess.dropout(h, self.dropout)?;
        self.output.forward(sess, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Mode;
    use crate::tensor::DenseTensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_give_uniform_logits() {
        let mlp = Mlp::new("m", 4, 8, 3, 0.5);
        let mut store = ParamStore::new();
        mlp.init(&mut store, &mut ChaCha8Rng::seed_from_u64(0));
        store.insert(mlp.output.weight_name(), DenseTensor::zeros(&[8, 3]));
        let mut s = Session::new(&store, Mode::Train, 0);
        let x = s.constant(DenseTensor::filled(&[2, 4], 1.0));
        let y = mlp.forward(&mut s, x).unwrap();
        assert!(s.tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn inference_is_repeatable() {
        let mlp = Mlp::new("m", 4, 8, 3, 0.5);
        let mut store = ParamStore::new();
        mlp.init(&mut store, &mut ChaCha8Rng::seed_from_u64(0));
        let x = DenseTensor::from_fn(&[2, 4], |i| i[1] as f64 - 1.0);
        let run = |seed| {
            let mut s = Session::new(&store, Mode::Eval, seed);
            let v = s.constant(x.clone());
            let y = mlp.forward(&mut s, v).unwrap();
            s.tape.value(y).clone()
        };
        assert_eq!(run(1), run(2));
    }
}
