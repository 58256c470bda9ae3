use rand::Rng;

use super::{Linear, ParamStore, Session};
use crate::autodiff::Var;
use crate::error::{arg_err, shape_err, Result};
use crate::tensor::DenseTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct CnnConfig {
    /// Output channels of each convolution block.
    pub channels: Vec<usize>,
    /// Square kernel size; must be odd.
    pub kernel: usize,
    pub stride: usize,
    /// Width of the linear pooling head used when there are several images per filtration.
    pub head_width: usize,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            channels: vec![16, 32],
            kernel: 3,
            stride: 1,
            head_width: 32,
        }
    }
}

/// Convolutional encoder for `B x (K*M) x P x P` image stacks: conv+ReLU
/// blocks, global mean pooling, then a linear head when `M > 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cnn {
    name: String,
    pub in_channels: usize,
    pub images_per_filtration: usize,
    pub config: CnnConfig,
    head: Option<Linear>,
}

impl Cnn {
    pub fn new(name: &str, filtrations: usize, images_per_filtration: usize, config: CnnConfig) -> Result<Self> {
        if config.channels.is_empty() || config.channels.contains(&0) {
            return Err(arg_err!("CNN needs at least one block with positive channels"));
        }
        if config.kernel % 2 == 0 || config.stride == 0 {
            return Err(arg_err!("CNN kernel size must be odd and stride positive"));
        }
        if filtrations * images_per_filtration == 0 {
            return Err(arg_err!("CNN needs at least one input channel"));
        }
        let last = *config.channels.last().expect("nonempty");
        let head = (images_per_filtration > 1).then(|| Linear::new(format!("{name}.head"), last, config.head_width, true));
        Ok(Self {
            name: name.to_string(),
            in_channels: filtrations * images_per_filtration,
            images_per_filtration,
            config,
            head,
        })
    }

    pub fn output_width(&self) -> usize {
        match &self.head {
            Some(h) => h.d_out,
            None => *self.config.channels.last().expect("nonempty"),
        }
    }

    pub fn kernel_name(&self, block: usize) -> String {
        format!("{}.{block}.kernel", self.name)
    }

    pub fn bias_name(&self, block: usize) -> String {
        format!("{}.{block}.bias", self.name)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        let k = self.config.kernel;
        let mut c_in = self.in_channels;
        for (b, &c_out) in self.config.channels.iter().enumerate() {
            let bound = 1.0 / ((c_in * k * k) as f64).sqrt();
            store.insert(
                self.kernel_name(b),
                DenseTensor::from_fn(&[c_out, c_in, k, k], |_| rng.random_range(-bound..=bound)),
            );
            store.insert(self.bias_name(b), DenseTensor::zeros(&[c_out]));
            c_in = c_out;
        }
        if let Some(h) = &self.head {
            h.init(store, rng);
        }
    }

    pub fn forward(&self, sess: &mut Session<'_>, x: Var) -> Result<Var> {
        let shape = sess.tape.shape(x).to_vec();
        if shape.len() != 4 || shape[1] != self.in_channels {
            return Err(shape_err!(
                "CNN expects batch x {} x P x P input, got {:?}",
                self.in_channels,
                shape
            ));
        }
        let mut h = x;
        for b in 0..self.config.channels.len() {
            let w = sess.param(&self.kernel_name(b))?;
            let bias = sess.param(&self.bias_name(b))?;
            h = sess.tape.conv2d(h, w, bias, self.config.stride)?;
            h = sess.tape.relu(h);
        }
        let pooled = sess.tape.mean_spatial(h)?;
        match &self.head {
            Some(head) => head.forward(sess, pooled),
            None => Ok(pooled),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Mode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_input_zero_bias_gives_zero() {
        let cnn = Cnn::new("c", 4, 2, CnnConfig::default()).unwrap();
        let mut store = ParamStore::new();
        cnn.init(&mut store, &mut ChaCha8Rng::seed_from_u64(1));
        let mut s = Session::new(&store, Mode::Eval, 0);
        let x = s.constant(DenseTensor::zeros(&[2, 8, 10, 10]));
        let y = cnn.forward(&mut s, x).unwrap();
        assert_eq!(s.tape.shape(y), &[2, 32]);
        assert_eq!(s.tape.value(y).max_abs(), 0.0);
    }

    #[test]
    fn identity_kernel_mean_pools_the_image() {
        let cfg = CnnConfig {
            channels: vec![1],
            kernel: 1,
            stride: 1,
            head_width: 1,
        };
        let cnn = Cnn::new("c", 1, 1, cfg).unwrap();
        let mut store = ParamStore::new();
        cnn.init(&mut store, &mut ChaCha8Rng::seed_from_u64(1));
        store.insert(cnn.kernel_name(0), DenseTensor::filled(&[1, 1, 1, 1], 1.0));
        let img = DenseTensor::from_fn(&[1, 1, 5, 5], |i| (i[2] * 5 + i[3]) as f64);
        let mut s = Session::new(&store, Mode::Eval, 0);
        let x = s.constant(img.clone());
        let y = cnn.forward(&mut s, x).unwrap();
        assert!((s.tape.value(y).item() - img.sum() / 25.0).abs() < 1e-12);
    }

    #[test]
    fn output_width_is_independent_of_resolution() {
        let cnn = Cnn::new("c", 4, 2, CnnConfig::default()).unwrap();
        let mut store = ParamStore::new();
        cnn.init(&mut store, &mut ChaCha8Rng::seed_from_u64(2));
        for p in [10, 30, 50] {
            let mut s = Session::new(&store, Mode::Eval, 0);
            let x = s.constant(DenseTensor::from_fn(&[1, 8, p, p], |i| (i[2] as f64 * 0.1).sin()));
            let y = cnn.forward(&mut s, x).unwrap();
            assert_eq!(s.tape.shape(y), &[1, 32]);
        }
    }

    #[test]
    fn rejects_tiny_resolution_and_even_kernels() {
        let cnn = Cnn::new("c", 1, 2, CnnConfig::default()).unwrap();
        let mut store = ParamStore::new();
        cnn.init(&mut store, &mut ChaCha8Rng::seed_from_u64(2));
        let mut s = Session::new(&store, Mode::Eval, 0);
        let x = s.constant(DenseTensor::zeros(&[1, 2, 2, 2]));
        assert!(cnn.forward(&mut s, x).is_err());
        let even = CnnConfig {
            kernel: 4,
            ..CnnConfig::default()
        };
        assert!(Cnn::new("c", 1, 2, even).is_err());
    }
}
