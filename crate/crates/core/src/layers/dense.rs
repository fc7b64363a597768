use super::{expect_rank, Init, Layer, LayerSpec, Mode, Param};
use crate::activations::{activation_backward, Activation};
use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

const W: usize = 0;
const B: usize = 1;

/// Fully connected layer: `act(x · W + b)` with `W: [in, out]`, `b: [out]`.
#[derive(Clone, Debug)]
pub struct Dense {
    units: usize,
    activation: Activation,
    init: Init,
    params: Vec<Param>,
    cache: Option<Cache>,
}

#[derive(Clone, Debug)]
struct Cache {
    x: Tensor,
    z: Tensor,
}

impl Dense {
    pub fn new(units: usize, activation: Activation) -> Self {
        Self {
            units,
            activation,
            init: Init::Glorot,
            params: Vec::new(),
            cache: None,
        }
    }

    pub fn with_init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }

    /// A built layer with explicit weights.
    pub fn from_weights(weights: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        if weights.rank() != 2 || bias.shape() != [weights.shape()[1]] {
            return Err(Error::ShapeMismatch {
                op: "dense weights",
                left: weights.shape().to_vec(),
                right: bias.shape().to_vec(),
            });
        }
        Ok(Self {
            units: weights.shape()[1],
            activation,
            init: Init::Glorot,
            params: vec![Param::new("W", weights), Param::new("b", bias)],
            cache: None,
        })
    }

    pub fn units(&self) -> usize {
        self.units
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.params.first().map(|p| p.value.shape()[0])
    }

    pub fn weights(&self) -> &Tensor {
        &self.params[W].value
    }

    pub fn bias(&self) -> &Tensor {
        &self.params[B].value
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        expect_rank(x, 2, "dense")?;
        let w = &self.params[W].value;
        if x.shape()[1] != w.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "dense forward",
                left: x.shape().to_vec(),
                right: w.shape().to_vec(),
            });
        }
        Ok(())
    }

    fn affine(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        x.matmul(&self.params[W].value)?.add(&self.params[B].value)
    }

    fn backward_delta(&mut self, delta: &Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or(Error::BackwardBeforeForward("dense"))?;
        delta.expect_same_shape(&cache.z, "dense backward")?;
        self.params[W].grad = cache.x.matmul_tn(delta)?;
        self.params[B].grad = delta.sum_rows();
        delta.matmul_nt(&self.params[W].value)
    }
}

impl Layer for Dense {
    fn kind(&self) -> &'static str {
        "dense"
    }

    fn spec(&self) -> LayerSpec {
        LayerSpec::Dense {
            units: self.units,
            activation: self.activation,
            init: self.init,
        }
    }

    fn build(&mut self, input_shape: &[usize], rng: &mut Rng) -> Result<Vec<usize>> {
        let [input_dim] = input_shape[..] else {
            return Err(Error::invalid(format!(
                "dense expects a flat input, got {input_shape:?}"
            )));
        };
        let w = self.init.sample(rng, &[input_dim, self.units]);
        self.params = vec![Param::new("W", w), Param::new("b", Tensor::zeros(&[self.units]))];
        self.cache = None;
        Ok(vec![self.units])
    }

    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor> {
        let z = self.affine(x)?;
        let out = self.activation.apply(&z);
        self.cache = Some(Cache { x: x.clone(), z });
        Ok(out)
    }

    fn infer(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.activation.apply(&self.affine(x)?))
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or(Error::BackwardBeforeForward("dense"))?;
        let delta = activation_backward(self.activation, &cache.z, upstream)?;
        self.backward_delta(&delta)
    }

    fn backward_from_logits(&mut self, dlogits: &Tensor) -> Result<Tensor> {
        self.backward_delta(dlogits)
    }

    fn output_activation(&self) -> Option<Activation> {
        Some(self.activation)
    }

    fn params(&self) -> &[Param] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights_pass_through() {
        let mut d = Dense::from_weights(
            Tensor::new([2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            Tensor::zeros(&[2]),
            Activation::Linear,
        )
        .unwrap();
        let x = Tensor::new([3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(d.forward(&x, Mode::Train).unwrap(), x);
        assert_eq!(d.infer(&x).unwrap(), x);
    }

    #[test]
    fn parameter_count_formula() {
        let mut d = Dense::new(512, Activation::Relu);
        d.build(&[2048], &mut Rng::new(0)).unwrap();
        assert_eq!(d.param_count(), 1_049_088);
        let mut d = Dense::new(10, Activation::Softmax);
        d.build(&[512], &mut Rng::new(0)).unwrap();
        assert_eq!(d.param_count(), 5130);
    }

    #[test]
    fn forward_matches_loop_oracle() {
        let mut rng = Rng::new(5);
        let w = Tensor::rand_normal(&mut rng, &[4, 3], 0.0, 1.0);
        let b = Tensor::rand_normal(&mut rng, &[3], 0.0, 1.0);
        let x = Tensor::rand_normal(&mut rng, &[2, 4], 0.0, 1.0);
        let d = Dense::from_weights(w.clone(), b.clone(), Activation::Tanh).unwrap();
        let y = d.infer(&x).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                let mut s = b.data()[j];
                for k in 0..4 {
                    s += x.data()[i * 4 + k] * w.data()[k * 3 + j];
                }
                assert!((y.data()[i * 3 + j] - s.tanh()).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut d = Dense::new(2, Activation::Sigmoid);
        d.build(&[3], &mut Rng::new(1)).unwrap();
        let x = Tensor::rand_normal(&mut Rng::new(2), &[4, 3], 0.0, 1.0);
        d.forward(&x, Mode::Train).unwrap();
        let dx = d.backward(&Tensor::zeros(&[4, 2])).unwrap();
        assert!(dx.data().iter().all(|&v| v == 0.0));
        for p in d.params() {
            assert!(p.grad.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn linear_weight_gradient_is_xt_upstream() {
        let mut rng = Rng::new(3);
        let x = Tensor::rand_normal(&mut rng, &[1, 3], 0.0, 1.0);
        let up = Tensor::rand_normal(&mut rng, &[1, 2], 0.0, 1.0);
        let mut d = Dense::new(2, Activation::Linear);
        d.build(&[3], &mut rng).unwrap();
        d.forward(&x, Mode::Train).unwrap();
        d.backward(&up).unwrap();
        let want = x.transpose2d().unwrap().matmul(&up).unwrap();
        assert_eq!(d.params()[0].grad, want);
    }

    #[test]
    fn errors() {
        let mut d = Dense::new(2, Activation::Linear);
        d.build(&[3], &mut Rng::new(0)).unwrap();
        assert!(matches!(
            d.backward(&Tensor::zeros(&[1, 2])),
            Err(Error::BackwardBeforeForward(_))
        ));
        assert!(d.forward(&Tensor::zeros(&[1, 4]), Mode::Train).is_err());
    }
}
