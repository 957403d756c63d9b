use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Ordered, named parameter blocks of a model.
///
/// The order of `params`, `params_mut` and `param_names` must agree; optimizers
/// and checkpoints rely on it.
pub trait ParamSet {
    fn params(&self) -> Vec<&Tensor>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;
    fn param_names(&self) -> Vec<String>;

    /// Registers every block on `tape`, borrowing the storage.
    fn bind<'p>(&'p self, tape: &mut Tape<'p>, trainable: bool) -> Vec<Var> {
        self.params()
            .into_iter()
            .map(|p| if trainable { tape.param(p) } else { tape.constant_ref(p) })
            .collect()
    }

    fn num_scalars(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    /// Polyak blend `self ← rate·source + (1 − rate)·self`.
    fn soft_update_from(&mut self, source: &Self, rate: f64) -> Result<()>
    where
        Self: Sized,
    {
        let src = source.params();
        let mut dst = self.params_mut();
        if src.len() != dst.len() || src.iter().zip(dst.iter()).any(|(s, d)| !s.same_shape(d)) {
            return Err(Error::Shape {
                op: "soft_update",
                shapes: src.iter().map(|t| t.shape().to_vec()).collect(),
            });
        }
        for (d, s) in dst.iter_mut().zip(src) {
            for (x, y) in d.data_mut().iter_mut().zip(s.data()) {
                *x = rate * y + (1.0 - rate) * *x;
            }
        }
        Ok(())
    }
}

/// Gradients for `vars`, zero-filled where the root did not depend on a block.
pub fn collect_grads(grads: &mut super::tape::Gradients, vars: &[Var], params: &[&Tensor]) -> Vec<Tensor> {
    vars.iter()
        .zip(params)
        .map(|(v, p)| grads.take(*v).unwrap_or_else(|| Tensor::zeros_like(p)))
        .collect()
}

/// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn uniform_init<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// Dense layer `y = x·W + b` with `W: [in, out]`, `b: [1, out]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        Self {
            weight: uniform_init(&[input, output], input, rng),
            bias: uniform_init(&[1, output], input, rng),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[input, output]),
            bias: Tensor::zeros(&[1, output]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }

    /// `vars` are `[weight, bias]` as produced by [`ParamSet::bind`].
    pub fn forward(tape: &mut Tape<'_>, vars: &[Var], x: Var) -> Result<Var> {
        let h = tape.matmul(x, vars[0])?;
        tape.add_row(h, vars[1])
    }
}

impl ParamSet for Linear {
    fn params(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn param_names(&self) -> Vec<String> {
        vec!["weight".into(), "bias".into()]
    }
}

/// ReLU multilayer perceptron with a linear output layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: &[usize], output: usize, rng: &mut R) -> Self {
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(output);
        let layers = dims.windows(2).map(|w| Linear::new(w[0], w[1], rng)).collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(Linear::output_dim).unwrap_or(0)
    }

    pub fn forward(tape: &mut Tape<'_>, vars: &[Var], x: Var) -> Result<Var> {
        let n = vars.len() / 2;
        let mut h = x;
        for i in 0..n {
            h = Linear::forward(tape, &vars[2 * i..2 * i + 2], h)?;
            if i + 1 < n {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }
}

impl ParamSet for Mlp {
    fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    fn param_names(&self) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|i| [format!("layer{i}.weight"), format!("layer{i}.bias")])
            .collect()
    }
}
