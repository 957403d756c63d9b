use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{uniform_init, ParamSet};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// LSTM cell with the four gates fused into one `[input + hidden, 4·hidden]`
/// weight. Column blocks are ordered input, forget, output, candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmCellParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LstmCellParams {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let fan_in = input_dim + hidden_dim;
        let weight = uniform_init(&[fan_in, 4 * hidden_dim], fan_in, rng);
        let mut bias = uniform_init(&[1, 4 * hidden_dim], fan_in, rng);
        bias.data_mut()[hidden_dim..2 * hidden_dim].fill(1.0);
        Self {
            input_dim,
            hidden_dim,
            weight,
            bias,
        }
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            weight: Tensor::zeros(&[input_dim + hidden_dim, 4 * hidden_dim]),
            bias: Tensor::zeros(&[1, 4 * hidden_dim]),
        }
    }

    /// One recurrence step on `tape`; `vars` are `[weight, bias]`.
    ///
    /// `x: [B, input]`, `h, c: [B, hidden]`.
    pub fn step_on_tape(&self, tape: &mut Tape<'_>, vars: &[Var], x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let (tx, th, tc) = (tape.value(x), tape.value(h), tape.value(c));
        let hd = self.hidden_dim;
        if tx.cols() != self.input_dim
            || th.cols() != hd
            || tc.cols() != hd
            || tx.rows() != th.rows()
            || th.rows() != tc.rows()
        {
            return Err(Error::Shape {
                op: "lstm_step",
                shapes: vec![tx.shape().to_vec(), th.shape().to_vec(), tc.shape().to_vec()],
            });
        }
        let xh = tape.concat(&[x, h])?;
        let z = tape.matmul(xh, vars[0])?;
        let z = tape.add_row(z, vars[1])?;
        let i = tape.slice_cols(z, 0, hd)?;
        let f = tape.slice_cols(z, hd, 2 * hd)?;
        let o = tape.slice_cols(z, 2 * hd, 3 * hd)?;
        let g = tape.slice_cols(z, 3 * hd, 4 * hd)?;
        let i = tape.sigmoid(i);
        let f = tape.sigmoid(f);
        let o = tape.sigmoid(o);
        let g = tape.tanh(g);
        let fc = tape.mul(f, c)?;
        let ig = tape.mul(i, g)?;
        let c_next = tape.add(fc, ig)?;
        let tc_next = tape.tanh(c_next);
        let h_next = tape.mul(o, tc_next)?;
        Ok((h_next, c_next))
    }
}

impl ParamSet for LstmCellParams {
    fn params(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn param_names(&self) -> Vec<String> {
        vec!["lstm.weight".into(), "lstm.bias".into()]
    }
}

/// Value-only LSTM step, `(h', c')`.
pub fn lstm_step(params: &LstmCellParams, x: &Tensor, h: &Tensor, c: &Tensor) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, false);
    let (x, h, c) = (tape.constant_ref(x), tape.constant_ref(h), tape.constant_ref(c));
    let (h2, c2) = params.step_on_tape(&mut tape, &vars, x, h, c)?;
    Ok((tape.value(h2).clone(), tape.value(c2).clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tape::sigmoid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_gives_zero_state() {
        let p = LstmCellParams::zeros(3, 4);
        let (h, c) = lstm_step(
            &p,
            &Tensor::zeros(&[1, 3]),
            &Tensor::zeros(&[1, 4]),
            &Tensor::zeros(&[1, 4]),
        )
        .unwrap();
        assert!(h.data().iter().all(|v| *v == 0.0));
        assert!(c.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn matches_hand_computed_gates() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = LstmCellParams::new(2, 3, &mut rng);
        let x = uniform_init(&[1, 2], 1, &mut rng);
        let h = uniform_init(&[1, 3], 1, &mut rng);
        let c = uniform_init(&[1, 3], 1, &mut rng);
        let (h2, c2) = lstm_step(&p, &x, &h, &c).unwrap();

        let xh: Vec<f64> = x.data().iter().chain(h.data()).copied().collect();
        let gate = |col: usize| {
            let mut s = p.bias.data()[col];
            for (r, v) in xh.iter().enumerate() {
                s += v * p.weight.get(r, col);
            }
            s
        };
        for j in 0..3 {
            let i = sigmoid(gate(j));
            let f = sigmoid(gate(3 + j));
            let o = sigmoid(gate(6 + j));
            let g = gate(9 + j).tanh();
            let cj = f * c.data()[j] + i * g;
            assert!((c2.data()[j] - cj).abs() < 1e-12);
            assert!((h2.data()[j] - o * cj.tanh()).abs() < 1e-12);
        }
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = LstmCellParams::new(4, 5, &mut rng);
        assert!(p.bias.data()[5..10].iter().all(|b| *b == 1.0));
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let p = LstmCellParams::zeros(3, 4);
        let err = lstm_step(
            &p,
            &Tensor::zeros(&[1, 2]),
            &Tensor::zeros(&[1, 4]),
            &Tensor::zeros(&[1, 4]),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Shape { op: "lstm_step", .. }));
    }
}
