//! Context encoder: an LSTM over the running trajectory followed by a dense
//! projection of the final hidden state.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Linear, LstmCellParams, ParamSet, Tape, Tensor, TensorRecord, Var};
use crate::replay::Trajectory;

pub const DEFAULT_EMBEDDING_DIM: usize = 6;
pub const DEFAULT_HIDDEN_DIM: usize = 128;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextEmbedding {
    values: Vec<f64>,
}

impl ContextEmbedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("context embedding"));
        }
        Ok(Self { values })
    }

    pub fn zeros(dim: usize) -> Self {
        Self { values: vec![0.0; dim] }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::row(self.values.clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimilarityConfig {
    pub beta: f64,
    /// L2-normalize embeddings before the dot product.
    pub normalize: bool,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            normalize: false,
        }
    }
}

impl SimilarityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::InvalidArgument(format!("beta must be > 0, got {}", self.beta)));
        }
        Ok(())
    }
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter().map(|x| x / n).collect()
    } else {
        v.to_vec()
    }
}

/// `exp(a·b / β)`.
pub fn similarity(a: &ContextEmbedding, b: &ContextEmbedding, cfg: &SimilarityConfig) -> Result<f64> {
    cfg.validate()?;
    if a.dim() != b.dim() {
        return Err(Error::Shape {
            op: "similarity",
            shapes: vec![vec![a.dim()], vec![b.dim()]],
        });
    }
    let dot: f64 = if cfg.normalize {
        unit(a.values()).iter().zip(unit(b.values())).map(|(x, y)| x * y).sum()
    } else {
        a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum()
    };
    Ok((dot / cfg.beta).exp())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub lstm: LstmCellParams,
    pub head: Linear,
}

impl EncoderParams {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, embedding_dim: usize, rng: &mut R) -> Self {
        Self {
            lstm: LstmCellParams::new(input_dim, hidden_dim, rng),
            head: Linear::new(hidden_dim, embedding_dim, rng),
        }
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize, embedding_dim: usize) -> Self {
        Self {
            lstm: LstmCellParams::zeros(input_dim, hidden_dim),
            head: Linear::zeros(hidden_dim, embedding_dim),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.lstm.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.lstm.hidden_dim
    }

    pub fn embedding_dim(&self) -> usize {
        self.head.output_dim()
    }

    pub fn to_record(&self) -> TensorRecord {
        TensorRecord::from_params(self, "encoder.")
    }

    pub fn load_record(&mut self, record: &TensorRecord) -> Result<()> {
        record.load_into(self, "encoder.")
    }
}

impl ParamSet for EncoderParams {
    fn params(&self) -> Vec<&Tensor> {
        vec![&self.lstm.weight, &self.lstm.bias, &self.head.weight, &self.head.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.lstm.weight,
            &mut self.lstm.bias,
            &mut self.head.weight,
            &mut self.head.bias,
        ]
    }

    fn param_names(&self) -> Vec<String> {
        ["lstm.weight", "lstm.bias", "head.weight", "head.bias"]
            .map(String::from)
            .to_vec()
    }
}

/// Recurrent state carried across the steps of one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderState {
    pub h: Tensor,
    pub c: Tensor,
}

impl EncoderState {
    pub fn zeros(hidden_dim: usize) -> Self {
        Self {
            h: Tensor::zeros(&[1, hidden_dim]),
            c: Tensor::zeros(&[1, hidden_dim]),
        }
    }
}

/// Consumes one input and returns the new state with its embedding.
pub fn encode_step(
    params: &EncoderParams,
    state: &EncoderState,
    input: &[f64],
) -> Result<(EncoderState, ContextEmbedding)> {
    if input.len() != params.input_dim() {
        return Err(Error::Shape {
            op: "encode_step",
            shapes: vec![vec![input.len()], vec![params.input_dim()]],
        });
    }
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, false);
    let x = tape.constant(Tensor::row(input.to_vec()));
    let h = tape.constant_ref(&state.h);
    let c = tape.constant_ref(&state.c);
    let (h2, c2) = params.lstm.step_on_tape(&mut tape, &vars[..2], x, h, c)?;
    let e = Linear::forward(&mut tape, &vars[2..], h2)?;
    let emb = ContextEmbedding::new(tape.value(e).data().to_vec())?;
    Ok((
        EncoderState {
            h: tape.value(h2).clone(),
            c: tape.value(c2).clone(),
        },
        emb,
    ))
}

/// Embedding after consuming every input in `inputs`, from a zero state.
pub fn encode(params: &EncoderParams, inputs: &[Vec<f64>]) -> Result<ContextEmbedding> {
    if inputs.is_empty() {
        return Err(Error::Empty("encoder input prefix"));
    }
    let mut state = EncoderState::zeros(params.hidden_dim());
    let mut emb = ContextEmbedding::zeros(params.embedding_dim());
    for x in inputs {
        (state, emb) = encode_step(params, &state, x)?;
    }
    Ok(emb)
}

/// Embedding of the trajectory prefix up to and including step `t`'s state.
pub fn encode_prefix(params: &EncoderParams, traj: &Trajectory, t: usize) -> Result<ContextEmbedding> {
    if t > traj.len() {
        return Err(Error::InvalidArgument(format!(
            "prefix end {t} beyond trajectory length {}",
            traj.len()
        )));
    }
    let inputs: Vec<Vec<f64>> = (0..=t).map(|i| traj.encoder_input(i)).collect();
    encode(params, &inputs)
}

/// Unrolls several input sequences together on `tape` and returns the
/// embeddings at the requested `(sequence, step)` picks, one row per pick.
///
/// `vars` are the four blocks from [`ParamSet::bind`] on `params`.
pub fn encode_batch_on_tape(
    tape: &mut Tape<'_>,
    params: &EncoderParams,
    vars: &[Var],
    sequences: &[&[Vec<f64>]],
    picks: &[(usize, usize)],
) -> Result<Var> {
    if picks.is_empty() {
        return Err(Error::Empty("encoder picks"));
    }
    for &(s, t) in picks {
        if s >= sequences.len() || t >= sequences[s].len() {
            return Err(Error::InvalidArgument(format!("pick ({s}, {t}) out of range")));
        }
    }
    let in_dim = params.input_dim();
    if sequences.iter().flat_map(|s| s.iter()).any(|x| x.len() != in_dim) {
        return Err(Error::Shape {
            op: "encode_batch",
            shapes: vec![vec![in_dim]],
        });
    }
    let hd = params.hidden_dim();

    // Longest first, so the active rows at each step are a prefix.
    let mut order: Vec<usize> = (0..sequences.len()).collect();
    order.sort_by(|&a, &b| sequences[b].len().cmp(&sequences[a].len()).then(a.cmp(&b)));
    let mut slot = vec![0usize; sequences.len()];
    for (pos, &s) in order.iter().enumerate() {
        slot[s] = pos;
    }
    let horizon = picks.iter().map(|&(_, t)| t + 1).max().unwrap_or(0);

    let mut needed_at: Vec<Vec<usize>> = vec![Vec::new(); horizon];
    for (i, &(_, t)) in picks.iter().enumerate() {
        needed_at[t].push(i);
    }

    let mut active = order.len();
    let mut h = tape.constant(Tensor::zeros(&[active, hd]));
    let mut c = tape.constant(Tensor::zeros(&[active, hd]));
    let mut hidden_at: Vec<Option<Var>> = vec![None; horizon];
    for (t, needed) in needed_at.iter().enumerate() {
        let now = order.iter().take_while(|&&s| sequences[s].len() > t).count();
        if now < active {
            let keep: Vec<usize> = (0..now).collect();
            h = tape.gather_rows(h, &keep)?;
            c = tape.gather_rows(c, &keep)?;
            active = now;
        }
        let mut x = Vec::with_capacity(active * in_dim);
        for &s in &order[..active] {
            x.extend_from_slice(&sequences[s][t]);
        }
        let x = tape.constant(Tensor::matrix(active, in_dim, x)?);
        (h, c) = params.lstm.step_on_tape(tape, &vars[..2], x, h, c)?;
        if !needed.is_empty() {
            hidden_at[t] = Some(h);
        }
    }

    let rows: Vec<(Var, usize)> = picks
        .iter()
        .map(|&(s, t)| (hidden_at[t].expect("recorded at pick step"), slot[s]))
        .collect();
    let picked = tape.pick_rows(&rows)?;
    Linear::forward(tape, &vars[2..], picked)
}

/// Slowly tracking copy of the live encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentumEncoder {
    pub params: EncoderParams,
    pub rate: f64,
}

impl MomentumEncoder {
    pub fn new(live: &EncoderParams, rate: f64) -> Self {
        Self {
            params: live.clone(),
            rate,
        }
    }

    /// `θ* ← m·θ + (1 − m)·θ*`.
    pub fn momentum_update(&mut self, live: &EncoderParams) -> Result<()> {
        self.params.soft_update_from(live, self.rate)
    }
}
