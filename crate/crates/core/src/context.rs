//! Contextual encoder.
//!
//! Each sensor's normalized `L`-sample row is embedded independently with a
//! shared affine map and `tanh`:
//!
//! ```text
//! h_i = tanh(W_e · x_i + b_e)                       (d-vector per sensor)
//! c   = mean of the pooled embeddings in memory     (zero when empty)
//! e_i = vᵀ tanh(W · h_i + U · c)
//! α   = softmax(e)
//! h̃   = Σ_i α_i · h_i
//! ```
//!
//! After a step the pooled embedding `(1/N) Σ_i h_i` is appended to the
//! memory, which holds at most `k` entries (oldest evicted first).
//!
//! Parameters are random features, fixed at initialization. Draw order from the
//! `("encoder")` substream of the seed is `W_e`, `W`, `U`, `v`, each row-major.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Mat};
use crate::rng;
use crate::telemetry::WindowFrame;

pub const DEFAULT_EMBED_DIM: usize = 16;
pub const DEFAULT_CONTEXT_LEN: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    /// Embedding dimension `d`.
    pub dim: usize,
    /// Window length `L` the embedding expects.
    pub window_len: usize,
    /// Memory (context) length `k`.
    pub context_len: usize,
    pub seed: u64,
    /// `W_e`, d × L.
    pub w_embed: Mat,
    /// `b_e`, d.
    pub b_embed: Vec<f64>,
    /// `W`, d × d.
    pub w_attn: Mat,
    /// `U`, d × d.
    pub u_attn: Mat,
    /// `v`, d.
    pub v_attn: Vec<f64>,
}

impl EncoderParams {
    pub fn validate(&self) -> Result<()> {
        let (d, l) = (self.dim, self.window_len);
        if d == 0 || l == 0 || self.context_len == 0 {
            return Err(Error::Parameter("encoder d, L and k must be >= 1".into()));
        }
        let shapes = [
            (self.w_embed.rows, d),
            (self.w_embed.cols, l),
            (self.b_embed.len(), d),
            (self.w_attn.rows, d),
            (self.w_attn.cols, d),
            (self.u_attn.rows, d),
            (self.u_attn.cols, d),
            (self.v_attn.len(), d),
        ];
        for (got, want) in shapes {
            if got != want {
                return Err(Error::dim(want, got, "encoder parameter shape"));
            }
        }
        let finite = self.w_embed.is_finite()
            && self.w_attn.is_finite()
            && self.u_attn.is_finite()
            && self.b_embed.iter().chain(&self.v_attn).all(|v| v.is_finite());
        if !finite {
            return Err(Error::Parameter("encoder parameters must be finite".into()));
        }
        Ok(())
    }
}

pub fn init_params(dim: usize, window_len: usize, context_len: usize, seed: u64) -> Result<EncoderParams> {
    if dim == 0 || window_len == 0 || context_len == 0 {
        return Err(Error::Parameter(format!(
            "encoder d, L, k must be >= 1 (got {dim}, {window_len}, {context_len})"
        )));
    }
    let mut rng = rng::substream(seed, &["encoder"]);
    let be = 1.0 / (window_len as f64).sqrt();
    let ba = 1.0 / (dim as f64).sqrt();
    let w_embed = Mat::from_fn(dim, window_len, |_, _| rng.gen_range(-be..be));
    let w_attn = Mat::from_fn(dim, dim, |_, _| rng.gen_range(-ba..ba));
    let u_attn = Mat::from_fn(dim, dim, |_, _| rng.gen_range(-ba..ba));
    let v_attn = (0..dim).map(|_| rng.gen_range(-ba..ba)).collect();
    Ok(EncoderParams {
        dim,
        window_len,
        context_len,
        seed,
        w_embed,
        b_embed: vec![0.0; dim],
        w_attn,
        u_attn,
        v_attn,
    })
}

/// Bounded FIFO of pooled embeddings, most recent last.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBuffer {
    capacity: usize,
    entries: VecDeque<Vec<f64>>,
}

impl MemoryBuffer {
    pub fn new(capacity: usize) -> Self {
        MemoryBuffer {
            capacity: capacity.max(1),
            entries: VecDeque::with_capacity(capacity.max(1)),
        }
    }

    pub fn from_entries(capacity: usize, entries: Vec<Vec<f64>>) -> Self {
        let mut m = MemoryBuffer::new(capacity);
        for e in entries {
            m.push(e);
        }
        m
    }

    pub fn push(&mut self, entry: Vec<f64>) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(entry);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.entries.iter()
    }

    /// Heap bytes held: the ring itself plus the vectors in it.
    pub fn state_bytes(&self) -> usize {
        self.entries.capacity() * std::mem::size_of::<Vec<f64>>()
            + self
                .entries
                .iter()
                .map(|e| e.capacity() * std::mem::size_of::<f64>())
                .sum::<usize>()
    }
}

/// Everything computed for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedStep {
    /// `h_i`, N × d.
    pub per_sensor_embeddings: Vec<Vec<f64>>,
    /// `c`.
    pub context: Vec<f64>,
    /// Attention logits `e_i`.
    pub scores: Vec<f64>,
    /// `α`.
    pub attention: Vec<f64>,
    /// `h̃`.
    pub attended: Vec<f64>,
    /// `tanh(W h_i + U c)` per sensor; kept for the backward pass.
    pub attention_hidden: Vec<Vec<f64>>,
}

impl EncodedStep {
    pub fn pooled(&self) -> Vec<f64> {
        mean_of(self.per_sensor_embeddings.iter(), self.attended.len())
    }
}

pub fn embed_sensor_window(row: &[f64], params: &EncoderParams) -> Result<Vec<f64>> {
    if row.len() != params.window_len {
        return Err(Error::dim(params.window_len, row.len(), "sensor window length"));
    }
    let mut h = params.w_embed.mul_vec(row);
    for (hj, bj) in h.iter_mut().zip(&params.b_embed) {
        *hj = (*hj + bj).tanh();
    }
    Ok(h)
}

fn mean_of<'a>(rows: impl Iterator<Item = &'a Vec<f64>>, dim: usize) -> Vec<f64> {
    let mut sum = vec![0.0; dim];
    let mut count = 0usize;
    for r in rows {
        for (s, v) in sum.iter_mut().zip(r) {
            *s += v;
        }
        count += 1;
    }
    if count > 0 {
        let inv = 1.0 / count as f64;
        sum.iter_mut().for_each(|s| *s *= inv);
    }
    sum
}

/// Mean of the buffered pooled embeddings; zero vector when empty.
pub fn context_vector(memory: &MemoryBuffer, dim: usize) -> Vec<f64> {
    mean_of(memory.iter(), dim)
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|&e| (e - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Attention logits and the hidden `tanh(W h_i + U c)` per sensor.
pub fn attention_scores(
    per_sensor: &[Vec<f64>],
    context: &[f64],
    params: &EncoderParams,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if context.len() != params.dim {
        return Err(Error::dim(params.dim, context.len(), "context vector"));
    }
    let uc = params.u_attn.mul_vec(context);
    let mut logits = Vec::with_capacity(per_sensor.len());
    let mut hidden = Vec::with_capacity(per_sensor.len());
    for h in per_sensor {
        if h.len() != params.dim {
            return Err(Error::dim(params.dim, h.len(), "sensor embedding"));
        }
        let mut z = params.w_attn.mul_vec(h);
        for (zj, ucj) in z.iter_mut().zip(&uc) {
            *zj = (*zj + ucj).tanh();
        }
        logits.push(dot(&params.v_attn, &z));
        hidden.push(z);
    }
    Ok((logits, hidden))
}

pub fn attention_weights(per_sensor: &[Vec<f64>], context: &[f64], params: &EncoderParams) -> Result<Vec<f64>> {
    if per_sensor.is_empty() {
        return Err(Error::Parameter("attention over zero sensors".into()));
    }
    let (logits, _) = attention_scores(per_sensor, context, params)?;
    Ok(softmax(&logits))
}

pub fn attended_vector(per_sensor: &[Vec<f64>], attention: &[f64]) -> Result<Vec<f64>> {
    if per_sensor.len() != attention.len() {
        return Err(Error::dim(per_sensor.len(), attention.len(), "attention weights"));
    }
    let dim = per_sensor.first().map_or(0, Vec::len);
    let mut out = vec![0.0; dim];
    for (h, &a) in per_sensor.iter().zip(attention) {
        if h.len() != dim {
            return Err(Error::dim(dim, h.len(), "sensor embedding"));
        }
        for (o, v) in out.iter_mut().zip(h) {
            *o += a * v;
        }
    }
    Ok(out)
}

/// Runs one step against a given context without touching any memory.
pub fn encode_with_context(window: &WindowFrame, context: &[f64], params: &EncoderParams) -> Result<EncodedStep> {
    if window.channels == 0 {
        return Err(Error::Parameter("window has no channels".into()));
    }
    let per_sensor = (0..window.channels)
        .map(|ch| embed_sensor_window(window.row(ch), params))
        .collect::<Result<Vec<_>>>()?;
    let (scores, attention_hidden) = attention_scores(&per_sensor, context, params)?;
    let attention = softmax(&scores);
    let attended = attended_vector(&per_sensor, &attention)?;
    Ok(EncodedStep {
        per_sensor_embeddings: per_sensor,
        context: context.to_vec(),
        scores,
        attention,
        attended,
        attention_hidden,
    })
}

/// Encodes a normalized window against the memory, then appends the pooled
/// embedding to the memory.
pub fn encode_step(window: &WindowFrame, memory: &mut MemoryBuffer, params: &EncoderParams) -> Result<EncodedStep> {
    let context = context_vector(memory, params.dim);
    let step = encode_with_context(window, &context, params)?;
    memory.push(step.pooled());
    Ok(step)
}
