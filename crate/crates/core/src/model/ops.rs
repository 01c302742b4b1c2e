//! Building blocks, both as tape fragments and as standalone functions over
//! plain tensors. The standalone versions record onto a private tape so
//! they share kernels with training.

use super::ModelError;
use crate::graph::{GraphError, NodeId, ParamSet, Tape, Tensor};

/// Runs the stacked LSTM over the rows of `x`; returns the top layer's `T × H` hidden sequence.
pub(crate) fn lstm_nodes(
    tape: &mut Tape,
    x: NodeId,
    layers: &[(NodeId, NodeId, NodeId)],
    hidden: usize,
) -> Result<NodeId, GraphError> {
    let t = tape.value(x).rows();
    let mut seq = (0..t).map(|i| tape.row(x, i)).collect::<Result<Vec<_>, _>>()?;
    for &(w_ih, w_hh, b) in layers {
        let mut prev = None;
        let mut out = Vec::with_capacity(t);
        for xt in &seq {
            let state = tape.lstm_cell(*xt, prev, w_ih, w_hh, b)?;
            out.push(tape.slice(state, 0, hidden)?);
            prev = Some(state);
        }
        seq = out;
    }
    tape.stack_rows(&seq)
}

/// Softmax attention over the rows of `rows` with context vector `u`; returns (weights, pooled).
pub(crate) fn attention_nodes(tape: &mut Tape, rows: NodeId, u: NodeId) -> Result<(NodeId, NodeId), GraphError> {
    let scores = tape.matvec(rows, u)?;
    let weights = tape.softmax(scores)?;
    let pooled = tape.vecmat(weights, rows)?;
    Ok((weights, pooled))
}

/// Squeeze-and-excitation over an `M × D` matrix; returns (gate, recalibrated).
pub(crate) fn se_nodes(tape: &mut Tape, stacked: NodeId, w1: NodeId, w2: NodeId) -> Result<(NodeId, NodeId), GraphError> {
    let z = tape.mean_rows(stacked)?;
    let a = tape.matvec(w1, z)?;
    let a = tape.relu(a)?;
    let s = tape.matvec(w2, a)?;
    let s = tape.sigmoid(s)?;
    let out = tape.scale_rows(stacked, s)?;
    Ok((s, out))
}

/// Returns (logits, probabilities).
pub(crate) fn head_nodes(tape: &mut Tape, global: NodeId, w: NodeId, b: NodeId) -> Result<(NodeId, NodeId), GraphError> {
    let z = tape.matvec(w, global)?;
    let logits = tape.add(z, b)?;
    let probs = tape.softmax(logits)?;
    Ok((logits, probs))
}

/// Weights of one LSTM layer: `w_ih` is `4H × F`, `w_hh` is `4H × H`, `b`
/// has `4H` entries, gates ordered input, forget, cell, output.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmLayer {
    pub w_ih: Tensor,
    pub w_hh: Tensor,
    pub b: Tensor,
}

fn with_tape<T>(f: impl FnOnce(&mut Tape) -> Result<T, GraphError>) -> Result<T, ModelError> {
    let empty = ParamSet::new();
    let mut tape = Tape::new(&empty);
    Ok(f(&mut tape)?)
}

fn vector(v: &[f64]) -> Tensor {
    Tensor::vector(v.to_vec())
}

/// Hidden-state sequence (`T × H`) of the top layer.
pub fn lstm_features(x: &Tensor, layers: &[LstmLayer]) -> Result<Tensor, ModelError> {
    let hidden = layers
        .first()
        .ok_or_else(|| ModelError::InvalidConfig("no LSTM layers".into()))?
        .w_hh
        .cols();
    with_tape(|tape| {
        let xn = tape.input(x.clone())?;
        let nodes = layers
            .iter()
            .map(|l| Ok((tape.input(l.w_ih.clone())?, tape.input(l.w_hh.clone())?, tape.input(l.b.clone())?)))
            .collect::<Result<Vec<_>, GraphError>>()?;
        let out = lstm_nodes(tape, xn, &nodes, hidden)?;
        Ok(tape.value(out).clone())
    })
}

/// Attention weights over the rows of `hidden` and their weighted sum.
pub fn scale_attention(hidden: &Tensor, u: &[f64]) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
    with_tape(|tape| {
        let rows = tape.input(hidden.clone())?;
        let u = tape.input(vector(u))?;
        let (w, p) = attention_nodes(tape, rows, u)?;
        Ok((tape.value(w).data().to_vec(), tape.value(p).data().to_vec()))
    })
}

/// Means of consecutive groups of `factor` rows; a trailing partial group is dropped.
pub fn merge_timesteps(hidden: &Tensor, factor: usize) -> Result<Tensor, ModelError> {
    with_tape(|tape| {
        let rows = tape.input(hidden.clone())?;
        let merged = tape.merge_rows(rows, factor)?;
        Ok(tape.value(merged).clone())
    })
}

/// Attention vectors at the three temporal scales.
#[derive(Clone, Debug, PartialEq)]
pub struct Cav {
    pub v_short: Vec<f64>,
    pub v_medium: Vec<f64>,
    pub v_long: Vec<f64>,
}

impl Cav {
    pub fn concatenated(&self) -> Vec<f64> {
        [&self.v_short[..], &self.v_medium, &self.v_long].concat()
    }
}

/// Short, medium (pairs merged) and long (triples merged) attention pooling.
pub fn msa(hidden: &Tensor, u_short: &[f64], u_medium: &[f64], u_long: &[f64]) -> Result<Cav, ModelError> {
    if hidden.rows() < 3 {
        return Err(GraphError::SequenceTooShort {
            rows: hidden.rows(),
            needed: 3,
        }
        .into());
    }
    let (_, v_short) = scale_attention(hidden, u_short)?;
    let (_, v_medium) = scale_attention(&merge_timesteps(hidden, 2)?, u_medium)?;
    let (_, v_long) = scale_attention(&merge_timesteps(hidden, 3)?, u_long)?;
    Ok(Cav {
        v_short,
        v_medium,
        v_long,
    })
}

/// Recalibrates an `M × D` domain matrix; returns (recalibrated, gate).
pub fn se_recalibrate(stacked: &Tensor, w1: &Tensor, w2: &Tensor) -> Result<(Tensor, Vec<f64>), ModelError> {
    with_tape(|tape| {
        let m = tape.input(stacked.clone())?;
        let (w1, w2) = (tape.input(w1.clone())?, tape.input(w2.clone())?);
        let (s, out) = se_nodes(tape, m, w1, w2)?;
        Ok((tape.value(out).clone(), tape.value(s).data().to_vec()))
    })
}

/// Concatenates the domain matrices in order and applies the softmax head.
pub fn fuse_and_classify(domains: &[Tensor], w_out: &Tensor, b_out: &[f64]) -> Result<Vec<f64>, ModelError> {
    let global: usize = domains.iter().map(Tensor::len).sum();
    if w_out.cols() != global || w_out.rows() != b_out.len() {
        return Err(ModelError::DimensionMismatch(format!(
            "head {:?} with bias {} for global length {global}",
            w_out.shape(),
            b_out.len()
        )));
    }
    with_tape(|tape| {
        let parts = domains
            .iter()
            .map(|d| tape.input(d.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let g = tape.concat(&parts)?;
        let (w, b) = (tape.input(w_out.clone())?, tape.input(vector(b_out))?);
        let (_, p) = head_nodes(tape, g, w, b)?;
        Ok(tape.value(p).data().to_vec())
    })
}
