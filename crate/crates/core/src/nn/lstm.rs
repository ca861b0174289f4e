//! Single-layer LSTM over a `[T, D]` sequence.
//!
//! The complex LSTM of the suppressor is this real LSTM run at width `2H` over
//! concatenated real/imaginary features. Gate order in the stacked weights is
//! input, forget, cell, output.

use super::act::sigmoid;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmDims {
    pub input: usize,
    pub hidden: usize,
}

impl LstmDims {
    pub fn wx_shape(&self) -> [usize; 2] {
        [4 * self.hidden, self.input]
    }

    pub fn wh_shape(&self) -> [usize; 2] {
        [4 * self.hidden, self.hidden]
    }
}

/// Recurrent carry `(h, c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState<T: Scalar> {
    pub h: Vec<T>,
    pub c: Vec<T>,
}

impl<T: Scalar> LstmState<T> {
    pub fn zeros(hidden: usize) -> Self {
        LstmState { h: vec![T::zero(); hidden], c: vec![T::zero(); hidden] }
    }
}

/// Saved activations for the backward pass.
#[derive(Debug, Default, Clone)]
pub struct LstmCache<T: Scalar> {
    /// post-activation gates `[T, 4H]`
    pub gates: Vec<T>,
    /// cell states `[T + 1, H]`, row 0 is the initial carry
    pub cells: Vec<T>,
    /// hidden states `[T + 1, H]`, row 0 is the initial carry
    pub hiddens: Vec<T>,
}

/// Runs the sequence from `state`, writing `[T, H]` outputs and leaving the
/// final carry in `state`. With `snapshot_at = Some(k)`, the carry after `k`
/// steps is also copied into `snapshot`.
#[allow(clippy::too_many_arguments)]
pub fn lstm_forward<T: Scalar>(
    dims: LstmDims,
    x: &[T],
    steps: usize,
    wx: &[T],
    wh: &[T],
    bias: &[T],
    state: &mut LstmState<T>,
    cache: &mut LstmCache<T>,
    out: &mut Vec<T>,
    snapshot: Option<(usize, &mut LstmState<T>)>,
) -> Result<()> {
    let (d, h) = (dims.input, dims.hidden);
    if x.len() != steps * d {
        return Err(Error::Shape(format!("lstm input length {} != {steps}×{d}", x.len())));
    }
    if state.h.len() != h || state.c.len() != h {
        return Err(Error::State(format!("carry width {}/{} != hidden {h}", state.h.len(), state.c.len())));
    }
    let g4 = 4 * h;
    // input projections for every step at once
    cache.gates.clear();
    cache.gates.resize(steps * g4, T::zero());
    for row in cache.gates.chunks_exact_mut(g4) {
        row.copy_from_slice(bias);
    }
    T::gemm(steps, d, g4, T::one(), x, d as isize, 1, wx, 1, d as isize, T::one(), &mut cache.gates, g4 as isize, 1);
    cache.cells.clear();
    cache.cells.extend_from_slice(&state.c);
    cache.hiddens.clear();
    cache.hiddens.extend_from_slice(&state.h);
    cache.cells.resize((steps + 1) * h, T::zero());
    cache.hiddens.resize((steps + 1) * h, T::zero());
    out.clear();
    out.resize(steps * h, T::zero());
    let mut snap = snapshot;
    for t in 0..steps {
        let (prev_h, rest_h) = cache.hiddens.split_at_mut((t + 1) * h);
        let prev_h = &prev_h[t * h..];
        let gates = &mut cache.gates[t * g4..(t + 1) * g4];
        T::gemm(1, h, g4, T::one(), prev_h, h as isize, 1, wh, 1, h as isize, T::one(), gates, g4 as isize, 1);
        let (prev_c, rest_c) = cache.cells.split_at_mut((t + 1) * h);
        let prev_c = &prev_c[t * h..];
        let cur_c = &mut rest_c[..h];
        let cur_h = &mut rest_h[..h];
        for j in 0..h {
            let i = sigmoid(gates[j]);
            let f = sigmoid(gates[h + j]);
            let g = gates[2 * h + j].tanh();
            let o = sigmoid(gates[3 * h + j]);
            gates[j] = i;
            gates[h + j] = f;
            gates[2 * h + j] = g;
            gates[3 * h + j] = o;
            let c = f * prev_c[j] + i * g;
            cur_c[j] = c;
            cur_h[j] = o * c.tanh();
        }
        out[t * h..(t + 1) * h].copy_from_slice(cur_h);
        if let Some((k, s)) = snap.as_mut() {
            if *k == t + 1 {
                s.h.copy_from_slice(cur_h);
                s.c.copy_from_slice(cur_c);
            }
        }
    }
    if let Some((0, s)) = snap.as_mut() {
        s.h.copy_from_slice(&state.h);
        s.c.copy_from_slice(&state.c);
    }
    state.h.copy_from_slice(&cache.hiddens[steps * h..]);
    state.c.copy_from_slice(&cache.cells[steps * h..]);
    Ok(())
}

/// Backpropagation through time. Accumulates weight gradients and `grad_x`.
#[allow(clippy::too_many_arguments)]
pub fn lstm_backward<T: Scalar>(
    dims: LstmDims,
    x: &[T],
    steps: usize,
    wx: &[T],
    wh: &[T],
    cache: &LstmCache<T>,
    grad_out: &[T],
    grad_x: Option<&mut [T]>,
    grad_wx: &mut [T],
    grad_wh: &mut [T],
    grad_bias: &mut [T],
) {
    let (d, h) = (dims.input, dims.hidden);
    let g4 = 4 * h;
    let mut dgates = vec![T::zero(); steps * g4];
    let mut dh_next = vec![T::zero(); h];
    let mut dc_next = vec![T::zero(); h];
    for t in (0..steps).rev() {
        let gates = &cache.gates[t * g4..(t + 1) * g4];
        let c_prev = &cache.cells[t * h..(t + 1) * h];
        let c_cur = &cache.cells[(t + 1) * h..(t + 2) * h];
        let dg = &mut dgates[t * g4..(t + 1) * g4];
        for j in 0..h {
            let (i, f, g, o) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
            let tc = c_cur[j].tanh();
            let dh = grad_out[t * h + j] + dh_next[j];
            let dc = dc_next[j] + dh * o * (T::one() - tc * tc);
            dg[j] = dc * g * i * (T::one() - i);
            dg[h + j] = dc * c_prev[j] * f * (T::one() - f);
            dg[2 * h + j] = dc * i * (T::one() - g * g);
            dg[3 * h + j] = dh * tc * o * (T::one() - o);
            dc_next[j] = dc * f;
        }
        // dh_prev = Whᵀ · dgates
        T::gemm(1, g4, h, T::one(), dg, g4 as isize, 1, wh, h as isize, 1, T::zero(), &mut dh_next, h as isize, 1);
    }
    // dWx += dGᵀ · X ; dWh += dGᵀ · H_prev ; db += Σ dG
    T::gemm(g4, steps, d, T::one(), &dgates, 1, g4 as isize, x, d as isize, 1, T::one(), grad_wx, d as isize, 1);
    T::gemm(g4, steps, h, T::one(), &dgates, 1, g4 as isize, &cache.hiddens[..steps * h], h as isize, 1, T::one(), grad_wh, h as isize, 1);
    for row in dgates.chunks_exact(g4) {
        for (gb, v) in grad_bias.iter_mut().zip(row) {
            *gb += *v;
        }
    }
    if let Some(gx) = grad_x {
        T::gemm(steps, g4, d, T::one(), &dgates, g4 as isize, 1, wx, d as isize, 1, T::one(), gx, d as isize, 1);
    }
}
