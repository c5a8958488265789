//! FRNN, LSTM and GRU layers with full backpropagation through time.
//!
//! Gate blocks are stacked along the columns of the kernels: LSTM uses
//! `[input, forget, candidate, output]`, GRU uses `[update, reset, candidate]`
//! with the reset gate applied before the recurrent candidate product.
//! Internally sequences are time-major (`[T, B, ·]`) so that each step is a
//! contiguous matrix.

use super::RecurrentCell;
use crate::numeric::linalg::{
    add_row_bias, gemm, gemm_nt, gemm_tn, sigmoid, sum_rows_into, to_batch_major, to_time_major,
};

#[derive(Clone, Copy, Debug)]
pub(super) struct Dims {
    pub batch: usize,
    pub steps: usize,
    pub inputs: usize,
    pub units: usize,
}

#[derive(Clone, Debug)]
pub struct Trace {
    pub(super) steps: usize,
    inputs_tm: Vec<f64>,
    /// Hidden states, `[T, B, H]`.
    hidden: Vec<f64>,
    /// Post-activation gates, `[T, B, gates·H]` (LSTM and GRU only).
    gates: Vec<f64>,
    /// LSTM cell states, `[T, B, H]`.
    cells: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
pub(super) fn forward(
    cell: RecurrentCell,
    x: &[f64],
    input_kernel: &[f64],
    recurrent_kernel: &[f64],
    bias: &[f64],
    d: Dims,
    return_sequences: bool,
) -> (Vec<f64>, Trace) {
    let Dims { batch, steps, inputs, units: h } = d;
    let g = cell.gates();
    let gw = g * h;
    let inputs_tm = to_time_major(x, batch, steps, inputs);
    let mut proj = vec![0.0; steps * batch * gw];
    gemm(&inputs_tm, input_kernel, &mut proj, steps * batch, inputs, gw);
    add_row_bias(&mut proj, bias);

    let step_len = batch * h;
    let mut hidden = vec![0.0; steps * step_len];
    let mut gates = if cell == RecurrentCell::Frnn { Vec::new() } else { vec![0.0; steps * batch * gw] };
    let mut cells = if cell == RecurrentCell::Lstm { vec![0.0; steps * step_len] } else { Vec::new() };
    let zeros = vec![0.0; step_len];
    let (zr_kernel, n_kernel) = match cell {
        RecurrentCell::Gru => split_columns(recurrent_kernel, h, &[2 * h, h]),
        _ => (Vec::new(), Vec::new()),
    };

    for t in 0..steps {
        let (done, rest) = hidden.split_at_mut(t * step_len);
        let h_prev: &[f64] = if t == 0 { &zeros } else { &done[(t - 1) * step_len..] };
        let h_cur = &mut rest[..step_len];
        let pre = &mut proj[t * batch * gw..(t + 1) * batch * gw];
        match cell {
            RecurrentCell::Frnn => {
                gemm(h_prev, recurrent_kernel, pre, batch, h, h);
                for (o, p) in h_cur.iter_mut().zip(pre.iter()) {
                    *o = p.tanh();
                }
            }
            RecurrentCell::Lstm => {
                gemm(h_prev, recurrent_kernel, pre, batch, h, gw);
                let (c_done, c_rest) = cells.split_at_mut(t * step_len);
                let c_prev: &[f64] = if t == 0 { &zeros } else { &c_done[(t - 1) * step_len..] };
                let c_cur = &mut c_rest[..step_len];
                let act = &mut gates[t * batch * gw..(t + 1) * batch * gw];
                for b in 0..batch {
                    let p = &pre[b * gw..(b + 1) * gw];
                    let a = &mut act[b * gw..(b + 1) * gw];
                    for j in 0..h {
                        let i_g = sigmoid(p[j]);
                        let f_g = sigmoid(p[h + j]);
                        let c_g = p[2 * h + j].tanh();
                        let o_g = sigmoid(p[3 * h + j]);
                        a[j] = i_g;
                        a[h + j] = f_g;
                        a[2 * h + j] = c_g;
                        a[3 * h + j] = o_g;
                        let c = f_g * c_prev[b * h + j] + i_g * c_g;
                        c_cur[b * h + j] = c;
                        h_cur[b * h + j] = o_g * c.tanh();
                    }
                }
            }
            RecurrentCell::Gru => {
                let mut zr = vec![0.0; batch * 2 * h];
                gemm(h_prev, &zr_kernel, &mut zr, batch, h, 2 * h);
                let act = &mut gates[t * batch * gw..(t + 1) * batch * gw];
                let mut reset_hidden = vec![0.0; step_len];
                for b in 0..batch {
                    for j in 0..h {
                        let z = sigmoid(pre[b * gw + j] + zr[b * 2 * h + j]);
                        let r = sigmoid(pre[b * gw + h + j] + zr[b * 2 * h + h + j]);
                        act[b * gw + j] = z;
                        act[b * gw + h + j] = r;
                        reset_hidden[b * h + j] = r * h_prev[b * h + j];
                    }
                }
                let mut cand = vec![0.0; step_len];
                gemm(&reset_hidden, &n_kernel, &mut cand, batch, h, h);
                for b in 0..batch {
                    for j in 0..h {
                        let n = (pre[b * gw + 2 * h + j] + cand[b * h + j]).tanh();
                        let z = act[b * gw + j];
                        act[b * gw + 2 * h + j] = n;
                        h_cur[b * h + j] = z * h_prev[b * h + j] + (1.0 - z) * n;
                    }
                }
            }
        }
    }

    let out = if return_sequences {
        to_batch_major(&hidden, batch, steps, h)
    } else {
        hidden[(steps - 1) * step_len..].to_vec()
    };
    (out, Trace { steps, inputs_tm, hidden, gates, cells })
}

#[allow(clippy::too_many_arguments)]
pub(super) fn backward(
    cell: RecurrentCell,
    trace: &Trace,
    input_kernel: &[f64],
    recurrent_kernel: &[f64],
    grad_out: &[f64],
    d_input_kernel: &mut [f64],
    d_recurrent_kernel: &mut [f64],
    d_bias: &mut [f64],
    d: Dims,
    return_sequences: bool,
) -> Vec<f64> {
    let Dims { batch, steps, inputs, units: h } = d;
    let g = cell.gates();
    let gw = g * h;
    let step_len = batch * h;

    let grad_hidden = if return_sequences {
        to_time_major(grad_out, batch, steps, h)
    } else {
        let mut gh = vec![0.0; steps * step_len];
        gh[(steps - 1) * step_len..].copy_from_slice(grad_out);
        gh
    };

    let zeros = vec![0.0; step_len];
    let (zr_kernel, n_kernel) = match cell {
        RecurrentCell::Gru => split_columns(recurrent_kernel, h, &[2 * h, h]),
        _ => (Vec::new(), Vec::new()),
    };
    let mut d_zr = vec![0.0; if cell == RecurrentCell::Gru { h * 2 * h } else { 0 }];
    let mut d_n = vec![0.0; if cell == RecurrentCell::Gru { h * h } else { 0 }];

    let mut d_pre_all = vec![0.0; steps * batch * gw];
    let mut dh_next = vec![0.0; step_len];
    let mut dc_next = vec![0.0; step_len];

    for t in (0..steps).rev() {
        let h_cur = &trace.hidden[t * step_len..(t + 1) * step_len];
        let h_prev: &[f64] = if t == 0 { &zeros } else { &trace.hidden[(t - 1) * step_len..t * step_len] };
        let dh: Vec<f64> =
            grad_hidden[t * step_len..(t + 1) * step_len].iter().zip(&dh_next).map(|(a, b)| a + b).collect();
        let d_pre = &mut d_pre_all[t * batch * gw..(t + 1) * batch * gw];
        match cell {
            RecurrentCell::Frnn => {
                for ((dp, &hv), &dv) in d_pre.iter_mut().zip(h_cur).zip(&dh) {
                    *dp = dv * (1.0 - hv * hv);
                }
                if t > 0 {
                    gemm_tn(h_prev, d_pre, d_recurrent_kernel, batch, h, h);
                }
                dh_next.iter_mut().for_each(|v| *v = 0.0);
                gemm_nt(d_pre, recurrent_kernel, &mut dh_next, batch, h, h);
            }
            RecurrentCell::Lstm => {
                let act = &trace.gates[t * batch * gw..(t + 1) * batch * gw];
                let c_cur = &trace.cells[t * step_len..(t + 1) * step_len];
                let c_prev: &[f64] = if t == 0 { &zeros } else { &trace.cells[(t - 1) * step_len..t * step_len] };
                for b in 0..batch {
                    let a = &act[b * gw..(b + 1) * gw];
                    let dp = &mut d_pre[b * gw..(b + 1) * gw];
                    for j in 0..h {
                        let k = b * h + j;
                        let (i_g, f_g, c_g, o_g) = (a[j], a[h + j], a[2 * h + j], a[3 * h + j]);
                        let tc = c_cur[k].tanh();
                        let dc = dc_next[k] + dh[k] * o_g * (1.0 - tc * tc);
                        dp[j] = dc * c_g * i_g * (1.0 - i_g);
                        dp[h + j] = dc * c_prev[k] * f_g * (1.0 - f_g);
                        dp[2 * h + j] = dc * i_g * (1.0 - c_g * c_g);
                        dp[3 * h + j] = dh[k] * tc * o_g * (1.0 - o_g);
                        dc_next[k] = dc * f_g;
                    }
                }
                if t > 0 {
                    gemm_tn(h_prev, d_pre, d_recurrent_kernel, batch, h, gw);
                }
                dh_next.iter_mut().for_each(|v| *v = 0.0);
                gemm_nt(d_pre, recurrent_kernel, &mut dh_next, batch, gw, h);
            }
            RecurrentCell::Gru => {
                let act = &trace.gates[t * batch * gw..(t + 1) * batch * gw];
                let mut d_cand = vec![0.0; step_len];
                let mut reset_hidden = vec![0.0; step_len];
                for b in 0..batch {
                    for j in 0..h {
                        let k = b * h + j;
                        let (z, r, n) = (act[b * gw + j], act[b * gw + h + j], act[b * gw + 2 * h + j]);
                        d_pre[b * gw + j] = dh[k] * (h_prev[k] - n) * z * (1.0 - z);
                        let dn = dh[k] * (1.0 - z) * (1.0 - n * n);
                        d_pre[b * gw + 2 * h + j] = dn;
                        d_cand[k] = dn;
                        reset_hidden[k] = r * h_prev[k];
                        dh_next[k] = dh[k] * z;
                    }
                }
                let mut d_reset_hidden = vec![0.0; step_len];
                gemm_nt(&d_cand, &n_kernel, &mut d_reset_hidden, batch, h, h);
                gemm_tn(&reset_hidden, &d_cand, &mut d_n, batch, h, h);
                let mut d_zr_pre = vec![0.0; batch * 2 * h];
                for b in 0..batch {
                    for j in 0..h {
                        let k = b * h + j;
                        let r = act[b * gw + h + j];
                        let dr = d_reset_hidden[k] * h_prev[k] * r * (1.0 - r);
                        d_pre[b * gw + h + j] = dr;
                        dh_next[k] += d_reset_hidden[k] * r;
                        d_zr_pre[b * 2 * h + j] = d_pre[b * gw + j];
                        d_zr_pre[b * 2 * h + h + j] = dr;
                    }
                }
                if t > 0 {
                    gemm_tn(h_prev, &d_zr_pre, &mut d_zr, batch, h, 2 * h);
                }
                gemm_nt(&d_zr_pre, &zr_kernel, &mut dh_next, batch, 2 * h, h);
            }
        }
    }

    if cell == RecurrentCell::Gru {
        merge_columns(d_recurrent_kernel, h, &[(&d_zr, 2 * h), (&d_n, h)]);
    }
    gemm_tn(&trace.inputs_tm, &d_pre_all, d_input_kernel, steps * batch, inputs, gw);
    sum_rows_into(&d_pre_all, d_bias);
    let mut dx_tm = vec![0.0; steps * batch * inputs];
    gemm_nt(&d_pre_all, input_kernel, &mut dx_tm, steps * batch, gw, inputs);
    to_batch_major(&dx_tm, batch, steps, inputs)
}

/// Splits a `[rows, Σwidths]` matrix into two contiguous column blocks.
fn split_columns(m: &[f64], rows: usize, widths: &[usize; 2]) -> (Vec<f64>, Vec<f64>) {
    let total = widths[0] + widths[1];
    let mut a = Vec::with_capacity(rows * widths[0]);
    let mut b = Vec::with_capacity(rows * widths[1]);
    for row in m.chunks_exact(total).take(rows) {
        a.extend_from_slice(&row[..widths[0]]);
        b.extend_from_slice(&row[widths[0]..]);
    }
    (a, b)
}

/// Adds column blocks back into a `[rows, Σwidths]` accumulator.
fn merge_columns(dst: &mut [f64], rows: usize, blocks: &[(&[f64], usize)]) {
    let total: usize = blocks.iter().map(|(_, w)| w).sum();
    for r in 0..rows {
        let mut offset = 0;
        for (block, w) in blocks {
            for j in 0..*w {
                dst[r * total + offset + j] += block[r * w + j];
            }
            offset += w;
        }
    }
}
