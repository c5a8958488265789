use crate::numeric::linalg::{add_row_bias, gemm, gemm_nt, gemm_tn, sum_rows_into};

pub(super) fn forward(x: &[f64], kernel: &[f64], bias: &[f64], batch: usize, inputs: usize, units: usize) -> Vec<f64> {
    let mut y = vec![0.0; batch * units];
    gemm(x, kernel, &mut y, batch, inputs, units);
    add_row_bias(&mut y, bias);
    y
}

#[allow(clippy::too_many_arguments)]
pub(super) fn backward(
    x: &[f64],
    kernel: &[f64],
    dy: &[f64],
    d_kernel: &mut [f64],
    d_bias: &mut [f64],
    batch: usize,
    inputs: usize,
    units: usize,
) -> Vec<f64> {
    gemm_tn(x, dy, d_kernel, batch, inputs, units);
    sum_rows_into(dy, d_bias);
    let mut dx = vec![0.0; batch * inputs];
    gemm_nt(dy, kernel, &mut dx, batch, units, inputs);
    dx
}
