use crate::numeric::linalg::{gemm, gemm_nt, gemm_tn};

#[derive(Clone, Copy, Debug)]
pub(super) struct Dims {
    pub batch: usize,
    pub steps: usize,
    pub channels: usize,
    pub kernel: usize,
    pub filters: usize,
}

impl Dims {
    fn out_steps(&self) -> usize {
        self.steps - self.kernel + 1
    }
}

// A window x[b, t..t+k, :] is contiguous in [B, T, C] layout, so each output
// row is a single [1, k·C] × [k·C, F] product.
pub(super) fn forward(x: &[f64], kernel: &[f64], bias: &[f64], d: Dims) -> Vec<f64> {
    let span = d.kernel * d.channels;
    let out_steps = d.out_steps();
    let mut y = vec![0.0; d.batch * out_steps * d.filters];
    for b in 0..d.batch {
        for t in 0..out_steps {
            let start = (b * d.steps + t) * d.channels;
            let row = &mut y[(b * out_steps + t) * d.filters..][..d.filters];
            row.copy_from_slice(bias);
            gemm(&x[start..start + span], kernel, row, 1, span, d.filters);
        }
    }
    y
}

pub(super) fn backward(
    x: &[f64],
    kernel: &[f64],
    dy: &[f64],
    d_kernel: &mut [f64],
    d_bias: &mut [f64],
    d: Dims,
) -> Vec<f64> {
    let span = d.kernel * d.channels;
    let out_steps = d.out_steps();
    let mut dx = vec![0.0; x.len()];
    for b in 0..d.batch {
        for t in 0..out_steps {
            let start = (b * d.steps + t) * d.channels;
            let g = &dy[(b * out_steps + t) * d.filters..][..d.filters];
            for (db, gv) in d_bias.iter_mut().zip(g) {
                *db += gv;
            }
            gemm_tn(&x[start..start + span], g, d_kernel, 1, span, d.filters);
            gemm_nt(g, kernel, &mut dx[start..start + span], 1, d.filters, span);
        }
    }
    dx
}
