//! Dense kernels shared by the tape and the tape-free inference path, so both
//! produce bit-identical values.

/// `y = x w + b` for `x: rows×inp`, `w: inp×out`, `b: out`.
pub(crate) fn affine(x: &[f64], w: &[f64], b: &[f64], rows: usize, inp: usize, out: usize) -> Vec<f64> {
    let mut y = Vec::with_capacity(rows * out);
    for r in 0..rows {
        y.extend_from_slice(b);
        let yr = &mut y[r * out..(r + 1) * out];
        let xr = &x[r * inp..(r + 1) * inp];
        for (p, &xv) in xr.iter().enumerate() {
            let wr = &w[p * out..(p + 1) * out];
            for (acc, &wv) in yr.iter_mut().zip(wr) {
                *acc += xv * wv;
            }
        }
    }
    y
}

/// `g wᵀ` for `g: rows×out`, `w: inp×out`.
pub(crate) fn matmul_bt(g: &[f64], w: &[f64], rows: usize, inp: usize, out: usize) -> Vec<f64> {
    let mut dx = vec![0.0; rows * inp];
    for r in 0..rows {
        let gr = &g[r * out..(r + 1) * out];
        for p in 0..inp {
            let wr = &w[p * out..(p + 1) * out];
            dx[r * inp + p] = gr.iter().zip(wr).map(|(a, b)| a * b).sum();
        }
    }
    dx
}

/// `xᵀ g` for `x: rows×inp`, `g: rows×out`.
pub(crate) fn matmul_at(x: &[f64], g: &[f64], rows: usize, inp: usize, out: usize) -> Vec<f64> {
    let mut dw = vec![0.0; inp * out];
    for r in 0..rows {
        let gr = &g[r * out..(r + 1) * out];
        for p in 0..inp {
            let xv = x[r * inp + p];
            if xv == 0.0 {
                continue;
            }
            let dwr = &mut dw[p * out..(p + 1) * out];
            for (acc, &gv) in dwr.iter_mut().zip(gr) {
                *acc += xv * gv;
            }
        }
    }
    dw
}

/// Row-wise log-softmax of a `rows×cols` matrix.
pub(crate) fn log_softmax(z: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let zr = &z[r * cols..(r + 1) * cols];
        let m = zr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + zr.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        out.extend(zr.iter().map(|v| v - lse));
    }
    out
}

pub(crate) const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Diagonal-Gaussian log density of one action vector.
pub(crate) fn gaussian_log_density(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    let mut lp = 0.0;
    for ((m, ls), a) in mean.iter().zip(log_std).zip(action) {
        let z = (a - m) / ls.exp();
        lp += -0.5 * z * z - ls - HALF_LN_2PI;
    }
    lp
}
