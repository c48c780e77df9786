//! Raw f64 kernels behind the graph ops. Every kernel accumulates into its
//! output (`+=`); callers zero-initialize for a plain product. Parallel
//! variants partition by output row, so results are identical for any thread
//! count.

use rayon::prelude::*;

/// Work threshold (multiply-adds) below which kernels stay serial.
const PAR_THRESHOLD: usize = 1 << 17;

pub fn init_parallelism() {
    let threads = std::env::var("CRT_NUM_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0);
    if let Some(n) = threads {
        // Ignore the error from double initialization; first caller wins.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

/// out(m,n) += a(m,k) * b(k,n)
pub fn matmul_nn_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let row = |out_row: &mut [f64], i: usize| {
        let a_row = &a[i * k..(i + 1) * k];
        for (l, &a_il) in a_row.iter().enumerate() {
            if a_il != 0.0 {
                let b_row = &b[l * n..(l + 1) * n];
                for (o, &b_lj) in out_row.iter_mut().zip(b_row) {
                    *o += a_il * b_lj;
                }
            }
        }
    };
    if m * k * n >= PAR_THRESHOLD {
        out.par_chunks_mut(n).enumerate().for_each(|(i, r)| row(r, i));
    } else {
        for (i, r) in out.chunks_mut(n).enumerate() {
            row(r, i);
        }
    }
}

/// out(m,k) += a(m,n) * b(k,n)^T      (b given untransposed)
pub fn matmul_nt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, n: usize, k: usize) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * k);
    let row = |out_row: &mut [f64], i: usize| {
        let a_row = &a[i * n..(i + 1) * n];
        for (j, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[j * n..(j + 1) * n];
            let mut acc = 0.0;
            for (x, y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            *o += acc;
        }
    };
    if m * n * k >= PAR_THRESHOLD {
        out.par_chunks_mut(k).enumerate().for_each(|(i, r)| row(r, i));
    } else {
        for (i, r) in out.chunks_mut(k).enumerate() {
            row(r, i);
        }
    }
}

/// out(k,n) += a(m,k)^T * b(m,n)      (a given untransposed)
pub fn matmul_tn_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    // Serial over l keeps accumulation order fixed; parallel over output rows
    // would stride badly through `a`, so this one stays serial (backward-only).
    for l in 0..m {
        let a_row = &a[l * k..(l + 1) * k];
        let b_row = &b[l * n..(l + 1) * n];
        for (i, &a_li) in a_row.iter().enumerate() {
            if a_li != 0.0 {
                let out_row = &mut out[i * n..(i + 1) * n];
                for (o, &b_lj) in out_row.iter_mut().zip(b_row) {
                    *o += a_li * b_lj;
                }
            }
        }
    }
}

/// Zero-padded same-length 1-D convolution, stride 1, odd kernel width.
/// input (b, c_in, l), weight (c_out, c_in, kw), bias (c_out) -> out (b, c_out, l)
pub fn conv1d_acc(
    input: &[f64],
    weight: &[f64],
    bias: &[f64],
    out: &mut [f64],
    b: usize,
    c_in: usize,
    l: usize,
    c_out: usize,
    kw: usize,
) {
    debug_assert_eq!(kw % 2, 1);
    let pad = kw / 2;
    let sample = |out_s: &mut [f64], bi: usize| {
        let in_s = &input[bi * c_in * l..(bi + 1) * c_in * l];
        for o in 0..c_out {
            let out_row = &mut out_s[o * l..(o + 1) * l];
            for v in out_row.iter_mut() {
                *v += bias[o];
            }
            for c in 0..c_in {
                let in_row = &in_s[c * l..(c + 1) * l];
                let w_row = &weight[(o * c_in + c) * kw..(o * c_in + c + 1) * kw];
                for (dk, &w) in w_row.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    // out[t] += w * in[t + dk - pad]
                    let (t0, s0) = if dk >= pad { (0, dk - pad) } else { (pad - dk, 0) };
                    let span = l.saturating_sub(s0).min(l.saturating_sub(t0));
                    for (ov, iv) in out_row[t0..t0 + span].iter_mut().zip(&in_row[s0..s0 + span]) {
                        *ov += w * iv;
                    }
                }
            }
        }
    };
    if b * c_out * c_in * kw * l >= PAR_THRESHOLD {
        out.par_chunks_mut(c_out * l).enumerate().for_each(|(bi, s)| sample(s, bi));
    } else {
        for (bi, s) in out.chunks_mut(c_out * l).enumerate() {
            sample(s, bi);
        }
    }
}

/// Gradients of conv1d_acc. Any of the grad outputs may be empty slices to skip.
pub fn conv1d_backward(
    input: &[f64],
    weight: &[f64],
    d_out: &[f64],
    d_input: &mut [f64],
    d_weight: &mut [f64],
    d_bias: &mut [f64],
    b: usize,
    c_in: usize,
    l: usize,
    c_out: usize,
    kw: usize,
) {
    let pad = kw / 2;
    for bi in 0..b {
        let in_s = &input[bi * c_in * l..(bi + 1) * c_in * l];
        let dout_s = &d_out[bi * c_out * l..(bi + 1) * c_out * l];
        for o in 0..c_out {
            let dout_row = &dout_s[o * l..(o + 1) * l];
            if !d_bias.is_empty() {
                d_bias[o] += dout_row.iter().sum::<f64>();
            }
            for c in 0..c_in {
                let in_row = &in_s[c * l..(c + 1) * l];
                for dk in 0..kw {
                    let (t0, s0) = if dk >= pad { (0, dk - pad) } else { (pad - dk, 0) };
                    let span = l.saturating_sub(s0).min(l.saturating_sub(t0));
                    if !d_weight.is_empty() {
                        let mut acc = 0.0;
                        for (dv, iv) in dout_row[t0..t0 + span].iter().zip(&in_row[s0..s0 + span]) {
                            acc += dv * iv;
                        }
                        d_weight[(o * c_in + c) * kw + dk] += acc;
                    }
                    if !d_input.is_empty() {
                        let w = weight[(o * c_in + c) * kw + dk];
                        if w != 0.0 {
                            let din_row =
                                &mut d_input[bi * c_in * l + c * l..bi * c_in * l + (c + 1) * l];
                            for (iv, dv) in
                                din_row[s0..s0 + span].iter_mut().zip(&dout_row[t0..t0 + span])
                            {
                                *iv += w * dv;
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn tanh_gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn tanh_gelu_derivative(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}
