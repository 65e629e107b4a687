//! Forward and backward numeric kernels on flat row-major buffers.
//!
//! Forward kernels write element type `T`; backward kernels take and
//! produce `f64` adjoints.

use super::{Element, LN_EPS};

/// `out[m×n] = a[m×k] · b[k×n]`.
pub fn matmul<T: Element>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    let mut acc = vec![0f64; n];
    for i in 0..m {
        acc.iter_mut().for_each(|v| *v = 0.0);
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            let av = av.to_f64();
            let brow = &b[p * n..(p + 1) * n];
            for (s, &bv) in acc.iter_mut().zip(brow) {
                *s += av * bv.to_f64();
            }
        }
        for (o, s) in out[i * n..(i + 1) * n].iter_mut().zip(&acc) {
            *o = T::from_f64(*s);
        }
    }
}

/// `da[m×k] += dc[m×n] · bᵀ`.
pub fn matmul_grad_a<T: Element>(dc: &[f64], b: &[T], da: &mut [f64], m: usize, k: usize, n: usize) {
    // Row-axpy form over a transposed copy of b keeps the inner loop
    // independent across lanes.
    let mut bt = vec![0f64; n * k];
    for p in 0..k {
        for j in 0..n {
            bt[j * k + p] = b[p * n + j].to_f64();
        }
    }
    for i in 0..m {
        let drow = &dc[i * n..(i + 1) * n];
        let out = &mut da[i * k..(i + 1) * k];
        for (j, &d) in drow.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            for (o, bv) in out.iter_mut().zip(&bt[j * k..(j + 1) * k]) {
                *o += d * bv;
            }
        }
    }
}

/// `db[k×n] += aᵀ · dc[m×n]`.
pub fn matmul_grad_b<T: Element>(a: &[T], dc: &[f64], db: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let drow = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p].to_f64();
            if av == 0.0 {
                continue;
            }
            for (o, d) in db[p * n..(p + 1) * n].iter_mut().zip(drow) {
                *o += av * d;
            }
        }
    }
}

/// Row-wise softmax with max subtraction. With `causal`, row `i` only
/// covers columns `0..=i` and the rest are zero.
pub fn softmax_rows<T: Element>(x: &[T], out: &mut [T], m: usize, n: usize, causal: bool) {
    let mut e = vec![0f64; n];
    for i in 0..m {
        let width = if causal { (i + 1).min(n) } else { n };
        let row = &x[i * n..i * n + width];
        let max = row
            .iter()
            .map(|v| v.to_f64())
            .fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0f64;
        for (ev, v) in e.iter_mut().zip(row) {
            *ev = (v.to_f64() - max).exp();
            sum += *ev;
        }
        let orow = &mut out[i * n..(i + 1) * n];
        for j in 0..n {
            orow[j] = if j < width {
                T::from_f64(e[j] / sum)
            } else {
                T::default()
            };
        }
    }
}

/// `dx += y ⊙ (dy − Σ dy·y)` per row.
pub fn softmax_rows_grad<T: Element>(y: &[T], dy: &[f64], dx: &mut [f64], m: usize, n: usize) {
    for i in 0..m {
        let yr = &y[i * n..(i + 1) * n];
        let dr = &dy[i * n..(i + 1) * n];
        let dot: f64 = yr.iter().zip(dr).map(|(a, b)| a.to_f64() * b).sum();
        for j in 0..n {
            dx[i * n + j] += yr[j].to_f64() * (dr[j] - dot);
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh-approximated GELU.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Per-row normalization; writes the affine output and each row's
/// reciprocal standard deviation.
pub fn layer_norm<T: Element>(
    x: &[T],
    gain: &[T],
    bias: &[T],
    out: &mut [T],
    rstd: &mut [f64],
    m: usize,
    n: usize,
) {
    for i in 0..m {
        let row = &x[i * n..(i + 1) * n];
        let mean = row.iter().map(|v| v.to_f64()).sum::<f64>() / n as f64;
        let var = row
            .iter()
            .map(|v| {
                let d = v.to_f64() - mean;
                d * d
            })
            .sum::<f64>()
            / n as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        rstd[i] = r;
        for j in 0..n {
            let xhat = (row[j].to_f64() - mean) * r;
            out[i * n + j] = T::from_f64(xhat * gain[j].to_f64() + bias[j].to_f64());
        }
    }
}

/// Backward of [`layer_norm`]; any of the output buffers may be skipped.
#[allow(clippy::too_many_arguments)]
pub fn layer_norm_grad<T: Element>(
    x: &[T],
    gain: &[T],
    rstd: &[f64],
    dy: &[f64],
    dx: Option<&mut [f64]>,
    dgain: Option<&mut [f64]>,
    dbias: Option<&mut [f64]>,
    m: usize,
    n: usize,
) {
    let mut xhat = vec![0f64; n];
    let mut dxhat = vec![0f64; n];
    let mut dx = dx;
    let mut dgain = dgain;
    let mut dbias = dbias;
    for i in 0..m {
        let row = &x[i * n..(i + 1) * n];
        let dr = &dy[i * n..(i + 1) * n];
        let mean = row.iter().map(|v| v.to_f64()).sum::<f64>() / n as f64;
        let r = rstd[i];
        for j in 0..n {
            xhat[j] = (row[j].to_f64() - mean) * r;
            dxhat[j] = dr[j] * gain[j].to_f64();
        }
        if let Some(dg) = dgain.as_deref_mut() {
            for j in 0..n {
                dg[j] += dr[j] * xhat[j];
            }
        }
        if let Some(db) = dbias.as_deref_mut() {
            for j in 0..n {
                db[j] += dr[j];
            }
        }
        if let Some(dx) = dx.as_deref_mut() {
            let mean_d = dxhat.iter().sum::<f64>() / n as f64;
            let mean_dx = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / n as f64;
            for j in 0..n {
                dx[i * n + j] += r * (dxhat[j] - mean_d - xhat[j] * mean_dx);
            }
        }
    }
}
