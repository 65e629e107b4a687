//! Straight-line 64-bit reference arithmetic shared by integration tests.
#![allow(dead_code)]

use probeval::tensor::ParamStore;

pub type Mat = Vec<Vec<f64>>;

pub fn mat(params: &ParamStore, name: &str) -> Mat {
    let t = params.get(name).unwrap();
    let (r, c) = t.dims2();
    (0..r).map(|i| t.data()[i * c..(i + 1) * c].iter().map(|&v| v as f64).collect()).collect()
}

pub fn vec1(params: &ParamStore, name: &str) -> Vec<f64> {
    params.get(name).unwrap().data().iter().map(|&v| v as f64).collect()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (m, k, n) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; n]; m];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                out[i][j] += a[i][p] * b[p][j];
            }
        }
    }
    out
}

pub fn add_row(x: &Mat, b: &[f64]) -> Mat {
    x.iter().map(|r| r.iter().zip(b).map(|(a, c)| a + c).collect()).collect()
}

pub fn add(x: &Mat, y: &Mat) -> Mat {
    x.iter().zip(y).map(|(a, b)| a.iter().zip(b).map(|(p, q)| p + q).collect()).collect()
}

pub fn layer_norm(x: &Mat, g: &[f64], b: &[f64]) -> Mat {
    x.iter()
        .map(|r| {
            let n = r.len() as f64;
            let mean = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            r.iter()
                .enumerate()
                .map(|(j, v)| (v - mean) / (var + 1e-5).sqrt() * g[j] + b[j])
                .collect()
        })
        .collect()
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

/// One pre-norm block with causal multi-head attention, written out loop by loop.
pub fn block(x: &Mat, p: &ParamStore, prefix: &str, n_heads: usize) -> Mat {
    let g = |s: &str| format!("{prefix}.{s}");
    let a = layer_norm(x, &vec1(p, &g("ln1.g")), &vec1(p, &g("ln1.b")));
    let q = add_row(&matmul(&a, &mat(p, &g("attn.wq"))), &vec1(p, &g("attn.bq")));
    let k = add_row(&matmul(&a, &mat(p, &g("attn.wk"))), &vec1(p, &g("attn.bk")));
    let v = add_row(&matmul(&a, &mat(p, &g("attn.wv"))), &vec1(p, &g("attn.bv")));
    let (t, d) = (x.len(), x[0].len());
    let hd = d / n_heads;
    let mut merged = vec![vec![0.0; d]; t];
    for h in 0..n_heads {
        let cols = h * hd..(h + 1) * hd;
        for i in 0..t {
            let scores: Vec<f64> = (0..=i)
                .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (hd as f64).sqrt())
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in cols.clone() {
                merged[i][c] = (0..=i).map(|j| e[j] / z * v[j][c]).sum();
            }
        }
    }
    let o = add_row(&matmul(&merged, &mat(p, &g("attn.wo"))), &vec1(p, &g("attn.bo")));
    let h = add(x, &o);
    let b = layer_norm(&h, &vec1(p, &g("ln2.g")), &vec1(p, &g("ln2.b")));
    let f = add_row(&matmul(&b, &mat(p, &g("ff.w1"))), &vec1(p, &g("ff.b1")));
    let f: Mat = f.iter().map(|r| r.iter().map(|&v| gelu(v)).collect()).collect();
    let f = add_row(&matmul(&f, &mat(p, &g("ff.w2"))), &vec1(p, &g("ff.b2")));
    add(&h, &f)
}

/// Embedding plus positions, then every block; returns all `N+1` states.
pub fn model_states(p: &ParamStore, tokens: &[u32], n_layers: usize, n_heads: usize) -> Vec<Mat> {
    let emb = mat(p, "tok_emb");
    let pos = mat(p, "pos_emb");
    let mut x: Mat = tokens
        .iter()
        .enumerate()
        .map(|(i, &t)| emb[t as usize].iter().zip(&pos[i]).map(|(a, b)| a + b).collect())
        .collect();
    let mut states = vec![x.clone()];
    for l in 1..=n_layers {
        x = block(&x, p, &format!("layer{l}"), n_heads);
        states.push(x.clone());
    }
    states
}

/// Weight-tied logits from the final state.
pub fn model_logits(p: &ParamStore, tokens: &[u32], n_layers: usize, n_heads: usize) -> Mat {
    let states = model_states(p, tokens, n_layers, n_heads);
    let h = layer_norm(states.last().unwrap(), &vec1(p, "ln_f.g"), &vec1(p, "ln_f.b"));
    let emb = mat(p, "tok_emb");
    h.iter()
        .map(|r| emb.iter().map(|e| e.iter().zip(r).map(|(a, b)| a * b).sum()).collect())
        .collect()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn max_abs_diff(a: &Mat, b: &[f32], width: usize) -> f64 {
    let mut worst = 0f64;
    for (i, r) in a.iter().enumerate() {
        for (j, v) in r.iter().enumerate() {
            worst = worst.max((v - b[i * width + j] as f64).abs());
        }
    }
    worst
}
