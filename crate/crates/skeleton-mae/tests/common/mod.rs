//! Loop-level reference implementations shared by the integration tests.
//!
//! Everything here is written the slow, obvious way: explicit loops over
//! nodes, neighbors, and heads, with no tensor ops and no shared code
//! with the library internals it checks against.

#![allow(dead_code)]

use skeleton_mae::backbones::Activation;
use skeleton_mae::numerics::{ParamStore, Scalar};
use skeleton_mae::skeleton::Adjacency;

/// Parameter values by exact name, widened to f64.
pub fn param_f64<T: Scalar>(store: &ParamStore<T>, name: &str) -> Vec<f64> {
    let id = store
        .find(name)
        .unwrap_or_else(|| panic!("parameter {name} not found"));
    store.data(id).iter().map(|v| v.widen()).collect()
}

pub fn apply_activation(z: &mut [f64], act: Activation, slope: f64) {
    for v in z.iter_mut() {
        match act {
            Activation::None => {}
            Activation::Relu => {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            Activation::Prelu => {
                if *v < 0.0 {
                    *v *= slope;
                }
            }
        }
    }
}

fn prelu(v: f64, slope: f64) -> f64 {
    if v < 0.0 {
        v * slope
    } else {
        v
    }
}

/// x [n×k] times w [k×m], all row-major, one scalar at a time.
fn slow_matmul(x: &[f64], w: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for c in 0..m {
            let mut acc = 0.0;
            for t in 0..k {
                acc += x[i * k + t] * w[t * m + c];
            }
            out[i * m + c] = acc;
        }
    }
    out
}

pub struct GinVals {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub eps: f64,
    pub mlp_slope: f64,
}

impl GinVals {
    pub fn from_store<T: Scalar>(store: &ParamStore<T>, prefix: &str) -> Self {
        GinVals {
            w1: param_f64(store, &format!("{prefix}.mlp1.weight")),
            b1: param_f64(store, &format!("{prefix}.mlp1.bias")),
            w2: param_f64(store, &format!("{prefix}.mlp2.weight")),
            b2: param_f64(store, &format!("{prefix}.mlp2.bias")),
            eps: param_f64(store, &format!("{prefix}.epsilon"))[0],
            mlp_slope: param_f64(store, &format!("{prefix}.mlp_slope"))[0],
        }
    }
}

/// Per-node sum aggregation with the self term scaled by (1+eps),
/// then the two-layer MLP, node by node. Pre-activation output.
pub fn naive_gin(
    h: &[f64],
    adj: &Adjacency,
    p: &GinVals,
    d_in: usize,
    d_out: usize,
) -> Vec<f64> {
    let n = adj.n;
    let mut agg = vec![0.0; n * d_in];
    for i in 0..n {
        for k in 0..d_in {
            let mut acc = (1.0 + p.eps) * h[i * d_in + k];
            for j in 0..n {
                acc += adj.at(i, j) * h[j * d_in + k];
            }
            agg[i * d_in + k] = acc;
        }
    }
    let mut z1 = slow_matmul(&agg, &p.w1, n, d_in, d_out);
    for i in 0..n {
        for c in 0..d_out {
            z1[i * d_out + c] = prelu(z1[i * d_out + c] + p.b1[c], p.mlp_slope);
        }
    }
    let mut z2 = slow_matmul(&z1, &p.w2, n, d_out, d_out);
    for i in 0..n {
        for c in 0..d_out {
            z2[i * d_out + c] += p.b2[c];
        }
    }
    z2
}

/// Normalized-adjacency weighted sum of transformed neighbor features,
/// node by node. Pre-activation output.
pub fn naive_gcn(
    h: &[f64],
    adj: &Adjacency,
    weight: &[f64],
    d_in: usize,
    d_out: usize,
) -> Vec<f64> {
    let n = adj.n;
    let hw = slow_matmul(h, weight, n, d_in, d_out);
    let mut out = vec![0.0; n * d_out];
    for i in 0..n {
        for j in 0..n {
            let a = adj.at(i, j);
            if a == 0.0 {
                continue;
            }
            for c in 0..d_out {
                out[i * d_out + c] += a * hw[j * d_out + c];
            }
        }
    }
    out
}

pub struct GatHeadVals {
    pub weight: Vec<f64>,
    pub att_src: Vec<f64>,
    pub att_dst: Vec<f64>,
}

impl GatHeadVals {
    pub fn from_store<T: Scalar>(store: &ParamStore<T>, prefix: &str, head: usize) -> Self {
        GatHeadVals {
            weight: param_f64(store, &format!("{prefix}.head{head}.weight")),
            att_src: param_f64(store, &format!("{prefix}.head{head}.att_src")),
            att_dst: param_f64(store, &format!("{prefix}.head{head}.att_dst")),
        }
    }
}

/// Additive attention per edge, softmax restricted to the 1-hop
/// neighborhood plus self, heads concatenated. Pre-activation output.
pub fn naive_gat(
    h: &[f64],
    adj: &Adjacency,
    heads: &[GatHeadVals],
    d_in: usize,
    d_out: usize,
) -> Vec<f64> {
    let n = adj.n;
    let dh = d_out / heads.len();
    let mut out = vec![0.0; n * d_out];
    for (k, head) in heads.iter().enumerate() {
        let hw = slow_matmul(h, &head.weight, n, d_in, dh);
        let score = |node: usize, att: &[f64]| -> f64 {
            (0..dh).map(|c| hw[node * dh + c] * att[c]).sum()
        };
        for i in 0..n {
            let neighbors: Vec<usize> = (0..n)
                .filter(|&j| j == i || adj.at(i, j) != 0.0)
                .collect();
            let logits: Vec<f64> = neighbors
                .iter()
                .map(|&j| prelu(score(i, &head.att_src) + score(j, &head.att_dst), 0.2))
                .collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|&e| (e - max).exp()).collect();
            let denom: f64 = exps.iter().sum();
            for (&j, &e) in neighbors.iter().zip(&exps) {
                let alpha = e / denom;
                for c in 0..dh {
                    out[i * d_out + k * dh + c] += alpha * hw[j * dh + c];
                }
            }
        }
    }
    out
}

// ── permutations ────────────────────────────────────────────────────────

pub fn random_permutation(n: usize, rng: &mut impl rand::Rng) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        perm.swap(i, j);
    }
    perm
}

/// Row i of the output is row perm[i] of the input.
pub fn permute_rows(vals: &[f64], perm: &[usize], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; vals.len()];
    for (i, &src) in perm.iter().enumerate() {
        out[i * cols..(i + 1) * cols].copy_from_slice(&vals[src * cols..(src + 1) * cols]);
    }
    out
}

/// Conjugation by the permutation: out[i][j] = adj[perm[i]][perm[j]].
pub fn permute_adjacency(adj: &Adjacency, perm: &[usize]) -> Adjacency {
    let n = adj.n;
    let mut matrix = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            matrix[i * n + j] = adj.at(perm[i], perm[j]);
        }
    }
    Adjacency {
        matrix,
        n,
        normalized: adj.normalized,
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
