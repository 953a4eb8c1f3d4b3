//! Independent reference implementations used as test oracles.

#![allow(dead_code)]

use mlpk::network::{zoo, NetworkSpec, WeightSet};
use mlpk::prune::{Reason, SelectionThresholds};
use mlpk::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// Naive direct convolution in f64 over NCHW data.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_ref(
    x: &[f64],
    [n, ci, h, w]: [usize; 4],
    wt: &[f64],
    [co, _, k, _]: [usize; 4],
    b: &[f64],
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; n * co * ho * wo];
    for s in 0..n {
        for o in 0..co {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b[o];
                    for c in 0..ci {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xi = ((s * ci + c) * h + iy as usize) * w + ix as usize;
                                let wi = ((o * ci + c) * k + ky) * k + kx;
                                acc += x[xi] * wt[wi];
                            }
                        }
                    }
                    out[((s * co + o) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    out
}

pub fn fc_ref(x: &[f64], n: usize, d_in: usize, wt: &[f64], d_out: usize, b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n * d_out];
    for s in 0..n {
        for o in 0..d_out {
            out[s * d_out + o] = b[o]
                + (0..d_in)
                    .map(|i| wt[o * d_in + i] * x[s * d_in + i])
                    .sum::<f64>();
        }
    }
    out
}

pub fn relu_ref(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

pub fn maxpool_ref(x: &[f64], [n, c, h, w]: [usize; 4]) -> Vec<f64> {
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut m = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        m = m.max(x[plane * h * w + (2 * oy + dy) * w + 2 * ox + dx]);
                    }
                }
                out.push(m);
            }
        }
    }
    out
}

/// Mean cross-entropy of softmax over rows.
pub fn xent_ref(logits: &[f64], classes: usize, labels: &[usize]) -> f64 {
    let n = labels.len();
    let mut total = 0.0;
    for (row, &y) in logits.chunks(classes).zip(labels) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
        total += z.ln() + m - row[y];
    }
    total / n as f64
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn numeric_grad(x: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest elementwise `|a - n| / max(|a|, |n|, floor)`.
pub fn max_rel_err(analytic: &[f32], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| {
            let a = a as f64;
            (a - n).abs() / a.abs().max(n.abs()).max(floor)
        })
        .fold(0.0, f64::max)
}

/// Zero-row fraction of a `[c, k, k]` slice by explicit row enumeration.
pub fn sparsity_oracle(slice: &[f32], c: usize, k: usize) -> f64 {
    if c * k == 0 {
        return 1.0;
    }
    let mut zero_rows = 0usize;
    for ch in 0..c {
        for r in 0..k {
            let mut all_zero = true;
            for x in 0..k {
                if slice[(ch * k + r) * k + x] != 0.0 {
                    all_zero = false;
                }
            }
            if all_zero {
                zero_rows += 1;
            }
        }
    }
    zero_rows as f64 / (c * k) as f64
}

/// One conv weight as nested `[out][in][k*k]` vectors.
pub type Kernel = Vec<Vec<Vec<f32>>>;

pub fn nest(t: &Tensor) -> Kernel {
    let s = t.shape();
    let kk = s[2] * s[3];
    (0..s[0])
        .map(|o| {
            (0..s[1])
                .map(|i| t.data()[(o * s[1] + i) * kk..(o * s[1] + i + 1) * kk].to_vec())
                .collect()
        })
        .collect()
}

fn nested_sparsity(channels: &[&Vec<f32>], k: usize) -> f64 {
    let flat: Vec<f32> = channels.iter().flat_map(|c| c.iter().copied()).collect();
    sparsity_oracle(&flat, channels.len(), k)
}

/// `(index, reason, splevel_f, splevel_g)` of one selected filter.
pub type Pick = (usize, Reason, f64, Option<f64>);

/// Straight-line selection over a chain of conv layers where layer `l + 1`
/// (if any) is the successor of layer `l`. Progressive, no keep-minimum.
pub fn select_oracle(
    mut kernels: Vec<Kernel>,
    k: usize,
    th: &SelectionThresholds,
) -> Vec<Vec<Pick>> {
    let mut all = Vec::new();
    for l in 0..kernels.len() {
        let mut chosen = Vec::new();
        for i in 0..kernels[l].len() {
            let f: Vec<&Vec<f32>> = kernels[l][i].iter().collect();
            let sf = nested_sparsity(&f, k);
            let sg = if l + 1 < kernels.len() {
                let g: Vec<&Vec<f32>> = kernels[l + 1].iter().map(|filter| &filter[i]).collect();
                Some(nested_sparsity(&g, k))
            } else {
                None
            };
            if sf >= th.s_f {
                chosen.push((i, Reason::Cond1, sf, sg));
            } else if sf >= th.s_f_prime && sg.is_some() && sg.unwrap() >= th.s_g {
                chosen.push((i, Reason::Cond2, sf, sg));
            }
        }
        for &(i, ..) in chosen.iter().rev() {
            kernels[l].remove(i);
            if l + 1 < kernels.len() {
                for filter in kernels[l + 1].iter_mut() {
                    filter.remove(i);
                }
            }
        }
        all.push(chosen);
    }
    all
}

/// A small instance of the desk network for fast structural tests.
pub fn small_desk(width: usize) -> NetworkSpec {
    zoo::desk_net_with([3, 8, 8], 4, [width; 8], [2 * width, width]).unwrap()
}

pub fn random_inputs(rng: &mut ChaCha8Rng, spec: &NetworkSpec, n: usize) -> Tensor {
    let [c, h, w] = spec.input_shape;
    Tensor::new(vec![n, c, h, w], uniform(rng, n * c * h * w, -1.0, 1.0)).unwrap()
}

/// Weights with nonzero biases, so that dropped units would be noticed.
pub fn random_weights(spec: &NetworkSpec, seed: u64) -> WeightSet {
    let mut w = WeightSet::init(spec, seed).unwrap();
    let mut r = rng(seed ^ 0x5eed);
    for p in w.layers.values_mut() {
        for b in p.bias.data_mut() {
            *b = r.random_range(-0.1..0.1);
        }
    }
    w
}

pub fn max_abs_diff(a: &[f32], b: &[f32]) -> f32 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f32::max)
}
