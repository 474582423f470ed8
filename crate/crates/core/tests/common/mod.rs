//! Independent reference implementations shared by the integration tests.
//! Nothing here calls into the code under test except to build inputs.
#![allow(dead_code, clippy::needless_range_loop, clippy::too_many_arguments)]

use dsmap::model::{ImageBatch, ModelConfig};
use dsmap::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(1e-300)
}

pub fn uniform_vec(r: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(lo..hi)).collect()
}

pub fn random_images(seed: u64, shape: [usize; 4]) -> ImageBatch {
    let mut r = rng(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| r.random_range(-1.0f32..=1.0)).collect();
    ImageBatch::new(Tensor::new(shape.to_vec(), data).unwrap()).unwrap()
}

/// A model small enough for per-test training at 16 px.
pub fn tiny_config(seed: u64) -> ModelConfig {
    ModelConfig {
        image_size: 16,
        n_downsample: 2,
        base_channels: 4,
        n_res_shared: 1,
        n_res_mapping: 1,
        style_dim: 8,
        share_residual_projector: true,
        n_gen_res: 1,
        disc_layers: 2,
        use_mapping: true,
        seed,
    }
}

// ---- losses -----------------------------------------------------------------

pub fn l1_oracle(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]).abs();
    }
    s / a.len() as f64
}

pub fn lsgan_d_oracle(real: &[f64], fake: &[f64]) -> f64 {
    let mut r = 0.0;
    for v in real {
        r += (v - 1.0) * (v - 1.0);
    }
    let mut f = 0.0;
    for v in fake {
        f += v * v;
    }
    0.5 * r / real.len() as f64 + 0.5 * f / fake.len() as f64
}

pub fn lsgan_g_oracle(fake: &[f64]) -> f64 {
    let mut f = 0.0;
    for v in fake {
        f += (v - 1.0) * (v - 1.0);
    }
    0.5 * f / fake.len() as f64
}

/// Components in log order (`cc_a, cc_b, x_a, x_b, dsc_a, dsc_b, dic_a,
/// dic_b, s_a, s_b, g_adv_a, g_adv_b, d_adv_a, d_adv_b`), weights in the
/// order `cc, x, dsc, dic, s, adv`.
pub fn totals_oracle(c: &[f64; 14], w: &[f64; 6]) -> (f64, f64) {
    let mut g = 0.0;
    for k in 0..6 {
        g += w[k] * c[2 * k] + w[k] * c[2 * k + 1];
    }
    (g, w[5] * c[12] + w[5] * c[13])
}

// ---- statistics ---------------------------------------------------------------

/// Mean and unbiased covariance by the two-pass textbook formula.
pub fn two_pass_stats(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = rows.len();
    let d = rows[0].len();
    let mut mean = vec![0.0; d];
    for r in rows {
        for j in 0..d {
            mean[j] += r[j];
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = vec![vec![0.0; d]; d];
    for r in rows {
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    for row in &mut cov {
        for v in row.iter_mut() {
            *v /= (n - 1) as f64;
        }
    }
    (mean, cov)
}

pub type Mat = Vec<Vec<f64>>;

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let n = a.len();
    let m = b[0].len();
    let k = b.len();
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn transpose(a: &Mat) -> Mat {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix: `(values, V)`
/// with eigenvectors in the columns of `V`.
pub fn jacobi_eigen(m: &Mat) -> (Vec<f64>, Mat) {
    let n = m.len();
    let mut a = m.clone();
    let mut v: Mat = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k][p], v[k][q]);
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), v)
}

pub fn sqrt_psd_oracle(m: &Mat) -> Mat {
    let (vals, v) = jacobi_eigen(m);
    let n = m.len();
    let d: Mat = (0..n)
        .map(|i| (0..n).map(|j| if i == j { vals[i].max(0.0).sqrt() } else { 0.0 }).collect())
        .collect();
    matmul(&matmul(&v, &d), &transpose(&v))
}

pub fn frechet_oracle(mu1: &[f64], s1: &Mat, mu2: &[f64], s2: &Mat) -> f64 {
    let n = mu1.len();
    let mean: f64 = (0..n).map(|i| (mu1[i] - mu2[i]).powi(2)).sum();
    let r = sqrt_psd_oracle(s1);
    let inner = matmul(&matmul(&r, s2), &r);
    let inner: Mat = (0..n)
        .map(|i| (0..n).map(|j| 0.5 * (inner[i][j] + inner[j][i])).collect())
        .collect();
    let (vals, _) = jacobi_eigen(&inner);
    let tr_sqrt: f64 = vals.iter().map(|l| l.max(0.0).sqrt()).sum();
    let tr = |m: &Mat| (0..n).map(|i| m[i][i]).sum::<f64>();
    (mean + tr(s1) + tr(s2) - 2.0 * tr_sqrt).max(0.0)
}

/// `A A^T / d + 0.1 I` for a random `d x d` matrix `A`.
pub fn random_psd(r: &mut ChaCha8Rng, d: usize) -> Mat {
    let a: Mat = (0..d).map(|_| uniform_vec(r, d, -1.0, 1.0)).collect();
    let mut m = matmul(&a, &transpose(&a));
    for (i, row) in m.iter_mut().enumerate() {
        for v in row.iter_mut() {
            *v /= d as f64;
        }
        row[i] += 0.1;
    }
    m
}

// ---- convolution --------------------------------------------------------------

/// Direct convolution of one `C x H x W` image (zero padding).
pub fn conv2d_oracle(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    bias: &[f64],
    k: usize,
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let cout = bias.len();
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; cout * ho * wo];
    for o in 0..cout {
        for i in 0..ho {
            for j in 0..wo {
                let mut s = bias[o];
                for ci in 0..c {
                    for ki in 0..k {
                        for kj in 0..k {
                            let y = (i * stride + ki) as isize - pad as isize;
                            let xx = (j * stride + kj) as isize - pad as isize;
                            if y < 0 || xx < 0 || y >= h as isize || xx >= w as isize {
                                continue;
                            }
                            let wv = weight[((o * c + ci) * k + ki) * k + kj];
                            s += wv * x[(ci * h + y as usize) * w + xx as usize];
                        }
                    }
                }
                out[(o * ho + i) * wo + j] = s;
            }
        }
    }
    (out, ho, wo)
}
