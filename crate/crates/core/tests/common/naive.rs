//! Scalar-loop reference implementations.

use fedldr::federation::ClientUpdate;
use fedldr::numkit::Tensor;

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            for p in 0..k {
                out[i * m + j] += a.get(i, p) * b.get(p, j);
            }
        }
    }
    out
}

/// `θ[i,c,f] = Σ_k e[i,k]·w[k,c,f]` for `e: N×d`, `w: d×C×F`.
pub fn nomor_theta(e: &Tensor, w: &Tensor) -> Vec<f64> {
    let (n, d) = (e.rows(), e.cols());
    let (c, f) = (w.shape()[1], w.shape()[2]);
    let mut out = vec![0.0; n * c * f];
    for i in 0..n {
        for ci in 0..c {
            for fi in 0..f {
                for k in 0..d {
                    out[(i * c + ci) * f + fi] += e.get(i, k) * w.data()[(k * c + ci) * f + fi];
                }
            }
        }
    }
    out
}

/// `z = node_affine((I + A)·x, θ, b)` with `x: N×(B·C)` and output `N×(B·F)`.
pub fn gcn_layer(x: &Tensor, a: &Tensor, theta: &Tensor, bias: &Tensor) -> Vec<f64> {
    let n = x.rows();
    let (c, f) = (theta.shape()[1], theta.shape()[2]);
    let b = x.cols() / c;
    let mut out = vec![0.0; n * b * f];
    for i in 0..n {
        for bi in 0..b {
            for fi in 0..f {
                let mut acc = bias.get(i, fi);
                for ci in 0..c {
                    let mut h = x.get(i, bi * c + ci);
                    for j in 0..n {
                        h += a.get(i, j) * x.get(j, bi * c + ci);
                    }
                    acc += h * theta.data()[(i * c + ci) * f + fi];
                }
                out[i * b * f + bi * f + fi] = acc;
            }
        }
    }
    out
}

/// Sample-weighted mean of flattened parameters.
pub fn fedavg(ups: &[ClientUpdate]) -> Vec<f64> {
    let total: f64 = ups.iter().map(|u| u.samples as f64).sum();
    let flats: Vec<Vec<f64>> = ups.iter().map(|u| u.params.flatten()).collect();
    (0..flats[0].len())
        .map(|j| {
            let mut acc = 0.0;
            for (u, f) in ups.iter().zip(&flats) {
                acc += u.samples as f64 / total * f[j];
            }
            acc
        })
        .collect()
}

/// Coordinate-wise median via insertion sort.
pub fn fedmedian(ups: &[ClientUpdate]) -> Vec<f64> {
    let flats: Vec<Vec<f64>> = ups.iter().map(|u| u.params.flatten()).collect();
    (0..flats[0].len())
        .map(|j| {
            let mut col: Vec<f64> = flats.iter().map(|f| f[j]).collect();
            for a in 1..col.len() {
                let mut b = a;
                while b > 0 && col[b - 1] > col[b] {
                    col.swap(b - 1, b);
                    b -= 1;
                }
            }
            let m = col.len();
            if m % 2 == 1 {
                col[m / 2]
            } else {
                0.5 * (col[m / 2 - 1] + col[m / 2])
            }
        })
        .collect()
}
