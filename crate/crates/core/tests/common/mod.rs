#![allow(dead_code)]

use aerecover::{delta_close, sample_dictionary, Dict, Matrix, Rng, Spec, Stream};

/// Cyclic Jacobi eigensolver for a small symmetric matrix. Returns the
/// eigenvalues in decreasing order and the matching eigenvectors as columns.
pub fn jacobi_eigen(sym: &Matrix) -> (Vec<f64>, Matrix) {
    let d = sym.rows();
    let mut a: Vec<Vec<f64>> = (0..d).map(|r| sym.row(r).to_vec()).collect();
    let mut v: Vec<Vec<f64>> = (0..d).map(|r| (0..d).map(|c| f64::from(u8::from(r == c))).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..d).flat_map(|r| (0..d).filter(move |&c| c != r).map(move |c| (r, c))).map(|(r, c)| a[r][c] * a[r][c]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vkp = row[p];
                    let vkq = row[q];
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| a[j][j].partial_cmp(&a[i][i]).unwrap());
    let values = order.iter().map(|&i| a[i][i]).collect();
    let vectors = Matrix::from_fn(d, d, |r, c| v[r][order[c]]);
    (values, vectors)
}

/// Singular values of the `k x k` matrix `Q1^T Q2` are the cosines of the
/// principal angles between two orthonormal bases.
pub fn min_principal_cosine(q1: &Matrix, q2: &Matrix) -> f64 {
    let c = q1.transpose().matmul(q2).unwrap();
    let (vals, _) = jacobi_eigen(&c.transpose().matmul(&c).unwrap());
    vals.last().copied().unwrap().max(0.0).sqrt()
}

pub fn gaussian_dict(spec: &Spec, seed: u64) -> Dict {
    sample_dictionary(spec, &mut Rng::for_stream(seed, Stream::Dictionary)).unwrap()
}

pub fn orthonormal_dict(n: usize, m: usize, seed: u64) -> Dict {
    Dict::orthonormal(n, m, &mut Rng::for_stream(seed, Stream::Dictionary)).unwrap()
}

pub fn close(a: &Matrix, delta: f64, seed: u64) -> Matrix {
    delta_close(a, delta, &mut Rng::for_stream(seed, Stream::Init)).unwrap()
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = Rng::new(seed, 99);
    Matrix::from_fn(rows, cols, |_, _| rng.standard_normal())
}

pub fn col_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
