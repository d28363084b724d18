//! The approximate gradient, its Monte Carlo estimator and closed-form
//! expected gradients for the three model families.
//!
//! Batch reductions are bitwise reproducible: samples are grouped into
//! fixed leaves of [`SHARD_SIZE`], leaves into fixed blocks, and partial sums
//! are combined by a pairwise tree whose shape depends only on the batch
//! size, never on the number of worker threads.

use rayon::prelude::*;

use crate::encoder::{code_consistent, AutoencoderParams};
use crate::error::{Error, Result};
use crate::generative::{
    sample_one, shard_generators, Dictionary, Family, LatentCode, ModelSpec, Sample, SupportMoments, SHARD_SIZE,
};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::DenseMatrix;

/// Leaves reduced together before their results are merged across blocks.
const LEAVES_PER_BLOCK: usize = 64;

/// Constant in the remainder allowance `C max(k1^2, k2^2) p_i k / m` for
/// the non-negative oracle: twice the worst excess over five standard
/// errors seen against 10^6-sample batches on calibration instances (see
/// `examples/calibrate.rs`), then frozen.
pub const NONNEG_REMAINDER_C: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientSource {
    MonteCarlo,
    Oracle(Family),
}

/// Column gradients `G` (n x m) and bias gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate<T> {
    pub columns: DenseMatrix<T>,
    /// Absent for oracles that have no closed-form bias gradient.
    pub bias: Option<Vec<T>>,
    /// Batch size; 0 for closed-form results.
    pub n_samples: usize,
    pub source: GradientSource,
    /// Entrywise standard error of the batch mean (batches of two or more).
    pub std_err: Option<DenseMatrix<T>>,
    pub bias_std_err: Option<Vec<T>>,
}

impl<T: Scalar> GradientEstimate<T> {
    pub fn zeros(n: usize, m: usize, source: GradientSource) -> Self {
        Self {
            columns: DenseMatrix::zeros(n, m),
            bias: Some(vec![T::zero(); m]),
            n_samples: 0,
            source,
            std_err: None,
            bias_std_err: None,
        }
    }

    pub fn column(&self, i: usize) -> Vec<T> {
        self.columns.column(i)
    }

    /// Standard error of column `i` as a vector: `sqrt(sum_r se_ri^2)`.
    pub fn column_std_err(&self, i: usize) -> Option<T> {
        self.std_err
            .as_ref()
            .map(|se| (0..se.rows()).map(|r| se.get(r, i) * se.get(r, i)).sum::<T>().sqrt())
    }

    pub fn is_finite(&self) -> bool {
        self.columns.is_finite() && self.bias.as_ref().is_none_or(|b| b.iter().all(|v| v.is_finite()))
    }
}

/// A batch gradient together with the loss and consistency rate measured
/// on the same samples.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub gradient: GradientEstimate<T>,
    pub mean_loss: T,
    /// Fraction of samples whose code is recovered (sign for sparse coding,
    /// support otherwise).
    pub consistency_rate: T,
}

/// Running sums over a set of samples.
#[derive(Debug, Clone)]
struct Accum<T> {
    count: usize,
    g: Vec<T>,
    g2: Vec<T>,
    b: Vec<T>,
    b2: Vec<T>,
    loss: T,
    consistent: usize,
}

impl<T: Scalar> Accum<T> {
    fn new(n: usize, m: usize) -> Self {
        Self {
            count: 0,
            g: vec![T::zero(); n * m],
            g2: vec![T::zero(); n * m],
            b: vec![T::zero(); m],
            b2: vec![T::zero(); m],
            loss: T::zero(),
            consistent: 0,
        }
    }

    fn merge(mut self, other: &Self) -> Self {
        self.count += other.count;
        for (x, &y) in self.g.iter_mut().zip(&other.g) {
            *x = *x + y;
        }
        for (x, &y) in self.g2.iter_mut().zip(&other.g2) {
            *x = *x + y;
        }
        for (x, &y) in self.b.iter_mut().zip(&other.b) {
            *x = *x + y;
        }
        for (x, &y) in self.b2.iter_mut().zip(&other.b2) {
            *x = *x + y;
        }
        self.loss = self.loss + other.loss;
        self.consistent += other.consistent;
        self
    }

    /// Adds one sample; returns the per-sample loss.
    fn add(&mut self, params: &AutoencoderParams<T>, y: &[T], code: Option<(&LatentCode<T>, Family)>) -> Result<()> {
        let w = &params.weights;
        let (n, m) = w.shape();
        if y.len() != n {
            return Err(Error::DimensionMismatch(format!("observation of length {} for n = {n}", y.len())));
        }
        let mut z = w.tr_matvec(y)?;
        for (zi, &bi) in z.iter_mut().zip(&params.bias) {
            *zi = *zi + bi;
        }
        let x: Vec<T> = z.iter().map(|&v| params.activation.apply(v)).collect();
        let active: Vec<usize> = (0..m).filter(|&i| x[i] != T::zero()).collect();
        let mut r = y.to_vec();
        for (row, rr) in r.iter_mut().enumerate() {
            let wr = w.row(row);
            let mut acc = T::zero();
            for &i in &active {
                acc = acc + wr[i] * x[i];
            }
            *rr = *rr - acc;
        }
        self.count += 1;
        self.loss = self.loss + crate::scalar::norm_sq(&r) / T::lit(2.0);
        if let Some((code, family)) = code {
            if code_consistent(family, &x, code) {
                self.consistent += 1;
            }
        }
        for &i in &active {
            let mut wi_r = T::zero();
            for (row, &rr) in r.iter().enumerate() {
                wi_r = wi_r + w.get(row, i) * rr;
            }
            let zi = z[i];
            for row in 0..n {
                let v = -(zi * r[row] + wi_r * y[row]);
                let idx = row * m + i;
                self.g[idx] = self.g[idx] + v;
                self.g2[idx] = self.g2[idx] + v * v;
            }
            self.b[i] = self.b[i] - wi_r;
            self.b2[i] = self.b2[i] + wi_r * wi_r;
        }
        Ok(())
    }

    fn finish(self, n: usize, m: usize) -> BatchStats<T> {
        let cnt = T::from_usize_lossy(self.count);
        let mean: Vec<T> = self.g.iter().map(|&s| s / cnt).collect();
        let bias: Vec<T> = self.b.iter().map(|&s| s / cnt).collect();
        let se = |sum: &[T], sq: &[T]| -> Vec<T> {
            let dof = T::from_usize_lossy(self.count - 1);
            sum.iter()
                .zip(sq)
                .map(|(&s, &q)| {
                    let var = ((q - s * s / cnt) / dof).max(T::zero());
                    (var / cnt).sqrt()
                })
                .collect()
        };
        let (std_err, bias_std_err) = if self.count >= 2 {
            (
                Some(DenseMatrix::from_vec(n, m, se(&self.g, &self.g2)).expect("n*m entries")),
                Some(se(&self.b, &self.b2)),
            )
        } else {
            (None, None)
        };
        BatchStats {
            gradient: GradientEstimate {
                columns: DenseMatrix::from_vec(n, m, mean).expect("n*m entries"),
                bias: Some(bias),
                n_samples: self.count,
                source: GradientSource::MonteCarlo,
                std_err,
                bias_std_err,
            },
            mean_loss: self.loss / cnt,
            consistency_rate: T::from_usize_lossy(self.consistent) / cnt,
        }
    }
}

/// Fixed-shape pairwise reduction: `[p0+p1, p2+p3, ...]` until one remains.
fn tree_reduce<T: Scalar>(mut parts: Vec<Accum<T>>) -> Option<Accum<T>> {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(a.merge(&b)),
                None => next.push(a),
            }
        }
        parts = next;
    }
    parts.pop()
}

/// Reduces `leaves` leaf accumulators, produced by `leaf(index)`, block by block.
fn reduce_leaves<T: Scalar>(
    leaves: usize,
    leaf: impl Fn(usize) -> Result<Accum<T>> + Sync,
) -> Result<Option<Accum<T>>> {
    let mut blocks = Vec::with_capacity(leaves.div_ceil(LEAVES_PER_BLOCK));
    for start in (0..leaves).step_by(LEAVES_PER_BLOCK) {
        let end = (start + LEAVES_PER_BLOCK).min(leaves);
        let parts: Vec<Accum<T>> = (start..end).into_par_iter().map(&leaf).collect::<Result<_>>()?;
        blocks.extend(tree_reduce(parts));
    }
    Ok(tree_reduce(blocks))
}

/// Approximate gradient for one observation. Column `i` is
/// `-1[x_i != 0] ((W_i^T y + b_i)(y - W x) + <W_i, y - W x> y)` and the bias
/// entry is `-1[x_i != 0] <W_i, y - W x>`.
pub fn approx_gradient_sample<T: Scalar>(params: &AutoencoderParams<T>, y: &[T]) -> Result<GradientEstimate<T>> {
    let (n, m) = params.weights.shape();
    let mut acc = Accum::new(n, m);
    acc.add(params, y, None)?;
    Ok(acc.finish(n, m).gradient)
}

/// Mean approximate gradient over `samples`.
pub fn batch_gradient<T: Scalar>(params: &AutoencoderParams<T>, samples: &[Sample<T>]) -> Result<GradientEstimate<T>> {
    batch_statistics(params, samples, None).map(|s| s.gradient)
}

/// Gradient, mean loss and consistency rate in one pass over `samples`.
/// Without a family the consistency rate is reported as 0.
pub fn batch_statistics<T: Scalar>(
    params: &AutoencoderParams<T>,
    samples: &[Sample<T>],
    family: Option<Family>,
) -> Result<BatchStats<T>> {
    if samples.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let (n, m) = params.weights.shape();
    let leaves = samples.len().div_ceil(SHARD_SIZE);
    let total = reduce_leaves(leaves, |l| {
        let mut acc = Accum::new(n, m);
        let end = ((l + 1) * SHARD_SIZE).min(samples.len());
        for s in &samples[l * SHARD_SIZE..end] {
            acc.add(params, &s.y, family.map(|f| (&s.code, f)))?;
        }
        Ok(acc)
    })?
    .ok_or(Error::EmptyBatch)?;
    Ok(total.finish(n, m))
}

/// Streaming Monte Carlo statistics over `count` fresh samples.
///
/// Generates exactly the samples `sample_batch` would draw from the same
/// generator state, but never holds more than one block of them, and gives
/// bitwise the same result as `batch_statistics` on that batch.
pub fn monte_carlo_statistics<T: Scalar>(
    params: &AutoencoderParams<T>,
    dict: &Dictionary<T>,
    spec: &ModelSpec<T>,
    count: usize,
    rng: &mut Rng,
) -> Result<BatchStats<T>> {
    if count == 0 {
        return Err(Error::EmptyBatch);
    }
    spec.validate()?;
    let (n, m) = params.weights.shape();
    if dict.n() != n || dict.m() != m {
        return Err(Error::ShapeMismatch {
            left: (n, m),
            right: (dict.n(), dict.m()),
        });
    }
    let base = rng.split();
    let leaves = count.div_ceil(SHARD_SIZE);
    let total = reduce_leaves(leaves, |l| {
        let (mut codes, mut noise) = shard_generators(&base, l as u64);
        let len = SHARD_SIZE.min(count - l * SHARD_SIZE);
        let mut acc = Accum::new(n, m);
        for _ in 0..len {
            let s = sample_one(dict, spec, &mut codes, &mut noise);
            acc.add(params, &s.y, Some((&s.code, spec.family)))?;
        }
        Ok(acc)
    })?
    .ok_or(Error::EmptyBatch)?;
    Ok(total.finish(n, m))
}

pub fn monte_carlo_gradient<T: Scalar>(
    params: &AutoencoderParams<T>,
    dict: &Dictionary<T>,
    spec: &ModelSpec<T>,
    count: usize,
    rng: &mut Rng,
) -> Result<GradientEstimate<T>> {
    monte_carlo_statistics(params, dict, spec, count, rng).map(|s| s.gradient)
}

fn check_pair<T: Scalar>(w: &DenseMatrix<T>, a: &DenseMatrix<T>) -> Result<()> {
    if w.shape() != a.shape() {
        return Err(Error::ShapeMismatch {
            left: w.shape(),
            right: a.shape(),
        });
    }
    Ok(())
}

fn check_bias<T>(b: &[T], m: usize) -> Result<()> {
    if b.len() != m {
        return Err(Error::DimensionMismatch(format!("bias of length {} for m = {m}", b.len())));
    }
    Ok(())
}

/// Gaussian mixture: `g_i = -p lambda_i A_i + p (lambda_i + b_i)^2 W_i`
/// with `lambda_i = <W_i, A_i>`, `p = 1/m`; bias gradient `p b_i ||W_i||^2`
/// plus `-p (1 - ||W_i||^2) lambda_i`, which is `p b_i` for unit columns.
pub fn expected_gradient_gmm<T: Scalar>(
    w: &DenseMatrix<T>,
    b: &[T],
    a: &DenseMatrix<T>,
) -> Result<GradientEstimate<T>> {
    check_pair(w, a)?;
    let (n, m) = w.shape();
    check_bias(b, m)?;
    let p = T::one() / T::from_usize_lossy(m);
    let mut g = DenseMatrix::zeros(n, m);
    for i in 0..m {
        let wi = w.column(i);
        let ai = a.column(i);
        let lambda = crate::scalar::dot(&wi, &ai);
        let cw = p * (lambda * lambda + T::lit(2.0) * b[i] * lambda + b[i] * b[i]);
        let ca = -p * lambda;
        let col: Vec<T> = wi.iter().zip(&ai).map(|(&x, &y)| cw * x + ca * y).collect();
        g.set_column(i, &col);
    }
    Ok(GradientEstimate {
        columns: g,
        bias: Some(
            (0..m)
                .map(|i| {
                    let wi = w.column(i);
                    let nw = crate::scalar::norm_sq(&wi);
                    let lambda = crate::scalar::dot(&wi, &a.column(i));
                    p * (nw * b[i] - (T::one() - nw) * lambda)
                })
                .collect(),
        ),
        n_samples: 0,
        source: GradientSource::Oracle(Family::Gmm),
        std_err: None,
        bias_std_err: None,
    })
}

/// k-sparse coding with zero bias:
/// `g_i = -p_i l_i A_i + p_i l_i^2 W_i + l_i W_{-i} D W_{-i}^T A_i + (W_i^T W_{-i} D W_{-i}^T A_i) A_i`
/// where `D = diag(p_ij)`. No bias gradient is given.
pub fn expected_gradient_sparse<T: Scalar>(
    w: &DenseMatrix<T>,
    a: &DenseMatrix<T>,
    moments: &SupportMoments<T>,
) -> Result<GradientEstimate<T>> {
    check_pair(w, a)?;
    let (n, m) = w.shape();
    let wt = w.transpose();
    let wta = wt.matmul(a)?; // <W_j, A_l>
    let wtw = w.gram_cols(); // <W_i, W_j>
    let p = moments.single;
    let pij = moments.pair;
    let mut g = DenseMatrix::zeros(n, m);
    for i in 0..m {
        let lambda = wta.get(i, i);
        let mut col: Vec<T> = (0..n)
            .map(|r| -p * lambda * a.get(r, i) + p * lambda * lambda * w.get(r, i))
            .collect();
        let mut scalar_a = T::zero();
        for j in (0..m).filter(|&j| j != i) {
            let c = pij * wta.get(j, i);
            // lambda_i p_ij <W_j, A_i> W_j
            let coef = lambda * c;
            for (r, v) in col.iter_mut().enumerate() {
                *v = *v + coef * w.get(r, j);
            }
            scalar_a = scalar_a + wtw.get(i, j) * c;
        }
        for (r, v) in col.iter_mut().enumerate() {
            *v = *v + scalar_a * a.get(r, i);
        }
        g.set_column(i, &col);
    }
    Ok(GradientEstimate {
        columns: g,
        bias: None,
        n_samples: 0,
        source: GradientSource::Oracle(Family::SparseCoding),
        std_err: None,
        bias_std_err: None,
    })
}

/// Coefficients of the non-negative expansion `g_i = alpha_i W_i - beta_i A_i`.
pub fn nonneg_coefficients<T: Scalar>(
    w: &DenseMatrix<T>,
    b: &[T],
    a: &DenseMatrix<T>,
    spec: &ModelSpec<T>,
    moments: &SupportMoments<T>,
) -> Result<(Vec<T>, Vec<T>)> {
    check_pair(w, a)?;
    let m = w.cols();
    check_bias(b, m)?;
    let wta = w.transpose().matmul(a)?;
    let wtw = w.gram_cols();
    let (k1, k2) = (spec.kappa1, spec.kappa2);
    let k1s = k1 * k1;
    let two = T::lit(2.0);
    let (p, pij, pijl) = (moments.single, moments.pair, moments.triple);
    // row sums of W^T A: sum_l <W_j, A_l>
    let row_sum: Vec<T> = (0..m).map(|j| (0..m).map(|l| wta.get(j, l)).sum()).collect();
    let mut alpha = Vec::with_capacity(m);
    let mut beta = Vec::with_capacity(m);
    for i in 0..m {
        let lambda = wta.get(i, i);
        let bi = b[i];
        let others = (0..m).filter(|&j| j != i);
        let (mut sc, mut sc2, mut sww_u, mut sww_v, mut sw, mut triple_beta) =
            (T::zero(), T::zero(), T::zero(), T::zero(), T::zero(), T::zero());
        for j in others {
            let c = wta.get(i, j); // <W_i, A_j>
            let wij = wtw.get(i, j); // <W_i, W_j>
            let u = wta.get(j, i); // <W_j, A_i>
            let v = wta.get(j, j); // <W_j, A_j>
            sc = sc + c;
            sc2 = sc2 + c * c;
            sww_u = sww_u + wij * u;
            sww_v = sww_v + wij * v;
            sw = sw + wij;
            // sum over l outside {i, j} of <W_j, A_l>
            triple_beta = triple_beta + wij * (row_sum[j] - u - v);
        }
        // ordered pairs j != l, both != i
        let pair_products = sc * sc - sc2;
        alpha.push(
            k2 * p * lambda * lambda
                + k2 * pij * sc2
                + two * k1s * pij * lambda * sc
                + k1s * pijl * pair_products
                + two * k1 * p * bi * lambda
                + two * k1 * pij * bi * sc
                + p * bi * bi,
        );
        beta.push(
            k2 * p * lambda - k2 * pij * sww_u + k1s * pij * sc
                - k1s * pij * sww_v
                - k1s * pijl * triple_beta
                - k1 * pij * bi * sw,
        );
    }
    Ok((alpha, beta))
}

/// Non-negative k-sparse coding: `g_i = alpha_i W_i - beta_i A_i` with every
/// explicit term of the expansion. The remainder `e_i` is not modelled; see
/// [`nonneg_remainder_budget`]. No bias gradient is given.
pub fn expected_gradient_nonneg<T: Scalar>(
    w: &DenseMatrix<T>,
    b: &[T],
    a: &DenseMatrix<T>,
    spec: &ModelSpec<T>,
    moments: &SupportMoments<T>,
) -> Result<GradientEstimate<T>> {
    let (alpha, beta) = nonneg_coefficients(w, b, a, spec, moments)?;
    let (n, m) = w.shape();
    let mut g = DenseMatrix::zeros(n, m);
    for i in 0..m {
        let col: Vec<T> = (0..n).map(|r| alpha[i] * w.get(r, i) - beta[i] * a.get(r, i)).collect();
        g.set_column(i, &col);
    }
    Ok(GradientEstimate {
        columns: g,
        bias: None,
        n_samples: 0,
        source: GradientSource::Oracle(Family::NonNegSparse),
        std_err: None,
        bias_std_err: None,
    })
}

/// Norm allowance for the unmodelled remainder of the non-negative oracle:
/// `C max(k1^2, k2^2) p_i k / m`.
pub fn nonneg_remainder_budget<T: Scalar>(spec: &ModelSpec<T>, moments: &SupportMoments<T>) -> T {
    let k1s = spec.kappa1 * spec.kappa1;
    let k2s = spec.kappa2 * spec.kappa2;
    let km = T::from_usize_lossy(spec.k) / T::from_usize_lossy(spec.m);
    T::lit(NONNEG_REMAINDER_C) * k1s.max(k2s) * moments.single * km
}

/// Closed-form expected gradient for the family of `spec`.
pub fn expected_gradient<T: Scalar>(
    w: &DenseMatrix<T>,
    b: &[T],
    a: &DenseMatrix<T>,
    spec: &ModelSpec<T>,
) -> Result<GradientEstimate<T>> {
    match spec.family {
        Family::Gmm => expected_gradient_gmm(w, b, a),
        Family::SparseCoding => expected_gradient_sparse(w, a, &spec.support_moments()),
        Family::NonNegSparse => expected_gradient_nonneg(w, b, a, spec, &spec.support_moments()),
    }
}
