//! Recovery metrics and the checkers for the auxiliary bounds and
//! correlation inequalities.

use rayon::prelude::*;

use crate::assignment;
use crate::encoder::{encode, code_consistent, AutoencoderParams};
use crate::error::{Error, Result};
use crate::generative::{sample_one, shard_generators, Dictionary, Family, ModelSpec, Sample, SHARD_SIZE};
use crate::gradient::{GradientEstimate, GradientSource};
use crate::rng::Rng;
use crate::scalar::{dist_sq, dot, Scalar};
use crate::tensor::{spectral_norm, DenseMatrix};

/// Tolerance on unit column norms accepted by [`incoherence`].
pub const NORMALIZED_TOL: f64 = 1e-6;

/// Slack for the deterministic bounds, which hold with equality in some
/// cases and so are only exact up to rounding.
pub const CLAIM_SLACK: f64 = 1e-12;

/// Failure fraction allowed for the noise bound.
pub const NOISE_FAILURE_RATE: f64 = 0.01;

/// Margin tolerance for the mixture correlation inequality.
pub const GMM_MARGIN_TOL: f64 = 1e-10;

/// Constant in the sparse-coding residual `C p_i (k ||A||^2 / m)^2`, which is
/// `C p_i k^2 / n^2` for dictionaries with `||A||^2 = m / n`: twice the worst
/// calibration instance (`examples/calibrate.rs`), then frozen.
pub const SPARSE_CORRELATION_C: f64 = 1.5e-3;

/// Constant in the non-negative residual `C max(1, k2/k1^2) k^2 / (p_i m)`,
/// fitted the same way.
pub const NONNEG_CORRELATION_C: f64 = 1.2e-5;

/// `sqrt(n) max_{i != j} |<A_i, A_j>|`; columns must be unit norm to within
/// [`NORMALIZED_TOL`].
pub fn incoherence<T: Scalar>(a: &DenseMatrix<T>) -> Result<T> {
    incoherence_with_tol(a, T::lit(NORMALIZED_TOL))
}

pub fn incoherence_with_tol<T: Scalar>(a: &DenseMatrix<T>, tol: T) -> Result<T> {
    let m = a.cols();
    for c in 0..m {
        let dev = (a.column_norm(c) - T::one()).abs();
        if !(dev <= tol) {
            return Err(Error::NotNormalized {
                index: c,
                deviation: dev.as_f64(),
            });
        }
    }
    let g = a.gram_cols();
    let mut worst = T::zero();
    for i in 0..m {
        for j in (i + 1)..m {
            worst = worst.max(g.get(i, j).abs());
        }
    }
    Ok(T::from_usize_lossy(a.rows()).sqrt() * worst)
}

/// Optimal column correspondence: `sign[i] * W[:, permutation[i]]` is
/// matched to `A[:, i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult<T> {
    pub permutation: Vec<usize>,
    pub signs: Vec<i8>,
    pub per_column_distance: Vec<T>,
    pub frobenius_sq: T,
}

impl<T: Scalar> MatchResult<T> {
    /// `pi(W)`: the columns of `w` reordered and sign-corrected.
    pub fn apply(&self, w: &DenseMatrix<T>) -> DenseMatrix<T> {
        DenseMatrix::from_fn(w.rows(), w.cols(), |r, i| {
            let v = w.get(r, self.permutation[i]);
            if self.signs[i] < 0 {
                -v
            } else {
                v
            }
        })
    }

    pub fn identity(w: &DenseMatrix<T>, a: &DenseMatrix<T>) -> Result<Self> {
        let m = a.cols();
        Self::evaluate(w, a, (0..m).collect(), vec![1; m])
    }

    fn evaluate(w: &DenseMatrix<T>, a: &DenseMatrix<T>, permutation: Vec<usize>, signs: Vec<i8>) -> Result<Self> {
        check_shapes(w, a)?;
        let per_column_distance: Vec<T> = (0..a.cols())
            .map(|i| {
                let s = if signs[i] < 0 { -T::one() } else { T::one() };
                let wc: Vec<T> = w.column(permutation[i]).into_iter().map(|v| s * v).collect();
                dist_sq(&wc, &a.column(i)).sqrt()
            })
            .collect();
        let frobenius_sq = per_column_distance.iter().map(|&d| d * d).sum();
        Ok(Self {
            permutation,
            signs,
            per_column_distance,
            frobenius_sq,
        })
    }
}

fn check_shapes<T: Scalar>(w: &DenseMatrix<T>, a: &DenseMatrix<T>) -> Result<()> {
    if w.shape() != a.shape() {
        return Err(Error::ShapeMismatch {
            left: w.shape(),
            right: a.shape(),
        });
    }
    Ok(())
}

fn unit_columns<T: Scalar>(m: &DenseMatrix<T>) -> bool {
    (0..m.cols()).all(|c| (m.column_norm(c) - T::one()).abs() <= T::lit(1e-10))
}

/// Exact minimizer of `sum_i ||s_i W_pi(i) - A_i||^2` over permutations
/// (and signs when `allow_sign_flip`).
pub fn hungarian_match<T: Scalar>(w: &DenseMatrix<T>, a: &DenseMatrix<T>, allow_sign_flip: bool) -> Result<MatchResult<T>> {
    check_shapes(w, a)?;
    let m = a.cols();
    let two = T::lit(2.0);
    // cost(i, j): A_i against W_j, best sign folded in
    let mut cost = DenseMatrix::zeros(m, m);
    let mut flip = vec![false; m * m];
    if unit_columns(w) && unit_columns(a) {
        let ip = a.transpose().matmul(w)?;
        for i in 0..m {
            for j in 0..m {
                let c = ip.get(i, j);
                let neg = allow_sign_flip && c < T::zero();
                flip[i * m + j] = neg;
                // ||s W_j - A_i||^2 = 2 - 2 s <W_j, A_i> for unit columns
                cost.set(i, j, two - two * if neg { -c } else { c });
            }
        }
    } else {
        let a_cols = a.columns();
        let w_cols = w.columns();
        for i in 0..m {
            for j in 0..m {
                let plus = dist_sq(&w_cols[j], &a_cols[i]);
                let minus: T = w_cols[j].iter().zip(&a_cols[i]).map(|(&x, &y)| (x + y) * (x + y)).sum();
                let neg = allow_sign_flip && minus < plus;
                flip[i * m + j] = neg;
                cost.set(i, j, if neg { minus } else { plus });
            }
        }
    }
    let permutation = assignment::solve(&cost);
    let signs = permutation
        .iter()
        .enumerate()
        .map(|(i, &j)| if flip[i * m + j] { -1 } else { 1 })
        .collect();
    MatchResult::evaluate(w, a, permutation, signs)
}

/// `delta = max_i ||pi(W)_i - A_i||` under the optimal matching.
pub fn closeness<T: Scalar>(w: &DenseMatrix<T>, a: &DenseMatrix<T>, allow_sign_flip: bool) -> Result<(T, MatchResult<T>)> {
    let mr = hungarian_match(w, a, allow_sign_flip)?;
    let delta = mr.per_column_distance.iter().copied().fold(T::zero(), T::max);
    Ok((delta, mr))
}

/// `(delta, xi)` with `xi = ||pi(W) - A|| / ||A||` under the closeness matching.
pub fn nearness<T: Scalar>(w: &DenseMatrix<T>, a: &DenseMatrix<T>, allow_sign_flip: bool) -> Result<(T, T)> {
    let (delta, mr) = closeness(w, a, allow_sign_flip)?;
    let diff = mr.apply(w).sub(a)?;
    let tol = T::lit(1e-10);
    let na = spectral_norm(a, tol);
    let xi = if na > T::zero() { spectral_norm(&diff, tol) / na } else { T::zero() };
    Ok((delta, xi))
}

/// Fraction of `count` fresh samples whose code the encoder recovers
/// (signs for sparse coding, supports otherwise).
pub fn consistency_rate<T: Scalar>(
    dict: &Dictionary<T>,
    spec: &ModelSpec<T>,
    params: &AutoencoderParams<T>,
    count: usize,
    rng: &mut Rng,
) -> Result<T> {
    if count == 0 {
        return Err(Error::EmptyBatch);
    }
    spec.validate()?;
    if params.n() != dict.n() || params.m() != dict.m() {
        return Err(Error::ShapeMismatch {
            left: params.weights.shape(),
            right: (dict.n(), dict.m()),
        });
    }
    let base = rng.split();
    let hits: usize = (0..count.div_ceil(SHARD_SIZE))
        .into_par_iter()
        .map(|l| {
            let (mut codes, mut noise) = shard_generators(&base, l as u64);
            let len = SHARD_SIZE.min(count - l * SHARD_SIZE);
            let mut hits = 0usize;
            for _ in 0..len {
                let s = sample_one(dict, spec, &mut codes, &mut noise);
                let enc = encode(params, &s.y)?;
                hits += usize::from(code_consistent(spec.family, &enc.x, &s.code));
            }
            Ok(hits)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum();
    Ok(T::from_usize_lossy(hits) / T::from_usize_lossy(count))
}

/// Outcome of checking one inequality on many instances.
#[derive(Debug, Clone, PartialEq)]
pub struct ClaimReport {
    pub claim_id: String,
    pub instances: usize,
    pub violations: usize,
    /// Smallest `rhs - lhs` seen; negative means a violation.
    pub worst_margin: f64,
    /// Fraction of violations tolerated (0 for deterministic bounds).
    pub allowed_failure_rate: f64,
}

impl ClaimReport {
    fn new(claim_id: &str, allowed_failure_rate: f64) -> Self {
        Self {
            claim_id: claim_id.to_string(),
            instances: 0,
            violations: 0,
            worst_margin: f64::INFINITY,
            allowed_failure_rate,
        }
    }

    fn record(&mut self, margin: f64, slack: f64) {
        self.instances += 1;
        if margin < -slack {
            self.violations += 1;
        }
        self.worst_margin = self.worst_margin.min(margin);
    }

    pub fn failure_rate(&self) -> f64 {
        if self.instances == 0 {
            0.0
        } else {
            self.violations as f64 / self.instances as f64
        }
    }

    pub fn holds(&self) -> bool {
        self.failure_rate() <= self.allowed_failure_rate
    }

    /// Merges reports for the same claim.
    pub fn absorb(&mut self, other: &ClaimReport) {
        self.instances += other.instances;
        self.violations += other.violations;
        self.worst_margin = self.worst_margin.min(other.worst_margin);
    }
}

/// Checks, for `W` column-wise close to `A` (identity correspondence):
///
/// * `claim1_i`: `<W_i, A_i> >= 1 - delta^2 / 2`
/// * `claim1_ii`: `|<W_i, A_j>| <= mu / sqrt(n) + delta` for `j != i`
/// * `claim1_iii`: `sum_{j in S \ i} <W_i, A_j>^2 <= 2 mu^2 k / n + 2 ||A||^2 delta^2`
///   for every sample support `S` and every `i`
/// * `claim2`: `max_i |<W_i, eta>| <= sigma ln n` per sample, allowed to
///   fail on [`NOISE_FAILURE_RATE`] of samples
///
/// `delta` is `max_i ||W_i - A_i||` and `mu` the incoherence of `A`.
pub fn verify_claim_bounds<T: Scalar>(
    w: &DenseMatrix<T>,
    a: &DenseMatrix<T>,
    samples: &[Sample<T>],
    spec: &ModelSpec<T>,
) -> Result<Vec<ClaimReport>> {
    check_shapes(w, a)?;
    let (n, m) = a.shape();
    let mu = incoherence(a)?.as_f64();
    let nf = n as f64;
    let mr = MatchResult::identity(w, a)?;
    let delta = mr.per_column_distance.iter().copied().fold(T::zero(), T::max).as_f64();
    let ip = w.transpose().matmul(a)?; // <W_i, A_j>

    let mut c1 = ClaimReport::new("claim1_i", 0.0);
    let mut c2 = ClaimReport::new("claim1_ii", 0.0);
    let mut c3 = ClaimReport::new("claim1_iii", 0.0);
    let mut noise = ClaimReport::new("claim2", NOISE_FAILURE_RATE);
    for i in 0..m {
        c1.record(ip.get(i, i).as_f64() - (1.0 - delta * delta / 2.0), CLAIM_SLACK);
        for j in (0..m).filter(|&j| j != i) {
            c2.record(mu / nf.sqrt() + delta - ip.get(i, j).as_f64().abs(), CLAIM_SLACK);
        }
    }
    let a_norm = spectral_norm(a, T::lit(1e-12)).as_f64();
    let bound3 = 2.0 * mu * mu * spec.k as f64 / nf + 2.0 * a_norm * a_norm * delta * delta;
    let noise_bound = spec.sigma_eta.as_f64() * nf.ln();
    let w_cols = w.columns();
    for s in samples {
        if s.eta.len() != n {
            return Err(Error::DimensionMismatch("sample noise length differs from n".into()));
        }
        for i in 0..m {
            let sum: f64 = s
                .code
                .support
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| ip.get(i, j).as_f64().powi(2))
                .sum();
            c3.record(bound3 - sum, CLAIM_SLACK);
        }
        let worst = w_cols.iter().map(|wi| dot(wi, &s.eta).as_f64().abs()).fold(0.0, f64::max);
        noise.record(noise_bound - worst, 0.0);
    }
    Ok(vec![c1, c2, c3, noise])
}

/// Per-column correlation margins and the residual budget each may use.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMargins<T> {
    /// `2 <g_i, W_i - A_i>` minus the main terms of the right-hand side.
    pub margins: Vec<T>,
    /// Allowed shortfall for each column.
    pub budgets: Vec<T>,
}

impl<T: Scalar> CorrelationMargins<T> {
    pub fn holds(&self) -> bool {
        self.margins.iter().zip(&self.budgets).all(|(&m, &b)| m >= -b)
    }

    /// Smallest `margin + budget`.
    pub fn worst_slack(&self) -> T {
        self.margins
            .iter()
            .zip(&self.budgets)
            .map(|(&m, &b)| m + b)
            .fold(T::infinity(), T::min)
    }
}

/// Correlation inequality margins for an oracle gradient `g` at `W`:
///
/// * mixture: `2<g_i, d_i> - p (l_i - 2 delta^2) ||d_i||^2 - ||g_i||^2 / (p l_i)`
/// * sparse: `2<g_i, d_i> - p l_i (1 - delta^2 / 2) ||d_i||^2 - ||g_i||^2 / (p l_i)`, budget
///   `C p (k ||A||^2 / m)^2`; the residual comes from `||W||^2 = O(||A||^2)`,
///   so the spectral norm enters instead of assuming `||A||^2 = m / n`
/// * non-negative: `2<g_i, d_i> - k2 p (l_i - 2 delta^2) ||d_i||^2 - ||g_i||^2 / (k2 p l_i)`
///
/// with `d_i = W_i - A_i`, `l_i = <W_i, A_i>`, `delta = max_i ||d_i||`.
pub fn correlation_margins<T: Scalar>(
    g: &GradientEstimate<T>,
    w: &DenseMatrix<T>,
    a: &DenseMatrix<T>,
    spec: &ModelSpec<T>,
) -> Result<CorrelationMargins<T>> {
    let expected = GradientSource::Oracle(spec.family);
    if g.source != expected {
        let found = match g.source {
            GradientSource::MonteCarlo => "monte-carlo".to_string(),
            GradientSource::Oracle(f) => f.name().to_string(),
        };
        return Err(Error::FamilyMismatch {
            expected: spec.family.name().to_string(),
            found,
        });
    }
    check_shapes(w, a)?;
    check_shapes(&g.columns, a)?;
    let m = a.cols();
    let moments = spec.support_moments();
    let p = moments.single;
    let two = T::lit(2.0);
    let d: Vec<Vec<T>> = (0..m)
        .map(|i| w.column(i).iter().zip(a.column(i)).map(|(&x, y)| x - y).collect())
        .collect();
    let delta = d.iter().map(|v| crate::scalar::norm(v)).fold(T::zero(), T::max);
    let k = T::from_usize_lossy(spec.k);
    let mf = T::from_usize_lossy(m);
    let spread = match spec.family {
        Family::SparseCoding => {
            let na = spectral_norm(a, T::lit(1e-12));
            k * na * na / mf
        }
        _ => T::zero(),
    };
    let mut margins = Vec::with_capacity(m);
    let mut budgets = Vec::with_capacity(m);
    for i in 0..m {
        let gi = g.column(i);
        let lambda = dot(&w.column(i), &a.column(i));
        let lhs = two * dot(&gi, &d[i]);
        let dn = crate::scalar::norm_sq(&d[i]);
        let gn = crate::scalar::norm_sq(&gi);
        let (rhs, budget) = match spec.family {
            Family::Gmm => (
                p * (lambda - two * delta * delta) * dn + gn / (p * lambda),
                T::lit(GMM_MARGIN_TOL),
            ),
            Family::SparseCoding => (
                p * lambda * (T::one() - delta * delta / two) * dn + gn / (p * lambda),
                T::lit(SPARSE_CORRELATION_C) * p * spread * spread,
            ),
            Family::NonNegSparse => {
                let k2 = spec.kappa2;
                let ratio = (k2 / (spec.kappa1 * spec.kappa1)).max(T::one());
                (
                    k2 * p * (lambda - two * delta * delta) * dn + gn / (k2 * p * lambda),
                    T::lit(NONNEG_CORRELATION_C) * ratio * k * k / (p * mf),
                )
            }
        };
        margins.push(lhs - rhs);
        budgets.push(budget);
    }
    Ok(CorrelationMargins { margins, budgets })
}
