//! The generative bilinear model `y = A x* + eta` and its three families.

use std::fmt;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::{axpy, Scalar};
use crate::tensor::{gaussian_matrix, normalize_columns, random_orthonormal, DenseMatrix};

/// Tolerance on unit column norms for a ground-truth dictionary.
pub const UNIT_NORM_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    /// Mixture of spherical Gaussians: 1-sparse codes with value 1.
    Gmm,
    /// k-sparse codes with zero-mean, unit-variance nonzeros.
    SparseCoding,
    /// k-sparse codes with nonzeros in a positive interval.
    NonNegSparse,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Gmm => "gmm",
            Family::SparseCoding => "sparse",
            Family::NonNegSparse => "nonneg",
        }
    }

    /// Whether recovery is only defined up to column sign flips.
    pub fn allows_sign_flip(self) -> bool {
        matches!(self, Family::SparseCoding)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gmm" => Ok(Family::Gmm),
            "sparse" => Ok(Family::SparseCoding),
            "nonneg" => Ok(Family::NonNegSparse),
            other => Err(Error::InvalidSpec(format!("unknown family `{other}`"))),
        }
    }
}

/// Law of the nonzero entries for the sparse-coding family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SparseLaw<T> {
    /// Uniform random signs, magnitude 1.
    Rademacher,
    /// Random sign times `Uniform[low, high]`, with `high` chosen so the
    /// second moment is exactly 1.
    SignUniform { low: T },
}

impl<T: Scalar> SparseLaw<T> {
    /// Upper magnitude bound of the law.
    pub fn upper(self) -> T {
        match self {
            SparseLaw::Rademacher => T::one(),
            SparseLaw::SignUniform { low } => sign_uniform_upper(low),
        }
    }
}

/// Upper end `b` such that `E[U^2] = (a^2 + ab + b^2)/3 = 1` for `U ~ Uniform[a, b]`.
pub fn sign_uniform_upper<T: Scalar>(low: T) -> T {
    let three = T::lit(3.0);
    let disc = T::lit(12.0) - three * low * low;
    (disc.sqrt() - low) / T::lit(2.0)
}

/// Support-membership probabilities of the uniform size-k subset law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupportMoments<T> {
    /// `P[i in S]`
    pub single: T,
    /// `P[i, j in S]` for `i != j`
    pub pair: T,
    /// `P[i, j, l in S]` for distinct indices
    pub triple: T,
}

impl<T: Scalar> SupportMoments<T> {
    pub fn uniform(k: usize, m: usize) -> Self {
        let kf = T::from_usize_lossy(k);
        let mf = T::from_usize_lossy(m);
        let one = T::one();
        let two = T::lit(2.0);
        let single = kf / mf;
        let pair = if m > 1 {
            single * (kf - one) / (mf - one)
        } else {
            T::zero()
        };
        let triple = if m > 2 {
            pair * (kf - two) / (mf - two)
        } else {
            T::zero()
        };
        Self {
            single,
            pair: pair.max(T::zero()),
            triple: triple.max(T::zero()),
        }
    }

    pub fn scaled_pairs(self, c: T) -> Self {
        Self {
            pair: self.pair * c,
            ..self
        }
    }
}

/// Parameters of one generative model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelSpec<T> {
    pub family: Family,
    pub n: usize,
    pub m: usize,
    pub k: usize,
    /// `E[x_i | i in S]`
    pub kappa1: T,
    /// `E[x_i^2 | i in S]`
    pub kappa2: T,
    /// Lower bound on nonzero magnitudes.
    pub a1: T,
    /// Upper bound on nonzero magnitudes (`inf` allowed for sparse coding).
    pub a2: T,
    pub sigma_eta: T,
    pub sparse_law: SparseLaw<T>,
}

impl<T: Scalar> ModelSpec<T> {
    pub fn gmm(n: usize, m: usize, sigma_eta: T) -> Self {
        Self {
            family: Family::Gmm,
            n,
            m,
            k: 1,
            kappa1: T::one(),
            kappa2: T::one(),
            a1: T::one(),
            a2: T::one(),
            sigma_eta,
            sparse_law: SparseLaw::Rademacher,
        }
    }

    /// Sparse coding with Rademacher nonzeros.
    pub fn sparse_coding(n: usize, m: usize, k: usize, sigma_eta: T) -> Self {
        Self {
            family: Family::SparseCoding,
            n,
            m,
            k,
            kappa1: T::zero(),
            kappa2: T::one(),
            a1: T::one(),
            a2: T::one(),
            sigma_eta,
            sparse_law: SparseLaw::Rademacher,
        }
    }

    /// Sparse coding with `sign * Uniform[low, b]` nonzeros, `E[x^2] = 1`.
    pub fn sparse_coding_sign_uniform(n: usize, m: usize, k: usize, low: T, sigma_eta: T) -> Self {
        let law = SparseLaw::SignUniform { low };
        Self {
            a1: low,
            a2: law.upper(),
            sparse_law: law,
            ..Self::sparse_coding(n, m, k, sigma_eta)
        }
    }

    /// Non-negative sparse coding with `Uniform[a1, a2]` nonzeros.
    pub fn nonneg(n: usize, m: usize, k: usize, a1: T, a2: T, sigma_eta: T) -> Self {
        let three = T::lit(3.0);
        Self {
            family: Family::NonNegSparse,
            n,
            m,
            k,
            kappa1: (a1 + a2) / T::lit(2.0),
            kappa2: (a1 * a1 + a1 * a2 + a2 * a2) / three,
            a1,
            a2,
            sigma_eta,
            sparse_law: SparseLaw::Rademacher,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.n == 0 || self.m == 0 {
            return bad(format!("dimensions must be positive (n={}, m={})", self.n, self.m));
        }
        if self.k < 1 || self.k > self.m {
            return bad(format!("need 1 <= k <= m, got k={} m={}", self.k, self.m));
        }
        if !(self.sigma_eta >= T::zero()) || !self.sigma_eta.is_finite() {
            return bad(format!("sigma_eta must be finite and >= 0, got {}", self.sigma_eta));
        }
        let one = T::one();
        match self.family {
            Family::Gmm => {
                if self.k != 1
                    || self.kappa1 != one
                    || self.kappa2 != one
                    || self.a1 != one
                    || self.a2 != one
                {
                    return bad("GMM requires k = 1 and kappa1 = kappa2 = a1 = a2 = 1".into());
                }
            }
            Family::SparseCoding => {
                if self.kappa1 != T::zero() || self.kappa2 != one {
                    return bad("sparse coding requires kappa1 = 0 and kappa2 = 1".into());
                }
                if !(self.a1 > T::zero() && self.a1 <= one) {
                    return bad(format!("sparse coding requires 0 < a1 <= 1, got {}", self.a1));
                }
                if let SparseLaw::SignUniform { low } = self.sparse_law {
                    if low != self.a1 {
                        return bad("sign-uniform lower bound must equal a1".into());
                    }
                }
            }
            Family::NonNegSparse => {
                if !(self.a1 > T::zero() && self.a1 <= self.a2 && self.a2.is_finite()) {
                    return bad(format!(
                        "non-negative sparse coding requires 0 < a1 <= a2 < inf, got a1={} a2={}",
                        self.a1, self.a2
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn support_moments(&self) -> SupportMoments<T> {
        SupportMoments::uniform(self.k, self.m)
    }
}

/// Ground-truth dictionary with unit-norm columns and its measured incoherence.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary<T> {
    matrix: DenseMatrix<T>,
    mu: T,
}

impl<T: Scalar> Dictionary<T> {
    /// Wraps a matrix, checking unit columns and measuring `mu`.
    pub fn from_matrix(matrix: DenseMatrix<T>) -> Result<Self> {
        let mu = crate::metrics::incoherence_with_tol(&matrix, T::lit(UNIT_NORM_TOL))?;
        Ok(Self { matrix, mu })
    }

    /// Random dictionary with orthonormal columns (`mu = 0` up to rounding).
    pub fn orthonormal(n: usize, m: usize, rng: &mut Rng) -> Result<Self> {
        Self::from_matrix(random_orthonormal(n, m, rng)?)
    }

    pub fn matrix(&self) -> &DenseMatrix<T> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DenseMatrix<T> {
        self.matrix
    }

    pub fn mu(&self) -> T {
        self.mu
    }

    pub fn n(&self) -> usize {
        self.matrix.rows()
    }

    pub fn m(&self) -> usize {
        self.matrix.cols()
    }
}

/// Gaussian dictionary with `N(0, 1/n)` entries, then column-normalized.
pub fn sample_dictionary<T: Scalar>(spec: &ModelSpec<T>, rng: &mut Rng) -> Result<Dictionary<T>> {
    spec.validate()?;
    let scale = T::one() / T::from_usize_lossy(spec.n).sqrt();
    let raw = gaussian_matrix(spec.n, spec.m, scale, rng);
    Dictionary::from_matrix(normalize_columns(&raw)?)
}

/// Sparse latent code: sorted support and the matching nonzero values.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode<T> {
    pub support: Vec<usize>,
    pub values: Vec<T>,
}

impl<T: Scalar> LatentCode<T> {
    pub fn new(support: Vec<usize>, values: Vec<T>) -> Result<Self> {
        if support.len() != values.len() {
            return Err(Error::DimensionMismatch("support and values differ in length".into()));
        }
        if !support.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidSpec("support must be strictly increasing".into()));
        }
        Ok(Self { support, values })
    }

    pub fn densify(&self, m: usize) -> Vec<T> {
        let mut x = vec![T::zero(); m];
        for (&i, &v) in self.support.iter().zip(&self.values) {
            x[i] = v;
        }
        x
    }

    pub fn contains(&self, i: usize) -> bool {
        self.support.binary_search(&i).is_ok()
    }
}

/// One observation together with the latent code and noise that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub y: Vec<T>,
    pub code: LatentCode<T>,
    pub eta: Vec<T>,
}

pub fn sample_code<T: Scalar>(spec: &ModelSpec<T>, rng: &mut Rng) -> LatentCode<T> {
    match spec.family {
        Family::Gmm => LatentCode {
            support: vec![rng.index(spec.m)],
            values: vec![T::one()],
        },
        Family::SparseCoding => {
            let support = rng.k_subset(spec.m, spec.k);
            let values = support
                .iter()
                .map(|_| match spec.sparse_law {
                    SparseLaw::Rademacher => T::lit(rng.rademacher()),
                    SparseLaw::SignUniform { low } => {
                        let hi = sign_uniform_upper(low);
                        let mag = rng.uniform(low.as_f64(), hi.as_f64());
                        T::lit(rng.rademacher() * mag)
                    }
                })
                .collect();
            LatentCode { support, values }
        }
        Family::NonNegSparse => {
            let support = rng.k_subset(spec.m, spec.k);
            let values = support
                .iter()
                .map(|_| T::lit(rng.uniform(spec.a1.as_f64(), spec.a2.as_f64())))
                .collect();
            LatentCode { support, values }
        }
    }
}

/// Draws one sample; codes and noise come from separate generators.
pub fn sample_one<T: Scalar>(
    dict: &Dictionary<T>,
    spec: &ModelSpec<T>,
    code_rng: &mut Rng,
    noise_rng: &mut Rng,
) -> Sample<T> {
    let code = sample_code(spec, code_rng);
    let n = dict.n();
    let eta: Vec<T> = if spec.sigma_eta > T::zero() {
        (0..n).map(|_| noise_rng.normal(spec.sigma_eta)).collect()
    } else {
        vec![T::zero(); n]
    };
    let y = compose(dict.matrix(), &code, &eta);
    Sample { y, code, eta }
}

/// `A x* + eta` using only the support columns.
pub fn compose<T: Scalar>(a: &DenseMatrix<T>, code: &LatentCode<T>, eta: &[T]) -> Vec<T> {
    let mut y = eta.to_vec();
    for (r, yr) in y.iter_mut().enumerate() {
        let row = a.row(r);
        let mut acc = T::zero();
        for (&i, &v) in code.support.iter().zip(&code.values) {
            acc = acc + row[i] * v;
        }
        *yr = *yr + acc;
    }
    y
}

/// Generator pair for one shard of a batch.
pub(crate) fn shard_generators(base: &Rng, shard: u64) -> (Rng, Rng) {
    let s = base.derive(shard);
    (s.derive(crate::rng::Stream::Codes.id()), s.derive(crate::rng::Stream::Noise.id()))
}

/// Number of samples generated from one derived stream. Fixed, so that the
/// sample sequence does not depend on how work is spread across threads.
pub const SHARD_SIZE: usize = 256;

/// `count` i.i.d. samples. Shards of [`SHARD_SIZE`] samples are generated
/// from streams derived from a single draw of `rng`, in parallel, and
/// concatenated in shard order.
pub fn sample_batch<T: Scalar>(
    dict: &Dictionary<T>,
    spec: &ModelSpec<T>,
    count: usize,
    rng: &mut Rng,
) -> Result<Vec<Sample<T>>> {
    use rayon::prelude::*;
    spec.validate()?;
    if dict.n() != spec.n || dict.m() != spec.m {
        return Err(Error::ShapeMismatch {
            left: (dict.n(), dict.m()),
            right: (spec.n, spec.m),
        });
    }
    let base = rng.split();
    let shards = count.div_ceil(SHARD_SIZE);
    let parts: Vec<Vec<Sample<T>>> = (0..shards)
        .into_par_iter()
        .map(|s| {
            let (mut codes, mut noise) = shard_generators(&base, s as u64);
            let len = SHARD_SIZE.min(count - s * SHARD_SIZE);
            (0..len).map(|_| sample_one(dict, spec, &mut codes, &mut noise)).collect()
        })
        .collect();
    Ok(parts.into_iter().flatten().collect())
}

/// Stacks observations as the columns of an `n x N` matrix.
pub fn data_matrix<T: Scalar>(samples: &[Sample<T>]) -> Result<DenseMatrix<T>> {
    let n = samples.first().map(|s| s.y.len()).ok_or(Error::EmptyBatch)?;
    let mut out = DenseMatrix::zeros(n, samples.len());
    for (c, s) in samples.iter().enumerate() {
        if s.y.len() != n {
            return Err(Error::DimensionMismatch("samples of differing length".into()));
        }
        out.set_column(c, &s.y);
    }
    Ok(out)
}

/// Weights exactly `delta`-close to `a` column by column: each column is
/// rotated towards a random direction orthogonal to it so that
/// `||W_i - A_i|| = delta` and `||W_i|| = 1`. Requires `0 <= delta <= sqrt(2)`.
pub fn delta_close<T: Scalar>(a: &DenseMatrix<T>, delta: T, rng: &mut Rng) -> Result<DenseMatrix<T>> {
    let two = T::lit(2.0);
    if !(delta >= T::zero() && delta <= two.sqrt()) {
        return Err(Error::InvalidConfig(format!("closeness {delta} outside [0, sqrt 2]")));
    }
    let cos = T::one() - delta * delta / two;
    let sin = (T::one() - cos * cos).max(T::zero()).sqrt();
    let mut w = a.clone();
    for c in 0..a.cols() {
        let ac = a.column(c);
        let mut u: Vec<T> = rng.unit_vector(a.rows());
        let proj = crate::scalar::dot(&u, &ac);
        axpy(-proj, &ac, &mut u);
        let nrm = crate::scalar::norm(&u);
        let col: Vec<T> = ac
            .iter()
            .zip(&u)
            .map(|(&x, &d)| cos * x + sin * d / nrm)
            .collect();
        w.set_column(c, &col);
    }
    Ok(w)
}
