//! Weight-sharing two-layer autoencoder: `x = act(W^T y + b)`, `y_hat = W x`.

use crate::error::{Error, Result};
use crate::generative::{Family, LatentCode, ModelSpec};
use crate::scalar::{dist_sq, Scalar};
use crate::tensor::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation<T> {
    Relu,
    /// Hard threshold `z * 1[|z| >= lambda]`.
    Threshold(T),
}

impl<T: Scalar> Activation<T> {
    #[inline]
    pub fn apply(self, z: T) -> T {
        match self {
            Activation::Relu => z.max(T::zero()),
            // |z| == lambda fires
            Activation::Threshold(lambda) => {
                if z.abs() >= lambda {
                    z
                } else {
                    T::zero()
                }
            }
        }
    }

    /// Distance from `z` to the activation's kink.
    pub fn boundary_gap(self, z: T) -> T {
        match self {
            Activation::Relu => z.abs(),
            Activation::Threshold(lambda) => (z.abs() - lambda).abs(),
        }
    }
}

/// Shared weights `W` (n x m), encoder bias `b` (m) and the activation.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderParams<T> {
    pub weights: DenseMatrix<T>,
    pub bias: Vec<T>,
    pub activation: Activation<T>,
}

impl<T: Scalar> AutoencoderParams<T> {
    pub fn new(weights: DenseMatrix<T>, bias: Vec<T>, activation: Activation<T>) -> Result<Self> {
        if bias.len() != weights.cols() {
            return Err(Error::DimensionMismatch(format!(
                "bias of length {} for {} hidden units",
                bias.len(),
                weights.cols()
            )));
        }
        if let Activation::Threshold(lambda) = activation {
            if !(lambda > T::zero()) {
                return Err(Error::InvalidConfig(format!("threshold must be positive, got {lambda}")));
            }
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    pub fn n(&self) -> usize {
        self.weights.rows()
    }

    pub fn m(&self) -> usize {
        self.weights.cols()
    }
}

/// Pre-activation `z` and code `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoding<T> {
    pub z: Vec<T>,
    pub x: Vec<T>,
}

pub fn encode<T: Scalar>(params: &AutoencoderParams<T>, y: &[T]) -> Result<Encoding<T>> {
    let mut z = params.weights.tr_matvec(y)?;
    for (zi, &bi) in z.iter_mut().zip(&params.bias) {
        *zi = *zi + bi;
    }
    let x = z.iter().map(|&v| params.activation.apply(v)).collect();
    Ok(Encoding { z, x })
}

pub fn decode<T: Scalar>(params: &AutoencoderParams<T>, x: &[T]) -> Result<Vec<T>> {
    params.weights.matvec(x)
}

/// `1/2 ||y - W act(W^T y + b)||^2`
pub fn loss<T: Scalar>(params: &AutoencoderParams<T>, y: &[T]) -> Result<T> {
    let enc = encode(params, y)?;
    let y_hat = decode(params, &enc.x)?;
    Ok(dist_sq(y, &y_hat) / T::lit(2.0))
}

/// `supp(x) == supp(x*)`, with "nonzero" meaning exactly `!= 0`.
pub fn support_consistent<T: Scalar>(x: &[T], code: &LatentCode<T>) -> bool {
    let mut next = code.support.iter().peekable();
    for (i, &xi) in x.iter().enumerate() {
        let in_support = next.peek() == Some(&&i);
        if in_support {
            next.next();
        }
        if (xi != T::zero()) != in_support {
            return false;
        }
    }
    next.peek().is_none()
}

#[inline]
fn sign<T: Scalar>(v: T) -> i8 {
    if v > T::zero() {
        1
    } else if v < T::zero() {
        -1
    } else {
        0
    }
}

/// Entrywise `sgn(x) == sgn(x*)`.
pub fn sign_consistent<T: Scalar>(x: &[T], code: &LatentCode<T>) -> bool {
    let mut next = code.support.iter().zip(&code.values).peekable();
    for (i, &xi) in x.iter().enumerate() {
        let want = match next.peek() {
            Some((&j, &v)) if j == i => {
                next.next();
                sign(v)
            }
            _ => 0,
        };
        if sign(xi) != want {
            return false;
        }
    }
    next.peek().is_none()
}

/// What a consistent encoder recovers for a
/// family: signs for sparse coding, supports otherwise.
pub fn code_consistent<T: Scalar>(family: Family, x: &[T], code: &LatentCode<T>) -> bool {
    match family {
        Family::SparseCoding => sign_consistent(x, code),
        Family::Gmm | Family::NonNegSparse => support_consistent(x, code),
    }
}

/// Closed interval of admissible encoder biases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasInterval<T> {
    pub low: T,
    pub high: T,
}

impl<T: Scalar> BiasInterval<T> {
    pub fn is_empty(&self) -> bool {
        self.low > self.high
    }

    pub fn midpoint(&self) -> T {
        (self.low + self.high) / T::lit(2.0)
    }

    pub fn contains(&self, b: T) -> bool {
        self.low <= b && b <= self.high
    }
}

/// ReLU bias range under which supports are recovered from `delta`-close
/// weights: `[-(1 - delta) a1 + a2 delta sqrt(k), -a2 delta sqrt(k)]`.
pub fn relu_bias_interval<T: Scalar>(a1: T, a2: T, delta: T, k: usize) -> BiasInterval<T> {
    let spread = a2 * delta * T::from_usize_lossy(k).sqrt();
    BiasInterval {
        low: -(T::one() - delta) * a1 + spread,
        high: -spread,
    }
}

/// ReLU bias range for the Gaussian mixture, `[-1 + 2 delta, -2 delta]`.
pub fn gmm_relu_bias_interval<T: Scalar>(delta: T) -> BiasInterval<T> {
    let two = T::lit(2.0);
    BiasInterval {
        low: -T::one() + two * delta,
        high: -two * delta,
    }
}

/// Bias range for a ReLU encoder under `spec`.
pub fn bias_interval<T: Scalar>(spec: &ModelSpec<T>, delta: T) -> BiasInterval<T> {
    match spec.family {
        Family::Gmm => gmm_relu_bias_interval(delta),
        _ => relu_bias_interval(spec.a1, spec.a2, delta, spec.k),
    }
}

/// Threshold level for the hard-threshold encoder: `a1 / 2`.
pub fn threshold_level<T: Scalar>(spec: &ModelSpec<T>) -> T {
    spec.a1 / T::lit(2.0)
}
