//! Gradient-descent learning of weight-sharing autoencoders on data from
//! generative bilinear models `y = A x* + eta`.
//!
//! The numerics are generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix `f64`, which is what the CLI and the experiments use.
//!
//! ```
//! use aerecover::{Dict, Rng, Spec, Stream};
//!
//! let spec = Spec::gmm(64, 8, 0.01);
//! let mut rng = Rng::for_stream(7, Stream::Dictionary);
//! let dict: Dict = aerecover::sample_dictionary(&spec, &mut rng).unwrap();
//! assert_eq!(dict.matrix().shape(), (64, 8));
//! ```

pub mod assignment;
pub mod encoder;
pub mod error;
pub mod generative;
pub mod gradient;
pub mod io;
pub mod metrics;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod trainer;

pub use encoder::{
    bias_interval, code_consistent, decode, encode, gmm_relu_bias_interval, loss, relu_bias_interval,
    sign_consistent, support_consistent, threshold_level, Activation, AutoencoderParams, BiasInterval, Encoding,
};
pub use error::{Error, Result};
pub use generative::{
    compose, data_matrix, delta_close, sample_batch, sample_code, sample_dictionary, sample_one, Dictionary, Family,
    LatentCode, ModelSpec, Sample, SparseLaw, SupportMoments, SHARD_SIZE,
};
pub use gradient::{
    approx_gradient_sample, batch_gradient, batch_statistics, expected_gradient, expected_gradient_gmm,
    expected_gradient_nonneg, expected_gradient_sparse, monte_carlo_gradient, monte_carlo_statistics,
    nonneg_remainder_budget, BatchStats, GradientEstimate, GradientSource,
};
pub use metrics::{
    closeness, consistency_rate, correlation_margins, hungarian_match, incoherence, nearness, verify_claim_bounds,
    ClaimReport, CorrelationMargins, MatchResult,
};
pub use rng::{Rng, Stream};
pub use scalar::Scalar;
pub use tensor::{
    gaussian_matrix, normalize_columns, random_orthonormal, spectral_norm, top_singular_vectors, DenseMatrix, Subspace,
};
pub use trainer::{
    bias_step, default_zeta, descent_step, init_weights, train, train_from, BiasRule, GradientMode, InitScheme, TrainConfig,
    TraceRecord, TrainTrace,
};

pub type Matrix = DenseMatrix<f64>;
pub type Spec = ModelSpec<f64>;
pub type Dict = Dictionary<f64>;
pub type Params = AutoencoderParams<f64>;
pub type Code = LatentCode<f64>;
pub type Obs = Sample<f64>;
pub type Gradient = GradientEstimate<f64>;
pub type Match = MatchResult<f64>;
pub type Config = TrainConfig<f64>;
