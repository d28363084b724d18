//! Normalized batch gradient descent with bias scheduling.

use std::fmt::Write as _;

use crate::encoder::{Activation, AutoencoderParams};
use crate::error::{Error, Result};
use crate::generative::{data_matrix, sample_batch, Dictionary, Family, ModelSpec, Sample};
use crate::gradient::{batch_statistics, expected_gradient, monte_carlo_statistics, GradientEstimate};
use crate::metrics::closeness;
use crate::rng::{Rng, Stream};
use crate::scalar::Scalar;
use crate::tensor::{gaussian_matrix, normalize_columns, spectral_norm, top_singular_vectors, DenseMatrix};

/// Iteration cap and tolerance for the PCA initialization.
const PCA_MAX_ITERS: usize = 2000;
const PCA_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BiasRule<T> {
    /// `b = 0` throughout.
    Zero,
    /// `b <- b / factor`, starting at `initial`.
    GeometricDecay { factor: T, initial: T },
    /// `b <- sqrt(1 - tau) b`, starting at `initial`.
    SqrtContraction { tau: T, initial: T },
}

impl<T: Scalar> BiasRule<T> {
    pub fn initial(&self) -> T {
        match *self {
            BiasRule::Zero => T::zero(),
            BiasRule::GeometricDecay { initial, .. } | BiasRule::SqrtContraction { initial, .. } => initial,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitScheme<T> {
    /// `normalize(A + delta E)` with `E_ij ~ N(0, 1/n)`.
    Perturbed { delta: T },
    /// Top left singular vectors of a data batch.
    Pca,
    /// Normalized Gaussian columns.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientMode {
    /// Batch approximate gradient over `batch_size` samples per iteration.
    MonteCarlo { batch_size: usize },
    /// Closed-form expected gradient of the model family.
    ClosedForm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig<T> {
    pub zeta: T,
    pub iterations: usize,
    pub bias_rule: BiasRule<T>,
    pub init: InitScheme<T>,
    pub gradient: GradientMode,
    pub activation: Activation<T>,
    pub seed: u64,
    /// Draw a new batch every iteration; otherwise reuse one dataset.
    pub fresh_batches: bool,
    /// Samples used to measure loss and consistency in closed-form mode.
    pub eval_samples: usize,
    /// Pull `W` back to `||W - A|| <= 2 ||A||` after each step.
    pub project: bool,
}

impl<T: Scalar> TrainConfig<T> {
    /// Defaults for `spec`: learning rate `m` for the mixture and `m / k`
    /// otherwise, 50 iterations, zero bias, ReLU, perturbed start at 0.5,
    /// fresh batches of 10^4.
    pub fn new(spec: &ModelSpec<T>) -> Self {
        Self {
            zeta: default_zeta(spec),
            iterations: 50,
            bias_rule: BiasRule::Zero,
            init: InitScheme::Perturbed { delta: T::lit(0.5) },
            gradient: GradientMode::MonteCarlo { batch_size: 10_000 },
            activation: Activation::Relu,
            seed: 0,
            fresh_batches: true,
            eval_samples: 1000,
            project: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.zeta > T::zero()) || !self.zeta.is_finite() {
            return bad(format!("learning rate must be positive, got {}", self.zeta));
        }
        match self.bias_rule {
            BiasRule::Zero => {}
            BiasRule::GeometricDecay { factor, initial } => {
                if !(factor > T::one()) {
                    return bad(format!("decay factor must exceed 1, got {factor}"));
                }
                if !(initial < T::zero()) {
                    return bad(format!("initial bias must be negative, got {initial}"));
                }
            }
            BiasRule::SqrtContraction { tau, initial } => {
                if !(tau > T::zero() && tau < T::one()) {
                    return bad(format!("contraction rate must lie in (0, 1), got {tau}"));
                }
                if !(initial <= T::zero()) {
                    return bad(format!("initial bias must not be positive, got {initial}"));
                }
            }
        }
        if let InitScheme::Perturbed { delta } = self.init {
            if !(delta >= T::zero()) {
                return bad(format!("perturbation size must be non-negative, got {delta}"));
            }
        }
        if let GradientMode::MonteCarlo { batch_size: 0 } = self.gradient {
            return bad("batch size must be positive".into());
        }
        if let Activation::Threshold(l) = self.activation {
            if !(l > T::zero()) {
                return bad(format!("threshold must be positive, got {l}"));
            }
        }
        Ok(())
    }
}

/// `m` for the mixture, `m / k` for the sparse families.
pub fn default_zeta<T: Scalar>(spec: &ModelSpec<T>) -> T {
    let m = T::from_usize_lossy(spec.m);
    match spec.family {
        Family::Gmm => m,
        _ => m / T::from_usize_lossy(spec.k.max(1)),
    }
}

/// One row of the training trace, measured at the iterate `W^s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub iter: usize,
    pub loss: f64,
    /// Matched `||W - A||_F^2`.
    pub frob_err: f64,
    /// Matched `max_i ||W_i - A_i||`.
    pub delta: f64,
    pub consistency_rate: f64,
    pub bias_max: f64,
    /// `frob_err[s] / frob_err[s - 1]`; NaN on the first row.
    pub contraction: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    pub records: Vec<TraceRecord>,
}

pub const TRACE_HEADER: &str = "iter,loss,frob_err,delta,consistency_rate,bias_max,contraction";

impl TrainTrace {
    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 + self.records.len() * 160);
        out.push_str(TRACE_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.iter, r.loss, r.frob_err, r.delta, r.consistency_rate, r.bias_max, r.contraction
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == TRACE_HEADER => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("expected header `{TRACE_HEADER}`"),
                })
            }
        }
        let mut records = Vec::new();
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse { line: idx + 1, message };
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 7 {
                return Err(err(format!("expected 7 fields, found {}", fields.len())));
            }
            let iter = fields[0].trim().parse().map_err(|e| err(format!("iter: {e}")))?;
            let mut vals = [0.0f64; 6];
            for (v, f) in vals.iter_mut().zip(&fields[1..]) {
                *v = f.trim().parse().map_err(|e| err(format!("`{f}`: {e}")))?;
            }
            records.push(TraceRecord {
                iter,
                loss: vals[0],
                frob_err: vals[1],
                delta: vals[2],
                consistency_rate: vals[3],
                bias_max: vals[4],
                contraction: vals[5],
            });
        }
        Ok(Self { records })
    }
}

/// Initial autoencoder parameters. `dict` is needed for the perturbed
/// scheme and `data` for PCA.
pub fn init_weights<T: Scalar>(
    scheme: InitScheme<T>,
    dict: Option<&Dictionary<T>>,
    data: Option<&[Sample<T>]>,
    spec: &ModelSpec<T>,
    bias_rule: BiasRule<T>,
    activation: Activation<T>,
    rng: &mut Rng,
) -> Result<AutoencoderParams<T>> {
    let (n, m) = (spec.n, spec.m);
    let std = T::one() / T::from_usize_lossy(n).sqrt();
    let w = match scheme {
        InitScheme::Perturbed { delta } => {
            let a = dict.ok_or(Error::MissingGroundTruth)?.matrix();
            if delta == T::zero() {
                a.clone()
            } else {
                let e = gaussian_matrix(n, m, std, rng);
                normalize_columns(&a.add_scaled(delta, &e)?)?
            }
        }
        InitScheme::Pca => {
            let samples = data.filter(|d| !d.is_empty()).ok_or(Error::MissingData)?;
            let y = data_matrix(samples)?;
            let sub = top_singular_vectors(&y, m, PCA_MAX_ITERS, T::lit(PCA_TOL))?;
            orient_by_data(sub.vectors, &y)
        }
        InitScheme::Random => normalize_columns(&gaussian_matrix(n, m, std, rng))?,
    };
    AutoencoderParams::new(w, vec![bias_rule.initial(); m], activation)
}

/// Flips each column so that its summed projection onto the data is
/// non-negative, making the PCA start independent of the eigensolver's
/// sign convention.
fn orient_by_data<T: Scalar>(mut q: DenseMatrix<T>, y: &DenseMatrix<T>) -> DenseMatrix<T> {
    let proj = q.transpose().matmul(y).expect("conforming");
    for c in 0..q.cols() {
        let s: T = proj.row(c).iter().copied().sum();
        if s < T::zero() {
            let col: Vec<T> = q.column(c).into_iter().map(|v| -v).collect();
            q.set_column(c, &col);
        }
    }
    q
}

/// `W <- normalize(W - zeta G)`; the bias is left alone.
pub fn descent_step<T: Scalar>(
    params: &AutoencoderParams<T>,
    g: &GradientEstimate<T>,
    zeta: T,
) -> Result<AutoencoderParams<T>> {
    if g.columns.shape() != params.weights.shape() {
        return Err(Error::ShapeMismatch {
            left: params.weights.shape(),
            right: g.columns.shape(),
        });
    }
    let w = normalize_columns(&params.weights.add_scaled(-zeta, &g.columns)?)?;
    Ok(AutoencoderParams {
        weights: w,
        bias: params.bias.clone(),
        activation: params.activation,
    })
}

pub fn bias_step<T: Scalar>(b: &[T], rule: &BiasRule<T>) -> Vec<T> {
    match *rule {
        BiasRule::Zero => vec![T::zero(); b.len()],
        BiasRule::GeometricDecay { factor, .. } => b.iter().map(|&v| v / factor).collect(),
        BiasRule::SqrtContraction { tau, .. } => {
            let s = (T::one() - tau).sqrt();
            b.iter().map(|&v| v * s).collect()
        }
    }
}

/// If `||W - A|| > 2 ||A||`, shrinks `W - A` onto that ball and renormalizes.
pub fn project_nearness<T: Scalar>(w: &DenseMatrix<T>, a: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    let tol = T::lit(1e-8);
    let diff = w.sub(a)?;
    let radius = T::lit(2.0) * spectral_norm(a, tol);
    let dn = spectral_norm(&diff, tol);
    if dn <= radius {
        return Ok(w.clone());
    }
    normalize_columns(&a.add_scaled(radius / dn, &diff)?)
}

/// Runs `config.iterations` descent steps from the configured start and
/// records the trace at every iterate, `W^0` through `W^T`.
///
/// Generator streams derived from `config.seed`: initialization, batches
/// and evaluation each get their own, so changing one does not perturb the
/// others.
pub fn train<T: Scalar>(
    dict: &Dictionary<T>,
    spec: &ModelSpec<T>,
    config: &TrainConfig<T>,
) -> Result<(AutoencoderParams<T>, TrainTrace)> {
    spec.validate()?;
    config.validate()?;
    if dict.n() != spec.n || dict.m() != spec.m {
        return Err(Error::ShapeMismatch {
            left: (dict.n(), dict.m()),
            right: (spec.n, spec.m),
        });
    }
    let mut init_rng = Rng::for_stream(config.seed, Stream::Init);
    let mut batch_rng = Rng::for_stream(config.seed, Stream::Batch);
    let mut eval_rng = Rng::for_stream(config.seed, Stream::Evaluation);

    let fixed: Option<Vec<Sample<T>>> = match config.gradient {
        GradientMode::MonteCarlo { batch_size } if !config.fresh_batches => {
            Some(sample_batch(dict, spec, batch_size, &mut batch_rng)?)
        }
        _ => None,
    };
    let pca_data = match (&config.init, &fixed) {
        (InitScheme::Pca, None) => {
            let count = match config.gradient {
                GradientMode::MonteCarlo { batch_size } => batch_size,
                GradientMode::ClosedForm => config.eval_samples.max(spec.m),
            };
            let mut r = init_rng.derive(Stream::Batch.id());
            Some(sample_batch(dict, spec, count, &mut r)?)
        }
        _ => None,
    };
    let data = fixed.as_deref().or(pca_data.as_deref());
    let params = init_weights(
        config.init,
        Some(dict),
        data,
        spec,
        config.bias_rule,
        config.activation,
        &mut init_rng,
    )?;

    run(dict, spec, config, params, fixed.as_deref(), &mut batch_rng, &mut eval_rng)
}

/// Like [`train`] but starting from the given parameters instead of the
/// configured initialization scheme.
pub fn train_from<T: Scalar>(
    dict: &Dictionary<T>,
    spec: &ModelSpec<T>,
    config: &TrainConfig<T>,
    start: AutoencoderParams<T>,
) -> Result<(AutoencoderParams<T>, TrainTrace)> {
    spec.validate()?;
    config.validate()?;
    if start.weights.shape() != (spec.n, spec.m) || dict.n() != spec.n || dict.m() != spec.m {
        return Err(Error::ShapeMismatch {
            left: start.weights.shape(),
            right: (spec.n, spec.m),
        });
    }
    let mut batch_rng = Rng::for_stream(config.seed, Stream::Batch);
    let mut eval_rng = Rng::for_stream(config.seed, Stream::Evaluation);
    let fixed: Option<Vec<Sample<T>>> = match config.gradient {
        GradientMode::MonteCarlo { batch_size } if !config.fresh_batches => {
            Some(sample_batch(dict, spec, batch_size, &mut batch_rng)?)
        }
        _ => None,
    };
    run(dict, spec, config, start, fixed.as_deref(), &mut batch_rng, &mut eval_rng)
}

fn run<T: Scalar>(
    dict: &Dictionary<T>,
    spec: &ModelSpec<T>,
    config: &TrainConfig<T>,
    mut params: AutoencoderParams<T>,
    fixed: Option<&[Sample<T>]>,
    batch_rng: &mut Rng,
    eval_rng: &mut Rng,
) -> Result<(AutoencoderParams<T>, TrainTrace)> {
    let a = dict.matrix();
    let flip = spec.family.allows_sign_flip();
    let mut trace = TrainTrace::default();
    let mut prev_frob: Option<f64> = None;
    for s in 0..=config.iterations {
        let (loss, rate, mc_grad) = match config.gradient {
            GradientMode::MonteCarlo { batch_size } => {
                let stats = match fixed {
                    Some(d) => batch_statistics(&params, d, Some(spec.family))?,
                    None => monte_carlo_statistics(&params, dict, spec, batch_size, batch_rng)?,
                };
                (stats.mean_loss.as_f64(), stats.consistency_rate.as_f64(), Some(stats.gradient))
            }
            GradientMode::ClosedForm if config.eval_samples > 0 => {
                let stats = monte_carlo_statistics(&params, dict, spec, config.eval_samples, eval_rng)?;
                (stats.mean_loss.as_f64(), stats.consistency_rate.as_f64(), None)
            }
            GradientMode::ClosedForm => (f64::NAN, f64::NAN, None),
        };
        let (delta, mr) = closeness(&params.weights, a, flip)?;
        let frob = mr.frobenius_sq.as_f64();
        let contraction = match prev_frob {
            Some(p) if p > 0.0 => frob / p,
            _ => f64::NAN,
        };
        trace.records.push(TraceRecord {
            iter: s,
            loss,
            frob_err: frob,
            delta: delta.as_f64(),
            consistency_rate: rate,
            bias_max: params.bias.iter().map(|b| b.abs().as_f64()).fold(0.0, f64::max),
            contraction,
        });
        prev_frob = Some(frob);
        if s == config.iterations {
            break;
        }
        let g = match mc_grad {
            Some(g) => g,
            None => expected_gradient(&params.weights, &params.bias, a, spec)?,
        };
        let mut next = descent_step(&params, &g, config.zeta)?;
        if config.project {
            next.weights = project_nearness(&next.weights, a)?;
        }
        next.bias = bias_step(&next.bias, &config.bias_rule);
        params = next;
    }
    Ok((params, trace))
}
