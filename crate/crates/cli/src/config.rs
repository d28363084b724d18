//! Experiment configuration: a flat `key = value` text format split into
//! `[model]`, `[train]` and `[experiment]` sections.
//!
//! Parsing is strict. Unknown keys, duplicate keys and keys outside a section
//! are rejected with the offending line number. Keys that are absent take the
//! defaults of [`ExperimentConfig::default`], which describe the mixture
//! learning-curve experiment.

use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use aerecover::{
    default_zeta, Activation, BiasRule, Config, Family, GradientMode, InitScheme, ModelSpec, Spec,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("config line {line}: {message}")]
pub struct ConfigError {
    /// 1-based; 0 when the problem is not tied to a single line.
    pub line: usize,
    pub message: String,
}

impl ConfigError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        Self { line, message: message.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LawKind {
    Rademacher,
    SignUniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DictionaryKind {
    Gaussian,
    Orthonormal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BiasKind {
    Zero,
    Geometric,
    Sqrt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    Perturbed,
    Pca,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientKind {
    Mc,
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationKind {
    Relu,
    Threshold,
}

macro_rules! keyword_enum {
    ($ty:ident { $($variant:ident => $word:literal),+ $(,)? }) => {
        impl $ty {
            pub const WORDS: &'static [&'static str] = &[$($word),+];

            pub fn word(self) -> &'static str {
                match self { $($ty::$variant => $word),+ }
            }
        }

        impl FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($word => Ok($ty::$variant),)+
                    other => Err(format!("expected one of {}, found `{other}`", Self::WORDS.join("|"))),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.word())
            }
        }
    };
}

keyword_enum!(LawKind { Rademacher => "rademacher", SignUniform => "sign_uniform" });
keyword_enum!(DictionaryKind { Gaussian => "gaussian", Orthonormal => "orthonormal" });
keyword_enum!(BiasKind { Zero => "zero", Geometric => "geometric", Sqrt => "sqrt" });
keyword_enum!(InitKind { Perturbed => "perturbed", Pca => "pca", Random => "random" });
keyword_enum!(GradientKind { Mc => "mc", Oracle => "oracle" });
keyword_enum!(ActivationKind { Relu => "relu", Threshold => "threshold" });

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSection {
    pub family: Family,
    pub n: usize,
    pub m: usize,
    /// Ignored for the mixture, which is always 1-sparse.
    pub k: usize,
    pub a1: f64,
    pub a2: f64,
    pub sigma_eta: f64,
    pub sparse_law: LawKind,
    pub dictionary: DictionaryKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSection {
    /// `None` means the family default.
    pub zeta: Option<f64>,
    pub iterations: usize,
    pub bias_rule: BiasKind,
    pub bias_initial: f64,
    pub bias_factor: f64,
    pub bias_tau: f64,
    pub init: InitKind,
    pub init_delta: f64,
    pub gradient: GradientKind,
    pub activation: ActivationKind,
    pub threshold: f64,
    pub fresh_batches: bool,
    pub eval_samples: usize,
    pub project: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSection {
    pub seed: u64,
    /// Batch size for training and dataset size for `generate`.
    pub samples: usize,
    pub noise_levels: Vec<f64>,
    pub inits: Vec<InitKind>,
    pub out: PathBuf,
    pub verify_instances: usize,
    pub verify_delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub train: TrainSection,
    pub experiment: ExperimentSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelSection {
                family: Family::Gmm,
                n: 784,
                m: 10,
                k: 3,
                a1: 0.5,
                a2: 1.0,
                sigma_eta: 0.01,
                sparse_law: LawKind::Rademacher,
                dictionary: DictionaryKind::Gaussian,
            },
            train: TrainSection {
                zeta: None,
                iterations: 50,
                bias_rule: BiasKind::Geometric,
                bias_initial: -1.25,
                bias_factor: 2.0,
                bias_tau: 0.5,
                init: InitKind::Perturbed,
                init_delta: 0.5,
                gradient: GradientKind::Mc,
                activation: ActivationKind::Relu,
                threshold: 0.5,
                fresh_batches: true,
                eval_samples: 1000,
                project: false,
            },
            experiment: ExperimentSection {
                seed: 0,
                samples: 10_000,
                noise_levels: vec![0.01, 0.02, 0.03],
                inits: vec![InitKind::Perturbed, InitKind::Pca, InitKind::Random],
                out: PathBuf::from("out"),
                verify_instances: 100,
                verify_delta: 0.1,
            },
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    Model,
    Train,
    Experiment,
}

impl Section {
    fn name(self) -> &'static str {
        match self {
            Section::Model => "model",
            Section::Train => "train",
            Section::Experiment => "experiment",
        }
    }

    fn keys(self) -> &'static [&'static str] {
        match self {
            Section::Model => &["family", "n", "m", "k", "a1", "a2", "sigma_eta", "sparse_law", "dictionary"],
            Section::Train => &[
                "zeta",
                "iterations",
                "bias_rule",
                "bias_initial",
                "bias_factor",
                "bias_tau",
                "init",
                "init_delta",
                "gradient",
                "activation",
                "threshold",
                "fresh_batches",
                "eval_samples",
                "project",
            ],
            Section::Experiment => {
                &["seed", "samples", "noise_levels", "inits", "out", "verify_instances", "verify_delta"]
            }
        }
    }
}

fn value<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    raw.parse().map_err(|e| ConfigError::at(line, format!("`{key}`: {e} (value `{raw}`)")))
}

fn list<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: fmt::Display,
{
    if raw.trim().is_empty() {
        return Ok(Vec::new());
    }
    raw.split(',').map(|s| value(line, key, s.trim())).collect()
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut section: Option<Section> = None;
        let mut seen: Vec<(Section, String)> = Vec::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw_line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| ConfigError::at(line, format!("malformed section header `{content}`")))?
                    .trim();
                section = Some(match name {
                    "model" => Section::Model,
                    "train" => Section::Train,
                    "experiment" => Section::Experiment,
                    other => {
                        return Err(ConfigError::at(
                            line,
                            format!("unknown section `[{other}]` (expected model, train or experiment)"),
                        ))
                    }
                });
                continue;
            }
            let (key, val) = content
                .split_once('=')
                .ok_or_else(|| ConfigError::at(line, format!("expected `key = value`, found `{content}`")))?;
            let (key, val) = (key.trim(), val.trim());
            let sec = section.ok_or_else(|| ConfigError::at(line, format!("key `{key}` outside any section")))?;
            if !sec.keys().contains(&key) {
                return Err(ConfigError::at(line, format!("unknown key `{key}` in [{}]", sec.name())));
            }
            if seen.iter().any(|(s, k)| *s == sec && k == key) {
                return Err(ConfigError::at(line, format!("duplicate key `{key}` in [{}]", sec.name())));
            }
            seen.push((sec, key.to_string()));
            cfg.assign(sec, line, key, val)?;
        }
        Ok(cfg)
    }

    fn assign(&mut self, sec: Section, line: usize, key: &str, v: &str) -> Result<(), ConfigError> {
        let (md, tr, ex) = (&mut self.model, &mut self.train, &mut self.experiment);
        match (sec, key) {
            (Section::Model, "family") => {
                md.family = v.parse().map_err(|e: aerecover::Error| ConfigError::at(line, format!("`family`: {e}")))?
            }
            (Section::Model, "n") => md.n = value(line, key, v)?,
            (Section::Model, "m") => md.m = value(line, key, v)?,
            (Section::Model, "k") => md.k = value(line, key, v)?,
            (Section::Model, "a1") => md.a1 = value(line, key, v)?,
            (Section::Model, "a2") => md.a2 = value(line, key, v)?,
            (Section::Model, "sigma_eta") => md.sigma_eta = value(line, key, v)?,
            (Section::Model, "sparse_law") => md.sparse_law = value(line, key, v)?,
            (Section::Model, "dictionary") => md.dictionary = value(line, key, v)?,
            (Section::Train, "zeta") => tr.zeta = if v == "auto" { None } else { Some(value(line, key, v)?) },
            (Section::Train, "iterations") => tr.iterations = value(line, key, v)?,
            (Section::Train, "bias_rule") => tr.bias_rule = value(line, key, v)?,
            (Section::Train, "bias_initial") => tr.bias_initial = value(line, key, v)?,
            (Section::Train, "bias_factor") => tr.bias_factor = value(line, key, v)?,
            (Section::Train, "bias_tau") => tr.bias_tau = value(line, key, v)?,
            (Section::Train, "init") => tr.init = value(line, key, v)?,
            (Section::Train, "init_delta") => tr.init_delta = value(line, key, v)?,
            (Section::Train, "gradient") => tr.gradient = value(line, key, v)?,
            (Section::Train, "activation") => tr.activation = value(line, key, v)?,
            (Section::Train, "threshold") => tr.threshold = value(line, key, v)?,
            (Section::Train, "fresh_batches") => tr.fresh_batches = value(line, key, v)?,
            (Section::Train, "eval_samples") => tr.eval_samples = value(line, key, v)?,
            (Section::Train, "project") => tr.project = value(line, key, v)?,
            (Section::Experiment, "seed") => ex.seed = value(line, key, v)?,
            (Section::Experiment, "samples") => ex.samples = value(line, key, v)?,
            (Section::Experiment, "noise_levels") => ex.noise_levels = list(line, key, v)?,
            (Section::Experiment, "inits") => ex.inits = list(line, key, v)?,
            (Section::Experiment, "out") => ex.out = PathBuf::from(v),
            (Section::Experiment, "verify_instances") => ex.verify_instances = value(line, key, v)?,
            (Section::Experiment, "verify_delta") => ex.verify_delta = value(line, key, v)?,
            _ => unreachable!("key table and assignment out of sync"),
        }
        Ok(())
    }

    /// Writes every key, so parsing the output reproduces `self` exactly.
    pub fn serialize(&self) -> String {
        let (md, tr, ex) = (&self.model, &self.train, &self.experiment);
        let mut s = String::new();
        let _ = writeln!(s, "[model]");
        let _ = writeln!(s, "family = {}", md.family.name());
        let _ = writeln!(s, "n = {}", md.n);
        let _ = writeln!(s, "m = {}", md.m);
        let _ = writeln!(s, "k = {}", md.k);
        let _ = writeln!(s, "a1 = {:?}", md.a1);
        let _ = writeln!(s, "a2 = {:?}", md.a2);
        let _ = writeln!(s, "sigma_eta = {:?}", md.sigma_eta);
        let _ = writeln!(s, "sparse_law = {}", md.sparse_law);
        let _ = writeln!(s, "dictionary = {}", md.dictionary);
        let _ = writeln!(s, "\n[train]");
        match tr.zeta {
            Some(z) => {
                let _ = writeln!(s, "zeta = {z:?}");
            }
            None => {
                let _ = writeln!(s, "zeta = auto");
            }
        }
        let _ = writeln!(s, "iterations = {}", tr.iterations);
        let _ = writeln!(s, "bias_rule = {}", tr.bias_rule);
        let _ = writeln!(s, "bias_initial = {:?}", tr.bias_initial);
        let _ = writeln!(s, "bias_factor = {:?}", tr.bias_factor);
        let _ = writeln!(s, "bias_tau = {:?}", tr.bias_tau);
        let _ = writeln!(s, "init = {}", tr.init);
        let _ = writeln!(s, "init_delta = {:?}", tr.init_delta);
        let _ = writeln!(s, "gradient = {}", tr.gradient);
        let _ = writeln!(s, "activation = {}", tr.activation);
        let _ = writeln!(s, "threshold = {:?}", tr.threshold);
        let _ = writeln!(s, "fresh_batches = {}", tr.fresh_batches);
        let _ = writeln!(s, "eval_samples = {}", tr.eval_samples);
        let _ = writeln!(s, "project = {}", tr.project);
        let _ = writeln!(s, "\n[experiment]");
        let _ = writeln!(s, "seed = {}", ex.seed);
        let _ = writeln!(s, "samples = {}", ex.samples);
        let levels: Vec<String> = ex.noise_levels.iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(s, "noise_levels = {}", levels.join(", "));
        let inits: Vec<&str> = ex.inits.iter().map(|i| i.word()).collect();
        let _ = writeln!(s, "inits = {}", inits.join(", "));
        let _ = writeln!(s, "out = {}", ex.out.display());
        let _ = writeln!(s, "verify_instances = {}", ex.verify_instances);
        let _ = writeln!(s, "verify_delta = {:?}", ex.verify_delta);
        s
    }

    /// Model at the configured noise level.
    pub fn spec(&self) -> Result<Spec, ConfigError> {
        self.spec_at(self.model.sigma_eta)
    }

    pub fn spec_at(&self, sigma_eta: f64) -> Result<Spec, ConfigError> {
        let md = &self.model;
        let spec = match (md.family, md.sparse_law) {
            (Family::Gmm, _) => ModelSpec::gmm(md.n, md.m, sigma_eta),
            (Family::SparseCoding, LawKind::Rademacher) => ModelSpec::sparse_coding(md.n, md.m, md.k, sigma_eta),
            (Family::SparseCoding, LawKind::SignUniform) => {
                ModelSpec::sparse_coding_sign_uniform(md.n, md.m, md.k, md.a1, sigma_eta)
            }
            (Family::NonNegSparse, _) => ModelSpec::nonneg(md.n, md.m, md.k, md.a1, md.a2, sigma_eta),
        };
        spec.validate().map_err(|e| ConfigError::at(0, format!("[model]: {e}")))?;
        Ok(spec)
    }

    pub fn train_config(&self, spec: &Spec, init: InitKind, seed: u64) -> Result<Config, ConfigError> {
        let tr = &self.train;
        let bias_rule = match tr.bias_rule {
            BiasKind::Zero => BiasRule::Zero,
            BiasKind::Geometric => BiasRule::GeometricDecay { factor: tr.bias_factor, initial: tr.bias_initial },
            BiasKind::Sqrt => BiasRule::SqrtContraction { tau: tr.bias_tau, initial: tr.bias_initial },
        };
        let cfg = Config {
            zeta: tr.zeta.unwrap_or_else(|| default_zeta(spec)),
            iterations: tr.iterations,
            bias_rule,
            init: match init {
                InitKind::Perturbed => InitScheme::Perturbed { delta: tr.init_delta },
                InitKind::Pca => InitScheme::Pca,
                InitKind::Random => InitScheme::Random,
            },
            gradient: match tr.gradient {
                GradientKind::Mc => GradientMode::MonteCarlo { batch_size: self.experiment.samples },
                GradientKind::Oracle => GradientMode::ClosedForm,
            },
            activation: match tr.activation {
                ActivationKind::Relu => Activation::Relu,
                ActivationKind::Threshold => Activation::Threshold(tr.threshold),
            },
            seed,
            fresh_batches: tr.fresh_batches,
            eval_samples: tr.eval_samples,
            project: tr.project,
        };
        cfg.validate().map_err(|e| ConfigError::at(0, format!("[train]: {e}")))?;
        Ok(cfg)
    }

    /// Cross-field checks that the library cannot see on its own.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let spec = self.spec()?;
        self.train_config(&spec, self.train.init, self.experiment.seed)?;
        for &s in &self.experiment.noise_levels {
            self.spec_at(s).map_err(|e| ConfigError::at(0, format!("`noise_levels`: {}", e.message)))?;
        }
        if self.experiment.samples == 0 {
            return Err(ConfigError::at(0, "[experiment]: `samples` must be positive"));
        }
        if self.model.dictionary == DictionaryKind::Orthonormal && self.model.m > self.model.n {
            return Err(ConfigError::at(0, "[model]: an orthonormal dictionary needs m <= n"));
        }
        Ok(())
    }
}
