//! Orchestration behind the subcommands.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use aerecover::io::{claims_csv, match_csv, write_matrix};
use aerecover::{
    closeness, correlation_margins, data_matrix, delta_close, expected_gradient, hungarian_match,
    sample_batch, sample_dictionary, train, verify_claim_bounds, ClaimReport, Dict, Dictionary, Family,
    Match, Matrix, Params, Rng, Spec, Stream, TrainTrace,
};
use rayon::prelude::*;

use crate::config::{DictionaryKind, ExperimentConfig, InitKind};
use crate::svg::{line_plot, Series};

/// Stream id for per-cell seeds of the experiment grids.
const GRID_STREAM: u64 = 16;

pub const FIG2_HEADER: &str = "iter,perturbed,pca,random";
const FIG2_INITS: [InitKind; 3] = [InitKind::Perturbed, InitKind::Pca, InitKind::Random];

/// Ground-truth dictionary. Depends only on the seed, so every noise level
/// and initialization of a grid shares it.
pub fn dictionary(cfg: &ExperimentConfig, spec: &Spec, seed: u64) -> anyhow::Result<Dict> {
    let mut rng = Rng::for_stream(seed, Stream::Dictionary);
    Ok(match cfg.model.dictionary {
        DictionaryKind::Gaussian => sample_dictionary(spec, &mut rng)?,
        DictionaryKind::Orthonormal => Dictionary::orthonormal(spec.n, spec.m, &mut rng)?,
    })
}

/// Training seed of a grid cell. Keyed on the noise level only, so the
/// initializations at one noise level see the same batches.
pub fn cell_seed(seed: u64, sigma_eta: f64) -> u64 {
    Rng::new(seed, GRID_STREAM).derive(sigma_eta.to_bits()).next_u64()
}

pub struct Generated {
    pub dictionary: Dict,
    pub data: Matrix,
}

/// Dictionary plus `samples` observations stacked as columns.
pub fn generate(cfg: &ExperimentConfig, seed: u64) -> anyhow::Result<Generated> {
    let spec = cfg.spec()?;
    let dict = dictionary(cfg, &spec, seed)?;
    let mut rng = Rng::for_stream(seed, Stream::Batch);
    let samples = sample_batch(&dict, &spec, cfg.experiment.samples, &mut rng)?;
    Ok(Generated { data: data_matrix(&samples)?, dictionary: dict })
}

pub struct Run {
    pub init: InitKind,
    pub sigma_eta: f64,
    pub params: Params,
    pub trace: TrainTrace,
}

pub fn train_cell(
    cfg: &ExperimentConfig,
    dict: &Dict,
    init: InitKind,
    sigma_eta: f64,
    seed: u64,
) -> anyhow::Result<Run> {
    let spec = cfg.spec_at(sigma_eta)?;
    let tc = cfg.train_config(&spec, init, seed)?;
    let (params, trace) = train(dict, &spec, &tc)?;
    Ok(Run { init, sigma_eta, params, trace })
}

/// One run with the configured initialization and noise level.
pub fn train_single(cfg: &ExperimentConfig, seed: u64) -> anyhow::Result<(Dict, Run)> {
    let spec = cfg.spec()?;
    let dict = dictionary(cfg, &spec, seed)?;
    let run = train_cell(cfg, &dict, cfg.train.init, cfg.model.sigma_eta, seed)?;
    Ok((dict, run))
}

/// Runs every (init, noise level) cell. Cells are independent and run in
/// parallel; the output order is noise-major, then the configured init order.
pub fn run_grid(
    cfg: &ExperimentConfig,
    seed: u64,
    inits: &[InitKind],
    levels: &[f64],
) -> anyhow::Result<(Dict, Vec<Run>)> {
    let spec = cfg.spec()?;
    let dict = dictionary(cfg, &spec, seed)?;
    let cells: Vec<(f64, InitKind)> = levels.iter().flat_map(|&s| inits.iter().map(move |&i| (s, i))).collect();
    let runs = cells
        .par_iter()
        .map(|&(s, i)| train_cell(cfg, &dict, i, s, cell_seed(seed, s)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok((dict, runs))
}

pub fn fig1_file_name(init: InitKind, sigma_eta: f64) -> String {
    format!("fig1_{}_sigma{sigma_eta}.csv", init.word())
}

/// Learning curves for every init and noise level of the config.
pub fn reproduce_fig1(cfg: &ExperimentConfig, seed: u64) -> anyhow::Result<Vec<Run>> {
    Ok(run_grid(cfg, seed, &cfg.experiment.inits, &cfg.experiment.noise_levels)?.1)
}

pub fn write_fig1(runs: &[Run], out: &Path, svg: bool) -> anyhow::Result<Vec<PathBuf>> {
    fs::create_dir_all(out)?;
    let mut written = Vec::new();
    for r in runs {
        let path = out.join(fig1_file_name(r.init, r.sigma_eta));
        fs::write(&path, r.trace.to_csv())?;
        written.push(path);
    }
    if svg {
        let mut inits: Vec<InitKind> = Vec::new();
        for r in runs {
            if !inits.contains(&r.init) {
                inits.push(r.init);
            }
        }
        for init in inits {
            let curves: Vec<(String, Vec<f64>)> = runs
                .iter()
                .filter(|r| r.init == init)
                .map(|r| (format!("sigma {}", r.sigma_eta), r.trace.records.iter().map(|t| t.loss).collect()))
                .collect();
            let series: Vec<Series<'_>> =
                curves.iter().map(|(l, v)| Series { label: l, values: v }).collect();
            let path = out.join(format!("fig1_{}.svg", init.word()));
            fs::write(&path, line_plot(&format!("{} initialization", init.word()), "loss", &series))?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Matched squared Frobenius error per iteration for the three
/// initializations at the configured noise level.
pub fn reproduce_fig2(cfg: &ExperimentConfig, seed: u64) -> anyhow::Result<Vec<Run>> {
    Ok(run_grid(cfg, seed, &FIG2_INITS, &[cfg.model.sigma_eta])?.1)
}

/// CSV with one column per initialization, in the order of the header.
pub fn fig2_csv(runs: &[Run]) -> anyhow::Result<String> {
    let cols: Vec<&TrainTrace> = FIG2_INITS
        .iter()
        .map(|i| {
            runs.iter()
                .find(|r| r.init == *i)
                .map(|r| &r.trace)
                .ok_or_else(|| anyhow::anyhow!("missing {} run", i.word()))
        })
        .collect::<anyhow::Result<_>>()?;
    let rows = cols.iter().map(|t| t.records.len()).min().unwrap_or(0);
    let mut out = String::from(FIG2_HEADER);
    out.push('\n');
    for s in 0..rows {
        let _ = write!(out, "{}", cols[0].records[s].iter);
        for t in &cols {
            let _ = write!(out, ",{:.16e}", t.records[s].frob_err);
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_fig2(runs: &[Run], out: &Path, svg: bool) -> anyhow::Result<Vec<PathBuf>> {
    fs::create_dir_all(out)?;
    let path = out.join("fig2.csv");
    fs::write(&path, fig2_csv(runs)?)?;
    let mut written = vec![path];
    if svg {
        let curves: Vec<(&str, Vec<f64>)> = runs
            .iter()
            .map(|r| (r.init.word(), r.trace.records.iter().map(|t| t.frob_err).collect()))
            .collect();
        let series: Vec<Series<'_>> = curves.iter().map(|(l, v)| Series { label: l, values: v }).collect();
        let p = out.join("fig2.svg");
        fs::write(&p, line_plot("matched squared Frobenius error", "||W - A||^2", &series))?;
        written.push(p);
    }
    Ok(written)
}

/// Claim checks plus the correlation inequality on
/// `verify_instances` exactly `verify_delta`-close weight matrices. The
/// `samples` budget is split evenly across instances.
pub fn verify(cfg: &ExperimentConfig, seed: u64) -> anyhow::Result<Vec<ClaimReport>> {
    let spec = cfg.spec()?;
    let dict = dictionary(cfg, &spec, seed)?;
    let a = dict.matrix();
    let ex = &cfg.experiment;
    let instances = ex.verify_instances.max(1);
    let per = (ex.samples / instances).max(1);
    let base = Rng::for_stream(seed, Stream::Verify);
    let reports = (0..instances as u64)
        .into_par_iter()
        .map(|inst| {
            let mut rng = base.derive(inst);
            let w = delta_close(a, ex.verify_delta, &mut rng)?;
            let samples = sample_batch(&dict, &spec, per, &mut rng)?;
            let mut reports = verify_claim_bounds(&w, a, &samples, &spec)?;
            reports.push(correlation_report(&w, a, &spec)?);
            Ok(reports)
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let mut merged: Vec<ClaimReport> = Vec::new();
    for rs in reports {
        for r in rs {
            match merged.iter_mut().find(|m| m.claim_id == r.claim_id) {
                Some(m) => m.absorb(&r),
                None => merged.push(r),
            }
        }
    }
    Ok(merged)
}

/// Correlation inequality for the closed-form gradient, one instance per
/// column. Margin is slack over the allowed budget. Evaluated at zero bias,
/// where the mixture inequality's precondition `|(b + l)^2 - l| <= 2 (1 - l)`
/// holds for every `l = <W_i, A_i>`.
fn correlation_report(w: &Matrix, a: &Matrix, spec: &Spec) -> anyhow::Result<ClaimReport> {
    let b = 0.0;
    let g = expected_gradient(w, &vec![b; spec.m], a, spec)?;
    let cm = correlation_margins(&g, w, a, spec)?;
    let slack: Vec<f64> = cm.margins.iter().zip(&cm.budgets).map(|(m, b)| m + b).collect();
    Ok(ClaimReport {
        claim_id: "correlation".into(),
        instances: slack.len(),
        violations: slack.iter().filter(|&&s| s < 0.0).count(),
        worst_margin: slack.iter().copied().fold(f64::INFINITY, f64::min),
        allowed_failure_rate: 0.0,
    })
}

pub fn write_verify(reports: &[ClaimReport], out: &Path) -> anyhow::Result<PathBuf> {
    fs::create_dir_all(out)?;
    let path = out.join("claims.csv");
    fs::write(&path, claims_csv(reports))?;
    Ok(path)
}

/// Matches the columns of `w` to those of `a`; sign flips only for
/// sparse coding.
pub fn match_files(w: &Path, a: &Path, family: Family) -> anyhow::Result<(Match, String)> {
    let wm: Matrix = aerecover::io::read_matrix(w).map_err(|e| anyhow::anyhow!("{}: {e}", w.display()))?;
    let am: Matrix = aerecover::io::read_matrix(a).map_err(|e| anyhow::anyhow!("{}: {e}", a.display()))?;
    let mr = hungarian_match(&wm, &am, family.allows_sign_flip())?;
    let csv = match_csv(&mr);
    Ok((mr, csv))
}

/// Writes `trace.csv`, `weights.mat`, `bias.mat` and `dictionary.mat`.
pub fn write_train(dict: &Dict, run: &Run, out: &Path, svg: bool) -> anyhow::Result<Vec<PathBuf>> {
    fs::create_dir_all(out)?;
    let trace = out.join("trace.csv");
    fs::write(&trace, run.trace.to_csv())?;
    let weights = out.join("weights.mat");
    write_matrix(&weights, &run.params.weights)?;
    let bias = out.join("bias.mat");
    write_matrix(&bias, &Matrix::from_vec(1, run.params.bias.len(), run.params.bias.clone())?)?;
    let dictionary = out.join("dictionary.mat");
    write_matrix(&dictionary, dict.matrix())?;
    let mut written = vec![trace, weights, bias, dictionary];
    if svg {
        let loss: Vec<f64> = run.trace.records.iter().map(|r| r.loss).collect();
        let frob: Vec<f64> = run.trace.records.iter().map(|r| r.frob_err).collect();
        let p = out.join("trace.svg");
        fs::write(
            &p,
            line_plot(
                "training trace",
                "value",
                &[Series { label: "loss", values: &loss }, Series { label: "||W - A||^2", values: &frob }],
            ),
        )?;
        written.push(p);
    }
    Ok(written)
}

pub fn write_generated(g: &Generated, out: &Path) -> anyhow::Result<Vec<PathBuf>> {
    fs::create_dir_all(out)?;
    let d = out.join("dictionary.mat");
    write_matrix(&d, g.dictionary.matrix())?;
    let y = out.join("data.mat");
    write_matrix(&y, &g.data)?;
    Ok(vec![d, y])
}

/// Closeness of trained weights, for the run summary line.
pub fn final_closeness(dict: &Dict, params: &Params, family: Family) -> anyhow::Result<f64> {
    Ok(closeness(&params.weights, dict.matrix(), family.allows_sign_flip())?.0)
}
