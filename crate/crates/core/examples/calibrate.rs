//! Fits the residual constants used by the correlation and remainder
//! checks. Run with `cargo run --release --example calibrate`.
//!
//! Calibration seeds (1000..) are disjoint from the seeds used in tests.

use aerecover::*;

fn oracle_vs_mc(spec: &Spec, w: &Matrix, b: &[f64], act: Activation<f64>, dict: &Dict, n: usize, seed: u64) -> Vec<(f64, f64)> {
    let p = Params::new(w.clone(), b.to_vec(), act).unwrap();
    let mut rng = Rng::new(seed, 99);
    let mc = monte_carlo_gradient(&p, dict, spec, n, &mut rng).unwrap();
    let or = expected_gradient(w, b, dict.matrix(), spec).unwrap();
    (0..spec.m)
        .map(|i| {
            let d: f64 = mc.column(i).iter().zip(or.column(i)).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            (d, mc.column_std_err(i).unwrap())
        })
        .collect()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let what = args.get(1).map(String::as_str).unwrap_or("all");
    if what == "all" || what == "mc" {
        for (name, spec, delta) in [
            ("gmm", Spec::gmm(784, 10, 0.0), 0.1),
            ("sparse", Spec::sparse_coding(32, 32, 2, 0.0), 0.05),
            ("nonneg", Spec::nonneg(32, 32, 2, 0.5, 1.0, 0.0), 0.05),
        ] {
            for seed in 1000..1003u64 {
                let mut r = Rng::for_stream(seed, Stream::Dictionary);
                let dict = if spec.family == Family::Gmm {
                    sample_dictionary(&spec, &mut r).unwrap()
                } else {
                    Dict::orthonormal(spec.n, spec.m, &mut r).unwrap()
                };
                let mut r = Rng::for_stream(seed, Stream::Init);
                let w = delta_close(dict.matrix(), delta, &mut r).unwrap();
                let (b, act) = match spec.family {
                    Family::Gmm => (vec![-0.2; spec.m], Activation::Relu),
                    _ => (vec![0.0; spec.m], Activation::Threshold(spec.a1 / 2.0)),
                };
                let t = std::time::Instant::now();
                let res = oracle_vs_mc(&spec, &w, &b, act, &dict, 200_000, seed);
                let worst = res.iter().map(|(d, s)| d / s).fold(0.0, f64::max);
                let worst_abs = res.iter().map(|(d, _)| *d).fold(0.0, f64::max);
                println!("{name} seed {seed}: worst |mc-oracle|/se = {worst:.2}, worst abs {worst_abs:.3e}, mu {:.2} ({:?})", dict.mu(), t.elapsed());
            }
        }
    }

    if what == "all" || what == "remainder" {
        // nonneg remainder: (||mc - oracle|| - 5 se) / (max(k1^2, k2^2) p k / m)
        let spec = Spec::nonneg(32, 32, 2, 0.5, 1.0, 0.0);
        let unit = nonneg_remainder_budget(&spec, &spec.support_moments()) / aerecover::gradient::NONNEG_REMAINDER_C;
        let mut worst: f64 = 0.0;
        for seed in 1000..1010u64 {
            let mut r = Rng::for_stream(seed, Stream::Dictionary);
            let dict = Dict::orthonormal(32, 32, &mut r).unwrap();
            let mut r = Rng::for_stream(seed, Stream::Init);
            let delta = 0.02 + 0.08 * r.unit();
            let w = delta_close(dict.matrix(), delta, &mut r).unwrap();
            let res = oracle_vs_mc(&spec, &w, &vec![0.0; 32], Activation::Threshold(0.25), &dict, 1_000_000, seed);
            for (d, s) in res {
                worst = worst.max((d - 5.0 * s) / unit);
            }
        }
        println!("nonneg remainder: worst required C = {worst:.4}");
    }
    if what == "all" || what == "corr" {
        for spec in [Spec::gmm(784, 10, 0.0), Spec::sparse_coding(32, 32, 2, 0.0), Spec::nonneg(32, 32, 2, 0.5, 1.0, 0.0)] {
            let mut worst_ratio: f64 = f64::NEG_INFINITY;
            let mut worst_margin: f64 = f64::INFINITY;
            for seed in 1000..1100u64 {
                let mut r = Rng::for_stream(seed, Stream::Dictionary);
                let dict = if spec.family == Family::Gmm {
                    sample_dictionary(&spec, &mut r).unwrap()
                } else {
                    Dict::orthonormal(spec.n, spec.m, &mut r).unwrap()
                };
                let mut r = Rng::for_stream(seed, Stream::Init);
                let delta = 0.1 * (1.0 - r.unit());
                let w = delta_close(dict.matrix(), delta, &mut r).unwrap();
                let g = expected_gradient(&w, &vec![0.0; spec.m], dict.matrix(), &spec).unwrap();
                let c = correlation_margins(&g, &w, dict.matrix(), &spec).unwrap();
                let constant = match spec.family {
                    Family::Gmm => 1.0,
                    Family::SparseCoding => aerecover::metrics::SPARSE_CORRELATION_C,
                    Family::NonNegSparse => aerecover::metrics::NONNEG_CORRELATION_C,
                };
                for (m, b) in c.margins.iter().zip(&c.budgets) {
                    worst_ratio = worst_ratio.max(-m / (b / constant));
                    worst_margin = worst_margin.min(*m);
                }
            }
            println!("{}: worst margin {worst_margin:.3e}, required C = {worst_ratio:.4e}", spec.family);
        }
    }
}
