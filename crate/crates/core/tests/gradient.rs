mod common;

use aerecover::gradient::nonneg_coefficients;
use aerecover::{
    approx_gradient_sample, batch_gradient, batch_statistics, expected_gradient, expected_gradient_gmm,
    expected_gradient_nonneg, expected_gradient_sparse, loss, monte_carlo_gradient, monte_carlo_statistics,
    nonneg_remainder_budget, sample_batch, Activation, Code, Family, Gradient, Matrix, Obs, Params, Rng, Spec, Stream,
    SupportMoments,
};
use common::{close, col_dist, dot, orthonormal_dict, random_matrix};
use proptest::prelude::*;

/// Per-sample gradient written out with explicit index loops.
fn naive_gradient(p: &Params, y: &[f64]) -> (Matrix, Vec<f64>) {
    let (n, m) = p.weights.shape();
    let mut z = vec![0.0; m];
    for i in 0..m {
        for r in 0..n {
            z[i] += p.weights.get(r, i) * y[r];
        }
        z[i] += p.bias[i];
    }
    let x: Vec<f64> = z.iter().map(|&v| p.activation.apply(v)).collect();
    let mut res = y.to_vec();
    for r in 0..n {
        for i in 0..m {
            res[r] -= p.weights.get(r, i) * x[i];
        }
    }
    let mut g = Matrix::zeros(n, m);
    let mut gb = vec![0.0; m];
    for i in 0..m {
        if x[i] == 0.0 {
            continue;
        }
        let mut wr = 0.0;
        for r in 0..n {
            wr += p.weights.get(r, i) * res[r];
        }
        for r in 0..n {
            g.set(r, i, -(z[i] * res[r] + wr * y[r]));
        }
        gb[i] = -wr;
    }
    (g, gb)
}

fn obs(y: Vec<f64>) -> Obs {
    let n = y.len();
    Obs {
        y,
        code: Code::new(vec![], vec![]).unwrap(),
        eta: vec![0.0; n],
    }
}

fn max_diff(a: &Matrix, b: &Matrix) -> f64 {
    a.sub(b).unwrap().max_abs()
}

#[test]
fn single_sample_matches_naive_loops() {
    let w = random_matrix(7, 4, 1);
    let y: Vec<f64> = random_matrix(7, 1, 2).column(0);
    for act in [Activation::Relu, Activation::Threshold(0.8)] {
        let p = Params::new(w.clone(), vec![0.3, -0.2, 0.1, -1.0], act).unwrap();
        let g = approx_gradient_sample(&p, &y).unwrap();
        let (naive, nb) = naive_gradient(&p, &y);
        assert!(max_diff(&g.columns, &naive) < 1e-12);
        for (a, b) in g.bias.unwrap().iter().zip(&nb) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(g.n_samples, 1);
        assert!(g.std_err.is_none());
    }
}

#[test]
fn batch_of_one_and_duplicates() {
    let p = Params::new(random_matrix(6, 3, 3), vec![0.1; 3], Activation::Relu).unwrap();
    let y = random_matrix(6, 1, 4).column(0);
    let single = approx_gradient_sample(&p, &y).unwrap();
    let one = batch_gradient(&p, &[obs(y.clone())]).unwrap();
    assert!(max_diff(&single.columns, &one.columns) < 1e-12);
    let eight = batch_gradient(&p, &vec![obs(y); 8]).unwrap();
    assert!(max_diff(&single.columns, &eight.columns) < 1e-12);
    assert_eq!(eight.n_samples, 8);
    // identical samples have zero spread, up to rounding in the
    // sum-of-squares variance, which is of order sqrt(eps) |g|
    assert!(eight.std_err.unwrap().max_abs() <= 1e-7 * (1.0 + single.columns.max_abs()));
}

#[test]
fn batch_mean_is_sample_average() {
    let p = Params::new(random_matrix(5, 3, 5), vec![0.2, -0.1, 0.0], Activation::Relu).unwrap();
    let ys: Vec<Vec<f64>> = (0..600).map(|s| random_matrix(5, 1, 100 + s).column(0)).collect();
    let batch: Vec<Obs> = ys.iter().cloned().map(obs).collect();
    let g = batch_gradient(&p, &batch).unwrap();
    let mut mean = Matrix::zeros(5, 3);
    for y in &ys {
        mean = mean.add(&naive_gradient(&p, y).0).unwrap();
    }
    let mean = mean.scale(1.0 / 600.0);
    assert!(max_diff(&g.columns, &mean) < 1e-12);
    let stats = batch_statistics(&p, &batch, None).unwrap();
    let mean_loss = ys.iter().map(|y| loss(&p, y).unwrap()).sum::<f64>() / 600.0;
    assert!((stats.mean_loss - mean_loss).abs() < 1e-12);
}

#[test]
fn empty_batch_is_an_error() {
    let p = Params::new(random_matrix(3, 2, 1), vec![0.0; 2], Activation::Relu).unwrap();
    assert!(batch_gradient(&p, &[]).is_err());
}

#[test]
fn oracles_vanish_at_the_dictionary() {
    let a = orthonormal_dict(12, 12, 1).into_matrix();
    let g = expected_gradient_gmm(&a, &[0.0; 12], &a).unwrap();
    assert!(g.columns.max_abs() < 1e-15);
    let sparse = Spec::sparse_coding(12, 12, 3, 0.0);
    let g = expected_gradient(&a, &[0.0; 12], &a, &sparse).unwrap();
    assert!(g.columns.max_abs() < 1e-14);
    // W = A and noiseless data: every sample is reconstructed exactly
    let dict = orthonormal_dict(12, 12, 1);
    let p = Params::new(a.clone(), vec![0.0; 12], Activation::Threshold(0.5)).unwrap();
    let batch = sample_batch(&dict, &sparse, 500, &mut Rng::for_stream(1, Stream::Batch)).unwrap();
    assert!(batch_gradient(&p, &batch).unwrap().columns.max_abs() < 1e-13);
}

#[test]
fn gmm_oracle_example() {
    // W = A with bias beta: g_i = -p A_i + p (1 + beta)^2 A_i
    let a = orthonormal_dict(8, 4, 2).into_matrix();
    let beta = -0.3;
    let g = expected_gradient_gmm(&a, &[beta; 4], &a).unwrap();
    let c = 0.25 * ((1.0 + beta) * (1.0 + beta) - 1.0);
    assert!(max_diff(&g.columns, &a.scale(c)) < 1e-15);
    for gb in g.bias.unwrap() {
        assert!((gb + 0.25 * 0.3).abs() < 1e-15);
    }
}

#[test]
fn sparse_oracle_is_affine_in_pair_probability() {
    let a = orthonormal_dict(10, 6, 3).into_matrix();
    let w = close(&a, 0.2, 3);
    let base = SupportMoments::<f64>::uniform(2, 6);
    let at = |c: f64| expected_gradient_sparse(&w, &a, &base.scaled_pairs(c)).unwrap().columns;
    let (g0, g1, g3) = (at(0.0), at(1.0), at(3.0));
    let want = g0.add(&g1.sub(&g0).unwrap().scale(3.0)).unwrap();
    assert!(max_diff(&g3, &want) < 1e-14);
    // with no pairs only the single-unit terms remain
    for i in 0..6 {
        let (wi, ai) = (w.column(i), a.column(i));
        let l = dot(&wi, &ai);
        let col: Vec<f64> = wi.iter().zip(&ai).map(|(x, y)| base.single * (l * l * x - l * y)).collect();
        assert!(col_dist(&g0.column(i), &col) < 1e-15);
    }
}

#[test]
fn nonneg_reduces_without_first_moment() {
    let a = orthonormal_dict(9, 5, 4).into_matrix();
    let w = close(&a, 0.2, 4);
    let spec = Spec {
        kappa1: 0.0,
        ..Spec::nonneg(9, 5, 2, 0.5, 1.0, 0.0)
    };
    let mo = spec.support_moments();
    let (alpha, beta) = nonneg_coefficients(&w, &[0.0; 5], &a, &spec, &mo).unwrap();
    for i in 0..5 {
        let l = dot(&w.column(i), &a.column(i));
        let others = (0..5).filter(|&j| j != i);
        let sc2: f64 = others.clone().map(|j| dot(&w.column(i), &a.column(j)).powi(2)).sum();
        let swu: f64 = others.map(|j| dot(&w.column(i), &w.column(j)) * dot(&w.column(j), &a.column(i))).sum();
        let k2 = spec.kappa2;
        assert!((alpha[i] - (k2 * mo.single * l * l + k2 * mo.pair * sc2)).abs() < 1e-14);
        assert!((beta[i] - (k2 * mo.single * l - k2 * mo.pair * swu)).abs() < 1e-14);
    }
    let g = expected_gradient_nonneg(&w, &[0.0; 5], &a, &spec, &mo).unwrap();
    for i in 0..5 {
        let col: Vec<f64> = w.column(i).iter().zip(a.column(i)).map(|(x, y)| alpha[i] * x - beta[i] * y).collect();
        assert!(col_dist(&g.column(i), &col) < 1e-15);
    }
}

/// Worst column distance between the Monte Carlo mean and the oracle, in
/// units of the column standard error after removing `allowance`.
fn worst_excess(mc: &Gradient, oracle: &Gradient, allowance: f64) -> f64 {
    (0..mc.columns.cols())
        .map(|i| (col_dist(&mc.column(i), &oracle.column(i)) - allowance) / mc.column_std_err(i).unwrap())
        .fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn gmm_monte_carlo_matches_oracle() {
    let spec = Spec::gmm(64, 8, 0.0);
    let dict = orthonormal_dict(64, 8, 5);
    let w = close(dict.matrix(), 0.3, 5);
    let p = Params::new(w.clone(), vec![0.0; 8], Activation::Threshold(0.5)).unwrap();
    let mc = monte_carlo_gradient(&p, &dict, &spec, 200_000, &mut Rng::for_stream(5, Stream::Evaluation)).unwrap();
    let oracle = expected_gradient(&w, &[0.0; 8], dict.matrix(), &spec).unwrap();
    let excess = worst_excess(&mc, &oracle, 0.0);
    assert!(excess <= 5.0, "{excess} standard errors");
}

#[test]
fn sparse_monte_carlo_matches_oracle() {
    let spec = Spec::sparse_coding(32, 32, 2, 0.0);
    let dict = orthonormal_dict(32, 32, 6);
    let w = close(dict.matrix(), 0.05, 6);
    let p = Params::new(w.clone(), vec![0.0; 32], Activation::Threshold(0.5)).unwrap();
    let mc = monte_carlo_gradient(&p, &dict, &spec, 200_000, &mut Rng::for_stream(6, Stream::Evaluation)).unwrap();
    let oracle = expected_gradient(&w, &[0.0; 32], dict.matrix(), &spec).unwrap();
    let excess = worst_excess(&mc, &oracle, 0.0);
    assert!(excess <= 5.0, "{excess} standard errors");
}

#[test]
fn nonneg_monte_carlo_matches_oracle() {
    let spec = Spec::nonneg(32, 32, 2, 0.5, 1.0, 0.0);
    let dict = orthonormal_dict(32, 32, 7);
    let w = close(dict.matrix(), 0.05, 7);
    let b = vec![-0.1; 32];
    let p = Params::new(w.clone(), b.clone(), Activation::Relu).unwrap();
    let mc = monte_carlo_gradient(&p, &dict, &spec, 200_000, &mut Rng::for_stream(7, Stream::Evaluation)).unwrap();
    let oracle = expected_gradient(&w, &b, dict.matrix(), &spec).unwrap();
    let budget = nonneg_remainder_budget(&spec, &spec.support_moments());
    let excess = worst_excess(&mc, &oracle, budget);
    assert!(excess <= 5.0, "{excess} standard errors beyond the remainder budget");
}

#[test]
fn gmm_bias_gradient_matches_oracle() {
    let spec = Spec::gmm(64, 8, 0.0);
    let dict = orthonormal_dict(64, 8, 8);
    let w = close(dict.matrix(), 0.1, 8);
    let b = vec![-0.4; 8];
    let p = Params::new(w.clone(), b.clone(), Activation::Relu).unwrap();
    let mc = monte_carlo_gradient(&p, &dict, &spec, 100_000, &mut Rng::for_stream(8, Stream::Evaluation)).unwrap();
    let oracle = expected_gradient_gmm(&w, &b, dict.matrix()).unwrap();
    let (mb, ob, se) = (mc.bias.unwrap(), oracle.bias.unwrap(), mc.bias_std_err.unwrap());
    for i in 0..8 {
        assert!((ob[i] + 0.4 / 8.0).abs() < 1e-15);
        assert!((mb[i] - ob[i]).abs() <= 5.0 * se[i] + 1e-12, "unit {i}: {} vs {}", mb[i], ob[i]);
    }
}

#[test]
fn standard_error_shrinks_as_inverse_root() {
    let spec = Spec::sparse_coding(16, 16, 2, 0.05);
    let dict = orthonormal_dict(16, 16, 9);
    let p = Params::new(close(dict.matrix(), 0.1, 9), vec![0.0; 16], Activation::Threshold(0.5)).unwrap();
    let sizes = [1_000usize, 4_000, 16_000, 64_000];
    let se: Vec<f64> = sizes
        .iter()
        .map(|&n| {
            let g = monte_carlo_gradient(&p, &dict, &spec, n, &mut Rng::for_stream(9, Stream::Evaluation)).unwrap();
            (0..16).map(|i| g.column_std_err(i).unwrap()).sum::<f64>()
        })
        .collect();
    // least-squares slope of log se against log n
    let xs: Vec<f64> = sizes.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = se.iter().map(|s| s.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / 4.0, ys.iter().sum::<f64>() / 4.0);
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    assert!((slope + 0.5).abs() <= 0.1, "slope {slope}");
}

/// Central finite differences of the loss with the encoder input treated as
/// fixed. With `x` frozen, the loss is `1/2 ||y - W x||^2` and its gradient
/// in `W_i` is `-x_i (y - W x)`. The approximate gradient adds the
/// chain-rule term `-<W_i, r> y` through `x_i = W_i^T y + b_i` on active
/// units; the sum of both is checked here against full finite differences
/// away from activation kinks.
#[test]
fn matches_finite_differences_away_from_kinks() {
    let h = 1e-6;
    let mut checked = 0;
    for seed in 0..20u64 {
        let (n, m) = (6, 4);
        let w = random_matrix(n, m, 200 + seed).scale(0.5);
        let y = random_matrix(n, 1, 300 + seed).column(0);
        let p = Params::new(w.clone(), vec![0.05; m], Activation::Relu).unwrap();
        let z: Vec<f64> = (0..m).map(|i| dot(&w.column(i), &y) + 0.05).collect();
        if z.iter().any(|v| v.abs() < 1e-3) {
            continue;
        }
        let g = approx_gradient_sample(&p, &y).unwrap();
        for r in 0..n {
            for i in 0..m {
                let bump = |d: f64| {
                    let mut wp = w.clone();
                    wp.set(r, i, w.get(r, i) + d);
                    loss(&Params::new(wp, vec![0.05; m], Activation::Relu).unwrap(), &y).unwrap()
                };
                let fd = (bump(h) - bump(-h)) / (2.0 * h);
                let an = g.columns.get(r, i);
                assert!((fd - an).abs() <= 1e-6 * (1.0 + an.abs()), "seed {seed} ({r},{i}): {fd} vs {an}");
            }
        }
        checked += 1;
    }
    assert!(checked >= 15);
}

#[test]
fn streaming_equals_batch_bitwise() {
    for (spec, seed) in [
        (Spec::gmm(10, 4, 0.1), 1u64),
        (Spec::sparse_coding(10, 6, 2, 0.1), 2),
        (Spec::nonneg(10, 6, 2, 0.5, 1.0, 0.1), 3),
    ] {
        let dict = aerecover::sample_dictionary(&spec, &mut Rng::for_stream(seed, Stream::Dictionary)).unwrap();
        let p = Params::new(close(dict.matrix(), 0.2, seed), vec![-0.1; spec.m], Activation::Relu).unwrap();
        for count in [1usize, 255, 256, 257, 5000, 20_000] {
            let streamed =
                monte_carlo_statistics(&p, &dict, &spec, count, &mut Rng::for_stream(seed, Stream::Batch)).unwrap();
            let batch = sample_batch(&dict, &spec, count, &mut Rng::for_stream(seed, Stream::Batch)).unwrap();
            let direct = batch_statistics(&p, &batch, Some(spec.family)).unwrap();
            assert_eq!(streamed, direct, "{} with {count} samples", spec.family.name());
        }
    }
}

#[test]
fn reductions_ignore_thread_count() {
    let spec = Spec::sparse_coding(12, 8, 2, 0.1);
    let dict = orthonormal_dict(12, 8, 10);
    let p = Params::new(close(dict.matrix(), 0.1, 10), vec![0.0; 8], Activation::Threshold(0.5)).unwrap();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
            monte_carlo_statistics(&p, &dict, &spec, 40_000, &mut Rng::for_stream(10, Stream::Evaluation)).unwrap()
        })
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn consistency_rate_counts_recovered_codes() {
    let spec = Spec::gmm(32, 4, 0.0);
    let dict = orthonormal_dict(32, 4, 11);
    let batch = sample_batch(&dict, &spec, 300, &mut Rng::for_stream(11, Stream::Batch)).unwrap();
    let good = Params::new(dict.matrix().clone(), vec![-0.5; 4], Activation::Relu).unwrap();
    assert_eq!(batch_statistics(&good, &batch, Some(Family::Gmm)).unwrap().consistency_rate, 1.0);
    assert_eq!(batch_statistics(&good, &batch, None).unwrap().consistency_rate, 0.0);
    let silent = Params::new(dict.matrix().clone(), vec![-2.0; 4], Activation::Relu).unwrap();
    let s = batch_statistics(&silent, &batch, Some(Family::Gmm)).unwrap();
    assert_eq!(s.consistency_rate, 0.0);
    assert_eq!(s.gradient.columns.max_abs(), 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sample_gradient_matches_naive(seed in 0u64..100_000, n in 1usize..7, m in 1usize..5, relu in any::<bool>()) {
        let act = if relu { Activation::Relu } else { Activation::Threshold(0.4) };
        let bias: Vec<f64> = random_matrix(m, 1, seed + 1).column(0).iter().map(|v| 0.3 * v).collect();
        let p = Params::new(random_matrix(n, m, seed), bias, act).unwrap();
        let y = random_matrix(n, 1, seed + 2).column(0);
        let g = approx_gradient_sample(&p, &y).unwrap();
        let (naive, nb) = naive_gradient(&p, &y);
        prop_assert!(max_diff(&g.columns, &naive) <= 1e-12);
        for (a, b) in g.bias.unwrap().iter().zip(&nb) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn inactive_units_have_zero_columns(seed in 0u64..100_000) {
        let p = Params::new(random_matrix(5, 4, seed), vec![-0.5; 4], Activation::Relu).unwrap();
        let y = random_matrix(5, 1, seed + 7).column(0);
        let x = aerecover::encode(&p, &y).unwrap().x;
        let g = approx_gradient_sample(&p, &y).unwrap();
        for i in 0..4 {
            if x[i] == 0.0 {
                prop_assert!(g.column(i).iter().all(|&v| v == 0.0));
            }
        }
    }
}
