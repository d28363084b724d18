mod common;

use aerecover::generative::sign_uniform_upper;
use aerecover::{
    compose, incoherence, sample_batch, sample_code, sample_dictionary, Dict, Family, Matrix, ModelSpec, Rng, Spec,
    Stream, SupportMoments,
};
use common::{gaussian_dict, orthonormal_dict};
use proptest::prelude::*;

#[test]
fn spec_invariants_are_enforced() {
    assert!(Spec::gmm(10, 3, 0.0).validate().is_ok());
    assert!(Spec { k: 2, ..Spec::gmm(10, 3, 0.0) }.validate().is_err());
    assert!(Spec { kappa1: 0.5, ..Spec::sparse_coding(10, 5, 2, 0.0) }.validate().is_err());
    assert!(Spec { a1: 1.5, ..Spec::sparse_coding(10, 5, 2, 0.0) }.validate().is_err());
    assert!(Spec::nonneg(10, 5, 2, 0.8, 0.5, 0.0).validate().is_err());
    assert!(Spec::nonneg(10, 5, 2, 0.5, f64::INFINITY, 0.0).validate().is_err());
    assert!(Spec::sparse_coding(10, 5, 6, 0.0).validate().is_err());
    assert!(Spec::sparse_coding(10, 5, 0, 0.0).validate().is_err());
    assert!(Spec::gmm(10, 3, -0.1).validate().is_err());
    let s = Spec::nonneg(10, 5, 2, 0.5, 1.0, 0.0);
    assert!((s.kappa1 - 0.75).abs() < 1e-15);
    assert!((s.kappa2 - 7.0 / 12.0).abs() < 1e-15);
}

#[test]
fn sign_uniform_law_has_unit_second_moment() {
    for low in [0.1, 0.5, 0.9, 1.0] {
        let b: f64 = sign_uniform_upper(low);
        assert!(((low * low + low * b + b * b) / 3.0 - 1.0).abs() < 1e-12);
    }
    let spec: Spec = ModelSpec::sparse_coding_sign_uniform(20, 40, 3, 0.5, 0.0);
    spec.validate().unwrap();
    let mut rng = Rng::new(3, 2);
    let mut second = 0.0f64;
    let mut count = 0.0;
    for _ in 0..20_000 {
        let c = sample_code(&spec, &mut rng);
        for &v in &c.values {
            assert!(v.abs() >= 0.5 && v.abs() <= spec.a2);
            second += v * v;
            count += 1.0;
        }
    }
    assert!((second / count - 1.0).abs() < 0.02);
}

#[test]
fn gaussian_dictionaries_are_incoherent_at_figure_scale() {
    let spec = Spec::gmm(784, 10, 0.0);
    for seed in 0..50 {
        let d = gaussian_dict(&spec, seed);
        let a = d.matrix();
        let mut worst: f64 = 0.0;
        for i in 0..10 {
            assert!((a.column_norm(i) - 1.0).abs() <= 1e-10);
            for j in 0..10 {
                if i != j {
                    worst = worst.max(common::dot(&a.column(i), &a.column(j)).abs());
                }
            }
        }
        assert!(worst < 0.2, "seed {seed}: max |<A_i, A_j>| = {worst}");
        assert!((d.mu() - incoherence(a).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn orthonormal_dictionary_has_zero_mu() {
    let d = orthonormal_dict(4, 4, 1);
    assert!(d.mu() < 1e-12);
}

#[test]
fn dictionary_is_deterministic() {
    let spec = Spec::gmm(30, 5, 0.0);
    assert_eq!(gaussian_dict(&spec, 8), gaussian_dict(&spec, 8));
    assert_ne!(gaussian_dict(&spec, 8), gaussian_dict(&spec, 9));
}

#[test]
fn dictionary_rejects_non_unit_columns() {
    let m = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 0.9]).unwrap();
    assert!(Dict::from_matrix(m).is_err());
}

#[test]
fn gmm_index_frequencies() {
    let spec = Spec::gmm(5, 10, 0.0);
    let mut rng = Rng::new(1, 2);
    let mut counts = [0usize; 10];
    for _ in 0..100_000 {
        let c = sample_code(&spec, &mut rng);
        assert_eq!(c.support.len(), 1);
        assert_eq!(c.values, vec![1.0]);
        counts[c.support[0]] += 1;
    }
    for c in counts {
        let f = c as f64 / 1e5;
        assert!((f - 0.1).abs() <= 0.01, "frequency {f}");
    }
}

#[test]
fn sparse_code_moments() {
    let spec = Spec::sparse_coding(10, 50, 3, 0.0);
    let mut rng = Rng::new(2, 2);
    let draws = 100_000;
    let mut hits = [0usize; 50];
    let mut sum = [0.0f64; 50];
    let mut sq = [0.0f64; 50];
    for _ in 0..draws {
        let c = sample_code(&spec, &mut rng);
        assert_eq!(c.support.len(), 3);
        assert!(c.support.windows(2).all(|w| w[0] < w[1]));
        for (&i, &v) in c.support.iter().zip(&c.values) {
            assert_eq!(v.abs(), 1.0);
            hits[i] += 1;
            sum[i] += v;
            sq[i] += v * v;
        }
    }
    for i in 0..50 {
        let p = hits[i] as f64 / draws as f64;
        assert!((p - 0.06).abs() <= 0.005, "p_{i} = {p}");
    }
    // pooled over all nonzeros: 3e5 values, standard error about 2e-3
    let total = (3 * draws) as f64;
    assert!((sum.iter().sum::<f64>() / total).abs() <= 0.02);
    assert!((sq.iter().sum::<f64>() / total - 1.0).abs() <= 0.02);
}

#[test]
fn nonneg_values_in_range() {
    let spec = Spec::nonneg(10, 20, 3, 0.5, 1.0, 0.0);
    let mut rng = Rng::new(4, 2);
    let mut total = 0.0;
    let mut count = 0.0;
    for _ in 0..20_000 {
        let c = sample_code(&spec, &mut rng);
        for &v in &c.values {
            assert!((0.5..=1.0).contains(&v));
            total += v;
            count += 1.0;
        }
    }
    assert!((total / count - 0.75).abs() < 0.01);
}

/// Pair and single inclusion frequencies against the uniform size-k subset
/// law, within three binomial standard deviations.
#[test]
fn support_law_is_uniform_subsets() {
    let (m, k, draws) = (8usize, 3usize, 200_000usize);
    let spec = Spec::sparse_coding(4, m, k, 0.0);
    let mut rng = Rng::new(5, 2);
    let mut single = vec![0usize; m];
    let mut pair = vec![vec![0usize; m]; m];
    for _ in 0..draws {
        let s = sample_code(&spec, &mut rng).support;
        for &i in &s {
            single[i] += 1;
            for &j in &s {
                if i < j {
                    pair[i][j] += 1;
                }
            }
        }
    }
    let mo = SupportMoments::<f64>::uniform(k, m);
    assert!((mo.single - 3.0 / 8.0).abs() < 1e-15);
    assert!((mo.pair - 6.0 / 56.0).abs() < 1e-15);
    assert!((mo.triple - 6.0 / 56.0 / 6.0).abs() < 1e-15);
    let band = |p: f64| 3.0 * (p * (1.0 - p) / draws as f64).sqrt();
    for i in 0..m {
        let f = single[i] as f64 / draws as f64;
        assert!((f - mo.single).abs() <= band(mo.single), "p_{i} = {f}");
        for j in i + 1..m {
            let f = pair[i][j] as f64 / draws as f64;
            // 28 pairs, so allow the 3-sigma band plus a Bonferroni margin
            assert!((f - mo.pair).abs() <= 1.3 * band(mo.pair), "p_{i}{j} = {f}");
        }
    }
}

#[test]
fn noiseless_samples_are_exact() {
    let spec = Spec::sparse_coding(16, 12, 3, 0.0);
    let dict = gaussian_dict(&spec, 1);
    let batch = sample_batch(&dict, &spec, 300, &mut Rng::for_stream(1, Stream::Batch)).unwrap();
    for s in &batch {
        assert!(s.eta.iter().all(|&e| e == 0.0));
        let x = s.code.densify(12);
        let ax = dict.matrix().matvec(&x).unwrap();
        for (a, b) in ax.iter().zip(&s.y) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}

#[test]
fn gmm_noise_energy() {
    let spec = Spec::gmm(784, 10, 0.01);
    let dict = gaussian_dict(&spec, 2);
    let batch = sample_batch(&dict, &spec, 10_000, &mut Rng::for_stream(2, Stream::Batch)).unwrap();
    let mean: f64 = batch
        .iter()
        .map(|s| {
            let a = dict.matrix().column(s.code.support[0]);
            common::col_dist(&s.y, &a).powi(2)
        })
        .sum::<f64>()
        / batch.len() as f64;
    assert!((mean - 0.0784).abs() <= 0.1 * 0.0784, "mean residual energy {mean}");
}

#[test]
fn batch_support_frequencies() {
    let spec = Spec::nonneg(8, 20, 4, 0.5, 1.0, 0.0);
    let dict = orthonormal_dict(20, 20, 3);
    let spec = Spec { n: 20, ..spec };
    let n = 50_000;
    let batch = sample_batch(&dict, &spec, n, &mut Rng::for_stream(3, Stream::Batch)).unwrap();
    let mut hits = [0usize; 20];
    for s in &batch {
        for &i in &s.code.support {
            hits[i] += 1;
        }
    }
    let p = 0.2;
    let band = 3.0 * (p * (1.0 - p) / n as f64).sqrt();
    for (i, h) in hits.iter().enumerate() {
        let f = *h as f64 / n as f64;
        assert!((f - p).abs() <= 1.2 * band, "p_{i} = {f}");
    }
}

#[test]
fn batches_do_not_depend_on_thread_count() {
    let spec = Spec::sparse_coding(12, 10, 2, 0.1);
    let dict = gaussian_dict(&spec, 4);
    let draw = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| sample_batch(&dict, &spec, 1000, &mut Rng::for_stream(4, Stream::Batch)).unwrap())
    };
    assert_eq!(draw(1), draw(4));
}

#[test]
fn batch_prefixes_agree_across_sizes() {
    // shards are independent, so a longer batch extends a shorter one
    let spec = Spec::gmm(6, 3, 0.1);
    let dict = gaussian_dict(&spec, 5);
    let short = sample_batch(&dict, &spec, 300, &mut Rng::for_stream(5, Stream::Batch)).unwrap();
    let long = sample_batch(&dict, &spec, 700, &mut Rng::for_stream(5, Stream::Batch)).unwrap();
    assert_eq!(short[..256], long[..256]);
}

#[test]
fn family_names_round_trip() {
    for f in [Family::Gmm, Family::SparseCoding, Family::NonNegSparse] {
        assert_eq!(f.name().parse::<Family>().unwrap(), f);
    }
    assert!("mixture".parse::<Family>().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn samples_reconstruct_from_parts(seed in 0u64..10_000, fam in 0usize..3, sigma in 0.0f64..0.5) {
        let spec = match fam {
            0 => Spec::gmm(9, 4, sigma),
            1 => Spec::sparse_coding(9, 6, 2, sigma),
            _ => Spec::nonneg(9, 6, 3, 0.3, 2.0, sigma),
        };
        let dict = sample_dictionary(&spec, &mut Rng::for_stream(seed, Stream::Dictionary)).unwrap();
        let batch = sample_batch(&dict, &spec, 20, &mut Rng::for_stream(seed, Stream::Batch)).unwrap();
        for s in &batch {
            prop_assert!(s.code.support.len() <= spec.k);
            prop_assert!(s.code.support.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(s.code.support.iter().all(|&i| i < spec.m));
            for &v in &s.code.values {
                prop_assert!(v.abs() >= spec.a1 - 1e-15 && v.abs() <= spec.a2 + 1e-15);
            }
            let y = compose(dict.matrix(), &s.code, &s.eta);
            let x = s.code.densify(spec.m);
            let ax = dict.matrix().matvec(&x).unwrap();
            for r in 0..spec.n {
                prop_assert!((y[r] - s.y[r]).abs() <= 1e-12);
                prop_assert!((ax[r] + s.eta[r] - s.y[r]).abs() <= 1e-12);
            }
        }
    }
}
