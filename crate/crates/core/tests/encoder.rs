mod common;

use aerecover::{
    bias_interval, code_consistent, decode, encode, gmm_relu_bias_interval, loss, relu_bias_interval, sample_batch,
    threshold_level, Activation, Family, Matrix, Params, Rng, Spec, Stream,
};
use common::{close, orthonormal_dict};
use proptest::prelude::*;

#[test]
fn bias_interval_endpoints() {
    let g = gmm_relu_bias_interval(0.1f64);
    assert!((g.low + 0.8).abs() < 1e-15 && (g.high + 0.2).abs() < 1e-15);
    assert!((g.midpoint() + 0.5).abs() < 1e-15);
    assert!(gmm_relu_bias_interval(0.3).is_empty());
    let r = relu_bias_interval(0.5f64, 1.0, 0.05, 4);
    assert!((r.low - (-0.95 * 0.5 + 0.1)).abs() < 1e-15);
    assert!((r.high + 0.1).abs() < 1e-15);
    assert!(r.contains(r.midpoint()) && !r.contains(0.0));
    assert_eq!(bias_interval(&Spec::gmm(4, 2, 0.0), 0.1), g);
    let spec = Spec::nonneg(4, 8, 4, 0.5, 1.0, 0.0);
    assert_eq!(bias_interval(&spec, 0.05), r);
    assert_eq!(threshold_level(&spec), 0.25);
}

#[test]
fn exact_weights_give_exact_codes() {
    // orthonormal W = A, no noise: the threshold encoder reads the code back
    let spec = Spec { n: 16, ..Spec::sparse_coding(16, 16, 3, 0.0) };
    let dict = orthonormal_dict(16, 16, 2);
    let p = Params::new(dict.matrix().clone(), vec![0.0; 16], Activation::Threshold(threshold_level(&spec))).unwrap();
    for s in sample_batch(&dict, &spec, 200, &mut Rng::for_stream(2, Stream::Batch)).unwrap() {
        let x = encode(&p, &s.y).unwrap().x;
        let want = s.code.densify(16);
        for (a, b) in x.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
        let back = decode(&p, &x).unwrap();
        assert!(common::col_dist(&back, &s.y) < 1e-12);
        assert!(loss(&p, &s.y).unwrap() < 1e-24);
    }
}

#[test]
fn gmm_true_unit_dominates() {
    let spec = Spec::gmm(256, 8, 1.0 / 16.0);
    let dict = orthonormal_dict(256, 8, 3);
    let w = close(dict.matrix(), 0.1, 3);
    let p = Params::new(w, vec![0.0; 8], Activation::Relu).unwrap();
    for s in sample_batch(&dict, &spec, 500, &mut Rng::for_stream(3, Stream::Batch)).unwrap() {
        let z = encode(&p, &s.y).unwrap().z;
        let i = s.code.support[0];
        assert!(z[i] > 0.5, "true unit {}", z[i]);
        for (j, &zj) in z.iter().enumerate() {
            if j != i {
                assert!(zj < 0.25, "unit {j}: {zj}");
            }
        }
    }
}

fn rate(family: Family, spec: &Spec, act: Activation<f64>, bias: f64, seed: u64) -> f64 {
    let dict = orthonormal_dict(spec.n, spec.m, seed);
    let w = close(dict.matrix(), 0.05, seed);
    let p = Params::new(w, vec![bias; spec.m], act).unwrap();
    let batch = sample_batch(&dict, spec, 2000, &mut Rng::for_stream(seed, Stream::Evaluation)).unwrap();
    let hits = batch
        .iter()
        .filter(|s| code_consistent(family, &encode(&p, &s.y).unwrap().x, &s.code))
        .count();
    hits as f64 / batch.len() as f64
}

#[test]
fn close_weights_are_code_consistent() {
    let sigma = 1.0 / 16.0;
    let gmm = Spec::gmm(256, 16, sigma);
    let b = bias_interval(&gmm, 0.05).midpoint();
    assert_eq!(rate(Family::Gmm, &gmm, Activation::Relu, b, 1), 1.0);
    let sparse = Spec::sparse_coding(256, 16, 3, sigma);
    assert_eq!(rate(Family::SparseCoding, &sparse, Activation::Threshold(threshold_level(&sparse)), 0.0, 2), 1.0);
    let nn = Spec::nonneg(256, 16, 3, 0.75, 1.0, sigma);
    let b = bias_interval(&nn, 0.05).midpoint();
    assert_eq!(rate(Family::NonNegSparse, &nn, Activation::Relu, b, 3), 1.0);
}

#[test]
fn relu_without_bias_fires_wrong_units() {
    let gmm = Spec::gmm(256, 16, 1.0 / 16.0);
    assert!(rate(Family::Gmm, &gmm, Activation::Relu, 0.0, 4) < 0.5);
}

fn params_strategy() -> impl Strategy<Value = (Params, Vec<f64>)> {
    (1usize..6, 1usize..6, any::<bool>(), 0.05f64..1.0).prop_flat_map(|(n, m, relu, lambda)| {
        (
            prop::collection::vec(-2.0f64..2.0, n * m),
            prop::collection::vec(-1.0f64..1.0, m),
            prop::collection::vec(-3.0f64..3.0, n),
        )
            .prop_map(move |(w, b, y)| {
                let act = if relu { Activation::Relu } else { Activation::Threshold(lambda) };
                (Params::new(Matrix::from_vec(n, m, w).unwrap(), b, act).unwrap(), y)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn loss_is_half_reconstruction_error((p, y) in params_strategy()) {
        let x = encode(&p, &y).unwrap().x;
        let y_hat = decode(&p, &x).unwrap();
        let want = common::col_dist(&y, &y_hat).powi(2) / 2.0;
        let got = loss(&p, &y).unwrap();
        prop_assert!(got >= 0.0);
        prop_assert!((got - want).abs() <= 1e-12 * (1.0 + want));
    }

    #[test]
    fn encoding_matches_elementwise_definition((p, y) in params_strategy()) {
        let e = encode(&p, &y).unwrap();
        for i in 0..p.m() {
            let z = common::dot(&p.weights.column(i), &y) + p.bias[i];
            prop_assert!((e.z[i] - z).abs() <= 1e-12);
            match p.activation {
                Activation::Relu => prop_assert_eq!(e.x[i], e.z[i].max(0.0)),
                Activation::Threshold(l) => {
                    prop_assert_eq!(e.x[i], if e.z[i].abs() >= l { e.z[i] } else { 0.0 })
                }
            }
        }
    }
}
