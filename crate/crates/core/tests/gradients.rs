//! Analytic gradients against central finite differences, 64-bit, step 1e-5.

use pepr_core::model::GroupScheme;
use pepr_core::nn::gradcheck::{check_network, numeric_gradient, relative_error, DEFAULT_STEP};
use pepr_core::nn::loss::{anchored_mse_loss, softmax_cross_entropy};
use pepr_core::nn::{LayerSpec, Network};
use pepr_core::Tensor2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOLERANCE: f64 = 1e-5;
const SHAPES: u64 = 20;

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor2 {
    let v = (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor2::from_vec(rows, cols, v).unwrap()
}

/// Builds a network for one random shape and checks it.
fn check_layer_kind(kind: &str, make: impl Fn(usize, usize) -> Vec<LayerSpec>) {
    for case in 0..SHAPES {
        let mut rng = ChaCha8Rng::seed_from_u64(case * 31 + kind.len() as u64);
        let batch = rng.gen_range(2..7);
        let input = rng.gen_range(1..6);
        let output = rng.gen_range(1..6);
        let net = Network::new(input, make(input, output), case).unwrap();
        let x = random_tensor(&mut rng, batch, input, 2.0);
        let report = check_network(&net, &x, case + 1000, DEFAULT_STEP).unwrap();
        assert!(
            report.max_error() < TOLERANCE,
            "{kind} shape ({batch}x{input}->{output}): relative error {} {:?}",
            report.max_error(),
            report
        );
    }
}

#[test]
fn dense() {
    check_layer_kind("dense", |i, o| vec![LayerSpec::dense(i, o)]);
}

#[test]
fn elu() {
    check_layer_kind("elu", |i, o| vec![LayerSpec::dense(i, o), LayerSpec::Elu]);
}

#[test]
fn tanh() {
    check_layer_kind("tanh", |i, o| vec![LayerSpec::dense(i, o), LayerSpec::Tanh]);
}

#[test]
fn relu() {
    check_layer_kind("relu", |i, o| vec![LayerSpec::dense(i, o), LayerSpec::Relu]);
}

#[test]
fn leaky_relu() {
    check_layer_kind("leaky", |i, o| {
        vec![LayerSpec::dense(i, o), LayerSpec::LeakyRelu { slope: 0.1 }]
    });
}

#[test]
fn batch_norm() {
    check_layer_kind("batch-norm", |i, o| {
        vec![LayerSpec::dense(i, o), LayerSpec::batch_norm(o)]
    });
}

#[test]
fn dropout() {
    check_layer_kind("dropout", |i, o| {
        vec![LayerSpec::dense(i, o), LayerSpec::Dropout { rate: 0.3 }]
    });
}

#[test]
fn softmax_layer() {
    check_layer_kind("softmax", |i, o| vec![LayerSpec::dense(i, o + 1), LayerSpec::Softmax]);
}

#[test]
fn stacked_embedder_like() {
    check_layer_kind("stack", |i, o| {
        vec![
            LayerSpec::dense(i, 6),
            LayerSpec::batch_norm(6),
            LayerSpec::Elu,
            LayerSpec::Dropout { rate: 0.2 },
            LayerSpec::dense(6, o),
            LayerSpec::Tanh,
        ]
    });
}

fn random_targets(rng: &mut ChaCha8Rng, n: usize, classes: usize) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(0..classes)).collect()
}

#[test]
fn softmax_cross_entropy_gradient() {
    for case in 0..SHAPES {
        let mut rng = ChaCha8Rng::seed_from_u64(case);
        let (n, c) = (rng.gen_range(1..8), rng.gen_range(2..9));
        let logits = random_tensor(&mut rng, n, c, 3.0);
        let targets = random_targets(&mut rng, n, c);
        let (_, analytic) = softmax_cross_entropy(&logits, &targets).unwrap();
        let numeric = numeric_gradient(
            |v| {
                softmax_cross_entropy(&Tensor2::from_vec(n, c, v.to_vec()).unwrap(), &targets)
                    .unwrap()
                    .0
            },
            logits.as_slice(),
            DEFAULT_STEP,
        );
        let err = relative_error(analytic.as_slice(), &numeric);
        assert!(err < TOLERANCE, "case {case}: {err}");
    }
}

#[test]
fn grouped_cross_entropy_gradient() {
    for case in 0..SHAPES {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + case);
        let classes = rng.gen_range(2..12);
        let groups = rng.gen_range(1..=classes.min(4));
        let scheme = GroupScheme::even_split(classes, groups).unwrap();
        let n = rng.gen_range(1..8);
        let w = scheme.logit_width();
        let logits = random_tensor(&mut rng, n, w, 3.0);
        let targets = random_targets(&mut rng, n, classes);
        let (_, analytic) = scheme.grouped_cross_entropy(&logits, &targets).unwrap();
        let numeric = numeric_gradient(
            |v| {
                scheme
                    .grouped_cross_entropy(&Tensor2::from_vec(n, w, v.to_vec()).unwrap(), &targets)
                    .unwrap()
                    .0
            },
            logits.as_slice(),
            DEFAULT_STEP,
        );
        let err = relative_error(analytic.as_slice(), &numeric);
        assert!(err < TOLERANCE, "case {case} (C={classes}, G={groups}): {err}");
    }
}

#[test]
fn anchored_mse_gradient() {
    for case in 0..SHAPES {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + case);
        let (n, d) = (rng.gen_range(1..8), rng.gen_range(1..6));
        let target = random_tensor(&mut rng, n, d, 1.0);
        let pred = random_tensor(&mut rng, n, d, 1.0);
        let params: Vec<Vec<f64>> = (0..3)
            .map(|k| (0..k + 2).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let anchors: Vec<Vec<f64>> = params
            .iter()
            .map(|p| p.iter().map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let gamma = rng.gen_range(0.01..0.5);
        let refs: Vec<&[f64]> = params.iter().map(|p| p.as_slice()).collect();
        let loss = anchored_mse_loss(&target, &pred, &refs, Some(&anchors), gamma).unwrap();

        let numeric_pred = numeric_gradient(
            |v| {
                let p = Tensor2::from_vec(n, d, v.to_vec()).unwrap();
                anchored_mse_loss(&target, &p, &refs, Some(&anchors), gamma)
                    .unwrap()
                    .loss
            },
            pred.as_slice(),
            DEFAULT_STEP,
        );
        let err = relative_error(loss.prediction_grad.as_slice(), &numeric_pred);
        assert!(err < TOLERANCE, "prediction case {case}: {err}");

        for (i, p) in params.iter().enumerate() {
            let numeric = numeric_gradient(
                |v| {
                    let mut refs = refs.clone();
                    refs[i] = v;
                    anchored_mse_loss(&target, &pred, &refs, Some(&anchors), gamma)
                        .unwrap()
                        .loss
                },
                p,
                DEFAULT_STEP,
            );
            let err = relative_error(&loss.anchor_grads.0[i], &numeric);
            assert!(err < TOLERANCE, "parameter {i} case {case}: {err}");
        }
    }
}
