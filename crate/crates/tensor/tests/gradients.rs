//! Every differentiable op against central finite differences on three seeds.

use csad_tensor::{grad_check, BatchNormMode, GradCheckReport, Padding, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
const SEEDS: [u64; 3] = [11, 12, 13];

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, rng)
}

/// Values bounded away from zero so kinks are never straddled by ±h.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let t = random(shape, rng);
    Tensor::from_fn(shape, |i| {
        let v = t.data()[i];
        v.signum() * (0.1 + v.abs())
    })
}

fn assert_ok(name: &str, report: GradCheckReport) {
    assert!(
        report.max_rel_err < TOL,
        "{name}: max rel err {:.3e} at {:?}",
        report.max_rel_err,
        report.worst
    );
}

#[test]
fn conv2d_with_stride_and_padding() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [
            random(&[2, 3, 7, 6], &mut rng),
            random(&[4, 3, 3, 2], &mut rng),
            random(&[4], &mut rng),
        ];
        let report = grad_check(
            |_, v| v[0].conv2d(&v[1], Some(&v[2]), (2, 1), Padding::same((3, 2))),
            &inputs,
            H,
        )
        .unwrap();
        assert_ok("conv2d", report);
    }
}

#[test]
fn linear_layer() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [
            random(&[3, 8], &mut rng),
            random(&[5, 8], &mut rng),
            random(&[5], &mut rng),
        ];
        let report = grad_check(|_, v| v[0].linear(&v[1], Some(&v[2])), &inputs, H).unwrap();
        assert_ok("linear", report);
    }
}

#[test]
fn batchnorm_train_and_eval() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [
            random(&[3, 2, 4, 3], &mut rng),
            random(&[2], &mut rng),
            random(&[2], &mut rng),
        ];
        let train = grad_check(
            |_, v| {
                v[0].batchnorm2d(&v[1], &v[2], BatchNormMode::Train { eps: 1e-5 })
                    .map(|(y, _)| y)
            },
            &inputs,
            H,
        )
        .unwrap();
        assert_ok("batchnorm train", train);
        let eval = grad_check(
            |_, v| {
                let mode = BatchNormMode::Eval {
                    running_mean: &[0.1, -0.3],
                    running_var: &[0.8, 1.7],
                    eps: 1e-5,
                };
                v[0].batchnorm2d(&v[1], &v[2], mode).map(|(y, _)| y)
            },
            &inputs,
            H,
        )
        .unwrap();
        assert_ok("batchnorm eval", eval);
    }
}

#[test]
fn prelu_input_and_slope() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [
            away_from_zero(&[2, 3, 4, 2], &mut rng),
            random(&[3], &mut rng),
        ];
        let report = grad_check(|_, v| v[0].prelu(&v[1]), &inputs, H).unwrap();
        assert_ok("prelu", report);
    }
}

#[test]
fn pooling_scaling_and_shape_ops() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [
            random(&[2, 3, 4, 2], &mut rng),
            random(&[2, 3], &mut rng),
            random(&[2, 2, 4, 2], &mut rng),
        ];
        let report = grad_check(
            |_, v| {
                let scaled = v[0].scale_channels(&v[1])?;
                let stacked = Var::concat(&[scaled, v[2]], 1)?;
                let part = stacked.narrow(1, 1, 3)?;
                part.global_avg_pool()
            },
            &inputs,
            H,
        )
        .unwrap();
        assert_ok("pool/scale/concat/narrow", report);
    }
}

#[test]
fn elementwise_and_complex_abs() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [
            away_from_zero(&[3, 4], &mut rng),
            away_from_zero(&[3, 4], &mut rng),
        ];
        let report = grad_check(
            |_, v| {
                let m = v[0].complex_abs(&v[1])?;
                let p = v[0].mul(&v[1])?.sub(&v[1].relu())?;
                m.add(&p.scale(0.5))
            },
            &inputs,
            H,
        )
        .unwrap();
        assert_ok("elementwise", report);
    }
}

#[test]
fn softmax_and_losses() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [random(&[3, 4], &mut rng)];
        let soft = grad_check(|_, v| v[0].softmax(1), &inputs, H).unwrap();
        assert_ok("softmax", soft);
        let logsoft = grad_check(|_, v| v[0].log_softmax(), &inputs, H).unwrap();
        assert_ok("log_softmax", logsoft);
        let ce = grad_check(|_, v| v[0].cross_entropy(&[1, 0, 3]), &inputs, H).unwrap();
        assert_ok("cross_entropy", ce);
        let target = Tensor::new(
            &[3, 4],
            vec![0.1, 0.2, 0.3, 0.4, 0.0, 0.5, 0.5, 0.0, 1.0, 0.0, 0.0, 0.0],
        )
        .unwrap();
        let kl = grad_check(|_, v| v[0].kl_div(&target), &inputs, H).unwrap();
        assert_ok("kl_div", kl);
    }
}

#[test]
fn shared_input_feeding_two_consumers() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [
            random(&[2, 2, 3, 3], &mut rng),
            random(&[2, 2, 1, 1], &mut rng),
        ];
        let report = grad_check(
            |_, v| {
                let a = v[0].conv2d(&v[1], None, (1, 1), Padding::default())?;
                let b = v[0].scale(3.0);
                a.mul(&b)
            },
            &inputs,
            H,
        )
        .unwrap();
        assert_ok("fan-out", report);
    }
}
