//! Gradient verification suites run by the `gradcheck` command and tests.

use std::collections::BTreeMap;

use csad_tensor::{
    grad_check, grad_check_sampled, BatchNormMode, GradCheckReport, Padding, Tape, Tensor,
    TensorError, Var,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{training_loss, Ctx, Mode, Model, ModelConfig, ModelInput, Targets};

pub const STEP: f64 = 1e-5;
pub const OP_TOLERANCE: f64 = 1e-4;
pub const MODEL_TOLERANCE: f64 = 1e-3;
pub const DEFAULT_SEEDS: [u64; 3] = [11, 12, 13];

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub seed: u64,
    pub report: GradCheckReport,
    pub tolerance: f64,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.report.max_rel_err < self.tolerance
    }
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, rng)
}

/// Entries bounded away from zero so ±h never straddles a kink.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let t = random(shape, rng);
    Tensor::from_fn(shape, |i| {
        let v = t.data()[i];
        v.signum() * (0.1 + v.abs())
    })
}

/// Per-op checks on random inputs drawn from `seed`.
pub fn op_suites(seed: u64) -> Result<Vec<SuiteResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut push = |name, report| {
        out.push(SuiteResult {
            name,
            seed,
            report,
            tolerance: OP_TOLERANCE,
        })
    };

    let inputs = [
        random(&[2, 3, 7, 6], &mut rng),
        random(&[4, 3, 3, 2], &mut rng),
        random(&[4], &mut rng),
    ];
    push(
        "conv2d",
        grad_check(
            |_, v| v[0].conv2d(&v[1], Some(&v[2]), (2, 1), Padding::same((3, 2))),
            &inputs,
            STEP,
        )?,
    );

    let inputs = [
        random(&[3, 8], &mut rng),
        random(&[5, 8], &mut rng),
        random(&[5], &mut rng),
    ];
    push(
        "linear",
        grad_check(|_, v| v[0].linear(&v[1], Some(&v[2])), &inputs, STEP)?,
    );

    let inputs = [
        random(&[3, 2, 3, 2], &mut rng),
        away_from_zero(&[2], &mut rng),
        random(&[2], &mut rng),
    ];
    push(
        "batchnorm2d",
        grad_check(
            |_, v| {
                Ok(v[0]
                    .batchnorm2d(&v[1], &v[2], BatchNormMode::Train { eps: 1e-5 })?
                    .0)
            },
            &inputs,
            STEP,
        )?,
    );

    let inputs = [
        away_from_zero(&[2, 3, 2, 2], &mut rng),
        random(&[3], &mut rng),
    ];
    push(
        "prelu",
        grad_check(|_, v| v[0].prelu(&v[1]), &inputs, STEP)?,
    );

    let inputs = [random(&[2, 3, 4, 2], &mut rng), random(&[2, 3], &mut rng)];
    push(
        "pool_and_attention_scale",
        grad_check(
            |_, v| {
                let w = v[0].global_avg_pool()?.add(&v[1])?.softmax(1)?;
                v[0].scale_channels(&w)?.add(&v[0])
            },
            &inputs,
            STEP,
        )?,
    );

    let inputs = [
        away_from_zero(&[2, 3, 2, 2], &mut rng),
        away_from_zero(&[2, 3, 2, 2], &mut rng),
    ];
    push(
        "complex_abs",
        grad_check(|_, v| v[0].complex_abs(&v[1]), &inputs, STEP)?,
    );

    let inputs = [random(&[3, 4], &mut rng).reshape(&[3, 4])?];
    push(
        "cross_entropy",
        grad_check(|_, v| v[0].cross_entropy(&[0, 3, 1]), &inputs, STEP)?,
    );

    let target = Tensor::new(&[2, 3], vec![0.2, 0.3, 0.5, 0.0, 1.0, 0.0])?;
    let inputs = [random(&[2, 3], &mut rng)];
    push(
        "kl_div",
        grad_check(|_, v| v[0].kl_div(&target), &inputs, STEP)?,
    );
    Ok(out)
}

/// Training loss of the reduced network with respect to every parameter
/// tensor, probing up to `per_param` entries each.
pub fn model_suite(seed: u64, per_param: usize) -> Result<SuiteResult> {
    let config = ModelConfig::reduced();
    let model = Model::new(config.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0ffee);
    let shape = [2, 1, config.input_height(), config.frames];
    let input = ModelInput::Complex {
        re: random(&shape, &mut rng),
        im: random(&shape, &mut rng),
    };
    let targets = [1usize, 3];
    let names: Vec<String> = model.params().iter().map(|p| p.name.clone()).collect();
    let values: Vec<Tensor> = model.params().iter().map(|p| p.value.clone()).collect();
    let to_tensor_err = |e: crate::Error| TensorError::InvalidState(e.to_string());
    let report = grad_check_sampled(
        |tape: &Tape, vars: &[Var<'_>]| {
            let overrides: BTreeMap<String, Var<'_>> =
                names.iter().cloned().zip(vars.iter().copied()).collect();
            let ctx = Ctx::with_overrides(tape, Mode::Train, &overrides);
            let out = model.forward_ctx(&ctx, &input).map_err(to_tensor_err)?;
            training_loss(&out, Targets::Ids(&targets)).map_err(to_tensor_err)
        },
        &values,
        STEP,
        per_param,
    )?;
    Ok(SuiteResult {
        name: "model_reduced",
        seed,
        report,
        tolerance: MODEL_TOLERANCE,
    })
}

/// All op suites and the model suite for every seed.
pub fn run_all(seeds: &[u64], per_param: usize) -> Result<Vec<SuiteResult>> {
    let mut out = Vec::new();
    for &seed in seeds {
        out.extend(op_suites(seed)?);
        out.push(model_suite(seed, per_param)?);
    }
    Ok(out)
}
