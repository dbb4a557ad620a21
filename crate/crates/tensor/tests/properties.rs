use csad_tensor::{adam_step, AdamState, Param, Tape, Tensor};
use proptest::prelude::*;

fn logits_strategy() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (1usize..5, 2usize..7).prop_flat_map(|(n, k)| {
        (
            Just(n),
            Just(k),
            prop::collection::vec(-30.0f64..30.0, n * k),
        )
    })
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one((n, k, data) in logits_strategy()) {
        let tape = Tape::new();
        let x = tape.constant(Tensor::new(&[n, k], data).unwrap());
        let p = x.softmax(1).unwrap().value();
        for row in p.data().chunks(k) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn cross_entropy_and_kl_are_nonnegative((n, k, data) in logits_strategy(), t in 0usize..64) {
        let tape = Tape::new();
        let x = tape.constant(Tensor::new(&[n, k], data.clone()).unwrap());
        let targets: Vec<usize> = (0..n).map(|i| (t + i) % k).collect();
        prop_assert!(x.cross_entropy(&targets).unwrap().item() >= 0.0);
        let rotated: Vec<f64> = data.iter().map(|v| v * 0.5 + 1.0).collect();
        let q = tape.constant(Tensor::new(&[n, k], rotated).unwrap()).softmax(1).unwrap().value();
        prop_assert!(x.kl_div(&q).unwrap().item() >= -1e-12);
    }

    #[test]
    fn adam_step_is_bitwise_deterministic(values in prop::collection::vec(-5.0f64..5.0, 1..8), grads in prop::collection::vec(-5.0f64..5.0, 8)) {
        let n = values.len();
        let make = || {
            let mut p = Param::new("p", Tensor::new(&[n], values.clone()).unwrap());
            p.grad = Some(Tensor::new(&[n], grads[..n].to_vec()).unwrap());
            p
        };
        let (mut a, mut b) = (make(), make());
        let (mut sa, mut sb) = (AdamState::new(1e-3), AdamState::new(1e-3));
        adam_step([&mut a], &mut sa).unwrap();
        adam_step([&mut b], &mut sb).unwrap();
        let bits = |p: &Param| p.value.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&a), bits(&b));
        prop_assert_eq!(sa, sb);
    }
}
