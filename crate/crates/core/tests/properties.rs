use gradgen::corpus::random_program;
use gradgen::frontend::{emit_program, parse_str};
use gradgen::optimize::{run_pipeline, PassConfig};
use gradgen::runtime::kernels::unbroadcast;
use gradgen::runtime::{broadcast_shapes, eval, EvalOptions, NoopObserver, Value};
use gradgen::transform::{grad, truncate_loop_adjoint, GradOptions};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn value(shape: &[usize], data: Vec<f64>) -> Value {
    if shape.is_empty() {
        Value::Scalar(data[0])
    } else {
        Value::from_parts(shape.to_vec(), data)
    }
}

/// (small, big) with small broadcastable to big; ranks up to 3, dims up to 4.
fn shape_pair() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    prop::collection::vec(1usize..=4, 0..=3)
        .prop_flat_map(|big| {
            let n = big.len();
            (Just(big), 0..=n, prop::collection::vec(any::<bool>(), n))
        })
        .prop_map(|(big, keep, ones)| {
            let small: Vec<usize> = big[big.len() - keep..]
                .iter()
                .zip(&ones)
                .map(|(d, one)| if *one { 1 } else { *d })
                .collect();
            (small, big)
        })
}

/// Brute-force transpose of broadcasting: every element of `y` lands on the
/// element of `small` it was read from.
fn transpose_action(y: &[f64], big: &[usize], small: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; small.iter().product()];
    let offset = big.len() - small.len();
    for (flat, v) in y.iter().enumerate() {
        let mut rem = flat;
        let mut idx = vec![0; big.len()];
        for ax in (0..big.len()).rev() {
            idx[ax] = rem % big[ax];
            rem /= big[ax];
        }
        let mut o = 0;
        for (k, d) in small.iter().enumerate() {
            let i = if *d == 1 { 0 } else { idx[offset + k] };
            o = o * d + i;
        }
        out[o] += v;
    }
    out
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #[test]
    fn unbroadcast_is_the_adjoint_of_broadcast(
        (small, big) in shape_pair(),
        seed in any::<u64>(),
    ) {
        prop_assert_eq!(broadcast_shapes(&small, &big), Some(big.clone()));
        let n: usize = big.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..n).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect();
        let like = value(&small, vec![0.0; small.iter().product()]);
        let out = unbroadcast(&value(&big, data.clone()), &like).unwrap();
        prop_assert_eq!(out.shape(), small.clone());
        let got = out.to_f64_vec().unwrap();
        prop_assert!(close(got.iter().sum::<f64>(), data.iter().sum::<f64>()));
        let want = transpose_action(&data, &big, &small);
        for (g, w) in got.iter().zip(&want) {
            prop_assert!(close(*g, *w), "{} vs {}", g, w);
        }
    }

    #[test]
    fn parse_emit_round_trip(seed in any::<u64>()) {
        let e = random_program(&mut ChaCha8Rng::seed_from_u64(seed), 0);
        let once = emit_program(&parse_str(&e.source).unwrap());
        let twice = emit_program(&parse_str(&once).unwrap());
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn optimizer_is_idempotent(seed in any::<u64>()) {
        let e = random_program(&mut ChaCha8Rng::seed_from_u64(seed), 0);
        let p = parse_str(&e.source).unwrap();
        let g = grad(&p, &e.function, &GradOptions::new(e.wrt.clone()).unoptimized()).unwrap();
        let once = run_pipeline(&g.fn_ast, &PassConfig::default()).0;
        let twice = run_pipeline(&once, &PassConfig::default()).0;
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn gradient_source_is_deterministic(seed in any::<u64>()) {
        let e = random_program(&mut ChaCha8Rng::seed_from_u64(seed), 0);
        let p = parse_str(&e.source).unwrap();
        let a = grad(&p, &e.function, &GradOptions::new(e.wrt.clone())).unwrap();
        let b = grad(&parse_str(&e.source).unwrap(), &e.function, &GradOptions::new(e.wrt.clone())).unwrap();
        prop_assert_eq!(a.source, b.source);
    }

    #[test]
    fn truncation_keeps_the_last_iterations(steps in 0usize..8, keep in 0usize..10) {
        let src = format!("def f(x):\n    for _ in range({steps}):\n        x = x * 0.5\n    return x\n");
        let p = parse_str(&src).unwrap();
        let g = truncate_loop_adjoint(&p, "f", &GradOptions::new(vec![0]), 0, keep).unwrap();
        let out = eval(&g.program_with(&p), g.name(), &[Value::Scalar(3.0)], &EvalOptions { checked: true }, &mut NoopObserver).unwrap();
        prop_assert_eq!(out[0].as_f64().unwrap(), 0.5f64.powi(steps.min(keep) as i32));
    }
}
