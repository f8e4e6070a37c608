//! Finite-difference checks for every primitive, each on three shapes.

use nar_autodiff::{grad_check, GradCheckConfig, ParameterSet, Result, Scalar, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type OpFn = for<'t> fn(&[Var<'t, f64>]) -> Result<Var<'t, f64>>;
type OpFn32 = for<'t> fn(&[Var<'t, f32>]) -> Result<Var<'t, f32>>;

fn inputs(shapes: &[Vec<usize>], positive: bool, seed: u64) -> ParameterSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = ParameterSet::new("test");
    for (i, s) in shapes.iter().enumerate() {
        let n: usize = s.iter().product();
        let data = (0..n)
            .map(|_| {
                if positive {
                    rng.gen_range(0.2f32..2.0)
                } else {
                    rng.gen_range(-1.5f32..1.5)
                }
            })
            .collect();
        set.insert(format!("in{i}"), Tensor::new(s.clone(), data).unwrap()).unwrap();
    }
    set
}

/// Fixed pseudo-random weights so the checked scalar mixes every output.
fn weights<T: Scalar>(shape: &[usize]) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|i| T::of(((i * 7919 % 23) as f64 - 11.0) / 7.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn weighted<'t, T: Scalar>(tape: &'t Tape<T>, y: Var<'t, T>) -> Result<Var<'t, T>> {
    let c = tape.constant(weights(y.shape()));
    Ok(y.mul(&c)?.sum())
}

fn check(name: &str, cases: &[Vec<Vec<usize>>], positive: bool, f64_op: OpFn, f32_op: OpFn32) {
    assert!(cases.len() >= 3, "{name}: need three shapes");
    for (k, shapes) in cases.iter().enumerate() {
        let params = inputs(shapes, positive, 100 + k as u64);
        let n_in = shapes.len();
        let report = grad_check::<f64, _>(
            |tape, v| {
                let xs: Vec<_> = (0..n_in).map(|i| v.get(&format!("in{i}")).unwrap().clone()).collect();
                weighted(tape, f64_op(&xs)?)
            },
            &params,
            &GradCheckConfig::f64(),
        )
        .unwrap();
        assert!(report.passed(), "{name} f64 case {k}: {:?}", report.worst);
        let report = grad_check::<f32, _>(
            |tape, v| {
                let xs: Vec<_> = (0..n_in).map(|i| v.get(&format!("in{i}")).unwrap().clone()).collect();
                weighted(tape, f32_op(&xs)?)
            },
            &params,
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.passed(), "{name} f32 case {k}: {:?}", report.worst);
    }
}

macro_rules! op_check {
    ($test:ident, $cases:expr, $positive:expr, |$x:ident| $body:expr) => {
        #[test]
        fn $test() {
            fn op64<'t>($x: &[Var<'t, f64>]) -> Result<Var<'t, f64>> {
                $body
            }
            fn op32<'t>($x: &[Var<'t, f32>]) -> Result<Var<'t, f32>> {
                $body
            }
            check(stringify!($test), &$cases, $positive, op64, op32);
        }
    };
}

fn s(v: &[&[usize]]) -> Vec<Vec<usize>> {
    v.iter().map(|x| x.to_vec()).collect()
}

op_check!(add_broadcast, [s(&[&[3, 4], &[3, 4]]), s(&[&[2, 3, 4], &[4]]), s(&[&[2, 1, 3], &[1, 4, 1]])], false, |x| x[0].add(&x[1]));
op_check!(sub_broadcast, [s(&[&[5], &[5]]), s(&[&[2, 3], &[2, 1]]), s(&[&[3, 2, 2], &[2, 2]])], false, |x| x[0].sub(&x[1]));
op_check!(mul_broadcast, [s(&[&[4], &[4]]), s(&[&[2, 3], &[3]]), s(&[&[2, 3, 1], &[1, 1, 4]])], false, |x| x[0].mul(&x[1]));
op_check!(scale_and_shift, [s(&[&[3]]), s(&[&[2, 5]]), s(&[&[2, 2, 2]])], false, |x| x[0].scale(-2.5)?.add_scalar(0.75));
op_check!(matmul_shared, [s(&[&[3, 4], &[4, 2]]), s(&[&[2, 3, 5], &[5, 3]]), s(&[&[1, 2], &[2, 6]])], false, |x| x[0].matmul(&x[1]));
op_check!(matmul_batched, [s(&[&[2, 3, 4], &[2, 4, 2]]), s(&[&[1, 2, 2], &[1, 2, 3]]), s(&[&[3, 1, 4], &[3, 4, 5]])], false, |x| x[0].matmul(&x[1]));
op_check!(matmul_transposed, [s(&[&[3, 4], &[2, 4]]), s(&[&[2, 3, 4], &[2, 5, 4]]), s(&[&[2, 2, 3], &[3]])], false, |x| {
    // third case: shared rows against a [n, k] matrix built from a vector
    if x[1].shape().len() == 1 {
        let b = x[1].reshape(vec![1, 3])?.broadcast_to(&[4, 3])?;
        x[0].matmul_t(&b)
    } else {
        x[0].matmul_t(&x[1])
    }
});
op_check!(concat_last, [s(&[&[2, 3], &[2, 1]]), s(&[&[2, 2, 2], &[2, 2, 3]]), s(&[&[4], &[2]])], false, |x| Var::concat(&[&x[0], &x[1], &x[0]]));
op_check!(narrow_last, [s(&[&[2, 5]]), s(&[&[3, 2, 4]]), s(&[&[6]])], false, |x| x[0].narrow(1, 2));
op_check!(reshape_any, [s(&[&[2, 6]]), s(&[&[3, 2, 2]]), s(&[&[12]])], false, |x| x[0].reshape(vec![4, 3]));
op_check!(permute_axes, [s(&[&[2, 3, 4]]), s(&[&[1, 4, 2]]), s(&[&[3, 3, 2]])], false, |x| x[0].permute(&[2, 0, 1]));
op_check!(swap_axes, [s(&[&[2, 3, 3, 2]]), s(&[&[1, 2, 2, 4]]), s(&[&[2, 4, 4, 1]])], false, |x| x[0].swap_axes(1, 2));
op_check!(broadcast_to, [s(&[&[3]]), s(&[&[2, 1]]), s(&[&[1, 3, 1]])], false, |x| {
    let target: &[usize] = match x[0].shape() {
        [3] => &[4, 3],
        [2, 1] => &[2, 5],
        _ => &[2, 3, 4],
    };
    x[0].broadcast_to(target)
});
op_check!(relu, [s(&[&[7]]), s(&[&[3, 4]]), s(&[&[2, 2, 3]])], false, |x| x[0].relu());
op_check!(sigmoid, [s(&[&[7]]), s(&[&[3, 4]]), s(&[&[2, 2, 3]])], false, |x| x[0].sigmoid());
op_check!(exp, [s(&[&[7]]), s(&[&[3, 4]]), s(&[&[2, 2, 3]])], false, |x| x[0].exp());
op_check!(log, [s(&[&[7]]), s(&[&[3, 4]]), s(&[&[2, 2, 3]])], true, |x| x[0].log());
op_check!(softplus, [s(&[&[7]]), s(&[&[3, 4]]), s(&[&[2, 2, 3]])], false, |x| x[0].softplus());
op_check!(sum_all, [s(&[&[7]]), s(&[&[3, 4]]), s(&[&[2, 2, 3]])], false, |x| Ok(x[0].sum()));
op_check!(mean_all, [s(&[&[7]]), s(&[&[3, 4]]), s(&[&[2, 2, 3]])], false, |x| Ok(x[0].mean()));
op_check!(sum_axis, [s(&[&[3, 4]]), s(&[&[2, 3, 4]]), s(&[&[5, 1]])], false, |x| x[0].sum_axis(1));
op_check!(mean_axis, [s(&[&[3, 4]]), s(&[&[2, 3, 4]]), s(&[&[5, 2]])], false, |x| x[0].mean_axis(0));
op_check!(max_axis, [s(&[&[3, 4]]), s(&[&[2, 3, 4]]), s(&[&[6]])], false, |x| x[0].max_axis(x[0].shape().len() - 1));
op_check!(softmax, [s(&[&[5]]), s(&[&[3, 4]]), s(&[&[2, 2, 3]])], false, |x| x[0].softmax());
op_check!(log_softmax, [s(&[&[5]]), s(&[&[3, 4]]), s(&[&[2, 2, 3]])], false, |x| x[0].log_softmax());
op_check!(layer_norm, [s(&[&[2, 4], &[4], &[4]]), s(&[&[3, 2, 5], &[5], &[5]]), s(&[&[1, 3], &[3], &[3]])], false, |x| x[0].layer_norm(&x[1], &x[2], 1e-5));
op_check!(gather_last, [s(&[&[3, 4]]), s(&[&[2, 2, 5]]), s(&[&[6, 2]])], false, |x| {
    let rows: usize = x[0].shape()[..x[0].shape().len() - 1].iter().product();
    let w = *x[0].shape().last().unwrap();
    let idx: Vec<usize> = (0..rows).map(|r| (r * 3 + 1) % w).collect();
    x[0].gather(&idx)
});
op_check!(maxplus_triplet, [s(&[&[1, 3, 2], &[1, 3, 3, 2], &[1, 3, 3, 2]]), s(&[&[2, 2, 1], &[2, 2, 2, 1], &[2, 2, 2, 1]]), s(&[&[1, 4, 3], &[1, 4, 4, 3], &[1, 4, 4, 3]])], false, |x| x[0].maxplus_triplet(&x[1], &x[2]));
op_check!(linear_fused, [s(&[&[3, 4], &[4, 2], &[2]]), s(&[&[2, 3, 5], &[5, 3], &[3]]), s(&[&[1, 2], &[2, 6], &[6]])], false, |x| x[0].linear(&x[1], Some(&x[2])));
op_check!(affine_sum, [s(&[&[3, 4], &[4, 2], &[3, 1], &[1, 2], &[2]]), s(&[&[2, 3, 2], &[2, 3], &[2, 3, 4], &[4, 3], &[3]]), s(&[&[5, 1], &[1, 2], &[5, 3], &[3, 2], &[2]])], false, |x| Var::affine(&[(&x[0], &x[1]), (&x[2], &x[3])], Some(&x[4])));
