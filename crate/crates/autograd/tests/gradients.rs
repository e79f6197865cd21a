use corelnet_autograd::gradcheck::finite_difference_check;
use corelnet_autograd::{Graph, Init, ParamStore, Primitive, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;

#[test]
fn every_primitive_matches_finite_differences() {
    let mut failures = Vec::new();
    for prim in Primitive::ALL {
        let report = finite_difference_check(prim, 100, 1e-5, 1e-5, 7);
        println!("{report}");
        if !report.passed {
            failures.push(report.name.clone());
        }
    }
    assert!(failures.is_empty(), "failing primitives: {failures:?}");
}

#[test]
fn sigmoid_and_softmax_within_1e6() {
    for prim in [Primitive::Sigmoid, Primitive::Softmax] {
        let r = finite_difference_check(prim, 100, 1e-5, 1e-6, 11);
        assert!(r.passed, "{r}");
    }
}

#[test]
fn lstm_cell_within_1e5() {
    let r = finite_difference_check(Primitive::LstmCell, 50, 1e-5, 1e-5, 3);
    assert!(r.passed, "{r}");
}

#[test]
fn conv_kernel_gradient_within_1e6() {
    let r = finite_difference_check(Primitive::Conv2d, 20, 1e-4, 1e-6, 5);
    assert!(r.passed, "{r}");
}

fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data).unwrap()
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(data in prop::collection::vec(-30.0f64..30.0, 12), axis in 0usize..2) {
        let mut g = Graph::<f64>::new();
        let x = g.constant(tensor(&[3, 4], data));
        let y = g.softmax(x, axis).unwrap();
        let v = g.value(y).data();
        prop_assert!(v.iter().all(|&p| p >= 0.0));
        if axis == 1 {
            for r in 0..3 {
                let s: f64 = v[r * 4..(r + 1) * 4].iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-6);
            }
        } else {
            for c in 0..4 {
                let s: f64 = (0..3).map(|r| v[r * 4 + c]).sum();
                prop_assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn backward_is_linear_in_the_loss(seed in 0u64..1000) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", &[4, 3], Init::Uniform(1.0), &mut rng);
        let xs = Tensor::from_f64([5, 4], &(0..20).map(|i| ((i as f64) * 0.7 + seed as f64).sin()).collect::<Vec<_>>()).unwrap();
        let loss_a = |g: &mut Graph<f64>, s: &ParamStore<f64>| {
            let x = g.constant(xs.clone());
            let wv = g.param(s, w);
            let h = g.matmul(x, wv).unwrap();
            let a = g.sigmoid(h).unwrap();
            g.cross_entropy(a, &[0, 1, 2, 0, 1]).unwrap()
        };
        let loss_b = |g: &mut Graph<f64>, s: &ParamStore<f64>| {
            let x = g.constant(xs.clone());
            let wv = g.param(s, w);
            let h = g.matmul(x, wv).unwrap();
            let sq = g.mul(h, h).unwrap();
            let flat = g.reshape(sq, &[1, 15]).unwrap();
            g.mean(flat, 1).unwrap()
        };
        let grad_of = |store: &mut ParamStore<f64>, both: bool, which_a: bool| {
            store.zero_grad();
            let mut g = Graph::new();
            let l = if both {
                let a = loss_a(&mut g, store);
                let b = loss_b(&mut g, store);
                g.add(a, b).unwrap()
            } else if which_a {
                loss_a(&mut g, store)
            } else {
                loss_b(&mut g, store)
            };
            g.backward(l).unwrap().accumulate_into(store);
            store.get(w).grad.clone()
        };
        let sum = grad_of(&mut store, true, false);
        let a = grad_of(&mut store, false, true);
        let b = grad_of(&mut store, false, false);
        for i in 0..sum.len() {
            prop_assert!((sum[i] - a[i] - b[i]).abs() < 1e-6);
        }
    }
}

#[test]
fn identical_seeds_give_identical_trajectories() {
    use corelnet_autograd::{Optimizer, OptimizerKind};
    let run = || {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let mut store = ParamStore::<f32>::new();
        let w = store.add("w", &[8, 4], Init::FanIn(8), &mut rng);
        let mut opt = Optimizer::new(OptimizerKind::Adam, 5e-3).unwrap();
        let x = Tensor::<f32>::new([6, 8], (0..48).map(|i| (i as f32 * 0.3).cos()).collect()).unwrap();
        let mut trace = Vec::new();
        for _ in 0..20 {
            store.zero_grad();
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            let wv = g.param(&store, w);
            let h = g.matmul(xv, wv).unwrap();
            let l = g.cross_entropy(h, &[0, 1, 2, 3, 0, 1]).unwrap();
            g.backward(l).unwrap().accumulate_into(&mut store);
            opt.step(&mut store);
            trace.push(store.checksum_all());
        }
        trace
    };
    assert_eq!(run(), run());
}
