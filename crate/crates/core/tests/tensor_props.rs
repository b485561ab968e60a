use proofkit::tensor::{Graph, ParamStore, Tensor};
use proptest::prelude::*;

fn matrix() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (1usize..5, 1usize..6).prop_flat_map(|(r, c)| (Just(r), Just(c), prop::collection::vec(-30.0f64..30.0, r * c)))
}

fn softmax_rows(t: Tensor) -> Vec<Vec<f64>> {
    let mut g = Graph::new();
    let x = g.constant(t);
    let y = g.softmax(x, 1).unwrap();
    g.value(y).to_rows()
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one_and_ignore_shifts((r, c, data) in matrix(), shift in -50.0f64..50.0) {
        let base = softmax_rows(Tensor::matrix(r, c, data.clone()).unwrap());
        let moved = softmax_rows(Tensor::matrix(r, c, data.iter().map(|v| v + shift).collect()).unwrap());
        for (a, b) in base.iter().zip(&moved) {
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (x, y) in a.iter().zip(b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cross_entropy_is_non_negative((r, c, data) in matrix(), hot in prop::collection::vec(0usize..6, 5)) {
        let probs = softmax_rows(Tensor::matrix(r, c, data).unwrap());
        let mut y = vec![0.0; r * c];
        for i in 0..r {
            y[i * c + hot[i] % c] = 1.0;
        }
        let mut g = Graph::new();
        let t = g.constant(Tensor::matrix(r, c, y).unwrap());
        let p = g.constant(Tensor::from_rows(&probs).unwrap());
        let l = g.cross_entropy(t, p).unwrap();
        prop_assert!(g.value(l).item() >= 0.0);
    }

    #[test]
    fn forward_values_stay_finite((r, c, data) in matrix()) {
        let mut g = Graph::new();
        let x = g.input(Tensor::matrix(r, c, data).unwrap(), true);
        let a = g.tanh(x);
        let b = g.sigmoid(x);
        let s = g.softmax(x, 1).unwrap();
        let l = g.log(s);
        let e = g.gelu(x);
        for v in [a, b, s, l, e] {
            prop_assert!(g.value(v).is_finite());
        }
    }

    #[test]
    fn backward_is_bitwise_deterministic((r, c, data) in matrix(), seed in 0u64..1000) {
        let mut store = ParamStore::new();
        let w = store.add_xavier("w", &[c, 3], c, 3, &mut proofkit::Rng::new(seed));
        let run = || {
            let mut g = Graph::with_params(&store);
            let x = g.constant(Tensor::matrix(r, c, data.clone()).unwrap());
            let w = g.param(w);
            let h = g.matmul(x, w).unwrap();
            let h = g.gelu(h);
            let s = g.softmax(h, 1).unwrap();
            let l = g.log(s);
            let loss = g.sum(l);
            let grads = g.backward(loss).unwrap();
            grads.param(0).unwrap().data().iter().map(|v| v.to_bits()).collect::<Vec<u64>>()
        };
        prop_assert_eq!(run(), run());
    }
}
