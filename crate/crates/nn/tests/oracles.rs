mod common;

use common::{random_tensor, random_vec};
use flowrecon_nn::layers::{conv2d_forward, conv2d_transpose_forward, ConvGeom};
use flowrecon_nn::{LayerSpec, Network, ParamId, ParamStore, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Direct quadruple loop, independent of the kernel's loop order.
fn naive_conv(x: &[f64], (h, w, c): (usize, usize, usize), wt: &[f64], f: usize, k: usize, s: usize) -> Vec<f64> {
    let oh = (h - k) / s + 1;
    let ow = (w - k) / s + 1;
    let mut y = vec![0.0; oh * ow * f];
    for fo in 0..f {
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = 0.0;
                for ki in 0..k {
                    for kj in 0..k {
                        for ci in 0..c {
                            let xv = x[((i * s + ki) * w + (j * s + kj)) * c + ci];
                            acc += xv * wt[((ki * k + kj) * c + ci) * f + fo];
                        }
                    }
                }
                y[(i * ow + j) * f + fo] = acc;
            }
        }
    }
    y
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_matches_direct_loop(
        h in 2usize..9, w in 2usize..9, c in 1usize..4, f in 1usize..4,
        k in 1usize..4, s in 1usize..4, seed in any::<u64>(),
    ) {
        prop_assume!(k <= h && k <= w);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_vec(h * w * c, &mut rng);
        let wt = random_vec(k * k * c * f, &mut rng);
        let g = ConvGeom::conv(h, w, c, f, k, s);
        let mut y = vec![0.0; g.oh * g.ow * f];
        conv2d_forward(&g, &x, &wt, &mut y);
        let want = naive_conv(&x, (h, w, c), &wt, f, k, s);
        for (a, b) in y.iter().zip(&want) {
            prop_assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn transpose_is_adjoint(
        h in 2usize..9, w in 2usize..9, c in 1usize..4, f in 1usize..4,
        k in 1usize..4, s in 1usize..4, seed in any::<u64>(),
    ) {
        prop_assume!(k <= h && k <= w);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = ConvGeom::conv(h, w, c, f, k, s);
        let x = random_vec(h * w * c, &mut rng);
        let y = random_vec(g.oh * g.ow * f, &mut rng);
        let wt = random_vec(k * k * c * f, &mut rng);
        let mut cx = vec![0.0; y.len()];
        conv2d_forward(&g, &x, &wt, &mut cx);
        let mut cty = vec![0.0; x.len()];
        conv2d_transpose_forward(&g, &y, &wt, &mut cty);
        let lhs: f64 = cx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&cty).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()), "{lhs} vs {rhs}");
    }
}

fn ones_network(spec: LayerSpec, input: Vec<usize>) -> (Network, ParamStore) {
    let mut store = ParamStore::new();
    let net = Network::new(&[spec], &[input], &mut store, "n", 0).unwrap();
    let (w, b) = (ParamId(0), ParamId(1));
    store.value_mut(w).iter_mut().for_each(|v| *v = 1.0);
    store.value_mut(b).iter_mut().for_each(|v| *v = 0.0);
    (net, store)
}

#[test]
fn transpose_of_ones_counts_overlaps() {
    // k=3, s=2 on a 3x3 input: output 7x7, overlapping windows share edges.
    let (net, store) = ones_network(LayerSpec::Conv2dTranspose { filters: 1, kernel: 3, stride: 2 }, vec![3, 3, 1]);
    let x = Tensor::new(vec![1, 3, 3, 1], vec![1.0; 9]).unwrap();
    let y = net.predict(&store, &[&x]).unwrap();
    assert_eq!(y.shape(), &[1, 7, 7, 1]);
    let per_axis = |i: usize| (0..3).filter(|&a| i >= 2 * a && i < 2 * a + 3).count();
    for i in 0..7 {
        for j in 0..7 {
            assert_eq!(y.data()[i * 7 + j], (per_axis(i) * per_axis(j)) as f64, "({i}, {j})");
        }
    }
}

#[test]
fn transpose_of_ones_without_overlap_is_flat() {
    let (net, store) = ones_network(LayerSpec::Conv2dTranspose { filters: 2, kernel: 2, stride: 2 }, vec![2, 3, 3]);
    let x = Tensor::new(vec![1, 2, 3, 3], vec![1.0; 18]).unwrap();
    let y = net.predict(&store, &[&x]).unwrap();
    assert_eq!(y.shape(), &[1, 4, 6, 2]);
    // Each output receives exactly one input pixel summed over 3 channels.
    assert!(y.data().iter().all(|&v| v == 3.0));
}

#[test]
fn one_by_one_identity_conv() {
    let c = 3;
    let mut store = ParamStore::new();
    let net =
        Network::new(&[LayerSpec::Conv2d { filters: c, kernel: 1, stride: 1 }], &[vec![4, 5, c]], &mut store, "n", 0)
            .unwrap();
    let w = store.value_mut(ParamId(0));
    w.iter_mut().enumerate().for_each(|(k, v)| *v = if k / c == k % c { 1.0 } else { 0.0 });
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_tensor(vec![2, 4, 5, c], &mut rng);
    let y = net.predict(&store, &[&x]).unwrap();
    assert_eq!(y, x);
}

#[test]
fn dense_gradient_matches_matrix_formula() {
    let mut store = ParamStore::new();
    let net = Network::new(&[LayerSpec::Dense { units: 3 }], &[vec![4]], &mut store, "d", 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_tensor(vec![1, 4], &mut rng);
    let g = random_tensor(vec![1, 3], &mut rng);
    let (_, tape) = net.forward(&store, &[&x]).unwrap();
    let dx = net.backward(&mut store, &tape, &g).unwrap().remove(0);
    let w = store.value(ParamId(0)).to_vec();
    for i in 0..4 {
        let want: f64 = (0..3).map(|u| w[u * 4 + i] * g.data()[u]).sum();
        assert!((dx.data()[i] - want).abs() < 1e-14);
    }
    for u in 0..3 {
        for i in 0..4 {
            assert!((store.grad(ParamId(0))[u * 4 + i] - g.data()[u] * x.data()[i]).abs() < 1e-14);
        }
        assert_eq!(store.grad(ParamId(1))[u], g.data()[u]);
    }
}

#[test]
fn relu_passes_positive_gradients() {
    let mut store = ParamStore::new();
    let net = Network::new(&[LayerSpec::Relu], &[vec![3]], &mut store, "r", 0).unwrap();
    let x = Tensor::new(vec![1, 3], vec![0.5, 2.0, 1e-3]).unwrap();
    let g = Tensor::new(vec![1, 3], vec![-1.0, 3.0, 7.0]).unwrap();
    let (y, tape) = net.forward(&store, &[&x]).unwrap();
    assert_eq!(y, x);
    assert_eq!(net.backward(&mut store, &tape, &g).unwrap()[0], g);
}

#[test]
fn backward_is_linear_in_output_gradient() {
    let specs = [
        LayerSpec::Conv2d { filters: 3, kernel: 2, stride: 2 },
        LayerSpec::Relu,
        LayerSpec::Flatten,
        LayerSpec::Dense { units: 2 },
    ];
    let mut store = ParamStore::new();
    let net = Network::new(&specs, &[vec![4, 4, 2]], &mut store, "l", 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random_tensor(vec![2, 4, 4, 2], &mut rng);
    let a = random_tensor(vec![2, 2], &mut rng);
    let b = random_tensor(vec![2, 2], &mut rng);
    let sum = Tensor::new(vec![2, 2], a.data().iter().zip(b.data()).map(|(p, q)| p + q).collect()).unwrap();

    let grads = |dout: &Tensor| {
        let mut s = store.clone();
        let (_, tape) = net.forward(&s, &[&x]).unwrap();
        let dx = net.backward(&mut s, &tape, dout).unwrap().remove(0);
        (dx.into_data(), s.flat_grads())
    };
    let (dxa, pa) = grads(&a);
    let (dxb, pb) = grads(&b);
    let (dxs, ps) = grads(&sum);
    for ((s, p), q) in dxs.iter().zip(&dxa).zip(&dxb).chain(ps.iter().zip(&pa).zip(&pb)) {
        assert!((s - p - q).abs() <= 1e-12 * (1.0 + s.abs()));
    }
}

#[test]
fn forward_is_deterministic() {
    let specs = [LayerSpec::Conv2d { filters: 2, kernel: 2, stride: 1 }, LayerSpec::Relu];
    let build = || {
        let mut store = ParamStore::new();
        let net = Network::new(&specs, &[vec![3, 3, 1]], &mut store, "p", 11).unwrap();
        (net, store)
    };
    let (n1, s1) = build();
    let (n2, s2) = build();
    assert_eq!(s1, s2);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_tensor(vec![1, 3, 3, 1], &mut rng);
    assert_eq!(n1.predict(&s1, &[&x]).unwrap(), n2.predict(&s2, &[&x]).unwrap());
    assert_eq!(n1.predict(&s1, &[&x]).unwrap(), n1.forward(&s1, &[&x]).unwrap().0);
}
