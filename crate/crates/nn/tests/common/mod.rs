#![allow(dead_code)]

use flowrecon_nn::{LayerSpec, Network, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn random_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, random_vec(n, rng)).unwrap()
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-12);
    diff / scale
}

/// Checks the analytic gradients of `<net(inputs), probe>` with respect to
/// every input and every parameter against central differences. Returns the
/// worst relative error (vector 2-norm).
pub fn fd_check(specs: &[LayerSpec], input_shapes: &[Vec<usize>], batch: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let net = Network::new(specs, input_shapes, &mut store, "t", seed).unwrap();
    // Nonzero biases so they matter.
    for id in 0..store.len() {
        let id = flowrecon_nn::ParamId(id);
        let noise = random_vec(store.value(id).len(), &mut rng);
        for (v, n) in store.value_mut(id).iter_mut().zip(noise) {
            *v += 0.1 * n;
        }
    }
    let inputs: Vec<Tensor> = input_shapes
        .iter()
        .map(|s| {
            let mut shape = vec![batch];
            shape.extend_from_slice(s);
            random_tensor(shape, &mut rng)
        })
        .collect();
    let refs: Vec<&Tensor> = inputs.iter().collect();
    let (out, tape) = net.forward(&store, &refs).unwrap();
    let probe = random_tensor(out.shape().to_vec(), &mut rng);
    let dins = net.backward(&mut store, &tape, &probe).unwrap();

    let loss = |store: &ParamStore, inputs: &[Tensor]| {
        let refs: Vec<&Tensor> = inputs.iter().collect();
        net.predict(store, &refs).unwrap().dot(&probe)
    };
    let h = 1e-6;
    let mut worst = 0.0f64;
    for (k, din) in dins.iter().enumerate() {
        let mut fd = vec![0.0; din.len()];
        for (j, slot) in fd.iter_mut().enumerate() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[j] += h;
            let mut minus = inputs.clone();
            minus[k].data_mut()[j] -= h;
            *slot = (loss(&store, &plus) - loss(&store, &minus)) / (2.0 * h);
        }
        worst = worst.max(rel(din.data(), &fd));
    }
    for id in 0..store.len() {
        let id = flowrecon_nn::ParamId(id);
        let analytic = store.grad(id).to_vec();
        let mut fd = vec![0.0; analytic.len()];
        for (j, slot) in fd.iter_mut().enumerate() {
            let mut s = store.clone();
            s.value_mut(id)[j] += h;
            let lp = loss(&s, &inputs);
            s.value_mut(id)[j] -= 2.0 * h;
            let lm = loss(&s, &inputs);
            *slot = (lp - lm) / (2.0 * h);
        }
        worst = worst.max(rel(&analytic, &fd));
    }
    worst
}
