mod common;

use common::fd_check;
use flowrecon_nn::LayerSpec::{self, *};

const TOL: f64 = 1e-5;

fn check(name: &str, specs: &[LayerSpec], inputs: &[Vec<usize>]) {
    for seed in 0..3 {
        let e = fd_check(specs, inputs, 2, seed);
        assert!(e <= TOL, "{name} seed {seed}: relative error {e:e}");
    }
}

#[test]
fn dense() {
    check("dense", &[Dense { units: 4 }], &[vec![5]]);
}

#[test]
fn conv2d_stride_one_and_two() {
    check("conv k3 s1", &[Conv2d { filters: 3, kernel: 3, stride: 1 }], &[vec![5, 4, 2]]);
    check("conv k2 s2", &[Conv2d { filters: 3, kernel: 2, stride: 2 }], &[vec![6, 4, 2]]);
    // Stride that does not tile the input: trailing rows are ignored.
    check("conv k2 s3", &[Conv2d { filters: 2, kernel: 2, stride: 3 }], &[vec![7, 6, 1]]);
}

#[test]
fn conv2d_transpose() {
    check("convT k2 s2", &[Conv2dTranspose { filters: 3, kernel: 2, stride: 2 }], &[vec![3, 2, 2]]);
    check("convT k3 s2", &[Conv2dTranspose { filters: 2, kernel: 3, stride: 2 }], &[vec![3, 3, 3]]);
    check("convT k3 s1", &[Conv2dTranspose { filters: 2, kernel: 3, stride: 1 }], &[vec![2, 3, 2]]);
}

#[test]
fn relu() {
    // A dense layer ahead of the ReLU keeps the check away from exact zeros.
    check("relu", &[Dense { units: 6 }, Relu], &[vec![4]]);
}

#[test]
fn structural_layers() {
    check("zero_pad", &[ZeroPad { ph: 2, pw: 1 }, Flatten, Dense { units: 2 }], &[vec![3, 2, 2]]);
    check("crop", &[Crop { ch: 1, cw: 2 }, Flatten, Dense { units: 2 }], &[vec![4, 6, 2]]);
    check("flatten+reshape", &[Flatten, Reshape { shape: vec![2, 6] }, Flatten, Linear], &[vec![3, 2, 2]]);
    check("concat", &[Concat, Dense { units: 3 }], &[vec![2], vec![3, 1, 2]]);
}

#[test]
fn encoder_composition() {
    let specs = [
        ZeroPad { ph: 1, pw: 0 },
        Conv2d { filters: 4, kernel: 2, stride: 2 },
        Relu,
        Conv2d { filters: 3, kernel: 2, stride: 2 },
        Relu,
        Flatten,
        Dense { units: 5 },
        Relu,
        Dense { units: 4 },
    ];
    check("encoder", &specs, &[vec![6, 8, 2]]);
}

#[test]
fn decoder_composition() {
    let specs = [
        Concat,
        Dense { units: 2 * 2 * 3 },
        Relu,
        Reshape { shape: vec![2, 2, 3] },
        Conv2dTranspose { filters: 4, kernel: 2, stride: 2 },
        Relu,
        Conv2dTranspose { filters: 2, kernel: 2, stride: 2 },
        Linear,
        Crop { ch: 1, cw: 0 },
    ];
    check("decoder", &specs, &[vec![2], vec![6]]);
}
