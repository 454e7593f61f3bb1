//! Layer descriptors, shape algebra, and the forward/backward kernels.
//!
//! Images are `(H, W, C)` per sample, row-major, so the channel index is
//! fastest. Convolutions are "valid": padding is its own layer. Kernels and
//! strides are square.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        units: usize,
    },
    Conv2d {
        filters: usize,
        kernel: usize,
        stride: usize,
    },
    Conv2dTranspose {
        filters: usize,
        kernel: usize,
        stride: usize,
    },
    Relu,
    /// Identity activation; keeps architecture listings explicit.
    Linear,
    /// Adds `ph` zero rows above and below and `pw` zero columns on each side.
    ZeroPad {
        ph: usize,
        pw: usize,
    },
    /// Inverse of [`LayerSpec::ZeroPad`].
    Crop {
        ch: usize,
        cw: usize,
    },
    Flatten,
    Reshape {
        shape: Vec<usize>,
    },
    /// Flattens every network input and concatenates them; first layer only.
    Concat,
}

fn hwc(shape: &[usize]) -> Result<(usize, usize, usize), String> {
    match *shape {
        [h, w, c] => Ok((h, w, c)),
        _ => Err(format!("expects an (H, W, C) input, got {shape:?}")),
    }
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Conv2dTranspose { .. } => "conv2d_transpose",
            LayerSpec::Relu => "relu",
            LayerSpec::Linear => "linear",
            LayerSpec::ZeroPad { .. } => "zero_pad",
            LayerSpec::Crop { .. } => "crop",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Reshape { .. } => "reshape",
            LayerSpec::Concat => "concat",
        }
    }

    /// Per-sample output shape. `Concat` is resolved by the network since it
    /// sees all inputs; here it only accepts an already flat shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, String> {
        if input.iter().any(|&d| d == 0) {
            return Err(format!("zero-sized input {input:?}"));
        }
        match self {
            LayerSpec::Dense { units } => {
                if *units == 0 {
                    return Err("units must be positive".into());
                }
                if input.len() != 1 {
                    return Err(format!("expects a flat input, got {input:?}"));
                }
                Ok(vec![*units])
            }
            LayerSpec::Conv2d { filters, kernel, stride } => {
                let (h, w, _) = hwc(input)?;
                check_conv(*filters, *kernel, *stride)?;
                if h < *kernel || w < *kernel {
                    return Err(format!("kernel {kernel} larger than input {h}x{w}"));
                }
                Ok(vec![(h - kernel) / stride + 1, (w - kernel) / stride + 1, *filters])
            }
            LayerSpec::Conv2dTranspose { filters, kernel, stride } => {
                let (h, w, _) = hwc(input)?;
                check_conv(*filters, *kernel, *stride)?;
                Ok(vec![(h - 1) * stride + kernel, (w - 1) * stride + kernel, *filters])
            }
            LayerSpec::Relu | LayerSpec::Linear => Ok(input.to_vec()),
            LayerSpec::ZeroPad { ph, pw } => {
                let (h, w, c) = hwc(input)?;
                Ok(vec![h + 2 * ph, w + 2 * pw, c])
            }
            LayerSpec::Crop { ch, cw } => {
                let (h, w, c) = hwc(input)?;
                if h <= 2 * ch || w <= 2 * cw {
                    return Err(format!("cropping ({ch}, {cw}) leaves nothing of {h}x{w}"));
                }
                Ok(vec![h - 2 * ch, w - 2 * cw, c])
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Reshape { shape } => {
                let n: usize = input.iter().product();
                if shape.iter().product::<usize>() != n || shape.is_empty() {
                    return Err(format!("cannot reshape {input:?} into {shape:?}"));
                }
                Ok(shape.clone())
            }
            LayerSpec::Concat => {
                if input.len() != 1 {
                    return Err(format!("expects flat inputs, got {input:?}"));
                }
                Ok(input.to_vec())
            }
        }
    }

    /// Shapes of `(weight, bias)` for a given per-sample input shape.
    pub(crate) fn param_shapes(&self, input: &[usize]) -> Option<(Vec<usize>, Vec<usize>)> {
        match self {
            LayerSpec::Dense { units } => Some((vec![*units, input[0]], vec![*units])),
            LayerSpec::Conv2d { filters, kernel, .. } => {
                Some((vec![*kernel, *kernel, input[2], *filters], vec![*filters]))
            }
            LayerSpec::Conv2dTranspose { filters, kernel, .. } => {
                Some((vec![*kernel, *kernel, *filters, input[2]], vec![*filters]))
            }
            _ => None,
        }
    }

    /// `(fan_in, fan_out)` for Glorot initialization.
    pub(crate) fn fans(&self, input: &[usize]) -> (usize, usize) {
        match self {
            LayerSpec::Dense { units } => (input[0], *units),
            LayerSpec::Conv2d { filters, kernel, .. } => (kernel * kernel * input[2], kernel * kernel * filters),
            LayerSpec::Conv2dTranspose { filters, kernel, .. } => {
                (kernel * kernel * input[2], kernel * kernel * filters)
            }
            _ => (0, 0),
        }
    }
}

fn check_conv(filters: usize, kernel: usize, stride: usize) -> Result<(), String> {
    if filters == 0 || kernel == 0 || stride == 0 {
        return Err("filters, kernel and stride must be positive".into());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Kernels. Each operates on one sample; `x` and outputs are flat slices.

/// Spatial geometry of a convolution: input `(h, w, c)`, output `(oh, ow, f)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub oh: usize,
    pub ow: usize,
    pub f: usize,
    pub k: usize,
    pub s: usize,
}

impl ConvGeom {
    /// Geometry of a valid conv on `(h, w, c)` with `f` filters.
    pub fn conv(h: usize, w: usize, c: usize, f: usize, k: usize, s: usize) -> Self {
        Self { h, w, c, oh: (h - k) / s + 1, ow: (w - k) / s + 1, f, k, s }
    }
}

/// Gathers the `(oh * ow, k * k * c)` patch matrix of `x`. Row `p = i * ow + j`
/// holds patch `(i, j)` in `(ki, kj, ci)` order, matching the weight layout.
fn im2col(g: &ConvGeom, x: &[f64], cols: &mut [f64]) {
    let ConvGeom { w, c, oh, ow, k, s, .. } = *g;
    let (kc, q) = (k * c, k * k * c);
    for i in 0..oh {
        for j in 0..ow {
            let p = i * ow + j;
            for ki in 0..k {
                let src = ((i * s + ki) * w + j * s) * c;
                cols[p * q + ki * kc..p * q + (ki + 1) * kc].copy_from_slice(&x[src..src + kc]);
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch rows back, summing overlaps.
fn col2im_add(g: &ConvGeom, cols: &[f64], x: &mut [f64]) {
    let ConvGeom { w, c, oh, ow, k, s, .. } = *g;
    let (kc, q) = (k * c, k * k * c);
    for i in 0..oh {
        for j in 0..ow {
            let p = i * ow + j;
            for ki in 0..k {
                let dst = ((i * s + ki) * w + j * s) * c;
                for (o, v) in x[dst..dst + kc].iter_mut().zip(&cols[p * q + ki * kc..p * q + (ki + 1) * kc]) {
                    *o += v;
                }
            }
        }
    }
}

/// Row-major `c (m x n) = beta c + a b` where `a` is `m x kk` and `b` is
/// `kk x n`, each given by (row, column) strides.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, kk: usize, n: usize, a: (&[f64], isize, isize), b: (&[f64], isize, isize), beta: f64, c: &mut [f64]) {
    assert!(a.0.len() >= m * kk && b.0.len() >= kk * n && c.len() >= m * n);
    // SAFETY: the asserts bound every index the strides can reach, and `c`
    // does not alias `a` or `b` (it is a distinct `&mut`).
    unsafe {
        matrixmultiply::dgemm(
            m,
            kk,
            n,
            1.0,
            a.0.as_ptr(),
            a.1,
            a.2,
            b.0.as_ptr(),
            b.1,
            b.2,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `y = b + conv(x, W)`, W laid out `(k, k, c, f)`, accumulating into `y`
/// which must hold the bias (or zeros) on entry.
pub fn conv2d_forward(g: &ConvGeom, x: &[f64], wt: &[f64], y: &mut [f64]) {
    let (p, q, f) = (g.oh * g.ow, g.k * g.k * g.c, g.f);
    let mut cols = vec![0.0; p * q];
    im2col(g, x, &mut cols);
    gemm(p, q, f, (&cols, q as isize, 1), (wt, f as isize, 1), 1.0, y);
}

/// Gradients of [`conv2d_forward`]: accumulates `dx` (if given) and `dw`.
pub fn conv2d_backward(g: &ConvGeom, x: &[f64], wt: &[f64], dy: &[f64], dx: Option<&mut [f64]>, dw: &mut [f64]) {
    let (p, q, f) = (g.oh * g.ow, g.k * g.k * g.c, g.f);
    let mut cols = vec![0.0; p * q];
    im2col(g, x, &mut cols);
    // dW += cols^T dy
    gemm(q, p, f, (&cols, 1, q as isize), (dy, f as isize, 1), 1.0, dw);
    if let Some(dx) = dx {
        // dcols = dy W^T
        gemm(p, f, q, (dy, f as isize, 1), (wt, 1, f as isize), 0.0, &mut cols);
        col2im_add(g, &cols, dx);
    }
}

/// Transposed convolution, the adjoint of [`conv2d_forward`] with the same
/// weights. Here the geometry is that of the *forward* conv: `x` is an
/// `(oh, ow, f)` image and `y` receives an `(h, w, c)` image. The layer's
/// weight `(k, k, f_out, c_in)` is the conv weight `(k, k, c, f)`.
pub fn conv2d_transpose_forward(g: &ConvGeom, x: &[f64], wt: &[f64], y: &mut [f64]) {
    let (p, q, f) = (g.oh * g.ow, g.k * g.k * g.c, g.f);
    let mut cols = vec![0.0; p * q];
    gemm(p, f, q, (x, f as isize, 1), (wt, 1, f as isize), 0.0, &mut cols);
    col2im_add(g, &cols, y);
}

/// Gradients of [`conv2d_transpose_forward`]; same geometry convention.
pub fn conv2d_transpose_backward(
    g: &ConvGeom,
    x: &[f64],
    wt: &[f64],
    dy: &[f64],
    dx: Option<&mut [f64]>,
    dw: &mut [f64],
) {
    let (p, q, f) = (g.oh * g.ow, g.k * g.k * g.c, g.f);
    let mut cols = vec![0.0; p * q];
    im2col(g, dy, &mut cols);
    // dW += dcols^T x
    gemm(q, p, f, (&cols, 1, q as isize), (x, f as isize, 1), 1.0, dw);
    if let Some(dx) = dx {
        gemm(p, q, f, (&cols, q as isize, 1), (wt, f as isize, 1), 1.0, dx);
    }
}

/// `y += W x` with W `(units, d)`.
pub fn dense_forward(x: &[f64], wt: &[f64], y: &mut [f64]) {
    let d = x.len();
    for (u, o) in y.iter_mut().enumerate() {
        *o += wt[u * d..(u + 1) * d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

pub fn dense_backward(x: &[f64], wt: &[f64], dy: &[f64], dx: Option<&mut [f64]>, dw: &mut [f64]) {
    let d = x.len();
    for (u, &g) in dy.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        for (o, xv) in dw[u * d..(u + 1) * d].iter_mut().zip(x) {
            *o += g * xv;
        }
    }
    if let Some(dx) = dx {
        for (u, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (o, wv) in dx.iter_mut().zip(&wt[u * d..(u + 1) * d]) {
                *o += g * wv;
            }
        }
    }
}

/// Copies an `(h, w, c)` image into the interior of a zeroed padded one.
pub fn pad_forward(x: &[f64], (h, w, c): (usize, usize, usize), ph: usize, pw: usize, y: &mut [f64]) {
    let pwid = w + 2 * pw;
    for i in 0..h {
        let src = &x[i * w * c..(i + 1) * w * c];
        let start = ((i + ph) * pwid + pw) * c;
        y[start..start + w * c].copy_from_slice(src);
    }
}

/// Adjoint of [`pad_forward`]: extracts the interior of a padded image.
pub fn crop_forward(x: &[f64], (h, w, c): (usize, usize, usize), ch: usize, cw: usize, y: &mut [f64]) {
    let iw = w - 2 * cw;
    for i in 0..h - 2 * ch {
        let start = ((i + ch) * w + cw) * c;
        y[i * iw * c..(i + 1) * iw * c].copy_from_slice(&x[start..start + iw * c]);
    }
}
