//! Sequential layer stacks with an optional leading concat, and their tapes.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::{
    conv2d_backward, conv2d_forward, conv2d_transpose_backward, conv2d_transpose_forward, crop_forward, dense_backward,
    dense_forward, pad_forward, ConvGeom, LayerSpec,
};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

static NEXT_NETWORK: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone)]
struct Layer {
    spec: LayerSpec,
    /// Per-sample input and output shapes.
    input: Vec<usize>,
    output: Vec<usize>,
    params: Option<(ParamId, ParamId)>,
}

/// A layer stack whose parameters live in a shared [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Network {
    id: u64,
    input_shapes: Vec<Vec<usize>>,
    layers: Vec<Layer>,
}

/// Intermediate values recorded by [`Network::forward`].
#[derive(Debug, Clone)]
pub struct Tape {
    network: u64,
    version: u64,
    batch: usize,
    /// Input of each layer (after concat for layer 0).
    inputs: Vec<Tensor>,
}

impl Network {
    /// Builds the stack, registering Glorot-initialized weights and zero
    /// biases in `store` under `"{prefix}.{layer}.w"` / `".b"`.
    pub fn new(
        specs: &[LayerSpec],
        input_shapes: &[Vec<usize>],
        store: &mut ParamStore,
        prefix: &str,
        seed: u64,
    ) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::shape(0, "network", "no layers"));
        }
        if input_shapes.is_empty() {
            return Err(Error::shape(0, "network", "no inputs"));
        }
        let concat = specs[0] == LayerSpec::Concat;
        if !concat && input_shapes.len() != 1 {
            return Err(Error::shape(0, specs[0].kind(), "several inputs need a leading concat layer"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shape = if concat {
            vec![input_shapes.iter().map(|s| s.iter().product::<usize>()).sum()]
        } else {
            input_shapes[0].clone()
        };
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            if i > 0 && *spec == LayerSpec::Concat {
                return Err(Error::shape(i, "concat", "concat is only allowed as the first layer"));
            }
            let output = spec.output_shape(&shape).map_err(|m| Error::shape(i, spec.kind(), m))?;
            let params = match spec.param_shapes(&shape) {
                Some((ws, bs)) => {
                    let (fan_in, fan_out) = spec.fans(&shape);
                    let w = store.add_glorot(format!("{prefix}.{i}.w"), ws, fan_in, fan_out, &mut rng)?;
                    let n = bs[0];
                    let b = store.add(format!("{prefix}.{i}.b"), bs, vec![0.0; n])?;
                    Some((w, b))
                }
                None => None,
            };
            layers.push(Layer { spec: spec.clone(), input: shape, output: output.clone(), params });
            shape = output;
        }
        Ok(Self { id: NEXT_NETWORK.fetch_add(1, Ordering::Relaxed), input_shapes: input_shapes.to_vec(), layers })
    }

    pub fn input_shapes(&self) -> &[Vec<usize>] {
        &self.input_shapes
    }

    /// Per-sample output shape.
    pub fn output_shape(&self) -> &[usize] {
        &self.layers.last().expect("nonempty").output
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec.clone()).collect()
    }

    /// Per-sample shapes after every layer.
    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.layers.iter().map(|l| l.output.clone()).collect()
    }

    fn gather_inputs(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        if inputs.len() != self.input_shapes.len() {
            return Err(Error::shape(
                0,
                self.layers[0].spec.kind(),
                format!("expected {} inputs, got {}", self.input_shapes.len(), inputs.len()),
            ));
        }
        let batch = inputs[0].shape().first().copied().unwrap_or(0);
        for (k, (t, want)) in inputs.iter().zip(&self.input_shapes).enumerate() {
            if t.shape().len() != want.len() + 1 || t.shape()[0] != batch || &t.shape()[1..] != want.as_slice() {
                return Err(Error::shape(
                    0,
                    self.layers[0].spec.kind(),
                    format!("input {k}: expected [batch, {want:?}], got {:?}", t.shape()),
                ));
            }
        }
        if batch == 0 {
            return Err(Error::shape(0, self.layers[0].spec.kind(), "empty batch"));
        }
        if inputs.len() == 1 {
            return Ok(inputs[0].clone());
        }
        let total: usize = inputs.iter().map(|t| t.sample_len()).sum();
        let mut data = Vec::with_capacity(batch * total);
        for b in 0..batch {
            for t in inputs {
                data.extend_from_slice(t.sample(b));
            }
        }
        Ok(Tensor::from_raw(vec![batch, total], data))
    }

    /// Output only, without recording a tape.
    pub fn predict(&self, store: &ParamStore, inputs: &[&Tensor]) -> Result<Tensor> {
        let mut x = self.gather_inputs(inputs)?;
        for layer in &self.layers {
            x = layer_forward(layer, store, &x);
        }
        Ok(x)
    }

    pub fn forward(&self, store: &ParamStore, inputs: &[&Tensor]) -> Result<(Tensor, Tape)> {
        let mut x = self.gather_inputs(inputs)?;
        let batch = x.batch();
        let mut recorded = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let y = layer_forward(layer, store, &x);
            recorded.push(x);
            x = y;
        }
        Ok((x, Tape { network: self.id, version: store.version(), batch, inputs: recorded }))
    }

    /// Propagates `dout` back through the stack, accumulating parameter
    /// gradients into `store` and returning one gradient per network input.
    pub fn backward(&self, store: &mut ParamStore, tape: &Tape, dout: &Tensor) -> Result<Vec<Tensor>> {
        self.backward_impl(store, tape, dout, true).map(|g| g.expect("input gradients requested"))
    }

    /// Like [`Network::backward`] but skips the input gradient of the first
    /// layer, which an encoder never needs.
    pub fn backward_params(&self, store: &mut ParamStore, tape: &Tape, dout: &Tensor) -> Result<()> {
        self.backward_impl(store, tape, dout, false).map(|_| ())
    }

    fn backward_impl(
        &self,
        store: &mut ParamStore,
        tape: &Tape,
        dout: &Tensor,
        input_grad: bool,
    ) -> Result<Option<Vec<Tensor>>> {
        if tape.network != self.id {
            return Err(Error::StaleTape("tape was recorded by a different network".into()));
        }
        if tape.version != store.version() {
            return Err(Error::StaleTape(format!(
                "parameters changed since forward (version {} -> {})",
                tape.version,
                store.version()
            )));
        }
        let last = self.layers.len() - 1;
        let mut want = vec![tape.batch];
        want.extend_from_slice(&self.layers[last].output);
        if dout.shape() != want.as_slice() {
            return Err(Error::shape(
                last,
                self.layers[last].spec.kind(),
                format!("output gradient shape {:?}, expected {want:?}", dout.shape()),
            ));
        }
        let mut g = dout.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            g = layer_backward(layer, store, &tape.inputs[i], &g, i > 0 || input_grad);
        }
        if !input_grad {
            return Ok(None);
        }
        // `g` now has the (concatenated) input shape.
        if self.input_shapes.len() == 1 {
            let mut shape = vec![tape.batch];
            shape.extend_from_slice(&self.input_shapes[0]);
            return Ok(Some(vec![Tensor::from_raw(shape, g.into_data())]));
        }
        let lens: Vec<usize> = self.input_shapes.iter().map(|s| s.iter().product()).collect();
        let total: usize = lens.iter().sum();
        let mut outs: Vec<Vec<f64>> = lens.iter().map(|n| Vec::with_capacity(n * tape.batch)).collect();
        for b in 0..tape.batch {
            let mut off = b * total;
            for (o, n) in outs.iter_mut().zip(&lens) {
                o.extend_from_slice(&g.data()[off..off + n]);
                off += n;
            }
        }
        Ok(Some(
            outs.into_iter()
                .zip(&self.input_shapes)
                .map(|(d, s)| {
                    let mut shape = vec![tape.batch];
                    shape.extend_from_slice(s);
                    Tensor::from_raw(shape, d)
                })
                .collect(),
        ))
    }
}

fn batched(batch: usize, per: &[usize]) -> Vec<usize> {
    let mut s = Vec::with_capacity(per.len() + 1);
    s.push(batch);
    s.extend_from_slice(per);
    s
}

fn geom(layer: &Layer) -> ConvGeom {
    let (i, o) = (&layer.input, &layer.output);
    match layer.spec {
        LayerSpec::Conv2d { kernel, stride, .. } => ConvGeom::conv(i[0], i[1], i[2], o[2], kernel, stride),
        LayerSpec::Conv2dTranspose { kernel, stride, .. } => ConvGeom::conv(o[0], o[1], o[2], i[2], kernel, stride),
        _ => unreachable!("not a convolution"),
    }
}

fn layer_forward(layer: &Layer, store: &ParamStore, x: &Tensor) -> Tensor {
    let batch = x.batch();
    let in_len: usize = layer.input.iter().product();
    let out_len: usize = layer.output.iter().product();
    let shape = batched(batch, &layer.output);
    match &layer.spec {
        LayerSpec::Relu => Tensor::from_raw(shape, x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()),
        LayerSpec::Linear | LayerSpec::Flatten | LayerSpec::Reshape { .. } | LayerSpec::Concat => {
            Tensor::from_raw(shape, x.data().to_vec())
        }
        LayerSpec::ZeroPad { ph, pw } => {
            let mut y = vec![0.0; batch * out_len];
            let d = (layer.input[0], layer.input[1], layer.input[2]);
            for b in 0..batch {
                pad_forward(x.sample(b), d, *ph, *pw, &mut y[b * out_len..(b + 1) * out_len]);
            }
            Tensor::from_raw(shape, y)
        }
        LayerSpec::Crop { ch, cw } => {
            let mut y = vec![0.0; batch * out_len];
            let d = (layer.input[0], layer.input[1], layer.input[2]);
            for b in 0..batch {
                crop_forward(x.sample(b), d, *ch, *cw, &mut y[b * out_len..(b + 1) * out_len]);
            }
            Tensor::from_raw(shape, y)
        }
        LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. } | LayerSpec::Conv2dTranspose { .. } => {
            let (wid, bid) = layer.params.expect("parametrized layer");
            let (wt, bias) = (store.value(wid), store.value(bid));
            let mut y: Vec<f64> = bias.iter().copied().cycle().take(batch * out_len).collect();
            for b in 0..batch {
                let xs = &x.data()[b * in_len..(b + 1) * in_len];
                let ys = &mut y[b * out_len..(b + 1) * out_len];
                match layer.spec {
                    LayerSpec::Dense { .. } => dense_forward(xs, wt, ys),
                    LayerSpec::Conv2d { .. } => conv2d_forward(&geom(layer), xs, wt, ys),
                    _ => conv2d_transpose_forward(&geom(layer), xs, wt, ys),
                }
            }
            Tensor::from_raw(shape, y)
        }
    }
}

fn layer_backward(layer: &Layer, store: &mut ParamStore, x: &Tensor, dy: &Tensor, need_dx: bool) -> Tensor {
    let batch = x.batch();
    let in_len: usize = layer.input.iter().product();
    let out_len: usize = layer.output.iter().product();
    let shape = x.shape().to_vec();
    match &layer.spec {
        LayerSpec::Relu => Tensor::from_raw(
            shape,
            x.data().iter().zip(dy.data()).map(|(&v, &g)| if v > 0.0 { g } else { 0.0 }).collect(),
        ),
        LayerSpec::Linear | LayerSpec::Flatten | LayerSpec::Reshape { .. } | LayerSpec::Concat => {
            Tensor::from_raw(shape, dy.data().to_vec())
        }
        LayerSpec::ZeroPad { ph, pw } => {
            let mut dx = vec![0.0; batch * in_len];
            let d = (layer.output[0], layer.output[1], layer.output[2]);
            for b in 0..batch {
                crop_forward(dy.sample(b), d, *ph, *pw, &mut dx[b * in_len..(b + 1) * in_len]);
            }
            Tensor::from_raw(shape, dx)
        }
        LayerSpec::Crop { ch, cw } => {
            let mut dx = vec![0.0; batch * in_len];
            let d = (layer.output[0], layer.output[1], layer.output[2]);
            for b in 0..batch {
                pad_forward(dy.sample(b), d, *ch, *cw, &mut dx[b * in_len..(b + 1) * in_len]);
            }
            Tensor::from_raw(shape, dx)
        }
        LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. } | LayerSpec::Conv2dTranspose { .. } => {
            let (wid, bid) = layer.params.expect("parametrized layer");
            {
                let db = store.grad_mut(bid);
                let nb = db.len();
                for (k, g) in dy.data().iter().enumerate() {
                    db[k % nb] += g;
                }
            }
            let mut dx = vec![0.0; if need_dx { batch * in_len } else { 0 }];
            let (wt, dw) = store.value_and_grad(wid);
            for b in 0..batch {
                let xs = &x.data()[b * in_len..(b + 1) * in_len];
                let ds = &dy.data()[b * out_len..(b + 1) * out_len];
                let dxs = if need_dx { Some(&mut dx[b * in_len..(b + 1) * in_len]) } else { None };
                match layer.spec {
                    LayerSpec::Dense { .. } => dense_backward(xs, wt, ds, dxs, dw),
                    LayerSpec::Conv2d { .. } => conv2d_backward(&geom(layer), xs, wt, ds, dxs, dw),
                    _ => conv2d_transpose_backward(&geom(layer), xs, wt, ds, dxs, dw),
                }
            }
            if need_dx {
                Tensor::from_raw(shape, dx)
            } else {
                Tensor::from_raw(vec![0], dx)
            }
        }
    }
}
