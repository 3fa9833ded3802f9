use rand::Rng;

use super::init::{glorot_conv_kernel, glorot_uniform_init};
use super::layer::{
    layer_names, propagate_shapes, same_pad_before, Activation, LayerKind, LayerSpec, Padding, TapPoint,
};
use super::ops::{col2im, gemm, im2col, max_pool, softmax_rows, Window};
use super::Tensor;
use crate::error::{Error, Result};
use crate::seed;

/// Rows per block on the inference path.
const INFER_BLOCK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Tensor,
    pub bias: Tensor,
}

/// An ordered layer stack with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<LayerSpec>,
    shapes: Vec<Vec<usize>>,
    params: Vec<Option<LayerParams>>,
    trainable: Vec<bool>,
    rng_seed: u64,
}

/// Per-layer activations recorded by [`Network::forward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    mode: Mode,
    pre: Vec<Tensor>,
    post: Vec<Option<Tensor>>,
    masks: Vec<Option<Vec<f32>>>,
    pool_arg: Vec<Option<Vec<u32>>>,
}

impl ForwardTrace {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.pre.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pre.is_empty()
    }

    /// Output of layer `i` before its activation function.
    pub fn pre(&self, i: usize) -> &Tensor {
        &self.pre[i]
    }

    /// Output of layer `i` after its activation function.
    pub fn post(&self, i: usize) -> &Tensor {
        self.post[i].as_ref().unwrap_or(&self.pre[i])
    }

    /// Dropout mask of layer `i` (already scaled by the inverse keep probability).
    pub fn dropout_mask(&self, i: usize) -> Option<&[f32]> {
        self.masks[i].as_deref()
    }
}

/// Parameter gradients from [`Network::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub loss: f32,
    layers: Vec<Option<LayerParams>>,
}

impl Gradients {
    /// Gradient for layer `i`; `None` for parameterless or frozen layers.
    pub fn layer(&self, i: usize) -> Option<&LayerParams> {
        self.layers.get(i).and_then(|g| g.as_ref())
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn from_layers(loss: f32, layers: Vec<Option<LayerParams>>) -> Self {
        Self { loss, layers }
    }
}

struct LayerOutput {
    pre: Tensor,
    post: Option<Tensor>,
    mask: Option<Vec<f32>>,
    arg: Option<Vec<u32>>,
}

impl Network {
    /// Builds a network with Glorot-uniform weights and zero biases.
    pub fn new(layers: Vec<LayerSpec>, rng_seed: u64) -> Result<Self> {
        let shapes = propagate_shapes(&layers)?;
        let mut rng = seed::rng(rng_seed);
        let mut params = Vec::with_capacity(layers.len());
        for (i, layer) in layers.iter().enumerate() {
            params.push(init_params(layer, &shapes, i, &mut rng)?);
        }
        let trainable = vec![true; layers.len()];
        Ok(Self {
            layers,
            shapes,
            params,
            trainable,
            rng_seed,
        })
    }

    /// Rebuilds a network from stored parts, validating every parameter shape.
    pub fn from_parts(
        layers: Vec<LayerSpec>,
        params: Vec<Option<LayerParams>>,
        trainable: Vec<bool>,
        rng_seed: u64,
    ) -> Result<Self> {
        let shapes = propagate_shapes(&layers)?;
        if params.len() != layers.len() || trainable.len() != layers.len() {
            return Err(Error::InvalidShape("parameter table length mismatch".into()));
        }
        for (i, p) in params.iter().enumerate() {
            let want = param_shapes(&layers[i], &shapes, i);
            let got = p
                .as_ref()
                .map(|p| (p.weights.shape().to_vec(), p.bias.shape().to_vec()));
            if want != got {
                return Err(Error::InvalidShape(format!(
                    "layer {i}: parameter shapes {got:?}, expected {want:?}"
                )));
            }
        }
        Ok(Self {
            layers,
            shapes,
            params,
            trainable,
            rng_seed,
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn layer_names(&self) -> Vec<String> {
        layer_names(&self.layers)
    }

    /// Index of the layer with the given conventional name.
    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layer_names().iter().position(|n| n == name)
    }

    /// Per-sample output shape of layer `i`.
    pub fn output_shape(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.shapes[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.shapes.last().and_then(|s| s.first()).unwrap_or(&0)
    }

    pub fn params(&self, i: usize) -> Option<&LayerParams> {
        self.params[i].as_ref()
    }

    pub fn params_mut(&mut self, i: usize) -> Option<&mut LayerParams> {
        self.params[i].as_mut()
    }

    pub fn all_params(&self) -> &[Option<LayerParams>] {
        &self.params
    }

    pub fn is_trainable(&self, i: usize) -> bool {
        self.trainable[i]
    }

    pub fn trainable_mask(&self) -> &[bool] {
        &self.trainable
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn param_count(&self) -> usize {
        self.params
            .iter()
            .flatten()
            .map(|p| p.weights.len() + p.bias.len())
            .sum()
    }

    /// Marks layers `0..=through` frozen and every later layer trainable.
    pub fn freeze_prefix(&mut self, through: usize) -> Result<()> {
        self.check_index(through)?;
        for (i, t) in self.trainable.iter_mut().enumerate() {
            *t = i > through;
        }
        Ok(())
    }

    /// Redraws the weights of layer `i` (zero bias) from the given seed.
    pub fn reinit_layer(&mut self, i: usize, rng_seed: u64) -> Result<()> {
        self.check_index(i)?;
        let mut rng = seed::rng(rng_seed);
        self.params[i] = init_params(&self.layers[i], &self.shapes, i, &mut rng)?;
        Ok(())
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.layers.len() {
            return Err(Error::InvalidLayer(format!(
                "layer index {i} out of range for {} layers",
                self.layers.len()
            )));
        }
        Ok(())
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        if batch.shape().len() < 2 || &batch.shape()[1..] != self.input_shape() {
            return Err(Error::InvalidInput(format!(
                "batch shape {:?} does not match input shape {:?}",
                batch.shape(),
                self.input_shape()
            )));
        }
        Ok(())
    }

    /// Resolves a tap on a Flatten or Dropout layer to the layer producing its data.
    pub fn resolve_tap(&self, layer: usize) -> Result<usize> {
        self.check_index(layer)?;
        let mut i = layer;
        while i > 0 && self.layers[i].is_passthrough() {
            i -= 1;
        }
        Ok(i)
    }

    /// Full forward pass recording every layer. Returns class probabilities.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        batch: &Tensor,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Tensor, ForwardTrace)> {
        self.check_batch(batch)?;
        let n = self.layers.len();
        let mut trace = ForwardTrace {
            mode,
            pre: Vec::with_capacity(n),
            post: Vec::with_capacity(n),
            masks: Vec::with_capacity(n),
            pool_arg: Vec::with_capacity(n),
        };
        trace.pre.push(batch.clone());
        trace.post.push(None);
        trace.masks.push(None);
        trace.pool_arg.push(None);
        for i in 1..n {
            let out = self.apply_layer(i, trace.post(i - 1), mode, rng)?;
            trace.pre.push(out.pre);
            trace.post.push(out.post);
            trace.masks.push(out.mask);
            trace.pool_arg.push(out.arg);
        }
        let probs = trace.post(n - 1).clone();
        if !probs.all_finite() {
            return Err(Error::NonFinite("forward output".into()));
        }
        Ok((probs, trace))
    }

    /// Inference-mode class probabilities, processed in blocks.
    pub fn infer(&self, batch: &Tensor) -> Result<Tensor> {
        Ok(self.infer_taps(batch, &[])?.0)
    }

    /// Predicted classes (lowest index on ties).
    pub fn predict(&self, batch: &Tensor) -> Result<Vec<u32>> {
        Ok(self.infer(batch)?.argmax_rows())
    }

    /// Inference pass returning probabilities plus the flattened outputs of
    /// the requested `(layer, point)` taps.
    pub fn infer_taps(&self, batch: &Tensor, taps: &[(usize, TapPoint)]) -> Result<(Tensor, Vec<Tensor>)> {
        self.check_batch(batch)?;
        let resolved: Vec<(usize, TapPoint)> = taps
            .iter()
            .map(|&(l, p)| Ok((self.resolve_tap(l)?, p)))
            .collect::<Result<_>>()?;
        let rows = batch.rows();
        let classes = self.num_classes();
        let mut probs = Vec::with_capacity(rows * classes);
        let mut tapped: Vec<Vec<f32>> = resolved
            .iter()
            .map(|&(l, _)| Vec::with_capacity(rows * self.features_at(l)))
            .collect();
        let mut rng = seed::rng(0);
        let mut start = 0;
        while start < rows {
            let end = (start + INFER_BLOCK).min(rows);
            let idx: Vec<usize> = (start..end).collect();
            let mut cur = batch.select_rows(&idx);
            for (t, &(l, _)) in resolved.iter().enumerate() {
                if l == 0 {
                    tapped[t].extend_from_slice(cur.data());
                }
            }
            for i in 1..self.layers.len() {
                if self.layers[i].is_passthrough() {
                    continue;
                }
                let out = self.apply_layer(i, &cur, Mode::Infer, &mut rng)?;
                for (t, &(l, p)) in resolved.iter().enumerate() {
                    if l == i {
                        let src = match (p, &out.post) {
                            (TapPoint::PostActivation, Some(post)) => post,
                            _ => &out.pre,
                        };
                        tapped[t].extend_from_slice(src.data());
                    }
                }
                cur = match out.post {
                    Some(p) => p,
                    None => out.pre,
                };
            }
            probs.extend_from_slice(cur.data());
            start = end;
        }
        let probs = Tensor::new(vec![rows, classes], probs)?;
        if !probs.all_finite() {
            return Err(Error::NonFinite("inference output".into()));
        }
        let taps = resolved
            .iter()
            .zip(tapped)
            .map(|(&(l, _), d)| Tensor::new(vec![rows, self.features_at(l)], d))
            .collect::<Result<_>>()?;
        Ok((probs, taps))
    }

    /// Flattened output size of layer `i`.
    pub fn features_at(&self, i: usize) -> usize {
        self.shapes[i].iter().product()
    }

    /// Output of `layer` at `point` for `batch`, flattened to `(batch, features)`.
    pub fn activation_at(&self, layer: usize, batch: &Tensor, point: TapPoint) -> Result<Tensor> {
        let (_, mut taps) = self.infer_taps(batch, &[(layer, point)])?;
        Ok(taps.remove(0))
    }

    fn apply_layer<R: Rng + ?Sized>(
        &self,
        i: usize,
        x: &Tensor,
        mode: Mode,
        rng: &mut R,
    ) -> Result<LayerOutput> {
        let spec = &self.layers[i];
        let b = x.rows();
        let mut out_shape = vec![b];
        out_shape.extend_from_slice(&self.shapes[i]);
        let plain = |pre: Tensor| LayerOutput {
            pre,
            post: None,
            mask: None,
            arg: None,
        };
        Ok(match &spec.kind {
            LayerKind::Input { .. } => plain(x.clone()),
            LayerKind::Dense { units } | LayerKind::SoftmaxOutput { classes: units } => {
                let p = self.params[i].as_ref().expect("param layer");
                let fan_in = x.row_len();
                let mut z = vec![0.0f32; b * units];
                for row in z.chunks_mut(*units) {
                    row.copy_from_slice(p.bias.data());
                }
                gemm(
                    b,
                    fan_in,
                    *units,
                    x.data(),
                    false,
                    p.weights.data(),
                    false,
                    &mut z,
                    1.0,
                );
                let pre = Tensor::new(out_shape, z)?;
                let post = if matches!(spec.kind, LayerKind::SoftmaxOutput { .. }) {
                    let mut probs = pre.clone();
                    softmax_rows(probs.data_mut(), *units);
                    Some(probs)
                } else {
                    activate(&pre, spec.activation)
                };
                LayerOutput {
                    pre,
                    post,
                    mask: None,
                    arg: None,
                }
            }
            LayerKind::Conv2D { filters, .. } => {
                let p = self.params[i].as_ref().expect("param layer");
                let g = self.window(i);
                let ncol = g.col_cols();
                let in_len = x.row_len();
                let mut col = vec![0.0f32; g.col_rows() * ncol];
                let mut z = vec![0.0f32; b * filters * ncol];
                for s in 0..b {
                    im2col(&x.data()[s * in_len..(s + 1) * in_len], &g, &mut col);
                    let out = &mut z[s * filters * ncol..(s + 1) * filters * ncol];
                    for (f, row) in out.chunks_mut(ncol).enumerate() {
                        row.fill(p.bias.data()[f]);
                    }
                    gemm(
                        *filters,
                        g.col_rows(),
                        ncol,
                        p.weights.data(),
                        false,
                        &col,
                        false,
                        out,
                        1.0,
                    );
                }
                let pre = Tensor::new(out_shape, z)?;
                let post = activate(&pre, spec.activation);
                LayerOutput {
                    pre,
                    post,
                    mask: None,
                    arg: None,
                }
            }
            LayerKind::MaxPool { .. } => {
                let g = self.window(i);
                let in_len = x.row_len();
                let out_len = g.channels * g.col_cols();
                let mut z = vec![0.0f32; b * out_len];
                let mut arg = vec![0u32; b * out_len];
                for s in 0..b {
                    max_pool(
                        &x.data()[s * in_len..(s + 1) * in_len],
                        &g,
                        &mut z[s * out_len..(s + 1) * out_len],
                        &mut arg[s * out_len..(s + 1) * out_len],
                    );
                }
                LayerOutput {
                    pre: Tensor::new(out_shape, z)?,
                    post: None,
                    mask: None,
                    arg: Some(arg),
                }
            }
            LayerKind::Flatten => plain(x.clone().reshape(out_shape)?),
            LayerKind::Dropout { rate } => {
                if mode == Mode::Train && *rate > 0.0 {
                    let keep = 1.0 - rate;
                    let scale = 1.0 / keep;
                    let mask: Vec<f32> = (0..x.len())
                        .map(|_| if rng.gen::<f32>() < keep { scale } else { 0.0 })
                        .collect();
                    let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
                    LayerOutput {
                        pre: Tensor::new(out_shape, data)?,
                        post: None,
                        mask: Some(mask),
                        arg: None,
                    }
                } else {
                    LayerOutput {
                        pre: x.clone(),
                        post: None,
                        mask: Some(vec![1.0; x.len()]),
                        arg: None,
                    }
                }
            }
        })
    }

    fn window(&self, i: usize) -> Window {
        let input = &self.shapes[i - 1];
        let out = &self.shapes[i];
        let (kernel, stride, padding) = match self.layers[i].kind {
            LayerKind::Conv2D {
                kernel,
                stride,
                padding,
                ..
            } => (kernel, stride, padding),
            LayerKind::MaxPool { kernel, stride } => (kernel, stride, Padding::Valid),
            _ => unreachable!("window on non-spatial layer"),
        };
        let (pad_top, pad_left) = match padding {
            Padding::Valid => (0, 0),
            Padding::Same => (
                same_pad_before(input[1], kernel, stride),
                same_pad_before(input[2], kernel, stride),
            ),
        };
        Window {
            channels: input[0],
            height: input[1],
            width: input[2],
            kernel,
            stride,
            pad_top,
            pad_left,
            out_h: out[1],
            out_w: out[2],
        }
    }

    /// Mean cross-entropy gradients for a train-mode trace and one-hot targets.
    pub fn backward(&self, trace: &ForwardTrace, targets: &Tensor) -> Result<Gradients> {
        let n = self.layers.len();
        if trace.len() != n {
            return Err(Error::InvalidInput("trace does not match network".into()));
        }
        let probs = trace.post(n - 1);
        if targets.shape() != probs.shape() {
            return Err(Error::InvalidInput(format!(
                "targets shape {:?} does not match output shape {:?}",
                targets.shape(),
                probs.shape()
            )));
        }
        let b = probs.rows();
        let inv_b = 1.0 / b as f32;
        let mut loss = 0.0f64;
        for (p, y) in probs.data().iter().zip(targets.data()) {
            if *y != 0.0 {
                loss -= (*y as f64) * (p.max(1e-12) as f64).ln();
            }
        }
        let loss = (loss / b as f64) as f32;
        let mut grads: Vec<Option<LayerParams>> = vec![None; n];
        let first = (1..n).find(|&i| self.layers[i].has_params() && self.trainable[i]);
        let Some(first) = first else {
            return Ok(Gradients { loss, layers: grads });
        };
        let dz: Vec<f32> = probs
            .data()
            .iter()
            .zip(targets.data())
            .map(|(p, y)| (p - y) * inv_b)
            .collect();
        // Gradient w.r.t. the current layer's output (for the softmax layer, its logits).
        let mut delta = dz;
        for i in (first..n).rev() {
            let spec = &self.layers[i];
            let x = trace.post(i - 1);
            let need_dx = i > first;
            match &spec.kind {
                LayerKind::Dense { units } | LayerKind::SoftmaxOutput { classes: units } => {
                    if spec.activation == Activation::Relu {
                        relu_grad(&mut delta, trace.pre(i).data());
                    }
                    let p = self.params[i].as_ref().expect("param layer");
                    let fan_in = x.row_len();
                    if self.trainable[i] {
                        let mut dw = vec![0.0f32; fan_in * units];
                        gemm(fan_in, b, *units, x.data(), true, &delta, false, &mut dw, 0.0);
                        let mut db = vec![0.0f32; *units];
                        for row in delta.chunks(*units) {
                            for (acc, v) in db.iter_mut().zip(row) {
                                *acc += v;
                            }
                        }
                        grads[i] = Some(LayerParams {
                            weights: Tensor::new(vec![fan_in, *units], dw)?,
                            bias: Tensor::new(vec![*units], db)?,
                        });
                    }
                    if need_dx {
                        let mut dx = vec![0.0f32; b * fan_in];
                        gemm(
                            b,
                            *units,
                            fan_in,
                            &delta,
                            false,
                            p.weights.data(),
                            true,
                            &mut dx,
                            0.0,
                        );
                        delta = dx;
                    }
                }
                LayerKind::Conv2D { filters, .. } => {
                    if spec.activation == Activation::Relu {
                        relu_grad(&mut delta, trace.pre(i).data());
                    }
                    let p = self.params[i].as_ref().expect("param layer");
                    let g = self.window(i);
                    let ncol = g.col_cols();
                    let krows = g.col_rows();
                    let in_len = x.row_len();
                    let out_len = filters * ncol;
                    let mut col = vec![0.0f32; krows * ncol];
                    let mut dw = vec![0.0f32; filters * krows];
                    let mut db = vec![0.0f32; *filters];
                    let mut dx = if need_dx {
                        vec![0.0f32; b * in_len]
                    } else {
                        Vec::new()
                    };
                    for s in 0..b {
                        let d = &delta[s * out_len..(s + 1) * out_len];
                        if self.trainable[i] {
                            im2col(&x.data()[s * in_len..(s + 1) * in_len], &g, &mut col);
                            gemm(*filters, ncol, krows, d, false, &col, true, &mut dw, 1.0);
                            for (f, row) in d.chunks(ncol).enumerate() {
                                db[f] += row.iter().sum::<f32>();
                            }
                        }
                        if need_dx {
                            gemm(
                                krows,
                                *filters,
                                ncol,
                                p.weights.data(),
                                true,
                                d,
                                false,
                                &mut col,
                                0.0,
                            );
                            col2im(&col, &g, &mut dx[s * in_len..(s + 1) * in_len]);
                        }
                    }
                    if self.trainable[i] {
                        grads[i] = Some(LayerParams {
                            weights: Tensor::new(vec![*filters, krows], dw)?,
                            bias: Tensor::new(vec![*filters], db)?,
                        });
                    }
                    if need_dx {
                        delta = dx;
                    }
                }
                LayerKind::MaxPool { .. } => {
                    let arg = trace.pool_arg[i].as_ref().expect("pool indices");
                    let in_len = x.row_len();
                    let out_len = self.features_at(i);
                    let mut dx = vec![0.0f32; b * in_len];
                    for s in 0..b {
                        let dxs = &mut dx[s * in_len..(s + 1) * in_len];
                        for o in 0..out_len {
                            dxs[arg[s * out_len + o] as usize] += delta[s * out_len + o];
                        }
                    }
                    delta = dx;
                }
                LayerKind::Flatten => {}
                LayerKind::Dropout { .. } => {
                    if let Some(mask) = trace.dropout_mask(i) {
                        for (d, m) in delta.iter_mut().zip(mask) {
                            *d *= m;
                        }
                    }
                }
                LayerKind::Input { .. } => unreachable!("input inside backward range"),
            }
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        for g in grads.iter().flatten() {
            if !g.weights.all_finite() || !g.bias.all_finite() {
                return Err(Error::NonFinite("gradients".into()));
            }
        }
        Ok(Gradients { loss, layers: grads })
    }
}

fn activate(pre: &Tensor, act: Activation) -> Option<Tensor> {
    match act {
        Activation::None => None,
        Activation::Relu => {
            let mut post = pre.clone();
            for v in post.data_mut() {
                *v = v.max(0.0);
            }
            Some(post)
        }
    }
}

fn relu_grad(delta: &mut [f32], pre: &[f32]) {
    for (d, z) in delta.iter_mut().zip(pre) {
        if *z <= 0.0 {
            *d = 0.0;
        }
    }
}

fn param_shapes(spec: &LayerSpec, shapes: &[Vec<usize>], i: usize) -> Option<(Vec<usize>, Vec<usize>)> {
    let fan_in: usize = if i > 0 { shapes[i - 1].iter().product() } else { 0 };
    match spec.kind {
        LayerKind::Dense { units } | LayerKind::SoftmaxOutput { classes: units } => {
            Some((vec![fan_in, units], vec![units]))
        }
        LayerKind::Conv2D { filters, kernel, .. } => {
            Some((vec![filters, shapes[i - 1][0] * kernel * kernel], vec![filters]))
        }
        _ => None,
    }
}

fn init_params<R: Rng + ?Sized>(
    spec: &LayerSpec,
    shapes: &[Vec<usize>],
    i: usize,
    rng: &mut R,
) -> Result<Option<LayerParams>> {
    Ok(match spec.kind {
        LayerKind::Dense { units } | LayerKind::SoftmaxOutput { classes: units } => {
            let fan_in = shapes[i - 1].iter().product();
            Some(LayerParams {
                weights: glorot_uniform_init(&[fan_in, units], rng)?,
                bias: Tensor::zeros(&[units]),
            })
        }
        LayerKind::Conv2D { filters, kernel, .. } => Some(LayerParams {
            weights: glorot_conv_kernel(filters, shapes[i - 1][0], kernel, rng)?,
            bias: Tensor::zeros(&[filters]),
        }),
        _ => None,
    })
}
