use rand::Rng as _;
use sha2::{Digest, Sha256};

use super::gemm::{gemm, transpose, transpose_into};
use super::layer::Layer;
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::seed;

/// Weight and bias of a parameterized layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Per-layer gradients, aligned with [`Network::params`].
pub type Gradients<T> = Vec<Option<Params<T>>>;

/// A feed-forward network: an ordered layer list plus its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T = f32> {
    layers: Vec<Layer>,
    params: Vec<Option<Params<T>>>,
    /// `shapes[i]` is the per-sample input shape of layer `i`; the last entry
    /// is the output shape.
    shapes: Vec<Vec<usize>>,
}

fn infer_shapes(input_shape: &[usize], layers: &[Layer]) -> Result<Vec<Vec<usize>>> {
    if input_shape.is_empty() || input_shape.contains(&0) {
        return Err(Error::InvalidNetwork(format!(
            "degenerate input shape {input_shape:?}"
        )));
    }
    let mut shapes = vec![input_shape.to_vec()];
    for layer in layers {
        let next = layer.output_shape(shapes.last().unwrap())?;
        shapes.push(next);
    }
    match shapes.last().unwrap().as_slice() {
        [_] => Ok(shapes),
        other => Err(Error::InvalidNetwork(format!(
            "network must end in a flat output, ends in {other:?}"
        ))),
    }
}

impl Network<f32> {
    /// Kaiming-uniform weights (bound `sqrt(6 / fan_in)`), zero biases.
    pub fn new(input_shape: &[usize], layers: Vec<Layer>, seed: u64) -> Result<Self> {
        let mut net = Network::zeros(input_shape, layers)?;
        let mut rng = seed::derive_rng(seed, "init", 0);
        for p in net.params.iter_mut().flatten() {
            let fan_in: usize = match p.weight.shape() {
                [_, cin, k, _] => cin * k * k,
                [fan_in, _] => *fan_in,
                _ => unreachable!(),
            };
            let bound = (6.0 / fan_in as f64).sqrt() as f32;
            for w in p.weight.data_mut() {
                *w = rng.gen_range(-bound..bound);
            }
        }
        Ok(net)
    }
}

impl<T: Scalar> Network<T> {
    pub fn zeros(input_shape: &[usize], layers: Vec<Layer>) -> Result<Self> {
        let shapes = infer_shapes(input_shape, &layers)?;
        let params = layers
            .iter()
            .zip(&shapes)
            .map(|(l, s)| {
                l.param_shapes(s).map(|(w, b)| Params {
                    weight: Tensor::zeros(&w),
                    bias: Tensor::zeros(&b),
                })
            })
            .collect();
        Ok(Network {
            layers,
            params,
            shapes,
        })
    }

    /// Assemble a network from explicit parameters, checking every shape.
    pub fn from_parts(
        input_shape: &[usize],
        layers: Vec<Layer>,
        params: Vec<Option<Params<T>>>,
    ) -> Result<Self> {
        let shapes = infer_shapes(input_shape, &layers)?;
        if params.len() != layers.len() {
            return Err(Error::DescriptorMismatch(format!(
                "{} layers but {} parameter slots",
                layers.len(),
                params.len()
            )));
        }
        for (i, ((l, s), p)) in layers.iter().zip(&shapes).zip(&params).enumerate() {
            match (l.param_shapes(s), p) {
                (None, None) => {}
                (Some((ws, bs)), Some(p)) => {
                    if p.weight.shape() != ws.as_slice() || p.bias.shape() != bs.as_slice() {
                        return Err(Error::DescriptorMismatch(format!(
                            "layer {i}: expected weight {ws:?} bias {bs:?}, got {:?} {:?}",
                            p.weight.shape(),
                            p.bias.shape()
                        )));
                    }
                }
                _ => {
                    return Err(Error::DescriptorMismatch(format!(
                        "layer {i} ({l:?}) parameter presence mismatch"
                    )))
                }
            }
        }
        Ok(Network {
            layers,
            params,
            shapes,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.shapes[0]
    }

    pub fn output_dim(&self) -> usize {
        self.shapes.last().unwrap()[0]
    }

    pub fn params(&self) -> &[Option<Params<T>>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Option<Params<T>>] {
        &mut self.params
    }

    /// Per-sample input shape of layer `i` (index `layers().len()` gives the output).
    pub fn activation_shape(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    pub fn param_count(&self) -> usize {
        self.params
            .iter()
            .flatten()
            .map(|p| p.weight.len() + p.bias.len())
            .sum()
    }

    /// Index of the last parameterized layer.
    pub fn last_param_layer(&self) -> Option<usize> {
        self.layers.iter().rposition(|l| l.has_params())
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            layers: self.layers.clone(),
            params: self
                .params
                .iter()
                .map(|p| {
                    p.as_ref().map(|p| Params {
                        weight: p.weight.cast(),
                        bias: p.bias.cast(),
                    })
                })
                .collect(),
            shapes: self.shapes.clone(),
        }
    }

    /// Gradient buffers of zeros shaped like the parameters.
    pub fn zero_grads(&self) -> Gradients<T> {
        self.params
            .iter()
            .map(|p| {
                p.as_ref().map(|p| Params {
                    weight: Tensor::zeros(p.weight.shape()),
                    bias: Tensor::zeros(p.bias.shape()),
                })
            })
            .collect()
    }

    fn check_batch(&self, batch: &Tensor<T>) -> Result<usize> {
        let shape = batch.shape();
        if shape.len() != self.shapes[0].len() + 1 || shape[1..] != self.shapes[0][..] {
            let mut expected = vec![shape.first().copied().unwrap_or(0)];
            expected.extend_from_slice(&self.shapes[0]);
            return Err(Error::shape(&expected, shape));
        }
        Ok(shape[0])
    }

    /// Logits `[batch, output_dim]` for a batch `[batch, ..input_shape]`.
    pub fn forward(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let n = self.check_batch(batch)?;
        let mut x = batch.data().to_vec();
        for i in 0..self.layers.len() {
            x = self.layer_forward(i, n, &x, None);
        }
        Tensor::from_vec(&[n, self.output_dim()], x)
    }

    /// Activations entering layer `upto` (`[batch, ..activation_shape(upto)]`).
    pub fn forward_partial(&self, batch: &Tensor<T>, upto: usize) -> Result<Tensor<T>> {
        let n = self.check_batch(batch)?;
        let upto = upto.min(self.layers.len());
        let mut x = batch.data().to_vec();
        for i in 0..upto {
            x = self.layer_forward(i, n, &x, None);
        }
        let mut shape = vec![n];
        shape.extend_from_slice(&self.shapes[upto]);
        Tensor::from_vec(&shape, x)
    }

    /// Sub-network made of layers `from..`.
    pub fn tail(&self, from: usize) -> Network<T> {
        Network {
            layers: self.layers[from..].to_vec(),
            params: self.params[from..].to_vec(),
            shapes: self.shapes[from..].to_vec(),
        }
    }

    /// Overwrite layers `from..` with `tail`, which may change the output size.
    pub fn replace_tail(&mut self, from: usize, tail: Network<T>) -> Result<()> {
        if tail.shapes[0] != self.shapes[from] {
            return Err(Error::shape(&self.shapes[from], &tail.shapes[0]));
        }
        self.layers.truncate(from);
        self.params.truncate(from);
        self.shapes.truncate(from);
        self.layers.extend(tail.layers);
        self.params.extend(tail.params);
        self.shapes.extend(tail.shapes);
        Ok(())
    }

    /// Forward pass that keeps what [`Network::backward`] needs.
    pub fn forward_cached(&self, batch: &Tensor<T>) -> Result<(Tensor<T>, ForwardCache<T>)> {
        let n = self.check_batch(batch)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut argmax = vec![Vec::new(); self.layers.len()];
        let mut x = batch.data().to_vec();
        for i in 0..self.layers.len() {
            let y = self.layer_forward(i, n, &x, Some(&mut argmax[i]));
            inputs.push(std::mem::replace(&mut x, y));
        }
        let logits = Tensor::from_vec(&[n, self.output_dim()], x)?;
        Ok((
            logits,
            ForwardCache {
                batch: n,
                inputs,
                argmax,
            },
        ))
    }

    /// Back-propagate `dlogits` (`[batch, output_dim]`) and return parameter
    /// gradients summed over the batch.
    pub fn backward(&self, cache: &ForwardCache<T>, dlogits: &Tensor<T>) -> Gradients<T> {
        self.backward_impl(cache, dlogits, false).0
    }

    /// Like [`Network::backward`] but also returns the gradient with respect
    /// to the input batch.
    pub fn backward_with_input(
        &self,
        cache: &ForwardCache<T>,
        dlogits: &Tensor<T>,
    ) -> (Gradients<T>, Vec<T>) {
        self.backward_impl(cache, dlogits, true)
    }

    fn backward_impl(
        &self,
        cache: &ForwardCache<T>,
        dlogits: &Tensor<T>,
        want_input_grad: bool,
    ) -> (Gradients<T>, Vec<T>) {
        let n = cache.batch;
        let mut grads = self.zero_grads();
        let mut dy = dlogits.data().to_vec();
        for i in (0..self.layers.len()).rev() {
            let need_dx = want_input_grad || i > 0;
            dy = self.layer_backward(i, n, cache, &dy, grads[i].as_mut(), need_dx);
        }
        (grads, dy)
    }

    fn layer_forward(&self, i: usize, n: usize, x: &[T], argmax: Option<&mut Vec<u32>>) -> Vec<T> {
        let in_shape = &self.shapes[i];
        let out_shape = &self.shapes[i + 1];
        let in_len: usize = in_shape.iter().product();
        let out_len: usize = out_shape.iter().product();
        let mut y = vec![T::ZERO; n * out_len];
        match self.layers[i] {
            Layer::Conv2d {
                out_channels,
                kernel,
                stride,
                pad,
            } => {
                let p = self.params[i].as_ref().unwrap();
                let geo = ConvGeometry::new(in_shape, out_shape, kernel, stride, pad);
                let mut col = vec![T::ZERO; geo.col_rows() * geo.out_hw()];
                for (xs, ys) in x.chunks_exact(in_len).zip(y.chunks_exact_mut(out_len)) {
                    geo.im2col(xs, &mut col);
                    gemm(
                        out_channels,
                        geo.col_rows(),
                        geo.out_hw(),
                        p.weight.data(),
                        &col,
                        ys,
                        false,
                    );
                    for (plane, &b) in ys.chunks_exact_mut(geo.out_hw()).zip(p.bias.data()) {
                        plane.iter_mut().for_each(|v| *v += b);
                    }
                }
            }
            Layer::Dense { out_dim } => {
                let p = self.params[i].as_ref().unwrap();
                for row in y.chunks_exact_mut(out_dim) {
                    row.copy_from_slice(p.bias.data());
                }
                gemm(n, in_len, out_dim, x, p.weight.data(), &mut y, true);
            }
            Layer::Relu => {
                for (o, &v) in y.iter_mut().zip(x) {
                    *o = if v > T::ZERO { v } else { T::ZERO };
                }
            }
            Layer::MaxPool { k } => {
                let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
                let (oh, ow) = (out_shape[1], out_shape[2]);
                let mut idx = Vec::new();
                let record = argmax.is_some();
                if record {
                    idx.resize(n * out_len, 0u32);
                }
                for s in 0..n {
                    let xs = &x[s * in_len..(s + 1) * in_len];
                    for ch in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut best = ch * h * w + (oy * k) * w + ox * k;
                                for dy in 0..k {
                                    for dx in 0..k {
                                        let j = ch * h * w + (oy * k + dy) * w + ox * k + dx;
                                        if xs[j] > xs[best] {
                                            best = j;
                                        }
                                    }
                                }
                                let o = s * out_len + ch * oh * ow + oy * ow + ox;
                                y[o] = xs[best];
                                if record {
                                    idx[o] = best as u32;
                                }
                            }
                        }
                    }
                }
                if let Some(a) = argmax {
                    *a = idx;
                }
            }
            Layer::AvgPoolGlobal => {
                let hw = in_shape[1] * in_shape[2];
                let scale = T::from_f64(1.0 / hw as f64);
                for (xs, ys) in x.chunks_exact(in_len).zip(y.chunks_exact_mut(out_len)) {
                    for (plane, o) in xs.chunks_exact(hw).zip(ys.iter_mut()) {
                        let mut s = T::ZERO;
                        for &v in plane {
                            s += v;
                        }
                        *o = s * scale;
                    }
                }
            }
            Layer::Flatten => y.copy_from_slice(x),
        }
        y
    }

    fn layer_backward(
        &self,
        i: usize,
        n: usize,
        cache: &ForwardCache<T>,
        dy: &[T],
        grad: Option<&mut Params<T>>,
        need_dx: bool,
    ) -> Vec<T> {
        let in_shape = &self.shapes[i];
        let out_shape = &self.shapes[i + 1];
        let in_len: usize = in_shape.iter().product();
        let out_len: usize = out_shape.iter().product();
        let x = &cache.inputs[i];
        let mut dx = if need_dx {
            vec![T::ZERO; n * in_len]
        } else {
            Vec::new()
        };
        match self.layers[i] {
            Layer::Conv2d {
                out_channels,
                kernel,
                stride,
                pad,
            } => {
                let p = self.params[i].as_ref().unwrap();
                let g = grad.unwrap();
                let geo = ConvGeometry::new(in_shape, out_shape, kernel, stride, pad);
                let (rows, hw) = (geo.col_rows(), geo.out_hw());
                let w_t = transpose(out_channels, rows, p.weight.data());
                let mut col = vec![T::ZERO; rows * hw];
                let mut col_t = vec![T::ZERO; rows * hw];
                let mut dcol = vec![T::ZERO; rows * hw];
                for s in 0..n {
                    let xs = &x[s * in_len..(s + 1) * in_len];
                    let dys = &dy[s * out_len..(s + 1) * out_len];
                    geo.im2col(xs, &mut col);
                    transpose_into(rows, hw, &col, &mut col_t);
                    gemm(out_channels, hw, rows, dys, &col_t, g.weight.data_mut(), true);
                    for (gb, plane) in g.bias.data_mut().iter_mut().zip(dys.chunks_exact(hw)) {
                        let mut acc = T::ZERO;
                        for &v in plane {
                            acc += v;
                        }
                        *gb += acc;
                    }
                    if need_dx {
                        gemm(rows, out_channels, hw, &w_t, dys, &mut dcol, false);
                        geo.col2im(&dcol, &mut dx[s * in_len..(s + 1) * in_len]);
                    }
                }
            }
            Layer::Dense { out_dim } => {
                let p = self.params[i].as_ref().unwrap();
                let g = grad.unwrap();
                let x_t = transpose(n, in_len, x);
                gemm(in_len, n, out_dim, &x_t, dy, g.weight.data_mut(), true);
                for row in dy.chunks_exact(out_dim) {
                    for (gb, &v) in g.bias.data_mut().iter_mut().zip(row) {
                        *gb += v;
                    }
                }
                if need_dx {
                    let w_t = transpose(in_len, out_dim, p.weight.data());
                    gemm(n, out_dim, in_len, dy, &w_t, &mut dx, false);
                }
            }
            Layer::Relu => {
                if need_dx {
                    for ((d, &g), &v) in dx.iter_mut().zip(dy).zip(x) {
                        *d = if v > T::ZERO { g } else { T::ZERO };
                    }
                }
            }
            Layer::MaxPool { .. } => {
                if need_dx {
                    let idx = &cache.argmax[i];
                    for s in 0..n {
                        let dxs = &mut dx[s * in_len..(s + 1) * in_len];
                        for o in 0..out_len {
                            dxs[idx[s * out_len + o] as usize] += dy[s * out_len + o];
                        }
                    }
                }
            }
            Layer::AvgPoolGlobal => {
                if need_dx {
                    let hw = in_shape[1] * in_shape[2];
                    let scale = T::from_f64(1.0 / hw as f64);
                    for (dxs, dys) in dx.chunks_exact_mut(in_len).zip(dy.chunks_exact(out_len)) {
                        for (plane, &g) in dxs.chunks_exact_mut(hw).zip(dys) {
                            plane.fill(g * scale);
                        }
                    }
                }
            }
            Layer::Flatten => {
                if need_dx {
                    dx.copy_from_slice(dy);
                }
            }
        }
        dx
    }

    /// Little-endian bytes of every parameter tensor in layer order.
    pub fn param_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.param_count() * 8);
        for p in self.params.iter().flatten() {
            for t in [&p.weight, &p.bias] {
                for &v in t.data() {
                    match std::mem::size_of::<T>() {
                        4 => out.extend_from_slice(&(v.to_f64() as f32).to_le_bytes()),
                        _ => out.extend_from_slice(&v.to_f64().to_le_bytes()),
                    }
                }
            }
        }
        out
    }

    /// SHA-256 (hex) of the parameter bytes.
    pub fn param_hash(&self) -> String {
        hex::encode(Sha256::digest(self.param_bytes()))
    }
}

/// Activations retained by [`Network::forward_cached`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    batch: usize,
    inputs: Vec<Vec<T>>,
    argmax: Vec<Vec<u32>>,
}

struct ConvGeometry {
    cin: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeometry {
    fn new(input: &[usize], output: &[usize], k: usize, stride: usize, pad: usize) -> Self {
        ConvGeometry {
            cin: input[0],
            h: input[1],
            w: input[2],
            oh: output[1],
            ow: output[2],
            k,
            stride,
            pad,
        }
    }

    fn col_rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn out_hw(&self) -> usize {
        self.oh * self.ow
    }

    /// Visit `(row, output position, input index)` for every in-bounds tap.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let hw = self.out_hw();
        for c in 0..self.cin {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let r = (c * self.k + ky) * self.k + kx;
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let base = c * self.h * self.w + iy as usize * self.w;
                        for ox in 0..self.ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= self.w as isize {
                                continue;
                            }
                            f(r * hw, oy * self.ow + ox, base + ix as usize);
                        }
                    }
                }
            }
        }
    }

    fn im2col<T: Scalar>(&self, x: &[T], col: &mut [T]) {
        col.fill(T::ZERO);
        self.for_each_tap(|row, p, j| col[row + p] = x[j]);
    }

    fn col2im<T: Scalar>(&self, dcol: &[T], dx: &mut [T]) {
        self.for_each_tap(|row, p, j| dx[j] += dcol[row + p]);
    }
}
