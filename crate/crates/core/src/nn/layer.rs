use super::gemm::{col2im, im2col, matmul, MatRef};
use super::{sigmoid, Gradients, KernelError, ParamStore, Real, Result, SplitMix64, Tensor};

/// Hyperparameters shared by `conv2d` and `conv_transpose2d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    /// `floor((n + 2p − k)/s) + 1`, if the kernel fits.
    pub fn conv_out(&self, n: usize) -> Option<usize> {
        let padded = n + 2 * self.padding;
        (padded >= self.kernel && self.stride > 0)
            .then(|| (padded - self.kernel) / self.stride + 1)
    }

    /// `(n − 1)·s − 2p + k`, if positive.
    pub fn transpose_out(&self, n: usize) -> Option<usize> {
        let full = (n.checked_sub(1)?) * self.stride + self.kernel;
        full.checked_sub(2 * self.padding).filter(|&v| v > 0)
    }
}

/// The layer vocabulary. Convolutions are cross-correlations (kernels are not
/// flipped).
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv2d(ConvSpec),
    /// Adjoint of `Conv2d`; weight layout `[in, out, k, k]`.
    ConvTranspose2d(ConvSpec),
    /// `y = W·x + b` on the flattened input; weight layout `[out, in]`.
    Dense { inputs: usize, outputs: usize },
    Relu,
    Sigmoid,
    /// `x + conv_b(relu(conv_a(relu(x))))` where `conv_a` is 3×3
    /// `channels → hidden` (padding 1) and `conv_b` is
    /// `second_kernel × second_kernel` `hidden → channels` (same padding).
    ResidualBlock {
        channels: usize,
        hidden: usize,
        second_kernel: usize,
    },
    /// One gated update step on the concatenated input `[x; h]`:
    ///
    /// ```text
    /// u  = σ(W_xu x + W_hu h + b_u)
    /// r  = σ(W_xr x + W_hr h + b_r)
    /// n  = tanh(W_xn x + W_hn (r ⊙ h) + b_n)
    /// h' = (1 − u) ⊙ h + u ⊙ n
    /// ```
    RecurrentCell { input: usize, hidden: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layer {
    name: String,
    kind: LayerKind,
}

/// Activation record produced by [`Layer::forward`].
#[derive(Clone, Debug, PartialEq)]
pub enum Cache<T = f32> {
    Input(Tensor<T>),
    Output(Tensor<T>),
    Residual {
        input: Tensor<T>,
        hidden_pre: Tensor<T>,
    },
    Recurrent {
        x: Vec<T>,
        h: Vec<T>,
        update: Vec<T>,
        reset: Vec<T>,
        candidate: Vec<T>,
    },
}

impl<T: Real> Cache<T> {
    pub fn input(&self) -> Option<&Tensor<T>> {
        match self {
            Cache::Input(t) | Cache::Residual { input: t, .. } => Some(t),
            _ => None,
        }
    }
}

impl Layer {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }

    pub fn conv2d(name: &str, cin: usize, cout: usize, k: usize, s: usize, p: usize) -> Self {
        Self::new(name, LayerKind::Conv2d(ConvSpec::new(cin, cout, k, s, p)))
    }

    pub fn conv_transpose2d(
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        s: usize,
        p: usize,
    ) -> Self {
        Self::new(
            name,
            LayerKind::ConvTranspose2d(ConvSpec::new(cin, cout, k, s, p)),
        )
    }

    pub fn dense(name: &str, inputs: usize, outputs: usize) -> Self {
        Self::new(name, LayerKind::Dense { inputs, outputs })
    }

    pub fn relu(name: &str) -> Self {
        Self::new(name, LayerKind::Relu)
    }

    pub fn sigmoid(name: &str) -> Self {
        Self::new(name, LayerKind::Sigmoid)
    }

    pub fn residual(name: &str, channels: usize, hidden: usize, second_kernel: usize) -> Self {
        Self::new(
            name,
            LayerKind::ResidualBlock {
                channels,
                hidden,
                second_kernel,
            },
        )
    }

    pub fn recurrent(name: &str, input: usize, hidden: usize) -> Self {
        Self::new(name, LayerKind::RecurrentCell { input, hidden })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> &LayerKind {
        &self.kind
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            LayerKind::Conv2d(_) => "conv2d",
            LayerKind::ConvTranspose2d(_) => "conv_transpose2d",
            LayerKind::Dense { .. } => "dense",
            LayerKind::Relu => "relu",
            LayerKind::Sigmoid => "sigmoid",
            LayerKind::ResidualBlock { .. } => "residual_block",
            LayerKind::RecurrentCell { .. } => "recurrent_cell",
        }
    }

    /// The two convolutions inside a residual block.
    pub fn residual_parts(&self) -> Option<(Layer, Layer)> {
        match self.kind {
            LayerKind::ResidualBlock {
                channels,
                hidden,
                second_kernel,
            } => Some((
                Layer::conv2d(&format!("{}.conv1", self.name), channels, hidden, 3, 1, 1),
                Layer::conv2d(
                    &format!("{}.conv2", self.name),
                    hidden,
                    channels,
                    second_kernel,
                    1,
                    second_kernel / 2,
                ),
            )),
            _ => None,
        }
    }

    fn invalid(&self, reason: impl Into<String>) -> KernelError {
        KernelError::InvalidLayer {
            layer: self.name.clone(),
            reason: reason.into(),
        }
    }

    fn mismatch(&self, expected: Vec<usize>, found: &[usize]) -> KernelError {
        KernelError::ShapeMismatch {
            context: format!("{} `{}`", self.kind_name(), self.name),
            expected,
            found: found.to_vec(),
        }
    }

    fn expect_image(&self, input: &[usize], channels: usize) -> Result<(usize, usize)> {
        match input {
            &[c, h, w] if c == channels => Ok((h, w)),
            _ => Err(self.mismatch(vec![channels, 0, 0], input)),
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match &self.kind {
            LayerKind::Conv2d(spec) => {
                let (h, w) = self.expect_image(input, spec.in_channels)?;
                match (spec.conv_out(h), spec.conv_out(w)) {
                    (Some(oh), Some(ow)) => Ok(vec![spec.out_channels, oh, ow]),
                    _ => Err(self.invalid(format!("kernel does not fit input {input:?}"))),
                }
            }
            LayerKind::ConvTranspose2d(spec) => {
                let (h, w) = self.expect_image(input, spec.in_channels)?;
                match (spec.transpose_out(h), spec.transpose_out(w)) {
                    (Some(oh), Some(ow)) => Ok(vec![spec.out_channels, oh, ow]),
                    _ => Err(self.invalid(format!("empty output for input {input:?}"))),
                }
            }
            LayerKind::Dense { inputs, outputs } => {
                let n: usize = input.iter().product();
                if n != *inputs {
                    return Err(self.mismatch(vec![*inputs], input));
                }
                Ok(vec![*outputs])
            }
            LayerKind::Relu | LayerKind::Sigmoid => Ok(input.to_vec()),
            LayerKind::ResidualBlock {
                channels,
                second_kernel,
                ..
            } => {
                if second_kernel % 2 == 0 {
                    return Err(self.invalid("second kernel must be odd"));
                }
                self.expect_image(input, *channels)?;
                Ok(input.to_vec())
            }
            LayerKind::RecurrentCell { input: xd, hidden } => {
                let n: usize = input.iter().product();
                if n != xd + hidden {
                    return Err(self.mismatch(vec![xd + hidden], input));
                }
                Ok(vec![*hidden])
            }
        }
    }

    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let n = &self.name;
        match &self.kind {
            LayerKind::Conv2d(s) => vec![
                (
                    format!("{n}.weight"),
                    vec![s.out_channels, s.in_channels, s.kernel, s.kernel],
                ),
                (format!("{n}.bias"), vec![s.out_channels]),
            ],
            LayerKind::ConvTranspose2d(s) => vec![
                (
                    format!("{n}.weight"),
                    vec![s.in_channels, s.out_channels, s.kernel, s.kernel],
                ),
                (format!("{n}.bias"), vec![s.out_channels]),
            ],
            LayerKind::Dense { inputs, outputs } => vec![
                (format!("{n}.weight"), vec![*outputs, *inputs]),
                (format!("{n}.bias"), vec![*outputs]),
            ],
            LayerKind::Relu | LayerKind::Sigmoid => vec![],
            LayerKind::ResidualBlock { .. } => {
                let (a, b) = self.residual_parts().expect("residual");
                let mut v = a.param_shapes();
                v.extend(b.param_shapes());
                v
            }
            LayerKind::RecurrentCell { input, hidden } => vec![
                (format!("{n}.w_x"), vec![3 * hidden, *input]),
                (format!("{n}.w_h"), vec![3 * hidden, *hidden]),
                (format!("{n}.bias"), vec![3 * hidden]),
            ],
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }

    /// Uniform `±√(1/fan_in)` initialization of every parameter of this layer.
    pub fn init_params<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut SplitMix64) {
        if let Some((a, b)) = self.residual_parts() {
            a.init_params(store, rng);
            b.init_params(store, rng);
            return;
        }
        let fan_in = match &self.kind {
            LayerKind::Conv2d(s) => s.in_channels * s.kernel * s.kernel,
            LayerKind::ConvTranspose2d(s) => s.out_channels * s.kernel * s.kernel,
            LayerKind::Dense { inputs, .. } => *inputs,
            LayerKind::RecurrentCell { hidden, .. } => *hidden,
            _ => return,
        };
        let bound = (1.0 / fan_in.max(1) as f64).sqrt();
        for (name, shape) in self.param_shapes() {
            let t = Tensor::from_fn(&shape, |_| T::of(rng.uniform(-bound, bound)));
            store.insert(name, t);
        }
    }

    pub fn forward<T: Real>(
        &self,
        params: &ParamStore<T>,
        input: &Tensor<T>,
    ) -> Result<(Tensor<T>, Cache<T>)> {
        let out_shape = self.output_shape(input.shape())?;
        let n = &self.name;
        match &self.kind {
            LayerKind::Conv2d(spec) => {
                let w = params.get(&format!("{n}.weight"))?;
                let b = params.get(&format!("{n}.bias"))?;
                let out = conv2d_forward(spec, w.data(), b.data(), input, &out_shape);
                Ok((out, Cache::Input(input.clone())))
            }
            LayerKind::ConvTranspose2d(spec) => {
                let w = params.get(&format!("{n}.weight"))?;
                let b = params.get(&format!("{n}.bias"))?;
                let out = conv_transpose_forward(spec, w.data(), b.data(), input, &out_shape);
                Ok((out, Cache::Input(input.clone())))
            }
            LayerKind::Dense { inputs, outputs } => {
                let w = params.get(&format!("{n}.weight"))?.data();
                let b = params.get(&format!("{n}.bias"))?.data();
                let x = input.data();
                let y: Vec<T> = (0..*outputs)
                    .map(|o| {
                        let row = &w[o * inputs..(o + 1) * inputs];
                        row.iter().zip(x).fold(b[o], |acc, (&wi, &xi)| acc + wi * xi)
                    })
                    .collect();
                Ok((
                    Tensor::from_vec(out_shape, y)?,
                    Cache::Input(input.clone()),
                ))
            }
            LayerKind::Relu => Ok((
                input.map(|v| v.max(T::zero())),
                Cache::Input(input.clone()),
            )),
            LayerKind::Sigmoid => {
                let out = input.map(sigmoid);
                Ok((out.clone(), Cache::Output(out)))
            }
            LayerKind::ResidualBlock { .. } => {
                let (a, b) = self.residual_parts().expect("residual");
                let act0 = input.map(|v| v.max(T::zero()));
                let (hidden_pre, _) = a.forward(params, &act0)?;
                let act1 = hidden_pre.map(|v| v.max(T::zero()));
                let (mut out, _) = b.forward(params, &act1)?;
                out.add_assign(input)?;
                Ok((
                    out,
                    Cache::Residual {
                        input: input.clone(),
                        hidden_pre,
                    },
                ))
            }
            LayerKind::RecurrentCell { input: xd, hidden } => {
                let (xd, hd) = (*xd, *hidden);
                let wx = params.get(&format!("{n}.w_x"))?.data();
                let wh = params.get(&format!("{n}.w_h"))?.data();
                let bias = params.get(&format!("{n}.bias"))?.data();
                let x = &input.data()[..xd];
                let h = &input.data()[xd..];
                let dot = |w: &[T], cols: usize, row: usize, v: &[T]| -> T {
                    w[row * cols..(row + 1) * cols]
                        .iter()
                        .zip(v)
                        .fold(T::zero(), |acc, (&a, &b)| acc + a * b)
                };
                let mut update = vec![T::zero(); hd];
                let mut reset = vec![T::zero(); hd];
                for j in 0..hd {
                    update[j] = sigmoid(dot(wx, xd, j, x) + dot(wh, hd, j, h) + bias[j]);
                    reset[j] = sigmoid(
                        dot(wx, xd, hd + j, x) + dot(wh, hd, hd + j, h) + bias[hd + j],
                    );
                }
                let gated: Vec<T> = reset.iter().zip(h).map(|(&r, &hv)| r * hv).collect();
                let mut candidate = vec![T::zero(); hd];
                let mut next = vec![T::zero(); hd];
                for j in 0..hd {
                    let row = 2 * hd + j;
                    candidate[j] =
                        (dot(wx, xd, row, x) + dot(wh, hd, row, &gated) + bias[row]).tanh();
                    next[j] = (T::one() - update[j]) * h[j] + update[j] * candidate[j];
                }
                Ok((
                    Tensor::from_vec(out_shape, next)?,
                    Cache::Recurrent {
                        x: x.to_vec(),
                        h: h.to_vec(),
                        update,
                        reset,
                        candidate,
                    },
                ))
            }
        }
    }

    /// Exact gradient of the forward map. Parameter gradients are added into
    /// `grads`; the returned tensor is the gradient w.r.t. the input.
    pub fn backward<T: Real>(
        &self,
        params: &ParamStore<T>,
        cache: &Cache<T>,
        grad_out: &Tensor<T>,
        grads: &mut Gradients<T>,
    ) -> Result<Tensor<T>> {
        let n = &self.name;
        let cache_err = || KernelError::CacheMismatch {
            layer: self.name.clone(),
        };
        match (&self.kind, cache) {
            (LayerKind::Conv2d(spec), Cache::Input(x)) => {
                let out_shape = self.output_shape(x.shape())?;
                self.check_grad(grad_out, &out_shape)?;
                let w_name = format!("{n}.weight");
                let w = params.get(&w_name)?;
                let mut gw = std::mem::take(grads.slot(&w_name, w.shape()));
                let b_name = format!("{n}.bias");
                let mut gb = std::mem::take(grads.slot(&b_name, &[spec.out_channels]));
                let gx = conv2d_backward(
                    spec,
                    w.data(),
                    x,
                    grad_out,
                    gw.data_mut(),
                    gb.data_mut(),
                );
                *grads.slot(&w_name, w.shape()) = gw;
                *grads.slot(&b_name, &[spec.out_channels]) = gb;
                Ok(gx)
            }
            (LayerKind::ConvTranspose2d(spec), Cache::Input(x)) => {
                let out_shape = self.output_shape(x.shape())?;
                self.check_grad(grad_out, &out_shape)?;
                let w_name = format!("{n}.weight");
                let w = params.get(&w_name)?;
                let mut gw = std::mem::take(grads.slot(&w_name, w.shape()));
                let b_name = format!("{n}.bias");
                let mut gb = std::mem::take(grads.slot(&b_name, &[spec.out_channels]));
                let gx = conv_transpose_backward(
                    spec,
                    w.data(),
                    x,
                    grad_out,
                    gw.data_mut(),
                    gb.data_mut(),
                );
                *grads.slot(&w_name, w.shape()) = gw;
                *grads.slot(&b_name, &[spec.out_channels]) = gb;
                Ok(gx)
            }
            (LayerKind::Dense { inputs, outputs }, Cache::Input(x)) => {
                self.check_grad(grad_out, &[*outputs])?;
                let w_name = format!("{n}.weight");
                let w = params.get(&w_name)?.data();
                let g = grad_out.data();
                let xs = x.data();
                let gw = grads.slot(&w_name, &[*outputs, *inputs]).data_mut();
                for o in 0..*outputs {
                    for i in 0..*inputs {
                        gw[o * inputs + i] += g[o] * xs[i];
                    }
                }
                let gb = grads.slot(&format!("{n}.bias"), &[*outputs]).data_mut();
                for o in 0..*outputs {
                    gb[o] += g[o];
                }
                let mut gx = vec![T::zero(); *inputs];
                for o in 0..*outputs {
                    for i in 0..*inputs {
                        gx[i] += w[o * inputs + i] * g[o];
                    }
                }
                Tensor::from_vec(x.shape().to_vec(), gx)
            }
            (LayerKind::Relu, Cache::Input(x)) => {
                self.check_grad(grad_out, x.shape())?;
                let data = x
                    .data()
                    .iter()
                    .zip(grad_out.data())
                    .map(|(&xi, &g)| if xi > T::zero() { g } else { T::zero() })
                    .collect();
                Tensor::from_vec(x.shape().to_vec(), data)
            }
            (LayerKind::Sigmoid, Cache::Output(y)) => {
                self.check_grad(grad_out, y.shape())?;
                let data = y
                    .data()
                    .iter()
                    .zip(grad_out.data())
                    .map(|(&yi, &g)| g * yi * (T::one() - yi))
                    .collect();
                Tensor::from_vec(y.shape().to_vec(), data)
            }
            (LayerKind::ResidualBlock { .. }, Cache::Residual { input, hidden_pre }) => {
                self.check_grad(grad_out, input.shape())?;
                let (a, b) = self.residual_parts().expect("residual");
                let act1 = hidden_pre.map(|v| v.max(T::zero()));
                let g_act1 = b.backward(params, &Cache::Input(act1), grad_out, grads)?;
                let g_pre = relu_mask(hidden_pre, &g_act1);
                let act0 = input.map(|v| v.max(T::zero()));
                let g_act0 = a.backward(params, &Cache::Input(act0), &g_pre, grads)?;
                let mut gx = relu_mask(input, &g_act0);
                gx.add_assign(grad_out)?;
                Ok(gx)
            }
            (
                LayerKind::RecurrentCell { input: xd, hidden },
                Cache::Recurrent {
                    x,
                    h,
                    update,
                    reset,
                    candidate,
                },
            ) => {
                let (xd, hd) = (*xd, *hidden);
                self.check_grad(grad_out, &[hd])?;
                let wx = params.get(&format!("{n}.w_x"))?.data();
                let wh = params.get(&format!("{n}.w_h"))?.data();
                let g = grad_out.data();

                // Pre-activation gradients, stacked [update; reset; candidate].
                let mut da = vec![T::zero(); 3 * hd];
                let mut gh = vec![T::zero(); hd];
                for j in 0..hd {
                    let (u, nv) = (update[j], candidate[j]);
                    gh[j] = g[j] * (T::one() - u);
                    da[j] = g[j] * (nv - h[j]) * u * (T::one() - u);
                    da[2 * hd + j] = g[j] * u * (T::one() - nv * nv);
                }
                let gated: Vec<T> = reset.iter().zip(h).map(|(&r, &hv)| r * hv).collect();
                // Through W_hn (r ⊙ h).
                let mut g_gated = vec![T::zero(); hd];
                for j in 0..hd {
                    let row = 2 * hd + j;
                    for i in 0..hd {
                        g_gated[i] += wh[row * hd + i] * da[row];
                    }
                }
                for i in 0..hd {
                    let r = reset[i];
                    gh[i] += g_gated[i] * r;
                    da[hd + i] = g_gated[i] * h[i] * r * (T::one() - r);
                }
                // Input and hidden paths of the update and reset gates.
                let mut gx = vec![T::zero(); xd];
                for row in 0..3 * hd {
                    for i in 0..xd {
                        gx[i] += wx[row * xd + i] * da[row];
                    }
                }
                for row in 0..2 * hd {
                    for i in 0..hd {
                        gh[i] += wh[row * hd + i] * da[row];
                    }
                }
                let gwx = grads.slot(&format!("{n}.w_x"), &[3 * hd, xd]).data_mut();
                for row in 0..3 * hd {
                    for i in 0..xd {
                        gwx[row * xd + i] += da[row] * x[i];
                    }
                }
                let gwh = grads.slot(&format!("{n}.w_h"), &[3 * hd, hd]).data_mut();
                for row in 0..3 * hd {
                    let src = if row < 2 * hd { h } else { &gated };
                    for i in 0..hd {
                        gwh[row * hd + i] += da[row] * src[i];
                    }
                }
                let gb = grads.slot(&format!("{n}.bias"), &[3 * hd]).data_mut();
                for row in 0..3 * hd {
                    gb[row] += da[row];
                }
                gx.extend(gh);
                Tensor::from_vec(vec![xd + hd], gx)
            }
            _ => Err(cache_err()),
        }
    }

    fn check_grad<T: Real>(&self, grad: &Tensor<T>, expected: &[usize]) -> Result<()> {
        if grad.shape() != expected {
            return Err(self.mismatch(expected.to_vec(), grad.shape()));
        }
        Ok(())
    }
}

fn relu_mask<T: Real>(pre: &Tensor<T>, grad: &Tensor<T>) -> Tensor<T> {
    let data = pre
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&p, &g)| if p > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(pre.shape().to_vec(), data).expect("same shape")
}

fn conv2d_forward<T: Real>(
    spec: &ConvSpec,
    w: &[T],
    b: &[T],
    x: &Tensor<T>,
    out_shape: &[usize],
) -> Tensor<T> {
    let (c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let k = spec.kernel;
    let rows = c * k * k;
    let plane = oh * ow;
    let mut col = vec![T::zero(); rows * plane];
    im2col(x.data(), c, h, wd, k, spec.stride, spec.padding, oh, ow, &mut col);
    let mut out = vec![T::zero(); spec.out_channels * plane];
    for (o, chunk) in out.chunks_mut(plane).enumerate() {
        chunk.fill(b[o]);
    }
    matmul(
        MatRef::new(w, spec.out_channels, rows),
        MatRef::new(&col, rows, plane),
        &mut out,
        T::one(),
    );
    Tensor::from_vec(out_shape.to_vec(), out).expect("conv output shape")
}

fn conv2d_backward<T: Real>(
    spec: &ConvSpec,
    w: &[T],
    x: &Tensor<T>,
    g: &Tensor<T>,
    gw: &mut [T],
    gb: &mut [T],
) -> Tensor<T> {
    let (c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (oh, ow) = (g.shape()[1], g.shape()[2]);
    let k = spec.kernel;
    let rows = c * k * k;
    let plane = oh * ow;
    let mut col = vec![T::zero(); rows * plane];
    im2col(x.data(), c, h, wd, k, spec.stride, spec.padding, oh, ow, &mut col);
    let gm = MatRef::new(g.data(), spec.out_channels, plane);
    matmul(gm, MatRef::new(&col, rows, plane).t(), gw, T::one());
    for (o, chunk) in g.data().chunks(plane).enumerate() {
        gb[o] += chunk.iter().copied().sum::<T>();
    }
    let mut gcol = col;
    matmul(
        MatRef::new(w, spec.out_channels, rows).t(),
        gm,
        &mut gcol,
        T::zero(),
    );
    let mut gx = vec![T::zero(); c * h * wd];
    col2im(&gcol, c, h, wd, k, spec.stride, spec.padding, oh, ow, &mut gx);
    Tensor::from_vec(x.shape().to_vec(), gx).expect("conv input shape")
}

fn conv_transpose_forward<T: Real>(
    spec: &ConvSpec,
    w: &[T],
    b: &[T],
    x: &Tensor<T>,
    out_shape: &[usize],
) -> Tensor<T> {
    let (ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co, oh, ow) = (out_shape[0], out_shape[1], out_shape[2]);
    let k = spec.kernel;
    let rows = co * k * k;
    let plane = h * wd;
    let mut col = vec![T::zero(); rows * plane];
    matmul(
        MatRef::new(w, ci, rows).t(),
        MatRef::new(x.data(), ci, plane),
        &mut col,
        T::zero(),
    );
    let mut out = vec![T::zero(); co * oh * ow];
    col2im(&col, co, oh, ow, k, spec.stride, spec.padding, h, wd, &mut out);
    for (o, chunk) in out.chunks_mut(oh * ow).enumerate() {
        for v in chunk {
            *v += b[o];
        }
    }
    Tensor::from_vec(out_shape.to_vec(), out).expect("conv transpose output shape")
}

fn conv_transpose_backward<T: Real>(
    spec: &ConvSpec,
    w: &[T],
    x: &Tensor<T>,
    g: &Tensor<T>,
    gw: &mut [T],
    gb: &mut [T],
) -> Tensor<T> {
    let (ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co, oh, ow) = (g.shape()[0], g.shape()[1], g.shape()[2]);
    let k = spec.kernel;
    let rows = co * k * k;
    let plane = h * wd;
    let mut gcol = vec![T::zero(); rows * plane];
    im2col(g.data(), co, oh, ow, k, spec.stride, spec.padding, h, wd, &mut gcol);
    let gcol_m = MatRef::new(&gcol, rows, plane);
    let xm = MatRef::new(x.data(), ci, plane);
    matmul(xm, gcol_m.t(), gw, T::one());
    for (o, chunk) in g.data().chunks(oh * ow).enumerate() {
        gb[o] += chunk.iter().copied().sum::<T>();
    }
    let mut gx = vec![T::zero(); ci * plane];
    matmul(MatRef::new(w, ci, rows), gcol_m, &mut gx, T::zero());
    Tensor::from_vec(x.shape().to_vec(), gx).expect("conv transpose input shape")
}
