use rand::{Rng, RngCore};

use crate::real::Real;
use crate::NnError;

/// Row-major buffer whose first axis is the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorBuf<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> TensorBuf<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![T::ZERO; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self, NnError> {
        if shape.iter().product::<usize>() != data.len() || shape.contains(&0) {
            return Err(NnError::Shape {
                layer: None,
                msg: format!("shape {shape:?} does not match {} values", data.len()),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// A batch of `rows` flat feature vectors.
    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length");
        Self {
            shape: vec![rows, cols],
            data,
        }
    }

    pub fn batch(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Number of values per batch item.
    pub fn row_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[T] {
        let n = self.row_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let n = self.row_len();
        &mut self.data[i * n..(i + 1) * n]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
    Softplus,
}

impl Activation {
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::ZERO),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
            Activation::Softplus => x.max(T::ZERO) + (-x.abs()).exp().ln_1p(),
        }
    }

    /// Derivative at pre-activation `x`.
    pub fn derivative<T: Real>(self, x: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::ZERO {
                    T::ONE
                } else {
                    T::ZERO
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                T::ONE - t * t
            }
            Activation::Identity => T::ONE,
            Activation::Softplus => {
                if x >= T::ZERO {
                    T::ONE / (T::ONE + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (T::ONE + e)
                }
            }
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Identity => 2,
            Activation::Softplus => 3,
        }
    }

    pub fn from_tag(t: u8) -> Option<Self> {
        Some(match t {
            0 => Activation::Relu,
            1 => Activation::Tanh,
            2 => Activation::Identity,
            3 => Activation::Softplus,
            _ => return None,
        })
    }
}

/// One layer of a feed-forward stack. Image tensors are channel-major
/// (C x H x W) within a batch row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Dense {
        input: usize,
        output: usize,
    },
    /// Valid (unpadded) convolution.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        height: usize,
        width: usize,
    },
    /// Non-overlapping max pooling; trailing rows/columns are dropped.
    MaxPool2d {
        channels: usize,
        height: usize,
        width: usize,
        window: usize,
    },
    Dropout {
        rate: f64,
    },
    Activation(Activation),
}

impl LayerSpec {
    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Dense { input, output } => input * output + output,
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => out_channels * in_channels * kernel * kernel + out_channels,
            _ => 0,
        }
    }

    fn conv_out(height: usize, width: usize, kernel: usize, stride: usize) -> (usize, usize) {
        ((height - kernel) / stride + 1, (width - kernel) / stride + 1)
    }

    /// Output width for an input of `input` values, or a description of the
    /// mismatch.
    pub fn output_dim(&self, input: usize) -> Result<usize, String> {
        match *self {
            LayerSpec::Dense { input: i, output } => {
                if i == 0 || output == 0 {
                    return Err("dense dims must be positive".into());
                }
                if i != input {
                    return Err(format!("dense expects {i} inputs, got {input}"));
                }
                Ok(output)
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                height,
                width,
            } => {
                if [in_channels, out_channels, kernel, stride, height, width].contains(&0) {
                    return Err("conv dims must be positive".into());
                }
                if kernel > height || kernel > width {
                    return Err(format!("kernel {kernel} larger than input {height}x{width}"));
                }
                if in_channels * height * width != input {
                    return Err(format!(
                        "conv expects {in_channels}x{height}x{width} inputs, got {input}"
                    ));
                }
                let (oh, ow) = Self::conv_out(height, width, kernel, stride);
                Ok(out_channels * oh * ow)
            }
            LayerSpec::MaxPool2d {
                channels,
                height,
                width,
                window,
            } => {
                if [channels, height, width, window].contains(&0) || window > height || window > width {
                    return Err("invalid pooling dims".into());
                }
                if channels * height * width != input {
                    return Err(format!("pool expects {channels}x{height}x{width} inputs, got {input}"));
                }
                Ok(channels * (height / window) * (width / window))
            }
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(format!("dropout rate {rate} outside [0, 1)"));
                }
                Ok(input)
            }
            LayerSpec::Activation(_) => Ok(input),
        }
    }
}

/// Per-layer state kept by a training forward pass.
#[derive(Debug, Clone)]
enum Aux<T> {
    None,
    Mask(Vec<T>),
    Argmax(Vec<u32>),
}

/// Activations recorded by `forward_train`, consumed by `backward`.
#[derive(Debug, Clone)]
pub struct Cache<T> {
    /// Input of every layer followed by the network output.
    values: Vec<TensorBuf<T>>,
    aux: Vec<Aux<T>>,
}

impl<T: Real> Cache<T> {
    pub fn output(&self) -> &TensorBuf<T> {
        self.values.last().expect("cache holds at least the input")
    }
}

/// Feed-forward network with all parameters in one contiguous buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T: Real> {
    specs: Vec<LayerSpec>,
    dims: Vec<usize>,
    offsets: Vec<usize>,
    params: Vec<T>,
}

impl<T: Real> Network<T> {
    /// Validates the layer chain; parameters start at zero.
    pub fn new(input_dim: usize, specs: Vec<LayerSpec>) -> Result<Self, NnError> {
        if input_dim == 0 {
            return Err(NnError::Shape {
                layer: None,
                msg: "input dim must be positive".into(),
            });
        }
        let mut dims = vec![input_dim];
        let mut offsets = vec![0];
        for (i, s) in specs.iter().enumerate() {
            let d = s
                .output_dim(*dims.last().unwrap())
                .map_err(|msg| NnError::Shape { layer: Some(i), msg })?;
            dims.push(d);
            offsets.push(offsets.last().unwrap() + s.param_count());
        }
        let n = *offsets.last().unwrap();
        Ok(Self {
            specs,
            dims,
            offsets,
            params: vec![T::ZERO; n],
        })
    }

    /// `input -> [dense(h) -> act -> dropout]* -> dense(output) -> out_act`.
    pub fn mlp(
        input: usize,
        hidden: &[usize],
        output: usize,
        act: Activation,
        out_act: Activation,
        dropout: f64,
    ) -> Result<Self, NnError> {
        let mut specs = Vec::new();
        let mut prev = input;
        for &h in hidden {
            specs.push(LayerSpec::Dense { input: prev, output: h });
            specs.push(LayerSpec::Activation(act));
            if dropout > 0.0 {
                specs.push(LayerSpec::Dropout { rate: dropout });
            }
            prev = h;
        }
        specs.push(LayerSpec::Dense { input: prev, output });
        specs.push(LayerSpec::Activation(out_act));
        Self::new(input, specs)
    }

    /// He-uniform weights, zero biases.
    pub fn init_params(&mut self, rng: &mut dyn RngCore) {
        for (i, s) in self.specs.iter().enumerate() {
            let fan_in = match *s {
                LayerSpec::Dense { input, .. } => input,
                LayerSpec::Conv2d {
                    in_channels, kernel, ..
                } => in_channels * kernel * kernel,
                _ => continue,
            };
            let bound = (6.0 / fan_in as f64).sqrt();
            let p = &mut self.params[self.offsets[i]..self.offsets[i + 1]];
            let n_bias = match *s {
                LayerSpec::Dense { output, .. } => output,
                LayerSpec::Conv2d { out_channels, .. } => out_channels,
                _ => 0,
            };
            let n_w = p.len() - n_bias;
            for w in &mut p[..n_w] {
                *w = T::from_f64(rng.random_range(-bound..bound));
            }
            for b in &mut p[n_w..] {
                *b = T::ZERO;
            }
        }
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn layer_params(&self, layer: usize) -> &[T] {
        &self.params[self.offsets[layer]..self.offsets[layer + 1]]
    }

    pub fn layer_params_mut(&mut self, layer: usize) -> &mut [T] {
        &mut self.params[self.offsets[layer]..self.offsets[layer + 1]]
    }

    /// Same topology and values in another precision.
    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            specs: self.specs.clone(),
            dims: self.dims.clone(),
            offsets: self.offsets.clone(),
            params: self.params.iter().map(|p| U::from_f64(p.to_f64())).collect(),
        }
    }

    fn check_input(&self, x: &TensorBuf<T>) -> Result<(), NnError> {
        if x.batch() == 0 || x.row_len() != self.input_dim() || x.data.len() != x.batch() * x.row_len() {
            return Err(NnError::Shape {
                layer: Some(0),
                msg: format!(
                    "input shape {:?} does not match input dim {}",
                    x.shape,
                    self.input_dim()
                ),
            });
        }
        Ok(())
    }

    /// Eval-mode forward pass: dropout is the identity.
    pub fn forward(&self, x: &TensorBuf<T>) -> Result<TensorBuf<T>, NnError> {
        self.check_input(x)?;
        let mut cur = x.clone();
        let mut aux = Aux::None;
        for i in 0..self.specs.len() {
            cur = self.layer_forward(i, &cur, false, None, &mut aux)?;
        }
        Ok(cur)
    }

    /// Forward pass that records what `backward` needs. Dropout is active
    /// when `train` is set, drawing its masks from `rng`.
    pub fn forward_train(
        &self,
        x: &TensorBuf<T>,
        train: bool,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<Cache<T>, NnError> {
        self.check_input(x)?;
        let mut values = Vec::with_capacity(self.specs.len() + 1);
        let mut auxs = Vec::with_capacity(self.specs.len());
        values.push(x.clone());
        for i in 0..self.specs.len() {
            let mut aux = Aux::None;
            let y = self.layer_forward(i, values.last().unwrap(), train, rng.as_deref_mut(), &mut aux)?;
            values.push(y);
            auxs.push(aux);
        }
        Ok(Cache { values, aux: auxs })
    }

    /// Accumulates parameter gradients into `grads` and returns the input
    /// gradient.
    pub fn backward(&self, cache: &Cache<T>, dout: &TensorBuf<T>, grads: &mut [T]) -> Result<TensorBuf<T>, NnError> {
        if cache.values.len() != self.specs.len() + 1 || cache.aux.len() != self.specs.len() {
            return Err(NnError::Contract("cache does not belong to this network".into()));
        }
        if grads.len() != self.params.len() {
            return Err(NnError::Contract(format!(
                "gradient buffer has {} entries, network has {} parameters",
                grads.len(),
                self.params.len()
            )));
        }
        let out = cache.output();
        if dout.data.len() != out.data.len() {
            return Err(NnError::Shape {
                layer: Some(self.specs.len().saturating_sub(1)),
                msg: format!("output gradient shape {:?} vs output {:?}", dout.shape, out.shape),
            });
        }
        let mut d = dout.clone();
        for i in (0..self.specs.len()).rev() {
            let g = &mut grads[self.offsets[i]..self.offsets[i + 1]];
            d = self.layer_backward(i, &cache.values[i], &cache.aux[i], &d, g);
        }
        Ok(d)
    }

    fn layer_forward<'r>(
        &self,
        i: usize,
        x: &TensorBuf<T>,
        train: bool,
        rng: Option<&mut (dyn RngCore + 'r)>,
        aux: &mut Aux<T>,
    ) -> Result<TensorBuf<T>, NnError> {
        let b = x.batch();
        let out_dim = self.dims[i + 1];
        let p = &self.params[self.offsets[i]..self.offsets[i + 1]];
        let mut y = TensorBuf::zeros(&[b, out_dim]);
        match self.specs[i] {
            LayerSpec::Dense { input, output } => {
                let (w, bias) = p.split_at(input * output);
                for r in 0..b {
                    y.row_mut(r).copy_from_slice(bias);
                }
                T::gemm(
                    b,
                    input,
                    output,
                    T::ONE,
                    &x.data,
                    input as isize,
                    1,
                    w,
                    output as isize,
                    1,
                    T::ONE,
                    &mut y.data,
                    output as isize,
                    1,
                );
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                height,
                width,
            } => {
                let (oh, ow) = LayerSpec::conv_out(height, width, kernel, stride);
                let ckk = in_channels * kernel * kernel;
                let np = oh * ow;
                let (w, bias) = p.split_at(out_channels * ckk);
                let mut cols = vec![T::ZERO; ckk * np];
                for s in 0..b {
                    im2col(x.row(s), in_channels, height, width, kernel, stride, oh, ow, &mut cols);
                    let ys = y.row_mut(s);
                    for (o, chunk) in ys.chunks_mut(np).enumerate() {
                        chunk.fill(bias[o]);
                    }
                    T::gemm(
                        out_channels,
                        ckk,
                        np,
                        T::ONE,
                        w,
                        ckk as isize,
                        1,
                        &cols,
                        np as isize,
                        1,
                        T::ONE,
                        ys,
                        np as isize,
                        1,
                    );
                }
            }
            LayerSpec::MaxPool2d {
                channels,
                height,
                width,
                window,
            } => {
                let (oh, ow) = (height / window, width / window);
                let mut arg = vec![0u32; b * out_dim];
                for s in 0..b {
                    let xs = x.row(s);
                    let ys = &mut y.data[s * out_dim..(s + 1) * out_dim];
                    let args = &mut arg[s * out_dim..(s + 1) * out_dim];
                    for c in 0..channels {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut best = c * height * width + oy * window * width + ox * window;
                                for ky in 0..window {
                                    for kx in 0..window {
                                        let idx = c * height * width + (oy * window + ky) * width + ox * window + kx;
                                        if xs[idx] > xs[best] {
                                            best = idx;
                                        }
                                    }
                                }
                                let o = c * oh * ow + oy * ow + ox;
                                ys[o] = xs[best];
                                args[o] = best as u32;
                            }
                        }
                    }
                }
                *aux = Aux::Argmax(arg);
            }
            LayerSpec::Dropout { rate } => {
                if !train || rate == 0.0 {
                    y.data.copy_from_slice(&x.data);
                } else {
                    let rng =
                        rng.ok_or_else(|| NnError::Contract(format!("layer {i}: training dropout needs an rng")))?;
                    let keep = T::from_f64(1.0 / (1.0 - rate));
                    let mask: Vec<T> = (0..x.data.len())
                        .map(|_| if rng.random::<f64>() < rate { T::ZERO } else { keep })
                        .collect();
                    for ((yv, &xv), &m) in y.data.iter_mut().zip(&x.data).zip(&mask) {
                        *yv = xv * m;
                    }
                    *aux = Aux::Mask(mask);
                }
            }
            LayerSpec::Activation(a) => {
                for (yv, &xv) in y.data.iter_mut().zip(&x.data) {
                    *yv = a.apply(xv);
                }
            }
        }
        Ok(y)
    }

    fn layer_backward(&self, i: usize, x: &TensorBuf<T>, aux: &Aux<T>, dy: &TensorBuf<T>, g: &mut [T]) -> TensorBuf<T> {
        let b = x.batch();
        let in_dim = self.dims[i];
        let out_dim = self.dims[i + 1];
        let p = &self.params[self.offsets[i]..self.offsets[i + 1]];
        let mut dx = TensorBuf::zeros(&[b, in_dim]);
        match self.specs[i] {
            LayerSpec::Dense { input, output } => {
                let (w, _) = p.split_at(input * output);
                let (gw, gb) = g.split_at_mut(input * output);
                // dW += x^T dy
                T::gemm(
                    input,
                    b,
                    output,
                    T::ONE,
                    &x.data,
                    1,
                    input as isize,
                    &dy.data,
                    output as isize,
                    1,
                    T::ONE,
                    gw,
                    output as isize,
                    1,
                );
                for r in 0..b {
                    for (gbv, &d) in gb.iter_mut().zip(dy.row(r)) {
                        *gbv += d;
                    }
                }
                // dx = dy W^T
                T::gemm(
                    b,
                    output,
                    input,
                    T::ONE,
                    &dy.data,
                    output as isize,
                    1,
                    w,
                    1,
                    output as isize,
                    T::ZERO,
                    &mut dx.data,
                    input as isize,
                    1,
                );
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                height,
                width,
            } => {
                let (oh, ow) = LayerSpec::conv_out(height, width, kernel, stride);
                let ckk = in_channels * kernel * kernel;
                let np = oh * ow;
                let (w, _) = p.split_at(out_channels * ckk);
                let (gw, gb) = g.split_at_mut(out_channels * ckk);
                let mut cols = vec![T::ZERO; ckk * np];
                let mut dcols = vec![T::ZERO; ckk * np];
                for s in 0..b {
                    let dys = &dy.data[s * out_dim..(s + 1) * out_dim];
                    im2col(x.row(s), in_channels, height, width, kernel, stride, oh, ow, &mut cols);
                    // dW += dy_s cols^T
                    T::gemm(
                        out_channels,
                        np,
                        ckk,
                        T::ONE,
                        dys,
                        np as isize,
                        1,
                        &cols,
                        1,
                        np as isize,
                        T::ONE,
                        gw,
                        ckk as isize,
                        1,
                    );
                    for (o, chunk) in dys.chunks(np).enumerate() {
                        gb[o] += chunk.iter().copied().sum::<T>();
                    }
                    // dcols = W^T dy_s
                    T::gemm(
                        ckk,
                        out_channels,
                        np,
                        T::ONE,
                        w,
                        1,
                        ckk as isize,
                        dys,
                        np as isize,
                        1,
                        T::ZERO,
                        &mut dcols,
                        np as isize,
                        1,
                    );
                    col2im(
                        &dcols,
                        in_channels,
                        height,
                        width,
                        kernel,
                        stride,
                        oh,
                        ow,
                        dx.row_mut(s),
                    );
                }
            }
            LayerSpec::MaxPool2d { .. } => {
                let Aux::Argmax(arg) = aux else {
                    unreachable!("pooling cache without argmax")
                };
                for s in 0..b {
                    for o in 0..out_dim {
                        dx.data[s * in_dim + arg[s * out_dim + o] as usize] += dy.data[s * out_dim + o];
                    }
                }
            }
            LayerSpec::Dropout { .. } => match aux {
                Aux::Mask(mask) => {
                    for ((dxv, &d), &m) in dx.data.iter_mut().zip(&dy.data).zip(mask) {
                        *dxv = d * m;
                    }
                }
                _ => dx.data.copy_from_slice(&dy.data),
            },
            LayerSpec::Activation(a) => {
                for ((dxv, &d), &xv) in dx.data.iter_mut().zip(&dy.data).zip(&x.data) {
                    *dxv = d * a.derivative(xv);
                }
            }
        }
        dx
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col<T: Real>(
    x: &[T],
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    cols: &mut [T],
) {
    let np = oh * ow;
    for c in 0..channels {
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = &mut cols[((c * kernel + ky) * kernel + kx) * np..][..np];
                for oy in 0..oh {
                    let src = &x[c * height * width + (oy * stride + ky) * width + kx..];
                    for ox in 0..ow {
                        row[oy * ow + ox] = src[ox * stride];
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im<T: Real>(
    cols: &[T],
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    dx: &mut [T],
) {
    let np = oh * ow;
    for c in 0..channels {
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = &cols[((c * kernel + ky) * kernel + kx) * np..][..np];
                for oy in 0..oh {
                    let base = c * height * width + (oy * stride + ky) * width + kx;
                    for ox in 0..ow {
                        dx[base + ox * stride] += row[oy * ow + ox];
                    }
                }
            }
        }
    }
}
