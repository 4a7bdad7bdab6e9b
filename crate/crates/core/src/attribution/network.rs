use rand::Rng;

use super::tensor::{Shape, Tensor};
use crate::{seeded_rng, Error, Result};

/// Fully connected layer. `weights` is `outputs × inputs`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    #[inline]
    pub fn weight(&self, out: usize, inp: usize) -> f64 {
        self.weights[out * self.inputs + inp]
    }

    pub fn row(&self, out: usize) -> &[f64] {
        &self.weights[out * self.inputs..(out + 1) * self.inputs]
    }
}

/// Stride-1 convolution with an odd square kernel and zero "same" padding,
/// so spatial dimensions are preserved. `weights` is laid out as
/// `[out][in][ky][kx]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            weights: vec![0.0; out_channels * in_channels * kernel * kernel],
            bias: vec![0.0; out_channels],
        }
    }

    pub fn pad(&self) -> usize {
        self.kernel / 2
    }

    #[inline]
    pub fn widx(&self, oc: usize, ic: usize, ky: usize, kx: usize) -> usize {
        ((oc * self.in_channels + ic) * self.kernel + ky) * self.kernel + kx
    }

    /// Range of output coordinates `o` for which `o + k - pad` lies in `[0, n)`.
    #[inline]
    pub(crate) fn valid_range(&self, k: usize, n: usize) -> (usize, usize) {
        let pad = self.pad() as isize;
        let off = k as isize - pad;
        let lo = (-off).max(0) as usize;
        let hi = (n as isize - off).min(n as isize).max(0) as usize;
        (lo, hi.max(lo))
    }

    /// Accumulates `sum_k w * input[y + off_y][x + off_x]` into `out`
    /// (`out_channels × h × w`, already holding the bias when wanted).
    pub(crate) fn accumulate(&self, weights: &[f64], input: &Tensor, out: &mut [f64]) {
        let Shape { h, w, .. } = input.shape();
        let pad = self.pad() as isize;
        for oc in 0..self.out_channels {
            let plane = &mut out[oc * h * w..(oc + 1) * h * w];
            for ic in 0..self.in_channels {
                let src = input.channel(ic);
                for ky in 0..self.kernel {
                    let (y0, y1) = self.valid_range(ky, h);
                    let dy = ky as isize - pad;
                    for kx in 0..self.kernel {
                        let wv = weights[self.widx(oc, ic, ky, kx)];
                        if wv == 0.0 {
                            continue;
                        }
                        let (x0, x1) = self.valid_range(kx, w);
                        let dx = kx as isize - pad;
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let srow = &src[sy * w..(sy + 1) * w];
                            let orow = &mut plane[y * w..(y + 1) * w];
                            for x in x0..x1 {
                                orow[x] += wv * srow[(x as isize + dx) as usize];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// One stage of a [`ToyNetwork`].
#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Conv(Conv2d),
    Relu,
    /// Non-overlapping max pooling with a square window; trailing rows and
    /// columns that do not fill a window are discarded.
    MaxPool { size: usize },
    Flatten,
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Conv(_) => "conv",
            Layer::Relu => "relu",
            Layer::MaxPool { .. } => "maxpool",
            Layer::Flatten => "flatten",
        }
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        match self {
            Layer::Dense(d) => {
                if input.h != 1 || input.w != 1 || input.c != d.inputs {
                    return Err(Error::Shape(format!(
                        "dense layer expects a flat vector of {} values, got {}",
                        d.inputs, input
                    )));
                }
                Ok(Shape::flat(d.outputs))
            }
            Layer::Conv(c) => {
                if input.c != c.in_channels {
                    return Err(Error::Shape(format!(
                        "conv layer expects {} channels, got {}",
                        c.in_channels, input
                    )));
                }
                if c.kernel % 2 == 0 {
                    return Err(Error::Shape(format!("conv kernel {} is not odd", c.kernel)));
                }
                Ok(Shape::new(c.out_channels, input.h, input.w))
            }
            Layer::Relu => Ok(input),
            Layer::MaxPool { size } => {
                if *size == 0 || input.h < *size || input.w < *size {
                    return Err(Error::Shape(format!(
                        "maxpool window {size} does not fit {input}"
                    )));
                }
                Ok(Shape::new(input.c, input.h / size, input.w / size))
            }
            Layer::Flatten => Ok(Shape::flat(input.len())),
        }
    }

    /// Applies the layer; the input shape must already have been validated.
    pub fn forward(&self, x: &Tensor) -> Tensor {
        match self {
            Layer::Dense(d) => {
                let a = x.data();
                let out: Vec<f64> = (0..d.outputs)
                    .map(|o| dot(d.row(o), a) + d.bias[o])
                    .collect();
                Tensor::from_vec(Shape::flat(d.outputs), out).expect("dense output")
            }
            Layer::Conv(c) => {
                let s = x.shape();
                let plane = s.plane();
                let mut out = vec![0.0; c.out_channels * plane];
                for (oc, b) in c.bias.iter().enumerate() {
                    out[oc * plane..(oc + 1) * plane].fill(*b);
                }
                c.accumulate(&c.weights, x, &mut out);
                Tensor::from_vec(Shape::new(c.out_channels, s.h, s.w), out).expect("conv output")
            }
            Layer::Relu => {
                let data = x.data().iter().map(|v| v.max(0.0)).collect();
                Tensor::from_vec(x.shape(), data).expect("relu output")
            }
            Layer::MaxPool { size } => {
                let s = x.shape();
                let os = Shape::new(s.c, s.h / size, s.w / size);
                let mut out = Tensor::zeros(os);
                for c in 0..s.c {
                    for oy in 0..os.h {
                        for ox in 0..os.w {
                            let (y, xx) = pool_argmax(x, c, oy, ox, *size);
                            out.set(c, oy, ox, x.at(c, y, xx));
                        }
                    }
                }
                out
            }
            Layer::Flatten => x.clone().reshaped(Shape::flat(x.shape().len())).expect("flatten"),
        }
    }
}

/// Position of the first maximum (row-major) inside a pooling window.
pub(crate) fn pool_argmax(x: &Tensor, c: usize, oy: usize, ox: usize, size: usize) -> (usize, usize) {
    let mut best = (oy * size, ox * size);
    let mut best_v = f64::NEG_INFINITY;
    for y in oy * size..(oy + 1) * size {
        for xx in ox * size..(ox + 1) * size {
            let v = x.at(c, y, xx);
            if v > best_v {
                best_v = v;
                best = (y, xx);
            }
        }
    }
    best
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Activations recorded by a forward pass: `activations[0]` is the input and
/// `activations[i + 1]` the output of layer `i`.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub activations: Vec<Tensor>,
}

impl ForwardTrace {
    pub fn logits(&self) -> &[f64] {
        self.activations.last().expect("non-empty trace").data()
    }
}

/// A small sequential image classifier. The final layer is a dense layer
/// producing raw logits; softmax is applied outside the network.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyNetwork {
    layers: Vec<Layer>,
    input_shape: Shape,
    num_classes: usize,
}

impl ToyNetwork {
    pub fn new(layers: Vec<Layer>, input_shape: Shape, num_classes: usize) -> Result<Self> {
        if num_classes == 0 {
            return Err(crate::error::invalid("num_classes", "must be positive"));
        }
        let mut shape = input_shape;
        for (i, layer) in layers.iter().enumerate() {
            shape = layer
                .output_shape(shape)
                .map_err(|e| Error::Shape(format!("layer {i} ({}): {e}", layer.name())))?;
        }
        match layers.last() {
            Some(Layer::Dense(d)) if d.outputs == num_classes => {}
            _ => {
                return Err(Error::Shape(format!(
                    "network must end in a dense layer with {num_classes} outputs"
                )))
            }
        }
        for layer in &layers {
            let finite = match layer {
                Layer::Dense(d) => d.weights.iter().chain(&d.bias).all(|v| v.is_finite()),
                Layer::Conv(c) => c.weights.iter().chain(&c.bias).all(|v| v.is_finite()),
                _ => true,
            };
            if !finite {
                return Err(Error::NonFinite("network parameters".into()));
            }
        }
        Ok(Self {
            layers,
            input_shape,
            num_classes,
        })
    }

    /// Multi-layer perceptron `flatten → (dense → relu)* → dense`.
    pub fn mlp(input_shape: Shape, hidden: &[usize], num_classes: usize, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let mut layers = vec![Layer::Flatten];
        let mut width = input_shape.len();
        for &h in hidden {
            layers.push(Layer::Dense(init_dense(width, h, &mut rng)));
            layers.push(Layer::Relu);
            width = h;
        }
        layers.push(Layer::Dense(init_dense(width, num_classes, &mut rng)));
        Self::new(layers, input_shape, num_classes).expect("mlp shapes compose")
    }

    /// The shipped MLP: 784 → 128 → 64 → classes on 1×28×28 inputs.
    pub fn toy_mlp(num_classes: usize, seed: u64) -> Self {
        Self::mlp(Shape::new(1, 28, 28), &[128, 64], num_classes, seed)
    }

    /// The shipped CNN:
    /// conv3×3(8) → relu → maxpool2 → conv3×3(16) → relu → maxpool2 → flatten → dense.
    pub fn toy_cnn(input_shape: Shape, num_classes: usize, seed: u64) -> Result<Self> {
        let mut rng = seeded_rng(seed);
        let c1 = init_conv(input_shape.c, 8, 3, &mut rng);
        let c2 = init_conv(8, 16, 3, &mut rng);
        let flat = 16 * (input_shape.h / 2 / 2) * (input_shape.w / 2 / 2);
        let d = init_dense(flat, num_classes, &mut rng);
        Self::new(
            vec![
                Layer::Conv(c1),
                Layer::Relu,
                Layer::MaxPool { size: 2 },
                Layer::Conv(c2),
                Layer::Relu,
                Layer::MaxPool { size: 2 },
                Layer::Flatten,
                Layer::Dense(d),
            ],
            input_shape,
            num_classes,
        )
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_shape(&self) -> Shape {
        self.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Index of the convolution closest to the input, if any.
    pub fn lowest_conv(&self) -> Option<usize> {
        self.layers.iter().position(|l| matches!(l, Layer::Conv(_)))
    }

    pub fn forward(&self, input: &Tensor) -> Result<ForwardTrace> {
        if input.shape() != self.input_shape {
            return Err(Error::Shape(format!(
                "input is {}, network expects {}",
                input.shape(),
                self.input_shape
            )));
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.clone());
        for layer in &self.layers {
            let next = layer.forward(activations.last().unwrap());
            activations.push(next);
        }
        Ok(ForwardTrace { activations })
    }

    pub fn logits(&self, input: &Tensor) -> Result<Vec<f64>> {
        Ok(self.forward(input)?.logits().to_vec())
    }

    pub fn predict_proba(&self, input: &Tensor) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(input)?))
    }

    pub fn predict(&self, input: &Tensor) -> Result<usize> {
        Ok(argmax(&self.logits(input)?))
    }
}

pub(crate) fn init_dense(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Dense {
    let bound = (6.0 / inputs as f64).sqrt();
    Dense {
        inputs,
        outputs,
        weights: (0..inputs * outputs)
            .map(|_| rng.random_range(-bound..bound))
            .collect(),
        bias: vec![0.0; outputs],
    }
}

pub(crate) fn init_conv(inputs: usize, outputs: usize, kernel: usize, rng: &mut impl Rng) -> Conv2d {
    let fan_in = inputs * kernel * kernel;
    let bound = (6.0 / fan_in as f64).sqrt();
    let mut c = Conv2d::zeros(inputs, outputs, kernel);
    for w in &mut c.weights {
        *w = rng.random_range(-bound..bound);
    }
    c
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

/// Index of the largest score; ties resolve to the smaller index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in scores.iter().enumerate() {
        if *v > scores[best] {
            best = i;
        }
    }
    best
}

/// 1-based rank of `class` when scores are sorted descending. Classes with an
/// equal score do not push the rank down.
pub fn rank_of(scores: &[f64], class: usize) -> usize {
    let v = scores[class];
    1 + scores.iter().filter(|s| **s > v).count()
}
