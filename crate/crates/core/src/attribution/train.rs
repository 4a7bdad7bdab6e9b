use rand::seq::SliceRandom;

use super::data::LabeledDataset;
use super::network::{pool_argmax, softmax, ForwardTrace, Layer, ToyNetwork};
use super::tensor::Tensor;
use crate::error::invalid;
use crate::{seeded_rng, Error, Result};

/// Minibatch SGD settings.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 10,
            batch_size: 32,
            seed: 0,
            weight_decay: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning_rate", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "must be positive"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(invalid("weight_decay", "must be non-negative"));
        }
        Ok(())
    }
}

/// Per-layer parameter gradients; `None` for parameter-free layers.
struct Grads(Vec<Option<(Vec<f64>, Vec<f64>)>>);

impl Grads {
    fn zeros_like(net: &ToyNetwork) -> Self {
        Grads(
            net.layers()
                .iter()
                .map(|l| match l {
                    Layer::Dense(d) => Some((vec![0.0; d.weights.len()], vec![0.0; d.bias.len()])),
                    Layer::Conv(c) => Some((vec![0.0; c.weights.len()], vec![0.0; c.bias.len()])),
                    _ => None,
                })
                .collect(),
        )
    }

    fn clear(&mut self) {
        for (w, b) in self.0.iter_mut().flatten() {
            w.fill(0.0);
            b.fill(0.0);
        }
    }
}

/// Back-propagates `grad` (d loss / d logits) through the recorded trace and
/// accumulates parameter gradients.
fn backward(net: &ToyNetwork, trace: &ForwardTrace, grad: Vec<f64>, grads: &mut Grads) {
    let layers = net.layers();
    let mut g = Tensor::from_vec(trace.activations.last().unwrap().shape(), grad).unwrap();
    for i in (0..layers.len()).rev() {
        let input = &trace.activations[i];
        let need_input_grad = i > 0;
        g = match &layers[i] {
            Layer::Dense(d) => {
                let (dw, db) = grads.0[i].as_mut().unwrap();
                let a = input.data();
                let go = g.data();
                let mut gi = vec![0.0; d.inputs];
                for o in 0..d.outputs {
                    let gv = go[o];
                    if gv == 0.0 {
                        continue;
                    }
                    db[o] += gv;
                    let row = &mut dw[o * d.inputs..(o + 1) * d.inputs];
                    for (r, av) in row.iter_mut().zip(a) {
                        *r += gv * av;
                    }
                    if need_input_grad {
                        for (gij, w) in gi.iter_mut().zip(d.row(o)) {
                            *gij += gv * w;
                        }
                    }
                }
                Tensor::from_vec(input.shape(), gi).unwrap()
            }
            Layer::Conv(c) => {
                let (dw, db) = grads.0[i].as_mut().unwrap();
                let s = input.shape();
                let (h, w) = (s.h, s.w);
                let pad = c.pad() as isize;
                let mut gi = vec![0.0; s.len()];
                for oc in 0..c.out_channels {
                    let gplane = g.channel(oc);
                    db[oc] += gplane.iter().sum::<f64>();
                    for ic in 0..c.in_channels {
                        let src = input.channel(ic);
                        for ky in 0..c.kernel {
                            let (y0, y1) = c.valid_range(ky, h);
                            let dy = ky as isize - pad;
                            for kx in 0..c.kernel {
                                let (x0, x1) = c.valid_range(kx, w);
                                let dx = kx as isize - pad;
                                let widx = c.widx(oc, ic, ky, kx);
                                let wv = c.weights[widx];
                                let mut acc = 0.0;
                                for y in y0..y1 {
                                    let sy = (y as isize + dy) as usize;
                                    let grow = &gplane[y * w..(y + 1) * w];
                                    let srow = &src[sy * w..(sy + 1) * w];
                                    for x in x0..x1 {
                                        acc += grow[x] * srow[(x as isize + dx) as usize];
                                    }
                                    if need_input_grad {
                                        let base = ic * h * w + sy * w;
                                        let girow = &mut gi[base..base + w];
                                        for x in x0..x1 {
                                            girow[(x as isize + dx) as usize] += wv * grow[x];
                                        }
                                    }
                                }
                                dw[widx] += acc;
                            }
                        }
                    }
                }
                Tensor::from_vec(s, gi).unwrap()
            }
            Layer::Relu => {
                let out = &trace.activations[i + 1];
                let data = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(gv, o)| if *o > 0.0 { *gv } else { 0.0 })
                    .collect();
                Tensor::from_vec(input.shape(), data).unwrap()
            }
            Layer::MaxPool { size } => {
                let mut gi = Tensor::zeros(input.shape());
                let os = g.shape();
                for ch in 0..os.c {
                    for oy in 0..os.h {
                        for ox in 0..os.w {
                            let (y, x) = pool_argmax(input, ch, oy, ox, *size);
                            let idx = gi.index(ch, y, x);
                            gi.data_mut()[idx] += g.at(ch, oy, ox);
                        }
                    }
                }
                gi
            }
            Layer::Flatten => g.reshaped(input.shape()).unwrap(),
        };
        if !need_input_grad {
            break;
        }
    }
}

fn check_dataset(net: &ToyNetwork, data: &LabeledDataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(&label) = data.labels.iter().find(|l| **l >= net.num_classes()) {
        return Err(Error::LabelOutOfRange {
            label,
            num_classes: net.num_classes(),
        });
    }
    if data.image_shape() != Some(net.input_shape()) {
        return Err(Error::Shape(format!(
            "dataset images are {}, network expects {}",
            data.image_shape().unwrap(),
            net.input_shape()
        )));
    }
    Ok(())
}

/// Trains a copy of `net` with softmax cross-entropy and plain minibatch SGD.
/// Sample order is reshuffled every epoch from `cfg.seed`, so identical
/// inputs produce bit-identical weights.
pub fn train_sgd(net: &ToyNetwork, data: &LabeledDataset, cfg: &TrainConfig) -> Result<ToyNetwork> {
    train_sgd_with(net, data, cfg, |_, _| Ok(()))
}

/// [`train_sgd`] with a callback invoked after every completed epoch
/// (1-based epoch number).
pub fn train_sgd_with(
    net: &ToyNetwork,
    data: &LabeledDataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &ToyNetwork) -> Result<()>,
) -> Result<ToyNetwork> {
    cfg.validate()?;
    check_dataset(net, data)?;
    let mut net = net.clone();
    let mut rng = seeded_rng(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grads = Grads::zeros_like(&net);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            grads.clear();
            for &i in batch {
                let trace = net.forward(&data.images[i])?;
                let mut g = softmax(trace.logits());
                g[data.labels[i]] -= 1.0;
                backward(&net, &trace, g, &mut grads);
            }
            let scale = cfg.learning_rate / batch.len() as f64;
            for (layer, grad) in net.layers_mut().iter_mut().zip(&grads.0) {
                let Some((dw, db)) = grad else { continue };
                let (w, b) = match layer {
                    Layer::Dense(d) => (&mut d.weights, &mut d.bias),
                    Layer::Conv(c) => (&mut c.weights, &mut c.bias),
                    _ => continue,
                };
                for (wv, gv) in w.iter_mut().zip(dw) {
                    *wv -= scale * gv + cfg.learning_rate * cfg.weight_decay * *wv;
                }
                for (bv, gv) in b.iter_mut().zip(db) {
                    *bv -= scale * gv;
                }
            }
        }
        on_epoch(epoch, &net)?;
    }
    Ok(net)
}

/// Fraction of samples whose argmax prediction equals the label.
pub fn accuracy(net: &ToyNetwork, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0usize;
    for (img, &label) in data.images.iter().zip(&data.labels) {
        if net.predict(img)? == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}
