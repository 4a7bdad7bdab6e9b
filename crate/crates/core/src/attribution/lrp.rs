//! Layer-wise relevance propagation.
//!
//! The composite strategy assigns one rule per layer type:
//!
//! * dense layers use the ε-rule,
//! * convolutions use the α1β0 rule, except
//! * the convolution closest to the input, which uses the flat rule,
//! * max pooling routes all relevance to the window's winner,
//! * ReLU and flatten pass relevance through unchanged.
//!
//! Biases never enter the rule denominators, so a dense/ReLU stack conserves
//! the target logit up to the ε stabilizer.

use super::map::AttributionMap;
use super::network::{pool_argmax, rank_of, Conv2d, Dense, Layer, ToyNetwork};
use super::tensor::{Shape, Tensor};
use crate::error::invalid;
use crate::{Error, Result};

/// Rule parameters for [`lrp_composite_with`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrpConfig {
    pub epsilon: f64,
    pub alpha: f64,
}

impl Default for LrpConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            alpha: 1.0,
        }
    }
}

/// Linear part of a weighted layer, with the weights passed explicitly so
/// rules can substitute their positive or negative parts.
enum Linear<'a> {
    Dense(&'a Dense),
    Conv(&'a Conv2d),
}

impl Linear<'_> {
    fn from_layer(layer: &Layer) -> Result<Linear<'_>> {
        match layer {
            Layer::Dense(d) => Ok(Linear::Dense(d)),
            Layer::Conv(c) => Ok(Linear::Conv(c)),
            other => Err(Error::RuleAssignment(format!(
                "{} layer has no weights to redistribute over",
                other.name()
            ))),
        }
    }

    fn weights(&self) -> &[f64] {
        match self {
            Linear::Dense(d) => &d.weights,
            Linear::Conv(c) => &c.weights,
        }
    }

    fn check(&self, lower: Shape, upper: Shape) -> Result<()> {
        let (exp_lower, exp_upper) = match self {
            Linear::Dense(d) => (Shape::flat(d.inputs), Shape::flat(d.outputs)),
            Linear::Conv(c) => (
                Shape::new(c.in_channels, upper.h, upper.w),
                Shape::new(c.out_channels, lower.h, lower.w),
            ),
        };
        if lower != exp_lower || upper != exp_upper {
            return Err(Error::Shape(format!(
                "relevance {upper} / activations {lower} do not fit the layer"
            )));
        }
        Ok(())
    }

    /// `z_k = Σ_j a_j w_jk` without bias.
    fn forward(&self, w: &[f64], a: &Tensor) -> Vec<f64> {
        match self {
            Linear::Dense(d) => (0..d.outputs)
                .map(|o| {
                    w[o * d.inputs..(o + 1) * d.inputs]
                        .iter()
                        .zip(a.data())
                        .map(|(x, y)| x * y)
                        .sum()
                })
                .collect(),
            Linear::Conv(c) => {
                let s = a.shape();
                let mut out = vec![0.0; c.out_channels * s.plane()];
                c.accumulate(w, a, &mut out);
                out
            }
        }
    }

    /// `t_j = Σ_k w_jk s_k`, the transpose of [`Linear::forward`].
    fn transpose(&self, w: &[f64], s: &Tensor) -> Vec<f64> {
        match self {
            Linear::Dense(d) => {
                let mut out = vec![0.0; d.inputs];
                for (o, sv) in s.data().iter().enumerate() {
                    if *sv == 0.0 {
                        continue;
                    }
                    for (t, wv) in out.iter_mut().zip(&w[o * d.inputs..(o + 1) * d.inputs]) {
                        *t += wv * sv;
                    }
                }
                out
            }
            Linear::Conv(c) => conv_transpose(c, w, s),
        }
    }
}

fn conv_transpose(c: &Conv2d, w: &[f64], s: &Tensor) -> Vec<f64> {
    let Shape { h, w: wd, .. } = s.shape();
    let pad = c.pad() as isize;
    let mut out = vec![0.0; c.in_channels * h * wd];
    for oc in 0..c.out_channels {
        let src = s.channel(oc);
        for ic in 0..c.in_channels {
            let dst = &mut out[ic * h * wd..(ic + 1) * h * wd];
            for ky in 0..c.kernel {
                let (y0, y1) = c.valid_range(ky, h);
                let dy = ky as isize - pad;
                for kx in 0..c.kernel {
                    let wv = w[c.widx(oc, ic, ky, kx)];
                    if wv == 0.0 {
                        continue;
                    }
                    let (x0, x1) = c.valid_range(kx, wd);
                    let dx = kx as isize - pad;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        for x in x0..x1 {
                            dst[sy * wd + (x as isize + dx) as usize] += wv * src[y * wd + x];
                        }
                    }
                }
            }
        }
    }
    out
}

fn stabilized(z: f64, epsilon: f64) -> f64 {
    // sign(0) counts as positive
    if z >= 0.0 {
        z + epsilon
    } else {
        z - epsilon
    }
}

/// ε-rule: `R_j = Σ_k a_j w_jk / (z_k + ε·sign(z_k)) · R_k`.
pub fn lrp_epsilon(layer: &Layer, lower: &Tensor, upper: &Tensor, epsilon: f64) -> Result<Tensor> {
    if !(epsilon > 0.0) {
        return Err(invalid("epsilon", "must be positive"));
    }
    let lin = Linear::from_layer(layer)?;
    lin.check(lower.shape(), upper.shape())?;
    let w = lin.weights();
    let z = lin.forward(w, lower);
    let s: Vec<f64> = z
        .iter()
        .zip(upper.data())
        .map(|(z, r)| r / stabilized(*z, epsilon))
        .collect();
    let t = lin.transpose(w, &Tensor::from_vec(upper.shape(), s)?);
    let r = lower.data().iter().zip(&t).map(|(a, t)| a * t).collect();
    Tensor::from_vec(lower.shape(), r)
}

/// αβ-rule with `β = α − 1`. Only positive contributions `(a_j w_jk)⁺`
/// carry relevance when `α = 1`. An upper neuron whose positive (or negative)
/// contributions sum to zero has that share of its relevance dropped.
pub fn lrp_alphabeta(layer: &Layer, lower: &Tensor, upper: &Tensor, alpha: f64) -> Result<Tensor> {
    if !(alpha >= 1.0 && alpha.is_finite()) {
        return Err(invalid("alpha", "must be at least 1 so that beta = alpha - 1 >= 0"));
    }
    let beta = alpha - 1.0;
    let lin = Linear::from_layer(layer)?;
    lin.check(lower.shape(), upper.shape())?;
    let w = lin.weights();
    let wp: Vec<f64> = w.iter().map(|v| v.max(0.0)).collect();
    let wn: Vec<f64> = w.iter().map(|v| v.min(0.0)).collect();
    let shape = lower.shape();
    let ap = Tensor::from_vec(shape, lower.data().iter().map(|v| v.max(0.0)).collect())?;
    let an = Tensor::from_vec(shape, lower.data().iter().map(|v| v.min(0.0)).collect())?;

    let add = |x: Vec<f64>, y: Vec<f64>| -> Vec<f64> { x.iter().zip(&y).map(|(a, b)| a + b).collect() };
    let ratio = |z: &[f64]| -> Result<Tensor> {
        let s = z
            .iter()
            .zip(upper.data())
            .map(|(z, r)| if *z != 0.0 { r / z } else { 0.0 })
            .collect();
        Tensor::from_vec(upper.shape(), s)
    };

    // (a w)⁺ = a⁺w⁺ + a⁻w⁻ and (a w)⁻ = a⁺w⁻ + a⁻w⁺
    let zp = add(lin.forward(&wp, &ap), lin.forward(&wn, &an));
    let sp = ratio(&zp)?;
    let tpp = lin.transpose(&wp, &sp);
    let tpn = lin.transpose(&wn, &sp);
    let mut r: Vec<f64> = (0..shape.len())
        .map(|j| alpha * (ap.data()[j] * tpp[j] + an.data()[j] * tpn[j]))
        .collect();

    if beta > 0.0 {
        let zn = add(lin.forward(&wn, &ap), lin.forward(&wp, &an));
        let sn = ratio(&zn)?;
        let tnn = lin.transpose(&wn, &sn);
        let tnp = lin.transpose(&wp, &sn);
        for (j, rj) in r.iter_mut().enumerate() {
            *rj -= beta * (ap.data()[j] * tnn[j] + an.data()[j] * tnp[j]);
        }
    }
    Tensor::from_vec(shape, r)
}

/// Flat rule: each upper neuron splits its relevance equally over every
/// in-bounds input position (all channels) of its receptive field.
pub fn lrp_flat(layer: &Layer, upper: &Tensor) -> Result<Tensor> {
    let Layer::Conv(c) = layer else {
        return Err(Error::RuleAssignment(format!(
            "flat rule requires a convolution, got {}",
            layer.name()
        )));
    };
    let s = upper.shape();
    if s.c != c.out_channels {
        return Err(Error::Shape(format!(
            "relevance {s} does not match {} output channels",
            c.out_channels
        )));
    }
    let pad = c.pad();
    let span = |p: usize, n: usize| -> usize {
        let lo = p.saturating_sub(pad);
        let hi = (p + pad).min(n - 1);
        hi - lo + 1
    };
    // Per-position share, then spread with an all-ones kernel of one channel.
    let mut share = vec![0.0; s.plane()];
    for y in 0..s.h {
        for x in 0..s.w {
            let count = (c.in_channels * span(y, s.h) * span(x, s.w)) as f64;
            let total: f64 = (0..s.c).map(|oc| upper.at(oc, y, x)).sum();
            share[y * s.w + x] = total / count;
        }
    }
    let mut spread = vec![0.0; s.plane()];
    for y in 0..s.h {
        for x in 0..s.w {
            let v = share[y * s.w + x];
            if v == 0.0 {
                continue;
            }
            for sy in y.saturating_sub(pad)..=(y + pad).min(s.h - 1) {
                for sx in x.saturating_sub(pad)..=(x + pad).min(s.w - 1) {
                    spread[sy * s.w + sx] += v;
                }
            }
        }
    }
    let mut out = Vec::with_capacity(c.in_channels * s.plane());
    for _ in 0..c.in_channels {
        out.extend_from_slice(&spread);
    }
    Tensor::from_vec(Shape::new(c.in_channels, s.h, s.w), out)
}

fn winner_take_all(lower: &Tensor, upper: &Tensor, size: usize) -> Tensor {
    let mut r = Tensor::zeros(lower.shape());
    let s = upper.shape();
    for c in 0..s.c {
        for oy in 0..s.h {
            for ox in 0..s.w {
                let (y, x) = pool_argmax(lower, c, oy, ox, size);
                let i = r.index(c, y, x);
                r.data_mut()[i] += upper.at(c, oy, ox);
            }
        }
    }
    r
}

/// Relevance of every input element (same shape as the input) for
/// `target_class`, starting from the target logit.
pub fn lrp_composite_with(
    net: &ToyNetwork,
    input: &Tensor,
    target_class: usize,
    cfg: &LrpConfig,
) -> Result<(Tensor, Vec<f64>)> {
    if target_class >= net.num_classes() {
        return Err(Error::LabelOutOfRange {
            label: target_class,
            num_classes: net.num_classes(),
        });
    }
    let trace = net.forward(input)?;
    let logits = trace.logits().to_vec();
    let mut r = Tensor::zeros(Shape::flat(logits.len()));
    r.data_mut()[target_class] = logits[target_class];

    let lowest = net.lowest_conv();
    for (i, layer) in net.layers().iter().enumerate().rev() {
        let lower = &trace.activations[i];
        r = match layer {
            Layer::Dense(_) => lrp_epsilon(layer, lower, &r, cfg.epsilon)?,
            Layer::Conv(_) if Some(i) == lowest => lrp_flat(layer, &r)?,
            Layer::Conv(_) => lrp_alphabeta(layer, lower, &r, cfg.alpha)?,
            Layer::Relu => r,
            Layer::MaxPool { size } => winner_take_all(lower, &r, *size),
            Layer::Flatten => r.reshaped(lower.shape())?,
        };
    }
    if r.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("relevance".into()));
    }
    Ok((r, logits))
}

/// Channel-summed composite LRP explanation of `target_class`.
pub fn lrp_composite(net: &ToyNetwork, input: &Tensor, target_class: usize) -> Result<AttributionMap> {
    lrp_composite_cfg(net, input, target_class, &LrpConfig::default())
}

pub fn lrp_composite_cfg(
    net: &ToyNetwork,
    input: &Tensor,
    target_class: usize,
    cfg: &LrpConfig,
) -> Result<AttributionMap> {
    let (r, logits) = lrp_composite_with(net, input, target_class, cfg)?;
    let s = r.shape();
    let mut map = AttributionMap::new(s.h, s.w, r.channel_sum())?;
    map.target_class = target_class;
    map.predicted_rank_of_true_label = rank_of(&logits, target_class);
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::network::init_conv;
    use crate::seeded_rng;
    use rand::Rng;

    fn tensor(shape: Shape, rng: &mut impl Rng, lo: f64, hi: f64) -> Tensor {
        Tensor::from_vec(shape, (0..shape.len()).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
    }

    #[test]
    fn epsilon_single_path_conserves() {
        let d = Dense {
            inputs: 1,
            outputs: 1,
            weights: vec![3.0],
            bias: vec![0.0],
        };
        let a = Tensor::from_vec(Shape::flat(1), vec![2.0]).unwrap();
        let r = Tensor::from_vec(Shape::flat(1), vec![6.0]).unwrap();
        let out = lrp_epsilon(&Layer::Dense(d), &a, &r, 1e-9).unwrap();
        assert!((out.data()[0] - 6.0).abs() / 6.0 < 1e-6);
    }

    #[test]
    fn epsilon_stabilizes_zero_denominator() {
        let d = Dense {
            inputs: 2,
            outputs: 1,
            weights: vec![1.0, -1.0],
            bias: vec![0.0],
        };
        let a = Tensor::from_vec(Shape::flat(2), vec![1.0, 1.0]).unwrap();
        let r = Tensor::from_vec(Shape::flat(1), vec![1.0]).unwrap();
        let out = lrp_epsilon(&Layer::Dense(d), &a, &r, 1.0).unwrap();
        assert!(out.data().iter().all(|v| v.is_finite()));
        assert_eq!(out.data(), &[1.0, -1.0]);
    }

    #[test]
    fn epsilon_positive_layer_matches_explicit_formula() {
        let mut rng = seeded_rng(3);
        let d = Dense {
            inputs: 3,
            outputs: 4,
            weights: (0..12).map(|_| rng.random_range(0.1..1.0)).collect(),
            bias: vec![0.0; 4],
        };
        let a = tensor(Shape::flat(3), &mut rng, 0.1, 1.0);
        let r = tensor(Shape::flat(4), &mut rng, 0.1, 1.0);
        let out = lrp_epsilon(&Layer::Dense(d.clone()), &a, &r, 1e-9).unwrap();
        // explicit double sum of the rule
        for j in 0..3 {
            let mut expect = 0.0;
            for k in 0..4 {
                let z: f64 = (0..3).map(|i| a.data()[i] * d.weight(k, i)).sum();
                expect += a.data()[j] * d.weight(k, j) / (z + 1e-9) * r.data()[k];
            }
            assert!((out.data()[j] - expect).abs() < 1e-12);
        }
        let (lo, up) = (out.sum(), r.sum());
        assert!((lo - up).abs() / up < 1e-6);
    }

    #[test]
    fn alphabeta_matches_epsilon_on_positive_conv() {
        let mut rng = seeded_rng(8);
        let mut c = init_conv(2, 3, 3, &mut rng);
        for w in &mut c.weights {
            *w = w.abs() + 0.01;
        }
        let layer = Layer::Conv(c);
        let a = tensor(Shape::new(2, 5, 5), &mut rng, 0.1, 1.0);
        let r = tensor(Shape::new(3, 5, 5), &mut rng, 0.0, 1.0);
        let ab = lrp_alphabeta(&layer, &a, &r, 1.0).unwrap();
        let eps = lrp_epsilon(&layer, &a, &r, 1e-12).unwrap();
        for (x, y) in ab.data().iter().zip(eps.data()) {
            assert!((x - y).abs() < 1e-6);
        }
        assert!((ab.sum() - r.sum()).abs() < 1e-9 * r.sum().abs().max(1.0));
    }

    #[test]
    fn alphabeta_ignores_negative_paths() {
        let d = Dense {
            inputs: 2,
            outputs: 1,
            weights: vec![2.0, -1.0],
            bias: vec![0.0],
        };
        let a = Tensor::from_vec(Shape::flat(2), vec![1.0, 1.0]).unwrap();
        let r = Tensor::from_vec(Shape::flat(1), vec![5.0]).unwrap();
        let out = lrp_alphabeta(&Layer::Dense(d), &a, &r, 1.0).unwrap();
        assert_eq!(out.data(), &[5.0, 0.0]);
    }

    #[test]
    fn alphabeta_zero_relevance() {
        let mut rng = seeded_rng(1);
        let layer = Layer::Conv(init_conv(1, 2, 3, &mut rng));
        let a = tensor(Shape::new(1, 4, 4), &mut rng, 0.0, 1.0);
        let r = Tensor::zeros(Shape::new(2, 4, 4));
        let out = lrp_alphabeta(&layer, &a, &r, 1.0).unwrap();
        assert!(out.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn flat_one_by_one_is_pass_through() {
        let c = Conv2d::zeros(1, 1, 1);
        let r = Tensor::from_vec(Shape::new(1, 2, 2), vec![1.0, -2.0, 3.0, 4.0]).unwrap();
        let out = lrp_flat(&Layer::Conv(c), &r).unwrap();
        assert_eq!(out.data(), r.data());
    }

    #[test]
    fn flat_splits_uniformly_in_interior() {
        let c = Conv2d::zeros(1, 1, 3);
        let mut r = Tensor::zeros(Shape::new(1, 5, 5));
        r.set(0, 2, 2, 9.0);
        let out = lrp_flat(&Layer::Conv(c), &r).unwrap();
        for y in 0..5 {
            for x in 0..5 {
                let inside = (1..=3).contains(&y) && (1..=3).contains(&x);
                assert_eq!(out.at(0, y, x), if inside { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn flat_rejects_dense() {
        let r = Tensor::zeros(Shape::flat(2));
        assert!(matches!(
            lrp_flat(&Layer::Dense(Dense::zeros(2, 2)), &r),
            Err(Error::RuleAssignment(_))
        ));
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_map() {
        let mut net = ToyNetwork::toy_cnn(Shape::new(1, 8, 8), 3, 4).unwrap();
        for l in net.layers_mut() {
            match l {
                Layer::Dense(d) => d.bias.fill(0.0),
                Layer::Conv(c) => c.bias.fill(0.0),
                _ => {}
            }
        }
        let map = lrp_composite(&net, &Tensor::zeros(Shape::new(1, 8, 8)), 1).unwrap();
        assert!(map.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn dense_net_map_sums_to_logit() {
        let net = ToyNetwork::mlp(Shape::new(1, 4, 4), &[12, 6], 3, 21);
        let mut rng = seeded_rng(2);
        let x = tensor(Shape::new(1, 4, 4), &mut rng, 0.0, 1.0);
        let logits = net.logits(&x).unwrap();
        let target = crate::attribution::network::argmax(&logits);
        let cfg = LrpConfig {
            epsilon: 1e-9,
            alpha: 1.0,
        };
        let map = lrp_composite_cfg(&net, &x, target, &cfg).unwrap();
        let total: f64 = map.values.iter().sum();
        // biases are zero at init, so the logit is fully explained
        assert!((total - logits[target]).abs() / logits[target].abs() < 1e-4);
        assert_eq!(map.predicted_rank_of_true_label, 1);
    }

    #[test]
    fn rejects_bad_target() {
        let net = ToyNetwork::toy_mlp(3, 1);
        let x = Tensor::zeros(Shape::new(1, 28, 28));
        assert!(lrp_composite(&net, &x, 3).is_err());
    }
}
