//! Softmax negative log-likelihood, back-propagation and SGD on an `f64`
//! copy of a network.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nnet::kernels::{self, lrn_window};
use crate::nnet::{Layer, LayerSpec, Network, Preprocess};
use crate::sampler::{build_pools, compose_batch, derive_seed, BatchSpec, Patch, PatchConfig, PoolConfig};
use crate::tensor::Shape;

/// Probabilities are clamped to at least this before the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLayer {
    pub spec: LayerSpec,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Training copy of a [`Network`] with `f64` parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainableNet {
    pub input_channels: usize,
    pub preprocess: Preprocess,
    pub layers: Vec<TrainLayer>,
    /// Input side the net is trained at.
    pub window: usize,
}

/// Per-layer weight and bias gradients; empty for parameter-free layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Gradients {
    pub fn zeros_like(net: &TrainableNet) -> Self {
        Gradients { layers: net.layers.iter().map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()])).collect() }
    }

    fn add(&mut self, other: &Gradients) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            w.iter_mut().zip(ow).for_each(|(a, b)| *a += b);
            b.iter_mut().zip(ob).for_each(|(a, b)| *a += b);
        }
    }

    fn scale(&mut self, s: f64) {
        for (w, b) in &mut self.layers {
            w.iter_mut().chain(b.iter_mut()).for_each(|v| *v *= s);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.layers.iter().flat_map(|(w, b)| w.iter().chain(b)).fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Activations kept by the forward pass for back-propagation.
struct Trace {
    /// `inputs[i]` enters layer `i`; the last entry is the network output.
    inputs: Vec<Vec<f64>>,
    shapes: Vec<Shape>,
    argmax: Vec<Vec<usize>>,
    lrn_denom: Vec<Vec<f64>>,
}

impl TrainableNet {
    pub fn from_network(net: &Network) -> Result<Self> {
        let window = net.geometry()?.window;
        let out = net.propagate(Shape::new(net.input_channels, window, window))?;
        if out.plane() != 1 {
            return Err(Error::config(format!("training needs a 1x1 output at the window, got {out}")));
        }
        if net.layers[..net.layers.len() - 1].iter().any(|l| matches!(l.spec, LayerSpec::Softmax)) {
            return Err(Error::config("softmax is only supported as the final layer when training"));
        }
        let layers = net
            .layers
            .iter()
            .map(|l| {
                let (weights, bias) = match &l.params {
                    Some(p) => {
                        (p.weights.iter().map(|&v| v as f64).collect(), p.bias.iter().map(|&v| v as f64).collect())
                    }
                    None => (Vec::new(), Vec::new()),
                };
                TrainLayer { spec: l.spec.clone(), weights, bias }
            })
            .collect();
        Ok(TrainableNet { input_channels: net.input_channels, preprocess: net.preprocess.clone(), layers, window })
    }

    /// Rounds parameters to `f32`.
    pub fn to_network(&self) -> Result<Network> {
        let layers = self
            .layers
            .iter()
            .map(|l| match l.spec.param_counts() {
                Some(_) => Layer::with_params(
                    l.spec.clone(),
                    l.weights.iter().map(|&v| v as f32).collect(),
                    l.bias.iter().map(|&v| v as f32).collect(),
                ),
                None => Layer::new(l.spec.clone()),
            })
            .collect();
        Network::new(self.input_channels, self.preprocess.clone(), layers)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn input_vector(&self, p: &Patch) -> Result<Vec<f64>> {
        let s = p.tensor.shape();
        if s != Shape::new(self.input_channels, self.window, self.window) {
            return Err(Error::InvalidArgument(format!(
                "patch is {s}, network trains on {}x{w}x{w}",
                self.input_channels,
                w = self.window
            )));
        }
        let plane = s.plane();
        Ok(p.tensor
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| (v as f64 - self.preprocess.mean[i / plane] as f64) * self.preprocess.scale as f64)
            .collect())
    }

    fn forward_trace(&self, x: Vec<f64>) -> Trace {
        let mut shape = Shape::new(self.input_channels, self.window, self.window);
        let mut t = Trace {
            inputs: vec![x],
            shapes: vec![shape],
            argmax: vec![Vec::new(); self.layers.len()],
            lrn_denom: vec![Vec::new(); self.layers.len()],
        };
        for (i, layer) in self.layers.iter().enumerate() {
            let out = layer.spec.output_shape(shape).expect("validated at construction");
            let x = &t.inputs[i];
            let y = match &layer.spec {
                LayerSpec::Convolution(c) => kernels::conv2d(x, shape, &layer.weights, &layer.bias, c, out),
                LayerSpec::MaxPool(p) => kernels::maxpool(x, shape, p, out, Some(&mut t.argmax[i])),
                LayerSpec::Relu => kernels::relu(x),
                LayerSpec::FullyConnected(_) => kernels::fully_connected(x, &layer.weights, &layer.bias),
                LayerSpec::LocalResponseNorm(p) => {
                    let (y, d) = kernels::lrn(x, shape, p);
                    t.lrn_denom[i] = d;
                    y
                }
                LayerSpec::Softmax => kernels::softmax_channels(x, shape),
            };
            t.inputs.push(y);
            t.shapes.push(out);
            shape = out;
        }
        t
    }

    /// Class probabilities for one window-sized patch.
    pub fn probabilities(&self, p: &Patch) -> Result<Vec<f64>> {
        let x = self.input_vector(p)?;
        Ok(self.forward_trace(x).inputs.pop().expect("output"))
    }

    fn example_gradients(&self, p: &Patch) -> Result<(f64, Gradients)> {
        let x = self.input_vector(p)?;
        let t = self.forward_trace(x);
        let probs = t.inputs.last().expect("output");
        let class = p.label.class();
        if class >= probs.len() {
            return Err(Error::config(format!("label {class} outside {} classes", probs.len())));
        }
        let loss = -probs[class].max(PROB_FLOOR).ln();
        let mut grads = Gradients::zeros_like(self);
        // d(-ln p_y)/dz = p - onehot(y) through the final softmax
        let mut dy: Vec<f64> = probs.clone();
        dy[class] -= 1.0;
        let last = self.layers.len() - 1;
        for i in (0..last).rev() {
            dy = self.layer_backward(i, &t, &dy, &mut grads, i > 0);
        }
        Ok((loss, grads))
    }

    /// Back-propagates `dy` (gradient at layer `i`'s output) through layer
    /// `i`, accumulating parameter gradients; returns the input gradient.
    fn layer_backward(&self, i: usize, t: &Trace, dy: &[f64], grads: &mut Gradients, need_dx: bool) -> Vec<f64> {
        let layer = &self.layers[i];
        let x = &t.inputs[i];
        let (shape, out) = (t.shapes[i], t.shapes[i + 1]);
        let mut dx = vec![0.0; x.len()];
        match &layer.spec {
            LayerSpec::Convolution(c) => {
                let (gw, gb) = &mut grads.layers[i];
                conv_backward(x, shape, &layer.weights, c, out, dy, gw, gb, need_dx.then_some(&mut dx[..]));
            }
            LayerSpec::MaxPool(_) => {
                for (&src, &g) in t.argmax[i].iter().zip(dy) {
                    dx[src] += g;
                }
            }
            LayerSpec::Relu => {
                for ((d, &xv), &g) in dx.iter_mut().zip(x).zip(dy) {
                    if xv > 0.0 {
                        *d = g;
                    }
                }
            }
            LayerSpec::FullyConnected(_) => {
                let n = x.len();
                let (gw, gb) = &mut grads.layers[i];
                for (o, &g) in dy.iter().enumerate() {
                    gb[o] += g;
                    let row = &layer.weights[o * n..(o + 1) * n];
                    for j in 0..n {
                        gw[o * n + j] += g * x[j];
                        dx[j] += g * row[j];
                    }
                }
            }
            LayerSpec::LocalResponseNorm(p) => {
                let n = p.local_size;
                let plane = shape.plane();
                let (alpha_n, beta) = (p.alpha as f64 / n as f64, p.beta as f64);
                let d = &t.lrn_denom[i];
                for c in 0..shape.channels {
                    let (lo, hi) = lrn_window(c, shape.channels, n);
                    for s in 0..plane {
                        let idx = c * plane + s;
                        dx[idx] += dy[idx] * d[idx].powf(-beta);
                        let common = -2.0 * alpha_n * beta * dy[idx] * x[idx] * d[idx].powf(-beta - 1.0);
                        for cc in lo..hi {
                            let j = cc * plane + s;
                            dx[j] += common * x[j];
                        }
                    }
                }
            }
            LayerSpec::Softmax => unreachable!("softmax is final and handled by the loss"),
        }
        dx
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f64],
    shape: Shape,
    weights: &[f64],
    spec: &crate::nnet::ConvSpec,
    out: Shape,
    dy: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
    mut dx: Option<&mut [f64]>,
) {
    let (h, w) = (shape.height, shape.width);
    let (oh, ow) = (out.height, out.width);
    let (k, s, p) = (spec.kernel, spec.stride, spec.padding);
    let ic = shape.channels;
    for o in 0..out.channels {
        let dyo = &dy[o * oh * ow..(o + 1) * oh * ow];
        gb[o] += dyo.iter().sum::<f64>();
        for i in 0..ic {
            let plane = &x[i * h * w..(i + 1) * h * w];
            let f0 = (o * ic + i) * k * k;
            for ky in 0..k {
                let (y_lo, y_hi) = kernels::valid_range(oh, h, s, ky, p);
                for kx in 0..k {
                    let (x_lo, x_hi) = kernels::valid_range(ow, w, s, kx, p);
                    let wv = weights[f0 + ky * k + kx];
                    let mut acc = 0.0;
                    for oy in y_lo..y_hi {
                        let iy = oy * s + ky - p;
                        let drow = &dyo[oy * ow..(oy + 1) * ow];
                        let xrow = &plane[iy * w..(iy + 1) * w];
                        for ox in x_lo..x_hi {
                            acc += drow[ox] * xrow[ox * s + kx - p];
                        }
                        if let Some(dx) = dx.as_deref_mut() {
                            let dxrow = &mut dx[i * h * w + iy * w..i * h * w + (iy + 1) * w];
                            for ox in x_lo..x_hi {
                                dxrow[ox * s + kx - p] += wv * drow[ox];
                            }
                        }
                    }
                    gw[f0 + ky * k + kx] += acc;
                }
            }
        }
    }
}

fn check_batch(batch: &[Patch]) -> Result<()> {
    if batch.is_empty() {
        Err(Error::InvalidArgument("batch is empty".into()))
    } else {
        Ok(())
    }
}

/// Mean negative log-probability of the true labels.
pub fn batch_risk(net: &TrainableNet, batch: &[Patch]) -> Result<f64> {
    check_batch(batch)?;
    let mut total = 0.0;
    for p in batch {
        let probs = net.probabilities(p)?;
        total -= probs[p.label.class()].max(PROB_FLOOR).ln();
    }
    Ok(total / batch.len() as f64)
}

/// Risk and its exact gradient. Examples are summed in batch order.
pub fn risk_and_gradients(net: &TrainableNet, batch: &[Patch]) -> Result<(f64, Gradients)> {
    check_batch(batch)?;
    let mut grads = Gradients::zeros_like(net);
    let mut risk = 0.0;
    for p in batch {
        let (l, g) = net.example_gradients(p)?;
        risk += l;
        grads.add(&g);
    }
    let inv = 1.0 / batch.len() as f64;
    grads.scale(inv);
    Ok((risk * inv, grads))
}

pub fn backward(net: &TrainableNet, batch: &[Patch]) -> Result<Gradients> {
    risk_and_gradients(net, batch).map(|(_, g)| g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub iterations: usize,
    pub batch: BatchSpec,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            iterations: 2000,
            batch: BatchSpec::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("iterations must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::InvalidArgument("momentum must be in [0, 1) and weight decay >= 0".into()));
        }
        self.batch.positives().map(|_| ())
    }
}

/// Momentum state, one velocity per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    velocity: Gradients,
}

impl Sgd {
    pub fn new(net: &TrainableNet) -> Self {
        Sgd { velocity: Gradients::zeros_like(net) }
    }

    /// `v <- momentum * v - lr * (g + decay * w)`, then `w <- w + v`.
    pub fn step(
        &mut self,
        net: &mut TrainableNet,
        grads: &Gradients,
        lr: f64,
        momentum: f64,
        decay: f64,
    ) -> Result<()> {
        if grads.layers.len() != net.layers.len() {
            return Err(Error::InvalidArgument("gradients do not match the network".into()));
        }
        for ((layer, (gw, gb)), (vw, vb)) in net.layers.iter_mut().zip(&grads.layers).zip(&mut self.velocity.layers) {
            if gw.len() != layer.weights.len() || gb.len() != layer.bias.len() {
                return Err(Error::InvalidArgument("gradient shapes do not match the network".into()));
            }
            for (w, (g, v)) in layer.weights.iter_mut().zip(gw.iter().zip(vw.iter_mut())) {
                *v = momentum * *v - lr * (g + decay * *w);
                *w += *v;
            }
            for (w, (g, v)) in layer.bias.iter_mut().zip(gb.iter().zip(vb.iter_mut())) {
                *v = momentum * *v - lr * (g + decay * *w);
                *w += *v;
            }
        }
        Ok(())
    }
}

pub fn sgd_step(net: &mut TrainableNet, grads: &Gradients, sgd: &mut Sgd, cfg: &TrainConfig) -> Result<()> {
    sgd.step(net, grads, cfg.learning_rate, cfg.momentum, cfg.weight_decay)
}

/// Location of one scalar parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamRef {
    pub layer: usize,
    pub bias: bool,
    pub index: usize,
}

fn param_mut(net: &mut TrainableNet, r: ParamRef) -> &mut f64 {
    let l = &mut net.layers[r.layer];
    if r.bias {
        &mut l.bias[r.index]
    } else {
        &mut l.weights[r.index]
    }
}

/// ReLU sign patterns and max-pool winners over a batch: the piecewise
/// region of the risk a parameter setting lies in.
fn activation_pattern(net: &TrainableNet, batch: &[Patch]) -> Result<Vec<usize>> {
    let mut sig = Vec::new();
    for p in batch {
        let t = net.forward_trace(net.input_vector(p)?);
        for (i, l) in net.layers.iter().enumerate() {
            match l.spec {
                LayerSpec::Relu => sig.extend(t.inputs[i].iter().map(|&v| (v > 0.0) as usize)),
                LayerSpec::MaxPool(_) => sig.extend_from_slice(&t.argmax[i]),
                _ => {}
            }
        }
    }
    Ok(sig)
}

/// Per-parameter outcome of a gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckedParam {
    pub param: ParamRef,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub checked: Vec<CheckedParam>,
    /// Candidates dropped because `+-epsilon` crossed a ReLU or pooling kink.
    pub skipped: usize,
}

impl GradientCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.checked.iter().map(|c| c.rel_error).fold(0.0, f64::max)
    }
}

/// Candidate draws allowed per accepted parameter.
pub const CHECK_ATTEMPTS: usize = 100;

/// Compares analytic gradients with central differences of [`batch_risk`]
/// on up to `per_layer` weights and one bias per parameterised layer, drawn
/// with `seed`. A candidate whose `+-epsilon` perturbation changes any ReLU
/// sign or pooling winner is redrawn, since the risk is not differentiable
/// across that step.
pub fn check_gradients(
    net: &TrainableNet,
    batch: &[Patch],
    epsilon: f64,
    per_layer: usize,
    seed: u64,
) -> Result<GradientCheck> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!("epsilon must be > 0, got {epsilon}")));
    }
    let grads = backward(net, batch)?;
    let base = activation_pattern(net, batch)?;
    let mut probe = net.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradientCheck { checked: Vec::new(), skipped: 0 };
    for (layer, l) in net.layers.iter().enumerate() {
        let wanted =
            [(false, per_layer.min(l.weights.len()), l.weights.len()), (true, 1.min(l.bias.len()), l.bias.len())];
        for (bias, count, len) in wanted {
            let mut accepted = 0;
            let mut attempts = 0;
            while accepted < count {
                if attempts == count * CHECK_ATTEMPTS {
                    return Err(Error::Numeric(format!(
                        "no kink-free {} found in layer {layer} after {attempts} draws",
                        if bias { "bias" } else { "weight" }
                    )));
                }
                attempts += 1;
                let r = ParamRef { layer, bias, index: rng.gen_range(0..len) };
                let orig = *param_mut(&mut probe, r);
                *param_mut(&mut probe, r) = orig + epsilon;
                let plus_pattern = activation_pattern(&probe, batch)?;
                let plus = batch_risk(&probe, batch)?;
                *param_mut(&mut probe, r) = orig - epsilon;
                let minus_pattern = activation_pattern(&probe, batch)?;
                let minus = batch_risk(&probe, batch)?;
                *param_mut(&mut probe, r) = orig;
                if plus_pattern != base || minus_pattern != base {
                    report.skipped += 1;
                    continue;
                }
                let (gw, gb) = &grads.layers[layer];
                let analytic = if bias { gb[r.index] } else { gw[r.index] };
                let numeric = (plus - minus) / (2.0 * epsilon);
                let rel_error = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
                report.checked.push(CheckedParam { param: r, analytic, numeric, rel_error });
                accepted += 1;
            }
        }
    }
    Ok(report)
}

/// Largest relative error of [`check_gradients`].
pub fn gradient_check(net: &TrainableNet, batch: &[Patch], epsilon: f64, per_layer: usize, seed: u64) -> Result<f64> {
    check_gradients(net, batch, epsilon, per_layer, seed).map(|r| r.max_rel_error())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub net: TrainableNet,
    /// Batch risk before each update.
    pub risk: Vec<f64>,
}

impl TrainOutcome {
    pub fn risk_csv(&self) -> String {
        let mut s = String::from("iteration,risk\n");
        for (i, r) in self.risk.iter().enumerate() {
            let _ = writeln!(s, "{i},{r}");
        }
        s
    }
}

/// Iteration `t` trains on `compose_batch(.., derive_seed(seed, t))`.
pub fn finetune(
    mut net: TrainableNet,
    pos: &[Patch],
    neg: &[Patch],
    cfg: &TrainConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut sgd = Sgd::new(&net);
    let mut risk = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let batch = compose_batch(pos, neg, &cfg.batch, derive_seed(cfg.seed, it as u64))?;
        let (r, g) = risk_and_gradients(&net, &batch)?;
        if !r.is_finite() {
            return Err(Error::Numeric(format!("risk diverged at iteration {it}")));
        }
        sgd_step(&mut net, &g, &mut sgd, cfg)?;
        risk.push(r);
        progress(it, r);
    }
    Ok(TrainOutcome { net, risk })
}

/// Samples pools from a labelled corpus and fine-tunes `init` on them.
/// Pools use `seed`; the training loop uses `cfg.seed`.
pub fn train_on_corpus(
    init: &Network,
    corpus: &[(String, crate::image::Image, Vec<crate::bbox::BBox>)],
    pools: &PoolConfig,
    cfg: &TrainConfig,
    seed: u64,
    progress: impl FnMut(usize, f64),
) -> Result<(Network, TrainOutcome)> {
    let net = TrainableNet::from_network(init)?;
    let patch = PatchConfig::new(net.window);
    let corpus: Vec<_> = corpus
        .iter()
        .map(|(id, img, gts)| Ok((id.clone(), img.with_channels(net.input_channels)?, gts.clone())))
        .collect::<Result<_>>()?;
    let (pos, neg) = build_pools(&corpus, pools, &patch, seed)?;
    let outcome = finetune(net, &pos, &neg, cfg, progress)?;
    Ok((outcome.net.to_network()?, outcome))
}
