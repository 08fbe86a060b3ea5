//! A small convolutional regression network with hand-written
//! backpropagation, trained by RMSprop on mean absolute error.
//!
//! Architecture: one same-padded convolution with ReLU, flatten, a stack of
//! ReLU dense layers, and a sigmoid output layer. All parameters live in one
//! flat vector.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Purpose, Stream};

pub const WEIGHTS_FORMAT: &str = "scalemix-network";
pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub filters: usize,
    pub kernel: usize,
    pub dense: Vec<usize>,
    pub outputs: usize,
}

impl Architecture {
    /// Default layout for `channels × height × width` inputs and four outputs.
    pub fn standard(channels: usize, height: usize, width: usize) -> Self {
        Architecture {
            channels,
            height,
            width,
            filters: 16,
            kernel: 3,
            dense: vec![64, 32],
            outputs: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.height == 0 || self.width == 0 || self.filters == 0 || self.outputs == 0 {
            return Err(Error::Config("network dimensions must be positive".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config(format!("kernel size must be odd, got {}", self.kernel)));
        }
        if self.dense.iter().any(|&w| w == 0) {
            return Err(Error::Config("dense layer widths must be positive".into()));
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    fn flat_len(&self) -> usize {
        self.filters * self.height * self.width
    }

    /// `(fan_in, fan_out)` of each dense layer including the output layer.
    fn dense_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::new();
        let mut fan_in = self.flat_len();
        for &w in &self.dense {
            shapes.push((fan_in, w));
            fan_in = w;
        }
        shapes.push((fan_in, self.outputs));
        shapes
    }

    pub fn conv_weights(&self) -> usize {
        self.filters * self.channels * self.kernel * self.kernel
    }

    pub fn n_params(&self) -> usize {
        self.conv_weights() + self.filters + self.dense_shapes().iter().map(|(i, o)| i * o + o).sum::<usize>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmsProp {
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
}

impl Default for RmsProp {
    fn default() -> Self {
        RmsProp { lr: 1e-3, rho: 0.9, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub optimizer: RmsProp,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            batch: 128,
            optimizer: RmsProp::default(),
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub arch: Architecture,
    pub params: Vec<f64>,
}

/// Offsets into the flat parameter vector.
#[derive(Debug, Clone)]
struct Offsets {
    conv_b: usize,
    dense: Vec<(usize, usize, usize, usize)>, // (w offset, b offset, fan_in, fan_out)
}

fn offsets(arch: &Architecture) -> Offsets {
    let conv_b = arch.conv_weights();
    let mut at = conv_b + arch.filters;
    let mut dense = Vec::new();
    for (i, o) in arch.dense_shapes() {
        dense.push((at, at + i * o, i, o));
        at += i * o + o;
    }
    Offsets { conv_b, dense }
}

/// Kept strictly inside `(0,1)` so unscaled estimates never touch the box edges.
const OUTPUT_EPS: f64 = 1e-12;

#[inline]
fn sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(OUTPUT_EPS, 1.0 - OUTPUT_EPS)
}

/// ReLU that lets NaN through so it surfaces in the loss.
#[inline]
fn relu(z: f64) -> f64 {
    if z > 0.0 || z.is_nan() {
        z
    } else {
        0.0
    }
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone, Default)]
struct Tape {
    conv: Vec<f64>,
    layers: Vec<Vec<f64>>,
}

impl Network {
    /// Uniform fan-in initialisation: `±sqrt(6/fan_in)` for ReLU layers,
    /// `±sqrt(3/fan_in)` for the output layer, zero biases.
    pub fn init(arch: Architecture, stream: Stream) -> Result<Self> {
        arch.validate()?;
        let mut rng = stream.purpose(Purpose::Weights).rng();
        let mut params = vec![0.0; arch.n_params()];
        let off = offsets(&arch);
        let conv_fan = (arch.channels * arch.kernel * arch.kernel) as f64;
        let a = (6.0 / conv_fan).sqrt();
        for w in &mut params[..arch.conv_weights()] {
            *w = rng.random_range(-a..a);
        }
        let last = off.dense.len() - 1;
        for (k, &(wo, _, fan_in, fan_out)) in off.dense.iter().enumerate() {
            let a = if k == last { (3.0 / fan_in as f64).sqrt() } else { (6.0 / fan_in as f64).sqrt() };
            for w in &mut params[wo..wo + fan_in * fan_out] {
                *w = rng.random_range(-a..a);
            }
        }
        log::info!("network initialised with {} parameters", params.len());
        Ok(Network { arch, params })
    }

    fn forward_tape(&self, x: &[f64], tape: &mut Tape) {
        let a = &self.arch;
        let p = &self.params;
        let off = offsets(a);
        let (h, w, k) = (a.height, a.width, a.kernel);
        let pad = (k / 2) as isize;
        tape.conv.clear();
        tape.conv.resize(a.flat_len(), 0.0);
        for f in 0..a.filters {
            let bias = p[off.conv_b + f];
            for i in 0..h {
                for j in 0..w {
                    let mut z = bias;
                    for c in 0..a.channels {
                        for di in 0..k {
                            let ii = i as isize + di as isize - pad;
                            if ii < 0 || ii >= h as isize {
                                continue;
                            }
                            for dj in 0..k {
                                let jj = j as isize + dj as isize - pad;
                                if jj < 0 || jj >= w as isize {
                                    continue;
                                }
                                let wi = ((f * a.channels + c) * k + di) * k + dj;
                                z += p[wi] * x[(c * h + ii as usize) * w + jj as usize];
                            }
                        }
                    }
                    tape.conv[(f * h + i) * w + j] = relu(z);
                }
            }
        }
        tape.layers.resize(off.dense.len(), Vec::new());
        let last = off.dense.len() - 1;
        for (l, &(wo, bo, fan_in, fan_out)) in off.dense.iter().enumerate() {
            let (before, after) = tape.layers.split_at_mut(l);
            let input: &[f64] = if l == 0 { &tape.conv } else { &before[l - 1] };
            let out = &mut after[0];
            out.clear();
            out.resize(fan_out, 0.0);
            for (o, v) in out.iter_mut().enumerate() {
                let row = &p[wo + o * fan_in..wo + (o + 1) * fan_in];
                let z = p[bo + o] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
                *v = if l == last { sigmoid(z) } else { relu(z) };
            }
        }
    }

    /// Outputs in `(0,1)` for one flattened `channels × height × width` input.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut tape = Tape::default();
        self.forward_tape(x, &mut tape);
        tape.layers.pop().unwrap_or_default()
    }

    /// Accumulates `scale · ∂(Σ|o - y|)/∂params` into `grad`; returns `Σ|o - y|`.
    fn backward(&self, x: &[f64], y: &[f64], scale: f64, tape: &mut Tape, grad: &mut [f64]) -> f64 {
        self.forward_tape(x, tape);
        let a = &self.arch;
        let p = &self.params;
        let off = offsets(a);
        let last = off.dense.len() - 1;
        let out = &tape.layers[last];
        let mut loss = 0.0;
        // Gradient with respect to the pre-activation of the current layer.
        let mut delta: Vec<f64> = out
            .iter()
            .zip(y)
            .map(|(&o, &t)| {
                loss += (o - t).abs();
                let s = if o > t {
                    1.0
                } else if o < t {
                    -1.0
                } else {
                    0.0
                };
                scale * s * o * (1.0 - o)
            })
            .collect();
        for l in (0..off.dense.len()).rev() {
            let (wo, bo, fan_in, fan_out) = off.dense[l];
            let input: &[f64] = if l == 0 { &tape.conv } else { &tape.layers[l - 1] };
            let mut d_in = vec![0.0; fan_in];
            for o in 0..fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                grad[bo + o] += d;
                let row = wo + o * fan_in;
                for (g, &v) in grad[row..row + fan_in].iter_mut().zip(input) {
                    *g += d * v;
                }
                for (di, &wv) in d_in.iter_mut().zip(&p[row..row + fan_in]) {
                    *di += d * wv;
                }
            }
            // Through the ReLU feeding this layer.
            for (di, &v) in d_in.iter_mut().zip(input) {
                if v <= 0.0 {
                    *di = 0.0;
                }
            }
            delta = d_in;
        }
        let (h, w, k) = (a.height, a.width, a.kernel);
        let pad = (k / 2) as isize;
        for f in 0..a.filters {
            for i in 0..h {
                for j in 0..w {
                    let d = delta[(f * h + i) * w + j];
                    if d == 0.0 {
                        continue;
                    }
                    grad[off.conv_b + f] += d;
                    for c in 0..a.channels {
                        for di in 0..k {
                            let ii = i as isize + di as isize - pad;
                            if ii < 0 || ii >= h as isize {
                                continue;
                            }
                            for dj in 0..k {
                                let jj = j as isize + dj as isize - pad;
                                if jj < 0 || jj >= w as isize {
                                    continue;
                                }
                                let wi = ((f * a.channels + c) * k + di) * k + dj;
                                grad[wi] += d * x[(c * h + ii as usize) * w + jj as usize];
                            }
                        }
                    }
                }
            }
        }
        loss
    }

    /// Mean absolute error over a batch (averaged over samples and outputs)
    /// and its gradient.
    pub fn loss_and_gradient(&self, inputs: &[&[f64]], targets: &[&[f64]]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        let mut tape = Tape::default();
        let scale = 1.0 / (inputs.len() * self.arch.outputs) as f64;
        let mut loss = 0.0;
        for (x, y) in inputs.iter().zip(targets) {
            loss += self.backward(x, y, scale, &mut tape, &mut grad);
        }
        (loss * scale, grad)
    }

    pub fn loss(&self, inputs: &[&[f64]], targets: &[&[f64]]) -> f64 {
        let n = (inputs.len() * self.arch.outputs) as f64;
        inputs
            .iter()
            .zip(targets)
            .map(|(x, y)| self.forward(x).iter().zip(*y).map(|(o, t)| (o - t).abs()).sum::<f64>())
            .sum::<f64>()
            / n
    }

    pub fn to_json(&self) -> Result<String> {
        let off = offsets(&self.arch);
        let a = &self.arch;
        let mut layers = vec![
            LayerWeights {
                name: "conv2d.kernel".into(),
                shape: vec![a.filters, a.channels, a.kernel, a.kernel],
                weights: self.params[..a.conv_weights()].to_vec(),
            },
            LayerWeights {
                name: "conv2d.bias".into(),
                shape: vec![a.filters],
                weights: self.params[off.conv_b..off.conv_b + a.filters].to_vec(),
            },
        ];
        for (l, &(wo, bo, i, o)) in off.dense.iter().enumerate() {
            layers.push(LayerWeights {
                name: format!("dense{l}.kernel"),
                shape: vec![o, i],
                weights: self.params[wo..wo + i * o].to_vec(),
            });
            layers.push(LayerWeights {
                name: format!("dense{l}.bias"),
                shape: vec![o],
                weights: self.params[bo..bo + o].to_vec(),
            });
        }
        let file = WeightsFile {
            format: WEIGHTS_FORMAT.into(),
            version: WEIGHTS_VERSION,
            architecture: self.arch.clone(),
            layers,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: WeightsFile = serde_json::from_str(text)?;
        if file.format != WEIGHTS_FORMAT || file.version != WEIGHTS_VERSION {
            return Err(Error::Config(format!(
                "unsupported weights file {} v{}",
                file.format, file.version
            )));
        }
        file.architecture.validate()?;
        let params: Vec<f64> = file.layers.into_iter().flat_map(|l| l.weights).collect();
        if params.len() != file.architecture.n_params() {
            return Err(Error::Shape(format!(
                "weights file holds {} parameters, architecture needs {}",
                params.len(),
                file.architecture.n_params()
            )));
        }
        Ok(Network {
            arch: file.architecture,
            params,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerWeights {
    name: String,
    shape: Vec<usize>,
    weights: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct WeightsFile {
    format: String,
    version: u32,
    architecture: Architecture,
    layers: Vec<LayerWeights>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub train_mae: Vec<f64>,
    pub val_mae: Vec<f64>,
    pub best_epoch: usize,
}

impl LossCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_mae,val_mae\n");
        for (e, (t, v)) in self.train_mae.iter().zip(&self.val_mae).enumerate() {
            s.push_str(&format!("{},{},{}\n", e + 1, t, v));
        }
        s
    }
}

/// Row-major samples: `inputs[i*d..(i+1)*d]`, `targets[i*o..(i+1)*o]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Samples {
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub input_len: usize,
    pub output_len: usize,
}

impl Samples {
    pub fn len(&self) -> usize {
        if self.input_len == 0 {
            0
        } else {
            self.inputs.len() / self.input_len
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_len..(i + 1) * self.input_len]
    }

    pub fn target(&self, i: usize) -> &[f64] {
        &self.targets[i * self.output_len..(i + 1) * self.output_len]
    }

    pub fn push(&mut self, input: &[f64], target: &[f64]) {
        self.inputs.extend_from_slice(input);
        self.targets.extend_from_slice(target);
    }
}

fn all_mae(net: &Network, s: &Samples) -> f64 {
    let xs: Vec<&[f64]> = (0..s.len()).map(|i| s.input(i)).collect();
    let ys: Vec<&[f64]> = (0..s.len()).map(|i| s.target(i)).collect();
    net.loss(&xs, &ys)
}

/// Trains with seeded shuffling and returns the weights of the epoch with
/// the lowest validation error.
pub fn train(net: Network, train: &Samples, val: &Samples, config: &TrainConfig) -> Result<(Network, LossCurve)> {
    if train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if config.batch == 0 || config.epochs == 0 {
        return Err(Error::Config("batch size and epochs must be positive".into()));
    }
    if train.input_len != net.arch.input_len() || train.output_len != net.arch.outputs {
        return Err(Error::Shape(format!(
            "samples are {}→{}, network expects {}→{}",
            train.input_len,
            train.output_len,
            net.arch.input_len(),
            net.arch.outputs
        )));
    }
    let opt = config.optimizer;
    let mut net = net;
    let mut sq = vec![0.0; net.params.len()];
    let mut order: Vec<usize> = (0..train.len()).collect();
    let root = Stream::root(config.seed).purpose(Purpose::Shuffle);
    let mut curve = LossCurve { train_mae: Vec::new(), val_mae: Vec::new(), best_epoch: 0 };
    let mut best = (f64::INFINITY, net.params.clone());
    let mut batch_index = 0usize;
    for epoch in 0..config.epochs {
        order.shuffle(&mut root.child(epoch as u64).rng());
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch) {
            let xs: Vec<&[f64]> = chunk.iter().map(|&i| train.input(i)).collect();
            let ys: Vec<&[f64]> = chunk.iter().map(|&i| train.target(i)).collect();
            let (loss, grad) = net.loss_and_gradient(&xs, &ys);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Training {
                    batch: batch_index,
                    message: format!("non-finite loss {loss} in epoch {}", epoch + 1),
                });
            }
            for ((w, s), g) in net.params.iter_mut().zip(sq.iter_mut()).zip(&grad) {
                *s = opt.rho * *s + (1.0 - opt.rho) * g * g;
                *w -= opt.lr * g / (s.sqrt() + opt.eps);
            }
            epoch_loss += loss * chunk.len() as f64;
            batch_index += 1;
        }
        let train_mae = epoch_loss / train.len() as f64;
        let val_mae = if val.is_empty() { train_mae } else { all_mae(&net, val) };
        log::debug!("epoch {}: train MAE {train_mae:.5}, validation MAE {val_mae:.5}", epoch + 1);
        curve.train_mae.push(train_mae);
        curve.val_mae.push(val_mae);
        if val_mae < best.0 {
            best = (val_mae, net.params.clone());
            curve.best_epoch = epoch + 1;
        }
    }
    net.params = best.1;
    Ok((net, curve))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_arch() -> Architecture {
        Architecture {
            channels: 3,
            height: 3,
            width: 3,
            filters: 2,
            kernel: 3,
            dense: vec![2],
            outputs: 4,
        }
    }

    #[test]
    fn toy_net_has_about_a_hundred_weights() {
        assert_eq!(toy_arch().n_params(), 56 + 38 + 12);
        // 3·16·9+16 + 1024·64+64 + 64·32+32 + 32·4+4
        assert_eq!(Architecture::standard(3, 8, 8).n_params(), 448 + 65_600 + 2080 + 132);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let arch = Architecture { dense: vec![3], ..toy_arch() };
        let net = Network::init(arch, Stream::root(11)).unwrap();
        let mut rng = Stream::root(12).rng();
        let xs: Vec<Vec<f64>> = (0..5).map(|_| (0..27).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let ys: Vec<Vec<f64>> = (0..5).map(|i| (0..4).map(|j| ((i + j) % 2) as f64).collect()).collect();
        let xr: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
        let yr: Vec<&[f64]> = ys.iter().map(|v| v.as_slice()).collect();
        let (_, g) = net.loss_and_gradient(&xr, &yr);
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for k in 0..net.params.len() {
            let mut p = net.clone();
            p.params[k] += h;
            let up = p.loss(&xr, &yr);
            p.params[k] -= 2.0 * h;
            let down = p.loss(&xr, &yr);
            let fd = (up - down) / (2.0 * h);
            let denom = g[k].abs().max(fd.abs()).max(1e-7);
            worst = worst.max((g[k] - fd).abs() / denom);
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn outputs_stay_in_unit_interval() {
        let net = Network::init(toy_arch(), Stream::root(1)).unwrap();
        for s in 0..50 {
            let x: Vec<f64> = (0..27).map(|i| ((i * 7 + s) as f64).sin() * 100.0).collect();
            assert!(net.forward(&x).iter().all(|&o| o > 0.0 && o < 1.0));
        }
    }

    #[test]
    fn constant_target_is_learned() {
        // Empty grids with one target: only the output biases carry signal.
        let arch = Architecture::standard(3, 8, 8);
        let mut s = Samples { input_len: 192, output_len: 4, ..Default::default() };
        for _ in 0..1024 {
            s.push(&[0.0; 192], &[0.3, 0.3, 0.3, 0.3]);
        }
        let net = Network::init(arch, Stream::root(3)).unwrap();
        let cfg = TrainConfig { epochs: 40, batch: 32, ..Default::default() };
        let (net, curve) = train(net, &s, &Samples::default(), &cfg).unwrap();
        assert!(all_mae(&net, &s) < 1e-3, "{:?}", &curve.train_mae[curve.train_mae.len() - 3..]);
    }

    #[test]
    fn training_is_deterministic_and_serializes() {
        let arch = toy_arch();
        let mut rng = Stream::root(4).rng();
        let mut s = Samples { input_len: 27, output_len: 4, ..Default::default() };
        for _ in 0..100 {
            let x: Vec<f64> = (0..27).map(|_| rng.random()).collect();
            let t = [x[0], x[1], x[2], x[3]];
            s.push(&x, &t);
        }
        let cfg = TrainConfig { epochs: 5, batch: 16, ..Default::default() };
        let run = || train(Network::init(arch.clone(), Stream::root(5)).unwrap(), &s, &s, &cfg).unwrap();
        let (a, ca) = run();
        let (b, cb) = run();
        assert_eq!(a, b);
        assert_eq!(ca, cb);
        let back = Network::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(back, a);
        assert!(ca.to_csv().lines().count() == 6);
    }

    #[test]
    fn nan_input_is_a_training_error() {
        let mut s = Samples { input_len: 27, output_len: 4, ..Default::default() };
        s.push(&[0.5; 27], &[0.5; 4]);
        let mut bad = vec![0.5; 27];
        bad[3] = f64::NAN;
        s.push(&bad, &[0.5; 4]);
        let cfg = TrainConfig { epochs: 1, batch: 1, ..Default::default() };
        let err = train(Network::init(toy_arch(), Stream::root(6)).unwrap(), &s, &Samples::default(), &cfg).unwrap_err();
        assert!(matches!(err, Error::Training { .. }), "{err}");
    }
}
