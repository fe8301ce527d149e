//! Conditional ε-prediction network ε(x_t, t, c) with exact reverse-mode
//! gradients.
//!
//! Architecture: the input vector is [x_t (2) | sinusoidal features of t/T |
//! learned class embedding], followed by `hidden_layers` SiLU layers of
//! `hidden_width` units and a linear 2-unit output. All arithmetic is f64;
//! the preference losses subtract squared norms and need the headroom.
//!
//! Gradients are computed by recording one [`ForwardTrace`] per network
//! evaluation and feeding [`backprop`] the upstream sensitivity dL/dε for
//! each recorded call. Reference-model evaluations simply never record a
//! trace, so no gradient can flow into frozen parameters.

use crate::error::{Error, Result};
use crate::point::Point2;
use crate::rng::stream_rng;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const PARAMS_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub num_classes: usize,
    pub time_embed_dim: usize,
    pub class_embed_dim: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            hidden_width: 128,
            hidden_layers: 2,
            num_classes: 6,
            time_embed_dim: 16,
            class_embed_dim: 8,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_width == 0
            || self.hidden_layers == 0
            || self.num_classes == 0
            || self.time_embed_dim == 0
            || self.class_embed_dim == 0
        {
            return Err(Error::InvalidConfig(
                "all network dimensions must be positive".into(),
            ));
        }
        if !self.time_embed_dim.is_multiple_of(2) {
            return Err(Error::InvalidConfig(
                "time_embed_dim must be even (paired sin/cos features)".into(),
            ));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        2 + self.time_embed_dim + self.class_embed_dim
    }

    /// Layer dimensions input → hidden… → 2.
    fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(std::iter::repeat_n(self.hidden_width, self.hidden_layers));
        d.push(2);
        d
    }
}

/// One dense layer; `weight` is out_dim × in_dim, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(in_dim: usize, out_dim: usize) -> Layer {
        Layer {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// y = Wx + b
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = Vec::with_capacity(self.out_dim);
        for r in 0..self.out_dim {
            let row = &self.weight[r * self.in_dim..(r + 1) * self.in_dim];
            y.push(dot(row, x) + self.bias[r]);
        }
        y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub config: NetConfig,
    pub layers: Vec<Layer>,
    /// num_classes × class_embed_dim, row-major.
    pub class_embed: Vec<f64>,
}

/// Same shape-tree as [`NetworkParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
    pub class_embed: Vec<f64>,
}

/// Recorded forward evaluation: everything backprop needs.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    input: Vec<f64>,
    class_id: usize,
    /// Pre-activations of each hidden layer.
    pre: Vec<Vec<f64>>,
    /// SiLU outputs of each hidden layer.
    act: Vec<Vec<f64>>,
}

/// Initialize parameters; weights are fan-in scaled uniform
/// U(−√(3/fan_in), √(3/fan_in)), biases zero, class embeddings standard
/// normal. Deterministic given the seed.
pub fn init_network(config: &NetConfig, rng_seed: u64) -> Result<NetworkParams> {
    config.validate()?;
    let mut rng = stream_rng(rng_seed, 0);
    let dims = config.dims();
    let mut layers = Vec::with_capacity(dims.len() - 1);
    for w in dims.windows(2) {
        let (in_dim, out_dim) = (w[0], w[1]);
        let bound = (3.0 / in_dim as f64).sqrt();
        let mut layer = Layer::zeros(in_dim, out_dim);
        for v in layer.weight.iter_mut() {
            *v = rng.random_range(-bound..bound);
        }
        layers.push(layer);
    }
    let class_embed = (0..config.num_classes * config.class_embed_dim)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    Ok(NetworkParams {
        config: *config,
        layers,
        class_embed,
    })
}

impl NetworkParams {
    pub fn zeros(config: &NetConfig) -> Result<NetworkParams> {
        config.validate()?;
        let dims = config.dims();
        Ok(NetworkParams {
            config: *config,
            layers: dims.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
            class_embed: vec![0.0; config.num_classes * config.class_embed_dim],
        })
    }

    /// Number of weight/bias entries, embedding table excluded.
    pub fn layer_param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn param_count(&self) -> usize {
        self.layer_param_count() + self.class_embed.len()
    }

    /// All parameter slices in a fixed order (layer weights, layer bias, …,
    /// class embedding). [`Gradients::slices`] uses the same order.
    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(self.layers.len() * 2 + 1);
        for l in self.layers.iter_mut() {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.push(&mut self.class_embed);
        out
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(self.layers.len() * 2 + 1);
        for l in self.layers.iter() {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out.push(&self.class_embed);
        out
    }

    pub fn all_finite(&self) -> bool {
        self.slices()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }
}

impl Gradients {
    pub fn zeros(config: &NetConfig) -> Gradients {
        let dims = config.dims();
        Gradients {
            layers: dims.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
            class_embed: vec![0.0; config.num_classes * config.class_embed_dim],
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(self.layers.len() * 2 + 1);
        for l in self.layers.iter() {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out.push(&self.class_embed);
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(self.layers.len() * 2 + 1);
        for l in self.layers.iter_mut() {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.push(&mut self.class_embed);
        out
    }

    /// self += other (used to sum shard gradients).
    pub fn add_assign(&mut self, other: &Gradients) -> Result<()> {
        let mut a = self.slices_mut();
        let b = other.slices();
        if a.len() != b.len() || a.iter().zip(&b).any(|(x, y)| x.len() != y.len()) {
            return Err(Error::ShapeMismatch("gradient trees differ".into()));
        }
        for (dst, src) in a.iter_mut().zip(&b) {
            for (d, s) in dst.iter_mut().zip(src.iter()) {
                *d += s;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for slice in self.slices_mut() {
            for v in slice.iter_mut() {
                *v *= s;
            }
        }
    }

    pub fn norm(&self) -> f64 {
        self.slices()
            .iter()
            .map(|s| s.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

/// Dot product with four accumulators; fixed association order keeps results
/// deterministic while letting the CPU pipeline the adds.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..chunks {
        let j = 4 * i;
        s0 += a[j] * b[j];
        s1 += a[j + 1] * b[j + 1];
        s2 += a[j + 2] * b[j + 2];
        s3 += a[j + 3] * b[j + 3];
    }
    let mut s = (s0 + s1) + (s2 + s3);
    for j in 4 * chunks..n {
        s += a[j] * b[j];
    }
    s
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_deriv(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Sinusoidal features of τ = t/T with geometrically spaced frequencies
/// from 1 to 1000: out[2i] = sin(ω_i τ), out[2i+1] = cos(ω_i τ).
fn time_embedding(t: usize, num_steps: usize, dim: usize, out: &mut Vec<f64>) {
    let tau = t as f64 / num_steps as f64;
    let half = dim / 2;
    for i in 0..half {
        let exponent = if half > 1 {
            i as f64 / (half - 1) as f64
        } else {
            0.0
        };
        let omega = 1000f64.powf(exponent);
        out.push((omega * tau).sin());
        out.push((omega * tau).cos());
    }
}

fn build_input(
    params: &NetworkParams,
    x_t: Point2,
    t: usize,
    num_steps: usize,
    class_id: usize,
) -> Result<Vec<f64>> {
    let cfg = &params.config;
    if class_id >= cfg.num_classes {
        return Err(Error::ClassOutOfRange {
            class_id,
            num_classes: cfg.num_classes,
        });
    }
    if t == 0 || t > num_steps {
        return Err(Error::StepOutOfRange { t, num_steps });
    }
    let mut input = Vec::with_capacity(cfg.input_dim());
    input.push(x_t.x);
    input.push(x_t.y);
    time_embedding(t, num_steps, cfg.time_embed_dim, &mut input);
    let e = cfg.class_embed_dim;
    input.extend_from_slice(&params.class_embed[class_id * e..(class_id + 1) * e]);
    Ok(input)
}

/// ε(x_t, t, c). Pure in all inputs; shares parameters read-only across
/// threads.
pub fn predict_eps(
    params: &NetworkParams,
    x_t: Point2,
    t: usize,
    num_steps: usize,
    class_id: usize,
) -> Result<Point2> {
    let input = build_input(params, x_t, t, num_steps, class_id)?;
    let mut h = input;
    let last = params.layers.len() - 1;
    for layer in &params.layers[..last] {
        let mut pre = layer.apply(&h);
        for v in pre.iter_mut() {
            *v = silu(*v);
        }
        h = pre;
    }
    let out = params.layers[last].apply(&h);
    Ok(Point2::new(out[0], out[1]))
}

/// ε(x_t, t, c) plus the recorded activations needed by [`backprop`].
pub fn predict_eps_traced(
    params: &NetworkParams,
    x_t: Point2,
    t: usize,
    num_steps: usize,
    class_id: usize,
) -> Result<(Point2, ForwardTrace)> {
    let input = build_input(params, x_t, t, num_steps, class_id)?;
    let last = params.layers.len() - 1;
    let mut pre = Vec::with_capacity(last);
    let mut act = Vec::with_capacity(last);
    let mut h = input.clone();
    for layer in &params.layers[..last] {
        let p = layer.apply(&h);
        let a: Vec<f64> = p.iter().map(|&v| silu(v)).collect();
        pre.push(p);
        h = a.clone();
        act.push(a);
    }
    let out = params.layers[last].apply(&h);
    Ok((
        Point2::new(out[0], out[1]),
        ForwardTrace {
            input,
            class_id,
            pre,
            act,
        },
    ))
}

/// Exact reverse-mode gradient of a scalar loss with respect to every
/// parameter. Each contribution pairs a recorded forward evaluation with the
/// upstream sensitivity dL/dε of that evaluation's output; the result is the
/// sum over contributions.
pub fn backprop(
    params: &NetworkParams,
    contributions: &[(ForwardTrace, Point2)],
) -> Result<Gradients> {
    let cfg = &params.config;
    let mut grads = Gradients::zeros(cfg);
    let n_hidden = params.layers.len() - 1;
    for (trace, upstream) in contributions {
        if trace.input.len() != cfg.input_dim() || trace.pre.len() != n_hidden {
            return Err(Error::ShapeMismatch(
                "trace does not match network config".into(),
            ));
        }
        let mut d = vec![upstream.x, upstream.y];
        // Walk layers output → input. The incoming `d` is dL/d(layer output);
        // hidden layers additionally pass through the SiLU derivative.
        for li in (0..params.layers.len()).rev() {
            let layer = &params.layers[li];
            let g = &mut grads.layers[li];
            if li < n_hidden {
                let pre = &trace.pre[li];
                for (dv, p) in d.iter_mut().zip(pre.iter()) {
                    *dv *= silu_deriv(*p);
                }
            }
            let below: &[f64] = if li == 0 {
                &trace.input
            } else {
                &trace.act[li - 1]
            };
            for (r, &dr) in d.iter().enumerate() {
                g.bias[r] += dr;
                let grow = &mut g.weight[r * layer.in_dim..(r + 1) * layer.in_dim];
                for (gw, x) in grow.iter_mut().zip(below.iter()) {
                    *gw += dr * x;
                }
            }
            if li == 0 {
                // Gradient w.r.t. the input: only the class-embedding slice
                // is a parameter.
                let e = cfg.class_embed_dim;
                let offset = 2 + cfg.time_embed_dim;
                let erow =
                    &mut grads.class_embed[trace.class_id * e..(trace.class_id + 1) * e];
                for (k, ev) in erow.iter_mut().enumerate() {
                    let j = offset + k;
                    let mut s = 0.0;
                    for (r, &dr) in d.iter().enumerate() {
                        s += layer.weight[r * layer.in_dim + j] * dr;
                    }
                    *ev += s;
                }
            } else {
                let mut d_prev = vec![0.0; layer.in_dim];
                for (r, &dr) in d.iter().enumerate() {
                    let row = &layer.weight[r * layer.in_dim..(r + 1) * layer.in_dim];
                    for (dp, w) in d_prev.iter_mut().zip(row.iter()) {
                        *dp += w * dr;
                    }
                }
                d = d_prev;
            }
        }
    }
    Ok(grads)
}

/// Adapter implementing the sampler's predictor interface on trained
/// parameters. Callers validate the class id; step indices come from the
/// sampler and are in range by construction.
pub struct NetPredictor<'a> {
    pub params: &'a NetworkParams,
    pub num_steps: usize,
}

impl crate::diffusion::EpsPredictor for NetPredictor<'_> {
    fn predict(&self, x_t: Point2, t: usize, class_id: usize) -> Point2 {
        predict_eps(self.params, x_t, t, self.num_steps, class_id)
            .expect("step and class validated by caller")
    }
}

// ---------------------------------------------------------------------------
// Portable JSON representation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorData {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// On-disk form: named shape-checked tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortableParams {
    pub config: NetConfig,
    tensors: BTreeMap<String, TensorData>,
    pub format_version: u32,
}

impl From<NetworkParams> for PortableParams {
    fn from(p: NetworkParams) -> Self {
        let mut tensors = BTreeMap::new();
        for (i, l) in p.layers.iter().enumerate() {
            tensors.insert(
                format!("layers.{i}.weight"),
                TensorData {
                    shape: vec![l.out_dim, l.in_dim],
                    data: l.weight.clone(),
                },
            );
            tensors.insert(
                format!("layers.{i}.bias"),
                TensorData {
                    shape: vec![l.out_dim],
                    data: l.bias.clone(),
                },
            );
        }
        tensors.insert(
            "class_embed".to_string(),
            TensorData {
                shape: vec![p.config.num_classes, p.config.class_embed_dim],
                data: p.class_embed.clone(),
            },
        );
        PortableParams {
            config: p.config,
            tensors,
            format_version: PARAMS_FORMAT_VERSION,
        }
    }
}

impl TryFrom<PortableParams> for NetworkParams {
    type Error = Error;

    fn try_from(file: PortableParams) -> Result<NetworkParams> {
        if file.format_version != PARAMS_FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: file.format_version,
                expected: PARAMS_FORMAT_VERSION,
            });
        }
        let cfg = file.config;
        cfg.validate()?;
        let mut params = NetworkParams::zeros(&cfg)?;
        let take = |name: &str, shape: &[usize]| -> Result<Vec<f64>> {
            let t = file
                .tensors
                .get(name)
                .ok_or_else(|| Error::ShapeMismatch(format!("missing tensor {name}")))?;
            if t.shape != shape || t.data.len() != shape.iter().product::<usize>() {
                return Err(Error::ShapeMismatch(format!(
                    "tensor {name}: shape {:?} does not match config {:?}",
                    t.shape, shape
                )));
            }
            if !t.data.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("tensor {name}")));
            }
            Ok(t.data.clone())
        };
        for (i, l) in params.layers.iter_mut().enumerate() {
            l.weight = take(&format!("layers.{i}.weight"), &[l.out_dim, l.in_dim])?;
            l.bias = take(&format!("layers.{i}.bias"), &[l.out_dim])?;
        }
        params.class_embed = take("class_embed", &[cfg.num_classes, cfg.class_embed_dim])?;
        Ok(params)
    }
}
