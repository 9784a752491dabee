//! Fully connected ReLU network with a masked squared-error loss, analytic
//! gradients and Adam updates.
//!
//! Parameters live in one flat buffer. Layer `l` stores its weight matrix
//! (`dims[l+1]` rows by `dims[l]` columns, row-major) followed by its bias.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub const HIDDEN_LAYERS: usize = 3;

const CHECKPOINT_MAGIC: &str = "dsa-network";
const CHECKPOINT_VERSION: u32 = 1;

/// Weights and biases of a fully connected network. Also used as the
/// gradient buffer, which has the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    dims: Vec<usize>,
    offsets: Vec<usize>,
    data: Vec<f64>,
}

impl NetworkParams {
    /// All-zero parameters for layer widths `dims` (input first).
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidArgument(
                "a network needs at least an input and an output layer".into(),
            ));
        }
        if let Some(pos) = dims.iter().position(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!("layer {pos} has width 0")));
        }
        let mut offsets = Vec::with_capacity(dims.len());
        let mut total = 0;
        offsets.push(0);
        for w in dims.windows(2) {
            total += w[1] * w[0] + w[1];
            offsets.push(total);
        }
        Ok(NetworkParams {
            dims: dims.to_vec(),
            offsets,
            data: vec![0.0; total],
        })
    }

    pub fn zeros_like(other: &NetworkParams) -> Self {
        NetworkParams {
            dims: other.dims.clone(),
            offsets: other.offsets.clone(),
            data: vec![0.0; other.data.len()],
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("at least two layers")
    }

    pub fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn split(&self, layer: usize) -> (usize, usize, usize) {
        let (fan_in, fan_out) = (self.dims[layer], self.dims[layer + 1]);
        let start = self.offsets[layer];
        (
            start,
            start + fan_in * fan_out,
            start + fan_in * fan_out + fan_out,
        )
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        let (w, b, _) = self.split(layer);
        &self.data[w..b]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        let (w, b, _) = self.split(layer);
        &mut self.data[w..b]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        let (_, b, end) = self.split(layer);
        &self.data[b..end]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut [f64] {
        let (_, b, end) = self.split(layer);
        &mut self.data[b..end]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copies every parameter from `other`, which must have the same shape.
    pub fn copy_from(&mut self, other: &NetworkParams) {
        assert_eq!(self.dims, other.dims, "shape mismatch");
        self.data.copy_from_slice(&other.data);
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "network input",
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        Ok(())
    }

    /// Activations of every layer, input included. Hidden layers are ReLU,
    /// the output is linear.
    fn activations(&self, input: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.dims.len());
        acts.push(input.to_vec());
        for layer in 0..self.n_layers() {
            let x = &acts[layer];
            let w = self.weights(layer);
            let last = layer + 1 == self.n_layers();
            let out: Vec<f64> = self
                .bias(layer)
                .iter()
                .enumerate()
                .map(|(row, b)| {
                    let z = b + dot(&w[row * x.len()..(row + 1) * x.len()], x);
                    if last {
                        z
                    } else {
                        z.max(0.0)
                    }
                })
                .collect();
            acts.push(out);
        }
        acts
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        Ok(self.activations(input).pop().expect("output layer"))
    }

    /// Mean squared error between `targets[j]` and output unit `actions[j]`
    /// for input `inputs[j]`, and its gradient. Other output units receive no
    /// gradient.
    pub fn loss_and_gradients<I: AsRef<[f64]>>(
        &self,
        inputs: &[I],
        actions: &[usize],
        targets: &[f64],
    ) -> Result<(f64, NetworkParams)> {
        if inputs.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        if actions.len() != inputs.len() || targets.len() != inputs.len() {
            return Err(Error::DimensionMismatch {
                what: "batch",
                expected: inputs.len(),
                got: actions.len().min(targets.len()),
            });
        }
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("targets"));
        }
        let scale = 1.0 / inputs.len() as f64;
        let mut grads = NetworkParams::zeros_like(self);
        let mut loss = 0.0;
        for ((input, &action), &target) in inputs.iter().zip(actions).zip(targets) {
            let input = input.as_ref();
            self.check_input(input)?;
            if action >= self.output_dim() {
                return Err(Error::InvalidAction {
                    action,
                    max: self.output_dim() - 1,
                });
            }
            let acts = self.activations(input);
            let err = target - acts[self.n_layers()][action];
            loss += err * err * scale;

            let mut delta = vec![0.0; self.output_dim()];
            delta[action] = -2.0 * err * scale;
            for layer in (0..self.n_layers()).rev() {
                let x = &acts[layer];
                let fan_in = x.len();
                {
                    let (w0, b0, _) = self.split(layer);
                    let g = &mut grads.data;
                    for (row, &d) in delta.iter().enumerate() {
                        if d == 0.0 {
                            continue;
                        }
                        g[b0 + row] += d;
                        let gw = &mut g[w0 + row * fan_in..w0 + (row + 1) * fan_in];
                        for (gi, xi) in gw.iter_mut().zip(x) {
                            *gi += d * xi;
                        }
                    }
                }
                if layer == 0 {
                    break;
                }
                let w = self.weights(layer);
                let mut prev = vec![0.0; fan_in];
                for (row, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    for (p, wi) in prev.iter_mut().zip(&w[row * fan_in..(row + 1) * fan_in]) {
                        *p += d * wi;
                    }
                }
                // ReLU derivative, read off the post-activation value.
                for (p, &a) in prev.iter_mut().zip(x) {
                    if a <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
        Ok((loss, grads))
    }

    /// Text checkpoint: header, layer widths, then each layer's weight rows
    /// and bias. Floats use the shortest round-trip form, so reading back is
    /// bit-exact.
    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}")?;
        let dims: Vec<String> = self.dims.iter().map(usize::to_string).collect();
        writeln!(out, "dims {}", dims.join(" "))?;
        for layer in 0..self.n_layers() {
            let fan_in = self.dims[layer];
            writeln!(out, "layer {layer}")?;
            for row in self.weights(layer).chunks(fan_in) {
                writeln!(out, "{}", join_floats(row))?;
            }
            writeln!(out, "{}", join_floats(self.bias(layer)))?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines().enumerate();
        let mut next_line = |what: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((i, line)) => Ok((i + 1, line?)),
                None => Err(Error::Parse {
                    line: 0,
                    msg: format!("unexpected end of checkpoint, expected {what}"),
                }),
            }
        };
        let (line, header) = next_line("header")?;
        if header.trim() != format!("{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}") {
            return Err(Error::Parse {
                line,
                msg: format!("unsupported checkpoint header {header:?}"),
            });
        }
        let (line, dims_line) = next_line("dims")?;
        let dims = dims_line
            .strip_prefix("dims ")
            .ok_or_else(|| Error::Parse {
                line,
                msg: "expected `dims`".into(),
            })?
            .split_whitespace()
            .map(|t| {
                t.parse::<usize>().map_err(|_| Error::Parse {
                    line,
                    msg: format!("bad width {t:?}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut params = NetworkParams::zeros(&dims)?;
        for layer in 0..params.n_layers() {
            let (line, tag) = next_line("layer tag")?;
            if tag.trim() != format!("layer {layer}") {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected `layer {layer}`"),
                });
            }
            let (fan_in, fan_out) = (dims[layer], dims[layer + 1]);
            for row in 0..fan_out {
                let (line, text) = next_line("weight row")?;
                let values = parse_floats(&text, fan_in, line)?;
                params.weights_mut(layer)[row * fan_in..(row + 1) * fan_in]
                    .copy_from_slice(&values);
            }
            let (line, text) = next_line("bias")?;
            let values = parse_floats(&text, fan_out, line)?;
            params.bias_mut(layer).copy_from_slice(&values);
        }
        Ok(params)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn join_floats(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v:?}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn parse_floats(text: &str, expected: usize, line: usize) -> Result<Vec<f64>> {
    let values = text
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>().map_err(|_| Error::Parse {
                line,
                msg: format!("bad number {t:?}"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if values.len() != expected {
        return Err(Error::Parse {
            line,
            msg: format!("expected {expected} values, found {}", values.len()),
        });
    }
    Ok(values)
}

/// Network with `HIDDEN_LAYERS` ReLU layers of width `hidden_dim`.
pub fn init_network<R: Rng + ?Sized>(
    input_dim: usize,
    hidden_dim: usize,
    output_dim: usize,
    rng: &mut R,
) -> Result<NetworkParams> {
    init_network_with_depth(input_dim, hidden_dim, HIDDEN_LAYERS, output_dim, rng)
}

/// Weights are drawn from N(0, 1/fan_in); biases start at zero.
pub fn init_network_with_depth<R: Rng + ?Sized>(
    input_dim: usize,
    hidden_dim: usize,
    hidden_layers: usize,
    output_dim: usize,
    rng: &mut R,
) -> Result<NetworkParams> {
    let mut dims = vec![input_dim];
    dims.extend(std::iter::repeat_n(hidden_dim, hidden_layers));
    dims.push(output_dim);
    let mut params = NetworkParams::zeros(&dims)?;
    for (layer, &fan_in) in dims[..dims.len() - 1].iter().enumerate() {
        let std = 1.0 / (fan_in as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        for w in params.weights_mut(layer) {
            *w = normal.sample(rng);
        }
    }
    Ok(params)
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Adam moment estimates for one parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub step: u64,
}

impl OptState {
    pub fn new(params: &NetworkParams) -> Self {
        OptState {
            first: vec![0.0; params.len()],
            second: vec![0.0; params.len()],
            step: 0,
        }
    }
}

/// One bias-corrected Adam step.
pub fn adam_step(
    params: &mut NetworkParams,
    grads: &NetworkParams,
    opt: &mut OptState,
    lr: f64,
) -> Result<()> {
    if grads.dims != params.dims || opt.first.len() != params.len() {
        return Err(Error::DimensionMismatch {
            what: "gradient buffer",
            expected: params.len(),
            got: grads.len(),
        });
    }
    if lr.is_nan() || lr <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "learning rate {lr} must be positive"
        )));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradients"));
    }
    opt.step += 1;
    let t = opt.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for (((p, &g), m), v) in params
        .data
        .iter_mut()
        .zip(&grads.data)
        .zip(opt.first.iter_mut())
        .zip(opt.second.iter_mut())
    {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPSILON);
    }
    Ok(())
}
