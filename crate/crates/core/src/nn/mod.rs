//! Small fully-connected networks with exact reverse-mode gradients.
//!
//! A [`Network`] maps `concat(x, time_embedding(t), class_embedding[label])`
//! through a stack of affine layers. Hidden layers use SiLU (`z * sigmoid(z)`),
//! the output layer is linear. All parameters live in one flat `f64` buffer;
//! [`ParamBlock`]s describe the declaration order:
//!
//! 1. `class_embedding`: `(num_classes + 1) x class_embed_dim`, the last row
//!    being the null (unconditional) embedding;
//! 2. for each layer `i`: `layer{i}.weight` (`out x in`, row-major) followed
//!    by `layer{i}.bias` (`out`).
//!
//! Initialization draws every parameter from a Philox stream keyed by the
//! seed, in declaration order: class embeddings uniform on `[-1, 1]`, layer
//! weights and biases uniform on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.

mod adam;
mod snapshot;

pub use adam::{adam_step, AdamConfig, AdamState};
pub(crate) use snapshot::Reader;
pub use snapshot::{read_snapshot, write_snapshot, Snapshot, SNAPSHOT_MAGIC, SNAPSHOT_VERSION};

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::rng::Philox;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Silu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Silu => z / (1.0 + (-z).exp()),
            Activation::Identity => z,
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 + z * (1.0 - s))
            }
            Activation::Identity => 1.0,
        }
    }

    pub(crate) fn code(self) -> u32 {
        match self {
            Activation::Silu => 0,
            Activation::Identity => 1,
        }
    }

    pub(crate) fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Activation::Silu),
            1 => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// Shape of a network and its conditioning inputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    /// Dimension of the data vector `x`.
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub hidden_activation: Activation,
    /// Width of the sinusoidal time embedding; 0 disables time conditioning.
    pub time_embed_dim: usize,
    /// Largest accepted timestep.
    pub max_timestep: usize,
    /// Number of real classes; the embedding table gets one extra null row.
    pub num_classes: usize,
    /// Width of the learned class embedding; 0 disables class conditioning.
    pub class_embed_dim: usize,
}

impl NetworkSpec {
    /// A plain MLP with no time or class conditioning.
    pub fn plain(input_dim: usize, hidden: Vec<usize>, output_dim: usize) -> Self {
        NetworkSpec {
            input_dim,
            hidden,
            output_dim,
            hidden_activation: Activation::Silu,
            time_embed_dim: 0,
            max_timestep: 0,
            num_classes: 0,
            class_embed_dim: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::config(
                "network input and output widths must be >= 1",
            ));
        }
        if let Some(i) = self.hidden.iter().position(|&w| w == 0) {
            return Err(Error::config(format!("hidden layer {i} has width 0")));
        }
        if !self.time_embed_dim.is_multiple_of(2) {
            return Err(Error::config(format!(
                "time embedding dimension must be even, got {}",
                self.time_embed_dim
            )));
        }
        if self.num_classes > 0 && self.class_embed_dim == 0 {
            return Err(Error::config(
                "a class-conditioned network needs class_embed_dim >= 1",
            ));
        }
        if self.num_classes > u16::MAX as usize {
            return Err(Error::config("too many classes"));
        }
        Ok(())
    }

    /// Width of the concatenated first-layer input.
    pub fn layer_input_dim(&self) -> usize {
        self.input_dim + self.time_embed_dim + self.class_embed_dim
    }

    /// Layer widths from the concatenated input to the output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.layer_input_dim());
        w.extend_from_slice(&self.hidden);
        w.push(self.output_dim);
        w
    }

    pub fn num_layers(&self) -> usize {
        self.hidden.len() + 1
    }

    pub fn null_class(&self) -> usize {
        self.num_classes
    }

    pub fn is_class_conditional(&self) -> bool {
        self.num_classes > 0 && self.class_embed_dim > 0
    }

    /// Width of the last hidden layer (or the input if there is none).
    pub fn penultimate_width(&self) -> usize {
        self.hidden
            .last()
            .copied()
            .unwrap_or(self.layer_input_dim())
    }

    pub fn blocks(&self) -> Vec<ParamBlock> {
        let mut blocks = Vec::with_capacity(2 * self.num_layers() + 1);
        let mut offset = 0;
        let mut push = |name: String, rows: usize, cols: usize| {
            blocks.push(ParamBlock {
                name,
                offset,
                rows,
                cols,
            });
            offset += rows * cols;
        };
        push(
            "class_embedding".into(),
            self.num_classes + 1,
            self.class_embed_dim,
        );
        let widths = self.widths();
        for (i, pair) in widths.windows(2).enumerate() {
            push(format!("layer{i}.weight"), pair[1], pair[0]);
            push(format!("layer{i}.bias"), pair[1], 1);
        }
        blocks
    }

    pub fn param_count(&self) -> usize {
        self.blocks().iter().map(ParamBlock::len).sum()
    }
}

/// A named, contiguous region of the parameter buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamBlock {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

static NEXT_NETWORK_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_NETWORK_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug)]
pub struct Network {
    spec: NetworkSpec,
    blocks: Vec<ParamBlock>,
    params: Vec<f64>,
    // Identity and mutation count, checked by `backward` against the cache.
    id: u64,
    version: u64,
}

impl Clone for Network {
    fn clone(&self) -> Self {
        Network {
            spec: self.spec.clone(),
            blocks: self.blocks.clone(),
            params: self.params.clone(),
            id: fresh_id(),
            version: 0,
        }
    }
}

/// Gradient buffer congruent with a network's parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    values: Vec<f64>,
}

impl Gradients {
    pub fn zeros(len: usize) -> Self {
        Gradients {
            values: vec![0.0; len],
        }
    }

    pub fn zeros_like(net: &Network) -> Self {
        Self::zeros(net.param_count())
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Gradients { values }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        assert_eq!(self.values.len(), other.values.len());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.values {
            *v *= factor;
        }
    }
}

/// Activations retained by a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    net_id: u64,
    net_version: u64,
    batch: usize,
    labels: Vec<usize>,
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Network output, `batch x output_dim` row-major.
    pub fn output(&self) -> &[f64] {
        self.post.last().expect("network has at least one layer")
    }

    /// Post-activation values of layer `i`.
    pub fn activations(&self, layer: usize) -> &[f64] {
        &self.post[layer]
    }
}

/// Sinusoidal embedding of an integer timestep.
///
/// The first `dim/2` entries are `sin(t * w_i)`, the last `dim/2` are
/// `cos(t * w_i)`, with `w_i = 10000^(-2i/dim)`.
pub fn sinusoidal_embedding(t: usize, dim: usize, max_timestep: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; dim];
    write_sinusoidal_embedding(t, dim, max_timestep, &mut out)?;
    Ok(out)
}

fn write_sinusoidal_embedding(t: usize, dim: usize, max_t: usize, out: &mut [f64]) -> Result<()> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::config(format!(
            "embedding dimension must be even and positive, got {dim}"
        )));
    }
    if t > max_t {
        return Err(Error::usage(format!(
            "timestep {t} exceeds maximum {max_t}"
        )));
    }
    let half = dim / 2;
    let tf = t as f64;
    for i in 0..half {
        let omega = 10000f64.powf(-2.0 * i as f64 / dim as f64);
        out[i] = (tf * omega).sin();
        out[half + i] = (tf * omega).cos();
    }
    Ok(())
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

impl Network {
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let blocks = spec.blocks();
        let total: usize = blocks.iter().map(ParamBlock::len).sum();
        let mut params = vec![0.0; total];
        let mut rng = Philox::new(seed);
        let widths = spec.widths();
        for (i, block) in blocks.iter().enumerate() {
            // block 0 is the class table; blocks 2l+1 and 2l+2 belong to layer l
            let bound = if i == 0 {
                1.0
            } else {
                1.0 / (widths[(i - 1) / 2] as f64).sqrt()
            };
            for p in &mut params[block.range()] {
                *p = rng.uniform(-bound, bound);
            }
        }
        Ok(Network {
            spec,
            blocks,
            params,
            id: fresh_id(),
            version: 0,
        })
    }

    /// Builds a network from explicit parameters in declaration order.
    pub fn from_params(spec: NetworkSpec, params: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        let blocks = spec.blocks();
        let total: usize = blocks.iter().map(ParamBlock::len).sum();
        if params.len() != total {
            return Err(Error::Shape {
                context: "network parameters",
                expected: total,
                actual: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::config("network parameters must be finite"));
        }
        Ok(Network {
            spec,
            blocks,
            params,
            id: fresh_id(),
            version: 0,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn block(&self, name: &str) -> Option<&ParamBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable access to the parameter buffer. Invalidates outstanding caches.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.version += 1;
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn weight(&self, layer: usize) -> &[f64] {
        &self.params[self.blocks[1 + 2 * layer].range()]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        &self.params[self.blocks[2 + 2 * layer].range()]
    }

    pub fn class_embedding(&self, class: usize) -> &[f64] {
        let e = self.spec.class_embed_dim;
        let start = self.blocks[0].offset + class * e;
        &self.params[start..start + e]
    }

    /// Rounds every parameter to the nearest `f32`, matching what a snapshot stores.
    pub fn round_to_f32(&mut self) {
        for p in self.params_mut() {
            *p = *p as f32 as f64;
        }
    }

    fn resolve_label(&self, label: Option<usize>) -> Result<usize> {
        match label {
            None => Ok(self.spec.null_class()),
            Some(c) if c <= self.spec.num_classes => Ok(c),
            Some(c) => Err(Error::usage(format!(
                "class label {c} out of range for {} classes",
                self.spec.num_classes
            ))),
        }
    }

    /// Evaluates a single sample.
    pub fn forward(
        &self,
        x: &[f64],
        t: usize,
        label: Option<usize>,
    ) -> Result<(Vec<f64>, ForwardCache)> {
        let cache = self.forward_batch(x, &[t], &[label])?;
        Ok((cache.output().to_vec(), cache))
    }

    /// Evaluates a batch; `xs` is `batch x input_dim` row-major.
    pub fn forward_batch(
        &self,
        xs: &[f64],
        ts: &[usize],
        labels: &[Option<usize>],
    ) -> Result<ForwardCache> {
        let batch = ts.len();
        let d = self.spec.input_dim;
        if labels.len() != batch {
            return Err(Error::Shape {
                context: "forward labels",
                expected: batch,
                actual: labels.len(),
            });
        }
        if xs.len() != batch * d {
            return Err(Error::Shape {
                context: "forward input",
                expected: batch * d,
                actual: xs.len(),
            });
        }
        let resolved = labels
            .iter()
            .map(|&l| self.resolve_label(l))
            .collect::<Result<Vec<_>>>()?;

        let in0 = self.spec.layer_input_dim();
        let te = self.spec.time_embed_dim;
        let ce = self.spec.class_embed_dim;
        let mut input = vec![0.0; batch * in0];
        for b in 0..batch {
            let row = &mut input[b * in0..(b + 1) * in0];
            row[..d].copy_from_slice(&xs[b * d..(b + 1) * d]);
            if te > 0 {
                write_sinusoidal_embedding(ts[b], te, self.spec.max_timestep, &mut row[d..d + te])?;
            }
            if ce > 0 {
                row[d + te..].copy_from_slice(self.class_embedding(resolved[b]));
            }
        }

        let widths = self.spec.widths();
        let layers = self.spec.num_layers();
        let mut pre = Vec::with_capacity(layers);
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(layers);
        for l in 0..layers {
            let (n_in, n_out) = (widths[l], widths[l + 1]);
            let act = if l + 1 == layers {
                Activation::Identity
            } else {
                self.spec.hidden_activation
            };
            let w = self.weight(l);
            let bias = self.bias(l);
            let prev: &[f64] = if l == 0 { &input } else { &post[l - 1] };
            let mut z = vec![0.0; batch * n_out];
            for b in 0..batch {
                let a = &prev[b * n_in..(b + 1) * n_in];
                let zr = &mut z[b * n_out..(b + 1) * n_out];
                for o in 0..n_out {
                    zr[o] = bias[o] + dot(&w[o * n_in..(o + 1) * n_in], a);
                }
            }
            let a = if act == Activation::Identity {
                z.clone()
            } else {
                z.iter().map(|&v| act.apply(v)).collect()
            };
            pre.push(z);
            post.push(a);
        }
        Ok(ForwardCache {
            net_id: self.id,
            net_version: self.version,
            batch,
            labels: resolved,
            input,
            pre,
            post,
        })
    }

    /// Gradient of `sum(output * output_grad)` with respect to every parameter,
    /// summed over the batch.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &[f64]) -> Result<Gradients> {
        if cache.net_id != self.id || cache.net_version != self.version {
            return Err(Error::usage(
                "forward cache does not belong to this network state",
            ));
        }
        let batch = cache.batch;
        let widths = self.spec.widths();
        let layers = self.spec.num_layers();
        let out_dim = self.spec.output_dim;
        if output_grad.len() != batch * out_dim {
            return Err(Error::Shape {
                context: "backward output gradient",
                expected: batch * out_dim,
                actual: output_grad.len(),
            });
        }

        let mut grads = Gradients::zeros(self.params.len());
        let mut upstream = output_grad.to_vec();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (widths[l], widths[l + 1]);
            let act = if l + 1 == layers {
                Activation::Identity
            } else {
                self.spec.hidden_activation
            };
            // dz = upstream * act'(z)
            let dz: Vec<f64> = if act == Activation::Identity {
                upstream
            } else {
                upstream
                    .iter()
                    .zip(&cache.pre[l])
                    .map(|(g, &z)| g * act.derivative(z))
                    .collect()
            };
            let prev: &[f64] = if l == 0 {
                &cache.input
            } else {
                &cache.post[l - 1]
            };
            let w_block = self.blocks[1 + 2 * l].range();
            let b_block = self.blocks[2 + 2 * l].range();
            {
                let (gw_all, gb_all) = grads.values.split_at_mut(b_block.start);
                let gw = &mut gw_all[w_block.clone()];
                let gb = &mut gb_all[..n_out];
                for b in 0..batch {
                    let a = &prev[b * n_in..(b + 1) * n_in];
                    let dzr = &dz[b * n_out..(b + 1) * n_out];
                    for o in 0..n_out {
                        let g = dzr[o];
                        if g != 0.0 {
                            axpy(g, a, &mut gw[o * n_in..(o + 1) * n_in]);
                        }
                        gb[o] += g;
                    }
                }
            }
            let needs_input_grad = l > 0 || self.spec.class_embed_dim > 0;
            if !needs_input_grad {
                break;
            }
            let w = &self.params[w_block];
            let mut down = vec![0.0; batch * n_in];
            for b in 0..batch {
                let dzr = &dz[b * n_out..(b + 1) * n_out];
                let dr = &mut down[b * n_in..(b + 1) * n_in];
                for o in 0..n_out {
                    if dzr[o] != 0.0 {
                        axpy(dzr[o], &w[o * n_in..(o + 1) * n_in], dr);
                    }
                }
            }
            upstream = down;
            if l == 0 {
                let ce = self.spec.class_embed_dim;
                let start = self.spec.input_dim + self.spec.time_embed_dim;
                let table = self.blocks[0].offset;
                for b in 0..batch {
                    let row = &upstream[b * n_in + start..(b + 1) * n_in];
                    let off = table + cache.labels[b] * ce;
                    for (g, v) in grads.values[off..off + ce].iter_mut().zip(row) {
                        *g += v;
                    }
                }
            }
        }
        Ok(grads)
    }
}
