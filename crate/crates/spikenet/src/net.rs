//! Spiking graph network forward pass.
//!
//! One network layer transforms incoming node representations (a dense
//! matrix product for the analog layer-1 features, a row-accumulating
//! masked summation for binary spike inputs), averages each parent's
//! own message with its sampled children's, and feeds the result
//! through leaky integrate-and-fire neurons. K layers consume a
//! depth-K sample tree from the outside in: step `t` walks every tree
//! layer once, and neuron state at each (network layer, tree position)
//! slot carries across steps. The roots' last-layer spike trains are
//! pooled into embeddings and classified with a softmax head.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read as _, Write as _};
use std::path::Path;

use crate::matrix::Matrix;
use crate::neuron::{lif_integrate, lif_reset, relaxed_fire, threshold_update, LifParams, LifState};
use crate::rng::StreamSeed;
use crate::sampler::SampleTree;
use crate::tgraph::TemporalGraph;
use crate::{Error, Result, Scalar};

/// Spike nonlinearity selector. `Hard` emits binary spikes through the
/// step function; `Relaxed` substitutes the sigmoid everywhere, making
/// the whole network differentiable for gradient verification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    Hard,
    Relaxed,
}

/// How the per-step spike history is compressed into one embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Sum,
    Avg,
    /// Learned transform over the step-concatenated spike history.
    Linear,
}

impl PoolMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(PoolMode::Sum),
            "avg" => Ok(PoolMode::Avg),
            "linear" => Ok(PoolMode::Linear),
            other => Err(Error::invalid(format!(
                "unknown pooling mode '{other}' (expected sum, avg, or linear)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            PoolMode::Sum => "sum",
            PoolMode::Avg => "avg",
            PoolMode::Linear => "linear",
        }
    }
}

/// Width of every stage of the model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelDims {
    pub feature_dim: usize,
    /// Output width of each layer, innermost last.
    pub hidden: Vec<usize>,
    /// Embedding width produced by linear pooling; sum/avg pooling
    /// passes the last hidden width through unchanged.
    pub embed: usize,
    pub num_classes: usize,
    pub num_steps: usize,
}

impl ModelDims {
    pub fn num_layers(&self) -> usize {
        self.hidden.len()
    }

    pub fn last_hidden(&self) -> usize {
        self.hidden.last().copied().unwrap_or(0)
    }

    /// Embedding width actually produced under `pool`.
    pub fn embed_dim(&self, pool: PoolMode) -> usize {
        match pool {
            PoolMode::Linear => self.embed,
            _ => self.last_hidden(),
        }
    }

    pub fn validate(&self, pool: PoolMode) -> Result<()> {
        if self.hidden.is_empty() {
            return Err(Error::invalid("model needs at least one layer"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::invalid("hidden widths must be at least 1"));
        }
        if self.num_classes < 2 {
            return Err(Error::invalid("classification needs at least two classes"));
        }
        if self.num_steps == 0 {
            return Err(Error::invalid("model needs at least one time step"));
        }
        match pool {
            PoolMode::Linear => {
                if self.embed == 0 {
                    return Err(Error::invalid("embedding width must be at least 1"));
                }
            }
            _ => {
                if self.embed != self.last_hidden() {
                    return Err(Error::invalid(format!(
                        "sum/avg pooling fixes the embedding width to the last \
                         hidden size {} (configured {})",
                        self.last_hidden(),
                        self.embed
                    )));
                }
            }
        }
        Ok(())
    }
}

/// All learnable tensors. Tensor order (weights, pooling transform,
/// classifier, bias) is fixed and shared by [`ModelParams::tensors`]
/// and the checkpoint format.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F> {
    pub dims: ModelDims,
    pub pool: PoolMode,
    /// One matrix per layer, `in_dim x out_dim`.
    pub weights: Vec<Matrix<F>>,
    /// Present only for linear pooling: `(T * d_K) x embed`.
    pub pool_w: Option<Matrix<F>>,
    /// `embed x num_classes`.
    pub classifier: Matrix<F>,
    pub bias: Vec<F>,
}

impl<F: Scalar> ModelParams<F> {
    /// Fresh parameters with uniform variance-preserving init, drawn
    /// from `seed` in tensor order; biases start at zero.
    pub fn glorot(dims: ModelDims, pool: PoolMode, seed: StreamSeed) -> Result<Self> {
        dims.validate(pool)?;
        let mut rng = seed.rng();
        let mut weights = Vec::with_capacity(dims.hidden.len());
        let mut prev = dims.feature_dim;
        for &h in &dims.hidden {
            weights.push(Matrix::glorot(prev, h, &mut rng));
            prev = h;
        }
        let pool_w = match pool {
            PoolMode::Linear => {
                Some(Matrix::glorot(dims.num_steps * prev, dims.embed, &mut rng))
            }
            _ => None,
        };
        let emb = dims.embed_dim(pool);
        let classifier = Matrix::glorot(emb, dims.num_classes, &mut rng);
        let bias = vec![F::zero(); dims.num_classes];
        Ok(ModelParams { dims, pool, weights, pool_w, classifier, bias })
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate(self.pool)?;
        if self.weights.len() != self.dims.hidden.len() {
            return Err(Error::invalid(format!(
                "{} weight matrices for {} configured layers",
                self.weights.len(),
                self.dims.hidden.len()
            )));
        }
        let mut prev = self.dims.feature_dim;
        for (k, w) in self.weights.iter().enumerate() {
            if w.rows() != prev || w.cols() != self.dims.hidden[k] {
                return Err(Error::invalid(format!(
                    "layer {} weights are {}x{}, expected {}x{}",
                    k + 1,
                    w.rows(),
                    w.cols(),
                    prev,
                    self.dims.hidden[k]
                )));
            }
            prev = w.cols();
        }
        match (self.pool, &self.pool_w) {
            (PoolMode::Linear, Some(p)) => {
                let rows = self.dims.num_steps * prev;
                if p.rows() != rows || p.cols() != self.dims.embed {
                    return Err(Error::invalid(format!(
                        "pooling transform is {}x{}, expected {}x{}",
                        p.rows(),
                        p.cols(),
                        rows,
                        self.dims.embed
                    )));
                }
            }
            (PoolMode::Linear, None) => {
                return Err(Error::invalid("linear pooling needs a pooling transform"));
            }
            (_, Some(_)) => {
                return Err(Error::invalid("sum/avg pooling must not carry a pooling transform"));
            }
            (_, None) => {}
        }
        let emb = self.dims.embed_dim(self.pool);
        if self.classifier.rows() != emb || self.classifier.cols() != self.dims.num_classes {
            return Err(Error::invalid(format!(
                "classifier is {}x{}, expected {}x{}",
                self.classifier.rows(),
                self.classifier.cols(),
                emb,
                self.dims.num_classes
            )));
        }
        if self.bias.len() != self.dims.num_classes {
            return Err(Error::invalid(format!(
                "bias length {} for {} classes",
                self.bias.len(),
                self.dims.num_classes
            )));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Flat views over every learnable tensor, in fixed order.
    pub fn tensors(&self) -> Vec<&[F]> {
        let mut v: Vec<&[F]> = Vec::with_capacity(self.weights.len() + 3);
        for w in &self.weights {
            v.push(w.data());
        }
        if let Some(p) = &self.pool_w {
            v.push(p.data());
        }
        v.push(self.classifier.data());
        v.push(&self.bias);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [F]> {
        let mut v: Vec<&mut [F]> = Vec::with_capacity(self.weights.len() + 3);
        for w in &mut self.weights {
            v.push(w.data_mut());
        }
        if let Some(p) = self.pool_w.as_mut() {
            v.push(p.data_mut());
        }
        v.push(self.classifier.data_mut());
        v.push(self.bias.as_mut_slice());
        v
    }

    fn tensor_shapes(dims: &ModelDims, pool: PoolMode) -> Vec<Vec<u32>> {
        let mut shapes = Vec::with_capacity(dims.hidden.len() + 3);
        let mut prev = dims.feature_dim;
        for &h in &dims.hidden {
            shapes.push(vec![prev as u32, h as u32]);
            prev = h;
        }
        if pool == PoolMode::Linear {
            shapes.push(vec![(dims.num_steps * prev) as u32, dims.embed as u32]);
        }
        let emb = dims.embed_dim(pool);
        shapes.push(vec![emb as u32, dims.num_classes as u32]);
        shapes.push(vec![dims.num_classes as u32]);
        shapes
    }

    /// Writes the checkpoint: magic `SPKN`, format version, then every
    /// tensor as rank, dims, and row-major 32-bit little-endian floats.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.validate()?;
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let shapes = Self::tensor_shapes(&self.dims, self.pool);
        (|| -> std::io::Result<()> {
            w.write_all(CHECKPOINT_MAGIC)?;
            w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
            for (shape, data) in shapes.iter().zip(self.tensors()) {
                w.write_all(&(shape.len() as u32).to_le_bytes())?;
                for &d in shape {
                    w.write_all(&d.to_le_bytes())?;
                }
                for &x in data {
                    w.write_all(&(x.as_f64() as f32).to_le_bytes())?;
                }
            }
            w.flush()
        })()
        .map_err(|e| Error::io(path, e))
    }

    /// Loads a checkpoint against the shape table derived from `dims`
    /// and `pool`; any mismatch is a format error.
    pub fn load(path: impl AsRef<Path>, dims: ModelDims, pool: PoolMode) -> Result<Self> {
        let path = path.as_ref();
        dims.validate(pool)?;
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let bad = |msg: String| Error::format(format!("{}: {msg}", path.display()));

        let mut magic = [0u8; 4];
        read_bytes(&mut r, &mut magic).map_err(&bad)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("bad checkpoint magic".into()));
        }
        let version = read_u32(&mut r).map_err(&bad)?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }

        let shapes = Self::tensor_shapes(&dims, pool);
        let mut tensors: Vec<Vec<F>> = Vec::with_capacity(shapes.len());
        for expected in &shapes {
            let rank = read_u32(&mut r).map_err(&bad)? as usize;
            if rank != expected.len() {
                return Err(bad(format!(
                    "tensor rank {rank} where rank {} was expected",
                    expected.len()
                )));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u32(&mut r).map_err(&bad)?);
            }
            if &shape != expected {
                return Err(bad(format!(
                    "tensor shape {shape:?} does not match the configured shape {expected:?}"
                )));
            }
            let len: usize = shape.iter().map(|&d| d as usize).product();
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                let mut buf = [0u8; 4];
                read_bytes(&mut r, &mut buf).map_err(&bad)?;
                let x = f32::from_le_bytes(buf);
                if !x.is_finite() {
                    return Err(bad(format!("non-finite value {x} in checkpoint tensor")));
                }
                data.push(F::of(x as f64));
            }
            tensors.push(data);
        }
        let mut probe = [0u8; 1];
        if r.read(&mut probe).map_err(|e| Error::io(path, e))? != 0 {
            return Err(bad("trailing bytes after the last tensor".into()));
        }

        let mut it = tensors.into_iter();
        let mut weights = Vec::with_capacity(dims.hidden.len());
        let mut prev = dims.feature_dim;
        for &h in &dims.hidden {
            weights.push(Matrix::from_vec(prev, h, it.next().unwrap())?);
            prev = h;
        }
        let pool_w = match pool {
            PoolMode::Linear => Some(Matrix::from_vec(
                dims.num_steps * prev,
                dims.embed,
                it.next().unwrap(),
            )?),
            _ => None,
        };
        let emb = dims.embed_dim(pool);
        let classifier = Matrix::from_vec(emb, dims.num_classes, it.next().unwrap())?;
        let bias = it.next().unwrap();
        Ok(ModelParams { dims, pool, weights, pool_w, classifier, bias })
    }
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"SPKN";
const CHECKPOINT_VERSION: u32 = 1;

fn read_bytes(r: &mut impl std::io::Read, buf: &mut [u8]) -> std::result::Result<(), String> {
    r.read_exact(buf).map_err(|e| format!("truncated checkpoint ({e})"))
}

fn read_u32(r: &mut impl std::io::Read) -> std::result::Result<u32, String> {
    let mut buf = [0u8; 4];
    read_bytes(r, &mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

/// Last-layer spikes of every batch root: shape `(batch, steps, dim)`.
/// Entries are exactly 0 or 1 under [`ForwardMode::Hard`].
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeHistory<F> {
    batch: usize,
    steps: usize,
    dim: usize,
    data: Vec<F>,
}

impl<F: Scalar> SpikeHistory<F> {
    pub fn zeros(batch: usize, steps: usize, dim: usize) -> Self {
        SpikeHistory { batch, steps, dim, data: vec![F::zero(); batch * steps * dim] }
    }

    pub fn from_parts(batch: usize, steps: usize, dim: usize, data: Vec<F>) -> Result<Self> {
        if data.len() != batch * steps * dim {
            return Err(Error::invalid(format!(
                "history data length {} does not match shape ({batch}, {steps}, {dim})",
                data.len()
            )));
        }
        Ok(SpikeHistory { batch, steps, dim, data })
    }

    pub fn batch_size(&self) -> usize {
        self.batch
    }

    pub fn num_steps(&self) -> usize {
        self.steps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    /// Spike vector of root `b` at step `t` (1-based).
    pub fn get(&self, b: usize, t: usize) -> &[F] {
        let start = (b * self.steps + (t - 1)) * self.dim;
        &self.data[start..start + self.dim]
    }

    fn copy_step_from(&mut self, t: usize, layer: &[F]) {
        debug_assert_eq!(layer.len(), self.batch * self.dim);
        for b in 0..self.batch {
            let start = (b * self.steps + (t - 1)) * self.dim;
            self.data[start..start + self.dim]
                .copy_from_slice(&layer[b * self.dim..(b + 1) * self.dim]);
        }
    }

    /// Spikes divided by steps times neurons, over the whole history.
    pub fn firing_rate(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|v| v.as_f64()).sum::<f64>() / self.data.len() as f64
    }

    /// Firing rate restricted to each time step.
    pub fn firing_rate_per_step(&self) -> Vec<f64> {
        let denom = (self.batch * self.dim) as f64;
        (1..=self.steps)
            .map(|t| {
                if denom == 0.0 {
                    return 0.0;
                }
                (0..self.batch)
                    .map(|b| self.get(b, t).iter().map(|v| v.as_f64()).sum::<f64>())
                    .sum::<f64>()
                    / denom
            })
            .collect()
    }
}

/// Sums the rows of `w` selected by the nonzero entries of `spikes`
/// into `out`. Binary inputs take the accumulate-only path (no
/// multiplications); fractional inputs, as produced by the relaxed
/// mode, scale each selected row.
pub fn masked_sum_into<F: Scalar>(spikes: &[F], w: &Matrix<F>, out: &mut [F]) -> Result<()> {
    if spikes.len() != w.rows() || out.len() != w.cols() {
        return Err(Error::invalid(format!(
            "masked sum of a length-{} vector against a {}x{} matrix into length {}",
            spikes.len(),
            w.rows(),
            w.cols(),
            out.len()
        )));
    }
    out.fill(F::zero());
    let one = F::one();
    for (i, &s) in spikes.iter().enumerate() {
        if s == F::zero() {
            continue;
        }
        let row = w.row(i);
        if s == one {
            for (o, &x) in out.iter_mut().zip(row) {
                *o = *o + x;
            }
        } else {
            for (o, &x) in out.iter_mut().zip(row) {
                *o = *o + s * x;
            }
        }
    }
    Ok(())
}

pub fn masked_sum<F: Scalar>(spikes: &[F], w: &Matrix<F>) -> Result<Vec<F>> {
    let mut out = vec![F::zero(); w.cols()];
    masked_sum_into(spikes, w, &mut out)?;
    Ok(out)
}

/// `x · W` for an analog input vector, accumulated row-major so each
/// matrix row is touched once; zero entries are skipped.
pub fn dense_affine_into<F: Scalar>(x: &[F], w: &Matrix<F>, out: &mut [F]) -> Result<()> {
    if x.len() != w.rows() || out.len() != w.cols() {
        return Err(Error::invalid(format!(
            "product of a length-{} vector with a {}x{} matrix into length {}",
            x.len(),
            w.rows(),
            w.cols(),
            out.len()
        )));
    }
    out.fill(F::zero());
    for (i, &xi) in x.iter().enumerate() {
        if xi == F::zero() {
            continue;
        }
        for (o, &wv) in out.iter_mut().zip(w.row(i)) {
            *o = *o + xi * wv;
        }
    }
    Ok(())
}

pub fn dense_affine<F: Scalar>(x: &[F], w: &Matrix<F>) -> Result<Vec<F>> {
    let mut out = vec![F::zero(); w.cols()];
    dense_affine_into(x, w, &mut out)?;
    Ok(out)
}

fn aggregate_mean_into<F: Scalar>(
    self_msg: &[F],
    neighbor_msgs: &[F],
    out: &mut [F],
) -> Result<()> {
    let d = self_msg.len();
    if d == 0 || !neighbor_msgs.len().is_multiple_of(d) || out.len() != d {
        return Err(Error::invalid(format!(
            "mean of a length-{d} message with a length-{} neighbor block",
            neighbor_msgs.len()
        )));
    }
    let fanout = neighbor_msgs.len() / d;
    out.copy_from_slice(self_msg);
    for c in 0..fanout {
        for (o, &m) in out.iter_mut().zip(&neighbor_msgs[c * d..(c + 1) * d]) {
            *o = *o + m;
        }
    }
    let scale = F::one() / F::of((fanout + 1) as f64);
    for o in out.iter_mut() {
        *o = *o * scale;
    }
    Ok(())
}

/// Element-wise mean over the node's own message and its sampled
/// neighbors' messages (`fanout + 1` terms).
pub fn aggregate_mean<F: Scalar>(self_msg: &[F], neighbor_msgs: &[F]) -> Result<Vec<F>> {
    let mut out = vec![F::zero(); self_msg.len()];
    aggregate_mean_into(self_msg, neighbor_msgs, &mut out)?;
    Ok(out)
}

/// LIF internals captured during a recorded forward pass, enough to
/// replay the pass backwards: per (step, layer, tree depth) slot, the
/// integrated potential `u` and the firing argument
/// `x_pre = u - v_th_prev` of every neuron, positions-major.
#[derive(Debug, Default)]
pub struct ForwardRecord<F> {
    /// `steps[t-1][k-1][l]`.
    pub(crate) steps: Vec<Vec<Vec<LifSlot<F>>>>,
}

#[derive(Debug)]
pub(crate) struct LifSlot<F> {
    pub(crate) x_pre: Vec<F>,
    pub(crate) u: Vec<F>,
}

impl<F: Scalar> ForwardRecord<F> {
    pub fn new() -> Self {
        ForwardRecord { steps: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub(crate) fn slot(&self, t: usize, k: usize, l: usize) -> &LifSlot<F> {
        &self.steps[t - 1][k - 1][l]
    }
}

/// The spike nonlinearity under `mode`, applied to `x = u - v_th`.
pub(crate) fn activation<F: Scalar>(x: F, alpha: F, mode: ForwardMode) -> F {
    match mode {
        ForwardMode::Hard => {
            if x >= F::zero() {
                F::one()
            } else {
                F::zero()
            }
        }
        ForwardMode::Relaxed => relaxed_fire(x, alpha),
    }
}

fn lif_layer_forward<F: Scalar>(
    state: &mut LifState<F>,
    input: &[F],
    p: &LifParams<F>,
    mode: ForwardMode,
    record: bool,
) -> (Vec<F>, Option<LifSlot<F>>) {
    debug_assert_eq!(input.len(), state.len());
    let mut out = Vec::with_capacity(input.len());
    let mut slot = record.then(|| LifSlot {
        x_pre: Vec::with_capacity(input.len()),
        u: Vec::with_capacity(input.len()),
    });
    for (j, &i) in input.iter().enumerate() {
        let u = lif_integrate(state.v[j], i, p);
        let x = u - state.v_th[j];
        let o = activation(x, p.alpha, mode);
        state.v[j] = lif_reset(u, o, p.v_reset);
        state.v_th[j] = threshold_update(state.v_th[j], o, p.tau_th, p.gamma);
        if let Some(s) = slot.as_mut() {
            s.x_pre.push(x);
            s.u.push(u);
        }
        out.push(o);
    }
    (out, slot)
}

/// Runs the unrolled forward pass over `tree` and returns the batch
/// roots' last-layer spike history. Neuron state lives per (network
/// layer, tree position) slot, starts fresh, and persists across time
/// steps; pass a [`ForwardRecord`] to capture the internals needed for
/// a backward pass.
pub fn forward_batch<F: Scalar>(
    tg: &TemporalGraph,
    tree: &SampleTree,
    params: &ModelParams<F>,
    lif: &[LifParams<F>],
    mode: ForwardMode,
    mut record: Option<&mut ForwardRecord<F>>,
) -> Result<SpikeHistory<F>> {
    params.validate()?;
    let k_layers = params.weights.len();
    if tree.depth() != k_layers {
        return Err(Error::invalid(format!(
            "sample tree depth {} does not match the {} network layers",
            tree.depth(),
            k_layers
        )));
    }
    if lif.len() != k_layers {
        return Err(Error::invalid(format!(
            "{} neuron parameter sets for {} layers",
            lif.len(),
            k_layers
        )));
    }
    for p in lif {
        p.validate()?;
    }
    if tree.num_steps() != tg.num_steps() {
        return Err(Error::invalid(format!(
            "sample tree spans {} steps but the graph has {}",
            tree.num_steps(),
            tg.num_steps()
        )));
    }
    let feat = tg.features();
    if params.dims.feature_dim != feat.dim() {
        return Err(Error::invalid(format!(
            "model expects feature dim {} but the graph provides {}",
            params.dims.feature_dim,
            feat.dim()
        )));
    }

    let b = tree.batch_size();
    let t_steps = tree.num_steps();
    let fanouts = tree.fanouts().to_vec();
    let d_last = params.dims.last_hidden();

    // Neuron state per (network layer k, tree depth l), flattened over
    // positions. Layer k only ever produces representations down to
    // depth K - k, so deeper slots are never allocated.
    let mut states: Vec<Vec<LifState<F>>> = (1..=k_layers)
        .map(|k| {
            (0..=(k_layers - k))
                .map(|l| {
                    LifState::new(tree.layer(1, l).len() * params.weights[k - 1].cols(), &lif[k - 1])
                })
                .collect()
        })
        .collect();

    if let Some(r) = record.as_deref_mut() {
        r.steps.clear();
    }
    let mut history = SpikeHistory::zeros(b, t_steps, d_last);

    for t in 1..=t_steps {
        // Depth-l representations start as the analog features of the
        // step-t tree nodes and shrink by one depth per layer.
        let d0 = feat.dim();
        let mut reps: Vec<Vec<F>> = Vec::with_capacity(k_layers + 1);
        for l in 0..=k_layers {
            let nodes = tree.layer(t, l);
            let mut rep = Vec::with_capacity(nodes.len() * d0);
            for &u in nodes {
                if (u as usize) >= tg.num_nodes() {
                    return Err(Error::invalid(format!(
                        "tree node {u} out of range for {} nodes",
                        tg.num_nodes()
                    )));
                }
                rep.extend(feat.get(t, u).iter().map(|&x| F::of(x as f64)));
            }
            reps.push(rep);
        }

        let mut in_dim = d0;
        let mut step_rec: Vec<Vec<LifSlot<F>>> = Vec::new();
        for k in 1..=k_layers {
            let w = &params.weights[k - 1];
            let out_dim = w.cols();

            // Transform every node still alive at this layer; the
            // deepest set only ever serves as children below.
            let mut msgs: Vec<Vec<F>> = Vec::with_capacity(k_layers - k + 2);
            for (l, rep) in reps.iter().enumerate().take(k_layers - k + 2) {
                let n = tree.layer(t, l).len();
                let mut m = vec![F::zero(); n * out_dim];
                for p in 0..n {
                    let x = &rep[p * in_dim..(p + 1) * in_dim];
                    let out = &mut m[p * out_dim..(p + 1) * out_dim];
                    if k == 1 {
                        dense_affine_into(x, w, out)?;
                    } else {
                        masked_sum_into(x, w, out)?;
                    }
                }
                msgs.push(m);
            }

            let mut new_reps: Vec<Vec<F>> = Vec::with_capacity(k_layers - k + 1);
            let mut layer_rec: Vec<LifSlot<F>> = Vec::new();
            for l in 0..=(k_layers - k) {
                let fanout = fanouts[l];
                let n = tree.layer(t, l).len();
                let mut inputs = vec![F::zero(); n * out_dim];
                for p in 0..n {
                    aggregate_mean_into(
                        &msgs[l][p * out_dim..(p + 1) * out_dim],
                        &msgs[l + 1][p * fanout * out_dim..(p + 1) * fanout * out_dim],
                        &mut inputs[p * out_dim..(p + 1) * out_dim],
                    )?;
                }
                let (o, slot) =
                    lif_layer_forward(&mut states[k - 1][l], &inputs, &lif[k - 1], mode, record.is_some());
                if let Some(s) = slot {
                    layer_rec.push(s);
                }
                new_reps.push(o);
            }
            if record.is_some() {
                step_rec.push(layer_rec);
            }
            reps = new_reps;
            in_dim = out_dim;
        }
        if let Some(r) = record.as_deref_mut() {
            r.steps.push(step_rec);
        }
        history.copy_step_from(t, &reps[0]);
    }
    Ok(history)
}

/// Compresses each root's spike history into one embedding: sum or
/// average over steps, or a learned transform of the step-concatenated
/// history. The concatenation is binary in hard mode, so the linear
/// variant rides the same masked summation as the layers.
pub fn spike_pool<F: Scalar>(
    history: &SpikeHistory<F>,
    pool: PoolMode,
    pool_w: Option<&Matrix<F>>,
) -> Result<Vec<F>> {
    let (b, t_steps, d) = (history.batch_size(), history.num_steps(), history.dim());
    match pool {
        PoolMode::Sum | PoolMode::Avg => {
            let mut out = vec![F::zero(); b * d];
            for i in 0..b {
                let acc = &mut out[i * d..(i + 1) * d];
                for t in 1..=t_steps {
                    for (a, &s) in acc.iter_mut().zip(history.get(i, t)) {
                        *a = *a + s;
                    }
                }
                if pool == PoolMode::Avg {
                    let scale = F::one() / F::of(t_steps as f64);
                    for a in acc.iter_mut() {
                        *a = *a * scale;
                    }
                }
            }
            Ok(out)
        }
        PoolMode::Linear => {
            let p = pool_w
                .ok_or_else(|| Error::invalid("linear pooling needs a pooling transform"))?;
            if p.rows() != t_steps * d {
                return Err(Error::invalid(format!(
                    "pooling transform has {} rows but the history concatenates to {}",
                    p.rows(),
                    t_steps * d
                )));
            }
            let emb = p.cols();
            let mut out = vec![F::zero(); b * emb];
            let mut concat = vec![F::zero(); t_steps * d];
            for i in 0..b {
                for t in 1..=t_steps {
                    concat[(t - 1) * d..t * d].copy_from_slice(history.get(i, t));
                }
                masked_sum_into(&concat, p, &mut out[i * emb..(i + 1) * emb])?;
            }
            Ok(out)
        }
    }
}

/// Class probabilities for one embedding: softmax over `z · C + bias`,
/// computed with max subtraction.
pub fn classify<F: Scalar>(z: &[F], c: &Matrix<F>, bias: &[F]) -> Result<Vec<F>> {
    if bias.len() != c.cols() {
        return Err(Error::invalid(format!(
            "bias length {} for {} classes",
            bias.len(),
            c.cols()
        )));
    }
    let mut logits = dense_affine(z, c)?;
    for (l, &b) in logits.iter_mut().zip(bias) {
        *l = *l + b;
    }
    softmax_in_place(&mut logits);
    Ok(logits)
}

pub(crate) fn softmax_in_place<F: Scalar>(xs: &mut [F]) {
    let max = xs.iter().copied().fold(F::neg_infinity(), F::max);
    let mut total = F::zero();
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        total = total + *x;
    }
    for x in xs.iter_mut() {
        *x = *x / total;
    }
}
