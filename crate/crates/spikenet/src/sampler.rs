//! Per-step neighborhood sampling.
//!
//! Each node's step-`t` neighborhood sample mixes two sources: the full
//! snapshot `G^t` (long-range, "macro" structure) and the delta graph
//! `ΔG^t` (edges new at `t`, the short-term "micro" dynamics). Draws are
//! uniform with replacement, giving fixed-size blocks that batch cleanly.
//! A mini-batch expands its roots into a fixed-fanout tree per time step;
//! random streams are keyed by `(step, root)` so the expansion order does
//! not affect the result.

use rand::Rng;

use crate::rng::StreamSeed;
use crate::tgraph::{NodeId, SnapshotGraph, TemporalGraph};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct SamplerConfig {
    /// Children drawn per node, outermost (root) layer first.
    pub fanouts: Vec<usize>,
    /// Share of each sample block drawn from the full snapshot; the rest
    /// comes from the delta graph. Odd splits round the macro share up.
    pub macro_fraction: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { fanouts: vec![5, 3], macro_fraction: 0.5 }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fanouts.is_empty() {
            return Err(Error::invalid("sampler needs at least one fanout"));
        }
        if self.fanouts.contains(&0) {
            return Err(Error::invalid("every fanout must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.macro_fraction) {
            return Err(Error::invalid(format!(
                "macro_fraction {} outside [0, 1]",
                self.macro_fraction
            )));
        }
        Ok(())
    }

    /// Nodes per root at tree depth `l` (depth 0 is the root itself).
    pub fn layer_width(&self, l: usize) -> usize {
        self.fanouts[..l].iter().product()
    }
}

/// Sampled neighborhoods for one mini-batch: per time step, `depth+1`
/// contiguous layers. Layer 0 holds the `B` roots; layer `l` holds
/// `B·∏_{j≤l} fanout_j` nodes, and the children of the node at position
/// `p` in layer `l-1` occupy positions `p·fanout_l..(p+1)·fanout_l`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleTree {
    batch: usize,
    fanouts: Vec<usize>,
    /// `layers[t-1][l]` = node array at step `t`, depth `l`.
    layers: Vec<Vec<Vec<NodeId>>>,
}

impl SampleTree {
    /// Assembles a tree from explicit per-step layer arrays, checking
    /// the fixed-fanout layout: `layers[t][l]` must hold
    /// `batch * fanouts[..l].product()` nodes and layer 0 must repeat
    /// the same roots at every step.
    pub fn from_layers(fanouts: Vec<usize>, layers: Vec<Vec<Vec<NodeId>>>) -> Result<Self> {
        if fanouts.is_empty() || fanouts.contains(&0) {
            return Err(Error::invalid("fanouts must be non-empty and positive"));
        }
        let first = layers
            .first()
            .and_then(|step| step.first())
            .ok_or_else(|| Error::invalid("tree needs at least one step"))?;
        let batch = first.len();
        if batch == 0 {
            return Err(Error::invalid("tree needs at least one root"));
        }
        let roots = first.clone();
        for (t, step) in layers.iter().enumerate() {
            if step.len() != fanouts.len() + 1 {
                return Err(Error::invalid(format!(
                    "step {} has {} layers, expected {}",
                    t + 1,
                    step.len(),
                    fanouts.len() + 1
                )));
            }
            if step[0] != roots {
                return Err(Error::invalid(format!(
                    "step {} roots differ from step 1",
                    t + 1
                )));
            }
            for (l, arr) in step.iter().enumerate() {
                let expected = batch * fanouts[..l].iter().product::<usize>();
                if arr.len() != expected {
                    return Err(Error::invalid(format!(
                        "step {} layer {l} holds {} nodes, expected {expected}",
                        t + 1,
                        arr.len()
                    )));
                }
            }
        }
        Ok(SampleTree { batch, fanouts, layers })
    }

    pub fn batch_size(&self) -> usize {
        self.batch
    }

    pub fn num_steps(&self) -> usize {
        self.layers.len()
    }

    /// Tree depth = number of sampled layers (excluding the roots).
    pub fn depth(&self) -> usize {
        self.fanouts.len()
    }

    pub fn fanouts(&self) -> &[usize] {
        &self.fanouts
    }

    /// Node array at step `t` (1-based), depth `l` (0 = roots).
    pub fn layer(&self, t: usize, l: usize) -> &[NodeId] {
        &self.layers[t - 1][l]
    }

    pub fn roots(&self) -> &[NodeId] {
        &self.layers[0][0]
    }
}

/// `k` uniform draws with replacement from `v`'s neighbors; a node with
/// no neighbors yields `k` copies of itself.
pub fn sample_uniform(
    g: &SnapshotGraph,
    v: NodeId,
    k: usize,
    rng: &mut impl Rng,
) -> Vec<NodeId> {
    let mut out = Vec::with_capacity(k);
    sample_uniform_into(g, v, k, rng, &mut out);
    out
}

fn sample_uniform_into(
    g: &SnapshotGraph,
    v: NodeId,
    k: usize,
    rng: &mut impl Rng,
    out: &mut Vec<NodeId>,
) {
    let nbrs = g.neighbors(v);
    if nbrs.is_empty() {
        out.extend(std::iter::repeat_n(v, k));
    } else {
        out.extend((0..k).map(|_| nbrs[rng.gen_range(0..nbrs.len())]));
    }
}

/// Step-`t` neighborhood sample of size `k`: `ceil(k·macro_fraction)`
/// draws from the snapshot, the rest from the delta graph. The micro
/// share falls back to the snapshot when `v` has no new edges at `t`;
/// both sources fall back to `v` itself only when `v` is dangling in
/// both. Duplicates across the two sources are kept.
pub fn sample_temporal(
    tg: &TemporalGraph,
    v: NodeId,
    t: usize,
    k: usize,
    macro_fraction: f64,
    rng: &mut impl Rng,
) -> Result<Vec<NodeId>> {
    let mut out = Vec::with_capacity(k);
    sample_temporal_into(tg.snapshot(t)?, tg.delta(t)?, v, k, macro_fraction, rng, &mut out);
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn sample_temporal_into(
    snap: &SnapshotGraph,
    delta: &SnapshotGraph,
    v: NodeId,
    k: usize,
    macro_fraction: f64,
    rng: &mut impl Rng,
    out: &mut Vec<NodeId>,
) {
    let k_macro = ((k as f64 * macro_fraction).ceil() as usize).min(k);
    sample_uniform_into(snap, v, k_macro, rng, out);
    let micro_src = if delta.degree(v) == 0 { snap } else { delta };
    sample_uniform_into(micro_src, v, k - k_macro, rng, out);
}

/// Expands `roots` into per-step sample trees. Draws under root `v` at
/// step `t` come from the substream `seed/t/v`, so trees are identical
/// however the batch is chunked or parallelized. A root appearing twice
/// in one batch receives identical subtrees.
pub fn build_batch_tree(
    tg: &TemporalGraph,
    roots: &[NodeId],
    cfg: &SamplerConfig,
    seed: StreamSeed,
) -> Result<SampleTree> {
    cfg.validate()?;
    if roots.is_empty() {
        return Err(Error::invalid("batch roots must be non-empty"));
    }
    if let Some(&bad) = roots.iter().find(|&&v| v as usize >= tg.num_nodes()) {
        return Err(Error::invalid(format!(
            "root {bad} out of range for {} nodes",
            tg.num_nodes()
        )));
    }

    let depth = cfg.fanouts.len();
    let batch = roots.len();
    let mut layers = Vec::with_capacity(tg.num_steps());
    for t in 1..=tg.num_steps() {
        let snap = tg.snapshot(t)?;
        let delta = tg.delta(t)?;
        let step_seed = seed.child(t as u64);
        let mut step_layers: Vec<Vec<NodeId>> = (0..=depth)
            .map(|l| Vec::with_capacity(batch * cfg.layer_width(l)))
            .collect();
        step_layers[0].extend_from_slice(roots);
        for &root in roots {
            let mut rng = step_seed.child(root as u64).rng();
            // Per-root frontier, expanded layer by layer; the root-major
            // concatenation preserves the contiguous child-block layout.
            let mut frontier = vec![root];
            for (l, &fanout) in cfg.fanouts.iter().enumerate() {
                let mut next = Vec::with_capacity(frontier.len() * fanout);
                for &parent in &frontier {
                    sample_temporal_into(
                        snap,
                        delta,
                        parent,
                        fanout,
                        cfg.macro_fraction,
                        &mut rng,
                        &mut next,
                    );
                }
                step_layers[l + 1].extend_from_slice(&next);
                frontier = next;
            }
        }
        layers.push(step_layers);
    }
    Ok(SampleTree { batch, fanouts: cfg.fanouts.clone(), layers })
}
