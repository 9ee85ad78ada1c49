//! Temporal graphs as snapshot sequences.
//!
//! Timestamped edges are binned into `T` equal-width intervals. Each step
//! `t` exposes two views: the snapshot `G^t` (cumulative by default: every
//! edge established up to and including bin `t`) and the delta `ΔG^t`
//! (edges new in bin `t`, with `ΔG^1 = G^1`). Node ids from the input are
//! remapped to a dense `0..N-1` range; the mapping is kept for writing
//! back beside run outputs.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::{Error, Result};

pub type NodeId = u32;

/// Sentinel-free label storage: `None` marks unlabeled nodes, which are
/// excluded from losses and metrics.
#[derive(Debug, Clone)]
pub struct Labels {
    classes: Vec<Option<u32>>,
    num_classes: usize,
}

impl Labels {
    pub fn new(classes: Vec<Option<u32>>) -> Self {
        let num_classes = classes
            .iter()
            .flatten()
            .map(|&c| c as usize + 1)
            .max()
            .unwrap_or(0);
        Labels { classes, num_classes }
    }

    pub fn get(&self, v: NodeId) -> Option<u32> {
        self.classes[v as usize]
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labeled_nodes(&self) -> Vec<NodeId> {
        (0..self.classes.len() as NodeId)
            .filter(|&v| self.classes[v as usize].is_some())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }
}

/// Node features, either one vector per node or one per (step, node).
#[derive(Debug, Clone)]
pub struct FeatureStore {
    num_nodes: usize,
    dim: usize,
    /// `num_nodes * dim` values for static features, `T * num_nodes * dim`
    /// (step-major) when features evolve per step.
    data: Vec<f32>,
    num_steps: Option<usize>,
}

impl FeatureStore {
    pub fn new_static(num_nodes: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != num_nodes * dim {
            return Err(Error::invalid(format!(
                "feature data length {} does not match {}x{}",
                data.len(),
                num_nodes,
                dim
            )));
        }
        Ok(FeatureStore { num_nodes, dim, data, num_steps: None })
    }

    pub fn new_per_step(
        num_steps: usize,
        num_nodes: usize,
        dim: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        if data.len() != num_steps * num_nodes * dim {
            return Err(Error::invalid(format!(
                "feature data length {} does not match {}x{}x{}",
                data.len(),
                num_steps,
                num_nodes,
                dim
            )));
        }
        Ok(FeatureStore { num_nodes, dim, data, num_steps: Some(num_steps) })
    }

    pub fn empty(num_nodes: usize) -> Self {
        FeatureStore { num_nodes, dim: 0, data: Vec::new(), num_steps: None }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn is_per_step(&self) -> bool {
        self.num_steps.is_some()
    }

    /// Feature vector of node `v` at step `t` (1-based). Static stores
    /// ignore `t`.
    pub fn get(&self, t: usize, v: NodeId) -> &[f32] {
        let v = v as usize;
        let base = match self.num_steps {
            None => v * self.dim,
            Some(_) => ((t - 1) * self.num_nodes + v) * self.dim,
        };
        &self.data[base..base + self.dim]
    }

    /// The step-`t` slice as a standalone static store.
    pub fn step_slice(&self, t: usize) -> FeatureStore {
        match self.num_steps {
            None => self.clone(),
            Some(_) => {
                let base = (t - 1) * self.num_nodes * self.dim;
                FeatureStore {
                    num_nodes: self.num_nodes,
                    dim: self.dim,
                    data: self.data[base..base + self.num_nodes * self.dim].to_vec(),
                    num_steps: None,
                }
            }
        }
    }
}

/// One graph snapshot in CSR form. Undirected: every edge is stored in
/// both directions; adjacency lists are sorted ascending and free of
/// duplicates and self-loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnapshotGraph {
    num_nodes: usize,
    offsets: Vec<usize>,
    targets: Vec<NodeId>,
}

impl SnapshotGraph {
    /// Builds from undirected pairs. Pairs may appear in any orientation
    /// and multiplicity; self-loops are dropped.
    pub fn from_edges(num_nodes: usize, pairs: &[(NodeId, NodeId)]) -> Result<Self> {
        let mut canon: Vec<(NodeId, NodeId)> = Vec::with_capacity(pairs.len());
        for &(u, v) in pairs {
            if u as usize >= num_nodes || v as usize >= num_nodes {
                return Err(Error::invalid(format!(
                    "edge ({u}, {v}) out of range for {num_nodes} nodes"
                )));
            }
            if u == v {
                continue;
            }
            canon.push((u.min(v), u.max(v)));
        }
        canon.sort_unstable();
        canon.dedup();

        let mut degrees = vec![0usize; num_nodes];
        for &(u, v) in &canon {
            degrees[u as usize] += 1;
            degrees[v as usize] += 1;
        }
        let mut offsets = Vec::with_capacity(num_nodes + 1);
        let mut acc = 0usize;
        offsets.push(0);
        for d in &degrees {
            acc += d;
            offsets.push(acc);
        }
        let mut cursor = offsets.clone();
        let mut targets = vec![0 as NodeId; acc];
        for &(u, v) in &canon {
            targets[cursor[u as usize]] = v;
            cursor[u as usize] += 1;
            targets[cursor[v as usize]] = u;
            cursor[v as usize] += 1;
        }
        for v in 0..num_nodes {
            targets[offsets[v]..offsets[v + 1]].sort_unstable();
        }
        Ok(SnapshotGraph { num_nodes, offsets, targets })
    }

    pub fn empty(num_nodes: usize) -> Self {
        SnapshotGraph { num_nodes, offsets: vec![0; num_nodes + 1], targets: Vec::new() }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.targets.len() / 2
    }

    pub fn neighbors(&self, v: NodeId) -> &[NodeId] {
        let v = v as usize;
        &self.targets[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: NodeId) -> usize {
        self.neighbors(v).len()
    }

    pub fn has_edge(&self, u: NodeId, v: NodeId) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Canonical `(min, max)` edge pairs in lexicographic order.
    pub fn edge_pairs(&self) -> Vec<(NodeId, NodeId)> {
        let mut out = Vec::with_capacity(self.num_edges());
        for v in 0..self.num_nodes as NodeId {
            for &u in self.neighbors(v) {
                if u > v {
                    out.push((v, u));
                }
            }
        }
        out
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn targets(&self) -> &[NodeId] {
        &self.targets
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapshotMode {
    Cumulative,
    Windowed,
}

impl SnapshotMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cumulative" => Ok(SnapshotMode::Cumulative),
            "windowed" => Ok(SnapshotMode::Windowed),
            other => Err(Error::invalid(format!(
                "unknown snapshot mode {other:?} (expected cumulative or windowed)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            SnapshotMode::Cumulative => "cumulative",
            SnapshotMode::Windowed => "windowed",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TemporalGraph {
    num_nodes: usize,
    num_steps: usize,
    mode: SnapshotMode,
    snapshots: Vec<SnapshotGraph>,
    deltas: Vec<SnapshotGraph>,
    features: FeatureStore,
    labels: Option<Labels>,
    /// Dense id -> original id, ascending (the remap is order-preserving).
    orig_ids: Vec<u64>,
}

impl TemporalGraph {
    /// Builds snapshots and deltas from per-bin edge pairs (dense ids).
    pub fn from_binned_edges(
        num_nodes: usize,
        bins: Vec<Vec<(NodeId, NodeId)>>,
        mode: SnapshotMode,
        orig_ids: Option<Vec<u64>>,
    ) -> Result<Self> {
        if bins.is_empty() {
            return Err(Error::invalid("temporal graph needs at least one bin"));
        }
        let num_steps = bins.len();
        let orig_ids =
            orig_ids.unwrap_or_else(|| (0..num_nodes as u64).collect());
        if orig_ids.len() != num_nodes {
            return Err(Error::invalid("original-id map length must equal num_nodes"));
        }

        let mut snapshots = Vec::with_capacity(num_steps);
        let mut deltas = Vec::with_capacity(num_steps);
        match mode {
            SnapshotMode::Cumulative => {
                let mut seen: Vec<(NodeId, NodeId)> = Vec::new();
                for bin in &bins {
                    let mut fresh: Vec<(NodeId, NodeId)> = bin
                        .iter()
                        .filter(|&&(u, v)| u != v)
                        .map(|&(u, v)| (u.min(v), u.max(v)))
                        .collect();
                    fresh.sort_unstable();
                    fresh.dedup();
                    fresh.retain(|p| seen.binary_search(p).is_err());
                    deltas.push(SnapshotGraph::from_edges(num_nodes, &fresh)?);
                    let mut merged = Vec::with_capacity(seen.len() + fresh.len());
                    merged.extend_from_slice(&seen);
                    merged.extend_from_slice(&fresh);
                    merged.sort_unstable();
                    seen = merged;
                    snapshots.push(SnapshotGraph::from_edges(num_nodes, &seen)?);
                }
            }
            SnapshotMode::Windowed => {
                for bin in &bins {
                    snapshots.push(SnapshotGraph::from_edges(num_nodes, bin)?);
                }
                for (t, snap) in snapshots.iter().enumerate() {
                    let pairs = snap.edge_pairs();
                    let fresh: Vec<(NodeId, NodeId)> = if t == 0 {
                        pairs
                    } else {
                        let prev_pairs = snapshots[t - 1].edge_pairs();
                        pairs
                            .into_iter()
                            .filter(|p| prev_pairs.binary_search(p).is_err())
                            .collect()
                    };
                    deltas.push(SnapshotGraph::from_edges(num_nodes, &fresh)?);
                }
            }
        }

        Ok(TemporalGraph {
            num_nodes,
            num_steps,
            mode,
            snapshots,
            deltas,
            features: FeatureStore::empty(num_nodes),
            labels: None,
            orig_ids,
        })
    }

    /// Assembles a graph from prebuilt snapshot and delta views. Shapes
    /// are validated; the cumulative relation between the two sequences is
    /// the caller's responsibility.
    pub fn from_parts(
        snapshots: Vec<SnapshotGraph>,
        deltas: Vec<SnapshotGraph>,
        mode: SnapshotMode,
        orig_ids: Option<Vec<u64>>,
    ) -> Result<Self> {
        if snapshots.is_empty() || snapshots.len() != deltas.len() {
            return Err(Error::invalid(
                "need equal, non-zero numbers of snapshots and deltas",
            ));
        }
        let num_nodes = snapshots[0].num_nodes();
        if snapshots
            .iter()
            .chain(deltas.iter())
            .any(|g| g.num_nodes() != num_nodes)
        {
            return Err(Error::invalid("all snapshots and deltas must share num_nodes"));
        }
        let num_steps = snapshots.len();
        let orig_ids = orig_ids.unwrap_or_else(|| (0..num_nodes as u64).collect());
        if orig_ids.len() != num_nodes {
            return Err(Error::invalid("original-id map length must equal num_nodes"));
        }
        Ok(TemporalGraph {
            num_nodes,
            num_steps,
            mode,
            snapshots,
            deltas,
            features: FeatureStore::empty(num_nodes),
            labels: None,
            orig_ids,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn mode(&self) -> SnapshotMode {
        self.mode
    }

    fn check_step(&self, t: usize) -> Result<usize> {
        if t < 1 || t > self.num_steps {
            return Err(Error::invalid(format!(
                "step {t} out of range 1..={}",
                self.num_steps
            )));
        }
        Ok(t - 1)
    }

    /// Snapshot `G^t`, `t` 1-based.
    pub fn snapshot(&self, t: usize) -> Result<&SnapshotGraph> {
        Ok(&self.snapshots[self.check_step(t)?])
    }

    /// Delta `ΔG^t`, `t` 1-based; `ΔG^1 = G^1`.
    pub fn delta(&self, t: usize) -> Result<&SnapshotGraph> {
        Ok(&self.deltas[self.check_step(t)?])
    }

    pub fn features(&self) -> &FeatureStore {
        &self.features
    }

    pub fn labels(&self) -> Option<&Labels> {
        self.labels.as_ref()
    }

    pub fn orig_ids(&self) -> &[u64] {
        &self.orig_ids
    }

    pub fn index_of_orig(&self, orig: u64) -> Option<NodeId> {
        self.orig_ids.binary_search(&orig).ok().map(|i| i as NodeId)
    }

    pub fn set_features(&mut self, features: FeatureStore) -> Result<()> {
        if features.num_nodes() != self.num_nodes {
            return Err(Error::invalid(format!(
                "feature store covers {} nodes, graph has {}",
                features.num_nodes(),
                self.num_nodes
            )));
        }
        if let Some(t) = features.num_steps {
            if t != self.num_steps {
                return Err(Error::invalid(format!(
                    "per-step features cover {t} steps, graph has {}",
                    self.num_steps
                )));
            }
        }
        self.features = features;
        Ok(())
    }

    pub fn set_labels(&mut self, labels: Labels) -> Result<()> {
        if labels.len() != self.num_nodes {
            return Err(Error::invalid(format!(
                "label array covers {} nodes, graph has {}",
                labels.len(),
                self.num_nodes
            )));
        }
        self.labels = Some(labels);
        Ok(())
    }

    /// Single-step view keeping only the last snapshot (and its features,
    /// for per-step stores). Used for static-baseline ablations.
    pub fn final_step_view(&self) -> TemporalGraph {
        let last = self.snapshots[self.num_steps - 1].clone();
        TemporalGraph {
            num_nodes: self.num_nodes,
            num_steps: 1,
            mode: self.mode,
            snapshots: vec![last.clone()],
            deltas: vec![last],
            features: self.features.step_slice(self.num_steps),
            labels: self.labels.clone(),
            orig_ids: self.orig_ids.clone(),
        }
    }
}

fn open_reader(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

/// Loads `src dst t` lines and bins them into `num_bins` equal-width
/// intervals over the observed timestamp range. Comment lines (`#`) and
/// blank lines are skipped. Node ids are remapped densely in ascending
/// order of original id.
pub fn load_edge_stream(
    path: impl AsRef<Path>,
    num_bins: usize,
    mode: SnapshotMode,
) -> Result<TemporalGraph> {
    let path = path.as_ref();
    if num_bins < 1 {
        return Err(Error::invalid("number of time bins must be at least 1"));
    }
    let reader = open_reader(path)?;

    let mut raw: Vec<(u64, u64, f64)> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut it = trimmed.split_whitespace();
        let (su, sv, st) = match (it.next(), it.next(), it.next(), it.next()) {
            (Some(a), Some(b), Some(c), None) => (a, b, c),
            _ => {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("expected `src dst t`, got {trimmed:?}"),
                ))
            }
        };
        let u: u64 = su
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad source id {su:?}")))?;
        let v: u64 = sv
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad target id {sv:?}")))?;
        let t: f64 = st
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad timestamp {st:?}")))?;
        if !t.is_finite() {
            return Err(Error::parse(path, lineno, format!("non-finite timestamp {st:?}")));
        }
        raw.push((u, v, t));
    }
    if raw.is_empty() {
        return Err(Error::invalid(format!(
            "{}: edge file contains no edges",
            path.display()
        )));
    }

    let mut orig_ids: Vec<u64> = raw.iter().flat_map(|&(u, v, _)| [u, v]).collect();
    orig_ids.sort_unstable();
    orig_ids.dedup();
    let dense: HashMap<u64, NodeId> = orig_ids
        .iter()
        .enumerate()
        .map(|(i, &id)| (id, i as NodeId))
        .collect();
    let num_nodes = orig_ids.len();

    let mut stamps: Vec<f64> = raw.iter().map(|&(_, _, t)| t).collect();
    stamps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let t_min = stamps[0];
    let t_max = *stamps.last().unwrap();
    stamps.dedup();
    if num_bins > stamps.len() {
        log::warn!(
            "{}: {} bins requested but only {} distinct timestamps; some bins will be empty",
            path.display(),
            num_bins,
            stamps.len()
        );
    }

    let bin_of = |t: f64| -> usize {
        if t_max == t_min {
            0
        } else {
            let b = ((t - t_min) / (t_max - t_min) * num_bins as f64).floor() as usize;
            b.min(num_bins - 1)
        }
    };
    let mut bins: Vec<Vec<(NodeId, NodeId)>> = vec![Vec::new(); num_bins];
    for &(u, v, t) in &raw {
        bins[bin_of(t)].push((dense[&u], dense[&v]));
    }

    TemporalGraph::from_binned_edges(num_nodes, bins, mode, Some(orig_ids))
}

/// Writes the graph back as `src dst bin` lines (original node ids, bin
/// index as timestamp). Cumulative graphs emit each edge once at its first
/// bin; windowed graphs emit every window's edges. Reloading with the same
/// bin count and mode reproduces the CSR arrays exactly, provided the
/// first and last bins are non-empty (otherwise the reloaded timestamp
/// range shrinks and bins shift).
pub fn write_edge_stream(tg: &TemporalGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let per_bin: &Vec<SnapshotGraph> = match tg.mode {
        SnapshotMode::Cumulative => &tg.deltas,
        SnapshotMode::Windowed => &tg.snapshots,
    };
    for (t, g) in per_bin.iter().enumerate() {
        for (u, v) in g.edge_pairs() {
            writeln!(w, "{} {} {}", tg.orig_ids[u as usize], tg.orig_ids[v as usize], t)
                .map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes the dense-id -> original-id map, one `dense orig` line per node.
pub fn write_node_map(tg: &TemporalGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (dense, orig) in tg.orig_ids.iter().enumerate() {
        writeln!(w, "{dense} {orig}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loads `node label` lines keyed by original node id. Nodes absent from
/// the file stay unlabeled.
pub fn load_labels(path: impl AsRef<Path>, tg: &TemporalGraph) -> Result<Labels> {
    let path = path.as_ref();
    let reader = open_reader(path)?;
    let mut classes: Vec<Option<u32>> = vec![None; tg.num_nodes()];
    let mut count = 0usize;
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut it = trimmed.split_whitespace();
        let (sn, sl) = match (it.next(), it.next(), it.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("expected `node label`, got {trimmed:?}"),
                ))
            }
        };
        let orig: u64 = sn
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad node id {sn:?}")))?;
        let label: u32 = sl
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad label {sl:?}")))?;
        let dense = tg.index_of_orig(orig).ok_or_else(|| {
            Error::parse(path, lineno, format!("unknown node id {orig}"))
        })?;
        classes[dense as usize] = Some(label);
        count += 1;
    }
    if count == 0 {
        return Err(Error::invalid(format!(
            "{}: label file contains no entries",
            path.display()
        )));
    }
    Ok(Labels::new(classes))
}

/// Loads a feature matrix. The header is either `N d` (static) or
/// `T N d` (per-step, `T` must match the graph). Rows follow in dense
/// node-id order (step-major for per-step stores); a file may cover fewer
/// nodes than the graph, in which case the remaining nodes get zero
/// features.
pub fn load_features(path: impl AsRef<Path>, tg: &TemporalGraph) -> Result<FeatureStore> {
    let path = path.as_ref();
    let reader = open_reader(path)?;
    let mut lines = reader.lines().enumerate();

    let (header_no, header) = loop {
        match lines.next() {
            Some((idx, line)) => {
                let line = line.map_err(|e| Error::io(path, e))?;
                let trimmed = line.trim().to_string();
                if trimmed.is_empty() || trimmed.starts_with('#') {
                    continue;
                }
                break (idx + 1, trimmed);
            }
            None => {
                return Err(Error::invalid(format!(
                    "{}: feature file has no header",
                    path.display()
                )))
            }
        }
    };
    let head: Vec<usize> = header
        .split_whitespace()
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| Error::parse(path, header_no, format!("bad header field {s:?}")))
        })
        .collect::<Result<_>>()?;
    let (num_steps, rows, dim) = match head.as_slice() {
        [n, d] => (None, *n, *d),
        [t, n, d] => (Some(*t), *n, *d),
        _ => {
            return Err(Error::parse(
                path,
                header_no,
                "expected header `N d` or `T N d`".to_string(),
            ))
        }
    };
    if let Some(t) = num_steps {
        if t != tg.num_steps() {
            return Err(Error::invalid(format!(
                "{}: per-step features declare {} steps, graph has {}",
                path.display(),
                t,
                tg.num_steps()
            )));
        }
    }
    if rows > tg.num_nodes() {
        return Err(Error::invalid(format!(
            "{}: feature file covers {} nodes, graph has only {}",
            path.display(),
            rows,
            tg.num_nodes()
        )));
    }

    let steps = num_steps.unwrap_or(1);
    let n = tg.num_nodes();
    let mut data = vec![0.0f32; steps * n * dim];
    let mut filled = 0usize;
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if filled >= steps * rows {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected {} data rows, found more", steps * rows),
            ));
        }
        let step = filled / rows;
        let node = filled % rows;
        let base = (step * n + node) * dim;
        let mut j = 0usize;
        for tok in trimmed.split_whitespace() {
            if j >= dim {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("row has more than {dim} values"),
                ));
            }
            let x: f32 = tok
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("bad feature value {tok:?}")))?;
            if !x.is_finite() {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("non-finite feature value {tok:?}"),
                ));
            }
            data[base + j] = x;
            j += 1;
        }
        if j != dim {
            return Err(Error::parse(
                path,
                lineno,
                format!("row has {j} values, expected {dim}"),
            ));
        }
        filled += 1;
    }
    if filled != steps * rows {
        return Err(Error::invalid(format!(
            "{}: expected {} data rows, found {}",
            path.display(),
            steps * rows,
            filled
        )));
    }

    match num_steps {
        None => FeatureStore::new_static(n, dim, data),
        Some(t) => FeatureStore::new_per_step(t, n, dim, data),
    }
}
