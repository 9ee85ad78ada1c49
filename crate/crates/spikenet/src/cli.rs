//! Command-line entry points and run configuration.
//!
//! A run is described by a flat `key = value` config file; command-line
//! overrides take precedence key by key. Every command that touches
//! disk leaves a resolved snapshot behind that reproduces it exactly:
//! the single `seed` key feeds named substreams for splitting,
//! initialization, sampling, evaluation, and synthetic data, so one
//! number pins the whole run.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;

use crate::matrix::Matrix;
use crate::net::{forward_batch, masked_sum_into, ForwardMode, ModelDims, ModelParams, PoolMode};
use crate::neuron::LifParams;
use crate::rng::{split_tag, stream, StreamSeed};
use crate::sampler::{build_batch_tree, SamplerConfig};
use crate::tgraph::{
    load_edge_stream, load_features, load_labels, write_edge_stream, write_node_map,
    FeatureStore, Labels, NodeId, SnapshotMode, TemporalGraph,
};
use crate::train::{evaluate, stratified_split, train, Split, TrainConfig};
use crate::{Error, Result, Scalar};

/// Full description of one training or evaluation run. Defaults match
/// the published configuration: two layers of 128 units, fanouts
/// `[5, 3]`, half macro / half micro sampling, linear spike pooling,
/// and the standard LIF constants.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub edges: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub t_bins: usize,
    pub snapshot_mode: SnapshotMode,
    pub fanouts: Vec<usize>,
    pub macro_fraction: f64,
    pub hidden: Vec<usize>,
    pub d_emb: usize,
    pub pool: PoolMode,
    pub tau_m: f64,
    pub v_reset: f64,
    pub v_th0: f64,
    pub tau_th: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub patience: usize,
    pub train_ratio: f64,
    pub val_ratio: f64,
    pub strict_deterministic: bool,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            edges: None,
            features: None,
            labels: None,
            t_bins: 8,
            snapshot_mode: SnapshotMode::Cumulative,
            fanouts: vec![5, 3],
            macro_fraction: 0.5,
            hidden: vec![128, 128],
            d_emb: 128,
            pool: PoolMode::Linear,
            tau_m: 1.0,
            v_reset: 0.0,
            v_th0: 1.0,
            tau_th: 0.7,
            gamma: 0.2,
            alpha: 1.0,
            batch_size: 1024,
            lr: 0.001,
            weight_decay: 0.0,
            epochs: 100,
            patience: 10,
            train_ratio: 0.8,
            val_ratio: 0.05,
            strict_deterministic: false,
            seed: 1,
            out_dir: PathBuf::from("runs/run"),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::invalid(format!("config key {key}: cannot parse {value:?}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|s| parse_num::<usize>(key, s))
        .collect()
}

impl RunConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "edges" => self.edges = Some(PathBuf::from(v)),
            "features" => self.features = Some(PathBuf::from(v)),
            "labels" => self.labels = Some(PathBuf::from(v)),
            "t_bins" => self.t_bins = parse_num(key, v)?,
            "snapshot_mode" => self.snapshot_mode = SnapshotMode::parse(v)?,
            "fanouts" => self.fanouts = parse_list(key, v)?,
            "macro_fraction" => self.macro_fraction = parse_num(key, v)?,
            "hidden" => self.hidden = parse_list(key, v)?,
            "d_emb" => self.d_emb = parse_num(key, v)?,
            "pool" => self.pool = PoolMode::parse(v)?,
            "tau_m" => self.tau_m = parse_num(key, v)?,
            "v_reset" => self.v_reset = parse_num(key, v)?,
            "v_th0" => self.v_th0 = parse_num(key, v)?,
            "tau_th" => self.tau_th = parse_num(key, v)?,
            "gamma" => self.gamma = parse_num(key, v)?,
            "alpha" => self.alpha = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "lr" => self.lr = parse_num(key, v)?,
            "weight_decay" => self.weight_decay = parse_num(key, v)?,
            "epochs" => self.epochs = parse_num(key, v)?,
            "patience" => self.patience = parse_num(key, v)?,
            "train_ratio" => self.train_ratio = parse_num(key, v)?,
            "val_ratio" => self.val_ratio = parse_num(key, v)?,
            "strict_deterministic" => match v {
                "true" => self.strict_deterministic = true,
                "false" => self.strict_deterministic = false,
                other => {
                    return Err(Error::invalid(format!(
                        "config key strict_deterministic: expected true or false, got {other:?}"
                    )))
                }
            },
            "seed" => self.seed = parse_num(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            other => return Err(Error::invalid(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Reads a flat config file: one `key = value` per line, `#`
    /// comments and blank lines ignored.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::default();
        for (idx, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or_else(|| {
                Error::parse(path, idx + 1, format!("expected `key = value`, got {trimmed:?}"))
            })?;
            cfg.set(key.trim(), value)
                .map_err(|e| Error::parse(path, idx + 1, e.to_string()))?;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_bins < 1 {
            return Err(Error::invalid("t_bins must be at least 1"));
        }
        if self.d_emb < 1 {
            return Err(Error::invalid("d_emb must be at least 1"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::invalid("hidden must list positive layer widths"));
        }
        self.sampler().validate()?;
        self.lif::<f64>().validate()?;
        self.train_config().validate()?;
        if self.pool != PoolMode::Linear && self.d_emb != *self.hidden.last().unwrap() {
            return Err(Error::invalid(format!(
                "pool {} needs d_emb equal to the last hidden width ({})",
                self.pool.as_str(),
                self.hidden.last().unwrap()
            )));
        }
        Ok(())
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig { fanouts: self.fanouts.clone(), macro_fraction: self.macro_fraction }
    }

    pub fn lif<F: Scalar>(&self) -> LifParams<F> {
        LifParams {
            tau_m: F::of(self.tau_m),
            v_reset: F::of(self.v_reset),
            v_th0: F::of(self.v_th0),
            tau_th: F::of(self.tau_th),
            gamma: F::of(self.gamma),
            alpha: F::of(self.alpha),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            lr: self.lr,
            weight_decay: self.weight_decay,
            epochs: self.epochs,
            patience: self.patience,
            train_ratio: self.train_ratio,
            val_ratio: self.val_ratio,
            seed: self.seed,
            strict_deterministic: self.strict_deterministic,
        }
    }

    pub fn model_dims(&self, feature_dim: usize, num_classes: usize, num_steps: usize) -> ModelDims {
        ModelDims {
            feature_dim,
            hidden: self.hidden.clone(),
            embed: self.d_emb,
            num_classes,
            num_steps,
        }
    }

    /// Loads the graph, features, and labels the config points at.
    /// Without a feature file, degree-derived per-step features are
    /// substituted (and logged loudly): they are a stand-in, not the
    /// published setup, and results with them are not comparable.
    pub fn load_graph(&self) -> Result<TemporalGraph> {
        let edges = self
            .edges
            .as_ref()
            .ok_or_else(|| Error::invalid("config needs an `edges` path"))?;
        let mut tg = load_edge_stream(edges, self.t_bins, self.snapshot_mode)?;
        log::info!(
            "loaded {}: {} nodes, {} steps",
            edges.display(),
            tg.num_nodes(),
            tg.num_steps()
        );
        match &self.features {
            Some(path) => {
                let feats = load_features(path, &tg)?;
                tg.set_features(feats)?;
            }
            None => {
                log::warn!("no feature file given; substituting degree-based features");
                let feats = degree_features(&tg)?;
                tg.set_features(feats)?;
            }
        }
        let labels_path = self
            .labels
            .as_ref()
            .ok_or_else(|| Error::invalid("config needs a `labels` path"))?;
        let labels = load_labels(labels_path, &tg)?;
        tg.set_labels(labels)?;
        Ok(tg)
    }

    /// Canonical text form. Reparsing it reproduces the config; data
    /// paths are made absolute so the snapshot works from any
    /// directory.
    pub fn to_text(&self) -> String {
        let abs = |p: &PathBuf| {
            fs::canonicalize(p).unwrap_or_else(|_| p.clone()).display().to_string()
        };
        let mut s = String::new();
        s.push_str("# data\n");
        if let Some(p) = &self.edges {
            s.push_str(&format!("edges = {}\n", abs(p)));
        }
        if let Some(p) = &self.features {
            s.push_str(&format!("features = {}\n", abs(p)));
        }
        if let Some(p) = &self.labels {
            s.push_str(&format!("labels = {}\n", abs(p)));
        }
        s.push_str(&format!("t_bins = {}\n", self.t_bins));
        s.push_str(&format!("snapshot_mode = {}\n", self.snapshot_mode.as_str()));
        s.push_str("# sampling\n");
        let join = |xs: &[usize]| {
            xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
        };
        s.push_str(&format!("fanouts = {}\n", join(&self.fanouts)));
        s.push_str(&format!("macro_fraction = {}\n", self.macro_fraction));
        s.push_str("# model\n");
        s.push_str(&format!("hidden = {}\n", join(&self.hidden)));
        s.push_str(&format!("d_emb = {}\n", self.d_emb));
        s.push_str(&format!("pool = {}\n", self.pool.as_str()));
        s.push_str("# lif\n");
        s.push_str(&format!("tau_m = {}\n", self.tau_m));
        s.push_str(&format!("v_reset = {}\n", self.v_reset));
        s.push_str(&format!("v_th0 = {}\n", self.v_th0));
        s.push_str(&format!("tau_th = {}\n", self.tau_th));
        s.push_str(&format!("gamma = {}\n", self.gamma));
        s.push_str(&format!("alpha = {}\n", self.alpha));
        s.push_str("# training\n");
        s.push_str(&format!("batch_size = {}\n", self.batch_size));
        s.push_str(&format!("lr = {}\n", self.lr));
        s.push_str(&format!("weight_decay = {}\n", self.weight_decay));
        s.push_str(&format!("epochs = {}\n", self.epochs));
        s.push_str(&format!("patience = {}\n", self.patience));
        s.push_str(&format!("train_ratio = {}\n", self.train_ratio));
        s.push_str(&format!("val_ratio = {}\n", self.val_ratio));
        s.push_str(&format!("strict_deterministic = {}\n", self.strict_deterministic));
        s.push_str(&format!("seed = {}\n", self.seed));
        s.push_str(&format!("out_dir = {}\n", abs(&self.out_dir)));
        s
    }

    pub fn write_resolved(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Per-step stand-in features when no feature file is supplied:
/// `[degree / max_degree, new_edges / max_new_edges]` per node and
/// step. Deliberately weak; real runs should bring real features.
pub fn degree_features(tg: &TemporalGraph) -> Result<FeatureStore> {
    let n = tg.num_nodes();
    let t_steps = tg.num_steps();
    let mut data = vec![0.0f32; t_steps * n * 2];
    let mut max_deg = 1usize;
    let mut max_new = 1usize;
    for t in 1..=t_steps {
        for v in 0..n as NodeId {
            max_deg = max_deg.max(tg.snapshot(t)?.degree(v));
            max_new = max_new.max(tg.delta(t)?.degree(v));
        }
    }
    for t in 1..=t_steps {
        for v in 0..n {
            let base = ((t - 1) * n + v) * 2;
            data[base] = tg.snapshot(t)?.degree(v as NodeId) as f32 / max_deg as f32;
            data[base + 1] = tg.delta(t)?.degree(v as NodeId) as f32 / max_new as f32;
        }
    }
    FeatureStore::new_per_step(t_steps, n, 2, data)
}

/// Parameters of the synthetic dynamic community task.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub num_nodes: usize,
    pub num_steps: usize,
    pub num_communities: usize,
    /// Fraction of each community that moves to the next community at
    /// the midpoint step.
    pub switch_fraction: f64,
    pub p_intra: f64,
    pub p_inter: f64,
    /// Uniform noise amplitude added to the community one-hot
    /// features.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_nodes: 200,
            num_steps: 8,
            num_communities: 2,
            switch_fraction: 0.5,
            p_intra: 0.05,
            p_inter: 0.005,
            noise: 0.1,
            seed: 1,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_communities < 2 {
            return Err(Error::invalid("need at least 2 communities"));
        }
        if self.num_nodes < self.num_communities {
            return Err(Error::invalid("need at least one node per community"));
        }
        if self.num_steps < 1 {
            return Err(Error::invalid("need at least one step"));
        }
        for (name, p) in [
            ("switch_fraction", self.switch_fraction),
            ("p_intra", self.p_intra),
            ("p_inter", self.p_inter),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("{name} {p} is outside [0, 1]")));
            }
        }
        if self.noise < 0.0 || !self.noise.is_finite() {
            return Err(Error::invalid("noise must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        format!(
            "num_nodes = {}\nnum_steps = {}\nnum_communities = {}\nswitch_fraction = {}\n\
             p_intra = {}\np_inter = {}\nnoise = {}\nseed = {}\n",
            self.num_nodes,
            self.num_steps,
            self.num_communities,
            self.switch_fraction,
            self.p_intra,
            self.p_inter,
            self.noise,
            self.seed
        )
    }

    /// Midpoint step (1-based) from which migrated nodes live in their
    /// new community.
    pub fn switch_step(&self) -> usize {
        self.num_steps.div_ceil(2)
    }
}

/// Generates the dynamic community task. Nodes start evenly spread
/// over communities; from the midpoint step on, a fixed fraction of
/// each community lives in the next one. Each step draws fresh edges
/// from the current assignment (intra vs inter probability) and the
/// stream accumulates them, so snapshots blend old and new structure
/// while the deltas isolate the recent moves. Per-step features are
/// the current community one-hot plus uniform noise, and the label
/// encodes (initial community, migrated or not), so telling migrated
/// nodes apart requires the temporal signal rather than the final
/// structure alone.
///
/// Every node is guaranteed at least one edge so the emitted files
/// survive a round trip through the loader, which only keeps nodes
/// that appear in the edge stream.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<TemporalGraph> {
    spec.validate()?;
    let n = spec.num_nodes;
    let t_steps = spec.num_steps;
    let c = spec.num_communities;
    let root = StreamSeed::new(spec.seed).child(stream::SYNTH);

    let initial: Vec<usize> = (0..n).map(|v| v % c).collect();
    let mut migrates = vec![false; n];
    {
        let mut rng = root.child(1).rng();
        for com in 0..c {
            let mut members: Vec<usize> = (0..n).filter(|&v| initial[v] == com).collect();
            use rand::seq::SliceRandom;
            members.shuffle(&mut rng);
            let k = (members.len() as f64 * spec.switch_fraction).round() as usize;
            for &v in &members[..k] {
                migrates[v] = true;
            }
        }
    }
    let switch_step = spec.switch_step();
    let community_at = |v: usize, t: usize| -> usize {
        if migrates[v] && t >= switch_step {
            (initial[v] + 1) % c
        } else {
            initial[v]
        }
    };

    let mut bins: Vec<Vec<(NodeId, NodeId)>> = Vec::with_capacity(t_steps);
    let mut has_edge = vec![false; n];
    for t in 1..=t_steps {
        let mut rng = root.child(2).child(t as u64).rng();
        let mut edges = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                let p = if community_at(u, t) == community_at(v, t) {
                    spec.p_intra
                } else {
                    spec.p_inter
                };
                if p > 0.0 && rng.gen_bool(p) {
                    edges.push((u as NodeId, v as NodeId));
                    has_edge[u] = true;
                    has_edge[v] = true;
                }
            }
        }
        bins.push(edges);
    }
    for v in 0..n {
        if !has_edge[v] {
            let partner = (0..n)
                .find(|&u| u != v && initial[u] == initial[v])
                .unwrap_or((v + 1) % n);
            bins[0].push((v.min(partner) as NodeId, v.max(partner) as NodeId));
        }
    }

    let mut tg = TemporalGraph::from_binned_edges(n, bins, SnapshotMode::Cumulative, None)?;

    let mut data = vec![0.0f32; t_steps * n * c];
    {
        let mut rng = root.child(3).rng();
        for t in 1..=t_steps {
            for v in 0..n {
                let base = ((t - 1) * n + v) * c;
                for j in 0..c {
                    let noise = spec.noise * (2.0 * rng.gen::<f64>() - 1.0);
                    let hot = if community_at(v, t) == j { 1.0 } else { 0.0 };
                    data[base + j] = (hot + noise) as f32;
                }
            }
        }
    }
    tg.set_features(FeatureStore::new_per_step(t_steps, n, c, data)?)?;

    let labels: Vec<Option<u32>> = (0..n)
        .map(|v| Some((initial[v] * 2 + migrates[v] as usize) as u32))
        .collect();
    tg.set_labels(Labels::new(labels))?;
    Ok(tg)
}

/// Writes the synthetic dataset as loadable files plus a starter
/// config and a snapshot of the generator settings. Fixed seed,
/// identical bytes.
pub fn cmd_gen_synthetic(spec: &SynthSpec, out_dir: impl AsRef<Path>) -> Result<()> {
    let out = out_dir.as_ref();
    let tg = generate_synthetic(spec)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    write_edge_stream(&tg, out.join("edges.txt"))?;
    write_node_map(&tg, out.join("node_map.txt"))?;

    let feat_path = out.join("features.txt");
    let file = File::create(&feat_path).map_err(|e| Error::io(&feat_path, e))?;
    let mut w = BufWriter::new(file);
    let feats = tg.features();
    let (n, d, t_steps) = (tg.num_nodes(), feats.dim(), tg.num_steps());
    writeln!(w, "{t_steps} {n} {d}").map_err(|e| Error::io(&feat_path, e))?;
    for t in 1..=t_steps {
        for v in 0..n as NodeId {
            let row: Vec<String> = feats.get(t, v).iter().map(|x| x.to_string()).collect();
            writeln!(w, "{}", row.join(" ")).map_err(|e| Error::io(&feat_path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&feat_path, e))?;

    let label_path = out.join("labels.txt");
    let file = File::create(&label_path).map_err(|e| Error::io(&label_path, e))?;
    let mut w = BufWriter::new(file);
    let labels = tg.labels().expect("generator always labels");
    for v in 0..n as NodeId {
        if let Some(y) = labels.get(v) {
            writeln!(w, "{} {y}", tg.orig_ids()[v as usize])
                .map_err(|e| Error::io(&label_path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&label_path, e))?;

    let mut cfg = RunConfig {
        edges: Some(out.join("edges.txt")),
        features: Some(feat_path),
        labels: Some(label_path),
        t_bins: t_steps,
        snapshot_mode: SnapshotMode::Cumulative,
        out_dir: out.join("run"),
        ..RunConfig::default()
    };
    cfg.seed = spec.seed;
    cfg.write_resolved(out.join("config.txt"))?;
    let spec_path = out.join("synth_spec.txt");
    fs::write(&spec_path, spec.to_text()).map_err(|e| Error::io(&spec_path, e))?;
    log::info!(
        "wrote synthetic dataset: {} nodes, {} steps, {} classes under {}",
        n,
        t_steps,
        labels.num_classes(),
        out.display()
    );
    Ok(())
}

fn derived_dims(cfg: &RunConfig, tg: &TemporalGraph) -> Result<ModelDims> {
    let labels = tg.labels().ok_or_else(|| Error::invalid("graph has no labels"))?;
    Ok(cfg.model_dims(tg.features().dim(), labels.num_classes(), tg.num_steps()))
}

/// Trains per the config (plus overrides) and writes the run artifacts
/// into `out_dir`: resolved config, node-id map, epoch metrics as JSON
/// lines with a final test-metrics line, and the checkpoint. Prints
/// the test metrics JSON to stdout.
pub fn cmd_train(config: Option<&Path>, overrides: &[(String, String)]) -> Result<()> {
    let mut cfg = match config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    for (key, value) in overrides {
        cfg.set(key, value)?;
    }
    cfg.validate()?;

    let tg = cfg.load_graph()?;
    let dims = derived_dims(&cfg, &tg)?;
    dims.validate(cfg.pool)?;

    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    cfg.write_resolved(cfg.out_dir.join("config.resolved"))?;
    write_node_map(&tg, cfg.out_dir.join("node_map.txt"))?;

    let seed = StreamSeed::new(cfg.seed);
    let params = ModelParams::<f32>::glorot(dims, cfg.pool, seed.child(stream::INIT))?;
    log::info!("model has {} parameters", params.param_count());
    let lif = vec![cfg.lif::<f32>(); cfg.hidden.len()];

    let metrics_path = cfg.out_dir.join("metrics.jsonl");
    let file = File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    let mut w = BufWriter::new(file);
    let mut write_err: Option<std::io::Error> = None;
    let outcome = train(
        &tg,
        params,
        &lif,
        &cfg.sampler(),
        &cfg.train_config(),
        |m| {
            if write_err.is_none() {
                let line = serde_json::to_string(m).expect("metrics always serialize");
                if let Err(e) = writeln!(w, "{line}") {
                    write_err = Some(e);
                }
            }
        },
    )?;
    if let Some(e) = write_err {
        return Err(Error::io(&metrics_path, e));
    }

    let test_line = serde_json::json!({
        "best_epoch": outcome.best_epoch,
        "test_macro_f1": outcome.test.macro_f1,
        "test_micro_f1": outcome.test.micro_f1,
        "test_mean_loss": outcome.test.mean_loss,
        "test_firing_rate": outcome.test.firing_rate,
    });
    writeln!(w, "{test_line}").map_err(|e| Error::io(&metrics_path, e))?;
    w.flush().map_err(|e| Error::io(&metrics_path, e))?;

    outcome.params.save(cfg.out_dir.join("model.spkn"))?;
    println!("{test_line}");
    Ok(())
}

fn split_nodes<'a>(split: &'a Split, name: &str) -> Result<(&'a [NodeId], u64)> {
    match name {
        "train" => Ok((&split.train, split_tag::TRAIN)),
        "val" => Ok((&split.val, split_tag::VAL)),
        "test" => Ok((&split.test, split_tag::TEST)),
        other => Err(Error::invalid(format!(
            "unknown split {other:?} (expected train, val, or test)"
        ))),
    }
}

fn load_run(
    checkpoint: &Path,
    config: Option<&Path>,
) -> Result<(RunConfig, TemporalGraph, ModelParams<f32>, Split)> {
    let config_path = match config {
        Some(p) => p.to_path_buf(),
        None => checkpoint
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join("config.resolved"),
    };
    let cfg = RunConfig::from_file(&config_path)?;
    cfg.validate()?;
    let tg = cfg.load_graph()?;
    let dims = derived_dims(&cfg, &tg)?;
    let params = ModelParams::<f32>::load(checkpoint, dims, cfg.pool)?;
    let labels = tg.labels().expect("load_graph requires labels");
    let split = stratified_split(
        labels,
        cfg.train_ratio,
        cfg.val_ratio,
        StreamSeed::new(cfg.seed).child(stream::SPLIT),
    )?;
    Ok((cfg, tg, params, split))
}

/// Loads a checkpoint, recomputes the run's split from the stored
/// seed, evaluates one part of it, and prints the metrics as one JSON
/// object on stdout. Evaluating `test` reproduces the test line from
/// training exactly: same parameters, same split, same sampling
/// stream.
pub fn cmd_eval(checkpoint: &Path, config: Option<&Path>, split_name: &str) -> Result<()> {
    let (cfg, tg, params, split) = load_run(checkpoint, config)?;
    let (nodes, tag) = split_nodes(&split, split_name)?;
    let lif = vec![cfg.lif::<f32>(); cfg.hidden.len()];
    let metrics = evaluate(
        &tg,
        &params,
        &lif,
        &cfg.sampler(),
        nodes,
        StreamSeed::new(cfg.seed).child(stream::EVAL).child(tag),
        cfg.strict_deterministic,
    )?;
    let line = serde_json::json!({
        "split": split_name,
        "macro_f1": metrics.macro_f1,
        "micro_f1": metrics.micro_f1,
        "mean_loss": metrics.mean_loss,
        "firing_rate": metrics.firing_rate,
    });
    println!("{line}");
    Ok(())
}

/// Reports the overall firing rate and the per-step breakdown of a
/// checkpoint over one split, as JSON on stdout.
pub fn cmd_firing_rate(checkpoint: &Path, config: Option<&Path>, split_name: &str) -> Result<()> {
    let (cfg, tg, params, split) = load_run(checkpoint, config)?;
    let (nodes, tag) = split_nodes(&split, split_name)?;
    if nodes.is_empty() {
        return Err(Error::invalid(format!("split {split_name} is empty")));
    }
    let lif = vec![cfg.lif::<f32>(); cfg.hidden.len()];
    let sampler = cfg.sampler();
    let eval_seed = StreamSeed::new(cfg.seed).child(stream::EVAL).child(tag);

    let t_steps = tg.num_steps();
    let mut per_step_sum = vec![0.0f64; t_steps];
    let mut per_step_count = vec![0usize; t_steps];
    for batch in nodes.chunks(256) {
        let tree = build_batch_tree(&tg, batch, &sampler, eval_seed)?;
        let history = forward_batch(&tg, &tree, &params, &lif, ForwardMode::Hard, None)?;
        for b in 0..history.batch_size() {
            for t in 1..=t_steps {
                let row = history.get(b, t);
                per_step_sum[t - 1] += row.iter().map(|&x| x as f64).sum::<f64>();
                per_step_count[t - 1] += row.len();
            }
        }
    }
    let per_step: Vec<f64> = per_step_sum
        .iter()
        .zip(&per_step_count)
        .map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect();
    let total: f64 = per_step_sum.iter().sum();
    let count: usize = per_step_count.iter().sum();
    let line = serde_json::json!({
        "split": split_name,
        "overall": if count == 0 { 0.0 } else { total / count as f64 },
        "per_step": per_step,
    });
    println!("{line}");
    Ok(())
}

/// The plain dense product used as the benchmark reference. It takes
/// no sparsity shortcuts on purpose: it is the cost a spike layer
/// would pay if it ignored that its inputs are binary.
fn dense_reference(x: &[f32], w: &Matrix<f32>, out: &mut [f32]) {
    out.fill(0.0);
    for (i, &xi) in x.iter().enumerate() {
        let row = w.row(i);
        for (o, &wv) in out.iter_mut().zip(row) {
            *o += xi * wv;
        }
    }
}

/// Times masked summation against the dense reference over a grid of
/// sizes and spike densities, checking numerical equivalence on every
/// trial. Writes CSV (header `density,n,m,ns_masked,ns_dense,speedup`)
/// to stdout and optionally to a file. Timings are medians over
/// `reps` samples after warm-up; each sample runs the kernel enough
/// times to outlast clock resolution.
pub fn cmd_bench_masked_sum(
    sizes: &[usize],
    densities: &[f64],
    reps: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<()> {
    if sizes.is_empty() || densities.is_empty() || reps == 0 {
        return Err(Error::invalid("need at least one size, one density, and one rep"));
    }
    for &d in densities {
        if !(0.0..=1.0).contains(&d) {
            return Err(Error::invalid(format!("density {d} is outside [0, 1]")));
        }
    }
    let mut rng = StreamSeed::new(seed).rng();
    let mut csv = String::from("density,n,m,ns_masked,ns_dense,speedup\n");

    for &n in sizes {
        let m = n;
        let mut w = Matrix::<f32>::zeros(n, m);
        for entry in w.data_mut() {
            *entry = rng.gen_range(-1.0..1.0);
        }
        for &density in densities {
            let ones = (n as f64 * density).round() as usize;
            let mut spikes = vec![0.0f32; n];
            let mut idx: Vec<usize> = (0..n).collect();
            use rand::seq::SliceRandom;
            idx.shuffle(&mut rng);
            for &i in &idx[..ones] {
                spikes[i] = 1.0;
            }

            let mut masked_out = vec![0.0f32; m];
            let mut dense_out = vec![0.0f32; m];
            masked_sum_into(&spikes, &w, &mut masked_out)?;
            dense_reference(&spikes, &w, &mut dense_out);
            for (a, b) in masked_out.iter().zip(&dense_out) {
                if (a - b).abs() > 1e-6 * (1.0 + b.abs()) {
                    return Err(Error::numeric(format!(
                        "masked and dense results diverged at n={n}, density={density}: {a} vs {b}"
                    )));
                }
            }

            let iters = (2_000_000 / (n * m).max(1)).max(1);
            let time_ns = |f: &dyn Fn(&mut [f32])| -> Vec<f64> {
                let mut samples = Vec::with_capacity(reps);
                let mut out = vec![0.0f32; m];
                for _ in 0..3 {
                    f(&mut out);
                }
                for _ in 0..reps {
                    let start = Instant::now();
                    for _ in 0..iters {
                        f(&mut out);
                        std::hint::black_box(&out);
                    }
                    samples.push(start.elapsed().as_nanos() as f64 / iters as f64);
                }
                samples.sort_by(|a, b| a.total_cmp(b));
                samples
            };
            let masked_samples = time_ns(&|out| {
                masked_sum_into(&spikes, &w, out).expect("shapes fixed above");
            });
            let dense_samples = time_ns(&|out| dense_reference(&spikes, &w, out));
            let median = |s: &[f64]| s[s.len() / 2];
            let ns_masked = median(&masked_samples);
            let ns_dense = median(&dense_samples);
            csv.push_str(&format!(
                "{density},{n},{m},{ns_masked:.1},{ns_dense:.1},{:.2}\n",
                ns_dense / ns_masked.max(1e-9)
            ));
        }
    }

    print!("{csv}");
    if let Some(path) = out {
        fs::write(path, &csv).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_text() {
        let mut cfg = RunConfig::default();
        cfg.set("fanouts", "4,2").unwrap();
        cfg.set("hidden", "16,8").unwrap();
        cfg.set("d_emb", "8").unwrap();
        cfg.set("lr", "0.01").unwrap();
        cfg.set("pool", "avg").unwrap();
        cfg.set("strict_deterministic", "true").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.txt");
        std::fs::write(&path, cfg.to_text()).unwrap();
        let reread = RunConfig::from_file(&path).unwrap();
        assert_eq!(reread, cfg);
    }

    #[test]
    fn config_rejects_unknown_keys_and_bad_values() {
        let mut cfg = RunConfig::default();
        assert!(cfg.set("learning_rate", "0.1").is_err());
        assert!(cfg.set("lr", "fast").is_err());
        assert!(cfg.set("strict_deterministic", "yes").is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        std::fs::write(&path, "lr 0.1\n").unwrap();
        let err = RunConfig::from_file(&path).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn synthetic_task_has_balanced_product_classes() {
        let spec = SynthSpec::default();
        let tg = generate_synthetic(&spec).unwrap();
        assert_eq!(tg.num_nodes(), 200);
        assert_eq!(tg.num_steps(), 8);
        let labels = tg.labels().unwrap();
        assert_eq!(labels.num_classes(), 4);
        let mut counts = [0usize; 4];
        for v in 0..200 {
            counts[labels.get(v).unwrap() as usize] += 1;
        }
        assert_eq!(counts, [50usize; 4], "each (community, migrated) cell holds 50 nodes");
        // Per-step features follow the current community: migrated
        // nodes flip their dominant coordinate at the midpoint.
        let feats = tg.features();
        assert!(feats.is_per_step());
        let migrated: Vec<NodeId> =
            (0..200).filter(|&v| labels.get(v).unwrap() % 2 == 1).collect();
        let v = migrated[0];
        let before = feats.get(1, v);
        let after = feats.get(8, v);
        let hot = |row: &[f32]| if row[0] > row[1] { 0 } else { 1 };
        assert_ne!(hot(before), hot(after), "migration must show up in the features");
    }

    #[test]
    fn zero_switch_fraction_reduces_to_plain_communities() {
        let spec = SynthSpec { switch_fraction: 0.0, ..SynthSpec::default() };
        let tg = generate_synthetic(&spec).unwrap();
        let labels = tg.labels().unwrap();
        // Only the even (settled) classes appear.
        for v in 0..tg.num_nodes() as NodeId {
            assert_eq!(labels.get(v).unwrap() % 2, 0);
        }
        let feats = tg.features();
        for v in [0u32, 1, 2, 3] {
            let early = feats.get(1, v);
            let late = feats.get(8, v);
            let hot = |row: &[f32]| row.iter().enumerate().fold((0, f32::MIN), |best, (j, &x)| {
                if x > best.1 { (j, x) } else { best }
            }).0;
            assert_eq!(hot(early), hot(late), "no node changes community");
        }
    }

    #[test]
    fn synthetic_files_round_trip_and_are_stable() {
        let dir = tempfile::tempdir().unwrap();
        let out_a = dir.path().join("a");
        let out_b = dir.path().join("b");
        let spec = SynthSpec { num_nodes: 60, num_steps: 4, ..SynthSpec::default() };
        cmd_gen_synthetic(&spec, &out_a).unwrap();
        cmd_gen_synthetic(&spec, &out_b).unwrap();
        for name in ["edges.txt", "features.txt", "labels.txt", "synth_spec.txt"] {
            let a = std::fs::read(out_a.join(name)).unwrap();
            let b = std::fs::read(out_b.join(name)).unwrap();
            assert_eq!(a, b, "{name} must be byte-identical across runs");
        }

        let cfg = RunConfig::from_file(out_a.join("config.txt")).unwrap();
        let reloaded = cfg.load_graph().unwrap();
        let direct = generate_synthetic(&spec).unwrap();
        assert_eq!(reloaded.num_nodes(), direct.num_nodes());
        assert_eq!(reloaded.num_steps(), direct.num_steps());
        for t in 1..=direct.num_steps() {
            assert_eq!(
                reloaded.snapshot(t).unwrap().num_edges(),
                direct.snapshot(t).unwrap().num_edges(),
                "snapshot {t} edge count survives the round trip"
            );
        }
        for v in 0..direct.num_nodes() as NodeId {
            assert_eq!(
                reloaded.labels().unwrap().get(v),
                direct.labels().unwrap().get(v)
            );
            assert_eq!(reloaded.features().get(2, v), direct.features().get(2, v));
        }
    }

    #[test]
    fn degree_fallback_features_are_per_step_and_bounded() {
        let spec = SynthSpec { num_nodes: 40, num_steps: 3, ..SynthSpec::default() };
        let tg = generate_synthetic(&spec).unwrap();
        let feats = degree_features(&tg).unwrap();
        assert!(feats.is_per_step());
        assert_eq!(feats.dim(), 2);
        for t in 1..=3 {
            for v in 0..40 {
                for &x in feats.get(t, v) {
                    assert!((0.0..=1.0).contains(&x));
                }
            }
        }
    }
}
