//! Spiking neural networks over temporal graph snapshots.
//!
//! The crate trains networks of leaky integrate-and-fire neurons on a
//! sequence of graph snapshots and reads node classes out of the spike
//! trains they emit. The pipeline, bottom to top:
//!
//! - [`tgraph`]: snapshot sequences in CSR form, with per-step deltas,
//!   node features and labels, plus the text loaders for all of them.
//! - [`sampler`]: fixed-fanout neighborhood trees drawn per time step,
//!   mixing draws from the full snapshot and from the newly arrived edges.
//! - [`neuron`]: the integrate / fire / reset / adaptive-threshold state
//!   machine and the sigmoid surrogate used to differentiate through it.
//! - [`net`]: masked spike-driven linear algebra, the layered forward
//!   pass, spike pooling, the classifier head, and checkpoint files.
//! - [`train`]: backprop through time over the recorded forward pass,
//!   AdamW, F1 metrics, stratified splits, and the training loop.
//! - [`cli`]: run configuration, the synthetic benchmark generator, the
//!   masked-summation micro-benchmark, and firing-rate reports.
//!
//! Start with the runnable examples:
//!
//! ```text
//! cargo run --release --example lif_dynamics        # one neuron, step by step
//! cargo run --release --example snapshot_graphs     # binning, deltas, CSR
//! cargo run --release --example temporal_sampling   # neighborhood trees
//! cargo run --release --example masked_summation    # spike-driven linear ops
//! cargo run --release --example gradient_check      # surrogate vs. finite diff
//! cargo run --release --example train_synthetic     # end-to-end training run
//! ```
//!
//! The same functionality is scriptable through the thin `spikenet` binary
//! (`train`, `eval`, `gen-synthetic`, `bench-masked-sum`, `firing-rate`).

pub mod cli;
mod error;
pub mod matrix;
pub mod net;
pub mod neuron;
pub mod rng;
pub mod sampler;
mod scalar;
pub mod tgraph;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
