//! Loads a small `src dst t` edge stream, bins it into snapshots, and
//! prints what each step sees under the two snapshot modes: cumulative
//! (everything up to the step) and windowed (only that step's bin).
//! Also shows the per-step delta graphs the sampler uses to find
//! recently active neighbors.
//!
//!     cargo run --release --example snapshot_graphs

use std::io::Write;

use spikenet::tgraph::{load_edge_stream, SnapshotMode, TemporalGraph};

fn describe(label: &str, tg: &TemporalGraph) {
    println!("{label}: {} nodes, {} steps", tg.num_nodes(), tg.num_steps());
    for t in 1..=tg.num_steps() {
        let snap = tg.snapshot(t).unwrap();
        let delta = tg.delta(t).unwrap();
        print!("  step {t}: {:2} edges ({} new)  neighbors of node 0:", snap.num_edges(), delta.num_edges());
        for &u in snap.neighbors(0) {
            print!(" {}", tg.orig_ids()[u as usize]);
        }
        println!();
    }
    println!();
}

fn main() {
    // A toy collaboration history: a triangle forms early, a chain
    // attaches in the middle, and one latecomer joins at the end.
    // Node ids are arbitrary and get remapped densely on load.
    let stream = "\
# src dst t
10 20  0
10 30  1
20 30  2
30 40  5
40 50  6
50 60  9
";
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("edges.txt");
    std::fs::File::create(&path)
        .and_then(|mut f| f.write_all(stream.as_bytes()))
        .unwrap();

    // Three equal-width bins over the observed time range [0, 9]:
    // [0, 3), [3, 6), [6, 9].
    let cumulative = load_edge_stream(&path, 3, SnapshotMode::Cumulative).unwrap();
    describe("cumulative snapshots", &cumulative);

    let windowed = load_edge_stream(&path, 3, SnapshotMode::Windowed).unwrap();
    describe("windowed snapshots", &windowed);

    println!("dense id -> original id: {:?}", cumulative.orig_ids());
    println!();
    println!("degree of original node 30 over time (cumulative):");
    let v = cumulative.orig_ids().iter().position(|&o| o == 30).unwrap() as u32;
    for t in 1..=cumulative.num_steps() {
        println!(
            "  step {t}: degree {}, {} new edges this step",
            cumulative.snapshot(t).unwrap().degree(v),
            cumulative.delta(t).unwrap().degree(v)
        );
    }
}
