//! The arithmetic trick that makes spiking layers cheap: when the
//! input vector is binary, a matrix product collapses to summing the
//! weight rows of the active entries. This example checks the masked
//! sum against a plain dense product and times both across spike
//! densities. The full sweep lives in the `bench-masked-sum`
//! subcommand.
//!
//!     cargo run --release --example masked_summation

use std::hint::black_box;
use std::time::Instant;

use rand::Rng;
use spikenet::matrix::Matrix;
use spikenet::net::masked_sum;
use spikenet::rng::StreamSeed;

fn dense(x: &[f32], w: &Matrix<f32>) -> Vec<f32> {
    let mut out = vec![0.0; w.cols()];
    for (i, &xi) in x.iter().enumerate() {
        for (o, &wv) in out.iter_mut().zip(w.row(i)) {
            *o += xi * wv;
        }
    }
    out
}

fn main() {
    let mut rng = StreamSeed::new(5).rng();
    let n = 512;
    let mut w = Matrix::<f32>::zeros(n, n);
    for entry in w.data_mut() {
        *entry = rng.gen_range(-1.0..1.0);
    }

    // Correctness first: identical output for a random spike pattern.
    let spikes: Vec<f32> = (0..n).map(|_| if rng.gen::<f64>() < 0.3 { 1.0 } else { 0.0 }).collect();
    let fast = masked_sum(&spikes, &w).unwrap();
    let slow = dense(&spikes, &w);
    let worst =
        fast.iter().zip(&slow).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
    println!("masked vs dense on a {n}x{n} layer: max abs difference {worst:.1e}\n");

    // The payoff scales with sparsity: the masked sum only touches the
    // rows that spiked.
    println!("density   active   masked      dense       speedup");
    for density in [0.02, 0.05, 0.1, 0.2, 0.5, 1.0] {
        let active = (n as f64 * density).round() as usize;
        let mut spikes = vec![0.0f32; n];
        for s in spikes.iter_mut().take(active) {
            *s = 1.0;
        }
        let iters = 2000;
        let start = Instant::now();
        for _ in 0..iters {
            black_box(masked_sum(black_box(&spikes), &w).unwrap());
        }
        let t_masked = start.elapsed().as_secs_f64() / iters as f64;
        let start = Instant::now();
        for _ in 0..iters {
            black_box(dense(black_box(&spikes), &w));
        }
        let t_dense = start.elapsed().as_secs_f64() / iters as f64;
        println!(
            "{density:7.2}   {active:6}   {:7.1} us   {:7.1} us   {:6.1}x",
            t_masked * 1e6,
            t_dense * 1e6,
            t_dense / t_masked
        );
    }
}
