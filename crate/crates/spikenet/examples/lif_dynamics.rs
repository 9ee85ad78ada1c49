//! Steps a single leaky integrate-and-fire neuron through a hand-made
//! input current and prints the full state trajectory: membrane
//! potential, adaptive threshold, and emitted spikes. Shows why the
//! threshold adaptation matters: under sustained drive the neuron
//! spaces its spikes out instead of firing every step.
//!
//!     cargo run --release --example lif_dynamics

use spikenet::neuron::{lif_step, relaxed_fire, surrogate_grad, LifParams, LifState};

fn trace(label: &str, p: &LifParams<f64>, drive: impl Fn(usize) -> f64, steps: usize) {
    println!("{label}");
    println!("  p = {p:?}");
    println!("  step   input   membrane  threshold  spike");
    let mut state = LifState::new(1, p);
    let mut spikes = 0usize;
    for t in 1..=steps {
        let i = drive(t);
        let o = lif_step(&mut state, &[i], p).unwrap()[0];
        spikes += o as usize;
        println!(
            "  {t:4}   {i:5.2}   {:8.4}   {:8.4}   {}",
            state.v[0],
            state.v_th[0],
            if o > 0.0 { "*" } else { "" }
        );
    }
    println!("  {} spikes in {} steps (rate {:.2})\n", spikes, steps, spikes as f64 / steps as f64);
}

fn main() {
    // A fixed threshold first: constant drive above threshold locks
    // the neuron into a regular limit cycle.
    let fixed = LifParams {
        tau_m: 2.0,
        v_reset: 0.0,
        v_th0: 1.0,
        tau_th: 1.0,
        gamma: 0.0,
        alpha: 1.0,
    };
    trace("fixed threshold, constant drive 1.2", &fixed, |_| 1.2, 12);

    // Same drive with an adaptive threshold: every spike raises the
    // bar and silence lets it decay, so the firing pattern spreads out
    // and the rate self-regulates.
    let adaptive = LifParams { tau_th: 0.7, gamma: 0.2, ..fixed };
    trace("adaptive threshold, constant drive 1.2", &adaptive, |_| 1.2, 12);

    // A burst followed by silence: watch the threshold decay back down
    // until even a weak late input gets through.
    trace(
        "adaptive threshold, burst then weak tail",
        &adaptive,
        |t| if t <= 4 { 1.5 } else { 0.35 },
        16,
    );

    // Training never differentiates the hard step above; it uses this
    // sigmoid relaxation instead. alpha sets how sharp it is.
    println!("surrogate around the firing boundary (x = membrane - threshold):");
    println!("  x      relaxed(a=1)  grad(a=1)  relaxed(a=5)  grad(a=5)");
    for x in [-2.0f64, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0] {
        println!(
            "  {x:5.2}  {:12.4}  {:9.4}  {:12.4}  {:9.4}",
            relaxed_fire(x, 1.0),
            surrogate_grad(x, 1.0),
            relaxed_fire(x, 5.0),
            surrogate_grad(x, 5.0)
        );
    }
}
