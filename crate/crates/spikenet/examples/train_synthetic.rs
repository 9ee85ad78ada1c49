//! End-to-end training on the synthetic dynamic-community task: half
//! the nodes migrate to another community midway through the timeline,
//! and the label encodes both where a node started and whether it
//! moved. A static reading of the final snapshot cannot separate the
//! four classes; the spiking model, which integrates over all steps,
//! can. Takes around half a minute in release mode.
//!
//!     cargo run --release --example train_synthetic

use spikenet::cli::{generate_synthetic, SynthSpec};
use spikenet::net::{ModelDims, ModelParams, PoolMode};
use spikenet::neuron::LifParams;
use spikenet::rng::{stream, StreamSeed};
use spikenet::sampler::SamplerConfig;
use spikenet::train::{train, TrainConfig};

fn main() {
    let spec = SynthSpec::default();
    let tg = generate_synthetic(&spec).unwrap();
    println!(
        "task: {} nodes, {} steps, {} communities, {:.0}% migrate at step {}",
        spec.num_nodes,
        spec.num_steps,
        spec.num_communities,
        spec.switch_fraction * 100.0,
        spec.switch_step()
    );
    println!("labels: start community x migrated -> {} classes\n", tg.labels().unwrap().num_classes());

    let cfg = TrainConfig {
        batch_size: 1024,
        lr: 0.001,
        weight_decay: 0.0,
        epochs: 600,
        patience: 0,
        train_ratio: 0.8,
        val_ratio: 0.05,
        seed: 1,
        strict_deterministic: false,
    };
    let dims = ModelDims {
        feature_dim: tg.features().dim(),
        hidden: vec![128, 128],
        embed: 128,
        num_classes: tg.labels().unwrap().num_classes(),
        num_steps: tg.num_steps(),
    };
    let params = ModelParams::<f32>::glorot(
        dims,
        PoolMode::Linear,
        StreamSeed::new(cfg.seed).child(stream::INIT),
    )
    .unwrap();
    let lif = vec![LifParams::default(); 2];
    let sampler = SamplerConfig { fanouts: vec![5, 3], macro_fraction: 0.5 };

    println!("epoch   train_loss   val_micro_f1   firing_rate");
    let outcome = train(&tg, params, &lif, &sampler, &cfg, |m| {
        if m.epoch % 50 == 0 || m.epoch == 1 {
            println!(
                "{:5}   {:10.4}   {:12.3}   {:11.3}",
                m.epoch, m.train_loss, m.val_micro_f1, m.firing_rate
            );
        }
    })
    .unwrap();

    println!(
        "\nbest epoch {} of {} | test micro-F1 {:.3}, macro-F1 {:.3}, firing rate {:.3}",
        outcome.best_epoch,
        cfg.epochs,
        outcome.test.micro_f1,
        outcome.test.macro_f1,
        outcome.test.firing_rate
    );
    println!(
        "splits: {} train / {} val / {} test",
        outcome.split.train.len(),
        outcome.split.val.len(),
        outcome.split.test.len()
    );
    println!("\nThe loss sits near ln(4)/2 for a long stretch: the model finds the");
    println!("two communities quickly but needs the spike timing to tell movers");
    println!("from stayers, and that second signal takes a while to break through.");
}
