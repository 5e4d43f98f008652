//! Checkpoint a chain mid-run and resume it: the resumed trajectory is
//! bit-identical to an uninterrupted run with the same seed.
//!
//! Run with `cargo run --release --example checkpoint_resume`.

use riaft_bart::sampler::{Chain, FitOptions, SamplerConfig};
use riaft_bart::sim::{gen_dataset, Scenario};

fn main() {
    let mut dgp = Scenario::Ph10.config();
    dgp.clusters = 5;
    dgp.cluster_size = 40;
    dgp.seed = 23;
    let ds = gen_dataset(&dgp).expect("simulation").dataset;

    let cfg = SamplerConfig {
        draws: 200,
        burnin: 100,
        trees: 25,
        seed: 41,
        ..SamplerConfig::default()
    };

    let mut uninterrupted = Chain::new(&ds, &cfg, FitOptions::default()).expect("chain");
    uninterrupted.run_to_end();
    let reference = uninterrupted.into_store().expect("store");

    let ckpt_path = std::env::temp_dir().join("riaft-bart-example-checkpoint.json");
    let mut first_half = Chain::new(&ds, &cfg, FitOptions::default()).expect("chain");
    first_half.run_sweeps(150);
    first_half.checkpoint(&ckpt_path).expect("checkpoint");
    println!(
        "checkpointed at sweep {}/{} -> {}",
        first_half.sweep_index(),
        first_half.total_sweeps(),
        ckpt_path.display()
    );
    drop(first_half);

    let mut resumed = Chain::resume(&ckpt_path, &ds).expect("resume");
    resumed.run_to_end();
    let resumed_store = resumed.into_store().expect("store");

    let same = serde_json::to_string(&reference).unwrap()
        == serde_json::to_string(&resumed_store).unwrap();
    println!(
        "resumed trajectory identical to uninterrupted run: {}",
        if same { "yes (bit-for-bit)" } else { "NO" }
    );
    assert!(same);
}
