//! Opt-in replication benchmark: repeated simulate-fit-estimate cycles under
//! one scenario, reporting relative bias and interval coverage of the
//! pairwise log-time effects against the Monte Carlo ground truth.
//!
//! The defaults are desk-sized. The full-scale benchmark (250 replications
//! of N = 10000 with the published sampler settings) is the same invocation
//! with bigger numbers and hours of runtime:
//!
//! ```text
//! cargo run --release --example simulation_benchmark -- \
//!     ph10 250 20 500 200 3500 1000
//! ```
//!
//! Arguments: scenario reps K n_k trees draws burnin (all optional).

use rayon::prelude::*;
use riaft_bart::effects::cate;
use riaft_bart::sampler::{fit, SamplerConfig};
use riaft_bart::sim::{compute_truth, gen_dataset, Scenario, TruthScale};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let scenario = Scenario::parse(args.first().map(String::as_str).unwrap_or("ph10"))
        .expect("scenario: ph10|ph40|nph10|nph40");
    let reps: usize = args.get(1).map_or(8, |s| s.parse().expect("reps"));
    let k: usize = args.get(2).map_or(10, |s| s.parse().expect("K"));
    let nk: usize = args.get(3).map_or(100, |s| s.parse().expect("n_k"));
    let trees: usize = args.get(4).map_or(50, |s| s.parse().expect("trees"));
    let draws: usize = args.get(5).map_or(1000, |s| s.parse().expect("draws"));
    let burnin: usize = args.get(6).map_or(500, |s| s.parse().expect("burnin"));

    let mut dgp = scenario.config();
    dgp.clusters = k;
    dgp.cluster_size = nk;
    let truth = compute_truth(&dgp, TruthScale::LogTime, 1_000_000);
    println!(
        "scenario {:?}: N = {}, truth CATE(1,2) = {:+.4}",
        scenario,
        k * nk,
        truth.value(0, 1)
    );

    let results: Vec<(f64, bool)> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut d = dgp.clone();
            d.seed = 1000 + rep as u64;
            let ds = gen_dataset(&d).expect("simulate").dataset;
            let cfg = SamplerConfig {
                draws,
                burnin,
                trees,
                seed: 5000 + rep as u64,
                ..SamplerConfig::default()
            };
            let store = fit(&ds, &cfg).expect("fit");
            let e = cate(&store, 0, 1, 0.95).expect("cate");
            let t = truth.value(0, 1);
            ((e.point - t) / t, e.lower <= t && t <= e.upper)
        })
        .collect();

    let mean_rel_bias = results.iter().map(|r| r.0).sum::<f64>() / reps as f64;
    let coverage = results.iter().filter(|r| r.1).count() as f64 / reps as f64;
    println!(
        "{reps} replications: mean relative bias {mean_rel_bias:+.3}, 95% interval coverage {coverage:.2}"
    );
}
