//! Counterfactual survival curves, t*-survival contrasts and restricted mean
//! survival time from a fitted posterior.
//!
//! Run with `cargo run --release --example survival_curves`.

use riaft_bart::effects::{
    counterfactual_survival, rmst, rmst_effect, survival_grid, survival_prob_effect,
};
use riaft_bart::sampler::{fit, SamplerConfig};
use riaft_bart::sim::{gen_dataset, Scenario};

fn main() {
    let mut dgp = Scenario::Ph10.config();
    dgp.clusters = 6;
    dgp.cluster_size = 50;
    dgp.seed = 11;
    let ds = gen_dataset(&dgp).expect("simulation").dataset;

    let cfg = SamplerConfig {
        draws: 400,
        burnin: 250,
        trees: 40,
        seed: 5,
        ..SamplerConfig::default()
    };
    let store = fit(&ds, &cfg).expect("fit");

    // The simulated times are short; pick t* near the upper quartile.
    let mut times: Vec<f64> = ds.times().to_vec();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let t_star = times[(times.len() * 3) / 4];
    let grid = survival_grid(t_star, 512);

    println!("group survival at t* = {t_star:.4} (posterior means):");
    for arm in 0..store.n_arms {
        let curve = counterfactual_survival(&store, arm, &grid).expect("curve");
        let s_last: f64 = (0..curve.draws)
            .map(|d| curve.value(d, grid.len() - 1))
            .sum::<f64>()
            / curve.draws as f64;
        let r = rmst(&curve, t_star).expect("rmst");
        let r_mean = r.iter().sum::<f64>() / r.len() as f64;
        println!(
            "  arm {}: S(t*) = {s_last:.3}, RMST = {r_mean:.4}",
            store.arm_labels[arm]
        );
    }

    let sp = survival_prob_effect(&store, 0, 1, t_star, 0.95).expect("surv effect");
    println!(
        "\nS(t*) difference {}:{} = {:+.3} ({:+.3} .. {:+.3})",
        sp.arm_a_label, sp.arm_b_label, sp.point, sp.lower, sp.upper
    );
    let re = rmst_effect(&store, 0, 1, t_star, 512, 0.95).expect("rmst effect");
    println!(
        "RMST difference {}:{} = {:+.4} ({:+.4} .. {:+.4})",
        re.arm_a_label, re.arm_b_label, re.point, re.lower, re.upper
    );
}
