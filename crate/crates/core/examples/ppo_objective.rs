//! Clipped surrogate, returns and the DTW-driven loss weight.

use leed::ppo::{alpha_weight, bootstrapped_returns, clipped_surrogate, mixed_policy_objective};

fn main() {
    let rewards = [-0.1 + 1.0, -0.1 + 1.0, -0.1 + 1.0 + 10.0];
    println!("returns (arrived) {:?}", bootstrapped_returns(&rewards, 0.0, 0.99));

    for (ratio, adv) in [(1.5f64, 1.0), (0.5, -1.0), (1.1, 1.0)] {
        let s = clipped_surrogate(&[ratio.ln()], &[0.0], &[adv], 0.2).unwrap();
        println!("ratio {ratio} adv {adv:+} -> objective {:.3}", s.objective);
    }

    println!("alpha over training for D = 4 and D = 40:");
    for k in [1, 100, 250, 500] {
        let near = alpha_weight(k, 500, 4.0).unwrap();
        let far = alpha_weight(k, 500, 40.0).unwrap();
        println!("  k={k:<3} {near:.4} {far:.4}");
    }
    println!("mixed(1.0, 2.0, α=0.25) = {}", mixed_policy_objective(1.0, 2.0, 0.25));
}
