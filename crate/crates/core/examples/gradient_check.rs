//! Compare analytic policy-network gradients with central differences.

use leed::nn::MlpParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let net = MlpParams::init_random(6, 3, &mut rng);
    let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let dir: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let loss = |p: &MlpParams| -> f64 { p.forward(&x).unwrap().iter().zip(&dir).map(|(o, d)| o * d).sum() };
    let grads = net.backward(&[(&x, &dir)]).unwrap();

    let h = 1e-5;
    let mut worst = 0.0f64;
    for (layer, name) in ["hidden 1", "hidden 2", "output"].iter().enumerate() {
        for i in (0..net.layers[layer].weights.len()).step_by(97) {
            let mut plus = net.clone();
            plus.layers[layer].weights[i] += h;
            let mut minus = net.clone();
            minus.layers[layer].weights[i] -= h;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let analytic = grads.layers[layer].weights[i];
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8);
            worst = worst.max(rel);
        }
        println!("{name}: checked");
    }
    println!("max relative error {worst:.2e}");
}
