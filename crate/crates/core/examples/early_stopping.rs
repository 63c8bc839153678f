//! Feed validation-loss sequences through the patience rule.

use songpop::training::{Decision, EarlyStopper};

fn stop_epoch(losses: &[f64]) -> Option<usize> {
    let mut s = EarlyStopper::new(7, 0.0);
    losses
        .iter()
        .position(|&l| s.observe(l).expect("finite loss") == Decision::Stop)
        .map(|i| i + 1)
}

fn main() {
    let monotone: Vec<f64> = (0..25).map(|i| 1.0 - 0.01 * f64::from(i)).collect();
    let mut flat = vec![1.0];
    flat.extend([1.1; 7]);
    let mut reset = vec![1.0, 1.1, 1.1, 0.9];
    reset.extend([1.0; 7]);
    for (name, seq) in [("monotone", &monotone), ("flat", &flat), ("reset", &reset)] {
        match stop_epoch(seq) {
            Some(e) => println!("{name:<9} stops at epoch {e}"),
            None => println!("{name:<9} runs all {} epochs", seq.len()),
        }
    }
}
