//! Verifies every layer's analytic gradients against central finite
//! differences, then does the same for the fully assembled classifier.
//!
//!     cargo run --example gradient_check

use kmcnn::model::{check_model_gradients, ModelConfig};
use kmcnn::nn::layers::{Conv1d, Dense, DropoutFixed, MaxPoolOverTime, Relu, SoftmaxXent};
use kmcnn::nn::{check_layer_randomized, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TRIALS: usize = 20;
const EPS: f64 = 1e-3;

fn main() -> anyhow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(42);

    println!("layer          max rel err   components");
    println!("-----          -----------   ----------");

    let report = check_layer_randomized(
        |r| {
            let mut r = ChaCha8Rng::seed_from_u64(r.next_u64());
            (Dense::new(8, 4, &mut r), Tensor::uniform(&[8], -1.0, 1.0, &mut r))
        },
        TRIALS,
        EPS,
        &mut rng,
    )?;
    println!("{:<14} {:>11.3e}   {:>10}", report.layer, report.max_rel_err, report.components_checked);
    assert!(report.passed());

    let report = check_layer_randomized(
        |r| {
            let mut r = ChaCha8Rng::seed_from_u64(r.next_u64());
            (
                Conv1d::new(4, 2, 6, &mut r),
                Tensor::uniform(&[10, 6], -1.0, 1.0, &mut r),
            )
        },
        TRIALS,
        EPS,
        &mut rng,
    )?;
    println!("{:<14} {:>11.3e}   {:>10}", report.layer, report.max_rel_err, report.components_checked);
    assert!(report.passed());

    let report = check_layer_randomized(
        |r| {
            let mut r = ChaCha8Rng::seed_from_u64(r.next_u64());
            (Relu::new(), Tensor::uniform(&[12], -1.0, 1.0, &mut r))
        },
        TRIALS,
        EPS,
        &mut rng,
    )?;
    println!("{:<14} {:>11.3e}   {:>10}", report.layer, report.max_rel_err, report.components_checked);
    assert!(report.passed());

    let report = check_layer_randomized(
        |r| {
            let mut r = ChaCha8Rng::seed_from_u64(r.next_u64());
            (MaxPoolOverTime::new(), Tensor::uniform(&[9, 4], -1.0, 1.0, &mut r))
        },
        TRIALS,
        EPS,
        &mut rng,
    )?;
    println!("{:<14} {:>11.3e}   {:>10}", report.layer, report.max_rel_err, report.components_checked);
    assert!(report.passed());

    let report = check_layer_randomized(
        |r| {
            let mut r = ChaCha8Rng::seed_from_u64(r.next_u64());
            let layer = DropoutFixed::new(10, 0.5, &mut r).expect("valid rate");
            (layer, Tensor::uniform(&[10], -1.0, 1.0, &mut r))
        },
        TRIALS,
        EPS,
        &mut rng,
    )?;
    println!("{:<14} {:>11.3e}   {:>10}", report.layer, report.max_rel_err, report.components_checked);
    assert!(report.passed());

    let report = check_layer_randomized(
        |r| {
            let mut r = ChaCha8Rng::seed_from_u64(r.next_u64());
            (SoftmaxXent::new(1), Tensor::uniform(&[2], -2.0, 2.0, &mut r))
        },
        TRIALS,
        EPS,
        &mut rng,
    )?;
    println!("{:<14} {:>11.3e}   {:>10}", report.layer, report.max_rel_err, report.components_checked);
    assert!(report.passed());

    // The assembled model: two word channels plus a knowledge block,
    // three filter widths, shared filters with cross-channel averaging,
    // hidden layer, dropout (checked with a frozen mask), softmax.
    let cfg = ModelConfig {
        n: 16,
        dw: 8,
        dk: 4,
        channels: 2,
        filter_widths: vec![1, 2, 3],
        filters_per_width: 4,
        hidden_dim: 8,
        drop_rate: 0.5,
        ..ModelConfig::default()
    };
    let report = check_model_gradients(&cfg, TRIALS, EPS, 42)?;
    println!(
        "{:<14} {:>11.3e}   {:>10}   ({} kink-free trials)",
        "full model", report.max_rel_err, report.components, report.trials
    );
    assert!(report.max_rel_err < 1e-4, "worst at {}", report.worst);

    println!("\nall analytic gradients agree with finite differences");
    Ok(())
}
