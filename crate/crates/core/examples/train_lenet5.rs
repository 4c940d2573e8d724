//! Trains LeNet-5 on an MNIST directory and prints per-epoch timing and test accuracy.
//!
//! `cargo run --release -p aap-core --example train_lenet5 -- DATA_DIR [EPOCHS] [SEED]`

use std::path::PathBuf;
use std::time::Instant;

use aap_core::data::{load_mnist_dir, Split};
use aap_core::graph::lenet5;
use aap_core::nn::{evaluate_accuracy, train_run, SgdState, TrainConfig};

fn main() -> aap_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "data/mnist-subset".into()));
    let epochs: usize = args.next().map_or(5, |e| e.parse().expect("EPOCHS is an integer"));
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("SEED is an integer"));
    let train = load_mnist_dir(&dir, Split::Train)?;
    let test = load_mnist_dir(&dir, Split::Test)?;
    let config = TrainConfig {
        total_epochs: epochs,
        seed,
        ..TrainConfig::lenet5_mnist()
    };
    let mut model = lenet5::<f32>(config.seed)?;
    let mut opt = SgdState::new(&model);
    let mut last = Instant::now();
    train_run(&mut model, &mut opt, &train, None, &config, 0..epochs, &mut |epoch, m, _| {
        let acc = evaluate_accuracy(m, &test)?;
        println!("epoch {epoch:3}  {:6.2}s  test {acc:.2}%", last.elapsed().as_secs_f64());
        last = Instant::now();
        Ok(())
    })?;
    Ok(())
}
