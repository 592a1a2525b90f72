//! Trains both network variants on a small synthetic dataset and prints the
//! per-epoch loss and validation RLNE next to the zero-filled and pISTA
//! baselines.
//!
//! `cargo run --release -p pista-core --example desk_train -- [epochs] [train] [test] [batch]`

use std::time::Instant;

use pista_core::metrics::rlne;
use pista_core::net::Variant;
use pista_core::pista::{reconstruct_pista, SolverConfig};
use pista_core::sim::{generate_dataset, zero_filled, DatasetSpec};
use pista_core::train::{mean_rlne, train_from, AdamState, TrainConfig};
use pista_core::{Exec, Result};

fn main() -> Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().expect("numeric argument")).collect();
    let epochs = args.first().copied().unwrap_or(10);
    let n_train = args.get(1).copied().unwrap_or(200);
    let n_test = args.get(2).copied().unwrap_or(40);
    let batch = args.get(3).copied().unwrap_or(TrainConfig::DEFAULT_BATCH_SIZE);
    let exec = Exec::default();

    let train_set = generate_dataset(&DatasetSpec::desk(n_train, 1), exec)?;
    let test_set = generate_dataset(&DatasetSpec::desk(n_test, 2), exec)?;

    let zf: Vec<f64> = test_set.iter().map(|s| rlne(&s.truth, &zero_filled(s)?)).collect::<Result<_>>()?;
    println!("zero-filled mean RLNE {:.4}", zf.iter().sum::<f64>() / zf.len() as f64);
    let t = Instant::now();
    let cfg = SolverConfig::default();
    let pi: Vec<f64> = test_set
        .iter()
        .map(|s| rlne(&s.truth, &reconstruct_pista(&s.kspace, &s.coils, &s.mask, &cfg, None)?.0))
        .collect::<Result<_>>()?;
    println!("pISTA mean RLNE {:.4} ({:.1}s)", pi.iter().sum::<f64>() / pi.len() as f64, t.elapsed().as_secs_f64());

    for variant in [Variant::ResNet, Variant::Net] {
        let mut cfg = TrainConfig::desk(variant, 7);
        cfg.epochs = epochs;
        cfg.batch_size = batch;
        let params = pista_core::net::xavier_init(&cfg.shape, cfg.seed)?;
        let state = AdamState::new(&params);
        let t = Instant::now();
        let out = train_from(params, state, &train_set, &test_set, &cfg, exec, |e, h| {
            println!(
                "{variant} epoch {e:3} loss {:.4} val RLNE {:.4} ({:.0}s)",
                h.epoch_loss[e],
                h.val_rlne[e],
                t.elapsed().as_secs_f64()
            );
        })?;
        println!("{variant} final test RLNE {:.4}", mean_rlne(&test_set, &out.params, exec)?);
    }
    Ok(())
}
