//! Per-seed BC/BA/Avg for every dataset variant on the default two-class
//! synthetic setup.
//!
//! `cargo run --release --example calibrate -- [seeds] [samples_per_class]`

use debias_core::eval::TrainConfig;
use debias_core::experiment::{run, VARIANTS};
use debias_core::synth::SynthConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().map_or(Ok(20), |s| s.parse())?;
    let spc: usize = args.next().map_or(Ok(1000), |s| s.parse())?;
    let cfg = SynthConfig::preset(2, spc, 0.0, 0);
    println!("seed variant size idval_bc idval_ba idval_avg bestbc_bc bestbc_ba");
    for seed in 0..seeds {
        let o = run(&cfg, seed, &TrainConfig::default(), &VARIANTS)?;
        for (name, v) in &o.variants {
            println!(
                "{seed} {name} {} {:.4} {:.4} {:.4} {:.4} {:.4}",
                v.size,
                v.id_val.test.bc_acc,
                v.id_val.test.ba_acc,
                v.id_val.test.avg,
                v.best_bc.test.bc_acc,
                v.best_bc.test.ba_acc
            );
        }
    }
    Ok(())
}
