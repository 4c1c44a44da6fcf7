//! Scratch harness for sizing training recipes; not part of the library.
//!
//! Usage: `cargo run --example tune -- <config.toml> <out_root>`

use std::path::Path;
use std::time::Instant;

use fdvae::experiments::{
    materialize_dataset, run_downstream_phase, run_repr_phase, ExperimentConfig,
};
use fdvae::train::{embed_dataset, probe_accuracy, train_linear_probe};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    if args.len() < 3 {
        eprintln!("usage: tune <config.toml> <out_root>");
        std::process::exit(2);
    }
    let config = ExperimentConfig::load(Path::new(&args[1]), &args[3..].to_vec())?;
    let out_root = Path::new(&args[2]);
    let splits = materialize_dataset(&config)?;
    println!(
        "== {} ({:?}) train={} val={} test={}",
        config.label(),
        config.variant,
        splits.train.len(),
        splits.validation.len(),
        splits.test.len()
    );
    for &seed in &config.seeds {
        let t0 = Instant::now();
        let repr = run_repr_phase(&config, &splits, seed, out_root)?;
        let t_repr = t0.elapsed().as_secs_f64();
        let t1 = Instant::now();
        let row = run_downstream_phase(&config, &splits, seed, out_root)?;
        let t_down = t1.elapsed().as_secs_f64();
        let m = &row.metrics;
        println!(
            "seed {seed}: acc {:.4} eacc {:.4} eopp {:.4} eodds {:.4}  (repr {t_repr:.0}s, down {t_down:.0}s)",
            m.accuracy, m.equalized_accuracy, m.equal_opportunity, m.equalized_odds
        );
        let train_tab = embed_dataset(&repr.bundle, &splits.train, 64)?;
        let test_tab = embed_dataset(&repr.bundle, &splits.test, 64)?;
        for (name, lo, len) in [("zt  ", 0usize, 20usize), ("s30 ", 0, 30), ("n30 ", 30, 30)] {
            let ztr = train_tab.z.narrow(1, lo, len)?.contiguous()?;
            let zte = test_tab.z.narrow(1, lo, len)?.contiguous()?;
            let probe = train_linear_probe(&ztr, &train_tab.y_p, 1000 + seed, 300, 0.1)?;
            let acc = probe_accuracy(&probe.head, &zte, &test_tab.y_p)?;
            println!(
                "  probe y_p | {name}: train {:.4} test {:.4}",
                probe.train_accuracy, acc
            );
        }
    }
    Ok(())
}
