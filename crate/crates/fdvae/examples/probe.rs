//! Scratch checkpoint prober; not part of the library.
//!
//! Usage: `cargo run --example probe -- <run_dir>`

use std::path::Path;

use fdvae::experiments::{load_repr_bundle, materialize_dataset, ExperimentConfig};
use fdvae::train::{embed_dataset, probe_accuracy, train_linear_probe};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let run_dir = Path::new(&args[1]);
    let config = ExperimentConfig::load(&run_dir.join("config.toml"), &[])?;
    let splits = materialize_dataset(&config)?;
    let bundle = load_repr_bundle(&config, run_dir)?;
    let train_tab = embed_dataset(&bundle, &splits.train, 64)?;
    let test_tab = embed_dataset(&bundle, &splits.test, 64)?;

    // Latent scale: mean |mu| per subspace.
    let abs = train_tab.z.abs()?.mean(0)?.to_vec1::<f32>()?;
    let block = |lo: usize, len: usize| abs[lo..lo + len].iter().sum::<f32>() / len as f32;
    println!(
        "mean|mu|: zt {:.4} zp {:.4} zm {:.4}",
        block(0, 20),
        block(20, 20),
        block(40, 20)
    );

    for (label, tr_y, te_y) in [
        ("y_t", &train_tab.y_t, &test_tab.y_t),
        ("y_p", &train_tab.y_p, &test_tab.y_p),
    ] {
        for (name, lo, len) in [("zt  ", 0usize, 20usize), ("zp  ", 20, 20), ("zm  ", 40, 20), ("full", 0, 60)] {
            let ztr = train_tab.z.narrow(1, lo, len)?.contiguous()?;
            let zte = test_tab.z.narrow(1, lo, len)?.contiguous()?;
            let probe = train_linear_probe(&ztr, tr_y, 1001, 300, 0.1)?;
            let acc = probe_accuracy(&probe.head, &zte, te_y)?;
            println!(
                "probe {label} | {name}: train {:.4} test {:.4}",
                probe.train_accuracy, acc
            );
        }
    }
    Ok(())
}
