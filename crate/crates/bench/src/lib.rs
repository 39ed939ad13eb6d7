//! Benchmark fixtures for curefit-core; the benches live in `benches/`.

use curefit_core::{generate_dataset, CureDataset, Preset, SimConfig};

/// One simulated 50%-cure dataset of size `n`.
pub fn cure50_dataset(n: usize) -> CureDataset {
    let cfg = SimConfig {
        n,
        seed: 17,
        ..Preset::Cure50.config()
    };
    generate_dataset(&cfg, 0).expect("simulated data is valid")
}
