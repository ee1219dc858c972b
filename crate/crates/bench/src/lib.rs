//! Shared setup for the benchmarks in `benches/`.

use date_core::{RunConfig, Table};

/// Run config for a built-in dataset with its own labelling oracle.
pub fn fixture_config(name: &str, seed: u64) -> RunConfig {
    let mut cfg = RunConfig { fixture: Some(name.into()), seed, ..Default::default() };
    cfg.generation.oracle = Some(name.into());
    cfg.propagate_seed();
    cfg
}

/// Training part of a built-in dataset under its config.
pub fn train_part(cfg: &RunConfig) -> Table {
    date_core::pipeline::prepare(cfg).expect("fixture prepares").train
}
