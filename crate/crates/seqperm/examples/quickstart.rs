//! Minimal end-to-end run: two hypotheses, anytime-valid Besag-Clifford
//! p-values under BH with adaptive budgets. Mirrors the README example.

use seqperm::{
    execute_on_dataset, Dataset, EngineConfig, Orientation, RunFlavor, Statistic, Strategy,
};

fn main() -> seqperm::Result<()> {
    let dataset = Dataset::new(
        vec![
            vec![0.1, 0.4, 0.2, 0.3, 0.2, 1.9, 2.3, 2.1, 2.4, 2.2], // shifted
            vec![0.5, 0.1, 0.9, 0.4, 0.7, 0.3, 0.8, 0.2, 0.6, 0.5], // null
        ],
        vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1],
        vec!["shifted".into(), "null".into()],
    )?;
    let mut config = EngineConfig::new(0.1, Strategy::anytime_bc(10)?)?;
    config.max_permutations = Some(10_000);
    config.batch_size = 100;
    config.seed = 42;
    let run = execute_on_dataset(
        &config,
        RunFlavor::AvbcAdaptive,
        &dataset,
        Statistic::MannWhitney,
        Orientation::Upper,
    )?;
    for h in &run.hypotheses {
        println!(
            "{}: p = {:.4} after {} permutations (rejected: {})",
            dataset.name(h.index),
            h.p_value,
            h.tau,
            h.rejected,
        );
    }
    Ok(())
}
