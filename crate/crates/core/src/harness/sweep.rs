//! Grid sweeps over the loss weight and tap depth.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::{pareto_report, GridResult, ParetoReport};
use crate::params::ParamStore;
use crate::supervision::TrainState;

use super::config::RunConfig;
use super::run::{finish_run, EvalReport, Trainer};

pub const DEFAULT_LAMBDAS: [f64; 6] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
pub const PARETO_CSV: &str = "pareto.csv";
pub const PARETO_TABLE: &str = "pareto.txt";

/// Tap depths at one, two and three thirds of the model: `round(k·depth/3)`, at least 1.
pub fn depth_stages(depth: usize) -> Vec<usize> {
    let mut stages: Vec<usize> = (1..=3)
        .map(|k| ((k * depth) as f64 / 3.0).round().max(1.0) as usize)
        .collect();
    stages.dedup();
    stages
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub lambda: f64,
    pub depth_n: usize,
    pub eval: EvalReport,
    pub final_total: Option<f64>,
}

impl CellResult {
    pub fn label(&self) -> String {
        cell_label(self.lambda, self.depth_n)
    }
}

pub fn cell_label(lambda: f64, depth_n: usize) -> String {
    format!("lambda={lambda}/depth={depth_n}")
}

fn cell_dir(lambda: f64, depth_n: usize) -> String {
    format!("l{lambda}_d{depth_n}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub cells: Vec<CellResult>,
    pub report: ParetoReport,
    /// Hash of the shared initial parameters.
    pub initial_hash: u64,
}

/// Hash of every parameter bit of the model and projection head.
pub fn state_hash(state: &TrainState) -> u64 {
    fn feed(h: &mut DefaultHasher, p: &ParamStore) {
        for (name, t) in p.iter() {
            name.hash(h);
            t.shape().hash(h);
            for v in t.data() {
                v.to_bits().hash(h);
            }
        }
    }
    let mut h = DefaultHasher::new();
    feed(&mut h, &state.params);
    if let Some(head) = &state.head {
        feed(&mut h, &head.params);
    }
    h.finish()
}

/// Trains and evaluates every `(λ, depth_n)` cell from `base`, writing each
/// cell under `out/l{λ}_d{n}/` and the Pareto report into `out`.
///
/// Cells run in row-major order but share nothing except the config, so
/// their results do not depend on that order.
pub fn run_sweep(base: &RunConfig, lambdas: &[f64], depths: &[usize], out: &Path) -> Result<SweepOutput> {
    if lambdas.is_empty() || depths.is_empty() {
        return Err(Error::Config("sweep needs at least one lambda and one depth".into()));
    }
    base.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let mut cells = Vec::new();
    let mut initial_hash = None;
    for &lambda in lambdas {
        for &depth_n in depths {
            let label = cell_label(lambda, depth_n);
            let cell = run_cell(base, lambda, depth_n, &out.join(cell_dir(lambda, depth_n)), &mut initial_hash)
                .map_err(|e| Error::SweepCell {
                    cell: label,
                    source: Box::new(e),
                })?;
            cells.push(cell);
        }
    }
    let results: Vec<GridResult> = cells
        .iter()
        .map(|c| GridResult {
            label: c.label(),
            fid: c.eval.fid,
            score: c.eval.alignment_score,
        })
        .collect();
    let report = pareto_report(&results);
    let write = |name: &str, text: String| {
        let path = out.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    };
    write(PARETO_CSV, report.to_csv())?;
    write(PARETO_TABLE, report.to_table())?;
    Ok(SweepOutput {
        cells,
        report,
        initial_hash: initial_hash.expect("at least one cell ran"),
    })
}

fn run_cell(base: &RunConfig, lambda: f64, depth_n: usize, dir: &Path, initial_hash: &mut Option<u64>) -> Result<CellResult> {
    let mut cfg = base.clone();
    cfg.align.enabled = true;
    cfg.align.lambda = lambda;
    cfg.align.depth_n = depth_n;
    cfg.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut trainer = Trainer::new(&cfg)?;
    let hash = state_hash(&trainer.state);
    match initial_hash {
        None => *initial_hash = Some(hash),
        Some(h) if *h != hash => {
            return Err(Error::invalid("run_sweep", "initial parameters differ from the first cell"));
        }
        Some(_) => {}
    }
    trainer.run_until(cfg.run.steps)?;
    finish_run(&trainer, dir)?;
    Ok(CellResult {
        lambda,
        depth_n,
        eval: trainer.evaluate()?,
        final_total: trainer.log().last().map(|r| r.losses.total),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stages_for_common_depths() {
        assert_eq!(depth_stages(6), [2, 4, 6]);
        assert_eq!(depth_stages(3), [1, 2, 3]);
        assert_eq!(depth_stages(2), [1, 2]);
        assert_eq!(depth_stages(1), [1]);
    }

    #[test]
    fn empty_grid_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(run_sweep(&RunConfig::default(), &[], &[2], dir.path()).is_err());
        assert!(run_sweep(&RunConfig::default(), &[0.1], &[], dir.path()).is_err());
    }

    #[test]
    fn failing_cell_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let err = run_sweep(&RunConfig::default(), &[0.1], &[9], dir.path()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("lambda=0.1/depth=9"), "{msg}");
    }
}
