//! Runs experiments seed by seed and streams their records to CSV.
//!
//! Seeds run concurrently. Finished seeds are handed to a single writer,
//! which emits them in seed order and flushes after each one, so the file
//! content does not depend on scheduling.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::mpsc;
use std::time::Instant;

use rayon::prelude::*;
use thinned_mfld::dynamics::{drift_discrepancy, run_mfld_scheduled, Init, MfldConfig, Schedule, TraceRow};
use thinned_mfld::kernels::KernelSpec;
use thinned_mfld::lv::{make_dataset_with, DatasetOptions, LvParams};
use thinned_mfld::mfg::{mfg_solve_observed, MfgConfig};
use thinned_mfld::objectives::{DriftModel, MmdModel, MmdTarget, NetModel, ProModel};
use thinned_mfld::rng::{stream, Purpose};
use thinned_mfld::thinning::{integration_error, select_coreset, InteractionStrategy};

use crate::config::{BenchMetric, Experiment, ExperimentConfig};
use crate::cost::{cost, Method};
use crate::error::{HarnessError, Result};
use crate::record::{RecordWriter, RunRecord, FAILURE_METRIC};

/// Interaction pairs spent by the last step (absent on the initial row).
pub const PAIRS_METRIC: &str = "pairs_per_iter";
/// Kernel evaluations inside the kt-split walks of the last step.
pub const WALK_METRIC: &str = "walk_evals_per_iter";

/// Rows of one seed, and the error that stopped it, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedOutcome {
    pub seed: u64,
    pub rows: Vec<RunRecord>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunSummary {
    pub rows_written: usize,
    /// `(seed, message)` for every seed that stopped early.
    pub failures: Vec<(u64, String)>,
}

/// Iterations at which `t` steps of `method` first reach each point of the
/// cost grid `2^(k / per_octave)`, restricted to `1..=iterations`.
pub fn cost_checkpoints(n: usize, iterations: u64, method: Method, g: u32, per_octave: u32) -> Vec<u64> {
    let per_iter = cost(n, 1, method, g);
    let total = cost(n, iterations, method, g);
    let step = 1.0 / f64::from(per_octave.max(1));
    let mut k = (per_iter.log2() / step).floor();
    let mut out = Vec::new();
    loop {
        let c = (k * step).exp2();
        if c > total * (1.0 + 1e-12) {
            break;
        }
        let t = (c / per_iter * (1.0 + 1e-12)).floor() as u64;
        if t >= 1 && t <= iterations && out.last() != Some(&t) {
            out.push(t);
        }
        k += 1.0;
    }
    out
}

fn schedule(cfg: &ExperimentConfig) -> Schedule {
    let mut at = cost_checkpoints(cfg.n, cfg.iterations, cfg.method, cfg.g, cfg.checkpoints_per_octave);
    if cfg.record_every > 0 {
        at.extend((cfg.record_every..=cfg.iterations).step_by(cfg.record_every as usize));
    }
    at.sort_unstable();
    at.dedup();
    Schedule::At(at)
}

/// Builds rows that share everything but the checkpoint and metric.
struct RowFactory<'a> {
    cfg: &'a ExperimentConfig,
    method: Method,
    n: usize,
    t: u64,
    seed: u64,
    run_id: String,
    start: Instant,
}

impl<'a> RowFactory<'a> {
    fn new(cfg: &'a ExperimentConfig, method: Method, n: usize, t: u64, seed: u64) -> Self {
        let g = method.effective_g(cfg.g);
        Self {
            cfg,
            method,
            n,
            t,
            seed,
            run_id: format!("{}-{}-g{}-N{}-s{}", cfg.experiment, method, g, n, seed),
            start: Instant::now(),
        }
    }

    fn row(&self, iteration: u64, cost_units: u64, name: &str, value: f64) -> RunRecord {
        let g = self.method.effective_g(self.cfg.g);
        RunRecord {
            run_id: self.run_id.clone(),
            experiment: self.cfg.experiment.as_str().to_string(),
            method: self.method.as_str().to_string(),
            g,
            n: self.n,
            t: self.t,
            seed: self.seed,
            iteration,
            cumulative_cost: cost(self.n, cost_units, self.method, g),
            wallclock_s: self.start.elapsed().as_secs_f64(),
            metric_name: name.to_string(),
            metric_value: value,
        }
    }

    fn failure(&self, rows: &[RunRecord], message: &str) -> RunRecord {
        let (iteration, cost_units) = match rows.last() {
            Some(r) => (r.iteration, (r.cumulative_cost / cost(self.n, 1, self.method, self.cfg.g)).round() as u64),
            None => (0, 0),
        };
        eprintln!("run {} failed: {message}", self.run_id);
        self.row(iteration, cost_units, FAILURE_METRIC, f64::NAN)
    }
}

fn strategy_for(cfg: &ExperimentConfig, method: Method, n: usize) -> InteractionStrategy<f64> {
    method.strategy(n, cfg.g, cfg.kernel, cfg.delta, cfg.rbm_batch)
}

fn quantization_model(cfg: &ExperimentConfig) -> Result<MmdModel<f64>> {
    Ok(MmdModel::new(
        KernelSpec::gaussian(1.0)?,
        MmdTarget::Mixture(cfg.mmd_target.clone()),
    )?)
}

fn build_model(cfg: &ExperimentConfig, seed: u64) -> Result<Box<dyn DriftModel<f64>>> {
    Ok(match cfg.experiment {
        Experiment::Quantize => Box::new(quantization_model(cfg)?),
        Experiment::Teach => Box::new(NetModel::new(cfg.net.clone(), seed)?),
        Experiment::Pro => {
            let opts = DatasetOptions {
                intrinsic_noise: cfg.pro.intrinsic_noise,
                measurement_noise: cfg.pro.measurement_noise,
            };
            let data = make_dataset_with(cfg.pro.data_seed, &LvParams::data_generating(), opts)?;
            Box::new(ProModel::new(data)?)
        }
        Experiment::Mfg | Experiment::ThinBench => {
            return Err(HarnessError::Config(format!("{} is not an MFLD experiment", cfg.experiment)))
        }
    })
}

fn trace_rows(f: &RowFactory<'_>, row: &TraceRow<f64>, out: &mut Vec<RunRecord>) {
    let t = row.iteration;
    for &(name, value) in &row.metrics {
        out.push(f.row(t, t, name, value));
    }
    if t > 0 {
        out.push(f.row(t, t, PAIRS_METRIC, row.last_step.interaction_pairs() as f64));
        out.push(f.row(t, t, WALK_METRIC, row.last_step.walk_evals as f64));
    }
}

fn run_mfld_seed(cfg: &ExperimentConfig, seed: u64) -> SeedOutcome {
    let f = RowFactory::new(cfg, cfg.method, cfg.n, cfg.iterations, seed);
    let mut rows = Vec::new();
    let result = build_model(cfg, seed).and_then(|mut model| {
        let mcfg = MfldConfig {
            step_size: cfg.step_size,
            noise: cfg.noise,
            confinement: cfg.confinement,
            n: cfg.n,
            iterations: cfg.iterations,
            strategy: strategy_for(cfg, cfg.method, cfg.n),
            seed,
            init: cfg.init.clone(),
        };
        run_mfld_scheduled(&mcfg, model.as_mut(), &schedule(cfg), |r| trace_rows(&f, r, &mut rows))?;
        Ok(())
    });
    finish(&f, seed, rows, result)
}

fn run_mfg_seed(cfg: &ExperimentConfig, seed: u64) -> SeedOutcome {
    let f = RowFactory::new(cfg, cfg.method, cfg.n, cfg.iterations, seed);
    let mut rows = Vec::new();
    let mcfg = MfgConfig {
        n: cfg.n,
        sweeps: cfg.iterations as usize,
        strategy: strategy_for(cfg, cfg.method, cfg.n),
        seed,
        ..cfg.mfg.clone()
    };
    let result = mcfg.steps().map_err(HarnessError::from).and_then(|k| {
        mfg_solve_observed(&mcfg, |sweep, risk| {
            let s = sweep as u64;
            rows.push(f.row(s, s * k as u64, "risk", risk));
        })?;
        Ok(())
    });
    finish(&f, seed, rows, result)
}

fn run_bench_seed(cfg: &ExperimentConfig, seed: u64) -> SeedOutcome {
    let mut rows = Vec::new();
    for &n in &cfg.bench.ns {
        for &method in &cfg.bench.methods {
            let f = RowFactory::new(cfg, method, n, 1, seed);
            match bench_value(cfg, method, n, seed) {
                Ok(v) => rows.push(f.row(1, 1, cfg.bench.metric.as_str(), v)),
                Err(e) => {
                    let message = e.to_string();
                    rows.push(f.failure(&[], &message));
                    return SeedOutcome {
                        seed,
                        rows,
                        error: Some(message),
                    };
                }
            }
        }
    }
    SeedOutcome { seed, rows, error: None }
}

fn bench_value(cfg: &ExperimentConfig, method: Method, n: usize, seed: u64) -> Result<f64> {
    let points = Init::<f64>::standard_normal().sample(n, cfg.bench.dim, seed)?;
    let strategy = strategy_for(cfg, method, n);
    match cfg.bench.metric {
        BenchMetric::IntegrationError => {
            let origin = vec![0.0; cfg.bench.dim];
            let values: Vec<f64> = points.rows().map(|x| cfg.kernel.eval(&origin, x)).collect();
            let mut rng = stream(seed, Purpose::Thin, 0, 0);
            let coreset = select_coreset(&strategy, &points, &mut rng)?;
            Ok(integration_error(&values, &coreset))
        }
        BenchMetric::DriftDiscrepancy => {
            let mut model = quantization_model(cfg)?;
            Ok(drift_discrepancy(&points, &mut model, &strategy, seed, cfg.bench.reps)?.mean_sq)
        }
    }
}

fn finish(f: &RowFactory<'_>, seed: u64, mut rows: Vec<RunRecord>, result: Result<()>) -> SeedOutcome {
    let error = result.err().map(|e| e.to_string());
    if let Some(message) = &error {
        let fail = f.failure(&rows, message);
        rows.push(fail);
    }
    SeedOutcome { seed, rows, error }
}

/// Runs one seed of the experiment.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> SeedOutcome {
    match cfg.experiment {
        Experiment::Quantize | Experiment::Teach | Experiment::Pro => run_mfld_seed(cfg, seed),
        Experiment::Mfg => run_mfg_seed(cfg, seed),
        Experiment::ThinBench => run_bench_seed(cfg, seed),
    }
}

/// Runs every seed and writes the rows to `sink` in seed order, flushing
/// after each seed. Failed seeds keep their partial rows plus a failure row.
pub fn run_experiment_to<W: Write>(cfg: &ExperimentConfig, sink: &mut RecordWriter<W>) -> Result<RunSummary> {
    cfg.validate()?;
    let (tx, rx) = mpsc::channel::<(usize, SeedOutcome)>();
    let mut summary = RunSummary::default();
    let mut write_error: Option<HarnessError> = None;
    std::thread::scope(|scope| {
        scope.spawn(move || {
            cfg.seeds
                .par_iter()
                .enumerate()
                .for_each_with(tx, |tx, (k, &seed)| {
                    // The receiver only hangs up after a write error, and
                    // then the remaining results are not needed.
                    let _ = tx.send((k, run_seed(cfg, seed)));
                });
        });
        let mut pending = BTreeMap::new();
        let mut next = 0usize;
        for (k, outcome) in rx {
            pending.insert(k, outcome);
            while let Some(outcome) = pending.remove(&next) {
                next += 1;
                if write_error.is_some() {
                    continue;
                }
                let written = sink.write_all(&outcome.rows).and_then(|_| sink.flush());
                match written {
                    Ok(()) => summary.rows_written += outcome.rows.len(),
                    Err(e) => write_error = Some(e),
                }
                if let Some(message) = outcome.error {
                    summary.failures.push((outcome.seed, message));
                }
            }
        }
    });
    match write_error {
        Some(e) => Err(e),
        None => Ok(summary),
    }
}

/// Runs the experiment into `cfg.out`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary> {
    let path = cfg
        .out
        .as_deref()
        .ok_or_else(|| HarnessError::Config("no output path given (use --out or the `out` key)".into()))?;
    let mut sink = RecordWriter::create(path)?;
    run_experiment_to(cfg, &mut sink)
}

/// Runs the experiment in memory.
pub fn run_to_records(cfg: &ExperimentConfig) -> Result<(Vec<RunRecord>, RunSummary)> {
    cfg.validate()?;
    let mut rows = Vec::new();
    let mut summary = RunSummary::default();
    let outcomes: Vec<SeedOutcome> = cfg.seeds.par_iter().map(|&s| run_seed(cfg, s)).collect();
    for o in outcomes {
        summary.rows_written += o.rows.len();
        if let Some(m) = o.error {
            summary.failures.push((o.seed, m));
        }
        rows.extend(o.rows);
    }
    Ok((rows, summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoints_match_across_equal_cost_methods() {
        let kt = cost_checkpoints(1024, 100, Method::Kt1, 0, 1);
        let rbm = cost_checkpoints(1024, 100, Method::Rbm, 0, 1);
        assert_eq!(kt, vec![1, 2, 4, 8, 16, 32, 64]);
        assert_eq!(kt, rbm);
        let full = cost_checkpoints(1024, 3, Method::Mfld, 0, 1);
        assert_eq!(full, vec![1, 2]);
        let fine = cost_checkpoints(16, 4, Method::Kt1, 0, 2);
        assert_eq!(fine, vec![1, 2, 4]);
    }
}
